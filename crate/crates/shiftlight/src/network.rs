//! Multi-shift residual blocks and the three-stage encoder/decoder network,
//! including weight tying, reverse-mode gradients, parameter/FLOP audits,
//! and JSON checkpointing.

use crate::dsconv::{
    dsconv_backward, dsconv_flop_count, dsconv_forward, init_params, DsConvCache, DsConvGrads,
    DsConvParams, DsConvVariant,
};
use crate::error::{Error, Result};
use crate::rng::mix_seed;
use crate::tensor::{sc, Scalar, Shape, Tensor};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Whether decoder stages reuse their mirrored encoder stage's parameters
/// (the default, which gives the 180-scalar network) or own separate copies.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TieMode {
    MirrorTied,
    Untied,
}

/// How an up-block integrates its skip connection: `Literal` adds the skip
/// inside every parallel subpath (the composition the block equations spell
/// out), `Single` adds it once after the subpath sum.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SkipMode {
    Literal,
    Single,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub dia_set: Vec<usize>,
    pub stages: usize,
    pub channels: usize,
    pub tie_mode: TieMode,
    pub skip_mode: SkipMode,
}

impl Default for NetworkConfig {
    fn default() -> NetworkConfig {
        NetworkConfig {
            dia_set: vec![0, 1, 2, 3, 4],
            stages: 3,
            channels: 3,
            tie_mode: TieMode::MirrorTied,
            skip_mode: SkipMode::Literal,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dia_set.is_empty() {
            return Err(Error::InvalidArgument("dia_set must be non-empty".into()));
        }
        if !self.dia_set.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(format!(
                "dia_set must be strictly increasing, got {:?}",
                self.dia_set
            )));
        }
        if self.stages != 3 {
            return Err(Error::InvalidArgument(format!(
                "only 3-stage networks are supported, got {}",
                self.stages
            )));
        }
        if self.channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "only 3-channel networks are supported, got {}",
                self.channels
            )));
        }
        Ok(())
    }

    /// Number of parallel subpaths per block.
    pub fn kappa(&self) -> usize {
        self.dia_set.len()
    }
}

/// One multi-shift block: parallel kernels at distinct dilations whose
/// outputs are summed.
#[derive(Clone, Debug, PartialEq)]
pub struct MsrbParams<T> {
    pub kernels: Vec<DsConvParams<T>>,
    pub variant: DsConvVariant,
}

impl<T: Scalar> MsrbParams<T> {
    pub fn new(kernels: Vec<DsConvParams<T>>, variant: DsConvVariant) -> Result<MsrbParams<T>> {
        if kernels.is_empty() {
            return Err(Error::InvalidArgument("block needs at least one kernel".into()));
        }
        let c = kernels[0].channels();
        if !kernels.iter().all(|k| k.channels() == c) {
            return Err(Error::InvalidArgument(
                "all kernels in a block must share a channel count".into(),
            ));
        }
        if !kernels.windows(2).all(|w| w[0].dia < w[1].dia) {
            return Err(Error::InvalidArgument(
                "kernel dilation rates must be strictly increasing".into(),
            ));
        }
        let mut kernels = kernels;
        for k in &mut kernels {
            k.variant = variant;
        }
        Ok(MsrbParams { kernels, variant })
    }

    /// The same learnables rebound to a different operating variant — how a
    /// tied parameter set is applied as a down-block in the encoder and an
    /// up-block in the decoder.
    pub fn with_variant(&self, variant: DsConvVariant) -> MsrbParams<T> {
        let mut kernels = self.kernels.clone();
        for k in &mut kernels {
            k.variant = variant;
        }
        MsrbParams { kernels, variant }
    }

    pub fn param_count(&self) -> u64 {
        self.kernels.iter().map(|k| k.param_count()).sum()
    }
}

/// Saved state of one block application.
#[derive(Clone, Debug)]
pub struct MsrbCache<T> {
    kernel_caches: Vec<DsConvCache<T>>,
    /// Present iff this was an up application: the skip mode in force.
    up_skip: Option<SkipMode>,
}

/// Block forward. `skip` must be present exactly when the block variant is
/// `Up`; it then defines the target resolution and enters the output per
/// `skip_mode`.
pub fn msrb_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &MsrbParams<T>,
    skip: Option<&Tensor<T>>,
    skip_mode: SkipMode,
) -> Result<(Tensor<T>, MsrbCache<T>)> {
    match (p.variant, skip) {
        (DsConvVariant::Up, None) => {
            return Err(Error::Shape("up block requires a skip tensor".into()))
        }
        (DsConvVariant::Up, Some(_)) => {}
        (_, Some(_)) => {
            return Err(Error::Shape(
                "skip tensor is only meaningful for up blocks".into(),
            ))
        }
        (_, None) => {}
    }
    let up_target = skip.map(|s| (s.shape().height, s.shape().width));

    let mut sum: Option<Tensor<T>> = None;
    let mut kernel_caches = Vec::with_capacity(p.kernels.len());
    for k in &p.kernels {
        let (y, cache) = dsconv_forward(x, k, up_target)?;
        kernel_caches.push(cache);
        match &mut sum {
            Some(acc) => acc.add_assign(&y)?,
            None => sum = Some(y),
        }
    }
    let mut out = sum.expect("at least one kernel");

    if let Some(s) = skip {
        let times = match skip_mode {
            SkipMode::Literal => p.kernels.len(),
            SkipMode::Single => 1,
        };
        out.add_assign(&s.scale(sc(times as f64)))?;
    }

    Ok((
        out,
        MsrbCache {
            kernel_caches,
            up_skip: skip.map(|_| skip_mode),
        },
    ))
}

/// Block backward: input gradient, per-kernel parameter gradients (aligned
/// with `MsrbParams.kernels`), and the skip gradient for up applications.
pub fn msrb_backward<T: Scalar>(
    cache: &MsrbCache<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<DsConvGrads<T>>, Option<Tensor<T>>)> {
    let mut dx: Option<Tensor<T>> = None;
    let mut grads = Vec::with_capacity(cache.kernel_caches.len());
    for kc in &cache.kernel_caches {
        let (dxi, g) = dsconv_backward(kc, dy)?;
        grads.push(g);
        match &mut dx {
            Some(acc) => acc.add_assign(&dxi)?,
            None => dx = Some(dxi),
        }
    }
    let d_skip = cache.up_skip.map(|mode| {
        let times = match mode {
            SkipMode::Literal => cache.kernel_caches.len(),
            SkipMode::Single => 1,
        };
        dy.scale(sc(times as f64))
    });
    Ok((dx.expect("at least one kernel"), grads, d_skip))
}

/// The full network: a validated config plus its unique parameter sets —
/// three (stage 1..3) when mirror-tied, seven (encoder 1..3, bottleneck,
/// decoder 3..1) when untied.
#[derive(Clone, Debug)]
pub struct Network<T> {
    pub config: NetworkConfig,
    pub stage_params: Vec<MsrbParams<T>>,
}

/// Indices into `stage_params` for each application site.
#[derive(Clone, Copy, Debug)]
struct SiteMap {
    enc: [usize; 3],
    bottleneck: usize,
    dec: [usize; 3], // decoder stage 3, 2, 1 in application order
}

impl<T: Scalar> Network<T> {
    /// Fresh network with seeded kernel initialization.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Network<T>> {
        config.validate()?;
        let sets = match config.tie_mode {
            TieMode::MirrorTied => 3,
            TieMode::Untied => 7,
        };
        let stage_params = (0..sets)
            .map(|s| {
                let kernels = config
                    .dia_set
                    .iter()
                    .enumerate()
                    .map(|(k, &dia)| {
                        init_params(
                            config.channels,
                            dia,
                            DsConvVariant::Plain,
                            mix_seed(seed, ((s as u64) << 8) | k as u64),
                        )
                    })
                    .collect();
                MsrbParams::new(kernels, Self::nominal_variant(config.tie_mode, s))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Network { config, stage_params })
    }

    /// A parameter set's stored variant: sites override it when applying, so
    /// tied sets are nominally plain while untied sets carry their site's.
    fn nominal_variant(tie_mode: TieMode, set_idx: usize) -> DsConvVariant {
        match (tie_mode, set_idx) {
            (TieMode::MirrorTied, _) => DsConvVariant::Plain,
            (TieMode::Untied, 0..=2) => DsConvVariant::Down,
            (TieMode::Untied, 3) => DsConvVariant::Plain,
            (TieMode::Untied, _) => DsConvVariant::Up,
        }
    }

    fn site_map(&self) -> SiteMap {
        match self.config.tie_mode {
            TieMode::MirrorTied => SiteMap {
                enc: [0, 1, 2],
                bottleneck: 2,
                dec: [2, 1, 0],
            },
            TieMode::Untied => SiteMap {
                enc: [0, 1, 2],
                bottleneck: 3,
                dec: [4, 5, 6],
            },
        }
    }

    /// Total learnable scalar count.
    pub fn param_count(&self) -> u64 {
        self.stage_params.iter().map(|p| p.param_count()).sum()
    }

    /// All learnables flattened in a fixed order: per parameter set, per
    /// kernel, `w1 | b1 | w2 | b2`, channels in order.
    pub fn param_vector(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count() as usize);
        for set in &self.stage_params {
            for k in &set.kernels {
                out.extend_from_slice(&k.w1);
                out.extend_from_slice(&k.b1);
                out.extend_from_slice(&k.w2);
                out.extend_from_slice(&k.b2);
            }
        }
        out
    }

    /// Inverse of [`Network::param_vector`].
    pub fn load_param_vector(&mut self, v: &[T]) -> Result<()> {
        if v.len() as u64 != self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "parameter vector has {} scalars, network needs {}",
                v.len(),
                self.param_count()
            )));
        }
        let mut it = v.iter().copied();
        for set in &mut self.stage_params {
            for k in &mut set.kernels {
                for slot in [&mut k.w1, &mut k.b1, &mut k.w2, &mut k.b2] {
                    for s in slot.iter_mut() {
                        *s = it.next().expect("length checked");
                    }
                }
            }
        }
        Ok(())
    }
}

/// Gradients for every unique parameter set, aligned with
/// `Network::stage_params` (tied sites are already summed).
#[derive(Clone, Debug)]
pub struct NetGrads<T> {
    pub sets: Vec<Vec<DsConvGrads<T>>>,
}

impl<T: Scalar> NetGrads<T> {
    fn zeros(net: &Network<T>) -> NetGrads<T> {
        NetGrads {
            sets: net
                .stage_params
                .iter()
                .map(|s| {
                    s.kernels
                        .iter()
                        .map(|k| DsConvGrads::zeros(k.channels()))
                        .collect()
                })
                .collect(),
        }
    }

    fn accumulate(&mut self, set_idx: usize, kernel_grads: &[DsConvGrads<T>]) {
        for (acc, g) in self.sets[set_idx].iter_mut().zip(kernel_grads) {
            acc.add_assign(g);
        }
    }

    /// Flatten in the same order as [`Network::param_vector`].
    pub fn to_vector(&self) -> Vec<T> {
        let mut out = Vec::new();
        for set in &self.sets {
            for k in set {
                out.extend_from_slice(&k.w1);
                out.extend_from_slice(&k.b1);
                out.extend_from_slice(&k.w2);
                out.extend_from_slice(&k.b2);
            }
        }
        out
    }
}

/// Everything needed to run the network backward.
pub struct NetCache<T> {
    site_map: SiteMap,
    enc_caches: Vec<MsrbCache<T>>,
    bottleneck_cache: MsrbCache<T>,
    dec_caches: Vec<MsrbCache<T>>,
    grads_template: NetGrads<T>,
    output_shapes: [Shape; 3],
}

/// Enhanced output plus the two coarser decoder scales.
pub type NetOutputs<T> = (Tensor<T>, Tensor<T>, Tensor<T>);

/// Inference-only forward pass.
pub fn net_forward<T: Scalar>(net: &Network<T>, x: &Tensor<T>) -> Result<NetOutputs<T>> {
    let (outputs, _) = net_forward_with_cache(net, x)?;
    Ok(outputs)
}

/// Forward pass that also returns the cache for [`net_backward`].
pub fn net_forward_with_cache<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
) -> Result<(NetOutputs<T>, NetCache<T>)> {
    net.config.validate()?;
    let s = x.shape();
    if s.channels != net.config.channels {
        return Err(Error::Shape(format!(
            "network expects {} input channels, got {}",
            net.config.channels, s.channels
        )));
    }
    if s.height < 8 || s.width < 8 {
        return Err(Error::Shape(format!(
            "input spatial size must be >= 8 so three halvings stay non-empty, got {s}"
        )));
    }
    let map = net.site_map();
    let skip_mode = net.config.skip_mode;

    // encoder: three halvings, keeping every scale as a skip source
    let mut skips = vec![x.clone()];
    let mut enc_caches = Vec::with_capacity(3);
    for l in 0..3 {
        let p = net.stage_params[map.enc[l]].with_variant(DsConvVariant::Down);
        let (out, cache) = msrb_forward(skips.last().unwrap(), &p, None, skip_mode)?;
        enc_caches.push(cache);
        skips.push(out);
    }

    // bottleneck at the coarsest scale
    let pb = net.stage_params[map.bottleneck].with_variant(DsConvVariant::Plain);
    let (bn, bottleneck_cache) = msrb_forward(&skips[3], &pb, None, skip_mode)?;

    // decoder: coarse to fine, every stage upsampling to its skip's exact
    // size and adding that skip once more on the outside
    let mut dec_caches = Vec::with_capacity(3);
    let mut current = bn;
    let mut outputs_rev = Vec::with_capacity(3); // O3, O2, O1
    for (d, skip) in (0..3).zip([&skips[2], &skips[1], &skips[0]]) {
        let p = net.stage_params[map.dec[d]].with_variant(DsConvVariant::Up);
        let (u, cache) = msrb_forward(&current, &p, Some(skip), skip_mode)?;
        dec_caches.push(cache);
        current = u.add(skip)?;
        outputs_rev.push(current.clone());
    }

    let o3 = outputs_rev[0].clone();
    let o2 = outputs_rev[1].clone();
    let o1 = outputs_rev[2].clone();
    let cache = NetCache {
        site_map: map,
        enc_caches,
        bottleneck_cache,
        dec_caches,
        grads_template: NetGrads::zeros(net),
        output_shapes: [o1.shape(), o2.shape(), o3.shape()],
    };
    Ok(((o1, o2, o3), cache))
}

/// Exact reverse-mode gradients for the input and every unique parameter
/// set; tied sites' contributions are summed.
pub fn net_backward<T: Scalar>(
    cache: &NetCache<T>,
    d_o1: &Tensor<T>,
    d_o2: &Tensor<T>,
    d_o3: &Tensor<T>,
) -> Result<(Tensor<T>, NetGrads<T>)> {
    for (d, expect) in [d_o1, d_o2, d_o3].iter().zip(cache.output_shapes) {
        if d.shape() != expect {
            return Err(Error::Shape(format!(
                "upstream gradient shape {} does not match output {}",
                d.shape(),
                expect
            )));
        }
    }
    let map = cache.site_map;
    let mut grads = cache.grads_template.clone();

    // decoder stage 1 (finest): O1 = U1 + S0
    let (d_u1_input, g_d1, d_skip0) = msrb_backward(&cache.dec_caches[2], d_o1)?;
    grads.accumulate(map.dec[2], &g_d1);
    let mut d_s0 = d_o1.clone();
    d_s0.add_assign(&d_skip0.expect("up application"))?;

    // decoder stage 2: O2 = U2 + S1, and O2 also feeds U1
    let mut d_o2_total = d_o2.clone();
    d_o2_total.add_assign(&d_u1_input)?;
    let (d_u2_input, g_d2, d_skip1) = msrb_backward(&cache.dec_caches[1], &d_o2_total)?;
    grads.accumulate(map.dec[1], &g_d2);
    let mut d_s1 = d_o2_total;
    d_s1.add_assign(&d_skip1.expect("up application"))?;

    // decoder stage 3: O3 = U3 + S2, and O3 also feeds U2
    let mut d_o3_total = d_o3.clone();
    d_o3_total.add_assign(&d_u2_input)?;
    let (d_bn, g_d3, d_skip2) = msrb_backward(&cache.dec_caches[0], &d_o3_total)?;
    grads.accumulate(map.dec[0], &g_d3);
    let mut d_s2 = d_o3_total;
    d_s2.add_assign(&d_skip2.expect("up application"))?;

    // bottleneck feeds decoder stage 3 and reads S3
    let (d_s3, g_bn, _) = msrb_backward(&cache.bottleneck_cache, &d_bn)?;
    grads.accumulate(map.bottleneck, &g_bn);

    // encoder, deepest first; each S_l already accumulated its decoder-side
    // consumers before its producer runs backward
    let (d_s2_enc, g_e3, _) = msrb_backward(&cache.enc_caches[2], &d_s3)?;
    grads.accumulate(map.enc[2], &g_e3);
    d_s2.add_assign(&d_s2_enc)?;

    let (d_s1_enc, g_e2, _) = msrb_backward(&cache.enc_caches[1], &d_s2)?;
    grads.accumulate(map.enc[1], &g_e2);
    d_s1.add_assign(&d_s1_enc)?;

    let (d_s0_enc, g_e1, _) = msrb_backward(&cache.enc_caches[0], &d_s1)?;
    grads.accumulate(map.enc[0], &g_e1);
    d_s0.add_assign(&d_s0_enc)?;

    Ok((d_s0, grads))
}

/// Exact scalar count for a configured network.
pub fn net_param_count(config: &NetworkConfig) -> u64 {
    let sets = match config.tie_mode {
        TieMode::MirrorTied => 3,
        TieMode::Untied => 7,
    };
    sets * config.kappa() as u64 * 4 * config.channels as u64
}

/// One application site in the FLOP report.
#[derive(Clone, Debug, Serialize)]
pub struct FlopLine {
    pub label: String,
    /// Operating resolution: down sites bill at input resolution (pre-pool),
    /// up sites at target resolution (post-resample).
    pub height: usize,
    pub width: usize,
    pub kernels: usize,
    /// `15·C·h·w`, the per-kernel figure.
    pub per_kernel: u64,
    /// `kernels × per_kernel`.
    pub kernel_flops: u64,
    /// Resampling work (pooling or bilinear), itemized outside the kernel
    /// subtotal.
    pub resample_flops: u64,
    /// Subpath summation plus skip additions, also outside the subtotal.
    pub add_flops: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FlopReport {
    pub lines: Vec<FlopLine>,
    /// Sum of the per-kernel formula over all sites — scales exactly with
    /// the number of dilation rates.
    pub kernel_total: u64,
    /// Resampling and addition overhead, kept separate from the formula
    /// subtotal.
    pub overhead_total: u64,
    pub grand_total: u64,
}

impl FlopReport {
    /// Fixed-width table with the grand total, as printed by the audit
    /// command.
    pub fn format_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>11} {:>8} {:>14} {:>14} {:>12} {:>12}",
            "site", "resolution", "kernels", "per_kernel", "kernel_flops", "resample", "adds"
        );
        for l in &self.lines {
            let _ = writeln!(
                s,
                "{:<14} {:>11} {:>8} {:>14} {:>14} {:>12} {:>12}",
                l.label,
                format!("{}x{}", l.height, l.width),
                l.kernels,
                l.per_kernel,
                l.kernel_flops,
                l.resample_flops,
                l.add_flops
            );
        }
        let _ = writeln!(s, "kernel subtotal:   {}", self.kernel_total);
        let _ = writeln!(s, "overhead subtotal: {}", self.overhead_total);
        let _ = writeln!(s, "grand total:       {}", self.grand_total);
        s
    }
}

/// Itemized FLOP accounting for one forward pass at the given input size.
pub fn net_flop_report(config: &NetworkConfig, height: usize, width: usize) -> Result<FlopReport> {
    config.validate()?;
    if height < 8 || width < 8 {
        return Err(Error::Shape(format!(
            "flop report needs spatial size >= 8, got {height}x{width}"
        )));
    }
    let c = config.channels;
    let kappa = config.kappa();
    let chw = |h: usize, w: usize| (c * h * w) as u64;

    // resolution ladder with floor halving
    let (h0, w0) = (height, width);
    let (h1, w1) = (h0 / 2, w0 / 2);
    let (h2, w2) = (h1 / 2, w1 / 2);
    let (h3, w3) = (h2 / 2, w2 / 2);

    let mut lines = Vec::new();
    let mut push = |label: &str, h: usize, w: usize, resample: u64, adds: u64| {
        let per_kernel = dsconv_flop_count(c, h, w).total;
        lines.push(FlopLine {
            label: label.to_string(),
            height: h,
            width: w,
            kernels: kappa,
            per_kernel,
            kernel_flops: kappa as u64 * per_kernel,
            resample_flops: resample,
            add_flops: adds,
        });
    };

    // per-element resampling costs: a 2x2 mean is 4 ops, a bilinear output
    // element is 8; every subpath resamples independently
    let pool = |oh: usize, ow: usize| 4 * chw(oh, ow) * kappa as u64;
    let lerp = |th: usize, tw: usize| 8 * chw(th, tw) * kappa as u64;
    // subpath summation is kappa-1 tensor adds; skip additions depend on
    // mode (inside the block) plus the one outer addition
    let path_sum = |h: usize, w: usize| (kappa as u64 - 1) * chw(h, w);
    let skip_adds = |h: usize, w: usize| {
        let inner = match config.skip_mode {
            SkipMode::Literal => kappa as u64,
            SkipMode::Single => 1,
        };
        (inner + 1) * chw(h, w)
    };

    push("encoder_1", h0, w0, pool(h1, w1), path_sum(h1, w1));
    push("encoder_2", h1, w1, pool(h2, w2), path_sum(h2, w2));
    push("encoder_3", h2, w2, pool(h3, w3), path_sum(h3, w3));
    push("bottleneck", h3, w3, 0, path_sum(h3, w3));
    push("decoder_3", h2, w2, lerp(h2, w2), path_sum(h2, w2) + skip_adds(h2, w2));
    push("decoder_2", h1, w1, lerp(h1, w1), path_sum(h1, w1) + skip_adds(h1, w1));
    push("decoder_1", h0, w0, lerp(h0, w0), path_sum(h0, w0) + skip_adds(h0, w0));

    let kernel_total = lines.iter().map(|l| l.kernel_flops).sum();
    let overhead_total = lines.iter().map(|l| l.resample_flops + l.add_flops).sum();
    Ok(FlopReport {
        lines,
        kernel_total,
        overhead_total,
        grand_total: kernel_total + overhead_total,
    })
}

// ---------------------------------------------------------------------------
// checkpoint serialization

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    format_version: u32,
    dia_set: Vec<usize>,
    stages: usize,
    channels: usize,
    tie_mode: String,
    skip_mode: String,
    stage_params: Vec<StageDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageDoc {
    stage: usize,
    kernels: Vec<KernelDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelDoc {
    dia: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

fn tie_mode_name(m: TieMode) -> &'static str {
    match m {
        TieMode::MirrorTied => "mirror_tied",
        TieMode::Untied => "untied",
    }
}

fn skip_mode_name(m: SkipMode) -> &'static str {
    match m {
        SkipMode::Literal => "literal",
        SkipMode::Single => "single",
    }
}

pub fn parse_tie_mode(s: &str) -> Result<TieMode> {
    match s {
        "mirror_tied" => Ok(TieMode::MirrorTied),
        "untied" => Ok(TieMode::Untied),
        other => Err(Error::Checkpoint(format!(
            "tie_mode must be \"mirror_tied\" or \"untied\", got \"{other}\""
        ))),
    }
}

pub fn parse_skip_mode(s: &str) -> Result<SkipMode> {
    match s {
        "literal" => Ok(SkipMode::Literal),
        "single" => Ok(SkipMode::Single),
        other => Err(Error::Checkpoint(format!(
            "skip_mode must be \"literal\" or \"single\", got \"{other}\""
        ))),
    }
}

/// Write the network as a JSON checkpoint. Scalars are stored as f64, which
/// round-trips both scalar kinds exactly.
pub fn save_checkpoint<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    let to_f64 = |v: &[T]| -> Vec<f64> { v.iter().map(|x| x.to_f64().unwrap()).collect() };
    let doc = CheckpointDoc {
        format_version: 1,
        dia_set: net.config.dia_set.clone(),
        stages: net.config.stages,
        channels: net.config.channels,
        tie_mode: tie_mode_name(net.config.tie_mode).to_string(),
        skip_mode: skip_mode_name(net.config.skip_mode).to_string(),
        stage_params: net
            .stage_params
            .iter()
            .enumerate()
            .map(|(i, set)| StageDoc {
                stage: i + 1,
                kernels: set
                    .kernels
                    .iter()
                    .map(|k| KernelDoc {
                        dia: k.dia,
                        w1: to_f64(&k.w1),
                        b1: to_f64(&k.b1),
                        w2: to_f64(&k.w2),
                        b2: to_f64(&k.b2),
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Checkpoint(format!("serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load and fully validate a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Network<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: CheckpointDoc = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("malformed checkpoint JSON: {e}")))?;

    if doc.format_version != 1 {
        return Err(Error::Checkpoint(format!(
            "format_version must be 1, got {}",
            doc.format_version
        )));
    }
    let config = NetworkConfig {
        dia_set: doc.dia_set,
        stages: doc.stages,
        channels: doc.channels,
        tie_mode: parse_tie_mode(&doc.tie_mode)?,
        skip_mode: parse_skip_mode(&doc.skip_mode)?,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("invalid config: {e}")))?;

    let expected_sets = match config.tie_mode {
        TieMode::MirrorTied => 3,
        TieMode::Untied => 7,
    };
    if doc.stage_params.len() != expected_sets {
        return Err(Error::Checkpoint(format!(
            "stage_params must hold {expected_sets} entries for {}, got {}",
            tie_mode_name(config.tie_mode),
            doc.stage_params.len()
        )));
    }

    let from_f64 = |v: &[f64], field: &str, stage: usize, dia: usize| -> Result<Vec<T>> {
        if v.len() != config.channels {
            return Err(Error::Checkpoint(format!(
                "stage {stage} kernel dia {dia}: {field} must hold {} scalars, got {}",
                config.channels,
                v.len()
            )));
        }
        Ok(v.iter().map(|&x| sc(x)).collect())
    };

    let mut stage_params = Vec::with_capacity(expected_sets);
    for (i, stage_doc) in doc.stage_params.iter().enumerate() {
        if stage_doc.stage != i + 1 {
            return Err(Error::Checkpoint(format!(
                "stage field out of order: expected {}, got {}",
                i + 1,
                stage_doc.stage
            )));
        }
        if stage_doc.kernels.len() != config.dia_set.len() {
            return Err(Error::Checkpoint(format!(
                "stage {} must hold {} kernels (one per dilation rate), got {}",
                stage_doc.stage,
                config.dia_set.len(),
                stage_doc.kernels.len()
            )));
        }
        let mut kernels = Vec::with_capacity(stage_doc.kernels.len());
        for (k, kd) in stage_doc.kernels.iter().enumerate() {
            if kd.dia != config.dia_set[k] {
                return Err(Error::Checkpoint(format!(
                    "stage {} kernel {}: dia {} does not match dia_set entry {}",
                    stage_doc.stage, k, kd.dia, config.dia_set[k]
                )));
            }
            kernels.push(DsConvParams {
                w1: from_f64(&kd.w1, "w1", stage_doc.stage, kd.dia)?,
                b1: from_f64(&kd.b1, "b1", stage_doc.stage, kd.dia)?,
                w2: from_f64(&kd.w2, "w2", stage_doc.stage, kd.dia)?,
                b2: from_f64(&kd.b2, "b2", stage_doc.stage, kd.dia)?,
                dia: kd.dia,
                variant: DsConvVariant::Plain,
            });
        }
        stage_params.push(MsrbParams::new(
            kernels,
            Network::<T>::nominal_variant(config.tie_mode, i),
        )?);
    }

    Ok(Network { config, stage_params })
}
