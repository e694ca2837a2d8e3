//! Command-line front end. Every capability of the library is reachable
//! through one subcommand: `train`, `enhance`, `eval`, `audit`, `gradcheck`,
//! `synth`, and `bench`. All output is line-oriented and stable so scripts
//! can parse it.
//!
//! Exit codes: 0 on success (including `--help`/`--version`), 1 on a
//! contract violation (bad flags, failed gradient check, invalid
//! configuration), 2 on an I/O or image-decode failure.

use std::path::PathBuf;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::gradcheck;
use crate::imageio::{read_image, synth_pairs, write_image};
use crate::metrics::evaluate;
use crate::network::{
    load_checkpoint, net_flop_report, net_forward, net_param_count, parse_skip_mode,
    parse_tie_mode, NetworkConfig,
};
use crate::rng::seeded;
use crate::tensor::{Shape, Tensor};
use crate::trainer::{train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "shiftlight",
    version,
    about = "Low-light image enhancement with shift-based separable kernels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on a paired low/high dataset
    Train(TrainArgs),
    /// Enhance one image with a trained checkpoint
    Enhance(EnhanceArgs),
    /// Score a checkpoint against a paired dataset
    Eval(EvalArgs),
    /// Print parameter and FLOP accounting for a configuration
    Audit(AuditArgs),
    /// Verify every backward pass against central differences
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic paired dataset
    Synth(SynthArgs),
    /// Time forward passes on this machine
    Bench(BenchArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset root containing low/ and high/ subdirectories
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint and training log
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 360)]
    epochs: usize,
    /// Base learning rate
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Batch size
    #[arg(long, default_value_t = 40)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dilation rates joined by '+', e.g. "0+1+2+3+4" or "2"
    #[arg(long, default_value = "0+1+2+3+4")]
    dia_set: String,
    /// Parameter sharing across stages: "mirror_tied" or "untied"
    #[arg(long, default_value = "mirror_tied")]
    tie_mode: String,
    /// Decoder skip scaling: "literal" or "single"
    #[arg(long, default_value = "literal")]
    skip_mode: String,
    /// Center-crop size applied to every training pair; when omitted, 180
    /// reduced to the smallest image dimension in the dataset
    #[arg(long)]
    crop: Option<usize>,
    /// Worker threads; results are identical at any value
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct EnhanceArgs {
    /// Trained checkpoint (JSON)
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input image (PNG)
    #[arg(long = "in")]
    input: PathBuf,
    /// Output image path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint (JSON)
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset root containing low/ and high/ subdirectories
    #[arg(long)]
    data: PathBuf,
    /// Where to write the JSON report
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    /// Dilation rates joined by '+', e.g. "0+1+2+3+4" or "2"
    #[arg(long, default_value = "0+1+2+3+4")]
    dia_set: String,
    /// Parameter sharing across stages: "mirror_tied" or "untied"
    #[arg(long, default_value = "mirror_tied")]
    tie_mode: String,
    /// Input height the FLOP accounting assumes
    #[arg(long, default_value_t = 180)]
    height: usize,
    /// Input width the FLOP accounting assumes
    #[arg(long, default_value_t = 180)]
    width: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of pairs to generate
    #[arg(long)]
    count: usize,
    /// Square image size in pixels (at least 16)
    #[arg(long)]
    size: usize,
    #[arg(long)]
    seed: u64,
    /// Dataset root to create (low/ and high/ subdirectories)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Trained checkpoint (JSON)
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 180)]
    height: usize,
    #[arg(long, default_value_t = 180)]
    width: usize,
    /// Timed iterations (after 3 warmup passes)
    #[arg(long, default_value_t = 30)]
    iters: usize,
}

/// Parse the '+'-joined dilation-set notation: "0+1+2+3+4", "2+3+4", "0".
pub fn parse_dia_set(s: &str) -> Result<Vec<usize>> {
    s.split('+')
        .map(|tok| {
            tok.trim().parse::<usize>().map_err(|_| {
                Error::InvalidArgument(format!(
                    "--dia-set: expected rates joined by '+', e.g. \"0+1+2\", got \"{s}\""
                ))
            })
        })
        .collect()
}

/// Build and validate a network configuration from flag strings, attributing
/// failures to the flag that caused them.
fn network_config(dia_set: &str, tie_mode: &str, skip_mode: &str) -> Result<NetworkConfig> {
    let config = NetworkConfig {
        dia_set: parse_dia_set(dia_set)?,
        tie_mode: parse_tie_mode(tie_mode).map_err(|_| {
            Error::InvalidArgument(format!(
                "--tie-mode: must be \"mirror_tied\" or \"untied\", got \"{tie_mode}\""
            ))
        })?,
        skip_mode: parse_skip_mode(skip_mode).map_err(|_| {
            Error::InvalidArgument(format!(
                "--skip-mode: must be \"literal\" or \"single\", got \"{skip_mode}\""
            ))
        })?,
        ..NetworkConfig::default()
    };
    if let Err(e) = config.validate() {
        let detail = match e {
            Error::InvalidArgument(m) => m,
            other => other.to_string(),
        };
        return Err(Error::InvalidArgument(format!("--dia-set: {detail}")));
    }
    Ok(config)
}

/// Parse `argv` and execute the selected subcommand, returning the process
/// exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train(args) => train_cmd(args)?,
        Command::Enhance(args) => enhance_cmd(args)?,
        Command::Eval(args) => eval_cmd(args)?,
        Command::Audit(args) => audit_cmd(args)?,
        Command::Gradcheck(args) => return gradcheck_cmd(args),
        Command::Synth(args) => synth_cmd(args)?,
        Command::Bench(args) => bench_cmd(args)?,
    }
    Ok(0)
}

/// The default crop fits the data: the standard 180-pixel patch, shrunk to
/// the smallest image dimension so any dataset trains out of the box. An
/// explicit --crop is passed through unchanged.
fn fitted_crop(data: &PathBuf) -> Result<usize> {
    let mut crop = TrainConfig::default().crop;
    for entry in crate::imageio::scan_dataset(data)? {
        for path in [&entry.low_path, &entry.high_path] {
            let (h, w) = crate::imageio::image_dimensions(path)?;
            crop = crop.min(h).min(w);
        }
    }
    Ok(crop)
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let net_cfg = network_config(&args.dia_set, &args.tie_mode, &args.skip_mode)?;
    let crop = match args.crop {
        Some(c) => c,
        None => fitted_crop(&args.data)?,
    };
    let cfg = TrainConfig {
        epochs: args.epochs,
        base_lr: args.lr,
        batch_size: args.batch,
        seed: args.seed,
        crop,
        threads: args.threads,
        ..TrainConfig::default()
    };
    println!("crop: {crop}");
    let outcome = train(&args.data, &cfg, &net_cfg, &args.out)?;
    if let (Some(first), Some(last)) = (outcome.records.first(), outcome.records.last()) {
        println!("first_epoch_total: {:.6}", first.total);
        println!("final_epoch_total: {:.6}", last.total);
    }
    println!("held_out: {}", outcome.test_names.join(" "));
    println!("checkpoint: {}", outcome.checkpoint_path.display());
    println!("log: {}", outcome.log_path.display());
    Ok(())
}

fn enhance_cmd(args: EnhanceArgs) -> Result<()> {
    let net = load_checkpoint::<f32>(&args.checkpoint)?;
    let x = read_image::<f32>(&args.input)?;
    let (o1, _, _) = net_forward(&net, &x)?;
    write_image(&o1.clamp01(), &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let report = evaluate(&args.data, &args.checkpoint)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&args.report, json).map_err(|e| Error::io(&args.report, e))?;
    print!("{}", report.format_text());
    println!("report: {}", args.report.display());
    Ok(())
}

fn audit_cmd(args: AuditArgs) -> Result<()> {
    if args.height < 8 || args.width < 8 {
        return Err(Error::InvalidArgument(format!(
            "--height/--width: must be at least 8, got {}x{}",
            args.height, args.width
        )));
    }
    let config = network_config(&args.dia_set, &args.tie_mode, "literal")?;
    let params = net_param_count(&config);
    let report = net_flop_report(&config, args.height, args.width)?;
    println!("params: {params}");
    print!("{}", report.format_text());
    let json = serde_json::json!({ "params": params, "flops": report });
    println!("{json}");
    Ok(())
}

fn gradcheck_cmd(args: GradcheckArgs) -> Result<i32> {
    let reports = gradcheck::run_all(args.seed)?;
    for r in &reports {
        let note = if r.kink_skips > 0 {
            let plural = if r.kink_skips == 1 { "" } else { "s" };
            format!("  (skipped {} kink-straddling coordinate{plural})", r.kink_skips)
        } else {
            String::new()
        };
        println!(
            "{:<22} cases {:>3}  max_rel_err {:.3e}{note}",
            r.name, r.cases, r.max_rel_err
        );
    }
    if gradcheck::all_passed(&reports) {
        println!("PASS: all components within {:.0e}", gradcheck::TOLERANCE);
        Ok(0)
    } else {
        println!("FAIL: tolerance {:.0e} exceeded", gradcheck::TOLERANCE);
        Ok(1)
    }
}

fn synth_cmd(args: SynthArgs) -> Result<()> {
    synth_pairs(args.count, args.size, args.seed, &args.out)?;
    println!(
        "wrote {} pairs of {}x{} under {}",
        args.count,
        args.size,
        args.size,
        args.out.display()
    );
    Ok(())
}

fn bench_cmd(args: BenchArgs) -> Result<()> {
    if args.height < 8 || args.width < 8 {
        return Err(Error::InvalidArgument(format!(
            "--height/--width: must be at least 8, got {}x{}",
            args.height, args.width
        )));
    }
    if args.iters == 0 {
        return Err(Error::InvalidArgument("--iters: must be positive".into()));
    }
    let net = load_checkpoint::<f32>(&args.checkpoint)?;
    let mut rng = seeded(0);
    let x = Tensor::<f32>::random(Shape::new(1, 3, args.height, args.width), 0.0, 1.0, &mut rng);
    println!("host CPU wall time, single thread; not comparable to embedded-GPU timings");
    for _ in 0..3 {
        std::hint::black_box(net_forward(&net, &x)?);
    }
    let mut times_ms = Vec::with_capacity(args.iters);
    for _ in 0..args.iters {
        let t0 = Instant::now();
        let out = net_forward(&net, &x)?;
        times_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    let mean = times_ms.iter().sum::<f64>() / times_ms.len() as f64;
    let var = times_ms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / times_ms.len() as f64;
    println!("size: {}x{}  iters: {}", args.height, args.width, args.iters);
    println!("mean_ms: {mean:.3}");
    println!("stddev_ms: {:.3}", var.sqrt());
    Ok(())
}
