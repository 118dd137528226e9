use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lanediff::harness::{self, report, AblationAxis, RunConfig};
use lanediff::{Error, Result};

#[derive(Parser)]
#[command(name = "lanediff", version, about = "Diffusion-sampled vector maps with uncertainty on synthetic scenes")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags for the most used config keys. Precedence: defaults, then these
/// flags and `--set`, then `--config`, then an explicit `--seed`.
#[derive(Args)]
struct Common {
    /// TOML file with RunConfig keys; overrides flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// easy, medium or hard.
    #[arg(long, global = true)]
    difficulty: Option<String>,
    #[arg(long, global = true)]
    train_count: Option<usize>,
    #[arg(long, global = true)]
    val_count: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    padding: Option<String>,
    /// Diffusion steps at inference.
    #[arg(short = 'k', long = "steps", global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Samples per scene.
    #[arg(short = 'n', long = "samples-per-scene", global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    freeze_encoder: bool,
    #[arg(long, global = true)]
    pretrained_encoder: Option<PathBuf>,
    /// Any other key as `section.key=value`, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate train and val scenes with observations.
    GenData {
        /// Overwrite a non-empty data directory.
        #[arg(long)]
        force: bool,
    },
    /// Train the denoiser; writes model.ckpt, train_log.csv and run-train.json.
    Train,
    /// Draw n samples per val scene.
    Sample {
        /// Defaults to <out-dir>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// AP, ROC and visibility statistics of a sample directory.
    Evaluate {
        /// Defaults to <out-dir>/samples.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Sweep one sampler or training parameter.
    Ablate {
        /// k, eta, tau, padding or pretrain.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; the axis defaults otherwise.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// Needed for k, eta and tau; defaults to <out-dir>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Collect evaluation and ablation outputs into report.md and a figure.
    Report {
        #[arg(long)]
        samples: Option<PathBuf>,
    },
}

fn build_config(c: &Common) -> Result<RunConfig> {
    let mut sets: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| sets.push((k.to_string(), v));
    if let Some(v) = &c.out_dir {
        put("out_dir", toml_str(v.display()));
    }
    if let Some(v) = &c.data_dir {
        put("data.dir", toml_str(v.display()));
    }
    if let Some(v) = &c.difficulty {
        put("data.difficulty", toml_str(v));
    }
    if let Some(v) = c.train_count {
        put("data.train_count", v.to_string());
    }
    if let Some(v) = c.val_count {
        put("data.val_count", v.to_string());
    }
    if let Some(v) = c.epochs {
        put("train.epochs", v.to_string());
    }
    if let Some(v) = c.lr {
        put("train.lr", float(v));
    }
    if let Some(v) = &c.padding {
        put("train.padding", toml_str(v));
        put("sampler.padding", toml_str(v));
    }
    if let Some(v) = c.k {
        put("sampler.k", v.to_string());
    }
    if let Some(v) = c.eta {
        put("sampler.eta", float(v));
    }
    if let Some(v) = c.tau {
        put("sampler.tau", float(v));
    }
    if let Some(v) = c.n {
        put("sampler.n", v.to_string());
    }
    if c.freeze_encoder {
        put("train.freeze_encoder", "true".into());
    }
    if let Some(v) = &c.pretrained_encoder {
        put("train.pretrained_encoder", toml_str(v.display()));
    }
    for s in &c.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        put(k.trim(), v.trim().to_string());
    }
    let mut cfg = RunConfig::default();
    for (k, v) in &sets {
        cfg = cfg.set_key(k, v)?;
    }
    if let Some(path) = &c.config {
        cfg = cfg.overlay_file(path)?;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn toml_str(v: impl std::fmt::Display) -> String {
    toml::Value::String(v.to_string()).to_string()
}

fn float(v: f64) -> String {
    toml::Value::Float(v).to_string()
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli.common)?;
    let default_ckpt = || cfg.out_dir.join("model.ckpt");
    let default_samples = || cfg.out_dir.join("samples");
    match cli.cmd {
        Cmd::GenData { force } => {
            let m = harness::gen_data(&cfg, force)?;
            println!("wrote {} scenes to {}", m.entries.len(), cfg.data.dir.display());
        }
        Cmd::Train => {
            let (out, _, _) = harness::cmd_train(&cfg)?;
            println!(
                "{} steps in {:.1}s; checkpoint {} (sha256 {})",
                out.steps,
                out.seconds,
                out.checkpoint.display(),
                out.sha256
            );
            if let (Some(a), Some(b)) = (out.init_val_map, out.final_val_map) {
                println!("val mAP {a:.4} -> {b:.4}");
            }
        }
        Cmd::Sample { checkpoint } => {
            let ck = checkpoint.unwrap_or_else(default_ckpt);
            let out = harness::cmd_sample(&cfg, &ck)?;
            println!(
                "{} scenes x {} samples in {} ({:.2} ms per sample)",
                out.scenes,
                out.samples_per_scene,
                out.dir.display(),
                out.ms_per_sample
            );
        }
        Cmd::Evaluate { samples } => {
            let dir = samples.unwrap_or_else(default_samples);
            let r = harness::cmd_evaluate(&cfg, &dir)?;
            print!("{}", report::summary_text(&r));
        }
        Cmd::Ablate { axis, values, checkpoint } => {
            let axis: AblationAxis = axis.parse()?;
            let values = if values.is_empty() { axis.default_values() } else { values };
            let ck = checkpoint.unwrap_or_else(default_ckpt);
            let ck = matches!(axis, AblationAxis::K | AblationAxis::Eta | AblationAxis::Tau).then_some(ck.as_path());
            let rows = harness::cmd_ablate(&cfg, axis, &values, ck)?;
            print!("{}", harness::ablation_csv(axis, &rows));
        }
        Cmd::Report { samples } => {
            let dir = samples.unwrap_or_else(default_samples);
            let path = report::cmd_report(&cfg, &dir)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
