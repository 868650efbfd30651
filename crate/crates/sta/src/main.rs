use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sta::commands::{cmd_eval, cmd_export_attention, cmd_gen_synth, cmd_grad_check, cmd_train};
use sta::config::{DataFormat, FoldSel, RunConfig};
use sta_core::data::SyntheticSpec;
use sta_core::train::Variant;

#[derive(Parser)]
#[command(name = "sta", version, about = "Spatio-temporal attention LSTM for skeleton action recognition")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the staged training schedule and write checkpoints and a loss trace.
    Train(RunArgs),
    /// Report accuracy and a confusion matrix for a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write per-frame joint and frame attention of one sequence as CSV.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sequence file in the generic format.
        #[arg(long)]
        data: PathBuf,
        /// Which sequence of the file to export.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset in the generic format.
    GenSynth {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 8)]
        joints: usize,
        #[arg(long, default_value_t = 10)]
        t_min: usize,
        #[arg(long, default_value_t = 20)]
        t_max: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 1.0)]
        amplitude: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare tape gradients of the full loss with finite differences.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_parser = ["generic", "sbu"])]
    format: Option<String>,
    #[arg(long, value_parser = ["lstm", "sa", "ta", "sta"])]
    variant: Option<String>,
    #[arg(long)]
    no_spatial_reg: bool,
    #[arg(long)]
    no_temporal_reg: bool,
    /// Held-out fold index, or "all".
    #[arg(long)]
    fold: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> sta::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(f) = &self.format {
            cfg.format = f.parse::<DataFormat>()?;
        }
        if let Some(v) = &self.variant {
            cfg.variant = Variant::parse(v).expect("validated by clap");
        }
        cfg.spatial_reg &= !self.no_spatial_reg;
        cfg.temporal_reg &= !self.no_temporal_reg;
        if let Some(f) = &self.fold {
            cfg.fold = Some(f.parse::<FoldSel>()?);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> sta::Result<()> {
    match cli.cmd {
        Cmd::Train(args) => {
            let summary = cmd_train(&args.resolve()?)?;
            print!("{summary}");
        }
        Cmd::Eval { checkpoint, run } => {
            print!("{}", cmd_eval(&checkpoint, &run.resolve()?)?);
        }
        Cmd::ExportAttention {
            checkpoint,
            data,
            index,
            out,
        } => {
            cmd_export_attention(&checkpoint, &data, index, &out)?;
            println!("wrote {}/alpha.csv and {}/beta.csv", out.display(), out.display());
        }
        Cmd::GenSynth {
            n,
            classes,
            joints,
            t_min,
            t_max,
            noise,
            amplitude,
            seed,
            out,
        } => {
            let spec = SyntheticSpec {
                t_range: (t_min, t_max),
                noise_sigma: noise,
                amplitude,
                ..SyntheticSpec::one_joint_per_class(n, classes, joints, seed)
            };
            let count = cmd_gen_synth(&spec, &out)?;
            println!("wrote {count} sequences to {}", out.display());
        }
        Cmd::GradCheck { seed } => {
            let r = cmd_grad_check(seed)?;
            println!(
                "max relative error {:.3e} over {} coordinates ({} skipped at kinks)",
                r.max_rel_error,
                r.checked,
                r.skipped.len()
            );
            if r.max_rel_error >= 1e-5 {
                return Err(sta::Error::Core(sta_core::Error::Numeric("gradient check failed".into())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
