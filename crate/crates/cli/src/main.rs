use std::path::PathBuf;
use std::process::ExitCode;

use battery_msm::evalkit::CostParams;
use battery_msm_cli::{cmd_cost, cmd_detect, cmd_pretrain, cmd_synth, cmd_tsne, default_out, CliError, RunConfig};
use clap::{Args, Parser, Subcommand};

/// Masked signal modeling pipeline for battery charging data.
#[derive(Parser)]
#[command(name = "battery-msm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the global seed of the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| default_out(name))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fleet as snippet and metadata CSV files.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain the encoder with masked signal modeling.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Directory holding snippets.csv and meta.csv.
        #[arg(long)]
        data: PathBuf,
        /// Warm-start from a checkpoint; arrays with matching name and shape are copied.
        #[arg(long)]
        init_from: Option<PathBuf>,
    },
    /// Train the fault classifier on encoder features and evaluate held-out vehicles.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Pretrained checkpoint; without it a randomly initialized encoder is used.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Project snippets to 2-D with t-SNE and score how well groups mix.
    Tsne {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Project normalized channel matrices instead of encoder embeddings.
        #[arg(long)]
        raw: bool,
        /// Randomly subsample down to eval.max_points when there are more snippets.
        #[arg(long)]
        subsample: bool,
    },
    /// Expected direct cost per vehicle at an operating point.
    Cost {
        #[arg(long = "q-tp")]
        q_tp: f64,
        #[arg(long = "q-fp")]
        q_fp: f64,
        /// Fault rate.
        #[arg(long)]
        p: Option<f64>,
        /// Cost of a missed fault (CNY).
        #[arg(long = "c-f")]
        c_f: Option<f64>,
        /// Cost of an inspection (CNY).
        #[arg(long = "c-r")]
        c_r: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { common } => {
            let cfg = common.load()?;
            let out = common.out("synth");
            let summary = cmd_synth(&cfg, &out)?;
            println!("{summary}\nwritten to {}", out.display());
        }
        Command::Pretrain { common, data, init_from } => {
            let cfg = common.load()?;
            let out = common.out("pretrain");
            let s = cmd_pretrain(&cfg, &data, &out, init_from.as_deref())?;
            if let Some(t) = &s.transfer {
                println!("transfer: {} copied, {} fresh", t.copied.len(), t.fresh.len());
                for name in &t.copied {
                    println!("  copied {name}");
                }
                for name in &t.fresh {
                    println!("  fresh  {name}");
                }
            }
            println!("final train loss: {}", s.final_train_loss);
            if let Some(v) = s.final_val_loss {
                println!("final val loss: {v}");
            }
            println!("written to {}", out.display());
        }
        Command::Detect { common, data, checkpoint } => {
            let cfg = common.load()?;
            let out = common.out("detect");
            let r = cmd_detect(&cfg, &data, checkpoint.as_deref(), &out)?;
            println!("snippet_auroc: {}", r.snippet_auroc);
            println!("vehicle_auroc: {}", r.vehicle_auroc);
            println!(
                "min_expected_cost: {} CNY at threshold {} ({})",
                r.min_expected_cost, r.min_cost_threshold, r.cost_convention
            );
            println!("written to {}", out.display());
        }
        Command::Tsne { common, data, checkpoint, raw, subsample } => {
            let mut cfg = common.load()?;
            cfg.eval.subsample |= subsample;
            let out = common.out("tsne");
            let s = cmd_tsne(&cfg, &data, checkpoint.as_deref(), raw, &out)?;
            println!("mode: {}, points: {}", s.mode, s.points);
            println!("mixing_score (features): {}", s.mixing_features);
            println!("mixing_score (projection): {}", s.mixing_projection);
            println!("written to {}", out.display());
        }
        Command::Cost { q_tp, q_fp, p, c_f, c_r } => {
            let d = CostParams::default();
            let params = CostParams {
                p: p.unwrap_or(d.p),
                c_f: c_f.unwrap_or(d.c_f),
                c_r: c_r.unwrap_or(d.c_r),
            };
            println!("{}", cmd_cost(&params, q_tp, q_fp)?);
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
