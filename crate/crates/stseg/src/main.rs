use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use stseg::config::RunConfig;
use stseg::error::{Error, IoContext, Result};
use stseg::experiment;
use stseg::run::{self, echo_config, prepare_out_dir};
use stseg_core::gradcheck;
use stseg_core::model::SegModel;

#[derive(Parser)]
#[command(name = "stseg", version, about = "Spatio-temporal U-Net segmentation on an occlusion benchmark")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key (repeatable); wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for data, initialisation and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train/val/test splits.
    Synth {
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_val: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Train one model, logging every step and checkpointing.
    Train,
    /// Evaluate a checkpoint on a split.
    Eval,
    /// Sliding-window prediction over a directory of frames.
    Predict,
    /// Parameter counts per component, with the nominal temporal formulas.
    Params,
    /// Placement × temporal-unit ablation over several seeds.
    Experiment {
        /// Worker threads, sharding by (row, seed).
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Finite-difference check of every primitive and temporal unit.
    Gradcheck,
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::resolve(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).at(path)
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli.common)?;
    let out = &cli.common.out;
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Synth { n_train, n_val, n_test } => {
            cfg.n_train = n_train.unwrap_or(cfg.n_train);
            cfg.n_val = n_val.unwrap_or(cfg.n_val);
            cfg.n_test = n_test.unwrap_or(cfg.n_test);
            prepare_out_dir(out, cli.common.force)?;
            echo_config(out, &cfg)?;
            for (split, n) in run::synth(&cfg, out)? {
                writeln!(stdout, "{split}: {n} samples").at("<stdout>")?;
            }
        }
        Command::Train => {
            // a resumed run continues in its own directory
            if cfg.resume.is_none() {
                prepare_out_dir(out, cli.common.force)?;
            }
            let train = run::dataset(&cfg, "train")?;
            let outcome = run::train(&cfg, &train, out, &mut stdout)?;
            let val = run::dataset(&cfg, "val")?;
            if !val.is_empty() {
                let report = run::eval(&outcome.trainer.model, &val, cfg.train.repeat_last)?;
                write!(stdout, "{}", run::eval_table(&report)).at("<stdout>")?;
                write_file(&out.join("eval.txt"), &run::eval_kv(&report))?;
            }
            writeln!(stdout, "checkpoint: {}", outcome.final_checkpoint.display()).at("<stdout>")?;
        }
        Command::Eval => {
            let ckpt = run::required_checkpoint(&cfg)?.to_path_buf();
            prepare_out_dir(out, cli.common.force)?;
            echo_config(out, &cfg)?;
            let model = run::load_model(&cfg, &ckpt)?;
            cfg.model = model.config().clone();
            let data = run::dataset(&cfg, &cfg.split)?;
            let report = run::eval(&model, &data, cfg.train.repeat_last)?;
            write!(stdout, "{}", run::eval_table(&report)).at("<stdout>")?;
            write_file(&out.join("eval.txt"), &run::eval_kv(&report))?;
        }
        Command::Predict => {
            let ckpt = run::required_checkpoint(&cfg)?.to_path_buf();
            let frames = cfg.frames.clone().ok_or_else(|| Error::Config("predict.frames is not set".into()))?;
            prepare_out_dir(out, cli.common.force)?;
            echo_config(out, &cfg)?;
            let model = run::load_model(&cfg, &ckpt)?;
            let video = run::load_video(&frames)?;
            let maps = run::predict(&model, &video, cfg.stride, out)?;
            writeln!(stdout, "{} label maps written to {}", maps.len(), out.display()).at("<stdout>")?;
        }
        Command::Params => {
            let model = SegModel::<f32>::build(&cfg.model, cfg.seed)?;
            writeln!(stdout, "{} / {}", cfg.model.placement, cfg.model.temporal_kind).at("<stdout>")?;
            write!(stdout, "{}", run::params_table(&model.param_report())).at("<stdout>")?;
        }
        Command::Experiment { parallel } => {
            prepare_out_dir(out, cli.common.force)?;
            echo_config(out, &cfg)?;
            let train = run::dataset(&cfg, "train")?;
            let val = run::dataset(&cfg, "val")?;
            let started = Instant::now();
            let progress = |v: &experiment::Variant, c: &experiment::Cell| {
                let result = match &c.result {
                    Ok(m) => format!("miou={m:.4}"),
                    Err(e) => format!("failed: {e}"),
                };
                eprintln!("[{:>6.0}s] {} seed={} {result}", started.elapsed().as_secs_f64(), v.key(), c.seed);
            };
            let result = experiment::run(&cfg, &train, &val, parallel, &progress);
            write_file(&out.join("results.csv"), &result.to_csv())?;
            let md = result.to_markdown();
            write_file(&out.join("results.md"), &md)?;
            write!(stdout, "{md}").at("<stdout>")?;
            let v = experiment::verdict(&result, cfg.experiment.control_kind);
            for (kind, ok, [e, s, b, f]) in &v.ordering {
                let line = format!("{kind}: encoder {e:.4} skip {s:.4} bottleneck {b:.4} frame-by-frame {f:.4} ordered={ok}");
                writeln!(stdout, "{line}").at("<stdout>")?;
            }
            writeln!(stdout, "control |Δ| vs frame-by-frame: {:.4}", v.control_distance).at("<stdout>")?;
        }
        Command::Gradcheck => {
            let started = Instant::now();
            let cases = gradcheck::suite(cfg.seed);
            let mut failed = 0;
            for case in &cases {
                let status = if case.passed() { "pass" } else { "FAIL" };
                let kind = if case.negative_control { " (negative control, must be caught)" } else { "" };
                let err = match &case.report {
                    Ok(r) => format!("max rel err {:.3e}", r.max_rel_error),
                    Err(e) => format!("error: {e}"),
                };
                writeln!(stdout, "{status} {:<26} {err}{kind}", case.name).at("<stdout>")?;
                failed += usize::from(!case.passed());
            }
            writeln!(stdout, "{} cases in {:.1}s", cases.len(), started.elapsed().as_secs_f64()).at("<stdout>")?;
            if failed > 0 {
                return Err(Error::Numeric(format!("{failed} gradient checks failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
