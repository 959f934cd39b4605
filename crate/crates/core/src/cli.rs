//! The `pms` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure (divergence, failed gradient check).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::dataio::{load_dir, normalize_action, normalize_with, synth_dataset, write_mtf, MotionSequence};
use crate::error::{Error, Result};
use crate::model::load_model_file;
use crate::training::{
    apply_ablation, config_diff, eval_windows, evaluate_model, run_gradcheck_suite, train_multistage, AblationSpec,
    EvalReport, TrainedModel,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "pms", version, about = "Multi-scale incremental human motion prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides one key (repeatable): `--set hidden=64`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic MTF sequences.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        joints: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train with the multi-stage plan.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory of `.mtf` sequences.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the frames following each sequence's last observed window.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Frames to predict (default: the model's output length).
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// MPJPE per horizon against zero- and constant-velocity baselines.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Horizons in milliseconds, e.g. `80,160,320,400`.
        #[arg(long)]
        horizons: Option<String>,
    },
    /// Finite-difference check of every gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate one ablation variant.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Variant name; `--list` prints them all.
        #[arg(long, required_unless_present = "list")]
        variant: Option<String>,
        #[arg(long)]
        list: bool,
        #[arg(long, required_unless_present = "list")]
        data: Option<PathBuf>,
        /// Held-out evaluation data (default: the training data).
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long, required_unless_present = "list")]
        out: Option<PathBuf>,
    },
    /// Print every configuration key with its default.
    Keys,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Weights(_) => EXIT_USAGE,
        Error::NonFinite(_) | Error::Divergence { .. } | Error::GradCheck(_) | Error::PoisonedUpdate(_) | Error::NonDeterministic(_) => {
            EXIT_NUMERIC
        }
        _ => EXIT_DATA,
    }
}

/// Runs the tool on `argv` (program name first) and returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    if let Some(path) = &common.config {
        c.merge_file(path)?;
    }
    c.apply_env()?;
    for o in &common.overrides {
        c.set_override(o)?;
    }
    c.validate()?;
    c.resolved()
}

fn write_resolved(dir: &Path, c: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("resolved.cfg"), c.to_text())?;
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            common,
            out,
            sequences,
            joints,
            frames,
            seed,
        } => {
            let mut c = load_config(&common)?;
            for (key, v) in [("synth.sequences", sequences), ("synth.joints", joints), ("synth.frames", frames)] {
                if let Some(v) = v {
                    c.set(key, &v.to_string())?;
                }
            }
            if let Some(s) = seed {
                c.set("seed", &s.to_string())?;
            }
            c.validate()?;
            write_resolved(&out, &c)?;
            let written = write_synth(&c, &out)?;
            println!("wrote {written} sequences to {}", out.display());
            Ok(())
        }
        Command::Train { common, data, out } => {
            let c = load_config(&common)?;
            write_resolved(&out, &c)?;
            let seqs = load_dir(&data)?;
            let models = train_multistage(&seqs, &c, Some(&out))?;
            for m in &models {
                print_summary(m);
            }
            Ok(())
        }
        Command::Predict {
            common,
            model,
            data,
            out,
            horizon,
        } => {
            let c = load_config(&common)?;
            write_resolved(&out, &c)?;
            let model = load_model_file(&model)?;
            let horizon = horizon.unwrap_or(model.config.output_len);
            for seq in load_dir(&data)? {
                let pred = predict_sequence(&model, &seq, horizon)?;
                let path = out.join(format!("{}.pred.mtf", seq.name));
                write_mtf(&pred, std::io::BufWriter::new(std::fs::File::create(&path)?))?;
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Eval {
            common,
            model,
            data,
            out,
            horizons,
        } => {
            let mut c = load_config(&common)?;
            if let Some(h) = horizons {
                c.set("eval.horizons", &h)?;
            }
            let model = load_model_file(&model)?;
            let report = evaluate_dir(&model, &load_dir(&data)?, &c)?;
            print!("{}", report.to_table());
            if let Some(out) = out {
                write_resolved(&out, &c)?;
                std::fs::write(out.join("eval.txt"), report.to_table())?;
                std::fs::write(out.join("eval.cfg"), report.to_kv())?;
            }
            Ok(())
        }
        Command::Gradcheck { common, out } => {
            let c = load_config(&common)?;
            let entries = run_gradcheck_suite(false)?;
            let text: String = entries.iter().map(|e| e.line() + "\n").collect();
            print!("{text}");
            if let Some(out) = out {
                write_resolved(&out, &c)?;
                std::fs::write(out.join("gradcheck.txt"), &text)?;
            }
            match entries.iter().find(|e| !e.report.passed()) {
                Some(e) => Err(Error::GradCheck(e.line())),
                None => Ok(()),
            }
        }
        Command::Ablate {
            common,
            variant,
            list,
            data,
            eval_data,
            out,
        } => {
            if list {
                for v in AblationSpec::ALL {
                    println!("{:<14} {}", v.name(), v.description());
                }
                return Ok(());
            }
            let (variant, data, out) = match (variant, data, out) {
                (Some(v), Some(d), Some(o)) => (v, d, o),
                _ => return Err(Error::Config("ablate needs --variant, --data and --out".into())),
            };
            let spec: AblationSpec = variant.parse()?;
            let base = load_config(&common)?;
            let c = apply_ablation(&base, spec)?.resolved()?;
            write_resolved(&out, &c)?;
            let changed = config_diff(&base, &c);
            println!("{}: {} (changed: {})", spec.name(), spec.description(), changed.join(", "));
            let seqs = load_dir(&data)?;
            let models = train_multistage(&seqs, &c, Some(&out))?;
            let eval_seqs = match eval_data {
                Some(d) => load_dir(&d)?,
                None => seqs,
            };
            for m in &models {
                print_summary(m);
                let subset: Vec<MotionSequence> = eval_seqs
                    .iter()
                    .filter(|s| m.action.as_ref().is_none_or(|a| *a == s.name))
                    .cloned()
                    .collect();
                let report = evaluate_dir(&m.model, &subset, &c)?;
                print!("{}", report.to_table());
                let stem = m.file_stem().replacen("model", "eval", 1);
                std::fs::write(out.join(format!("{stem}.txt")), report.to_table())?;
                std::fs::write(out.join(format!("{stem}.cfg")), report.to_kv())?;
            }
            Ok(())
        }
        Command::Keys => {
            print!("{}", RunConfig::key_reference());
            Ok(())
        }
    }
}

/// Writes the configured synthetic sequences as `<name>.mtf` files.
pub fn write_synth(c: &RunConfig, out: &Path) -> Result<usize> {
    let (spec, count) = c.synth_spec()?;
    std::fs::create_dir_all(out)?;
    let seqs = synth_dataset(&spec, count)?;
    for s in &seqs {
        let path = out.join(format!("{}.mtf", s.name));
        write_mtf(s, std::io::BufWriter::new(std::fs::File::create(path)?))?;
    }
    Ok(seqs.len())
}

fn print_summary(m: &TrainedModel) {
    if let Some(last) = m.log.last() {
        println!("{}: {}", m.file_stem(), last.log_line());
    }
}

/// Evaluates `model` on every window of `seqs` long enough for the
/// configured horizons.
pub fn evaluate_dir(model: &crate::model::PmsModel, seqs: &[MotionSequence], c: &RunConfig) -> Result<EvalReport> {
    let horizons = c.horizon_frames()?;
    let needed = horizons
        .iter()
        .map(|&(_, f)| f)
        .max()
        .unwrap_or(0)
        .max(model.config.output_len);
    let (windows, _) = eval_windows(model, seqs, c.parse("stride")?, needed)?;
    if windows.is_empty() {
        return Err(Error::Data(format!(
            "no sequence has the {} frames needed for the longest horizon",
            model.config.input_len + needed
        )));
    }
    evaluate_model(model, &windows, &horizons)
}

/// The `horizon` frames after the last `K` frames of `seq`, in source units.
pub fn predict_sequence(model: &crate::model::PmsModel, seq: &MotionSequence, horizon: usize) -> Result<MotionSequence> {
    let k = model.config.input_len;
    if seq.joints != model.config.joints {
        return Err(Error::Data(format!("`{}` has {} joints, model expects {}", seq.name, seq.joints, model.config.joints)));
    }
    if seq.num_frames() < k {
        return Err(Error::InsufficientHistory {
            needed: k,
            available: seq.num_frames(),
        });
    }
    let (normed, stats) = match model.norm.get(&seq.name) {
        Some(s) => (normalize_with(seq, s)?, *s),
        None => normalize_action(seq)?,
    };
    let n = normed.num_frames();
    let window: Vec<Vec<f64>> = (n - k..n).map(|i| normed.flat_frame(i)).collect();
    let rows: Vec<Vec<f64>> = model
        .predict_long(&window, horizon)?
        .into_iter()
        .map(|mut f| {
            stats.invert_flat(&mut f);
            f
        })
        .collect();
    MotionSequence::from_flat(format!("{}.pred", seq.name), seq.fps, seq.joints, &rows)
}
