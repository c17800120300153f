use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use handfit::ablation::run_ablation;
use handfit::fitting::fit_sequence;
use handfit::hand_model::{HandModel, Handedness};
use handfit::io::{
    format_ablation, format_report, load_annotations, load_ground_truth, load_session, save_annotations, save_ground_truth,
    save_session, IoError, PipelineConfig,
};
use handfit::metrics::evaluate;
use handfit::synth::{generate_session, SynthConfig};

/// Multi-view hand pose annotation.
#[derive(Debug, Parser)]
#[command(name = "handfit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HandArg {
    Left,
    Right,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the hand model to every frame of a session.
    Fit {
        #[arg(long, required_unless_present = "print_config")]
        session: Option<PathBuf>,
        /// Pipeline configuration; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required_unless_present = "print_config")]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        hand: HandArg,
        /// Print the effective configuration as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Generate a synthetic session and its ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        #[arg(long, default_value_t = 2)]
        views: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        joint_noise_px: f64,
        #[arg(long, default_value_t = 0.0)]
        cloud_noise_m: f64,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        #[arg(long, default_value_t = 1500)]
        cloud_points: usize,
        /// Largest per-frame change of each articulation angle, radians.
        #[arg(long, default_value_t = 0.01)]
        motion_scale: f64,
        #[arg(long, value_enum, default_value = "right")]
        hand: HandArg,
    },
    /// Score annotations against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        max_threshold_mm: Option<f64>,
        #[arg(long)]
        max_threshold_ra_mm: Option<f64>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the six-configuration term/view ablation.
    Ablate {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_NO_ANNOTATIONS: u8 = 4;

impl Failure {
    fn usage(error: anyhow::Error) -> Self {
        Self { code: EXIT_USAGE, error }
    }

    fn validation(error: anyhow::Error) -> Self {
        Self { code: EXIT_VALIDATION, error }
    }

    fn runtime(error: anyhow::Error) -> Self {
        Self { code: EXIT_RUNTIME, error }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io { .. } => Self::runtime(e.into()),
            IoError::Layout(_) | IoError::Validation { .. } => Self::validation(e.into()),
        }
    }
}

fn config_error(file: &Path, (field, message): (String, String)) -> Failure {
    Failure::validation(anyhow!("validation error in {}: {field}: {message}", file.display()))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    match path {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn config_label(path: Option<&Path>) -> PathBuf {
    path.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("<defaults>"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Fit { session, config, out, hand, print_config } => {
            let cfg = load_config(config.as_deref())?;
            if print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let (session_dir, out) = (session.expect("required by clap"), out.expect("required by clap"));
            fit(&session_dir, config.as_deref(), &cfg, &out, hand)
        }
        Command::Synth { out, frames, views, seed, joint_noise_px, cloud_noise_m, dropout, cloud_points, motion_scale, hand } => {
            let handedness = match hand {
                HandArg::Left => Handedness::Left,
                HandArg::Right => Handedness::Right,
                HandArg::Both => return Err(Failure::usage(anyhow!("synth generates a single hand: use left or right"))),
            };
            let config = SynthConfig {
                frames,
                views,
                seed,
                joint_noise_px,
                cloud_noise_m,
                dropout_rate: dropout,
                cloud_points,
                motion_scale,
                handedness,
                ..Default::default()
            };
            config.validate().map_err(|e| Failure::usage(e.into()))?;
            let model = HandModel::builtin(handedness);
            let (session, gt) = generate_session(&config, &model).map_err(|e| Failure::runtime(e.into()))?;
            save_session(&out, &session)?;
            save_ground_truth(&out.join("gt.json"), &gt)?;
            Ok(())
        }
        Command::Eval { pred, gt, max_threshold_mm, max_threshold_ra_mm, out } => {
            let mut settings = handfit::metrics::MetricSettings::default();
            for (name, v) in [("--max-threshold-mm", max_threshold_mm), ("--max-threshold-ra-mm", max_threshold_ra_mm)] {
                if v.is_some_and(|t| !(t.is_finite() && t > 0.0)) {
                    return Err(Failure::usage(anyhow!("{name} must be a positive number")));
                }
            }
            settings.max_threshold_mm = max_threshold_mm.unwrap_or(settings.max_threshold_mm);
            settings.max_threshold_ra_mm = max_threshold_ra_mm.unwrap_or(settings.max_threshold_ra_mm);
            let ann = load_annotations(&pred)?;
            let truth = load_ground_truth(&gt)?;
            let predicted = ann.joints(truth.handedness).ok_or_else(|| {
                Failure::validation(anyhow!("{} has no {} hand", pred.display(), truth.handedness))
            })?;
            if predicted.len() != truth.frames.len() {
                return Err(Failure::validation(anyhow!(
                    "{} has {} frames, {} has {}",
                    pred.display(),
                    predicted.len(),
                    gt.display(),
                    truth.frames.len()
                )));
            }
            if predicted.iter().all(Option::is_none) {
                return Err(Failure { code: EXIT_NO_ANNOTATIONS, error: anyhow!("{} has no annotated frames", pred.display()) });
            }
            let gt_joints: Vec<_> = truth.frames.iter().map(|f| f.joints).collect();
            let report = evaluate(&predicted, &gt_joints, &settings).map_err(|e| Failure::validation(e.into()))?;
            let text = format_report(&report, &settings);
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display())).map_err(Failure::runtime)?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Ablate { session, gt, out, config } => {
            let cfg = load_config(config.as_deref())?;
            let label = config_label(config.as_deref());
            let mut s = load_session(&session)?;
            let truth = load_ground_truth(&gt)?;
            s.rig = cfg.apply_view_weights(&s.rig).map_err(|e| config_error(&label, e))?;
            let model = cfg.model(truth.handedness).map_err(|e| config_error(&label, e))?;
            let limits = cfg.limits().map_err(|e| config_error(&label, e))?;
            let rows = run_ablation(&s, &truth, &model, &cfg.weights(), limits.as_ref(), &cfg.optimizer())
                .map_err(|e| Failure::validation(e.into()))?;
            std::fs::write(&out, format_ablation(&rows)).with_context(|| format!("writing {}", out.display())).map_err(Failure::runtime)?;
            Ok(())
        }
    }
}

fn fit(session_dir: &Path, config_path: Option<&Path>, cfg: &PipelineConfig, out: &Path, hand: HandArg) -> Result<(), Failure> {
    let label = config_label(config_path);
    let mut session = load_session(session_dir)?;
    session.rig = cfg.apply_view_weights(&session.rig).map_err(|e| config_error(&label, e))?;
    let limits = cfg.limits().map_err(|e| config_error(&label, e))?;
    let hands: Vec<Handedness> = match hand {
        HandArg::Left => vec![Handedness::Left],
        HandArg::Right => vec![Handedness::Right],
        HandArg::Both => session.hands().into_iter().collect(),
    };
    let models = hands.iter().map(|&h| cfg.model(h).map_err(|e| config_error(&label, e))).collect::<Result<Vec<_>, _>>()?;
    let annotation = fit_sequence(&session, &models, &cfg.weights(), limits.as_ref(), &cfg.optimizer())
        .map_err(|e| Failure::validation(e.into()))?;
    save_annotations(out, &annotation)?;
    if annotation.annotated_count() == 0 {
        return Err(Failure { code: EXIT_NO_ANNOTATIONS, error: anyhow!("no frame could be annotated") });
    }
    Ok(())
}
