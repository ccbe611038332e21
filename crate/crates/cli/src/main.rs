use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::de::DeserializeOwned;

use gaze2afc::cascade;
use gaze2afc::features::{self, FeatureName, FeatureRow, FeatureTable, Outcome};
use gaze2afc::information::{MiMode, MiRow};
use gaze2afc::ingest::{self, Session};
use gaze2afc::kinematics::{self, SegmentedSession};
use gaze2afc::pipeline::{self, PipelineConfig, PipelineError, PosteriorFile, Stage};
use gaze2afc::report;
use gaze2afc::synth::{self, SynthConfig};

#[derive(Parser, Debug)]
#[command(name = "gaze2afc", version, about = "Gaze analysis for two-alternative forced choice experiments")]
struct Cli {
    /// Pipeline config (TOML); command-line flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct SamplerArgs {
    /// Post-warm-up draws per chain.
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutcomeArg {
    Decision,
    Task,
    Correct,
}

impl From<OutcomeArg> for Outcome {
    fn from(o: OutcomeArg) -> Self {
        match o {
            OutcomeArg::Decision => Outcome::Decision,
            OutcomeArg::Task => Outcome::Task,
            OutcomeArg::Correct => Outcome::Correct,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    PosteriorMean,
    DrawAveraged,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse the three input CSVs into a session.
    Ingest {
        #[arg(long)]
        gaze: PathBuf,
        #[arg(long)]
        keypoints: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// Defaults to the name of the gaze file's directory.
        #[arg(long)]
        participant: Option<String>,
        #[arg(long)]
        p_cutoff: Option<f64>,
        #[arg(long, default_value = "session.json")]
        out: PathBuf,
    },
    /// Post-calibrate and segment a session.
    Segment {
        session: PathBuf,
        /// Saccade threshold in deg/s.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value = "segments.json")]
        out: PathBuf,
    },
    /// Within-segment speed histogram.
    Speedhist {
        session: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value = "hist.csv")]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Per-trial features and outcomes.
    Features {
        segments: PathBuf,
        /// Replaces the trial records stored in the segments file.
        trials: Option<PathBuf>,
        #[arg(long, default_value = "features.csv")]
        out: PathBuf,
    },
    /// Sample the logistic-regression posterior for one outcome.
    Fit {
        features: PathBuf,
        #[arg(long, value_enum, default_value = "decision")]
        outcome: OutcomeArg,
        /// Needed when the table holds several participants.
        #[arg(long)]
        participant: Option<String>,
        /// Comma-separated feature names.
        #[arg(long, value_delimiter = ',')]
        feature_set: Option<Vec<String>>,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long, default_value = "posterior.json")]
        out: PathBuf,
    },
    /// Mutual information from fitted posteriors.
    Mi {
        features: PathBuf,
        /// Posterior files from `fit` (decision and task required, correct optional).
        #[arg(required = true)]
        posteriors: Vec<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, default_value = "mi.csv")]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Leave-one-feature-out evidence log-odds.
    Importance {
        features: PathBuf,
        #[arg(long, value_enum, default_value = "decision")]
        outcome: OutcomeArg,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long, default_value = "importance.csv")]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Posterior probability of the gaze cascade per participant.
    Cascade {
        features: PathBuf,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        effect_above: Option<f64>,
        #[arg(long)]
        absent_below: Option<f64>,
        #[arg(long, default_value = "cascade.csv")]
        out: PathBuf,
    },
    /// Generate a synthetic session with ground truth.
    Synth {
        #[arg(long = "synth-config")]
        synth_config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_trials: Option<usize>,
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
    },
    /// The whole pipeline.
    RunAll {
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer(BufWriter::new(f), value).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_features(path: &Path) -> Result<FeatureTable> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    FeatureTable::read_csv(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn apply_sampler(cfg: &mut PipelineConfig, s: &SamplerArgs) {
    if let Some(v) = s.draws {
        cfg.sampler.draws = v;
    }
    if let Some(v) = s.warmup {
        cfg.sampler.warmup = v;
    }
    if let Some(v) = s.chains {
        cfg.sampler.chains = v;
    }
    if let Some(v) = s.seed {
        cfg.seed = v;
        cfg.sampler.seed = v;
        cfg.evidence.seed = v;
    }
}

/// Tag any error from `f` with the stage name.
fn in_stage<T>(stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| match e.downcast::<PipelineError>() {
        Ok(p) => p.into(),
        Err(e) => anyhow::anyhow!("{stage} stage failed: {}", report(&e)),
    })
}

fn session_to_segments(session: &Session, cfg: &PipelineConfig) -> SegmentedSession {
    let (calibrated, report) = kinematics::post_calibrate(session, &cfg.calibration);
    kinematics::segment_session(&calibrated, report, &cfg.segment)
}

fn participant_rows(table: &FeatureTable, participant: Option<&str>) -> Result<(String, Vec<FeatureRow>)> {
    let mut groups = table.by_participant();
    match participant {
        Some(p) => groups.remove(p).map(|r| (p.to_owned(), r)).with_context(|| format!("participant {p} not in table")),
        None if groups.len() == 1 => Ok(groups.pop_first().expect("one group")),
        None if groups.is_empty() => bail!("feature table is empty"),
        None => bail!("table holds {} participants; pick one with --participant", groups.len()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Ingest { gaze, keypoints, trials, participant, p_cutoff, out } => in_stage(Stage::Ingest, || {
            if let Some(p) = p_cutoff {
                cfg.ingest.p_cutoff = p;
            }
            let pid = participant.unwrap_or_else(|| {
                gaze.parent()
                    .and_then(|d| d.file_name())
                    .map_or("participant".into(), |n| n.to_string_lossy().into_owned())
            });
            let session = Session::load(&pid, &gaze, &keypoints, &trials, &cfg.ingest)?;
            info!("{pid}: {} gaze samples, {} frames, {} trials", session.gaze.len(), session.frames.len(), session.trials.len());
            write_json(&out, &session)
        }),
        Command::Segment { session, threshold, out } => in_stage(Stage::Segment, || {
            if let Some(t) = threshold {
                cfg.segment.threshold_deg_s = t;
            }
            let s: Session = read_json(&session)?;
            let seg = session_to_segments(&s, &cfg);
            info!("{} trials segmented, {} skipped", seg.trials.len(), seg.skipped.len());
            write_json(&out, &seg)
        }),
        Command::Speedhist { session, threshold, out, svg } => in_stage(Stage::Segment, || {
            if let Some(t) = threshold {
                cfg.segment.threshold_deg_s = t;
            }
            let s: Session = read_json(&session)?;
            let seg = session_to_segments(&s, &cfg);
            let hist = kinematics::speed_histogram(&kinematics::session_speeds(&seg), &cfg.histogram);
            write_text(&out, &report::csv_string(&report::hist_rows(&hist))?)?;
            if let Some(path) = svg {
                write_text(&path, &report::histogram_svg(&hist, "Within-segment gaze speed"))?;
            }
            Ok(())
        }),
        Command::Features { segments, trials, out } => in_stage(Stage::Features, || {
            let seg: SegmentedSession = read_json(&segments)?;
            let records = match trials {
                Some(p) => Some(ingest::parse_trials(&p, &seg.participant_id, &cfg.ingest.trial_format)?),
                None => None,
            };
            let (table, excluded) = features::extract_session(&seg, records.as_deref());
            info!("{} rows, {} trials excluded", table.rows.len(), excluded.len());
            let f = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            table.write_csv(BufWriter::new(f))?;
            Ok(())
        }),
        Command::Fit { features, outcome, participant, feature_set, sampler, out } => in_stage(Stage::Fit, || {
            apply_sampler(&mut cfg, &sampler);
            let table = read_features(&features)?;
            let (pid, rows) = participant_rows(&table, participant.as_deref())?;
            let feats: Vec<FeatureName> = match feature_set {
                Some(names) => names.iter().map(|n| n.parse()).collect::<std::result::Result<_, _>>()?,
                None => FeatureName::MI_SET.to_vec(),
            };
            let sampler = gaze2afc::inference::SamplerConfig { seed: cfg.seed, ..cfg.sampler.clone() };
            let post = pipeline::fit_outcome(&pid, &rows, outcome.into(), &feats, &sampler)?;
            let d = &post.samples.diagnostics;
            info!("max rhat {:.4}, min ess {:.0}", d.rhat.iter().fold(0.0f64, |a, &b| a.max(b)), d.ess.iter().fold(f64::INFINITY, |a, &b| a.min(b)));
            write_json(&out, &post)
        }),
        Command::Mi { features, posteriors, mode, out, svg } => in_stage(Stage::Mi, || {
            if let Some(m) = mode {
                cfg.mi_mode = match m {
                    ModeArg::PosteriorMean => MiMode::PosteriorMean,
                    ModeArg::DrawAveraged => MiMode::DrawAveraged,
                };
            }
            let table = read_features(&features)?;
            let by_pid = table.by_participant();
            let mut posts: BTreeMap<String, BTreeMap<Outcome, PosteriorFile>> = BTreeMap::new();
            for p in &posteriors {
                let post: PosteriorFile = read_json(p)?;
                posts.entry(post.participant_id.clone()).or_default().insert(post.outcome, post);
            }
            let mut rows: Vec<MiRow> = Vec::new();
            for (pid, mut set) in posts {
                let feature_rows = by_pid.get(&pid).with_context(|| format!("participant {pid} not in {}", features.display()))?;
                let (Some(d), Some(t)) = (set.remove(&Outcome::Decision), set.remove(&Outcome::Task)) else {
                    bail!("participant {pid}: need decision and task posteriors");
                };
                let c = set.remove(&Outcome::Correct);
                rows.push(pipeline::mi_row(&pid, feature_rows, &d, &t, c.as_ref(), cfg.mi_mode)?);
            }
            write_text(&out, &report::csv_string(&rows)?)?;
            if let Some(path) = svg {
                write_text(&path, &pipeline::mi_svg(&rows))?;
            }
            Ok(())
        }),
        Command::Importance { features, outcome, sampler, out, svg } => in_stage(Stage::Importance, || {
            apply_sampler(&mut cfg, &sampler);
            let table = read_features(&features)?;
            let outcome: Outcome = outcome.into();
            let mut rows = Vec::new();
            for (i, (pid, frows)) in table.by_participant().into_iter().enumerate() {
                let seed = cfg.seed.wrapping_add(1000 * i as u64);
                let s = gaze2afc::inference::SamplerConfig { seed: seed.wrapping_add(10), ..cfg.sampler.clone() };
                let ev = gaze2afc::evidence::EvidenceConfig { seed, ..cfg.evidence.clone() };
                let rep = pipeline::importance_for(&pid, &frows, outcome, &s, &ev)?;
                rows.extend(report::importance_rows(&pid, outcome.as_str(), &rep));
            }
            write_text(&out, &report::csv_string(&rows)?)?;
            if let Some(path) = svg {
                write_text(&path, &pipeline::importance_svg(&rows))?;
            }
            Ok(())
        }),
        Command::Cascade { features, sampler, effect_above, absent_below, out } => in_stage(Stage::Cascade, || {
            apply_sampler(&mut cfg, &sampler);
            if let Some(v) = effect_above {
                cfg.bands.effect_above = v;
            }
            if let Some(v) = absent_below {
                cfg.bands.absent_below = v;
            }
            let table = read_features(&features)?;
            let mut probs = Vec::new();
            for (i, (pid, frows)) in table.by_participant().into_iter().enumerate() {
                let seed = cfg.seed.wrapping_add(1000 * i as u64 + 100);
                let c = cascade::CascadeConfig { sampler: gaze2afc::inference::SamplerConfig { seed, ..cfg.sampler.clone() }, bands: cfg.bands };
                let r = pipeline::cascade_for(&pid, &frows, &c)?;
                probs.push((pid, r.p_cascade));
            }
            write_text(&out, &report::csv_string(&cascade::cascade_report(&probs, &cfg.bands))?)
        }),
        Command::Synth { synth_config, seed, n_trials, out_dir } => in_stage(Stage::Config, || {
            let mut sc = match synth_config {
                Some(p) => SynthConfig::from_toml(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                sc.seed = s;
            }
            if let Some(n) = n_trials {
                sc.n_trials = n;
                sc.n_blocks = sc.n_blocks.min(n);
            }
            let out = synth::gen_session(&sc)?;
            let paths = out.write_dir(&out_dir)?;
            info!("wrote {}", paths.gaze.parent().unwrap_or(&out_dir).display());
            Ok(())
        }),
        Command::RunAll { data_dir, out_dir, threshold, sampler } => {
            if let Some(d) = data_dir {
                cfg.data_dir = Some(d);
            }
            if let Some(o) = out_dir {
                cfg.out_dir = o;
            }
            if let Some(t) = threshold {
                cfg.segment.threshold_deg_s = t;
            }
            apply_sampler(&mut cfg, &sampler);
            let rep = pipeline::run_all(&cfg)?;
            for row in &rep.cascade_rows {
                info!("{}: p(cascade) {} ({})", row.participant, row.p_gaze_cascade, row.classification);
            }
            Ok(())
        }
    }
}

/// Error chain joined by `: `. Most library errors already print their
/// source, so causes already contained in the message above are skipped.
fn report(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    let mut last = out.clone();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !last.contains(&c) {
            out.push_str(": ");
            out.push_str(&c);
        }
        last = c;
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", report(&e));
            ExitCode::FAILURE
        }
    }
}
