//! `stmc` subcommands: simulate, track, evaluate, solve.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use super::{read_calibrations, read_detections, read_track_dir, track_stream, write_dataset, TrackWriter};
use crate::config::{parse_override, Profile, TrackerConfig};
use crate::metrics::{evaluate, SceneReport};
use crate::multicut::{solve_exact, solve_heuristic, WeightedGraph};
use crate::simulator::{generate, ScenarioSpec};

#[derive(Debug, Parser)]
#[command(name = "stmc", version, about = "Online multi-camera multi-target tracking with multicuts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Simulate {
        /// Scenario JSON; defaults are used for missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track a detection stream and write MOT-style results.
    Track {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        profile: Option<Profile>,
        /// `key=value` config override, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Score track directories against ground-truth directories (paired in order).
    Evaluate {
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Ground-plane match radius, meters.
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Solve a multicut instance (`n m` header, then `u v w` lines) and print node labels.
    Solve {
        graph: PathBuf,
        #[arg(long)]
        exact: bool,
    },
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("STMC_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Entry point of the binary. Returns the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            eprintln!("stmc: {}", text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: "));
            return 2;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("stmc: {e:#}");
            1
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { spec, seed, out } => simulate(spec.as_deref(), seed, &out),
        Command::Track { detections, calibration, config, profile, overrides, out, threads } => {
            if let Some(n) = threads {
                if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
                    log::warn!("thread pool already initialized, --threads ignored");
                }
            }
            let overrides = overrides
                .iter()
                .map(|s| parse_override(s))
                .collect::<Result<Vec<_>, _>>()
                .context("--set")?;
            let cfg = TrackerConfig::load(profile, config.as_deref(), &overrides)?;
            track(&detections, &calibration, cfg, &out)
        }
        Command::Evaluate { pred, gt, iou, radius, csv } => {
            let (table, csv_text) = evaluate_dirs(&pred, &gt, iou, radius)?;
            print!("{table}");
            if let Some(path) = csv {
                std::fs::write(&path, csv_text).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(())
        }
        Command::Solve { graph, exact } => {
            let text = std::fs::read_to_string(&graph).with_context(|| format!("reading {}", graph.display()))?;
            let g = WeightedGraph::parse(&text)?;
            let p = if exact { solve_exact(&g)? } else { solve_heuristic(&g) };
            let labels: Vec<String> = p.labels().iter().map(|l| l.to_string()).collect();
            println!("{}", labels.join(" "));
            Ok(())
        }
    }
}

fn simulate(spec_path: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut spec = match spec_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<ScenarioSpec>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ScenarioSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let scenario = generate(&spec)?;
    write_dataset(out, &scenario)?;
    info!("{} detections written to {}", scenario.detections.len(), out.display());
    Ok(())
}

fn track(detections: &Path, calibration: &Path, cfg: TrackerConfig, out: &Path) -> Result<()> {
    let cals = read_calibrations(calibration)?;
    let ids: Vec<String> = cals.iter().map(|c| c.camera_id.clone()).collect();
    let stream = read_detections(detections, &cals)?;
    let mut writer = TrackWriter::create(out, &ids)?;
    let mut frames = 0usize;
    track_stream(stream, &cals, cfg, |r| {
        frames += 1;
        writer.write(&r)
    })?;
    writer.finish()?;
    info!("tracked {frames} frames into {}", out.display());
    Ok(())
}

const COLUMNS: [&str; 13] =
    ["scene", "plane", "idf1", "idp", "idr", "idtp", "idfp", "idfn", "mota", "num_gt", "fn", "fp", "idsw"];

fn report_rows(scene: &str, r: &SceneReport) -> Vec<Vec<String>> {
    [("image", &r.image, &r.image_mota), ("ground", &r.ground, &r.ground_mota)]
        .iter()
        .map(|(plane, m, mo)| {
            vec![
                scene.to_string(),
                plane.to_string(),
                format!("{:.4}", m.idf1),
                format!("{:.4}", m.idp),
                format!("{:.4}", m.idr),
                m.idtp.to_string(),
                m.idfp.to_string(),
                m.idfn.to_string(),
                format!("{:.4}", mo.mota),
                mo.num_gt.to_string(),
                mo.false_negatives.to_string(),
                mo.false_positives.to_string(),
                mo.id_switches.to_string(),
            ]
        })
        .collect()
}

/// Evaluate paired directories; returns (aligned table, CSV).
pub(crate) fn evaluate_dirs(pred: &[PathBuf], gt: &[PathBuf], iou: f64, radius: f64) -> Result<(String, String)> {
    if pred.len() != gt.len() {
        bail!("{} --pred directories but {} --gt directories", pred.len(), gt.len());
    }
    if !(0.0..=1.0).contains(&iou) || !(radius > 0.0) {
        bail!("--iou must be in [0, 1] and --radius positive");
    }
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        let gt_set = read_track_dir(g).with_context(|| format!("reading {}", g.display()))?;
        let pred_set = read_track_dir(p).with_context(|| format!("reading {}", p.display()))?;
        let r = evaluate(&gt_set, &pred_set, iou, radius);
        rows.extend(report_rows(&g.display().to_string(), &r));
        reports.push(r);
    }
    if reports.len() > 1 {
        rows.extend(report_rows("all", &SceneReport::aggregate(&reports)));
    }

    let mut csv = COLUMNS.join(",");
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|i| rows.iter().map(|r| r[i].len()).chain([COLUMNS[i].len()]).max().unwrap_or(0))
        .collect();
    let mut table = String::new();
    for row in std::iter::once(COLUMNS.iter().map(|s| s.to_string()).collect::<Vec<_>>()).chain(rows) {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(table, "{}", cells.join("  ").trim_end());
    }
    Ok((table, csv))
}
