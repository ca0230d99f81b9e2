//! `flfl`: train, sweep, inspect and generate data for the federated
//! latent-factor recovery model.

mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use flfl_core::data_io::{self, make_split, normalize};
use flfl_core::evaluation::{original_scale_rmse, run_sweep_on, write_report, SweepConfig};
use flfl_core::spatial::{build_region_graphs, partition_regions, PartitionMode};
use flfl_core::synth::{exact_low_rank, smooth_field, SmoothFieldConfig};
use flfl_core::{orchestrator, CoordinateSet, SensorCoordinates};
use ndarray::Array2;
use serde::Serialize;

use crate::settings::{Settings, SweepSettings};

#[derive(Parser)]
#[command(name = "flfl", version, about = "Federated recovery of missing sensor readings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and print a JSON summary
    Train {
        #[command(flatten)]
        settings: Settings,
        /// Write the learned factors as JSON
        #[arg(long)]
        out_factors: Option<PathBuf>,
    },
    /// Run the sampling-rate sweep and write a CSV report
    Sweep {
        #[command(flatten)]
        settings: Settings,
        #[command(flatten)]
        sweep: SweepSettings,
    },
    /// Print the region graphs as JSON
    Graph {
        #[arg(long)]
        coords: PathBuf,
        #[arg(long, default_value_t = 1)]
        regions: usize,
        #[arg(long, default_value_t = 3)]
        topk: usize,
    },
    /// Generate a seeded synthetic dataset
    Synth {
        #[arg(long, value_enum, default_value_t = SynthKind::Smooth)]
        kind: SynthKind,
        #[arg(long)]
        out_matrix: PathBuf,
        #[arg(long)]
        out_coords: PathBuf,
        #[arg(long)]
        sensors: Option<usize>,
        #[arg(long)]
        slots: Option<usize>,
        #[arg(long)]
        rank: Option<usize>,
        /// Noise level relative to the signal's standard deviation
        #[arg(long)]
        noise: Option<f64>,
        /// Fraction of cells left missing
        #[arg(long)]
        missing: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SynthKind {
    /// Spatially smooth field with temporal structure and noise
    Smooth,
    /// Exact low-rank product of uniform (0, 1] factors on a grid layout
    LowRank,
}

#[derive(Serialize)]
struct TrainSummary {
    rounds: usize,
    train_rmse: Option<f64>,
    test_rmse: Option<f64>,
    train_entries: usize,
    test_entries: usize,
}

#[derive(Serialize)]
struct Factors {
    p: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    offset: f64,
    scale: f64,
}

#[derive(Serialize)]
struct GraphDump {
    region: usize,
    members: Vec<usize>,
    w: Vec<Vec<f64>>,
    lap: Vec<Vec<f64>>,
    lap_sq: Vec<Vec<f64>>,
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn train(mut settings: Settings, out_factors: Option<PathBuf>) -> Result<()> {
    settings.merge_config(None)?;
    let h = settings.hyperparams();
    let (matrix, coords) = load_inputs(&settings)?;
    let store = make_split(
        &matrix,
        settings.rate.unwrap_or(0.5),
        settings.test_mode.unwrap_or_default(),
        h.seed,
    )?;
    let test: Vec<_> = store.test().copied().collect();
    let (scaled, denorm) = normalize(&store, settings.normalize.unwrap_or_default())?;
    let model = orchestrator::train(&scaled, &coords, &h)?;
    let summary = TrainSummary {
        rounds: model.history.len(),
        train_rmse: model.history.last().map(|r| r.train_rmse * denorm.scale),
        test_rmse: if test.is_empty() { None } else { Some(original_scale_rmse(&model, &test, &denorm)?) },
        train_entries: store.train_count(),
        test_entries: test.len(),
    };
    if let Some(path) = out_factors {
        let factors = Factors { p: rows(&model.p), q: rows(&model.q), offset: denorm.offset, scale: denorm.scale };
        write_json(&path, &factors)?;
    }
    emit(&serde_json::to_string_pretty(&summary)?)
}

fn sweep(mut settings: Settings, mut sweep: SweepSettings) -> Result<()> {
    settings.merge_config(Some(&mut sweep))?;
    let d = SweepConfig::default();
    let cfg = SweepConfig {
        rates: sweep.rates.unwrap_or(d.rates),
        repeats: sweep.repeats.unwrap_or(d.repeats),
        hyper: settings.hyperparams(),
        test_mode: settings.test_mode.unwrap_or(d.test_mode),
        normalization: settings.normalize.unwrap_or(d.normalization),
        models: sweep.models.unwrap_or(d.models),
        record_timing: !sweep.no_timing,
    };
    let out = sweep.report.unwrap_or_else(|| PathBuf::from("report.csv"));
    let (matrix, coords) = load_inputs(&settings)?;
    let report = run_sweep_on(&matrix, &coords, &cfg)?;
    write_report(&out, &report.rows).with_context(|| format!("writing {}", out.display()))?;
    for f in &report.failures {
        let model = f.model.map(|m| m.to_string()).unwrap_or_default();
        eprintln!("warning: rate {} repeat {} {model}: {}", f.rate, f.repeat, f.message);
    }
    let mut lines: Vec<String> = report
        .rows
        .iter()
        .map(|r| {
            let model = r.model.to_string();
            format!("{:>5} {model:<12} rmse {:.6} ± {:.6}  rounds {:.1}", r.rate, r.mean_rmse, r.std_rmse, r.rounds)
        })
        .collect();
    lines.push(format!("report written to {}", out.display()));
    emit(&lines.join("\n"))
}

fn graph(coords: &Path, regions: usize, topk: usize) -> Result<()> {
    let set = data_io::load_coords(coords).with_context(|| format!("loading {}", coords.display()))?;
    let mode = match &set.provided {
        Some(map) => PartitionMode::Provided(map),
        None => PartitionMode::Grid,
    };
    let assignment = partition_regions(&set.coords, regions, mode)?;
    let graphs = build_region_graphs(&set.coords, &assignment, topk)?;
    let dump: Vec<GraphDump> = graphs
        .iter()
        .map(|g| GraphDump { region: g.h, members: g.members.clone(), w: rows(&g.w), lap: rows(&g.lap), lap_sq: rows(&g.lap_sq) })
        .collect();
    emit(&serde_json::to_string_pretty(&dump)?)
}

fn grid_layout(m: usize) -> CoordinateSet {
    let side = (m as f64).sqrt().ceil() as usize;
    CoordinateSet {
        coords: (0..m).map(|id| SensorCoordinates { id, x: (id % side) as f64, y: (id / side) as f64 }).collect(),
        provided: None,
    }
}

/// Prints to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn load_inputs(settings: &Settings) -> Result<(data_io::RawMatrix, CoordinateSet)> {
    let mpath = settings.matrix_path()?;
    let cpath = settings.coords_path()?;
    let matrix = data_io::load_matrix(mpath).with_context(|| format!("loading {}", mpath.display()))?;
    let coords = data_io::load_coords(cpath).with_context(|| format!("loading {}", cpath.display()))?;
    Ok((matrix, coords))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train { settings, out_factors } => train(settings, out_factors),
        Command::Sweep { settings, sweep: s } => sweep(settings, s),
        Command::Graph { coords, regions, topk } => graph(&coords, regions, topk),
        Command::Synth { kind, out_matrix, out_coords, sensors, slots, rank, noise, missing, seed } => {
            let d = SmoothFieldConfig::default();
            let (matrix, coords) = match kind {
                SynthKind::Smooth => smooth_field(&SmoothFieldConfig {
                    sensors: sensors.unwrap_or(d.sensors),
                    slots: slots.unwrap_or(d.slots),
                    rank: rank.unwrap_or(d.rank),
                    noise: noise.unwrap_or(d.noise),
                    missing: missing.unwrap_or(d.missing),
                    seed: seed.unwrap_or(d.seed),
                    ..d
                }),
                SynthKind::LowRank => {
                    let m = sensors.unwrap_or(30);
                    let matrix = exact_low_rank(m, slots.unwrap_or(40), rank.unwrap_or(3), seed.unwrap_or(0));
                    (matrix, grid_layout(m))
                }
            };
            data_io::write_matrix(&out_matrix, &matrix)
                .and_then(|_| data_io::write_coords(&out_coords, &coords))
                .map_err(Into::into)
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let diverged = e.downcast_ref::<flfl_core::Error>().is_some_and(|e| e.is_divergence());
            ExitCode::from(if diverged { 3 } else { 2 })
        }
    }
}
