//! Run settings merged from a flat `key = value` file and command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use flfl_core::data_io::{Normalization, TestMode};
use flfl_core::evaluation::ModelKind;
use flfl_core::{AggregationPolicy, Hyperparams};

#[derive(Debug, Clone, Default, Args)]
pub struct Settings {
    /// Sensor-by-time CSV; empty cells or `nan` are missing
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Coordinates CSV with header `sensor_id,x,y[,region]`
    #[arg(long)]
    pub coords: Option<PathBuf>,
    /// Latent dimension k
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Laplacian regularization weight
    #[arg(long)]
    pub z: Option<f64>,
    /// Learning rate
    #[arg(long)]
    pub eta: Option<f64>,
    /// Nearest neighbours per sensor
    #[arg(long)]
    pub topk: Option<usize>,
    #[arg(long)]
    pub regions: Option<usize>,
    /// Sampling rate for the known set
    #[arg(long)]
    pub rate: Option<f64>,
    /// `complement` or `holdout:<fraction>`
    #[arg(long, value_parser = parse_test_mode)]
    pub test_mode: Option<TestMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Relative train-RMSE change treated as converged
    #[arg(long)]
    pub tol: Option<f64>,
    /// `none`, `minmax` or `zscore`
    #[arg(long, value_parser = parse_normalization)]
    pub normalize: Option<Normalization>,
    /// `sum`, `mean` or `sequential`
    #[arg(long, value_parser = parse_aggregation)]
    pub aggregation: Option<AggregationPolicy>,
    /// Flat `key = value` file; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepSettings {
    /// Comma-separated sampling rates
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Output CSV
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Comma-separated models: `flfl-ssr`, `centralized`
    #[arg(long, value_delimiter = ',', value_parser = parse_model)]
    pub models: Option<Vec<ModelKind>>,
    /// Write zero in the seconds column so reports are byte-reproducible
    #[arg(long)]
    pub no_timing: bool,
}

pub fn parse_test_mode(s: &str) -> Result<TestMode, String> {
    match s.split_once(':') {
        None if s == "complement" => Ok(TestMode::Complement),
        Some(("holdout", f)) => {
            f.parse().map(|fraction| TestMode::Holdout { fraction }).map_err(|_| format!("bad holdout fraction {f:?}"))
        }
        _ => Err(format!("expected `complement` or `holdout:<fraction>`, got {s:?}")),
    }
}

pub fn parse_normalization(s: &str) -> Result<Normalization, String> {
    match s {
        "none" => Ok(Normalization::None),
        "minmax" => Ok(Normalization::MinMax),
        "zscore" => Ok(Normalization::ZScore),
        _ => Err(format!("expected none, minmax or zscore, got {s:?}")),
    }
}

pub fn parse_aggregation(s: &str) -> Result<AggregationPolicy, String> {
    match s {
        "sum" => Ok(AggregationPolicy::Sum),
        "mean" => Ok(AggregationPolicy::Mean),
        "sequential" => Ok(AggregationPolicy::Sequential),
        _ => Err(format!("expected sum, mean or sequential, got {s:?}")),
    }
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    ModelKind::from_str(s).map_err(|e| e.to_string())
}

fn parse_list<T>(v: &str, item: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    v.split(',').map(|s| item(s.trim())).collect()
}

fn from_str<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| e.to_string())
}

fn fill<T>(slot: &mut Option<T>, v: Result<T, String>) -> Result<(), String> {
    if slot.is_none() {
        *slot = Some(v?);
    }
    Ok(())
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected a boolean, got {v:?}")),
    }
}

/// Reads `key = value` lines; `#` starts a comment. Keys are the flag names.
pub fn read_config(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), n + 1))?;
        pairs.push((n + 1, k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(pairs)
}

impl Settings {
    /// Fills every unset field from the config file, if one was given.
    /// `sweep` receives the sweep-only keys; without it they are rejected.
    pub fn merge_config(&mut self, mut sweep: Option<&mut SweepSettings>) -> Result<()> {
        let Some(path) = self.config.clone() else { return Ok(()) };
        for (line, key, v) in read_config(&path)? {
            let v = v.as_str();
            let outcome = match (key.as_str(), sweep.as_deref_mut()) {
                ("matrix", _) => fill(&mut self.matrix, Ok(PathBuf::from(v))),
                ("coords", _) => fill(&mut self.coords, Ok(PathBuf::from(v))),
                ("rank", _) => fill(&mut self.rank, from_str(v)),
                ("lambda", _) => fill(&mut self.lambda, from_str(v)),
                ("z", _) => fill(&mut self.z, from_str(v)),
                ("eta", _) => fill(&mut self.eta, from_str(v)),
                ("topk", _) => fill(&mut self.topk, from_str(v)),
                ("regions", _) => fill(&mut self.regions, from_str(v)),
                ("rate", _) => fill(&mut self.rate, from_str(v)),
                ("test-mode", _) => fill(&mut self.test_mode, parse_test_mode(v)),
                ("seed", _) => fill(&mut self.seed, from_str(v)),
                ("max-rounds", _) => fill(&mut self.max_rounds, from_str(v)),
                ("tol", _) => fill(&mut self.tol, from_str(v)),
                ("normalize", _) => fill(&mut self.normalize, parse_normalization(v)),
                ("aggregation", _) => fill(&mut self.aggregation, parse_aggregation(v)),
                ("rates", Some(s)) => fill(&mut s.rates, parse_list(v, from_str)),
                ("repeats", Some(s)) => fill(&mut s.repeats, from_str(v)),
                ("report", Some(s)) => fill(&mut s.report, Ok(PathBuf::from(v))),
                ("models", Some(s)) => fill(&mut s.models, parse_list(v, parse_model)),
                ("no-timing", Some(s)) => parse_bool(v).map(|b| s.no_timing |= b),
                _ => Err("unknown key".to_string()),
            };
            outcome.map_err(|e| anyhow!("{}:{line}: {key}: {e}", path.display()))?;
        }
        Ok(())
    }

    pub fn hyperparams(&self) -> Hyperparams {
        let d = Hyperparams::default();
        Hyperparams {
            k: self.rank.unwrap_or(d.k),
            lambda: self.lambda.unwrap_or(d.lambda),
            z: self.z.unwrap_or(d.z),
            eta: self.eta.unwrap_or(d.eta),
            top_k: self.topk.unwrap_or(d.top_k),
            regions: self.regions.unwrap_or(d.regions),
            max_rounds: self.max_rounds.unwrap_or(d.max_rounds),
            seed: self.seed.unwrap_or(d.seed),
            convergence_tol: self.tol.unwrap_or(d.convergence_tol),
            aggregation: self.aggregation.unwrap_or(d.aggregation),
            ..d
        }
    }

    pub fn matrix_path(&self) -> Result<&Path> {
        match &self.matrix {
            Some(p) => Ok(p),
            None => bail!("--matrix is required"),
        }
    }

    pub fn coords_path(&self) -> Result<&Path> {
        match &self.coords {
            Some(p) => Ok(p),
            None => bail!("--coords is required"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_test_modes() {
        assert_eq!(parse_test_mode("complement"), Ok(TestMode::Complement));
        assert_eq!(parse_test_mode("holdout:0.25"), Ok(TestMode::Holdout { fraction: 0.25 }));
        assert!(parse_test_mode("holdout").is_err());
        assert!(parse_test_mode("holdout:x").is_err());
    }

    #[test]
    fn config_fills_only_unset_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        std::fs::write(&path, "rank = 7\nz=0.5 # trailing\nmax_rounds = 9\nrates = 0.2, 0.4\nno-timing = yes\n").unwrap();
        let mut s = Settings { rank: Some(2), config: Some(path), ..Default::default() };
        let mut sweep = SweepSettings::default();
        s.merge_config(Some(&mut sweep)).unwrap();
        let h = s.hyperparams();
        assert_eq!((h.k, h.z, h.max_rounds), (2, 0.5, 9));
        assert_eq!(sweep.rates, Some(vec![0.2, 0.4]));
        assert!(sweep.no_timing);
    }

    #[test]
    fn sweep_keys_are_rejected_for_train() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        std::fs::write(&path, "repeats = 3\n").unwrap();
        let mut s = Settings { config: Some(path), ..Default::default() };
        assert!(s.merge_config(None).is_err());
    }
}
