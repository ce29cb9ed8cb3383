//! Run configuration: a line-oriented key=value file with `#` comments,
//! merged with command-line overrides, validated against a fixed schema
//! (unknown keys are errors), and echoed to the output directory.

use crate::data::{
    load_series, series_from_csv, NormMode, SeriesDataset, TimeAnchor,
};
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::{Error, Result};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub data_path: Option<PathBuf>,
    /// CSV import metadata (binary datasets carry their own).
    pub granularity_min: usize,
    pub tod0: usize,
    pub dow0: usize,
    pub norm_mode: NormMode,
    pub time_anchor: TimeAnchor,
    /// Node count; None means "take it from the dataset".
    pub nodes: Option<usize>,
    pub input_steps: usize,
    pub horizon: usize,
    pub dim: usize,
    pub experts: usize,
    pub agents: usize,
    pub layers: usize,
    pub ha_router: bool,
    pub train: TrainConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_path: None,
            granularity_min: 15,
            tod0: 0,
            dow0: 0,
            norm_mode: NormMode::PerNode,
            time_anchor: TimeAnchor::LastInput,
            nodes: None,
            input_steps: 96,
            horizon: 48,
            dim: 64,
            experts: 8,
            agents: 32,
            layers: 3,
            ha_router: true,
            train: TrainConfig::default(),
            seed: 42,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::config(format!("invalid boolean '{other}' for key '{key}'"))),
    }
}

impl RunConfig {
    /// Builds the effective configuration: defaults, then the file, then
    /// overrides (later assignments win).
    pub fn from_sources(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut rc = RunConfig::default();
        if let Some(path) = file {
            for (key, value) in parse_kv_file(path)? {
                rc.set(&key, &value)?;
            }
        }
        for (key, value) in overrides {
            rc.set(key, value)?;
        }
        Ok(rc)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data.path" => self.data_path = Some(PathBuf::from(value.trim())),
            "data.granularity_min" => self.granularity_min = parse_num(key, value)?,
            "data.tod0" => self.tod0 = parse_num(key, value)?,
            "data.dow0" => self.dow0 = parse_num(key, value)?,
            "data.normalization" => self.norm_mode = value.trim().parse()?,
            "data.time_anchor" => self.time_anchor = value.trim().parse()?,
            "model.nodes" => self.nodes = Some(parse_num(key, value)?),
            "model.input_steps" => self.input_steps = parse_num(key, value)?,
            "model.horizon" => self.horizon = parse_num(key, value)?,
            "model.dim" => self.dim = parse_num(key, value)?,
            "model.experts" => self.experts = parse_num(key, value)?,
            "model.agents" => self.agents = parse_num(key, value)?,
            "model.layers" => self.layers = parse_num(key, value)?,
            "model.ha_router" => self.ha_router = parse_bool(key, value)?,
            "train.lr" => self.train.lr0 = parse_num(key, value)?,
            "train.decay_factor" => self.train.decay_factor = parse_num(key, value)?,
            "train.decay_every" => self.train.decay_every = parse_num(key, value)?,
            "train.max_epochs" => self.train.max_epochs = parse_num(key, value)?,
            "train.batch" => self.train.batch = parse_num(key, value)?,
            "train.huber_delta" => self.train.huber_delta = parse_num(key, value)?,
            "train.patience" => self.train.patience = parse_num(key, value)?,
            "train.clip_norm" => {
                let v: f64 = parse_num(key, value)?;
                self.train.clip_norm = (v > 0.0).then_some(v);
            }
            "train.loss_on_raw" => self.train.loss_on_raw = parse_bool(key, value)?,
            "seed" => {
                self.seed = parse_num(key, value)?;
                self.train.seed = self.seed;
            }
            "out" => self.out_dir = PathBuf::from(value.trim()),
            other => return Err(Error::config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// The full effective configuration as key=value lines.
    pub fn echo(&self) -> String {
        let mut lines = vec![
            format!(
                "data.path={}",
                self.data_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
            ),
            format!("data.granularity_min={}", self.granularity_min),
            format!("data.tod0={}", self.tod0),
            format!("data.dow0={}", self.dow0),
            format!(
                "data.normalization={}",
                match self.norm_mode {
                    NormMode::PerNode => "per_node",
                    NormMode::Global => "global",
                }
            ),
            format!(
                "data.time_anchor={}",
                match self.time_anchor {
                    TimeAnchor::LastInput => "last_input",
                    TimeAnchor::FirstInput => "first_input",
                    TimeAnchor::TargetStart => "target_start",
                }
            ),
            format!("model.nodes={}", self.nodes.map(|n| n.to_string()).unwrap_or_default()),
            format!("model.input_steps={}", self.input_steps),
            format!("model.horizon={}", self.horizon),
            format!("model.dim={}", self.dim),
            format!("model.experts={}", self.experts),
            format!("model.agents={}", self.agents),
            format!("model.layers={}", self.layers),
            format!("model.ha_router={}", self.ha_router),
            format!("train.lr={}", self.train.lr0),
            format!("train.decay_factor={}", self.train.decay_factor),
            format!("train.decay_every={}", self.train.decay_every),
            format!("train.max_epochs={}", self.train.max_epochs),
            format!("train.batch={}", self.train.batch),
            format!("train.huber_delta={}", self.train.huber_delta),
            format!("train.patience={}", self.train.patience),
            format!("train.clip_norm={}", self.train.clip_norm.unwrap_or(0.0)),
            format!("train.loss_on_raw={}", self.train.loss_on_raw),
            format!("seed={}", self.seed),
            format!("out={}", self.out_dir.display()),
        ];
        lines.sort();
        lines.join("\n") + "\n"
    }

    /// Loads the configured dataset, dispatching on the file extension.
    pub fn load_dataset(&self) -> Result<SeriesDataset> {
        let path = self.data_path.as_ref().ok_or_else(|| {
            Error::config("no dataset given: set the 'data.path' key or pass --data")
        })?;
        if path.extension().is_some_and(|e| e == "csv") {
            series_from_csv(path, self.granularity_min, self.tod0, self.dow0)
        } else {
            load_series(path)
        }
    }

    /// Model configuration for a concrete dataset.
    pub fn model_config(&self, ds: &SeriesDataset) -> Result<ModelConfig> {
        if let Some(n) = self.nodes {
            if n != ds.nodes() {
                return Err(Error::config(format!(
                    "model.nodes={n} but the dataset has {} nodes",
                    ds.nodes()
                )));
            }
        }
        let cfg = ModelConfig {
            nodes: ds.nodes(),
            input_steps: self.input_steps,
            horizon: self.horizon,
            dim: self.dim,
            experts: self.experts,
            agents: self.agents,
            layers: self.layers,
            steps_per_day: ds.steps_per_day(),
            days_per_week: 7,
            ha_router: self.ha_router,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_kv_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("{}:{}: expected key=value, got '{line}'", path.display(), lineno + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Parses a `--set KEY=VALUE` argument.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    arg.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got '{arg}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_comments_defaults_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# experiment\nmodel.experts = 4\ntrain.lr=0.01 # tuned\n\nseed=7\n",
        )
        .unwrap();
        let rc = RunConfig::from_sources(
            Some(&path),
            &[("model.experts".into(), "2".into()), ("out".into(), "runs/x".into())],
        )
        .unwrap();
        assert_eq!(rc.experts, 2); // override wins
        assert_eq!(rc.train.lr0, 0.01);
        assert_eq!(rc.seed, 7);
        assert_eq!(rc.train.seed, 7);
        assert_eq!(rc.out_dir, PathBuf::from("runs/x"));
        assert_eq!(rc.dim, 64); // untouched default
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut rc = RunConfig::default();
        let err = rc.set("model.depth", "3").unwrap_err();
        assert!(err.to_string().contains("model.depth"));
        let err = rc.set("train.lr", "fast").unwrap_err();
        assert!(err.to_string().contains("train.lr"));
        assert!(rc.set("model.ha_router", "maybe").is_err());
    }

    #[test]
    fn echo_lists_every_key() {
        let rc = RunConfig::default();
        let echo = rc.echo();
        for key in [
            "data.path=",
            "model.experts=8",
            "train.lr=0.002",
            "seed=42",
            "data.time_anchor=last_input",
        ] {
            assert!(echo.contains(key), "echo missing {key}:\n{echo}");
        }
        // echoed text parses back without error
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("echo.conf");
        std::fs::write(&path, &echo).unwrap();
        let mut pairs = parse_kv_file(&path).unwrap();
        pairs.retain(|(k, v)| !(k == "data.path" && v.is_empty()) && !(k == "model.nodes" && v.is_empty()));
        let mut rc2 = RunConfig::default();
        for (k, v) in pairs {
            rc2.set(&k, &v).unwrap();
        }
        assert_eq!(rc2.experts, rc.experts);
    }

    #[test]
    fn missing_dataset_names_the_key() {
        let rc = RunConfig::default();
        let err = rc.load_dataset().unwrap_err();
        assert!(err.to_string().contains("data.path"), "{err}");
    }
}
