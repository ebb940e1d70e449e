//! Experiment configuration: `key = value` lines with dotted section keys.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown or repeated
//! keys are errors. [`ExperimentConfig::to_config_string`] writes every key,
//! so a written config replays the exact run.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{NoveltyParams, OverlapParams};
use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "DISTCONF_OUT";
const DEFAULT_OUT_DIR: &str = "distconf-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    /// Overlapping Gaussian classes.
    Overlap,
    /// Known classes plus held-out novel clusters.
    Novelty,
    /// User-supplied CSV files.
    Csv,
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overlap" => Ok(DataSource::Overlap),
            "novelty" => Ok(DataSource::Novelty),
            "csv" => Ok(DataSource::Csv),
            other => Err(Error::config(
                "data.source",
                format!("unknown source `{other}` (overlap|novelty|csv)"),
            )),
        }
    }
}

impl std::fmt::Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataSource::Overlap => "overlap",
            DataSource::Novelty => "novelty",
            DataSource::Csv => "csv",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Seed of the synthetic generators, independent of the model seed so
    /// that models with different seeds can share one dataset.
    pub seed: u64,
    pub source: DataSource,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub overlap: f64,
    pub separation: f64,
    pub novel_classes: usize,
    pub novel_scale: f64,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub novel_csv: Option<PathBuf>,
    pub gcn: bool,
    /// `None` disables whitening.
    pub zca_regularizer: Option<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let o = OverlapParams::default();
        let n = NoveltyParams::default();
        DataConfig {
            seed: 0,
            source: DataSource::Overlap,
            classes: o.classes,
            train_per_class: 100,
            test_per_class: 200,
            dim: o.dim,
            overlap: 0.6,
            separation: o.separation,
            novel_classes: n.novel_classes,
            novel_scale: n.novel_scale,
            train_csv: None,
            test_csv: None,
            novel_csv: None,
            gcn: false,
            zca_regularizer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Empty means `$DISTCONF_OUT`, falling back to `distconf-out`.
    pub out_dir: String,
    pub data: DataConfig,
    pub hidden: Vec<usize>,
    pub dropout: Vec<f64>,
    pub train: TrainConfig,
    /// `None` uses the smallest class count.
    pub index_k: Option<usize>,
    pub index_condensed: bool,
    /// MC-dropout passes for evaluation; 0 disables the column.
    pub mc_passes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: String::new(),
            data: DataConfig::default(),
            hidden: vec![64, 32],
            dropout: vec![0.2, 0.2],
            train: TrainConfig::default(),
            index_k: None,
            index_condensed: false,
            mc_passes: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "out_dir",
        "data.seed",
        "data.source",
        "data.classes",
        "data.train_per_class",
        "data.test_per_class",
        "data.dim",
        "data.overlap",
        "data.separation",
        "data.novel_classes",
        "data.novel_scale",
        "data.train_csv",
        "data.test_csv",
        "data.novel_csv",
        "data.gcn",
        "data.zca",
        "model.hidden",
        "model.dropout",
        "train.regime",
        "train.alpha",
        "train.margin",
        "train.epsilon",
        "train.same_class_pair_fraction",
        "train.clean_weight",
        "train.batch_size",
        "train.epochs",
        "train.lr_schedule",
        "train.momentum",
        "index.k",
        "index.condensed",
        "eval.mc_passes",
    ];

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let d = &mut self.data;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "out_dir" => self.out_dir = v.to_string(),
            "data.seed" => d.seed = parse(key, v)?,
            "data.source" => d.source = v.parse()?,
            "data.classes" => d.classes = parse(key, v)?,
            "data.train_per_class" => d.train_per_class = parse(key, v)?,
            "data.test_per_class" => d.test_per_class = parse(key, v)?,
            "data.dim" => d.dim = parse(key, v)?,
            "data.overlap" => d.overlap = parse(key, v)?,
            "data.separation" => d.separation = parse(key, v)?,
            "data.novel_classes" => d.novel_classes = parse(key, v)?,
            "data.novel_scale" => d.novel_scale = parse(key, v)?,
            "data.train_csv" => d.train_csv = opt_path(v),
            "data.test_csv" => d.test_csv = opt_path(v),
            "data.novel_csv" => d.novel_csv = opt_path(v),
            "data.gcn" => d.gcn = parse(key, v)?,
            "data.zca" => {
                d.zca_regularizer = match v {
                    "off" | "false" => None,
                    other => Some(parse(key, other)?),
                }
            }
            "model.hidden" => self.hidden = parse_list(key, v)?,
            "model.dropout" => self.dropout = parse_list(key, v)?,
            "train.regime" => t.regime = v.parse()?,
            "train.alpha" => t.alpha = parse(key, v)?,
            "train.margin" => t.margin = parse(key, v)?,
            "train.epsilon" => t.epsilon = parse(key, v)?,
            "train.same_class_pair_fraction" => t.same_class_pair_fraction = parse(key, v)?,
            "train.clean_weight" => t.clean_weight = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.lr_schedule" => t.lr_schedule = parse_schedule(key, v)?,
            "train.momentum" => t.momentum = parse(key, v)?,
            "index.k" => {
                self.index_k = match v {
                    "auto" => None,
                    other => Some(parse(key, other)?),
                }
            }
            "index.condensed" => self.index_condensed = parse(key, v)?,
            "eval.mc_passes" => self.mc_passes = parse(key, v)?,
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Current value of `key` in the same syntax [`set`](Self::set) accepts.
    pub fn get(&self, key: &str) -> Result<String> {
        let d = &self.data;
        let t = &self.train;
        Ok(match key {
            "seed" => self.seed.to_string(),
            "out_dir" => self.out_dir.clone(),
            "data.seed" => d.seed.to_string(),
            "data.source" => d.source.to_string(),
            "data.classes" => d.classes.to_string(),
            "data.train_per_class" => d.train_per_class.to_string(),
            "data.test_per_class" => d.test_per_class.to_string(),
            "data.dim" => d.dim.to_string(),
            "data.overlap" => d.overlap.to_string(),
            "data.separation" => d.separation.to_string(),
            "data.novel_classes" => d.novel_classes.to_string(),
            "data.novel_scale" => d.novel_scale.to_string(),
            "data.train_csv" => path_str(&d.train_csv),
            "data.test_csv" => path_str(&d.test_csv),
            "data.novel_csv" => path_str(&d.novel_csv),
            "data.gcn" => d.gcn.to_string(),
            "data.zca" => d.zca_regularizer.map_or("off".into(), |r| r.to_string()),
            "model.hidden" => join(&self.hidden),
            "model.dropout" => join(&self.dropout),
            "train.regime" => t.regime.to_string(),
            "train.alpha" => t.alpha.to_string(),
            "train.margin" => t.margin.to_string(),
            "train.epsilon" => t.epsilon.to_string(),
            "train.same_class_pair_fraction" => t.same_class_pair_fraction.to_string(),
            "train.clean_weight" => t.clean_weight.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.lr_schedule" => t
                .lr_schedule
                .iter()
                .map(|(s, r)| format!("{s}:{r}"))
                .collect::<Vec<_>>()
                .join(","),
            "train.momentum" => t.momentum.to_string(),
            "index.k" => self.index_k.map_or("auto".into(), |k| k.to_string()),
            "index.condensed" => self.index_condensed.to_string(),
            "eval.mc_passes" => self.mc_passes.to_string(),
            other => return Err(Error::config(other, "unknown key")),
        })
    }

    /// Parse a config file body over the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", n + 1), "expected `key = value`")
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "repeated key"));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Every key, one per line, in [`KEYS`](Self::KEYS) order.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            s.push_str(key);
            s.push_str(" = ");
            s.push_str(&self.get(key).expect("known key"));
            s.push('\n');
        }
        s
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        Self::KEYS
            .iter()
            .map(|k| (k.to_string(), self.get(k).expect("known key")))
            .collect()
    }

    /// Training settings with the experiment seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// `[input, hidden..., classes]`.
    pub fn layer_sizes(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden);
        sizes.push(classes);
        sizes
    }

    /// Output directory: `out_dir` if set, else `$DISTCONF_OUT`, else `distconf-out`.
    pub fn resolved_out_dir(&self) -> PathBuf {
        if !self.out_dir.is_empty() {
            return PathBuf::from(&self.out_dir);
        }
        std::env::var_os(OUT_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from)
    }

    /// Cross-key checks; each error names a key.
    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config(
                "model.hidden",
                "need at least one hidden layer, all widths > 0",
            ));
        }
        if self.dropout.len() != self.hidden.len() {
            return Err(Error::config(
                "model.dropout",
                format!(
                    "{} rates for {} hidden layers",
                    self.dropout.len(),
                    self.hidden.len()
                ),
            ));
        }
        if self.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::config("model.dropout", "rates must be in [0, 1)"));
        }
        if self.index_k == Some(0) {
            return Err(Error::config("index.k", "must be >= 1 or `auto`"));
        }
        if let Some(r) = self.data.zca_regularizer {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::config("data.zca", "regularizer must be >= 0"));
            }
        }
        let d = &self.data;
        if d.source != DataSource::Csv {
            if d.classes == 0 || d.train_per_class == 0 || d.test_per_class == 0 {
                return Err(Error::config(
                    "data.classes",
                    "classes and per-class counts must be > 0",
                ));
            }
            if !(0.0..=1.0).contains(&d.overlap) {
                return Err(Error::config("data.overlap", "must be in [0, 1]"));
            }
        }
        if d.source == DataSource::Csv && (d.train_csv.is_none() || d.test_csv.is_none()) {
            return Err(Error::config(
                "data.train_csv",
                "csv source needs data.train_csv and data.test_csv",
            ));
        }
        Ok(())
    }
}

fn parse_schedule(key: &str, v: &str) -> Result<Vec<(usize, f64)>> {
    v.split(',')
        .map(|entry| {
            let (s, r) = entry
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::config(key, format!("entry `{entry}` is not `step:rate`")))?;
            Ok((parse(key, s.trim())?, parse(key, r.trim())?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Regime;

    #[test]
    fn round_trip_through_text() {
        let mut c = ExperimentConfig::default();
        c.set("train.lr_schedule", "0:0.05, 300:0.005").unwrap();
        c.set("index.k", "7").unwrap();
        c.set("data.zca", "1e-5").unwrap();
        c.set("data.train_csv", "a/b.csv").unwrap();
        let text = c.to_config_string();
        assert_eq!(ExperimentConfig::parse_str(&text).unwrap(), c);
        assert_eq!(c.train.lr_schedule, vec![(0, 0.05), (300, 0.005)]);
        assert_eq!(text.lines().count(), ExperimentConfig::KEYS.len());
    }

    #[test]
    fn comments_and_defaults() {
        let c =
            ExperimentConfig::parse_str("# exp\n\nseed = 4\n  train.regime=distance  \n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.train.regime, Regime::Distance);
        assert_eq!(c.train.alpha, 0.2);
    }

    #[test]
    fn errors_name_the_key() {
        let key_of = |text: &str| match ExperimentConfig::parse_str(text).unwrap_err() {
            Error::Config { key, .. } => key,
            e => panic!("{e}"),
        };
        assert_eq!(key_of("train.alfa = 1"), "train.alfa");
        assert_eq!(key_of("seed = 1\nseed = 2"), "seed");
        assert_eq!(key_of("train.epochs = many"), "train.epochs");
        assert_eq!(key_of("just text"), "line 1");
        assert_eq!(
            key_of("train.regime = distance+adversarial"),
            "train.regime"
        );

        let c = ExperimentConfig::parse_str("train.regime = distance\ntrain.alpha = 0").unwrap();
        match c.validate().unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "train.alpha"),
            e => panic!("{e}"),
        }
        let c = ExperimentConfig::parse_str("model.dropout = 0.2").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn explicit_out_dir_wins() {
        let c = ExperimentConfig::parse_str("out_dir = runs/x").unwrap();
        assert_eq!(c.resolved_out_dir(), PathBuf::from("runs/x"));
    }
}
