//! Plain-text `key = value` run configuration with strict key checking.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{FplError, Result};
use crate::model::Hyperparams;

const KNOWN_KEYS: &[&str] = &[
    "dataset",
    "mode",
    "sampling_mode",
    "latent_dim",
    "learning_rate",
    "reg_user",
    "reg_pos_item",
    "reg_neg_item",
    "disclosure_prob",
    "triples_per_round",
    "cohort_size",
    "epochs",
    "seed",
    "cutoffs",
    "output",
];

/// Parsed run configuration. Unknown keys are a hard error; values
/// round-trip through the manifest written next to every output.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(FplError::Parse {
                    path: source.into(),
                    line: line_no + 1,
                    message: "expected `key = value`".into(),
                });
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(FplError::Config(format!(
                    "{source}:{}: unknown key {key:?}",
                    line_no + 1
                )));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(FplError::Config(format!(
                    "{source}:{}: duplicate key {key:?}",
                    line_no + 1
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn set(&mut self, key: &str, value: String) {
        assert!(KNOWN_KEYS.contains(&key), "unknown config key {key}");
        self.values.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse_value<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.values.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                FplError::Config(format!("bad value {raw:?} for key {key:?}"))
            }),
        }
    }

    pub fn dataset(&self) -> Result<PathBuf> {
        self.values
            .get("dataset")
            .map(PathBuf::from)
            .ok_or_else(|| FplError::Config("missing required key `dataset`".into()))
    }

    pub fn mode(&self) -> Option<&str> {
        self.get("mode")
    }

    pub fn sampling_mode(&self) -> &str {
        self.get("sampling_mode").unwrap_or("user-wise")
    }

    pub fn epochs(&self) -> Result<usize> {
        self.parse_value("epochs", 10)
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse_value("seed", 42)
    }

    pub fn output(&self) -> Option<PathBuf> {
        self.get("output").map(PathBuf::from)
    }

    pub fn cutoffs(&self) -> Result<Vec<usize>> {
        match self.values.get("cutoffs") {
            None => Ok(vec![10]),
            Some(raw) => {
                let cutoffs: std::result::Result<Vec<usize>, _> =
                    raw.split(',').map(|s| s.trim().parse()).collect();
                let cutoffs = cutoffs.map_err(|_| {
                    FplError::Config(format!("bad cutoffs list {raw:?}"))
                })?;
                if cutoffs.is_empty() || cutoffs.contains(&0) {
                    return Err(FplError::Config("cutoffs must be positive".into()));
                }
                Ok(cutoffs)
            }
        }
    }

    /// Hyperparameters with alpha-derived regularization defaults;
    /// any explicitly set key overrides.
    pub fn hyperparams(&self) -> Result<Hyperparams> {
        let learning_rate: f64 = self.parse_value("learning_rate", 0.05)?;
        let latent_dim: usize = self.parse_value("latent_dim", 10)?;
        let mut h = Hyperparams::with_defaults(latent_dim, learning_rate);
        h.reg_user = self.parse_value("reg_user", h.reg_user)?;
        h.reg_pos_item = self.parse_value("reg_pos_item", h.reg_pos_item)?;
        h.reg_neg_item = self.parse_value("reg_neg_item", h.reg_neg_item)?;
        h.disclosure_prob = self.parse_value("disclosure_prob", 1.0)?;
        h.triples_per_round = self.parse_value("triples_per_round", 1)?;
        h.cohort_size = self.parse_value("cohort_size", 1)?;
        Ok(h)
    }

    /// Fully resolved key = value view for manifests; parses back to an
    /// equivalent configuration.
    pub fn resolved(&self) -> Result<Vec<(String, String)>> {
        let h = self.hyperparams()?;
        let mut out: Vec<(String, String)> = Vec::new();
        if let Some(dataset) = self.get("dataset") {
            out.push(("dataset".into(), dataset.into()));
        }
        if let Some(mode) = self.mode() {
            out.push(("mode".into(), mode.into()));
        }
        out.push(("sampling_mode".into(), self.sampling_mode().into()));
        out.push(("latent_dim".into(), h.latent_dim.to_string()));
        out.push(("learning_rate".into(), h.learning_rate.to_string()));
        out.push(("reg_user".into(), h.reg_user.to_string()));
        out.push(("reg_pos_item".into(), h.reg_pos_item.to_string()));
        out.push(("reg_neg_item".into(), h.reg_neg_item.to_string()));
        out.push(("disclosure_prob".into(), h.disclosure_prob.to_string()));
        out.push(("triples_per_round".into(), h.triples_per_round.to_string()));
        out.push(("cohort_size".into(), h.cohort_size.to_string()));
        out.push(("epochs".into(), self.epochs()?.to_string()));
        out.push(("seed".into(), self.seed()?.to_string()));
        out.push((
            "cutoffs".into(),
            self.cutoffs()?
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ));
        if let Some(output) = self.get("output") {
            out.push(("output".into(), output.into()));
        }
        Ok(out)
    }
}
