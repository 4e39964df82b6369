//! Flat `key = value` experiment configuration.
//!
//! Keys are the long flag names without the leading dashes, so a file line
//! `steps-t = 1000` and the flag `--steps-t 1000` go through the same
//! setter. Grid axes are written `grid.<key> = v1,v2,...`; the axis for
//! `egt-order` separates its values with `;` because each order is itself a
//! comma list.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use smartkge::{EgtOrder, Error, ModelConfig, NormOrder, Result, Variant};

/// Keys accepted by [`ExperimentConfig::set`], in documentation order.
pub const KEYS: &[&str] = &[
    "train",
    "valid",
    "test",
    "dim",
    "gamma",
    "alpha",
    "eta",
    "batch",
    "lr",
    "rho",
    "norm",
    "variant",
    "epsilon",
    "steps-t",
    "steps-ta",
    "steps-f",
    "valid-every",
    "patience",
    "cross-phase-stop",
    "runs",
    "seed",
    "egt-order",
    "adherence-in",
    "adherence-out",
    "out-dir",
];

/// Keys that name files or run counts and therefore cannot be grid axes.
const NOT_GRIDDABLE: &[&str] = &["train", "valid", "test", "runs", "adherence-in", "adherence-out", "out-dir"];

/// Threshold used by `smart-gt` when no `epsilon` is given.
pub const DEFAULT_EPSILON: f64 = 0.35;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub model: ModelConfig,
    pub epsilon: f64,
    pub runs: usize,
    pub adherence_in: Option<PathBuf>,
    pub adherence_out: Option<PathBuf>,
    /// Grid axes: key → candidate values (raw strings, applied through `set`).
    pub grid: BTreeMap<String, Vec<String>>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: None,
            valid: None,
            test: None,
            model: ModelConfig::default(),
            epsilon: DEFAULT_EPSILON,
            runs: 1,
            adherence_in: None,
            adherence_out: None,
            grid: BTreeMap::new(),
            out_dir: PathBuf::from("smartkge-out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl ExperimentConfig {
    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let m = &mut self.model;
        match key {
            "train" => self.train = Some(PathBuf::from(value)),
            "valid" => self.valid = Some(PathBuf::from(value)),
            "test" => self.test = Some(PathBuf::from(value)),
            "dim" => m.dim = parse(key, value)?,
            "gamma" => m.gamma = parse(key, value)?,
            "alpha" => m.alpha = parse(key, value)?,
            "eta" => m.negatives = parse(key, value)?,
            "batch" => m.batch_size = parse(key, value)?,
            "lr" => m.learning_rate = parse(key, value)?,
            "rho" => m.regularization = parse(key, value)?,
            "norm" => m.norm = value.parse::<NormOrder>()?,
            "variant" => {
                m.variant = match value {
                    "smart" => Variant::Smart,
                    "smart-m" => Variant::SmartMajority,
                    "smart-gt" => Variant::SmartThreshold(self.epsilon),
                    other => {
                        return Err(Error::Config(format!(
                            "unknown variant {other:?} (expected smart, smart-m or smart-gt)"
                        )))
                    }
                }
            }
            "epsilon" => {
                self.epsilon = parse(key, value)?;
                if let Variant::SmartThreshold(_) = m.variant {
                    m.variant = Variant::SmartThreshold(self.epsilon);
                }
            }
            "steps-t" => m.phase_steps.training = parse(key, value)?,
            "steps-ta" => m.phase_steps.adaptive = parse(key, value)?,
            "steps-f" => m.phase_steps.freezing = parse(key, value)?,
            "valid-every" => m.valid_every = parse(key, value)?,
            "patience" => m.patience = parse(key, value)?,
            "cross-phase-stop" => {
                m.cross_phase_stop = match value {
                    "on" => true,
                    "off" => false,
                    other => return Err(Error::Config(format!("cross-phase-stop must be on or off, got {other:?}"))),
                }
            }
            "runs" => self.runs = parse(key, value)?,
            "seed" => m.seed = parse(key, value)?,
            "egt-order" => m.egt_order = value.parse::<EgtOrder>()?,
            "adherence-in" => self.adherence_in = Some(PathBuf::from(value)),
            "adherence-out" => self.adherence_out = Some(PathBuf::from(value)),
            "out-dir" => self.out_dir = PathBuf::from(value),
            other => {
                if let Some(axis) = other.strip_prefix("grid.") {
                    return self.set_grid(axis, value);
                }
                return Err(Error::Config(format!("unknown configuration key {other:?}")));
            }
        }
        Ok(())
    }

    /// Add a grid axis from a `v1,v2,...` list (`;`-separated for `egt-order`).
    pub fn set_grid(&mut self, key: &str, values: &str) -> Result<()> {
        if !KEYS.contains(&key) || NOT_GRIDDABLE.contains(&key) {
            return Err(Error::Config(format!("{key:?} cannot be a grid axis")));
        }
        let sep = if key == "egt-order" { ';' } else { ',' };
        let list: Vec<String> = values
            .split(sep)
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if list.is_empty() {
            return Err(Error::Config(format!("grid axis {key} has no values")));
        }
        // reject bad values now rather than halfway through a grid
        for v in &list {
            self.clone().set(key, v)?;
        }
        self.grid.insert(key.to_string(), list);
        Ok(())
    }

    /// Apply a `key = value` text. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    /// Check everything a command needs before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        self.model.validate()
    }

    pub fn dataset_paths(&self) -> Result<(&Path, &Path, &Path)> {
        fn need<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
            p.as_deref()
                .ok_or_else(|| Error::Config(format!("missing dataset path: {key}")))
        }
        Ok((need(&self.train, "train")?, need(&self.valid, "valid")?, need(&self.test, "test")?))
    }

    /// Every combination of grid values, axes in key order, last axis fastest.
    pub fn grid_cells(&self) -> Vec<Vec<(String, String)>> {
        let mut cells: Vec<Vec<(String, String)>> = vec![Vec::new()];
        for (key, values) in &self.grid {
            cells = cells
                .into_iter()
                .flat_map(|cell| {
                    values.iter().map(move |v| {
                        let mut next = cell.clone();
                        next.push((key.clone(), v.clone()));
                        next
                    })
                })
                .collect();
        }
        cells
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_and_flags_share_the_setter() {
        let mut c = ExperimentConfig::default();
        c.apply_text("# comment\ndim = 16\nvariant=smart-gt\n\nsteps-t = 7\ncross-phase-stop = on\n")
            .unwrap();
        assert_eq!(c.model.dim, 16);
        assert_eq!(c.model.variant, Variant::SmartThreshold(DEFAULT_EPSILON));
        assert_eq!(c.model.phase_steps.training, 7);
        assert!(c.model.cross_phase_stop);
        c.set("epsilon", "0.2").unwrap();
        assert_eq!(c.model.variant, Variant::SmartThreshold(0.2));
        c.set("dim", "8").unwrap();
        assert_eq!(c.model.dim, 8);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let mut c = ExperimentConfig::default();
        for (k, v) in [("norm", "3"), ("variant", "smarter"), ("cross-phase-stop", "yes"), ("dim", "x"), ("nope", "1")] {
            assert!(matches!(c.set(k, v), Err(Error::Config(_))), "{k}={v}");
        }
        assert!(c.apply_text("dim 16").is_err());
    }

    #[test]
    fn grid_is_a_cartesian_product() {
        let mut c = ExperimentConfig::default();
        c.set("grid.gamma", "1, 9, 24").unwrap();
        assert_eq!(c.grid_cells().len(), 3);
        c.set_grid("dim", "8,16").unwrap();
        let cells = c.grid_cells();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0], vec![("dim".into(), "8".into()), ("gamma".into(), "1".into())]);
        assert_eq!(cells[1][1].1, "9");
        c.set_grid("egt-order", "Trans,Rot,Ref,Scal;Scal,Ref,Rot,Trans").unwrap();
        assert_eq!(c.grid_cells().len(), 12);
        assert!(c.set_grid("train", "a,b").is_err());
        assert!(c.set_grid("dim", "8,x").is_err());
        assert!(c.set_grid("dim", " , ").is_err());
    }
}
