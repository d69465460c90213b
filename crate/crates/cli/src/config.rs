//! Run configuration: a TOML file with one table per stage. Every key has a
//! default, unknown keys are rejected, and `--set section.key=value` flags
//! are applied on top of the file before it is resolved.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use s4m_core::data::{MissingPattern, SynthSpec};
use s4m_core::rng::sub_seed;
use s4m_core::train_eval::TrainConfig;
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

/// Everything a pipeline run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed. Stage seeds that are not given explicitly derive from it.
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub corrupt: CorruptConfig,
    pub train: TrainConfig,
    pub compare: CompareConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Series to train and evaluate on (possibly with missing entries).
    pub input: Option<PathBuf>,
    /// Fully observed reference for `input`; enables error against truth.
    pub clean: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Series length.
    pub t: usize,
    /// Number of variables.
    pub d: usize,
    /// Observation noise.
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptConfig {
    /// `time-point` or `variable`.
    pub pattern: String,
    pub r: f64,
    pub block_len: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Training seeds averaged per method; empty means `train.seed` alone.
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            corrupt: CorruptConfig::default(),
            train: TrainConfig::default(),
            compare: CompareConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            input: None,
            clean: None,
            out_dir: PathBuf::from("runs/latest"),
        }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { t: 4000, d: 4, sigma: 0.1, seed: 0 }
    }
}

impl Default for CorruptConfig {
    fn default() -> Self {
        Self {
            pattern: "time-point".into(),
            r: 0.12,
            block_len: 5,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `overrides`, fills in
    /// derived stage seeds and validates.
    pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> CliResult<Self> {
        let table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        Self::from_table(table, overrides)
    }

    pub fn from_table(mut table: Table, overrides: &[(String, Value)]) -> CliResult<Self> {
        for (key, value) in overrides {
            set_path(&mut table, key, value.clone())?;
        }
        let root = match table.get("seed") {
            None => 0,
            Some(Value::Integer(s)) if *s >= 0 => *s as u64,
            Some(other) => return Err(CliError::Config(format!("`seed`: expected a nonnegative integer, found {other}"))),
        };
        // Stage seeds: explicit values win, otherwise derive from the root.
        for (section, seed) in [
            ("synth", sub_seed(root, "synth")),
            ("corrupt", sub_seed(root, "corrupt")),
            ("train", root),
        ] {
            let path = format!("{section}.seed");
            if lookup(&table, &path).is_none() {
                // Seeds are stored as TOML integers, which are signed.
                set_path(&mut table, &path, Value::Integer((seed & i64::MAX as u64) as i64))?;
            }
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.inner().to_string();
            CliError::Config(format!("`{path}`: {}", inner.lines().next().unwrap_or_default()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate().map_err(|e| CliError::Config(format!("[train] {e}")))?;
        self.pattern()?;
        if !(0.0..1.0).contains(&self.corrupt.r) {
            return Err(CliError::Config(format!("`corrupt.r`: {} outside [0, 1)", self.corrupt.r)));
        }
        if self.corrupt.block_len == 0 {
            return Err(CliError::Config("`corrupt.block_len` must be positive".into()));
        }
        if self.synth.t == 0 || self.synth.d == 0 {
            return Err(CliError::Config("`synth.t` and `synth.d` must be positive".into()));
        }
        if !(self.synth.sigma >= 0.0 && self.synth.sigma.is_finite()) {
            return Err(CliError::Config(format!("`synth.sigma`: {} must be >= 0", self.synth.sigma)));
        }
        Ok(())
    }

    pub fn pattern(&self) -> CliResult<MissingPattern> {
        self.corrupt
            .pattern
            .parse()
            .map_err(|e| CliError::Config(format!("`corrupt.pattern`: {e}")))
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec::seasonal(self.synth.d, self.synth.sigma)
    }

    /// Seeds `compare` trains each method with.
    pub fn compare_seeds(&self) -> Vec<u64> {
        if self.compare.seeds.is_empty() {
            vec![self.train.seed]
        } else {
            self.compare.seeds.clone()
        }
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    /// Writes the resolved configuration as `config.toml` under `dir`.
    pub fn echo(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()?)
            .map_err(|e| CliError::Core(s4m_core::Error::io(format!("writing {}", path.display()), e)))
    }
}

/// Parses `section.key=value`. The value is read as a TOML literal, falling
/// back to a bare string.
pub fn parse_override(arg: &str) -> CliResult<(String, Value)> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{arg}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("override `{arg}` has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn lookup<'a>(table: &'a Table, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

fn set_path(table: &mut Table, path: &str, value: Value) -> CliResult<()> {
    let parts: Vec<&str> = path.split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for (i, p) in parents.iter().enumerate() {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("`{}` is not a section", parts[..=i].join(".")))
        })?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
