//! Flat `section.key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Every key may be overridden by
//! an environment variable `FEDSIM_<SECTION>_<KEY>`, e.g.
//! `FEDSIM_RUN_LOCAL_STEPS=20` for `run.local_steps`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use fedsim_core::data::BatchSampling;
use fedsim_core::federation::{Algorithm, Compression, Horizon, LrMode, PrivacyConfig, RunConfig};
use fedsim_core::privacy::SensitivityMode;

use crate::error::CliError;

pub const ENV_PREFIX: &str = "FEDSIM_";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Env(String),
    Sweep,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Env(var) => write!(f, "environment variable {var}"),
            Origin::Sweep => f.write_str("sweep value"),
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    origin: Origin,
}

/// Parsed but uninterpreted key-value pairs.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let origin = Origin::Line(i + 1);
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::parse(origin, "expected 'section.key = value'"));
            };
            let key = key.trim();
            let value = value.trim();
            let valid_key = key
                .split_once('.')
                .is_some_and(|(s, k)| !s.is_empty() && !k.is_empty() && !k.contains('.'));
            if !valid_key || !key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '.') {
                return Err(CliError::parse(origin, format!("malformed key '{key}'")));
            }
            if value.is_empty() {
                return Err(CliError::parse(origin, format!("no value for '{key}'")));
            }
            if let Some(prev) = entries.get(key).map(|e: &Entry| e.origin.clone()) {
                return Err(CliError::parse(origin, format!("'{key}' already set on {prev}")));
            }
            entries.insert(key.to_string(), Entry {
                value: value.to_string(),
                origin,
            });
        }
        Ok(Self { entries })
    }

    /// Applies `FEDSIM_<SECTION>_<KEY>` overrides.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<(), CliError> {
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let origin = Origin::Env(name.clone());
            let Some((section, key)) = rest.split_once('_') else {
                return Err(CliError::parse(origin, "expected FEDSIM_<SECTION>_<KEY>"));
            };
            let key = format!("{}.{}", section.to_ascii_lowercase(), key.to_ascii_lowercase());
            self.entries.insert(key, Entry {
                value: value.trim().to_string(),
                origin,
            });
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), Entry {
            value: value.to_string(),
            origin: Origin::Sweep,
        });
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }
}

/// Reads typed values and remembers which keys were consumed.
struct Reader<'a> {
    raw: &'a RawConfig,
    used: BTreeSet<&'static str>,
}

impl<'a> Reader<'a> {
    fn get<T: FromStr>(&mut self, key: &'static str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        self.used.insert(key);
        match self.raw.entries.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|err| CliError::parse(e.origin.clone(), format!("bad value '{}' for {key}: {err}", e.value))),
        }
    }

    fn or<T: FromStr>(&mut self, key: &'static str, default: T) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&mut self, key: &'static str, why: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)?
            .ok_or_else(|| CliError::Config(format!("{key} is required {why}")))
    }

    fn origin(&self, key: &str) -> Origin {
        self.raw.entries.get(key).map_or(Origin::Sweep, |e| e.origin.clone())
    }

    fn finish(self) -> Result<(), CliError> {
        match self.raw.entries.iter().find(|(k, _)| !self.used.contains(k.as_str())) {
            Some((k, e)) => Err(CliError::parse(e.origin.clone(), format!("unknown key '{k}'"))),
            None => Ok(()),
        }
    }
}

/// `"none"` or a value.
struct Opt<T>(Option<T>);

impl<T: FromStr> FromStr for Opt<T> {
    type Err = T::Err;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "none" {
            Ok(Opt(None))
        } else {
            s.parse().map(|v| Opt(Some(v)))
        }
    }
}

/// Comma-separated list.
pub struct List(pub Vec<String>);

impl FromStr for List {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let items: Vec<String> = s.split(',').map(|v| v.trim().to_string()).collect();
        if items.iter().any(String::is_empty) {
            return Err("empty list item".into());
        }
        Ok(List(items))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        samples: usize,
        dim: usize,
        classes: usize,
        separation: f64,
        test_samples: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
        classes: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionSpec {
    LabelSkew {
        n_digits: usize,
        samples_per_device: Option<usize>,
    },
    Iid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub source: DataSource,
    pub partition: PartitionSpec,
    /// Fixed data seed; when absent each cell uses its run seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub param: String,
    pub values: Vec<String>,
}

/// Inputs of the bound report beyond the run configuration. Constants left
/// unset are estimated from the data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundSpec {
    pub capacity: Option<f64>,
    pub duration: Option<f64>,
    pub iterations: Option<usize>,
    pub max_local_steps: Option<usize>,
    pub dist0: Option<f64>,
    pub smoothness: Option<f64>,
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    pub grad_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub run: RunConfig,
    pub data: DataSpec,
    /// Solver tolerance for the reference optimum; `None` skips it.
    pub reference_tol: Option<f64>,
    pub sweep: Option<Sweep>,
    pub repeats: usize,
    pub out_dir: PathBuf,
    pub bound: BoundSpec,
}

fn parse_sensitivity(s: &str) -> Result<SensitivityMode, String> {
    if s == "derived" {
        return Ok(SensitivityMode::Derived);
    }
    s.parse::<f64>()
        .map(SensitivityMode::Fixed)
        .map_err(|_| "expected 'derived' or a number".to_string())
}

struct Sampling(BatchSampling);

impl FromStr for Sampling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "replacement" => Ok(Sampling(BatchSampling::WithReplacement)),
            "subsample" => Ok(Sampling(BatchSampling::Subsample)),
            _ => Err("expected 'replacement' or 'subsample'".into()),
        }
    }
}

struct Sensitivity(SensitivityMode);

impl FromStr for Sensitivity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_sensitivity(s).map(Sensitivity)
    }
}

impl Settings {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, CliError> {
        let mut r = Reader {
            raw,
            used: BTreeSet::new(),
        };
        let d = RunConfig::default();
        let algorithm: Algorithm = r.or("run.algorithm", d.algorithm)?;
        let rounds: Option<usize> = r.get("run.rounds")?;
        let iterations: Option<usize> = r.get("run.iterations")?;
        let horizon = match (rounds, iterations) {
            (Some(_), Some(_)) => {
                return Err(CliError::parse(
                    r.origin("run.iterations"),
                    "set either run.rounds or run.iterations, not both",
                ))
            }
            (_, Some(t)) => Horizon::Iterations(t),
            (Some(k), None) => Horizon::Rounds(k),
            (None, None) => d.horizon,
        };
        let defaults = PrivacyConfig::default();
        let privacy = if algorithm == Algorithm::DpFedPaq {
            Some(PrivacyConfig {
                epsilon: r.or("privacy.epsilon", defaults.epsilon)?,
                delta: r.or("privacy.delta", defaults.delta)?,
                clip: r.or("privacy.clip", defaults.clip)?,
                sensitivity: r.or("privacy.sensitivity", Sensitivity(defaults.sensitivity))?.0,
                gamma: r.or("privacy.gamma", Opt(defaults.gamma))?.0,
                sigma_sq_override: r.get("privacy.sigma_sq")?,
            })
        } else {
            for key in [
                "privacy.epsilon",
                "privacy.delta",
                "privacy.clip",
                "privacy.sensitivity",
                "privacy.gamma",
                "privacy.sigma_sq",
            ] {
                r.used.insert(key);
            }
            None
        };
        let run = RunConfig {
            algorithm,
            devices: r.or("run.devices", d.devices)?,
            participants: r.or("run.participants", d.participants)?,
            local_steps: r.or("run.local_steps", d.local_steps)?,
            horizon,
            batch: r.or("run.batch", d.batch)?,
            compression: r.or::<Compression>("run.compression", d.compression)?,
            eta0: r.or("run.eta0", d.eta0)?,
            lr_mode: r.or::<LrMode>("run.lr_mode", d.lr_mode)?,
            mu: r.or("run.mu", d.mu)?,
            privacy,
            eta_g: r.or("run.eta_g", d.eta_g)?,
            seed: r.or("run.seed", d.seed)?,
            sampling: r.get::<Sampling>("run.sampling")?.map(|s| s.0),
        };

        let source_name: String = r.or("data.source", "synthetic".to_string())?;
        let source = match source_name.as_str() {
            "synthetic" => DataSource::Synthetic {
                samples: r.or("data.samples", 22_000)?,
                dim: r.or("data.dim", 10)?,
                classes: r.or("data.classes", 10)?,
                separation: r.or("data.separation", 7.0)?,
                test_samples: r.or("data.test_samples", 2_000)?,
            },
            "idx" => DataSource::Idx {
                train_images: r.require("data.train_images", "for idx data")?,
                train_labels: r.require("data.train_labels", "for idx data")?,
                test_images: r.get("data.test_images")?,
                test_labels: r.get("data.test_labels")?,
                classes: r.or("data.classes", 10)?,
            },
            other => {
                return Err(CliError::parse(
                    r.origin("data.source"),
                    format!("unknown data source '{other}' (synthetic or idx)"),
                ))
            }
        };
        let partition_name: String = r.or("data.partition", "label_skew".to_string())?;
        let partition = match partition_name.as_str() {
            "label_skew" => PartitionSpec::LabelSkew {
                n_digits: r.or("data.n_digits", 2)?,
                samples_per_device: r.get("data.samples_per_device")?,
            },
            "iid" => PartitionSpec::Iid,
            other => {
                return Err(CliError::parse(
                    r.origin("data.partition"),
                    format!("unknown partition '{other}' (label_skew or iid)"),
                ))
            }
        };
        let data = DataSpec {
            source,
            partition,
            seed: r.get("data.seed")?,
        };

        let reference_tol = if r.or("reference.solve", true)? {
            Some(r.or("reference.tol", 1e-8)?)
        } else {
            r.used.insert("reference.tol");
            None
        };

        let sweep = match r.get::<String>("sweep.param")? {
            Some(param) => {
                let List(values) = r.require("sweep.values", "when sweep.param is set")?;
                Some(Sweep { param, values })
            }
            None => {
                if raw.contains("sweep.values") {
                    return Err(CliError::parse(r.origin("sweep.values"), "sweep.values needs sweep.param"));
                }
                None
            }
        };
        let repeats = r.or("sweep.repeats", 1usize)?;
        if repeats == 0 {
            return Err(CliError::parse(r.origin("sweep.repeats"), "sweep.repeats must be at least 1"));
        }

        let out_dir = r.or("output.dir", PathBuf::from("out"))?;
        let bound = BoundSpec {
            capacity: r.get("bound.capacity")?,
            duration: r.get("bound.duration")?,
            iterations: r.get("bound.iterations")?,
            max_local_steps: r.get("bound.max_local_steps")?,
            dist0: r.get("bound.dist0")?,
            smoothness: r.get("bound.smoothness")?,
            sigma: r.get("bound.sigma")?,
            lambda: r.get("bound.lambda")?,
            grad_bound: r.get("bound.grad_bound")?,
        };
        r.finish()?;
        Ok(Settings {
            run,
            data,
            reference_tol,
            sweep,
            repeats,
            out_dir,
            bound,
        })
    }
}
