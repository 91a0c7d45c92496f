//! Sweep execution and CSV output.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use fedsim_core::data::{load_idx_dataset, partition_iid, partition_label_skew, synth_classification};
use fedsim_core::federation::{run, Compression, FederatedData, RoundRecord, RunConfig};
use fedsim_core::model::solve_reference_optimum;

use crate::config::{DataSource, DataSpec, PartitionSpec, RawConfig, Settings};
use crate::error::CliError;

pub const RECORD_HEADER: &str =
    "round,iteration,train_loss,test_acc,dist_sq_to_opt,bits_round,bits_cum,eps_prime,sigma_sq";

pub const MANIFEST_HEADER: [&str; 21] = [
    "file",
    "sweep_param",
    "sweep_value",
    "repeat",
    "seed",
    "data_seed",
    "algorithm",
    "devices",
    "participants",
    "local_steps",
    "rounds",
    "iterations",
    "batch",
    "compression",
    "eta0",
    "lr_mode",
    "mu",
    "epsilon",
    "delta",
    "clip",
    "gamma",
];

/// Enough digits to round-trip an f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn build_data(spec: &DataSpec, devices: usize, seed: u64) -> Result<FederatedData, CliError> {
    let ctx = |what: &str| format!("building {what}");
    let (train, test) = match &spec.source {
        DataSource::Synthetic {
            samples,
            dim,
            classes,
            separation,
            test_samples,
        } => {
            let all = synth_classification(samples + test_samples, *dim, *classes, *separation, seed)
                .map_err(|e| CliError::core(ctx("synthetic data"), e))?;
            if *test_samples == 0 {
                (all, None)
            } else {
                let (train, test) = all
                    .split_tail(*test_samples)
                    .map_err(|e| CliError::core(ctx("test split"), e))?;
                (train, Some(test))
            }
        }
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            classes,
        } => {
            let load = |images: &Path, labels: &Path| {
                load_idx_dataset(images, labels, *classes)
                    .map_err(|e| CliError::core(format!("loading {}", images.display()), e))
            };
            let train = load(train_images, train_labels)?;
            let test = match (test_images, test_labels) {
                (Some(i), Some(l)) => Some(load(i, l)?),
                (None, None) => None,
                _ => {
                    return Err(CliError::Config(
                        "data.test_images and data.test_labels must be given together".into(),
                    ))
                }
            };
            (train, test)
        }
    };
    let partitions = match spec.partition {
        PartitionSpec::LabelSkew {
            n_digits,
            samples_per_device,
        } => partition_label_skew(&train, devices, n_digits, samples_per_device, seed),
        PartitionSpec::Iid => partition_iid(&train, devices, seed),
    }
    .map_err(|e| CliError::core(ctx("partitions"), e))?;
    Ok(FederatedData {
        train,
        test,
        partitions,
    })
}

/// Data, partitions and (optionally) the reference optimum.
pub struct Problem {
    pub data: FederatedData,
    pub reference: Option<Vec<f64>>,
}

pub fn build_problem(settings: &Settings, seed: u64) -> Result<Problem, CliError> {
    let data = build_data(&settings.data, settings.run.devices, seed)?;
    let reference = match settings.reference_tol {
        Some(tol) => Some(
            solve_reference_optimum(&data.train, settings.run.mu, tol)
                .map_err(|e| CliError::core("solving for the reference optimum", e))?
                .params,
        ),
        None => None,
    };
    Ok(Problem { data, reference })
}

/// One (sweep value, repeat) combination.
#[derive(Debug, Clone)]
pub struct Cell {
    pub file: String,
    pub sweep_value: Option<String>,
    pub repeat: usize,
    pub seed: u64,
    pub data_seed: u64,
    pub settings: Settings,
}

impl Cell {
    fn problem_key(&self) -> String {
        format!(
            "{:?}|{}|{}|{:?}|{}",
            self.settings.data, self.settings.run.devices, self.settings.run.mu, self.settings.reference_tol, self.data_seed
        )
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Expands the sweep. `seed` overrides `run.seed`; repeat `r` runs with
/// seed `base + r`.
pub fn plan(raw: &RawConfig, seed: Option<u64>) -> Result<Vec<Cell>, CliError> {
    let base = Settings::from_raw(raw)?;
    let values: Vec<Option<String>> = match &base.sweep {
        Some(s) => s.values.iter().cloned().map(Some).collect(),
        None => vec![None],
    };
    let base_seed = seed.unwrap_or(base.run.seed);
    let mut cells = Vec::new();
    for value in values {
        let settings = match (&base.sweep, &value) {
            (Some(s), Some(v)) => {
                if s.param.starts_with("sweep.") || s.param.starts_with("output.") {
                    return Err(CliError::Config(format!("cannot sweep over {}", s.param)));
                }
                let mut raw = raw.clone();
                raw.set(&s.param, v);
                Settings::from_raw(&raw)?
            }
            _ => base.clone(),
        };
        for repeat in 0..base.repeats {
            let seed = base_seed + repeat as u64;
            let name = match (&base.sweep, &value) {
                (Some(s), Some(v)) => {
                    let key = s.param.rsplit('.').next().unwrap_or(&s.param);
                    format!("{:03}_{}-{}_seed{seed}.csv", cells.len(), slug(key), slug(v))
                }
                _ => format!("{:03}_seed{seed}.csv", cells.len()),
            };
            let mut settings = settings.clone();
            settings.run.seed = seed;
            cells.push(Cell {
                file: name,
                sweep_value: value.clone(),
                repeat,
                seed,
                data_seed: settings.data.seed.unwrap_or(seed),
                settings,
            });
        }
    }
    Ok(cells)
}

pub fn write_records(path: &Path, records: &[RoundRecord]) -> Result<(), CliError> {
    let mut out = String::with_capacity(64 + records.len() * 200);
    out.push_str(RECORD_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.round,
            r.iteration,
            fmt_f64(r.train_loss),
            fmt_f64(r.test_accuracy),
            fmt_f64(r.dist_sq_to_opt),
            r.bits_round,
            r.bits_cumulative,
            fmt_f64(r.eps_prime),
            fmt_f64(r.sigma_sq),
        ));
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| CliError::io(path, e))
}

fn manifest_row(cell: &Cell, sweep_param: &str) -> Vec<String> {
    let c: &RunConfig = &cell.settings.run;
    let p = c.privacy;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    vec![
        cell.file.clone(),
        sweep_param.to_string(),
        cell.sweep_value.clone().unwrap_or_default(),
        cell.repeat.to_string(),
        cell.seed.to_string(),
        cell.data_seed.to_string(),
        c.algorithm.to_string(),
        c.devices.to_string(),
        c.participants.to_string(),
        c.local_steps.to_string(),
        c.rounds().to_string(),
        c.iterations().to_string(),
        c.batch.to_string(),
        match c.compression {
            Compression::None => "none".to_string(),
            Compression::Qsgd(s) => s.to_string(),
        },
        c.eta0.to_string(),
        format!("{:?}", c.lr_mode).to_lowercase(),
        c.mu.to_string(),
        opt(p.map(|p| p.epsilon)),
        opt(p.map(|p| p.delta)),
        opt(p.map(|p| p.clip)),
        opt(p.and_then(|p| p.gamma)),
    ]
}

/// Runs every cell (up to `jobs` at a time), then writes `manifest.csv`.
pub fn run_sweep(raw: &RawConfig, seed: Option<u64>, out_dir: Option<PathBuf>, jobs: Option<usize>) -> Result<PathBuf, CliError> {
    let cells = plan(raw, seed)?;
    let out_dir = out_dir.unwrap_or_else(|| cells[0].settings.out_dir.clone());
    fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {jobs:?} workers: {e}")))?;

    pool.install(|| -> Result<(), CliError> {
        let mut wanted: HashMap<String, &Cell> = HashMap::new();
        for cell in &cells {
            wanted.entry(cell.problem_key()).or_insert(cell);
        }
        let problems: HashMap<String, Arc<Problem>> = wanted
            .into_par_iter()
            .map(|(key, cell)| Ok((key, Arc::new(build_problem(&cell.settings, cell.data_seed)?))))
            .collect::<Result<_, CliError>>()?;

        cells.par_iter().try_for_each(|cell| {
            let problem = &problems[&cell.problem_key()];
            let out = run(&cell.settings.run, &problem.data, problem.reference.as_deref())
                .map_err(|e| CliError::core(format!("run {}", cell.file), e))?;
            write_records(&out_dir.join(&cell.file), &out.records)
        })
    })?;

    let sweep_param = cells[0].settings.sweep.as_ref().map_or("", |s| s.param.as_str()).to_string();
    let manifest = out_dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest)?;
    w.write_record(MANIFEST_HEADER)?;
    for cell in &cells {
        w.write_record(manifest_row(cell, &sweep_param))?;
    }
    w.flush().map_err(|e| CliError::io(&manifest, e))?;
    Ok(out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_full_precision() {
        let v = 0.1 + 0.2;
        assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }

    #[test]
    fn plan_expands_values_and_repeats() {
        let raw = RawConfig::parse("sweep.param = run.local_steps\nsweep.values = 1,5\nsweep.repeats = 2\nrun.seed = 7").unwrap();
        let cells = plan(&raw, None).unwrap();
        let summary: Vec<(usize, u64)> = cells.iter().map(|c| (c.settings.run.local_steps, c.seed)).collect();
        assert_eq!(summary, vec![(1, 7), (1, 8), (5, 7), (5, 8)]);
        assert_eq!(cells[3].file, "003_local_steps-5_seed8.csv");
        let reseeded = plan(&raw, Some(100)).unwrap();
        assert_eq!(reseeded[1].seed, 101);
    }
}
