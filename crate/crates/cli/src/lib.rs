//! The `btw` command-line driver: generate datasets, run one experiment, or
//! compare variants across seeds.
//!
//! Exit codes: 0 success, 2 config/spec parse failure, 3 refusing to write
//! into a non-empty output directory, 4 training failure, 5 some comparison
//! runs failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use btw::metrics::MetricReport;
use btw::synthdata;
use btw::trainloop::{parse_data_spec, run_experiment, write_outputs, ExperimentConfig, ExperimentOutput, Variant};
use serde_json::json;
use sha2::{Digest, Sha256};

/// The bundled experiment config: three modalities, one of them pure noise.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.cfg");

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_OUTPUT_SAFETY: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;
pub const EXIT_PARTIAL: i32 = 5;
/// Anything else: unreadable input, failed writes.
pub const EXIT_OTHER: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: btw::Error },

    #[error("{0} exists and is not empty; pass --force to write into it")]
    OutputNotEmpty(PathBuf),

    #[error("{0}")]
    Training(btw::Error),

    #[error("{failed} of {total} runs failed:\n{details}")]
    PartialFailure {
        failed: usize,
        total: usize,
        details: String,
    },

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } => EXIT_PARSE,
            CliError::OutputNotEmpty(_) => EXIT_OUTPUT_SAFETY,
            CliError::Training(_) => EXIT_TRAINING,
            CliError::PartialFailure { .. } => EXIT_PARTIAL,
            CliError::Other(_) => EXIT_OTHER,
        }
    }
}

fn other(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

/// Training and evaluation errors map to exit 4; file trouble does not.
fn classify(e: btw::Error) -> CliError {
    match e {
        btw::Error::Io { .. } | btw::Error::Format { .. } => other(e),
        e => CliError::Training(e),
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| other(format!("cannot read {}: {e}", path.display())))
}

fn as_text(path: &Path, bytes: &[u8]) -> Result<String, CliError> {
    String::from_utf8(bytes.to_vec()).map_err(|_| other(format!("{} is not UTF-8", path.display())))
}

fn prepare_out_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if let Ok(mut entries) = fs::read_dir(dir) {
        if entries.next().is_some() && !force {
            return Err(CliError::OutputNotEmpty(dir.to_path_buf()));
        }
    } else if dir.exists() {
        return Err(other(format!("{} exists and is not a directory", dir.display())));
    }
    fs::create_dir_all(dir).map_err(|e| other(format!("cannot create {}: {e}", dir.display())))
}

/// SHA-256 over git's blob framing (`blob <len>\0` + bytes), hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the input verbatim as `config.cfg` plus `manifest.json`, which
/// carries its hash, the seed, the file layout and the command to re-run.
fn write_manifest(dir: &Path, command: &str, input: &[u8], seed: u64, files: &[&str]) -> Result<(), CliError> {
    fs::write(dir.join("config.cfg"), input).map_err(other)?;
    let manifest = json!({
        "tool": "btw",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config_file": "config.cfg",
        "config_hash": format!("sha256:{}", content_hash(input)),
        "hash_scheme": "sha256 over `blob <len>\\0` + config bytes",
        "seed": seed,
        "files": files,
        "rerun": format!("btw {command} --config config.cfg --out <dir>"),
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(other)?;
    fs::write(dir.join("manifest.json"), text + "\n").map_err(other)
}

fn parse_config(path: &Path, bytes: &[u8]) -> Result<ExperimentConfig, CliError> {
    ExperimentConfig::parse(&as_text(path, bytes)?).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// Generates a synthetic dataset from a spec file (the `data.*` keys of the
/// config format) and writes it, split, to `out_dir`.
pub fn cmd_gen_data(spec_file: &Path, out_dir: &Path, force: bool) -> Result<(), CliError> {
    let bytes = read_input(spec_file)?;
    let (spec, fractions, split_seed) =
        parse_data_spec(&as_text(spec_file, &bytes)?).map_err(|source| CliError::Parse {
            path: spec_file.to_path_buf(),
            source,
        })?;
    prepare_out_dir(out_dir, force)?;
    let ds = synthdata::generate(&spec).and_then(|d| synthdata::split(&d, fractions, split_seed));
    let ds = ds.map_err(|e| CliError::Parse {
        path: spec_file.to_path_buf(),
        source: e,
    })?;
    synthdata::save_dataset(&ds, out_dir).map_err(other)?;
    let mut files = vec!["meta.json".to_string(), "targets.bin".into()];
    files.extend((0..ds.n_modalities()).map(|m| format!("modality_{m}.bin")));
    let names: Vec<&str> = files.iter().map(String::as_str).collect();
    write_manifest(out_dir, "gen-data", &bytes, spec.seed, &names)
}

const RUN_FILES: &[&str] = &[
    "records.csv",
    "weights_trajectory.csv",
    "alpha.csv",
    "timings.csv",
    "metrics.json",
    "checkpoints/",
];

/// Runs one experiment and writes its outputs to `out_dir`.
pub fn cmd_train(config_file: &Path, out_dir: &Path, force: bool) -> Result<ExperimentOutput, CliError> {
    let bytes = read_input(config_file)?;
    let cfg = parse_config(config_file, &bytes)?;
    prepare_out_dir(out_dir, force)?;
    let out = run_experiment(&cfg).map_err(classify)?;
    write_outputs(&out, out_dir).map_err(other)?;
    write_manifest(out_dir, "train", &bytes, cfg.seed, RUN_FILES)?;
    Ok(out)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct CompareRow {
    pub variant: Variant,
    pub n_runs: usize,
    /// `(metric, mean, std)` over the successful runs.
    pub stats: Vec<(String, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct CompareSummary {
    pub rows: Vec<CompareRow>,
    pub failures: Vec<(Variant, u64, String)>,
}

impl CompareSummary {
    pub fn to_csv(&self) -> String {
        let metric_names: Vec<String> = self
            .rows
            .iter()
            .find(|r| !r.stats.is_empty())
            .map(|r| r.stats.iter().map(|(k, _, _)| k.clone()).collect())
            .unwrap_or_default();
        let mut header = vec!["variant".to_string(), "n_runs".into()];
        for k in &metric_names {
            header.push(format!("{k}_mean"));
            header.push(format!("{k}_std"));
        }
        let mut s = header.join(",") + "\n";
        for r in &self.rows {
            let mut cols = vec![r.variant.to_string(), r.n_runs.to_string()];
            for (_, mean, std) in &r.stats {
                cols.push(mean.to_string());
                cols.push(std.to_string());
            }
            s += &(cols.join(",") + "\n");
        }
        s
    }

    pub fn stat(&self, variant: Variant, metric: &str) -> Option<(f64, f64)> {
        let row = self.rows.iter().find(|r| r.variant == variant)?;
        row.stats.iter().find(|(k, _, _)| k == metric).map(|(_, m, s)| (*m, *s))
    }
}

/// Runs every (variant, seed) cell, up to `jobs` at a time, each into
/// `out_dir/<variant>/seed_<s>/`, then writes `summary.csv` (mean and sample
/// standard deviation of each test metric per variant) and `runs.csv`.
/// Failed cells are reported at the end and do not stop the others.
pub fn cmd_compare(
    config_file: &Path,
    variants: &[Variant],
    seeds: &[u64],
    out_dir: &Path,
    force: bool,
    jobs: usize,
) -> Result<CompareSummary, CliError> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(other("compare needs at least one variant and one seed"));
    }
    let bytes = read_input(config_file)?;
    let base = parse_config(config_file, &bytes)?;
    prepare_out_dir(out_dir, force)?;

    let cells: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Mutex<Vec<Option<Result<MetricReport, String>>>> = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(variant, seed)) = cells.get(i) else { break };
                let mut cfg = base.with_seed(seed);
                cfg.variant = variant;
                let dir = out_dir.join(variant.to_string()).join(format!("seed_{seed}"));
                let r = run_experiment(&cfg)
                    .and_then(|out| write_outputs(&out, &dir).map(|_| out.test_metrics))
                    .map_err(|e| e.to_string());
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    let results: Vec<Result<MetricReport, String>> = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect();

    let mut runs_csv = String::new();
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for &variant in variants {
        let reports: Vec<&MetricReport> = cells
            .iter()
            .zip(&results)
            .filter(|((v, _), _)| *v == variant)
            .filter_map(|(_, r)| r.as_ref().ok())
            .collect();
        let stats = match reports.first() {
            None => Vec::new(),
            Some(first) => first
                .columns()
                .iter()
                .map(|(k, _)| {
                    let vals: Vec<f64> = reports.iter().filter_map(|r| r.get(k)).collect();
                    let (m, s) = mean_std(&vals);
                    (k.to_string(), m, s)
                })
                .collect(),
        };
        rows.push(CompareRow {
            variant,
            n_runs: reports.len(),
            stats,
        });
    }
    for (&(variant, seed), r) in cells.iter().zip(&results) {
        match r {
            Ok(rep) => {
                if runs_csv.is_empty() {
                    let names: Vec<&str> = rep.columns().iter().map(|(k, _)| *k).collect();
                    runs_csv = format!("variant,seed,{}\n", names.join(","));
                }
                let vals: Vec<String> = rep.columns().iter().map(|(_, v)| v.to_string()).collect();
                runs_csv += &format!("{variant},{seed},{}\n", vals.join(","));
            }
            Err(e) => failures.push((variant, seed, e.clone())),
        }
    }
    let summary = CompareSummary { rows, failures };
    fs::write(out_dir.join("summary.csv"), summary.to_csv()).map_err(other)?;
    fs::write(out_dir.join("runs.csv"), runs_csv).map_err(other)?;
    write_manifest(
        out_dir,
        "compare",
        &bytes,
        base.seed,
        &["summary.csv", "runs.csv", "<variant>/seed_<s>/"],
    )?;

    if summary.failures.is_empty() {
        Ok(summary)
    } else {
        let details: Vec<String> = summary
            .failures
            .iter()
            .map(|(v, s, e)| format!("  {v} seed {s}: {e}"))
            .collect();
        fs::write(out_dir.join("failures.txt"), details.join("\n") + "\n").map_err(other)?;
        Err(CliError::PartialFailure {
            failed: summary.failures.len(),
            total: cells.len(),
            details: details.join("\n"),
        })
    }
}
