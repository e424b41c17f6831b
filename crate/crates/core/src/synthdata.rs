//! Synthetic multimodal datasets with a dial per modality for how much of the
//! target signal it carries.
//!
//! A scalar signal `s ~ N(0, 1)` is drawn per instance. Modality `m` with
//! informativeness `a` sees the latent vector `u[j] = a·s + (1 − a)·ξ[j]`
//! (independent standard normal `ξ`), rotated by a seeded random orthogonal
//! matrix, passed through the nonlinearity and topped up with
//! `noise_sigma`-scaled observation noise. Regression targets are `s`;
//! classification targets are `s` binned by quantile.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictions::Targets;
use crate::seed;
use crate::tensor::Matrix;
use crate::tinymoe::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    Linear,
    /// `0.5·v + tanh(v)`: monotone, so the signal stays recoverable, but not
    /// linearly.
    TanhMixed,
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Nonlinearity::Linear => "linear",
            Nonlinearity::TanhMixed => "tanh_mixed",
        })
    }
}

impl FromStr for Nonlinearity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "linear" => Ok(Nonlinearity::Linear),
            "tanh_mixed" | "tanh-mixed" => Ok(Nonlinearity::TanhMixed),
            other => Err(format!(
                "unknown nonlinearity `{other}` (expected linear or tanh_mixed)"
            )),
        }
    }
}

impl Nonlinearity {
    fn apply(self, v: f64) -> f64 {
        match self {
            Nonlinearity::Linear => v,
            Nonlinearity::TanhMixed => 0.5 * v + v.tanh(),
        }
    }
}

mod task_text {
    use super::Task;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(task: &Task, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(task)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Task, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_instances: usize,
    pub modality_dims: Vec<usize>,
    pub informativeness: Vec<f64>,
    pub noise_sigma: f64,
    #[serde(with = "task_text")]
    pub task: Task,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
    /// Seeds for each modality's projection matrix. Defaults to values
    /// derived from `seed`; giving two modalities the same stream seed makes
    /// them share a projection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream_seeds: Option<Vec<u64>>,
    /// Dirichlet concentration for drawing class priors. `None` keeps the
    /// classes balanced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_concentration: Option<f64>,
}

impl SyntheticSpec {
    /// 2000 instances, three 16-dimensional modalities.
    pub fn desk_scale(informativeness: Vec<f64>, task: Task, seed: u64) -> Self {
        Self {
            n_instances: 2000,
            modality_dims: vec![16; informativeness.len()],
            informativeness,
            noise_sigma: 0.1,
            task,
            nonlinearity: Nonlinearity::Linear,
            seed,
            stream_seeds: None,
            class_concentration: None,
        }
    }

    pub fn n_modalities(&self) -> usize {
        self.modality_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n_instances == 0 {
            return bad("n_instances must be at least 1".into());
        }
        if self.modality_dims.is_empty() {
            return bad("at least one modality is required".into());
        }
        if let Some(m) = self.modality_dims.iter().position(|&d| d == 0) {
            return bad(format!("modality {m} has zero features"));
        }
        if self.informativeness.len() != self.modality_dims.len() {
            return bad(format!(
                "{} informativeness values for {} modalities",
                self.informativeness.len(),
                self.modality_dims.len()
            ));
        }
        if let Some(a) = self.informativeness.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return bad(format!("informativeness {a} outside [0, 1]"));
        }
        if !self.informativeness.iter().any(|&a| a > 0.0) {
            return bad("at least one modality must carry signal (informativeness > 0)".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma));
        }
        if let Some(s) = &self.stream_seeds {
            if s.len() != self.modality_dims.len() {
                return bad(format!(
                    "{} stream seeds for {} modalities",
                    s.len(),
                    self.modality_dims.len()
                ));
            }
        }
        if let Some(c) = self.class_concentration {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("class_concentration {c} must be positive"));
            }
            if self.task == Task::Regression {
                return bad("class_concentration only applies to classification".into());
            }
        }
        if let Task::Classification { n_classes } = self.task {
            if n_classes < 2 {
                return bad(format!("classification needs at least 2 classes, got {n_classes}"));
            }
        }
        Ok(())
    }

    fn projection_seed(&self, m: usize) -> u64 {
        match &self.stream_seeds {
            Some(s) => s[m],
            None => seed::derive(self.seed, 10 + m as u64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<Matrix>,
    targets: Targets,
    tags: Vec<SplitTag>,
    spec: Option<SyntheticSpec>,
}

impl Dataset {
    /// All instances start in the training split.
    pub fn new(features: Vec<Matrix>, targets: Targets) -> Result<Self> {
        let n = targets.len();
        if features.is_empty() {
            return Err(Error::Shape("a dataset needs at least one modality".into()));
        }
        if let Some((m, f)) = features.iter().enumerate().find(|(_, f)| f.rows() != n) {
            return Err(Error::Shape(format!(
                "modality {m} has {} rows, targets have {n}",
                f.rows()
            )));
        }
        Ok(Self {
            features,
            targets,
            tags: vec![SplitTag::Train; n],
            spec: None,
        })
    }

    pub fn n_instances(&self) -> usize {
        self.targets.len()
    }

    pub fn n_modalities(&self) -> usize {
        self.features.len()
    }

    pub fn modality_dims(&self) -> Vec<usize> {
        self.features.iter().map(Matrix::cols).collect()
    }

    pub fn features(&self) -> &[Matrix] {
        &self.features
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn task(&self) -> Task {
        match &self.targets {
            Targets::Regression(_) => Task::Regression,
            Targets::Classification { n_classes, .. } => Task::Classification { n_classes: *n_classes },
        }
    }

    pub fn tags(&self) -> &[SplitTag] {
        &self.tags
    }

    /// The generating spec, when the dataset came from [`generate`].
    pub fn spec(&self) -> Option<&SyntheticSpec> {
        self.spec.as_ref()
    }

    /// Instance indices in `tag`, ascending.
    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == tag)
            .map(|(i, _)| i)
            .collect()
    }

    /// Features and targets restricted to `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> (Vec<Matrix>, Targets) {
        let features = self.features.iter().map(|f| f.gather_rows(indices)).collect();
        let targets = match &self.targets {
            Targets::Regression(y) => Targets::Regression(indices.iter().map(|&i| y[i]).collect()),
            Targets::Classification { labels, n_classes } => Targets::Classification {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                n_classes: *n_classes,
            },
        };
        (features, targets)
    }

    /// Swaps two modalities' feature matrices.
    pub fn swap_modalities(&mut self, a: usize, b: usize) {
        self.features.swap(a, b);
    }
}

/// Random orthogonal `d × d` matrix: Gram-Schmidt on a Gaussian draw.
fn random_orthogonal(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let mut q: Vec<f64> = (0..d * d).map(|_| rng.sample(StandardNormal)).collect();
        let mut ok = true;
        for r in 0..d {
            for p in 0..r {
                let dot: f64 = (0..d).map(|c| q[r * d + c] * q[p * d + c]).sum();
                for c in 0..d {
                    q[r * d + c] -= dot * q[p * d + c];
                }
            }
            let norm = (0..d).map(|c| q[r * d + c].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for c in 0..d {
                q[r * d + c] /= norm;
            }
        }
        if ok {
            return q;
        }
    }
}

/// Rank-based binning: instance of rank `r` goes to the first class whose
/// cumulative share exceeds `r / n`.
fn quantile_bins(signal: &[f64], shares: &[f64]) -> Vec<usize> {
    let n = signal.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| signal[a].total_cmp(&signal[b]).then(a.cmp(&b)));
    let mut bounds = Vec::with_capacity(shares.len());
    let mut cum = 0.0;
    for s in shares {
        cum += s;
        bounds.push((cum * n as f64).round() as usize);
    }
    *bounds.last_mut().expect("at least two classes") = n;
    let mut labels = vec![0; n];
    let mut class = 0;
    for (rank, &i) in order.iter().enumerate() {
        while rank >= bounds[class] {
            class += 1;
        }
        labels[i] = class;
    }
    labels
}

pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.n_instances;
    let mut signal_rng = seed::rng(spec.seed);
    let signal: Vec<f64> = (0..n).map(|_| signal_rng.sample(StandardNormal)).collect();

    let mut features = Vec::with_capacity(spec.n_modalities());
    for (m, (&d, &a)) in spec.modality_dims.iter().zip(&spec.informativeness).enumerate() {
        let q = random_orthogonal(d, &mut seed::rng(spec.projection_seed(m)));
        let mut noise_rng = seed::rng(seed::derive(spec.seed, 100 + m as u64));
        let mut data = Vec::with_capacity(n * d);
        let mut u = vec![0.0; d];
        for &s in &signal {
            for uj in u.iter_mut() {
                let xi: f64 = noise_rng.sample(StandardNormal);
                *uj = a * s + (1.0 - a) * xi;
            }
            for r in 0..d {
                let v: f64 = (0..d).map(|c| q[r * d + c] * u[c]).sum();
                let eps: f64 = noise_rng.sample(StandardNormal);
                data.push(spec.nonlinearity.apply(v) + spec.noise_sigma * eps);
            }
        }
        features.push(Matrix::new(n, d, data)?);
    }

    let targets = match spec.task {
        Task::Regression => Targets::Regression(signal),
        Task::Classification { n_classes } => {
            let shares = match spec.class_concentration {
                None => vec![1.0 / n_classes as f64; n_classes],
                Some(c) => {
                    let gamma = Gamma::new(c, 1.0).map_err(|e| Error::InvalidSpec(e.to_string()))?;
                    let mut rng = seed::rng(seed::derive(spec.seed, 200));
                    let draws: Vec<f64> = (0..n_classes).map(|_| gamma.sample(&mut rng).max(1e-12)).collect();
                    let total: f64 = draws.iter().sum();
                    draws.iter().map(|g| g / total).collect()
                }
            };
            Targets::Classification {
                labels: quantile_bins(&signal, &shares),
                n_classes,
            }
        }
    };
    let mut ds = Dataset::new(features, targets)?;
    ds.spec = Some(spec.clone());
    Ok(ds)
}

/// Seeded permutation, then contiguous train/val/test blocks. Train and val
/// sizes are `round(fraction · n)`; test takes the rest.
pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Dataset> {
    if fractions.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "split fractions {fractions:?} must all be positive"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("split fractions sum to {total}, not 1")));
    }
    let n = dataset.n_instances();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = (fractions[1] * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::InvalidInput(format!(
            "fractions {fractions:?} leave an empty split for {n} instances"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed));
    let mut out = dataset.clone();
    for (pos, &i) in perm.iter().enumerate() {
        out.tags[i] = if pos < n_train {
            SplitTag::Train
        } else if pos < n_train + n_val {
            SplitTag::Val
        } else {
            SplitTag::Test
        };
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct Meta {
    format: String,
    n_instances: usize,
    modality_dims: Vec<usize>,
    #[serde(with = "task_text")]
    task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec: Option<SyntheticSpec>,
    counts: SplitCounts,
    splits: Vec<SplitTag>,
}

#[derive(Serialize, Deserialize)]
struct SplitCounts {
    train: usize,
    val: usize,
    test: usize,
}

const DATASET_FORMAT: &str = "btw-dataset-1";

fn write_matrix(path: &Path, rows: usize, cols: usize, values: impl Iterator<Item = f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let go = || -> std::io::Result<()> {
        out.write_all(&(rows as u64).to_le_bytes())?;
        out.write_all(&(cols as u64).to_le_bytes())?;
        for v in values {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()
    };
    go().map_err(|e| Error::io(path, e))
}

fn read_matrix(path: &Path) -> Result<Matrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::format(path, "missing shape header"));
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if rows.checked_mul(cols).and_then(|c| c.checked_mul(8)) != Some(body.len()) {
        return Err(Error::format(
            path,
            format!("header says {rows}x{cols} but {} data bytes follow", body.len()),
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Matrix::new(rows, cols, data)
}

/// Writes `meta.json`, `modality_<m>.bin` and `targets.bin` into `dir`
/// (created if missing). Each `.bin` is `u64 rows, u64 cols` then row-major
/// `f64`, all little-endian.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = dataset.n_instances();
    for (m, f) in dataset.features.iter().enumerate() {
        write_matrix(
            &dir.join(format!("modality_{m}.bin")),
            f.rows(),
            f.cols(),
            f.data().iter().copied(),
        )?;
    }
    let target_values: Vec<f64> = match &dataset.targets {
        Targets::Regression(y) => y.clone(),
        Targets::Classification { labels, .. } => labels.iter().map(|&l| l as f64).collect(),
    };
    write_matrix(&dir.join("targets.bin"), n, 1, target_values.into_iter())?;
    let count = |t| dataset.tags.iter().filter(|x| **x == t).count();
    let meta = Meta {
        format: DATASET_FORMAT.into(),
        n_instances: n,
        modality_dims: dataset.modality_dims(),
        task: dataset.task(),
        spec: dataset.spec.clone(),
        counts: SplitCounts {
            train: count(SplitTag::Train),
            val: count(SplitTag::Val),
            test: count(SplitTag::Test),
        },
        splits: dataset.tags.clone(),
    };
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::format(&path, e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if meta.format != DATASET_FORMAT {
        return Err(Error::format(
            &path,
            format!("unknown dataset format `{}`", meta.format),
        ));
    }
    let n = meta.n_instances;
    let mut features = Vec::with_capacity(meta.modality_dims.len());
    for (m, &d) in meta.modality_dims.iter().enumerate() {
        let p = dir.join(format!("modality_{m}.bin"));
        let f = read_matrix(&p)?;
        if f.rows() != n || f.cols() != d {
            return Err(Error::format(
                &p,
                format!("expected {n}x{d}, found {}x{}", f.rows(), f.cols()),
            ));
        }
        features.push(f);
    }
    let tp = dir.join("targets.bin");
    let t = read_matrix(&tp)?;
    if t.rows() != n || t.cols() != 1 {
        return Err(Error::format(
            &tp,
            format!("expected {n}x1, found {}x{}", t.rows(), t.cols()),
        ));
    }
    let targets = match meta.task {
        Task::Regression => Targets::Regression(t.data().to_vec()),
        Task::Classification { n_classes } => {
            let labels = t
                .data()
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 && (v as usize) < n_classes {
                        Ok(v as usize)
                    } else {
                        Err(Error::format(
                            &tp,
                            format!("label {v} is not a class index below {n_classes}"),
                        ))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Targets::Classification { labels, n_classes }
        }
    };
    if meta.splits.len() != n {
        return Err(Error::format(
            &path,
            format!("{} split tags for {n} instances", meta.splits.len()),
        ));
    }
    let mut ds = Dataset::new(features, targets)?;
    ds.tags = meta.splits;
    ds.spec = meta.spec;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(inf: Vec<f64>, task: Task) -> SyntheticSpec {
        SyntheticSpec {
            n_instances: 400,
            modality_dims: vec![4; inf.len()],
            informativeness: inf,
            noise_sigma: 0.1,
            task,
            nonlinearity: Nonlinearity::Linear,
            seed: 7,
            stream_seeds: None,
            class_concentration: None,
        }
    }

    #[test]
    fn orthogonal_projection() {
        let d = 6;
        let q = random_orthogonal(d, &mut seed::rng(3));
        for a in 0..d {
            for b in 0..d {
                let dot: f64 = (0..d).map(|c| q[a * d + c] * q[b * d + c]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spec_validation() {
        let ok = spec(vec![0.5, 0.0], Task::Regression);
        assert!(ok.validate().is_ok());
        let mut s = ok.clone();
        s.informativeness = vec![0.0, 0.0];
        assert!(matches!(generate(&s), Err(Error::InvalidSpec(_))));
        let mut s = ok.clone();
        s.informativeness = vec![0.5];
        assert!(s.validate().is_err());
        let mut s = ok.clone();
        s.informativeness = vec![1.5, 0.0];
        assert!(s.validate().is_err());
        let mut s = ok.clone();
        s.noise_sigma = -1.0;
        assert!(s.validate().is_err());
        let mut s = ok;
        s.class_concentration = Some(1.0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(vec![0.9, 0.2], Task::Classification { n_classes: 3 });
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let mut other = s.clone();
        other.seed = 8;
        assert_ne!(generate(&s).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn balanced_classes() {
        let mut s = spec(vec![1.0], Task::Classification { n_classes: 4 });
        s.n_instances = 4000;
        let ds = generate(&s).unwrap();
        let Targets::Classification { labels, .. } = ds.targets() else {
            panic!()
        };
        for c in 0..4 {
            let count = labels.iter().filter(|&&l| l == c).count();
            assert!(count.abs_diff(1000) <= 1, "class {c}: {count}");
        }
    }

    #[test]
    fn binning_follows_the_signal() {
        let labels = quantile_bins(&[0.3, -1.0, 2.0, 0.0], &[0.5, 0.5]);
        assert_eq!(labels, vec![1, 0, 1, 0]);
    }

    #[test]
    fn dirichlet_priors_unbalance_classes() {
        let mut s = spec(vec![1.0], Task::Classification { n_classes: 4 });
        s.n_instances = 2000;
        s.class_concentration = Some(0.5);
        let ds = generate(&s).unwrap();
        let Targets::Classification { labels, .. } = ds.targets() else {
            panic!()
        };
        let counts: Vec<usize> = (0..4).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
        assert_eq!(counts.iter().sum::<usize>(), 2000);
        assert!(counts.iter().any(|c| c.abs_diff(500) > 50), "{counts:?}");
    }

    #[test]
    fn split_sizes_and_determinism() {
        let mut s = spec(vec![1.0], Task::Regression);
        s.n_instances = 1000;
        let ds = generate(&s).unwrap();
        let a = split(&ds, [0.8, 0.1, 0.1], 5).unwrap();
        assert_eq!(a.indices(SplitTag::Train).len(), 800);
        assert_eq!(a.indices(SplitTag::Val).len(), 100);
        assert_eq!(a.indices(SplitTag::Test).len(), 100);
        assert_eq!(a.tags(), split(&ds, [0.8, 0.1, 0.1], 5).unwrap().tags());
        assert_ne!(a.tags(), split(&ds, [0.8, 0.1, 0.1], 6).unwrap().tags());
        assert!(matches!(split(&ds, [1.0, 0.0, 0.0], 5), Err(Error::InvalidInput(_))));
        assert!(split(&ds, [0.5, 0.2, 0.2], 5).is_err());
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for task in [Task::Regression, Task::Classification { n_classes: 3 }] {
            let ds = split(&generate(&spec(vec![0.7, 0.3], task)).unwrap(), [0.6, 0.2, 0.2], 1).unwrap();
            let sub = dir.path().join(task.to_string().replace(':', "_"));
            save_dataset(&ds, &sub).unwrap();
            assert_eq!(load_dataset(&sub).unwrap(), ds);
        }
    }

    #[test]
    fn corrupt_matrix_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&spec(vec![1.0], Task::Regression)).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let p = dir.path().join("modality_0.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));
    }
}
