//! Experiment configuration and its flat `key=value` text form.
//!
//! ```text
//! # comment
//! seed=0
//! variant=btw
//! schedule.epochs_weighted=8
//! moe.n_experts=4
//! data.informativeness=0.9,0.5,0.0
//! ```
//!
//! Unknown keys and malformed values are errors that name the line and key.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::seed;
use crate::synthdata::{Nonlinearity, SyntheticSpec};
use crate::tinymoe::{MoeConfig, Pooling, Task};
use crate::weights::AlphaSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Unweighted,
    BtwLocal,
    BtwGlobalKl,
    BtwGlobalMi,
    Btw,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Unweighted,
        Variant::BtwLocal,
        Variant::BtwGlobalKl,
        Variant::BtwGlobalMi,
        Variant::Btw,
    ];

    pub fn needs_mi(self) -> bool {
        matches!(self, Variant::BtwGlobalMi | Variant::Btw)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Unweighted => "unweighted",
            Variant::BtwLocal => "btw_local",
            Variant::BtwGlobalKl => "btw_global_kl",
            Variant::BtwGlobalMi => "btw_global_mi",
            Variant::Btw => "btw",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == s.trim())
            .ok_or_else(|| {
                format!(
                    "unknown variant `{}` (expected unweighted, btw_local, btw_global_kl, btw_global_mi or btw)",
                    s.trim()
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub epochs_unimodal: usize,
    pub epochs_warm: usize,
    pub epochs_weighted: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            epochs_unimodal: 10,
            epochs_warm: 2,
            epochs_weighted: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// A dataset directory written by [`crate::synthdata::save_dataset`].
    Path(PathBuf),
}

/// Test-only switches for checking that the weighting reduces to simpler
/// forms. Not reachable from the text format.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Hooks {
    /// Replace the estimated MI with a constant vector.
    pub force_uniform_mi: bool,
    /// Apply multiplier 1 to every embedding regardless of the weights.
    pub force_unit_weights: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub variant: Variant,
    pub schedule: Schedule,
    pub lr: f64,
    pub batch_size: usize,
    /// Architecture; `input_dims` and `task` are overwritten from the data.
    pub moe: MoeConfig,
    pub data: DataSource,
    /// Train / val / test shares. Ignored for a dataset path that already
    /// carries split tags.
    pub split_fractions: [f64; 3],
    pub smoothing: AlphaSchedule,
    pub knn_k: usize,
    pub prenormalize_bilevel: bool,
    pub hooks: Hooks,
}

impl ExperimentConfig {
    /// The bundled default: three 16-dimensional modalities with
    /// informativeness 0.9, 0.5 and 0.0, regression, 2000 instances.
    pub fn noise_default(seed: u64) -> Self {
        let data = SyntheticSpec::desk_scale(vec![0.9, 0.5, 0.0], Task::Regression, seed::derive(seed, seed::DATA));
        Self {
            seed,
            variant: Variant::Btw,
            schedule: Schedule::default(),
            lr: 0.01,
            batch_size: 32,
            moe: MoeConfig::desk_scale(data.modality_dims.clone(), Task::Regression),
            data: DataSource::Synthetic(data),
            split_fractions: [0.8, 0.1, 0.1],
            smoothing: AlphaSchedule::default(),
            knn_k: crate::miest::DEFAULT_K,
            prenormalize_bilevel: false,
            hooks: Hooks::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be at least 1".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::InvalidInput("weights.knn_k must be at least 1".into()));
        }
        self.smoothing.validate()?;
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    /// With a different seed. A synthetic data seed that was derived from the
    /// old experiment seed follows it.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        if let DataSource::Synthetic(spec) = &mut c.data {
            if spec.seed == seed::derive(self.seed, seed::DATA) {
                spec.seed = seed::derive(seed, seed::DATA);
            }
        }
        c.seed = seed;
        c
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::noise_default(0);
        let mut data_seed: Option<u64> = None;
        let mut data_path: Option<PathBuf> = None;
        let mut spec = match &cfg.data {
            DataSource::Synthetic(s) => s.clone(),
            DataSource::Path(_) => unreachable!("default is synthetic"),
        };
        let mut dims_given = false;
        let mut last_line = 0;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            last_line = line;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                field: content.to_string(),
                message: "expected key=value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let err = |message: String| Error::Parse {
                line,
                field: key.to_string(),
                message,
            };
            fn num<T: FromStr>(v: &str) -> std::result::Result<T, String>
            where
                T::Err: fmt::Display,
            {
                v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
            }
            fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
            where
                T::Err: fmt::Display,
            {
                v.split(',').map(|x| num(x.trim())).collect()
            }
            fn flag(v: &str) -> std::result::Result<bool, String> {
                match v {
                    "true" | "1" => Ok(true),
                    "false" | "0" => Ok(false),
                    _ => Err(format!("`{v}` is not a boolean")),
                }
            }

            let r: std::result::Result<(), String> = (|| {
                match key {
                    "seed" => cfg.seed = num(value)?,
                    "variant" => cfg.variant = value.parse()?,
                    "schedule.epochs_unimodal" => cfg.schedule.epochs_unimodal = num(value)?,
                    "schedule.epochs_warm" => cfg.schedule.epochs_warm = num(value)?,
                    "schedule.epochs_weighted" => cfg.schedule.epochs_weighted = num(value)?,
                    "train.lr" => cfg.lr = num(value)?,
                    "train.batch_size" => cfg.batch_size = num(value)?,
                    "moe.embed_dim" => cfg.moe.embed_dim = num(value)?,
                    "moe.n_experts" => cfg.moe.n_experts = num(value)?,
                    "moe.top_k" => cfg.moe.top_k = num(value)?,
                    "moe.expert_hidden" => cfg.moe.expert_hidden = num(value)?,
                    "moe.n_moe_layers" => cfg.moe.n_moe_layers = num(value)?,
                    "moe.pooling" => cfg.moe.pooling = value.parse::<Pooling>()?,
                    "data.path" => data_path = Some(PathBuf::from(value)),
                    "data.n_instances" => spec.n_instances = num(value)?,
                    "data.modality_dims" => {
                        spec.modality_dims = list(value)?;
                        dims_given = true;
                    }
                    "data.informativeness" => spec.informativeness = list(value)?,
                    "data.noise_sigma" => spec.noise_sigma = num(value)?,
                    "data.task" => spec.task = value.parse::<Task>()?,
                    "data.nonlinearity" => spec.nonlinearity = value.parse::<Nonlinearity>()?,
                    "data.seed" => data_seed = Some(num(value)?),
                    "data.stream_seeds" => spec.stream_seeds = Some(list(value)?),
                    "data.class_concentration" => spec.class_concentration = Some(num(value)?),
                    "split.fractions" => {
                        let f: Vec<f64> = list(value)?;
                        cfg.split_fractions = f
                            .try_into()
                            .map_err(|f: Vec<f64>| format!("expected three fractions, got {}", f.len()))?;
                    }
                    "smoothing.alpha_initial" => cfg.smoothing.initial = num(value)?,
                    "smoothing.step" => cfg.smoothing.step = num(value)?,
                    "smoothing.min" => cfg.smoothing.min = num(value)?,
                    "smoothing.max" => cfg.smoothing.max = num(value)?,
                    "weights.knn_k" => cfg.knn_k = num(value)?,
                    "weights.prenormalize_bilevel" => cfg.prenormalize_bilevel = flag(value)?,
                    _ => return Err("unknown key".into()),
                }
                Ok(())
            })();
            r.map_err(err)?;
        }

        if !dims_given && spec.modality_dims.len() != spec.informativeness.len() {
            spec.modality_dims = vec![16; spec.informativeness.len()];
        }
        spec.seed = data_seed.unwrap_or_else(|| seed::derive(cfg.seed, seed::DATA));
        cfg.moe.input_dims = spec.modality_dims.clone();
        cfg.moe.task = spec.task;
        cfg.data = match data_path {
            Some(p) => DataSource::Path(p),
            None => DataSource::Synthetic(spec),
        };
        cfg.validate().map_err(|e| Error::Parse {
            line: last_line,
            field: "(whole config)".into(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Canonical text form; parsing it gives back an equal config (hooks
    /// aside).
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        s += &format!("seed={}\nvariant={}\n", self.seed, self.variant);
        s += &format!(
            "schedule.epochs_unimodal={}\nschedule.epochs_warm={}\nschedule.epochs_weighted={}\n",
            self.schedule.epochs_unimodal, self.schedule.epochs_warm, self.schedule.epochs_weighted
        );
        s += &format!("train.lr={}\ntrain.batch_size={}\n", self.lr, self.batch_size);
        s += &format!(
            "moe.embed_dim={}\nmoe.n_experts={}\nmoe.top_k={}\nmoe.expert_hidden={}\nmoe.n_moe_layers={}\nmoe.pooling={}\n",
            self.moe.embed_dim, self.moe.n_experts, self.moe.top_k, self.moe.expert_hidden, self.moe.n_moe_layers, self.moe.pooling
        );
        match &self.data {
            DataSource::Path(p) => s += &format!("data.path={}\n", p.display()),
            DataSource::Synthetic(d) => {
                let dims: Vec<String> = d.modality_dims.iter().map(usize::to_string).collect();
                s += &format!(
                    "data.n_instances={}\ndata.modality_dims={}\ndata.informativeness={}\ndata.noise_sigma={}\ndata.task={}\ndata.nonlinearity={}\ndata.seed={}\n",
                    d.n_instances,
                    dims.join(","),
                    join(&d.informativeness),
                    d.noise_sigma,
                    d.task,
                    d.nonlinearity,
                    d.seed
                );
                if let Some(ss) = &d.stream_seeds {
                    let v: Vec<String> = ss.iter().map(u64::to_string).collect();
                    s += &format!("data.stream_seeds={}\n", v.join(","));
                }
                if let Some(c) = d.class_concentration {
                    s += &format!("data.class_concentration={c}\n");
                }
            }
        }
        s += &format!("split.fractions={}\n", join(&self.split_fractions));
        s += &format!(
            "smoothing.alpha_initial={}\nsmoothing.step={}\nsmoothing.min={}\nsmoothing.max={}\n",
            self.smoothing.initial, self.smoothing.step, self.smoothing.min, self.smoothing.max
        );
        s += &format!(
            "weights.knn_k={}\nweights.prenormalize_bilevel={}\n",
            self.knn_k, self.prenormalize_bilevel
        );
        s
    }
}

/// Parses a synthetic data spec file: the `data.*` keys of the experiment
/// format plus an optional top-level `seed` and `split.fractions`.
pub fn parse_data_spec(text: &str) -> Result<(SyntheticSpec, [f64; 3], u64)> {
    let cfg = ExperimentConfig::parse(text)?;
    match cfg.data {
        DataSource::Synthetic(spec) => Ok((spec, cfg.split_fractions, seed::derive(cfg.seed, seed::SPLIT))),
        DataSource::Path(_) => Err(Error::Parse {
            line: 0,
            field: "data.path".into(),
            message: "a data spec must describe synthetic data".into(),
        }),
    }
}
