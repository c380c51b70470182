//! Experiment configuration, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::entropy::RenyiOrder;
use crate::error::{Error, Result};
use crate::gvr::GvrConfig;
use crate::model::Head;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub objective: ObjectiveConfig,
    pub gvr: GvrSpec,
    pub optimizer: OptimizerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("runs"),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            objective: ObjectiveConfig::default(),
            gvr: GvrSpec::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Source: labeled two moons; target: an independent draw, shifted.
    TwoMoons {
        /// Points per domain.
        n: usize,
        noise_sd: f64,
        #[serde(default)]
        shift: ShiftConfig,
    },
    /// Gaussian blobs, one center per class.
    Blobs {
        n: usize,
        centers: Vec<Vec<f64>>,
        sd: f64,
        #[serde(default)]
        shift: ShiftConfig,
    },
    /// IDX image/label files; images are flattened per row.
    Idx {
        source_images: PathBuf,
        source_labels: PathBuf,
        target_images: PathBuf,
        #[serde(default)]
        target_labels: Option<PathBuf>,
        num_classes: usize,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::TwoMoons {
            n: 1000,
            noise_sd: 0.1,
            shift: ShiftConfig::Rotation {
                angle: std::f64::consts::FRAC_PI_4,
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShiftConfig {
    #[default]
    None,
    /// Angle in radians.
    Rotation { angle: f64 },
    Translation { offset: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub bayesian: bool,
    pub m_train: usize,
    pub m_eval: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            bayesian: false,
            m_train: 20,
            m_eval: 100,
        }
    }
}

impl ModelConfig {
    pub fn head(&self) -> Head {
        if self.bayesian {
            Head::Gaussian {
                train_samples: self.m_train,
            }
        } else {
            Head::Deterministic
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    /// `"shannon"`, `"min_entropy"` (or `"inf"`), or a number for a finite α.
    #[serde(serialize_with = "ser_order", deserialize_with = "de_order")]
    pub order: RenyiOrder,
    pub beta: f64,
    pub p_start: f64,
    pub p_end: f64,
    pub class_balanced: bool,
    /// Separate source and target steps instead of one combined step.
    pub alternate: bool,
    pub constraint_c: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            order: RenyiOrder::MinEntropy,
            beta: 0.5,
            p_start: 0.2,
            p_end: 0.8,
            class_balanced: true,
            alternate: false,
            constraint_c: 0.0,
        }
    }
}

impl ObjectiveConfig {
    /// Linear portion schedule; `epoch` counts from 1.
    pub fn portion(&self, epoch: usize, epochs: usize) -> f64 {
        if epochs <= 1 {
            return self.p_end;
        }
        let t = (epoch.saturating_sub(1)) as f64 / (epochs - 1) as f64;
        self.p_start + (self.p_end - self.p_start) * t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GvrSpec {
    /// Unset means on for the self-training objective and off otherwise.
    pub enabled: Option<bool>,
    pub eta: f64,
    pub lambda: f64,
    pub n: usize,
    pub second_order: bool,
}

impl Default for GvrSpec {
    fn default() -> Self {
        let d = GvrConfig::default();
        Self {
            enabled: None,
            eta: d.eta,
            lambda: d.lambda,
            n: d.num_minibatches,
            second_order: d.second_order,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub epochs_pretrain: usize,
    pub epochs_adapt: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs_pretrain: 50,
            epochs_adapt: 50,
            batch_size: 64,
            weight_decay: 1e-4,
        }
    }
}

fn ser_order<S: Serializer>(order: &RenyiOrder, s: S) -> std::result::Result<S::Ok, S::Error> {
    match order {
        RenyiOrder::Alpha(a) => s.serialize_f64(*a),
        RenyiOrder::Shannon => s.serialize_str("shannon"),
        RenyiOrder::MinEntropy => s.serialize_str("min_entropy"),
    }
}

fn de_order<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<RenyiOrder, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    let parsed = match Raw::deserialize(d)? {
        Raw::Num(a) => RenyiOrder::alpha(a),
        Raw::Text(s) => s.parse(),
    };
    parsed.map_err(serde::de::Error::custom)
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub order: Option<RenyiOrder>,
    pub beta: Option<f64>,
    pub gvr: Option<bool>,
    pub lambda: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.output {
            self.output = p.clone();
        }
        if let Some(order) = o.order {
            self.objective.order = order;
        }
        if let Some(b) = o.beta {
            self.objective.beta = b;
        }
        if let Some(g) = o.gvr {
            self.gvr.enabled = Some(g);
        }
        if let Some(l) = o.lambda {
            self.gvr.lambda = l;
        }
        self.validate()
    }

    pub fn gvr_enabled(&self) -> bool {
        self.gvr
            .enabled
            .unwrap_or(self.objective.order == RenyiOrder::MinEntropy)
    }

    pub fn gvr_config(&self) -> GvrConfig {
        GvrConfig {
            eta: self.gvr.eta,
            eta_prime: self.optimizer.lr,
            lambda: self.gvr.lambda,
            num_minibatches: self.gvr.n,
            second_order: self.gvr.second_order,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let opt = &self.optimizer;
        if opt.epochs_pretrain == 0 || opt.epochs_adapt == 0 {
            return bad("epochs_pretrain and epochs_adapt must be ≥ 1".into());
        }
        if opt.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if !(opt.lr > 0.0) || !opt.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", opt.lr));
        }
        if !(opt.weight_decay >= 0.0) || !opt.weight_decay.is_finite() {
            return bad(format!("weight_decay must be ≥ 0, got {}", opt.weight_decay));
        }
        let m = &self.model;
        if m.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if m.m_train == 0 || m.m_eval == 0 {
            return bad("m_train and m_eval must be ≥ 1".into());
        }
        let o = &self.objective;
        o.order.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(o.beta >= 0.0) || !o.beta.is_finite() {
            return bad(format!("beta must be ≥ 0, got {}", o.beta));
        }
        if !(o.constraint_c >= 0.0) || !o.constraint_c.is_finite() {
            return bad(format!("constraint_c must be ≥ 0, got {}", o.constraint_c));
        }
        for (name, p) in [("p_start", o.p_start), ("p_end", o.p_end)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.gvr_enabled() {
            self.gvr_config().validate()?;
        }
        match &self.dataset {
            DatasetConfig::TwoMoons { n, noise_sd, shift } => {
                if *n < 2 || !(*noise_sd >= 0.0) {
                    return bad("two_moons needs n ≥ 2 and noise_sd ≥ 0".into());
                }
                if let ShiftConfig::Translation { offset } = shift {
                    if offset.len() != 2 {
                        return bad("two_moons translation offset must have length 2".into());
                    }
                }
            }
            DatasetConfig::Blobs { n, centers, sd, shift } => {
                if centers.len() < 2 || *n < centers.len() || !(*sd >= 0.0) {
                    return bad("blobs needs ≥ 2 centers, n ≥ #centers and sd ≥ 0".into());
                }
                if matches!(shift, ShiftConfig::Rotation { .. }) && centers[0].len() != 2 {
                    return bad("rotation shift needs 2-D blobs".into());
                }
            }
            DatasetConfig::Idx { num_classes, .. } => {
                if *num_classes < 2 {
                    return bad("idx num_classes must be ≥ 2".into());
                }
            }
        }
        Ok(())
    }
}
