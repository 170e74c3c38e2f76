use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ClassificationTask, LocalizationTask, MultipathTask, OodGenerator};
use crate::error::{Error, Result};
use crate::models::{Model, ModelFamily, ModelSpec};
use crate::objectives::{LossFamily, Objective, ObjectiveSpec};
use crate::trainer::TrainConfig;
use crate::variational::GaussianPrior;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    ChannelGainDensity,
    SyntheticAmc,
    SyntheticLocalization,
    ChannelVae,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::ChannelGainDensity => "channel-gain-density",
            TaskKind::SyntheticAmc => "synthetic-amc",
            TaskKind::SyntheticLocalization => "synthetic-localization",
            TaskKind::ChannelVae => "channel-vae",
        }
    }

    fn model_family(self) -> ModelFamily {
        match self {
            TaskKind::ChannelGainDensity => ModelFamily::GaussianLocation,
            TaskKind::SyntheticAmc => ModelFamily::MlpClassifier,
            TaskKind::SyntheticLocalization => ModelFamily::MlpRegressor,
            TaskKind::ChannelVae => ModelFamily::Vae,
        }
    }

    fn loss_family(self) -> LossFamily {
        match self {
            TaskKind::ChannelGainDensity => LossFamily::Density,
            TaskKind::SyntheticAmc | TaskKind::SyntheticLocalization => LossFamily::Discriminative,
            TaskKind::ChannelVae => LossFamily::Vae,
        }
    }

    fn default_ood(self) -> Option<&'static str> {
        match self {
            TaskKind::ChannelGainDensity => None,
            TaskKind::SyntheticAmc => Some("interference"),
            TaskKind::SyntheticLocalization => Some("uniform-target"),
            TaskKind::ChannelVae => Some("wide-delay"),
        }
    }

    fn metrics(self) -> &'static [Metric] {
        match self {
            TaskKind::ChannelGainDensity => &[Metric::Nll, Metric::DensityAtOutliers],
            TaskKind::SyntheticAmc => &[Metric::Accuracy, Metric::Ece, Metric::Nll],
            TaskKind::SyntheticLocalization => &[Metric::Mse, Metric::Nll],
            TaskKind::ChannelVae => &[Metric::Mmd, Metric::Auroc, Metric::Nll],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Accuracy,
    Ece,
    Mse,
    Nll,
    Mmd,
    Auroc,
    DensityAtOutliers,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Ece => "ece",
            Metric::Mse => "mse",
            Metric::Nll => "nll",
            Metric::Mmd => "mmd",
            Metric::Auroc => "auroc",
            Metric::DensityAtOutliers => "density_at_outliers",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationConfig {
    #[serde(default)]
    pub epsilon: f64,
    /// Defaults to the task's usual outlier mechanism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood: Option<String>,
}

/// Sizes either as `n` with a train fraction (default one half) or as explicit `n_train`/`n_test`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contamination: Option<ContaminationConfig>,
    /// Extra training rows appended after contamination, flagged as outliers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outliers: Vec<Vec<f64>>,
    /// Size of the out-of-distribution test set (VAE only; defaults to the clean test size).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_ood_test: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localization: Option<LocalizationTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multipath: Option<MultipathTask>,
}

impl DataConfig {
    /// `(n_train, n_test)`.
    pub fn sizes(&self) -> Result<(usize, usize)> {
        let (tr, te) =
            match (self.n, self.n_train, self.n_test) {
                (Some(n), None, None) => {
                    let f = self.train_fraction.unwrap_or(0.5);
                    if !(f > 0.0 && f < 1.0) {
                        return Err(Error::config("data.train_fraction must lie in (0, 1)"));
                    }
                    let tr = ((n as f64) * f).round() as usize;
                    (tr, n.saturating_sub(tr))
                }
                (None, Some(tr), Some(te)) if self.train_fraction.is_none() => (tr, te),
                _ => return Err(Error::config(
                    "data needs either n (with optional train_fraction) or both n_train and n_test",
                )),
            };
        if tr == 0 || te == 0 {
            return Err(Error::config("data sizes give an empty train or test set"));
        }
        Ok((tr, te))
    }

    pub fn epsilon(&self) -> f64 {
        self.contamination.as_ref().map_or(0.0, |c| c.epsilon)
    }

    pub fn classification(&self) -> ClassificationTask {
        self.classification.clone().unwrap_or_default()
    }

    pub fn localization(&self) -> LocalizationTask {
        self.localization.clone().unwrap_or_default()
    }

    pub fn multipath(&self) -> MultipathTask {
        self.multipath.clone().unwrap_or_default()
    }

    pub fn ood(&self, task: TaskKind) -> Result<Option<OodGenerator>> {
        let name = self
            .contamination
            .as_ref()
            .and_then(|c| c.ood.as_deref())
            .or(task.default_ood());
        name.map(|n| OodGenerator::from_name(n, Some(&self.multipath())))
            .transpose()
    }
}

/// Grid over `(m, t, ε)`. Cells are `pairs` when given, else the product `m × t`,
/// repeated for every `ε`. `frequentist` adds one point-mass cell per `ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub m: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub t: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<(usize, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epsilon: Vec<f64>,
    pub beta: f64,
    pub family: LossFamily,
    #[serde(default)]
    pub frequentist: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

fn default_test_m() -> usize {
    10
}
fn default_bins() -> usize {
    crate::metrics::DEFAULT_BINS
}
fn default_latent_draws() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_test_m")]
    pub test_m: usize,
    /// Defaults to the training seed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    /// Defaults to every metric that applies to the task.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub metrics: Vec<Metric>,
    /// Report the mean squared error norm instead of the mean error norm.
    #[serde(default)]
    pub squared_mse: bool,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Density grid for one-dimensional tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    /// Latent draws per decoder for the VAE density score.
    #[serde(default = "default_latent_draws")]
    pub latent_draws: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            test_m: default_test_m(),
            seeds: vec![],
            metrics: vec![],
            squared_mse: false,
            bins: default_bins(),
            grid: None,
            latent_draws: default_latent_draws(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub task: TaskKind,
    pub data: DataConfig,
    pub model: ModelSpec,
    /// Defaults to `N(0, I)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<GaussianPrior>,
    /// A single criterion; exclusive with `sweep`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// One grid cell: a criterion and the contamination level of its training data.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub spec: ObjectiveSpec,
    pub epsilon: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn prior(&self) -> GaussianPrior {
        self.prior.clone().unwrap_or_else(GaussianPrior::standard)
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.eval.seeds.is_empty() {
            vec![self.training.seed]
        } else {
            self.eval.seeds.clone()
        }
    }

    pub fn metrics(&self) -> Vec<Metric> {
        if self.eval.metrics.is_empty() {
            self.task.metrics().to_vec()
        } else {
            self.eval.metrics.clone()
        }
    }

    pub fn build_model(&self) -> Result<Model> {
        self.model.build().map_err(as_config)
    }

    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut specs: Vec<(ObjectiveSpec, f64)> = Vec::new();
        match (&self.objective, &self.sweep) {
            (Some(spec), None) => specs.push((*spec, self.data.epsilon())),
            (None, Some(g)) => {
                let eps = if g.epsilon.is_empty() {
                    vec![self.data.epsilon()]
                } else {
                    g.epsilon.clone()
                };
                let pairs: Vec<(usize, f64)> = if !g.pairs.is_empty() {
                    if !g.m.is_empty() || !g.t.is_empty() {
                        return Err(Error::config(
                            "sweep: give either pairs or m and t, not both",
                        ));
                    }
                    g.pairs.clone()
                } else {
                    g.m.iter()
                        .flat_map(|&m| g.t.iter().map(move |&t| (m, t)))
                        .collect()
                };
                if pairs.is_empty() && !g.frequentist {
                    return Err(Error::config("sweep grid is empty"));
                }
                for &e in &eps {
                    if g.frequentist {
                        specs.push((
                            ObjectiveSpec::new(1, 1.0, g.beta, g.family, true)
                                .map_err(as_config)?,
                            e,
                        ));
                    }
                    for &(m, t) in &pairs {
                        let s = ObjectiveSpec::new(m, t, g.beta, g.family, false).map_err(|e| {
                            Error::config(format!("sweep cell (m={m}, t={t}): {e}"))
                        })?;
                        specs.push((s, e));
                    }
                }
            }
            _ => {
                return Err(Error::config(
                    "exactly one of objective and sweep is required",
                ))
            }
        }
        Ok(specs
            .into_iter()
            .enumerate()
            .map(|(index, (spec, epsilon))| Cell {
                index,
                spec,
                epsilon,
            })
            .collect())
    }

    /// Checks every field and every cell's criterion against the model.
    pub fn validate(&self) -> Result<()> {
        if self.model.family != self.task.model_family() {
            return Err(Error::config(format!(
                "model.family {:?} does not fit task {}",
                self.model.family,
                self.task.name()
            )));
        }
        let model = self.build_model()?;
        self.data.sizes()?;
        self.training.validate()?;
        let prior = self.prior();
        prior.validate().map_err(as_config)?;
        self.data.ood(self.task)?;
        for cell in self.cells()? {
            if cell.spec.family != self.task.loss_family() {
                return Err(Error::config(format!(
                    "objective family {:?} does not fit task {}",
                    cell.spec.family,
                    self.task.name()
                )));
            }
            if !(0.0..1.0).contains(&cell.epsilon) {
                return Err(Error::config(format!(
                    "epsilon must lie in [0, 1), got {}",
                    cell.epsilon
                )));
            }
            Objective::new(cell.spec, &model, &prior).map_err(as_config)?;
        }
        if self.eval.test_m == 0 {
            return Err(Error::config("eval.test_m must be at least 1"));
        }
        if self.eval.bins == 0 || self.eval.latent_draws == 0 {
            return Err(Error::config(
                "eval.bins and eval.latent_draws must be at least 1",
            ));
        }
        let allowed = self.task.metrics();
        if let Some(m) = self.metrics().iter().find(|m| !allowed.contains(m)) {
            return Err(Error::config(format!(
                "metric {} does not apply to task {}",
                m.name(),
                self.task.name()
            )));
        }
        if let Some(g) = &self.eval.grid {
            if self.task != TaskKind::ChannelGainDensity {
                return Err(Error::config(
                    "eval.grid applies only to one-dimensional density tasks",
                ));
            }
            if !(g.hi > g.lo) || g.points < 2 {
                return Err(Error::config(
                    "eval.grid needs hi > lo and at least 2 points",
                ));
            }
        }
        let dx = match &model {
            Model::GaussianLocation(_) => 1,
            Model::Classifier(c) => c.net.input_dim(),
            Model::Regressor(r) => r.net.input_dim(),
            Model::Vae(v) => v.input_dim(),
        };
        match self.task {
            TaskKind::SyntheticAmc => {
                let c = self.data.classification();
                if let Model::Classifier(m) = &model {
                    if c.dim != dx || c.classes != m.classes() {
                        return Err(Error::config(
                            "model widths do not match the classification task",
                        ));
                    }
                }
            }
            TaskKind::SyntheticLocalization => {
                if self.data.localization().anchors != dx {
                    return Err(Error::config(
                        "model input width must equal the anchor count",
                    ));
                }
                if let Model::Regressor(r) = &model {
                    if r.net.output_dim() != 2 {
                        return Err(Error::config(
                            "localization regressor must output 2 coordinates",
                        ));
                    }
                }
            }
            TaskKind::ChannelVae => {
                if self.data.multipath().samples != dx {
                    return Err(Error::config(
                        "VAE input width must equal the profile length",
                    ));
                }
            }
            TaskKind::ChannelGainDensity => {}
        }
        if self.data.outliers.iter().any(|o| o.len() != dx) {
            return Err(Error::config(format!(
                "data.outliers rows must have {dx} entries"
            )));
        }
        if !self.data.outliers.is_empty() && self.task != TaskKind::ChannelGainDensity {
            return Err(Error::config(
                "data.outliers applies only to unlabeled density tasks",
            ));
        }
        Ok(())
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::config(other.to_string()),
    }
}
