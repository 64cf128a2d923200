//! Train / predict API and model persistence.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cpd::CpdWeights;
use crate::data::{
    destandardize, fit_scaler, mean_column_std, standardize_targets, Dataset, Scaler,
    DEFAULT_MARGIN,
};
use crate::features::{FeatureConfig};
use crate::solver::{train, TrainConfig};
use crate::{Error, Result};

/// Version written into every saved model.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    /// Binary labels in `{-1, +1}`; the model regresses the labels and
    /// predicts with the sign of its output.
    Classification,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        }
    }
}

/// How the regularization weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LambdaRule {
    /// Use `TrainConfig::lambda` as given.
    #[default]
    Fixed,
    /// `λ = c / N` with `N` the number of training rows.
    InverseSampleSize(f64),
}

/// Choices made around the solver when fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Inferred from the targets when `None`.
    pub task: Option<Task>,
    /// Lengthscale in scaled-input units; mean column standard deviation of
    /// the scaled training inputs when `None`.
    pub lengthscale: Option<f64>,
    pub lambda_rule: LambdaRule,
    pub margin: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            task: None,
            lengthscale: None,
            lambda_rule: LambdaRule::Fixed,
            margin: DEFAULT_MARGIN,
        }
    }
}

/// Training diagnostics returned next to the model.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub loss_trace: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TkrrModel {
    scaler: Scaler,
    feature_config: FeatureConfig,
    weights: CpdWeights,
    task: Task,
    /// Configuration the weights were trained with, `lambda` resolved.
    train_config: TrainConfig,
}

/// `+1` for non-negative scores, `-1` otherwise.
pub fn sign_label(score: f64) -> f64 {
    if score >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Scales `dataset`, standardizes regression targets and trains.
pub fn fit(
    dataset: &Dataset,
    train_config: &TrainConfig,
    options: &FitOptions,
) -> Result<(TkrrModel, FitReport)> {
    let task = match options.task {
        Some(t) => t,
        None if dataset.has_binary_labels() => Task::Classification,
        None => Task::Regression,
    };
    if task == Task::Classification && !dataset.has_binary_labels() {
        return Err(Error::InvalidInput(
            "classification targets must all be -1 or +1".into(),
        ));
    }
    let mut scaler = fit_scaler(dataset, options.margin)?;
    let y = match task {
        Task::Regression => {
            let (z, mean, std) = standardize_targets(dataset.y());
            scaler.target_mean = mean;
            scaler.target_std = std;
            z
        }
        Task::Classification => {
            scaler = scaler.with_identity_targets();
            dataset.y().clone()
        }
    };
    let scaled = scaler.apply(dataset.x())?;
    let lengthscale = match options.lengthscale {
        Some(l) => l,
        None => {
            let l = mean_column_std(&scaled.x);
            if l <= 0.0 {
                return Err(Error::InvalidInput(
                    "all input columns are constant; give the lengthscale explicitly".into(),
                ));
            }
            l
        }
    };
    let feature_config = FeatureConfig::new(train_config.m_hat, lengthscale, scaler.half_widths())?;
    let mut config = train_config.clone();
    if let LambdaRule::InverseSampleSize(c) = options.lambda_rule {
        config.lambda = c / dataset.len() as f64;
    }
    let outcome = train(&scaled.x, &y, &feature_config, &config)?;
    let model = TkrrModel {
        scaler,
        feature_config,
        weights: outcome.weights,
        task,
        train_config: config,
    };
    let report = FitReport {
        loss_trace: outcome.loss_trace,
        initial_loss: outcome.initial_loss,
        final_loss: outcome.final_loss,
    };
    Ok((model, report))
}

impl TkrrModel {
    /// Assembles a model from parts, checking that they agree.
    pub fn from_parts(
        scaler: Scaler,
        feature_config: FeatureConfig,
        weights: CpdWeights,
        task: Task,
        train_config: TrainConfig,
    ) -> Result<Self> {
        if feature_config.dims() != weights.dims() || scaler.dims() != weights.dims() {
            return Err(Error::ShapeMismatch(format!(
                "scaler has {} dims, features {}, weights {}",
                scaler.dims(),
                feature_config.dims(),
                weights.dims()
            )));
        }
        if feature_config.m_hat() != weights.m_hat() {
            return Err(Error::ShapeMismatch(format!(
                "features use M̂={} but factors have {} rows",
                feature_config.m_hat(),
                weights.m_hat()
            )));
        }
        Ok(Self {
            scaler,
            feature_config,
            weights,
            task,
            train_config,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        &self.feature_config
    }

    pub fn weights(&self) -> &CpdWeights {
        &self.weights
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train_config
    }

    pub fn dims(&self) -> usize {
        self.weights.dims()
    }

    /// Model outputs `⟨W, Z(x)⟩_F` for inputs already in the feature domain.
    pub fn scores_scaled(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: x.ncols(),
            });
        }
        let cfg = &self.feature_config;
        let amplitudes: Vec<Vec<f64>> = (0..self.dims())
            .map(|d| cfg.amplitudes(cfg.half_width(d)))
            .collect();
        let rank = self.weights.rank();
        let mut z = vec![0.0; cfg.m_hat()];
        let mut out = DVector::zeros(x.nrows());
        for n in 0..x.nrows() {
            let mut prod = vec![1.0; rank];
            for d in 0..self.dims() {
                crate::features::features_into(
                    x[(n, d)],
                    cfg.half_width(d),
                    &amplitudes[d],
                    &mut z,
                )?;
                let w = self.weights.factor(d);
                for (r, p) in prod.iter_mut().enumerate() {
                    let col = w.column(r);
                    *p *= z.iter().zip(col.iter()).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            out[n] = prod.iter().sum();
        }
        Ok(out)
    }

    /// Predictions on the raw target scale plus the number of input entries
    /// clipped into the feature domain.
    pub fn predict_with_clipping(&self, x_raw: &DMatrix<f64>) -> Result<(DVector<f64>, usize)> {
        let scaled = self.scaler.apply(x_raw)?;
        let scores = self.scores_scaled(&scaled.x)?;
        let pred = destandardize(&scores, self.scaler.target_mean, self.scaler.target_std);
        Ok((pred, scaled.clipped))
    }

    /// Raw-scale predictions (regression) or raw scores (classification).
    pub fn predict(&self, x_raw: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.predict_with_clipping(x_raw)?.0)
    }

    /// Labels in `{-1, +1}`; a score of exactly zero maps to `+1`.
    pub fn classify(&self, x_raw: &DMatrix<f64>) -> Result<DVector<f64>> {
        if self.task != Task::Classification {
            return Err(Error::TaskMismatch {
                expected: "classification",
            });
        }
        Ok(self.predict(x_raw)?.map(sign_label))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            schema_version: SCHEMA_VERSION,
            task: self.task,
            scaler: self.scaler.clone(),
            feature_config: self.feature_config.clone(),
            train_config: self.train_config.clone(),
            factors: self
                .weights
                .factors()
                .iter()
                .map(|f| {
                    f.row_iter()
                        .map(|row| row.iter().copied().collect())
                        .collect()
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str(text).map_err(json_error)?;
        if probe.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: probe.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let file: ModelFile = serde_json::from_str(text).map_err(json_error)?;
        let fc = &file.feature_config;
        let feature_config = FeatureConfig::new(fc.m_hat(), fc.lengthscale(), fc.half_widths().to_vec())?;
        let factors = file
            .factors
            .iter()
            .enumerate()
            .map(|(d, rows)| {
                let nrows = rows.len();
                let ncols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != ncols) {
                    return Err(Error::Model(format!("factor {d} has ragged rows")));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = CpdWeights::from_factors(factors).map_err(|e| Error::Model(e.to_string()))?;
        if file.scaler.input_max.len() != file.scaler.input_min.len() {
            return Err(Error::Model("scaler min/max lengths differ".into()));
        }
        Self::from_parts(file.scaler, feature_config, weights, file.task, file.train_config)
            .map_err(|e| Error::Model(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line() as u64,
        message: e.to_string(),
    }
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

/// On-disk layout. Factors are `D` nested row-major `M̂ × R` arrays.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    task: Task,
    scaler: Scaler,
    feature_config: FeatureConfig,
    train_config: TrainConfig,
    factors: Vec<Vec<Vec<f64>>>,
}
