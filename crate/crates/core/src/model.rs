//! Model specifications shared by fitting, cross-validation and prediction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, FeatureMap, InteractionSpec};
use crate::design::{GroupSpec, GroupedDesign};
use crate::error::{Result, SsglError};
use crate::solver::{fit_path, SsglConfig, SsglFit, SsglPath};

/// How raw covariates become grouped columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Raw columns used as-is, grouped as given.
    Grouped { groups: Vec<GroupSpec> },
    /// One spline group per covariate, optionally with pairwise interaction groups.
    Additive {
        basis: BasisSpec,
        interactions: Option<InteractionSpec>,
    },
}

impl ModelSpec {
    /// Same specification with the main-effect df replaced; grouped models are unchanged.
    pub fn with_df(&self, df: usize) -> ModelSpec {
        match self {
            ModelSpec::Grouped { .. } => self.clone(),
            ModelSpec::Additive { basis, interactions } => ModelSpec::Additive {
                basis: BasisSpec { df, kind: basis.kind },
                interactions: interactions.clone(),
            },
        }
    }

    pub fn df(&self) -> Option<usize> {
        match self {
            ModelSpec::Grouped { .. } => None,
            ModelSpec::Additive { basis, .. } => Some(basis.df),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Featurizer {
    Identity { n_columns: usize },
    Splines(FeatureMap),
}

impl Featurizer {
    pub fn features(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Featurizer::Identity { n_columns } => {
                if x_raw.ncols() != *n_columns {
                    return Err(SsglError::DimensionMismatch(format!(
                        "expected {n_columns} columns, got {}",
                        x_raw.ncols()
                    )));
                }
                Ok(x_raw.clone())
            }
            Featurizer::Splines(map) => map.features(x_raw),
        }
    }
}

/// A featurizer together with the centered, orthonormalized training design.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub featurizer: Featurizer,
    pub design: GroupedDesign,
}

impl PreparedModel {
    pub fn build(spec: &ModelSpec, x_raw: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<Self> {
        match spec {
            ModelSpec::Grouped { groups } => {
                let design = crate::design::prepare(x_raw.clone(), y.clone(), groups.clone())?;
                Ok(PreparedModel {
                    featurizer: Featurizer::Identity {
                        n_columns: x_raw.ncols(),
                    },
                    design,
                })
            }
            ModelSpec::Additive { basis, interactions } => {
                let mut map = FeatureMap::additive(x_raw, names, *basis)?;
                if let Some(ispec) = interactions {
                    map = map.with_interactions(x_raw, ispec)?;
                }
                let design = map.design(x_raw, y)?;
                Ok(PreparedModel {
                    featurizer: Featurizer::Splines(map),
                    design,
                })
            }
        }
    }

    pub fn fit_path(&self, config: &SsglConfig) -> Result<SsglPath> {
        fit_path(&self.design, config)
    }

    pub fn predictor(&self, fit: &SsglFit) -> Predictor {
        Predictor {
            featurizer: self.featurizer.clone(),
            groups: self.design.groups().to_vec(),
            beta_original: fit.beta_original.clone(),
            intercept: fit.intercept,
        }
    }

    /// Predictions for raw covariate rows.
    pub fn predict(&self, x_raw: &DMatrix<f64>, fit: &SsglFit) -> Result<DVector<f64>> {
        self.predictor(fit).predict(x_raw)
    }
}

/// Everything needed to predict from raw covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub featurizer: Featurizer,
    pub groups: Vec<GroupSpec>,
    pub beta_original: DVector<f64>,
    pub intercept: f64,
}

impl Predictor {
    pub fn predict(&self, x_raw: &DMatrix<f64>) -> Result<DVector<f64>> {
        let f = self.featurizer.features(x_raw)?;
        if f.ncols() != self.beta_original.len() {
            return Err(SsglError::DimensionMismatch(format!(
                "{} features but {} coefficients",
                f.ncols(),
                self.beta_original.len()
            )));
        }
        let mut out = f * &self.beta_original;
        out.add_scalar_mut(self.intercept);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{fit_single, WarmStart};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prediction_on_training_rows_matches_fitted_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 80;
        let x = DMatrix::from_fn(n, 4, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(n, |i, _| (3.0 * x[(i, 0)]).sin() + x[(i, 2)] + 0.1 * rng.random::<f64>());
        let names: Vec<String> = (1..=4).map(|j| format!("x{j}")).collect();
        let spec = ModelSpec::Additive {
            basis: BasisSpec::natural(3),
            interactions: None,
        };
        let model = PreparedModel::build(&spec, &x, &y, &names).unwrap();
        let cfg = SsglConfig::default();
        let fit = fit_single(&model.design, &cfg, 5.0, &WarmStart::cold(&model.design).unwrap()).unwrap();
        let pred = model.predict(&x, &fit).unwrap();
        let mut fitted = model.design.x() * &fit.beta_ortho;
        fitted.add_scalar_mut(model.design.y_mean());
        assert!((pred - fitted).amax() < 1e-8);
    }

    #[test]
    fn with_df_only_touches_additive_models() {
        let g = ModelSpec::Grouped {
            groups: vec![GroupSpec::new("a", 2)],
        };
        assert_eq!(g.with_df(4), g);
        let a = ModelSpec::Additive {
            basis: BasisSpec::natural(2),
            interactions: None,
        };
        assert_eq!(a.with_df(4).df(), Some(4));
    }
}
