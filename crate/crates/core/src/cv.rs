//! K-fold cross-validation over the spike-rate ladder and the spline df.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::FeatureMap;
use crate::error::{Result, SsglError};
use crate::linalg::{select_entries, select_rows};
use crate::model::{Featurizer, ModelSpec, PreparedModel};
use crate::solver::{SsglConfig, SsglFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    /// Candidate main-effect df; ignored for grouped models.
    pub df_candidates: Vec<usize>,
    pub rule: SelectionRule,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            seed: 0,
            df_candidates: vec![2, 3, 4],
            rule: SelectionRule::MinError,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    #[default]
    MinError,
    OneSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub df: Option<usize>,
    pub lambda0: f64,
    /// Mean held-out squared error over the valid folds.
    pub mean: f64,
    /// Standard error of that mean across folds.
    pub se: f64,
    pub fold_errors: Vec<Option<f64>>,
}

impl CvCell {
    pub fn is_valid(&self) -> bool {
        self.mean.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidCell {
    pub df: Option<usize>,
    pub fold: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub cells: Vec<CvCell>,
    pub folds: Vec<usize>,
    pub invalid: Vec<InvalidCell>,
    /// Hash of the statistics each training fold was built from, per `(df, fold)`.
    pub train_checksums: Vec<(Option<usize>, usize, u64)>,
    pub chosen_lambda0: f64,
    pub chosen_df: Option<usize>,
}

/// Shuffle rows with a seeded generator, then deal them round-robin into `k` folds.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut folds = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        folds[i] = pos % k;
    }
    folds
}

fn checksum(model: &PreparedModel) -> u64 {
    let mut h = DefaultHasher::new();
    model.design.y_mean().to_bits().hash(&mut h);
    for v in model.design.x_means().iter() {
        v.to_bits().hash(&mut h);
    }
    for t in model.design.transforms() {
        for v in t.matrix.iter() {
            v.to_bits().hash(&mut h);
        }
    }
    if let Featurizer::Splines(FeatureMap { mains, .. }) = &model.featurizer {
        for m in mains {
            for v in m.basis.interior.iter().chain([m.basis.boundary.0, m.basis.boundary.1].iter()) {
                v.to_bits().hash(&mut h);
            }
        }
    }
    h.finish()
}

struct FoldOutcome {
    errors: Vec<Option<f64>>,
    checksum: Option<u64>,
    failure: Option<String>,
}

fn run_fold(
    x_raw: &DMatrix<f64>,
    y: &DVector<f64>,
    names: &[String],
    spec: &ModelSpec,
    ssgl: &SsglConfig,
    folds: &[usize],
    fold: usize,
) -> FoldOutcome {
    let train: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != fold).collect();
    let test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == fold).collect();
    let ladder = &ssgl.lambda0_ladder;
    let failed = |msg: String| FoldOutcome {
        errors: vec![None; ladder.len()],
        checksum: None,
        failure: Some(msg),
    };
    let model = match PreparedModel::build(spec, &select_rows(x_raw, &train), &select_entries(y, &train), names) {
        Ok(m) => m,
        Err(e) => return failed(e.to_string()),
    };
    let path = match model.fit_path(ssgl) {
        Ok(p) => p,
        Err(e) => return failed(e.to_string()),
    };
    let x_test = select_rows(x_raw, &test);
    let y_test = select_entries(y, &test);
    let errors = ladder
        .iter()
        .map(|&l| {
            let fit = path.fit_at(l)?;
            let pred = model.predict(&x_test, fit).ok()?;
            Some((&pred - &y_test).norm_squared() / test.len() as f64)
        })
        .collect();
    FoldOutcome {
        errors,
        checksum: Some(checksum(&model)),
        failure: None,
    }
}

/// Held-out squared error at every (df, ladder point); bases, centering and
/// orthonormalization are rebuilt on the training rows of each fold.
pub fn kfold_cv(
    x_raw: &DMatrix<f64>,
    y: &DVector<f64>,
    names: &[String],
    spec: &ModelSpec,
    ssgl: &SsglConfig,
    cv: &CvConfig,
) -> Result<CvResult> {
    let n = y.len();
    if x_raw.nrows() != n {
        return Err(SsglError::DimensionMismatch(format!("{} rows vs {n} responses", x_raw.nrows())));
    }
    if cv.folds < 2 || cv.folds > n {
        return Err(SsglError::InvalidConfig(format!("{} folds for {n} rows", cv.folds)));
    }
    ssgl.validate()?;
    let folds = assign_folds(n, cv.folds, cv.seed);
    let dfs: Vec<Option<usize>> = match spec {
        ModelSpec::Grouped { .. } => vec![None],
        ModelSpec::Additive { .. } => {
            if cv.df_candidates.is_empty() {
                vec![spec.df()]
            } else {
                cv.df_candidates.iter().map(|&d| Some(d)).collect()
            }
        }
    };
    let jobs: Vec<(usize, usize)> = (0..dfs.len()).flat_map(|d| (0..cv.folds).map(move |f| (d, f))).collect();
    let outcomes: Vec<FoldOutcome> = jobs
        .par_iter()
        .map(|&(d, f)| {
            let s = match dfs[d] {
                Some(df) => spec.with_df(df),
                None => spec.clone(),
            };
            run_fold(x_raw, y, names, &s, ssgl, &folds, f)
        })
        .collect();

    let mut invalid = Vec::new();
    let mut train_checksums = Vec::new();
    let mut cells = Vec::new();
    for (d, df) in dfs.iter().enumerate() {
        let block = &outcomes[d * cv.folds..(d + 1) * cv.folds];
        for (f, o) in block.iter().enumerate() {
            if let Some(msg) = &o.failure {
                log::warn!("cross-validation fold {f} (df {df:?}) excluded: {msg}");
                invalid.push(InvalidCell {
                    df: *df,
                    fold: f,
                    message: msg.clone(),
                });
            }
            if let Some(c) = o.checksum {
                train_checksums.push((*df, f, c));
            }
        }
        for (li, &lambda0) in ssgl.lambda0_ladder.iter().enumerate() {
            let fold_errors: Vec<Option<f64>> = block.iter().map(|o| o.errors[li]).collect();
            let (mean, se) = mean_se(&fold_errors);
            cells.push(CvCell {
                df: *df,
                lambda0,
                mean,
                se,
                fold_errors,
            });
        }
    }
    let mut result = CvResult {
        cells,
        folds,
        invalid,
        train_checksums,
        chosen_lambda0: f64::NAN,
        chosen_df: None,
    };
    let (l, d) = select_model(&result, cv.rule)?;
    result.chosen_lambda0 = l;
    result.chosen_df = d;
    Ok(result)
}

fn mean_se(errors: &[Option<f64>]) -> (f64, f64) {
    let vals: Vec<f64> = errors.iter().flatten().copied().collect();
    if vals.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Larger spike rate wins ties, then smaller df.
fn prefer(a: &CvCell, b: &CvCell) -> bool {
    a.lambda0 > b.lambda0 || (a.lambda0 == b.lambda0 && a.df.unwrap_or(0) < b.df.unwrap_or(0))
}

/// Minimum-error cell, or the largest spike rate within one standard error of it.
pub fn select_model(cv: &CvResult, rule: SelectionRule) -> Result<(f64, Option<usize>)> {
    let valid: Vec<&CvCell> = cv.cells.iter().filter(|c| c.is_valid()).collect();
    let mut best: Option<&CvCell> = None;
    for &c in &valid {
        best = match best {
            None => Some(c),
            Some(b) if c.mean < b.mean || (c.mean == b.mean && prefer(c, b)) => Some(c),
            keep => keep,
        };
    }
    let best = best.ok_or_else(|| SsglError::NonFinite("no valid cross-validation cell".into()))?;
    let chosen = match rule {
        SelectionRule::MinError => best,
        SelectionRule::OneSe => {
            let bound = best.mean + best.se;
            let mut pick = best;
            for &c in &valid {
                if c.mean <= bound && prefer(c, pick) {
                    pick = c;
                }
            }
            pick
        }
    };
    Ok((chosen.lambda0, chosen.df))
}

/// `mean (se)` to three decimals.
pub fn format_cv_error(mean: f64, se: f64) -> String {
    format!("{mean:.3} ({se:.3})")
}

/// Refit on all rows with the chosen df, walking the ladder up to the chosen spike rate.
pub fn fit_selected(
    x_raw: &DMatrix<f64>,
    y: &DVector<f64>,
    names: &[String],
    spec: &ModelSpec,
    ssgl: &SsglConfig,
    lambda0: f64,
    df: Option<usize>,
) -> Result<(PreparedModel, SsglFit)> {
    let spec = match df {
        Some(d) => spec.with_df(d),
        None => spec.clone(),
    };
    let model = PreparedModel::build(&spec, x_raw, y, names)?;
    let ladder: Vec<f64> = ssgl.lambda0_ladder.iter().copied().filter(|&l| l <= lambda0).collect();
    let cfg = ssgl.clone().with_ladder(ladder);
    let path = model.fit_path(&cfg)?;
    let fit = path
        .fit_at(lambda0)
        .cloned()
        .ok_or_else(|| SsglError::NonFinite(format!("refit at lambda0 = {lambda0} failed")))?;
    Ok((model, fit))
}
