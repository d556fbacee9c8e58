//! Seeded data generators for the simulation regimes and replicate scoring.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, InteractionSpec};
use crate::cv::{fit_selected, kfold_cv, CvConfig, SelectionRule};
use crate::debias::{debiased_inference, default_lambda};
use crate::design::{GroupSpec, GroupedDesign};
use crate::error::{Result, SsglError};
use crate::model::{ModelSpec, PreparedModel};
use crate::solver::{SsglConfig, SsglFit, Solver, WarmStart};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    SparseGam,
    Interaction,
    Coverage,
    Dense,
    SigmaCheck,
    ManyGroups,
    Timing,
}

impl std::str::FromStr for ScenarioKind {
    type Err = SsglError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sparse_gam" => ScenarioKind::SparseGam,
            "interaction" => ScenarioKind::Interaction,
            "coverage" => ScenarioKind::Coverage,
            "dense" => ScenarioKind::Dense,
            "sigma_check" => ScenarioKind::SigmaCheck,
            "many_groups" => ScenarioKind::ManyGroups,
            "timing" => ScenarioKind::Timing,
            other => return Err(SsglError::InvalidConfig(format!("unknown scenario `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub kind: ScenarioKind,
    pub n: usize,
    /// Covariates for the additive scenarios, groups otherwise.
    pub p: usize,
    pub rho: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl SimScenario {
    /// Sizes used in the reference experiments.
    pub fn named(kind: ScenarioKind) -> Self {
        let (n, p) = match kind {
            ScenarioKind::SparseGam => (100, 300),
            ScenarioKind::Interaction => (300, 25),
            ScenarioKind::Coverage => (100, 100),
            ScenarioKind::Dense => (100, 300),
            ScenarioKind::SigmaCheck => (500, 500),
            ScenarioKind::ManyGroups => (200, 2000),
            ScenarioKind::Timing => (300, 1000),
        };
        SimScenario {
            kind,
            n,
            p,
            rho: 0.0,
            replicates: 10,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p == 0 || self.replicates == 0 {
            return Err(SsglError::InvalidConfig("scenario sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(SsglError::InvalidConfig(format!("rho = {} must lie in [0, 1)", self.rho)));
        }
        let min_p = match self.kind {
            ScenarioKind::SparseGam => 5,
            ScenarioKind::Interaction => 7,
            ScenarioKind::Coverage => 4,
            ScenarioKind::Dense => 20,
            ScenarioKind::SigmaCheck => 20,
            ScenarioKind::ManyGroups | ScenarioKind::Timing => 4,
        };
        if self.p < min_p {
            return Err(SsglError::InvalidConfig(format!("{:?} needs p >= {min_p}", self.kind)));
        }
        Ok(())
    }

    /// Group size of the linear scenarios.
    pub fn group_size(&self) -> usize {
        match self.kind {
            ScenarioKind::ManyGroups => 3,
            _ => 2,
        }
    }
}

/// Generator for replicate `r`: one seed, one stream per replicate.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// `E[Y | X]` at the sampled rows.
    pub mean: DVector<f64>,
    pub names: Vec<String>,
}

/// Ground truth of a replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// True coefficients for the linear scenarios (original scale).
    pub beta: Option<DVector<f64>>,
    /// Active groups (linear) or covariates (additive), zero-based.
    pub support: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
}

fn names(prefix: &str, p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("{prefix}{j}")).collect()
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    // row-major draw order so rows are exchangeable across p
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = rng.random::<f64>();
        }
    }
    x
}

pub fn sparse_gam_mean(x: &[f64]) -> f64 {
    5.0 * (PI * x[0]).sin() + 2.5 * (x[2] * x[2] - 0.5) + x[3].exp() + 3.0 * x[4]
}

pub fn interaction_mean(x: &[f64]) -> f64 {
    2.5 * (PI * x[0] * x[1]).sin() + 2.0 * (PI * (x[2] + x[4])).cos() + 2.0 * (x[5] - 0.5) + 2.5 * x[6]
}

fn functional(rng: &mut ChaCha8Rng, n: usize, p: usize, f: fn(&[f64]) -> f64) -> Dataset {
    let x = uniform(rng, n, p);
    let mean = DVector::from_fn(n, |i, _| {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        f(&row)
    });
    let y = &mean + noise(rng, n);
    Dataset {
        x,
        y,
        mean,
        names: names("x", p),
    }
}

/// Uniform covariates, additive truth on covariates 1, 3, 4, 5.
pub fn gen_sparse_gam(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Dataset {
    functional(rng, n, p, sparse_gam_mean)
}

/// Uniform covariates, interacting pairs (1, 2) and (3, 5).
pub fn gen_interaction(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Dataset {
    functional(rng, n, p, interaction_mean)
}

/// Rows of `N(0, R)` with `R_ij = rho^|i-j|`, by the AR(1) recursion.
pub fn ar1_rows(rng: &mut ChaCha8Rng, n: usize, g: usize, rho: f64) -> DMatrix<f64> {
    let s = (1.0 - rho * rho).sqrt();
    let mut z = DMatrix::zeros(n, g);
    for i in 0..n {
        let mut prev = 0.0;
        for j in 0..g {
            let e: f64 = rng.sample(StandardNormal);
            let v = if j == 0 { e } else { rho * prev + s * e };
            z[(i, j)] = v;
            prev = v;
        }
    }
    z
}

/// `[z_1, z_1^2, z_2, z_2^2, ...]`
pub fn linear_and_square(z: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, g) = z.shape();
    DMatrix::from_fn(n, 2 * g, |i, c| {
        let v = z[(i, c / 2)];
        if c % 2 == 0 {
            v
        } else {
            v * v
        }
    })
}

fn linear_dataset(rng: &mut ChaCha8Rng, x: DMatrix<f64>, beta: &DVector<f64>) -> Dataset {
    let n = x.nrows();
    let mean = &x * beta;
    let y = &mean + noise(rng, n);
    let p = x.ncols();
    Dataset {
        x,
        y,
        mean,
        names: names("v", p),
    }
}

pub fn coverage_beta(g: usize) -> DVector<f64> {
    let mut b = DVector::zeros(2 * g);
    for (j, v) in [0.0, 0.5, 0.25, 0.1, 0.0, 0.0, 0.7].iter().enumerate() {
        if j < 2 * g {
            b[j] = *v;
        }
    }
    b
}

pub fn gen_coverage(n: usize, g: usize, rho: f64, rng: &mut ChaCha8Rng) -> Dataset {
    let z = ar1_rows(rng, n, g, rho);
    linear_dataset(rng, linear_and_square(&z), &coverage_beta(g))
}

pub fn dense_beta(g: usize) -> DVector<f64> {
    DVector::from_fn(2 * g, |j, _| if j < 40 { 0.2 } else { 0.0 })
}

pub fn gen_dense(n: usize, g: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let z = ar1_rows(rng, n, g, 0.0);
    linear_dataset(rng, linear_and_square(&z), &dense_beta(g))
}

pub fn sigma_check_beta(g: usize) -> DVector<f64> {
    let mut b = DVector::zeros(2 * g);
    b[0] = 0.5; // X_1
    b[2] = 0.3; // X_2
    b[19] = 0.6; // X_10^2
    b[38] = -0.2; // X_20
    b
}

pub fn gen_sigma_check(n: usize, g: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let z = ar1_rows(rng, n, g, 0.0);
    linear_dataset(rng, linear_and_square(&z), &sigma_check_beta(g))
}

/// Last four groups of three get `N(0, 0.4^2)` coefficients.
pub fn draw_many_groups_beta(g: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let m = 3;
    let dist = Normal::new(0.0, 0.4).expect("valid normal");
    let mut b = DVector::zeros(m * g);
    for j in m * (g - 4)..m * g {
        b[j] = dist.sample(rng);
    }
    b
}

pub fn gen_many_groups(n: usize, g: usize, beta: &DVector<f64>, rng: &mut ChaCha8Rng) -> Dataset {
    let x = DMatrix::from_fn(n, 3 * g, |_, _| rng.sample::<f64, _>(StandardNormal));
    linear_dataset(rng, x, beta)
}

pub fn timing_beta(g: usize) -> DVector<f64> {
    DVector::from_fn(2 * g, |j, _| if j < 8 { 0.5 } else { 0.0 })
}

pub fn gen_timing(n: usize, g: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let x = DMatrix::from_fn(n, 2 * g, |_, _| rng.sample::<f64, _>(StandardNormal));
    linear_dataset(rng, x, &timing_beta(g))
}

fn support_of(beta: &DVector<f64>, m: usize) -> Vec<usize> {
    (0..beta.len() / m)
        .filter(|&g| (0..m).any(|k| beta[g * m + k] != 0.0))
        .collect()
}

impl SimScenario {
    /// Truth for one replicate; only `many_groups` draws it at random.
    pub fn draw_truth(&self, rng: &mut ChaCha8Rng) -> Truth {
        let linear = |beta: DVector<f64>, m: usize| Truth {
            support: support_of(&beta, m),
            beta: Some(beta),
            pairs: vec![],
        };
        match self.kind {
            ScenarioKind::SparseGam => Truth {
                beta: None,
                support: vec![0, 2, 3, 4],
                pairs: vec![],
            },
            ScenarioKind::Interaction => Truth {
                beta: None,
                support: vec![0, 1, 2, 4, 5, 6],
                pairs: vec![(0, 1), (2, 4)],
            },
            ScenarioKind::Coverage => linear(coverage_beta(self.p), 2),
            ScenarioKind::Dense => linear(dense_beta(self.p), 2),
            ScenarioKind::SigmaCheck => linear(sigma_check_beta(self.p), 2),
            ScenarioKind::ManyGroups => linear(draw_many_groups_beta(self.p, rng), 3),
            ScenarioKind::Timing => linear(timing_beta(self.p), 2),
        }
    }

    pub fn sample(&self, truth: &Truth, n: usize, rng: &mut ChaCha8Rng) -> Dataset {
        match self.kind {
            ScenarioKind::SparseGam => gen_sparse_gam(n, self.p, rng),
            ScenarioKind::Interaction => gen_interaction(n, self.p, rng),
            ScenarioKind::Coverage => gen_coverage(n, self.p, self.rho, rng),
            ScenarioKind::Dense => gen_dense(n, self.p, rng),
            ScenarioKind::SigmaCheck => gen_sigma_check(n, self.p, rng),
            ScenarioKind::ManyGroups => gen_many_groups(n, self.p, truth.beta.as_ref().expect("linear truth"), rng),
            ScenarioKind::Timing => gen_timing(n, self.p, rng),
        }
    }

    pub fn model_spec(&self, options: &SimOptions) -> ModelSpec {
        match self.kind {
            ScenarioKind::SparseGam => ModelSpec::Additive {
                basis: BasisSpec::natural(options.main_df),
                interactions: None,
            },
            ScenarioKind::Interaction => ModelSpec::Additive {
                basis: BasisSpec::natural(options.main_df),
                interactions: Some(InteractionSpec {
                    d_star: options.d_star,
                    ..InteractionSpec::default()
                }),
            },
            _ => {
                let m = self.group_size();
                ModelSpec::Grouped {
                    groups: (1..=self.p).map(|g| GroupSpec::new(format!("g{g}"), m)).collect(),
                }
            }
        }
    }
}

/// How the spike rate (and df) is chosen in each replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Tuning {
    /// K-fold cross-validation over the ladder (and `df_candidates` for additive models).
    Cv { folds: usize, df_candidates: Vec<usize> },
    /// The last rung of the ladder.
    FinalLadder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub ssgl: SsglConfig,
    pub tuning: Tuning,
    pub main_df: usize,
    pub d_star: usize,
    pub alpha: f64,
    /// Multiplier on `sqrt(log p / n)` for the nodewise lassos.
    pub nodewise_c: f64,
}

impl SimOptions {
    pub fn for_scenario(kind: ScenarioKind) -> Self {
        let tuning = match kind {
            ScenarioKind::SparseGam => Tuning::Cv {
                folds: 10,
                df_candidates: vec![2, 3, 4],
            },
            ScenarioKind::SigmaCheck | ScenarioKind::Timing => Tuning::FinalLadder,
            _ => Tuning::Cv {
                folds: 10,
                df_candidates: vec![],
            },
        };
        SimOptions {
            ssgl: SsglConfig::default(),
            tuning,
            main_df: 2,
            d_star: 2,
            alpha: 0.05,
            nodewise_c: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateScore {
    pub replicate: usize,
    pub lambda0: f64,
    pub df: Option<usize>,
    pub mse: f64,
    pub precision: f64,
    pub recall: f64,
    pub selected: Vec<usize>,
    pub selected_pairs: Vec<(usize, usize)>,
    pub sigma2: f64,
    pub theta: f64,
    pub iterations: usize,
    pub coverage_important: Option<f64>,
    pub coverage_null: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: SimScenario,
    pub truth_support: Vec<usize>,
    pub truth_pairs: Vec<(usize, usize)>,
    pub replicates: Vec<ReplicateScore>,
    pub failures: Vec<(usize, String)>,
    pub mean_mse: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_sigma2: f64,
    pub coverage_important: Option<f64>,
    pub coverage_null: Option<f64>,
    /// Selection frequency of every candidate pair, in `(k, l)` order.
    pub pair_frequency: Vec<((usize, usize), f64)>,
    /// Precision is reported as 1 when nothing is selected.
    pub precision_convention: String,
}

/// `(TP / (TP + FP), TP / (TP + FN))`; an empty selection has precision 1,
/// an empty truth has recall 1.
pub fn precision_recall(selected: &[usize], truth: &[usize]) -> (f64, f64) {
    let tp = selected.iter().filter(|s| truth.contains(s)).count() as f64;
    let precision = if selected.is_empty() { 1.0 } else { tp / selected.len() as f64 };
    let recall = if truth.is_empty() { 1.0 } else { tp / truth.len() as f64 };
    (precision, recall)
}

/// Fraction of `truth[j]` for `j` in `idx` inside `[lower_j, upper_j]`.
pub fn coverage_fraction(lower: &DVector<f64>, upper: &DVector<f64>, truth: &DVector<f64>, idx: &[usize]) -> Option<f64> {
    if idx.is_empty() {
        return None;
    }
    let hit = idx.iter().filter(|&&j| lower[j] <= truth[j] && truth[j] <= upper[j]).count();
    Some(hit as f64 / idx.len() as f64)
}

fn mean_of(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

/// Fit, tune and score one replicate.
pub fn run_replicate(scenario: &SimScenario, options: &SimOptions, r: usize) -> Result<ReplicateScore> {
    let mut rng = replicate_rng(scenario.seed, r as u64);
    let truth = scenario.draw_truth(&mut rng);
    let train = scenario.sample(&truth, scenario.n, &mut rng);
    let test = scenario.sample(&truth, scenario.n, &mut rng);
    let spec = scenario.model_spec(options);
    let started = Instant::now();

    let (model, fit): (PreparedModel, SsglFit) = match &options.tuning {
        Tuning::Cv { folds, df_candidates } => {
            let cv = CvConfig {
                folds: *folds,
                seed: scenario.seed.wrapping_mul(1_000_003).wrapping_add(r as u64),
                df_candidates: df_candidates.clone(),
                rule: SelectionRule::MinError,
            };
            let res = kfold_cv(&train.x, &train.y, &train.names, &spec, &options.ssgl, &cv)?;
            fit_selected(&train.x, &train.y, &train.names, &spec, &options.ssgl, res.chosen_lambda0, res.chosen_df)?
        }
        Tuning::FinalLadder => {
            let model = PreparedModel::build(&spec, &train.x, &train.y, &train.names)?;
            let path = model.fit_path(&options.ssgl)?;
            let fit = path
                .final_fit()
                .cloned()
                .ok_or_else(|| SsglError::NonFinite("every rung of the ladder failed".into()))?;
            (model, fit)
        }
    };
    let seconds = started.elapsed().as_secs_f64();

    let pred = model.predict(&test.x, &fit)?;
    let mse = (&pred - &test.mean).norm_squared() / test.mean.len() as f64;

    let n_main = match scenario.kind {
        ScenarioKind::SparseGam | ScenarioKind::Interaction => scenario.p,
        _ => model.design.n_groups(),
    };
    let selected: Vec<usize> = fit.selected_groups.iter().copied().filter(|&g| g < n_main).collect();
    let selected_pairs: Vec<(usize, usize)> = match &model.featurizer {
        crate::model::Featurizer::Splines(map) => fit
            .selected_groups
            .iter()
            .filter(|&&g| g >= n_main)
            .map(|&g| {
                let t = &map.interactions[g - n_main];
                (t.k, t.l)
            })
            .collect(),
        _ => vec![],
    };

    let (precision, recall) = match scenario.kind {
        ScenarioKind::Interaction => {
            let cand = pair_keys(&selected_pairs);
            let truth_keys = pair_keys(&truth.pairs);
            precision_recall(&cand, &truth_keys)
        }
        _ => precision_recall(&selected, &truth.support),
    };

    let (coverage_important, coverage_null) = if scenario.kind == ScenarioKind::Coverage {
        let beta = truth.beta.as_ref().expect("linear truth");
        let lambda = default_lambda(model.design.n(), model.design.p(), options.nodewise_c);
        let lambdas = vec![lambda; model.design.p()];
        let rep = debiased_inference(&model.design, &fit.beta_ortho, fit.sigma2, &lambdas, options.alpha)?;
        let important: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
        let null: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] == 0.0).collect();
        (
            coverage_fraction(&rep.original.ci_lower, &rep.original.ci_upper, beta, &important),
            coverage_fraction(&rep.original.ci_lower, &rep.original.ci_upper, beta, &null),
        )
    } else {
        (None, None)
    };

    Ok(ReplicateScore {
        replicate: r,
        lambda0: fit.lambda0,
        df: spec.df().and(model.featurizer_df()),
        mse,
        precision,
        recall,
        selected,
        selected_pairs,
        sigma2: fit.sigma2,
        theta: fit.theta,
        iterations: fit.iterations,
        coverage_important,
        coverage_null,
        seconds,
    })
}

fn pair_keys(pairs: &[(usize, usize)]) -> Vec<usize> {
    pairs.iter().map(|&(k, l)| k * 1_000_000 + l).collect()
}

impl PreparedModel {
    fn featurizer_df(&self) -> Option<usize> {
        match &self.featurizer {
            crate::model::Featurizer::Splines(map) => map.mains.first().map(|m| m.basis.df()),
            _ => None,
        }
    }
}

/// Run every replicate (in parallel) and aggregate in replicate order.
pub fn run_scenario(scenario: &SimScenario, options: &SimOptions) -> Result<SimReport> {
    scenario.validate()?;
    options.ssgl.validate()?;
    if scenario.kind == ScenarioKind::Timing {
        return Err(SsglError::InvalidConfig("use run_timing for the timing scenario".into()));
    }
    let outcomes: Vec<Result<ReplicateScore>> = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| run_replicate(scenario, options, r))
        .collect();
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(s) => replicates.push(s),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failures.push((r, e.to_string()));
            }
        }
    }
    let mut truth_rng = replicate_rng(scenario.seed, 0);
    let truth = scenario.draw_truth(&mut truth_rng);
    let pair_frequency = if scenario.kind == ScenarioKind::Interaction && !replicates.is_empty() {
        let p = scenario.p;
        (0..p)
            .flat_map(|k| (k + 1..p).map(move |l| (k, l)))
            .map(|pair| {
                let hits = replicates.iter().filter(|s| s.selected_pairs.contains(&pair)).count();
                (pair, hits as f64 / replicates.len() as f64)
            })
            .collect()
    } else {
        vec![]
    };
    let cov = |f: fn(&ReplicateScore) -> Option<f64>| -> Option<f64> {
        let v: Vec<f64> = replicates.iter().filter_map(f).collect();
        if v.is_empty() {
            None
        } else {
            Some(mean_of(v.into_iter()))
        }
    };
    Ok(SimReport {
        scenario: scenario.clone(),
        truth_support: if scenario.kind == ScenarioKind::ManyGroups { vec![] } else { truth.support.clone() },
        truth_pairs: truth.pairs.clone(),
        mean_mse: mean_of(replicates.iter().map(|s| s.mse)),
        mean_precision: mean_of(replicates.iter().map(|s| s.precision)),
        mean_recall: mean_of(replicates.iter().map(|s| s.recall)),
        mean_sigma2: mean_of(replicates.iter().map(|s| s.sigma2)),
        coverage_important: cov(|s| s.coverage_important),
        coverage_null: cov(|s| s.coverage_null),
        pair_frequency,
        replicates,
        failures,
        precision_convention: "precision = 1 when no group is selected".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub groups: usize,
    pub p: usize,
    /// Median over repetitions of the wall time per full sweep.
    pub seconds_per_sweep: f64,
    /// Sweeps a cold fit needed to converge at this spike rate.
    pub iterations_to_converge: usize,
}

/// Wall time per sweep at a fixed spike rate for each group count.
pub fn run_timing(n: usize, group_counts: &[usize], lambda0: f64, sweeps: usize, repetitions: usize, seed: u64) -> Result<Vec<TimingRow>> {
    let cfg = SsglConfig::default();
    group_counts
        .iter()
        .map(|&g| {
            let scenario = SimScenario {
                kind: ScenarioKind::Timing,
                n,
                p: g,
                rho: 0.0,
                replicates: 1,
                seed,
            };
            let mut rng = replicate_rng(seed, g as u64);
            let truth = scenario.draw_truth(&mut rng);
            let data = scenario.sample(&truth, n, &mut rng);
            let design = crate::design::prepare(data.x, data.y, (0..g).map(|k| GroupSpec::new(format!("g{k}"), 2)).collect())?;
            let warm = WarmStart::cold(&design)?;
            let mut times = Vec::with_capacity(repetitions);
            for _ in 0..repetitions {
                times.push(time_sweeps(&design, &cfg, lambda0, &warm, sweeps)?);
            }
            times.sort_by(f64::total_cmp);
            let fit = crate::solver::fit_single(&design, &cfg, lambda0, &warm)?;
            Ok(TimingRow {
                groups: g,
                p: design.p(),
                seconds_per_sweep: times[times.len() / 2],
                iterations_to_converge: fit.iterations,
            })
        })
        .collect()
}

/// Mean seconds per sweep over `sweeps` sweeps from `warm`.
pub fn time_sweeps(design: &GroupedDesign, cfg: &SsglConfig, lambda0: f64, warm: &WarmStart, sweeps: usize) -> Result<f64> {
    let mut solver = Solver::new(design, cfg, lambda0, warm)?;
    let started = Instant::now();
    for _ in 0..sweeps {
        std::hint::black_box(solver.sweep());
    }
    Ok(started.elapsed().as_secs_f64() / sweeps as f64)
}
