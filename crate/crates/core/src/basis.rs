//! Spline bases for additive and pairwise-interaction designs.
//!
//! Natural cubic splines follow the usual construction: cubic B-splines on
//! `[a x4, interior knots, b x4]`, first column dropped, then projected onto
//! the null space of the second derivative at both boundary knots. Outside the
//! boundary both kinds extrapolate linearly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{GroupSpec, GroupedDesign};
use crate::error::{Result, SsglError};
use crate::linalg;

const ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplineKind {
    #[default]
    Natural,
    BSpline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub df: usize,
    pub kind: SplineKind,
}

impl BasisSpec {
    pub fn natural(df: usize) -> Self {
        BasisSpec {
            df,
            kind: SplineKind::Natural,
        }
    }

    pub fn bspline(df: usize) -> Self {
        BasisSpec {
            df,
            kind: SplineKind::BSpline,
        }
    }

    fn n_interior(&self) -> Result<usize> {
        match self.kind {
            SplineKind::Natural if self.df >= 1 => Ok(self.df - 1),
            SplineKind::BSpline if self.df >= 3 => Ok(self.df - 3),
            _ => Err(SsglError::InvalidConfig(format!(
                "df = {} is too small for a {:?} basis",
                self.df, self.kind
            ))),
        }
    }
}

/// A fitted spline basis: knots fixed from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub spec: BasisSpec,
    pub interior: Vec<f64>,
    pub boundary: (f64, f64),
    /// `(K + 3) x df` map from the intercept-free B-spline columns; identity for B-splines.
    projection: DMatrix<f64>,
}

impl SplineBasis {
    /// Knots at equally spaced quantiles of `x`, boundary at its range.
    pub fn fit(name: &str, x: &[f64], spec: BasisSpec) -> Result<Self> {
        let k = spec.n_interior()?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SsglError::NonFinite(format!("covariate `{name}` has non-finite values")));
        }
        let mut sorted = x.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut distinct = sorted.clone();
        distinct.dedup();
        if distinct.len() < spec.df + 1 {
            return Err(SsglError::TooFewDistinctValues {
                covariate: name.to_string(),
                distinct: distinct.len(),
                required: spec.df + 1,
            });
        }
        let probs: Vec<f64> = (1..=k).map(|i| i as f64 / (k + 1) as f64).collect();
        let mut interior: Vec<f64> = probs.iter().map(|&p| quantile(&sorted, p)).collect();
        let (a, b) = (sorted[0], sorted[sorted.len() - 1]);
        if !strictly_inside(&interior, a, b) {
            // heavy ties: place knots on the distinct values instead
            interior = probs.iter().map(|&p| quantile(&distinct, p)).collect();
        }
        if !strictly_inside(&interior, a, b) {
            return Err(SsglError::TooFewDistinctValues {
                covariate: name.to_string(),
                distinct: distinct.len(),
                required: spec.df + 1,
            });
        }
        Self::with_knots(spec, interior, (a, b))
    }

    pub fn with_knots(spec: BasisSpec, interior: Vec<f64>, boundary: (f64, f64)) -> Result<Self> {
        let k = spec.n_interior()?;
        if interior.len() != k {
            return Err(SsglError::InvalidConfig(format!(
                "df = {} needs {k} interior knots, got {}",
                spec.df,
                interior.len()
            )));
        }
        if !(boundary.0 < boundary.1) || !strictly_inside(&interior, boundary.0, boundary.1) {
            return Err(SsglError::InvalidConfig("knots must be strictly increasing".into()));
        }
        let knots = knot_vector(&interior, boundary);
        let projection = match spec.kind {
            SplineKind::BSpline => DMatrix::identity(k + 3, k + 3),
            SplineKind::Natural => {
                let mut c = DMatrix::zeros(2, k + 3);
                for (row, &at) in [boundary.0, boundary.1].iter().enumerate() {
                    let d2 = bspline_derivs(&knots, at, 2);
                    for j in 0..k + 3 {
                        c[(row, j)] = d2[j + 1];
                    }
                }
                null_space_of_rows(&c)
            }
        };
        Ok(SplineBasis {
            spec,
            interior,
            boundary,
            projection,
        })
    }

    pub fn df(&self) -> usize {
        self.spec.df
    }

    fn knots(&self) -> Vec<f64> {
        knot_vector(&self.interior, self.boundary)
    }

    /// `n x df` basis matrix, linear beyond the boundary knots.
    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let knots = self.knots();
        let (a, b) = self.boundary;
        let width = self.interior.len() + 3;
        let edge = |at: f64| -> (Vec<f64>, Vec<f64>) {
            (bspline_derivs(&knots, at, 0), bspline_derivs(&knots, at, 1))
        };
        let (va, da) = edge(a);
        let (vb, db) = edge(b);
        let mut raw = DMatrix::zeros(x.len(), width);
        let mut outside = 0usize;
        for (i, &xi) in x.iter().enumerate() {
            let row: Vec<f64> = if xi < a {
                outside += 1;
                (0..width).map(|j| va[j + 1] + da[j + 1] * (xi - a)).collect()
            } else if xi > b {
                outside += 1;
                (0..width).map(|j| vb[j + 1] + db[j + 1] * (xi - b)).collect()
            } else {
                let v = bspline_derivs(&knots, xi, 0);
                v[1..].to_vec()
            };
            for j in 0..width {
                raw[(i, j)] = row[j];
            }
        }
        if outside > 0 {
            log::warn!("{outside} evaluation points fall outside [{a}, {b}]; extrapolating linearly");
        }
        raw * &self.projection
    }
}

fn strictly_inside(interior: &[f64], a: f64, b: f64) -> bool {
    let mut prev = a;
    for &k in interior {
        if !(k > prev) {
            return false;
        }
        prev = k;
    }
    prev < b
}

fn knot_vector(interior: &[f64], (a, b): (f64, f64)) -> Vec<f64> {
    let mut t = vec![a; ORDER];
    t.extend_from_slice(interior);
    t.extend(std::iter::repeat_n(b, ORDER));
    t
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Orthonormal basis (as columns) of `{v : C v = 0}`.
fn null_space_of_rows(c: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, w) = c.shape();
    let mut aug = DMatrix::zeros(w, r + w);
    aug.columns_mut(0, r).copy_from(&c.transpose());
    aug.columns_mut(r, w).fill_with_identity();
    let q = aug.qr().q();
    q.columns(r, w - r).clone_owned()
}

/// Values (`deriv = 0`) or derivatives of all cubic B-splines at `x` by the
/// Cox-de Boor recursion. The right boundary belongs to the last nonempty span.
fn bspline_derivs(t: &[f64], x: f64, deriv: usize) -> Vec<f64> {
    let n_basis = t.len() - ORDER;
    let last = t.len() - 1;
    // order-1 indicator functions
    let mut levels: Vec<Vec<f64>> = Vec::with_capacity(ORDER);
    let mut b1 = vec![0.0; last];
    let span = if x >= t[last] {
        (0..last).rev().find(|&i| t[i] < t[i + 1])
    } else {
        (0..last).find(|&i| t[i] <= x && x < t[i + 1])
    };
    if let Some(i) = span {
        b1[i] = 1.0;
    }
    levels.push(b1);
    for k in 2..=ORDER {
        let prev = &levels[k - 2];
        let len = t.len() - k;
        let mut cur = vec![0.0; len];
        for i in 0..len {
            let d1 = t[i + k - 1] - t[i];
            let d2 = t[i + k] - t[i + 1];
            let mut v = 0.0;
            if d1 > 0.0 {
                v += (x - t[i]) / d1 * prev[i];
            }
            if d2 > 0.0 {
                v += (t[i + k] - x) / d2 * prev[i + 1];
            }
            cur[i] = v;
        }
        levels.push(cur);
    }
    (0..n_basis).map(|i| deriv_rec(t, &levels, i, ORDER, deriv)).collect()
}

fn deriv_rec(t: &[f64], levels: &[Vec<f64>], i: usize, k: usize, r: usize) -> f64 {
    if r == 0 {
        return levels[k - 1][i];
    }
    if k == 1 {
        return 0.0;
    }
    let d1 = t[i + k - 1] - t[i];
    let d2 = t[i + k] - t[i + 1];
    let mut v = 0.0;
    if d1 > 0.0 {
        v += deriv_rec(t, levels, i, k - 1, r - 1) / d1;
    }
    if d2 > 0.0 {
        v -= deriv_rec(t, levels, i + 1, k - 1, r - 1) / d2;
    }
    (k - 1) as f64 * v
}

/// Full cubic B-spline basis (`len(knots) - 4` columns) on a clamped knot vector.
pub fn bspline_basis(x: &[f64], knots: &[f64]) -> DMatrix<f64> {
    let n_basis = knots.len() - ORDER;
    let mut out = DMatrix::zeros(x.len(), n_basis);
    for (i, &xi) in x.iter().enumerate() {
        if xi < knots[0] || xi > knots[knots.len() - 1] {
            continue;
        }
        for (j, v) in bspline_derivs(knots, xi, 0).into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

/// Basis matrix for one covariate, fitting knots from the same data.
pub fn spline_basis(name: &str, x: &[f64], spec: BasisSpec) -> Result<(SplineBasis, DMatrix<f64>)> {
    let basis = SplineBasis::fit(name, x, spec)?;
    let m = basis.evaluate(x);
    Ok((basis, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainEffect {
    pub name: String,
    pub column: usize,
    pub basis: SplineBasis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Hierarchy {
    #[default]
    Off,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub d_star: usize,
    pub kind: SplineKind,
    /// Explicit pairs of covariate indices; `None` means every `k < l`.
    pub pairs: Option<Vec<(usize, usize)>>,
    pub hierarchy: Hierarchy,
}

impl Default for InteractionSpec {
    fn default() -> Self {
        InteractionSpec {
            d_star: 2,
            kind: SplineKind::Natural,
            pairs: None,
            hierarchy: Hierarchy::Off,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionTerm {
    pub k: usize,
    pub l: usize,
    pub basis_k: SplineBasis,
    pub basis_l: SplineBasis,
    /// Coefficients of the tensor columns on `[1, main_k, main_l]`.
    pub gamma: DMatrix<f64>,
    pub augmented: bool,
}

impl InteractionTerm {
    pub fn width(&self) -> usize {
        let (dk, dl) = (self.basis_k.df(), self.basis_l.df());
        if self.augmented {
            dk + dl + dk * dl
        } else {
            dk * dl
        }
    }
}

/// Maps raw covariates to the grouped feature columns, reproducibly for new rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub names: Vec<String>,
    pub mains: Vec<MainEffect>,
    pub interactions: Vec<InteractionTerm>,
}

fn raw_column(x: &DMatrix<f64>, j: usize) -> &[f64] {
    linalg::column(x, j)
}

fn tensor(gk: &DMatrix<f64>, gl: &DMatrix<f64>) -> DMatrix<f64> {
    let n = gk.nrows();
    let (dk, dl) = (gk.ncols(), gl.ncols());
    DMatrix::from_fn(n, dk * dl, |i, c| gk[(i, c / dl)] * gl[(i, c % dl)])
}

fn regressors(mk: &DMatrix<f64>, ml: &DMatrix<f64>) -> DMatrix<f64> {
    let n = mk.nrows();
    let mut a = DMatrix::zeros(n, 1 + mk.ncols() + ml.ncols());
    a.column_mut(0).fill(1.0);
    a.columns_mut(1, mk.ncols()).copy_from(mk);
    a.columns_mut(1 + mk.ncols(), ml.ncols()).copy_from(ml);
    a
}

impl FeatureMap {
    /// One spline group per covariate.
    pub fn additive(x_raw: &DMatrix<f64>, names: &[String], spec: BasisSpec) -> Result<Self> {
        if names.len() != x_raw.ncols() {
            return Err(SsglError::DimensionMismatch(format!(
                "{} names for {} covariates",
                names.len(),
                x_raw.ncols()
            )));
        }
        let mains = (0..x_raw.ncols())
            .map(|j| {
                Ok(MainEffect {
                    name: names[j].clone(),
                    column: j,
                    basis: SplineBasis::fit(&names[j], raw_column(x_raw, j), spec)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureMap {
            names: names.to_vec(),
            mains,
            interactions: Vec::new(),
        })
    }

    /// Append residualized tensor-product groups for the requested pairs.
    pub fn with_interactions(mut self, x_raw: &DMatrix<f64>, ispec: &InteractionSpec) -> Result<Self> {
        if ispec.d_star == 0 {
            return Err(SsglError::InvalidConfig("d_star must be at least 1".into()));
        }
        let p = self.names.len();
        let pairs: Vec<(usize, usize)> = match &ispec.pairs {
            Some(list) => list.clone(),
            None => (0..p).flat_map(|k| (k + 1..p).map(move |l| (k, l))).collect(),
        };
        let star = BasisSpec {
            df: ispec.d_star,
            kind: ispec.kind,
        };
        let mut star_bases: Vec<Option<SplineBasis>> = vec![None; p];
        let mut main_blocks: Vec<Option<DMatrix<f64>>> = vec![None; p];
        for &(k, l) in &pairs {
            if k >= p || l >= p || k == l {
                return Err(SsglError::InvalidConfig(format!("invalid interaction pair ({k}, {l})")));
            }
            for j in [k, l] {
                if star_bases[j].is_none() {
                    star_bases[j] = Some(SplineBasis::fit(&self.names[j], raw_column(x_raw, j), star)?);
                }
                if main_blocks[j].is_none() {
                    main_blocks[j] = Some(self.main_block(j, x_raw)?);
                }
            }
        }
        let terms = pairs
            .iter()
            .map(|&(k, l)| {
                let bk = star_bases[k].clone().unwrap();
                let bl = star_bases[l].clone().unwrap();
                let t = tensor(&bk.evaluate(raw_column(x_raw, k)), &bl.evaluate(raw_column(x_raw, l)));
                let a = regressors(main_blocks[k].as_ref().unwrap(), main_blocks[l].as_ref().unwrap());
                let (_, gamma) = linalg::residualize(&a, &t)?;
                Ok(InteractionTerm {
                    k,
                    l,
                    basis_k: bk,
                    basis_l: bl,
                    gamma,
                    augmented: ispec.hierarchy == Hierarchy::Augmented,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.interactions.extend(terms);
        Ok(self)
    }

    fn main_block(&self, covariate: usize, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let main = self
            .mains
            .iter()
            .find(|m| m.column == covariate)
            .ok_or_else(|| SsglError::InvalidConfig(format!("no main effect for covariate {covariate}")))?;
        Ok(main.basis.evaluate(raw_column(x_raw, covariate)))
    }

    pub fn groups(&self) -> Vec<GroupSpec> {
        let mut g: Vec<GroupSpec> = self
            .mains
            .iter()
            .map(|m| GroupSpec::new(m.name.clone(), m.basis.df()))
            .collect();
        for t in &self.interactions {
            g.push(GroupSpec::new(
                format!("{}:{}", self.names[t.k], self.names[t.l]),
                t.width(),
            ));
        }
        g
    }

    pub fn n_columns(&self) -> usize {
        self.groups().iter().map(|g| g.size).sum()
    }

    /// Raw feature columns for new covariate rows, in group order.
    pub fn features(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_raw.ncols() != self.names.len() {
            return Err(SsglError::DimensionMismatch(format!(
                "expected {} covariates, got {}",
                self.names.len(),
                x_raw.ncols()
            )));
        }
        let n = x_raw.nrows();
        let mut out = DMatrix::zeros(n, self.n_columns());
        let mut at = 0;
        let mut main_cache: Vec<Option<DMatrix<f64>>> = vec![None; self.names.len()];
        for m in &self.mains {
            let b = m.basis.evaluate(raw_column(x_raw, m.column));
            out.columns_mut(at, b.ncols()).copy_from(&b);
            at += b.ncols();
            main_cache[m.column] = Some(b);
        }
        for t in &self.interactions {
            let gk = t.basis_k.evaluate(raw_column(x_raw, t.k));
            let gl = t.basis_l.evaluate(raw_column(x_raw, t.l));
            let parent = |j: usize| -> Result<DMatrix<f64>> {
                match &main_cache[j] {
                    Some(b) => Ok(b.clone()),
                    None => self.main_block(j, x_raw),
                }
            };
            let resid = tensor(&gk, &gl) - regressors(&parent(t.k)?, &parent(t.l)?) * &t.gamma;
            if t.augmented {
                for b in [&gk, &gl] {
                    out.columns_mut(at, b.ncols()).copy_from(b);
                    at += b.ncols();
                }
            }
            out.columns_mut(at, resid.ncols()).copy_from(&resid);
            at += resid.ncols();
        }
        Ok(out)
    }

    /// Centered, orthonormalized design for training rows.
    pub fn design(&self, x_raw: &DMatrix<f64>, y: &DVector<f64>) -> Result<GroupedDesign> {
        crate::design::prepare(self.features(x_raw)?, y.clone(), self.groups())
    }
}

/// Additive design: one natural-spline group per covariate.
pub fn build_main_design(
    x_raw: &DMatrix<f64>,
    y: &DVector<f64>,
    names: &[String],
    spec: BasisSpec,
) -> Result<(FeatureMap, GroupedDesign)> {
    let map = FeatureMap::additive(x_raw, names, spec)?;
    let design = map.design(x_raw, y)?;
    Ok((map, design))
}

/// Main effects plus residualized pairwise tensor-product groups.
pub fn build_interaction_design(
    x_raw: &DMatrix<f64>,
    y: &DVector<f64>,
    names: &[String],
    main: BasisSpec,
    ispec: &InteractionSpec,
) -> Result<(FeatureMap, GroupedDesign)> {
    let map = FeatureMap::additive(x_raw, names, main)?.with_interactions(x_raw, ispec)?;
    let design = map.design(x_raw, y)?;
    Ok((map, design))
}

/// `[main_k(d*), main_l(d*), interaction_kl]` as a single block.
pub fn augment_hierarchy(main_k: &DMatrix<f64>, main_l: &DMatrix<f64>, inter: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = inter.nrows();
    if main_k.nrows() != n || main_l.nrows() != n {
        return Err(SsglError::DimensionMismatch("augmented blocks differ in row count".into()));
    }
    let mut out = DMatrix::zeros(n, main_k.ncols() + main_l.ncols() + inter.ncols());
    out.columns_mut(0, main_k.ncols()).copy_from(main_k);
    out.columns_mut(main_k.ncols(), main_l.ncols()).copy_from(main_l);
    out.columns_mut(main_k.ncols() + main_l.ncols(), inter.ncols()).copy_from(inter);
    Ok(out)
}

/// Centered main-effect curve of covariate `j` on `grid`, from original-scale coefficients.
pub fn predict_effects(
    map: &FeatureMap,
    design: &GroupedDesign,
    beta_original: &DVector<f64>,
    covariate: usize,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let g = map
        .mains
        .iter()
        .position(|m| m.column == covariate)
        .ok_or_else(|| SsglError::InvalidConfig(format!("no main effect for covariate {covariate}")))?;
    let range = design.group_range(g);
    let b = map.mains[g].basis.evaluate(grid);
    let beta = beta_original.rows(range.start, range.len());
    let means = design.x_means().rows(range.start, range.len());
    Ok((0..grid.len())
        .map(|i| {
            (0..range.len())
                .map(|c| (b[(i, c)] - means[c]) * beta[c])
                .sum()
        })
        .collect())
}
