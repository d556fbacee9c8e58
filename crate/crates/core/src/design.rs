//! Grouped regression data: column-blocked design, centering, within-group
//! orthonormalization and the map back to the original coefficient scale.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsglError};
use crate::linalg;

/// Singular values below `RANK_TOL * s_max` count as zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub id: String,
    pub size: usize,
    /// Unpenalized groups are fit under the slab alone.
    pub penalized: bool,
}

impl GroupSpec {
    pub fn new(id: impl Into<String>, size: usize) -> Self {
        GroupSpec {
            id: id.into(),
            size,
            penalized: true,
        }
    }

    pub fn unpenalized(id: impl Into<String>, size: usize) -> Self {
        GroupSpec {
            id: id.into(),
            size,
            penalized: false,
        }
    }

    /// Multiplier applied to the spike rate for this group.
    pub fn scale(&self) -> f64 {
        (self.size as f64).sqrt()
    }
}

/// Per-group linear map with `X_g^ortho = X_g * matrix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoTransform {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
}

impl OrthoTransform {
    pub fn identity(m: usize) -> Self {
        OrthoTransform {
            matrix: DMatrix::identity(m, m),
            rank: m,
        }
    }
}

/// Response plus a design matrix stored as contiguous column blocks, one per group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupedDesign {
    x: DMatrix<f64>,
    y: DVector<f64>,
    y_mean: f64,
    x_means: DVector<f64>,
    groups: Vec<GroupSpec>,
    offsets: Vec<usize>,
    transforms: Vec<OrthoTransform>,
    centered: bool,
    orthonormal: bool,
}

impl GroupedDesign {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, groups: Vec<GroupSpec>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(SsglError::DimensionMismatch(format!(
                "design has {} rows but response has {}",
                x.nrows(),
                y.len()
            )));
        }
        let mut offsets = Vec::with_capacity(groups.len() + 1);
        offsets.push(0);
        for g in &groups {
            if g.size == 0 {
                return Err(SsglError::InvalidConfig(format!("group `{}` is empty", g.id)));
            }
            offsets.push(offsets.last().unwrap() + g.size);
        }
        let p = *offsets.last().unwrap();
        if p != x.ncols() {
            return Err(SsglError::DimensionMismatch(format!(
                "group sizes sum to {p} but design has {} columns",
                x.ncols()
            )));
        }
        let transforms = groups.iter().map(|g| OrthoTransform::identity(g.size)).collect();
        let x_means = DVector::zeros(p);
        Ok(GroupedDesign {
            x,
            y,
            y_mean: 0.0,
            x_means,
            groups,
            offsets,
            transforms,
            centered: false,
            orthonormal: false,
        })
    }

    /// One group per column.
    pub fn ungrouped(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let groups = (0..x.ncols()).map(|j| GroupSpec::new(format!("x{}", j + 1), 1)).collect();
        Self::new(x, y, groups)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_penalized(&self) -> usize {
        self.groups.iter().filter(|g| g.penalized).count()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Response on the working (centered, if [`center`](Self::center) ran) scale.
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn x_means(&self) -> &DVector<f64> {
        &self.x_means
    }

    pub fn groups(&self) -> &[GroupSpec] {
        &self.groups
    }

    pub fn group(&self, g: usize) -> &GroupSpec {
        &self.groups[g]
    }

    pub fn group_range(&self, g: usize) -> Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }

    /// Column block of group `g` as one contiguous column-major slice.
    pub fn block(&self, g: usize) -> &[f64] {
        let n = self.n();
        let r = self.group_range(g);
        &self.x.as_slice()[r.start * n..r.end * n]
    }

    pub fn transforms(&self) -> &[OrthoTransform] {
        &self.transforms
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    /// Index of the group owning column `j`.
    pub fn group_of_column(&self, j: usize) -> usize {
        match self.offsets.binary_search(&j) {
            Ok(g) => g,
            Err(g) => g - 1,
        }
    }

    /// Subtract column means from `X` and the mean from `y`; the means are kept
    /// for prediction. Centering an already centered design is a no-op.
    pub fn center(mut self) -> Self {
        let n = self.n();
        if n == 0 || self.centered {
            return self;
        }
        let y_mean = linalg::mean(self.y.as_slice());
        self.y.add_scalar_mut(-y_mean);
        self.y_mean += y_mean;
        for j in 0..self.p() {
            let mut col = self.x.column_mut(j);
            let m = col.mean();
            col.add_scalar_mut(-m);
            self.x_means[j] += m;
        }
        self.centered = true;
        self
    }

    /// Rescale every group so that `X_g^T X_g = n I`, via thin QR.
    pub fn orthonormalize(mut self) -> Result<(Self, Vec<OrthoTransform>)> {
        let n = self.n();
        let sqrt_n = (n as f64).sqrt();
        let mut step = Vec::with_capacity(self.n_groups());
        for g in 0..self.n_groups() {
            let spec = &self.groups[g];
            let m = spec.size;
            if n <= m {
                return Err(SsglError::SampleTooSmall {
                    group: spec.id.clone(),
                    n,
                    size: m,
                });
            }
            let range = self.group_range(g);
            let block = self.x.columns(range.start, m).clone_owned();

            let sv = block.clone().svd(false, false).singular_values;
            let smax = sv.max();
            let rank = sv.iter().filter(|&&s| s > RANK_TOL * smax).count();
            if smax <= 0.0 || !smax.is_finite() || rank < m {
                return Err(SsglError::RankDeficientGroup {
                    group: spec.id.clone(),
                    rank: if smax > 0.0 { rank } else { 0 },
                    size: m,
                });
            }

            let qr = block.qr();
            let mut q = qr.q();
            let mut r = qr.r();
            // Positive diagonal in R makes the factorization unique, so an
            // already orthonormal block maps to the identity.
            for k in 0..m {
                if r[(k, k)] < 0.0 {
                    r.row_mut(k).neg_mut();
                    q.column_mut(k).neg_mut();
                }
            }
            let r_inv = r
                .try_inverse()
                .ok_or_else(|| SsglError::RankDeficientGroup {
                    group: spec.id.clone(),
                    rank,
                    size: m,
                })?;
            let t = r_inv * sqrt_n;
            self.x.columns_mut(range.start, m).copy_from(&(q * sqrt_n));
            self.transforms[g].matrix = &self.transforms[g].matrix * &t;
            step.push(OrthoTransform { matrix: t, rank });
        }
        self.orthonormal = true;
        Ok((self, step))
    }

    /// Map raw (uncentered, untransformed) feature rows onto the working scale.
    pub fn project(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if raw.ncols() != self.p() {
            return Err(SsglError::DimensionMismatch(format!(
                "expected {} feature columns, got {}",
                self.p(),
                raw.ncols()
            )));
        }
        let mut out = DMatrix::zeros(raw.nrows(), self.p());
        for g in 0..self.n_groups() {
            let r = self.group_range(g);
            let m = r.len();
            let mut block = raw.columns(r.start, m).clone_owned();
            for (k, j) in r.clone().enumerate() {
                block.column_mut(k).add_scalar_mut(-self.x_means[j]);
            }
            out.columns_mut(r.start, m)
                .copy_from(&(block * &self.transforms[g].matrix));
        }
        Ok(out)
    }

    /// Coefficients on the original (pre-orthonormalization) feature scale.
    pub fn to_original(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        back_transform(beta, &self.transforms, &self.offsets)
    }

    /// Intercept on the original feature scale for working-scale coefficients.
    pub fn intercept(&self, beta: &DVector<f64>) -> Result<f64> {
        let orig = self.to_original(beta)?;
        Ok(self.y_mean - self.x_means.dot(&orig))
    }

    /// Prediction for raw feature rows.
    pub fn predict_raw(&self, raw: &DMatrix<f64>, beta: &DVector<f64>) -> Result<DVector<f64>> {
        let xp = self.project(raw)?;
        let mut pred = xp * beta;
        pred.add_scalar_mut(self.y_mean);
        Ok(pred)
    }

    /// `Y - X beta` on the working scale.
    pub fn residual(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * beta
    }
}

/// Map working-scale coefficients back through the recorded transforms.
pub fn back_transform(
    beta_ortho: &DVector<f64>,
    transforms: &[OrthoTransform],
    offsets: &[usize],
) -> Result<DVector<f64>> {
    if offsets.len() != transforms.len() + 1 || *offsets.last().unwrap_or(&0) != beta_ortho.len() {
        return Err(SsglError::DimensionMismatch(format!(
            "coefficient vector of length {} does not match {} groups",
            beta_ortho.len(),
            transforms.len()
        )));
    }
    let mut out = DVector::zeros(beta_ortho.len());
    for (g, t) in transforms.iter().enumerate() {
        let (s, e) = (offsets[g], offsets[g + 1]);
        if t.matrix.nrows() != e - s {
            return Err(SsglError::DimensionMismatch(format!(
                "transform {g} is {}x{} but group has {} columns",
                t.matrix.nrows(),
                t.matrix.ncols(),
                e - s
            )));
        }
        let bg = beta_ortho.rows(s, e - s);
        if bg.iter().all(|&v| v == 0.0) {
            continue;
        }
        out.rows_mut(s, e - s).copy_from(&(&t.matrix * bg));
    }
    Ok(out)
}

/// Offsets (`len = G + 1`) for a list of group sizes.
pub fn offsets_from_sizes(sizes: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut out = vec![0];
    for s in sizes {
        out.push(out.last().unwrap() + s);
    }
    out
}

/// Centered and orthonormalized design in one step.
pub fn prepare(x: DMatrix<f64>, y: DVector<f64>, groups: Vec<GroupSpec>) -> Result<GroupedDesign> {
    let (d, _) = GroupedDesign::new(x, y, groups)?.center().orthonormalize()?;
    Ok(d)
}
