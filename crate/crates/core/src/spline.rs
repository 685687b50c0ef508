//! Spline bases and quadratic penalties for every smooth term type the
//! models need: centered univariate smooths, interaction-only tensor
//! products, per-level factor smooths, and by-factor smooths.
//!
//! The univariate basis is a natural cubic spline in the "values at knots"
//! parameterization: coefficient j is the smooth's value at knot j, and the
//! curvature penalty gᵀKg equals the exact integrated squared second
//! derivative of the natural interpolant. The penalty null space is
//! {constant, linear}, the same null space a thin plate regression spline
//! carries, so the two are interchangeable behind this interface; the basis
//! family is recorded in fit metadata.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum SplineError {
    #[error("basis dimension k={0} too small, need k >= 3")]
    KTooSmall(usize),

    #[error("need at least {needed} distinct covariate values for k={needed}, got {got}")]
    TooFewDistinct { needed: usize, got: usize },

    #[error("covariate vectors have mismatched lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("factor level `{0}` was not present when the basis was built")]
    UnseenLevel(String),

    #[error("factor has no levels")]
    NoLevels,

    #[error("linear system is singular while building `{0}`")]
    Singular(String),
}

/// A block of design columns plus its quadratic penalties.
///
/// Each penalty is a symmetric PSD matrix over this block's coefficients;
/// a block with several penalties gets one smoothing parameter per penalty.
#[derive(Debug, Clone)]
pub struct BasisBlock {
    pub label: String,
    pub columns: Mat<f64>,
    pub penalties: Vec<Mat<f64>>,
}

impl BasisBlock {
    pub fn ncols(&self) -> usize {
        self.columns.ncols()
    }
}

/// Natural cubic spline on fixed knots, parameterized by its values at the
/// knots. Linear extrapolation outside the knot range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NaturalSpline {
    knots: Vec<f64>,
    /// Q of the Green-Silverman Qᵀg = Rγ system, k×(k−2).
    q: Mat<f64>,
    /// R⁻¹Qᵀ, maps knot values to interior curvatures, (k−2)×k.
    gamma_map: Mat<f64>,
}

/// Linear-interpolation quantile knots over the distinct values of `x`.
pub fn quantile_knots(x: &[f64], k: usize) -> Result<Vec<f64>, SplineError> {
    if k < 3 {
        return Err(SplineError::KTooSmall(k));
    }
    let mut v: Vec<f64> = x.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.len() < k {
        return Err(SplineError::TooFewDistinct {
            needed: k,
            got: v.len(),
        });
    }
    let mut knots = Vec::with_capacity(k);
    for i in 0..k {
        let h = (v.len() - 1) as f64 * i as f64 / (k - 1) as f64;
        let lo = h.floor() as usize;
        let val = if lo + 1 >= v.len() {
            v[v.len() - 1]
        } else {
            v[lo] + (h - lo as f64) * (v[lo + 1] - v[lo])
        };
        knots.push(val);
    }
    Ok(knots)
}

impl NaturalSpline {
    pub fn new(knots: Vec<f64>) -> Result<Self, SplineError> {
        let k = knots.len();
        if k < 3 {
            return Err(SplineError::KTooSmall(k));
        }
        for w in knots.windows(2) {
            if !(w[1] > w[0]) {
                return Err(SplineError::TooFewDistinct { needed: k, got: 0 });
            }
        }
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        // Q: k×(k−2); column j−1 couples knots j−1, j, j+1
        let mut q = Mat::<f64>::zeros(k, k - 2);
        // R: (k−2)×(k−2) SPD tridiagonal
        let mut r = Mat::<f64>::zeros(k - 2, k - 2);
        for j in 1..k - 1 {
            let c = j - 1;
            q[(j - 1, c)] = 1.0 / h[j - 1];
            q[(j, c)] = -1.0 / h[j - 1] - 1.0 / h[j];
            q[(j + 1, c)] = 1.0 / h[j];
            r[(c, c)] = (h[j - 1] + h[j]) / 3.0;
            if j + 1 < k - 1 {
                r[(c, c + 1)] = h[j] / 6.0;
                r[(c + 1, c)] = h[j] / 6.0;
            }
        }
        let llt = r
            .llt(Side::Lower)
            .map_err(|_| SplineError::Singular("natural spline curvature system".to_string()))?;
        let gamma_map = llt.solve(q.transpose());
        Ok(NaturalSpline {
            knots,
            q,
            gamma_map,
        })
    }

    pub fn from_quantiles(x: &[f64], k: usize) -> Result<Self, SplineError> {
        NaturalSpline::new(quantile_knots(x, k)?)
    }

    pub fn k(&self) -> usize {
        self.knots.len()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Adds `w`·(row of the full curvature map for knot index j) into `row`.
    /// Boundary knots have zero curvature under natural boundary conditions.
    fn add_gamma_row(&self, row: &mut [f64], j: usize, w: f64) {
        if j == 0 || j == self.k() - 1 || w == 0.0 {
            return;
        }
        for c in 0..self.k() {
            row[c] += w * self.gamma_map[(j - 1, c)];
        }
    }

    fn basis_row(&self, x: f64, row: &mut [f64]) {
        let k = self.k();
        let t = &self.knots;
        row.fill(0.0);
        if x <= t[0] {
            // linear extrapolation from the left boundary
            let h = t[1] - t[0];
            let d = x - t[0];
            row[0] += 1.0 - d / h;
            row[1] += d / h;
            self.add_gamma_row(row, 1, -d * h / 6.0);
            return;
        }
        if x >= t[k - 1] {
            let h = t[k - 1] - t[k - 2];
            let d = x - t[k - 1];
            row[k - 1] += 1.0 + d / h;
            row[k - 2] -= d / h;
            self.add_gamma_row(row, k - 2, d * h / 6.0);
            return;
        }
        // interval index i such that t[i] < x <= t[i+1] (x strictly inside)
        let i = t.partition_point(|&kn| kn < x) - 1;
        let h = t[i + 1] - t[i];
        let a = x - t[i];
        let b = t[i + 1] - x;
        row[i] += b / h;
        row[i + 1] += a / h;
        let s = -a * b / 6.0;
        self.add_gamma_row(row, i, s * (1.0 + b / h));
        self.add_gamma_row(row, i + 1, s * (1.0 + a / h));
    }

    /// Evaluates the basis at each x: n×k, column j is the cardinal spline
    /// that is 1 at knot j and 0 at the others.
    pub fn basis(&self, x: &[f64]) -> Mat<f64> {
        let k = self.k();
        let mut out = Mat::<f64>::zeros(x.len(), k);
        let mut row = vec![0.0; k];
        for (i, &xi) in x.iter().enumerate() {
            self.basis_row(xi, &mut row);
            for c in 0..k {
                out[(i, c)] = row[c];
            }
        }
        out
    }

    /// K = Q R⁻¹ Qᵀ; gᵀKg = ∫ f″(x)² dx exactly for the natural interpolant.
    pub fn curvature_penalty(&self) -> Mat<f64> {
        let k = &self.q * &self.gamma_map;
        symmetrize(&k)
    }

    /// First-order penalty Σ (g_{i+1} − g_i)²/h_i = ∫ f′(x)² dx of the linear
    /// interpolant; null space is {constant} only.
    pub fn difference_penalty(&self) -> Mat<f64> {
        let k = self.k();
        let mut p = Mat::<f64>::zeros(k, k);
        for i in 0..k - 1 {
            let w = 1.0 / (self.knots[i + 1] - self.knots[i]);
            p[(i, i)] += w;
            p[(i + 1, i + 1)] += w;
            p[(i, i + 1)] -= w;
            p[(i + 1, i)] -= w;
        }
        p
    }
}

fn symmetrize(m: &Mat<f64>) -> Mat<f64> {
    let n = m.nrows();
    let mut out = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }
    out
}

/// Orthonormal basis of the null space of cᵀ (one Householder reflection),
/// k×(k−1). Used to absorb the sum-to-zero constraint into the basis.
fn householder_null_basis(c: &[f64]) -> Mat<f64> {
    let k = c.len();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut z = Mat::<f64>::zeros(k, k - 1);
    if norm == 0.0 {
        // constraint is vacuous; drop the last coordinate
        for j in 0..k - 1 {
            z[(j, j)] = 1.0;
        }
        return z;
    }
    let mut v: Vec<f64> = c.to_vec();
    v[0] += c[0].signum() * norm;
    let vtv: f64 = v.iter().map(|x| x * x).sum();
    // columns 1..k of H = I − 2vvᵀ/vᵀv
    for j in 1..k {
        for i in 0..k {
            let id = if i == j { 1.0 } else { 0.0 };
            z[(i, j - 1)] = id - 2.0 * v[i] * v[j] / vtv;
        }
    }
    z
}

/// Univariate smooth with the sum-to-zero constraint absorbed: k−1 columns,
/// one curvature penalty. Reusable on new data via `rows`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CenteredSmooth {
    pub spline: NaturalSpline,
    /// Constraint null basis, k×(k−1), fixed at build time.
    z: Mat<f64>,
    pub penalty: Mat<f64>,
}

impl CenteredSmooth {
    pub fn new(x: &[f64], k: usize) -> Result<Self, SplineError> {
        let spline = NaturalSpline::from_quantiles(x, k)?;
        let raw = spline.basis(x);
        let mut colsum = vec![0.0; k];
        for i in 0..raw.nrows() {
            for j in 0..k {
                colsum[j] += raw[(i, j)];
            }
        }
        let z = householder_null_basis(&colsum);
        let kmat = spline.curvature_penalty();
        let penalty = symmetrize(&(z.transpose() * &kmat * &z));
        Ok(CenteredSmooth { spline, z, penalty })
    }

    pub fn ncols(&self) -> usize {
        self.z.ncols()
    }

    pub fn rows(&self, x: &[f64]) -> Mat<f64> {
        &self.spline.basis(x) * &self.z
    }
}

/// Builds a centered univariate smooth block with a curvature penalty whose
/// null space contains constant and linear functions.
pub fn smooth_basis(x: &[f64], k: usize, label: &str) -> Result<(BasisBlock, CenteredSmooth), SplineError> {
    let smooth = CenteredSmooth::new(x, k)?;
    let block = BasisBlock {
        label: label.to_string(),
        columns: smooth.rows(x),
        penalties: vec![smooth.penalty.clone()],
    };
    Ok((block, smooth))
}

/// Interaction-only tensor product of two centered marginal smooths.
///
/// Columns are the row-wise Kronecker product of the marginal bases with the
/// span of [1 | marginal₁ | marginal₂] projected out, so the block carries no
/// main effects; the projection correction is stored so new data maps through
/// the same linear transform. One penalty per marginal direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorSmooth {
    pub m1: CenteredSmooth,
    pub m2: CenteredSmooth,
    /// (1+c1+c2)×(c1·c2); new rows map as T_new − B_new·correction.
    correction: Mat<f64>,
    pub penalties: Vec<Mat<f64>>,
}

fn rowwise_kronecker(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let n = a.nrows();
    let (c1, c2) = (a.ncols(), b.ncols());
    let mut t = Mat::<f64>::zeros(n, c1 * c2);
    for i in 0..n {
        for j1 in 0..c1 {
            let av = a[(i, j1)];
            for j2 in 0..c2 {
                t[(i, j1 * c2 + j2)] = av * b[(i, j2)];
            }
        }
    }
    t
}

impl TensorSmooth {
    pub fn new(x1: &[f64], x2: &[f64], k1: usize, k2: usize) -> Result<Self, SplineError> {
        if x1.len() != x2.len() {
            return Err(SplineError::LengthMismatch(x1.len(), x2.len()));
        }
        let m1 = CenteredSmooth::new(x1, k1)?;
        let m2 = CenteredSmooth::new(x2, k2)?;
        Self::from_marginals(m1, m2, x1, x2)
    }

    pub fn from_marginals(
        m1: CenteredSmooth,
        m2: CenteredSmooth,
        x1: &[f64],
        x2: &[f64],
    ) -> Result<Self, SplineError> {
        let a = m1.rows(x1);
        let b = m2.rows(x2);
        let t = rowwise_kronecker(&a, &b);
        let n = a.nrows();
        let (c1, c2) = (a.ncols(), b.ncols());
        // B = [1 | marginal1 | marginal2]
        let mut bmat = Mat::<f64>::zeros(n, 1 + c1 + c2);
        for i in 0..n {
            bmat[(i, 0)] = 1.0;
            for j in 0..c1 {
                bmat[(i, 1 + j)] = a[(i, j)];
            }
            for j in 0..c2 {
                bmat[(i, 1 + c1 + j)] = b[(i, j)];
            }
        }
        let btb = bmat.transpose() * &bmat;
        let btt = bmat.transpose() * &t;
        let correction = btb
            .llt(Side::Lower)
            .map_err(|_| SplineError::Singular("tensor interaction projection".to_string()))?
            .solve(&btt);
        // penalties on the c1·c2 coefficient grid, column index j1·c2 + j2
        let s1 = kron(&m1.penalty, &identity(c2));
        let s2 = kron(&identity(c1), &m2.penalty);
        Ok(TensorSmooth {
            m1,
            m2,
            correction,
            penalties: vec![s1, s2],
        })
    }

    pub fn ncols(&self) -> usize {
        self.m1.ncols() * self.m2.ncols()
    }

    pub fn rows(&self, x1: &[f64], x2: &[f64]) -> Mat<f64> {
        let a = self.m1.rows(x1);
        let b = self.m2.rows(x2);
        let t = rowwise_kronecker(&a, &b);
        let n = a.nrows();
        let (c1, c2) = (a.ncols(), b.ncols());
        let mut bmat = Mat::<f64>::zeros(n, 1 + c1 + c2);
        for i in 0..n {
            bmat[(i, 0)] = 1.0;
            for j in 0..c1 {
                bmat[(i, 1 + j)] = a[(i, j)];
            }
            for j in 0..c2 {
                bmat[(i, 1 + c1 + j)] = b[(i, j)];
            }
        }
        &t - &(&bmat * &self.correction)
    }
}

fn identity(n: usize) -> Mat<f64> {
    let mut m = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 1.0;
    }
    m
}

fn kron(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let (ar, ac) = (a.nrows(), a.ncols());
    let (br, bc) = (b.nrows(), b.ncols());
    let mut out = Mat::<f64>::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let av = a[(i, j)];
            if av == 0.0 {
                continue;
            }
            for p in 0..br {
                for q in 0..bc {
                    out[(i * br + p, j * bc + q)] = av * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Builds the interaction-only tensor block from two covariates.
pub fn tensor_interaction(
    x1: &[f64],
    x2: &[f64],
    k1: usize,
    k2: usize,
    label: &str,
) -> Result<(BasisBlock, TensorSmooth), SplineError> {
    let ts = TensorSmooth::new(x1, x2, k1, k2)?;
    let block = BasisBlock {
        label: label.to_string(),
        columns: ts.rows(x1, x2),
        penalties: ts.penalties.clone(),
    };
    Ok((block, ts))
}

/// One wiggly curve per factor level, all sharing smoothing parameters.
///
/// Coefficients are level-major: level ℓ owns columns ℓ·k .. (ℓ+1)·k of the
/// block. Two penalties over the whole block: an order-m roughness penalty
/// replicated per level, and an identity ridge on every coefficient, so each
/// level's curve (intercept included) shrinks to zero adjustment as λ→∞.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorSmooth {
    pub spline: NaturalSpline,
    pub levels: Vec<String>,
    pub m: usize,
    pub penalties: Vec<Mat<f64>>,
}

impl FactorSmooth {
    pub fn new(
        x: &[f64],
        level_codes: &[usize],
        levels: &[String],
        k: usize,
        m: usize,
    ) -> Result<Self, SplineError> {
        if x.len() != level_codes.len() {
            return Err(SplineError::LengthMismatch(x.len(), level_codes.len()));
        }
        if levels.is_empty() {
            return Err(SplineError::NoLevels);
        }
        let spline = NaturalSpline::from_quantiles(x, k)?;
        let rough = match m {
            1 => spline.difference_penalty(),
            _ => spline.curvature_penalty(),
        };
        let nl = levels.len();
        let total = k * nl;
        let mut p1 = Mat::<f64>::zeros(total, total);
        for l in 0..nl {
            for i in 0..k {
                for j in 0..k {
                    p1[(l * k + i, l * k + j)] = rough[(i, j)];
                }
            }
        }
        let p2 = identity(total);
        Ok(FactorSmooth {
            spline,
            levels: levels.to_vec(),
            m,
            penalties: vec![p1, p2],
        })
    }

    pub fn ncols(&self) -> usize {
        self.spline.k() * self.levels.len()
    }

    pub fn level_index(&self, level: &str) -> Result<usize, SplineError> {
        self.levels
            .iter()
            .position(|l| l == level)
            .ok_or_else(|| SplineError::UnseenLevel(level.to_string()))
    }

    /// Rows for new data given per-row level names.
    pub fn rows<S: AsRef<str>>(&self, x: &[f64], level_names: &[S]) -> Result<Mat<f64>, SplineError> {
        if x.len() != level_names.len() {
            return Err(SplineError::LengthMismatch(x.len(), level_names.len()));
        }
        let k = self.spline.k();
        let mut out = Mat::<f64>::zeros(x.len(), self.ncols());
        let mut row = vec![0.0; k];
        for i in 0..x.len() {
            let l = self.level_index(level_names[i].as_ref())?;
            self.spline.basis_row(x[i], &mut row);
            for c in 0..k {
                out[(i, l * k + c)] = row[c];
            }
        }
        Ok(out)
    }

    /// Rows using the training factor's level codes directly.
    pub fn rows_coded(&self, x: &[f64], level_codes: &[usize]) -> Result<Mat<f64>, SplineError> {
        if x.len() != level_codes.len() {
            return Err(SplineError::LengthMismatch(x.len(), level_codes.len()));
        }
        let k = self.spline.k();
        let mut out = Mat::<f64>::zeros(x.len(), self.ncols());
        let mut row = vec![0.0; k];
        for i in 0..x.len() {
            let l = level_codes[i];
            self.spline.basis_row(x[i], &mut row);
            for c in 0..k {
                out[(i, l * k + c)] = row[c];
            }
        }
        Ok(out)
    }
}

/// Builds a factor smooth block (shared smoothing across levels).
pub fn factor_smooth(
    x: &[f64],
    level_codes: &[usize],
    levels: &[String],
    k: usize,
    m: usize,
    label: &str,
) -> Result<(BasisBlock, FactorSmooth), SplineError> {
    let fs = FactorSmooth::new(x, level_codes, levels, k, m)?;
    let block = BasisBlock {
        label: label.to_string(),
        columns: fs.rows_coded(x, level_codes)?,
        penalties: fs.penalties.clone(),
    };
    Ok((block, fs))
}

/// One independent centered smooth per level of a small factor, each level
/// with its own smoothing parameter (its own penalty matrix over the block).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BySmooth {
    pub smooth: CenteredSmooth,
    pub levels: Vec<String>,
    pub penalties: Vec<Mat<f64>>,
}

impl BySmooth {
    pub fn new(
        x: &[f64],
        level_codes: &[usize],
        levels: &[String],
        k: usize,
    ) -> Result<Self, SplineError> {
        if x.len() != level_codes.len() {
            return Err(SplineError::LengthMismatch(x.len(), level_codes.len()));
        }
        if levels.is_empty() {
            return Err(SplineError::NoLevels);
        }
        let smooth = CenteredSmooth::new(x, k)?;
        let c = smooth.ncols();
        let nl = levels.len();
        let mut penalties = Vec::with_capacity(nl);
        for l in 0..nl {
            let mut p = Mat::<f64>::zeros(c * nl, c * nl);
            for i in 0..c {
                for j in 0..c {
                    p[(l * c + i, l * c + j)] = smooth.penalty[(i, j)];
                }
            }
            penalties.push(p);
        }
        Ok(BySmooth {
            smooth,
            levels: levels.to_vec(),
            penalties,
        })
    }

    pub fn ncols(&self) -> usize {
        self.smooth.ncols() * self.levels.len()
    }

    pub fn rows_coded(&self, x: &[f64], level_codes: &[usize]) -> Result<Mat<f64>, SplineError> {
        if x.len() != level_codes.len() {
            return Err(SplineError::LengthMismatch(x.len(), level_codes.len()));
        }
        let base = self.smooth.rows(x);
        let c = self.smooth.ncols();
        let mut out = Mat::<f64>::zeros(x.len(), self.ncols());
        for i in 0..x.len() {
            let l = level_codes[i];
            for j in 0..c {
                out[(i, l * c + j)] = base[(i, j)];
            }
        }
        Ok(out)
    }

    pub fn rows<S: AsRef<str>>(&self, x: &[f64], level_names: &[S]) -> Result<Mat<f64>, SplineError> {
        let codes: Vec<usize> = level_names
            .iter()
            .map(|n| {
                self.levels
                    .iter()
                    .position(|l| l == n.as_ref())
                    .ok_or_else(|| SplineError::UnseenLevel(n.as_ref().to_string()))
            })
            .collect::<Result<_, _>>()?;
        self.rows_coded(x, &codes)
    }
}

/// Builds a by-factor smooth block: per-level centered smooths with
/// independent smoothing parameters.
pub fn by_smooth(
    x: &[f64],
    level_codes: &[usize],
    levels: &[String],
    k: usize,
    label: &str,
) -> Result<(BasisBlock, BySmooth), SplineError> {
    let bs = BySmooth::new(x, level_codes, levels, k)?;
    let block = BasisBlock {
        label: label.to_string(),
        columns: bs.rows_coded(x, level_codes)?,
        penalties: bs.penalties.clone(),
    };
    Ok((block, bs))
}
