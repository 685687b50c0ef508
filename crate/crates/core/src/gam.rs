//! Penalized least squares GAM engine: multi-penalty smoothing parameter
//! selection (REML default, GCV by flag), AR(1) errors via two-step
//! whitening, conditional AIC, concurvity, and prediction with posterior
//! standard errors.

use std::collections::BTreeSet;
use std::io::{Read as _, Write as _};
use std::ops::Range;
use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{Design, DesignError, ModelSpec};
use crate::frame::{Frame, FrameError};

#[derive(Error, Debug)]
pub enum GamError {
    #[error(transparent)]
    Design(#[from] DesignError),

    #[error(transparent)]
    Frame(#[from] FrameError),

    #[error("penalized system is singular; consider stronger constraints or larger smoothing parameters ({0})")]
    Singular(String),

    #[error("AR(1) coefficient {0} outside (-1, 1)")]
    RhoOutOfRange(f64),

    #[error("no token has 2 or more residuals; cannot estimate lag-1 autocorrelation")]
    NoResidualPairs,

    #[error("term `{0}` not present in the fitted model")]
    UnknownTerm(String),

    #[error("response column length {0} does not match design rows {1}")]
    LengthMismatch(usize, usize),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("model file {path} is corrupt: {detail}")]
    BadModelFile { path: String, detail: String },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingMethod {
    Reml,
    Gcv,
}

/// AR(1) handling: off, a fixed coefficient, or the two-step recipe
/// (estimate lag-1 autocorrelation from a ρ=0 pre-fit, then refit).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ar1 {
    Off,
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub method: SmoothingMethod,
    pub ar1: Ar1,
    /// Warm start for the smoothing parameters, one per penalty.
    #[serde(default)]
    pub lambda_init: Option<Vec<f64>>,
    pub lambda_bounds: (f64, f64),
    pub max_cycles: usize,
    /// Absolute convergence tolerance on the selection criterion.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            method: SmoothingMethod::Reml,
            ar1: Ar1::Off,
            lambda_init: None,
            lambda_bounds: (1e-6, 1e8),
            max_cycles: 8,
            tol: 1e-6,
        }
    }
}

/// e^(ΔAIC/2): how many times more likely the lower-AIC model is.
pub fn evidence_ratio(delta_aic: f64) -> f64 {
    (delta_aic / 2.0).exp()
}

// ---------------------------------------------------------------------------
// sufficient statistics and penalty bookkeeping

struct SuffStats {
    xtx: Mat<f64>,
    xty: Mat<f64>,
    yty: f64,
    n: usize,
}

fn suff_stats(x: &Mat<f64>, y: &[f64]) -> SuffStats {
    let n = x.nrows();
    let p = x.ncols();
    let xtx = x.transpose() * x;
    let mut xty = Mat::<f64>::zeros(p, 1);
    for i in 0..n {
        for j in 0..p {
            xty[(j, 0)] += x[(i, j)] * y[i];
        }
    }
    let yty = y.iter().map(|v| v * v).sum();
    SuffStats { xtx, xty, yty, n }
}

/// Penalties sharing a column span form a group. When the group members are
/// simultaneously diagonalizable (true for all term types this crate builds:
/// factor-smooth roughness+ridge, tensor marginal pairs, per-level by-smooth
/// blocks), the log-pseudo-determinant of Σλⱼ Sⱼ reduces to a sum over joint
/// eigenvalues, which makes REML evaluations cheap.
struct PenaltyGroup {
    members: Vec<usize>,
    span: Range<usize>,
    /// w×m: joint eigenvalues of each member in a shared eigenbasis.
    joint: Option<JointEigs>,
    /// Span-local matrices for the general per-evaluation eigen fallback.
    mats: Vec<Mat<f64>>,
}

struct JointEigs {
    eigs: Mat<f64>,
    /// Rows with a structurally nonzero eigenvalue (penalty range).
    kept: Vec<usize>,
}

fn eigen_sym(m: &Mat<f64>) -> Option<(Mat<f64>, Vec<f64>)> {
    let e = m.self_adjoint_eigen(Side::Lower).ok()?;
    let u = e.U().to_owned();
    let w = m.nrows();
    let mut vals = vec![0.0; w];
    let s = e.S();
    let sc = s.column_vector();
    for i in 0..w {
        vals[i] = sc[i];
    }
    Some((u, vals))
}

fn penalty_groups(design: &Design) -> Vec<PenaltyGroup> {
    let mut groups: Vec<PenaltyGroup> = Vec::new();
    for (idx, pen) in design.penalties.iter().enumerate() {
        if let Some(g) = groups.iter_mut().find(|g| g.span == pen.span) {
            g.members.push(idx);
            g.mats.push(pen.matrix.clone());
        } else {
            groups.push(PenaltyGroup {
                members: vec![idx],
                span: pen.span.clone(),
                joint: None,
                mats: vec![pen.matrix.clone()],
            });
        }
    }
    for g in &mut groups {
        g.joint = joint_diagonalize(&g.mats);
    }
    groups
}

/// Tries to diagonalize all members in one shared eigenbasis by
/// eigendecomposing an irrationally weighted sum (weights split degeneracies
/// that a plain sum could merge). Returns None if the members do not commute.
fn joint_diagonalize(mats: &[Mat<f64>]) -> Option<JointEigs> {
    let w = mats[0].nrows();
    let mut c = Mat::<f64>::zeros(w, w);
    for (j, s) in mats.iter().enumerate() {
        let wt = 1.0 + (j as f64 + 1.0) * std::f64::consts::SQRT_2;
        for a in 0..w {
            for b in 0..w {
                c[(a, b)] += wt * s[(a, b)];
            }
        }
    }
    let (u, _) = eigen_sym(&c)?;
    let mut eigs = Mat::<f64>::zeros(w, mats.len());
    let mut global_max = 0.0f64;
    for (j, s) in mats.iter().enumerate() {
        let m = u.transpose() * s * &u;
        let max_diag = (0..w).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
        for a in 0..w {
            for b in 0..w {
                if a != b && m[(a, b)].abs() > 1e-8 * max_diag.max(1e-300) {
                    return None;
                }
            }
        }
        for i in 0..w {
            eigs[(i, j)] = m[(i, i)].max(0.0);
            global_max = global_max.max(eigs[(i, j)]);
        }
    }
    let kept = (0..w)
        .filter(|&i| (0..mats.len()).any(|j| eigs[(i, j)] > 1e-10 * global_max))
        .collect();
    Some(JointEigs { eigs, kept })
}

impl PenaltyGroup {
    /// (rank, log-pseudo-determinant) of Σⱼ λⱼSⱼ over this group.
    fn rank_logdet(&self, lambdas: &[f64]) -> (usize, f64) {
        if let Some(j) = &self.joint {
            let mut logdet = 0.0;
            for &i in &j.kept {
                let ev: f64 = self
                    .members
                    .iter()
                    .enumerate()
                    .map(|(c, &m)| lambdas[m] * j.eigs[(i, c)])
                    .sum();
                logdet += ev.max(1e-300).ln();
            }
            (j.kept.len(), logdet)
        } else {
            // general fallback: eigen of the combined local matrix
            let w = self.span.len();
            let mut c = Mat::<f64>::zeros(w, w);
            for (j, s) in self.mats.iter().enumerate() {
                let l = lambdas[self.members[j]];
                for a in 0..w {
                    for b in 0..w {
                        c[(a, b)] += l * s[(a, b)];
                    }
                }
            }
            let vals = match c.self_adjoint_eigenvalues(Side::Lower) {
                Ok(v) => v,
                Err(_) => return (0, 0.0),
            };
            let max = vals.iter().cloned().fold(0.0f64, f64::max);
            let tol = 1e-10 * max.max(1e-300);
            let mut rank = 0;
            let mut logdet = 0.0;
            for v in vals {
                if v > tol {
                    rank += 1;
                    logdet += v.ln();
                }
            }
            (rank, logdet)
        }
    }
}

fn assemble_penalized(stats: &SuffStats, design: &Design, lambdas: &[f64]) -> Mat<f64> {
    let mut a = stats.xtx.clone();
    for (pen, &l) in design.penalties.iter().zip(lambdas) {
        let off = pen.span.start;
        let w = pen.span.len();
        for i in 0..w {
            for j in 0..w {
                a[(off + i, off + j)] += l * pen.matrix[(i, j)];
            }
        }
    }
    a
}

fn logdet_from_llt(llt: &faer::linalg::solvers::Llt<f64>) -> f64 {
    let l = llt.L();
    (0..l.nrows()).map(|i| l[(i, i)].max(1e-300).ln()).sum::<f64>() * 2.0
}

fn criterion(
    stats: &SuffStats,
    design: &Design,
    groups: &[PenaltyGroup],
    lambdas: &[f64],
    method: SmoothingMethod,
) -> f64 {
    let a = assemble_penalized(stats, design, lambdas);
    let Ok(llt) = a.llt(Side::Lower) else {
        return f64::INFINITY;
    };
    let beta = llt.solve(&stats.xty);
    let p = stats.xtx.nrows();
    let n = stats.n as f64;
    let bt_xty: f64 = (0..p).map(|j| beta[(j, 0)] * stats.xty[(j, 0)]).sum();
    match method {
        SmoothingMethod::Reml => {
            // penalized RSS; clamping guards exact-interpolation corner cases
            let d = (stats.yty - bt_xty).max(1e-12 * stats.yty.max(1e-300));
            let logdet_a = logdet_from_llt(&llt);
            let mut rank_s = 0usize;
            let mut logdet_s = 0.0;
            for g in groups {
                let (r, ld) = g.rank_logdet(lambdas);
                rank_s += r;
                logdet_s += ld;
            }
            let mp = (p - rank_s) as f64;
            let nm = n - mp;
            nm / 2.0 * (1.0 + (2.0 * std::f64::consts::PI * d / nm).ln())
                + (logdet_a - logdet_s) / 2.0
        }
        SmoothingMethod::Gcv => {
            let ainv_xtx = llt.solve(&stats.xtx);
            let edf: f64 = (0..p).map(|i| ainv_xtx[(i, i)]).sum();
            let xtx_beta = &stats.xtx * &beta;
            let bt_xtx_b: f64 = (0..p).map(|j| beta[(j, 0)] * xtx_beta[(j, 0)]).sum();
            let rss = (stats.yty - 2.0 * bt_xty + bt_xtx_b).max(0.0);
            n * rss / (n - edf).powi(2)
        }
    }
}

/// Cyclic coordinate descent on log λ: coarse scan per coordinate followed by
/// golden-section refinement, multi-start unless warm-started.
fn select_lambda(
    stats: &SuffStats,
    design: &Design,
    groups: &[PenaltyGroup],
    opts: &FitOptions,
) -> (Vec<f64>, f64, bool) {
    let m = design.penalties.len();
    if m == 0 {
        return (Vec::new(), f64::NAN, true);
    }
    let (lo, hi) = (opts.lambda_bounds.0.ln(), opts.lambda_bounds.1.ln());
    let eval = |logl: &[f64]| {
        let l: Vec<f64> = logl.iter().map(|v| v.exp()).collect();
        criterion(stats, design, groups, &l, opts.method)
    };

    let starts: Vec<Vec<f64>> = match &opts.lambda_init {
        Some(init) => vec![init.iter().map(|v| v.ln()).collect()],
        None => [1e-2f64, 1.0, 1e2]
            .iter()
            .map(|&s| vec![s.ln(); m])
            .collect(),
    };

    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for start in starts {
        let mut cur = start;
        let mut cur_val = eval(&cur);
        let mut converged = false;
        for _cycle in 0..opts.max_cycles {
            let before = cur_val;
            for j in 0..m {
                // coarse scan including the current point
                let mut cand: Vec<f64> = (0..9)
                    .map(|i| lo + (hi - lo) * i as f64 / 8.0)
                    .collect();
                cand.push(cur[j]);
                let mut best_x = cur[j];
                let mut best_v = cur_val;
                for &x in &cand {
                    if (x - cur[j]).abs() < 1e-12 {
                        continue;
                    }
                    cur[j] = x;
                    let v = eval(&cur);
                    if v < best_v {
                        best_v = v;
                        best_x = x;
                    }
                }
                // golden-section refinement around the scan winner
                let step = (hi - lo) / 8.0;
                let (mut a, mut b) = ((best_x - step).max(lo), (best_x + step).min(hi));
                let phi = (5f64.sqrt() - 1.0) / 2.0;
                let mut x1 = b - phi * (b - a);
                let mut x2 = a + phi * (b - a);
                cur[j] = x1;
                let mut f1 = eval(&cur);
                cur[j] = x2;
                let mut f2 = eval(&cur);
                for _ in 0..25 {
                    if b - a < 1e-2 {
                        break;
                    }
                    if f1 <= f2 {
                        b = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = b - phi * (b - a);
                        cur[j] = x1;
                        f1 = eval(&cur);
                    } else {
                        a = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = a + phi * (b - a);
                        cur[j] = x2;
                        f2 = eval(&cur);
                    }
                }
                let (xg, fg) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
                if fg < best_v {
                    best_v = fg;
                    best_x = xg;
                }
                cur[j] = best_x;
                cur_val = best_v;
            }
            if (before - cur_val).abs() < opts.tol {
                converged = true;
                break;
            }
        }
        if best.as_ref().map(|(_, v, _)| cur_val < *v).unwrap_or(true) {
            best = Some((cur, cur_val, converged));
        }
    }
    let (logl, val, converged) = best.unwrap();
    (logl.iter().map(|v| v.exp()).collect(), val, converged)
}

// ---------------------------------------------------------------------------
// AR(1)

/// Lag-1 autocorrelation of residuals using within-token pairs only.
pub fn estimate_rho(residuals: &[f64], token_starts: &[usize]) -> Result<f64, GamError> {
    let mut num = 0.0;
    let mut den_t = 0.0;
    let mut den_l = 0.0;
    let mut pairs = 0usize;
    for w in token_starts.windows(2) {
        for i in w[0] + 1..w[1] {
            num += residuals[i] * residuals[i - 1];
            den_t += residuals[i] * residuals[i];
            den_l += residuals[i - 1] * residuals[i - 1];
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(GamError::NoResidualPairs);
    }
    let den = (den_t * den_l).sqrt();
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((num / den).clamp(-0.999, 0.999))
}

/// Whitens design rows and response for AR(1) errors: within each token,
/// row_t ← (row_t − ρ·row_{t−1})/√(1−ρ²); the first row of a token is kept.
pub fn whiten(
    x: &Mat<f64>,
    y: &[f64],
    token_starts: &[usize],
    rho: f64,
) -> Result<(Mat<f64>, Vec<f64>), GamError> {
    if !(-1.0 < rho && rho < 1.0) {
        return Err(GamError::RhoOutOfRange(rho));
    }
    let n = x.nrows();
    let p = x.ncols();
    let scale = 1.0 / (1.0 - rho * rho).sqrt();
    let mut xw = Mat::<f64>::zeros(n, p);
    let mut yw = vec![0.0; n];
    for w in token_starts.windows(2) {
        for i in w[0]..w[1] {
            if i == w[0] {
                for j in 0..p {
                    xw[(i, j)] = x[(i, j)];
                }
                yw[i] = y[i];
            } else {
                for j in 0..p {
                    xw[(i, j)] = (x[(i, j)] - rho * x[(i - 1, j)]) * scale;
                }
                yw[i] = (y[i] - rho * y[i - 1]) * scale;
            }
        }
    }
    Ok((xw, yw))
}

// ---------------------------------------------------------------------------
// fitting

const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_MAGIC: &[u8; 4] = b"TLGM";

fn empty_mat() -> Mat<f64> {
    Mat::zeros(0, 0)
}

/// A fitted penalized-spline model. Training design columns are dropped;
/// everything needed for prediction (bases, spans, coefficients, posterior
/// covariance) is retained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedGam {
    pub version: u32,
    /// Basis family identifier recorded for reproducibility.
    pub basis_family: String,
    pub spec: ModelSpec,
    pub design: Design,
    pub coefficients: Vec<f64>,
    /// One per design penalty, in penalty order.
    pub lambda: Vec<f64>,
    pub rho: f64,
    pub sigma2: f64,
    pub edf_total: f64,
    /// Parallel to `design.terms`.
    pub edf_by_term: Vec<f64>,
    pub log_likelihood: f64,
    pub aic: f64,
    pub method: SmoothingMethod,
    /// Value of the selection criterion at the chosen λ (NaN when the model
    /// has no penalties).
    pub criterion: f64,
    pub converged: bool,
    pub n_obs: usize,
    #[serde(skip, default = "empty_mat")]
    pub posterior_cov: Mat<f64>,
    /// Training-row fitted values on the unwhitened scale.
    #[serde(skip)]
    pub fitted: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct PredictOptions {
    pub with_se: bool,
    pub by_term: bool,
    /// Factors whose unseen levels contribute zero adjustment instead of
    /// erroring (cross-validation fallback for sparse tone contexts).
    pub zero_fallback: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct PredictionResult {
    pub fitted: Vec<f64>,
    pub se: Option<Vec<f64>>,
    /// (term label, partial effect) pairs, including the intercept.
    pub term_contributions: Option<Vec<(String, Vec<f64>)>>,
}

/// Builds the design for `spec` and fits it.
pub fn fit_gam(
    spec: &ModelSpec,
    table: &crate::frame::ObservationTable,
    opts: &FitOptions,
) -> Result<FittedGam, GamError> {
    let design = Design::build(spec, &table.frame)?;
    let y = table.frame.numeric(&spec.response)?;
    fit_with_design(spec.clone(), design, y, &table.token_starts, opts)
}

/// Fits a pre-assembled design (lets callers reuse basis blocks across
/// nested models). `token_starts` delimits token blocks for AR(1) handling.
pub fn fit_with_design(
    spec: ModelSpec,
    design: Design,
    y: &[f64],
    token_starts: &[usize],
    opts: &FitOptions,
) -> Result<FittedGam, GamError> {
    if y.len() != design.n() {
        return Err(GamError::LengthMismatch(y.len(), design.n()));
    }
    let groups = penalty_groups(&design);
    let rho = match opts.ar1 {
        Ar1::Off => 0.0,
        Ar1::Fixed(r) => {
            if !(-1.0 < r && r < 1.0) {
                return Err(GamError::RhoOutOfRange(r));
            }
            r
        }
        Ar1::Auto => {
            let pre = fit_core(&spec, &design, &groups, &design.x, y, opts, None)?;
            let residuals: Vec<f64> = y
                .iter()
                .zip(&pre.fitted)
                .map(|(yi, fi)| yi - fi)
                .collect();
            estimate_rho(&residuals, token_starts)?
        }
    };
    let mut fit = if rho == 0.0 {
        fit_core(&spec, &design, &groups, &design.x, y, opts, None)?
    } else {
        let (xw, yw) = whiten(&design.x, y, token_starts, rho)?;
        fit_core(&spec, &design, &groups, &xw, &yw, opts, None)?
    };
    fit.rho = rho;
    Ok(fit)
}

fn fit_core(
    spec: &ModelSpec,
    design: &Design,
    groups: &[PenaltyGroup],
    x: &Mat<f64>,
    y: &[f64],
    opts: &FitOptions,
    lambda_override: Option<&[f64]>,
) -> Result<FittedGam, GamError> {
    let stats = suff_stats(x, y);
    let p = design.p();
    let (lambda, crit_val, converged) = match lambda_override {
        Some(l) => (l.to_vec(), f64::NAN, true),
        None => select_lambda(&stats, design, groups, opts),
    };
    if !converged {
        log::warn!(
            "smoothing selection did not converge for `{}`; using best-found λ",
            spec.label
        );
    }

    let a = assemble_penalized(&stats, design, &lambda);
    let llt = a.llt(Side::Lower).or_else(|_| {
        // tiny ridge rescue for numerically semidefinite systems
        let mut ar = a.clone();
        let bump = 1e-10 * (0..p).map(|i| a[(i, i)]).sum::<f64>() / p as f64;
        for i in 0..p {
            ar[(i, i)] += bump.max(1e-300);
        }
        ar.llt(Side::Lower)
    })
    .map_err(|_| GamError::Singular("penalized normal equations".to_string()))?;

    let beta = llt.solve(&stats.xty);
    let ainv_xtx = llt.solve(&stats.xtx);
    let edf_total: f64 = (0..p).map(|i| ainv_xtx[(i, i)]).sum();
    let edf_by_term: Vec<f64> = design
        .spans
        .iter()
        .map(|s| s.clone().map(|c| ainv_xtx[(c, c)]).sum())
        .collect();

    let xtx_beta = &stats.xtx * &beta;
    let bt_xty: f64 = (0..p).map(|j| beta[(j, 0)] * stats.xty[(j, 0)]).sum();
    let bt_xtx_b: f64 = (0..p).map(|j| beta[(j, 0)] * xtx_beta[(j, 0)]).sum();
    let rss = (stats.yty - 2.0 * bt_xty + bt_xtx_b).max(0.0);
    let n = stats.n as f64;

    let sigma2_ml = (rss / n).max(1e-300);
    let log_likelihood = -0.5 * n * ((2.0 * std::f64::consts::PI * sigma2_ml).ln() + 1.0);
    // conditional AIC: hat-matrix trace plus one df for the variance
    let aic = -2.0 * log_likelihood + 2.0 * (edf_total + 1.0);
    let sigma2 = rss / (n - edf_total).max(1.0);

    // posterior covariance σ̂²(XᵀX + S_λ)⁻¹
    let eye = {
        let mut m = Mat::<f64>::zeros(p, p);
        for i in 0..p {
            m[(i, i)] = 1.0;
        }
        m
    };
    let mut posterior_cov = llt.solve(&eye);
    for i in 0..p {
        for j in 0..p {
            posterior_cov[(i, j)] *= sigma2;
        }
    }

    let coefficients: Vec<f64> = (0..p).map(|j| beta[(j, 0)]).collect();
    // fitted values on the original (unwhitened) design
    let nrows = design.x.nrows();
    let mut fitted = vec![0.0; nrows];
    for i in 0..nrows {
        let mut f = 0.0;
        for j in 0..p {
            f += design.x[(i, j)] * coefficients[j];
        }
        fitted[i] = f;
    }

    let mut stored = design.clone();
    stored.strip_x();
    Ok(FittedGam {
        version: MODEL_FORMAT_VERSION,
        basis_family: "natural-cubic".to_string(),
        spec: spec.clone(),
        design: stored,
        coefficients,
        lambda,
        rho: 0.0,
        sigma2,
        edf_total,
        edf_by_term,
        log_likelihood,
        aic,
        method: opts.method,
        criterion: crit_val,
        converged,
        n_obs: stats.n,
        posterior_cov,
        fitted,
    })
}

/// Penalized least squares at fixed smoothing parameters:
/// argmin ‖y − Xβ‖² + Σⱼ λⱼ βᵀSⱼβ.
pub fn fit_pls(design: &Design, y: &[f64], lambda: &[f64]) -> Result<Vec<f64>, GamError> {
    if y.len() != design.n() {
        return Err(GamError::LengthMismatch(y.len(), design.n()));
    }
    let stats = suff_stats(&design.x, y);
    let a = assemble_penalized(&stats, design, lambda);
    let llt = a
        .llt(Side::Lower)
        .map_err(|_| GamError::Singular("penalized normal equations".to_string()))?;
    let beta = llt.solve(&stats.xty);
    Ok((0..design.p()).map(|j| beta[(j, 0)]).collect())
}

impl FittedGam {
    pub fn predict(&self, frame: &Frame, opts: &PredictOptions) -> Result<PredictionResult, GamError> {
        let x = self.design.rows(frame, &opts.zero_fallback)?;
        let n = x.nrows();
        let p = self.design.p();
        let mut fitted = vec![0.0; n];
        for i in 0..n {
            let mut f = 0.0;
            for j in 0..p {
                f += x[(i, j)] * self.coefficients[j];
            }
            fitted[i] = f;
        }
        let se = if opts.with_se {
            let xv = &x * &self.posterior_cov;
            let mut se = vec![0.0; n];
            for i in 0..n {
                let mut v = 0.0;
                for j in 0..p {
                    v += xv[(i, j)] * x[(i, j)];
                }
                se[i] = v.max(0.0).sqrt();
            }
            Some(se)
        } else {
            None
        };
        let term_contributions = if opts.by_term {
            let mut out = Vec::with_capacity(self.design.terms.len());
            for (label, span) in self.design.labels.iter().zip(&self.design.spans) {
                let mut part = vec![0.0; n];
                for i in 0..n {
                    let mut f = 0.0;
                    for c in span.clone() {
                        f += x[(i, c)] * self.coefficients[c];
                    }
                    part[i] = f;
                }
                out.push((label.clone(), part));
            }
            Some(out)
        } else {
            None
        };
        Ok(PredictionResult {
            fitted,
            se,
            term_contributions,
        })
    }

    /// Standard error of a single term's partial effect at the given rows.
    pub fn term_se(&self, frame: &Frame, label: &str, opts: &PredictOptions) -> Result<Vec<f64>, GamError> {
        let idx = self
            .design
            .term_index(label)
            .ok_or_else(|| GamError::UnknownTerm(label.to_string()))?;
        let x = self.design.rows(frame, &opts.zero_fallback)?;
        let span = self.design.spans[idx].clone();
        let n = x.nrows();
        let mut se = vec![0.0; n];
        for i in 0..n {
            let mut v = 0.0;
            for a in span.clone() {
                for b in span.clone() {
                    v += x[(i, a)] * self.posterior_cov[(a, b)] * x[(i, b)];
                }
            }
            se[i] = v.max(0.0).sqrt();
        }
        Ok(se)
    }

    /// Concurvity of one term: share of its fitted effect explainable by the
    /// other terms' columns, ‖proj‖²/‖f‖² ∈ [0, 1].
    pub fn concurvity(&self, frame: &Frame, label: &str) -> Result<f64, GamError> {
        let idx = self
            .design
            .term_index(label)
            .ok_or_else(|| GamError::UnknownTerm(label.to_string()))?;
        let x = self.design.rows(frame, &BTreeSet::new())?;
        let n = x.nrows();
        let span = self.design.spans[idx].clone();
        let mut f = vec![0.0; n];
        for i in 0..n {
            for c in span.clone() {
                f[i] += x[(i, c)] * self.coefficients[c];
            }
        }
        let f_norm2: f64 = f.iter().map(|v| v * v).sum();
        if f_norm2 == 0.0 {
            return Ok(0.0);
        }
        let others: Vec<usize> = (0..self.design.p()).filter(|c| !span.contains(c)).collect();
        if others.is_empty() {
            return Ok(0.0);
        }
        let q = others.len();
        let mut o = Mat::<f64>::zeros(n, q);
        for i in 0..n {
            for (j, &c) in others.iter().enumerate() {
                o[(i, j)] = x[(i, c)];
            }
        }
        let oto = o.transpose() * &o;
        let mut otf = Mat::<f64>::zeros(q, 1);
        for i in 0..n {
            for j in 0..q {
                otf[(j, 0)] += o[(i, j)] * f[i];
            }
        }
        // pseudo-inverse via eigendecomposition (other-columns may be collinear)
        let (u, vals) = eigen_sym(&oto)
            .ok_or_else(|| GamError::Singular("concurvity projection".to_string()))?;
        let max = vals.iter().cloned().fold(0.0f64, f64::max);
        let tol = 1e-10 * max.max(1e-300);
        let ut_otf = u.transpose() * &otf;
        let mut c = Mat::<f64>::zeros(q, 1);
        for i in 0..q {
            if vals[i] > tol {
                c[(i, 0)] = ut_otf[(i, 0)] / vals[i];
            }
        }
        let coef = &u * &c;
        let proj = &o * &coef;
        let proj_norm2: f64 = (0..n).map(|i| proj[(i, 0)] * proj[(i, 0)]).sum();
        Ok((proj_norm2 / f_norm2).clamp(0.0, 1.0))
    }

    /// Writes `{prefix}.json` (spec, bases, scalars) and `{prefix}.bin`
    /// (posterior covariance and training fits, little-endian doubles).
    pub fn save(&self, prefix: &Path) -> Result<(), GamError> {
        let json_path = prefix.with_extension("json");
        let bin_path = prefix.with_extension("bin");
        let io = |p: &Path, e: std::io::Error| GamError::Io {
            path: p.display().to_string(),
            source: e,
        };
        let json = serde_json::to_string(self)?;
        std::fs::write(&json_path, json).map_err(|e| io(&json_path, e))?;
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(&bin_path).map_err(|e| io(&bin_path, e))?,
        );
        f.write_all(MODEL_MAGIC).map_err(|e| io(&bin_path, e))?;
        f.write_all(&MODEL_FORMAT_VERSION.to_le_bytes())
            .map_err(|e| io(&bin_path, e))?;
        let p = self.design.p() as u64;
        f.write_all(&p.to_le_bytes()).map_err(|e| io(&bin_path, e))?;
        for i in 0..self.design.p() {
            for j in 0..self.design.p() {
                f.write_all(&self.posterior_cov[(i, j)].to_le_bytes())
                    .map_err(|e| io(&bin_path, e))?;
            }
        }
        let nf = self.fitted.len() as u64;
        f.write_all(&nf.to_le_bytes()).map_err(|e| io(&bin_path, e))?;
        for v in &self.fitted {
            f.write_all(&v.to_le_bytes()).map_err(|e| io(&bin_path, e))?;
        }
        f.flush().map_err(|e| io(&bin_path, e))?;
        Ok(())
    }

    pub fn load(prefix: &Path) -> Result<FittedGam, GamError> {
        let json_path = prefix.with_extension("json");
        let bin_path = prefix.with_extension("bin");
        let io = |p: &Path, e: std::io::Error| GamError::Io {
            path: p.display().to_string(),
            source: e,
        };
        let json = std::fs::read_to_string(&json_path).map_err(|e| io(&json_path, e))?;
        let mut model: FittedGam = serde_json::from_str(&json)?;
        let bad = |detail: &str| GamError::BadModelFile {
            path: bin_path.display().to_string(),
            detail: detail.to_string(),
        };
        let mut f = std::io::BufReader::new(
            std::fs::File::open(&bin_path).map_err(|e| io(&bin_path, e))?,
        );
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic).map_err(|e| io(&bin_path, e))?;
        if &magic != MODEL_MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let mut u32buf = [0u8; 4];
        f.read_exact(&mut u32buf).map_err(|e| io(&bin_path, e))?;
        if u32::from_le_bytes(u32buf) != MODEL_FORMAT_VERSION {
            return Err(bad("unsupported format version"));
        }
        let mut u64buf = [0u8; 8];
        f.read_exact(&mut u64buf).map_err(|e| io(&bin_path, e))?;
        let p = u64::from_le_bytes(u64buf) as usize;
        if p != model.design.p() {
            return Err(bad("covariance dimension does not match the design"));
        }
        let mut cov = Mat::<f64>::zeros(p, p);
        let mut f64buf = [0u8; 8];
        for i in 0..p {
            for j in 0..p {
                f.read_exact(&mut f64buf).map_err(|e| io(&bin_path, e))?;
                cov[(i, j)] = f64::from_le_bytes(f64buf);
            }
        }
        f.read_exact(&mut u64buf).map_err(|e| io(&bin_path, e))?;
        let nf = u64::from_le_bytes(u64buf) as usize;
        let mut fitted = vec![0.0; nf];
        for v in &mut fitted {
            f.read_exact(&mut f64buf).map_err(|e| io(&bin_path, e))?;
            *v = f64::from_le_bytes(f64buf);
        }
        model.posterior_cov = cov;
        model.fitted = fitted;
        Ok(model)
    }
}
