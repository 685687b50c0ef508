//! Python bindings: the linear/residual mapping machinery, univariate smooth
//! fitting, and the small numeric utilities, importable as `tonelab_py`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use faer::Mat;

use tonelab_core::corpus;
use tonelab_core::dlm::{self, Metric};
use tonelab_core::gam::{self, FitOptions, FittedGam, PredictOptions};
use tonelab_core::vectorize;
use tonelab_core::{Frame, ModelSpec, ObservationTable, Term};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn mat_from(rows: &[Vec<f64>], what: &str) -> PyResult<Mat<f64>> {
    let n = rows.len();
    let d = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err(format!("{what} rows have unequal lengths")));
    }
    Ok(Mat::from_fn(n, d, |i, j| rows[i][j]))
}

fn mat_to(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// e^(ΔAIC/2): how many times more likely the lower-AIC model is.
#[pyfunction]
fn evidence_ratio(delta_aic: f64) -> f64 {
    gam::evidence_ratio(delta_aic)
}

/// Mean-centers and range-scales a contour so its range is exactly 1.
#[pyfunction]
fn center_scale(values: Vec<f64>) -> PyResult<Vec<f64>> {
    vectorize::center_scale(&values).map_err(value_err)
}

/// Type-7 sample quantile.
#[pyfunction]
fn quantile(values: Vec<f64>, p: f64) -> f64 {
    corpus::quantile(&values, p)
}

/// Sum of squared label proportions: the accuracy of label-blind guessing.
#[pyfunction]
fn chance_baseline(labels: Vec<String>) -> PyResult<f64> {
    dlm::chance_baseline(&labels).map_err(value_err)
}

/// Lag-1 autocorrelation of residuals, restricted to within-token pairs.
/// `token_starts` are CSR-style offsets with a trailing total count.
#[pyfunction]
fn estimate_rho(residuals: Vec<f64>, token_starts: Vec<usize>) -> PyResult<f64> {
    gam::estimate_rho(&residuals, &token_starts).map_err(value_err)
}

/// Fraction of predictions whose nearest reference row (by `metric`,
/// "cosine" or "euclidean") carries the prediction's own label.
#[pyfunction]
fn nearest_neighbor_accuracy(
    predictions: Vec<Vec<f64>>,
    pred_labels: Vec<String>,
    reference: Vec<Vec<f64>>,
    ref_labels: Vec<String>,
    metric: &str,
) -> PyResult<f64> {
    let metric = match metric {
        "cosine" => Metric::Cosine,
        "euclidean" => Metric::Euclidean,
        other => return Err(PyValueError::new_err(format!("unknown metric {other:?}"))),
    };
    let pred = mat_from(&predictions, "prediction")?;
    let refm = mat_from(&reference, "reference")?;
    dlm::nearest_neighbor_eval(&pred, &pred_labels, &refm, &ref_labels, metric).map_err(value_err)
}

/// Ridge-regularized multivariate linear map with an unpenalized bias.
#[pyclass]
struct LinearMap {
    inner: dlm::LinearMap,
}

#[pymethods]
impl LinearMap {
    /// Least-squares fit of y ≈ [1|x]·W with ridge penalty on the non-bias rows.
    #[staticmethod]
    fn train(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, ridge: f64) -> PyResult<Self> {
        let xm = mat_from(&x, "input")?;
        let ym = mat_from(&y, "target")?;
        let inner = dlm::train_ldl(&xm, &ym, ridge).map_err(value_err)?;
        Ok(LinearMap { inner })
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let xm = mat_from(&x, "input")?;
        if xm.ncols() != self.inner.input_dim() {
            return Err(PyValueError::new_err(format!(
                "expected {} input columns, got {}",
                self.inner.input_dim(),
                xm.ncols()
            )));
        }
        Ok(mat_to(&self.inner.predict(&xm)))
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }
}

/// Penalized univariate spline smooth of y on x, smoothing chosen by REML.
#[pyclass]
struct SmoothFit {
    inner: FittedGam,
}

#[pymethods]
impl SmoothFit {
    #[new]
    #[pyo3(signature = (x, y, k = 10))]
    fn new(x: Vec<f64>, y: Vec<f64>, k: usize) -> PyResult<Self> {
        if x.len() != y.len() {
            return Err(PyValueError::new_err(format!(
                "x has {} values but y has {}",
                x.len(),
                y.len()
            )));
        }
        let n = x.len();
        let mut frame = Frame::new(n);
        frame.add_numeric("x", x).map_err(value_err)?;
        frame.add_numeric("y", y).map_err(value_err)?;
        let table = ObservationTable {
            frame,
            token_ids: vec!["all".into()],
            token_starts: vec![0, n],
        };
        let spec = ModelSpec {
            response: "y".into(),
            label: "smooth".into(),
            terms: vec![Term::Smooth {
                covariate: "x".into(),
                k,
            }],
        };
        let inner = gam::fit_gam(&spec, &table, &FitOptions::default()).map_err(value_err)?;
        Ok(SmoothFit { inner })
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let mut frame = Frame::new(x.len());
        frame.add_numeric("x", x).map_err(value_err)?;
        let pred = self
            .inner
            .predict(&frame, &PredictOptions::default())
            .map_err(value_err)?;
        Ok(pred.fitted)
    }

    #[getter]
    fn edf(&self) -> f64 {
        self.inner.edf_total
    }

    #[getter]
    fn aic(&self) -> f64 {
        self.inner.aic
    }
}

#[pymodule]
fn tonelab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(evidence_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(center_scale, m)?)?;
    m.add_function(wrap_pyfunction!(quantile, m)?)?;
    m.add_function(wrap_pyfunction!(chance_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_rho, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_neighbor_accuracy, m)?)?;
    m.add_class::<LinearMap>()?;
    m.add_class::<SmoothFit>()?;
    Ok(())
}
