//! Model specification grammar and design-matrix assembly: parametric
//! columns first (intercept, treatment-coded factors), then smooth blocks in
//! spec order, each with its quadratic penalties and column span.

use std::collections::BTreeSet;
use std::ops::Range;

use faer::Mat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Frame, FrameError};
use crate::spline::{BySmooth, CenteredSmooth, FactorSmooth, SplineError, TensorSmooth};

#[derive(Error, Debug)]
pub enum DesignError {
    #[error(transparent)]
    Frame(#[from] FrameError),

    #[error(transparent)]
    Spline(#[from] SplineError),

    #[error("covariate `{0}` named in the model spec is missing from the table")]
    MissingCovariate(String),

    #[error("by-smooth on `{0}` requires a parametric main effect for that factor")]
    ByWithoutMainEffect(String),

    #[error("factor `{factor}` has unseen level `{level}` at prediction time")]
    UnseenLevel { factor: String, level: String },

    #[error("factor `{0}` has a single level; main effect would be empty")]
    SingleLevelFactor(String),
}

fn default_k() -> usize {
    10
}
fn default_ti_k() -> usize {
    5
}
fn default_fs_k() -> usize {
    5
}
fn default_fs_m() -> usize {
    1
}

/// One term of a model formula.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Term {
    /// Treatment-coded parametric main effect of a factor.
    Factor { name: String },
    /// Centered univariate smooth with curvature penalty.
    Smooth {
        covariate: String,
        #[serde(default = "default_k")]
        k: usize,
    },
    /// One independent smooth per level of a small factor.
    BySmooth {
        covariate: String,
        by: String,
        #[serde(default = "default_k")]
        k: usize,
    },
    /// Interaction-only tensor product of two covariates.
    TensorInteraction {
        covariate1: String,
        covariate2: String,
        #[serde(default = "default_ti_k")]
        k1: usize,
        #[serde(default = "default_ti_k")]
        k2: usize,
    },
    /// Per-level wiggly curves sharing smoothing parameters.
    FactorSmooth {
        covariate: String,
        factor: String,
        #[serde(default = "default_fs_k")]
        k: usize,
        #[serde(default = "default_fs_m")]
        m: usize,
    },
}

impl Term {
    pub fn label(&self) -> String {
        match self {
            Term::Factor { name } => name.clone(),
            Term::Smooth { covariate, .. } => format!("s({covariate})"),
            Term::BySmooth { covariate, by, .. } => format!("s({covariate},by={by})"),
            Term::TensorInteraction {
                covariate1,
                covariate2,
                ..
            } => format!("ti({covariate1},{covariate2})"),
            Term::FactorSmooth {
                covariate, factor, ..
            } => format!("fs({covariate},{factor})"),
        }
    }
}

/// A complete model formula: response column plus an ordered term list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub label: String,
    pub terms: Vec<Term>,
}

/// A fitted-basis term, reusable on new data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum BuiltTerm {
    Intercept,
    Factor {
        name: String,
        /// Training levels; first is the treatment reference.
        levels: Vec<String>,
    },
    Smooth {
        covariate: String,
        smooth: CenteredSmooth,
    },
    By {
        covariate: String,
        by: String,
        smooth: BySmooth,
    },
    Tensor {
        covariate1: String,
        covariate2: String,
        smooth: TensorSmooth,
    },
    Fs {
        covariate: String,
        factor: String,
        smooth: FactorSmooth,
    },
}

impl BuiltTerm {
    pub fn ncols(&self) -> usize {
        match self {
            BuiltTerm::Intercept => 1,
            BuiltTerm::Factor { levels, .. } => levels.len() - 1,
            BuiltTerm::Smooth { smooth, .. } => smooth.ncols(),
            BuiltTerm::By { smooth, .. } => smooth.ncols(),
            BuiltTerm::Tensor { smooth, .. } => smooth.ncols(),
            BuiltTerm::Fs { smooth, .. } => smooth.ncols(),
        }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, BuiltTerm::Intercept | BuiltTerm::Factor { .. })
    }

    /// Evaluates this term's columns on new data. Unseen levels of factors
    /// listed in `zero_fallback` contribute all-zero rows instead of erroring.
    pub fn rows(
        &self,
        frame: &Frame,
        zero_fallback: &BTreeSet<String>,
    ) -> Result<Mat<f64>, DesignError> {
        let n = frame.len();
        match self {
            BuiltTerm::Intercept => {
                let mut m = Mat::<f64>::zeros(n, 1);
                for i in 0..n {
                    m[(i, 0)] = 1.0;
                }
                Ok(m)
            }
            BuiltTerm::Factor { name, levels } => {
                let col = frame.factor(name)?;
                let mut m = Mat::<f64>::zeros(n, levels.len() - 1);
                for i in 0..n {
                    let lev = col.level_of(i);
                    match levels.iter().position(|l| l == lev) {
                        Some(0) => {}
                        Some(j) => m[(i, j - 1)] = 1.0,
                        None => {
                            if !zero_fallback.contains(name) {
                                return Err(DesignError::UnseenLevel {
                                    factor: name.clone(),
                                    level: lev.to_string(),
                                });
                            }
                        }
                    }
                }
                Ok(m)
            }
            BuiltTerm::Smooth { covariate, smooth } => {
                Ok(smooth.rows(frame.numeric(covariate)?))
            }
            BuiltTerm::By {
                covariate,
                by,
                smooth,
            } => {
                let x = frame.numeric(covariate)?;
                let col = frame.factor(by)?;
                let names: Vec<&str> = (0..n).map(|i| col.level_of(i)).collect();
                smooth.rows(x, &names).map_err(|e| match e {
                    SplineError::UnseenLevel(l) => DesignError::UnseenLevel {
                        factor: by.clone(),
                        level: l,
                    },
                    other => other.into(),
                })
            }
            BuiltTerm::Tensor {
                covariate1,
                covariate2,
                smooth,
            } => Ok(smooth.rows(frame.numeric(covariate1)?, frame.numeric(covariate2)?)),
            BuiltTerm::Fs {
                covariate,
                factor,
                smooth,
            } => {
                let x = frame.numeric(covariate)?;
                let col = frame.factor(factor)?;
                if zero_fallback.contains(factor) {
                    // unseen levels contribute zero adjustment
                    let k = smooth.spline.k();
                    let mut out = Mat::<f64>::zeros(n, smooth.ncols());
                    let mut row = vec![0.0; k];
                    let b = smooth.spline.basis(x);
                    for i in 0..n {
                        if let Ok(l) = smooth.level_index(col.level_of(i)) {
                            for c in 0..k {
                                row[c] = b[(i, c)];
                                out[(i, l * k + c)] = row[c];
                            }
                        } else {
                            log::warn!(
                                "factor `{factor}` level `{}` unseen in training; using zero adjustment",
                                col.level_of(i)
                            );
                        }
                    }
                    Ok(out)
                } else {
                    let names: Vec<&str> = (0..n).map(|i| col.level_of(i)).collect();
                    smooth.rows(x, &names).map_err(|e| match e {
                        SplineError::UnseenLevel(l) => DesignError::UnseenLevel {
                            factor: factor.clone(),
                            level: l,
                        },
                        other => other.into(),
                    })
                }
            }
        }
    }
}

/// One quadratic penalty acting on a column span of the assembled design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Penalty {
    /// Index into `Design::terms`.
    pub term: usize,
    pub span: Range<usize>,
    pub matrix: Mat<f64>,
}

/// Assembled design: columns, penalties, and per-term column spans.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Design {
    /// Training design columns; stripped before a fitted model is stored or
    /// serialized (rebuild with `rows` when needed).
    #[serde(skip, default = "empty_mat")]
    pub x: Mat<f64>,
    pub terms: Vec<BuiltTerm>,
    pub labels: Vec<String>,
    pub spans: Vec<Range<usize>>,
    pub penalties: Vec<Penalty>,
}

fn empty_mat() -> Mat<f64> {
    Mat::zeros(0, 0)
}

impl Design {
    /// Drops the stored training columns to keep fitted models light.
    pub fn strip_x(&mut self) {
        self.x = empty_mat();
    }

    /// Builds the design from a spec on training data. An intercept is always
    /// the first column.
    pub fn build(spec: &ModelSpec, frame: &Frame) -> Result<Self, DesignError> {
        // by-smooths need the factor's parametric main effect for identifiability
        for term in &spec.terms {
            if let Term::BySmooth { by, .. } = term {
                let has_main = spec
                    .terms
                    .iter()
                    .any(|t| matches!(t, Term::Factor { name } if name == by));
                if !has_main {
                    return Err(DesignError::ByWithoutMainEffect(by.clone()));
                }
            }
        }

        let n = frame.len();
        let mut terms: Vec<BuiltTerm> = vec![BuiltTerm::Intercept];
        let mut labels: Vec<String> = vec!["intercept".to_string()];
        let mut blocks: Vec<Mat<f64>> = {
            let mut ones = Mat::<f64>::zeros(n, 1);
            for i in 0..n {
                ones[(i, 0)] = 1.0;
            }
            vec![ones]
        };
        let mut penalties: Vec<(usize, Vec<Mat<f64>>)> = Vec::new();

        let need_numeric = |name: &str| -> Result<&[f64], DesignError> {
            frame
                .numeric(name)
                .map_err(|_| DesignError::MissingCovariate(name.to_string()))
        };

        for term in &spec.terms {
            let idx = terms.len();
            match term {
                Term::Factor { name } => {
                    let col = frame
                        .factor(name)
                        .map_err(|_| DesignError::MissingCovariate(name.clone()))?;
                    if col.levels.len() < 2 {
                        return Err(DesignError::SingleLevelFactor(name.clone()));
                    }
                    let mut m = Mat::<f64>::zeros(n, col.levels.len() - 1);
                    for i in 0..n {
                        let c = col.codes[i];
                        if c > 0 {
                            m[(i, c - 1)] = 1.0;
                        }
                    }
                    terms.push(BuiltTerm::Factor {
                        name: name.clone(),
                        levels: col.levels.clone(),
                    });
                    blocks.push(m);
                }
                Term::Smooth { covariate, k } => {
                    let x = need_numeric(covariate)?;
                    let smooth = CenteredSmooth::new(x, *k)?;
                    blocks.push(smooth.rows(x));
                    penalties.push((idx, vec![smooth.penalty.clone()]));
                    terms.push(BuiltTerm::Smooth {
                        covariate: covariate.clone(),
                        smooth,
                    });
                }
                Term::BySmooth { covariate, by, k } => {
                    let x = need_numeric(covariate)?;
                    let col = frame
                        .factor(by)
                        .map_err(|_| DesignError::MissingCovariate(by.clone()))?;
                    let smooth = BySmooth::new(x, &col.codes, &col.levels, *k)?;
                    blocks.push(smooth.rows_coded(x, &col.codes)?);
                    penalties.push((idx, smooth.penalties.clone()));
                    terms.push(BuiltTerm::By {
                        covariate: covariate.clone(),
                        by: by.clone(),
                        smooth,
                    });
                }
                Term::TensorInteraction {
                    covariate1,
                    covariate2,
                    k1,
                    k2,
                } => {
                    let x1 = need_numeric(covariate1)?;
                    let x2 = need_numeric(covariate2)?;
                    let smooth = TensorSmooth::new(x1, x2, *k1, *k2)?;
                    blocks.push(smooth.rows(x1, x2));
                    penalties.push((idx, smooth.penalties.clone()));
                    terms.push(BuiltTerm::Tensor {
                        covariate1: covariate1.clone(),
                        covariate2: covariate2.clone(),
                        smooth,
                    });
                }
                Term::FactorSmooth {
                    covariate,
                    factor,
                    k,
                    m,
                } => {
                    let x = need_numeric(covariate)?;
                    let col = frame
                        .factor(factor)
                        .map_err(|_| DesignError::MissingCovariate(factor.clone()))?;
                    let smooth = FactorSmooth::new(x, &col.codes, &col.levels, *k, *m)?;
                    blocks.push(smooth.rows_coded(x, &col.codes)?);
                    penalties.push((idx, smooth.penalties.clone()));
                    terms.push(BuiltTerm::Fs {
                        covariate: covariate.clone(),
                        factor: factor.clone(),
                        smooth,
                    });
                }
            }
            labels.push(term.label());
        }

        // assemble column spans and the full matrix
        let mut spans = Vec::with_capacity(terms.len());
        let mut p = 0usize;
        for b in &blocks {
            spans.push(p..p + b.ncols());
            p += b.ncols();
        }
        let mut x = Mat::<f64>::zeros(n, p);
        for (b, span) in blocks.iter().zip(&spans) {
            for i in 0..n {
                for (j, c) in span.clone().enumerate() {
                    x[(i, c)] = b[(i, j)];
                }
            }
        }
        let penalties = penalties
            .into_iter()
            .flat_map(|(idx, mats)| {
                let span = spans[idx].clone();
                mats.into_iter().map(move |matrix| Penalty {
                    term: idx,
                    span: span.clone(),
                    matrix,
                })
            })
            .collect();

        Ok(Design {
            x,
            terms,
            labels,
            spans,
            penalties,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    // from the spans, not `x`: still valid after the columns are stripped
    pub fn p(&self) -> usize {
        self.spans.last().map(|s| s.end).unwrap_or(0)
    }

    pub fn term_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Evaluates the full design on new data using the training bases.
    pub fn rows(
        &self,
        frame: &Frame,
        zero_fallback: &BTreeSet<String>,
    ) -> Result<Mat<f64>, DesignError> {
        let n = frame.len();
        let mut x = Mat::<f64>::zeros(n, self.p());
        for (term, span) in self.terms.iter().zip(&self.spans) {
            let b = term.rows(frame, zero_fallback)?;
            for i in 0..n {
                for (j, c) in span.clone().enumerate() {
                    x[(i, c)] = b[(i, j)];
                }
            }
        }
        Ok(x)
    }

    /// New design keeping only the named terms (the intercept is always
    /// kept). Basis blocks are reused, columns are copied, spans recomputed.
    /// Lets a superset design built once serve several nested models.
    pub fn subset(&self, keep_labels: &[&str]) -> Design {
        let keep: Vec<usize> = (0..self.terms.len())
            .filter(|&i| i == 0 || keep_labels.contains(&self.labels[i].as_str()))
            .collect();
        let mut terms = Vec::with_capacity(keep.len());
        let mut labels = Vec::with_capacity(keep.len());
        let mut spans = Vec::with_capacity(keep.len());
        let mut p = 0usize;
        for &i in &keep {
            terms.push(self.terms[i].clone());
            labels.push(self.labels[i].clone());
            let w = self.spans[i].len();
            spans.push(p..p + w);
            p += w;
        }
        let n = self.n();
        let mut x = Mat::<f64>::zeros(n, p);
        for (new_idx, &old_idx) in keep.iter().enumerate() {
            let old_span = self.spans[old_idx].clone();
            let new_span = spans[new_idx].clone();
            for i in 0..n {
                for (o, c) in old_span.clone().zip(new_span.clone()) {
                    x[(i, c)] = self.x[(i, o)];
                }
            }
        }
        let penalties = self
            .penalties
            .iter()
            .filter_map(|pen| {
                let new_idx = keep.iter().position(|&i| i == pen.term)?;
                Some(Penalty {
                    term: new_idx,
                    span: spans[new_idx].clone(),
                    matrix: pen.matrix.clone(),
                })
            })
            .collect();
        Design {
            x,
            terms,
            labels,
            spans,
            penalties,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::FactorColumn;

    fn toy_frame(n: usize) -> Frame {
        let mut f = Frame::new(n);
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let z: Vec<f64> = x.iter().map(|v| (v * 9.0).sin() * 0.5 + 0.5).collect();
        f.add_numeric("time", x).unwrap();
        f.add_numeric("duration", z).unwrap();
        let g: Vec<String> = (0..n)
            .map(|i| if i % 2 == 0 { "female" } else { "male" }.to_string())
            .collect();
        f.add_factor("gender", FactorColumn::from_values(&g)).unwrap();
        f
    }

    #[test]
    fn intercept_only_design() {
        let f = toy_frame(10);
        let spec = ModelSpec {
            response: "y".to_string(),
            label: "custom".to_string(),
            terms: vec![],
        };
        let d = Design::build(&spec, &f).unwrap();
        assert_eq!(d.p(), 1);
        for i in 0..10 {
            assert_eq!(d.x[(i, 0)], 1.0);
        }
    }

    #[test]
    fn two_level_factor_gives_one_dummy() {
        let f = toy_frame(10);
        let spec = ModelSpec {
            response: "y".to_string(),
            label: "custom".to_string(),
            terms: vec![Term::Factor {
                name: "gender".to_string(),
            }],
        };
        let d = Design::build(&spec, &f).unwrap();
        assert_eq!(d.p(), 2);
        // reference level is `female` (alphabetically first)
        for i in 0..10 {
            let expect = if i % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(d.x[(i, 1)], expect);
        }
    }

    #[test]
    fn column_count_matches_span_sum() {
        let f = toy_frame(60);
        let spec = ModelSpec {
            response: "y".to_string(),
            label: "custom".to_string(),
            terms: vec![
                Term::Factor {
                    name: "gender".to_string(),
                },
                Term::BySmooth {
                    covariate: "time".to_string(),
                    by: "gender".to_string(),
                    k: 10,
                },
                Term::Smooth {
                    covariate: "duration".to_string(),
                    k: 10,
                },
                Term::TensorInteraction {
                    covariate1: "time".to_string(),
                    covariate2: "duration".to_string(),
                    k1: 5,
                    k2: 5,
                },
                Term::FactorSmooth {
                    covariate: "time".to_string(),
                    factor: "gender".to_string(),
                    k: 5,
                    m: 1,
                },
            ],
        };
        let d = Design::build(&spec, &f).unwrap();
        let total: usize = d.spans.iter().map(|s| s.len()).sum();
        assert_eq!(d.p(), total);
        // 1 + 1 + 2·9 + 9 + 16 + 2·5 = 55
        assert_eq!(d.p(), 55);
        // penalties: 2 (by) + 1 (s) + 2 (ti) + 2 (fs) = 7
        assert_eq!(d.penalties.len(), 7);
        for pen in &d.penalties {
            assert_eq!(pen.matrix.nrows(), pen.span.len());
        }
    }

    #[test]
    fn missing_covariate_is_named() {
        let f = toy_frame(30);
        let spec = ModelSpec {
            response: "y".to_string(),
            label: "custom".to_string(),
            terms: vec![Term::Smooth {
                covariate: "bogus".to_string(),
                k: 5,
            }],
        };
        let err = Design::build(&spec, &f).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn by_smooth_without_main_effect_rejected() {
        let f = toy_frame(30);
        let spec = ModelSpec {
            response: "y".to_string(),
            label: "custom".to_string(),
            terms: vec![Term::BySmooth {
                covariate: "time".to_string(),
                by: "gender".to_string(),
                k: 5,
            }],
        };
        assert!(matches!(
            Design::build(&spec, &f),
            Err(DesignError::ByWithoutMainEffect(_))
        ));
    }

    #[test]
    fn subset_preserves_columns_and_penalties() {
        let f = toy_frame(60);
        let spec = ModelSpec {
            response: "y".to_string(),
            label: "custom".to_string(),
            terms: vec![
                Term::Smooth {
                    covariate: "time".to_string(),
                    k: 6,
                },
                Term::Smooth {
                    covariate: "duration".to_string(),
                    k: 6,
                },
            ],
        };
        let d = Design::build(&spec, &f).unwrap();
        let sub = d.subset(&["s(duration)"]);
        assert_eq!(sub.p(), 1 + 5);
        assert_eq!(sub.penalties.len(), 1);
        let full_span = d.spans[d.term_index("s(duration)").unwrap()].clone();
        for i in 0..60 {
            for (j, c) in full_span.clone().enumerate() {
                assert_eq!(sub.x[(i, 1 + j)], d.x[(i, c)]);
            }
        }
    }

    #[test]
    fn prediction_rows_match_training_rows() {
        let f = toy_frame(50);
        let spec = ModelSpec {
            response: "y".to_string(),
            label: "custom".to_string(),
            terms: vec![
                Term::Factor {
                    name: "gender".to_string(),
                },
                Term::Smooth {
                    covariate: "time".to_string(),
                    k: 8,
                },
                Term::FactorSmooth {
                    covariate: "time".to_string(),
                    factor: "gender".to_string(),
                    k: 4,
                    m: 2,
                },
            ],
        };
        let d = Design::build(&spec, &f).unwrap();
        let x2 = d.rows(&f, &BTreeSet::new()).unwrap();
        for i in 0..50 {
            for j in 0..d.p() {
                assert!((d.x[(i, j)] - x2[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unseen_level_errors_or_zeroes() {
        let f = toy_frame(40);
        let spec = ModelSpec {
            response: "y".to_string(),
            label: "custom".to_string(),
            terms: vec![Term::FactorSmooth {
                covariate: "time".to_string(),
                factor: "gender".to_string(),
                k: 4,
                m: 1,
            }],
        };
        let d = Design::build(&spec, &f).unwrap();
        let mut nf = Frame::new(3);
        nf.add_numeric("time", vec![0.1, 0.5, 0.9]).unwrap();
        nf.add_factor(
            "gender",
            FactorColumn::from_values(&["female", "other", "male"]),
        )
        .unwrap();
        let err = d.rows(&nf, &BTreeSet::new()).unwrap_err();
        assert!(err.to_string().contains("other"));
        let mut fb = BTreeSet::new();
        fb.insert("gender".to_string());
        let x = d.rows(&nf, &fb).unwrap();
        // fallback row for the unseen level is all zero in the fs block
        let span = d.spans[1].clone();
        for c in span {
            assert_eq!(x[(1, c)], 0.0);
        }
    }
}
