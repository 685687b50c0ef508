//! Column-oriented observation storage shared by the design builder, the
//! model suite and the synthetic generator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum FrameError {
    #[error("column `{0}` has {1} rows, frame has {2}")]
    LengthMismatch(String, usize, usize),

    #[error("column `{0}` already exists")]
    DuplicateColumn(String),

    #[error("no numeric column named `{0}`")]
    MissingNumeric(String),

    #[error("no factor column named `{0}`")]
    MissingFactor(String),
}

/// A categorical column: level names plus a per-row level code.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorColumn {
    pub levels: Vec<String>,
    pub codes: Vec<usize>,
}

impl FactorColumn {
    pub fn from_values<S: AsRef<str>>(values: &[S]) -> Self {
        let mut levels: Vec<String> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut codes = Vec::with_capacity(values.len());
        for v in values {
            let v = v.as_ref();
            let code = *index.entry(v.to_string()).or_insert_with(|| {
                levels.push(v.to_string());
                levels.len() - 1
            });
            codes.push(code);
        }
        // level order is sorted so that coding does not depend on row order
        let mut order: Vec<usize> = (0..levels.len()).collect();
        order.sort_by(|&a, &b| levels[a].cmp(&levels[b]));
        let mut remap = vec![0usize; levels.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let sorted_levels = order.iter().map(|&i| levels[i].clone()).collect();
        let codes = codes.into_iter().map(|c| remap[c]).collect();
        FactorColumn {
            levels: sorted_levels,
            codes,
        }
    }

    pub fn level_of(&self, row: usize) -> &str {
        &self.levels[self.codes[row]]
    }
}

/// A fixed-length table of numeric and factor columns.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Frame {
    n: usize,
    numeric: BTreeMap<String, Vec<f64>>,
    factors: BTreeMap<String, FactorColumn>,
}

impl Frame {
    pub fn new(n: usize) -> Self {
        Frame {
            n,
            numeric: BTreeMap::new(),
            factors: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn add_numeric(&mut self, name: &str, values: Vec<f64>) -> Result<(), FrameError> {
        if values.len() != self.n {
            return Err(FrameError::LengthMismatch(
                name.to_string(),
                values.len(),
                self.n,
            ));
        }
        if self.numeric.contains_key(name) || self.factors.contains_key(name) {
            return Err(FrameError::DuplicateColumn(name.to_string()));
        }
        self.numeric.insert(name.to_string(), values);
        Ok(())
    }

    pub fn add_factor(&mut self, name: &str, column: FactorColumn) -> Result<(), FrameError> {
        if column.codes.len() != self.n {
            return Err(FrameError::LengthMismatch(
                name.to_string(),
                column.codes.len(),
                self.n,
            ));
        }
        if self.numeric.contains_key(name) || self.factors.contains_key(name) {
            return Err(FrameError::DuplicateColumn(name.to_string()));
        }
        self.factors.insert(name.to_string(), column);
        Ok(())
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64], FrameError> {
        self.numeric
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| FrameError::MissingNumeric(name.to_string()))
    }

    pub fn factor(&self, name: &str) -> Result<&FactorColumn, FrameError> {
        self.factors
            .get(name)
            .ok_or_else(|| FrameError::MissingFactor(name.to_string()))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.numeric.contains_key(name) || self.factors.contains_key(name)
    }

    pub fn numeric_names(&self) -> impl Iterator<Item = &str> {
        self.numeric.keys().map(|s| s.as_str())
    }

    pub fn factor_names(&self) -> impl Iterator<Item = &str> {
        self.factors.keys().map(|s| s.as_str())
    }

    /// Copies the given rows (in order) into a new frame. Factor columns
    /// keep their full level sets so codings stay comparable.
    pub fn subset_rows(&self, rows: &[usize]) -> Frame {
        let numeric = self
            .numeric
            .iter()
            .map(|(k, v)| (k.clone(), rows.iter().map(|&r| v[r]).collect()))
            .collect();
        let factors = self
            .factors
            .iter()
            .map(|(k, c)| {
                (
                    k.clone(),
                    FactorColumn {
                        levels: c.levels.clone(),
                        codes: rows.iter().map(|&r| c.codes[r]).collect(),
                    },
                )
            })
            .collect();
        Frame {
            n: rows.len(),
            numeric,
            factors,
        }
    }
}

/// Long-format modeling table: one row per F0 sample, grouped contiguously by
/// token and ordered by time within each token.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationTable {
    pub frame: Frame,
    /// Token ids, one per token block.
    pub token_ids: Vec<String>,
    /// CSR-style offsets: rows of token `t` are `token_starts[t]..token_starts[t+1]`.
    pub token_starts: Vec<usize>,
}

impl ObservationTable {
    pub fn n_rows(&self) -> usize {
        self.frame.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.token_ids.len()
    }

    pub fn token_rows(&self, token: usize) -> std::ops::Range<usize> {
        self.token_starts[token]..self.token_starts[token + 1]
    }

    pub fn response(&self) -> Result<&[f64], FrameError> {
        self.frame.numeric("log_f0")
    }

    /// New table holding only the chosen token blocks, rows kept contiguous.
    pub fn subset_tokens(&self, token_indices: &[usize]) -> ObservationTable {
        let mut rows = Vec::new();
        let mut token_ids = Vec::with_capacity(token_indices.len());
        let mut token_starts = vec![0usize];
        for &t in token_indices {
            rows.extend(self.token_rows(t));
            token_ids.push(self.token_ids[t].clone());
            token_starts.push(rows.len());
        }
        ObservationTable {
            frame: self.frame.subset_rows(&rows),
            token_ids,
            token_starts,
        }
    }
}
