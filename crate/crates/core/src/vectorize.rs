//! Fixed-length pitch vectors from fitted models, and ingestion of
//! high-dimensional token embeddings.

use std::collections::BTreeMap;
use std::io::{Read as _, Write as _};
use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenRecord;
use crate::frame::{FactorColumn, Frame};
use crate::gam::{FittedGam, GamError, PredictOptions};

#[derive(Error, Debug)]
pub enum VectorizeError {
    #[error(transparent)]
    Gam(#[from] GamError),

    #[error(transparent)]
    Frame(#[from] crate::frame::FrameError),

    #[error("contour is constant; cannot scale by zero range")]
    ConstantContour,

    #[error("need at least 2 grid points, got {0}")]
    GridTooSmall(usize),

    #[error("embedding for token `{token}` has {got} values, expected {expected}")]
    DimensionMismatch {
        token: String,
        got: usize,
        expected: usize,
    },

    #[error("non-finite embedding value for token `{0}`")]
    NonFinite(String),

    #[error("token `{token}` has {got} character rows, expected exactly 2 for pair averaging")]
    BadPairCount { token: String, got: usize },

    #[error("no embedding for token `{0}`")]
    MissingToken(String),

    #[error("empty group; centroid undefined")]
    EmptyGroup,

    #[error("parse error at {path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("embedding file {path} is corrupt: {detail}")]
    BadFile { path: String, detail: String },
}

/// A token's tonal shape: 50 (by default) mean-centered, range-scaled
/// predicted log-F0 values on an even time grid over [0, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PitchVector {
    pub token_id: String,
    /// Label of the model the predictions came from.
    pub source_model: String,
    pub values: Vec<f64>,
}

/// One token's meaning vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Embedding {
    pub token_id: String,
    pub values: Vec<f64>,
}

/// Per-token embeddings, all the same dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub embeddings: Vec<Embedding>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, embeddings: Vec<Embedding>) -> Result<Self, VectorizeError> {
        for e in &embeddings {
            if e.values.len() != dim {
                return Err(VectorizeError::DimensionMismatch {
                    token: e.token_id.clone(),
                    got: e.values.len(),
                    expected: dim,
                });
            }
            if e.values.iter().any(|v| !v.is_finite()) {
                return Err(VectorizeError::NonFinite(e.token_id.clone()));
            }
        }
        Ok(EmbeddingTable { dim, embeddings })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn get(&self, token_id: &str) -> Option<&Embedding> {
        self.embeddings.iter().find(|e| e.token_id == token_id)
    }

    /// Elementwise mean over the given member tokens.
    pub fn centroid_of(&self, token_ids: &[String]) -> Result<Vec<f64>, VectorizeError> {
        let mut acc = vec![0.0; self.dim];
        let mut count = 0usize;
        for id in token_ids {
            let e = self
                .get(id)
                .ok_or_else(|| VectorizeError::MissingToken(id.clone()))?;
            for (a, v) in acc.iter_mut().zip(&e.values) {
                *a += v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(VectorizeError::EmptyGroup);
        }
        for a in &mut acc {
            *a /= count as f64;
        }
        Ok(acc)
    }
}

/// Elementwise mean of a non-empty set of equal-length vectors.
pub fn centroid(vectors: &[&[f64]]) -> Result<Vec<f64>, VectorizeError> {
    let first = vectors.first().ok_or(VectorizeError::EmptyGroup)?;
    let mut acc = vec![0.0; first.len()];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(*v) {
            *a += x;
        }
    }
    for a in &mut acc {
        *a /= vectors.len() as f64;
    }
    Ok(acc)
}

/// Builds the covariate frame for one token over an even time grid:
/// time = 0, 1/(n−1), …, 1 with every other covariate fixed at the token's
/// observed value.
pub fn token_grid_frame(token: &TokenRecord, n: usize) -> Result<Frame, VectorizeError> {
    if n < 2 {
        return Err(VectorizeError::GridTooSmall(n));
    }
    let mut f = Frame::new(n);
    let grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    f.add_numeric("time", grid)?;
    f.add_numeric("duration", vec![token.duration_s.ln(); n])?;
    f.add_numeric("utterance_position", vec![token.utterance_position; n])?;
    f.add_numeric("bigram_previous", vec![token.bigram_previous; n])?;
    f.add_numeric("bigram_following", vec![token.bigram_following; n])?;
    let rep = |v: String| FactorColumn::from_values(&vec![v; n]);
    f.add_factor("gender", rep(token.gender.to_string()))?;
    f.add_factor("speaker", rep(token.speaker.clone()))?;
    f.add_factor("adjacent_tone", rep(token.adjacent_tone.to_string()))?;
    f.add_factor("word", rep(token.word.clone()))?;
    if let Some(s) = &token.sense {
        f.add_factor("sense", rep(s.clone()))?;
    }
    f.add_factor("vowel1", rep(token.vowel1.to_string()))?;
    f.add_factor("vowel2", rep(token.vowel2.to_string()))?;
    f.add_factor("onset1", rep(token.onset1.to_string()))?;
    f.add_factor("onset2", rep(token.onset2.to_string()))?;
    f.add_factor("syllable1", rep(token.syllable1.to_string()))?;
    f.add_factor("syllable2", rep(token.syllable2.to_string()))?;
    Ok(f)
}

/// Predicted log-F0 contour at `n` equally spaced normalized time points.
pub fn pitch_contour(
    model: &FittedGam,
    token: &TokenRecord,
    n: usize,
) -> Result<Vec<f64>, VectorizeError> {
    let frame = token_grid_frame(token, n)?;
    let pred = model.predict(&frame, &PredictOptions::default())?;
    Ok(pred.fitted)
}

/// Mean-centers and range-scales a contour: (x − mean)/(max − min).
/// Output has mean exactly 0 and range exactly 1.
pub fn center_scale(contour: &[f64]) -> Result<Vec<f64>, VectorizeError> {
    let n = contour.len() as f64;
    let mean = contour.iter().sum::<f64>() / n;
    let max = contour.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = contour.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if range == 0.0 || !range.is_finite() {
        return Err(VectorizeError::ConstantContour);
    }
    Ok(contour.iter().map(|v| (v - mean) / range).collect())
}

/// Full pipeline for one token: predict on the grid, center, scale.
pub fn pitch_vector(
    model: &FittedGam,
    token: &TokenRecord,
    n: usize,
    source_model: &str,
) -> Result<PitchVector, VectorizeError> {
    let contour = pitch_contour(model, token, n)?;
    Ok(PitchVector {
        token_id: token.token_id.clone(),
        source_model: source_model.to_string(),
        values: center_scale(&contour)?,
    })
}

// ---------------------------------------------------------------------------
// pitch vector files: CSV `token_id,source_model,v0..v49`

pub fn write_pitch_vectors_csv(vectors: &[PitchVector], path: &Path) -> Result<(), VectorizeError> {
    let io = |e: std::io::Error| VectorizeError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let n = vectors.first().map(|v| v.values.len()).unwrap_or(50);
    let header: Vec<String> = ["token_id".to_string(), "source_model".to_string()]
        .into_iter()
        .chain((0..n).map(|i| format!("v{i}")))
        .collect();
    writeln!(f, "{}", header.join(",")).map_err(io)?;
    for v in vectors {
        let vals: Vec<String> = v.values.iter().map(|x| format!("{x:.17e}")).collect();
        writeln!(f, "{},{},{}", v.token_id, v.source_model, vals.join(",")).map_err(io)?;
    }
    f.flush().map_err(io)?;
    Ok(())
}

pub fn load_pitch_vectors_csv(path: &Path) -> Result<Vec<PitchVector>, VectorizeError> {
    let parse = |line: usize, detail: String| VectorizeError::Parse {
        path: path.display().to_string(),
        line,
        detail,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse(1, e.to_string()))?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse(line, e.to_string()))?;
        if row.len() < 3 {
            return Err(parse(line, "expected token_id,source_model,v0..".to_string()));
        }
        let values: Vec<f64> = row
            .iter()
            .skip(2)
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| parse(line, e.to_string()))?;
        out.push(PitchVector {
            token_id: row[0].to_string(),
            source_model: row[1].to_string(),
            values,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// embedding files

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingFormat {
    Csv,
    Binary,
}

const EMB_MAGIC: &[u8; 4] = b"TLEB";
const EMB_VERSION: u32 = 1;

/// One raw row of an embedding file: a per-character vector.
#[derive(Debug, Clone)]
pub struct EmbeddingRow {
    pub token_id: String,
    pub char_index: u32,
    pub values: Vec<f64>,
}

pub fn write_embedding_rows(
    rows: &[EmbeddingRow],
    dim: usize,
    path: &Path,
    format: EmbeddingFormat,
) -> Result<(), VectorizeError> {
    let io = |e: std::io::Error| VectorizeError::Io {
        path: path.display().to_string(),
        source: e,
    };
    match format {
        EmbeddingFormat::Csv => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
            let header: Vec<String> = ["token_id".to_string(), "char_index".to_string()]
                .into_iter()
                .chain((0..dim).map(|i| format!("v{i}")))
                .collect();
            writeln!(f, "{}", header.join(",")).map_err(io)?;
            for r in rows {
                let vals: Vec<String> = r.values.iter().map(|x| format!("{x:.17e}")).collect();
                writeln!(f, "{},{},{}", r.token_id, r.char_index, vals.join(",")).map_err(io)?;
            }
            f.flush().map_err(io)?;
        }
        EmbeddingFormat::Binary => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
            f.write_all(EMB_MAGIC).map_err(io)?;
            f.write_all(&EMB_VERSION.to_le_bytes()).map_err(io)?;
            f.write_all(&(dim as u32).to_le_bytes()).map_err(io)?;
            f.write_all(&(rows.len() as u64).to_le_bytes()).map_err(io)?;
            for r in rows {
                let id = r.token_id.as_bytes();
                f.write_all(&(id.len() as u32).to_le_bytes()).map_err(io)?;
                f.write_all(id).map_err(io)?;
                f.write_all(&r.char_index.to_le_bytes()).map_err(io)?;
                for v in &r.values {
                    f.write_all(&v.to_le_bytes()).map_err(io)?;
                }
            }
            f.flush().map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_embedding_rows(
    path: &Path,
    format: EmbeddingFormat,
) -> Result<(usize, Vec<EmbeddingRow>), VectorizeError> {
    let io = |e: std::io::Error| VectorizeError::Io {
        path: path.display().to_string(),
        source: e,
    };
    match format {
        EmbeddingFormat::Csv => {
            let parse = |line: usize, detail: String| VectorizeError::Parse {
                path: path.display().to_string(),
                line,
                detail,
            };
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .from_path(path)
                .map_err(|e| parse(1, e.to_string()))?;
            let dim = reader
                .headers()
                .map_err(|e| parse(1, e.to_string()))?
                .len()
                .saturating_sub(2);
            let mut rows = Vec::new();
            for (i, rec) in reader.records().enumerate() {
                let line = i + 2;
                let rec = rec.map_err(|e| parse(line, e.to_string()))?;
                if rec.len() != dim + 2 {
                    return Err(parse(line, format!("expected {} fields, got {}", dim + 2, rec.len())));
                }
                let char_index: u32 = rec[1]
                    .trim()
                    .parse()
                    .map_err(|_| parse(line, format!("bad char_index `{}`", &rec[1])))?;
                let values: Vec<f64> = rec
                    .iter()
                    .skip(2)
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| parse(line, e.to_string()))?;
                rows.push(EmbeddingRow {
                    token_id: rec[0].to_string(),
                    char_index,
                    values,
                });
            }
            Ok((dim, rows))
        }
        EmbeddingFormat::Binary => {
            let bad = |detail: &str| VectorizeError::BadFile {
                path: path.display().to_string(),
                detail: detail.to_string(),
            };
            let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(io)?);
            let mut magic = [0u8; 4];
            f.read_exact(&mut magic).map_err(io)?;
            if &magic != EMB_MAGIC {
                return Err(bad("bad magic bytes"));
            }
            let mut b4 = [0u8; 4];
            f.read_exact(&mut b4).map_err(io)?;
            if u32::from_le_bytes(b4) != EMB_VERSION {
                return Err(bad("unsupported version"));
            }
            f.read_exact(&mut b4).map_err(io)?;
            let dim = u32::from_le_bytes(b4) as usize;
            let mut b8 = [0u8; 8];
            f.read_exact(&mut b8).map_err(io)?;
            let n = u64::from_le_bytes(b8) as usize;
            let mut rows = Vec::with_capacity(n);
            for _ in 0..n {
                f.read_exact(&mut b4).map_err(io)?;
                let id_len = u32::from_le_bytes(b4) as usize;
                let mut id = vec![0u8; id_len];
                f.read_exact(&mut id).map_err(io)?;
                let token_id = String::from_utf8(id).map_err(|_| bad("non-utf8 token id"))?;
                f.read_exact(&mut b4).map_err(io)?;
                let char_index = u32::from_le_bytes(b4);
                let mut values = vec![0.0; dim];
                for v in &mut values {
                    f.read_exact(&mut b8).map_err(io)?;
                    *v = f64::from_le_bytes(b8);
                }
                rows.push(EmbeddingRow {
                    token_id,
                    char_index,
                    values,
                });
            }
            Ok((dim, rows))
        }
    }
}

/// Loads per-character embedding rows and reduces to one vector per token.
/// With `average_pairs`, each token must have exactly 2 character rows whose
/// elementwise mean becomes the token vector; otherwise each token must have
/// exactly one row.
pub fn load_embeddings(
    path: &Path,
    format: EmbeddingFormat,
    average_pairs: bool,
) -> Result<EmbeddingTable, VectorizeError> {
    let (dim, rows) = read_embedding_rows(path, format)?;
    let mut by_token: BTreeMap<String, Vec<EmbeddingRow>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for r in rows {
        if r.values.len() != dim {
            return Err(VectorizeError::DimensionMismatch {
                token: r.token_id.clone(),
                got: r.values.len(),
                expected: dim,
            });
        }
        if r.values.iter().any(|v| !v.is_finite()) {
            return Err(VectorizeError::NonFinite(r.token_id.clone()));
        }
        if !by_token.contains_key(&r.token_id) {
            order.push(r.token_id.clone());
        }
        by_token.entry(r.token_id.clone()).or_default().push(r);
    }
    let mut embeddings = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = by_token.remove(&id).unwrap();
        let values = if average_pairs {
            if rows.len() != 2 {
                return Err(VectorizeError::BadPairCount {
                    token: id.clone(),
                    got: rows.len(),
                });
            }
            rows.sort_by_key(|r| r.char_index);
            let v: Vec<f64> = rows[0]
                .values
                .iter()
                .zip(&rows[1].values)
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            if v.iter().all(|x| *x == 0.0) && rows[0].values.iter().any(|x| *x != 0.0) {
                log::warn!("token `{id}`: character vectors cancel to the zero vector");
            }
            v
        } else {
            if rows.len() != 1 {
                return Err(VectorizeError::BadPairCount {
                    token: id.clone(),
                    got: rows.len(),
                });
            }
            rows.pop().unwrap().values
        };
        embeddings.push(Embedding {
            token_id: id,
            values,
        });
    }
    EmbeddingTable::new(dim, embeddings)
}

/// Stacks a token-aligned matrix (one row per id) from the table.
pub fn embedding_matrix(
    table: &EmbeddingTable,
    token_ids: &[String],
) -> Result<Mat<f64>, VectorizeError> {
    let mut m = Mat::<f64>::zeros(token_ids.len(), table.dim);
    for (i, id) in token_ids.iter().enumerate() {
        let e = table
            .get(id)
            .ok_or_else(|| VectorizeError::MissingToken(id.clone()))?;
        for j in 0..table.dim {
            m[(i, j)] = e.values[j];
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_scale_analytic() {
        let out = center_scale(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(out, vec![-0.5, 0.0, 0.5]);
    }

    #[test]
    fn center_scale_affine_invariance() {
        let x = vec![0.3, -1.2, 2.5, 0.0, 0.7];
        let base = center_scale(&x).unwrap();
        let pos: Vec<f64> = x.iter().map(|v| 2.5 * v + 7.0).collect();
        let neg: Vec<f64> = x.iter().map(|v| -0.4 * v + 1.0).collect();
        let sp = center_scale(&pos).unwrap();
        let sn = center_scale(&neg).unwrap();
        for i in 0..x.len() {
            assert!((sp[i] - base[i]).abs() < 1e-12);
            assert!((sn[i] + base[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn center_scale_mean_zero_range_one() {
        let x: Vec<f64> = (0..50).map(|i| ((i as f64) * 0.7).sin() * 3.0 + 100.0).collect();
        let s = center_scale(&x).unwrap();
        let mean: f64 = s.iter().sum::<f64>() / 50.0;
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(mean.abs() < 1e-12);
        assert!((max - min - 1.0).abs() < 1e-12);
        // correlation with the unscaled contour is exactly 1
        let mx: f64 = x.iter().sum::<f64>() / 50.0;
        let num: f64 = x.iter().zip(&s).map(|(a, b)| (a - mx) * b).sum();
        let da: f64 = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
        let db: f64 = s.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!((num / (da * db) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn center_scale_rejects_constant() {
        assert!(matches!(
            center_scale(&[2.0; 10]),
            Err(VectorizeError::ConstantContour)
        ));
    }

    #[test]
    fn grid_frame_spacing() {
        let t = crate::corpus::TokenRecord {
            token_id: "t".into(),
            word: "w".into(),
            sense: None,
            speaker: "s".into(),
            gender: crate::corpus::Gender::Female,
            duration_s: 0.3,
            utterance_position: 0.5,
            bigram_previous: 0.1,
            bigram_following: 0.2,
            adjacent_tone: "T1_T2".parse().unwrap(),
            vowel1: crate::corpus::VowelHeight::High,
            vowel2: crate::corpus::VowelHeight::Low,
            onset1: crate::corpus::OnsetType::Voiced,
            onset2: crate::corpus::OnsetType::Null,
            syllable1: crate::corpus::RhymeStructure::V,
            syllable2: crate::corpus::RhymeStructure::GV,
            samples: vec![],
        };
        let f = token_grid_frame(&t, 50).unwrap();
        let grid = f.numeric("time").unwrap();
        assert_eq!(grid[0], 0.0);
        assert_eq!(grid[49], 1.0);
        for i in 1..50 {
            assert!((grid[i] - grid[i - 1] - 1.0 / 49.0).abs() < 1e-15);
        }
        let f2 = token_grid_frame(&t, 2).unwrap();
        assert_eq!(f2.numeric("time").unwrap(), &[0.0, 1.0]);
        assert!(token_grid_frame(&t, 1).is_err());
    }

    #[test]
    fn centroid_cases() {
        let a = vec![1.0, 2.0];
        let b = vec![-1.0, -2.0];
        assert_eq!(centroid(&[&a]).unwrap(), a);
        assert_eq!(centroid(&[&a, &b]).unwrap(), vec![0.0, 0.0]);
        assert!(centroid(&[]).is_err());
    }

    #[test]
    fn embedding_pair_averaging() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        let rows = vec![
            EmbeddingRow { token_id: "a".into(), char_index: 0, values: vec![1.0, 2.0, 3.0] },
            EmbeddingRow { token_id: "a".into(), char_index: 1, values: vec![3.0, 2.0, 1.0] },
            EmbeddingRow { token_id: "b".into(), char_index: 0, values: vec![1.0, 1.0, 1.0] },
            EmbeddingRow { token_id: "b".into(), char_index: 1, values: vec![1.0, 1.0, 1.0] },
            EmbeddingRow { token_id: "c".into(), char_index: 0, values: vec![2.0, 0.0, -2.0] },
            EmbeddingRow { token_id: "c".into(), char_index: 1, values: vec![-2.0, 0.0, 2.0] },
        ];
        write_embedding_rows(&rows, 3, &path, EmbeddingFormat::Csv).unwrap();
        let table = load_embeddings(&path, EmbeddingFormat::Csv, true).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.get("a").unwrap().values, vec![2.0, 2.0, 2.0]);
        assert_eq!(table.get("b").unwrap().values, vec![1.0, 1.0, 1.0]);
        // antipodal vectors average to zero (accepted)
        assert_eq!(table.get("c").unwrap().values, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn binary_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let rows = vec![
            EmbeddingRow {
                token_id: "tok_1".into(),
                char_index: 0,
                values: vec![std::f64::consts::PI, -0.0, 1e-300, f64::MIN_POSITIVE],
            },
            EmbeddingRow {
                token_id: "tok_2".into(),
                char_index: 0,
                values: vec![1.1, 2.2, 3.3, 4.4],
            },
        ];
        write_embedding_rows(&rows, 4, &path, EmbeddingFormat::Binary).unwrap();
        let (dim, loaded) = read_embedding_rows(&path, EmbeddingFormat::Binary).unwrap();
        assert_eq!(dim, 4);
        for (a, b) in rows.iter().zip(&loaded) {
            assert_eq!(a.token_id, b.token_id);
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn pitch_vector_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pv.csv");
        let v = PitchVector {
            token_id: "t1".into(),
            source_model: "word".into(),
            values: (0..50).map(|i| (i as f64 * 0.37).sin()).collect(),
        };
        write_pitch_vectors_csv(&[v.clone()], &path).unwrap();
        let loaded = load_pitch_vectors_csv(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].token_id, "t1");
        assert_eq!(loaded[0].source_model, "word");
        for (a, b) in v.values.iter().zip(&loaded[0].values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let e = EmbeddingTable::new(
            3,
            vec![Embedding {
                token_id: "x".into(),
                values: vec![1.0, 2.0],
            }],
        );
        assert!(matches!(e, Err(VectorizeError::DimensionMismatch { .. })));
    }
}
