//! Linear and linear-plus-residual-network mappings between pitch vectors
//! and meaning vectors, with the stratified-split evaluation protocol.

use std::collections::BTreeMap;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mlp::{Mlp, MlpConfig, MlpError};
use crate::vectorize::{EmbeddingTable, PitchVector};

#[derive(Error, Debug)]
pub enum DlmError {
    #[error("input and output row counts differ: {0} vs {1}")]
    RowMismatch(usize, usize),

    #[error("design is rank deficient with ridge=0; set ridge > 0")]
    RankDeficient,

    #[error("empty reference set")]
    EmptyReference,

    #[error("empty label set")]
    EmptyLabels,

    #[error("word `{word}` has only {got} tokens; stratified splitting needs at least 3")]
    WordTooSmall { word: String, got: usize },

    #[error("token `{0}` is missing a pitch vector")]
    MissingPitchVector(String),

    #[error("token `{0}` is missing an embedding")]
    MissingEmbedding(String),

    #[error("residual network diverged: {0}")]
    Net(#[from] MlpError),

    #[error("prediction/label length mismatch: {0} rows vs {1} labels")]
    LabelMismatch(usize, usize),
}

/// Multivariate ridge regression with an unpenalized bias row. `weights`
/// is (input_dim + 1) x output_dim; row 0 is the bias.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearMap {
    pub weights: Vec<Vec<f64>>,
    pub ridge: f64,
}

impl LinearMap {
    pub fn input_dim(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn output_dim(&self) -> usize {
        self.weights.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.weights[0].clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(&self.weights[i + 1]) {
                *o += xi * w;
            }
        }
        out
    }

    pub fn predict(&self, x: &Mat<f64>) -> Mat<f64> {
        let q = self.output_dim();
        let mut out = Mat::<f64>::zeros(x.nrows(), q);
        let mut row = vec![0.0; x.ncols()];
        for r in 0..x.nrows() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = x[(r, j)];
            }
            let y = self.predict_row(&row);
            for (j, v) in y.iter().enumerate() {
                out[(r, j)] = *v;
            }
        }
        out
    }
}

/// Minimizes ‖Y − [1|X]W‖² + ridge·‖W₋bias‖² by Cholesky on the normal
/// equations. The bias row carries no penalty so the ridge→∞ limit is the
/// column-mean predictor.
pub fn train_ldl(x: &Mat<f64>, y: &Mat<f64>, ridge: f64) -> Result<LinearMap, DlmError> {
    let n = x.nrows();
    if n != y.nrows() {
        return Err(DlmError::RowMismatch(n, y.nrows()));
    }
    let p = x.ncols() + 1;
    let q = y.ncols();
    // A = BᵀB + ridge·diag(0,1,…,1) with B = [1|X]
    let mut a = Mat::<f64>::zeros(p, p);
    a[(0, 0)] = n as f64;
    for j in 1..p {
        let mut s = 0.0;
        for r in 0..n {
            s += x[(r, j - 1)];
        }
        a[(0, j)] = s;
        a[(j, 0)] = s;
    }
    for i in 1..p {
        for j in i..p {
            let mut s = 0.0;
            for r in 0..n {
                s += x[(r, i - 1)] * x[(r, j - 1)];
            }
            a[(i, j)] = s;
            a[(j, i)] = s;
        }
    }
    for j in 1..p {
        a[(j, j)] += ridge;
    }
    let mut rhs = Mat::<f64>::zeros(p, q);
    for k in 0..q {
        let mut s0 = 0.0;
        for r in 0..n {
            s0 += y[(r, k)];
        }
        rhs[(0, k)] = s0;
        for j in 1..p {
            let mut s = 0.0;
            for r in 0..n {
                s += x[(r, j - 1)] * y[(r, k)];
            }
            rhs[(j, k)] = s;
        }
    }
    let llt = a.llt(Side::Lower).map_err(|_| DlmError::RankDeficient)?;
    let w = llt.solve(&rhs);
    if (0..p).any(|i| (0..q).any(|j| !w[(i, j)].is_finite())) {
        return Err(DlmError::RankDeficient);
    }
    let weights = (0..p)
        .map(|i| (0..q).map(|j| w[(i, j)]).collect())
        .collect();
    Ok(LinearMap { weights, ridge })
}

/// Linear map plus a network trained on its residuals. If the network never
/// improved on the zero map's validation loss it is dropped and the map is
/// purely linear.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResMap {
    pub base: LinearMap,
    pub residual_net: Option<Mlp>,
}

impl ResMap {
    pub fn predict(&self, x: &Mat<f64>) -> Mat<f64> {
        let mut out = self.base.predict(x);
        if let Some(net) = &self.residual_net {
            let res = net.predict(x);
            for i in 0..out.nrows() {
                for j in 0..out.ncols() {
                    out[(i, j)] += res[(i, j)];
                }
            }
        }
        out
    }
}

pub fn train_resldl(
    x: &Mat<f64>,
    y: &Mat<f64>,
    x_val: &Mat<f64>,
    y_val: &Mat<f64>,
    ridge: f64,
    net_config: MlpConfig,
) -> Result<ResMap, DlmError> {
    let base = train_ldl(x, y, ridge)?;
    let residual = |x: &Mat<f64>, y: &Mat<f64>| {
        let pred = base.predict(x);
        Mat::<f64>::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] - pred[(i, j)])
    };
    let r_train = residual(x, y);
    let r_val = residual(x_val, y_val);
    // validation loss of the zero map == mean square of the linear residuals
    let zero_val = if r_val.nrows() == 0 {
        0.0
    } else {
        let mut s = 0.0;
        for i in 0..r_val.nrows() {
            for j in 0..r_val.ncols() {
                s += r_val[(i, j)] * r_val[(i, j)];
            }
        }
        s / (r_val.nrows() * r_val.ncols()) as f64
    };
    let net = Mlp::train(x, &r_train, x_val, &r_val, net_config)?;
    let residual_net = if net.best_val_loss() < zero_val {
        Some(net)
    } else {
        None
    };
    Ok(ResMap { base, residual_net })
}

// ---------------------------------------------------------------------------
// stratified splits

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPlan {
    pub split_id: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub proportions: (f64, f64, f64),
    pub seed: u64,
}

/// Stratified 80/10/10 plans: each word contributes to every partition,
/// with at least one token in validation and test.
pub fn make_splits(
    tokens_by_word: &BTreeMap<String, Vec<String>>,
    proportions: (f64, f64, f64),
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<SplitPlan>, DlmError> {
    for (word, toks) in tokens_by_word {
        if toks.len() < 3 {
            return Err(DlmError::WordTooSmall {
                word: word.clone(),
                got: toks.len(),
            });
        }
    }
    let (_, p_val, p_test) = proportions;
    let mut plans = Vec::with_capacity(n_repeats);
    for rep in 0..n_repeats {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64 + 1);
        let mut train = Vec::new();
        let mut validation = Vec::new();
        let mut test = Vec::new();
        for toks in tokens_by_word.values() {
            let n = toks.len();
            let mut order: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rand::Rng::random_range(&mut rng, 0..=i);
                order.swap(i, j);
            }
            let n_val = ((n as f64 * p_val).round() as usize).clamp(1, n - 2);
            let n_test = ((n as f64 * p_test).round() as usize).clamp(1, n - 1 - n_val);
            for (pos, &i) in order.iter().enumerate() {
                let id = toks[i].clone();
                if pos < n_test {
                    test.push(id);
                } else if pos < n_test + n_val {
                    validation.push(id);
                } else {
                    train.push(id);
                }
            }
        }
        train.sort();
        validation.sort();
        test.sort();
        plans.push(SplitPlan {
            split_id: rep,
            train,
            validation,
            test,
            proportions,
            seed,
        });
    }
    Ok(plans)
}

// ---------------------------------------------------------------------------
// evaluation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
}

impl Default for Metric {
    fn default() -> Self {
        Metric::Cosine
    }
}

/// Fraction of predicted rows whose nearest reference vector carries the
/// same word label. The reference set is every token's gold vector — the
/// predicted token's own gold vector included.
pub fn nearest_neighbor_eval(
    predictions: &Mat<f64>,
    pred_labels: &[String],
    reference: &Mat<f64>,
    ref_labels: &[String],
    metric: Metric,
) -> Result<f64, DlmError> {
    if reference.nrows() == 0 {
        return Err(DlmError::EmptyReference);
    }
    if predictions.nrows() != pred_labels.len() {
        return Err(DlmError::LabelMismatch(predictions.nrows(), pred_labels.len()));
    }
    if reference.nrows() != ref_labels.len() {
        return Err(DlmError::LabelMismatch(reference.nrows(), ref_labels.len()));
    }
    let d = predictions.ncols();
    let ref_norms: Vec<f64> = (0..reference.nrows())
        .map(|r| (0..d).map(|j| reference[(r, j)].powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut correct = 0usize;
    for i in 0..predictions.nrows() {
        let mut best = usize::MAX;
        match metric {
            Metric::Cosine => {
                let pn = (0..d).map(|j| predictions[(i, j)].powi(2)).sum::<f64>().sqrt();
                let mut best_sim = f64::NEG_INFINITY;
                for r in 0..reference.nrows() {
                    let dot: f64 = (0..d).map(|j| predictions[(i, j)] * reference[(r, j)]).sum();
                    let denom = pn * ref_norms[r];
                    let sim = if denom > 0.0 { dot / denom } else { f64::NEG_INFINITY };
                    if sim > best_sim {
                        best_sim = sim;
                        best = r;
                    }
                }
            }
            Metric::Euclidean => {
                let mut best_d = f64::INFINITY;
                for r in 0..reference.nrows() {
                    let dist: f64 = (0..d)
                        .map(|j| (predictions[(i, j)] - reference[(r, j)]).powi(2))
                        .sum();
                    if dist < best_d {
                        best_d = dist;
                        best = r;
                    }
                }
            }
        }
        if best != usize::MAX && ref_labels[best] == pred_labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / predictions.nrows() as f64)
}

/// Probability two independent draws from the empirical label distribution
/// agree: Σᵢ pᵢ².
pub fn chance_baseline(labels: &[String]) -> Result<f64, DlmError> {
    if labels.is_empty() {
        return Err(DlmError::EmptyLabels);
    }
    let mut counts: BTreeMap<&String, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let n = labels.len() as f64;
    Ok(counts.values().map(|&c| (c as f64 / n).powi(2)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Comprehension,
    Production,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mapping {
    Ldl,
    ResLdl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub split_id: usize,
    pub direction: Direction,
    /// Label of the model the pitch vectors came from.
    pub pitch_source: String,
    pub mapping: Mapping,
    pub metric: Metric,
    pub ridge: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub chance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub direction: Direction,
    pub pitch_source: String,
    pub mapping: Mapping,
    pub n_splits: usize,
    pub mean_train_acc: f64,
    pub mean_test_acc: f64,
    /// 2·SE over splits, the error-bar convention of the result figures.
    pub two_se_train: f64,
    pub two_se_test: f64,
    pub mean_chance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DlmHyper {
    pub ridge_grid: Vec<f64>,
    pub metric: Metric,
    pub net: MlpConfig,
}

impl Default for DlmHyper {
    fn default() -> Self {
        DlmHyper {
            ridge_grid: vec![0.0, 1e-6, 1e-4, 1e-2],
            metric: Metric::Cosine,
            net: MlpConfig::default(),
        }
    }
}

/// Token-aligned inputs for one experiment: a pitch vector and an embedding
/// per token, plus the token's word label.
pub struct ExperimentData {
    pub pitch: BTreeMap<String, Vec<f64>>,
    pub embedding: BTreeMap<String, Vec<f64>>,
    pub word: BTreeMap<String, String>,
    pub pitch_source: String,
}

impl ExperimentData {
    pub fn new(
        pitch_vectors: &[PitchVector],
        embeddings: &EmbeddingTable,
        word_of: &BTreeMap<String, String>,
    ) -> Self {
        let pitch_source = pitch_vectors
            .first()
            .map(|v| v.source_model.clone())
            .unwrap_or_default();
        ExperimentData {
            pitch: pitch_vectors
                .iter()
                .map(|v| (v.token_id.clone(), v.values.clone()))
                .collect(),
            embedding: embeddings
                .embeddings
                .iter()
                .map(|e| (e.token_id.clone(), e.values.clone()))
                .collect(),
            word: word_of.clone(),
            pitch_source,
        }
    }

    /// Stacks (input, target, word label) rows for the given tokens in the
    /// given direction.
    pub fn stack(
        &self,
        ids: &[String],
        direction: Direction,
    ) -> Result<(Mat<f64>, Mat<f64>, Vec<String>), DlmError> {
        let get_p = |id: &String| {
            self.pitch
                .get(id)
                .ok_or_else(|| DlmError::MissingPitchVector(id.clone()))
        };
        let get_e = |id: &String| {
            self.embedding
                .get(id)
                .ok_or_else(|| DlmError::MissingEmbedding(id.clone()))
        };
        let n = ids.len();
        let (din, dout) = match direction {
            Direction::Comprehension => (get_p(&ids[0])?.len(), get_e(&ids[0])?.len()),
            Direction::Production => (get_e(&ids[0])?.len(), get_p(&ids[0])?.len()),
        };
        let mut x = Mat::<f64>::zeros(n, din);
        let mut y = Mat::<f64>::zeros(n, dout);
        let mut labels = Vec::with_capacity(n);
        for (r, id) in ids.iter().enumerate() {
            let (xi, yi) = match direction {
                Direction::Comprehension => (get_p(id)?, get_e(id)?),
                Direction::Production => (get_e(id)?, get_p(id)?),
            };
            for (j, v) in xi.iter().enumerate() {
                x[(r, j)] = *v;
            }
            for (j, v) in yi.iter().enumerate() {
                y[(r, j)] = *v;
            }
            labels.push(self.word.get(id).cloned().unwrap_or_default());
        }
        Ok((x, y, labels))
    }
}

/// Trains and evaluates one (direction, mapping) cell on each split.
pub fn run_experiment(
    direction: Direction,
    mapping: Mapping,
    data: &ExperimentData,
    splits: &[SplitPlan],
    hyper: &DlmHyper,
) -> Result<Vec<EvalResult>, DlmError> {
    let mut all_ids: Vec<String> = data.word.keys().cloned().collect();
    all_ids.sort();
    let (_, gold, ref_labels) = data.stack(&all_ids, direction)?;

    let mut results = Vec::with_capacity(splits.len());
    for plan in splits {
        let (xt, yt, train_labels) = data.stack(&plan.train, direction)?;
        let (xv, yv, _) = data.stack(&plan.validation, direction)?;
        let (xs, _, test_labels) = data.stack(&plan.test, direction)?;

        // pick the ridge weight on validation squared error
        let mut best: Option<(f64, f64)> = None;
        for &ridge in &hyper.ridge_grid {
            let Ok(map) = train_ldl(&xt, &yt, ridge) else {
                continue;
            };
            let pred = map.predict(&xv);
            let mut sse = 0.0;
            for i in 0..pred.nrows() {
                for j in 0..pred.ncols() {
                    let e = pred[(i, j)] - yv[(i, j)];
                    sse += e * e;
                }
            }
            if best.map(|(_, s)| sse < s).unwrap_or(true) {
                best = Some((ridge, sse));
            }
        }
        let (ridge, _) = best.ok_or(DlmError::RankDeficient)?;

        let (train_pred, test_pred) = match mapping {
            Mapping::Ldl => {
                let map = train_ldl(&xt, &yt, ridge)?;
                (map.predict(&xt), map.predict(&xs))
            }
            Mapping::ResLdl => {
                let mut cfg = hyper.net.clone();
                cfg.seed = cfg.seed.wrapping_add(plan.split_id as u64);
                let map = train_resldl(&xt, &yt, &xv, &yv, ridge, cfg)?;
                (map.predict(&xt), map.predict(&xs))
            }
        };

        let train_acc =
            nearest_neighbor_eval(&train_pred, &train_labels, &gold, &ref_labels, hyper.metric)?;
        let test_acc =
            nearest_neighbor_eval(&test_pred, &test_labels, &gold, &ref_labels, hyper.metric)?;
        let chance = chance_baseline(&ref_labels)?;
        results.push(EvalResult {
            split_id: plan.split_id,
            direction,
            pitch_source: data.pitch_source.clone(),
            mapping,
            metric: hyper.metric,
            ridge,
            train_acc,
            test_acc,
            chance,
        });
    }
    Ok(results)
}

pub fn summarize(results: &[EvalResult]) -> Option<ExperimentSummary> {
    let first = results.first()?;
    let n = results.len() as f64;
    let mean = |f: fn(&EvalResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    let two_se = |f: fn(&EvalResult) -> f64, m: f64| {
        if results.len() < 2 {
            return 0.0;
        }
        let var = results.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / (n - 1.0);
        2.0 * (var / n).sqrt()
    };
    let mt = mean(|r| r.train_acc);
    let ms = mean(|r| r.test_acc);
    Some(ExperimentSummary {
        direction: first.direction,
        pitch_source: first.pitch_source.clone(),
        mapping: first.mapping,
        n_splits: results.len(),
        mean_train_acc: mt,
        mean_test_acc: ms,
        two_se_train: two_se(|r| r.train_acc, mt),
        two_se_test: two_se(|r| r.test_acc, ms),
        mean_chance: mean(|r| r.chance),
    })
}

// ---------------------------------------------------------------------------
// centroid production analysis

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CentroidResult {
    pub word: String,
    pub predicted: Vec<f64>,
    pub averaged: Vec<f64>,
    pub correlation: f64,
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma).powi(2);
        db += (y - mb).powi(2);
    }
    let denom = (da * db).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        num / denom
    }
}

/// For each word: predict a contour from the word's embedding centroid and
/// compare against the average of its tokens' gold pitch vectors. The final
/// row, labelled `ALL`, does the same over every token.
pub fn centroid_production_analysis(
    map: &LinearMap,
    data: &ExperimentData,
) -> Result<Vec<CentroidResult>, DlmError> {
    let mut by_word: BTreeMap<&String, Vec<&String>> = BTreeMap::new();
    for (token, word) in &data.word {
        by_word.entry(word).or_default().push(token);
    }
    let analyze = |tokens: &[&String], label: &str| -> Result<CentroidResult, DlmError> {
        let dim_e = map.input_dim();
        let mut centroid = vec![0.0; dim_e];
        let mut averaged: Option<Vec<f64>> = None;
        for id in tokens {
            let e = data
                .embedding
                .get(*id)
                .ok_or_else(|| DlmError::MissingEmbedding((*id).clone()))?;
            for (c, v) in centroid.iter_mut().zip(e) {
                *c += v;
            }
            let p = data
                .pitch
                .get(*id)
                .ok_or_else(|| DlmError::MissingPitchVector((*id).clone()))?;
            match &mut averaged {
                None => averaged = Some(p.clone()),
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(p) {
                        *a += v;
                    }
                }
            }
        }
        let k = tokens.len() as f64;
        for c in &mut centroid {
            *c /= k;
        }
        let mut averaged = averaged.expect("non-empty word group");
        for a in &mut averaged {
            *a /= k;
        }
        let predicted = map.predict_row(&centroid);
        let correlation = pearson(&predicted, &averaged);
        Ok(CentroidResult {
            word: label.to_string(),
            predicted,
            averaged,
            correlation,
        })
    };
    let mut out = Vec::with_capacity(by_word.len() + 1);
    for (word, tokens) in &by_word {
        out.push(analyze(tokens, word)?);
    }
    let all: Vec<&String> = data.word.keys().collect();
    out.push(analyze(&all, "ALL")?);
    Ok(out)
}
