//! The fixed catalogue of model formulas, AIC comparison reports and the
//! stratified held-out SSE cross-validation with permutation controls.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, TokenTable};
use crate::design::{Design, DesignError, ModelSpec, Term};
use crate::frame::{FactorColumn, FrameError, ObservationTable};
use crate::gam::{evidence_ratio, fit_with_design, FitOptions, FittedGam, GamError, PredictOptions};

#[derive(Error, Debug)]
pub enum SuiteError {
    #[error("unknown model label `{0}`")]
    UnknownLabel(String),

    #[error("`{0}` is not a per-token factor that can be permuted")]
    NotPermutable(String),

    #[error("word `{word}` has only {got} tokens; needs at least 2 to appear in train and test")]
    WordTooSmall { word: String, got: usize },

    #[error(transparent)]
    Gam(#[from] GamError),

    #[error(transparent)]
    Design(#[from] DesignError),

    #[error(transparent)]
    Frame(#[from] FrameError),

    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// The models the pipeline knows how to build: the baseline, each single
/// segment addition, all six segments at once, word, sense, and the
/// permuted-word control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelLabel {
    Baseline,
    Vowel1,
    Vowel2,
    Onset1,
    Onset2,
    Syllable1,
    Syllable2,
    OmnibusSegment,
    Word,
    Sense,
    RandomWord,
}

impl ModelLabel {
    pub const ALL: [ModelLabel; 11] = [
        ModelLabel::Baseline,
        ModelLabel::Vowel1,
        ModelLabel::Vowel2,
        ModelLabel::Onset1,
        ModelLabel::Onset2,
        ModelLabel::Syllable1,
        ModelLabel::Syllable2,
        ModelLabel::OmnibusSegment,
        ModelLabel::Word,
        ModelLabel::Sense,
        ModelLabel::RandomWord,
    ];

    pub const SEGMENTS: [ModelLabel; 6] = [
        ModelLabel::Vowel1,
        ModelLabel::Vowel2,
        ModelLabel::Onset1,
        ModelLabel::Onset2,
        ModelLabel::Syllable1,
        ModelLabel::Syllable2,
    ];

    /// Factor columns added on top of the baseline, each as a factor smooth
    /// of time.
    pub fn added_factors(&self) -> Vec<&'static str> {
        match self {
            ModelLabel::Baseline => vec![],
            ModelLabel::Vowel1 => vec!["vowel1"],
            ModelLabel::Vowel2 => vec!["vowel2"],
            ModelLabel::Onset1 => vec!["onset1"],
            ModelLabel::Onset2 => vec!["onset2"],
            ModelLabel::Syllable1 => vec!["syllable1"],
            ModelLabel::Syllable2 => vec!["syllable2"],
            ModelLabel::OmnibusSegment => vec![
                "vowel1",
                "vowel2",
                "onset1",
                "onset2",
                "syllable1",
                "syllable2",
            ],
            ModelLabel::Word | ModelLabel::RandomWord => vec!["word"],
            ModelLabel::Sense => vec!["sense"],
        }
    }
}

impl fmt::Display for ModelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelLabel::Baseline => "baseline",
            ModelLabel::Vowel1 => "+vowel1",
            ModelLabel::Vowel2 => "+vowel2",
            ModelLabel::Onset1 => "+onset1",
            ModelLabel::Onset2 => "+onset2",
            ModelLabel::Syllable1 => "+syllable1",
            ModelLabel::Syllable2 => "+syllable2",
            ModelLabel::OmnibusSegment => "omnibus-segment",
            ModelLabel::Word => "word",
            ModelLabel::Sense => "sense",
            ModelLabel::RandomWord => "random-word",
        })
    }
}

impl FromStr for ModelLabel {
    type Err = SuiteError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "baseline" => ModelLabel::Baseline,
            "+vowel1" | "vowel1" => ModelLabel::Vowel1,
            "+vowel2" | "vowel2" => ModelLabel::Vowel2,
            "+onset1" | "onset1" => ModelLabel::Onset1,
            "+onset2" | "onset2" => ModelLabel::Onset2,
            "+syllable1" | "syllable1" => ModelLabel::Syllable1,
            "+syllable2" | "syllable2" => ModelLabel::Syllable2,
            "omnibus-segment" => ModelLabel::OmnibusSegment,
            "word" => ModelLabel::Word,
            "sense" => ModelLabel::Sense,
            "random-word" => ModelLabel::RandomWord,
            other => return Err(SuiteError::UnknownLabel(other.to_string())),
        })
    }
}

/// The eight-construct baseline formula shared by every model.
fn baseline_terms() -> Vec<Term> {
    let mut terms = vec![
        Term::Factor {
            name: "gender".into(),
        },
        Term::BySmooth {
            covariate: "time".into(),
            by: "gender".into(),
            k: 10,
        },
        Term::FactorSmooth {
            covariate: "time".into(),
            factor: "speaker".into(),
            k: 5,
            m: 1,
        },
    ];
    for cov in [
        "duration",
        "utterance_position",
        "bigram_previous",
        "bigram_following",
    ] {
        terms.push(Term::Smooth {
            covariate: cov.into(),
            k: 10,
        });
        terms.push(Term::TensorInteraction {
            covariate1: "time".into(),
            covariate2: cov.into(),
            k1: 5,
            k2: 5,
        });
    }
    terms.push(Term::FactorSmooth {
        covariate: "time".into(),
        factor: "adjacent_tone".into(),
        k: 5,
        m: 1,
    });
    terms
}

/// Baseline plus the label's added factor smooths of time.
pub fn build_spec(label: ModelLabel) -> ModelSpec {
    let mut terms = baseline_terms();
    for factor in label.added_factors() {
        terms.push(Term::FactorSmooth {
            covariate: "time".into(),
            factor: factor.into(),
            k: 5,
            m: 1,
        });
    }
    ModelSpec {
        response: "log_f0".into(),
        label: label.to_string(),
        terms,
    }
}

/// Tokens whose sense has at least `min_count` tokens; tokens without a
/// sense label are dropped.
pub fn sense_floor(table: &TokenTable, min_count: usize) -> Result<TokenTable, SuiteError> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &table.tokens {
        if let Some(s) = &t.sense {
            *counts.entry(s).or_default() += 1;
        }
    }
    let tokens: Vec<_> = table
        .tokens
        .iter()
        .filter(|t| {
            t.sense
                .as_deref()
                .map(|s| counts[s] >= min_count)
                .unwrap_or(false)
        })
        .cloned()
        .collect();
    if tokens.is_empty() {
        return Err(SuiteError::Corpus(CorpusError::AllTokensFiltered));
    }
    Ok(TokenTable { tokens })
}

/// Randomly reassigns the per-token values of one label variable across
/// tokens, preserving the marginal distribution.
pub fn permute_labels(
    table: &TokenTable,
    variable: &str,
    seed: u64,
) -> Result<TokenTable, SuiteError> {
    let mut tokens = table.tokens.clone();
    let n = tokens.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    match variable {
        "word" => {
            let vals: Vec<String> = table.tokens.iter().map(|t| t.word.clone()).collect();
            for (i, t) in tokens.iter_mut().enumerate() {
                t.word = vals[perm[i]].clone();
            }
        }
        "sense" => {
            let vals: Vec<Option<String>> = table.tokens.iter().map(|t| t.sense.clone()).collect();
            for (i, t) in tokens.iter_mut().enumerate() {
                t.sense = vals[perm[i]].clone();
            }
        }
        "vowel1" | "vowel2" | "onset1" | "onset2" | "syllable1" | "syllable2" => {
            for (i, idx) in perm.iter().enumerate() {
                let src = table.tokens[*idx].clone();
                let t = &mut tokens[i];
                match variable {
                    "vowel1" => t.vowel1 = src.vowel1,
                    "vowel2" => t.vowel2 = src.vowel2,
                    "onset1" => t.onset1 = src.onset1,
                    "onset2" => t.onset2 = src.onset2,
                    "syllable1" => t.syllable1 = src.syllable1,
                    _ => t.syllable2 = src.syllable2,
                }
            }
        }
        other => return Err(SuiteError::NotPermutable(other.to_string())),
    }
    // bypass the nesting validation: permutation breaks sense⊂word on purpose
    Ok(TokenTable { tokens })
}

/// Permutes a factor column of the long table across token blocks: every
/// row of a token gets the same reassigned level.
pub fn permute_table_factor(
    table: &ObservationTable,
    name: &str,
    seed: u64,
) -> Result<ObservationTable, SuiteError> {
    let col = table.frame.factor(name)?;
    let n_tok = table.n_tokens();
    let token_codes: Vec<usize> = (0..n_tok)
        .map(|t| col.codes[table.token_starts[t]])
        .collect();
    let mut perm: Vec<usize> = (0..n_tok).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for i in (1..n_tok).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let mut codes = col.codes.clone();
    for t in 0..n_tok {
        let new_code = token_codes[perm[t]];
        for r in table.token_rows(t) {
            codes[r] = new_code;
        }
    }
    let mut frame = crate::frame::Frame::new(table.n_rows());
    for col_name in table.frame.numeric_names().collect::<Vec<_>>() {
        frame.add_numeric(col_name, table.frame.numeric(col_name)?.to_vec())?;
    }
    for col_name in table.frame.factor_names().collect::<Vec<_>>() {
        let c = table.frame.factor(col_name)?;
        let new_col = if col_name == name {
            FactorColumn {
                levels: c.levels.clone(),
                codes: codes.clone(),
            }
        } else {
            c.clone()
        };
        frame.add_factor(col_name, new_col)?;
    }
    Ok(ObservationTable {
        frame,
        token_ids: table.token_ids.clone(),
        token_starts: table.token_starts.clone(),
    })
}

// ---------------------------------------------------------------------------
// AIC comparison

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelReport {
    pub label: String,
    pub aic: f64,
    /// AIC(model) − AIC(baseline); negative favors the model.
    pub delta_aic: f64,
    /// e^((AIC(baseline) − AIC(model))/2); > 1 favors the model.
    pub evidence_ratio_vs_baseline: f64,
    pub rho: f64,
    pub edf_total: f64,
    pub edf_by_term: Vec<(String, f64)>,
    /// Concurvity of each term added on top of the baseline.
    pub concurvity_added: Vec<(String, f64)>,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub models: Vec<ModelReport>,
}

/// Fits each labelled model on the full table (two-step AR(1) per model)
/// and reports AIC deltas against the baseline. `random-word` is fitted on
/// a copy of the table with the word labels permuted under `seed`.
pub fn compare_models(
    labels: &[ModelLabel],
    table: &ObservationTable,
    opts: &FitOptions,
    seed: u64,
) -> Result<ComparisonReport, SuiteError> {
    let mut fits: Vec<(ModelLabel, FittedGam)> = Vec::with_capacity(labels.len() + 1);
    let fit_one = |label: ModelLabel| -> Result<FittedGam, SuiteError> {
        let spec = build_spec(label);
        let (tbl, owned);
        if label == ModelLabel::RandomWord {
            owned = permute_table_factor(table, "word", seed)?;
            tbl = &owned;
        } else {
            tbl = table;
        }
        let design = Design::build(&spec, &tbl.frame)?;
        let y = tbl.frame.numeric(&spec.response)?;
        Ok(fit_with_design(spec, design, y, &tbl.token_starts, opts)?)
    };
    let baseline_fit = fit_one(ModelLabel::Baseline)?;
    let baseline_aic = baseline_fit.aic;
    if labels.contains(&ModelLabel::Baseline) {
        fits.push((ModelLabel::Baseline, baseline_fit));
    }
    for &label in labels {
        if label == ModelLabel::Baseline {
            continue;
        }
        fits.push((label, fit_one(label)?));
    }

    let mut models = Vec::with_capacity(fits.len());
    for (label, fit) in &fits {
        let delta_aic = fit.aic - baseline_aic;
        let mut concurvity_added = Vec::new();
        for factor in label.added_factors() {
            let term_label = format!("fs(time,{factor})");
            let c = fit.concurvity(&table.frame, &term_label)?;
            concurvity_added.push((term_label, c));
        }
        models.push(ModelReport {
            label: label.to_string(),
            aic: fit.aic,
            delta_aic,
            evidence_ratio_vs_baseline: evidence_ratio(-delta_aic),
            rho: fit.rho,
            edf_total: fit.edf_total,
            edf_by_term: fit
                .design
                .labels
                .iter()
                .cloned()
                .zip(fit.edf_by_term.iter().copied())
                .collect(),
            concurvity_added,
            converged: fit.converged,
        });
    }
    Ok(ComparisonReport { models })
}

// ---------------------------------------------------------------------------
// cross-validated held-out SSE

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub split_id: usize,
    pub label: String,
    /// Held-out sum of squared errors on the log-F0 scale.
    pub sse: f64,
    /// Baseline SSE minus this model's SSE on the same split; positive
    /// means the model predicts better than the baseline.
    pub sse_reduction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossvalOptions {
    pub n_splits: usize,
    pub holdout: f64,
    pub seed: u64,
    pub fit: FitOptions,
}

impl Default for CrossvalOptions {
    fn default() -> Self {
        CrossvalOptions {
            n_splits: 100,
            holdout: 0.1,
            seed: 0,
            fit: FitOptions::default(),
        }
    }
}

/// Word label of each token block.
pub fn token_words(table: &ObservationTable) -> Result<Vec<String>, SuiteError> {
    let col = table.frame.factor("word")?;
    Ok((0..table.n_tokens())
        .map(|t| col.level_of(table.token_starts[t]).to_string())
        .collect())
}

/// One stratified split: roughly `holdout` of each word's tokens go to
/// test, at least one, never all.
fn stratified_split(
    words: &[String],
    holdout: f64,
    rng: &mut ChaCha12Rng,
) -> Result<(Vec<usize>, Vec<usize>), SuiteError> {
    let mut by_word: BTreeMap<&String, Vec<usize>> = BTreeMap::new();
    for (t, w) in words.iter().enumerate() {
        by_word.entry(w).or_default().push(t);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (word, toks) in &by_word {
        let n = toks.len();
        if n < 2 {
            return Err(SuiteError::WordTooSmall {
                word: (*word).clone(),
                got: n,
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let n_test = ((n as f64 * holdout).round() as usize).clamp(1, n - 1);
        for (pos, &i) in order.iter().enumerate() {
            if pos < n_test {
                test.push(toks[i]);
            } else {
                train.push(toks[i]);
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Fits every labelled model on each stratified train split and scores it
/// on the held-out rows. One superset design per split is built and nested
/// models reuse its basis blocks; smoothing parameters warm-start from the
/// previous split's solution per label.
pub fn crossval_sse(
    labels: &[ModelLabel],
    table: &ObservationTable,
    opts: &CrossvalOptions,
) -> Result<Vec<CvResult>, SuiteError> {
    let words = token_words(table)?;
    let zero_fallback: BTreeSet<String> = ["adjacent_tone".to_string()].into_iter().collect();

    // the superset carries every factor any requested model adds
    let mut extra: Vec<&'static str> = Vec::new();
    for label in labels {
        for f in label.added_factors() {
            if !extra.contains(&f) {
                extra.push(f);
            }
        }
    }
    let needs_random = labels.contains(&ModelLabel::RandomWord);

    let mut warm: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut results = Vec::with_capacity(labels.len() * opts.n_splits);
    for split_id in 0..opts.n_splits {
        let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
        rng.set_stream(split_id as u64 + 1);
        let (train_toks, test_toks) = stratified_split(&words, opts.holdout, &mut rng)?;
        let train = table.subset_tokens(&train_toks);
        let test = table.subset_tokens(&test_toks);
        let y_test = test.response()?;

        let mut super_spec = build_spec(ModelLabel::Baseline);
        for f in &extra {
            super_spec.terms.push(Term::FactorSmooth {
                covariate: "time".into(),
                factor: (*f).to_string(),
                k: 5,
                m: 1,
            });
        }
        let super_design = Design::build(&super_spec, &train.frame)?;
        let baseline_labels: Vec<String> = baseline_terms().iter().map(|t| t.label()).collect();

        // permuted copy for the random-word control, one permutation per split
        let (perm_train, perm_test);
        if needs_random {
            let seed = opts.seed.wrapping_add(0x5eed).wrapping_add(split_id as u64);
            let permuted = permute_table_factor(table, "word", seed)?;
            perm_train = Some(permuted.subset_tokens(&train_toks));
            perm_test = Some(permuted.subset_tokens(&test_toks));
        } else {
            perm_train = None;
            perm_test = None;
        }

        let mut split_results: Vec<CvResult> = Vec::with_capacity(labels.len() + 1);
        let eval =
            |label: ModelLabel, warm: &mut BTreeMap<String, Vec<f64>>| -> Result<f64, SuiteError> {
                let spec = build_spec(label);
                let mut keep: Vec<String> = baseline_labels.clone();
                for f in label.added_factors() {
                    keep.push(format!("fs(time,{f})"));
                }
                let keep_refs: Vec<&str> = keep.iter().map(|s| s.as_str()).collect();
                let mut fit_opts = opts.fit.clone();
                fit_opts.lambda_init = warm.get(&label.to_string()).cloned();
                let (fit, test_frame) = if label == ModelLabel::RandomWord {
                    let ptr = perm_train.as_ref().expect("prepared above");
                    let pts = perm_test.as_ref().expect("prepared above");
                    let design = Design::build(&spec, &ptr.frame)?;
                    let y = ptr.frame.numeric(&spec.response)?;
                    (
                        fit_with_design(spec, design, y, &ptr.token_starts, &fit_opts)?,
                        &pts.frame,
                    )
                } else {
                    let design = super_design.subset(&keep_refs);
                    let y = train.frame.numeric(&spec.response)?;
                    (
                        fit_with_design(spec, design, y, &train.token_starts, &fit_opts)?,
                        &test.frame,
                    )
                };
                warm.insert(label.to_string(), fit.lambda.clone());
                let pred = fit.predict(
                    test_frame,
                    &PredictOptions {
                        zero_fallback: zero_fallback.clone(),
                        ..PredictOptions::default()
                    },
                )?;
                Ok(y_test
                    .iter()
                    .zip(&pred.fitted)
                    .map(|(y, f)| (y - f).powi(2))
                    .sum())
            };

        let base_sse = eval(ModelLabel::Baseline, &mut warm)?;
        if labels.contains(&ModelLabel::Baseline) {
            split_results.push(CvResult {
                split_id,
                label: ModelLabel::Baseline.to_string(),
                sse: base_sse,
                sse_reduction: 0.0,
            });
        }
        for &label in labels {
            if label == ModelLabel::Baseline {
                continue;
            }
            let sse = eval(label, &mut warm)?;
            split_results.push(CvResult {
                split_id,
                label: label.to_string(),
                sse,
                sse_reduction: base_sse - sse,
            });
        }
        results.extend(split_results);
    }
    Ok(results)
}

/// Median per-label SSE reduction across splits.
pub fn median_reductions(results: &[CvResult]) -> BTreeMap<String, f64> {
    let mut by_label: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in results {
        by_label
            .entry(r.label.clone())
            .or_default()
            .push(r.sse_reduction);
    }
    by_label
        .into_iter()
        .map(|(label, mut v)| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let med = if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            };
            (label, med)
        })
        .collect()
}
