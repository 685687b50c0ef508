//! Synthetic corpus generator with planted ground truth, so recovery,
//! ordering and chance-level claims can be tested end to end.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    AdjacentTone, F0Sample, Gender, OnsetType, RhymeStructure, TokenRecord, TokenTable, Tone,
    VowelHeight,
};
use crate::frame::ObservationTable;
use crate::gam::{FittedGam, GamError, PredictOptions};
use crate::vectorize::{Embedding, EmbeddingRow, EmbeddingTable, VectorizeError};

#[derive(Error, Debug)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    BadConfig(String),

    #[error("fitted model has no `{0}` term")]
    MissingTerm(String),

    #[error(transparent)]
    Gam(#[from] GamError),

    #[error(transparent)]
    Vectorize(#[from] VectorizeError),

    #[error(transparent)]
    Frame(#[from] crate::frame::FrameError),
}

/// Two opposite-signed Gaussian bumps plus a linear decline: a small early
/// fall, a mid rise, and a large final fall.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationContour {
    pub fall_amp: f64,
    pub fall_center: f64,
    pub fall_width: f64,
    pub rise_amp: f64,
    pub rise_center: f64,
    pub rise_width: f64,
    pub decline: f64,
}

impl Default for PopulationContour {
    fn default() -> Self {
        PopulationContour {
            fall_amp: -0.04,
            fall_center: 0.12,
            fall_width: 0.07,
            rise_amp: 0.06,
            rise_center: 0.45,
            rise_width: 0.15,
            decline: -0.12,
        }
    }
}

impl PopulationContour {
    pub fn eval(&self, t: f64) -> f64 {
        let bump = |amp: f64, c: f64, w: f64| amp * (-((t - c) / w).powi(2) / 2.0).exp();
        bump(self.fall_amp, self.fall_center, self.fall_width)
            + bump(self.rise_amp, self.rise_center, self.rise_width)
            + self.decline * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Isomorphy {
    /// Embedding cluster centers are a function of the planted contour
    /// modulations.
    On,
    /// Token embeddings are i.i.d. noise carrying no word structure.
    Off,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_words: usize,
    pub tokens_per_word: usize,
    pub n_speakers: usize,
    pub samples_per_token: usize,
    /// 0 disables sense labels entirely.
    pub senses_per_word: usize,
    pub population: PopulationContour,
    pub word_modulation_scale: f64,
    pub sense_modulation_scale: f64,
    pub speaker_modulation_scale: f64,
    pub segment_effect_scale: f64,
    pub ar1_rho: f64,
    pub noise_sd: f64,
    pub embedding_dim: usize,
    pub cluster_sd: f64,
    pub isomorphy: Isomorphy,
    /// Adds an elementwise-sine component to the contour→embedding relation.
    pub nonlinear_scale: f64,
    /// Probability a token loses a contiguous mid-contour interval.
    pub voiceless_gap_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_words: 20,
            tokens_per_word: 60,
            n_speakers: 12,
            samples_per_token: 30,
            senses_per_word: 0,
            population: PopulationContour::default(),
            word_modulation_scale: 0.08,
            sense_modulation_scale: 0.0,
            speaker_modulation_scale: 0.04,
            segment_effect_scale: 0.02,
            ar1_rho: 0.6,
            noise_sd: 0.02,
            embedding_dim: 64,
            cluster_sd: 0.05,
            isomorphy: Isomorphy::On,
            nonlinear_scale: 0.0,
            voiceless_gap_prob: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::BadConfig(m.to_string()));
        if self.n_words < 2 {
            return bad("n_words must be at least 2");
        }
        if self.tokens_per_word < 3 {
            return bad("tokens_per_word must be at least 3 (one per split partition)");
        }
        if self.n_speakers < 2 {
            return bad("n_speakers must be at least 2");
        }
        if self.samples_per_token < 6 {
            return bad("samples_per_token must be at least 6");
        }
        if self.embedding_dim < 4 {
            return bad("embedding_dim must be at least 4");
        }
        for (name, v) in [
            ("word_modulation_scale", self.word_modulation_scale),
            ("sense_modulation_scale", self.sense_modulation_scale),
            ("speaker_modulation_scale", self.speaker_modulation_scale),
            ("segment_effect_scale", self.segment_effect_scale),
            ("noise_sd", self.noise_sd),
            ("cluster_sd", self.cluster_sd),
            ("nonlinear_scale", self.nonlinear_scale),
        ] {
            if !(v >= 0.0) {
                return Err(SynthError::BadConfig(format!("{name} must be ≥ 0")));
            }
        }
        if !(-1.0 < self.ar1_rho && self.ar1_rho < 1.0) {
            return bad("ar1_rho must lie in (-1, 1)");
        }
        if !(0.0..=1.0).contains(&self.voiceless_gap_prob) {
            return bad("voiceless_gap_prob must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Sinusoid basis carrying all planted modulations: sin/cos at one and two
/// cycles over normalized time.
pub fn modulation_basis(t: f64) -> [f64; 4] {
    use std::f64::consts::TAU;
    [
        (TAU * t).sin(),
        (TAU * t).cos(),
        (2.0 * TAU * t).sin(),
        (2.0 * TAU * t).cos(),
    ]
}

fn dot4(theta: &[f64; 4], b: &[f64; 4]) -> f64 {
    theta.iter().zip(b).map(|(a, c)| a * c).sum()
}

/// Everything the generator planted, regenerable from (config, seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    /// Total per-word modulation coefficients (segment parts included).
    pub word_theta: BTreeMap<String, [f64; 4]>,
    /// Total per-sense coefficients (word part included); empty when
    /// senses are disabled.
    pub sense_theta: BTreeMap<String, [f64; 4]>,
    /// Per-speaker (curve coefficients, intercept offset).
    pub speaker_effects: BTreeMap<String, ([f64; 4], f64)>,
    /// Keyed `factor=level`.
    pub segment_theta: BTreeMap<String, [f64; 4]>,
    /// Per-word embedding cluster centers (empty when isomorphy is off).
    pub cluster_centers: BTreeMap<String, Vec<f64>>,
    /// Noiseless log-F0 per token at its sample times.
    pub latent: BTreeMap<String, Vec<f64>>,
}

const VOWELS: [VowelHeight; 5] = [
    VowelHeight::High,
    VowelHeight::Mid,
    VowelHeight::Low,
    VowelHeight::LowHigh,
    VowelHeight::MidHigh,
];
const ONSETS: [OnsetType; 7] = [
    OnsetType::AspiratedAffricate,
    OnsetType::AspiratedStop,
    OnsetType::UnaspiratedAffricate,
    OnsetType::UnaspiratedStop,
    OnsetType::VoicelessFricative,
    OnsetType::Voiced,
    OnsetType::Null,
];
const RHYMES: [RhymeStructure; 4] = [
    RhymeStructure::V,
    RhymeStructure::GV,
    RhymeStructure::VN,
    RhymeStructure::GVN,
];

/// Deterministic word → segment coding. Different words share segment
/// levels, so segment models explain part, never all, of the word signal.
fn segment_coding(w: usize) -> (VowelHeight, VowelHeight, OnsetType, OnsetType, RhymeStructure, RhymeStructure) {
    (
        VOWELS[w % 5],
        VOWELS[(w / 5 + 2 * w) % 5],
        ONSETS[w % 7],
        ONSETS[(3 * w + 1) % 7],
        RHYMES[w % 4],
        RHYMES[(w / 4 + w) % 4],
    )
}

fn theta4(rng: &mut ChaCha12Rng, normal: &Normal<f64>) -> [f64; 4] {
    [
        normal.sample(rng),
        normal.sample(rng),
        normal.sample(rng),
        normal.sample(rng),
    ]
}

/// Generates the corpus, embeddings and planted truth. All randomness flows
/// from the config seed; token `i` uses RNG stream `i+1`, so generation is
/// order-independent and bitwise reproducible.
pub fn gen_synthetic(
    config: &SynthConfig,
) -> Result<(TokenTable, EmbeddingTable, GroundTruth), SynthError> {
    config.validate()?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut master = ChaCha12Rng::seed_from_u64(config.seed);
    // stream 0: global parameters
    master.set_stream(0);

    // segment-level curves, keyed "factor=level"
    let mut segment_theta: BTreeMap<String, [f64; 4]> = BTreeMap::new();
    for v in VOWELS {
        segment_theta.insert(format!("vowel1={v}"), theta4(&mut master, &normal));
        segment_theta.insert(format!("vowel2={v}"), theta4(&mut master, &normal));
    }
    for o in ONSETS {
        segment_theta.insert(format!("onset1={o}"), theta4(&mut master, &normal));
        segment_theta.insert(format!("onset2={o}"), theta4(&mut master, &normal));
    }
    for r in RHYMES {
        segment_theta.insert(format!("syllable1={r}"), theta4(&mut master, &normal));
        segment_theta.insert(format!("syllable2={r}"), theta4(&mut master, &normal));
    }

    // per-word total modulation = scaled segment sum + scaled unique part
    let mut word_theta: BTreeMap<String, [f64; 4]> = BTreeMap::new();
    let mut word_unique: Vec<[f64; 4]> = Vec::with_capacity(config.n_words);
    for w in 0..config.n_words {
        let word = format!("word{w:03}");
        let (v1, v2, o1, o2, s1, s2) = segment_coding(w);
        let unique = theta4(&mut master, &normal);
        word_unique.push(unique);
        let mut theta = [0.0; 4];
        for key in [
            format!("vowel1={v1}"),
            format!("vowel2={v2}"),
            format!("onset1={o1}"),
            format!("onset2={o2}"),
            format!("syllable1={s1}"),
            format!("syllable2={s2}"),
        ] {
            let seg = segment_theta[&key];
            for k in 0..4 {
                theta[k] += config.segment_effect_scale * seg[k];
            }
        }
        for k in 0..4 {
            theta[k] += config.word_modulation_scale * unique[k];
        }
        word_theta.insert(word, theta);
    }

    // sense-specific additions on top of the word curve
    let mut sense_theta: BTreeMap<String, [f64; 4]> = BTreeMap::new();
    if config.senses_per_word > 0 {
        for w in 0..config.n_words {
            let word = format!("word{w:03}");
            let base = word_theta[&word];
            for s in 0..config.senses_per_word {
                let extra = theta4(&mut master, &normal);
                let mut theta = base;
                for k in 0..4 {
                    theta[k] += config.sense_modulation_scale * extra[k];
                }
                sense_theta.insert(format!("{word}_sense{s}"), theta);
            }
        }
    }

    // speakers: first half female, second half male
    let mut speaker_effects: BTreeMap<String, ([f64; 4], f64)> = BTreeMap::new();
    for s in 0..config.n_speakers {
        let curve = theta4(&mut master, &normal).map(|v| v * config.speaker_modulation_scale);
        let offset = 0.05 * normal.sample(&mut master);
        speaker_effects.insert(format!("spk{s:02}"), (curve, offset));
    }

    // contour → embedding maps
    let dim = config.embedding_dim;
    let a_map: Vec<[f64; 4]> = (0..dim).map(|_| theta4(&mut master, &normal)).collect();
    let b_map: Vec<[f64; 4]> = (0..dim).map(|_| theta4(&mut master, &normal)).collect();
    let c_freq: [f64; 4] = theta4(&mut master, &normal).map(|v| 3.0 * v);

    let center_of = |theta: &[f64; 4]| -> Vec<f64> {
        // scale-free: the map sees the modulation shape, not its amplitude
        let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let unit: [f64; 4] = theta.map(|v| v / norm);
        (0..dim)
            .map(|j| {
                let linear = dot4(&a_map[j], &unit);
                let warped = dot4(
                    &b_map[j],
                    &[
                        (c_freq[0] * unit[0]).sin(),
                        (c_freq[1] * unit[1]).sin(),
                        (c_freq[2] * unit[2]).sin(),
                        (c_freq[3] * unit[3]).sin(),
                    ],
                );
                linear + config.nonlinear_scale * warped
            })
            .collect()
    };

    let mut cluster_centers: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    if config.isomorphy == Isomorphy::On {
        if config.senses_per_word > 0 {
            for (sense, theta) in &sense_theta {
                cluster_centers.insert(sense.clone(), center_of(theta));
            }
        } else {
            for (word, theta) in &word_theta {
                cluster_centers.insert(word.clone(), center_of(theta));
            }
        }
    }

    // tokens
    let n_tokens = config.n_words * config.tokens_per_word;
    let mut tokens = Vec::with_capacity(n_tokens);
    let mut embeddings = Vec::with_capacity(n_tokens);
    let mut latent: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let tones = Tone::ALL;
    for idx in 0..n_tokens {
        let w = idx / config.tokens_per_word;
        let j = idx % config.tokens_per_word;
        let word = format!("word{w:03}");
        let token_id = format!("{word}_tok{j:03}");
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        rng.set_stream(idx as u64 + 1);

        let spk = rng.random_range(0..config.n_speakers);
        let speaker = format!("spk{spk:02}");
        let gender = if spk < config.n_speakers / 2 {
            Gender::Female
        } else {
            Gender::Male
        };
        let base = match gender {
            Gender::Female => 5.30, // ≈ 200 Hz
            Gender::Male => 4.87,   // ≈ 130 Hz
        };
        let (spk_curve, spk_offset) = speaker_effects[&speaker];

        let duration_s = (0.3f64.ln() + 0.15 * normal.sample(&mut rng)).exp();
        let amp = 1.0 + 0.3 * (duration_s.ln() - 0.3f64.ln());
        let utterance_position = rng.random_range(0.0..1.0);
        let bigram_previous = rng.random_range(0.0..1.0);
        let bigram_following = rng.random_range(0.0..1.0);
        let adjacent_tone = AdjacentTone {
            preceding: tones[rng.random_range(0..6)],
            following: tones[rng.random_range(0..6)],
        };
        let sense = if config.senses_per_word > 0 {
            Some(format!("{word}_sense{}", j % config.senses_per_word))
        } else {
            None
        };
        let theta = match &sense {
            Some(s) => sense_theta[s],
            None => word_theta[&word],
        };

        let n = config.samples_per_token;
        let mut clean = Vec::with_capacity(n);
        let mut samples = Vec::with_capacity(n);
        let mut e = config.noise_sd * normal.sample(&mut rng);
        let innov = (1.0 - config.ar1_rho * config.ar1_rho).sqrt() * config.noise_sd;
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            let b = modulation_basis(t);
            let shape = config.population.eval(t) + dot4(&theta, &b) + dot4(&spk_curve, &b);
            let log_f0 = base + spk_offset + amp * shape;
            clean.push(log_f0);
            if i > 0 {
                e = config.ar1_rho * e + innov * normal.sample(&mut rng);
            }
            samples.push(F0Sample {
                time_s: duration_s * t,
                f0_hz: (log_f0 + e).exp(),
            });
        }
        if config.voiceless_gap_prob > 0.0 && rng.random_range(0.0..1.0) < config.voiceless_gap_prob
        {
            // drop a contiguous middle stretch, keeping at least 6 samples
            let max_gap = n.saturating_sub(6).min(n / 3);
            if max_gap > 0 {
                let gap = rng.random_range(1..=max_gap);
                let start = rng.random_range(1..n - gap);
                samples.drain(start..start + gap);
                clean.drain(start..start + gap);
            }
        }
        latent.insert(token_id.clone(), clean);

        let (vowel1, vowel2, onset1, onset2, syllable1, syllable2) = segment_coding(w);
        tokens.push(TokenRecord {
            token_id: token_id.clone(),
            word: word.clone(),
            sense: sense.clone(),
            speaker,
            gender,
            duration_s,
            utterance_position,
            bigram_previous,
            bigram_following,
            adjacent_tone,
            vowel1,
            vowel2,
            onset1,
            onset2,
            syllable1,
            syllable2,
            samples,
        });

        let values: Vec<f64> = match config.isomorphy {
            Isomorphy::On => {
                let key = sense.as_deref().unwrap_or(&word);
                let center = &cluster_centers[key];
                center
                    .iter()
                    .map(|c| c + config.cluster_sd * normal.sample(&mut rng))
                    .collect()
            }
            Isomorphy::Off => (0..dim).map(|_| normal.sample(&mut rng)).collect(),
        };
        embeddings.push(Embedding { token_id, values });
    }

    let table = TokenTable::new(tokens).expect("generated ids are unique and nested");
    let emb = EmbeddingTable::new(dim, embeddings)?;
    let truth = GroundTruth {
        config: config.clone(),
        word_theta,
        sense_theta,
        speaker_effects,
        segment_theta,
        cluster_centers,
        latent,
    };
    Ok((table, emb, truth))
}

/// Splits each token's embedding into two per-character rows `v ± d`
/// (averaging the pair recovers the token vector).
pub fn embedding_rows_paired(table: &EmbeddingTable, seed: u64) -> Vec<EmbeddingRow> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rows = Vec::with_capacity(2 * table.len());
    for (i, e) in table.embeddings.iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let d: Vec<f64> = (0..table.dim).map(|_| 0.5 * normal.sample(&mut rng)).collect();
        rows.push(EmbeddingRow {
            token_id: e.token_id.clone(),
            char_index: 0,
            values: e.values.iter().zip(&d).map(|(v, d)| v + d).collect(),
        });
        rows.push(EmbeddingRow {
            token_id: e.token_id.clone(),
            char_index: 1,
            values: e.values.iter().zip(&d).map(|(v, d)| v - d).collect(),
        });
    }
    rows
}

/// How well a fitted model recovered the planted structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    /// Correlation between each word's fitted adjustment curve and its
    /// planted modulation.
    pub per_word_correlation: Vec<(String, f64)>,
    pub median_correlation: f64,
    pub rho_error: f64,
    /// RMSE between the mean fitted and mean latent contours (both
    /// centered), on the normalized-time grid.
    pub population_rmse: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Compares a fit on the synthetic table against the planted truth. The
/// model must contain a word factor smooth.
pub fn oracle_report(
    fit: &FittedGam,
    truth: &GroundTruth,
    table: &ObservationTable,
) -> Result<OracleReport, SynthError> {
    let term = "fs(time,word)";
    if !fit.spec.terms.iter().any(|t| t.label() == term) {
        return Err(SynthError::MissingTerm(term.to_string()));
    }

    // one representative token per word gives the covariate context
    let words = suite_words(table)?;
    let mut rep: BTreeMap<&String, usize> = BTreeMap::new();
    for (t, w) in words.iter().enumerate() {
        rep.entry(w).or_insert(t);
    }

    let grid_n = 50;
    let mut per_word_correlation = Vec::with_capacity(rep.len());
    for (word, &tok) in &rep {
        let Some(theta) = truth.word_theta.get(*word) else {
            continue;
        };
        let frame = grid_frame_for_token(table, tok, grid_n)?;
        let pred = fit.predict(
            &frame,
            &PredictOptions {
                by_term: true,
                ..PredictOptions::default()
            },
        )?;
        let contributions = pred.term_contributions.expect("requested by_term");
        let fitted_curve = contributions
            .iter()
            .find(|(label, _)| label == term)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| SynthError::MissingTerm(term.to_string()))?;
        let planted: Vec<f64> = (0..grid_n)
            .map(|i| {
                let t = i as f64 / (grid_n - 1) as f64;
                dot4(theta, &modulation_basis(t))
            })
            .collect();
        let r = crate::dlm::pearson(&fitted_curve, &planted);
        per_word_correlation.push(((*word).clone(), r));
    }
    let mut corrs: Vec<f64> = per_word_correlation.iter().map(|(_, r)| *r).collect();
    let median_correlation = median(&mut corrs);

    let rho_error = (fit.rho - truth.config.ar1_rho).abs();

    // mean fitted vs mean latent contour, aligned on the nearest grid index
    let time = table.frame.numeric("time")?;
    let pred_all = fit.predict(&table.frame, &PredictOptions::default())?;
    let bins = grid_n;
    let mut fit_sum = vec![0.0; bins];
    let mut lat_sum = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    let mut row = 0usize;
    for (t, id) in table.token_ids.iter().enumerate() {
        let rows = table.token_rows(t);
        let clean = &truth.latent[id];
        for (k, r) in rows.enumerate() {
            let b = ((time[r] * (bins - 1) as f64).round() as usize).min(bins - 1);
            fit_sum[b] += pred_all.fitted[r];
            lat_sum[b] += clean[k];
            count[b] += 1;
            row += 1;
        }
    }
    debug_assert_eq!(row, table.n_rows());
    let mut diffs = Vec::with_capacity(bins);
    for b in 0..bins {
        if count[b] > 0 {
            diffs.push((fit_sum[b] - lat_sum[b]) / count[b] as f64);
        }
    }
    let mean_diff = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let population_rmse = (diffs
        .iter()
        .map(|d| (d - mean_diff).powi(2))
        .sum::<f64>()
        / diffs.len() as f64)
        .sqrt();

    Ok(OracleReport {
        per_word_correlation,
        median_correlation,
        rho_error,
        population_rmse,
    })
}

fn suite_words(table: &ObservationTable) -> Result<Vec<String>, SynthError> {
    let col = table.frame.factor("word")?;
    Ok((0..table.n_tokens())
        .map(|t| col.level_of(table.token_starts[t]).to_string())
        .collect())
}

/// Prediction frame on a normalized-time grid, all other covariates copied
/// from one observed row of the given token.
fn grid_frame_for_token(
    table: &ObservationTable,
    token: usize,
    n: usize,
) -> Result<crate::frame::Frame, SynthError> {
    use crate::frame::{FactorColumn, Frame};
    let r0 = table.token_starts[token];
    let mut f = Frame::new(n);
    let grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    f.add_numeric("time", grid)?;
    for name in table.frame.numeric_names().collect::<Vec<_>>() {
        if name == "time" || name == "log_f0" {
            continue;
        }
        f.add_numeric(name, vec![table.frame.numeric(name)?[r0]; n])?;
    }
    for name in table.frame.factor_names().collect::<Vec<_>>() {
        let col = table.frame.factor(name)?;
        f.add_factor(
            name,
            FactorColumn::from_values(&vec![col.level_of(r0).to_string(); n]),
        )?;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SynthConfig {
        SynthConfig {
            n_words: 4,
            tokens_per_word: 8,
            n_speakers: 4,
            samples_per_token: 12,
            embedding_dim: 8,
            seed: 42,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_bitwise_reproducible() {
        let cfg = small_config();
        let (t1, e1, g1) = gen_synthetic(&cfg).unwrap();
        let (t2, e2, g2) = gen_synthetic(&cfg).unwrap();
        assert_eq!(t1.tokens.len(), t2.tokens.len());
        for (a, b) in t1.tokens.iter().zip(&t2.tokens) {
            assert_eq!(a.token_id, b.token_id);
            assert_eq!(a.duration_s.to_bits(), b.duration_s.to_bits());
            for (s, t) in a.samples.iter().zip(&b.samples) {
                assert_eq!(s.f0_hz.to_bits(), t.f0_hz.to_bits());
            }
        }
        for (a, b) in e1.embeddings.iter().zip(&e2.embeddings) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(
            g1.word_theta["word000"].map(f64::to_bits),
            g2.word_theta["word000"].map(f64::to_bits)
        );
    }

    #[test]
    fn population_contour_is_fall_rise_fall() {
        let pop = PopulationContour::default();
        let v0 = pop.eval(0.0);
        let early = pop.eval(0.12);
        let mid = pop.eval(0.45);
        let end = pop.eval(1.0);
        assert!(early < v0, "no initial fall");
        assert!(mid > early, "no rise");
        assert!(end < mid, "no final fall");
        assert!(v0 - early < mid - end, "final fall should dominate");
    }

    #[test]
    fn shapes_and_counts() {
        let cfg = small_config();
        let (table, emb, truth) = gen_synthetic(&cfg).unwrap();
        assert_eq!(table.tokens.len(), 32);
        assert_eq!(emb.len(), 32);
        assert_eq!(emb.dim, 8);
        assert_eq!(truth.word_theta.len(), 4);
        assert_eq!(truth.cluster_centers.len(), 4);
        assert_eq!(truth.speaker_effects.len(), 4);
        for t in &table.tokens {
            assert_eq!(t.samples.len(), 12);
            assert!(t.samples.iter().all(|s| s.f0_hz > 0.0));
            assert!(truth.latent.contains_key(&t.token_id));
        }
        // both genders present
        assert!(table.tokens.iter().any(|t| t.gender == Gender::Female));
        assert!(table.tokens.iter().any(|t| t.gender == Gender::Male));
    }

    #[test]
    fn isomorphy_off_has_no_cluster_centers() {
        let cfg = SynthConfig {
            isomorphy: Isomorphy::Off,
            ..small_config()
        };
        let (_, emb, truth) = gen_synthetic(&cfg).unwrap();
        assert!(truth.cluster_centers.is_empty());
        assert_eq!(emb.len(), 32);
    }

    #[test]
    fn senses_are_nested_and_clustered_per_sense() {
        let cfg = SynthConfig {
            senses_per_word: 2,
            sense_modulation_scale: 0.05,
            ..small_config()
        };
        let (table, _, truth) = gen_synthetic(&cfg).unwrap();
        assert_eq!(truth.sense_theta.len(), 8);
        assert_eq!(truth.cluster_centers.len(), 8);
        for t in &table.tokens {
            let s = t.sense.as_ref().unwrap();
            assert!(s.starts_with(&t.word));
        }
    }

    #[test]
    fn voiceless_gaps_shorten_tokens() {
        let cfg = SynthConfig {
            voiceless_gap_prob: 1.0,
            ..small_config()
        };
        let (table, _, _) = gen_synthetic(&cfg).unwrap();
        assert!(table.tokens.iter().any(|t| t.samples.len() < 12));
        for t in &table.tokens {
            assert!(t.samples.len() >= 6);
            for pair in t.samples.windows(2) {
                assert!(pair[0].time_s < pair[1].time_s);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config();
        cfg.tokens_per_word = 2;
        assert!(gen_synthetic(&cfg).is_err());
        let mut cfg = small_config();
        cfg.ar1_rho = 1.0;
        assert!(gen_synthetic(&cfg).is_err());
        let mut cfg = small_config();
        cfg.noise_sd = -0.1;
        assert!(gen_synthetic(&cfg).is_err());
    }

    #[test]
    fn paired_rows_average_back_to_token_vectors() {
        let cfg = small_config();
        let (_, emb, _) = gen_synthetic(&cfg).unwrap();
        let rows = embedding_rows_paired(&emb, 7);
        assert_eq!(rows.len(), 64);
        for (i, e) in emb.embeddings.iter().enumerate() {
            let (a, b) = (&rows[2 * i], &rows[2 * i + 1]);
            assert_eq!(a.token_id, e.token_id);
            assert_ne!(a.values, b.values);
            for ((x, y), v) in a.values.iter().zip(&b.values).zip(&e.values) {
                assert!((0.5 * (x + y) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn latent_contour_matches_formula() {
        let cfg = SynthConfig {
            noise_sd: 0.0,
            ..small_config()
        };
        let (table, _, truth) = gen_synthetic(&cfg).unwrap();
        // with no noise, observed log F0 equals the latent contour
        for t in &table.tokens {
            let clean = &truth.latent[&t.token_id];
            for (s, c) in t.samples.iter().zip(clean) {
                assert!((s.f0_hz.ln() - c).abs() < 1e-12);
            }
        }
    }
}
