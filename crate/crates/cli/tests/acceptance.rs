//! Acceptance suite: one test per release criterion, each printing a single
//! `criterion NN [PASS|FAIL]` line before asserting. Run with
//! `cargo test --test acceptance -- --nocapture` to see the scoreboard.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use tonelab_core::corpus::build_observation_table;
use tonelab_core::dlm::{
    centroid_production_analysis, chance_baseline, make_splits, run_experiment, summarize,
    train_ldl, Direction, DlmHyper, ExperimentData, Mapping, Metric, SplitPlan,
};
use tonelab_core::gam::{estimate_rho, fit_gam, whiten, Ar1};
use tonelab_core::mlp::MlpConfig;
use tonelab_core::suite::{
    build_spec, compare_models, crossval_sse, median_reductions, sense_floor, CrossvalOptions,
};
use tonelab_core::synth::{gen_synthetic, Isomorphy};
use tonelab_core::vectorize::{center_scale, pitch_vector, token_grid_frame, Embedding};
use tonelab_core::{
    evidence_ratio, EmbeddingTable, FitOptions, Frame, ModelLabel, ModelSpec, ObservationTable,
    PitchVector, PredictOptions, SynthConfig, Term, TokenTable,
};

fn report(n: usize, desc: &str, pass: bool, detail: &str) {
    println!(
        "criterion {n:2} [{}] {desc} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {desc} ({detail})");
}

fn ar1_auto() -> FitOptions {
    FitOptions {
        ar1: Ar1::Auto,
        ..FitOptions::default()
    }
}

// ---------------------------------------------------------------------------
// 1. spline recovery

#[test]
fn criterion_01_spline_recovers_noisy_sine() {
    let start = Instant::now();
    let n = 500;
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let t: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let truth: Vec<f64> = t.iter().map(|&x| (TAU * x).sin()).collect();
    let y: Vec<f64> = truth.iter().map(|&v| v + noise.sample(&mut rng)).collect();

    let mut frame = Frame::new(n);
    frame.add_numeric("time", t).unwrap();
    frame.add_numeric("y", y).unwrap();
    let table = ObservationTable {
        frame,
        token_ids: vec!["tok0".into()],
        token_starts: vec![0, n],
    };
    let spec = ModelSpec {
        response: "y".into(),
        label: "sine".into(),
        terms: vec![Term::Smooth {
            covariate: "time".into(),
            k: 20,
        }],
    };
    let fit = fit_gam(&spec, &table, &FitOptions::default()).unwrap();
    let pred = fit.predict(&table.frame, &PredictOptions::default()).unwrap();
    let rmse = (pred
        .fitted
        .iter()
        .zip(&truth)
        .map(|(f, t)| (f - t).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let elapsed = start.elapsed();
    report(
        1,
        "spline fit recovers sin(2πt) from noisy samples in under 10 s",
        rmse < 0.05 && elapsed < Duration::from_secs(10),
        &format!("rmse {rmse:.4}, {elapsed:.2?}"),
    );
}

// ---------------------------------------------------------------------------
// 2. AR(1) estimate and whitening

#[test]
fn criterion_02_ar1_estimate_and_whitening() {
    let rho = 0.6;
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut res = Vec::new();
    let mut starts = vec![0usize];
    for _ in 0..120 {
        let mut e: f64 = normal.sample(&mut rng);
        res.push(e);
        for _ in 1..40 {
            e = rho * e + (1.0 - rho * rho).sqrt() * normal.sample(&mut rng);
            res.push(e);
        }
        starts.push(res.len());
    }
    let est = estimate_rho(&res, &starts).unwrap();
    let x = Mat::<f64>::from_fn(res.len(), 1, |_, _| 1.0);
    let (_, wy) = whiten(&x, &res, &starts, est).unwrap();
    let after = estimate_rho(&wy, &starts).unwrap();
    report(
        2,
        "lag-1 autocorrelation estimate within ±0.05 and whitening removes it",
        (est - rho).abs() <= 0.05 && after.abs() < 0.05,
        &format!("estimate {est:.4}, post-whitening acf {after:.4}"),
    );
}

// ---------------------------------------------------------------------------
// 3. evidence ratio

#[test]
fn criterion_03_evidence_ratio_at_delta_10() {
    let er = evidence_ratio(10.0);
    report(
        3,
        "evidence ratio at ΔAIC = 10 equals 148.4 ± 0.1",
        (er - 148.4).abs() <= 0.1,
        &format!("got {er:.4}"),
    );
}

// ---------------------------------------------------------------------------
// 4. cross-validated SSE reduction ordering

#[test]
fn criterion_04_cv_sse_reduction_ordering() {
    let start = Instant::now();
    let (table, _, _) = gen_synthetic(&SynthConfig::default()).unwrap();
    let obs = build_observation_table(&table).unwrap();
    let labels = [
        ModelLabel::Word,
        ModelLabel::OmnibusSegment,
        ModelLabel::Vowel1,
        ModelLabel::Vowel2,
        ModelLabel::Onset1,
        ModelLabel::Onset2,
        ModelLabel::Syllable1,
        ModelLabel::Syllable2,
        ModelLabel::RandomWord,
    ];
    // held-out SSE compares mean predictions, which the AR(1) refit leaves
    // unchanged; a single REML cycle suffices because smoothing parameters
    // warm-start from the previous split's optimum
    let opts = CrossvalOptions {
        n_splits: 20,
        holdout: 0.1,
        seed: 4,
        fit: FitOptions {
            max_cycles: 1,
            tol: 1e-3,
            ..FitOptions::default()
        },
    };
    let med = median_reductions(&crossval_sse(&labels, &obs, &opts).unwrap());
    let word = med["word"];
    let omni = med["omnibus-segment"];
    let segments: Vec<f64> = ["+vowel1", "+vowel2", "+onset1", "+onset2", "+syllable1", "+syllable2"]
        .iter()
        .map(|l| med[*l])
        .collect();
    let random = med["random-word"];
    let elapsed = start.elapsed();
    let ordered = word > omni
        && segments.iter().all(|&s| omni > s && s > 0.0)
        && random <= 0.0;
    report(
        4,
        "median held-out SSE reduction: word > omnibus > each segment > 0 ≥ random-word",
        ordered && elapsed < Duration::from_secs(30 * 60),
        &format!(
            "word {word:.3}, omnibus {omni:.3}, segments {segments:.3?}, random {random:.3}, {elapsed:.0?}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. sense refinement

#[test]
fn criterion_05_sense_model_beats_word_model() {
    let mut wins = 0;
    let mut deltas = Vec::new();
    for seed in 0..10u64 {
        let cfg = SynthConfig {
            n_words: 6,
            tokens_per_word: 32,
            n_speakers: 4,
            samples_per_token: 20,
            senses_per_word: 2,
            sense_modulation_scale: 0.05,
            seed,
            ..SynthConfig::default()
        };
        let (table, _, _) = gen_synthetic(&cfg).unwrap();
        let table = sense_floor(&table, 14).unwrap();
        let obs = build_observation_table(&table).unwrap();
        let opts = FitOptions {
            max_cycles: 2,
            tol: 1e-3,
            ..ar1_auto()
        };
        let rep = compare_models(&[ModelLabel::Word, ModelLabel::Sense], &obs, &opts, seed)
            .unwrap();
        let get = |label: &str| {
            rep.models
                .iter()
                .find(|m| m.label == label)
                .map(|m| m.delta_aic)
                .unwrap()
        };
        let (w, s) = (get("word"), get("sense"));
        if s < w {
            wins += 1;
        }
        deltas.push(s - w);
    }
    report(
        5,
        "ΔAIC(sense) < ΔAIC(word) in at least 8 of 10 seeded replicates",
        wins >= 8,
        &format!("{wins}/10 wins, sense−word gaps {deltas:.1?}"),
    );
}

// ---------------------------------------------------------------------------
// 6. concurvity bounds

#[test]
fn criterion_06_concurvity_bounds() {
    let two_smooth_fit = |x1: Vec<f64>, x2: Vec<f64>, y: Vec<f64>| {
        let n = x1.len();
        let mut frame = Frame::new(n);
        frame.add_numeric("time", x1).unwrap();
        frame.add_numeric("other", x2).unwrap();
        frame.add_numeric("y", y).unwrap();
        let table = ObservationTable {
            frame,
            token_ids: (0..n / 10).map(|i| format!("t{i}")).collect(),
            token_starts: (0..=n / 10).map(|i| i * 10).collect(),
        };
        let spec = ModelSpec {
            response: "y".into(),
            label: "pair".into(),
            terms: vec![
                Term::Smooth {
                    covariate: "time".into(),
                    k: 8,
                },
                Term::Smooth {
                    covariate: "other".into(),
                    k: 8,
                },
            ],
        };
        let fit = fit_gam(&spec, &table, &FitOptions::default()).unwrap();
        let c1 = fit.concurvity(&table.frame, "s(time)").unwrap();
        let c2 = fit.concurvity(&table.frame, "s(other)").unwrap();
        (c1, c2)
    };

    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let normal = Normal::new(0.0, 0.1).unwrap();
    let n = 400;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|&v| (4.0 * v).sin() + normal.sample(&mut rng))
        .collect();
    let (dup1, dup2) = two_smooth_fit(x.clone(), x, y);

    let n = 2000;
    let x1: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let x2: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let y: Vec<f64> = x1
        .iter()
        .zip(&x2)
        .map(|(&a, &b)| (4.0 * a).sin() + (3.0 * b).cos() + normal.sample(&mut rng))
        .collect();
    let (ind1, ind2) = two_smooth_fit(x1, x2, y);

    let all = [dup1, dup2, ind1, ind2];
    report(
        6,
        "concurvity ≥ 0.99 for duplicated covariates, < 0.1 for independent, all in [0,1]",
        dup1 >= 0.99
            && dup2 >= 0.99
            && ind1 < 0.1
            && ind2 < 0.1
            && all.iter().all(|c| (0.0..=1.0).contains(c)),
        &format!("duplicated ({dup1:.3}, {dup2:.3}), independent ({ind1:.3}, {ind2:.3})"),
    );
}

// ---------------------------------------------------------------------------
// 7. linear mapping exactness

/// Plain Gaussian elimination with partial pivoting, independent of the
/// library's Cholesky path.
fn solve_dense(a: &mut Vec<Vec<f64>>, b: &mut Vec<Vec<f64>>) {
    let p = a.len();
    let q = b[0].len();
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..p {
            let f = a[row][col] / a[col][col];
            for k in col..p {
                a[row][k] -= f * a[col][k];
            }
            for k in 0..q {
                b[row][k] -= f * b[col][k];
            }
        }
    }
    for col in (0..p).rev() {
        for k in 0..q {
            let mut s = b[col][k];
            for j in col + 1..p {
                s -= a[col][j] * b[j][k];
            }
            b[col][k] = s / a[col][col];
        }
    }
}

#[test]
fn criterion_07_ldl_exactness_and_ridge_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let (n, d, q) = (60, 6, 4);
    let x = Mat::<f64>::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let b = Mat::<f64>::from_fn(d, q, |_, _| rng.random_range(-1.0..1.0));
    let c: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = Mat::<f64>::from_fn(n, q, |i, j| {
        c[j] + (0..d).map(|k| x[(i, k)] * b[(k, j)]).sum::<f64>()
    });

    // exact affine truth → zero-ridge solution reproduces it
    let map = train_ldl(&x, &y, 0.0).unwrap();
    let pred = map.predict(&x);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        for j in 0..q {
            num += (pred[(i, j)] - y[(i, j)]).powi(2);
            den += y[(i, j)].powi(2);
        }
    }
    let rel = (num / den).sqrt();

    // ridge solution vs an independent dense normal-equations solve
    let ridge = 0.37;
    let map_r = train_ldl(&x, &y, ridge).unwrap();
    let p = d + 1;
    // augmented design [1 | X], bias column unpenalized
    let mut gram = vec![vec![0.0; p]; p];
    let mut rhs = vec![vec![0.0; q]; p];
    let aug = |r: usize, j: usize| if j == 0 { 1.0 } else { x[(r, j - 1)] };
    for i in 0..p {
        for j in 0..p {
            gram[i][j] = (0..n).map(|r| aug(r, i) * aug(r, j)).sum();
        }
        if i > 0 {
            gram[i][i] += ridge;
        }
        for k in 0..q {
            rhs[i][k] = (0..n).map(|r| aug(r, i) * y[(r, k)]).sum();
        }
    }
    solve_dense(&mut gram, &mut rhs);
    let x2 = Mat::<f64>::from_fn(20, d, |_, _| rng.random_range(-1.0..1.0));
    let pred_r = map_r.predict(&x2);
    let mut max_diff = 0.0f64;
    for i in 0..20 {
        for k in 0..q {
            let oracle: f64 =
                rhs[0][k] + (0..d).map(|j| x2[(i, j)] * rhs[j + 1][k]).sum::<f64>();
            max_diff = max_diff.max((pred_r[(i, k)] - oracle).abs() / oracle.abs().max(1.0));
        }
    }

    report(
        7,
        "zero-ridge map is exact on affine truth; ridge matches dense oracle within 1e-8",
        rel < 1e-8 && max_diff < 1e-8,
        &format!("relative error {rel:.2e}, oracle gap {max_diff:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// 8. chance calibration under permuted labels

/// 51 word types with a capped power-law token distribution; the squared
/// proportions sum to ≈ 0.038.
fn skewed_counts() -> Vec<usize> {
    (0..51)
        .map(|i| {
            let raw = 85.0 * ((i + 1) as f64).powf(-0.7);
            (raw.round() as usize).clamp(3, 80)
        })
        .collect()
}

#[test]
fn criterion_08_permuted_labels_hit_chance() {
    let counts = skewed_counts();
    let dim = 16;
    let mut accs = Vec::new();
    let mut chance = 0.0;
    for rep in 0..30u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(800 + rep);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut vectors = Vec::new();
        let mut embeddings = Vec::new();
        let mut labels: Vec<String> = Vec::new();
        let mut ids: Vec<String> = Vec::new();
        for (w, &c) in counts.iter().enumerate() {
            let center: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            let theta: Vec<f64> = (0..4).map(|_| normal.sample(&mut rng)).collect();
            for t in 0..c {
                let id = format!("w{w:02}_t{t:02}");
                let contour: Vec<f64> = (0..50)
                    .map(|k| {
                        let time = k as f64 / 49.0;
                        theta[0] * (TAU * time).sin()
                            + theta[1] * (TAU * time).cos()
                            + theta[2] * (2.0 * TAU * time).sin()
                            + theta[3] * (2.0 * TAU * time).cos()
                            + 0.05 * normal.sample(&mut rng)
                    })
                    .collect();
                vectors.push(PitchVector {
                    token_id: id.clone(),
                    source_model: "planted".into(),
                    values: center_scale(&contour).unwrap(),
                });
                embeddings.push(Embedding {
                    token_id: id.clone(),
                    values: center.iter().map(|v| v + 0.05 * normal.sample(&mut rng)).collect(),
                });
                labels.push(format!("w{w:02}"));
                ids.push(id);
            }
        }
        // permuting the labels severs any form→label relation
        for i in (1..labels.len()).rev() {
            labels.swap(i, rng.random_range(0..=i));
        }
        chance = chance_baseline(&labels).unwrap();
        let word_of: BTreeMap<String, String> =
            ids.iter().cloned().zip(labels.iter().cloned()).collect();
        let mut by_word: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (id, w) in ids.iter().zip(&labels) {
            by_word.entry(w.clone()).or_default().push(id.clone());
        }
        let splits = make_splits(&by_word, (0.8, 0.1, 0.1), 1, rep).unwrap();
        let emb = EmbeddingTable::new(dim, embeddings).unwrap();
        let data = ExperimentData::new(&vectors, &emb, &word_of);
        let hyper = DlmHyper {
            ridge_grid: vec![1e-4, 1e-2],
            metric: Metric::Cosine,
            net: MlpConfig::default(),
        };
        let results =
            run_experiment(Direction::Comprehension, Mapping::Ldl, &data, &splits, &hyper)
                .unwrap();
        accs.push(results[0].test_acc);
    }
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let sd = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    report(
        8,
        "permuted-label accuracy within 3 SE of Σp², which lands in [0.035, 0.04]",
        (mean - chance).abs() <= 3.0 * se && (0.035..=0.04).contains(&chance),
        &format!("mean acc {mean:.4}, chance {chance:.4}, SE {se:.4}"),
    );
}

// ---------------------------------------------------------------------------
// shared fixture for 9–12: one word-model fit on the default synthetic corpus

struct Fixture {
    table: TokenTable,
    emb_on: EmbeddingTable,
    emb_off: EmbeddingTable,
    vectors: Vec<PitchVector>,
    word_of: BTreeMap<String, String>,
    splits: Vec<SplitPlan>,
    build_time: Duration,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let start = Instant::now();
        let cfg = SynthConfig::default();
        let (table, emb_on, _) = gen_synthetic(&cfg).unwrap();
        let off = SynthConfig {
            isomorphy: Isomorphy::Off,
            ..cfg
        };
        let (table_off, emb_off, _) = gen_synthetic(&off).unwrap();
        // the contours must be identical so one fit serves both embedding sets
        assert_eq!(
            serde_json::to_string(&table).unwrap(),
            serde_json::to_string(&table_off).unwrap(),
            "isomorphy flag changed the token data"
        );
        let obs = build_observation_table(&table).unwrap();
        let fit = fit_gam(&build_spec(ModelLabel::Word), &obs, &ar1_auto()).unwrap();
        let vectors: Vec<PitchVector> = table
            .tokens
            .iter()
            .map(|t| pitch_vector(&fit, t, 50, "word").unwrap())
            .collect();
        let word_of: BTreeMap<String, String> = table
            .tokens
            .iter()
            .map(|t| (t.token_id.clone(), t.word.clone()))
            .collect();
        let mut by_word: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for t in &table.tokens {
            by_word.entry(t.word.clone()).or_default().push(t.token_id.clone());
        }
        let splits = make_splits(&by_word, (0.8, 0.1, 0.1), 8, 9).unwrap();
        Fixture {
            table,
            emb_on,
            emb_off,
            vectors,
            word_of,
            splits,
            build_time: start.elapsed(),
        }
    })
}

fn ldl_hyper() -> DlmHyper {
    DlmHyper {
        // the grid reaches far enough that validation can shrink a
        // signal-free map all the way down to the column-mean predictor
        ridge_grid: vec![0.0, 1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4, 1e6],
        metric: Metric::Cosine,
        net: MlpConfig::default(),
    }
}

// ---------------------------------------------------------------------------
// 9. isomorphy end-to-end

#[test]
fn criterion_09_isomorphy_end_to_end() {
    let f = fixture();
    let start = Instant::now();
    let on = ExperimentData::new(&f.vectors, &f.emb_on, &f.word_of);
    let off = ExperimentData::new(&f.vectors, &f.emb_off, &f.word_of);
    let hyper = ldl_hyper();
    let mut detail = String::new();
    let mut pass = true;
    for dir in [Direction::Comprehension, Direction::Production] {
        let s_on =
            summarize(&run_experiment(dir, Mapping::Ldl, &on, &f.splits, &hyper).unwrap()).unwrap();
        let s_off =
            summarize(&run_experiment(dir, Mapping::Ldl, &off, &f.splits, &hyper).unwrap())
                .unwrap();
        pass &= s_on.mean_test_acc >= 10.0 * s_on.mean_chance;
        // two_se_test is 2·SE, so 3 SE = 1.5 × that
        pass &= (s_off.mean_test_acc - s_off.mean_chance).abs() <= 1.5 * s_off.two_se_test;
        detail.push_str(&format!(
            "{dir:?}: on {:.3} (chance {:.3}), off {:.3}±{:.3}; ",
            s_on.mean_test_acc, s_on.mean_chance, s_off.mean_test_acc, s_off.two_se_test
        ));
    }
    let elapsed = f.build_time + start.elapsed();
    detail.push_str(&format!("{elapsed:.0?} incl. fit"));
    report(
        9,
        "isomorphic embeddings score ≥10× chance both ways; shuffled embeddings sit at chance",
        pass && elapsed < Duration::from_secs(20 * 60),
        &detail,
    );
}

// ---------------------------------------------------------------------------
// 10. residual network vs pure linear map

#[test]
fn criterion_10_residual_network_gap() {
    // the nonlinear gap needs more word types than pitch dimensions, else a
    // rank-51 linear map can interpolate any function of word identity
    let cfg = SynthConfig {
        n_words: 64,
        tokens_per_word: 18,
        n_speakers: 8,
        samples_per_token: 24,
        embedding_dim: 32,
        cluster_sd: 0.01,
        nonlinear_scale: 3.0,
        seed: 10,
        ..SynthConfig::default()
    };
    let (table, emb, _) = gen_synthetic(&cfg).unwrap();
    let obs = build_observation_table(&table).unwrap();
    let fit = fit_gam(&build_spec(ModelLabel::Word), &obs, &ar1_auto()).unwrap();
    let vectors: Vec<PitchVector> = table
        .tokens
        .iter()
        .map(|t| pitch_vector(&fit, t, 50, "word").unwrap())
        .collect();
    let word_of: BTreeMap<String, String> = table
        .tokens
        .iter()
        .map(|t| (t.token_id.clone(), t.word.clone()))
        .collect();
    let mut by_word: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for t in &table.tokens {
        by_word.entry(t.word.clone()).or_default().push(t.token_id.clone());
    }
    let splits = make_splits(&by_word, (0.8, 0.1, 0.1), 6, 10).unwrap();
    let data = ExperimentData::new(&vectors, &emb, &word_of);
    let hyper = DlmHyper {
        ridge_grid: vec![1e-6, 1e-4, 1e-2],
        metric: Metric::Cosine,
        net: MlpConfig {
            hidden: vec![128],
            max_epochs: 400,
            ..MlpConfig::default()
        },
    };
    let ldl = summarize(
        &run_experiment(Direction::Comprehension, Mapping::Ldl, &data, &splits, &hyper).unwrap(),
    )
    .unwrap();
    let res = summarize(
        &run_experiment(Direction::Comprehension, Mapping::ResLdl, &data, &splits, &hyper)
            .unwrap(),
    )
    .unwrap();
    let gap = res.mean_test_acc - ldl.mean_test_acc;

    // on the linear default corpus, production stays a linear problem and the
    // residual network must not change the outcome
    let f = fixture();
    let lin = ExperimentData::new(&f.vectors, &f.emb_on, &f.word_of);
    let lin_splits = &f.splits[..4];
    let lin_hyper = DlmHyper {
        net: MlpConfig {
            hidden: vec![64],
            ..MlpConfig::default()
        },
        ..ldl_hyper()
    };
    let pl = summarize(
        &run_experiment(Direction::Production, Mapping::Ldl, &lin, lin_splits, &lin_hyper)
            .unwrap(),
    )
    .unwrap();
    let pr = summarize(
        &run_experiment(Direction::Production, Mapping::ResLdl, &lin, lin_splits, &lin_hyper)
            .unwrap(),
    )
    .unwrap();
    let lin_diff = (pr.mean_test_acc - pl.mean_test_acc).abs();

    report(
        10,
        "residual net gains ≥10 points on nonlinear comprehension, ≤5-point shift on linear production",
        gap >= 0.10 && lin_diff <= 0.05,
        &format!(
            "comprehension LDL {:.3} vs ResLDL {:.3} (gap {gap:.3}); linear production diff {lin_diff:.3}",
            ldl.mean_test_acc, res.mean_test_acc
        ),
    );
}

// ---------------------------------------------------------------------------
// 11. centroid production

#[test]
fn criterion_11_centroid_production_correlations() {
    let f = fixture();
    let data = ExperimentData::new(&f.vectors, &f.emb_on, &f.word_of);
    let mut ids: Vec<String> = data.word.keys().cloned().collect();
    ids.sort();
    let (x, y, _) = data.stack(&ids, Direction::Production).unwrap();
    let map = train_ldl(&x, &y, 1e-4).unwrap();
    let results = centroid_production_analysis(&map, &data).unwrap();
    let mut corrs: Vec<f64> = results
        .iter()
        .filter(|r| r.word != "ALL")
        .map(|r| r.correlation)
        .collect();
    corrs.sort_by(f64::total_cmp);
    let median = corrs[corrs.len() / 2];
    report(
        11,
        "median per-word correlation between centroid-predicted and averaged contours > 0.9",
        median > 0.9,
        &format!("median {median:.4} over {} words", corrs.len()),
    );
}

// ---------------------------------------------------------------------------
// 12. pitch vector scaling invariants

#[test]
fn criterion_12_pitch_vector_invariants() {
    let f = fixture();
    let mut worst_mean = 0.0f64;
    let mut worst_range = 0.0f64;
    let mut all_len_50 = true;
    for v in &f.vectors {
        all_len_50 &= v.values.len() == 50;
        let mean = v.values.iter().sum::<f64>() / v.values.len() as f64;
        let range = v.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - v.values.iter().cloned().fold(f64::INFINITY, f64::min);
        worst_mean = worst_mean.max(mean.abs());
        worst_range = worst_range.max((range - 1.0).abs());
    }
    let grid = token_grid_frame(&f.table.tokens[0], 50).unwrap();
    let time = grid.numeric("time").unwrap();
    let endpoints = time[0] == 0.0 && time[49] == 1.0;
    report(
        12,
        "every pitch vector: 50 points, mean 0 ± 1e-12, range 1 ± 1e-12, grid endpoints {0,1}",
        all_len_50 && worst_mean <= 1e-12 && worst_range <= 1e-12 && endpoints,
        &format!(
            "{} vectors, worst |mean| {worst_mean:.2e}, worst |range−1| {worst_range:.2e}",
            f.vectors.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 13. determinism across reruns

#[test]
fn criterion_13_reruns_are_byte_identical() {
    let bin = env!("CARGO_BIN_EXE_tonelab");
    let root = tempfile::tempdir().unwrap();
    let p = |path: &Path| path.display().to_string();
    let cfg = root.path().join("synth.json");
    fs::write(
        &cfg,
        r#"{"n_words": 4, "tokens_per_word": 26, "n_speakers": 3,
            "samples_per_token": 12, "embedding_dim": 8, "seed": 13}"#,
    )
    .unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().expect("spawn tonelab");
        assert!(
            out.status.success(),
            "tonelab {args:?} failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let same = |a: &Path, b: &Path, f: &str| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap();

    let (s1, s2) = (root.path().join("s1"), root.path().join("s2"));
    run(&["synth", "--config", &p(&cfg), "--out", &p(&s1)]);
    run(&["synth", "--config", &p(&cfg), "--out", &p(&s2)]);
    let mut pass = ["tokens_meta.csv", "samples.csv", "embeddings.csv"]
        .iter()
        .all(|f| same(&s1, &s2, f));

    let meta = p(&s1.join("tokens_meta.csv"));
    let samples = p(&s1.join("samples.csv"));
    let (i1, i2) = (root.path().join("i1"), root.path().join("i2"));
    run(&["ingest", "--meta", &meta, "--samples", &samples, "--out", &p(&i1)]);
    run(&["ingest", "--meta", &meta, "--samples", &samples, "--out", &p(&i2)]);
    pass &= ["tokens_meta.csv", "samples.csv"].iter().all(|f| same(&i1, &i2, f));

    let fit = root.path().join("fit");
    run(&["fit", "--meta", &meta, "--samples", &samples, "--model", "word", "--out", &p(&fit)]);
    let model = p(&fit.join("model"));
    let (v1, v2) = (root.path().join("v1"), root.path().join("v2"));
    run(&["vectorize", "--meta", &meta, "--samples", &samples, "--model", &model, "--out", &p(&v1)]);
    run(&["vectorize", "--meta", &meta, "--samples", &samples, "--model", &model, "--out", &p(&v2)]);
    pass &= same(&v1, &v2, "pitch_vectors.csv");

    report(
        13,
        "synth, ingest, and vectorize reruns with equal inputs write identical CSV bytes",
        pass,
        "compared synth ×3 files, ingest ×2, vectorize ×1",
    );
}
