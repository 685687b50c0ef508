//! One function per subcommand. Each loads its inputs, records them in a
//! manifest, runs the corresponding library stage, and writes outputs
//! atomically into the resolved output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use tonelab_core::corpus::{
    build_observation_table, filter_tokens, interpolate_pulse_f0, load_pulses, load_tokens,
    write_tokens_csv, FilterPolicy, TokenFileFormat, TokenTable,
};
use tonelab_core::dlm::{
    centroid_production_analysis, chance_baseline, make_splits, run_experiment, summarize,
    train_ldl, Direction, DlmHyper, EvalResult, ExperimentData, Mapping, SplitPlan,
};
use tonelab_core::gam::{fit_gam, Ar1, FitOptions, FittedGam, PredictOptions};
use tonelab_core::suite::{
    build_spec, compare_models, crossval_sse, median_reductions, sense_floor, CrossvalOptions,
    ModelLabel,
};
use tonelab_core::synth::{embedding_rows_paired, gen_synthetic, SynthConfig};
use tonelab_core::vectorize::{
    load_embeddings, load_pitch_vectors_csv, pitch_vector, token_grid_frame, write_embedding_rows,
    write_pitch_vectors_csv, EmbeddingFormat, PitchVector,
};

use crate::manifest::{write_atomic, RunManifest};
use crate::plot::{bar_chart, box_chart, line_chart, Bar, BoxStat, Series};
use crate::{Cli, CliError, Command, EmbFormat, PlotKind, TokenFormat};

const SCHEMA_VERSION: u32 = 1;

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

fn check_schema(version: u32) -> Result<(), CliError> {
    if version != SCHEMA_VERSION {
        return Err(CliError::Usage(format!(
            "config schema_version {version} not supported (tool speaks {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

/// Loads a JSON config, or the type's default when no --config was given.
fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

fn out_dir(cli: &Cli) -> PathBuf {
    match std::env::var_os("TONELAB_OUT") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cli.out.clone(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialize {}: {e}", path.display())))?;
    write_atomic(path, body.as_bytes())
}

/// Runs a writer against a temp path, then renames over the target.
fn write_file_atomic<F>(path: &Path, writer: F) -> Result<(), CliError>
where
    F: FnOnce(&Path) -> Result<(), CliError>,
{
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    writer(&tmp)?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::Runtime(format!("rename to {}: {e}", path.display())))?;
    Ok(())
}

fn parse_labels(models: &[String]) -> Result<Vec<ModelLabel>, CliError> {
    if models.is_empty() {
        return Err(CliError::Usage("--models must name at least one model".into()));
    }
    models
        .iter()
        .map(|m| ModelLabel::from_str(m).map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    if cli.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    match &cli.command {
        Command::Synth { embedding_format } => cmd_synth(&cli, *embedding_format),
        Command::Ingest {
            meta,
            samples,
            pulses,
            token_format,
        } => cmd_ingest(&cli, meta, samples, pulses.as_deref(), *token_format),
        Command::Fit {
            meta,
            samples,
            model,
        } => cmd_fit(&cli, meta, samples, model),
        Command::Compare {
            meta,
            samples,
            models,
        } => cmd_compare(&cli, meta, samples, models),
        Command::Crossval {
            meta,
            samples,
            models,
        } => cmd_crossval(&cli, meta, samples, models),
        Command::Vectorize {
            meta,
            samples,
            model,
            points,
        } => cmd_vectorize(&cli, meta, samples, model, *points),
        Command::Dlm {
            pitch,
            embeddings,
            embedding_format,
            meta,
        } => cmd_dlm(&cli, pitch, embeddings, *embedding_format, meta),
        Command::Plot {
            kind,
            model,
            meta,
            samples,
            data,
        } => cmd_plot(
            &cli,
            *kind,
            model.as_deref(),
            meta.as_deref(),
            samples.as_deref(),
            data.as_deref(),
        ),
    }
}

// ---------------------------------------------------------------------------
// synth

fn cmd_synth(cli: &Cli, embedding_format: EmbFormat) -> Result<(), CliError> {
    let mut config: SynthConfig = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let dir = out_dir(cli);
    let mut manifest = RunManifest::begin("synth");
    if let Some(path) = &cli.config {
        manifest.record_config(path)?;
    }
    manifest.record_seed("synth", config.seed);

    let (tokens, embeddings, truth) = gen_synthetic(&config)
        .map_err(|e| CliError::Usage(format!("synthesis config rejected: {e}")))?;

    let meta_path = dir.join("tokens_meta.csv");
    let samples_path = dir.join("samples.csv");
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    write_file_atomic(&meta_path, |tmp_meta| {
        write_file_atomic(&samples_path, |tmp_samples| {
            write_tokens_csv(&tokens, tmp_meta, tmp_samples).map_err(|e| CliError::Runtime(e.to_string()))
        })
    })?;

    let rows = embedding_rows_paired(&embeddings, config.seed);
    let (emb_path, fmt) = match embedding_format {
        EmbFormat::Csv => (dir.join("embeddings.csv"), EmbeddingFormat::Csv),
        EmbFormat::Binary => (dir.join("embeddings.bin"), EmbeddingFormat::Binary),
    };
    write_file_atomic(&emb_path, |tmp| {
        write_embedding_rows(&rows, embeddings.dim, tmp, fmt).map_err(CliError::from)
    })?;

    let truth_path = dir.join("truth.json");
    write_json(&truth_path, &truth)?;

    for p in [&meta_path, &samples_path, &emb_path, &truth_path] {
        manifest.record_output(p);
    }
    manifest.finish(&dir)?;
    eprintln!(
        "synthesized {} tokens over {} words into {}",
        tokens.len(),
        config.n_words,
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// ingest

fn load_table(
    meta: &Path,
    samples: &Path,
    format: TokenFormat,
) -> Result<TokenTable, CliError> {
    let fmt = match format {
        TokenFormat::Csv => TokenFileFormat::Csv,
        TokenFormat::Jsonl => TokenFileFormat::JsonLines,
    };
    Ok(load_tokens(meta, samples, fmt)?)
}

fn cmd_ingest(
    cli: &Cli,
    meta: &Path,
    samples: &Path,
    pulses: Option<&Path>,
    token_format: TokenFormat,
) -> Result<(), CliError> {
    let mut policy: FilterPolicy = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        policy.seed = seed;
    }
    let dir = out_dir(cli);
    let mut manifest = RunManifest::begin("ingest");
    if let Some(path) = &cli.config {
        manifest.record_config(path)?;
    }
    manifest.record_input(meta)?;
    manifest.record_input(samples)?;
    manifest.record_seed("downsampling", policy.seed);

    let mut table = load_table(meta, samples, token_format)?;
    if let Some(pulse_path) = pulses {
        manifest.record_input(pulse_path)?;
        let pulse_map = load_pulses(pulse_path)?;
        let mut tokens = table.tokens;
        for t in &mut tokens {
            if let Some(times) = pulse_map.get(&t.token_id) {
                t.samples = interpolate_pulse_f0(&t.samples, times, &t.token_id)?;
            }
        }
        table = TokenTable::new(tokens)?;
    }

    let (filtered, report) = filter_tokens(&table, &policy)?;

    let meta_out = dir.join("tokens_meta.csv");
    let samples_out = dir.join("samples.csv");
    write_file_atomic(&meta_out, |tmp_meta| {
        write_file_atomic(&samples_out, |tmp_samples| {
            write_tokens_csv(&filtered, tmp_meta, tmp_samples)
                .map_err(|e| CliError::Runtime(e.to_string()))
        })
    })?;
    let report_path = dir.join("filter_report.json");
    write_json(&report_path, &report)?;

    for p in [&meta_out, &samples_out, &report_path] {
        manifest.record_output(p);
    }
    manifest.finish(&dir)?;
    eprintln!(
        "kept {} of {} tokens (report: {})",
        report.remaining,
        report.initial,
        report_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit

/// Config accepted by fit, compare, and crossval.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelingConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    #[serde(default = "default_fit_options")]
    pub fit: FitOptions,
    /// Tokens per sense required before a sense model sees the data.
    #[serde(default = "default_sense_min")]
    pub sense_min_count: usize,
    #[serde(default = "default_n_splits")]
    pub n_splits: usize,
    #[serde(default = "default_holdout")]
    pub holdout: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_fit_options() -> FitOptions {
    // the pipeline default: REML with the two-step AR(1) recipe
    FitOptions {
        ar1: Ar1::Auto,
        ..FitOptions::default()
    }
}

fn default_sense_min() -> usize {
    14
}

fn default_n_splits() -> usize {
    100
}

fn default_holdout() -> f64 {
    0.1
}

impl Default for ModelingConfig {
    fn default() -> Self {
        ModelingConfig {
            schema_version: SCHEMA_VERSION,
            fit: default_fit_options(),
            sense_min_count: 14,
            n_splits: 100,
            holdout: 0.1,
            seed: 0,
        }
    }
}

/// The sense models require the per-sense token floor before fitting.
fn table_for(label: ModelLabel, table: &TokenTable, min_sense: usize) -> Result<TokenTable, CliError> {
    if label == ModelLabel::Sense {
        Ok(sense_floor(table, min_sense)?)
    } else {
        Ok(table.clone())
    }
}

#[derive(Debug, Serialize)]
struct FitReport {
    label: String,
    aic: f64,
    log_likelihood: f64,
    rho: f64,
    edf_total: f64,
    lambda: Vec<f64>,
    converged: bool,
    n_obs: usize,
    n_tokens: usize,
}

fn cmd_fit(cli: &Cli, meta: &Path, samples: &Path, model: &str) -> Result<(), CliError> {
    let mut config: ModelingConfig = load_config(cli.config.as_deref())?;
    check_schema(config.schema_version)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let label = ModelLabel::from_str(model).map_err(|e| CliError::Usage(e.to_string()))?;

    let dir = out_dir(cli);
    let mut manifest = RunManifest::begin("fit");
    if let Some(path) = &cli.config {
        manifest.record_config(path)?;
    }
    manifest.record_input(meta)?;
    manifest.record_input(samples)?;

    let tokens = load_table(meta, samples, TokenFormat::Csv)?;
    let tokens = table_for(label, &tokens, config.sense_min_count)?;
    let obs = build_observation_table(&tokens)?;
    let spec = build_spec(label);
    let fit = fit_gam(&spec, &obs, &config.fit)?;

    let prefix = dir.join("model");
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    fit.save(&prefix)?;

    let report = FitReport {
        label: label.to_string(),
        aic: fit.aic,
        log_likelihood: fit.log_likelihood,
        rho: fit.rho,
        edf_total: fit.edf_total,
        lambda: fit.lambda.clone(),
        converged: fit.converged,
        n_obs: fit.n_obs,
        n_tokens: obs.n_tokens(),
    };
    let report_path = dir.join("fit_report.json");
    write_json(&report_path, &report)?;

    // per-term edf as CSV so downstream summaries never need the binary
    let edf_path = dir.join("edf.csv");
    let mut body = String::from("term,edf\n");
    for (term, edf) in fit.design.labels.iter().zip(&fit.edf_by_term) {
        body.push_str(&format!("{term},{edf:.6}\n"));
    }
    write_atomic(&edf_path, body.as_bytes())?;

    manifest.record_output(&prefix.with_extension("json"));
    manifest.record_output(&prefix.with_extension("bin"));
    manifest.record_output(&report_path);
    manifest.record_output(&edf_path);
    manifest.finish(&dir)?;
    eprintln!(
        "fit {label}: aic {:.2}, rho {:.3}, edf {:.1}",
        fit.aic, fit.rho, fit.edf_total
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// compare

fn cmd_compare(cli: &Cli, meta: &Path, samples: &Path, models: &[String]) -> Result<(), CliError> {
    let mut config: ModelingConfig = load_config(cli.config.as_deref())?;
    check_schema(config.schema_version)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let labels = parse_labels(models)?;

    let dir = out_dir(cli);
    let mut manifest = RunManifest::begin("compare");
    if let Some(path) = &cli.config {
        manifest.record_config(path)?;
    }
    manifest.record_input(meta)?;
    manifest.record_input(samples)?;
    manifest.record_seed("permutation", config.seed);

    let tokens = load_table(meta, samples, TokenFormat::Csv)?;
    let tokens = if labels.contains(&ModelLabel::Sense) {
        table_for(ModelLabel::Sense, &tokens, config.sense_min_count)?
    } else {
        tokens
    };
    let obs = build_observation_table(&tokens)?;
    let report = compare_models(&labels, &obs, &config.fit, config.seed)?;

    let json_path = dir.join("comparison.json");
    write_json(&json_path, &report)?;
    let csv_path = dir.join("comparison.csv");
    let mut body =
        String::from("label,aic,delta_aic,evidence_ratio_vs_baseline,rho,edf_total,converged\n");
    for m in &report.models {
        body.push_str(&format!(
            "{},{:.6},{:.6},{:.6e},{:.6},{:.3},{}\n",
            m.label, m.aic, m.delta_aic, m.evidence_ratio_vs_baseline, m.rho, m.edf_total,
            m.converged
        ));
    }
    write_atomic(&csv_path, body.as_bytes())?;

    manifest.record_output(&json_path);
    manifest.record_output(&csv_path);
    manifest.finish(&dir)?;
    eprintln!("compared {} models (reports in {})", report.models.len(), dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// crossval

fn cmd_crossval(cli: &Cli, meta: &Path, samples: &Path, models: &[String]) -> Result<(), CliError> {
    let mut config: ModelingConfig = load_config(cli.config.as_deref())?;
    check_schema(config.schema_version)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let labels = parse_labels(models)?;

    let dir = out_dir(cli);
    let mut manifest = RunManifest::begin("crossval");
    if let Some(path) = &cli.config {
        manifest.record_config(path)?;
    }
    manifest.record_input(meta)?;
    manifest.record_input(samples)?;
    manifest.record_seed("splits", config.seed);

    let tokens = load_table(meta, samples, TokenFormat::Csv)?;
    let tokens = if labels.contains(&ModelLabel::Sense) {
        table_for(ModelLabel::Sense, &tokens, config.sense_min_count)?
    } else {
        tokens
    };
    let obs = build_observation_table(&tokens)?;
    let opts = CrossvalOptions {
        n_splits: config.n_splits,
        holdout: config.holdout,
        seed: config.seed,
        fit: config.fit.clone(),
    };
    let results = crossval_sse(&labels, &obs, &opts)?;

    let csv_path = dir.join("cv_results.csv");
    let mut body = String::from("split_id,label,sse,sse_reduction\n");
    for r in &results {
        body.push_str(&format!(
            "{},{},{:.17e},{:.17e}\n",
            r.split_id, r.label, r.sse, r.sse_reduction
        ));
    }
    write_atomic(&csv_path, body.as_bytes())?;

    let medians = median_reductions(&results);
    let summary_path = dir.join("cv_summary.json");
    write_json(&summary_path, &medians)?;

    manifest.record_output(&csv_path);
    manifest.record_output(&summary_path);
    manifest.finish(&dir)?;
    eprintln!(
        "cross-validated {} models over {} splits",
        labels.len(),
        config.n_splits
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// vectorize

fn cmd_vectorize(
    cli: &Cli,
    meta: &Path,
    samples: &Path,
    model: &Path,
    points: usize,
) -> Result<(), CliError> {
    if points < 2 {
        return Err(CliError::Usage("--points must be at least 2".into()));
    }
    let dir = out_dir(cli);
    let mut manifest = RunManifest::begin("vectorize");
    manifest.record_input(meta)?;
    manifest.record_input(samples)?;
    manifest.record_input(&model.with_extension("json"))?;
    manifest.record_input(&model.with_extension("bin"))?;

    let tokens = load_table(meta, samples, TokenFormat::Csv)?;
    let fit = FittedGam::load(model)?;
    let source = fit.spec.label.clone();
    let mut vectors: Vec<PitchVector> = Vec::with_capacity(tokens.len());
    for token in &tokens.tokens {
        vectors.push(pitch_vector(&fit, token, points, &source)?);
    }

    let out_path = dir.join("pitch_vectors.csv");
    write_file_atomic(&out_path, |tmp| {
        write_pitch_vectors_csv(&vectors, tmp).map_err(CliError::from)
    })?;
    manifest.record_output(&out_path);
    manifest.finish(&dir)?;
    eprintln!("wrote {} pitch vectors to {}", vectors.len(), out_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// dlm

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DlmConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    #[serde(default = "default_proportions")]
    pub proportions: (f64, f64, f64),
    #[serde(default = "default_n_repeats")]
    pub n_repeats: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hyper: DlmHyper,
    #[serde(default = "default_directions")]
    pub directions: Vec<Direction>,
    #[serde(default = "default_mappings")]
    pub mappings: Vec<Mapping>,
    /// Average the two character rows of each token into one embedding.
    #[serde(default = "default_true")]
    pub average_pairs: bool,
    /// Ridge for the whole-data production map behind the centroid analysis.
    #[serde(default = "default_centroid_ridge")]
    pub centroid_ridge: f64,
}

fn default_proportions() -> (f64, f64, f64) {
    (0.8, 0.1, 0.1)
}

fn default_n_repeats() -> usize {
    30
}

fn default_directions() -> Vec<Direction> {
    vec![Direction::Comprehension, Direction::Production]
}

fn default_mappings() -> Vec<Mapping> {
    vec![Mapping::Ldl, Mapping::ResLdl]
}

fn default_true() -> bool {
    true
}

fn default_centroid_ridge() -> f64 {
    1e-6
}

impl Default for DlmConfig {
    fn default() -> Self {
        DlmConfig {
            schema_version: SCHEMA_VERSION,
            proportions: default_proportions(),
            n_repeats: default_n_repeats(),
            seed: 0,
            hyper: DlmHyper::default(),
            directions: default_directions(),
            mappings: default_mappings(),
            average_pairs: true,
            centroid_ridge: default_centroid_ridge(),
        }
    }
}

/// Splits are independent: chunk them across up to `jobs` scoped threads.
fn run_experiment_parallel(
    direction: Direction,
    mapping: Mapping,
    data: &ExperimentData,
    splits: &[SplitPlan],
    hyper: &DlmHyper,
    jobs: usize,
) -> Result<Vec<EvalResult>, CliError> {
    if jobs <= 1 || splits.len() <= 1 {
        return Ok(run_experiment(direction, mapping, data, splits, hyper)?);
    }
    let chunk = splits.len().div_ceil(jobs);
    let outputs = std::thread::scope(|scope| {
        let handles: Vec<_> = splits
            .chunks(chunk)
            .map(|part| scope.spawn(move || run_experiment(direction, mapping, data, part, hyper)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment worker panicked"))
            .collect::<Vec<_>>()
    });
    let mut results = Vec::with_capacity(splits.len());
    for out in outputs {
        results.extend(out?);
    }
    results.sort_by_key(|r| r.split_id);
    Ok(results)
}

fn cmd_dlm(
    cli: &Cli,
    pitch: &Path,
    embeddings: &Path,
    embedding_format: EmbFormat,
    meta: &Path,
) -> Result<(), CliError> {
    let mut config: DlmConfig = load_config(cli.config.as_deref())?;
    check_schema(config.schema_version)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    let dir = out_dir(cli);
    let mut manifest = RunManifest::begin("dlm");
    if let Some(path) = &cli.config {
        manifest.record_config(path)?;
    }
    manifest.record_input(pitch)?;
    manifest.record_input(embeddings)?;
    manifest.record_input(meta)?;
    manifest.record_seed("splits", config.seed);

    let vectors = load_pitch_vectors_csv(pitch)?;
    let fmt = match embedding_format {
        EmbFormat::Csv => EmbeddingFormat::Csv,
        EmbFormat::Binary => EmbeddingFormat::Binary,
    };
    let emb = load_embeddings(embeddings, fmt, config.average_pairs)?;

    // the metadata file provides each token's word label
    let meta_table = load_meta_words(meta)?;
    let have: BTreeSet<&str> = vectors
        .iter()
        .map(|v| v.token_id.as_str())
        .filter(|id| emb.get(id).is_some())
        .collect();
    let word_of: BTreeMap<String, String> = meta_table
        .into_iter()
        .filter(|(id, _)| have.contains(id.as_str()))
        .collect();
    if word_of.is_empty() {
        return Err(CliError::Usage(
            "no token appears in all three of: pitch vectors, embeddings, metadata".into(),
        ));
    }
    let usable: Vec<PitchVector> = vectors
        .into_iter()
        .filter(|v| word_of.contains_key(&v.token_id))
        .collect();
    let data = ExperimentData::new(&usable, &emb, &word_of);

    let mut tokens_by_word: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (token, word) in &word_of {
        tokens_by_word
            .entry(word.clone())
            .or_default()
            .push(token.clone());
    }
    let splits = make_splits(&tokens_by_word, config.proportions, config.n_repeats, config.seed)?;

    let mut all_results: Vec<EvalResult> = Vec::new();
    let mut summaries = Vec::new();
    for &direction in &config.directions {
        for &mapping in &config.mappings {
            let results = run_experiment_parallel(
                direction,
                mapping,
                &data,
                &splits,
                &config.hyper,
                cli.jobs,
            )?;
            if let Some(s) = summarize(&results) {
                summaries.push(s);
            }
            all_results.extend(results);
        }
    }

    let csv_path = dir.join("dlm_results.csv");
    let mut body = String::from(
        "split_id,direction,pitch_source,mapping,metric,ridge,train_acc,test_acc,chance\n",
    );
    for r in &all_results {
        body.push_str(&format!(
            "{},{:?},{},{:?},{:?},{:.1e},{:.6},{:.6},{:.6}\n",
            r.split_id,
            r.direction,
            r.pitch_source,
            r.mapping,
            r.metric,
            r.ridge,
            r.train_acc,
            r.test_acc,
            r.chance
        ));
    }
    write_atomic(&csv_path, body.as_bytes())?;

    let summary_path = dir.join("dlm_summary.json");
    write_json(&summary_path, &summaries)?;

    // centroid production analysis on the full dataset
    let all_ids: Vec<String> = data.word.keys().cloned().collect();
    let (emb_mat, pitch_mat, _) = data.stack(&all_ids, Direction::Production)?;
    let centroid_map = train_ldl(&emb_mat, &pitch_mat, config.centroid_ridge)?;
    let centroid = centroid_production_analysis(&centroid_map, &data)?;
    let centroid_csv = dir.join("centroid.csv");
    let mut body = String::from("word,correlation\n");
    for c in &centroid {
        body.push_str(&format!("{},{:.6}\n", c.word, c.correlation));
    }
    write_atomic(&centroid_csv, body.as_bytes())?;

    // overlay figure: centroid-predicted vs averaged gold contour
    let mut series = Vec::new();
    for c in centroid.iter().filter(|c| c.word != "ALL").take(3) {
        let grid: Vec<f64> = (0..c.predicted.len())
            .map(|i| i as f64 / (c.predicted.len().max(2) - 1) as f64)
            .collect();
        series.push(Series {
            label: format!("{} predicted", c.word),
            x: grid.clone(),
            y: c.predicted.clone(),
            band: None,
        });
        series.push(Series {
            label: format!("{} gold", c.word),
            x: grid,
            y: c.averaged.clone(),
            band: None,
        });
    }
    let overlay = line_chart(
        "Centroid-predicted vs averaged pitch vectors",
        "normalized time",
        "scaled log F0",
        &series,
    );
    let overlay_path = dir.join("centroid_overlay.svg");
    write_atomic(&overlay_path, overlay.as_bytes())?;

    let chance = chance_baseline(&data.word.values().cloned().collect::<Vec<_>>())?;
    manifest.record_seed("net", config.hyper.net.seed);
    for p in [&csv_path, &summary_path, &centroid_csv, &overlay_path] {
        manifest.record_output(p);
    }
    manifest.finish(&dir)?;
    eprintln!(
        "evaluated {} cells over {} splits (chance {:.4})",
        summaries.len(),
        splits.len(),
        chance
    );
    Ok(())
}

/// token_id -> word from a metadata CSV, without requiring a samples file.
fn load_meta_words(meta: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut rdr = csv::Reader::from_path(meta)
        .map_err(|e| CliError::Usage(format!("{}: {e}", meta.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Usage(format!("{}: {e}", meta.display())))?
        .clone();
    let id_col = headers
        .iter()
        .position(|h| h == "token_id")
        .ok_or_else(|| CliError::Usage(format!("{}: missing token_id column", meta.display())))?;
    let word_col = headers
        .iter()
        .position(|h| h == "word")
        .ok_or_else(|| CliError::Usage(format!("{}: missing word column", meta.display())))?;
    let mut map = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            CliError::Usage(format!("{} line {}: {e}", meta.display(), line + 2))
        })?;
        map.insert(rec[id_col].to_string(), rec[word_col].to_string());
    }
    Ok(map)
}

// ---------------------------------------------------------------------------
// plot

fn cmd_plot(
    cli: &Cli,
    kind: PlotKind,
    model: Option<&Path>,
    meta: Option<&Path>,
    samples: Option<&Path>,
    data: Option<&Path>,
) -> Result<(), CliError> {
    let dir = out_dir(cli);
    let mut manifest = RunManifest::begin("plot");
    match kind {
        PlotKind::Population | PlotKind::Word | PlotKind::Sense => {
            let model = model.ok_or_else(|| {
                CliError::Usage("contour plots need --model".into())
            })?;
            let meta = meta
                .ok_or_else(|| CliError::Usage("contour plots need --meta".into()))?;
            let samples = samples
                .ok_or_else(|| CliError::Usage("contour plots need --samples".into()))?;
            manifest.record_input(&model.with_extension("json"))?;
            manifest.record_input(meta)?;
            manifest.record_input(samples)?;
            let fit = FittedGam::load(model)?;
            let tokens = load_table(meta, samples, TokenFormat::Csv)?;
            let outputs = match kind {
                PlotKind::Population => plot_population(&dir, &fit, &tokens)?,
                PlotKind::Word => plot_factor_contours(&dir, &fit, &tokens, "word")?,
                PlotKind::Sense => plot_factor_contours(&dir, &fit, &tokens, "sense")?,
                _ => unreachable!(),
            };
            for p in &outputs {
                manifest.record_output(p);
            }
        }
        PlotKind::Cv => {
            let data = data.ok_or_else(|| {
                CliError::Usage("--data must point at a cv_results.csv".into())
            })?;
            manifest.record_input(data)?;
            for p in &plot_cv_boxes(&dir, data)? {
                manifest.record_output(p);
            }
        }
        PlotKind::Accuracy => {
            let data = data.ok_or_else(|| {
                CliError::Usage("--data must point at a dlm_results.csv".into())
            })?;
            manifest.record_input(data)?;
            for p in &plot_accuracy_bars(&dir, data)? {
                manifest.record_output(p);
            }
        }
    }
    manifest.finish(&dir)?;
    Ok(())
}

const GRID_POINTS: usize = 50;

fn plot_population(
    dir: &Path,
    fit: &FittedGam,
    tokens: &TokenTable,
) -> Result<Vec<PathBuf>, CliError> {
    let token = tokens
        .tokens
        .first()
        .ok_or_else(|| CliError::Runtime("token table is empty".into()))?;
    let frame = token_grid_frame(token, GRID_POINTS)?;
    let opts = PredictOptions {
        with_se: true,
        ..PredictOptions::default()
    };
    let pred = fit.predict(&frame, &opts)?;
    let se = pred
        .se
        .ok_or_else(|| CliError::Runtime("prediction did not return standard errors".into()))?;
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| i as f64 / (GRID_POINTS - 1) as f64)
        .collect();

    let csv_path = dir.join("population_contour.csv");
    let mut body = String::from("time,fitted,se\n");
    for i in 0..GRID_POINTS {
        body.push_str(&format!("{:.6},{:.8},{:.8}\n", grid[i], pred.fitted[i], se[i]));
    }
    write_atomic(&csv_path, body.as_bytes())?;

    let svg = line_chart(
        "Population contour with ±2 SE band",
        "normalized time",
        "log F0",
        &[Series {
            label: "fitted".into(),
            x: grid,
            y: pred.fitted.clone(),
            band: Some(se.iter().map(|s| 2.0 * s).collect()),
        }],
    );
    let svg_path = dir.join("population_contour.svg");
    write_atomic(&svg_path, svg.as_bytes())?;
    Ok(vec![csv_path, svg_path])
}

fn plot_factor_contours(
    dir: &Path,
    fit: &FittedGam,
    tokens: &TokenTable,
    factor: &str,
) -> Result<Vec<PathBuf>, CliError> {
    let term = format!("fs(time,{factor})");
    if !fit.spec.terms.iter().any(|t| t.label() == term) {
        return Err(CliError::Runtime(format!(
            "model `{}` has no {term} term; fit the {factor} model first",
            fit.spec.label
        )));
    }

    // representative token per level gives the covariate context
    let mut rep: BTreeMap<String, &tonelab_core::TokenRecord> = BTreeMap::new();
    for t in &tokens.tokens {
        let level = match factor {
            "word" => t.word.clone(),
            "sense" => t.sense.clone().unwrap_or_default(),
            other => {
                return Err(CliError::Usage(format!("no contour plot for factor {other}")))
            }
        };
        if !level.is_empty() {
            rep.entry(level).or_insert(t);
        }
    }
    if rep.is_empty() {
        return Err(CliError::Runtime(format!("no {factor} levels in the data")));
    }

    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let opts = PredictOptions {
        with_se: true,
        by_term: true,
        ..PredictOptions::default()
    };
    let csv_path = dir.join(format!("{factor}_contours.csv"));
    let mut body = format!("{factor},time,effect,se\n");
    let mut series = Vec::new();
    for (level, token) in &rep {
        let frame = token_grid_frame(token, GRID_POINTS)?;
        let pred = fit.predict(&frame, &opts)?;
        let contributions = pred
            .term_contributions
            .ok_or_else(|| CliError::Runtime("per-term contributions missing".into()))?;
        let effect = contributions
            .iter()
            .find(|(l, _)| l == &term)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| CliError::Runtime(format!("{term} contribution missing")))?;
        let se = fit.term_se(&frame, &term, &opts)?;
        for i in 0..GRID_POINTS {
            body.push_str(&format!(
                "{level},{:.6},{:.8},{:.8}\n",
                grid[i], effect[i], se[i]
            ));
        }
        series.push(Series {
            label: level.clone(),
            x: grid.clone(),
            y: effect,
            band: Some(se.iter().map(|s| 2.0 * s).collect()),
        });
    }
    write_atomic(&csv_path, body.as_bytes())?;

    // the figure stays readable up to a handful of levels; the CSV has all
    series.truncate(6);
    let svg = line_chart(
        &format!("Partial-effect contours by {factor} (±2 SE)"),
        "normalized time",
        "partial effect (log F0)",
        &series,
    );
    let svg_path = dir.join(format!("{factor}_contours.svg"));
    write_atomic(&svg_path, svg.as_bytes())?;
    Ok(vec![csv_path, svg_path])
}

fn quartiles(sorted: &[f64]) -> (f64, f64, f64) {
    let q = |p: f64| -> f64 {
        // R type-7 linear interpolation
        let h = p * (sorted.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        sorted[lo] + (h - h.floor()) * (sorted[hi] - sorted[lo])
    };
    (q(0.25), q(0.5), q(0.75))
}

fn plot_cv_boxes(dir: &Path, data: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut rdr = csv::Reader::from_path(data)
        .map_err(|e| CliError::Usage(format!("{}: {e}", data.display())))?;
    let mut by_label: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Usage(format!("{}: {e}", data.display())))?;
        let label = rec
            .get(1)
            .ok_or_else(|| CliError::Usage("cv csv needs a label column".into()))?;
        let reduction: f64 = rec
            .get(3)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Usage("cv csv needs an sse_reduction column".into()))?;
        by_label.entry(label.to_string()).or_default().push(reduction);
    }
    if by_label.is_empty() {
        return Err(CliError::Usage("cv csv contained no rows".into()));
    }

    let csv_path = dir.join("cv_boxes.csv");
    let mut body = String::from("label,min,q1,median,q3,max\n");
    let mut boxes = Vec::new();
    for (label, mut vals) in by_label {
        vals.sort_by(|a, b| a.total_cmp(b));
        let (q1, median, q3) = quartiles(&vals);
        let (min, max) = (vals[0], vals[vals.len() - 1]);
        body.push_str(&format!(
            "{label},{min:.8},{q1:.8},{median:.8},{q3:.8},{max:.8}\n"
        ));
        boxes.push(BoxStat {
            label,
            min,
            q1,
            median,
            q3,
            max,
        });
    }
    write_atomic(&csv_path, body.as_bytes())?;
    let svg = box_chart("Held-out SSE reduction vs baseline", "SSE reduction", &boxes);
    let svg_path = dir.join("cv_boxes.svg");
    write_atomic(&svg_path, svg.as_bytes())?;
    Ok(vec![csv_path, svg_path])
}

fn plot_accuracy_bars(dir: &Path, data: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut rdr = csv::Reader::from_path(data)
        .map_err(|e| CliError::Usage(format!("{}: {e}", data.display())))?;
    // cell = (direction, mapping) -> test accuracies and chance values
    let mut cells: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Usage(format!("{}: {e}", data.display())))?;
        let direction = rec.get(1).unwrap_or("").to_string();
        let mapping = rec.get(3).unwrap_or("").to_string();
        let test_acc: f64 = rec
            .get(7)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Usage("dlm csv needs a test_acc column".into()))?;
        let chance: f64 = rec.get(8).and_then(|v| v.parse().ok()).unwrap_or(0.0);
        let entry = cells.entry(format!("{direction}/{mapping}")).or_default();
        entry.0.push(test_acc);
        entry.1.push(chance);
    }
    if cells.is_empty() {
        return Err(CliError::Usage("dlm csv contained no rows".into()));
    }

    let csv_path = dir.join("accuracy_bars.csv");
    let mut body = String::from("cell,mean_test_acc,two_se,mean_chance\n");
    let mut bars = Vec::new();
    for (cell, (accs, chances)) in cells {
        let n = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / n;
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n.max(2.0 - 1.0);
        let two_se = 2.0 * (var / n).sqrt();
        let chance = chances.iter().sum::<f64>() / n;
        body.push_str(&format!("{cell},{mean:.6},{two_se:.6},{chance:.6}\n"));
        bars.push(Bar {
            label: cell,
            value: mean,
            err: two_se,
        });
    }
    write_atomic(&csv_path, body.as_bytes())?;
    let svg = bar_chart("Mapping accuracy (mean ± 2 SE)", "test accuracy", &bars);
    let svg_path = dir.join("accuracy_bars.svg");
    write_atomic(&svg_path, svg.as_bytes())?;
    Ok(vec![csv_path, svg_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_version_gate() {
        assert!(check_schema(SCHEMA_VERSION).is_ok());
        let err = check_schema(99).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn config_defaults_when_absent() {
        let cfg: ModelingConfig = load_config(None).unwrap();
        assert_eq!(cfg.n_splits, 100);
        assert_eq!(cfg.sense_min_count, 14);
        assert_eq!(cfg.fit.ar1, Ar1::Auto);
        let cfg: DlmConfig = load_config(None).unwrap();
        assert_eq!(cfg.n_repeats, 30);
        assert_eq!(cfg.proportions, (0.8, 0.1, 0.1));
    }

    #[test]
    fn unknown_config_field_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"no_such_field": 1}"#).unwrap();
        let err = load_config::<ModelingConfig>(Some(&path)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("no_such_field"));
    }

    #[test]
    fn quartiles_match_hand_computation() {
        let vals = [1.0, 2.0, 3.0, 4.0];
        let (q1, med, q3) = quartiles(&vals);
        assert!((q1 - 1.75).abs() < 1e-12);
        assert!((med - 2.5).abs() < 1e-12);
        assert!((q3 - 3.25).abs() < 1e-12);
    }

    #[test]
    fn label_parsing_rejects_unknown() {
        let err = parse_labels(&["not-a-model".to_string()]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let ok = parse_labels(&["word".to_string(), "+vowel1".to_string()]).unwrap();
        assert_eq!(ok, vec![ModelLabel::Word, ModelLabel::Vowel1]);
    }
}
