//! Token data model, file ingestion and the filtering/transformation rules
//! applied before any model fitting.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample as sample_without_replacement;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{FactorColumn, Frame, ObservationTable};

#[derive(Error, Debug)]
pub enum CorpusError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("schema violation in field `{field}` for token `{token}`: {detail}")]
    Schema {
        field: String,
        token: String,
        detail: String,
    },

    #[error("duplicate token_id `{0}`")]
    DuplicateToken(String),

    #[error("token `{0}` has no F0 samples")]
    NoSamples(String),

    #[error("pulse time {pulse} for token `{token}` lies outside the sampled range [{lo}, {hi}]")]
    PulseOutOfRange {
        token: String,
        pulse: f64,
        lo: f64,
        hi: f64,
    },

    #[error("need at least 2 samples to normalize, got {0}")]
    TooFewSamples(usize),

    #[error("non-positive F0 value {0} (Hz)")]
    NonPositiveF0(f64),

    #[error("all tokens filtered")]
    AllTokensFiltered,

    #[error("sense `{sense}` maps to more than one word (`{word_a}` and `{word_b}`)")]
    SenseNotNested {
        sense: String,
        word_a: String,
        word_b: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "female",
            Gender::Male => "male",
        })
    }
}

impl FromStr for Gender {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "female" => Ok(Gender::Female),
            "male" => Ok(Gender::Male),
            other => Err(format!("unknown gender `{other}` (expected female|male)")),
        }
    }
}

/// Tonal category of an adjacent syllable: the four lexical tones, the
/// neutral tone, or `null` for utterance edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Tone {
    T1,
    T2,
    T3,
    T4,
    Neutral,
    Null,
}

impl Tone {
    pub const ALL: [Tone; 6] = [
        Tone::T1,
        Tone::T2,
        Tone::T3,
        Tone::T4,
        Tone::Neutral,
        Tone::Null,
    ];
}

impl fmt::Display for Tone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tone::T1 => "T1",
            Tone::T2 => "T2",
            Tone::T3 => "T3",
            Tone::T4 => "T4",
            Tone::Neutral => "neutral",
            Tone::Null => "null",
        })
    }
}

impl FromStr for Tone {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "T1" => Ok(Tone::T1),
            "T2" => Ok(Tone::T2),
            "T3" => Ok(Tone::T3),
            "T4" => Ok(Tone::T4),
            "neutral" => Ok(Tone::Neutral),
            "null" => Ok(Tone::Null),
            other => Err(format!(
                "unknown tone `{other}` (expected T1|T2|T3|T4|neutral|null)"
            )),
        }
    }
}

/// Preceding x following tone of a token, one of 36 combinations,
/// serialized as e.g. `T2_null`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct AdjacentTone {
    pub preceding: Tone,
    pub following: Tone,
}

impl fmt::Display for AdjacentTone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.preceding, self.following)
    }
}

impl FromStr for AdjacentTone {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once('_')
            .ok_or_else(|| format!("adjacent_tone `{s}` is not of the form <tone>_<tone>"))?;
        Ok(AdjacentTone {
            preceding: a.parse()?,
            following: b.parse()?,
        })
    }
}

impl Serialize for AdjacentTone {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AdjacentTone {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VowelHeight {
    #[serde(rename = "high")]
    High,
    #[serde(rename = "mid")]
    Mid,
    #[serde(rename = "low")]
    Low,
    #[serde(rename = "low-high")]
    LowHigh,
    #[serde(rename = "mid-high")]
    MidHigh,
}

impl fmt::Display for VowelHeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VowelHeight::High => "high",
            VowelHeight::Mid => "mid",
            VowelHeight::Low => "low",
            VowelHeight::LowHigh => "low-high",
            VowelHeight::MidHigh => "mid-high",
        })
    }
}

impl FromStr for VowelHeight {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high" => Ok(VowelHeight::High),
            "mid" => Ok(VowelHeight::Mid),
            "low" => Ok(VowelHeight::Low),
            "low-high" => Ok(VowelHeight::LowHigh),
            "mid-high" => Ok(VowelHeight::MidHigh),
            other => Err(format!("unknown vowel height `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OnsetType {
    #[serde(rename = "aspirated-affricate")]
    AspiratedAffricate,
    #[serde(rename = "aspirated-stop")]
    AspiratedStop,
    #[serde(rename = "unaspirated-affricate")]
    UnaspiratedAffricate,
    #[serde(rename = "unaspirated-stop")]
    UnaspiratedStop,
    #[serde(rename = "voiceless-fricative")]
    VoicelessFricative,
    #[serde(rename = "voiced")]
    Voiced,
    #[serde(rename = "null")]
    Null,
}

impl fmt::Display for OnsetType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OnsetType::AspiratedAffricate => "aspirated-affricate",
            OnsetType::AspiratedStop => "aspirated-stop",
            OnsetType::UnaspiratedAffricate => "unaspirated-affricate",
            OnsetType::UnaspiratedStop => "unaspirated-stop",
            OnsetType::VoicelessFricative => "voiceless-fricative",
            OnsetType::Voiced => "voiced",
            OnsetType::Null => "null",
        })
    }
}

impl FromStr for OnsetType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aspirated-affricate" => Ok(OnsetType::AspiratedAffricate),
            "aspirated-stop" => Ok(OnsetType::AspiratedStop),
            "unaspirated-affricate" => Ok(OnsetType::UnaspiratedAffricate),
            "unaspirated-stop" => Ok(OnsetType::UnaspiratedStop),
            "voiceless-fricative" => Ok(OnsetType::VoicelessFricative),
            "voiced" => Ok(OnsetType::Voiced),
            "null" => Ok(OnsetType::Null),
            other => Err(format!("unknown onset type `{other}`")),
        }
    }
}

/// Rhyme structure: prenuclear glide (G) and/or final nasal (N) around the
/// nucleus vowel (V).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RhymeStructure {
    V,
    GV,
    VN,
    GVN,
}

impl fmt::Display for RhymeStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RhymeStructure::V => "V",
            RhymeStructure::GV => "GV",
            RhymeStructure::VN => "VN",
            RhymeStructure::GVN => "GVN",
        })
    }
}

impl FromStr for RhymeStructure {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "V" => Ok(RhymeStructure::V),
            "GV" => Ok(RhymeStructure::GV),
            "VN" => Ok(RhymeStructure::VN),
            "GVN" => Ok(RhymeStructure::GVN),
            other => Err(format!("unknown rhyme structure `{other}` (expected V|GV|VN|GVN)")),
        }
    }
}

/// One F0 measurement within a token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F0Sample {
    /// Seconds from token onset, non-negative.
    pub time_s: f64,
    /// Fundamental frequency in Hz, strictly positive.
    pub f0_hz: f64,
}

/// One spoken word token with its F0 series and all covariates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenRecord {
    pub token_id: String,
    pub word: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sense: Option<String>,
    pub speaker: String,
    pub gender: Gender,
    pub duration_s: f64,
    pub utterance_position: f64,
    pub bigram_previous: f64,
    pub bigram_following: f64,
    pub adjacent_tone: AdjacentTone,
    pub vowel1: VowelHeight,
    pub vowel2: VowelHeight,
    pub onset1: OnsetType,
    pub onset2: OnsetType,
    pub syllable1: RhymeStructure,
    pub syllable2: RhymeStructure,
    #[serde(default)]
    pub samples: Vec<F0Sample>,
}

impl TokenRecord {
    fn validate(&self) -> Result<(), CorpusError> {
        let schema = |field: &str, detail: String| CorpusError::Schema {
            field: field.to_string(),
            token: self.token_id.clone(),
            detail,
        };
        if !(self.duration_s > 0.0) {
            return Err(schema("duration_s", format!("must be > 0, got {}", self.duration_s)));
        }
        if !(0.0..=1.0).contains(&self.utterance_position) {
            return Err(schema(
                "utterance_position",
                format!("must lie in [0,1], got {}", self.utterance_position),
            ));
        }
        for (name, v) in [
            ("bigram_previous", self.bigram_previous),
            ("bigram_following", self.bigram_following),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(schema(name, format!("must lie in [0,1], got {v}")));
            }
        }
        let mut prev = f64::NEG_INFINITY;
        for s in &self.samples {
            if s.time_s < 0.0 {
                return Err(schema("samples", format!("negative time {}", s.time_s)));
            }
            if s.time_s <= prev {
                return Err(schema(
                    "samples",
                    format!("times must be strictly increasing (at {})", s.time_s),
                ));
            }
            if !(s.f0_hz > 0.0) {
                return Err(schema("samples", format!("non-positive F0 {}", s.f0_hz)));
            }
            prev = s.time_s;
        }
        Ok(())
    }
}

/// All tokens of a dataset, indexed by token id.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TokenTable {
    pub tokens: Vec<TokenRecord>,
}

impl TokenTable {
    pub fn new(tokens: Vec<TokenRecord>) -> Result<Self, CorpusError> {
        let mut seen = BTreeMap::new();
        for t in &tokens {
            if seen.insert(t.token_id.clone(), ()).is_some() {
                return Err(CorpusError::DuplicateToken(t.token_id.clone()));
            }
            t.validate()?;
        }
        // sense labels must be nested under word
        let mut sense_word: BTreeMap<&str, &str> = BTreeMap::new();
        for t in &tokens {
            if let Some(sense) = &t.sense {
                if let Some(prev) = sense_word.insert(sense, &t.word) {
                    if prev != t.word {
                        return Err(CorpusError::SenseNotNested {
                            sense: sense.clone(),
                            word_a: prev.to_string(),
                            word_b: t.word.clone(),
                        });
                    }
                }
            }
        }
        Ok(TokenTable { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> Vec<&str> {
        let mut ws: Vec<&str> = self.tokens.iter().map(|t| t.word.as_str()).collect();
        ws.sort_unstable();
        ws.dedup();
        ws
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenFileFormat {
    Csv,
    JsonLines,
}

const CSV_HEADER: [&str; 16] = [
    "token_id",
    "word",
    "sense",
    "speaker",
    "gender",
    "duration_s",
    "utterance_position",
    "bigram_previous",
    "bigram_following",
    "adjacent_tone",
    "vowel1",
    "vowel2",
    "onset1",
    "onset2",
    "syllable1",
    "syllable2",
];

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, detail: impl Into<String>) -> CorpusError {
    CorpusError::Parse {
        path: path.display().to_string(),
        line,
        detail: detail.into(),
    }
}

/// Loads token metadata plus the long-format samples file and returns the
/// joined, validated table.
pub fn load_tokens(
    meta_path: &Path,
    samples_path: &Path,
    format: TokenFileFormat,
) -> Result<TokenTable, CorpusError> {
    let mut tokens = match format {
        TokenFileFormat::Csv => load_meta_csv(meta_path)?,
        TokenFileFormat::JsonLines => load_meta_jsonl(meta_path)?,
    };
    let samples = load_samples_csv(samples_path)?;
    let index: BTreeMap<String, usize> =
        tokens.iter().enumerate().map(|(i, t)| (t.token_id.clone(), i)).collect();
    if index.len() != tokens.len() {
        // find the duplicate for the error message
        let mut seen = BTreeMap::new();
        for t in &tokens {
            if seen.insert(&t.token_id, ()).is_some() {
                return Err(CorpusError::DuplicateToken(t.token_id.clone()));
            }
        }
    }
    for (id, mut series) in samples {
        let Some(&i) = index.get(&id) else {
            return Err(CorpusError::Schema {
                field: "token_id".to_string(),
                token: id.clone(),
                detail: "samples file references a token missing from the metadata".to_string(),
            });
        };
        series.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
        tokens[i].samples = series;
    }
    for t in &tokens {
        if t.samples.is_empty() {
            return Err(CorpusError::NoSamples(t.token_id.clone()));
        }
    }
    TokenTable::new(tokens)
}

fn load_meta_csv(path: &Path) -> Result<Vec<TokenRecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    for required in CSV_HEADER {
        if !headers.iter().any(|h| h == required) {
            return Err(parse_err(path, 1, format!("missing column `{required}`")));
        }
    }
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let idx: Vec<usize> = CSV_HEADER.iter().map(|h| col(h)).collect();
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(path, line, e.to_string()))?;
        let get = |j: usize| row.get(idx[j]).unwrap_or("").trim().to_string();
        let num = |j: usize| -> Result<f64, CorpusError> {
            get(j)
                .parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("`{}` is not a number in column {}", get(j), CSV_HEADER[j])))
        };
        fn parse_field<T>(
            path: &Path,
            line: usize,
            j: usize,
            r: Result<T, String>,
        ) -> Result<T, CorpusError> {
            r.map_err(|e| parse_err(path, line, format!("column {}: {}", CSV_HEADER[j], e)))
        }
        let sense = get(2);
        out.push(TokenRecord {
            token_id: get(0),
            word: get(1),
            sense: if sense.is_empty() { None } else { Some(sense) },
            speaker: get(3),
            gender: parse_field(path, line, 4, get(4).parse())?,
            duration_s: num(5)?,
            utterance_position: num(6)?,
            bigram_previous: num(7)?,
            bigram_following: num(8)?,
            adjacent_tone: parse_field(path, line, 9, get(9).parse())?,
            vowel1: parse_field(path, line, 10, get(10).parse())?,
            vowel2: parse_field(path, line, 11, get(11).parse())?,
            onset1: parse_field(path, line, 12, get(12).parse())?,
            onset2: parse_field(path, line, 13, get(13).parse())?,
            syllable1: parse_field(path, line, 14, get(14).parse())?,
            syllable2: parse_field(path, line, 15, get(15).parse())?,
            samples: Vec::new(),
        });
    }
    Ok(out)
}

fn load_meta_jsonl(path: &Path) -> Result<Vec<TokenRecord>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TokenRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

fn load_samples_csv(path: &Path) -> Result<BTreeMap<String, Vec<F0Sample>>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let mut out: BTreeMap<String, Vec<F0Sample>> = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(path, line, e.to_string()))?;
        if row.len() < 3 {
            return Err(parse_err(path, line, "expected token_id,time_s,f0_hz"));
        }
        let time_s: f64 = row[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad time_s `{}`", &row[1])))?;
        let f0_hz: f64 = row[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad f0_hz `{}`", &row[2])))?;
        out.entry(row[0].trim().to_string())
            .or_default()
            .push(F0Sample { time_s, f0_hz });
    }
    Ok(out)
}

/// Optional per-token glottal pulse times: CSV `token_id,pulse_time_s`.
pub fn load_pulses(path: &Path) -> Result<BTreeMap<String, Vec<f64>>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(path, line, e.to_string()))?;
        let t: f64 = row[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad pulse_time_s `{}`", &row[1])))?;
        out.entry(row[0].trim().to_string()).or_default().push(t);
    }
    for v in out.values_mut() {
        v.sort_by(f64::total_cmp);
    }
    Ok(out)
}

pub fn write_tokens_csv(
    table: &TokenTable,
    meta_path: &Path,
    samples_path: &Path,
) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_path(meta_path).map_err(|e| parse_err(meta_path, 0, e.to_string()))?;
    w.write_record(CSV_HEADER)
        .map_err(|e| parse_err(meta_path, 0, e.to_string()))?;
    for t in &table.tokens {
        w.write_record([
            t.token_id.as_str(),
            t.word.as_str(),
            t.sense.as_deref().unwrap_or(""),
            t.speaker.as_str(),
            &t.gender.to_string(),
            &format!("{:.17e}", t.duration_s),
            &format!("{:.17e}", t.utterance_position),
            &format!("{:.17e}", t.bigram_previous),
            &format!("{:.17e}", t.bigram_following),
            &t.adjacent_tone.to_string(),
            &t.vowel1.to_string(),
            &t.vowel2.to_string(),
            &t.onset1.to_string(),
            &t.onset2.to_string(),
            &t.syllable1.to_string(),
            &t.syllable2.to_string(),
        ])
        .map_err(|e| parse_err(meta_path, 0, e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(meta_path, e))?;

    let mut f = std::io::BufWriter::new(
        std::fs::File::create(samples_path).map_err(|e| io_err(samples_path, e))?,
    );
    writeln!(f, "token_id,time_s,f0_hz").map_err(|e| io_err(samples_path, e))?;
    for t in &table.tokens {
        for s in &t.samples {
            writeln!(f, "{},{:.17e},{:.17e}", t.token_id, s.time_s, s.f0_hz)
                .map_err(|e| io_err(samples_path, e))?;
        }
    }
    f.flush().map_err(|e| io_err(samples_path, e))?;
    Ok(())
}

/// Linearly interpolates the F0 series at the given pulse times. Pulse times
/// must lie within the sampled range; exact matches pass through.
pub fn interpolate_pulse_f0(
    samples: &[F0Sample],
    pulse_times: &[f64],
    token_id: &str,
) -> Result<Vec<F0Sample>, CorpusError> {
    if samples.is_empty() {
        return Err(CorpusError::NoSamples(token_id.to_string()));
    }
    let lo = samples[0].time_s;
    let hi = samples[samples.len() - 1].time_s;
    let mut out = Vec::with_capacity(pulse_times.len());
    for &p in pulse_times {
        if p < lo || p > hi {
            return Err(CorpusError::PulseOutOfRange {
                token: token_id.to_string(),
                pulse: p,
                lo,
                hi,
            });
        }
        let j = samples.partition_point(|s| s.time_s < p);
        let f0 = if j < samples.len() && samples[j].time_s == p {
            samples[j].f0_hz
        } else {
            let a = &samples[j - 1];
            let b = &samples[j];
            let w = (p - a.time_s) / (b.time_s - a.time_s);
            a.f0_hz + w * (b.f0_hz - a.f0_hz)
        };
        out.push(F0Sample {
            time_s: p,
            f0_hz: f0,
        });
    }
    Ok(out)
}

/// Maps sample times affinely onto [0,1] and replaces F0 by its natural log.
pub fn normalize_time(samples: &[F0Sample]) -> Result<Vec<(f64, f64)>, CorpusError> {
    if samples.len() < 2 {
        return Err(CorpusError::TooFewSamples(samples.len()));
    }
    let t0 = samples[0].time_s;
    let t1 = samples[samples.len() - 1].time_s;
    let span = t1 - t0;
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if !(s.f0_hz > 0.0) {
                return Err(CorpusError::NonPositiveF0(s.f0_hz));
            }
            // endpoints forced exactly to 0 and 1
            let tn = if i == 0 {
                0.0
            } else if i == samples.len() - 1 {
                1.0
            } else {
                (s.time_s - t0) / span
            };
            Ok((tn, s.f0_hz.ln()))
        })
        .collect()
}

/// Filtering policy, stage order fixed: per-word cap, short-token exclusion,
/// diff-SD outlier exclusion, word floor, speaker floor, optional sense floor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterPolicy {
    #[serde(default = "default_min_points")]
    pub min_points: usize,
    #[serde(default = "default_sd_decile")]
    pub sd_decile: f64,
    #[serde(default = "default_token_cap")]
    pub token_cap: usize,
    #[serde(default = "default_min_word_count")]
    pub min_word_count: usize,
    #[serde(default)]
    pub min_sense_count: Option<usize>,
    #[serde(default = "default_min_speakers")]
    pub min_speakers: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_min_points() -> usize {
    6
}
fn default_sd_decile() -> f64 {
    0.9
}
fn default_token_cap() -> usize {
    300
}
fn default_min_word_count() -> usize {
    20
}
fn default_min_speakers() -> usize {
    2
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            min_points: 6,
            sd_decile: 0.9,
            token_cap: 300,
            min_word_count: 20,
            min_sense_count: None,
            min_speakers: 2,
            seed: 0,
        }
    }
}

/// Counts of tokens removed at each filtering stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterReport {
    pub initial: usize,
    pub removed_cap: usize,
    pub removed_short: usize,
    pub removed_outlier: usize,
    pub removed_word_floor: usize,
    pub removed_speaker_floor: usize,
    pub removed_sense_floor: usize,
    pub remaining: usize,
    /// The diff-SD threshold actually applied at the outlier stage.
    pub sd_threshold: f64,
}

/// Linear-interpolation quantile (R type 7) of an unsorted sample.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= v.len() {
        return v[v.len() - 1];
    }
    v[lo] + (h - lo as f64) * (v[lo + 1] - v[lo])
}

/// Standard deviation of consecutive log-F0 differences within a token;
/// large values flag pitch halving/doubling artifacts.
pub fn log_f0_diff_sd(samples: &[F0Sample]) -> f64 {
    if samples.len() < 3 {
        return 0.0;
    }
    let diffs: Vec<f64> = samples
        .windows(2)
        .map(|w| w[1].f0_hz.ln() - w[0].f0_hz.ln())
        .collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
    var.sqrt()
}

pub fn filter_tokens(
    table: &TokenTable,
    policy: &FilterPolicy,
) -> Result<(TokenTable, FilterReport), CorpusError> {
    let initial = table.tokens.len();
    let mut report = FilterReport {
        initial,
        removed_cap: 0,
        removed_short: 0,
        removed_outlier: 0,
        removed_word_floor: 0,
        removed_speaker_floor: 0,
        removed_sense_floor: 0,
        remaining: 0,
        sd_threshold: f64::NAN,
    };

    // stage 1: per-word downsampling to the cap
    let mut by_word: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in table.tokens.iter().enumerate() {
        by_word.entry(t.word.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(policy.seed);
    let mut keep: Vec<usize> = Vec::with_capacity(initial);
    for (_, idxs) in by_word.iter() {
        if idxs.len() > policy.token_cap {
            let chosen = sample_without_replacement(&mut rng, idxs.len(), policy.token_cap);
            let mut picked: Vec<usize> = chosen.iter().map(|j| idxs[j]).collect();
            picked.sort_unstable();
            report.removed_cap += idxs.len() - picked.len();
            keep.extend(picked);
        } else {
            keep.extend(idxs.iter().copied());
        }
    }
    keep.sort_unstable();

    // stage 2: short-token exclusion
    let before = keep.len();
    keep.retain(|&i| table.tokens[i].samples.len() >= policy.min_points);
    report.removed_short = before - keep.len();

    // stage 3: diff-SD outlier exclusion on the post-cap, post-short dataset
    if !keep.is_empty() {
        let sds: Vec<f64> = keep
            .iter()
            .map(|&i| log_f0_diff_sd(&table.tokens[i].samples))
            .collect();
        let threshold = quantile(&sds, policy.sd_decile);
        report.sd_threshold = threshold;
        let before = keep.len();
        let kept: Vec<usize> = keep
            .iter()
            .zip(&sds)
            .filter(|(_, &sd)| sd <= threshold)
            .map(|(&i, _)| i)
            .collect();
        keep = kept;
        report.removed_outlier = before - keep.len();
    }

    // stage 4: word-count floor
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for &i in &keep {
        *counts.entry(table.tokens[i].word.as_str()).or_default() += 1;
    }
    let before = keep.len();
    keep.retain(|&i| counts[table.tokens[i].word.as_str()] >= policy.min_word_count);
    report.removed_word_floor = before - keep.len();

    // stage 5: words contributed by too few speakers
    let mut speakers: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for &i in &keep {
        let t = &table.tokens[i];
        let list = speakers.entry(t.word.as_str()).or_default();
        if !list.contains(&t.speaker.as_str()) {
            list.push(t.speaker.as_str());
        }
    }
    let before = keep.len();
    keep.retain(|&i| speakers[table.tokens[i].word.as_str()].len() >= policy.min_speakers);
    report.removed_speaker_floor = before - keep.len();

    // stage 6: optional sense floor (tokens without a sense are excluded too)
    if let Some(min_sense) = policy.min_sense_count {
        let mut sense_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for &i in &keep {
            if let Some(s) = &table.tokens[i].sense {
                *sense_counts.entry(s.as_str()).or_default() += 1;
            }
        }
        let before = keep.len();
        keep.retain(|&i| {
            table.tokens[i]
                .sense
                .as_deref()
                .map(|s| sense_counts[s] >= min_sense)
                .unwrap_or(false)
        });
        report.removed_sense_floor = before - keep.len();
    }

    if keep.is_empty() {
        return Err(CorpusError::AllTokensFiltered);
    }
    report.remaining = keep.len();
    let tokens = keep.into_iter().map(|i| table.tokens[i].clone()).collect();
    Ok((TokenTable { tokens }, report))
}

/// Expands a token table into the long-format modeling table: one row per
/// F0 sample with normalized time, log F0 and replicated covariates.
/// Token duration enters as its natural log.
pub fn build_observation_table(table: &TokenTable) -> Result<ObservationTable, CorpusError> {
    let n_rows: usize = table.tokens.iter().map(|t| t.samples.len()).sum();
    let mut time = Vec::with_capacity(n_rows);
    let mut log_f0 = Vec::with_capacity(n_rows);
    let mut duration = Vec::with_capacity(n_rows);
    let mut position = Vec::with_capacity(n_rows);
    let mut bigram_prev = Vec::with_capacity(n_rows);
    let mut bigram_fol = Vec::with_capacity(n_rows);
    let mut gender = Vec::with_capacity(n_rows);
    let mut speaker = Vec::with_capacity(n_rows);
    let mut tone = Vec::with_capacity(n_rows);
    let mut word = Vec::with_capacity(n_rows);
    let mut sense = Vec::with_capacity(n_rows);
    let mut segments: [Vec<String>; 6] = Default::default();
    let all_sense = table.tokens.iter().all(|t| t.sense.is_some());

    let mut token_ids = Vec::with_capacity(table.tokens.len());
    let mut token_starts = Vec::with_capacity(table.tokens.len() + 1);
    token_starts.push(0usize);
    for t in &table.tokens {
        let rows = normalize_time(&t.samples)?;
        for (tn, lf0) in rows {
            time.push(tn);
            log_f0.push(lf0);
            duration.push(t.duration_s.ln());
            position.push(t.utterance_position);
            bigram_prev.push(t.bigram_previous);
            bigram_fol.push(t.bigram_following);
            gender.push(t.gender.to_string());
            speaker.push(t.speaker.clone());
            tone.push(t.adjacent_tone.to_string());
            word.push(t.word.clone());
            if all_sense {
                sense.push(t.sense.clone().unwrap());
            }
            segments[0].push(t.vowel1.to_string());
            segments[1].push(t.vowel2.to_string());
            segments[2].push(t.onset1.to_string());
            segments[3].push(t.onset2.to_string());
            segments[4].push(t.syllable1.to_string());
            segments[5].push(t.syllable2.to_string());
        }
        token_ids.push(t.token_id.clone());
        token_starts.push(time.len());
    }

    let mut frame = Frame::new(n_rows);
    let add = |frame: &mut Frame, name: &str, v: Vec<f64>| {
        frame.add_numeric(name, v).expect("fresh frame")
    };
    add(&mut frame, "time", time);
    add(&mut frame, "log_f0", log_f0);
    add(&mut frame, "duration", duration);
    add(&mut frame, "utterance_position", position);
    add(&mut frame, "bigram_previous", bigram_prev);
    add(&mut frame, "bigram_following", bigram_fol);
    frame
        .add_factor("gender", FactorColumn::from_values(&gender))
        .expect("fresh frame");
    frame
        .add_factor("speaker", FactorColumn::from_values(&speaker))
        .expect("fresh frame");
    frame
        .add_factor("adjacent_tone", FactorColumn::from_values(&tone))
        .expect("fresh frame");
    frame
        .add_factor("word", FactorColumn::from_values(&word))
        .expect("fresh frame");
    if all_sense {
        frame
            .add_factor("sense", FactorColumn::from_values(&sense))
            .expect("fresh frame");
    }
    let seg_names = ["vowel1", "vowel2", "onset1", "onset2", "syllable1", "syllable2"];
    for (name, values) in seg_names.iter().zip(&segments) {
        frame
            .add_factor(name, FactorColumn::from_values(values))
            .expect("fresh frame");
    }
    Ok(ObservationTable {
        frame,
        token_ids,
        token_starts,
    })
}
