//! Corpus ingestion, repository grouping, synthetic fixtures, and length
//! statistics.

use std::collections::HashMap;
use std::io::BufRead;

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Languages the long-context stage selects by default.
pub const KNOWN_LANGUAGES: &[&str] = &[
    "python",
    "c",
    "cpp",
    "go",
    "java",
    "javascript",
    "css",
    "html",
    "ruby",
    "rust",
    "markdown",
    "shell",
    "php",
    "sql",
    "r",
    "typescript",
    "jupyter",
    "restructuredtext",
    "text",
];

/// One source file plus its repository metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub repo_id: String,
    #[serde(default)]
    pub path: String,
    #[serde(default)]
    pub language: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stars: Option<u64>,
}

impl Document {
    /// True when the language tag is absent from the registry. Unknown
    /// tags are preserved, only flagged.
    pub fn language_unknown(&self) -> bool {
        !KNOWN_LANGUAGES.contains(&self.language.as_str())
    }
}

/// All files sharing one repository id, in input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoGroup {
    pub repo_id: String,
    pub files: Vec<Document>,
}

/// Unit a set of lengths was measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LengthUnit {
    Chars,
    Tokens,
}

/// Order statistics over a list of lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub unit: LengthUnit,
    pub median: f64,
    pub mean: f64,
    pub min: u64,
    pub max: u64,
    /// Percentage of entries >= 4096 (inclusive boundary).
    pub pct_ge_4096: f64,
}

pub const LONG_ROW_THRESHOLD: u64 = 4096;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Record {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("length_stats requires a non-empty input")]
    EmptyLengths,
    #[error("invalid distribution parameters: {0}")]
    InvalidDistribution(String),
    #[error("io error")]
    Io(#[from] std::io::Error),
}

/// Ingestion mode. Strict fails on the first malformed record; lenient
/// collects per-line errors and keeps going.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IngestMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub documents: Vec<Document>,
    pub errors: Vec<CorpusError>,
}

// A raw record: like Document but with required fields optional so that a
// missing field can be reported by name instead of as a serde soup.
#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    repo_id: Option<String>,
    #[serde(default)]
    path: String,
    #[serde(default)]
    language: String,
    text: Option<String>,
    #[serde(default)]
    stars: Option<u64>,
}

/// Parse line-delimited records into documents, preserving input order.
pub fn ingest<R: BufRead>(reader: R, mode: IngestMode) -> Result<IngestReport, CorpusError> {
    let mut report = IngestReport::default();
    let mut seen = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line, line_no) {
            Ok(doc) => {
                if let Some(_prev) = seen.insert(doc.id.clone(), line_no) {
                    let err = CorpusError::DuplicateId(doc.id.clone());
                    match mode {
                        IngestMode::Strict => return Err(err),
                        IngestMode::Lenient => report.errors.push(err),
                    }
                } else {
                    report.documents.push(doc);
                }
            }
            Err(err) => match mode {
                IngestMode::Strict => return Err(err),
                IngestMode::Lenient => report.errors.push(err),
            },
        }
    }
    Ok(report)
}

fn parse_record(line: &str, line_no: usize) -> Result<Document, CorpusError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|source| CorpusError::Record {
        line: line_no,
        source,
    })?;
    let missing = |field| CorpusError::MissingField {
        line: line_no,
        field,
    };
    Ok(Document {
        id: raw.id.ok_or_else(|| missing("id"))?,
        repo_id: raw.repo_id.ok_or_else(|| missing("repo_id"))?,
        path: raw.path,
        language: raw.language,
        text: raw.text.ok_or_else(|| missing("text"))?,
        stars: raw.stars,
    })
}

/// Serialize documents back to the line-delimited record format.
pub fn serialize<'a>(docs: impl IntoIterator<Item = &'a Document>) -> String {
    let mut out = String::new();
    for doc in docs {
        out.push_str(&serde_json::to_string(doc).expect("document serializes"));
        out.push('\n');
    }
    out
}

/// Partition documents by repo_id. First-seen order of repositories;
/// within-group file order preserved from input.
pub fn group_by_repo(docs: impl IntoIterator<Item = Document>) -> Vec<RepoGroup> {
    let mut order = Vec::new();
    let mut groups: HashMap<String, Vec<Document>> = HashMap::new();
    for doc in docs {
        let entry = groups.entry(doc.repo_id.clone()).or_insert_with(|| {
            order.push(doc.repo_id.clone());
            Vec::new()
        });
        entry.push(doc);
    }
    order
        .into_iter()
        .map(|repo_id| RepoGroup {
            files: groups.remove(&repo_id).unwrap(),
            repo_id,
        })
        .collect()
}

/// Length law for synthetic corpora.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LengthLaw {
    /// Uniform over [min, max] characters.
    Uniform { min: u64, max: u64 },
    /// Log-normal with the given arithmetic mean and log-space sigma.
    LogNormal { mean: f64, sigma: f64 },
}

impl LengthLaw {
    fn validate(&self) -> Result<(), CorpusError> {
        match *self {
            LengthLaw::Uniform { min, max } if min > max => Err(CorpusError::InvalidDistribution(
                format!("uniform min {min} > max {max}"),
            )),
            LengthLaw::LogNormal { mean, sigma } if mean <= 0.0 || sigma < 0.0 => {
                Err(CorpusError::InvalidDistribution(format!(
                    "lognormal mean {mean}, sigma {sigma}"
                )))
            }
            _ => Ok(()),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match *self {
            LengthLaw::Uniform { min, max } => rng.gen_range(min..=max),
            LengthLaw::LogNormal { mean, sigma } => {
                // mu chosen so the arithmetic mean of the law is `mean`.
                let mu = mean.ln() - sigma * sigma / 2.0;
                let normal = rand_distr_normal(rng, mu, sigma);
                normal.exp().round().max(1.0) as u64
            }
        }
    }
}

// Box-Muller; enough for fixture generation, avoids a rand_distr dep.
fn rand_distr_normal<R: Rng>(rng: &mut R, mu: f64, sigma: f64) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    mu + sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Parameters for synthetic corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_repos: usize,
    pub length_law: LengthLaw,
    /// Files per repository drawn uniformly from this inclusive range.
    pub files_per_repo: (usize, usize),
    /// Languages assigned round-robin to files.
    pub languages: Vec<String>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_repos: 0,
            length_law: LengthLaw::LogNormal {
                mean: 1195.0,
                sigma: 1.4,
            },
            files_per_repo: (1, 8),
            languages: vec![
                "python".into(),
                "c".into(),
                "cpp".into(),
                "go".into(),
                "java".into(),
                "javascript".into(),
            ],
        }
    }
}

/// Deterministic synthetic corpus: same seed, byte-identical output.
pub fn synthesize_corpus(seed: u64, spec: &SynthSpec) -> Result<Vec<RepoGroup>, CorpusError> {
    spec.length_law.validate()?;
    if spec.files_per_repo.0 > spec.files_per_repo.1 || spec.files_per_repo.0 == 0 {
        return Err(CorpusError::InvalidDistribution(format!(
            "files_per_repo range {:?}",
            spec.files_per_repo
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut groups = Vec::with_capacity(spec.n_repos);
    for r in 0..spec.n_repos {
        let repo_id = format!("repo-{r:05}");
        let n_files = rng.gen_range(spec.files_per_repo.0..=spec.files_per_repo.1);
        let mut files = Vec::with_capacity(n_files);
        for f in 0..n_files {
            let len = spec.length_law.sample(&mut rng) as usize;
            let language = spec.languages[f % spec.languages.len()].clone();
            files.push(Document {
                id: format!("{repo_id}/file-{f:03}"),
                path: format!("src/file_{f:03}.{language}"),
                text: synth_text(&mut rng, len),
                stars: Some(rng.gen_range(0..2000)),
                language,
                repo_id: repo_id.clone(),
            });
        }
        groups.push(RepoGroup { repo_id, files });
    }
    Ok(groups)
}

fn synth_text<R: Rng>(rng: &mut R, len: usize) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789_(){};=+-*/ \n";
    let dist = rand::distributions::Slice::new(ALPHABET).unwrap();
    (0..len).map(|_| *dist.sample(rng) as char).collect()
}

/// Exact order statistics. Median of an even-length list is the mean of
/// the two central values.
pub fn length_stats(lengths: &[u64], unit: LengthUnit) -> Result<LengthStats, CorpusError> {
    if lengths.is_empty() {
        return Err(CorpusError::EmptyLengths);
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    };
    let sum: u128 = sorted.iter().map(|&v| v as u128).sum();
    let long = sorted.iter().filter(|&&v| v >= LONG_ROW_THRESHOLD).count();
    Ok(LengthStats {
        unit,
        median,
        mean: sum as f64 / n as f64,
        min: sorted[0],
        max: sorted[n - 1],
        pct_ge_4096: 100.0 * long as f64 / n as f64,
    })
}
