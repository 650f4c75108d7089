//! End-to-end staged pipeline: corpus -> mixture -> FIM / repo packing ->
//! fixed-length sequences, with a manifest that makes every run
//! reproducible from the manifest alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, Document, IngestMode, RepoGroup, SynthSpec};
use crate::fim;
use crate::mixture::{self, DatasetSpec, MixturePlan};
use crate::repopack;
use crate::seqpack::{self, DocTokens, PackMode, TruncatePolicy};
use crate::tokenizer::{ByteTokenizer, Tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Pretrain,
    LongContext,
    Sft,
}

impl Stage {
    /// Stage-consistent context length defaults.
    pub fn default_seq_len(self) -> usize {
        match self {
            Stage::Pretrain => 4096,
            Stage::LongContext => 16_384,
            Stage::Sft => 4096,
        }
    }
}

/// Where the documents come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CorpusSource {
    /// Line-delimited record files.
    Files(Vec<PathBuf>),
    /// Deterministic synthetic corpus.
    Synthetic { seed: u64, spec: SynthSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stage: Stage,
    pub seed: u64,
    pub source: CorpusSource,
    /// Optional mixture table; single implicit full-weight source if absent.
    pub table: Option<Vec<DatasetSpec>>,
    pub seq_len: Option<usize>,
    pub fim_rate: f64,
    /// Language filter for the long-context stage.
    pub languages: Vec<String>,
}

impl PipelineConfig {
    pub fn seq_len(&self) -> usize {
        self.seq_len.unwrap_or_else(|| self.stage.default_seq_len())
    }
}

/// Record of one run: enough to reproduce it byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config: PipelineConfig,
    /// SHA-256 of the serialized input corpus.
    pub input_hash: String,
    pub inferred_defaults: Vec<String>,
    pub counts: RunCounts,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunCounts {
    pub documents: u64,
    pub sequences: u64,
    pub non_pad_tokens: u64,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("corpus: {0}")]
    Corpus(#[from] corpus::CorpusError),
    #[error("mixture: {0}")]
    Mixture(#[from] mixture::MixtureError),
    #[error("fim: {0}")]
    Fim(#[from] fim::FimError),
    #[error("repopack: {0}")]
    RepoPack(#[from] repopack::RepoPackError),
    #[error("seqpack: {0}")]
    SeqPack(#[from] seqpack::PackError),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Run one stage end to end, writing `sequences.bin`, a FIM audit
/// sidecar, and `manifest.json` into `out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<Manifest, PipelineError> {
    fs::create_dir_all(out_dir)?;
    let tokenizer = ByteTokenizer::default();
    let mut inferred = Vec::new();
    if cfg.seq_len.is_none() {
        inferred.push(format!("seq_len={} (stage default)", cfg.seq_len()));
    }

    let groups = load_corpus(&cfg.source)?;
    let serialized = corpus::serialize(groups.iter().flat_map(|g| &g.files));
    let input_hash = hex_digest(serialized.as_bytes());
    let seq_len = cfg.seq_len();

    // Per-document audit record for the FIM sidecar.
    #[derive(Serialize)]
    struct AuditRow<'a> {
        doc: &'a str,
        mode: fim::FimMode,
        cuts: (usize, usize),
    }
    let mut audit = String::new();
    let mut push_audit = |doc: &str, ex: &fim::FimExample| {
        let row = AuditRow {
            doc,
            mode: ex.mode,
            cuts: (ex.prefix.1, ex.middle.1),
        };
        audit.push_str(&serde_json::to_string(&row).expect("audit row serializes"));
        audit.push('\n');
    };

    let mut n_docs = 0u64;
    let stream: Vec<DocTokens> = match cfg.stage {
        Stage::Pretrain | Stage::Sft => {
            let docs = mixed_documents(cfg, &groups, &tokenizer)?;
            n_docs = docs.len() as u64;
            let mut rng = derive_rng(cfg.seed, "fim");
            docs.iter()
                .map(|doc| {
                    let ex = fim::apply_fim(&doc.text, cfg.fim_rate, &mut rng, &tokenizer)?;
                    push_audit(&doc.id, &ex);
                    Ok(DocTokens::plain(ex.rendered))
                })
                .collect::<Result<_, PipelineError>>()?
        }
        Stage::LongContext => {
            let allowed: Vec<&str> = cfg.languages.iter().map(String::as_str).collect();
            let mut stream = Vec::new();
            let mut rng = derive_rng(cfg.seed, "fim");
            for group in &groups {
                let filtered = repopack::filter_languages(group, &allowed);
                if filtered.files.is_empty() {
                    continue;
                }
                for pack in repopack::pack_repository(&filtered, cfg.seed)? {
                    let fimmed =
                        fim::apply_fim_within_files(&pack, cfg.fim_rate, &mut rng, &tokenizer)?;
                    n_docs += 1;
                    for (fid, ex) in pack.file_order.iter().zip(&fimmed.examples) {
                        push_audit(fid, ex);
                    }
                    stream.push(DocTokens {
                        ids: fimmed.ids,
                        file_ranges: fimmed.file_ranges,
                    });
                }
            }
            stream
        }
    };

    let mode = match cfg.stage {
        Stage::Sft => PackMode::NoSplit(TruncatePolicy::Truncate),
        _ => PackMode::Split,
    };
    let sequences = seqpack::pack(&stream, seq_len, mode, &tokenizer)?;
    let non_pad: u64 = sequences
        .iter()
        .map(|s| (s.ids.len() - s.pad_count) as u64)
        .sum();

    let seq_path = out_dir.join("sequences.bin");
    let mut buf = Vec::new();
    seqpack::write_binary(&mut buf, &sequences, &tokenizer)?;
    fs::write(&seq_path, &buf)?;
    let audit_path = out_dir.join("fim_audit.jsonl");
    fs::write(&audit_path, &audit)?;

    let mut outputs = BTreeMap::new();
    outputs.insert("sequences.bin".to_string(), hex_digest(&buf));
    outputs.insert("fim_audit.jsonl".to_string(), hex_digest(audit.as_bytes()));

    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        input_hash,
        inferred_defaults: inferred,
        counts: RunCounts {
            documents: n_docs,
            sequences: sequences.len() as u64,
            non_pad_tokens: non_pad,
        },
        outputs,
    };
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Re-run a prior run from its manifest alone.
pub fn run_from_manifest(manifest_path: &Path, out_dir: &Path) -> Result<Manifest, PipelineError> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    run_pipeline(&manifest.config, out_dir)
}

fn load_corpus(source: &CorpusSource) -> Result<Vec<RepoGroup>, PipelineError> {
    match source {
        CorpusSource::Files(paths) => {
            let mut docs = Vec::new();
            for path in paths {
                let file = fs::File::open(path)?;
                let report = corpus::ingest(std::io::BufReader::new(file), IngestMode::Strict)?;
                docs.extend(report.documents);
            }
            Ok(corpus::group_by_repo(docs))
        }
        CorpusSource::Synthetic { seed, spec } => Ok(corpus::synthesize_corpus(*seed, spec)?),
    }
}

/// Flatten the corpus through the mixture layer. With a table, each table
/// row must name a language and draws its quota from matching documents;
/// without one, a single full-weight source over the whole corpus.
fn mixed_documents<T: Tokenize>(
    cfg: &PipelineConfig,
    groups: &[RepoGroup],
    tokenizer: &T,
) -> Result<Vec<Document>, PipelineError> {
    let all: Vec<Document> = groups.iter().flat_map(|g| g.files.iter().cloned()).collect();
    let (plan, sources): (MixturePlan, BTreeMap<String, Vec<Document>>) = match &cfg.table {
        None => {
            let budget: u64 = all
                .iter()
                .map(|d| tokenizer.encode(&d.text).len() as u64)
                .sum();
            let spec = vec![DatasetSpec {
                name: "corpus".to_string(),
                weight: 1.0,
                tokens_sampled: budget as f64,
                epochs: 1.0,
                category: mixture::Category::Code,
            }];
            let plan = mixture::plan_mixture(&spec, budget)?;
            (plan, [("corpus".to_string(), all)].into())
        }
        Some(table) => {
            let mut sources: BTreeMap<String, Vec<Document>> = BTreeMap::new();
            for spec in table {
                let matching: Vec<Document> = all
                    .iter()
                    .filter(|d| d.language.eq_ignore_ascii_case(&spec.name))
                    .cloned()
                    .collect();
                sources.insert(spec.name.clone(), matching);
            }
            let budget: u64 = all
                .iter()
                .map(|d| tokenizer.encode(&d.text).len() as u64)
                .sum();
            (mixture::plan_mixture(table, budget)?, sources)
        }
    };
    let stream = mixture::sample_stream(&plan, &sources, tokenizer, cfg.seed)?;
    Ok(stream.into_iter().map(|s| s.doc).collect())
}

fn derive_rng(seed: u64, label: &str) -> rand_chacha::ChaCha12Rng {
    use rand::SeedableRng;
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    rand_chacha::ChaCha12Rng::from_seed(hasher.finalize().into())
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_config(stage: Stage, fim_rate: f64) -> PipelineConfig {
        PipelineConfig {
            stage,
            seed: 7,
            source: CorpusSource::Synthetic {
                seed: 7,
                spec: SynthSpec {
                    n_repos: 30,
                    ..SynthSpec::default()
                },
            },
            table: None,
            seq_len: None,
            fim_rate,
            languages: repopack::DEFAULT_LANGUAGES
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    #[test]
    fn long_context_sequences_are_16384_long() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = run_pipeline(&synth_config(Stage::LongContext, 0.5), dir.path()).unwrap();
        assert!(manifest.counts.sequences > 0);
        let bytes = fs::read(dir.path().join("sequences.bin")).unwrap();
        let (seq_len, _, seqs) = seqpack::read_binary(&bytes[..]).unwrap();
        assert_eq!(seq_len, 16_384);
        assert!(seqs.iter().all(|s| s.len() == 16_384));
    }

    #[test]
    fn pretrain_rate_zero_has_no_sentinels() {
        let dir = tempfile::tempdir().unwrap();
        run_pipeline(&synth_config(Stage::Pretrain, 0.0), dir.path()).unwrap();
        let bytes = fs::read(dir.path().join("sequences.bin")).unwrap();
        let (_, _, seqs) = seqpack::read_binary(&bytes[..]).unwrap();
        let tok = ByteTokenizer::default();
        let fim_ids: Vec<u32> = [
            crate::tokenizer::SpecialName::FimPrefix,
            crate::tokenizer::SpecialName::FimSuffix,
            crate::tokenizer::SpecialName::FimMiddle,
        ]
        .iter()
        .map(|&n| tok.special(n).unwrap().id)
        .collect();
        for seq in &seqs {
            assert!(seq.iter().all(|id| !fim_ids.contains(id)));
        }
    }

    #[test]
    fn rerun_from_manifest_is_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let first = run_pipeline(&synth_config(Stage::Pretrain, 0.5), dir_a.path()).unwrap();
        let second =
            run_from_manifest(&dir_a.path().join("manifest.json"), dir_b.path()).unwrap();
        assert_eq!(first.outputs, second.outputs);
        assert_eq!(
            fs::read(dir_a.path().join("sequences.bin")).unwrap(),
            fs::read(dir_b.path().join("sequences.bin")).unwrap()
        );
        assert_eq!(
            fs::read(dir_a.path().join("fim_audit.jsonl")).unwrap(),
            fs::read(dir_b.path().join("fim_audit.jsonl")).unwrap()
        );
    }

    #[test]
    fn sft_stage_never_splits_documents() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synth_config(Stage::Sft, 0.0);
        cfg.seq_len = Some(512);
        let manifest = run_pipeline(&cfg, dir.path()).unwrap();
        assert!(manifest.counts.sequences >= manifest.counts.documents / 512);
    }
}
