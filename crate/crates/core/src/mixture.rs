//! Dataset mixture: the published sampling table, its consistency checks,
//! quota planning, and deterministic interleaved sampling.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::tokenizer::Tokenize;

/// Fractional total token count from the published table.
pub const TABLE_TOTAL_TOKENS: f64 = 1_322_090_182_830.13;

pub const WEIGHT_SUM_TOL: f64 = 1e-3;
pub const ROW_WEIGHT_TOL: f64 = 5e-5;
pub const CODE_SHARE_TARGET: f64 = 0.80;
pub const CODE_SHARE_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Category {
    Code,
    Technical,
    Math,
    Web,
}

/// One row of the sampling table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub weight: f64,
    pub tokens_sampled: f64,
    pub epochs: f64,
    pub category: Category,
}

impl DatasetSpec {
    /// Size of the underlying source: tokens_sampled / epochs.
    pub fn source_size(&self) -> f64 {
        self.tokens_sampled / self.epochs
    }
}

/// The 26-row training-set table, transcribed as printed.
pub fn builtin_table() -> Vec<DatasetSpec> {
    use Category::*;
    let rows: [(&str, f64, f64, f64, Category); 26] = [
        ("StarCoder C", 0.0924, 122_202_657_912.0, 6.0, Code),
        ("StarCoder CPP", 0.0734, 97_032_316_152.0, 6.0, Code),
        ("StarCoder Java", 0.1029, 136_010_698_326.0, 6.0, Code),
        ("StarCoder Javascript", 0.0858, 113_469_977_934.0, 6.0, Code),
        ("StarCoder CSS", 0.0146, 19_285_266_328.0, 4.0, Code),
        ("StarCoder Go", 0.0258, 34_092_166_492.0, 4.0, Code),
        ("StarCoder HTML", 0.0298, 39_354_336_188.0, 4.0, Code),
        ("StarCoder Ruby", 0.0061, 8_011_730_332.0, 4.0, Code),
        ("StarCoder Rust", 0.0122, 16_131_445_656.0, 6.0, Code),
        ("StarCoder Markdown", 0.1154, 152_629_435_716.0, 6.0, Code),
        ("StarCoder Shell", 0.0033, 4_323_112_416.0, 4.0, Code),
        ("StarCoder Php", 0.0764, 100_958_420_706.0, 6.0, Code),
        ("StarCoder Sql", 0.0247, 32_645_285_202.0, 6.0, Code),
        ("StarCoder R", 0.0003, 415_957_896.0, 4.0, Code),
        ("StarCoder Typescript", 0.0224, 29_634_722_636.0, 4.0, Code),
        ("StarCoder Python", 0.1067, 141_067_150_184.0, 8.0, Code),
        ("StarCoder Jupyter", 0.0060, 7_941_540_044.0, 4.0, Code),
        ("StarCoder Restructured Text", 0.0032, 4_179_202_492.0, 4.0, Code),
        ("Github Issues", 0.0231, 46_302_993_820.0, 2.5, Technical),
        ("Github Diffs", 0.0019, 3_817_060_582.0, 2.0, Technical),
        ("StackExchange", 0.0019, 3_817_060_582.0, 2.0, Technical),
        ("Synthetic", 0.0006, 819_864_748.0, 3.0, Technical),
        ("Proof Pile", 0.0384, 50_780_637_096.0, 1.0, Math),
        ("Meta Math QA", 0.0003, 83_663_501.0, 4.0, Math),
        ("Arxiv", 0.0213, 28_097_511_912.0, 1.0, Web),
        ("Refined Web", 0.0220, 29_114_185_066.13, 0.5, Web),
    ];
    rows.iter()
        .map(|&(name, weight, tokens_sampled, epochs, category)| DatasetSpec {
            name: name.to_string(),
            weight,
            tokens_sampled,
            epochs,
            category,
        })
        .collect()
}

/// Outcome of a single table check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Full validation report; violations are collected, never fatal.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    /// Rows that share identical (weight, tokens_sampled) pairs — flagged
    /// as possible transcription artifacts, not violations.
    pub duplicate_rows: Vec<(String, String)>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Check (a) weight sum, (b) per-row weight vs tokens/total, (c) code
/// category share around 80 percent.
pub fn validate_table(specs: &[DatasetSpec], total: f64) -> ValidationReport {
    let mut checks = Vec::new();

    let weight_sum: f64 = specs.iter().map(|s| s.weight).sum();
    checks.push(CheckResult {
        name: "weight_sum".into(),
        passed: (weight_sum - 1.0).abs() <= WEIGHT_SUM_TOL,
        detail: format!("sum of weights = {weight_sum:.4}, tolerance {WEIGHT_SUM_TOL}"),
    });

    for spec in specs {
        let implied = spec.tokens_sampled / total;
        let diff = (spec.weight - implied).abs();
        checks.push(CheckResult {
            name: format!("row_weight[{}]", spec.name),
            passed: diff <= ROW_WEIGHT_TOL,
            detail: format!(
                "weight {:.4} vs tokens/total {:.6}, |diff| = {:.2e}",
                spec.weight, implied, diff
            ),
        });
    }

    let code_share: f64 = specs
        .iter()
        .filter(|s| s.category == Category::Code)
        .map(|s| s.weight)
        .sum();
    checks.push(CheckResult {
        name: "code_share".into(),
        passed: (code_share - CODE_SHARE_TARGET).abs() <= CODE_SHARE_TOL,
        detail: format!("code-category weight share = {code_share:.4}, target 0.80 +/- 0.01"),
    });

    let mut duplicate_rows = Vec::new();
    for (i, a) in specs.iter().enumerate() {
        for b in specs.iter().skip(i + 1) {
            if a.weight == b.weight && a.tokens_sampled == b.tokens_sampled {
                duplicate_rows.push((a.name.clone(), b.name.clone()));
            }
        }
    }

    ValidationReport {
        checks,
        duplicate_rows,
    }
}

/// Per-source token quotas derived from the table weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub total_budget: u64,
    pub quotas: BTreeMap<String, u64>,
    pub epochs: BTreeMap<String, f64>,
    pub source_sizes: BTreeMap<String, f64>,
}

#[derive(Debug, Error)]
pub enum MixtureError {
    #[error("total budget must be positive")]
    NonPositiveBudget,
    #[error("source `{0}` has non-positive epochs")]
    ZeroEpochs(String),
    #[error("no source registered for plan entry `{0}`")]
    MissingSource(String),
    #[error("source `{0}` is empty but has a nonzero quota")]
    EmptySource(String),
}

/// Largest-remainder apportionment of the budget across weights, so the
/// quotas sum to the budget exactly and each quota is within one token of
/// weight x budget.
pub fn plan_mixture(specs: &[DatasetSpec], total_budget: u64) -> Result<MixturePlan, MixtureError> {
    if total_budget == 0 && !specs.is_empty() {
        // Zero budget is allowed; every quota is zero.
        return Ok(MixturePlan {
            total_budget,
            quotas: specs.iter().map(|s| (s.name.clone(), 0)).collect(),
            epochs: specs.iter().map(|s| (s.name.clone(), s.epochs)).collect(),
            source_sizes: specs
                .iter()
                .map(|s| (s.name.clone(), s.source_size()))
                .collect(),
        });
    }
    let weight_sum: f64 = specs.iter().map(|s| s.weight).sum();
    if weight_sum <= 0.0 {
        return Err(MixtureError::NonPositiveBudget);
    }
    let mut quotas = BTreeMap::new();
    let mut epochs = BTreeMap::new();
    let mut source_sizes = BTreeMap::new();
    // (remainder, input index) pairs for the leftover tokens.
    let mut floors = Vec::with_capacity(specs.len());
    let mut assigned: u64 = 0;
    for (idx, spec) in specs.iter().enumerate() {
        if spec.epochs <= 0.0 {
            return Err(MixtureError::ZeroEpochs(spec.name.clone()));
        }
        let exact = spec.weight / weight_sum * total_budget as f64;
        let floor = exact.floor() as u64;
        assigned += floor;
        floors.push((exact - floor as f64, idx, floor));
        epochs.insert(spec.name.clone(), spec.epochs);
        source_sizes.insert(spec.name.clone(), spec.source_size());
    }
    let mut leftover = total_budget - assigned;
    floors.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &mut (_, idx, ref mut floor) in floors.iter_mut() {
        if leftover > 0 {
            *floor += 1;
            leftover -= 1;
        }
        quotas.insert(specs[idx].name.clone(), *floor);
    }
    debug_assert_eq!(quotas.values().sum::<u64>(), total_budget);
    Ok(MixturePlan {
        total_budget,
        quotas,
        epochs,
        source_sizes,
    })
}

/// A document drawn from the interleaved stream, with its source name and
/// token cost under the reference tokenizer.
#[derive(Debug, Clone)]
pub struct SampledDoc {
    pub source: String,
    pub doc: Document,
    pub tokens: u64,
}

/// Interleave sources into one deterministic stream.
///
/// Each step draws a source with probability proportional to its
/// remaining quota. A source cycles (new epoch, reshuffled order) when its
/// documents run out before the quota; it retires when its next document
/// no longer fits the remaining quota, which keeps per-source emitted
/// tokens <= quota and >= quota - max document length.
pub fn sample_stream<T: Tokenize>(
    plan: &MixturePlan,
    sources: &BTreeMap<String, Vec<Document>>,
    tokenizer: &T,
    seed: u64,
) -> Result<Vec<SampledDoc>, MixtureError> {
    struct SourceState {
        name: String,
        docs: Vec<(Document, u64)>,
        order: Vec<usize>,
        cursor: usize,
        epoch: u64,
        remaining: u64,
    }

    let mut states = Vec::new();
    for (name, &quota) in &plan.quotas {
        let docs = sources
            .get(name)
            .ok_or_else(|| MixtureError::MissingSource(name.clone()))?;
        if quota == 0 {
            continue;
        }
        if docs.is_empty() {
            return Err(MixtureError::EmptySource(name.clone()));
        }
        let docs: Vec<(Document, u64)> = docs
            .iter()
            .map(|d| (d.clone(), tokenizer.encode(&d.text).len() as u64))
            .collect();
        let order = epoch_order(seed, name, 0, docs.len());
        states.push(SourceState {
            name: name.clone(),
            docs,
            order,
            cursor: 0,
            epoch: 0,
            remaining: quota,
        });
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    loop {
        let total_remaining: u64 = states.iter().map(|s| s.remaining).sum();
        if total_remaining == 0 {
            break;
        }
        // Weighted draw proportional to remaining quota.
        let mut pick = rng.gen_range(0..total_remaining);
        let idx = states
            .iter()
            .position(|s| {
                if pick < s.remaining {
                    true
                } else {
                    pick -= s.remaining;
                    false
                }
            })
            .expect("total_remaining > 0");
        let state = &mut states[idx];
        if state.cursor == state.order.len() {
            state.epoch += 1;
            state.order = epoch_order(seed, &state.name, state.epoch, state.docs.len());
            state.cursor = 0;
        }
        let (doc, tokens) = &state.docs[state.order[state.cursor]];
        if *tokens > state.remaining {
            // Next document overshoots the quota: retire the source.
            state.remaining = 0;
            continue;
        }
        state.cursor += 1;
        state.remaining -= *tokens;
        out.push(SampledDoc {
            source: state.name.clone(),
            doc: doc.clone(),
            tokens: *tokens,
        });
    }
    Ok(out)
}

/// Per-epoch document order, seeded from (master seed, source, epoch).
fn epoch_order(seed: u64, name: &str, epoch: u64, n: usize) -> Vec<usize> {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update(epoch.to_le_bytes());
    let digest = hasher.finalize();
    let mut rng = ChaCha12Rng::from_seed(digest.into());
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}
