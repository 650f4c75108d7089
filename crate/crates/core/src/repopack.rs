//! Repository-level long-context packing: language filtering, per-repo
//! concatenation with separator tokens, and exactly two randomized file
//! orderings per repository.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{length_stats, LengthStats, LengthUnit, RepoGroup};
use crate::tokenizer::{SpecialName, Tokenize};

/// Languages selected for the long-context stage.
pub const DEFAULT_LANGUAGES: &[&str] = &["python", "c", "cpp", "go", "java", "javascript"];

/// Attempt bound for drawing two distinct permutations.
const REDRAW_ATTEMPTS: usize = 64;

/// One concatenated ordering of a repository's files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoPack {
    pub repo_id: String,
    pub ordering_index: u8,
    /// File ids in concatenation order.
    pub file_order: Vec<String>,
    /// Files joined with the separator surface between them.
    pub text: String,
    /// Character (start, end) of each file's text, in pack order.
    pub file_char_ranges: Vec<(usize, usize)>,
}

#[derive(Debug, Error)]
pub enum RepoPackError {
    #[error("repository `{0}` has no files")]
    EmptyGroup(String),
    #[error("could not draw two distinct orderings for `{0}` after {REDRAW_ATTEMPTS} attempts")]
    RedrawExhausted(String),
    #[error("no packs to report on")]
    EmptyReport,
}

/// Keep only files whose language tag is in `allowed`.
pub fn filter_languages(group: &RepoGroup, allowed: &[&str]) -> RepoGroup {
    RepoGroup {
        repo_id: group.repo_id.clone(),
        files: group
            .files
            .iter()
            .filter(|f| allowed.contains(&f.language.as_str()))
            .cloned()
            .collect(),
    }
}

/// Concatenate a repository's files in two independently drawn uniform
/// permutations, re-drawn until distinct when the permutation space has
/// at least two elements. Single-file repositories yield one pack.
/// Deterministic per (seed, repo_id).
pub fn pack_repository(group: &RepoGroup, seed: u64) -> Result<Vec<RepoPack>, RepoPackError> {
    if group.files.is_empty() {
        return Err(RepoPackError::EmptyGroup(group.repo_id.clone()));
    }
    let mut rng = repo_rng(seed, &group.repo_id);
    let n = group.files.len();
    let first = permutation(&mut rng, n);
    // Distinct permutations exist iff n >= 2 (and any two differing files,
    // which holds at file granularity since ids are unique).
    let orders: Vec<Vec<usize>> = if n < 2 {
        vec![first]
    } else {
        let mut second = permutation(&mut rng, n);
        let mut attempts = 0;
        while second == first {
            attempts += 1;
            if attempts > REDRAW_ATTEMPTS {
                return Err(RepoPackError::RedrawExhausted(group.repo_id.clone()));
            }
            second = permutation(&mut rng, n);
        }
        vec![first, second]
    };
    Ok(orders
        .into_iter()
        .enumerate()
        .map(|(i, order)| build_pack(group, i as u8, &order))
        .collect())
}

fn build_pack(group: &RepoGroup, ordering_index: u8, order: &[usize]) -> RepoPack {
    let separator = SpecialName::RepoContinuation.default_surface();
    let mut text = String::new();
    let mut file_char_ranges = Vec::with_capacity(order.len());
    let mut file_order = Vec::with_capacity(order.len());
    let mut chars = 0usize;
    for (i, &idx) in order.iter().enumerate() {
        let file = &group.files[idx];
        if i > 0 {
            text.push_str(separator);
            chars += separator.chars().count();
        }
        let len = file.text.chars().count();
        file_char_ranges.push((chars, chars + len));
        chars += len;
        text.push_str(&file.text);
        file_order.push(file.id.clone());
    }
    RepoPack {
        repo_id: group.repo_id.clone(),
        ordering_index,
        file_order,
        text,
        file_char_ranges,
    }
}

fn repo_rng(seed: u64, repo_id: &str) -> ChaCha12Rng {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(repo_id.as_bytes());
    ChaCha12Rng::from_seed(hasher.finalize().into())
}

fn permutation<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Length statistics over pack token lengths plus the context-length
/// bracketing flag used to justify the configured context window.
#[derive(Debug, Clone, Serialize)]
pub struct ContextReport {
    pub stats: LengthStats,
    pub context_length: u64,
    /// True when median <= context length <= mean, the relation the
    /// window was chosen from.
    pub brackets_context: bool,
}

pub fn target_context_report<T: Tokenize>(
    packs: &[RepoPack],
    tokenizer: &T,
    context_length: u64,
) -> Result<ContextReport, RepoPackError> {
    if packs.is_empty() {
        return Err(RepoPackError::EmptyReport);
    }
    let lengths: Vec<u64> = packs
        .iter()
        .map(|p| pack_token_len(p, tokenizer))
        .collect();
    let stats = length_stats(&lengths, LengthUnit::Tokens).expect("non-empty");
    let brackets_context = stats.median <= context_length as f64 && context_length as f64 <= stats.mean;
    Ok(ContextReport {
        stats,
        context_length,
        brackets_context,
    })
}

/// Token length of a pack: file tokens plus one separator token between
/// files (the separator is a single special token in token space).
pub fn pack_token_len<T: Tokenize>(pack: &RepoPack, tokenizer: &T) -> u64 {
    let mut total = 0u64;
    for &(start, end) in &pack.file_char_ranges {
        let file_text: String = pack.text.chars().skip(start).take(end - start).collect();
        total += tokenizer.encode(&file_text).len() as u64;
    }
    total + pack.file_char_ranges.len().saturating_sub(1) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_corpus, Document, SynthSpec};
    use crate::tokenizer::ByteTokenizer;
    use std::collections::BTreeSet;

    fn file(id: &str, lang: &str, text: &str) -> Document {
        Document {
            id: id.into(),
            repo_id: "r".into(),
            path: format!("{id}.{lang}"),
            language: lang.into(),
            text: text.into(),
            stars: None,
        }
    }

    #[test]
    fn default_language_filter() {
        let group = RepoGroup {
            repo_id: "r".into(),
            files: vec![file("a", "python", "x"), file("b", "ruby", "y"), file("c", "go", "z")],
        };
        let filtered = filter_languages(&group, DEFAULT_LANGUAGES);
        let langs: Vec<_> = filtered.files.iter().map(|f| f.language.as_str()).collect();
        assert_eq!(langs, ["python", "go"]);
        assert!(filter_languages(&group, &[]).files.is_empty());
        let all = ["python", "ruby", "go"];
        assert_eq!(filter_languages(&group, &all).files, group.files);
    }

    #[test]
    fn three_file_repo_gets_two_distinct_orderings() {
        let group = RepoGroup {
            repo_id: "r".into(),
            files: vec![file("a", "c", "AA"), file("b", "c", "BB"), file("c", "c", "CC")],
        };
        let packs = pack_repository(&group, 13).unwrap();
        assert_eq!(packs.len(), 2);
        assert_ne!(packs[0].file_order, packs[1].file_order);
        let sep = SpecialName::RepoContinuation.default_surface();
        for pack in &packs {
            assert_eq!(pack.text.matches(sep).count(), 2);
            assert_eq!(pack.file_char_ranges.len(), 3);
        }
    }

    #[test]
    fn single_file_repo_gets_one_pack() {
        let group = RepoGroup {
            repo_id: "r".into(),
            files: vec![file("a", "c", "solo")],
        };
        let packs = pack_repository(&group, 13).unwrap();
        assert_eq!(packs.len(), 1);
        assert_eq!(packs[0].text, "solo");
        assert_eq!(packs[0].file_char_ranges, vec![(0, 4)]);
    }

    #[test]
    fn empty_group_is_an_error() {
        let group = RepoGroup {
            repo_id: "r".into(),
            files: vec![],
        };
        assert!(pack_repository(&group, 0).is_err());
    }

    #[test]
    fn packing_is_deterministic() {
        let corpus = synthesize_corpus(
            3,
            &SynthSpec {
                n_repos: 10,
                ..SynthSpec::default()
            },
        )
        .unwrap();
        for group in &corpus {
            assert_eq!(pack_repository(group, 99).unwrap(), pack_repository(group, 99).unwrap());
        }
    }

    #[test]
    fn pack_files_are_a_permutation_of_the_repo() {
        let corpus = synthesize_corpus(
            31,
            &SynthSpec {
                n_repos: 200,
                ..SynthSpec::default()
            },
        )
        .unwrap();
        for group in &corpus {
            let expected: BTreeSet<&str> = group.files.iter().map(|f| f.id.as_str()).collect();
            for pack in pack_repository(group, 5).unwrap() {
                let got: BTreeSet<&str> = pack.file_order.iter().map(|s| s.as_str()).collect();
                assert_eq!(got, expected);
                // Per-file char ranges recover each file's text.
                for (fid, &(start, end)) in pack.file_order.iter().zip(&pack.file_char_ranges) {
                    let original = &group.files.iter().find(|f| &f.id == fid).unwrap().text;
                    let slice: String =
                        pack.text.chars().skip(start).take(end - start).collect();
                    assert_eq!(&slice, original);
                }
            }
        }
    }

    #[test]
    fn context_report_single_pack() {
        let tok = ByteTokenizer::default();
        let group = RepoGroup {
            repo_id: "r".into(),
            files: vec![file("a", "c", "0123456789")],
        };
        let packs = pack_repository(&group, 0).unwrap();
        let report = target_context_report(&packs, &tok, 16384).unwrap();
        assert_eq!(report.stats.median, 10.0);
        assert_eq!(report.stats.mean, 10.0);
        assert!(!report.brackets_context);
        assert!(target_context_report(&[], &tok, 16384).is_err());
    }

    #[test]
    fn context_report_matches_corpus_stats() {
        let tok = ByteTokenizer::default();
        let corpus = synthesize_corpus(
            8,
            &SynthSpec {
                n_repos: 40,
                ..SynthSpec::default()
            },
        )
        .unwrap();
        let packs: Vec<RepoPack> = corpus
            .iter()
            .flat_map(|g| pack_repository(g, 4).unwrap())
            .collect();
        let lengths: Vec<u64> = packs.iter().map(|p| pack_token_len(p, &tok)).collect();
        let direct = length_stats(&lengths, LengthUnit::Tokens).unwrap();
        let report = target_context_report(&packs, &tok, 16384).unwrap();
        assert_eq!(report.stats, direct);
    }
}
