//! Fill-in-the-middle transform: random character-level tripartition,
//! PSM/SPM rearrangement with sentinel tokens, and the file-boundary
//! constrained variant used for long-context packs.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::repopack::RepoPack;
use crate::tokenizer::{SpecialName, Tokenize};
use crate::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FimMode {
    Psm,
    Spm,
    None,
}

/// One transformed document. Ranges are character offsets into the source
/// text; prefix, middle, suffix partition [0, len) contiguously.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FimExample {
    pub mode: FimMode,
    pub prefix: (usize, usize),
    pub middle: (usize, usize),
    pub suffix: (usize, usize),
    #[serde(skip)]
    pub rendered: Vec<TokenId>,
}

#[derive(Debug, Error)]
pub enum FimError {
    #[error("rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("file ranges are malformed: {0}")]
    MalformedBoundaries(String),
}

/// Split text into (prefix, middle, suffix) at two cut points drawn
/// uniformly over [0, len] with replacement, then sorted. Cuts are in
/// characters; empty segments are permitted.
pub fn split_document<'a, R: Rng>(text: &'a str, rng: &mut R) -> (&'a str, &'a str, &'a str) {
    let len = text.chars().count();
    let a = rng.gen_range(0..=len);
    let b = rng.gen_range(0..=len);
    split_at_cuts(text, a.min(b), a.max(b))
}

/// Deterministic tripartition at character cuts (a, b), a <= b.
pub fn split_at_cuts(text: &str, a: usize, b: usize) -> (&str, &str, &str) {
    debug_assert!(a <= b);
    let byte_at = |chars: usize| {
        text.char_indices()
            .nth(chars)
            .map(|(i, _)| i)
            .unwrap_or(text.len())
    };
    let (ba, bb) = (byte_at(a), byte_at(b));
    (&text[..ba], &text[ba..bb], &text[bb..])
}

/// Apply FIM with per-document probability `rate`; mode chosen between
/// PSM and SPM with uniform probability.
///
/// PSM: [FIM_PREFIX] prefix [FIM_SUFFIX] suffix [FIM_MIDDLE] middle.
/// SPM (joined): [FIM_PREFIX] [FIM_SUFFIX] suffix [FIM_MIDDLE] prefix middle.
pub fn apply_fim<R: Rng, T: Tokenize>(
    text: &str,
    rate: f64,
    rng: &mut R,
    tokenizer: &T,
) -> Result<FimExample, FimError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(FimError::InvalidRate(rate));
    }
    let len = text.chars().count();
    if rate == 0.0 || !rng.gen_bool(rate) {
        return Ok(FimExample {
            mode: FimMode::None,
            prefix: (0, len),
            middle: (len, len),
            suffix: (len, len),
            rendered: tokenizer.encode(text),
        });
    }
    let a = rng.gen_range(0..=len);
    let b = rng.gen_range(0..=len);
    let (a, b) = (a.min(b), a.max(b));
    let mode = if rng.gen_bool(0.5) { FimMode::Psm } else { FimMode::Spm };
    render(text, a, b, mode, tokenizer)
}

/// Render a FIM example at fixed cuts and mode. The rendering layout is
/// isolated here so an alternate sentinel layout is a one-line change.
pub fn render<T: Tokenize>(
    text: &str,
    a: usize,
    b: usize,
    mode: FimMode,
    tokenizer: &T,
) -> Result<FimExample, FimError> {
    let len = text.chars().count();
    let (prefix, middle, suffix) = split_at_cuts(text, a, b);
    let special = |name| {
        tokenizer
            .special(name)
            .expect("registry holds all FIM sentinels")
            .id
    };
    let mut rendered = Vec::new();
    match mode {
        FimMode::None => rendered = tokenizer.encode(text),
        FimMode::Psm => {
            rendered.push(special(SpecialName::FimPrefix));
            rendered.extend(tokenizer.encode(prefix));
            rendered.push(special(SpecialName::FimSuffix));
            rendered.extend(tokenizer.encode(suffix));
            rendered.push(special(SpecialName::FimMiddle));
            rendered.extend(tokenizer.encode(middle));
        }
        FimMode::Spm => {
            rendered.push(special(SpecialName::FimPrefix));
            rendered.push(special(SpecialName::FimSuffix));
            rendered.extend(tokenizer.encode(suffix));
            rendered.push(special(SpecialName::FimMiddle));
            rendered.extend(tokenizer.encode(prefix));
            rendered.extend(tokenizer.encode(middle));
        }
    }
    Ok(FimExample {
        mode,
        prefix: (0, a),
        middle: (a, b),
        suffix: (b, len),
        rendered,
    })
}

/// A repository pack tokenized with per-file FIM decisions. Separator
/// tokens sit between file token ranges and are never transformed.
#[derive(Debug, Clone, PartialEq)]
pub struct FimPack {
    pub repo_id: String,
    pub ids: Vec<TokenId>,
    /// Token (start, end) per file, in pack order.
    pub file_ranges: Vec<(usize, usize)>,
    /// Per-file transform record, aligned with `file_ranges`.
    pub examples: Vec<FimExample>,
}

/// Apply FIM independently per file of a repository pack. Sentinel spans
/// never cross a file boundary or a separator token by construction:
/// each file is transformed in isolation and then concatenated.
pub fn apply_fim_within_files<R: Rng, T: Tokenize>(
    pack: &RepoPack,
    rate: f64,
    rng: &mut R,
    tokenizer: &T,
) -> Result<FimPack, FimError> {
    let separator = tokenizer
        .special(SpecialName::RepoContinuation)
        .expect("separator registered")
        .id;
    let mut ids = Vec::new();
    let mut file_ranges = Vec::new();
    let mut examples = Vec::new();
    let n = pack.file_char_ranges.len();
    for (i, &(start, end)) in pack.file_char_ranges.iter().enumerate() {
        if start > end || end > pack.text.chars().count() {
            return Err(FimError::MalformedBoundaries(format!(
                "file {i}: chars {start}..{end}"
            )));
        }
        let file_text: String = pack.text.chars().skip(start).take(end - start).collect();
        let example = apply_fim(&file_text, rate, rng, tokenizer)?;
        let range_start = ids.len();
        ids.extend_from_slice(&example.rendered);
        file_ranges.push((range_start, ids.len()));
        examples.push(example);
        if i + 1 < n {
            ids.push(separator);
        }
    }
    Ok(FimPack {
        repo_id: pack.repo_id.clone(),
        ids,
        file_ranges,
        examples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_corpus, SynthSpec};
    use crate::repopack::pack_repository;
    use crate::tokenizer::ByteTokenizer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn sentinel_ids(tok: &ByteTokenizer) -> (TokenId, TokenId, TokenId) {
        (
            tok.special(SpecialName::FimPrefix).unwrap().id,
            tok.special(SpecialName::FimSuffix).unwrap().id,
            tok.special(SpecialName::FimMiddle).unwrap().id,
        )
    }

    #[test]
    fn split_at_fixed_cuts() {
        assert_eq!(split_at_cuts("abcdef", 2, 4), ("ab", "cd", "ef"));
        assert_eq!(split_at_cuts("abcdef", 3, 3), ("abc", "", "def"));
        assert_eq!(split_at_cuts("", 0, 0), ("", "", ""));
    }

    #[test]
    fn split_concatenation_restores_text() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let corpus = synthesize_corpus(
            5,
            &SynthSpec {
                n_repos: 250,
                ..SynthSpec::default()
            },
        )
        .unwrap();
        let mut n = 0;
        for doc in corpus.iter().flat_map(|g| &g.files) {
            let (p, m, s) = split_document(&doc.text, &mut rng);
            assert_eq!(format!("{p}{m}{s}"), doc.text);
            n += 1;
            if n >= 1000 {
                return;
            }
        }
    }

    #[test]
    fn split_handles_multibyte_chars() {
        let text = "αβγδε";
        let (p, m, s) = split_at_cuts(text, 1, 3);
        assert_eq!((p, m, s), ("α", "βγ", "δε"));
    }

    #[test]
    fn rate_zero_is_identity() {
        let tok = ByteTokenizer::default();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let ex = apply_fim("hello world", 0.0, &mut rng, &tok).unwrap();
        assert_eq!(ex.mode, FimMode::None);
        assert_eq!(ex.rendered, tok.encode("hello world"));
    }

    #[test]
    fn psm_layout_at_forced_cuts() {
        let tok = ByteTokenizer::default();
        let (p, s, m) = sentinel_ids(&tok);
        let ex = render("abcdef", 2, 4, FimMode::Psm, &tok).unwrap();
        let mut expect = vec![p];
        expect.extend(tok.encode("ab"));
        expect.push(s);
        expect.extend(tok.encode("ef"));
        expect.push(m);
        expect.extend(tok.encode("cd"));
        assert_eq!(ex.rendered, expect);
        assert_eq!((ex.prefix, ex.middle, ex.suffix), ((0, 2), (2, 4), (4, 6)));
    }

    #[test]
    fn spm_layout_at_forced_cuts() {
        let tok = ByteTokenizer::default();
        let (p, s, m) = sentinel_ids(&tok);
        let ex = render("abcdef", 2, 4, FimMode::Spm, &tok).unwrap();
        let mut expect = vec![p, s];
        expect.extend(tok.encode("ef"));
        expect.push(m);
        expect.extend(tok.encode("ab"));
        expect.extend(tok.encode("cd"));
        assert_eq!(ex.rendered, expect);
    }

    #[test]
    fn invalid_rate_rejected() {
        let tok = ByteTokenizer::default();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(apply_fim("x", 1.5, &mut rng, &tok).is_err());
    }

    #[test]
    fn transform_rate_and_mode_split_are_binomial() {
        let tok = ByteTokenizer::default();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut transformed = 0usize;
        let mut psm = 0usize;
        let n = 10_000;
        for i in 0..n {
            let text = format!("document body number {i} with some content");
            let ex = apply_fim(&text, 0.5, &mut rng, &tok).unwrap();
            if ex.mode != FimMode::None {
                transformed += 1;
                if ex.mode == FimMode::Psm {
                    psm += 1;
                }
            }
            // Character conservation at every draw.
            let (p, m, s) = split_at_cuts(&text, ex.prefix.1, ex.middle.1);
            assert_eq!(format!("{p}{m}{s}"), text);
        }
        let frac = transformed as f64 / n as f64;
        assert!((0.48..=0.52).contains(&frac), "transformed {frac}");
        let psm_frac = psm as f64 / transformed as f64;
        assert!((0.47..=0.53).contains(&psm_frac), "psm {psm_frac}");
    }

    #[test]
    fn within_files_rate_one_keeps_sentinels_inside_files() {
        let tok = ByteTokenizer::default();
        let corpus = synthesize_corpus(
            21,
            &SynthSpec {
                n_repos: 1,
                files_per_repo: (2, 2),
                ..SynthSpec::default()
            },
        )
        .unwrap();
        let packs = pack_repository(&corpus[0], 5).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let fimmed = apply_fim_within_files(&packs[0], 1.0, &mut rng, &tok).unwrap();
        let prefix_id = tok.special(SpecialName::FimPrefix).unwrap().id;
        let positions: Vec<usize> = fimmed
            .ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| id == prefix_id)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(positions.len(), 2);
        for (pos, range) in positions.iter().zip(&fimmed.file_ranges) {
            assert!(range.0 <= *pos && *pos < range.1);
        }
    }

    #[test]
    fn within_files_rate_zero_is_plain_concatenation() {
        let tok = ByteTokenizer::default();
        let corpus = synthesize_corpus(
            22,
            &SynthSpec {
                n_repos: 1,
                files_per_repo: (3, 3),
                ..SynthSpec::default()
            },
        )
        .unwrap();
        let packs = pack_repository(&corpus[0], 5).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let fimmed = apply_fim_within_files(&packs[0], 0.0, &mut rng, &tok).unwrap();
        assert_eq!(tok.decode(&fimmed.ids).unwrap(), packs[0].text);
        assert!(fimmed.examples.iter().all(|e| e.mode == FimMode::None));
    }

    #[test]
    fn within_files_boundary_containment_over_random_packs() {
        let tok = ByteTokenizer::default();
        let sentinels = sentinel_ids(&tok);
        let corpus = synthesize_corpus(
            23,
            &SynthSpec {
                n_repos: 250,
                ..SynthSpec::default()
            },
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut checked = 0;
        for group in &corpus {
            for pack in pack_repository(group, 40).unwrap() {
                let fimmed = apply_fim_within_files(&pack, 0.7, &mut rng, &tok).unwrap();
                // Every sentinel, in every file, sits inside that file's range.
                for (i, &id) in fimmed.ids.iter().enumerate() {
                    if [sentinels.0, sentinels.1, sentinels.2].contains(&id) {
                        assert!(
                            fimmed.file_ranges.iter().any(|&(s, e)| s <= i && i < e),
                            "sentinel at {i} outside every file range"
                        );
                    }
                }
                checked += 1;
                if checked >= 500 {
                    return;
                }
            }
        }
    }
}
