//! Fixed-length sequence packing and batch/token accounting.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{SpecialName, Tokenize};
use crate::TokenId;

/// A token stream entry: one document's ids plus optional per-file token
/// ranges carried through from long-context packing.
#[derive(Debug, Clone, PartialEq)]
pub struct DocTokens {
    pub ids: Vec<TokenId>,
    pub file_ranges: Vec<(usize, usize)>,
}

impl DocTokens {
    pub fn plain(ids: Vec<TokenId>) -> Self {
        DocTokens {
            ids,
            file_ranges: Vec::new(),
        }
    }
}

/// A file range projected into one packed sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileSpan {
    pub start: usize,
    pub end: usize,
    /// Set when the file continues in the next sequence (windowing).
    pub continued: bool,
}

/// Fixed-length training sequence. Padding only at the tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSequence {
    pub ids: Vec<TokenId>,
    /// Positions of END_OF_DOC separators.
    pub doc_boundaries: Vec<usize>,
    /// File token ranges within this sequence (long-context mode).
    pub file_boundaries: Vec<FileSpan>,
    pub pad_count: usize,
}

/// Document handling at sequence boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PackMode {
    /// Split documents across sequence boundaries (pretraining).
    #[default]
    Split,
    /// Never split; oversize documents go to the truncation policy (SFT).
    NoSplit(TruncatePolicy),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TruncatePolicy {
    #[default]
    Error,
    Truncate,
}

#[derive(Debug, Error)]
pub enum PackError {
    #[error("seq_len must be positive")]
    ZeroSeqLen,
    #[error("document of {len} tokens exceeds seq_len {seq_len} in no-split mode")]
    Oversize { len: usize, seq_len: usize },
    #[error("malformed sequence file: {0}")]
    Format(String),
    #[error("io error")]
    Io(#[from] std::io::Error),
}

/// Greedy fill. An END_OF_DOC token is injected after every document and
/// counted in conservation arithmetic; the final partial sequence is
/// padded at the tail with END_OF_DOC ids (pad_count records how many).
pub fn pack<T: Tokenize>(
    stream: &[DocTokens],
    seq_len: usize,
    mode: PackMode,
    tokenizer: &T,
) -> Result<Vec<PackedSequence>, PackError> {
    if seq_len == 0 {
        return Err(PackError::ZeroSeqLen);
    }
    let eod = tokenizer
        .special(SpecialName::EndOfDoc)
        .expect("registry holds END_OF_DOC")
        .id;

    let mut sequences = Vec::new();
    let mut current = SeqBuilder::new(seq_len);
    for doc in stream {
        let mut ids: &[TokenId] = &doc.ids;
        let mut ranges: Vec<(usize, usize)> = doc.file_ranges.clone();
        match mode {
            PackMode::Split => {
                // consume the document (plus its EOD) across sequences
                let mut offset = 0usize;
                loop {
                    let room = seq_len - current.ids.len();
                    if room == 0 {
                        sequences.push(current.finish(eod));
                        current = SeqBuilder::new(seq_len);
                        continue;
                    }
                    let take = room.min(ids.len());
                    current.push_slice(&ids[..take], &ranges, offset);
                    ids = &ids[take..];
                    offset += take;
                    if ids.is_empty() {
                        if current.ids.len() == seq_len {
                            sequences.push(current.finish(eod));
                            current = SeqBuilder::new(seq_len);
                        }
                        current.push_eod(eod);
                        break;
                    }
                }
            }
            PackMode::NoSplit(policy) => {
                let needed = ids.len() + 1; // + EOD
                let owned;
                if needed > seq_len {
                    match policy {
                        TruncatePolicy::Error => {
                            return Err(PackError::Oversize {
                                len: ids.len(),
                                seq_len,
                            })
                        }
                        TruncatePolicy::Truncate => {
                            owned = ids[..seq_len - 1].to_vec();
                            ids = &owned[..];
                            ranges.retain(|&(s, _)| s < seq_len - 1);
                            for r in &mut ranges {
                                r.1 = r.1.min(seq_len - 1);
                            }
                        }
                    }
                }
                if current.ids.len() + ids.len() + 1 > seq_len {
                    sequences.push(current.finish(eod));
                    current = SeqBuilder::new(seq_len);
                }
                current.push_slice(ids, &ranges, 0);
                current.push_eod(eod);
            }
        }
    }
    if !current.ids.is_empty() {
        sequences.push(current.finish(eod));
    }
    Ok(sequences)
}

struct SeqBuilder {
    seq_len: usize,
    ids: Vec<TokenId>,
    doc_boundaries: Vec<usize>,
    file_boundaries: Vec<FileSpan>,
}

impl SeqBuilder {
    fn new(seq_len: usize) -> Self {
        SeqBuilder {
            seq_len,
            ids: Vec::with_capacity(seq_len),
            doc_boundaries: Vec::new(),
            file_boundaries: Vec::new(),
        }
    }

    /// Append document tokens [offset, offset+slice.len()) and project any
    /// overlapping file ranges into sequence coordinates.
    fn push_slice(&mut self, slice: &[TokenId], ranges: &[(usize, usize)], offset: usize) {
        let base = self.ids.len();
        let end = offset + slice.len();
        self.ids.extend_from_slice(slice);
        for &(fs, fe) in ranges {
            let s = fs.max(offset);
            let e = fe.min(end);
            if s < e {
                self.file_boundaries.push(FileSpan {
                    start: base + (s - offset),
                    end: base + (e - offset),
                    continued: fe > end,
                });
            }
        }
    }

    fn push_eod(&mut self, eod: TokenId) {
        debug_assert!(self.ids.len() < self.seq_len);
        self.doc_boundaries.push(self.ids.len());
        self.ids.push(eod);
    }

    fn finish(mut self, eod: TokenId) -> PackedSequence {
        let pad_count = self.seq_len - self.ids.len();
        self.ids.resize(self.seq_len, eod);
        PackedSequence {
            ids: self.ids,
            doc_boundaries: self.doc_boundaries,
            file_boundaries: self.file_boundaries,
            pad_count,
        }
    }
}

/// Device/batch geometry for one training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub devices: u64,
    pub micro_batch: u64,
    pub grad_accum: u64,
    pub seq_len: u64,
}

impl BatchSpec {
    pub const fn new(devices: u64, micro_batch: u64, grad_accum: u64, seq_len: u64) -> Self {
        BatchSpec {
            devices,
            micro_batch,
            grad_accum,
            seq_len,
        }
    }
}

/// Global batch size in tokens: devices x micro_batch x grad_accum x seq_len.
pub fn tokens_per_step(b: BatchSpec) -> u64 {
    b.devices * b.micro_batch * b.grad_accum * b.seq_len
}

/// Running token totals per stage, on top of a base offset (the
/// equi-code-token counter: code tokens already seen by the base model).
pub fn stage_token_ledger(stages: &[(BatchSpec, u64)], base_tokens: u64) -> Vec<u64> {
    let mut totals = Vec::with_capacity(stages.len() + 1);
    let mut running = base_tokens;
    totals.push(running);
    for &(batch, steps) in stages {
        running += tokens_per_step(batch) * steps;
        totals.push(running);
    }
    totals
}

const MAGIC: &[u8; 4] = b"SQPK";
const VERSION: u32 = 1;

/// Write sequences as a binary record: header (magic, version, seq_len,
/// vocab size, sequence count) then little-endian u32 ids.
pub fn write_binary<W: Write, T: Tokenize>(
    mut w: W,
    sequences: &[PackedSequence],
    tokenizer: &T,
) -> Result<(), PackError> {
    let seq_len = sequences.first().map(|s| s.ids.len()).unwrap_or(0) as u32;
    w.write_all(MAGIC)?;
    for v in [VERSION, seq_len, tokenizer.vocab().size, sequences.len() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for seq in sequences {
        for &id in &seq.ids {
            w.write_all(&id.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a binary sequence record back into id arrays.
pub fn read_binary<R: Read>(mut r: R) -> Result<(u32, u32, Vec<Vec<TokenId>>), PackError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(PackError::Format("bad magic".into()));
    }
    let mut word = [0u8; 4];
    let mut next = || -> Result<u32, PackError> {
        r.read_exact(&mut word)?;
        Ok(u32::from_le_bytes(word))
    };
    let version = next()?;
    if version != VERSION {
        return Err(PackError::Format(format!("unsupported version {version}")));
    }
    let seq_len = next()?;
    let vocab = next()?;
    let count = next()?;
    let mut sequences = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut ids = Vec::with_capacity(seq_len as usize);
        for _ in 0..seq_len {
            ids.push(next()?);
        }
        sequences.push(ids);
    }
    Ok((seq_len, vocab, sequences))
}
