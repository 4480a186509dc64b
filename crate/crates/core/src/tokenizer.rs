//! Tokenization.
//!
//! Two tokenizers live here:
//!
//! - [`BpeVocab`]: a byte-level byte-pair-encoding vocabulary for the
//!   transformer. All 256 byte values are base tokens, so every UTF-8 input
//!   is representable and `UNK` is never emitted. Whitespace is an ordinary
//!   byte and there is no pre-tokenization, lowercasing or normalization.
//! - [`words`]: a plain Unicode-whitespace split used by the bag-of-words
//!   pipelines (punctuation stays attached, case is preserved).
//!
//! Id layout: `PAD = 0`, `UNK = 1`, `CLS = 2`, byte `b` is `3 + b`, and the
//! i-th merge creates id `259 + i`.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
const BYTE_OFFSET: u32 = 3;
/// 256 byte tokens plus the three specials.
pub const MIN_VOCAB: usize = 259;

const HEADER: &str = "bpe-vocab v1";

/// Split on Unicode whitespace. Used by every bag-of-words pipeline.
pub fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeVocab {
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    tokens: Vec<Vec<u8>>,
    token_to_id: HashMap<Vec<u8>, u32>,
}

/// Fixed-length encoded text: `CLS` first, `PAD` only as a suffix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Number of non-PAD positions.
    pub attn_len: usize,
}

impl TokenSequence {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    pub fn active(&self) -> &[u32] {
        &self.ids[..self.attn_len]
    }
}

impl BpeVocab {
    /// The pure byte vocabulary (no merges).
    pub fn bytes_only() -> Self {
        Self::from_merges(Vec::new()).expect("empty merge list is valid")
    }

    /// Rebuild a vocabulary from its ordered merge list.
    pub fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut tokens: Vec<Vec<u8>> = vec![Vec::new(); MIN_VOCAB];
        for b in 0..=255u8 {
            tokens[(BYTE_OFFSET + u32::from(b)) as usize] = vec![b];
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let next = tokens.len() as u32;
            for id in [a, b] {
                if id < BYTE_OFFSET || id >= next {
                    return Err(Error::Parse(format!(
                        "merge {rank} references id {id}, which is not defined before it"
                    )));
                }
            }
            if ranks.insert((a, b), rank as u32).is_some() {
                return Err(Error::Parse(format!("duplicate merge ({a}, {b})")));
            }
            let mut t = tokens[a as usize].clone();
            t.extend_from_slice(&tokens[b as usize]);
            tokens.push(t);
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, t) in tokens.iter().enumerate().skip(BYTE_OFFSET as usize) {
            token_to_id.entry(t.clone()).or_insert(id as u32);
        }
        Ok(BpeVocab {
            merges,
            ranks,
            tokens,
            token_to_id,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Byte string of a non-special token.
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        if id < BYTE_OFFSET {
            return None;
        }
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn id_of(&self, token: &[u8]) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    fn byte_id(b: u8) -> u32 {
        BYTE_OFFSET + u32::from(b)
    }

    /// Merge-applied token ids for `text`, without CLS, padding or truncation.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut ids: Vec<u32> = text.bytes().map(Self::byte_id).collect();
        loop {
            let best = ids
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min_by_key(|&(r, _)| r);
            let Some((rank, pair)) = best else { break };
            let new_id = MIN_VOCAB as u32 + rank;
            ids = merge_pair(&ids, pair, new_id);
        }
        ids
    }

    /// `CLS` + tokens, truncated to `max_len` and PAD-suffixed to exactly
    /// `max_len`. Requires `max_len >= 2`.
    pub fn encode(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        if max_len < 2 {
            return Err(Error::InvalidParameter(format!(
                "max_len must be >= 2, got {max_len}"
            )));
        }
        let mut ids = Vec::with_capacity(max_len);
        ids.push(CLS);
        ids.extend(self.tokenize(text).into_iter().take(max_len - 1));
        let attn_len = ids.len();
        ids.resize(max_len, PAD);
        Ok(TokenSequence { ids, attn_len })
    }

    /// Concatenate token bytes, dropping PAD and CLS. Truncation can cut a
    /// multi-byte character; such tails decode lossily.
    pub fn decode(&self, seq: &TokenSequence) -> Result<String> {
        self.decode_ids(&seq.ids)
    }

    pub fn decode_ids(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            match id {
                PAD | CLS => {}
                UNK => bytes.extend_from_slice("\u{FFFD}".as_bytes()),
                _ => bytes.extend_from_slice(
                    self.tokens
                        .get(id as usize)
                        .ok_or(Error::UnknownTokenId(id))?,
                ),
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Line-based serialization: a header, the special ids, then one
    /// `left<TAB>right` merge per line in creation order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "PAD\t{PAD}");
        let _ = writeln!(out, "UNK\t{UNK}");
        let _ = writeln!(out, "CLS\t{CLS}");
        for (a, b) in &self.merges {
            let _ = writeln!(out, "{a}\t{b}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::Parse(format!("missing `{HEADER}` header")));
        }
        for (name, id) in [("PAD", PAD), ("UNK", UNK), ("CLS", CLS)] {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing {name} line")))?;
            if line != format!("{name}\t{id}") {
                return Err(Error::Parse(format!("unexpected special line `{line}`")));
            }
        }
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let (a, b) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("merge line {i}: expected two fields")))?;
            let parse = |s: &str| {
                s.parse::<u32>()
                    .map_err(|e| Error::Parse(format!("merge line {i}: {e}")))
            };
            merges.push((parse(a)?, parse(b)?));
        }
        Self::from_merges(merges)
    }
}

/// Replace non-overlapping occurrences of `pair`, scanning left to right.
fn merge_pair(ids: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

/// Train a byte-level BPE vocabulary on the corpus texts.
///
/// Greedy: repeatedly merge the most frequent adjacent pair until the
/// vocabulary reaches `vocab_size` or no pair occurs at least twice. Ties go
/// to the lexicographically smallest `(left bytes, right bytes)`.
pub fn train_bpe<'a>(texts: impl IntoIterator<Item = &'a str>, vocab_size: usize) -> Result<BpeVocab> {
    if vocab_size < MIN_VOCAB {
        return Err(Error::InvalidParameter(format!(
            "vocab_size must be >= {MIN_VOCAB}, got {vocab_size}"
        )));
    }

    // Deduplicate texts; counts weight the pair statistics.
    let mut uniq: HashMap<&str, i64> = HashMap::new();
    for t in texts {
        *uniq.entry(t).or_default() += 1;
    }
    let mut entries: Vec<(&str, i64)> = uniq.into_iter().collect();
    entries.sort_unstable();
    let mut seqs: Vec<Vec<u32>> = entries
        .iter()
        .map(|(t, _)| t.bytes().map(BpeVocab::byte_id).collect())
        .collect();
    let weights: Vec<i64> = entries.iter().map(|&(_, c)| c).collect();

    let mut counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut occurs: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (s, seq) in seqs.iter().enumerate() {
        for w in seq.windows(2) {
            *counts.entry((w[0], w[1])).or_default() += weights[s];
            occurs.entry((w[0], w[1])).or_default().insert(s);
        }
    }

    let mut tokens: Vec<Vec<u8>> = vec![Vec::new(); MIN_VOCAB];
    for b in 0..=255u8 {
        tokens[BpeVocab::byte_id(b) as usize] = vec![b];
    }
    let mut merges = Vec::new();

    while tokens.len() < vocab_size {
        let mut best: Option<((u32, u32), i64)> = None;
        for (&pair, &c) in &counts {
            let better = match best {
                None => true,
                Some((bp, bc)) => {
                    c > bc
                        || (c == bc
                            && (&tokens[pair.0 as usize], &tokens[pair.1 as usize])
                                < (&tokens[bp.0 as usize], &tokens[bp.1 as usize]))
                }
            };
            if better {
                best = Some((pair, c));
            }
        }
        let Some((pair, count)) = best else { break };
        if count < 2 {
            break;
        }

        let new_id = tokens.len() as u32;
        let mut t = tokens[pair.0 as usize].clone();
        t.extend_from_slice(&tokens[pair.1 as usize]);
        tokens.push(t);
        merges.push(pair);

        let mut affected: Vec<usize> = occurs
            .remove(&pair)
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        affected.sort_unstable();
        for s in affected {
            let merged = merge_pair(&seqs[s], pair, new_id);
            if merged.len() == seqs[s].len() {
                continue;
            }
            let w = weights[s];
            for win in seqs[s].windows(2) {
                let key = (win[0], win[1]);
                if let Some(c) = counts.get_mut(&key) {
                    *c -= w;
                    if *c == 0 {
                        counts.remove(&key);
                    }
                }
            }
            for win in merged.windows(2) {
                let key = (win[0], win[1]);
                *counts.entry(key).or_default() += w;
                occurs.entry(key).or_default().insert(s);
            }
            seqs[s] = merged;
        }
        counts.remove(&pair);
    }

    BpeVocab::from_merges(merges)
}
