//! Byte-level byte-pair-encoding tokenizer.
//!
//! Ids `0..256` are the raw bytes, id 256 is the padding token and every
//! learned merge appends one more id. Because the base alphabet is the
//! full byte range, any UTF-8 string (Latin, Arabic script, emoji) encodes
//! without an unknown token and decodes back losslessly.
//!
//! Training merges the most frequent adjacent pair until the target size is
//! reached or no pair occurs twice. Frequency ties go to the pair whose
//! `(left bytes, right bytes)` sorts first. Pairs whose concatenation is
//! already a token are skipped so that byte strings map to ids one-to-one.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = usize;

/// Number of single-byte base tokens.
pub const BYTE_TOKENS: usize = 256;
/// Id of the padding token. It decodes to nothing.
pub const PAD_ID: TokenId = 256;
/// Smallest vocabulary: all bytes plus the padding token.
pub const MIN_VOCAB_SIZE: usize = BYTE_TOKENS + 1;
/// Default target size at desk scale.
pub const DEFAULT_VOCAB_SIZE: usize = 2048;

const FILE_MAGIC: &str = "guardlora-bpe";
const FILE_VERSION: &str = "v1";

type Pair = (TokenId, TokenId);

/// A trained merge table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeVocab {
    merges: Vec<Pair>,
    tokens: Vec<Vec<u8>>,
    token_to_id: HashMap<Vec<u8>, TokenId>,
    ranks: HashMap<Pair, usize>,
}

impl BpeVocab {
    /// The byte alphabet and padding token, with no merges.
    pub fn base() -> Self {
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        tokens.push(Vec::new());
        let token_to_id = tokens[..BYTE_TOKENS]
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            merges: Vec::new(),
            tokens,
            token_to_id,
            ranks: HashMap::new(),
        }
    }

    fn push_merge(&mut self, pair: Pair) -> Result<TokenId> {
        let mut bytes = self.tokens[pair.0].clone();
        bytes.extend_from_slice(&self.tokens[pair.1]);
        if self.token_to_id.contains_key(&bytes) {
            return Err(Error::data(format!(
                "merge {} + {} duplicates an existing token",
                hex(&self.tokens[pair.0]),
                hex(&self.tokens[pair.1])
            )));
        }
        let id = self.tokens.len();
        self.ranks.insert(pair, self.merges.len());
        self.merges.push(pair);
        self.token_to_id.insert(bytes.clone(), id);
        self.tokens.push(bytes);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    /// Byte content of a token (empty for the padding token).
    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(id).map(Vec::as_slice)
    }

    pub fn token_id(&self, bytes: &[u8]) -> Option<TokenId> {
        self.token_to_id.get(bytes).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = text.bytes().map(TokenId::from).collect();
        loop {
            let best = ids
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            merge_pair(&mut ids, pair, BYTE_TOKENS + 1 + rank);
        }
        ids
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let t = self
                .tokens
                .get(id)
                .ok_or_else(|| Error::data(format!("token id {id} is not in the vocabulary")))?;
            bytes.extend_from_slice(t);
        }
        String::from_utf8(bytes).map_err(|e| {
            Error::data(format!(
                "decoded bytes are not valid UTF-8 at byte offset {}",
                e.utf8_error().valid_up_to()
            ))
        })
    }

    /// Line-oriented text form: a header line, then one merge per line as
    /// two hex-encoded byte strings.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{FILE_MAGIC} {FILE_VERSION} vocab_size={} merges={}\n",
            self.len(),
            self.merges.len()
        );
        for &(a, b) in &self.merges {
            let _ = writeln!(out, "{} {}", hex(&self.tokens[a]), hex(&self.tokens[b]));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::read(BufReader::new(text.as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(f))
    }

    fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::data("vocabulary file is empty"))?
            .map_err(|e| Error::data(e.to_string()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (size, n_merges) = match fields.as_slice() {
            [magic, version, size, merges] if *magic == FILE_MAGIC && *version == FILE_VERSION => (
                header_field(size, "vocab_size")?,
                header_field(merges, "merges")?,
            ),
            _ => return Err(Error::data(format!("bad vocabulary header {header:?}"))),
        };
        let mut vocab = Self::base();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::data(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let lineno = n + 2;
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| Error::data(format!("line {lineno}: expected two tokens")))?;
            let lookup = |h: &str| -> Result<TokenId> {
                let bytes = unhex(h).ok_or_else(|| {
                    Error::data(format!("line {lineno}: invalid hex token {h:?}"))
                })?;
                vocab.token_id(&bytes).ok_or_else(|| {
                    Error::data(format!("line {lineno}: token {h} merges before it exists"))
                })
            };
            let pair = (lookup(a)?, lookup(b)?);
            vocab.push_merge(pair)?;
        }
        if vocab.merges.len() != n_merges || vocab.len() != size {
            return Err(Error::data(format!(
                "vocabulary header promises {size} tokens / {n_merges} merges, file holds {} / {}",
                vocab.len(),
                vocab.merges.len()
            )));
        }
        Ok(vocab)
    }
}

fn header_field(field: &str, key: &str) -> Result<usize> {
    field
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::data(format!("bad vocabulary header field {field:?}")))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if s.is_empty() || !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

/// Replaces non-overlapping occurrences of `pair`, scanning left to right.
fn merge_pair(ids: &mut Vec<TokenId>, pair: Pair, new_id: TokenId) {
    let mut out = 0;
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == pair.0 && ids[i + 1] == pair.1 {
            ids[out] = new_id;
            i += 2;
        } else {
            ids[out] = ids[i];
            i += 1;
        }
        out += 1;
    }
    ids.truncate(out);
}

fn count_pairs(ids: &[TokenId], weight: i64, counts: &mut HashMap<Pair, i64>) {
    for w in ids.windows(2) {
        *counts.entry((w[0], w[1])).or_insert(0) += weight;
    }
}

/// Learns a merge table from `corpus` until the vocabulary (bytes, padding
/// token and merges) reaches `vocab_size` or no adjacent pair repeats.
///
/// The result depends only on the corpus and `vocab_size`; `seed` is
/// accepted for interface symmetry with the other trainable components.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], vocab_size: usize, _seed: u64) -> Result<BpeVocab> {
    if corpus.is_empty() {
        return Err(Error::data("cannot train a tokenizer on an empty corpus"));
    }
    if vocab_size < MIN_VOCAB_SIZE {
        return Err(Error::config(format!(
            "vocab_size must be at least {MIN_VOCAB_SIZE}, got {vocab_size}"
        )));
    }

    // Identical texts share one working sequence.
    let mut unique: HashMap<&str, i64> = HashMap::new();
    for s in corpus {
        *unique.entry(s.as_ref()).or_insert(0) += 1;
    }
    let mut texts: Vec<(&str, i64)> = unique.into_iter().collect();
    texts.sort_unstable();
    let mut seqs: Vec<(Vec<TokenId>, i64)> = texts
        .into_iter()
        .map(|(t, c)| (t.bytes().map(TokenId::from).collect(), c))
        .collect();

    let mut counts: HashMap<Pair, i64> = HashMap::new();
    for (ids, c) in &seqs {
        count_pairs(ids, *c, &mut counts);
    }

    let mut vocab = BpeVocab::base();
    while vocab.len() < vocab_size {
        let mut best: Option<(i64, Pair)> = None;
        for (&pair, &count) in &counts {
            if count < 2 {
                continue;
            }
            let better = match best {
                None => true,
                Some((bc, bp)) => {
                    count > bc
                        || (count == bc
                            && (&vocab.tokens[pair.0], &vocab.tokens[pair.1])
                                < (&vocab.tokens[bp.0], &vocab.tokens[bp.1]))
                }
            };
            if better && !vocab.concat_exists(pair) {
                best = Some((count, pair));
            }
        }
        let Some((_, pair)) = best else { break };
        let new_id = vocab.push_merge(pair)?;
        for (ids, c) in &mut seqs {
            if !ids.windows(2).any(|w| w[0] == pair.0 && w[1] == pair.1) {
                continue;
            }
            count_pairs(ids, -*c, &mut counts);
            merge_pair(ids, pair, new_id);
            count_pairs(ids, *c, &mut counts);
        }
        counts.retain(|_, c| *c > 0);
    }
    Ok(vocab)
}

impl BpeVocab {
    fn concat_exists(&self, pair: Pair) -> bool {
        let (a, b) = (&self.tokens[pair.0], &self.tokens[pair.1]);
        let mut bytes = Vec::with_capacity(a.len() + b.len());
        bytes.extend_from_slice(a);
        bytes.extend_from_slice(b);
        self.token_to_id.contains_key(&bytes)
    }
}
