use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::specials::{escape, unescape, SpecialRegistry, TokenCategory};
use super::{is_ident_byte, is_space_byte};
use crate::error::{Error, Result};

pub const DEFAULT_VOCAB_SIZE: usize = 4096;
pub const MAX_VOCAB_SIZE: usize = 65024;

const HEADER_TAG: &str = "vocab-v1";

/// Token ids for one sequence, left padded to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub true_length: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn pad_count(&self) -> usize {
        self.ids.len() - self.true_length
    }

    /// Ids of the real (unpadded) tokens.
    pub fn real_ids(&self) -> &[u32] {
        &self.ids[self.pad_count()..]
    }

    /// Re-pads to `len` on the left; `len` must cover the real tokens.
    pub fn repad(&self, len: usize, pad_id: u32) -> Result<TokenSequence> {
        if len < self.true_length || len == 0 {
            return Err(Error::Parameter(format!(
                "cannot repad {} real tokens into length {len}",
                self.true_length
            )));
        }
        let pads = len - self.true_length;
        let mut ids = vec![pad_id; pads];
        ids.extend_from_slice(self.real_ids());
        let mut attention_mask = vec![0; pads];
        attention_mask.extend(std::iter::repeat_n(1, self.true_length));
        Ok(TokenSequence {
            ids,
            attention_mask,
            true_length: self.true_length,
        })
    }
}

/// Left-pads a batch to the longest real length it contains.
pub fn collate(seqs: &[TokenSequence], pad_id: u32) -> Result<Vec<TokenSequence>> {
    let len = seqs.iter().map(|s| s.true_length).max().unwrap_or(0).max(1);
    seqs.iter().map(|s| s.repad(len, pad_id)).collect()
}

/// Untruncated tokenization with the byte span of every token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub offsets: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
struct Candidate {
    bytes: Vec<u8>,
    id: u32,
    bounded: bool,
}

/// Longest-first matcher over the domain tokens. Keywords and API names must
/// not touch identifier characters on either side; punctuation matches
/// anywhere.
#[derive(Clone, Debug, Default)]
pub(crate) struct SpecialMatcher {
    by_first: HashMap<u8, Vec<Candidate>>,
}

impl SpecialMatcher {
    fn new(entries: impl Iterator<Item = (Vec<u8>, u32, TokenCategory)>) -> Self {
        let mut by_first: HashMap<u8, Vec<Candidate>> = HashMap::new();
        for (bytes, id, category) in entries {
            by_first.entry(bytes[0]).or_default().push(Candidate {
                bytes,
                id,
                bounded: category != TokenCategory::Punctuation,
            });
        }
        for list in by_first.values_mut() {
            list.sort_by(|a, b| {
                b.bytes
                    .len()
                    .cmp(&a.bytes.len())
                    .then(a.bytes.cmp(&b.bytes))
            });
        }
        SpecialMatcher { by_first }
    }

    pub(crate) fn match_at(&self, text: &[u8], i: usize) -> Option<(u32, usize)> {
        let list = self.by_first.get(&text[i])?;
        for c in list {
            let end = i + c.bytes.len();
            if end > text.len() || text[i..end] != c.bytes[..] {
                continue;
            }
            if c.bounded {
                if is_ident_byte(c.bytes[0]) && i > 0 && is_ident_byte(text[i - 1]) {
                    continue;
                }
                if is_ident_byte(c.bytes[c.bytes.len() - 1])
                    && end < text.len()
                    && is_ident_byte(text[end])
                {
                    continue;
                }
            }
            return Some((c.id, c.bytes.len()));
        }
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Segment {
    Special { id: u32, start: usize, end: usize },
    Word { start: usize, end: usize },
    Space { pos: usize },
}

/// Splits text into atomic special matches, single whitespace bytes, and
/// maximal runs of other bytes (the units BPE operates on).
pub(crate) fn segment(matcher: &SpecialMatcher, text: &[u8]) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    let mut i = 0;
    while i < text.len() {
        if let Some((id, len)) = matcher.match_at(text, i) {
            if let Some(s) = word_start.take() {
                out.push(Segment::Word { start: s, end: i });
            }
            out.push(Segment::Special {
                id,
                start: i,
                end: i + len,
            });
            i += len;
        } else if is_space_byte(text[i]) {
            if let Some(s) = word_start.take() {
                out.push(Segment::Word { start: s, end: i });
            }
            out.push(Segment::Space { pos: i });
            i += 1;
        } else {
            word_start.get_or_insert(i);
            i += 1;
        }
    }
    if let Some(s) = word_start {
        out.push(Segment::Word {
            start: s,
            end: text.len(),
        });
    }
    out
}

/// Trained vocabulary: token table, ordered merge rules and the special
/// token registry. Immutable once built; safe to share across threads.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<Vec<u8>>,
    categories: Vec<TokenCategory>,
    control_count: usize,
    byte_offset: u32,
    merges: Vec<(u32, u32, u32)>,
    merge_rank: HashMap<(u32, u32), (usize, u32)>,
    plain_lookup: HashMap<Vec<u8>, u32>,
    matcher: SpecialMatcher,
    pad_id: u32,
    bos_id: u32,
    eos_id: u32,
    unk_id: u32,
    capacity: usize,
}

impl Vocabulary {
    /// Specials followed by the 256 byte tokens, no merges.
    pub fn base(registry: &SpecialRegistry, capacity: usize) -> Result<Self> {
        registry.validate()?;
        if capacity > MAX_VOCAB_SIZE {
            return Err(Error::Parameter(format!(
                "vocabulary capacity {capacity} exceeds {MAX_VOCAB_SIZE}"
            )));
        }
        let mut tokens = Vec::new();
        let mut categories = Vec::new();
        for c in &registry.control {
            tokens.push(c.as_bytes().to_vec());
            categories.push(TokenCategory::Control);
        }
        for t in &registry.domain {
            tokens.push(t.text.as_bytes().to_vec());
            categories.push(t.category);
        }
        let byte_offset = tokens.len() as u32;
        let mut plain_lookup = HashMap::new();
        for b in 0..=255u8 {
            plain_lookup.insert(vec![b], tokens.len() as u32);
            tokens.push(vec![b]);
            categories.push(TokenCategory::Byte);
        }
        if capacity < tokens.len() {
            return Err(Error::Parameter(format!(
                "vocabulary capacity {capacity} is smaller than specials plus byte alphabet ({})",
                tokens.len()
            )));
        }
        let mut v = Vocabulary {
            tokens,
            categories,
            control_count: registry.control.len(),
            byte_offset,
            merges: Vec::new(),
            merge_rank: HashMap::new(),
            plain_lookup,
            matcher: SpecialMatcher::default(),
            pad_id: registry.pad as u32,
            bos_id: registry.bos as u32,
            eos_id: registry.eos as u32,
            unk_id: registry.unk as u32,
            capacity,
        };
        v.rebuild_matcher();
        Ok(v)
    }

    fn rebuild_matcher(&mut self) {
        let entries = self
            .categories
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_domain())
            .map(|(id, &c)| (self.tokens[id].clone(), id as u32, c))
            .collect::<Vec<_>>();
        self.matcher = SpecialMatcher::new(entries.into_iter());
    }

    pub(crate) fn matcher(&self) -> &SpecialMatcher {
        &self.matcher
    }

    pub(crate) fn byte_id(&self, b: u8) -> u32 {
        self.byte_offset + b as u32
    }

    /// True if `bytes` equals any control or domain token.
    pub(crate) fn is_special_string(&self, bytes: &[u8]) -> bool {
        self.tokens[..self.byte_offset as usize]
            .iter()
            .any(|t| t == bytes)
    }

    /// Appends merge rule `left + right`; returns the id of the merged token
    /// (an existing id when the byte string is already in the table).
    pub(crate) fn push_merge(&mut self, left: u32, right: u32) -> u32 {
        let mut bytes = self.tokens[left as usize].clone();
        bytes.extend_from_slice(&self.tokens[right as usize]);
        let result = match self.plain_lookup.get(&bytes) {
            Some(&id) => id,
            None => {
                let id = self.tokens.len() as u32;
                self.plain_lookup.insert(bytes.clone(), id);
                self.tokens.push(bytes);
                self.categories.push(TokenCategory::Merge);
                id
            }
        };
        self.merge_rank
            .insert((left, right), (self.merges.len(), result));
        self.merges.push((left, right, result));
        result
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn bos_id(&self) -> u32 {
        self.bos_id
    }

    pub fn eos_id(&self) -> u32 {
        self.eos_id
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn merges(&self) -> &[(u32, u32, u32)] {
        &self.merges
    }

    pub fn special_count(&self) -> usize {
        self.byte_offset as usize
    }

    pub fn control_count(&self) -> usize {
        self.control_count
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn category(&self, id: u32) -> Option<TokenCategory> {
        self.categories.get(id as usize).copied()
    }

    /// Id of a token string, if present (special, byte or merged).
    pub fn token_id(&self, text: &str) -> Option<u32> {
        let bytes = text.as_bytes();
        self.tokens[..self.byte_offset as usize]
            .iter()
            .position(|t| t == bytes)
            .map(|i| i as u32)
            .or_else(|| self.plain_lookup.get(bytes).copied())
    }

    pub fn domain_tokens(&self) -> impl Iterator<Item = (u32, &[u8], TokenCategory)> + '_ {
        self.categories
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_domain())
            .map(|(i, &c)| (i as u32, self.tokens[i].as_slice(), c))
    }

    pub fn count(&self, category: TokenCategory) -> usize {
        self.categories.iter().filter(|&&c| c == category).count()
    }

    pub(crate) fn encode_word(&self, word: &[u8], out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = word.iter().map(|&b| self.byte_id(b)).collect();
        while syms.len() > 1 {
            let mut best: Option<(usize, u32, u32, u32)> = None;
            for w in syms.windows(2) {
                if let Some(&(rank, result)) = self.merge_rank.get(&(w[0], w[1])) {
                    if best.is_none_or(|b| rank < b.0) {
                        best = Some((rank, w[0], w[1], result));
                    }
                }
            }
            let Some((_, l, r, result)) = best else { break };
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    merged.push(result);
                    i += 2;
                } else {
                    merged.push(syms[i]);
                    i += 1;
                }
            }
            syms = merged;
        }
        out.extend(syms);
    }

    /// Full tokenization without truncation or padding.
    pub fn tokenize(&self, text: &str) -> Encoding {
        let bytes = text.as_bytes();
        let mut ids = Vec::new();
        let mut offsets = Vec::new();
        let mut scratch = Vec::new();
        for seg in segment(&self.matcher, bytes) {
            match seg {
                Segment::Special { id, start, end } => {
                    ids.push(id);
                    offsets.push((start, end));
                }
                Segment::Space { pos } => {
                    ids.push(self.byte_id(bytes[pos]));
                    offsets.push((pos, pos + 1));
                }
                Segment::Word { start, end } => {
                    scratch.clear();
                    self.encode_word(&bytes[start..end], &mut scratch);
                    let mut at = start;
                    for &id in &scratch {
                        let len = self.tokens[id as usize].len();
                        ids.push(id);
                        offsets.push((at, at + len));
                        at += len;
                    }
                }
            }
        }
        Encoding { ids, offsets }
    }

    /// Encodes, keeps the first `max_len` tokens and left-pads to `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        if max_len == 0 {
            return Err(Error::Parameter("max_len must be at least 1".into()));
        }
        let enc = self.tokenize(text);
        let keep = enc.ids.len().min(max_len);
        let pads = max_len - keep;
        let mut ids = vec![self.pad_id; pads];
        ids.extend_from_slice(&enc.ids[..keep]);
        let mut attention_mask = vec![0u8; pads];
        attention_mask.extend(std::iter::repeat_n(1u8, keep));
        Ok(TokenSequence {
            ids,
            attention_mask,
            true_length: keep,
        })
    }

    pub fn decode_ids(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let tok = self.tokens.get(id as usize).ok_or(Error::Index {
                what: "vocabulary",
                index: id as usize,
                bound: self.tokens.len(),
            })?;
            out.extend_from_slice(tok);
        }
        Ok(out)
    }

    /// Concatenates the real tokens of `seq`, skipping padded positions.
    pub fn decode(&self, seq: &TokenSequence) -> Result<String> {
        let ids: Vec<u32> = seq
            .ids
            .iter()
            .zip(&seq.attention_mask)
            .filter(|(_, &m)| m == 1)
            .map(|(&id, _)| id)
            .collect();
        let bytes = self.decode_ids(&ids)?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{HEADER_TAG}\tsize={}\tspecials={}\tcontrol={}\tmerges={}\tpad={}\tbos={}\teos={}\tunk={}\tcapacity={}",
            self.tokens.len(),
            self.byte_offset,
            self.control_count,
            self.merges.len(),
            self.pad_id,
            self.bos_id,
            self.eos_id,
            self.unk_id,
            self.capacity
        );
        for (id, (tok, cat)) in self.tokens.iter().zip(&self.categories).enumerate() {
            let _ = writeln!(s, "{id}\t{cat}\t{}", escape(tok));
        }
        let _ = writeln!(s, "merges");
        for (l, r, res) in &self.merges {
            let _ = writeln!(s, "{l}\t{r}\t{res}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty vocabulary file")?;
        let mut fields = header.split('\t');
        if fields.next() != Some(HEADER_TAG) {
            return Err(format!("missing `{HEADER_TAG}` header"));
        }
        let mut kv = HashMap::new();
        for f in fields {
            let (k, v) = f
                .split_once('=')
                .ok_or_else(|| format!("bad header field `{f}`"))?;
            let v: usize = v
                .parse()
                .map_err(|_| format!("header field `{k}` is not an integer"))?;
            kv.insert(k, v);
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| format!("header lacks `{k}`"))
        };
        let (size, specials, control, n_merges) = (
            get("size")?,
            get("specials")?,
            get("control")?,
            get("merges")?,
        );

        let mut control_tokens = Vec::new();
        let mut domain = Vec::new();
        let mut merged_tokens = Vec::new();
        for id in 0..size {
            let line = lines.next().ok_or("truncated token table")?;
            let mut cols = line.splitn(3, '\t');
            let (Some(i), Some(cat), Some(tok)) = (cols.next(), cols.next(), cols.next()) else {
                return Err(format!("malformed token line `{line}`"));
            };
            if i.parse::<usize>().ok() != Some(id) {
                return Err(format!("token ids must be dense; expected {id}, got `{i}`"));
            }
            let cat: TokenCategory = cat.parse()?;
            let bytes = unescape(tok)?;
            match cat {
                TokenCategory::Control if id < control => control_tokens
                    .push(String::from_utf8(bytes).map_err(|_| "control token not UTF-8")?),
                c if c.is_domain() && id >= control && id < specials => {
                    domain.push(super::SpecialToken {
                        text: String::from_utf8(bytes).map_err(|_| "domain token not UTF-8")?,
                        category: c,
                    })
                }
                TokenCategory::Byte if id >= specials && id < specials + 256 => {
                    if bytes != [(id - specials) as u8] {
                        return Err(format!("byte token {id} out of order"));
                    }
                }
                TokenCategory::Merge if id >= specials + 256 => merged_tokens.push(bytes),
                other => return Err(format!("token {id} has unexpected category {other}")),
            }
        }
        if lines.next() != Some("merges") {
            return Err("missing `merges` section".into());
        }
        let registry = SpecialRegistry {
            control: control_tokens,
            pad: get("pad")?,
            bos: get("bos")?,
            eos: get("eos")?,
            unk: get("unk")?,
            domain,
        };
        let mut vocab = Vocabulary::base(&registry, get("capacity")?).map_err(|e| e.to_string())?;
        for _ in 0..n_merges {
            let line = lines.next().ok_or("truncated merge list")?;
            let ids: Vec<u32> = line
                .split('\t')
                .map(|x| {
                    x.parse::<u32>()
                        .map_err(|_| format!("bad merge line `{line}`"))
                })
                .collect::<Result<_, _>>()?;
            let [l, r, res] = ids[..] else {
                return Err(format!("bad merge line `{line}`"));
            };
            if l as usize >= vocab.len() || r as usize >= vocab.len() {
                return Err(format!("merge `{line}` references an unknown token"));
            }
            if vocab.push_merge(l, r) != res {
                return Err(format!("merge `{line}` does not reproduce its result id"));
            }
        }
        if vocab.len() != size {
            return Err(format!(
                "merges rebuilt {} tokens, header says {size}",
                vocab.len()
            ));
        }
        for (k, bytes) in merged_tokens.iter().enumerate() {
            if vocab.tokens[specials + 256 + k] != *bytes {
                return Err(format!(
                    "merged token {} disagrees with its merge rule",
                    specials + 256 + k
                ));
            }
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|reason| Error::format(path, reason))
    }
}
