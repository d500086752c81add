use std::collections::{BTreeMap, HashMap, HashSet};

use super::specials::SpecialRegistry;
use super::vocab::{segment, Segment, Vocabulary};
use crate::error::{Error, Result};

type Pair = (u32, u32);

struct Word {
    syms: Vec<u32>,
    count: u64,
}

/// Learns byte-pair merges over `corpus` until the vocabulary holds
/// `target_size` ids or no pair occurs at least twice.
///
/// Specials are reserved first and never take part in merge statistics; a
/// merge whose byte string would equal a special token is never learned.
/// Ties between equally frequent pairs go to the smallest `(left, right)`.
pub fn train_bpe<I, S>(
    corpus: I,
    target_size: usize,
    specials: &SpecialRegistry,
) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let reserved = specials.len() + 256;
    if target_size <= reserved {
        return Err(Error::Parameter(format!(
            "target vocabulary size {target_size} must exceed specials + byte alphabet ({reserved})"
        )));
    }
    let mut vocab = Vocabulary::base(specials, target_size)?;

    let mut word_counts: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    let mut saw_text = false;
    for text in corpus {
        let bytes = text.as_ref().as_bytes();
        saw_text |= !bytes.is_empty();
        for seg in segment(vocab.matcher(), bytes) {
            if let Segment::Word { start, end } = seg {
                *word_counts.entry(bytes[start..end].to_vec()).or_default() += 1;
            }
        }
    }
    if !saw_text {
        return Err(Error::Training(
            "cannot train a tokenizer on an empty corpus".into(),
        ));
    }

    let mut words: Vec<Word> = word_counts
        .into_iter()
        .map(|(w, count)| Word {
            syms: w.iter().map(|&b| vocab.byte_id(b)).collect(),
            count,
        })
        .collect();

    let mut pair_counts: HashMap<Pair, u64> = HashMap::new();
    let mut where_: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.syms.windows(2) {
            *pair_counts.entry((p[0], p[1])).or_default() += w.count;
            where_.entry((p[0], p[1])).or_default().insert(wi);
        }
    }

    let mut forbidden: HashSet<Pair> = HashSet::new();
    while vocab.len() < target_size {
        let mut best: Option<(u64, Pair)> = None;
        for (&pair, &count) in &pair_counts {
            if count < 2 || forbidden.contains(&pair) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bc, bp)) => count > bc || (count == bc && pair < bp),
            };
            if better {
                let mut bytes = vocab.token_bytes(pair.0).unwrap_or_default().to_vec();
                bytes.extend_from_slice(vocab.token_bytes(pair.1).unwrap_or_default());
                if vocab.is_special_string(&bytes) {
                    forbidden.insert(pair);
                    continue;
                }
                best = Some((count, pair));
            }
        }
        let Some((_, pair)) = best else { break };
        let merged = vocab.push_merge(pair.0, pair.1);

        let mut touched: Vec<usize> = where_
            .remove(&pair)
            .unwrap_or_default()
            .into_iter()
            .collect();
        touched.sort_unstable();
        for wi in touched {
            let w = &mut words[wi];
            for p in w.syms.windows(2) {
                let key = (p[0], p[1]);
                if let Some(c) = pair_counts.get_mut(&key) {
                    *c -= w.count;
                    if *c == 0 {
                        pair_counts.remove(&key);
                    }
                }
                if let Some(set) = where_.get_mut(&key) {
                    set.remove(&wi);
                }
            }
            let mut next = Vec::with_capacity(w.syms.len());
            let mut i = 0;
            while i < w.syms.len() {
                if i + 1 < w.syms.len() && (w.syms[i], w.syms[i + 1]) == pair {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(w.syms[i]);
                    i += 1;
                }
            }
            w.syms = next;
            for p in w.syms.windows(2) {
                let key = (p[0], p[1]);
                *pair_counts.entry(key).or_default() += w.count;
                where_.entry(key).or_default().insert(wi);
            }
        }
        pair_counts.remove(&pair);
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_single_merge() {
        let reg = SpecialRegistry::builtin();
        let target = reg.len() + 257;
        let v = train_bpe(["aaaa"], target, &reg).unwrap();
        assert_eq!(v.merges().len(), 1);
        let (l, r, res) = v.merges()[0];
        assert_eq!(v.token_bytes(l), Some(&b"a"[..]));
        assert_eq!(v.token_bytes(r), Some(&b"a"[..]));
        assert_eq!(v.token_bytes(res), Some(&b"aa"[..]));
        assert_eq!(v.len(), target);
    }

    #[test]
    fn stops_when_no_pair_repeats() {
        let reg = SpecialRegistry::control_only();
        let v = train_bpe(["ab"], reg.len() + 300, &reg).unwrap();
        assert!(v.merges().is_empty());
    }

    #[test]
    fn empty_corpus_rejected() {
        let reg = SpecialRegistry::control_only();
        assert!(matches!(
            train_bpe(Vec::<String>::new(), reg.len() + 300, &reg),
            Err(Error::Training(_))
        ));
        assert!(matches!(
            train_bpe(["abc"], reg.len() + 256, &reg),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn never_merges_into_a_special() {
        let reg = SpecialRegistry::builtin();
        // "int" only appears glued to identifier chars, so it is a BPE word
        let corpus = ["xint yint zint xint yint zint"; 20];
        let v = train_bpe(corpus, reg.len() + 300, &reg).unwrap();
        for &(_, _, res) in v.merges() {
            assert_ne!(v.token_bytes(res), Some(&b"int"[..]));
        }
    }
}
