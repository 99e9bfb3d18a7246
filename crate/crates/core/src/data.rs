//! Corpus ingestion: vocabulary construction, sequence markers, and the two
//! batching regimes (independent sentences, contiguous lanes).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const UNK: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
const RESERVED: [&str; 3] = [UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];

/// Bidirectional token table. Ids 0..3 are reserved for `<unk>`, `<s>` and
/// `</s>`; the rest are assigned by descending count, ties broken by first
/// occurrence, so cluster membership in the adaptive head is an id range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_entries(entries: Vec<(String, u64)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (tok, _)) in entries.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry `{tok}`")));
            }
        }
        let (tokens, counts) = entries.into_iter().unzip();
        Ok(Self {
            tokens,
            counts,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Tab-separated `token\tcount` lines in id order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            let _ = writeln!(out, "{t}\t{c}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, count) = line.split_once('\t').ok_or_else(|| {
                Error::Data(format!("vocabulary line {}: expected `token<TAB>count`", lineno + 1))
            })?;
            let count = count.trim().parse::<u64>().map_err(|_| {
                Error::Data(format!("vocabulary line {}: bad count `{count}`", lineno + 1))
            })?;
            entries.push((tok.to_string(), count));
        }
        if entries.len() < RESERVED.len()
            || entries.iter().zip(RESERVED).any(|((t, _), r)| t != r)
        {
            return Err(Error::Data(
                "vocabulary must start with <unk>, <s>, </s>".into(),
            ));
        }
        Self::from_entries(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the serialized table; ties checkpoints to their vocabulary.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_tsv().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN))
            .collect()
    }
}

/// Builds a vocabulary from a whitespace-tokenized corpus. Tokens seen fewer
/// than `min_count` times map to `<unk>`.
pub fn build_vocab<'a, I>(tokens: I, min_count: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    if min_count == 0 {
        return Err(Error::Data("min_count must be at least 1".into()));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut total = 0u64;
    for tok in tokens {
        total += 1;
        if RESERVED.contains(&tok) {
            continue;
        }
        let c = counts.entry(tok).or_insert_with(|| {
            order.push(tok);
            0
        });
        *c += 1;
    }
    if total == 0 {
        return Err(Error::Data("empty corpus".into()));
    }
    let mut kept: Vec<(usize, &str, u64)> = Vec::new();
    let mut unk = 0;
    for (first_seen, tok) in order.iter().enumerate() {
        let c = counts[tok];
        if c >= min_count {
            kept.push((first_seen, tok, c));
        } else {
            unk += c;
        }
    }
    kept.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
    let mut entries = vec![
        (UNK_TOKEN.to_string(), unk),
        (BOS_TOKEN.to_string(), 0),
        (EOS_TOKEN.to_string(), 0),
    ];
    entries.extend(kept.into_iter().map(|(_, t, c)| (t.to_string(), c)));
    Vocabulary::from_entries(entries)
}

/// Builds a vocabulary from corpus text, counting one `<s>`/`</s>` pair per
/// non-empty line.
pub fn build_vocab_from_text(text: &str, min_count: u64) -> Result<Vocabulary> {
    let mut v = build_vocab(text.split_whitespace(), min_count)?;
    let lines = text.lines().filter(|l| !l.trim().is_empty()).count() as u64;
    v.counts[BOS] = lines;
    v.counts[EOS] = lines;
    Ok(v)
}

/// Unit of text that becomes one `<s> … </s>` sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// One sequence per line.
    Sentence,
    /// One sequence per blank-line-delimited paragraph.
    Paragraph,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence" => Ok(Mode::Sentence),
            "paragraph" => Ok(Mode::Paragraph),
            other => Err(Error::Data(format!(
                "unknown mode `{other}` (expected sentence|paragraph)"
            ))),
        }
    }
}

pub fn encode_lines(text: &str, vocab: &Vocabulary, mode: Mode) -> Vec<Vec<usize>> {
    let wrap = |words: &mut dyn Iterator<Item = &str>| -> Vec<usize> {
        let mut seq = vec![BOS];
        seq.extend(words.map(|w| vocab.id(w)));
        seq.push(EOS);
        seq
    };
    match mode {
        Mode::Sentence => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| wrap(&mut l.split_whitespace()))
            .collect(),
        Mode::Paragraph => {
            let mut out = Vec::new();
            let mut para: Vec<&str> = Vec::new();
            for line in text.lines().chain(std::iter::once("")) {
                if line.trim().is_empty() {
                    if !para.is_empty() {
                        out.push(wrap(&mut para.drain(..)));
                    }
                } else {
                    para.extend(line.split_whitespace());
                }
            }
            out
        }
    }
}

/// Token matrix `[batch × steps]` with aligned targets and loss mask.
///
/// Row `r` is void before `input_start[r]`: those positions behave exactly
/// like the zero padding at the start of a sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub batch: usize,
    pub steps: usize,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
    pub input_start: Vec<usize>,
}

impl Batch {
    pub fn unmasked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn num_tokens(&self) -> usize {
        self.batch * self.steps
    }

    pub fn has_void(&self) -> bool {
        self.input_start.iter().any(|&s| s > 0)
    }

    /// Per-position input factor: 0 for void positions, 1 otherwise.
    pub fn void_factors(&self) -> Vec<bool> {
        let mut f = Vec::with_capacity(self.num_tokens());
        for &start in &self.input_start {
            f.extend((0..self.steps).map(|t| t >= start));
        }
        f
    }

    /// A single sequence as a one-row batch.
    pub fn from_sequence(seq: &[usize]) -> Result<Self> {
        let mut b = batch_sentences(&[seq.to_vec()], 1);
        b.pop()
            .ok_or_else(|| Error::Data("sequence too short to score".into()))
    }
}

/// Groups sequences by length into batches of at most `batch_size`,
/// right-padding and masking the tail of shorter rows. Sequences with fewer
/// than two tokens carry no prediction and are skipped.
pub fn batch_sentences(seqs: &[Vec<usize>], batch_size: usize) -> Vec<Batch> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..seqs.len()).filter(|&i| seqs[i].len() >= 2).collect();
    order.sort_by_key(|&i| seqs[i].len());
    order
        .chunks(batch_size)
        .map(|group| {
            let steps = group.iter().map(|&i| seqs[i].len() - 1).max().unwrap_or(1);
            let rows = group.len();
            let mut b = Batch {
                batch: rows,
                steps,
                inputs: vec![UNK; rows * steps],
                targets: vec![UNK; rows * steps],
                mask: vec![false; rows * steps],
                input_start: vec![0; rows],
            };
            for (r, &i) in group.iter().enumerate() {
                let s = &seqs[i];
                for t in 0..s.len() - 1 {
                    b.inputs[r * steps + t] = s[t];
                    b.targets[r * steps + t] = s[t + 1];
                    b.mask[r * steps + t] = s[t + 1] != BOS;
                }
            }
            b
        })
        .collect()
}

/// Splits the concatenated stream into `lanes` contiguous lanes and walks
/// them `steps` positions at a time. Each batch row is prefixed with the
/// `carry` stream tokens preceding its first position (masked), so
/// convolution context crosses batch boundaries; positions before the stream
/// start are void.
pub fn batch_contiguous(seqs: &[Vec<usize>], lanes: usize, steps: usize, carry: usize) -> Vec<Batch> {
    let stream: Vec<usize> = seqs.iter().flatten().copied().collect();
    let lanes = lanes.max(1);
    let steps = steps.max(2);
    if stream.len() < 2 {
        return Vec::new();
    }
    let lane_len = stream.len().div_ceil(lanes);
    let per_lane = lane_len.div_ceil(steps);
    let width = carry + steps;
    let mut out = Vec::with_capacity(per_lane);
    for j in 0..per_lane {
        let mut b = Batch {
            batch: lanes,
            steps: width,
            inputs: vec![UNK; lanes * width],
            targets: vec![UNK; lanes * width],
            mask: vec![false; lanes * width],
            input_start: vec![0; lanes],
        };
        for lane in 0..lanes {
            let lane_start = lane * lane_len;
            let lane_end = ((lane + 1) * lane_len).min(stream.len());
            let first = lane_start + j * steps;
            let row = lane * width;
            b.input_start[lane] = carry.saturating_sub(first);
            for c in 0..carry {
                if let Some(p) = (first + c).checked_sub(carry) {
                    if p < stream.len() {
                        b.inputs[row + c] = stream[p];
                    }
                }
            }
            for t in 0..steps {
                let p = first + t;
                if p >= lane_end {
                    break;
                }
                b.inputs[row + carry + t] = stream[p];
                if p + 1 < stream.len() {
                    b.targets[row + carry + t] = stream[p + 1];
                    b.mask[row + carry + t] = stream[p + 1] != BOS;
                }
            }
        }
        if b.unmasked() > 0 || j == 0 {
            out.push(b);
        }
    }
    out
}

/// Number of predictable tokens: every token except each sequence's `<s>`.
pub fn predictable_tokens(seqs: &[Vec<usize>]) -> usize {
    seqs.iter().map(|s| s.len().saturating_sub(1)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rare_words_become_unk() {
        let v = build_vocab("a a a b".split_whitespace(), 3).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.count(UNK), 1);
    }

    #[test]
    fn min_count_one_keeps_everything() {
        let v = build_vocab("x y z y".split_whitespace(), 1).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("y"), 3);
        assert_eq!(v.id("x"), 4);
        assert_eq!(v.id("z"), 5);
    }

    #[test]
    fn ties_keep_first_occurrence_order() {
        let text = "q p r q p r s";
        let a = build_vocab(text.split_whitespace(), 1).unwrap();
        let b = build_vocab(text.split_whitespace(), 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(&a.tokens()[3..], &["q", "p", "r", "s"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(build_vocab("".split_whitespace(), 1).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let v = build_vocab_from_text("the cat\nthe dog\n", 1).unwrap();
        let back = Vocabulary::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        assert_eq!(v.count(BOS), 2);
        assert!(Vocabulary::from_tsv("a\t3\n").is_err());
    }

    #[test]
    fn encode_sentence() {
        let v = build_vocab("the cat".split_whitespace(), 1).unwrap();
        let seqs = encode_lines("the cat\nthe mouse\n", &v, Mode::Sentence);
        assert_eq!(seqs[0], vec![BOS, v.id("the"), v.id("cat"), EOS]);
        assert_eq!(seqs[1][2], UNK);
        assert_eq!(v.decode(&seqs[0]), vec!["<s>", "the", "cat", "</s>"]);
    }

    #[test]
    fn paragraph_mode_contrast() {
        let v = build_vocab("a b c d".split_whitespace(), 1).unwrap();
        assert_eq!(encode_lines("a b\n\nc d\n", &v, Mode::Paragraph).len(), 2);
        let joined = encode_lines("a b\nc d\n", &v, Mode::Paragraph);
        assert_eq!(joined.len(), 1);
        assert_eq!(joined[0].len(), 6);
        assert_eq!(encode_lines("a b\nc d\n", &v, Mode::Sentence).len(), 2);
    }

    #[test]
    fn single_sentence_batch() {
        let a = 3;
        let b = batch_sentences(&[vec![BOS, a, EOS]], 4);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].inputs, vec![BOS, a]);
        assert_eq!(b[0].targets, vec![a, EOS]);
        assert_eq!(b[0].mask, vec![true, true]);
    }

    #[test]
    fn padding_is_masked() {
        let b = batch_sentences(&[vec![1, 3, 2], vec![1, 3, 4, 5, 2]], 2);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].steps, 4);
        assert_eq!(b[0].mask, vec![true, true, false, false, true, true, true, true]);
    }

    #[test]
    fn contiguous_lane_arithmetic() {
        let seqs = vec![(0..100).map(|i| 3 + i % 7).collect::<Vec<_>>()];
        let b = batch_contiguous(&seqs, 2, 10, 0);
        assert_eq!(b.len(), 5);
        assert_eq!(b[0].inputs[..10], seqs[0][..10]);
        assert_eq!(b[4].inputs[..10], seqs[0][40..50]);
        assert_eq!(b[0].inputs[10..], seqs[0][50..60]);
        let total: usize = b.iter().map(Batch::unmasked).sum();
        assert_eq!(total, 99);
    }

    #[test]
    fn carried_tokens_are_masked() {
        let seqs = vec![(0..40).map(|i| 3 + i % 5).collect::<Vec<_>>()];
        let b = batch_contiguous(&seqs, 2, 5, 3);
        for batch in &b {
            for r in 0..batch.batch {
                for c in 0..3 {
                    assert!(!batch.mask[r * batch.steps + c]);
                }
            }
        }
        assert_eq!(b[0].input_start, vec![3, 0]);
        assert_eq!(b[1].input_start, vec![0, 0]);
        assert_eq!(b[1].inputs[..3], seqs[0][2..5]);
    }
}
