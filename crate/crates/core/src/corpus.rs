//! Deterministic synthetic corpus: order-3 Markov text over word classes with
//! planted long-range marker → echo dependencies.
//!
//! Every word belongs to a class. The class of the next word is a fixed
//! random function of the classes of the previous three tokens (followed
//! with probability `follow_prob`, otherwise a uniformly random class), and
//! the word inside the class is Zipf-distributed. A marker `M<i>` emitted at
//! position `p` forces its echo `E<i>` at position `p + delays[i]`, so only
//! models whose context reaches back `delays[i]` tokens can predict it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub words_per_class: usize,
    pub follow_prob: f64,
    pub zipf_exponent: f64,
    /// Distance from each marker to its echo; one marker per entry.
    pub delays: Vec<usize>,
    pub marker_prob: f64,
    pub min_line: usize,
    pub max_line: usize,
    /// Lines per paragraph; paragraphs are separated by a blank line.
    pub paragraph_lines: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 16,
            words_per_class: 12,
            follow_prob: 0.9,
            zipf_exponent: 1.0,
            delays: vec![4, 7, 10, 13, 16, 19, 22, 24],
            marker_prob: 0.05,
            min_line: 12,
            max_line: 30,
            paragraph_lines: 4,
        }
    }
}

impl SyntheticConfig {
    /// Variant where a quarter of the positions open a marker, so
    /// long-range echoes dominate what a wider context can add.
    pub fn planted() -> Self {
        Self {
            marker_prob: 0.25,
            ..Self::default()
        }
    }
}

/// Order-3 class transition table plus the within-class Zipf law.
#[derive(Clone, Debug)]
pub struct MarkovSource {
    cfg: SyntheticConfig,
    table: Vec<usize>,
    zipf_cdf: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Token {
    Word { class: usize, rank: usize },
    Marker(usize),
    Echo(usize),
}

impl MarkovSource {
    pub fn new(cfg: SyntheticConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7ab1e);
        let c = cfg.classes;
        let table = (0..c * c * c).map(|_| rng.random_range(0..c)).collect();
        let weights: Vec<f64> = (1..=cfg.words_per_class)
            .map(|r| (r as f64).powf(-cfg.zipf_exponent))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let zipf_cdf = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Self {
            cfg,
            table,
            zipf_cdf,
        }
    }

    fn class_of(&self, t: Token) -> usize {
        match t {
            Token::Word { class, .. } => class,
            Token::Marker(i) | Token::Echo(i) => i % self.cfg.classes,
        }
    }

    fn render(t: Token) -> String {
        match t {
            Token::Word { class, rank } => format!("w{class}_{rank}"),
            Token::Marker(i) => format!("M{i}"),
            Token::Echo(i) => format!("E{i}"),
        }
    }

    fn sample_word<R: Rng>(&self, class: usize, rng: &mut R) -> Token {
        let u: f64 = rng.random();
        let rank = self
            .zipf_cdf
            .iter()
            .position(|&c| u <= c)
            .unwrap_or(self.cfg.words_per_class - 1);
        Token::Word { class, rank }
    }

    /// One line of `len` tokens.
    fn line<R: Rng>(&self, len: usize, rng: &mut R) -> Vec<Token> {
        let c = self.cfg.classes;
        let mut out: Vec<Token> = Vec::with_capacity(len);
        let mut pending: Vec<(usize, usize)> = Vec::new();
        for p in 0..len {
            if let Some(k) = pending.iter().position(|&(at, _)| at == p) {
                let (_, m) = pending.swap_remove(k);
                out.push(Token::Echo(m));
                continue;
            }
            if !self.cfg.delays.is_empty() && rng.random_bool(self.cfg.marker_prob) {
                let m = rng.random_range(0..self.cfg.delays.len());
                let at = p + self.cfg.delays[m];
                if at < len && !pending.iter().any(|&(a, _)| a == at) {
                    pending.push((at, m));
                    out.push(Token::Marker(m));
                    continue;
                }
            }
            let class = if p >= 3 && rng.random_bool(self.cfg.follow_prob) {
                let (a, b, cc) = (
                    self.class_of(out[p - 3]),
                    self.class_of(out[p - 2]),
                    self.class_of(out[p - 1]),
                );
                self.table[(a * c + b) * c + cc]
            } else {
                rng.random_range(0..c)
            };
            out.push(self.sample_word(class, rng));
        }
        out
    }
}

/// Generates at least `min_bytes` of corpus text.
pub fn generate(cfg: &SyntheticConfig, min_bytes: usize, seed: u64) -> String {
    let source = MarkovSource::new(cfg.clone(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::with_capacity(min_bytes + 256);
    let mut lines_in_para = 0;
    while text.len() < min_bytes {
        let len = rng.random_range(cfg.min_line..=cfg.max_line);
        let line: Vec<String> = source.line(len, &mut rng).into_iter().map(MarkovSource::render).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
        lines_in_para += 1;
        if cfg.paragraph_lines > 0 && lines_in_para == cfg.paragraph_lines {
            text.push('\n');
            lines_in_para = 0;
        }
    }
    text
}

/// Train/validation split by paragraph (or line, when the text has no
/// blank lines); the last `valid_fraction` of units go to validation.
pub fn split(text: &str, valid_fraction: f64) -> (String, String) {
    let sep = if text.contains("\n\n") { "\n\n" } else { "\n" };
    let units: Vec<&str> = text.split(sep).filter(|u| !u.trim().is_empty()).collect();
    let n_valid = ((units.len() as f64) * valid_fraction).round().max(1.0) as usize;
    let cut = units.len().saturating_sub(n_valid);
    let join = |u: &[&str]| {
        let mut s = u.join(sep);
        s.push('\n');
        s
    };
    (join(&units[..cut]), join(&units[cut..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg, 20_000, 5);
        assert_eq!(a, generate(&cfg, 20_000, 5));
        assert_ne!(a, generate(&cfg, 20_000, 6));
        assert!(a.len() >= 20_000);
    }

    #[test]
    fn echoes_follow_markers_at_their_delay() {
        let cfg = SyntheticConfig::default();
        let text = generate(&cfg, 50_000, 1);
        let mut echoes = 0;
        for line in text.lines() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            for (p, t) in toks.iter().enumerate() {
                if let Some(i) = t.strip_prefix('E') {
                    let i: usize = i.parse().unwrap();
                    assert_eq!(toks[p - cfg.delays[i]], format!("M{i}"));
                    echoes += 1;
                }
            }
        }
        assert!(echoes > 50);
    }

    #[test]
    fn split_keeps_all_paragraphs() {
        let text = generate(&SyntheticConfig::default(), 30_000, 2);
        let (train, valid) = split(&text, 0.1);
        let count = |s: &str| s.split("\n\n").filter(|u| !u.trim().is_empty()).count();
        assert_eq!(count(&train) + count(&valid), count(&text));
        assert!(count(&valid) >= 1);
    }
}
