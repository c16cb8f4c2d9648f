use crate::error::{Error, Result};
use crate::schedule::{TokenId, Vocabulary};
use crate::state::SequenceState;

use super::{check_query, MarginalEstimate, MarginalPredictor};

const LEFT_WEIGHT: f64 = 0.4;
const RIGHT_WEIGHT: f64 = 0.4;
const UNIGRAM_WEIGHT: f64 = 0.2;

/// Bigram corpus model conditioned on the nearest revealed neighbours.
///
/// Row at a masked position mixes `P(v | left)`, the reverse bigram
/// `P(v | right)` and the unigram, all add-one smoothed over real tokens.
/// A side with no revealed neighbour hands its weight to the unigram.
#[derive(Debug, Clone)]
pub struct NgramPredictor {
    vocab: Vocabulary,
    length: usize,
    forward: Vec<f64>,
    backward: Vec<f64>,
    unigram: Vec<f64>,
}

impl NgramPredictor {
    pub fn new(vocab: Vocabulary, corpus: &[Vec<TokenId>], length: usize) -> Result<Self> {
        if corpus.iter().all(|s| s.is_empty()) {
            return Err(Error::Config("n-gram corpus is empty".into()));
        }
        if length == 0 {
            return Err(Error::Config(
                "n-gram predictor length must be positive".into(),
            ));
        }
        let width = vocab.row_width();
        let mut uni = vec![0u64; width];
        let mut pairs = vec![0u64; width * width];
        for seq in corpus {
            if let Some(&bad) = seq.iter().find(|&&t| !vocab.is_real(t)) {
                return Err(Error::Config(format!(
                    "corpus token {bad} is not a real vocabulary token"
                )));
            }
            for &t in seq {
                uni[t as usize] += 1;
            }
            for w in seq.windows(2) {
                pairs[w[0] as usize * width + w[1] as usize] += 1;
            }
        }

        let real: Vec<usize> = vocab.real_tokens().map(|t| t as usize).collect();
        let k = real.len() as f64;
        let smooth = |counts: &mut dyn Iterator<Item = (usize, u64)>| {
            let mut row = vec![0.0; width];
            let mut total = 0u64;
            for (v, c) in counts {
                row[v] = c as f64;
                total += c;
            }
            for &v in &real {
                row[v] = (row[v] + 1.0) / (total as f64 + k);
            }
            row
        };

        let unigram = smooth(&mut real.iter().map(|&v| (v, uni[v])));
        let mut forward = vec![0.0; width * width];
        let mut backward = vec![0.0; width * width];
        for &a in &real {
            let row = smooth(&mut real.iter().map(|&v| (v, pairs[a * width + v])));
            forward[a * width..(a + 1) * width].copy_from_slice(&row);
            let row = smooth(&mut real.iter().map(|&v| (v, pairs[v * width + a])));
            backward[a * width..(a + 1) * width].copy_from_slice(&row);
        }
        Ok(Self {
            vocab,
            length,
            forward,
            backward,
            unigram,
        })
    }
}

impl MarginalPredictor for NgramPredictor {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    fn estimate(&self, state: &SequenceState) -> Result<MarginalEstimate> {
        check_query(state, &self.vocab, self.length)?;
        let width = self.vocab.row_width();
        let tokens = state.tokens();
        let mask = state.mask_id();

        // nearest revealed neighbour on each side, for every position
        let mut left = vec![None; tokens.len()];
        let mut last = None;
        for (i, &t) in tokens.iter().enumerate() {
            left[i] = last;
            if t != mask {
                last = Some(t);
            }
        }
        let mut right = vec![None; tokens.len()];
        last = None;
        for (i, &t) in tokens.iter().enumerate().rev() {
            right[i] = last;
            if t != mask {
                last = Some(t);
            }
        }

        let positions: Vec<usize> = state.masked_positions().collect();
        let mut probs = Vec::with_capacity(positions.len() * width);
        for &i in &positions {
            let mut uni_w = UNIGRAM_WEIGHT;
            let l = match left[i] {
                Some(a) => Some((LEFT_WEIGHT, &self.forward[a as usize * width..][..width])),
                None => {
                    uni_w += LEFT_WEIGHT;
                    None
                }
            };
            let r = match right[i] {
                Some(b) => Some((RIGHT_WEIGHT, &self.backward[b as usize * width..][..width])),
                None => {
                    uni_w += RIGHT_WEIGHT;
                    None
                }
            };
            let start = probs.len();
            probs.extend((0..width).map(|v| {
                let mut p = uni_w * self.unigram[v];
                if let Some((w, row)) = l {
                    p += w * row[v];
                }
                if let Some((w, row)) = r {
                    p += w * row[v];
                }
                p
            }));
            // the mixture weights carry rounding; renormalise so rows sum to 1
            let row = &mut probs[start..];
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
        }
        MarginalEstimate::new(width, positions, probs)
    }
}
