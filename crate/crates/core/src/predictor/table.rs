use crate::error::{Error, Result};
use crate::hash::mix64;
use crate::schedule::{TokenId, Vocabulary};
use crate::state::SequenceState;

use super::{check_query, MarginalEstimate, MarginalPredictor};

const FOLD_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Synthetic predictor peaked on a fixed target sequence, with a tunable
/// amount of context dependence.
///
/// The row at masked position `i` is `(1 - s) * base_i + s * perturb_i`.
/// `base_i` puts `0.6 + 0.2 * (i mod 3)` on `target[i]` and spreads the rest
/// evenly. `perturb_i` is a categorical drawn from a hash of the seed, `i`
/// and the revealed `(position, token)` pairs, so with `s > 0` revealing a
/// token can reorder confidences elsewhere.
#[derive(Debug, Clone)]
pub struct TablePredictor {
    vocab: Vocabulary,
    target: Vec<TokenId>,
    sensitivity: f64,
    seed: u64,
    base: Vec<f64>,
}

impl TablePredictor {
    pub fn new(
        vocab: Vocabulary,
        target: Vec<TokenId>,
        sensitivity: f64,
        seed: u64,
    ) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::Config("table predictor target is empty".into()));
        }
        if !(0.0..=1.0).contains(&sensitivity) {
            return Err(Error::Config(format!(
                "sensitivity {sensitivity} outside [0, 1]"
            )));
        }
        if let Some(&bad) = target
            .iter()
            .find(|&&t| !vocab.is_real(t) || Some(t) == vocab.eos_id())
        {
            return Err(Error::Config(format!(
                "target token {bad} is special or outside the vocabulary"
            )));
        }
        let width = vocab.row_width();
        let others = vocab.real_count() - 1;
        let mut base = vec![0.0; target.len() * width];
        for (i, &tok) in target.iter().enumerate() {
            let row = &mut base[i * width..(i + 1) * width];
            let peak = if others == 0 {
                1.0
            } else {
                0.6 + 0.4 * (i % 3) as f64 / 2.0
            };
            if others > 0 {
                let rest = (1.0 - peak) / others as f64;
                for v in vocab.real_tokens() {
                    row[v as usize] = rest;
                }
            }
            row[tok as usize] = peak;
        }
        Ok(Self {
            vocab,
            target,
            sensitivity,
            seed,
            base,
        })
    }

    pub fn target(&self) -> &[TokenId] {
        &self.target
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    fn context_hash(&self, state: &SequenceState) -> u64 {
        state.revealed().fold(mix64(self.seed), |h, (p, t)| {
            let h = (h ^ p as u64).wrapping_mul(FOLD_PRIME);
            (h ^ u64::from(t)).wrapping_mul(FOLD_PRIME)
        })
    }

    fn perturb_into(&self, context: u64, position: usize, out: &mut [f64]) {
        let h = mix64(context ^ mix64(position as u64));
        let mut total = 0.0;
        for v in self.vocab.real_tokens() {
            let bits = mix64(h ^ (u64::from(v) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let u = (bits >> 11) as f64 / (1u64 << 53) as f64;
            // squared Exp(1) weights: a lumpier categorical than flat Dirichlet
            let w = (-(1.0 - u).ln()).powi(2);
            out[v as usize] = w;
            total += w;
        }
        if total > 0.0 {
            out.iter_mut().for_each(|w| *w /= total);
        } else {
            let flat = 1.0 / self.vocab.real_count() as f64;
            for v in self.vocab.real_tokens() {
                out[v as usize] = flat;
            }
        }
    }
}

impl MarginalPredictor for TablePredictor {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    fn estimate(&self, state: &SequenceState) -> Result<MarginalEstimate> {
        check_query(state, &self.vocab, self.target.len())?;
        let width = self.vocab.row_width();
        let positions: Vec<usize> = state.masked_positions().collect();
        let mut probs = Vec::with_capacity(positions.len() * width);
        let context = (self.sensitivity > 0.0).then(|| self.context_hash(state));
        let mut perturb = vec![0.0; width];
        for &i in &positions {
            let base = &self.base[i * width..(i + 1) * width];
            match context {
                None => probs.extend_from_slice(base),
                Some(ctx) => {
                    self.perturb_into(ctx, i, &mut perturb);
                    let s = self.sensitivity;
                    probs.extend(
                        base.iter()
                            .zip(&perturb)
                            .map(|(b, p)| (1.0 - s) * b + s * p),
                    );
                }
            }
        }
        MarginalEstimate::new(width, positions, probs)
    }
}
