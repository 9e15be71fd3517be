use rand::Rng;

use crate::device::ActionMask;
use crate::scalar::Scalar;

/// Softmax over the unmasked logits; masked entries carry probability 0
/// and log-probability −∞.
#[derive(Debug, Clone)]
pub struct MaskedCategorical<T> {
    log_probs: Vec<T>,
    probs: Vec<T>,
}

impl<T: Scalar> MaskedCategorical<T> {
    /// `None` when the mask has no valid entry.
    pub fn new(logits: &[T], mask: &ActionMask) -> Option<Self> {
        assert_eq!(logits.len(), mask.len(), "logit and mask lengths differ");
        let max = logits
            .iter()
            .enumerate()
            .filter(|&(i, _)| mask.allows(i))
            .map(|(_, &z)| z)
            .fold(None, |m: Option<T>, z| Some(m.map_or(z, |m| m.max(z))))?;
        let sum: T = logits.iter().enumerate().filter(|&(i, _)| mask.allows(i)).map(|(_, &z)| (z - max).exp()).sum();
        let lse = max + sum.ln();
        let log_probs: Vec<T> =
            logits.iter().enumerate().map(|(i, &z)| if mask.allows(i) { z - lse } else { T::neg_infinity() }).collect();
        let probs = log_probs.iter().map(|&l| if l.is_finite() { l.exp() } else { T::zero() }).collect();
        Some(Self { log_probs, probs })
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn log_prob(&self, action: usize) -> T {
        self.log_probs[action]
    }

    /// Entropy over the valid support.
    pub fn entropy(&self) -> T {
        self.probs
            .iter()
            .zip(&self.log_probs)
            .filter(|(p, _)| **p > T::zero())
            .map(|(&p, &l)| -p * l)
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, p) in self.probs.iter().enumerate() {
            let p = p.f64();
            if p > 0.0 {
                acc += p;
                last = i;
                if u < acc {
                    return i;
                }
            }
        }
        last
    }

    /// Most probable action; ties go to the lowest index.
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Gradient of `coef_logp · log π(action) + coef_ent · H` with respect
    /// to the raw logits. Masked entries get exactly zero.
    pub fn grad_logits(&self, action: Option<usize>, coef_logp: T, coef_ent: T) -> Vec<T> {
        let h = self.entropy();
        self.probs
            .iter()
            .zip(&self.log_probs)
            .enumerate()
            .map(|(j, (&p, &l))| {
                if p == T::zero() {
                    return T::zero();
                }
                let mut g = -coef_ent * p * (l + h);
                if let Some(a) = action {
                    let ind = if j == a { T::one() } else { T::zero() };
                    g += coef_logp * (ind - p);
                }
                g
            })
            .collect()
    }
}
