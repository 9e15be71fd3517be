use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::nn::Adam;
use crate::policy::{ActorCritic, GraphTensors, MaskedCategorical, StepRef};
use crate::scalar::Scalar;

use super::{RolloutBuffer, TrainConfig, TrainError};

/// `min(r A, g(ε, A))` with `g = (1 + ε) A` for `A ≥ 0`, else `(1 − ε) A`.
/// Returns the objective and its derivative with respect to `log π`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> (f64, f64) {
    let g = if advantage >= 0.0 { (1.0 + clip) * advantage } else { (1.0 - clip) * advantage };
    let unclipped = ratio * advantage;
    if unclipped <= g {
        (unclipped, unclipped)
    } else {
        (g, 0.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    /// Negated clipped objective plus entropy bonus, last update epoch.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Value loss over the whole buffer before any update.
    pub initial_value_loss: f64,
}

fn non_finite(iteration: usize, what: &'static str, detail: String) -> TrainError {
    TrainError::NonFinite { iteration, what, detail }
}

/// Runs `cfg.update_epochs` passes of minibatch Adam over the buffer.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<T: Scalar>(
    model: &mut ActorCritic<T>,
    actor_opt: &mut Adam<T>,
    critic_opt: &mut Adam<T>,
    buffer: &RolloutBuffer,
    tensors: &[GraphTensors<T>],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    iteration: usize,
) -> Result<UpdateStats, TrainError> {
    assert_eq!(buffer.returns.len(), buffer.len(), "returns not computed");
    let mut stats = UpdateStats::default();
    if buffer.is_empty() {
        return Ok(stats);
    }
    let mb = if cfg.minibatch_size == 0 { buffer.len() } else { cfg.minibatch_size.min(buffer.len()) };
    let ent = cfg.entropy_coef;
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    for epoch in 0..cfg.update_epochs {
        order.shuffle(rng);
        let (mut pl, mut vl, mut h, mut kl, mut clipped, mut acted_total) = (0.0, 0.0, 0.0, 0.0, 0usize, 0usize);
        for chunk in order.chunks(mb) {
            let mut idx = chunk.to_vec();
            idx.sort_by_key(|&i| (buffer.steps[i].graph, i));
            let steps: Vec<StepRef<'_, T>> = idx
                .iter()
                .map(|&i| StepRef { graph: &tensors[buffer.steps[i].graph], observation: &buffer.steps[i].observation })
                .collect();
            let acted = idx.iter().filter(|&&i| buffer.steps[i].action.is_some()).count();

            if acted > 0 {
                let grads = {
                    let mut tape = crate::nn::Tape::new(&model.actor);
                    let z = model.actor_logits(&mut tape, &steps);
                    let logits = tape.value(z);
                    let mut seed = Array2::<T>::zeros(logits.raw_dim());
                    let n = acted as f64;
                    for (r, &i) in idx.iter().enumerate() {
                        let s = &buffer.steps[i];
                        let Some(a) = s.action else { continue };
                        let row = logits.row(r).to_vec();
                        let dist = MaskedCategorical::new(&row, &s.mask)
                            .ok_or_else(|| non_finite(iteration, "policy", format!("step {i} has an empty mask")))?;
                        if !s.mask.allows(a) {
                            return Err(TrainError::Config(format!("buffer step {i}: action {a} violates its mask")));
                        }
                        let logp = dist.log_prob(a).f64();
                        let ratio = (logp - s.log_prob).exp();
                        let (obj, coef) = clipped_objective(ratio, buffer.advantages[i], cfg.clip);
                        let entropy = dist.entropy().f64();
                        if !(obj.is_finite() && entropy.is_finite()) {
                            return Err(non_finite(
                                iteration,
                                "policy loss",
                                format!("step {i}: ratio {ratio}, advantage {}, entropy {entropy}", buffer.advantages[i]),
                            ));
                        }
                        pl -= (obj + ent * entropy) / n;
                        h += entropy / n;
                        kl += (s.log_prob - logp) / n;
                        if (ratio - 1.0).abs() > cfg.clip {
                            clipped += 1;
                        }
                        let g = dist.grad_logits(Some(a), T::of(coef), T::of(ent));
                        for (j, x) in g.into_iter().enumerate() {
                            seed[[r, j]] = -x / T::of(n);
                        }
                    }
                    tape.backward(&[(z, seed)])
                };
                let mut grads = grads;
                if !grads.is_finite() {
                    return Err(non_finite(iteration, "actor gradient", format!("epoch {epoch}")));
                }
                grads.clip_norm(T::of(cfg.max_grad_norm));
                actor_opt.step(&mut model.actor, &grads);
                acted_total += acted;
            }

            let grads = {
                let mut tape = crate::nn::Tape::new(&model.critic);
                let v = model.critic_values(&mut tape, &steps);
                let values = tape.value(v);
                let n = idx.len() as f64;
                let mut seed = Array2::<T>::zeros(values.raw_dim());
                for (r, &i) in idx.iter().enumerate() {
                    let diff = values[[r, 0]].f64() - buffer.returns[i];
                    vl += diff * diff / n;
                    seed[[r, 0]] = T::of(2.0 * diff / n);
                }
                if !vl.is_finite() {
                    return Err(non_finite(iteration, "value loss", format!("epoch {epoch}")));
                }
                tape.backward(&[(v, seed)])
            };
            let mut grads = grads;
            if !grads.is_finite() {
                return Err(non_finite(iteration, "critic gradient", format!("epoch {epoch}")));
            }
            grads.clip_norm(T::of(cfg.max_grad_norm));
            critic_opt.step(&mut model.critic, &grads);
        }
        let batches = order.len().div_ceil(mb) as f64;
        stats = UpdateStats {
            policy_loss: pl / batches,
            value_loss: vl / batches,
            entropy: h / batches,
            approx_kl: kl / batches,
            clip_fraction: if acted_total > 0 { clipped as f64 / acted_total as f64 } else { 0.0 },
            initial_value_loss: stats.initial_value_loss,
        };
        if epoch == 0 {
            stats.initial_value_loss = stats.value_loss;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_one_is_unclipped() {
        assert_eq!(clipped_objective(1.0, 2.5, 0.2), (2.5, 2.5));
        assert_eq!(clipped_objective(1.0, -2.5, 0.2), (-2.5, -2.5));
    }

    #[test]
    fn clipping_both_signs() {
        let (v, g) = clipped_objective(1.5, 2.0, 0.2);
        assert!((v - 2.4).abs() < 1e-12 && g == 0.0);
        let (v, g) = clipped_objective(0.5, -2.0, 0.2);
        assert!((v + 1.6).abs() < 1e-12 && g == 0.0);
        // Pessimistic side stays unclipped.
        assert_eq!(clipped_objective(0.5, 2.0, 0.2), (1.0, 1.0));
    }

    #[test]
    fn infinite_clip_is_vanilla_surrogate() {
        for &(r, a) in &[(1.0, 0.3), (1.0, -4.0), (2.0, 1.0), (0.1, -1.0)] {
            assert_eq!(clipped_objective(r, a, f64::INFINITY), (r * a, r * a));
        }
    }
}
