use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::device::ActionMask;
use crate::env::{Decision, MappingEnv, Observation, Policy, PolicyStep};
use crate::ir::DataflowGraph;
use crate::scalar::Scalar;

use super::{ActorCritic, Encoded, GraphTensors, MaskedCategorical};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    Sample,
    /// Most probable valid action.
    Greedy,
}

struct Cached<T> {
    graph: Arc<DataflowGraph>,
    actor: Option<Encoded<T>>,
    critic: Option<Encoded<T>>,
}

/// Drives an environment with a read-only model.
pub struct ModelPolicy<'m, T: Scalar> {
    model: &'m ActorCritic<T>,
    mode: SelectMode,
    cache: Option<Cached<T>>,
}

impl<'m, T: Scalar> ModelPolicy<'m, T> {
    pub fn new(model: &'m ActorCritic<T>, mode: SelectMode) -> Self {
        Self { model, mode, cache: None }
    }
}

impl<T: Scalar> Policy for ModelPolicy<'_, T> {
    fn begin_episode(&mut self, env: &MappingEnv) {
        if self.cache.as_ref().is_some_and(|c| Arc::ptr_eq(&c.graph, env.graph())) {
            return;
        }
        let tensors = GraphTensors::new(env.graph());
        let m = self.model;
        self.cache = Some(Cached {
            graph: Arc::clone(env.graph()),
            actor: m.actor_net.encode_values(&m.actor, &tensors),
            critic: m.critic_net.encode_values(&m.critic, &tensors),
        });
    }

    fn act(&mut self, env: &MappingEnv, obs: &Observation, mask: &ActionMask, rng: &mut ChaCha8Rng) -> PolicyStep {
        if self.cache.is_none() {
            self.begin_episode(env);
        }
        let cache = self.cache.as_ref().expect("cache filled above");
        let m = self.model;
        let value = m.critic_net.step_values(&m.critic, cache.critic.as_ref(), obs)[0].f64();
        let logits = m.actor_net.step_values(&m.actor, cache.actor.as_ref(), obs);
        let Some(dist) = MaskedCategorical::new(&logits, mask) else {
            return PolicyStep { decision: Decision::DeadEnd, log_prob: 0.0, value };
        };
        let a = match self.mode {
            SelectMode::Sample => dist.sample(rng),
            SelectMode::Greedy => dist.mode(),
        };
        PolicyStep { decision: Decision::Place(env.config().action(a)), log_prob: dist.log_prob(a).f64(), value }
    }
}
