use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::device::{ActionMask, DeviceConfig, Mapping};
use crate::env::{run_episode, EnvOptions, MappingEnv, Observation};
use crate::ir::DataflowGraph;
use crate::policy::{ActorCritic, ModelPolicy, SelectMode};
use crate::scalar::Scalar;

use super::TrainError;

#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Index into the training graph list.
    pub graph: usize,
    pub observation: Observation,
    pub mask: ActionMask,
    /// `None` on a dead-end step, where nothing was sampled.
    pub action: Option<usize>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct EpisodeSummary {
    pub graph: usize,
    pub episode_return: f64,
    pub total_cycles: Option<u64>,
    pub dead_end: bool,
    pub mapping: Mapping,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub steps: Vec<StepRecord>,
    /// Index of each episode's first step.
    pub episode_starts: Vec<usize>,
    pub episodes: Vec<EpisodeSummary>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn episode_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let ends = self.episode_starts.iter().skip(1).copied().chain([self.steps.len()]);
        self.episode_starts.iter().copied().zip(ends).map(|(s, e)| s..e)
    }

    fn push_episode(&mut self, graph: usize, ep: crate::env::Episode) {
        self.episode_starts.push(self.steps.len());
        for t in ep.trajectory {
            self.steps.push(StepRecord {
                graph,
                observation: t.observation,
                mask: t.mask,
                action: t.action,
                log_prob: t.log_prob,
                reward: t.reward,
                value: t.value,
                done: t.done,
            });
        }
        self.episodes.push(EpisodeSummary {
            graph,
            episode_return: ep.episode_return,
            total_cycles: ep.total_cycles,
            dead_end: ep.dead_end,
            mapping: ep.mapping,
        });
    }
}

/// Which episodes to run. Episode `k` (global count) uses graph
/// `k mod |graphs|` and an RNG keyed on `(seed, iteration)` with stream
/// `k`, so results do not depend on the worker count.
#[derive(Debug, Clone, Copy)]
pub struct RolloutPlan {
    pub seed: u64,
    pub iteration: u64,
    pub first_episode: usize,
    pub episodes: usize,
    pub workers: usize,
    pub options: EnvOptions,
}

fn episode_rng(seed: u64, iteration: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(episode as u64);
    rng
}

pub(crate) fn collect_with<T: Scalar>(
    model: &ActorCritic<T>,
    graphs: &[Arc<DataflowGraph>],
    device: &DeviceConfig,
    plan: &RolloutPlan,
    pool: Option<&rayon::ThreadPool>,
) -> Result<RolloutBuffer, TrainError> {
    let run = |k: usize| -> Result<(usize, crate::env::Episode), TrainError> {
        let gi = k % graphs.len();
        let mut rng = episode_rng(plan.seed, plan.iteration, k);
        let mut env = MappingEnv::new(Arc::clone(&graphs[gi]), device.clone(), plan.options)?;
        let mut policy = ModelPolicy::new(model, SelectMode::Sample);
        let env_seed = rng.random();
        Ok((gi, run_episode(&mut policy, &mut env, env_seed, &mut rng)?))
    };
    let range = plan.first_episode..plan.first_episode + plan.episodes;
    let episodes: Vec<_> = match pool {
        Some(pool) if plan.workers > 1 => pool.install(|| range.into_par_iter().map(run).collect()),
        _ => range.map(run).collect(),
    };
    let mut buffer = RolloutBuffer::default();
    for e in episodes {
        let (gi, ep) = e?;
        buffer.push_episode(gi, ep);
    }
    Ok(buffer)
}

/// Samples `plan.episodes` episodes with the current policy, cycling
/// through `graphs`.
pub fn collect_rollouts<T: Scalar>(
    model: &ActorCritic<T>,
    graphs: &[Arc<DataflowGraph>],
    device: &DeviceConfig,
    plan: &RolloutPlan,
) -> Result<RolloutBuffer, TrainError> {
    if plan.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(plan.workers)
            .build()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        collect_with(model, graphs, device, plan, Some(&pool))
    } else {
        collect_with(model, graphs, device, plan, None)
    }
}

/// Discounted returns within each episode and advantages `R - V` (or GAE
/// when `gae_lambda` is set), optionally normalized over steps that carry
/// an action.
pub fn compute_returns_advantages(buffer: &mut RolloutBuffer, gamma: f64, gae_lambda: Option<f64>, normalize: bool) {
    let n = buffer.steps.len();
    let mut returns = vec![0.0; n];
    let mut advantages = vec![0.0; n];
    for range in buffer.episode_ranges().collect::<Vec<_>>() {
        let mut ret = 0.0;
        let mut gae = 0.0;
        for t in range.clone().rev() {
            let s = &buffer.steps[t];
            ret = s.reward + gamma * ret;
            returns[t] = ret;
            if let Some(lambda) = gae_lambda {
                let next_v = if t + 1 < range.end { buffer.steps[t + 1].value } else { 0.0 };
                let delta = s.reward + gamma * next_v - s.value;
                gae = delta + gamma * lambda * gae;
                advantages[t] = gae;
            } else {
                advantages[t] = ret - s.value;
            }
        }
    }
    if gae_lambda.is_some() {
        for t in 0..n {
            returns[t] = advantages[t] + buffer.steps[t].value;
        }
    }
    if normalize {
        let idx: Vec<usize> = (0..n).filter(|&t| buffer.steps[t].action.is_some()).collect();
        if idx.len() > 1 {
            let mean = idx.iter().map(|&t| advantages[t]).sum::<f64>() / idx.len() as f64;
            let var = idx.iter().map(|&t| (advantages[t] - mean).powi(2)).sum::<f64>() / idx.len() as f64;
            let std = var.sqrt() + 1e-8;
            for &t in &idx {
                advantages[t] = (advantages[t] - mean) / std;
            }
        }
    }
    buffer.returns = returns;
    buffer.advantages = advantages;
}
