use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::device::{DeviceConfig, Mapping};
use crate::ir::DataflowGraph;
use crate::nn::Adam;
use crate::policy::{save_checkpoint, ActorCritic, Checkpoint, GraphTensors, ModelConfig, ModelError};
use crate::scalar::Scalar;

use super::buffer::collect_with;
use super::{compute_returns_advantages, ppo_update, RolloutPlan, TrainConfig, TrainError, UpdateStats};

pub const METRICS_HEADER: &str = "iter,episodes,mean_return,best_return,best_cycles,wall_time_s";

#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iter: usize,
    /// Episodes run so far.
    pub episodes: usize,
    pub mean_return: f64,
    pub best_return: f64,
    /// Smallest makespan over complete episodes so far.
    pub best_cycles: Option<u64>,
    pub wall_time_s: f64,
    pub update: UpdateStats,
}

impl IterationMetrics {
    pub fn csv_row(&self) -> String {
        let cycles = self.best_cycles.map(|c| c.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{:.3}",
            self.iter, self.episodes, self.mean_return, self.best_return, cycles, self.wall_time_s
        )
    }
}

pub fn write_metrics_csv(path: &Path, metrics: &[IterationMetrics]) -> std::io::Result<()> {
    let mut f = File::create(path)?;
    writeln!(f, "{METRICS_HEADER}")?;
    for m in metrics {
        writeln!(f, "{}", m.csv_row())?;
    }
    Ok(())
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub model: ActorCritic<T>,
    pub metrics: Vec<IterationMetrics>,
    pub best_return: f64,
    pub best_cycles: Option<u64>,
    /// Graph index and mapping that achieved `best_cycles`.
    pub best_mapping: Option<(usize, Mapping)>,
    pub step: u64,
}

pub struct Trainer<T: Scalar> {
    pub model: ActorCritic<T>,
    actor_opt: Adam<T>,
    critic_opt: Adam<T>,
    graphs: Vec<Arc<DataflowGraph>>,
    tensors: Vec<GraphTensors<T>>,
    device: DeviceConfig,
    cfg: TrainConfig,
    rng: ChaCha8Rng,
    pool: Option<rayon::ThreadPool>,
    iteration: usize,
    episodes: usize,
    step: u64,
    best_return: f64,
    best_cycles: Option<u64>,
    best_mapping: Option<(usize, Mapping)>,
    metrics: Vec<IterationMetrics>,
    started: Instant,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(
        model: ActorCritic<T>,
        graphs: Vec<Arc<DataflowGraph>>,
        device: DeviceConfig,
        cfg: TrainConfig,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        device.validate()?;
        if graphs.is_empty() {
            return Err(TrainError::Config("no training graphs".into()));
        }
        if model.action_dim() != device.action_dim() {
            return Err(ModelError::Checkpoint(format!(
                "action_dim mismatch: model has {}, device has {}",
                model.action_dim(),
                device.action_dim()
            ))
            .into());
        }
        let pool = if cfg.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.workers)
                    .build()
                    .map_err(|e| TrainError::Config(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            actor_opt: Adam::new(&model.actor, T::of(cfg.actor_lr)),
            critic_opt: Adam::new(&model.critic, T::of(cfg.critic_lr)),
            tensors: graphs.iter().map(|g| GraphTensors::new(g)).collect(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            model,
            graphs,
            device,
            cfg,
            pool,
            iteration: 0,
            episodes: 0,
            step: 0,
            best_return: f64::NEG_INFINITY,
            best_cycles: None,
            best_mapping: None,
            metrics: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Continues the step count of a loaded checkpoint.
    pub fn with_step(mut self, step: u64) -> Self {
        self.step = step;
        self
    }

    pub fn metrics(&self) -> &[IterationMetrics] {
        &self.metrics
    }

    pub fn best_return(&self) -> f64 {
        self.best_return
    }

    pub fn best_cycles(&self) -> Option<u64> {
        self.best_cycles
    }

    pub fn best_mapping(&self) -> Option<&(usize, Mapping)> {
        self.best_mapping.as_ref()
    }

    pub fn episodes_run(&self) -> usize {
        self.episodes
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint { model: self.model.clone(), step: self.step, rng: self.rng.clone() }
    }

    /// One collect / returns / update cycle.
    pub fn iterate(&mut self) -> Result<&IterationMetrics, TrainError> {
        let plan = RolloutPlan {
            seed: self.cfg.seed,
            iteration: self.iteration as u64,
            first_episode: self.episodes,
            episodes: self.cfg.episodes_per_iter,
            workers: self.cfg.workers,
            options: self.cfg.env_options(),
        };
        let mut buffer = collect_with(&self.model, &self.graphs, &self.device, &plan, self.pool.as_ref())?;
        self.episodes += buffer.episodes.len();
        let mut sum = 0.0;
        for ep in &buffer.episodes {
            sum += ep.episode_return;
            if ep.episode_return > self.best_return {
                self.best_return = ep.episode_return;
            }
            if let (Some(c), false) = (ep.total_cycles, ep.dead_end) {
                if self.best_cycles.is_none_or(|b| c < b) {
                    self.best_cycles = Some(c);
                    self.best_mapping = Some((ep.graph, ep.mapping.clone()));
                }
            }
        }
        compute_returns_advantages(&mut buffer, self.cfg.gamma, self.cfg.gae_lambda, self.cfg.normalize_advantages);
        let update = ppo_update(
            &mut self.model,
            &mut self.actor_opt,
            &mut self.critic_opt,
            &buffer,
            &self.tensors,
            &self.cfg,
            &mut self.rng,
            self.iteration,
        )?;
        self.step += 1;
        let wall = if self.cfg.log_wall_time { self.started.elapsed().as_secs_f64() } else { 0.0 };
        self.metrics.push(IterationMetrics {
            iter: self.iteration,
            episodes: self.episodes,
            mean_return: sum / buffer.episodes.len() as f64,
            best_return: self.best_return,
            best_cycles: self.best_cycles,
            wall_time_s: wall,
            update,
        });
        self.iteration += 1;
        Ok(self.metrics.last().expect("just pushed"))
    }

    /// Runs `cfg.epochs` iterations. With an output directory, appends to
    /// `metrics.csv` as it goes and writes `checkpoint.json` and
    /// `best_mapping.json`.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<(), TrainError> {
        let mut log = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let mut f = File::create(dir.join("metrics.csv"))?;
                writeln!(f, "{METRICS_HEADER}")?;
                drop(f);
                Some(OpenOptions::new().append(true).open(dir.join("metrics.csv"))?)
            }
            None => None,
        };
        for _ in 0..self.cfg.epochs {
            let row = self.iterate()?.csv_row();
            if let (Some(f), Some(dir)) = (log.as_mut(), out_dir) {
                writeln!(f, "{row}")?;
                f.flush()?;
                if self.cfg.checkpoint_every > 0 && self.iteration % self.cfg.checkpoint_every == 0 {
                    save_checkpoint(&dir.join("checkpoint.json"), &self.checkpoint())?;
                }
            }
        }
        if let Some(dir) = out_dir {
            save_checkpoint(&dir.join("checkpoint.json"), &self.checkpoint())?;
            if let Some((_, m)) = &self.best_mapping {
                std::fs::write(dir.join("best_mapping.json"), m.to_json())?;
            }
        }
        Ok(())
    }

    pub fn into_outcome(self) -> TrainOutcome<T> {
        TrainOutcome {
            model: self.model,
            metrics: self.metrics,
            best_return: self.best_return,
            best_cycles: self.best_cycles,
            best_mapping: self.best_mapping,
            step: self.step,
        }
    }
}

/// Trains a fresh model on `graphs`, cycling through them episode by episode.
pub fn train<T: Scalar>(
    graphs: Vec<Arc<DataflowGraph>>,
    device: &DeviceConfig,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<T>, TrainError> {
    let model = ActorCritic::new(model_cfg.clone(), device, cfg.seed)?;
    let mut trainer = Trainer::new(model, graphs, device.clone(), cfg.clone())?;
    trainer.run(out_dir)?;
    Ok(trainer.into_outcome())
}

/// Continues training a checkpoint on a single target graph.
pub fn finetune<T: Scalar>(
    checkpoint: Checkpoint<T>,
    target: Arc<DataflowGraph>,
    device: &DeviceConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<T>, TrainError> {
    checkpoint.ensure_compatible(device, None)?;
    let mut trainer = Trainer::new(checkpoint.model, vec![target], device.clone(), cfg.clone())?.with_step(checkpoint.step);
    trainer.run(out_dir)?;
    Ok(trainer.into_outcome())
}
