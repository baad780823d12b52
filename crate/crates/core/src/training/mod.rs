//! Outcome-weighted decision supervision, classification loss, the
//! minibatch trainer, the single-capture baseline and greedy evaluation.

use rayon::prelude::*;

use crate::agent::{unroll, AgentParams, AgentVars, Decision, Driver, Mode, ParamId, Trajectory, Unroll};
use crate::datasets::{batches, IlluminationDataset};
use crate::error::{Error, Result};
use crate::numerics::{clip_global_norm, softmax_rows, Adam, Real, Tape, Tensor, Var};
use crate::rng::{stream, Purpose};

/// How an episode's outcome becomes per-step decision targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum DecisionMapping {
    /// Supervises the decisions actually taken from the terminal outcome
    /// (see [`decision_targets`]).
    #[default]
    OutcomeWeighted,
    /// Supervises every step with the outcome an exit there would have had:
    /// exit (weight `r_exit`) where the classifier is already right,
    /// continue (weight `r_stay`) where it is wrong.
    PerStep,
}

impl DecisionMapping {
    pub const ALL: [Self; 2] = [Self::OutcomeWeighted, Self::PerStep];

    pub fn name(self) -> &'static str {
        match self {
            Self::OutcomeWeighted => "outcome-weighted-ce",
            Self::PerStep => "per-step-outcome-ce",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::Validation(format!("unknown decision mapping {name:?}")))
    }

    pub fn targets(self, trajectory: &Trajectory, reward: RewardSpec) -> Result<Vec<DecisionTarget>> {
        match self {
            Self::OutcomeWeighted => decision_targets(trajectory, reward),
            Self::PerStep => per_step_targets(trajectory, reward),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardSpec {
    pub r_stay: f64,
    pub r_exit: f64,
}

impl RewardSpec {
    pub fn new(r_stay: f64, r_exit: f64) -> Result<Self> {
        let r = Self { r_stay, r_exit };
        r.validate()?;
        Ok(r)
    }

    /// `r_stay = 1` with the given exit reward.
    pub fn with_exit(r_exit: f64) -> Self {
        Self { r_stay: 1.0, r_exit }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_stay > 0.0 && self.r_exit > 0.0 && self.r_stay.is_finite() && self.r_exit.is_finite()) {
            return Err(Error::Validation(format!(
                "rewards must be positive, got stay {} exit {}",
                self.r_stay, self.r_exit
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub reward: RewardSpec,
    pub seed: u64,
    /// Evaluate every this many epochs.
    pub eval_every: usize,
    /// Single-capture training of φ₀, V, M and C only.
    pub baseline: bool,
    pub clip_norm: f64,
    pub mapping: DecisionMapping,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 20,
            reward: RewardSpec::with_exit(1.0),
            seed: 0,
            eval_every: 1,
            baseline: false,
            clip_norm: 5.0,
            mapping: DecisionMapping::OutcomeWeighted,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Validation("batch size and eval cadence must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Validation(format!("clip norm {}", self.clip_norm)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecisionTarget {
    pub decision: Decision,
    pub weight: f64,
}

/// Per-step decision supervision from the episode's outcome.
///
/// A correct classification reinforces the exit (weight `r_exit`) and every
/// earlier continue (weight `r_stay`). An incorrect one marks the exit step
/// as "should have continued" (weight `r_stay`) and leaves earlier steps
/// unweighted. An exit forced by the step limit carries no weight.
pub fn decision_targets(trajectory: &Trajectory, reward: RewardSpec) -> Result<Vec<DecisionTarget>> {
    if !trajectory.is_complete() {
        return Err(Error::State("decision targets need a complete trajectory".into()));
    }
    let n = trajectory.len();
    let correct = trajectory.correct();
    Ok((0..n)
        .map(|t| {
            let last = t + 1 == n;
            let (decision, weight) = match (last, correct) {
                (false, true) => (Decision::Continue, reward.r_stay),
                (false, false) => (Decision::Continue, 0.0),
                (true, true) => (Decision::Exit, reward.r_exit),
                (true, false) => (Decision::Continue, reward.r_stay),
            };
            let weight = if last && trajectory.forced_exit() { 0.0 } else { weight };
            DecisionTarget { decision, weight }
        })
        .collect())
}

fn per_step_targets(trajectory: &Trajectory, reward: RewardSpec) -> Result<Vec<DecisionTarget>> {
    if !trajectory.is_complete() {
        return Err(Error::State("decision targets need a complete trajectory".into()));
    }
    Ok(trajectory
        .steps
        .iter()
        .map(|s| {
            let (decision, weight) = if s.prediction == trajectory.label {
                (Decision::Exit, reward.r_exit)
            } else {
                (Decision::Continue, reward.r_stay)
            };
            DecisionTarget {
                decision,
                weight: if s.forced { 0.0 } else { weight },
            }
        })
        .collect())
}

fn xent(logits: &[f32], target: usize) -> f64 {
    let t = Tensor::matrix(1, logits.len(), logits.to_vec()).expect("row");
    -softmax_rows(&t)[target].ln()
}

/// Cross-entropy of the terminal class logits against the label.
pub fn classification_loss(trajectory: &Trajectory) -> Result<f64> {
    if trajectory.class_logits.is_empty() {
        return Err(Error::State("trajectory has not been classified".into()));
    }
    if trajectory.label >= trajectory.class_logits.len() {
        return Err(Error::OutOfRange {
            index: trajectory.label,
            len: trajectory.class_logits.len(),
        });
    }
    Ok(xent(&trajectory.class_logits, trajectory.label))
}

/// Weighted two-way cross-entropy summed over steps.
pub fn decision_loss(trajectory: &Trajectory, reward: RewardSpec) -> Result<f64> {
    decision_loss_with(trajectory, reward, DecisionMapping::OutcomeWeighted)
}

/// [`decision_loss`] under an explicit mapping.
pub fn decision_loss_with(trajectory: &Trajectory, reward: RewardSpec, mapping: DecisionMapping) -> Result<f64> {
    let targets = mapping.targets(trajectory, reward)?;
    Ok(trajectory
        .steps
        .iter()
        .zip(&targets)
        .filter(|(_, t)| t.weight != 0.0)
        .map(|(s, t)| t.weight * xent(&s.decision_logits, t.decision.index()))
        .sum())
}

/// Batch-mean loss nodes of an unrolled batch.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub classification: Var,
    pub decision: Var,
    pub total: Var,
}

/// Builds the batch-mean classification and decision losses on `tape`.
/// With `reward = None` the decision loss is a constant zero.
pub fn loss_nodes<T: Real>(
    tape: &mut Tape<T>,
    unrolled: &Unroll,
    reward: Option<RewardSpec>,
    mapping: DecisionMapping,
) -> Result<LossNodes> {
    let b = unrolled.batch_size();
    if b == 0 {
        return Err(Error::Validation("empty batch".into()));
    }
    let scale = 1.0 / b as f64;
    let zero = tape.constant(Tensor::scalar(T::ZERO));

    let mut cls = zero;
    for e in &unrolled.exits {
        let labels: Vec<usize> = e.rows.iter().map(|&r| unrolled.trajectories[r].label).collect();
        let l = tape.cross_entropy(e.logits, &labels)?;
        cls = tape.add(cls, l)?;
    }
    let cls = tape.scale(cls, scale);

    let mut dec = zero;
    if let Some(reward) = reward {
        let targets: Vec<Vec<DecisionTarget>> = unrolled
            .trajectories
            .iter()
            .map(|t| mapping.targets(t, reward))
            .collect::<Result<_>>()?;
        for (t, s) in unrolled.steps.iter().enumerate() {
            let mut q = vec![0.0; 2 * s.rows.len()];
            for (j, &r) in s.rows.iter().enumerate() {
                let tg = targets[r][t];
                q[2 * j + tg.decision.index()] = tg.weight;
            }
            if q.iter().all(|&w| w == 0.0) {
                continue;
            }
            let l = tape.softmax_xent(s.logits, &q)?;
            dec = tape.add(dec, l)?;
        }
    }
    let dec = tape.scale(dec, scale);
    let total = tape.add(cls, dec)?;
    Ok(LossNodes {
        classification: cls,
        decision: dec,
        total,
    })
}

/// Running metrics of one training epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub samples: usize,
    pub correct: usize,
    pub total_length: usize,
    pub loss_cls: f64,
    pub loss_dec: f64,
    pub batches: usize,
    pub skipped: usize,
}

impl EpochMetrics {
    pub fn accuracy(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.correct as f64 / self.samples as f64
        }
    }

    pub fn mean_length(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.total_length as f64 / self.samples as f64
        }
    }
}

/// Parameters plus optimizer state across epochs.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub params: AgentParams,
    pub config: TrainConfig,
    adam: Adam,
    epoch: usize,
}

impl Trainer {
    /// For a baseline config the agent's step limit is set to 1.
    pub fn new(mut params: AgentParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.baseline {
            params.config.t_max = 1;
        }
        let adam = Adam::for_params(params.tensors(), config.learning_rate);
        Ok(Self {
            params,
            config,
            adam,
            epoch: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Whether `id` is updated under this config.
    pub fn trains(&self, id: ParamId) -> bool {
        !(self.config.baseline && (id.is_decision_head() || id.is_pattern_head()))
    }

    fn reward(&self) -> Option<RewardSpec> {
        (!self.config.baseline).then_some(self.config.reward)
    }

    /// One pass over `dataset` in seeded minibatches. Batches with a
    /// non-finite loss or update are skipped and counted.
    pub fn train_epoch(&mut self, dataset: &IlluminationDataset) -> Result<EpochMetrics> {
        check_dataset(dataset, &self.params)?;
        let epoch = self.epoch;
        let seed = self.config.seed;
        let order = batches(dataset.len(), self.config.batch_size, &mut stream(seed, Purpose::Shuffle, epoch as u64));
        let mut m = EpochMetrics {
            epoch: epoch + 1,
            ..Default::default()
        };
        for batch in order {
            let stacks: Vec<&[f32]> = batch.iter().map(|&i| dataset.stack_data(i)).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| dataset.label(i)).collect();
            let mut rngs: Vec<_> = batch
                .iter()
                .map(|&i| stream(seed, Purpose::Rollout, ((epoch as u64) << 32) | i as u64))
                .collect();

            let mut tape = Tape::<f32>::new();
            let vars = self.params.to_tape(&mut tape, |id| self.trains(id));
            let u = unroll(&mut tape, &vars, &self.params.config, &stacks, &labels, Driver::Sample {
                mode: Mode::Stochastic,
                rngs: &mut rngs,
            })?;
            let loss = loss_nodes(&mut tape, &u, self.reward(), self.config.mapping)?;
            m.batches += 1;
            let (lc, ld) = (
                tape.value(loss.classification).item().wide(),
                tape.value(loss.decision).item().wide(),
            );
            if !(lc.is_finite() && ld.is_finite()) {
                m.skipped += 1;
                continue;
            }
            let mut grads = gradient_vectors(&tape, &vars, loss.total, &self.params)?;
            clip_global_norm(&mut grads, self.config.clip_norm);
            match self.adam.update(self.params.tensors_mut(), &grads) {
                Ok(()) => {}
                Err(Error::NonFinite(_)) => {
                    m.skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
            m.samples += batch.len();
            m.correct += u.trajectories.iter().filter(|t| t.correct()).count();
            m.total_length += u.trajectories.iter().map(Trajectory::len).sum::<usize>();
            m.loss_cls += lc * batch.len() as f64;
            m.loss_dec += ld * batch.len() as f64;
        }
        if m.samples > 0 {
            m.loss_cls /= m.samples as f64;
            m.loss_dec /= m.samples as f64;
        }
        self.epoch += 1;
        Ok(m)
    }
}

/// Gradient of `root` for every parameter tensor (zeros where untracked).
pub fn gradient_vectors<T: Real>(tape: &Tape<T>, vars: &AgentVars, root: Var, params: &AgentParams) -> Result<Vec<Vec<f64>>> {
    let g = tape.backward(root)?;
    Ok(ParamId::ALL
        .iter()
        .zip(params.tensors())
        .map(|(&id, t)| g.wide(vars.get(id)).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect())
}

fn check_dataset(dataset: &IlluminationDataset, params: &AgentParams) -> Result<()> {
    let cfg = &params.config;
    if dataset.n_slices() != cfg.n_pattern || dataset.dims() != cfg.image_dims {
        return Err(Error::dim(format!(
            "dataset stacks {}×{:?} for an agent expecting {}×{:?}",
            dataset.n_slices(),
            dataset.dims(),
            cfg.n_pattern,
            cfg.image_dims
        )));
    }
    if dataset.n_classes() > cfg.n_classes {
        return Err(Error::dim(format!(
            "{} dataset classes for a {}-way classifier",
            dataset.n_classes(),
            cfg.n_classes
        )));
    }
    Ok(())
}

/// One epoch of `trainer` (free-function form).
pub fn train_epoch(dataset: &IlluminationDataset, trainer: &mut Trainer) -> Result<EpochMetrics> {
    trainer.train_epoch(dataset)
}

/// Trains the single-capture baseline for `config.epochs` epochs.
pub fn train_baseline(dataset: &IlluminationDataset, params: AgentParams, config: &TrainConfig) -> Result<AgentParams> {
    let mut cfg = config.clone();
    cfg.baseline = true;
    let mut trainer = Trainer::new(params, cfg)?;
    for _ in 0..config.epochs {
        trainer.train_epoch(dataset)?;
    }
    Ok(trainer.params)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LengthBin {
    pub count: usize,
    pub correct: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_length: f64,
    pub samples: usize,
    pub correct: usize,
    /// Index `t − 1` holds episodes of length `t`.
    pub per_length: Vec<LengthBin>,
    pub seed: u64,
    /// Decision supervision the agent was trained under; `None` for the
    /// baseline.
    pub reward: Option<RewardSpec>,
    pub mapping: Option<DecisionMapping>,
}

const EVAL_CHUNK: usize = 128;

/// Greedy rollouts over `dataset` with readout noise seeded per sample.
pub fn evaluate_trajectories(dataset: &IlluminationDataset, params: &AgentParams, seed: u64) -> Result<Vec<Trajectory>> {
    check_dataset(dataset, params)?;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let chunks: Vec<Vec<Trajectory>> = idx
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let stacks: Vec<&[f32]> = chunk.iter().map(|&i| dataset.stack_data(i)).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.label(i)).collect();
            let mut rngs: Vec<_> = chunk.iter().map(|&i| stream(seed, Purpose::Evaluate, i as u64)).collect();
            let mut tape = Tape::<f32>::new();
            let vars = params.to_tape(&mut tape, |_| false);
            let u = unroll(&mut tape, &vars, &params.config, &stacks, &labels, Driver::Sample {
                mode: Mode::Greedy,
                rngs: &mut rngs,
            })?;
            Ok(u.trajectories)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Summary of evaluated episodes. `training` records the reward and mapping
/// the agent was trained under.
pub fn report(trajectories: &[Trajectory], t_max: usize, seed: u64, training: Option<&TrainConfig>) -> EvalReport {
    let mut per_length = vec![LengthBin::default(); t_max];
    for t in trajectories {
        let bin = &mut per_length[t.len().clamp(1, t_max) - 1];
        bin.count += 1;
        bin.correct += t.correct() as usize;
    }
    let n = trajectories.len();
    let correct = trajectories.iter().filter(|t| t.correct()).count();
    let total: usize = trajectories.iter().map(Trajectory::len).sum();
    EvalReport {
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        mean_length: if n == 0 { 0.0 } else { total as f64 / n as f64 },
        samples: n,
        correct,
        per_length,
        seed,
        reward: training.filter(|c| !c.baseline).map(|c| c.reward),
        mapping: training.filter(|c| !c.baseline).map(|c| c.mapping),
    }
}

pub fn evaluate(
    dataset: &IlluminationDataset,
    params: &AgentParams,
    seed: u64,
    training: Option<&TrainConfig>,
) -> Result<EvalReport> {
    let tr = evaluate_trajectories(dataset, params, seed)?;
    Ok(report(&tr, params.config.t_max, seed, training))
}
