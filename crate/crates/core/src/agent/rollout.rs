use super::net::{draw_pattern_noise, draw_readout_noise, finish_decision, AgentVars};
use super::{AgentConfig, AgentParams, Decision, Mode};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tape, Tensor, Var};
use crate::optics::PerLedStack;

/// One acquisition step of an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    /// Pattern φ_{t−1} that illuminated this observation.
    pub pattern: Vec<f32>,
    /// Observation after readout noise.
    pub observation: Vec<f32>,
    /// Additive readout noise (empty when noise-free).
    pub readout_noise: Vec<f32>,
    pub embedding: Vec<f32>,
    pub decision: Decision,
    pub forced: bool,
    pub decision_logits: [f32; 2],
    /// Class the classifier would report from this step's hidden state.
    pub prediction: usize,
    /// Additive pre-squash noise on the next pattern (empty on exit or when
    /// noise-free).
    pub pattern_noise: Vec<f32>,
    /// Pre-squash value of the next pattern (empty on exit).
    pub pre_squash: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub class_logits: Vec<f32>,
    pub predicted: usize,
    pub label: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn correct(&self) -> bool {
        self.predicted == self.label
    }

    /// Ends in exactly one exit, at the last step, and has been classified.
    pub fn is_complete(&self) -> bool {
        !self.class_logits.is_empty()
            && self.steps.last().is_some_and(|s| s.decision == Decision::Exit)
            && self.steps[..self.steps.len() - 1]
                .iter()
                .all(|s| s.decision == Decision::Continue)
    }

    pub fn forced_exit(&self) -> bool {
        self.steps.last().is_some_and(|s| s.forced)
    }
}

/// Source of decisions and noise for a rollout.
pub enum Driver<'a> {
    /// Fresh draws from one stream per batch row.
    Sample {
        mode: Mode,
        rngs: &'a mut [crate::rng::Rng],
    },
    /// Reuses recorded decisions and noise, so the graph is a deterministic
    /// function of the parameters.
    Replay(&'a [Trajectory]),
}

/// Decision logits of the rows active at one step.
#[derive(Clone, Debug)]
pub struct StepNodes {
    pub logits: Var,
    /// Batch positions of the logits' rows.
    pub rows: Vec<usize>,
}

/// Class logits of the rows that exited at one step.
#[derive(Clone, Debug)]
pub struct ExitNodes {
    pub logits: Var,
    pub rows: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Unroll {
    pub trajectories: Vec<Trajectory>,
    pub steps: Vec<StepNodes>,
    pub exits: Vec<ExitNodes>,
}

impl Unroll {
    pub fn batch_size(&self) -> usize {
        self.trajectories.len()
    }
}

fn wide_rows<T: Real>(t: &Tensor<T>, r: usize) -> Vec<f32> {
    t.row_slice(r).iter().map(|v| v.wide() as f32).collect()
}

/// Runs a batch of episodes in lockstep on `tape`.
///
/// Rows that exit are classified and dropped; the rest get their next
/// pattern and continue. `stacks[b]` is the slice-major stack of row `b`.
pub fn unroll<T: Real>(
    tape: &mut Tape<T>,
    vars: &AgentVars,
    config: &AgentConfig,
    stacks: &[&[f32]],
    labels: &[usize],
    mut driver: Driver<'_>,
) -> Result<Unroll> {
    config.validate()?;
    let b = stacks.len();
    let (k, p, hd) = (config.n_pattern, config.pixels(), config.hidden_dim);
    if labels.len() != b {
        return Err(Error::dim(format!("{} labels for {b} stacks", labels.len())));
    }
    if let Some(s) = stacks.iter().find(|s| s.len() != k * p) {
        return Err(Error::dim(format!(
            "stack of {} values, expected {k} slices of {p} pixels",
            s.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= config.n_classes) {
        return Err(Error::OutOfRange { index: l, len: config.n_classes });
    }
    let n_drivers = match &driver {
        Driver::Sample { rngs, .. } => rngs.len(),
        Driver::Replay(t) => t.len(),
    };
    if n_drivers != b {
        return Err(Error::dim(format!("{n_drivers} rollout drivers for {b} stacks")));
    }

    let mut trajectories: Vec<Trajectory> = labels
        .iter()
        .map(|&label| Trajectory {
            steps: Vec::new(),
            class_logits: Vec::new(),
            predicted: 0,
            label,
        })
        .collect();
    let mut steps = Vec::new();
    let mut exits = Vec::new();
    if b == 0 {
        return Ok(Unroll { trajectories, steps, exits });
    }

    let phi0 = vars.initial_pattern(tape);
    let mut w = tape.gather_rows(phi0, &vec![0; b])?;
    let mut h = tape.constant(Tensor::zeros(vec![b, hd]));
    let mut c = tape.constant(Tensor::zeros(vec![b, hd]));
    let mut active: Vec<usize> = (0..b).collect();

    for t in 1..=config.t_max {
        let n = active.len();
        let mut slab = Vec::with_capacity(n * k * p);
        for &r in &active {
            slab.extend(stacks[r].iter().map(|&v| T::of(v as f64)));
        }
        let s = tape.constant(Tensor::new(vec![n, k, p], slab)?);
        let mut obs = tape.compose(w, s)?;

        let noises: Vec<Vec<f32>> = match &mut driver {
            Driver::Sample { rngs, .. } => active
                .iter()
                .map(|&r| draw_readout_noise(p, config.readout_sigma, &mut rngs[r]))
                .collect(),
            Driver::Replay(tr) => active
                .iter()
                .map(|&r| {
                    tr[r].steps.get(t - 1).map(|s| s.readout_noise.clone()).ok_or_else(|| {
                        Error::State(format!("replay of row {r} has no step {t}"))
                    })
                })
                .collect::<Result<_>>()?,
        };
        if noises.iter().any(|v| !v.is_empty()) {
            let mut data = Vec::with_capacity(n * p);
            for v in &noises {
                if v.is_empty() {
                    data.extend(std::iter::repeat_n(T::ZERO, p));
                } else if v.len() == p {
                    data.extend(v.iter().map(|&x| T::of(x as f64)));
                } else {
                    return Err(Error::dim(format!("readout noise of {} values for {p} pixels", v.len())));
                }
            }
            let nv = tape.constant(Tensor::new(vec![n, p], data)?);
            let sum = tape.add(obs, nv)?;
            obs = tape.relu(sum);
        }

        let z = vars.encode(tape, obs, w)?;
        let (h_new, c_new) = vars.memory(tape, z, h, c)?;
        let dl = vars.decision_logits(tape, h_new)?;
        let cl_all = vars.class_logits(tape, h_new)?;

        let mut exit_local = Vec::new();
        let mut cont_local = Vec::new();
        for (j, &r) in active.iter().enumerate() {
            let lv = tape.value(dl).row_slice(j);
            let logits = [lv[0].wide() as f32, lv[1].wide() as f32];
            let (decision, forced) = match &mut driver {
                Driver::Sample { mode, rngs } => {
                    let d = finish_decision(logits, t, config.t_max, *mode, &mut rngs[r]);
                    (d.decision, d.forced)
                }
                Driver::Replay(tr) => {
                    let rec = &tr[r].steps[t - 1];
                    if t >= config.t_max && rec.decision != Decision::Exit {
                        return Err(Error::State(format!("replay of row {r} continues past t_max")));
                    }
                    (rec.decision, t >= config.t_max)
                }
            };
            match decision {
                Decision::Exit => exit_local.push(j),
                Decision::Continue => cont_local.push(j),
            }
            trajectories[r].steps.push(Step {
                pattern: wide_rows(tape.value(w), j),
                observation: wide_rows(tape.value(obs), j),
                readout_noise: noises[j].clone(),
                embedding: wide_rows(tape.value(z), j),
                decision,
                forced,
                decision_logits: logits,
                prediction: super::net::argmax(&wide_rows(tape.value(cl_all), j)),
                pattern_noise: Vec::new(),
                pre_squash: Vec::new(),
            });
        }
        steps.push(StepNodes { logits: dl, rows: active.clone() });

        if !exit_local.is_empty() {
            let cl = tape.gather_rows(cl_all, &exit_local)?;
            let rows: Vec<usize> = exit_local.iter().map(|&j| active[j]).collect();
            for (i, &r) in rows.iter().enumerate() {
                let logits = wide_rows(tape.value(cl), i);
                trajectories[r].predicted = super::net::argmax(&logits);
                trajectories[r].class_logits = logits;
            }
            exits.push(ExitNodes { logits: cl, rows });
        }
        if cont_local.is_empty() {
            break;
        }

        let hc = tape.gather_rows(h_new, &cont_local)?;
        let cc = tape.gather_rows(c_new, &cont_local)?;
        let next_active: Vec<usize> = cont_local.iter().map(|&j| active[j]).collect();
        let mean_var = vars.pattern_mean(tape, hc)?;

        let eps: Vec<Vec<f32>> = match &mut driver {
            Driver::Sample { mode, rngs } => next_active
                .iter()
                .map(|&r| draw_pattern_noise(k, config.policy_stddev, *mode, &mut rngs[r]))
                .collect(),
            Driver::Replay(tr) => next_active
                .iter()
                .map(|&r| tr[r].steps[t - 1].pattern_noise.clone())
                .collect(),
        };
        let mut pre = mean_var;
        if eps.iter().any(|v| !v.is_empty()) {
            let mut data = Vec::with_capacity(eps.len() * k);
            for v in &eps {
                if v.is_empty() {
                    data.extend(std::iter::repeat_n(T::ZERO, k));
                } else if v.len() == k {
                    data.extend(v.iter().map(|&x| T::of(x as f64)));
                } else {
                    return Err(Error::dim(format!("pattern noise of {} values for {k} LEDs", v.len())));
                }
            }
            let ev = tape.constant(Tensor::new(vec![eps.len(), k], data)?);
            pre = tape.add(mean_var, ev)?;
        }
        w = tape.sigmoid(pre);
        for (i, (&r, e)) in next_active.iter().zip(eps).enumerate() {
            let step = trajectories[r].steps.last_mut().expect("step just recorded");
            step.pre_squash = wide_rows(tape.value(pre), i);
            step.pattern_noise = e;
        }
        h = hc;
        c = cc;
        active = next_active;
    }
    Ok(Unroll { trajectories, steps, exits })
}

/// One episode on `stack` with frozen parameters.
pub fn rollout(
    stack: &PerLedStack,
    params: &AgentParams,
    label: usize,
    rng: &mut crate::rng::Rng,
    mode: Mode,
) -> Result<Trajectory> {
    let cfg = &params.config;
    if stack.depth() != cfg.n_pattern || stack.dims() != cfg.image_dims {
        return Err(Error::dim(format!(
            "stack {}×{:?} for an agent expecting {}×{:?}",
            stack.depth(),
            stack.dims(),
            cfg.n_pattern,
            cfg.image_dims
        )));
    }
    let mut tape = Tape::<f32>::new();
    let vars = params.to_tape(&mut tape, |_| false);
    let rngs = std::slice::from_mut(rng);
    let u = unroll(&mut tape, &vars, cfg, &[stack.data()], &[label], Driver::Sample { mode, rngs })?;
    Ok(u.trajectories.into_iter().next().expect("one row"))
}
