use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{AgentConfig, Decision, HiddenState, Mode};
use crate::error::{Error, Result};
use crate::numerics::init::{glorot_uniform, recurrent_blocks};
use crate::numerics::{lstm_step, softmax_rows, LstmWeights, Real, Tape, Tensor, Var};
use crate::optics::{compose, IlluminationPattern, PerLedStack};

/// Named parameter tensors, in checkpoint order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamId {
    EncW1,
    EncB1,
    EncW2,
    EncB2,
    MemWx,
    MemWh,
    MemB,
    DecW1,
    DecB1,
    DecW2,
    DecB2,
    PatW,
    PatB,
    ClsW,
    ClsB,
    InitPattern,
}

impl ParamId {
    pub const ALL: [ParamId; 16] = [
        ParamId::EncW1,
        ParamId::EncB1,
        ParamId::EncW2,
        ParamId::EncB2,
        ParamId::MemWx,
        ParamId::MemWh,
        ParamId::MemB,
        ParamId::DecW1,
        ParamId::DecB1,
        ParamId::DecW2,
        ParamId::DecB2,
        ParamId::PatW,
        ParamId::PatB,
        ParamId::ClsW,
        ParamId::ClsB,
        ParamId::InitPattern,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::EncW1 => "encoder.w1",
            ParamId::EncB1 => "encoder.b1",
            ParamId::EncW2 => "encoder.w2",
            ParamId::EncB2 => "encoder.b2",
            ParamId::MemWx => "memory.w_input",
            ParamId::MemWh => "memory.w_recurrent",
            ParamId::MemB => "memory.bias",
            ParamId::DecW1 => "decision.w1",
            ParamId::DecB1 => "decision.b1",
            ParamId::DecW2 => "decision.w2",
            ParamId::DecB2 => "decision.b2",
            ParamId::PatW => "pattern.w",
            ParamId::PatB => "pattern.b",
            ParamId::ClsW => "classifier.w",
            ParamId::ClsB => "classifier.b",
            ParamId::InitPattern => "initial_pattern",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn shape(self, c: &AgentConfig) -> Vec<usize> {
        let (h, k) = (c.hidden_dim, c.n_pattern);
        match self {
            ParamId::EncW1 => vec![c.encoder_inputs(), c.encoder_hidden],
            ParamId::EncB1 => vec![c.encoder_hidden],
            ParamId::EncW2 => vec![c.encoder_hidden, c.embed_dim],
            ParamId::EncB2 => vec![c.embed_dim],
            ParamId::MemWx => vec![c.embed_dim, 4 * h],
            ParamId::MemWh => vec![h, 4 * h],
            ParamId::MemB => vec![4 * h],
            ParamId::DecW1 => vec![h, c.decision_hidden],
            ParamId::DecB1 => vec![c.decision_hidden],
            ParamId::DecW2 => vec![c.decision_hidden, 2],
            ParamId::DecB2 => vec![2],
            ParamId::PatW => vec![h, k],
            ParamId::PatB => vec![k],
            ParamId::ClsW => vec![h, c.n_classes],
            ParamId::ClsB => vec![c.n_classes],
            ParamId::InitPattern => vec![1, k],
        }
    }

    /// Decision head (D).
    pub fn is_decision_head(self) -> bool {
        matches!(self, ParamId::DecW1 | ParamId::DecB1 | ParamId::DecW2 | ParamId::DecB2)
    }

    /// Classifier head (C).
    pub fn is_classifier_head(self) -> bool {
        matches!(self, ParamId::ClsW | ParamId::ClsB)
    }

    /// Pattern head (P).
    pub fn is_pattern_head(self) -> bool {
        matches!(self, ParamId::PatW | ParamId::PatB)
    }
}

/// All trainable tensors θ plus the configuration that shapes them.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentParams {
    pub config: AgentConfig,
    tensors: Vec<Tensor>,
}

impl AgentParams {
    /// Glorot-uniform dense weights, orthogonal recurrent blocks, zero
    /// biases except a +1 forget-gate bias, and φ₀ = sigmoid(0) = 0.5.
    pub fn init<R: Rng + ?Sized>(config: &AgentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let tensors = ParamId::ALL
            .iter()
            .map(|&id| {
                let shape = id.shape(config);
                match id {
                    ParamId::MemWh => recurrent_blocks(h, 4, rng),
                    ParamId::MemB => {
                        Tensor::from_fn(shape, |i| if (h..2 * h).contains(&i) { 1.0 } else { 0.0 })
                    }
                    _ if shape.len() == 2 && id != ParamId::InitPattern => {
                        glorot_uniform(shape[0], shape[1], rng)
                    }
                    _ => Tensor::zeros(shape),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    /// Every tensor zero (the LSTM forget bias included).
    pub fn zeros(config: &AgentConfig) -> Result<Self> {
        config.validate()?;
        let tensors = ParamId::ALL.iter().map(|id| Tensor::zeros(id.shape(config))).collect();
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn from_tensors(config: &AgentConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        if tensors.len() != ParamId::ALL.len() {
            return Err(Error::dim(format!("{} tensors, expected {}", tensors.len(), ParamId::ALL.len())));
        }
        for (id, t) in ParamId::ALL.iter().zip(&tensors) {
            if t.shape() != id.shape(config).as_slice() {
                return Err(Error::dim(format!(
                    "{} has shape {:?}, expected {:?}",
                    id.name(),
                    t.shape(),
                    id.shape(config)
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(id.name().into()));
            }
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.index()]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// φ₀ after squashing.
    pub fn initial_pattern(&self) -> Vec<f32> {
        self.get(ParamId::InitPattern)
            .data()
            .iter()
            .map(|&v| crate::numerics::tape::sigmoid(v as f64) as f32)
            .collect()
    }

    /// Places every tensor on `tape`; those selected by `trainable` become
    /// gradient-tracked leaves, the rest constants.
    pub fn to_tape<T: Real>(&self, tape: &mut Tape<T>, trainable: impl Fn(ParamId) -> bool) -> AgentVars {
        let vars: Vec<Var> = ParamId::ALL
            .iter()
            .zip(&self.tensors)
            .map(|(&id, t)| {
                let v = t.cast::<T>();
                if trainable(id) {
                    tape.param(v)
                } else {
                    tape.constant(v)
                }
            })
            .collect();
        AgentVars::from_slice(&vars).expect("one var per parameter")
    }
}

/// Tape handles of all parameters, indexed by [`ParamId`].
#[derive(Clone, Copy, Debug)]
pub struct AgentVars([Var; 16]);

impl AgentVars {
    pub fn from_slice(vars: &[Var]) -> Result<Self> {
        let arr: [Var; 16] = vars
            .try_into()
            .map_err(|_| Error::dim(format!("{} parameter handles, expected 16", vars.len())))?;
        Ok(Self(arr))
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.index()]
    }

    pub fn all(&self) -> &[Var; 16] {
        &self.0
    }

    fn dense<T: Real>(&self, tape: &mut Tape<T>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let y = tape.matmul(x, self.get(w))?;
        tape.add_row(y, self.get(b))
    }

    /// V: `[observation | pattern]` rows → embeddings, two ReLU layers.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, obs: Var, pattern: Var) -> Result<Var> {
        let x = tape.concat_cols(&[obs, pattern])?;
        let e = self.dense(tape, x, ParamId::EncW1, ParamId::EncB1)?;
        let e = tape.relu(e);
        let z = self.dense(tape, e, ParamId::EncW2, ParamId::EncB2)?;
        Ok(tape.relu(z))
    }

    /// M: one LSTM step.
    pub fn memory<T: Real>(&self, tape: &mut Tape<T>, z: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let w = LstmWeights {
            input: self.get(ParamId::MemWx),
            recurrent: self.get(ParamId::MemWh),
            bias: self.get(ParamId::MemB),
        };
        lstm_step(tape, z, h, c, &w)
    }

    /// D: hidden rows → `[continue, exit]` logits.
    pub fn decision_logits<T: Real>(&self, tape: &mut Tape<T>, h: Var) -> Result<Var> {
        let d = self.dense(tape, h, ParamId::DecW1, ParamId::DecB1)?;
        let d = tape.relu(d);
        self.dense(tape, d, ParamId::DecW2, ParamId::DecB2)
    }

    /// P: hidden rows → pre-squash pattern means.
    pub fn pattern_mean<T: Real>(&self, tape: &mut Tape<T>, h: Var) -> Result<Var> {
        self.dense(tape, h, ParamId::PatW, ParamId::PatB)
    }

    /// C: hidden rows → class logits.
    pub fn class_logits<T: Real>(&self, tape: &mut Tape<T>, h: Var) -> Result<Var> {
        self.dense(tape, h, ParamId::ClsW, ParamId::ClsB)
    }

    /// Squashed φ₀ as a `1 × n_pattern` row.
    pub fn initial_pattern<T: Real>(&self, tape: &mut Tape<T>) -> Var {
        tape.sigmoid(self.get(ParamId::InitPattern))
    }
}

/// Greedy takes the larger logit with ties to continue; stochastic samples
/// from the two-way softmax.
pub(crate) fn pick_decision<R: Rng + ?Sized>(logits: [f32; 2], mode: Mode, rng: &mut R) -> Decision {
    match mode {
        Mode::Greedy => {
            if logits[1] > logits[0] {
                Decision::Exit
            } else {
                Decision::Continue
            }
        }
        Mode::Stochastic => {
            let p = softmax_rows(&Tensor::matrix(1, 2, logits.to_vec()).expect("1×2"));
            if rng.random::<f64>() < p[1] {
                Decision::Exit
            } else {
                Decision::Continue
            }
        }
    }
}

/// Additive pre-squash exploration noise; empty when none applies.
pub(crate) fn draw_pattern_noise<R: Rng + ?Sized>(n: usize, stddev: f64, mode: Mode, rng: &mut R) -> Vec<f32> {
    if mode == Mode::Greedy || stddev == 0.0 {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            (stddev * e) as f32
        })
        .collect()
}

/// Readout noise for one observation; empty when sigma is zero.
pub(crate) fn draw_readout_noise<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> Vec<f32> {
    if sigma == 0.0 {
        return Vec::new();
    }
    crate::optics::ReadoutNoise { sigma }.sample(n, rng)
}

/// `relu(obs + noise)`, i.e. noise clamped at zero intensity.
fn noisy(obs: &[f32], noise: &[f32]) -> Vec<f32> {
    if noise.is_empty() {
        return obs.to_vec();
    }
    obs.iter().zip(noise).map(|(&o, &n)| (o + n).max(0.0)).collect()
}

fn row(v: &[f32]) -> Tensor {
    Tensor::row(v.to_vec())
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::dim(format!("{what} has {got} values, expected {want}")));
    }
    Ok(())
}

fn const_tape(params: &AgentParams) -> (Tape, AgentVars) {
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape, |_| false);
    (tape, vars)
}

fn check_state(state: &HiddenState, config: &AgentConfig) -> Result<()> {
    check_len("hidden state h", state.h.len(), config.hidden_dim)?;
    check_len("hidden state c", state.c.len(), config.hidden_dim)
}

/// Embedding `z = V([observation | pattern])` of one observation.
pub fn encode(observation: &[f32], pattern: &IlluminationPattern, params: &AgentParams) -> Result<Vec<f32>> {
    let cfg = &params.config;
    check_len("observation", observation.len(), cfg.pixels())?;
    check_len("pattern", pattern.len(), cfg.n_pattern)?;
    let (mut tape, vars) = const_tape(params);
    let o = tape.constant(row(observation));
    let p = tape.constant(row(pattern.weights()));
    let z = vars.encode(&mut tape, o, p)?;
    Ok(tape.value(z).data().to_vec())
}

/// One memory update from embedding `z`.
pub fn memory_step(z: &[f32], state: &HiddenState, params: &AgentParams) -> Result<HiddenState> {
    let cfg = &params.config;
    check_len("embedding", z.len(), cfg.embed_dim)?;
    check_state(state, cfg)?;
    let (mut tape, vars) = const_tape(params);
    let zv = tape.constant(row(z));
    let h = tape.constant(row(&state.h));
    let c = tape.constant(row(&state.c));
    let (h, c) = vars.memory(&mut tape, zv, h, c)?;
    Ok(HiddenState {
        h: tape.value(h).data().to_vec(),
        c: tape.value(c).data().to_vec(),
    })
}

/// Outcome of the decision head at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decided {
    pub decision: Decision,
    pub logits: [f32; 2],
    /// The step limit overrode the head's choice.
    pub forced: bool,
}

/// Decision at 1-based step `t`; at `t = t_max` the result is always exit.
pub fn decide<R: Rng + ?Sized>(
    state: &HiddenState,
    params: &AgentParams,
    t: usize,
    rng: &mut R,
    mode: Mode,
) -> Result<Decided> {
    check_state(state, &params.config)?;
    let (mut tape, vars) = const_tape(params);
    let h = tape.constant(row(&state.h));
    let l = vars.decision_logits(&mut tape, h)?;
    let d = tape.value(l).data();
    let logits = [d[0], d[1]];
    Ok(finish_decision(logits, t, params.config.t_max, mode, rng))
}

pub(crate) fn finish_decision<R: Rng + ?Sized>(
    logits: [f32; 2],
    t: usize,
    t_max: usize,
    mode: Mode,
    rng: &mut R,
) -> Decided {
    if t >= t_max {
        return Decided {
            decision: Decision::Exit,
            logits,
            forced: true,
        };
    }
    Decided {
        decision: pick_decision(logits, mode, rng),
        logits,
        forced: false,
    }
}

/// Next pattern `sigmoid(P(h) + noise)` and its pre-squash value.
pub fn propose_pattern<R: Rng + ?Sized>(
    state: &HiddenState,
    params: &AgentParams,
    rng: &mut R,
    mode: Mode,
) -> Result<(IlluminationPattern, Vec<f32>)> {
    let cfg = &params.config;
    check_state(state, cfg)?;
    let (mut tape, vars) = const_tape(params);
    let h = tape.constant(row(&state.h));
    let m = vars.pattern_mean(&mut tape, h)?;
    let noise = draw_pattern_noise(cfg.n_pattern, cfg.policy_stddev, mode, rng);
    let pre: Vec<f32> = if noise.is_empty() {
        tape.value(m).data().to_vec()
    } else {
        tape.value(m).data().iter().zip(&noise).map(|(a, b)| a + b).collect()
    };
    let w = pre.iter().map(|&v| crate::numerics::tape::sigmoid(v as f64) as f32).collect();
    Ok((IlluminationPattern::new(w)?, pre))
}

/// Class logits and prediction; ties go to the lowest class index.
pub fn classify(state: &HiddenState, params: &AgentParams) -> Result<(Vec<f32>, usize)> {
    check_state(state, &params.config)?;
    let (mut tape, vars) = const_tape(params);
    let h = tape.constant(row(&state.h));
    let l = vars.class_logits(&mut tape, h)?;
    let logits = tape.value(l).data().to_vec();
    let y = argmax(&logits);
    Ok((logits, y))
}

/// First index of the maximum.
pub(crate) fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Observation of `stack` under `pattern` with additive readout `noise`
/// (empty for none), clamped at zero.
pub fn observe(stack: &PerLedStack, pattern: &IlluminationPattern, noise: &[f32]) -> Result<Vec<f32>> {
    if !noise.is_empty() && noise.len() != stack.pixels() {
        return Err(Error::dim(format!("{} noise values for {} pixels", noise.len(), stack.pixels())));
    }
    Ok(noisy(&compose(stack, pattern)?, noise))
}
