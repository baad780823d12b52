//! Recurrent illumination agent.
//!
//! Each step composes an observation under the current pattern, embeds it
//! together with the pattern (V), updates an LSTM memory (M), and asks the
//! decision head (D) whether to exit. On exit the classifier (C) reads the
//! final hidden state; otherwise the pattern head (P) proposes the next
//! pattern. Step 1 uses a learned initial pattern φ₀.

mod checkpoint;
mod net;
mod rollout;

use crate::error::{Error, Result};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use net::{classify, decide, encode, memory_step, observe, propose_pattern, AgentParams, AgentVars, Decided, ParamId};
pub use rollout::{rollout, unroll, Driver, ExitNodes, Step, StepNodes, Trajectory, Unroll};

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    /// Stack depth, i.e. pattern length.
    pub n_pattern: usize,
    pub image_dims: (usize, usize),
    /// Width of the encoder's hidden layer.
    pub encoder_hidden: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub decision_hidden: usize,
    pub n_classes: usize,
    pub t_max: usize,
    /// Std of the Gaussian added to pattern means before squashing.
    pub policy_stddev: f64,
    /// Absolute std of detector readout noise added to each observation.
    pub readout_sigma: f64,
}

impl AgentConfig {
    /// The 25-LED, 28×28, ten-class layout.
    pub fn mnist() -> Self {
        Self {
            n_pattern: 25,
            image_dims: (28, 28),
            encoder_hidden: 256,
            embed_dim: 128,
            hidden_dim: 256,
            decision_hidden: 64,
            n_classes: 10,
            t_max: 10,
            policy_stddev: 0.1,
            readout_sigma: 0.01,
        }
    }

    /// The 87-slice (29 LEDs × 3 colors), two-class layout.
    pub fn malaria(image_dims: (usize, usize)) -> Self {
        Self {
            n_pattern: 87,
            image_dims,
            n_classes: 2,
            t_max: 15,
            ..Self::mnist()
        }
    }

    pub fn pixels(&self) -> usize {
        self.image_dims.0 * self.image_dims.1
    }

    /// Encoder input width: flattened observation plus pattern.
    pub fn encoder_inputs(&self) -> usize {
        self.pixels() + self.n_pattern
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_pattern", self.n_pattern),
            ("image height", self.image_dims.0),
            ("image width", self.image_dims.1),
            ("encoder_hidden", self.encoder_hidden),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("decision_hidden", self.decision_hidden),
            ("n_classes", self.n_classes),
            ("t_max", self.t_max),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("{name} must be positive")));
        }
        if !(self.policy_stddev >= 0.0 && self.policy_stddev.is_finite()) {
            return Err(Error::Validation(format!("policy_stddev {}", self.policy_stddev)));
        }
        if !(self.readout_sigma >= 0.0 && self.readout_sigma.is_finite()) {
            return Err(Error::Validation(format!("readout_sigma {}", self.readout_sigma)));
        }
        Ok(())
    }

    /// `key = value` lines, parsed back by [`AgentConfig::from_text`].
    pub fn to_text(&self) -> String {
        format!(
            "n_pattern = {}\nimage_height = {}\nimage_width = {}\nencoder_hidden = {}\n\
             embed_dim = {}\nhidden_dim = {}\ndecision_hidden = {}\nn_classes = {}\n\
             t_max = {}\npolicy_stddev = {:?}\nreadout_sigma = {:?}\n",
            self.n_pattern,
            self.image_dims.0,
            self.image_dims.1,
            self.encoder_hidden,
            self.embed_dim,
            self.hidden_dim,
            self.decision_hidden,
            self.n_classes,
            self.t_max,
            self.policy_stddev,
            self.readout_sigma,
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::mnist();
        let bad = |line: &str| Error::Validation(format!("agent config line {line:?}"));
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
            let (k, v) = (k.trim(), v.trim());
            let int = || v.parse::<usize>().map_err(|_| bad(line));
            let float = || v.parse::<f64>().map_err(|_| bad(line));
            match k {
                "n_pattern" => cfg.n_pattern = int()?,
                "image_height" => cfg.image_dims.0 = int()?,
                "image_width" => cfg.image_dims.1 = int()?,
                "encoder_hidden" => cfg.encoder_hidden = int()?,
                "embed_dim" => cfg.embed_dim = int()?,
                "hidden_dim" => cfg.hidden_dim = int()?,
                "decision_hidden" => cfg.decision_hidden = int()?,
                "n_classes" => cfg.n_classes = int()?,
                "t_max" => cfg.t_max = int()?,
                "policy_stddev" => cfg.policy_stddev = float()?,
                "readout_sigma" => cfg.readout_sigma = float()?,
                _ => return Err(bad(line)),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Decision head outcome. Index 0 gathers another image, index 1 stops and
/// classifies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Decision {
    Continue = 0,
    Exit = 1,
}

impl Decision {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Sample decisions and add pattern noise.
    Stochastic,
    /// Argmax decisions, noise-free patterns.
    Greedy,
}

/// LSTM state of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState {
    pub h: Vec<f32>,
    pub c: Vec<f32>,
}

impl HiddenState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}
