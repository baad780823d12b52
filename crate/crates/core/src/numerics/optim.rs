use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Adaptive-moment optimizer state.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(shapes: &[&[usize]], learning_rate: f64) -> Self {
        let zeros = |s: &&[usize]| vec![0.0; s.iter().product()];
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: shapes.iter().map(zeros).collect(),
            second: shapes.iter().map(zeros).collect(),
        }
    }

    pub fn for_params(params: &[Tensor], learning_rate: f64) -> Self {
        let shapes: Vec<&[usize]> = params.iter().map(|p| p.shape()).collect();
        Self::new(&shapes, learning_rate)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update applied in place.
    ///
    /// Any non-finite gradient rejects the whole update: parameters and
    /// moments are left untouched and `Error::NonFinite` is returned.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::dim(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first[i].len() {
                return Err(Error::dim(format!(
                    "adam: parameter {i} has {} values, gradient {}",
                    p.len(),
                    g.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                let delta = self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
                *w = (*w as f64 - delta) as f32;
            }
        }
        Ok(())
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|v| *v *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Vec<Tensor> {
        vec![
            Tensor::row(vec![0.5, -1.0, 2.0]),
            Tensor::row(vec![0.5, -1.0, 2.0]),
        ]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = params();
        let before = p.clone();
        let mut opt = Adam::for_params(&p, 1e-3);
        opt.update(&mut p, &[vec![0.0; 3], vec![0.0; 3]]).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the first step is lr · g / (|g| + eps).
        let mut p = params();
        let before = p.clone();
        let lr = 1e-3;
        let mut opt = Adam::for_params(&p, lr);
        opt.update(&mut p, &[vec![0.3, -2.0, 7.0], vec![1.0; 3]])
            .unwrap();
        for (a, b) in p[0].data().iter().zip(before[0].data()) {
            assert!(((a - b).abs() as f64 - lr).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_gradients_identical_updates() {
        let mut p = params();
        let mut opt = Adam::for_params(&p, 1e-2);
        for _ in 0..5 {
            let g = vec![0.1, -0.2, 0.3];
            opt.update(&mut p, &[g.clone(), g]).unwrap();
        }
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = params();
        let before = p.clone();
        let mut opt = Adam::for_params(&p, 1e-3);
        let err = opt.update(&mut p, &[vec![f64::NAN, 0.0, 0.0], vec![0.0; 3]]);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(p, before);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut g = vec![vec![3.0], vec![4.0]];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-12 && (g[1][0] - 0.8).abs() < 1e-12);
        let mut small = vec![vec![0.1]];
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small[0][0], 0.1);
    }
}
