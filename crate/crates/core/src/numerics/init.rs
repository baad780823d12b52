//! Weight initializers.

use rand::Rng;

use crate::numerics::tensor::Tensor;

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(vec![fan_in, fan_out], |_| {
        rng.random_range(-limit..limit) as f32
    })
}

/// `n × n` orthogonal matrix from Gram-Schmidt on a Gaussian draw, scaled
/// by `gain`.
pub fn orthogonal<R: Rng + ?Sized>(n: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let normal = rand_distr::StandardNormal;
    let mut q: Vec<f64> = (0..n * n).map(|_| rng.sample::<f64, _>(normal)).collect();
    for i in 0..n {
        for j in 0..i {
            let d: f64 = (0..n).map(|t| q[i * n + t] * q[j * n + t]).sum();
            for t in 0..n {
                q[i * n + t] -= d * q[j * n + t];
            }
        }
        let norm = (0..n).map(|t| q[i * n + t].powi(2)).sum::<f64>().sqrt();
        for t in 0..n {
            q[i * n + t] /= norm;
        }
    }
    q.iter_mut().for_each(|v| *v *= gain);
    q
}

/// Recurrent weights `H × 4H`: one orthogonal `H × H` block per gate.
pub fn recurrent_blocks<R: Rng + ?Sized>(hidden: usize, gates: usize, rng: &mut R) -> Tensor {
    let mut data = vec![0f32; hidden * gates * hidden];
    for g in 0..gates {
        let q = orthogonal(hidden, 1.0, rng);
        for r in 0..hidden {
            for c in 0..hidden {
                data[r * gates * hidden + g * hidden + c] = q[r * hidden + c] as f32;
            }
        }
    }
    Tensor::new(vec![hidden, gates * hidden], data).expect("block shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 16;
        let q = orthogonal(n, 1.0, &mut rng);
        for i in 0..n {
            for j in 0..n {
                let d: f64 = (0..n).map(|t| q[i * n + t] * q[j * n + t]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn glorot_within_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = glorot_uniform(100, 50, &mut rng);
        let lim = (6.0f32 / 150.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= lim));
    }
}
