//! Weight initialization helpers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Tensor;

/// Uniform fan-in scaling: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn uniform_fan_in(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Square orthogonal matrix via modified Gram-Schmidt on a random Gaussian.
pub fn orthogonal(dim: usize, rng: &mut impl Rng) -> Tensor {
    let mut rows: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for i in 0..dim {
        for j in 0..i {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            for k in 0..dim {
                rows[i][k] -= dot * rows[j][k];
            }
        }
        let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        // a zero-norm row after projection is vanishingly unlikely; fall back
        // to a unit basis vector to keep the matrix well formed
        if norm < 1e-12 {
            rows[i].iter_mut().for_each(|v| *v = 0.0);
            rows[i][i] = 1.0;
        } else {
            rows[i].iter_mut().for_each(|v| *v /= norm);
        }
    }
    Tensor::from_rows(&rows).unwrap()
}

/// Vertical stack of `blocks` independent orthogonal `dim × dim` matrices,
/// shaped `[blocks * dim, dim]` (one block per recurrent gate).
pub fn stacked_orthogonal(blocks: usize, dim: usize, rng: &mut impl Rng) -> Tensor {
    let mut data = Vec::with_capacity(blocks * dim * dim);
    for _ in 0..blocks {
        data.extend_from_slice(orthogonal(dim, rng).data());
    }
    Tensor::new(vec![blocks * dim, dim], data).unwrap()
}

/// Identity matrix.
pub fn identity(dim: usize) -> Tensor {
    let mut data = vec![0.0; dim * dim];
    for i in 0..dim {
        data[i * dim + i] = 1.0;
    }
    Tensor::new(vec![dim, dim], data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = orthogonal(8, &mut rng);
        for i in 0..8 {
            for j in 0..8 {
                let dot: f64 = m.row(i).iter().zip(m.row(j)).map(|(a, b)| a * b).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-10, "rows {i},{j}: {dot}");
            }
        }
    }

    #[test]
    fn uniform_fan_in_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = uniform_fan_in(vec![16, 25], 25, &mut rng);
        let bound = 1.0 / 5.0;
        assert!(t.data().iter().all(|v| v.abs() < bound));
    }
}
