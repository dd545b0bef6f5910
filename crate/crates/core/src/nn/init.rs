use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Scalar, Tensor};

/// Uniform on `±sqrt(6 / fan_in)` (He initialisation for ReLU networks).
pub fn kaiming_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound)))
}

/// `blocks` stacked square `size x size` orthogonal matrices, built by
/// Gram-Schmidt on Gaussian draws. Output shape is `[blocks * size, size]`.
pub fn orthogonal<T: Scalar, R: Rng + ?Sized>(
    blocks: usize,
    size: usize,
    rng: &mut R,
) -> Tensor<T> {
    let mut out = Vec::with_capacity(blocks * size * size);
    for _ in 0..blocks {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(size);
        while rows.len() < size {
            let mut v: Vec<f64> = (0..size).map(|_| rng.sample(StandardNormal)).collect();
            for _ in 0..2 {
                for r in &rows {
                    let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-8 {
                continue;
            }
            v.iter_mut().for_each(|a| *a /= norm);
            rows.push(v);
        }
        out.extend(rows.into_iter().flatten().map(T::lit));
    }
    Tensor::from_vec(&[blocks * size, size], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_blocks_have_orthonormal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q: Tensor<f64> = orthogonal(3, 6, &mut rng);
        let d = q.data();
        for b in 0..3 {
            for i in 0..6 {
                for j in 0..6 {
                    let dot: f64 = (0..6)
                        .map(|k| d[(b * 6 + i) * 6 + k] * d[(b * 6 + j) * 6 + k])
                        .sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn kaiming_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Tensor<f32> = kaiming_uniform(&[16, 24], 24, &mut rng);
        let bound = (6.0f32 / 24.0).sqrt();
        assert!(w.data().iter().all(|x| x.abs() <= bound));
    }
}
