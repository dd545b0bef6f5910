use rand::Rng;

use super::init::{kaiming_uniform, orthogonal};
use super::ops::sigmoid_scalar;
use super::{expect_rank, Module, NnError, Parameter};
use crate::scalar::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use crate::{Scalar, Tensor};

/// One direction of a GRU. Gate rows are ordered reset, update, candidate.
///
/// ```text
/// r = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug)]
pub struct GruDirection<T> {
    pub w_ih: Parameter<T>,
    pub w_hh: Parameter<T>,
    pub b_ih: Parameter<T>,
    pub b_hh: Parameter<T>,
    pub reverse: bool,
}

/// Per-step activations, each laid out `(T, B, H)` by absolute time index.
#[derive(Clone, Debug)]
struct DirectionCache<T> {
    r: Vec<T>,
    z: Vec<T>,
    n: Vec<T>,
    hn: Vec<T>,
    h_prev: Vec<T>,
}

impl<T: Scalar> GruDirection<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        input: usize,
        hidden: usize,
        reverse: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            w_ih: Parameter::new(
                format!("{name}.w_ih"),
                kaiming_uniform(&[3 * hidden, input], input, rng),
            ),
            w_hh: Parameter::new(format!("{name}.w_hh"), orthogonal(3, hidden, rng)),
            b_ih: Parameter::zeros(format!("{name}.b_ih"), &[3 * hidden]),
            b_hh: Parameter::zeros(format!("{name}.b_hh"), &[3 * hidden]),
            reverse,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.value.dim(1)
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.value.dim(1)
    }

    fn time_index(&self, step: usize, frames: usize) -> usize {
        if self.reverse {
            frames - 1 - step
        } else {
            step
        }
    }

    /// `x` is `(B, T, D)`; returns `(B, T, H)`.
    fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, DirectionCache<T>) {
        let (bs, frames, d) = (x.dim(0), x.dim(1), x.dim(2));
        let h = self.hidden();
        let g = 3 * h;

        let mut xp = vec![T::zero(); bs * frames * g];
        for row in xp.chunks_mut(g) {
            row.copy_from_slice(self.b_ih.value.data());
        }
        matmul_bt_acc(bs * frames, d, g, x.data(), self.w_ih.value.data(), &mut xp);

        let cells = frames * bs * h;
        let mut cache = DirectionCache {
            r: vec![T::zero(); cells],
            z: vec![T::zero(); cells],
            n: vec![T::zero(); cells],
            hn: vec![T::zero(); cells],
            h_prev: vec![T::zero(); cells],
        };
        let mut out = Tensor::zeros(&[bs, frames, h]);
        let mut state = vec![T::zero(); bs * h];
        let mut hp = vec![T::zero(); bs * g];
        for step in 0..frames {
            let t = self.time_index(step, frames);
            for row in hp.chunks_mut(g) {
                row.copy_from_slice(self.b_hh.value.data());
            }
            matmul_bt_acc(bs, h, g, &state, self.w_hh.value.data(), &mut hp);
            let base = t * bs * h;
            cache.h_prev[base..base + bs * h].copy_from_slice(&state);
            for b in 0..bs {
                let xrow = &xp[(b * frames + t) * g..][..g];
                let hrow = &hp[b * g..][..g];
                for j in 0..h {
                    let r = sigmoid_scalar(xrow[j] + hrow[j]);
                    let z = sigmoid_scalar(xrow[h + j] + hrow[h + j]);
                    let hn = hrow[2 * h + j];
                    let n = (xrow[2 * h + j] + r * hn).tanh();
                    let prev = state[b * h + j];
                    let next = (T::one() - z) * n + z * prev;
                    let c = base + b * h + j;
                    cache.r[c] = r;
                    cache.z[c] = z;
                    cache.n[c] = n;
                    cache.hn[c] = hn;
                    state[b * h + j] = next;
                    out.data_mut()[(b * frames + t) * h + j] = next;
                }
            }
        }
        (out, cache)
    }

    fn backward(&mut self, x: &Tensor<T>, cache: &DirectionCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (bs, frames, d) = (x.dim(0), x.dim(1), x.dim(2));
        let h = self.hidden();
        let g = 3 * h;
        let mut dxp = vec![T::zero(); bs * frames * g];
        let mut dh = vec![T::zero(); bs * h];
        let mut dhp = vec![T::zero(); bs * g];
        for step in (0..frames).rev() {
            let t = self.time_index(step, frames);
            let base = t * bs * h;
            let mut dh_prev = vec![T::zero(); bs * h];
            for b in 0..bs {
                for j in 0..h {
                    let c = base + b * h + j;
                    let grad = dh[b * h + j] + dy.data()[(b * frames + t) * h + j];
                    let (r, z, n, hn) = (cache.r[c], cache.z[c], cache.n[c], cache.hn[c]);
                    let prev = cache.h_prev[c];
                    let dn = grad * (T::one() - z);
                    let dz = grad * (prev - n);
                    dh_prev[b * h + j] = grad * z;
                    let dan = dn * (T::one() - n * n);
                    let dar = dan * hn * r * (T::one() - r);
                    let daz = dz * z * (T::one() - z);
                    let xrow = &mut dxp[(b * frames + t) * g..][..g];
                    xrow[j] = dar;
                    xrow[h + j] = daz;
                    xrow[2 * h + j] = dan;
                    let hrow = &mut dhp[b * g..][..g];
                    hrow[j] = dar;
                    hrow[h + j] = daz;
                    hrow[2 * h + j] = dan * r;
                }
            }
            matmul_at_acc(
                g,
                bs,
                h,
                &dhp,
                &cache.h_prev[base..base + bs * h],
                self.w_hh.grad.data_mut(),
            );
            for row in dhp.chunks(g) {
                for (acc, &v) in self.b_hh.grad.data_mut().iter_mut().zip(row) {
                    *acc += v;
                }
            }
            matmul_acc(bs, g, h, &dhp, self.w_hh.value.data(), &mut dh_prev);
            dh = dh_prev;
        }
        matmul_at_acc(g, bs * frames, d, &dxp, x.data(), self.w_ih.grad.data_mut());
        for row in dxp.chunks(g) {
            for (acc, &v) in self.b_ih.grad.data_mut().iter_mut().zip(row) {
                *acc += v;
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        matmul_acc(bs * frames, g, d, &dxp, self.w_ih.value.data(), dx.data_mut());
        dx
    }
}

impl<T: Scalar> Module<T> for GruDirection<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        f(&self.w_ih);
        f(&self.w_hh);
        f(&self.b_ih);
        f(&self.b_hh);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.w_ih);
        f(&mut self.w_hh);
        f(&mut self.b_ih);
        f(&mut self.b_hh);
    }
}

/// Bidirectional GRU with zero initial states; output is `[forward, backward]`
/// concatenated per frame.
#[derive(Clone, Debug)]
pub struct BiGru<T> {
    pub forward_dir: GruDirection<T>,
    pub backward_dir: GruDirection<T>,
}

#[derive(Clone, Debug)]
pub struct BiGruCache<T> {
    x: Tensor<T>,
    fwd: DirectionCache<T>,
    bwd: DirectionCache<T>,
}

impl<T: Scalar> BiGru<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            forward_dir: GruDirection::new(&format!("{name}.fwd"), input, hidden, false, rng),
            backward_dir: GruDirection::new(&format!("{name}.bwd"), input, hidden, true, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward_dir.hidden()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden()
    }

    /// `(B, T, D) -> (B, T, 2H)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BiGruCache<T>), NnError> {
        expect_rank("bigru", x, 3)?;
        if x.dim(2) != self.forward_dir.input_dim() {
            return Err(NnError::ShapeMismatch {
                op: "bigru",
                expected: format!("feature dim {}", self.forward_dir.input_dim()),
                got: x.shape().to_vec(),
            });
        }
        let (yf, fwd) = self.forward_dir.forward(x);
        let (yb, bwd) = self.backward_dir.forward(x);
        Ok((
            super::ops::concat_last(&yf, &yb),
            BiGruCache {
                x: x.clone(),
                fwd,
                bwd,
            },
        ))
    }

    pub fn backward(&mut self, cache: &BiGruCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (dyf, dyb) = super::ops::split_last(dy, self.hidden());
        let mut dx = self.forward_dir.backward(&cache.x, &cache.fwd, &dyf);
        dx.add_assign(&self.backward_dir.backward(&cache.x, &cache.bwd, &dyb));
        dx
    }
}

impl<T: Scalar> Module<T> for BiGru<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.forward_dir.visit_params(f);
        self.backward_dir.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.forward_dir.visit_params_mut(f);
        self.backward_dir.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_input_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gru = BiGru::<f64>::new("g", 5, 4, &mut rng);
        let (y, _) = gru.forward(&Tensor::zeros(&[2, 6, 5])).unwrap();
        assert_eq!(y.shape(), &[2, 6, 8]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_direction_is_time_reversed_forward_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut gru = BiGru::<f64>::new("g", 3, 4, &mut rng);
        gru.forward_dir.b_ih.value = Tensor::from_fn(&[12], |i| 0.1 * i as f64 - 0.5);
        let mut shared = gru.forward_dir.clone();
        shared.reverse = true;
        gru.backward_dir.w_ih.value = shared.w_ih.value.clone();
        gru.backward_dir.w_hh.value = shared.w_hh.value.clone();
        gru.backward_dir.b_ih.value = shared.b_ih.value.clone();
        gru.backward_dir.b_hh.value = shared.b_hh.value.clone();

        let (bs, t, d) = (2, 7, 3);
        let x = Tensor::from_fn(&[bs, t, d], |i| ((i * 13) % 7) as f64 / 3.0 - 1.0);
        let mut xr = Tensor::zeros(&[bs, t, d]);
        for b in 0..bs {
            for ti in 0..t {
                for k in 0..d {
                    xr.data_mut()[(b * t + ti) * d + k] = x.data()[(b * t + (t - 1 - ti)) * d + k];
                }
            }
        }
        let (y, _) = gru.forward(&x).unwrap();
        let (yr, _) = gru.forward(&xr).unwrap();
        for b in 0..bs {
            for ti in 0..t {
                for j in 0..4 {
                    let back = y.data()[(b * t + ti) * 8 + 4 + j];
                    let fwd_rev = yr.data()[(b * t + (t - 1 - ti)) * 8 + j];
                    assert!((back - fwd_rev).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn rejects_feature_dim_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let gru = BiGru::<f32>::new("g", 5, 4, &mut rng);
        assert!(matches!(
            gru.forward(&Tensor::zeros(&[1, 3, 6])),
            Err(NnError::ShapeMismatch { .. })
        ));
    }
}
