//! Parameter-free tensor operations and their gradients.

use crate::{Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient of ReLU given its output (positive output means pass-through).
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(dy.shape(), data)
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Row-wise softmax over the last axis of an `(n, c)` tensor.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let c = *x.shape().last().expect("softmax of scalar");
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// `(B, C1, H, W) ++ (B, C2, H, W) -> (B, C1 + C2, H, W)`.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (bs, c1, h, w) = (a.dim(0), a.dim(1), a.dim(2), a.dim(3));
    let c2 = b.dim(1);
    assert_eq!(b.shape(), &[bs, c2, h, w], "concat_channels shape mismatch");
    let plane = h * w;
    let mut out = Vec::with_capacity(bs * (c1 + c2) * plane);
    for n in 0..bs {
        out.extend_from_slice(&a.data()[n * c1 * plane..(n + 1) * c1 * plane]);
        out.extend_from_slice(&b.data()[n * c2 * plane..(n + 1) * c2 * plane]);
    }
    Tensor::from_vec(&[bs, c1 + c2, h, w], out)
}

pub fn split_channels<T: Scalar>(d: &Tensor<T>, c1: usize) -> (Tensor<T>, Tensor<T>) {
    let (bs, c, h, w) = (d.dim(0), d.dim(1), d.dim(2), d.dim(3));
    let c2 = c - c1;
    let plane = h * w;
    let mut a = Vec::with_capacity(bs * c1 * plane);
    let mut b = Vec::with_capacity(bs * c2 * plane);
    for n in 0..bs {
        let base = n * c * plane;
        a.extend_from_slice(&d.data()[base..base + c1 * plane]);
        b.extend_from_slice(&d.data()[base + c1 * plane..base + c * plane]);
    }
    (
        Tensor::from_vec(&[bs, c1, h, w], a),
        Tensor::from_vec(&[bs, c2, h, w], b),
    )
}

/// Concatenates along the last axis; leading axes must agree.
pub fn concat_last<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let d1 = *a.shape().last().unwrap();
    let d2 = *b.shape().last().unwrap();
    let lead = &a.shape()[..a.ndim() - 1];
    assert_eq!(lead, &b.shape()[..b.ndim() - 1], "concat_last shape mismatch");
    let rows = a.len() / d1;
    let mut out = Vec::with_capacity(rows * (d1 + d2));
    for r in 0..rows {
        out.extend_from_slice(&a.data()[r * d1..(r + 1) * d1]);
        out.extend_from_slice(&b.data()[r * d2..(r + 1) * d2]);
    }
    let mut shape = lead.to_vec();
    shape.push(d1 + d2);
    Tensor::from_vec(&shape, out)
}

pub fn split_last<T: Scalar>(d: &Tensor<T>, d1: usize) -> (Tensor<T>, Tensor<T>) {
    let total = *d.shape().last().unwrap();
    let d2 = total - d1;
    let rows = d.len() / total;
    let mut a = Vec::with_capacity(rows * d1);
    let mut b = Vec::with_capacity(rows * d2);
    for row in d.data().chunks(total) {
        a.extend_from_slice(&row[..d1]);
        b.extend_from_slice(&row[d1..]);
    }
    let lead = &d.shape()[..d.ndim() - 1];
    let mut sa = lead.to_vec();
    sa.push(d1);
    let mut sb = lead.to_vec();
    sb.push(d2);
    (Tensor::from_vec(&sa, a), Tensor::from_vec(&sb, b))
}

/// Averages the frequency axis of a `(B, C, T, F)` map into a `(B, T, C)` sequence.
pub fn freq_mean_to_sequence<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (bs, c, t, f) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let inv = T::one() / T::lit(f as f64);
    let mut out = Tensor::zeros(&[bs, t, c]);
    let od = out.data_mut();
    let xd = x.data();
    for n in 0..bs {
        for ch in 0..c {
            for ti in 0..t {
                let base = ((n * c + ch) * t + ti) * f;
                let s: T = xd[base..base + f].iter().copied().sum();
                od[(n * t + ti) * c + ch] = s * inv;
            }
        }
    }
    out
}

pub fn freq_mean_to_sequence_backward<T: Scalar>(dz: &Tensor<T>, f: usize) -> Tensor<T> {
    let (bs, t, c) = (dz.dim(0), dz.dim(1), dz.dim(2));
    let inv = T::one() / T::lit(f as f64);
    let mut dx = Tensor::zeros(&[bs, c, t, f]);
    let dd = dx.data_mut();
    for n in 0..bs {
        for ti in 0..t {
            for ch in 0..c {
                let g = dz.data()[(n * t + ti) * c + ch] * inv;
                let base = ((n * c + ch) * t + ti) * f;
                dd[base..base + f].iter_mut().for_each(|v| *v = g);
            }
        }
    }
    dx
}

/// `(B, T, D) -> (B, D)` mean over time.
pub fn time_mean<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (bs, t, d) = (x.dim(0), x.dim(1), x.dim(2));
    let inv = T::one() / T::lit(t as f64);
    let mut out = Tensor::zeros(&[bs, d]);
    for n in 0..bs {
        let o = &mut out.data_mut()[n * d..(n + 1) * d];
        for ti in 0..t {
            let row = &x.data()[(n * t + ti) * d..(n * t + ti + 1) * d];
            o.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
        }
        o.iter_mut().for_each(|a| *a *= inv);
    }
    out
}

pub fn time_mean_backward<T: Scalar>(dz: &Tensor<T>, t: usize) -> Tensor<T> {
    let (bs, d) = (dz.dim(0), dz.dim(1));
    let inv = T::one() / T::lit(t as f64);
    let mut dx = Tensor::zeros(&[bs, t, d]);
    for n in 0..bs {
        for ti in 0..t {
            for k in 0..d {
                dx.data_mut()[(n * t + ti) * d + k] = dz.data()[n * d + k] * inv;
            }
        }
    }
    dx
}

/// `(B, C, H, W) -> (B, C)` mean over the spatial plane.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (bs, c) = (x.dim(0), x.dim(1));
    let plane = x.dim(2) * x.dim(3);
    let inv = T::one() / T::lit(plane as f64);
    let data = x
        .data()
        .chunks(plane)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(&[bs, c], data)
}

pub fn global_avg_pool_backward<T: Scalar>(dz: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (bs, c) = (dz.dim(0), dz.dim(1));
    let plane = h * w;
    let inv = T::one() / T::lit(plane as f64);
    let mut data = Vec::with_capacity(bs * c * plane);
    for &g in dz.data() {
        data.extend(std::iter::repeat(g * inv).take(plane));
    }
    Tensor::from_vec(&[bs, c, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::<f64>::from_fn(&[3, 10], |i| (i as f64 * 1.3).sin() * 20.0);
        let p = softmax_rows(&x);
        for row in p.data().chunks(10) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_strictly_inside_unit_interval_for_moderate_inputs() {
        for &x in &[-30.0f64, -1.0, 0.0, 2.0, 30.0] {
            let s = sigmoid_scalar(x);
            assert!(s > 0.0 && s < 1.0);
        }
    }

    #[test]
    fn channel_concat_split_inverse() {
        let a = Tensor::<f32>::from_fn(&[2, 3, 2, 2], |i| i as f32);
        let b = Tensor::<f32>::from_fn(&[2, 1, 2, 2], |i| -(i as f32));
        let c = concat_channels(&a, &b);
        let (a2, b2) = split_channels(&c, 3);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn last_axis_concat_split_inverse() {
        let a = Tensor::<f32>::from_fn(&[2, 3, 4], |i| i as f32);
        let b = Tensor::<f32>::from_fn(&[2, 3, 2], |i| -(i as f32));
        let (a2, b2) = split_last(&concat_last(&a, &b), 4);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }
}
