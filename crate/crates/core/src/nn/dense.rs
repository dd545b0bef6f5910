use rand::Rng;

use super::init::kaiming_uniform;
use super::ops::{relu, relu_backward};
use super::{Mode, Module, NnError, Parameter};
use crate::scalar::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use crate::{Scalar, Tensor};

/// Affine map over the last axis: `y = x W^T + b`, `W` stored `(out, in)`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: Parameter::new(
                format!("{name}.weight"),
                kaiming_uniform(&[output, input], input, rng),
            ),
            bias: Parameter::zeros(format!("{name}.bias"), &[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let din = self.input_dim();
        if x.ndim() == 0 || *x.shape().last().unwrap() != din {
            return Err(NnError::ShapeMismatch {
                op: "linear",
                expected: format!("last axis {din}"),
                got: x.shape().to_vec(),
            });
        }
        let dout = self.output_dim();
        let rows = x.len() / din;
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let mut y = Tensor::zeros(&shape);
        for row in y.data_mut().chunks_mut(dout) {
            row.copy_from_slice(self.bias.value.data());
        }
        matmul_bt_acc(rows, din, dout, x.data(), self.weight.value.data(), y.data_mut());
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (din, dout) = (self.input_dim(), self.output_dim());
        let rows = x.len() / din;
        // dW (out x in) += dy^T (out x rows) * x (rows x in)
        matmul_at_acc(dout, rows, din, dy.data(), x.data(), self.weight.grad.data_mut());
        for row in dy.data().chunks(dout) {
            for (g, &d) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        matmul_acc(rows, dout, din, dy.data(), self.weight.value.data(), dx.data_mut());
        dx
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// `linear -> ReLU -> inverted dropout`.
#[derive(Clone, Debug)]
pub struct DenseLayer<T> {
    pub linear: Linear<T>,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct DenseLayerCache<T> {
    x: Tensor<T>,
    a: Tensor<T>,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        input: usize,
        output: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(NnError::InvalidArgument(format!(
                "dropout rate {dropout} outside [0, 1)"
            )));
        }
        Ok(Self {
            linear: Linear::new(name, input, output, rng),
            dropout,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.linear.output_dim()
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, DenseLayerCache<T>), NnError> {
        let a = relu(&self.linear.forward(x)?);
        let (y, mask) = if mode == Mode::Train && self.dropout > 0.0 {
            let keep = 1.0 - self.dropout;
            let scale = T::lit(1.0 / keep);
            let mask: Vec<T> = (0..a.len())
                .map(|_| {
                    if rng.gen::<f64>() < keep {
                        scale
                    } else {
                        T::zero()
                    }
                })
                .collect();
            let data = a.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            (Tensor::from_vec(a.shape(), data), Some(mask))
        } else {
            (a.clone(), None)
        };
        Ok((
            y,
            DenseLayerCache {
                x: x.clone(),
                a,
                mask,
            },
        ))
    }

    pub fn backward(&mut self, cache: &DenseLayerCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let da = match &cache.mask {
            Some(mask) => {
                let data = dy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                Tensor::from_vec(dy.shape(), data)
            }
            None => dy.clone(),
        };
        let dz = relu_backward(&cache.a, &da);
        self.linear.backward(&cache.x, &dz)
    }
}

impl<T: Scalar> Module<T> for DenseLayer<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.linear.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.linear.visit_params_mut(f);
    }
}

/// Two stacked [`DenseLayer`]s.
#[derive(Clone, Debug)]
pub struct DenseBlock<T> {
    pub first: DenseLayer<T>,
    pub second: DenseLayer<T>,
}

#[derive(Clone, Debug)]
pub struct DenseBlockCache<T> {
    first: DenseLayerCache<T>,
    second: DenseLayerCache<T>,
}

impl<T: Scalar> DenseBlock<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        input: usize,
        width: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Ok(Self {
            first: DenseLayer::new(&format!("{name}.fc1"), input, width, dropout, rng)?,
            second: DenseLayer::new(&format!("{name}.fc2"), width, width, dropout, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.second.output_dim()
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, DenseBlockCache<T>), NnError> {
        let (h, first) = self.first.forward(x, mode, rng)?;
        let (y, second) = self.second.forward(&h, mode, rng)?;
        Ok((y, DenseBlockCache { first, second }))
    }

    pub fn backward(&mut self, cache: &DenseBlockCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let dh = self.second.backward(&cache.second, dy);
        self.first.backward(&cache.first, &dh)
    }
}

impl<T: Scalar> Module<T> for DenseBlock<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.first.visit_params(f);
        self.second.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.first.visit_params_mut(f);
        self.second.visit_params_mut(f);
    }
}
