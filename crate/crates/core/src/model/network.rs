use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArchitectureConfig, ModelError, Variant};
use crate::nn::ops::{
    concat_channels, concat_last, freq_mean_to_sequence, freq_mean_to_sequence_backward,
    global_avg_pool, global_avg_pool_backward, sigmoid, split_channels, split_last, time_mean,
    time_mean_backward,
};
use crate::nn::{
    BiGru, BiGruCache, ConvBlock, ConvBlockCache, DenseBlock, DenseBlockCache, DenseLayer,
    DenseLayerCache, Linear, MaxPool2d, Mode, Module, Parameter, ResidualBlock, ResidualCache,
};
use crate::task::{Task, TaskSet, ASC_CLASSES, SED_CLASSES, TAG_CLASSES};
use crate::{Scalar, Tensor};

/// Head outputs for one batch; heads of inactive tasks are `None`.
#[derive(Clone, Debug)]
pub struct ModelOutputs<T> {
    /// `(B, 10)` pre-softmax scores.
    pub asc_logits: Option<Tensor<T>>,
    /// `(B, 80)` pre-sigmoid scores.
    pub tag_logits: Option<Tensor<T>>,
    /// `(B, 80)`.
    pub tag_probs: Option<Tensor<T>>,
    /// `(B, T', 14)` pre-sigmoid scores.
    pub sed_logits: Option<Tensor<T>>,
    /// `(B, T', 14)`.
    pub sed_roll: Option<Tensor<T>>,
}

/// Loss gradients with respect to the pre-activation head outputs.
#[derive(Clone, Debug, Default)]
pub struct OutputGrads<T> {
    pub asc_logits: Option<Tensor<T>>,
    pub tag_logits: Option<Tensor<T>>,
    pub sed_logits: Option<Tensor<T>>,
}

#[derive(Clone, Debug)]
enum Heads<T> {
    V1 {
        asc_res: ResidualBlock<T>,
        asc_out: Linear<T>,
        tag_dense: DenseBlock<T>,
        tag_out: Linear<T>,
        sed_out: Linear<T>,
    },
    V2 {
        asc_out: Linear<T>,
        tag_dense: DenseBlock<T>,
        tag_out: Linear<T>,
        sed_dense: DenseBlock<T>,
        sed_out: Linear<T>,
    },
    V3 {
        asc_branch: ConvBlock<T>,
        asc_out: Linear<T>,
        sed_branch: DenseLayer<T>,
        sed_dense: DenseBlock<T>,
        sed_out: Linear<T>,
        tag_branch: DenseLayer<T>,
        tag_dense: DenseBlock<T>,
        tag_out: Linear<T>,
    },
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ModelCache<T> {
    blocks: Vec<ConvBlockCache<T>>,
    m0_shape: Vec<usize>,
    asc_branch: Option<(ConvBlockCache<T>, Vec<usize>)>,
    asc_res: Option<(ResidualCache<T>, Vec<usize>)>,
    asc_pooled: Option<Tensor<T>>,
    gru: Option<BiGruCache<T>>,
    g: Option<Tensor<T>>,
    sed_branch: Option<DenseLayerCache<T>>,
    sed_dense: Option<DenseBlockCache<T>>,
    sed_hidden: Option<Tensor<T>>,
    tag_mean_in: Option<Tensor<T>>,
    tag_branch: Option<DenseLayerCache<T>>,
    tag_dense: Option<DenseBlockCache<T>>,
    tag_hidden: Option<Tensor<T>>,
}

/// One of the three integrated architectures.
#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ArchitectureConfig,
    blocks: Vec<ConvBlock<T>>,
    gru: BiGru<T>,
    heads: Heads<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ArchitectureConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let c = &config;
        let mut blocks = Vec::with_capacity(4);
        let mut cin = 1;
        for i in 0..4 {
            let pool = MaxPool2d::new(c.time_pool[i], c.freq_pool[i]);
            blocks.push(ConvBlock::new(&format!("trunk.block{}", i + 1), cin, c.channels[i], pool, rng));
            cin = c.channels[i];
        }
        let c4 = c.last_channels();
        let h2 = 2 * c.gru_hidden;
        let (w, bw, p) = (c.dense_width, c.branch_width, c.dropout);
        let gru_in = if c.variant == Variant::V3 { c4 + bw } else { c4 };
        let gru = BiGru::new("gru", gru_in, c.gru_hidden, rng);
        let heads = match c.variant {
            Variant::V1 => Heads::V1 {
                asc_res: ResidualBlock::new("asc.res", 1, c.asc_res_channels, rng)?,
                asc_out: Linear::new("asc.out", c.asc_res_channels, ASC_CLASSES, rng),
                tag_dense: DenseBlock::new("tag.dense", h2, w, p, rng)?,
                tag_out: Linear::new("tag.out", w, TAG_CLASSES, rng),
                sed_out: Linear::new("sed.out", h2, SED_CLASSES, rng),
            },
            Variant::V2 => Heads::V2 {
                asc_out: Linear::new("asc.out", c4, ASC_CLASSES, rng),
                tag_dense: DenseBlock::new("tag.dense", h2, w, p, rng)?,
                tag_out: Linear::new("tag.out", w, TAG_CLASSES, rng),
                sed_dense: DenseBlock::new("sed.dense", h2, w, p, rng)?,
                sed_out: Linear::new("sed.out", w, SED_CLASSES, rng),
            },
            Variant::V3 => Heads::V3 {
                asc_branch: ConvBlock::new("asc.branch", c4, bw, MaxPool2d::new(1, 1), rng),
                asc_out: Linear::new("asc.out", bw, ASC_CLASSES, rng),
                sed_branch: DenseLayer::new("sed.branch", h2, bw, p, rng)?,
                sed_dense: DenseBlock::new("sed.dense", bw, w, p, rng)?,
                sed_out: Linear::new("sed.out", w, SED_CLASSES, rng),
                tag_branch: DenseLayer::new("tag.branch", h2 + bw, bw, p, rng)?,
                tag_dense: DenseBlock::new("tag.dense", bw, w, p, rng)?,
                tag_out: Linear::new("tag.out", w, TAG_CLASSES, rng),
            },
        };
        Ok(Self {
            config,
            blocks,
            gru,
            heads,
        })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Output channels of the last conv layer in the shared stack.
    pub fn final_conv_channels(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.out_channels())
    }

    pub fn conv_layer_count(&self) -> usize {
        2 * self.blocks.len()
    }

    /// `(asc, tag, sed)` output widths.
    pub fn head_dims(&self) -> (usize, usize, usize) {
        match &self.heads {
            Heads::V1 { asc_out, tag_out, sed_out, .. }
            | Heads::V2 { asc_out, tag_out, sed_out, .. }
            | Heads::V3 { asc_out, tag_out, sed_out, .. } => {
                (asc_out.output_dim(), tag_out.output_dim(), sed_out.output_dim())
            }
        }
    }

    fn needs_gru(&self, active: TaskSet) -> bool {
        self.config.variant == Variant::V1 || active.contains(Task::Tag) || active.contains(Task::Sed)
    }

    /// Runs the trunk and the heads of `active` on `(B, 1, T, n_mels)` input.
    ///
    /// In v2/v3 the recurrent stage is skipped when only ASC is requested,
    /// since the ASC output does not depend on it.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor<T>,
        active: TaskSet,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(ModelOutputs<T>, ModelCache<T>), ModelError> {
        if active.is_empty() {
            return Err(ModelError::NoActiveTask);
        }
        if x.ndim() != 4 || x.dim(1) != 1 || x.dim(3) != self.config.n_mels {
            return Err(ModelError::InputShape {
                expected: format!("(B, 1, T, {})", self.config.n_mels),
                got: x.shape().to_vec(),
            });
        }
        let min = self.config.min_frames();
        if x.dim(2) < min {
            return Err(ModelError::TooFewFrames { frames: x.dim(2), min });
        }
        let needs_gru = self.needs_gru(active);
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for b in &mut self.blocks {
            let (y, c) = b.forward(&h, mode)?;
            block_caches.push(c);
            h = y;
        }
        let m0 = h;
        let mut cache = ModelCache {
            blocks: block_caches,
            m0_shape: m0.shape().to_vec(),
            asc_branch: None,
            asc_res: None,
            asc_pooled: None,
            gru: None,
            g: None,
            sed_branch: None,
            sed_dense: None,
            sed_hidden: None,
            tag_mean_in: None,
            tag_branch: None,
            tag_dense: None,
            tag_hidden: None,
        };
        let mut out = ModelOutputs {
            asc_logits: None,
            tag_logits: None,
            tag_probs: None,
            sed_logits: None,
            sed_roll: None,
        };
        let gru = &self.gru;
        let run_gru = |seq_src: &Tensor<T>, cache: &mut ModelCache<T>| -> Result<Tensor<T>, ModelError> {
            let seq = freq_mean_to_sequence(seq_src);
            let (g, gc) = gru.forward(&seq)?;
            cache.gru = Some(gc);
            cache.g = Some(g.clone());
            Ok(g)
        };

        match &mut self.heads {
            Heads::V1 {
                asc_res,
                asc_out,
                tag_dense,
                tag_out,
                sed_out,
            } => {
                let g = run_gru(&m0, &mut cache)?;
                let (bs, t, d) = (g.dim(0), g.dim(1), g.dim(2));
                if active.contains(Task::Asc) {
                    let view = g.clone().reshape(&[bs, 1, t, d]);
                    let (r, rc) = asc_res.forward(&view, mode)?;
                    let pooled = global_avg_pool(&r);
                    out.asc_logits = Some(asc_out.forward(&pooled)?);
                    cache.asc_res = Some((rc, r.shape().to_vec()));
                    cache.asc_pooled = Some(pooled);
                }
                if active.contains(Task::Tag) {
                    let tm = time_mean(&g);
                    let (hd, dc) = tag_dense.forward(&tm, mode, rng)?;
                    out.tag_logits = Some(tag_out.forward(&hd)?);
                    cache.tag_mean_in = Some(g.clone());
                    cache.tag_dense = Some(dc);
                    cache.tag_hidden = Some(hd);
                }
                if active.contains(Task::Sed) {
                    out.sed_logits = Some(sed_out.forward(&g)?);
                }
            }
            Heads::V2 {
                asc_out,
                tag_dense,
                tag_out,
                sed_dense,
                sed_out,
            } => {
                if active.contains(Task::Asc) {
                    let pooled = global_avg_pool(&m0);
                    out.asc_logits = Some(asc_out.forward(&pooled)?);
                    cache.asc_pooled = Some(pooled);
                }
                if needs_gru {
                    let g = run_gru(&m0, &mut cache)?;
                    if active.contains(Task::Tag) {
                        let tm = time_mean(&g);
                        let (hd, dc) = tag_dense.forward(&tm, mode, rng)?;
                        out.tag_logits = Some(tag_out.forward(&hd)?);
                        cache.tag_mean_in = Some(g.clone());
                        cache.tag_dense = Some(dc);
                        cache.tag_hidden = Some(hd);
                    }
                    if active.contains(Task::Sed) {
                        let (hd, dc) = sed_dense.forward(&g, mode, rng)?;
                        out.sed_logits = Some(sed_out.forward(&hd)?);
                        cache.sed_dense = Some(dc);
                        cache.sed_hidden = Some(hd);
                    }
                }
            }
            Heads::V3 {
                asc_branch,
                asc_out,
                sed_branch,
                sed_dense,
                sed_out,
                tag_branch,
                tag_dense,
                tag_out,
            } => {
                // the branch output also feeds the mainstream, so it is always computed
                let (a, ac) = asc_branch.forward(&m0, mode)?;
                if active.contains(Task::Asc) {
                    let pooled = global_avg_pool(&a);
                    out.asc_logits = Some(asc_out.forward(&pooled)?);
                    cache.asc_pooled = Some(pooled);
                }
                cache.asc_branch = Some((ac, a.shape().to_vec()));
                if needs_gru {
                    let m1 = concat_channels(&m0, &a);
                    let g = run_gru(&m1, &mut cache)?;
                    let (s, sc) = sed_branch.forward(&g, mode, rng)?;
                    cache.sed_branch = Some(sc);
                    if active.contains(Task::Sed) {
                        let (hd, dc) = sed_dense.forward(&s, mode, rng)?;
                        out.sed_logits = Some(sed_out.forward(&hd)?);
                        cache.sed_dense = Some(dc);
                        cache.sed_hidden = Some(hd);
                    }
                    if active.contains(Task::Tag) {
                        let g1 = concat_last(&g, &s);
                        let tm = time_mean(&g1);
                        let (tb, tbc) = tag_branch.forward(&tm, mode, rng)?;
                        let (hd, dc) = tag_dense.forward(&tb, mode, rng)?;
                        out.tag_logits = Some(tag_out.forward(&hd)?);
                        cache.tag_mean_in = Some(g1);
                        cache.tag_branch = Some(tbc);
                        cache.tag_dense = Some(dc);
                        cache.tag_hidden = Some(hd);
                    }
                }
            }
        }
        out.tag_probs = out.tag_logits.as_ref().map(sigmoid);
        out.sed_roll = out.sed_logits.as_ref().map(sigmoid);
        Ok((out, cache))
    }

    /// Accumulates parameter gradients for the given head gradients and
    /// returns the input gradient.
    pub fn backward(&mut self, cache: &ModelCache<T>, grads: &OutputGrads<T>) -> Tensor<T> {
        let m0_shape = &cache.m0_shape;
        let (c4, f4) = (m0_shape[1], m0_shape[3]);
        let mut dm0 = Tensor::zeros(m0_shape);
        let mut dg: Option<Tensor<T>> = None;
        let add = |acc: &mut Option<Tensor<T>>, t: Tensor<T>| match acc {
            Some(a) => a.add_assign(&t),
            None => *acc = Some(t),
        };
        let tag_mean_backward = |dtm: &Tensor<T>| {
            let t = cache.tag_mean_in.as_ref().expect("tag cache").dim(1);
            time_mean_backward(dtm, t)
        };

        match &mut self.heads {
            Heads::V1 {
                asc_res,
                asc_out,
                tag_dense,
                tag_out,
                sed_out,
            } => {
                let g = cache.g.as_ref().expect("gru output cached");
                if let Some(d) = &grads.asc_logits {
                    let (rc, rshape) = cache.asc_res.as_ref().expect("asc cache");
                    let dp = asc_out.backward(cache.asc_pooled.as_ref().unwrap(), d);
                    let dr = global_avg_pool_backward(&dp, rshape[2], rshape[3]);
                    let dview = asc_res.backward(rc, &dr);
                    add(&mut dg, dview.reshape(g.shape()));
                }
                if let Some(d) = &grads.tag_logits {
                    let dh = tag_out.backward(cache.tag_hidden.as_ref().unwrap(), d);
                    let dtm = tag_dense.backward(cache.tag_dense.as_ref().unwrap(), &dh);
                    add(&mut dg, tag_mean_backward(&dtm));
                }
                if let Some(d) = &grads.sed_logits {
                    add(&mut dg, sed_out.backward(g, d));
                }
            }
            Heads::V2 {
                asc_out,
                tag_dense,
                tag_out,
                sed_dense,
                sed_out,
            } => {
                if let Some(d) = &grads.asc_logits {
                    let dp = asc_out.backward(cache.asc_pooled.as_ref().unwrap(), d);
                    dm0.add_assign(&global_avg_pool_backward(&dp, m0_shape[2], f4));
                }
                if let Some(d) = &grads.tag_logits {
                    let dh = tag_out.backward(cache.tag_hidden.as_ref().unwrap(), d);
                    let dtm = tag_dense.backward(cache.tag_dense.as_ref().unwrap(), &dh);
                    add(&mut dg, tag_mean_backward(&dtm));
                }
                if let Some(d) = &grads.sed_logits {
                    let dh = sed_out.backward(cache.sed_hidden.as_ref().unwrap(), d);
                    add(&mut dg, sed_dense.backward(cache.sed_dense.as_ref().unwrap(), &dh));
                }
            }
            Heads::V3 {
                asc_branch,
                asc_out,
                sed_branch,
                sed_dense,
                sed_out,
                tag_branch,
                tag_dense,
                tag_out,
            } => {
                let (ac, ashape) = cache.asc_branch.as_ref().expect("branch cache");
                let mut da = Tensor::zeros(ashape);
                let mut ds: Option<Tensor<T>> = None;
                if let Some(d) = &grads.asc_logits {
                    let dp = asc_out.backward(cache.asc_pooled.as_ref().unwrap(), d);
                    da.add_assign(&global_avg_pool_backward(&dp, ashape[2], ashape[3]));
                }
                if let Some(d) = &grads.tag_logits {
                    let dh = tag_out.backward(cache.tag_hidden.as_ref().unwrap(), d);
                    let dtb = tag_dense.backward(cache.tag_dense.as_ref().unwrap(), &dh);
                    let dtm = tag_branch.backward(cache.tag_branch.as_ref().unwrap(), &dtb);
                    let dg1 = tag_mean_backward(&dtm);
                    let (dgp, dsp) = split_last(&dg1, 2 * self.gru.hidden());
                    add(&mut dg, dgp);
                    add(&mut ds, dsp);
                }
                if let Some(d) = &grads.sed_logits {
                    let dh = sed_out.backward(cache.sed_hidden.as_ref().unwrap(), d);
                    add(&mut ds, sed_dense.backward(cache.sed_dense.as_ref().unwrap(), &dh));
                }
                if let Some(ds) = ds {
                    add(&mut dg, sed_branch.backward(cache.sed_branch.as_ref().unwrap(), &ds));
                }
                if let Some(dgv) = dg.take() {
                    let dseq = self.gru.backward(cache.gru.as_ref().unwrap(), &dgv);
                    let dm1 = freq_mean_to_sequence_backward(&dseq, f4);
                    let (dm0p, dap) = split_channels(&dm1, c4);
                    dm0.add_assign(&dm0p);
                    da.add_assign(&dap);
                }
                dm0.add_assign(&asc_branch.backward(ac, &da));
            }
        }
        if let Some(dgv) = dg {
            let dseq = self.gru.backward(cache.gru.as_ref().unwrap(), &dgv);
            dm0.add_assign(&freq_mean_to_sequence_backward(&dseq, f4));
        }
        let mut d = dm0;
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            d = b.backward(c, &d);
        }
        d
    }

    /// Parameters grouped by task head, for inspection.
    pub fn head_parameter_names(&self, task: Task) -> Vec<String> {
        let prefix = match task {
            Task::Asc => "asc.",
            Task::Tag => "tag.",
            Task::Sed => "sed.",
        };
        let mut names = Vec::new();
        self.visit_params(&mut |p| {
            if p.name.starts_with(prefix) {
                names.push(p.name.clone());
            }
        });
        names
    }
}

impl<T: Scalar> Module<T> for Model<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.blocks.iter().for_each(|b| b.visit_params(f));
        self.gru.visit_params(f);
        match &self.heads {
            Heads::V1 {
                asc_res,
                asc_out,
                tag_dense,
                tag_out,
                sed_out,
            } => {
                asc_res.visit_params(f);
                asc_out.visit_params(f);
                tag_dense.visit_params(f);
                tag_out.visit_params(f);
                sed_out.visit_params(f);
            }
            Heads::V2 {
                asc_out,
                tag_dense,
                tag_out,
                sed_dense,
                sed_out,
            } => {
                asc_out.visit_params(f);
                tag_dense.visit_params(f);
                tag_out.visit_params(f);
                sed_dense.visit_params(f);
                sed_out.visit_params(f);
            }
            Heads::V3 {
                asc_branch,
                asc_out,
                sed_branch,
                sed_dense,
                sed_out,
                tag_branch,
                tag_dense,
                tag_out,
            } => {
                asc_branch.visit_params(f);
                asc_out.visit_params(f);
                sed_branch.visit_params(f);
                sed_dense.visit_params(f);
                sed_out.visit_params(f);
                tag_branch.visit_params(f);
                tag_dense.visit_params(f);
                tag_out.visit_params(f);
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.blocks.iter_mut().for_each(|b| b.visit_params_mut(f));
        self.gru.visit_params_mut(f);
        match &mut self.heads {
            Heads::V1 {
                asc_res,
                asc_out,
                tag_dense,
                tag_out,
                sed_out,
            } => {
                asc_res.visit_params_mut(f);
                asc_out.visit_params_mut(f);
                tag_dense.visit_params_mut(f);
                tag_out.visit_params_mut(f);
                sed_out.visit_params_mut(f);
            }
            Heads::V2 {
                asc_out,
                tag_dense,
                tag_out,
                sed_dense,
                sed_out,
            } => {
                asc_out.visit_params_mut(f);
                tag_dense.visit_params_mut(f);
                tag_out.visit_params_mut(f);
                sed_dense.visit_params_mut(f);
                sed_out.visit_params_mut(f);
            }
            Heads::V3 {
                asc_branch,
                asc_out,
                sed_branch,
                sed_dense,
                sed_out,
                tag_branch,
                tag_dense,
                tag_out,
            } => {
                asc_branch.visit_params_mut(f);
                asc_out.visit_params_mut(f);
                sed_branch.visit_params_mut(f);
                sed_dense.visit_params_mut(f);
                sed_out.visit_params_mut(f);
                tag_branch.visit_params_mut(f);
                tag_dense.visit_params_mut(f);
                tag_out.visit_params_mut(f);
            }
        }
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.blocks.iter().for_each(|b| b.visit_buffers(f));
        match &self.heads {
            Heads::V1 { asc_res, .. } => asc_res.visit_buffers(f),
            Heads::V2 { .. } => {}
            Heads::V3 { asc_branch, .. } => asc_branch.visit_buffers(f),
        }
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.blocks.iter_mut().for_each(|b| b.visit_buffers_mut(f));
        match &mut self.heads {
            Heads::V1 { asc_res, .. } => asc_res.visit_buffers_mut(f),
            Heads::V2 { .. } => {}
            Heads::V3 { asc_branch, .. } => asc_branch.visit_buffers_mut(f),
        }
    }
}
