//! Configurable small CNN with a replaceable sigmoid head.
//!
//! Layout: `conv_blocks` × (conv → relu → maxpool), flatten, hidden dense →
//! relu, head dense with one logit per label. Parameters are partitioned into
//! three layer groups for discriminative learning rates.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::ops::{self, sigmoid_scalar};
use crate::tensor::{LabelVector, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `[channels, height, width]`.
    pub input_shape: [usize; 3],
    pub conv_blocks: Vec<ConvBlock>,
    pub hidden_units: usize,
    pub head_outputs: usize,
    /// Number of leading conv blocks in group 1. Defaults to half the blocks, rounded down.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group1_blocks: Option<usize>,
}

impl ModelConfig {
    /// Three conv blocks over a `3×36×47` crop.
    pub fn desk(head_outputs: usize) -> Self {
        ModelConfig {
            input_shape: [3, 36, 47],
            conv_blocks: vec![
                ConvBlock { filters: 6, kernel: 3, pool: 2 },
                ConvBlock { filters: 8, kernel: 3, pool: 2 },
                ConvBlock { filters: 8, kernel: 3, pool: 2 },
            ],
            hidden_units: 16,
            head_outputs,
            group1_blocks: None,
        }
    }

    /// Activation shape after each conv block, validating the geometry.
    pub fn block_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::config(format!("input shape {:?} has a zero dim", self.input_shape)));
        }
        if self.hidden_units == 0 {
            return Err(Error::config("hidden_units must be positive"));
        }
        if self.head_outputs == 0 {
            return Err(Error::config("head_outputs must be positive"));
        }
        if let Some(g) = self.group1_blocks {
            if g > self.conv_blocks.len() {
                return Err(Error::config(format!(
                    "group1_blocks {g} exceeds {} conv blocks",
                    self.conv_blocks.len()
                )));
            }
        }
        let (mut h, mut w) = (h, w);
        let mut shapes = Vec::with_capacity(self.conv_blocks.len());
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.filters == 0 || b.kernel == 0 || b.pool == 0 {
                return Err(Error::config(format!("conv block {i} has a zero field")));
            }
            let pad = b.kernel / 2;
            if b.kernel > h + 2 * pad || b.kernel > w + 2 * pad {
                return Err(Error::config(format!("conv block {i}: kernel exceeds {h}x{w} input")));
            }
            h = h + 2 * pad - b.kernel + 1;
            w = w + 2 * pad - b.kernel + 1;
            if b.pool > h || b.pool > w {
                return Err(Error::config(format!(
                    "conv block {i}: pooling {} underflows {h}x{w} activation",
                    b.pool
                )));
            }
            h = (h - b.pool) / b.pool + 1;
            w = (w - b.pool) / b.pool + 1;
            shapes.push([b.filters, h, w]);
        }
        Ok(shapes)
    }

    fn flat_features(&self) -> Result<usize> {
        let shapes = self.block_shapes()?;
        Ok(match shapes.last() {
            Some([c, h, w]) => c * h * w,
            None => self.input_shape.iter().product(),
        })
    }

    fn group1_blocks(&self) -> usize {
        self.group1_blocks.unwrap_or(self.conv_blocks.len() / 2)
    }
}

/// Layer group used for discriminative learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerGroup {
    /// Layers closest to the image.
    Early,
    Middle,
    /// The freshly initialized output head.
    Head,
}

impl LayerGroup {
    pub fn index(self) -> usize {
        match self {
            LayerGroup::Early => 0,
            LayerGroup::Middle => 1,
            LayerGroup::Head => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: LayerGroup,
    pub value: Tensor,
}

/// Parameter indices per group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerGroups {
    pub group1: Vec<usize>,
    pub group2: Vec<usize>,
    pub group3: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
}

fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

fn head_params(k: usize, fan_in: usize, rng: &mut impl Rng) -> [Param; 2] {
    [
        Param {
            name: "head.weight".into(),
            group: LayerGroup::Head,
            value: uniform(&[k, fan_in], (1.0 / fan_in as f64).sqrt(), rng),
        },
        Param {
            name: "head.bias".into(),
            group: LayerGroup::Head,
            value: Tensor::zeros(&[k]),
        },
    ]
}

impl Model {
    /// Builds a model with fan-in scaled uniform weights and zero biases.
    pub fn build(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.block_shapes()?;
        let split = config.group1_blocks();
        let mut params = Vec::new();
        let mut in_ch = config.input_shape[0];
        for (i, b) in config.conv_blocks.iter().enumerate() {
            let group = if i < split { LayerGroup::Early } else { LayerGroup::Middle };
            let fan_in = in_ch * b.kernel * b.kernel;
            params.push(Param {
                name: format!("conv{i}.weight"),
                group,
                value: uniform(
                    &[b.filters, in_ch, b.kernel, b.kernel],
                    (6.0 / fan_in as f64).sqrt(),
                    rng,
                ),
            });
            params.push(Param {
                name: format!("conv{i}.bias"),
                group,
                value: Tensor::zeros(&[b.filters]),
            });
            in_ch = b.filters;
        }
        let flat = config.flat_features()?;
        params.push(Param {
            name: "hidden.weight".into(),
            group: LayerGroup::Middle,
            value: uniform(&[config.hidden_units, flat], (6.0 / flat as f64).sqrt(), rng),
        });
        params.push(Param {
            name: "hidden.bias".into(),
            group: LayerGroup::Middle,
            value: Tensor::zeros(&[config.hidden_units]),
        });
        params.extend(head_params(config.head_outputs, config.hidden_units, rng));
        Ok(Model { config, params })
    }

    /// Reassembles a model from stored parameters, checking names and shapes.
    pub fn from_parts(config: ModelConfig, values: Vec<(String, Tensor)>) -> Result<Self> {
        let mut rng = crate::rng::seeded(0);
        let mut model = Model::build(config, &mut rng)?;
        if values.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                values.len()
            )));
        }
        for (p, (name, value)) in model.params.iter_mut().zip(values) {
            if p.name != name || p.value.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} {:?} does not match model layout {} {:?}",
                    value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = value;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_outputs(&self) -> usize {
        self.config.head_outputs
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param_values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.value)
    }

    /// Replaces every parameter value; shapes must match.
    pub fn set_param_values(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::dim(format!(
                "{} values for {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter().zip(&values) {
            if p.value.shape() != v.shape() {
                return Err(Error::dim(format!(
                    "{}: shape {:?} != {:?}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )));
            }
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }

    pub fn layer_groups(&self) -> LayerGroups {
        let pick = |g: LayerGroup| -> Vec<usize> {
            self.params
                .iter()
                .enumerate()
                .filter(|(_, p)| p.group == g)
                .map(|(i, _)| i)
                .collect()
        };
        LayerGroups {
            group1: pick(LayerGroup::Early),
            group2: pick(LayerGroup::Middle),
            group3: pick(LayerGroup::Head),
        }
    }

    /// Swaps the head for a freshly initialized one with `new_k` outputs.
    pub fn replace_head(mut self, new_k: usize, rng: &mut impl Rng) -> Result<Self> {
        if new_k == 0 {
            return Err(Error::config("replacement head needs at least one output"));
        }
        self.params.retain(|p| p.group != LayerGroup::Head);
        self.params
            .extend(head_params(new_k, self.config.hidden_units, rng));
        self.config.head_outputs = new_k;
        Ok(self)
    }

    /// Adds parameter leaves to `g`, returning their node ids in parameter order.
    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params.iter().map(|p| g.leaf(p.value.clone())).collect()
    }

    /// Logit node for a single `[C,H,W]` image node.
    pub fn logits_node(&self, g: &mut Graph, bound: &[NodeId], input: NodeId) -> Result<NodeId> {
        let shape = g.value(input).shape();
        if shape != self.config.input_shape {
            return Err(Error::dim(format!(
                "input shape {shape:?} does not match model input {:?}",
                self.config.input_shape
            )));
        }
        let mut x = input;
        for (i, b) in self.config.conv_blocks.iter().enumerate() {
            x = g.conv2d(x, bound[2 * i], bound[2 * i + 1], 1, b.kernel / 2)?;
            x = g.relu(x);
            x = g.max_pool2d(x, b.pool, b.pool)?;
        }
        let base = 2 * self.config.conv_blocks.len();
        x = g.flatten(x)?;
        x = g.dense(x, bound[base], bound[base + 1])?;
        x = g.relu(x);
        g.dense(x, bound[base + 2], bound[base + 3])
    }

    /// The on/off state of every ReLU and the winning cell of every pooling
    /// window at `image`. The loss is smooth in the parameters wherever this
    /// stays fixed.
    pub fn activation_region(&self, image: &Tensor) -> Result<Vec<usize>> {
        let p = &self.params;
        let mut region = Vec::new();
        let relu = |t: Tensor, region: &mut Vec<usize>| -> Result<Tensor> {
            region.extend(t.data().iter().map(|&v| (v > 0.0) as usize));
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v.max(0.0)).collect())
        };
        let mut x = image.clone();
        for (i, b) in self.config.conv_blocks.iter().enumerate() {
            let z = ops::conv2d(&x, &p[2 * i].value, p[2 * i + 1].value.data(), 1, b.kernel / 2)?;
            let (pooled, arg) = ops::max_pool2d(&relu(z, &mut region)?, b.pool, b.pool)?;
            region.extend(arg);
            x = pooled;
        }
        let base = 2 * self.config.conv_blocks.len();
        let flat = x.reshape(&[x.len()])?;
        let h = ops::dense(&flat, &p[base].value, p[base + 1].value.data())?;
        relu(h, &mut region)?;
        Ok(region)
    }

    /// Logits for one image.
    pub fn logits(&self, image: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let x = g.leaf(image.clone());
        let z = self.logits_node(&mut g, &bound, x)?;
        Ok(g.value(z).data().to_vec())
    }

    pub fn probabilities(&self, image: &Tensor) -> Result<Vec<f64>> {
        Ok(self.logits(image)?.into_iter().map(sigmoid_scalar).collect())
    }

    /// Logit matrix `[batch, K]`.
    pub fn forward(&self, batch: &[Tensor]) -> Result<Tensor> {
        if batch.is_empty() {
            return Err(Error::dim("forward on an empty batch"));
        }
        let rows: Vec<Vec<f64>> = batch.par_iter().map(|img| self.logits(img)).collect::<Result<_>>()?;
        let data = rows.concat();
        Tensor::new(vec![batch.len(), self.num_outputs()], data)
    }

    /// Mean over the batch of per-sample summed BCE, with gradients per parameter.
    pub fn loss_and_grad(
        &self,
        images: &[Tensor],
        targets: &[LabelVector],
    ) -> Result<(f64, Vec<Tensor>)> {
        let (loss, grads) = self.loss_graph(images, targets, true)?;
        Ok((loss, grads.expect("requested")))
    }

    /// Same objective as [`Model::loss_and_grad`] without the backward pass.
    pub fn loss(&self, images: &[Tensor], targets: &[LabelVector]) -> Result<f64> {
        self.loss_graph(images, targets, false).map(|r| r.0)
    }

    fn loss_graph(
        &self,
        images: &[Tensor],
        targets: &[LabelVector],
        with_grad: bool,
    ) -> Result<(f64, Option<Vec<Tensor>>)> {
        if images.is_empty() || images.len() != targets.len() {
            return Err(Error::dim(format!(
                "{} images and {} targets",
                images.len(),
                targets.len()
            )));
        }
        if let Some(y) = targets.iter().find(|y| y.len() != self.num_outputs()) {
            return Err(Error::dim(format!(
                "target has {} labels but head has {} outputs",
                y.len(),
                self.num_outputs()
            )));
        }
        // Per-sample graphs, reduced in index order so the result does not
        // depend on the thread count.
        let per_sample: Vec<(f64, Option<Vec<Tensor>>)> = images
            .par_iter()
            .zip(targets)
            .map(|(img, y)| self.sample_loss(img, y, with_grad))
            .collect::<Result<_>>()?;
        let scale = 1.0 / images.len() as f64;
        let loss = per_sample.iter().map(|s| s.0).sum::<f64>() * scale;
        if !with_grad {
            return Ok((loss, None));
        }
        let mut totals: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        for (_, grads) in &per_sample {
            for (t, g) in totals.iter_mut().zip(grads.as_ref().expect("requested")) {
                t.add_assign(g);
            }
        }
        for t in &mut totals {
            t.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        Ok((loss, Some(totals)))
    }

    fn sample_loss(&self, image: &Tensor, y: &LabelVector, with_grad: bool) -> Result<(f64, Option<Vec<Tensor>>)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let x = g.leaf(image.clone());
        let z = self.logits_node(&mut g, &bound, x)?;
        let loss = g.bce_sum_loss(z, y)?;
        let value = g.value(loss).item()?;
        if !with_grad {
            return Ok((value, None));
        }
        g.backward(loss)?;
        let grads = bound
            .iter()
            .zip(&self.params)
            .map(|(&id, p)| g.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect();
        Ok((value, Some(grads)))
    }
}
