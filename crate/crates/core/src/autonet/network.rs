use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AutonetError;
use crate::pruner::PruneMask;
use crate::tensor::{self, Tensor};

/// Output non-linearity of the final layer; the only difference between the
/// segmentation and the regression branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Foreground probability, trained with the Dice loss.
    Sigmoid,
    /// Distance regression, trained with mean squared error.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    /// Resolved from the network's [`Head`].
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        activation: Activation,
        prunable: bool,
    },
    MaxPool,
    Upsample,
    /// Pushes the current activation on the skip stack.
    SaveSkip,
    /// Pops the skip stack and appends it after the current channels.
    ConcatSkip,
}

impl Layer {
    pub fn conv(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        activation: Activation,
    ) -> Self {
        Layer::Conv {
            name: name.to_string(),
            in_channels,
            out_channels,
            kernel,
            activation,
            prunable: true,
        }
    }

    /// Same as [`Layer::conv`] but exempt from magnitude pruning.
    pub fn dense_conv(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        activation: Activation,
    ) -> Self {
        Layer::Conv {
            name: name.to_string(),
            in_channels,
            out_channels,
            kernel,
            activation,
            prunable: false,
        }
    }
}

/// Serializable description of a network without its weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub head: Head,
    pub layers: Vec<Layer>,
}

/// Borrowed view of one convolution layer.
#[derive(Debug, Clone, Copy)]
pub struct ConvInfo<'a> {
    pub name: &'a str,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub activation: Activation,
    pub prunable: bool,
}

impl ConvInfo<'_> {
    pub fn weight_name(&self) -> String {
        weight_name(self.name)
    }

    pub fn bias_name(&self) -> String {
        bias_name(self.name)
    }

    pub fn weight_count(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel * self.kernel
    }
}

pub fn weight_name(layer: &str) -> String {
    format!("{layer}.weight")
}

pub fn bias_name(layer: &str) -> String {
    format!("{layer}.bias")
}

/// An ordered layer program with named parameters and optional pruning masks.
///
/// Masked weights are kept at exactly `0.0`; every mutation path that touches
/// parameters re-applies the masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    head: Head,
    layers: Vec<Layer>,
    params: BTreeMap<String, Tensor>,
    masks: BTreeMap<String, PruneMask>,
}

/// Intermediate values kept by [`Network::forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    records: Vec<Record>,
}

#[derive(Debug, Clone)]
enum Record {
    Conv { input: Tensor, output: Tensor },
    Pool { input: Tensor },
    Upsample,
    Save,
    Concat { leading: usize },
}

impl Network {
    /// Builds a network with He-uniform kernels and zero biases drawn from `seed`.
    pub fn new(head: Head, layers: Vec<Layer>, seed: u64) -> Result<Self, AutonetError> {
        validate_layers(&layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for layer in &layers {
            if let Layer::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
                ..
            } = layer
            {
                let fan_in = (in_channels * kernel * kernel) as f64;
                let bound = (6.0 / fan_in).sqrt() as f32;
                let n = in_channels * out_channels * kernel * kernel;
                let w: Vec<f32> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                params.insert(
                    weight_name(name),
                    Tensor::new(vec![*out_channels, *in_channels, *kernel, *kernel], w)?,
                );
                params.insert(bias_name(name), Tensor::zeros(&[*out_channels]));
            }
        }
        Ok(Self {
            head,
            layers,
            params,
            masks: BTreeMap::new(),
        })
    }

    /// Assembles a network from existing parameters, checking names and shapes.
    pub fn from_parts(
        arch: Architecture,
        params: BTreeMap<String, Tensor>,
        masks: BTreeMap<String, PruneMask>,
    ) -> Result<Self, AutonetError> {
        validate_layers(&arch.layers)?;
        let mut expected = BTreeMap::new();
        for layer in &arch.layers {
            if let Layer::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
                ..
            } = layer
            {
                expected.insert(
                    weight_name(name),
                    vec![*out_channels, *in_channels, *kernel, *kernel],
                );
                expected.insert(bias_name(name), vec![*out_channels]);
            }
        }
        for (name, shape) in &expected {
            match params.get(name) {
                None => return Err(AutonetError::MissingParameter(name.clone())),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(AutonetError::ParameterShape {
                        name: name.clone(),
                        expected: shape.clone(),
                        actual: t.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = params.keys().find(|k| !expected.contains_key(*k)) {
            return Err(AutonetError::UnknownParameter(extra.clone()));
        }
        let mut net = Self {
            head: arch.head,
            layers: arch.layers,
            params,
            masks: BTreeMap::new(),
        };
        net.install_masks(masks)?;
        Ok(net)
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            head: self.head,
            layers: self.layers.clone(),
        }
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn masks(&self) -> &BTreeMap<String, PruneMask> {
        &self.masks
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Convolution layers in definition order.
    pub fn convs(&self) -> impl Iterator<Item = ConvInfo<'_>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
                activation,
                prunable,
            } => Some(ConvInfo {
                name,
                in_channels: *in_channels,
                out_channels: *out_channels,
                kernel: *kernel,
                activation: *activation,
                prunable: *prunable,
            }),
            _ => None,
        })
    }

    /// Parameter names in storage order: per conv layer, weight then bias.
    pub fn param_names(&self) -> Vec<String> {
        self.convs()
            .flat_map(|c| [c.weight_name(), c.bias_name()])
            .collect()
    }

    /// Names of the kernels subject to magnitude pruning, in layer order.
    pub fn prunable_names(&self) -> Vec<String> {
        self.convs()
            .filter(|c| c.prunable)
            .map(|c| c.weight_name())
            .collect()
    }

    /// Installs (replacing existing) masks and zeroes the dropped weights.
    pub fn install_masks(
        &mut self,
        masks: BTreeMap<String, PruneMask>,
    ) -> Result<(), AutonetError> {
        for (name, mask) in &masks {
            let t = self
                .params
                .get(name)
                .ok_or_else(|| AutonetError::UnknownParameter(name.clone()))?;
            if mask.len() != t.len() {
                return Err(AutonetError::ParameterShape {
                    name: name.clone(),
                    expected: t.shape().to_vec(),
                    actual: vec![mask.len()],
                });
            }
        }
        self.masks = masks;
        self.apply_masks();
        Ok(())
    }

    pub fn clear_masks(&mut self) {
        self.masks.clear();
    }

    /// Forces every masked-out weight to exactly zero.
    pub fn apply_masks(&mut self) {
        for (name, mask) in &self.masks {
            if let Some(t) = self.params.get_mut(name) {
                for (w, &keep) in t.data_mut().iter_mut().zip(mask.bits()) {
                    if !keep {
                        *w = 0.0;
                    }
                }
            }
        }
    }

    /// Zeroes gradient entries of masked-out weights.
    pub fn mask_gradients(&self, grads: &mut BTreeMap<String, Tensor>) {
        for (name, mask) in &self.masks {
            if let Some(g) = grads.get_mut(name) {
                for (v, &keep) in g.data_mut().iter_mut().zip(mask.bits()) {
                    if !keep {
                        *v = 0.0;
                    }
                }
            }
        }
    }

    pub(crate) fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    /// Replaces a parameter tensor (shape must match); masks are re-applied.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<(), AutonetError> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| AutonetError::UnknownParameter(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(AutonetError::ParameterShape {
                name: name.to_string(),
                expected: slot.shape().to_vec(),
                actual: value.shape().to_vec(),
            });
        }
        *slot = value;
        self.apply_masks();
        Ok(())
    }

    fn conv_params(&self, name: &str) -> (&Tensor, &Tensor) {
        (
            &self.params[&weight_name(name)],
            &self.params[&bias_name(name)],
        )
    }

    fn activate(&self, act: Activation, x: &Tensor) -> Tensor {
        match (act, self.head) {
            (Activation::Relu, _) => tensor::relu(x),
            (Activation::Identity, _) | (Activation::Head, Head::Linear) => tensor::identity(x),
            (Activation::Head, Head::Sigmoid) => tensor::sigmoid(x),
        }
    }

    /// Inference pass on a `[C, H, W]` input.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, AutonetError> {
        let mut x = input.clone();
        let mut skips = Vec::new();
        for layer in &self.layers {
            x = match layer {
                Layer::Conv {
                    name, activation, ..
                } => {
                    let (w, b) = self.conv_params(name);
                    self.activate(*activation, &tensor::conv2d(&x, w, b)?)
                }
                Layer::MaxPool => tensor::maxpool2(&x)?,
                Layer::Upsample => tensor::upsample_nearest2(&x)?,
                Layer::SaveSkip => {
                    skips.push(x.clone());
                    x
                }
                Layer::ConcatSkip => {
                    let skip = skips.pop().ok_or(AutonetError::UnbalancedSkips)?;
                    tensor::concat_channels(&x, &skip)?
                }
            };
        }
        Ok(x)
    }

    /// Forward pass that records what [`Network::backward`] needs.
    pub fn forward_train(&self, input: &Tensor) -> Result<(Tensor, ForwardCache), AutonetError> {
        let mut x = input.clone();
        let mut skips = Vec::new();
        let mut records = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match layer {
                Layer::Conv {
                    name, activation, ..
                } => {
                    let (w, b) = self.conv_params(name);
                    let pre = tensor::conv2d(&x, w, b)?;
                    let out = self.activate(*activation, &pre);
                    // relu backward only needs the sign, which the output carries
                    records.push(Record::Conv {
                        input: std::mem::replace(&mut x, out.clone()),
                        output: out,
                    });
                }
                Layer::MaxPool => {
                    let out = tensor::maxpool2(&x)?;
                    records.push(Record::Pool {
                        input: std::mem::replace(&mut x, out),
                    });
                }
                Layer::Upsample => {
                    x = tensor::upsample_nearest2(&x)?;
                    records.push(Record::Upsample);
                }
                Layer::SaveSkip => {
                    skips.push(x.clone());
                    records.push(Record::Save);
                }
                Layer::ConcatSkip => {
                    let skip = skips.pop().ok_or(AutonetError::UnbalancedSkips)?;
                    let leading = x.shape()[0];
                    x = tensor::concat_channels(&x, &skip)?;
                    records.push(Record::Concat { leading });
                }
            }
        }
        Ok((x, ForwardCache { records }))
    }

    /// Parameter gradients for an upstream gradient on the network output.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &Tensor,
    ) -> Result<BTreeMap<String, Tensor>, AutonetError> {
        let mut grads = BTreeMap::new();
        let mut g = grad_output.clone();
        let mut skip_grads: Vec<Tensor> = Vec::new();
        for (layer, record) in self.layers.iter().zip(&cache.records).rev() {
            match (layer, record) {
                (
                    Layer::Conv {
                        name, activation, ..
                    },
                    Record::Conv { input, output },
                ) => {
                    let g_pre = match (*activation, self.head) {
                        (Activation::Relu, _) => tensor::relu_backward(output, &g),
                        (Activation::Head, Head::Sigmoid) => tensor::sigmoid_backward(output, &g),
                        _ => g,
                    };
                    let (w, _) = self.conv_params(name);
                    let wname = weight_name(name);
                    let keep = self.masks.get(&wname).map(|m| m.bits());
                    let cg = tensor::conv2d_backward(input, w, &g_pre, keep)?;
                    grads.insert(wname, cg.kernel);
                    grads.insert(bias_name(name), cg.bias);
                    g = cg.input;
                }
                (Layer::MaxPool, Record::Pool { input }) => {
                    g = tensor::maxpool2_backward(input, &g)?;
                }
                (Layer::Upsample, Record::Upsample) => {
                    g = tensor::upsample_nearest2_backward(&g)?;
                }
                (Layer::SaveSkip, Record::Save) => {
                    let sg = skip_grads.pop().ok_or(AutonetError::UnbalancedSkips)?;
                    for (a, b) in g.data_mut().iter_mut().zip(sg.data()) {
                        *a += b;
                    }
                }
                (Layer::ConcatSkip, Record::Concat { leading }) => {
                    let (main, skip) = tensor::split_channels(&g, *leading)?;
                    skip_grads.push(skip);
                    g = main;
                }
                _ => return Err(AutonetError::CacheMismatch),
            }
        }
        Ok(grads)
    }
}

fn validate_layers(layers: &[Layer]) -> Result<(), AutonetError> {
    let mut names = BTreeSet::new();
    let mut channels: Option<usize> = None;
    let mut skips = Vec::new();
    for layer in layers {
        match layer {
            Layer::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                if !names.insert(name.as_str()) {
                    return Err(AutonetError::DuplicateLayer(name.clone()));
                }
                if *in_channels == 0 || *out_channels == 0 || kernel % 2 == 0 {
                    return Err(AutonetError::InvalidLayer(name.clone()));
                }
                if let Some(c) = channels {
                    if c != *in_channels {
                        return Err(AutonetError::ChannelMismatch {
                            layer: name.clone(),
                            expected: c,
                            actual: *in_channels,
                        });
                    }
                }
                channels = Some(*out_channels);
            }
            Layer::SaveSkip => skips.push(channels.ok_or(AutonetError::UnbalancedSkips)?),
            Layer::ConcatSkip => {
                let skip = skips.pop().ok_or(AutonetError::UnbalancedSkips)?;
                channels = channels.map(|c| c + skip);
            }
            Layer::MaxPool | Layer::Upsample => {}
        }
    }
    if !skips.is_empty() {
        return Err(AutonetError::UnbalancedSkips);
    }
    if channels.is_none() {
        return Err(AutonetError::InvalidLayer(
            "network has no convolution".into(),
        ));
    }
    Ok(())
}

/// Layer program of the toy two-level U-Net shared by both branches.
///
/// The 1x1 output projection is exempt from pruning: with only eight weights
/// it would be emptied by layer-wise pruning at CR 16.
pub fn toy_layers() -> Vec<Layer> {
    use Activation::{Head as H, Relu};
    vec![
        Layer::conv("enc1", 1, 8, 3, Relu),
        Layer::SaveSkip,
        Layer::MaxPool,
        Layer::conv("enc2", 8, 16, 3, Relu),
        Layer::SaveSkip,
        Layer::MaxPool,
        Layer::conv("bottleneck", 16, 16, 3, Relu),
        Layer::Upsample,
        Layer::ConcatSkip,
        Layer::conv("dec2", 32, 8, 3, Relu),
        Layer::Upsample,
        Layer::ConcatSkip,
        Layer::conv("dec1", 16, 8, 3, Relu),
        Layer::dense_conv("out", 8, 1, 1, H),
    ]
}

/// The toy encoder-decoder with the given head, initialised from `seed`.
pub fn build_toy_network(head: Head, seed: u64) -> Network {
    Network::new(head, toy_layers(), seed).expect("toy architecture is valid")
}
