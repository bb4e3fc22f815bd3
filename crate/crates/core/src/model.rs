//! The three density-regression networks and their hand-written backward
//! pass.
//!
//! All variants share an 8-block trunk:
//!
//! | block | layers                      | out channels | group  |
//! |-------|-----------------------------|--------------|--------|
//! | 1–3   | conv3×3, ReLU, maxpool 2×2  | 32, 64, 128  | Θ₁     |
//! | 4     | conv3×3, ReLU               | 512          | Θ₁     |
//! | 5     | up×2, [concat E₃], conv, ReLU | 128        | Θ₂     |
//! | 6     | up×2, [concat E₂], conv, ReLU | 64         | Θ₃     |
//! | 7     | up×2, [concat E₁], conv, ReLU | 32         | Θ₄     |
//! | 8     | conv1×1, ReLU               | 1            | Θ₄     |
//!
//! `E_b` is the pre-pool activation of encoder block `b`. The skip-connected
//! variants concatenate it after the decoder's upsampled features. The
//! auxiliary heads (`pricnn-aux` only) read the outputs of blocks 4, 5 and 6
//! and are conv3×3(32)+ReLU followed by conv1×1(1)+ReLU.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Layer, ModelParams, ParamGroup};
use crate::tensor::{
    concat_channels, conv2d, conv2d_backward, maxpool2x2, maxpool2x2_backward, orthogonal_init, relu, relu_backward,
    split_channels, upsample2x_bilinear, upsample2x_bilinear_backward, ConvFilter, PoolIndices, Tensor,
};

/// Block-sum factors of the low-resolution targets matched by the three
/// auxiliary heads, `(rows, cols)`.
pub const GTLR_FACTORS: [(usize, usize); 3] = [(8, 8), (4, 4), (2, 2)];

pub const ENCODER_CHANNELS: [usize; 4] = [32, 64, 128, 512];
pub const DECODER_CHANNELS: [usize; 4] = [128, 64, 32, 1];
pub const AUX_HIDDEN_CHANNELS: usize = 32;

/// Trunk block whose output each auxiliary head reads.
const AUX_TAP_BLOCKS: [usize; 3] = [4, 5, 6];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    /// No skips, no auxiliary heads.
    Fcrn,
    /// Skip concatenations only.
    PricnnOnly,
    /// Skip concatenations plus three auxiliary heads.
    PricnnAux,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 3] = [ModelVariant::PricnnAux, ModelVariant::PricnnOnly, ModelVariant::Fcrn];

    pub fn has_skips(self) -> bool {
        !matches!(self, ModelVariant::Fcrn)
    }

    pub fn has_aux(self) -> bool {
        matches!(self, ModelVariant::PricnnAux)
    }

    /// Checkpoint id.
    pub fn id(self) -> u8 {
        match self {
            ModelVariant::Fcrn => 0,
            ModelVariant::PricnnOnly => 1,
            ModelVariant::PricnnAux => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(ModelVariant::Fcrn),
            1 => Some(ModelVariant::PricnnOnly),
            2 => Some(ModelVariant::PricnnAux),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Fcrn => "fcrn",
            ModelVariant::PricnnOnly => "pricnn",
            ModelVariant::PricnnAux => "pricnn-aux",
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcrn" => Ok(ModelVariant::Fcrn),
            "pricnn" | "pricnn-only" | "pricnn_only" => Ok(ModelVariant::PricnnOnly),
            "pricnn-aux" | "pricnn_aux" => Ok(ModelVariant::PricnnAux),
            other => Err(Error::invalid(format!("unknown model `{other}` (expected pricnn-aux, pricnn or fcrn)"))),
        }
    }
}

/// Shape of one conv layer in a variant's parameter table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub group: ParamGroup,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
}

/// Conv layers of `variant` in construction (and checkpoint) order.
pub fn layer_specs(variant: ModelVariant) -> Vec<LayerSpec> {
    let spec = |name: &str, group, out_channels, in_channels, kernel| LayerSpec {
        name: name.to_string(),
        group,
        out_channels,
        in_channels,
        kernel,
    };
    let [e1, e2, e3, e4] = ENCODER_CHANNELS;
    let [d5, d6, d7, d8] = DECODER_CHANNELS;
    let (s5, s6, s7) = if variant.has_skips() { (e3, e2, e1) } else { (0, 0, 0) };
    let mut specs = vec![
        spec("block1", ParamGroup::Theta1, e1, 1, 3),
        spec("block2", ParamGroup::Theta1, e2, e1, 3),
        spec("block3", ParamGroup::Theta1, e3, e2, 3),
        spec("block4", ParamGroup::Theta1, e4, e3, 3),
        spec("block5", ParamGroup::Theta2, d5, e4 + s5, 3),
        spec("block6", ParamGroup::Theta3, d6, d5 + s6, 3),
        spec("block7", ParamGroup::Theta4, d7, d6 + s7, 3),
        spec("block8", ParamGroup::Theta4, d8, d7, 1),
    ];
    if variant.has_aux() {
        let groups = [ParamGroup::Aux1, ParamGroup::Aux2, ParamGroup::Aux3];
        for (k, (&tap_channels, group)) in [e4, d5, d6].iter().zip(groups).enumerate() {
            specs.push(spec(&format!("aux{}.conv1", k + 1), group, AUX_HIDDEN_CHANNELS, tap_channels, 3));
            specs.push(spec(&format!("aux{}.conv2", k + 1), group, 1, AUX_HIDDEN_CHANNELS, 1));
        }
    }
    specs
}

/// Downsampling factor of trunk block `block`'s output relative to the input.
fn block_output_stride(block: usize) -> usize {
    match block {
        1..=4 => 1 << block.min(3),
        5..=7 => 8 >> (block - 4),
        _ => 1,
    }
}

/// Builds and orthogonally initialises the parameters of `variant`.
pub fn build_model<R: Rng + ?Sized>(variant: ModelVariant, rng: &mut R) -> Result<ModelParams> {
    for (k, &block) in AUX_TAP_BLOCKS.iter().enumerate() {
        let stride = block_output_stride(block);
        assert_eq!(
            (stride, stride),
            GTLR_FACTORS[k],
            "auxiliary head {} resolution disagrees with its target block size",
            k + 1
        );
    }
    let layers = layer_specs(variant)
        .into_iter()
        .map(|s| {
            let filter = orthogonal_init([s.out_channels, s.in_channels, s.kernel, s.kernel], 1.0, rng)?;
            Ok(Layer { name: s.name, group: s.group, filter })
        })
        .collect::<Result<Vec<_>>>()?;
    ModelParams::new(layers)
}

/// Checks `params` against the layer table of `variant`.
pub fn check_layout(params: &ModelParams, variant: ModelVariant) -> Result<()> {
    let specs = layer_specs(variant);
    let layers = params.layers();
    for (i, s) in specs.iter().enumerate() {
        let Some(l) = layers.get(i) else {
            return Err(Error::invalid(format!("{variant} parameters are missing layer `{}`", s.name)));
        };
        let dims = l.filter.weights.dims();
        if l.name != s.name || dims != [s.out_channels, s.in_channels, s.kernel, s.kernel] {
            return Err(Error::invalid(format!(
                "layer {i} is `{}` {:?}, {variant} expects `{}` {:?}",
                l.name,
                dims,
                s.name,
                [s.out_channels, s.in_channels, s.kernel, s.kernel]
            )));
        }
    }
    if let Some(extra) = layers.get(specs.len()) {
        return Err(Error::invalid(format!("unexpected layer `{}` for {variant}", extra.name)));
    }
    Ok(())
}

/// Network outputs. `features` are the outputs of blocks 4, 5 and 6.
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    pub y_hat: Tensor,
    pub aux: Option<[Tensor; 3]>,
    pub features: [Tensor; 3],
}

/// Intermediate activations needed by [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    x: Tensor,
    /// Pre-pool encoder activations E₁..E₃.
    encoder: [Tensor; 3],
    pooled: [Tensor; 3],
    pool_indices: [PoolIndices; 3],
    /// Inputs of the block 5–7 convolutions (after upsample and concat).
    decoder_inputs: [Tensor; 3],
    block7: Tensor,
    aux_hidden: Option<[Tensor; 3]>,
}

impl ForwardCache {
    /// The tensors concatenated in blocks 5, 6 and 7, in that order.
    pub fn skip_sources(&self) -> [&Tensor; 3] {
        [&self.encoder[2], &self.encoder[1], &self.encoder[0]]
    }

    pub fn decoder_inputs(&self) -> &[Tensor; 3] {
        &self.decoder_inputs
    }

    /// Which ReLU units are active and which input each max-pool window
    /// selected. Two parameter points with equal patterns lie on the same
    /// linear piece of the network.
    pub fn activation_pattern(&self, outputs: &ForwardOutputs) -> ActivationPattern {
        let mut active = Vec::new();
        let mut relu_outputs: Vec<&Tensor> = self.encoder.iter().collect();
        relu_outputs.extend(outputs.features.iter());
        relu_outputs.push(&self.block7);
        relu_outputs.push(&outputs.y_hat);
        if let (Some(hidden), Some(aux)) = (&self.aux_hidden, &outputs.aux) {
            relu_outputs.extend(hidden.iter().chain(aux.iter()));
        }
        for t in relu_outputs {
            active.extend(t.data().iter().map(|&v| v > 0.0));
        }
        let argmax = self.pool_indices.iter().flat_map(|p| p.argmax().iter().copied()).collect();
        ActivationPattern { active, argmax }
    }
}

/// See [`ForwardCache::activation_pattern`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationPattern {
    pub active: Vec<bool>,
    pub argmax: Vec<usize>,
}

/// Gradients of a scalar loss w.r.t. the network outputs.
#[derive(Clone, Debug)]
pub struct OutputGrads {
    pub y_hat: Tensor,
    pub aux: Option<[Tensor; 3]>,
}

fn layer<'a>(params: &'a ModelParams, name: &str) -> Result<&'a ConvFilter> {
    params.layer(name).ok_or_else(|| Error::invalid(format!("missing layer `{name}`")))
}

fn conv_relu(x: &Tensor, f: &ConvFilter) -> Result<Tensor> {
    Ok(relu(&conv2d(x, f)?))
}

fn check_input(x: &Tensor) -> Result<()> {
    let [_, c, h, w] = x.dims();
    if c != 1 {
        return Err(Error::invalid(format!("network input must have 1 channel, got {c}")));
    }
    if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
        return Err(Error::invalid(format!(
            "image dims {h}x{w} must be positive multiples of 8 (three 2x2 pooling stages)"
        )));
    }
    Ok(())
}

/// Evaluates the network on a `(B, 1, H, W)` batch.
pub fn forward(params: &ModelParams, x: &Tensor, variant: ModelVariant) -> Result<ForwardOutputs> {
    forward_with_cache(params, x, variant).map(|(out, _)| out)
}

/// Full-resolution density only; auxiliary heads are skipped.
pub fn predict_density(params: &ModelParams, x: &Tensor, variant: ModelVariant) -> Result<Tensor> {
    run(params, x, variant, false).map(|(out, _)| out.y_hat)
}

pub fn forward_with_cache(
    params: &ModelParams,
    x: &Tensor,
    variant: ModelVariant,
) -> Result<(ForwardOutputs, ForwardCache)> {
    run(params, x, variant, variant.has_aux())
}

fn run(
    params: &ModelParams,
    x: &Tensor,
    variant: ModelVariant,
    with_aux: bool,
) -> Result<(ForwardOutputs, ForwardCache)> {
    check_input(x)?;

    let e1 = conv_relu(x, layer(params, "block1")?)?;
    let (p1, i1) = maxpool2x2(&e1)?;
    let e2 = conv_relu(&p1, layer(params, "block2")?)?;
    let (p2, i2) = maxpool2x2(&e2)?;
    let e3 = conv_relu(&p2, layer(params, "block3")?)?;
    let (p3, i3) = maxpool2x2(&e3)?;
    let phi1 = conv_relu(&p3, layer(params, "block4")?)?;

    let decoder_input = |features: &Tensor, skip: &Tensor| -> Result<Tensor> {
        let up = upsample2x_bilinear(features);
        if variant.has_skips() {
            concat_channels(&up, skip)
        } else {
            Ok(up)
        }
    };
    let c5 = decoder_input(&phi1, &e3)?;
    let phi2 = conv_relu(&c5, layer(params, "block5")?)?;
    let c6 = decoder_input(&phi2, &e2)?;
    let phi3 = conv_relu(&c6, layer(params, "block6")?)?;
    let c7 = decoder_input(&phi3, &e1)?;
    let b7 = conv_relu(&c7, layer(params, "block7")?)?;
    let y_hat = conv_relu(&b7, layer(params, "block8")?)?;

    let features = [phi1, phi2, phi3];
    let (aux, aux_hidden) = if with_aux {
        let mut outs = Vec::with_capacity(3);
        let mut hidden = Vec::with_capacity(3);
        for (k, phi) in features.iter().enumerate() {
            let h = conv_relu(phi, layer(params, &format!("aux{}.conv1", k + 1))?)?;
            outs.push(conv_relu(&h, layer(params, &format!("aux{}.conv2", k + 1))?)?);
            hidden.push(h);
        }
        (Some(into_array(outs)), Some(into_array(hidden)))
    } else {
        (None, None)
    };

    let cache = ForwardCache {
        x: x.clone(),
        encoder: [e1, e2, e3],
        pooled: [p1, p2, p3],
        pool_indices: [i1, i2, i3],
        decoder_inputs: [c5, c6, c7],
        block7: b7,
        aux_hidden,
    };
    Ok((ForwardOutputs { y_hat, aux, features }, cache))
}

fn into_array(v: Vec<Tensor>) -> [Tensor; 3] {
    v.try_into().expect("exactly three tensors")
}

/// Backpropagates `grads` through the network, returning parameter
/// gradients laid out like `params`.
pub fn backward(
    params: &ModelParams,
    variant: ModelVariant,
    outputs: &ForwardOutputs,
    cache: &ForwardCache,
    grads: &OutputGrads,
) -> Result<ModelParams> {
    let mut out = params.zeros_like();
    let mut put = |name: &str, g: ConvFilter| -> Result<()> {
        let slot = out.layer_mut(name).ok_or_else(|| Error::invalid(format!("missing layer `{name}`")))?;
        *slot = g;
        Ok(())
    };

    // Returns the gradient w.r.t. the conv input.
    let mut conv_relu_back = |name: &str, input: &Tensor, output: &Tensor, g: &Tensor| -> Result<Tensor> {
        let g_pre = relu_backward(output, g)?;
        let cg = conv2d_backward(input, layer(params, name)?, &g_pre)?;
        put(name, cg.filter)?;
        Ok(cg.input)
    };

    let [phi1, phi2, phi3] = &outputs.features;
    let [e1, e2, e3] = &cache.encoder;
    let [c5, c6, c7] = &cache.decoder_inputs;

    let mut aux_feature_grads: [Option<Tensor>; 3] = [None, None, None];
    if let (Some(aux_out), Some(aux_hidden), Some(aux_grads)) = (&outputs.aux, &cache.aux_hidden, &grads.aux) {
        for k in 0..3 {
            let g_h = conv_relu_back(&format!("aux{}.conv2", k + 1), &aux_hidden[k], &aux_out[k], &aux_grads[k])?;
            let g_phi = conv_relu_back(&format!("aux{}.conv1", k + 1), &outputs.features[k], &aux_hidden[k], &g_h)?;
            aux_feature_grads[k] = Some(g_phi);
        }
    }

    // Splits a decoder-input gradient into (feature path, skip path).
    let split = |g: Tensor, feature_channels: usize| -> Result<(Tensor, Option<Tensor>)> {
        if variant.has_skips() {
            let (a, b) = split_channels(&g, feature_channels)?;
            Ok((upsample2x_bilinear_backward(&a)?, Some(b)))
        } else {
            Ok((upsample2x_bilinear_backward(&g)?, None))
        }
    };
    let add = |mut g: Tensor, extra: &Option<Tensor>| -> Result<Tensor> {
        if let Some(e) = extra {
            g.add_assign(e)?;
        }
        Ok(g)
    };

    let g_b7 = conv_relu_back("block8", &cache.block7, &outputs.y_hat, &grads.y_hat)?;
    let g_c7 = conv_relu_back("block7", c7, &cache.block7, &g_b7)?;
    let (g_phi3, g_e1_skip) = split(g_c7, phi3.channels())?;
    let g_phi3 = add(g_phi3, &aux_feature_grads[2])?;
    let g_c6 = conv_relu_back("block6", c6, phi3, &g_phi3)?;
    let (g_phi2, g_e2_skip) = split(g_c6, phi2.channels())?;
    let g_phi2 = add(g_phi2, &aux_feature_grads[1])?;
    let g_c5 = conv_relu_back("block5", c5, phi2, &g_phi2)?;
    let (g_phi1, g_e3_skip) = split(g_c5, phi1.channels())?;
    let g_phi1 = add(g_phi1, &aux_feature_grads[0])?;

    let [p1, p2, p3] = &cache.pooled;
    let [i1, i2, i3] = &cache.pool_indices;
    let g_p3 = conv_relu_back("block4", p3, phi1, &g_phi1)?;
    let g_e3 = add(maxpool2x2_backward(i3, &g_p3)?, &g_e3_skip)?;
    let g_p2 = conv_relu_back("block3", p2, e3, &g_e3)?;
    let g_e2 = add(maxpool2x2_backward(i2, &g_p2)?, &g_e2_skip)?;
    let g_p1 = conv_relu_back("block2", p1, e2, &g_e2)?;
    let g_e1 = add(maxpool2x2_backward(i1, &g_p1)?, &g_e1_skip)?;
    conv_relu_back("block1", &cache.x, e1, &g_e1)?;

    Ok(out)
}
