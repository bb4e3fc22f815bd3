//! Named, grouped collections of convolution parameters.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::ConvFilter;

/// Trainable parameter groups: the four primary-network segments and the
/// three auxiliary heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    /// Blocks 1–4.
    Theta1,
    /// Block 5.
    Theta2,
    /// Block 6.
    Theta3,
    /// Blocks 7–8.
    Theta4,
    Aux1,
    Aux2,
    Aux3,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::Theta1,
        ParamGroup::Theta2,
        ParamGroup::Theta3,
        ParamGroup::Theta4,
        ParamGroup::Aux1,
        ParamGroup::Aux2,
        ParamGroup::Aux3,
    ];

    pub fn is_primary(self) -> bool {
        matches!(self, ParamGroup::Theta1 | ParamGroup::Theta2 | ParamGroup::Theta3 | ParamGroup::Theta4)
    }

    pub fn label(self) -> &'static str {
        match self {
            ParamGroup::Theta1 => "Theta1",
            ParamGroup::Theta2 => "Theta2",
            ParamGroup::Theta3 => "Theta3",
            ParamGroup::Theta4 => "Theta4",
            ParamGroup::Aux1 => "theta1",
            ParamGroup::Aux2 => "theta2",
            ParamGroup::Aux3 => "theta3",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub group: ParamGroup,
    pub filter: ConvFilter,
}

/// Addresses one scalar inside a [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScalarRef {
    pub layer: usize,
    pub bias: bool,
    pub index: usize,
}

/// Ordered list of conv layers. Order is construction order and is the
/// serialization order of checkpoints.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelParams {
    layers: Vec<Layer>,
}

impl ModelParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if layers[..i].iter().any(|p| p.name == l.name) {
                return Err(Error::invalid(format!("duplicate layer name `{}`", l.name)));
            }
        }
        Ok(ModelParams { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&ConvFilter> {
        self.layers.iter().find(|l| l.name == name).map(|l| &l.filter)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut ConvFilter> {
        self.layers.iter_mut().find(|l| l.name == name).map(|l| &mut l.filter)
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.filter.param_count()).sum()
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut g: Vec<_> = self.layers.iter().map(|l| l.group).collect();
        g.sort();
        g.dedup();
        g
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                name: l.name.clone(),
                group: l.group,
                filter: ConvFilter::zeros(l.filter.out_channels(), l.filter.in_channels(), l.filter.kernel_size()),
            })
            .collect();
        ModelParams { layers }
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.name == b.name && a.group == b.group && a.filter.weights.dims() == b.filter.weights.dims()
            })
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f32, other: &ModelParams) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::invalid("parameter sets have different layouts"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (p, &g) in a.filter.weights.data_mut().iter_mut().zip(b.filter.weights.data()) {
                *p += alpha * g;
            }
            for (p, &g) in a.filter.bias.iter_mut().zip(&b.filter.bias) {
                *p += alpha * g;
            }
        }
        Ok(())
    }

    /// Every scalar position belonging to `group`, in storage order.
    pub fn scalar_refs(&self, group: Option<ParamGroup>) -> Vec<ScalarRef> {
        let mut refs = Vec::new();
        for (li, l) in self.layers.iter().enumerate() {
            if group.is_some_and(|g| g != l.group) {
                continue;
            }
            refs.extend((0..l.filter.weights.len()).map(|index| ScalarRef { layer: li, bias: false, index }));
            refs.extend((0..l.filter.bias.len()).map(|index| ScalarRef { layer: li, bias: true, index }));
        }
        refs
    }

    pub fn scalar(&self, r: ScalarRef) -> f32 {
        let f = &self.layers[r.layer].filter;
        if r.bias {
            f.bias[r.index]
        } else {
            f.weights.data()[r.index]
        }
    }

    pub fn set_scalar(&mut self, r: ScalarRef, v: f32) {
        let f = &mut self.layers[r.layer].filter;
        if r.bias {
            f.bias[r.index] = v;
        } else {
            f.weights.data_mut()[r.index] = v;
        }
    }

    /// Squared L2 norm of the parameters in `group` (all groups if `None`).
    pub fn sq_norm(&self, group: Option<ParamGroup>) -> f64 {
        self.layers
            .iter()
            .filter(|l| group.is_none_or(|g| g == l.group))
            .flat_map(|l| l.filter.weights.data().iter().chain(&l.filter.bias))
            .map(|&v| (v as f64) * (v as f64))
            .sum()
    }

    /// Bit patterns of every scalar in storage order.
    pub fn to_bits(&self) -> Vec<u32> {
        self.layers
            .iter()
            .flat_map(|l| l.filter.weights.data().iter().chain(&l.filter.bias))
            .map(|v| v.to_bits())
            .collect()
    }
}
