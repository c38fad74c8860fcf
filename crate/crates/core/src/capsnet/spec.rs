use serde::{Deserialize, Serialize};

use super::routing::RoutingSites;
use crate::error::{Error, Result};
use crate::site::{GroupId, Site};
use crate::tensor::{ConvGeometry, Padding};

pub const DEFAULT_ROUTING_ITERATIONS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2D,
    PrimaryCaps,
    ConvCaps2D,
    ClassCaps,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Squash,
}

fn one() -> usize {
    1
}

fn default_iterations() -> usize {
    DEFAULT_ROUTING_ITERATIONS
}

fn valid() -> Padding {
    Padding::Valid
}

/// One layer of a capsule network.
///
/// `channels` is the filter count for `Conv2D`, the number of capsule
/// types for `PrimaryCaps`/`ConvCaps2D`, and the number of output capsules
/// for `ClassCaps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "one")]
    pub kernel_size: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "valid")]
    pub padding: Padding,
    pub channels: usize,
    #[serde(default = "one")]
    pub capsule_dim: usize,
    #[serde(default = "default_iterations")]
    pub routing_iterations: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv2d(filters: usize, kernel_size: usize, stride: usize, padding: Padding) -> Self {
        Self {
            kind: LayerKind::Conv2D,
            name: None,
            kernel_size,
            stride,
            padding,
            channels: filters,
            capsule_dim: 1,
            routing_iterations: DEFAULT_ROUTING_ITERATIONS,
            activation: Activation::Relu,
        }
    }

    pub fn primary_caps(
        types: usize,
        capsule_dim: usize,
        kernel_size: usize,
        stride: usize,
        padding: Padding,
    ) -> Self {
        Self {
            kind: LayerKind::PrimaryCaps,
            name: None,
            kernel_size,
            stride,
            padding,
            channels: types,
            capsule_dim,
            routing_iterations: DEFAULT_ROUTING_ITERATIONS,
            activation: Activation::Squash,
        }
    }

    pub fn conv_caps(
        types: usize,
        capsule_dim: usize,
        kernel_size: usize,
        stride: usize,
        padding: Padding,
    ) -> Self {
        Self {
            kind: LayerKind::ConvCaps2D,
            ..Self::primary_caps(types, capsule_dim, kernel_size, stride, padding)
        }
    }

    pub fn class_caps(capsules: usize, capsule_dim: usize, routing_iterations: usize) -> Self {
        Self {
            kind: LayerKind::ClassCaps,
            name: None,
            kernel_size: 1,
            stride: 1,
            padding: Padding::Valid,
            channels: capsules,
            capsule_dim,
            routing_iterations,
            activation: Activation::Squash,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[H, W, C]` of one input image.
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// 8x8x1 input, Conv2D 16x3x3 (relu, same padding), PrimaryCaps 3x3
    /// stride 2 into 8 capsule types of dimension 4, ClassCaps 10x8 with
    /// three routing iterations.
    pub fn toy() -> Self {
        Self::toy_for_input([8, 8, 1], 10)
    }

    pub fn toy_for_input(input_shape: [usize; 3], num_classes: usize) -> Self {
        Self {
            input_shape,
            num_classes,
            layers: vec![
                LayerSpec::conv2d(16, 3, 1, Padding::Same),
                LayerSpec::primary_caps(8, 4, 3, 2, Padding::Valid),
                LayerSpec::class_caps(num_classes, 8, DEFAULT_ROUTING_ITERATIONS),
            ],
        }
    }

    /// Checks layer ordering and shape compatibility and assigns layer and
    /// site names.
    pub(crate) fn plan(&self) -> Result<NetworkPlan> {
        if self.layers.is_empty() {
            return Err(Error::InvalidSpec("network has no layers".into()));
        }
        if self.input_shape.contains(&0) || self.num_classes == 0 {
            return Err(Error::InvalidSpec("input shape and class count must be positive".into()));
        }
        let names = self.layer_names();
        let mut seen = std::collections::BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidSpec(format!("duplicate layer name '{n}'")));
            }
        }

        let mut sites = Vec::new();
        let add_site = |sites: &mut Vec<Site>, layer: String, group, shape: Vec<usize>| {
            sites.push(Site::new(layer, group, shape));
            sites.len() - 1
        };

        let mut layers = Vec::with_capacity(self.layers.len());
        let mut shape: Vec<usize> = self.input_shape.to_vec();
        let mut seen_primary = false;
        let mut seen_class = false;
        for (spec, name) in self.layers.iter().zip(names) {
            if spec.channels == 0 || spec.capsule_dim == 0 {
                return Err(Error::InvalidSpec(format!(
                    "layer '{name}' needs positive channel and capsule counts"
                )));
            }
            let op = match spec.kind {
                LayerKind::Conv2D => {
                    if seen_primary {
                        return Err(Error::InvalidSpec(format!(
                            "Conv2D layer '{name}' must precede the capsule layers"
                        )));
                    }
                    if spec.activation != Activation::Relu || spec.capsule_dim != 1 {
                        return Err(Error::InvalidSpec(format!(
                            "Conv2D layer '{name}' must use relu and capsule_dim 1"
                        )));
                    }
                    let geom = conv_geometry(&shape, spec, spec.channels, &name)?;
                    let out = vec![geom.out_h, geom.out_w, geom.cout];
                    let mac = add_site(&mut sites, name.clone(), GroupId::MacOutputs, out.clone());
                    let act = add_site(&mut sites, format!("{name}_relu"), GroupId::Activations, out.clone());
                    shape = out;
                    LayerOp::Conv { geom, mac, act }
                }
                LayerKind::PrimaryCaps | LayerKind::ConvCaps2D => {
                    let is_primary = spec.kind == LayerKind::PrimaryCaps;
                    if is_primary && seen_primary {
                        return Err(Error::InvalidSpec("only one PrimaryCaps layer is allowed".into()));
                    }
                    if !is_primary && !seen_primary {
                        return Err(Error::InvalidSpec(format!(
                            "ConvCaps2D layer '{name}' needs a preceding PrimaryCaps layer"
                        )));
                    }
                    if seen_class {
                        return Err(Error::InvalidSpec(format!(
                            "convolutional capsule layer '{name}' after ClassCaps"
                        )));
                    }
                    if spec.activation != Activation::Squash {
                        return Err(Error::InvalidSpec(format!("capsule layer '{name}' must use squash")));
                    }
                    seen_primary = true;
                    // capsule grids [H, W, T, D] are convolved as [H, W, T*D]
                    let flat = vec![shape[0], shape[1], shape[2..].iter().product()];
                    let geom = conv_geometry(&flat, spec, spec.channels * spec.capsule_dim, &name)?;
                    let conv_out = vec![geom.out_h, geom.out_w, geom.cout];
                    let mac = add_site(&mut sites, format!("{name}_conv"), GroupId::MacOutputs, conv_out);
                    let out = vec![geom.out_h, geom.out_w, spec.channels, spec.capsule_dim];
                    let act = add_site(&mut sites, format!("{name}_squash"), GroupId::Activations, out.clone());
                    shape = out;
                    LayerOp::CapsConv {
                        geom,
                        dim: spec.capsule_dim,
                        mac,
                        act,
                    }
                }
                LayerKind::ClassCaps => {
                    if !seen_primary {
                        return Err(Error::InvalidSpec(format!(
                            "ClassCaps layer '{name}' needs capsule inputs"
                        )));
                    }
                    if spec.routing_iterations == 0 {
                        return Err(Error::InvalidSpec(format!(
                            "ClassCaps layer '{name}' needs at least one routing iteration"
                        )));
                    }
                    if spec.activation != Activation::Squash {
                        return Err(Error::InvalidSpec(format!("capsule layer '{name}' must use squash")));
                    }
                    seen_class = true;
                    let d_in = *shape.last().expect("capsule shape");
                    let n_in = shape.iter().product::<usize>() / d_in;
                    let (n_out, d_out) = (spec.channels, spec.capsule_dim);
                    let uhat = add_site(&mut sites, format!("{name}_uhat"), GroupId::MacOutputs, vec![n_in, n_out, d_out]);
                    let softmax = add_site(&mut sites, format!("{name}_softmax"), GroupId::Softmax, vec![n_in, n_out]);
                    let s = add_site(&mut sites, format!("{name}_s"), GroupId::MacOutputs, vec![n_out, d_out]);
                    let squash = add_site(&mut sites, format!("{name}_squash"), GroupId::Activations, vec![n_out, d_out]);
                    let logits = add_site(&mut sites, format!("{name}_logits"), GroupId::LogitsUpdate, vec![n_in, n_out]);
                    shape = vec![n_out, d_out];
                    LayerOp::ClassCaps {
                        n_in,
                        d_in,
                        n_out,
                        d_out,
                        iterations: spec.routing_iterations,
                        uhat,
                        routing: RoutingSites {
                            softmax,
                            s,
                            squash,
                            logits,
                        },
                    }
                }
            };
            layers.push(PlannedLayer { name, op });
        }

        match self.layers.last().map(|l| l.kind) {
            Some(LayerKind::ClassCaps) => {}
            _ => return Err(Error::InvalidSpec("the last layer must be ClassCaps".into())),
        }
        if shape[0] != self.num_classes {
            return Err(Error::InvalidSpec(format!(
                "final ClassCaps has {} capsules but the network has {} classes",
                shape[0], self.num_classes
            )));
        }
        Ok(NetworkPlan { layers, sites })
    }

    fn layer_names(&self) -> Vec<String> {
        let count = |k: LayerKind| self.layers.iter().filter(|l| l.kind == k).count();
        let mut seen = [0usize; 4];
        self.layers
            .iter()
            .map(|l| {
                let slot = l.kind as usize;
                seen[slot] += 1;
                if let Some(n) = &l.name {
                    return n.clone();
                }
                let (base, always_number) = match l.kind {
                    LayerKind::Conv2D => ("conv", true),
                    LayerKind::PrimaryCaps => ("primarycaps", false),
                    LayerKind::ConvCaps2D => ("convcaps", true),
                    LayerKind::ClassCaps => ("classcaps", false),
                };
                if always_number || count(l.kind) > 1 {
                    format!("{base}{}", seen[slot])
                } else {
                    base.to_string()
                }
            })
            .collect()
    }
}

fn conv_geometry(shape: &[usize], spec: &LayerSpec, cout: usize, name: &str) -> Result<ConvGeometry> {
    let k = spec.kernel_size;
    let cin = shape.get(2).copied().unwrap_or(0);
    ConvGeometry::new(shape, &[k, k, cin, cout], spec.stride, spec.padding)
        .map_err(|e| Error::InvalidSpec(format!("layer '{name}': {e}")))
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum LayerOp {
    Conv {
        geom: ConvGeometry,
        mac: usize,
        act: usize,
    },
    CapsConv {
        geom: ConvGeometry,
        dim: usize,
        mac: usize,
        act: usize,
    },
    ClassCaps {
        n_in: usize,
        d_in: usize,
        n_out: usize,
        d_out: usize,
        iterations: usize,
        uhat: usize,
        routing: RoutingSites,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct PlannedLayer {
    pub name: String,
    pub op: LayerOp,
}

impl PlannedLayer {
    /// Names and shapes of this layer's parameters.
    pub fn params(&self) -> Vec<(String, Vec<usize>)> {
        match &self.op {
            LayerOp::Conv { geom, .. } | LayerOp::CapsConv { geom, .. } => vec![
                (format!("{}.kernel", self.name), vec![geom.k, geom.k, geom.cin, geom.cout]),
                (format!("{}.bias", self.name), vec![geom.cout]),
            ],
            LayerOp::ClassCaps {
                n_in,
                d_in,
                n_out,
                d_out,
                ..
            } => vec![(format!("{}.weight", self.name), vec![*n_in, *n_out, *d_out, *d_in])],
        }
    }

    pub fn fan_in(&self) -> usize {
        match &self.op {
            LayerOp::Conv { geom, .. } | LayerOp::CapsConv { geom, .. } => geom.k * geom.k * geom.cin,
            LayerOp::ClassCaps { d_in, .. } => *d_in,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct NetworkPlan {
    pub layers: Vec<PlannedLayer>,
    pub sites: Vec<Site>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_sites() {
        let plan = NetworkSpec::toy().plan().unwrap();
        let names: Vec<_> = plan.sites.iter().map(|s| (s.layer.as_str(), s.group)).collect();
        assert_eq!(
            names,
            vec![
                ("conv1", GroupId::MacOutputs),
                ("conv1_relu", GroupId::Activations),
                ("primarycaps_conv", GroupId::MacOutputs),
                ("primarycaps_squash", GroupId::Activations),
                ("classcaps_uhat", GroupId::MacOutputs),
                ("classcaps_softmax", GroupId::Softmax),
                ("classcaps_s", GroupId::MacOutputs),
                ("classcaps_squash", GroupId::Activations),
                ("classcaps_logits", GroupId::LogitsUpdate),
            ]
        );
        assert_eq!(plan.sites[4].shape, vec![72, 10, 8]);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = NetworkSpec::toy();
        s.layers.clear();
        assert!(s.plan().is_err());

        let mut s = NetworkSpec::toy();
        s.layers.pop();
        assert!(s.plan().is_err(), "no routing layer");

        let mut s = NetworkSpec::toy();
        s.num_classes = 5;
        assert!(s.plan().is_err(), "class count mismatch");

        let mut s = NetworkSpec::toy();
        s.layers[2].routing_iterations = 0;
        assert!(s.plan().is_err());

        let mut s = NetworkSpec::toy();
        s.layers[1].kernel_size = 9;
        assert!(s.plan().is_err(), "kernel larger than input");

        let mut s = NetworkSpec::toy();
        s.layers.swap(0, 1);
        assert!(s.plan().is_err(), "conv after capsules");
    }

    #[test]
    fn spec_json_roundtrip() {
        let s = NetworkSpec::toy();
        let text = serde_json::to_string(&s).unwrap();
        let back: NetworkSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
