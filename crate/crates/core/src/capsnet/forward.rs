use serde::{Deserialize, Serialize};

use super::model::Model;
use super::routing::{self, IterCache};
use super::spec::LayerOp;
use crate::error::{Error, Result};
use crate::noise::{InjectionSession, Injector, QuantParams};
use crate::site::GroupId;
use crate::tensor::{conv2d, range_of, relu, squash, Range, Tensor};

/// Receives every instrumented tensor of a forward pass and may modify it
/// in place.
pub trait SiteHook {
    fn visit(&mut self, site: usize, tensor: &mut Tensor);
}

/// Leaves every site untouched.
pub struct NoHook;

impl SiteHook for NoHook {
    fn visit(&mut self, _site: usize, _tensor: &mut Tensor) {}
}

impl SiteHook for InjectionSession<'_> {
    fn visit(&mut self, site: usize, tensor: &mut Tensor) {
        self.apply(site, tensor);
    }
}

/// Wraps a hook and records the range of each site's (post-hook) output.
struct Recorder<'a> {
    inner: &'a mut dyn SiteHook,
    seen: Vec<Option<(Range, usize)>>,
}

impl SiteHook for Recorder<'_> {
    fn visit(&mut self, site: usize, tensor: &mut Tensor) {
        self.inner.visit(site, tensor);
        if let Ok(r) = range_of(tensor) {
            let slot = &mut self.seen[site];
            *slot = Some(match *slot {
                None => (r, 1),
                Some((prev, n)) => (
                    Range {
                        min: prev.min.min(r.min),
                        max: prev.max.max(r.max),
                    },
                    n + 1,
                ),
            });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub layer: String,
    pub group: GroupId,
    /// Layer that owns the site.
    pub owner: String,
    /// Range over all visits of the site (routing sites are visited once
    /// per iteration).
    pub range: Range,
    pub visits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub records: Vec<SiteRecord>,
    /// Length of each output capsule, one per class.
    pub scores: Vec<f64>,
}

/// Values retained from a forward pass for backpropagation.
pub(crate) enum LayerCache {
    Conv {
        input: Tensor,
        pre: Tensor,
    },
    CapsConv {
        input: Tensor,
        pre: Tensor,
    },
    ClassCaps {
        u: Tensor,
        u_hat: Tensor,
        iters: Vec<IterCache>,
    },
}

pub(crate) struct ForwardOutput {
    pub scores: Vec<f64>,
    pub v: Tensor,
}

pub(crate) fn run(
    model: &Model,
    image: &Tensor,
    hook: &mut dyn SiteHook,
    mut cache: Option<&mut Vec<LayerCache>>,
) -> Result<ForwardOutput> {
    if image.shape() != model.spec().input_shape {
        return Err(Error::Shape(format!(
            "input has shape {:?}, model expects {:?}",
            image.shape(),
            model.spec().input_shape
        )));
    }
    let mut x = image.clone();
    for layer in &model.plan().layers {
        x = match &layer.op {
            LayerOp::Conv { mac, act, .. } => {
                let kernel = model.weight(&format!("{}.kernel", layer.name));
                let bias = model.weight(&format!("{}.bias", layer.name));
                let mut z = conv_bias(&x, kernel, bias, layer_stride(model, &layer.name), layer_padding(model, &layer.name))?;
                hook.visit(*mac, &mut z);
                let mut a = relu(&z);
                hook.visit(*act, &mut a);
                if let Some(c) = cache.as_deref_mut() {
                    c.push(LayerCache::Conv { input: x, pre: z });
                }
                a
            }
            LayerOp::CapsConv { geom, dim, mac, act } => {
                let kernel = model.weight(&format!("{}.kernel", layer.name));
                let bias = model.weight(&format!("{}.bias", layer.name));
                let flat = x.reshape(&[geom.in_h, geom.in_w, geom.cin])?;
                let mut z = conv_bias(&flat, kernel, bias, geom.stride, layer_padding(model, &layer.name))?;
                hook.visit(*mac, &mut z);
                let caps = z.clone().reshape(&[geom.out_h, geom.out_w, geom.cout / dim, *dim])?;
                let mut u = squash(&caps, 3)?;
                hook.visit(*act, &mut u);
                if let Some(c) = cache.as_deref_mut() {
                    c.push(LayerCache::CapsConv { input: flat, pre: z });
                }
                u
            }
            LayerOp::ClassCaps {
                n_in,
                d_in,
                n_out,
                d_out,
                iterations,
                uhat,
                routing: sites,
            } => {
                let u = x.reshape(&[*n_in, *d_in])?;
                let w = model.weight(&format!("{}.weight", layer.name));
                let mut u_hat = predictions(&u, w, *n_out, *d_out)?;
                hook.visit(*uhat, &mut u_hat);
                let mut iters = Vec::new();
                let state = routing::route(
                    &u_hat,
                    *iterations,
                    hook,
                    *sites,
                    cache.is_some().then_some(&mut iters),
                )?;
                if let Some(c) = cache.as_deref_mut() {
                    c.push(LayerCache::ClassCaps { u, u_hat, iters });
                }
                state.v
            }
        };
        if !x.all_finite() {
            return Err(Error::NonFinite(format!("output of layer '{}'", layer.name)));
        }
    }
    let d = *x.shape().last().expect("class capsules");
    let scores = x.data().chunks_exact(d).map(routing::norm).collect();
    Ok(ForwardOutput { scores, v: x })
}

fn layer_stride(model: &Model, name: &str) -> usize {
    spec_of(model, name).stride
}

fn layer_padding(model: &Model, name: &str) -> crate::tensor::Padding {
    spec_of(model, name).padding
}

fn spec_of<'a>(model: &'a Model, name: &str) -> &'a super::spec::LayerSpec {
    let idx = model
        .plan()
        .layers
        .iter()
        .position(|l| l.name == name)
        .expect("planned layer");
    &model.spec().layers[idx]
}

fn conv_bias(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: crate::tensor::Padding,
) -> Result<Tensor> {
    let mut z = conv2d(x, kernel, stride, padding)?;
    let c = bias.len();
    for row in z.data_mut().chunks_exact_mut(c) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(z)
}

/// `u_hat[i, j] = W[i, j] . u[i]` for every input/output capsule pair.
fn predictions(u: &Tensor, w: &Tensor, n_out: usize, d_out: usize) -> Result<Tensor> {
    let [n_in, d_in] = *u.shape() else { unreachable!("reshaped by caller") };
    let wd = w.data();
    let mut out = vec![0.0; n_in * n_out * d_out];
    for i in 0..n_in {
        let ui = &u.data()[i * d_in..(i + 1) * d_in];
        for j in 0..n_out {
            for a in 0..d_out {
                let row = &wd[((i * n_out + j) * d_out + a) * d_in..][..d_in];
                out[(i * n_out + j) * d_out + a] = routing::dot(row, ui);
            }
        }
    }
    Tensor::new(vec![n_in, n_out, d_out], out)
}

/// Class scores of one image without instrumentation.
pub fn class_scores(model: &Model, image: &Tensor) -> Result<Vec<f64>> {
    Ok(run(model, image, &mut NoHook, None)?.scores)
}

pub(crate) fn scores_with(model: &Model, image: &Tensor, hook: &mut dyn SiteHook) -> Result<Vec<f64>> {
    Ok(run(model, image, hook, None)?.scores)
}

/// Index of the largest score; ties go to the lowest class id.
pub fn argmax(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Instrumented forward pass of one image. `sample` selects the noise
/// streams, so the same `(injector, sample)` reproduces the same trace.
pub fn forward_sample(model: &Model, image: &Tensor, injector: &Injector, sample: u64) -> Result<ForwardTrace> {
    let bound = injector.bind(model.sites());
    let mut session = bound.session(sample);
    let mut rec = Recorder {
        inner: &mut session,
        seen: vec![None; model.sites().len()],
    };
    let out = run(model, image, &mut rec, None)?;
    let owners = site_owners(model);
    let records = model
        .sites()
        .iter()
        .zip(rec.seen)
        .zip(owners)
        .filter_map(|((site, seen), owner)| {
            seen.map(|(range, visits)| SiteRecord {
                layer: site.layer.clone(),
                group: site.group,
                owner,
                range,
                visits,
            })
        })
        .collect();
    Ok(ForwardTrace {
        records,
        scores: out.scores,
    })
}

/// Instrumented forward pass over a batch `[N, H, W, C]`; sample `n` of the
/// batch uses noise stream `first_sample + n`.
pub fn forward(model: &Model, batch: &Tensor, injector: &Injector, first_sample: u64) -> Result<Vec<ForwardTrace>> {
    let shape = batch.shape();
    if shape.len() != 4 {
        return Err(Error::Shape(format!("batch must be [N,H,W,C], got {shape:?}")));
    }
    let per = shape[1..].iter().product::<usize>();
    batch
        .data()
        .chunks_exact(per)
        .enumerate()
        .map(|(n, chunk)| {
            let image = Tensor::new(shape[1..].to_vec(), chunk.to_vec())?;
            forward_sample(model, &image, injector, first_sample + n as u64)
        })
        .collect()
}

/// Quantized 8-bit operand pairs `(activation, weight)` seen by the
/// multipliers of convolution layer `layer` while processing `images`. Each
/// input tensor and the kernel are quantized over their own range; padded
/// taps are skipped.
pub fn conv_operand_pairs(model: &Model, images: &[Tensor], layer: &str) -> Result<Vec<(u8, u8)>> {
    let idx = model
        .plan()
        .layers
        .iter()
        .position(|l| l.name == layer)
        .ok_or_else(|| Error::InvalidArgument(format!("no layer named '{layer}'")))?;
    let geom = match &model.plan().layers[idx].op {
        LayerOp::Conv { geom, .. } | LayerOp::CapsConv { geom, .. } => *geom,
        LayerOp::ClassCaps { .. } => {
            return Err(Error::InvalidArgument(format!("layer '{layer}' is not a convolution")))
        }
    };
    let kernel = model.weight(&format!("{layer}.kernel"));
    let kr = range_of(kernel)?;
    let qw = QuantParams::eight_bit(kr.min, kr.max)?;
    let w_codes: Vec<u8> = kernel.data().iter().map(|&v| qw.quantize_value(v) as u8).collect();
    let mut pairs = Vec::new();
    for image in images {
        let mut caches = Vec::new();
        run(model, image, &mut NoHook, Some(&mut caches))?;
        let input = match &caches[idx] {
            LayerCache::Conv { input, .. } | LayerCache::CapsConv { input, .. } => input,
            LayerCache::ClassCaps { .. } => unreachable!("checked above"),
        };
        let r = range_of(input)?;
        let Ok(qx) = QuantParams::eight_bit(r.min, r.max) else { continue };
        let a_codes: Vec<u8> = input.data().iter().map(|&v| qx.quantize_value(v) as u8).collect();
        for oy in 0..geom.out_h {
            for ox in 0..geom.out_w {
                for ky in 0..geom.k {
                    let Some(iy) = geom.input_row(oy, ky) else { continue };
                    for kx in 0..geom.k {
                        let Some(ix) = geom.input_col(ox, kx) else { continue };
                        for ci in 0..geom.cin {
                            let a = a_codes[(iy * geom.in_w + ix) * geom.cin + ci];
                            let base = ((ky * geom.k + kx) * geom.cin + ci) * geom.cout;
                            pairs.extend(w_codes[base..base + geom.cout].iter().map(|&w| (a, w)));
                        }
                    }
                }
            }
        }
    }
    Ok(pairs)
}

fn site_owners(model: &Model) -> Vec<String> {
    let mut owners = vec![String::new(); model.sites().len()];
    for layer in &model.plan().layers {
        let ids: Vec<usize> = match &layer.op {
            LayerOp::Conv { mac, act, .. } | LayerOp::CapsConv { mac, act, .. } => vec![*mac, *act],
            LayerOp::ClassCaps { uhat, routing, .. } => {
                vec![*uhat, routing.softmax, routing.s, routing.squash, routing.logits]
            }
        };
        for id in ids {
            owners[id] = layer.name.clone();
        }
    }
    owners
}
