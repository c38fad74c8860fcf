use std::collections::BTreeMap;

use super::forward::{run, LayerCache, NoHook};
use super::loss::{margin_loss, margin_loss_grad};
use super::model::Model;
use super::routing::{norm, route_backward, squash_backward};
use super::spec::LayerOp;
use crate::error::Result;
use crate::tensor::{ConvGeometry, Tensor};

/// Loss of one labelled sample and the gradient of that loss for every
/// weight tensor, keyed like [`Model::weights`].
pub fn sample_gradients(model: &Model, image: &Tensor, label: usize) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let mut caches = Vec::new();
    let out = run(model, image, &mut NoHook, Some(&mut caches))?;
    let loss = margin_loss(&out.scores, label);
    let g_scores = margin_loss_grad(&out.scores, label);

    let d = *out.v.shape().last().expect("class capsules");
    let mut g: Vec<f64> = Vec::with_capacity(out.v.len());
    for (vj, gs) in out.v.data().chunks_exact(d).zip(&g_scores) {
        let n = norm(vj);
        g.extend(vj.iter().map(|&x| if n > 0.0 { gs * x / n } else { 0.0 }));
    }

    let mut grads = BTreeMap::new();
    let layers = &model.plan().layers;
    for (idx, (layer, cache)) in layers.iter().zip(&caches).enumerate().rev() {
        let need_input = idx > 0;
        g = match (&layer.op, cache) {
            (LayerOp::Conv { geom, .. }, LayerCache::Conv { input, pre }) => {
                let g_pre: Vec<f64> = pre
                    .data()
                    .iter()
                    .zip(&g)
                    .map(|(&z, &gv)| if z > 0.0 { gv } else { 0.0 })
                    .collect();
                conv_backward(model, &layer.name, geom, input, &g_pre, need_input, &mut grads)
            }
            (LayerOp::CapsConv { geom, dim, .. }, LayerCache::CapsConv { input, pre }) => {
                let mut g_pre = vec![0.0; pre.len()];
                for ((s, gv), gs) in pre
                    .data()
                    .chunks_exact(*dim)
                    .zip(g.chunks_exact(*dim))
                    .zip(g_pre.chunks_exact_mut(*dim))
                {
                    squash_backward(s, gv, gs);
                }
                conv_backward(model, &layer.name, geom, input, &g_pre, need_input, &mut grads)
            }
            (
                LayerOp::ClassCaps {
                    n_in,
                    d_in,
                    n_out,
                    d_out,
                    ..
                },
                LayerCache::ClassCaps { u, u_hat, iters },
            ) => {
                let g_uhat = route_backward(u_hat, iters, &g);
                let name = format!("{}.weight", layer.name);
                let w = model.weight(&name).data();
                let mut g_w = vec![0.0; w.len()];
                let mut g_u = vec![0.0; u.len()];
                for i in 0..*n_in {
                    let ui = &u.data()[i * d_in..(i + 1) * d_in];
                    for j in 0..*n_out {
                        for a in 0..*d_out {
                            let gh = g_uhat[(i * n_out + j) * d_out + a];
                            let off = ((i * n_out + j) * d_out + a) * d_in;
                            for c in 0..*d_in {
                                g_w[off + c] += gh * ui[c];
                                g_u[i * d_in + c] += gh * w[off + c];
                            }
                        }
                    }
                }
                grads.insert(name, g_w);
                g_u
            }
            _ => unreachable!("cache kind follows layer kind"),
        };
    }
    Ok((loss, grads))
}

/// Accumulates kernel and bias gradients for one convolution and returns the
/// gradient with respect to its input (empty when `need_input` is false).
fn conv_backward(
    model: &Model,
    name: &str,
    g: &ConvGeometry,
    input: &Tensor,
    g_out: &[f64],
    need_input: bool,
    grads: &mut BTreeMap<String, Vec<f64>>,
) -> Vec<f64> {
    let kernel = model.weight(&format!("{name}.kernel")).data();
    let x = input.data();
    let mut g_k = vec![0.0; kernel.len()];
    let mut g_b = vec![0.0; g.cout];
    let mut g_x = if need_input { vec![0.0; x.len()] } else { Vec::new() };
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let go = &g_out[(oy * g.out_w + ox) * g.cout..][..g.cout];
            for (b, &v) in g_b.iter_mut().zip(go) {
                *b += v;
            }
            for ky in 0..g.k {
                let Some(iy) = g.input_row(oy, ky) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.input_col(ox, kx) else { continue };
                    for ci in 0..g.cin {
                        let xi = (iy * g.in_w + ix) * g.cin + ci;
                        let kbase = ((ky * g.k + kx) * g.cin + ci) * g.cout;
                        let xv = x[xi];
                        let mut acc = 0.0;
                        for co in 0..g.cout {
                            g_k[kbase + co] += xv * go[co];
                            acc += kernel[kbase + co] * go[co];
                        }
                        if need_input {
                            g_x[xi] += acc;
                        }
                    }
                }
            }
        }
    }
    grads.insert(format!("{name}.kernel"), g_k);
    grads.insert(format!("{name}.bias"), g_b);
    g_x
}
