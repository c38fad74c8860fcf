//! Routing-by-agreement between a capsule layer and the next.
//!
//! Each iteration computes coupling coefficients `k = softmax(b)` over the
//! output capsules, weighted sums `s_j = sum_i k_ij * u_hat_ij`, outputs
//! `v_j = squash(s_j)`, and the agreement update `b_ij += u_hat_ij . v_j`.
//! Every one of those tensors passes through a site hook so noise can be
//! injected into it.

use serde::{Deserialize, Serialize};

use super::forward::SiteHook;
use crate::error::{Error, Result};
use crate::noise::Injector;
use crate::site::{GroupId, Site};
use crate::tensor::{squash_scale, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct RoutingSites {
    pub softmax: usize,
    pub s: usize,
    pub squash: usize,
    pub logits: usize,
}

/// Final routing tensors. `k` and each entry of `coupling_history` are
/// softmax outputs before any noise is injected into them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingState {
    /// Logits `[num_in, num_out]`.
    pub b: Tensor,
    /// Coupling coefficients `[num_in, num_out]`.
    pub k: Tensor,
    /// Output capsule poses `[num_out, dim]`.
    pub v: Tensor,
    pub coupling_history: Vec<Tensor>,
}

/// Per-iteration values kept for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct IterCache {
    k_clean: Vec<f64>,
    k_used: Vec<f64>,
    s: Vec<f64>,
    v: Vec<f64>,
}

/// Runs `iterations` rounds of routing on `u_hat` `[num_in, num_out, dim]`.
pub(crate) fn route(
    u_hat: &Tensor,
    iterations: usize,
    hook: &mut dyn SiteHook,
    sites: RoutingSites,
    cache: Option<&mut Vec<IterCache>>,
) -> Result<RoutingState> {
    let [n_in, n_out, dim] = *u_hat.shape() else {
        return Err(Error::Shape(format!(
            "routing predictions must be [in, out, dim], got {:?}",
            u_hat.shape()
        )));
    };
    if iterations == 0 {
        return Err(Error::InvalidArgument("routing needs at least one iteration".into()));
    }
    if !u_hat.all_finite() {
        return Err(Error::NonFinite("routing predictions".into()));
    }
    let uh = u_hat.data();
    let mut b = Tensor::zeros(&[n_in, n_out]);
    let mut history = Vec::with_capacity(iterations);
    let mut last = None;
    let mut cache = cache;

    for _ in 0..iterations {
        let k_clean = softmax_rows(b.data(), n_out);
        let mut k = Tensor::new(vec![n_in, n_out], k_clean.clone())?;
        hook.visit(sites.softmax, &mut k);

        let mut s = Tensor::zeros(&[n_out, dim]);
        {
            let sd = s.data_mut();
            for i in 0..n_in {
                for j in 0..n_out {
                    let kij = k.data()[i * n_out + j];
                    let pred = &uh[(i * n_out + j) * dim..][..dim];
                    for (acc, &p) in sd[j * dim..(j + 1) * dim].iter_mut().zip(pred) {
                        *acc += kij * p;
                    }
                }
            }
        }
        hook.visit(sites.s, &mut s);

        let mut v = Tensor::zeros(&[n_out, dim]);
        for j in 0..n_out {
            let sj = &s.data()[j * dim..(j + 1) * dim];
            let scale = squash_scale(norm(sj));
            for (o, &x) in v.data_mut()[j * dim..(j + 1) * dim].iter_mut().zip(sj) {
                *o = x * scale;
            }
        }
        hook.visit(sites.squash, &mut v);

        {
            let bd = b.data_mut();
            for i in 0..n_in {
                for j in 0..n_out {
                    let pred = &uh[(i * n_out + j) * dim..][..dim];
                    let vj = &v.data()[j * dim..(j + 1) * dim];
                    bd[i * n_out + j] += dot(pred, vj);
                }
            }
        }
        hook.visit(sites.logits, &mut b);
        if !b.all_finite() || !v.all_finite() {
            return Err(Error::NonFinite("routing state".into()));
        }

        let k_clean_t = Tensor::new(vec![n_in, n_out], k_clean)?;
        if let Some(c) = cache.as_deref_mut() {
            c.push(IterCache {
                k_clean: k_clean_t.data().to_vec(),
                k_used: k.into_data(),
                s: s.data().to_vec(),
                v: v.data().to_vec(),
            });
        }
        history.push(k_clean_t);
        last = Some(v);
    }

    Ok(RoutingState {
        b,
        k: history.last().cloned().expect("at least one iteration"),
        v: last.expect("at least one iteration"),
        coupling_history: history,
    })
}

/// Backpropagates `grad_v` (gradient w.r.t. the final `v`) through all
/// routing iterations and returns the gradient w.r.t. `u_hat`.
pub(crate) fn route_backward(u_hat: &Tensor, iters: &[IterCache], grad_v: &[f64]) -> Vec<f64> {
    let [n_in, n_out, dim] = *u_hat.shape() else { unreachable!("checked in forward") };
    let uh = u_hat.data();
    let mut g_uhat = vec![0.0; uh.len()];
    // gradient flowing into b after iteration t (b_{t+1})
    let mut g_b_next = vec![0.0; n_in * n_out];

    for (t, it) in iters.iter().enumerate().rev() {
        let mut g_v = if t + 1 == iters.len() {
            grad_v.to_vec()
        } else {
            vec![0.0; n_out * dim]
        };
        // b_{t+1} = b_t + u_hat . v_t
        for i in 0..n_in {
            for j in 0..n_out {
                let ga = g_b_next[i * n_out + j];
                if ga == 0.0 {
                    continue;
                }
                let base = (i * n_out + j) * dim;
                for d in 0..dim {
                    g_uhat[base + d] += ga * it.v[j * dim + d];
                    g_v[j * dim + d] += ga * uh[base + d];
                }
            }
        }
        // v_t = squash(s_t)
        let mut g_s = vec![0.0; n_out * dim];
        for j in 0..n_out {
            squash_backward(
                &it.s[j * dim..(j + 1) * dim],
                &g_v[j * dim..(j + 1) * dim],
                &mut g_s[j * dim..(j + 1) * dim],
            );
        }
        // s_t = sum_i k_t * u_hat
        let mut g_k = vec![0.0; n_in * n_out];
        for i in 0..n_in {
            for j in 0..n_out {
                let base = (i * n_out + j) * dim;
                let gsj = &g_s[j * dim..(j + 1) * dim];
                g_k[i * n_out + j] = dot(gsj, &uh[base..base + dim]);
                let kij = it.k_used[i * n_out + j];
                for d in 0..dim {
                    g_uhat[base + d] += kij * gsj[d];
                }
            }
        }
        // k_t = softmax(b_t); b_t also feeds b_{t+1} directly
        let mut g_b = g_b_next.clone();
        for i in 0..n_in {
            let row = &it.k_clean[i * n_out..(i + 1) * n_out];
            let grow = &g_k[i * n_out..(i + 1) * n_out];
            let inner = dot(row, grow);
            for j in 0..n_out {
                g_b[i * n_out + j] += row[j] * (grow[j] - inner);
            }
        }
        g_b_next = g_b;
    }
    g_uhat
}

/// Accumulates `d squash(s) / d s` applied to `g_v` into `g_s`.
pub(crate) fn squash_backward(s: &[f64], g_v: &[f64], g_s: &mut [f64]) {
    let n = norm(s);
    if n == 0.0 {
        return;
    }
    let n2 = n * n;
    let f = n / (1.0 + n2);
    let df = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2));
    let coef = df / n * dot(s, g_v);
    for ((g, &x), &gv) in g_s.iter_mut().zip(s).zip(g_v) {
        *g += f * gv + coef * x;
    }
}

pub(crate) fn softmax_rows(b: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; b.len()];
    for (row, dst) in b.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &x) in dst.iter_mut().zip(row) {
            *o = (x - max).exp();
            sum += *o;
        }
        dst.iter_mut().for_each(|o| *o /= sum);
    }
    out
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Standalone routing over `u_hat` with noise sites named
/// `{site_prefix}_softmax`, `_s`, `_squash` and `_logits`.
pub fn dynamic_routing(
    u_hat: &Tensor,
    iterations: usize,
    injector: &Injector,
    site_prefix: &str,
    sample: u64,
) -> Result<RoutingState> {
    let [n_in, n_out, dim] = *u_hat.shape() else {
        return Err(Error::Shape(format!(
            "routing predictions must be [in, out, dim], got {:?}",
            u_hat.shape()
        )));
    };
    let sites = routing_sites(site_prefix, n_in, n_out, dim);
    let bound = injector.bind(&sites);
    let mut session = bound.session(sample);
    route(
        u_hat,
        iterations,
        &mut session,
        RoutingSites {
            softmax: 0,
            s: 1,
            squash: 2,
            logits: 3,
        },
        None,
    )
}

pub fn routing_sites(prefix: &str, n_in: usize, n_out: usize, dim: usize) -> Vec<Site> {
    vec![
        Site::new(format!("{prefix}_softmax"), GroupId::Softmax, vec![n_in, n_out]),
        Site::new(format!("{prefix}_s"), GroupId::MacOutputs, vec![n_out, dim]),
        Site::new(format!("{prefix}_squash"), GroupId::Activations, vec![n_out, dim]),
        Site::new(format!("{prefix}_logits"), GroupId::LogitsUpdate, vec![n_in, n_out]),
    ]
}
