use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backward::sample_gradients;
use super::forward::{argmax, scores_with};
use super::model::Model;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::noise::Injector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            learning_rate: 0.005,
            batch_size: 32,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean margin loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Mini-batch training on margin loss. Gradients of a batch are computed in
/// parallel but summed in sample order, so results do not depend on the
/// thread count.
pub fn train(model: Model, dataset: &LabeledDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate {} must be finite and non-negative",
            config.learning_rate
        )));
    }
    if dataset.image_shape() != model.spec().input_shape {
        return Err(Error::Shape(format!(
            "dataset images are {:?}, model expects {:?}",
            dataset.image_shape(),
            model.spec().input_shape
        )));
    }
    if dataset.num_classes() > model.spec().num_classes {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes, model only {}",
            dataset.num_classes(),
            model.spec().num_classes
        )));
    }

    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut adam = AdamState {
        m: BTreeMap::new(),
        v: BTreeMap::new(),
        t: 0,
    };
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let per_sample = batch
                .par_iter()
                .map(|&i| sample_gradients(&model, dataset.image(i), dataset.labels()[i]))
                .collect::<Vec<_>>();
            let mut sum: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for r in per_sample {
                let (loss, grads) = r.map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged { epoch, loss: f64::NAN },
                    other => other,
                })?;
                total += loss;
                for (name, g) in grads {
                    match sum.get_mut(&name) {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => {
                            sum.insert(name, g);
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            if sum.values().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, loss: f64::NAN });
            }
            apply_update(&mut model, &sum, scale, config, &mut adam);
        }
        let mean = total / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { model, epoch_losses })
}

fn apply_update(
    model: &mut Model,
    grads: &BTreeMap<String, Vec<f64>>,
    scale: f64,
    config: &TrainConfig,
    adam: &mut AdamState,
) {
    let lr = config.learning_rate;
    if lr == 0.0 {
        return;
    }
    adam.t += 1;
    let (bc1, bc2) = (1.0 - BETA1.powi(adam.t), 1.0 - BETA2.powi(adam.t));
    for (name, g) in grads {
        let w = model.weights_mut().get_mut(name).expect("gradient for known weight").data_mut();
        match config.optimizer {
            Optimizer::Sgd => {
                for (wi, gi) in w.iter_mut().zip(g) {
                    *wi -= lr * gi * scale;
                }
            }
            Optimizer::Adam => {
                let m = adam.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                let v = adam.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                for i in 0..g.len() {
                    let gi = g[i] * scale;
                    m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                    v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                    w[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + EPS);
                }
            }
        }
    }
}

/// Predicted class of every sample. Sample `i` uses noise stream `i`, so
/// results are independent of scheduling.
pub fn predict(model: &Model, dataset: &LabeledDataset, injector: &Injector) -> Result<Vec<usize>> {
    let bound = injector.bind(model.sites());
    (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let mut session = bound.session(i as u64);
            scores_with(model, dataset.image(i), &mut session).map(|s| argmax(&s))
        })
        .collect()
}

/// Fraction of samples whose predicted class equals the label.
pub fn evaluate(model: &Model, dataset: &LabeledDataset, injector: &Injector) -> Result<f64> {
    let preds = predict(model, dataset, injector)?;
    let correct = preds.iter().zip(dataset.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / dataset.len() as f64)
}
