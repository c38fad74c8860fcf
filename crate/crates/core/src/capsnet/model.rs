use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::{NetworkPlan, NetworkSpec};
use crate::error::{Error, Result};
use crate::site::Site;
use crate::tensor::Tensor;

/// A network spec plus its trained parameters.
///
/// Serialized as one JSON document holding the spec and every weight
/// tensor as `{shape, data}` with decimal values.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct Model {
    spec: NetworkSpec,
    weights: BTreeMap<String, Tensor>,
    plan: NetworkPlan,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    spec: NetworkSpec,
    weights: BTreeMap<String, Tensor>,
}

impl TryFrom<ModelFile> for Model {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        Model::from_parts(file.spec, file.weights)
    }
}

impl From<Model> for ModelFile {
    fn from(m: Model) -> Self {
        ModelFile {
            spec: m.spec,
            weights: m.weights,
        }
    }
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.weights == other.weights
    }
}

/// Builds a model with seed-deterministic He-uniform weights
/// (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`) and zero biases.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<Model> {
    let plan = spec.plan()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = BTreeMap::new();
    for layer in &plan.layers {
        let limit = (6.0 / layer.fan_in() as f64).sqrt();
        for (name, shape) in layer.params() {
            let len = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; len]
            } else {
                (0..len).map(|_| rng.random_range(-limit..limit)).collect()
            };
            weights.insert(name, Tensor::new(shape, data)?);
        }
    }
    Ok(Model {
        spec: spec.clone(),
        weights,
        plan,
    })
}

impl Model {
    pub fn from_parts(spec: NetworkSpec, weights: BTreeMap<String, Tensor>) -> Result<Self> {
        let plan = spec.plan()?;
        let expected: BTreeMap<String, Vec<usize>> =
            plan.layers.iter().flat_map(|l| l.params()).collect();
        for (name, shape) in &expected {
            match weights.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Shape(format!(
                        "weight '{name}' has shape {:?}, spec needs {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Shape(format!("missing weight '{name}'"))),
            }
        }
        if let Some(extra) = weights.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::Shape(format!("unexpected weight '{extra}'")));
        }
        Ok(Self {
            spec,
            weights,
            plan,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &BTreeMap<String, Tensor> {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.weights
    }

    pub(crate) fn plan(&self) -> &NetworkPlan {
        &self.plan
    }

    pub(crate) fn weight(&self, name: &str) -> &Tensor {
        &self.weights[name]
    }

    /// Every instrumented site in forward order.
    pub fn sites(&self) -> &[Site] {
        &self.plan.sites
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.values().map(Tensor::len).sum()
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.plan.layers.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
