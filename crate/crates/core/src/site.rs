//! Operation groups and the instrumented sites of a forward pass.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The four operation groups noise can be injected into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupId {
    /// Outputs of convolutions and matrix multiplications.
    MacOutputs,
    /// Outputs of ReLU and squash.
    Activations,
    /// Coupling coefficients produced by the routing softmax.
    Softmax,
    /// Routing logits after each agreement update.
    LogitsUpdate,
}

impl GroupId {
    pub const ALL: [GroupId; 4] = [
        GroupId::MacOutputs,
        GroupId::Activations,
        GroupId::Softmax,
        GroupId::LogitsUpdate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupId::MacOutputs => "mac_outputs",
            GroupId::Activations => "activations",
            GroupId::Softmax => "softmax",
            GroupId::LogitsUpdate => "logits_update",
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GroupId::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown group '{s}'")))
    }
}

/// One instrumented tensor in the forward pass.
///
/// `layer` is the site name (e.g. `conv1`, `classcaps_uhat`); the pair
/// `(layer, group)` is unique within a model.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Site {
    pub layer: String,
    pub group: GroupId,
    pub shape: Vec<usize>,
}

impl Site {
    pub fn new(layer: impl Into<String>, group: GroupId, shape: Vec<usize>) -> Self {
        Self {
            layer: layer.into(),
            group,
            shape,
        }
    }
}
