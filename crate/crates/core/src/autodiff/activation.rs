use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::GlenError;

/// Negative slope of the LeakyReLU used in attention scoring.
pub const LEAKY_RELU_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    LeakyRelu,
    Elu,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_RELU_SLOPE),
            Activation::Elu => tape.elu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

impl FromStr for Activation {
    type Err = GlenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" | "none" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "leaky_relu" => Ok(Activation::LeakyRelu),
            "elu" => Ok(Activation::Elu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(GlenError::Config(format!("unknown activation `{other}`"))),
        }
    }
}
