use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::par::Execution;
use crate::tensor::Tensor2;

/// Which latent space an operation works in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Original,
    Proxy,
}

impl Space {
    pub fn as_str(self) -> &'static str {
        match self {
            Space::Original => "orig",
            Space::Proxy => "proxy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "orig" | "original" => Ok(Space::Original),
            "proxy" => Ok(Space::Proxy),
            other => Err(Error::Config(format!("unknown space '{other}' (expected orig or proxy)"))),
        }
    }
}

/// A space together with whatever is needed to reach it from original codes.
#[derive(Debug, Clone, Copy)]
pub enum LatentSpace<'a> {
    Original,
    Proxy(&'a FlowModel),
}

impl LatentSpace<'_> {
    pub fn tag(&self) -> Space {
        match self {
            LatentSpace::Original => Space::Original,
            LatentSpace::Proxy(_) => Space::Proxy,
        }
    }

    /// Maps original-space codes into this space.
    pub fn embed(&self, codes: &Tensor2, exec: Execution) -> Result<Tensor2> {
        match self {
            LatentSpace::Original => Ok(codes.clone()),
            LatentSpace::Proxy(model) => model.forward_batch(codes, exec),
        }
    }

    /// Maps codes of this space back to the original space.
    pub fn restore(&self, codes: &Tensor2, exec: Execution) -> Result<Tensor2> {
        match self {
            LatentSpace::Original => Ok(codes.clone()),
            LatentSpace::Proxy(model) => model.inverse_batch(codes, exec),
        }
    }
}
