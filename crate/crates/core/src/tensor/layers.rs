use rand::Rng;

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, RealTensor, Trace, Var};

/// Weight initialisation for a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Centered uniform in `±1/sqrt(fan_in)`.
    FanIn,
    /// All zeros; used for final projections that feed a residual add.
    Zero,
}

/// A learnable same-padded convolution with bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub dilation: usize,
    pub groups: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub groups: usize,
    pub init: Init,
}

impl ConvSpec {
    pub fn new(c_in: usize, c_out: usize, kernel: usize) -> Self {
        Self {
            c_in,
            c_out,
            kernel,
            dilation: 1,
            groups: 1,
            init: Init::FanIn,
        }
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn depthwise(mut self) -> Self {
        self.groups = self.c_in;
        self
    }

    pub fn zero(mut self) -> Self {
        self.init = Init::Zero;
        self
    }
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, name: &str, spec: ConvSpec, rng: &mut impl Rng) -> Result<Self> {
        let cig = spec.c_in / spec.groups.max(1);
        let shape = vec![spec.c_out, cig, spec.kernel, spec.kernel];
        let weight = match spec.init {
            Init::FanIn => {
                let bound = 1.0 / ((cig * spec.kernel * spec.kernel) as f64).sqrt();
                RealTensor::uniform(shape, -bound, bound, rng)
            }
            Init::Zero => RealTensor::zeros(shape),
        };
        Ok(Self {
            weight: store.add(format!("{name}.weight"), weight)?,
            bias: store.add(format!("{name}.bias"), RealTensor::zeros(vec![spec.c_out]))?,
            dilation: spec.dilation,
            groups: spec.groups,
        })
    }

    pub fn forward(&self, t: &mut Trace, store: &ParamStore, x: Var) -> Result<Var> {
        let w = t.param(store, self.weight);
        let b = t.param(store, self.bias);
        t.conv2d(x, w, Some(b), self.dilation, self.groups)
    }
}
