use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::layers::{Conv2d, ConvSpec};
use crate::tensor::{ParamStore, Trace, Var};

use super::{channels_to_image, image_to_channels, DcContext};

/// Dilated convolution block: 3×3 convs at dilations 1, 2, 4 with relu
/// between them and a residual connection around the stack.
#[derive(Clone, Debug)]
pub struct Dcb {
    convs: Vec<Conv2d>,
}

impl Dcb {
    pub const DILATIONS: [usize; 3] = [1, 2, 4];

    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let last = Self::DILATIONS.len() - 1;
        let convs = Self::DILATIONS
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let spec = ConvSpec::new(channels, channels, 3).dilation(d);
                let spec = if i == last { spec.zero() } else { spec };
                Conv2d::new(store, &format!("{name}.conv{i}"), spec, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { convs })
    }

    pub fn forward(&self, t: &mut Trace, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(t, store, h)?;
            if i + 1 < self.convs.len() {
                h = t.relu(h);
            }
        }
        t.add(x, h)
    }
}

/// Recursive dilated convolutional block: a lift to `channels` features,
/// one weight-shared [`Dcb`] applied `recursions` times with every
/// intermediate summed into a skip, a projection back to two channels and
/// a residual add.
#[derive(Clone, Debug)]
pub struct RdcnBlock {
    lift: Conv2d,
    dcb: Dcb,
    project: Conv2d,
    recursions: usize,
}

impl RdcnBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        recursions: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if recursions == 0 || channels == 0 {
            return Err(Error::arg("recursions and channels must be positive"));
        }
        Ok(Self {
            lift: Conv2d::new(store, &format!("{name}.lift"), ConvSpec::new(2, channels, 3), rng)?,
            dcb: Dcb::new(store, &format!("{name}.dcb"), channels, rng)?,
            project: Conv2d::new(store, &format!("{name}.project"), ConvSpec::new(channels, 2, 3).zero(), rng)?,
            recursions,
        })
    }

    pub fn recursions(&self) -> usize {
        self.recursions
    }

    pub fn project(&self) -> &Conv2d {
        &self.project
    }

    /// Residual refinement of a two-channel batch `[B, 2, H, W]`, without
    /// data consistency.
    pub fn refine(&self, t: &mut Trace, store: &ParamStore, x: Var) -> Result<Var> {
        let h0 = self.lift.forward(t, store, x)?;
        let mut h = h0;
        let mut skip = h0;
        for _ in 0..self.recursions {
            h = self.dcb.forward(t, store, h)?;
            skip = t.add(skip, h)?;
        }
        let r = self.project.forward(t, store, skip)?;
        t.add(x, r)
    }

    /// Refines the image `[H, W, 2]` and projects it onto the measurements.
    pub fn forward(&self, t: &mut Trace, store: &ParamStore, x: Var, dc: &DcContext) -> Result<Var> {
        let c = image_to_channels(t, x)?;
        let r = self.refine(t, store, c)?;
        let img = channels_to_image(t, r)?;
        dc.apply(t, img)
    }
}
