use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::layers::{Conv2d, ConvSpec};
use crate::tensor::{ParamId, ParamStore, RealTensor, Trace, Var};

use super::{channels_to_image, image_to_channels, DcContext};

/// Edge attention module. Image queries and values come from a 1×1 conv
/// followed by a 3×3 depthwise conv; edge keys from a 3×3 conv of the edge
/// map. Each head pairs its key and query channels into a
/// `C_h × C_h` attention matrix, so the cost is linear in the pixel count.
#[derive(Clone, Debug)]
pub struct EamBlock {
    q_point: Conv2d,
    q_depth: Conv2d,
    v_point: Conv2d,
    v_depth: Conv2d,
    key: Conv2d,
    proj: Conv2d,
    alpha: ParamId,
    channels: usize,
    heads: usize,
    literal_alpha: bool,
}

/// Result of one attention pass.
#[derive(Clone, Copy, Debug)]
pub struct EamOutput {
    /// Data-consistent image `[H, W, 2]`.
    pub image: Var,
    /// Attention matrices `[heads, C_h, C_h]`.
    pub attention: Var,
}

impl EamBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        heads: usize,
        literal_alpha: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::arg(format!(
                "{channels} channels cannot be split into {heads} heads"
            )));
        }
        let c = channels;
        let conv = |store: &mut ParamStore, part: &str, spec: ConvSpec, rng: &mut _| {
            Conv2d::new(store, &format!("{name}.{part}"), spec, rng)
        };
        Ok(Self {
            q_point: conv(store, "q_point", ConvSpec::new(2, c, 1), rng)?,
            q_depth: conv(store, "q_depth", ConvSpec::new(c, c, 3).depthwise(), rng)?,
            v_point: conv(store, "v_point", ConvSpec::new(2, c, 1), rng)?,
            v_depth: conv(store, "v_depth", ConvSpec::new(c, c, 3).depthwise(), rng)?,
            key: conv(store, "key", ConvSpec::new(1, c, 3), rng)?,
            proj: conv(store, "proj", ConvSpec::new(c, 2, 1).zero(), rng)?,
            alpha: store.add(format!("{name}.alpha"), RealTensor::filled(vec![heads], 1.0))?,
            channels,
            heads,
            literal_alpha,
        })
    }

    pub fn alpha(&self) -> ParamId {
        self.alpha
    }

    pub fn proj(&self) -> &Conv2d {
        &self.proj
    }

    /// `x [H, W, 2]` with edge map `[1, 1, H, W]`.
    pub fn forward(
        &self,
        t: &mut Trace,
        store: &ParamStore,
        x: Var,
        edge: Var,
        dc: &DcContext,
    ) -> Result<EamOutput> {
        let xs = t.shape(x).to_vec();
        let (h, w) = (xs[0], xs[1]);
        if t.shape(edge) != [1, 1, h, w] {
            return Err(Error::shape(format!(
                "edge map {:?} does not match image {xs:?}",
                t.shape(edge)
            )));
        }
        let (c, heads) = (self.channels, self.heads);
        let ch = c / heads;
        let xc = image_to_channels(t, x)?;
        let q = self.q_point.forward(t, store, xc)?;
        let q = self.q_depth.forward(t, store, q)?;
        let v = self.v_point.forward(t, store, xc)?;
        let v = self.v_depth.forward(t, store, v)?;
        let k = self.key.forward(t, store, edge)?;
        let split = [heads, ch, h * w];
        let q = t.reshape(q, &split)?;
        let k = t.reshape(k, &split)?;
        let v = t.reshape(v, &split)?;
        let alpha = t.param(store, self.alpha);
        let logits = t.bmm(k, q, true)?;
        let (attention, mixed) = if self.literal_alpha {
            let a = t.softmax_last(logits)?;
            let av = t.bmm(a, v, false)?;
            (a, t.div_leading(av, alpha)?)
        } else {
            let scaled = t.div_leading(logits, alpha)?;
            let a = t.softmax_last(scaled)?;
            (a, t.bmm(a, v, false)?)
        };
        let mixed = t.reshape(mixed, &[1, c, h, w])?;
        let r = self.proj.forward(t, store, mixed)?;
        let out = t.add(xc, r)?;
        let img = channels_to_image(t, out)?;
        Ok(EamOutput {
            image: dc.apply(t, img)?,
            attention,
        })
    }

    /// Multiply-adds of [`EamBlock::forward`] (including its data
    /// consistency over `coils` coils, excluding FFTs) at `pixels = H·W`.
    pub fn macs(channels: usize, heads: usize, coils: usize, pixels: usize) -> u64 {
        let (c, hw) = (channels as u64, pixels as u64);
        let ch = c / heads as u64;
        let convs = (2 * c + 9 * c) * 2 + 9 * c + 2 * c;
        let attention = 2 * c * ch;
        let dc = 8 * coils as u64;
        (convs + attention + dc) * hw + 2 * c * ch
    }
}
