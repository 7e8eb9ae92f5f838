//! Ground-truth edge maps and the edge prediction network.
//!
//! Edge maps are `[H, W]` real tensors with values in `[0, 1]`.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::layers::{Conv2d, ConvSpec};
use crate::tensor::{ParamStore, RealTensor, Trace, Var};

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

fn image_dims(img: &RealTensor) -> Result<(usize, usize)> {
    match img.shape() {
        &[h, w] => Ok((h, w)),
        s => Err(Error::shape(format!("edge detector expects [H, W], got {s:?}"))),
    }
}

/// Sobel responses `(gx, gy)` with the border replicated outward.
pub fn sobel_gradients(img: &RealTensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (h, w) = image_dims(img)?;
    let d = img.data();
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut sx, mut sy) = (0.0, 0.0);
            for (dy, (rx, ry)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                let yy = (y + dy).saturating_sub(1).min(h - 1);
                for dx in 0..3 {
                    let xx = (x + dx).saturating_sub(1).min(w - 1);
                    let v = d[yy * w + xx];
                    sx += rx[dx] * v;
                    sy += ry[dx] * v;
                }
            }
            gx[y * w + x] = sx;
            gy[y * w + x] = sy;
        }
    }
    Ok((gx, gy))
}

/// Unnormalised Sobel gradient magnitude.
pub fn sobel_magnitude(img: &RealTensor) -> Result<RealTensor> {
    let (gx, gy) = sobel_gradients(img)?;
    let mag = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    RealTensor::new(img.shape().to_vec(), mag)
}

/// Peak gradient below this fraction of the image's largest value is
/// rounding residue of a flat image.
const FLAT_TOL: f64 = 1e-12;

fn flat_threshold(img: &RealTensor) -> f64 {
    FLAT_TOL * img.data().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn max_normalize(mut t: RealTensor, flat: f64) -> RealTensor {
    let m = t.max();
    if m > flat {
        t.data_mut().iter_mut().for_each(|v| *v /= m);
    } else {
        t.data_mut().fill(0.0);
    }
    t
}

/// Sobel gradient magnitude divided by its maximum; an image with no
/// gradient gives the all-zero map.
pub fn sobel_edges(img: &RealTensor) -> Result<RealTensor> {
    Ok(max_normalize(sobel_magnitude(img)?, flat_threshold(img)))
}

/// Binary Canny edges: Sobel gradient, non-maximum suppression along the
/// quantised gradient direction, then hysteresis between `low` and `high`
/// (fractions of the maximum gradient magnitude).
pub fn canny_edges(img: &RealTensor, low: f64, high: f64) -> Result<RealTensor> {
    if !(low < high) {
        return Err(Error::arg(format!(
            "canny thresholds need low < high, got {low} and {high}"
        )));
    }
    let (h, w) = image_dims(img)?;
    let (gx, gy) = sobel_gradients(img)?;
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let peak = mag.iter().copied().fold(0.0, f64::max);
    let mut out = RealTensor::zeros(vec![h, w]);
    if peak <= flat_threshold(img) {
        return Ok(out);
    }
    let at = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let m = mag[y * w + x];
            if m <= 0.0 {
                continue;
            }
            let angle = gy[y * w + x].atan2(gx[y * w + x]).to_degrees().rem_euclid(180.0);
            let (dy, dx) = match angle {
                a if !(22.5..157.5).contains(&a) => (0, 1),
                a if a < 67.5 => (1, 1),
                a if a < 112.5 => (1, 0),
                _ => (1, -1),
            };
            let (yi, xi) = (y as isize, x as isize);
            // strict on one side, non-strict on the other: plateaus two
            // pixels wide keep exactly one pixel
            if m >= at(yi + dy, xi + dx) && m > at(yi - dy, xi - dx) {
                thin[y * w + x] = m / peak;
            }
        }
    }
    let data = out.data_mut();
    let mut queue = VecDeque::new();
    for (i, &v) in thin.iter().enumerate() {
        if v >= high {
            data[i] = 1.0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (yy, xx) = (y + dy, x + dx);
                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    continue;
                }
                let j = yy as usize * w + xx as usize;
                if data[j] == 0.0 && thin[j] >= low {
                    data[j] = 1.0;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(out)
}

/// Multi-scale residual block with dilation-1 and dilation-2 branches.
#[derive(Clone, Debug)]
pub struct Msrb {
    p1: Conv2d,
    s1: Conv2d,
    p2: Conv2d,
    s2: Conv2d,
    fuse: Conv2d,
}

impl Msrb {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let c = channels;
        Ok(Self {
            p1: Conv2d::new(store, &format!("{name}.p1"), ConvSpec::new(c, c, 3), rng)?,
            s1: Conv2d::new(store, &format!("{name}.s1"), ConvSpec::new(c, c, 3).dilation(2), rng)?,
            p2: Conv2d::new(store, &format!("{name}.p2"), ConvSpec::new(2 * c, c, 3), rng)?,
            s2: Conv2d::new(store, &format!("{name}.s2"), ConvSpec::new(2 * c, c, 3).dilation(2), rng)?,
            fuse: Conv2d::new(store, &format!("{name}.fuse"), ConvSpec::new(2 * c, c, 1).zero(), rng)?,
        })
    }

    /// `x [N, C, H, W]` to the same shape.
    pub fn forward(&self, t: &mut Trace, store: &ParamStore, x: Var) -> Result<Var> {
        let p1 = self.p1.forward(t, store, x)?;
        let p1 = t.relu(p1);
        let s1 = self.s1.forward(t, store, x)?;
        let s1 = t.relu(s1);
        let ps = t.concat_channels(&[p1, s1])?;
        let sp = t.concat_channels(&[s1, p1])?;
        let p2 = self.p2.forward(t, store, ps)?;
        let p2 = t.relu(p2);
        let s2 = self.s2.forward(t, store, sp)?;
        let s2 = t.relu(s2);
        let cat = t.concat_channels(&[p2, s2])?;
        let r = self.fuse.forward(t, store, cat)?;
        t.add(x, r)
    }
}

/// Edge prediction network: head, cascaded MSRBs, 1×1 fusion of every
/// block output, tail and sigmoid.
#[derive(Clone, Debug)]
pub struct EpnNet {
    head: Conv2d,
    blocks: Vec<Msrb>,
    fuse: Conv2d,
    tail: Conv2d,
}

impl EpnNet {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        msrb_count: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if msrb_count == 0 {
            return Err(Error::arg("edge network needs at least one MSRB"));
        }
        let c = channels;
        let head = Conv2d::new(store, &format!("{name}.head"), ConvSpec::new(2, c, 3), rng)?;
        let blocks = (0..msrb_count)
            .map(|i| Msrb::new(store, &format!("{name}.msrb{i}"), c, rng))
            .collect::<Result<_>>()?;
        let fuse = Conv2d::new(store, &format!("{name}.fuse"), ConvSpec::new(msrb_count * c, c, 1), rng)?;
        let tail = Conv2d::new(store, &format!("{name}.tail"), ConvSpec::new(c, 1, 3), rng)?;
        Ok(Self {
            head,
            blocks,
            fuse,
            tail,
        })
    }

    pub fn tail(&self) -> &Conv2d {
        &self.tail
    }

    /// Two-channel image `[N, 2, H, W]` to edge probabilities `[N, 1, H, W]`.
    pub fn forward(&self, t: &mut Trace, store: &ParamStore, x: Var) -> Result<Var> {
        if t.shape(x).len() != 4 || t.shape(x)[1] != 2 {
            return Err(Error::shape(format!(
                "edge network expects [N, 2, H, W], got {:?}",
                t.shape(x)
            )));
        }
        let mut h = self.head.forward(t, store, x)?;
        let mut outs = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            h = b.forward(t, store, h)?;
            outs.push(h);
        }
        let cat = t.concat_channels(&outs)?;
        let fused = self.fuse.forward(t, store, cat)?;
        let logits = self.tail.forward(t, store, fused)?;
        Ok(t.sigmoid(logits))
    }
}
