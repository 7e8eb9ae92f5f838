//! Recorded computation trace with reverse-mode gradients.
//!
//! Every operation appends a node holding its output value and the handles
//! of its operands. [`Trace::backward`] walks the nodes once in reverse
//! order and applies each node's vector-Jacobian product.
//!
//! Complex quantities live on the trace as real tensors whose trailing axis
//! has length 2 (interleaved re/im). For a real loss `L` the gradient of a
//! complex value `z` is stored as `dL/dRe z + i dL/dIm z`, so a linear map
//! `A` pulls gradients back through its adjoint `A^H`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::conv::{conv2d_backward, conv2d_forward, gemm, ConvGeom};
use crate::tensor::fft::fft2c_inplace;
use crate::tensor::{numel, ParamId, ParamStore, RealTensor};

/// Handle to a value recorded on a [`Trace`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxLast(Var),
    Bmm {
        a: Var,
        b: Var,
        trans_b: bool,
        dims: [usize; 4],
    },
    Reshape(Var),
    ConcatChannels(Vec<Var>),
    Magnitude(Var),
    ToChannels(Var),
    ToComplex(Var),
    Fft2c {
        x: Var,
        inverse: bool,
    },
    Expand {
        maps: Var,
        image: Var,
    },
    Reduce {
        maps: Var,
        coils: Var,
    },
    MaskedReplace {
        kspace: Var,
        mask: Vec<f64>,
        measured: Var,
    },
    Rss(Var),
    ClampMin(Var, f64),
    DivReal {
        z: Var,
        r: Var,
    },
    NormalizeCoils(Var),
    DivLeading {
        x: Var,
        a: Var,
    },
    L1Mean(Var, Var),
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: RealTensor,
    op: Op,
    requires_grad: bool,
}

/// Below this norm a pixel's coil vector is treated as degenerate by
/// [`Trace::normalize_coils`].
pub const COIL_NORM_FLOOR: f64 = 1e-8;

/// Single-writer record of a forward computation.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    macs: u64,
    fft_images: u64,
}

/// Gradients of a scalar with respect to every node of a trace.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when `v` does not influence the loss
    /// (or was recorded without gradient tracking).
    pub fn get(&self, v: Var) -> Option<RealTensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| RealTensor::new(self.shapes[v.0].clone(), g.clone()).expect("shape"))
    }

    /// Gradients of all parameter leaves, ordered by parameter id. Unreached
    /// parameters are reported as zeros.
    pub fn param_grads(&self) -> Vec<(ParamId, RealTensor)> {
        self.params
            .iter()
            .map(|&(id, v)| {
                let g = self
                    .get(v)
                    .unwrap_or_else(|| RealTensor::zeros(self.shapes[v.0].clone()));
                (id, g)
            })
            .collect()
    }

    /// Adds parameter gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, v) in &self.params {
            if let Some(g) = &self.grads[v.0] {
                let slot = store.get_mut(id).grad.data_mut();
                for (s, x) in slot.iter_mut().zip(g) {
                    *s += x;
                }
            }
        }
    }
}

fn same_shape(op: &str, a: &RealTensor, b: &RealTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: operand shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn complex_trailing(op: &str, t: &RealTensor) -> Result<()> {
    if t.shape().last() != Some(&2) {
        return Err(Error::shape(format!(
            "{op}: expected interleaved complex (trailing axis 2), got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-adds performed by dense network operations so far
    /// (convolutions with padding taps, matrix products, elementwise
    /// products). FFTs are tallied separately.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    /// Number of 2-D images transformed by `fft2c`/`ifft2c` so far.
    pub fn fft_images(&self) -> u64 {
        self.fft_images
    }

    pub fn value(&self, v: Var) -> &RealTensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: RealTensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value from {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a value that gradients do not flow into.
    pub fn constant(&mut self, value: RealTensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records an input whose gradient is wanted.
    pub fn input(&mut self, value: RealTensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Brings a parameter onto the trace. Repeated calls for the same id
    /// return the same handle, so shared weights accumulate one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    /// Same-padded dilated cross-correlation, NCHW input, OIKK weight.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        dilation: usize,
        groups: usize,
    ) -> Result<Var> {
        if dilation < 1 || groups < 1 {
            return Err(Error::arg(format!(
                "conv2d: dilation ({dilation}) and groups ({groups}) must be >= 1"
            )));
        }
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d: expected NCHW input and OIKK weight, got {xs:?} and {ws:?}"
            )));
        }
        let (n, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, c_in_g, k, k2) = (ws[0], ws[1], ws[2], ws[3]);
        if k != k2 || k % 2 == 0 {
            return Err(Error::shape(format!(
                "conv2d: kernel must be square and odd, got {k}x{k2}"
            )));
        }
        if c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::shape(format!(
                "conv2d: channels in={c_in} out={c_out} not divisible by groups={groups}"
            )));
        }
        if c_in / groups != c_in_g {
            return Err(Error::shape(format!(
                "conv2d: weight expects {c_in_g} input channels per group, input gives {}",
                c_in / groups
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(Error::shape(format!(
                    "conv2d: bias shape {:?}, expected [{c_out}]",
                    self.shape(b)
                )));
            }
        }
        let geom = ConvGeom {
            batch: n,
            c_in,
            c_out,
            height: h,
            width: w,
            kernel: k,
            dilation,
            groups,
        };
        let mut out = vec![0.0; n * c_out * h * w];
        conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
            &mut out,
        );
        self.macs += geom.macs();
        let rg = self.rg(&[input, weight]) || bias.is_some_and(|b| self.requires_grad(b));
        let value = RealTensor::new(vec![n, c_out, h, w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    fn zip_map(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        same_shape("elementwise", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = RealTensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    fn map(&mut self, op: Op, x: Var, f: impl Fn(f64) -> f64) -> Var {
        let value = RealTensor::new(
            self.shape(x).to_vec(),
            self.value(x).data().iter().map(|&v| f(v)).collect(),
        )
        .expect("same length");
        let rg = self.requires_grad(x);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.macs += self.value(a).len() as u64;
        self.zip_map(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.macs += self.value(x).len() as u64;
        self.map(Op::Scale(x, factor), x, |v| v * factor)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(Op::Relu(x), x, |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(Op::Sigmoid(x), x, |v| 1.0 / (1.0 + (-v).exp()))
    }

    /// Max-subtracted softmax over the last axis.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let len = *self
            .shape(x)
            .last()
            .ok_or_else(|| Error::arg("softmax: scalar input has no axis"))?;
        if len == 0 {
            return Err(Error::arg("softmax: empty axis"));
        }
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(len) {
            softmax_row(row);
        }
        self.macs += data.len() as u64;
        let value = RealTensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::SoftmaxLast(x), rg))
    }

    /// Batched product `[B, m, k] x [B, k, n] -> [B, m, n]`. With `trans_b`
    /// the right operand is stored `[B, n, k]`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::shape(format!(
                "bmm: expected [B,m,k] and [B,k,n], got {sa:?} and {sb:?}"
            )));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(Error::shape(format!(
                "bmm: inner dimensions {k} and {kb} differ ({sa:?} x {sb:?}, trans_b={trans_b})"
            )));
        }
        let mut out = vec![0.0; batch * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                let b_strides = if trans_b { (1, k) } else { (n, 1) };
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    (k, 1),
                    &bv[i * k * n..(i + 1) * k * n],
                    b_strides,
                    0.0,
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        self.macs += (batch * m * k * n) as u64;
        let rg = self.rg(&[a, b]);
        let value = RealTensor::new(vec![batch, m, n], out)?;
        Ok(self.push(
            value,
            Op::Bmm {
                a,
                b,
                trans_b,
                dims: [batch, m, k, n],
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::arg("concat_channels: no inputs"))?;
        let s0 = self.shape(first).to_vec();
        if s0.len() != 4 {
            return Err(Error::shape(format!(
                "concat_channels: expected NCHW, got {s0:?}"
            )));
        }
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3] {
                return Err(Error::shape(format!(
                    "concat_channels: {s:?} incompatible with {s0:?}"
                )));
            }
            channels += s[1];
        }
        let (n, hw) = (s0[0], s0[2] * s0[3]);
        let mut data = Vec::with_capacity(n * channels * hw);
        for b in 0..n {
            for &p in parts {
                let c = self.shape(p)[1];
                data.extend_from_slice(&self.value(p).data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        let value = RealTensor::new(vec![n, channels, s0[2], s0[3]], data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatChannels(parts.to_vec()), rg))
    }

    /// `|z|` of an interleaved complex tensor.
    pub fn magnitude(&mut self, z: Var) -> Result<Var> {
        complex_trailing("magnitude", self.value(z))?;
        let s = self.shape(z);
        let shape = s[..s.len() - 1].to_vec();
        let data = self
            .value(z)
            .data()
            .chunks_exact(2)
            .map(|c| c[0].hypot(c[1]))
            .collect();
        let value = RealTensor::new(shape, data)?;
        let rg = self.requires_grad(z);
        Ok(self.push(value, Op::Magnitude(z), rg))
    }

    /// Complex `[B, H, W, 2]` to two real channels `[B, 2, H, W]` (re, im).
    pub fn to_channels(&mut self, z: Var) -> Result<Var> {
        let s = self.shape(z).to_vec();
        if s.len() != 4 || s[3] != 2 {
            return Err(Error::shape(format!(
                "to_channels: expected [B,H,W,2], got {s:?}"
            )));
        }
        let (b, h, w) = (s[0], s[1], s[2]);
        let hw = h * w;
        let src = self.value(z).data();
        let mut data = vec![0.0; src.len()];
        for i in 0..b {
            for p in 0..hw {
                data[(2 * i) * hw + p] = src[2 * (i * hw + p)];
                data[(2 * i + 1) * hw + p] = src[2 * (i * hw + p) + 1];
            }
        }
        let value = RealTensor::new(vec![b, 2, h, w], data)?;
        let rg = self.requires_grad(z);
        Ok(self.push(value, Op::ToChannels(z), rg))
    }

    /// Two real channels `[B, 2, H, W]` back to complex `[B, H, W, 2]`.
    pub fn to_complex(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[1] != 2 {
            return Err(Error::shape(format!(
                "to_complex: expected [B,2,H,W], got {s:?}"
            )));
        }
        let (b, h, w) = (s[0], s[2], s[3]);
        let hw = h * w;
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        for i in 0..b {
            for p in 0..hw {
                data[2 * (i * hw + p)] = src[(2 * i) * hw + p];
                data[2 * (i * hw + p) + 1] = src[(2 * i + 1) * hw + p];
            }
        }
        let value = RealTensor::new(vec![b, h, w, 2], data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::ToComplex(x), rg))
    }

    fn fft_common(&mut self, x: Var, inverse: bool) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 3 || s[s.len() - 1] != 2 {
            return Err(Error::shape(format!(
                "fft2c: expected [..., H, W, 2], got {s:?}"
            )));
        }
        let (h, w) = (s[s.len() - 3], s[s.len() - 2]);
        let mut data = self.value(x).data().to_vec();
        fft2c_inplace(&mut data, h, w, inverse);
        self.fft_images += (data.len() / (2 * h * w)) as u64;
        let value = RealTensor::new(s, data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Fft2c { x, inverse }, rg))
    }

    /// Centered orthonormal 2-D DFT over the two axes before the complex axis.
    pub fn fft2c(&mut self, x: Var) -> Result<Var> {
        self.fft_common(x, false)
    }

    pub fn ifft2c(&mut self, k: Var) -> Result<Var> {
        self.fft_common(k, true)
    }

    fn coil_shapes(&self, op: &str, maps: Var, other: Var, other_has_coils: bool) -> Result<(usize, usize)> {
        let ms = self.shape(maps);
        let os = self.shape(other);
        complex_trailing(op, self.value(maps))?;
        complex_trailing(op, self.value(other))?;
        let image_shape = if other_has_coils { &os[1..] } else { os };
        if ms.len() < 2 || &ms[1..] != image_shape || (other_has_coils && os[0] != ms[0]) {
            return Err(Error::shape(format!(
                "{op}: sensitivity maps {ms:?} do not match {os:?}"
            )));
        }
        Ok((ms[0], numel(&ms[1..ms.len() - 1])))
    }

    /// `(S_1 x, ..., S_nc x)` for maps `[nc, ..., 2]` and image `[..., 2]`.
    pub fn expand(&mut self, maps: Var, image: Var) -> Result<Var> {
        let (nc, px) = self.coil_shapes("expand", maps, image, false)?;
        let (s, x) = (self.value(maps).data(), self.value(image).data());
        let mut out = vec![0.0; 2 * nc * px];
        for c in 0..nc {
            for p in 0..px {
                let (sr, si) = (s[2 * (c * px + p)], s[2 * (c * px + p) + 1]);
                let (xr, xi) = (x[2 * p], x[2 * p + 1]);
                out[2 * (c * px + p)] = sr * xr - si * xi;
                out[2 * (c * px + p) + 1] = sr * xi + si * xr;
            }
        }
        self.macs += 4 * (nc * px) as u64;
        let value = RealTensor::new(self.shape(maps).to_vec(), out)?;
        let rg = self.rg(&[maps, image]);
        Ok(self.push(value, Op::Expand { maps, image }, rg))
    }

    /// `sum_i conj(S_i) c_i` for maps and coil images both `[nc, ..., 2]`.
    pub fn reduce(&mut self, maps: Var, coils: Var) -> Result<Var> {
        let (nc, px) = self.coil_shapes("reduce", maps, coils, true)?;
        let (s, x) = (self.value(maps).data(), self.value(coils).data());
        let mut out = vec![0.0; 2 * px];
        for c in 0..nc {
            for p in 0..px {
                let i = 2 * (c * px + p);
                let (sr, si) = (s[i], s[i + 1]);
                let (xr, xi) = (x[i], x[i + 1]);
                out[2 * p] += sr * xr + si * xi;
                out[2 * p + 1] += sr * xi - si * xr;
            }
        }
        self.macs += 4 * (nc * px) as u64;
        let value = RealTensor::new(self.shape(maps)[1..].to_vec(), out)?;
        let rg = self.rg(&[maps, coils]);
        Ok(self.push(value, Op::Reduce { maps, coils }, rg))
    }

    /// `(1 - M) k + M y` with a column mask `M` of length W broadcast over
    /// every other axis of `[..., W, 2]`.
    pub fn masked_replace(&mut self, kspace: Var, mask: &[f64], measured: Var) -> Result<Var> {
        same_shape("masked_replace", self.value(kspace), self.value(measured))?;
        let s = self.shape(kspace);
        if s.len() < 2 || s[s.len() - 1] != 2 || s[s.len() - 2] != mask.len() {
            return Err(Error::shape(format!(
                "masked_replace: mask of width {} does not fit k-space {s:?}",
                mask.len()
            )));
        }
        let w = mask.len();
        let (k, y) = (self.value(kspace).data(), self.value(measured).data());
        let data = k
            .iter()
            .zip(y)
            .enumerate()
            .map(|(i, (&kv, &yv))| {
                let m = mask[(i / 2) % w];
                (1.0 - m) * kv + m * yv
            })
            .collect();
        let value = RealTensor::new(s.to_vec(), data)?;
        let rg = self.rg(&[kspace, measured]);
        Ok(self.push(
            value,
            Op::MaskedReplace {
                kspace,
                mask: mask.to_vec(),
                measured,
            },
            rg,
        ))
    }

    /// Root sum of squares over the leading (coil) axis of `[nc, ..., 2]`.
    pub fn rss(&mut self, coils: Var) -> Result<Var> {
        complex_trailing("rss", self.value(coils))?;
        let s = self.shape(coils).to_vec();
        if s.len() < 2 {
            return Err(Error::shape(format!("rss: expected [nc, ..., 2], got {s:?}")));
        }
        let nc = s[0];
        let px = numel(&s[1..s.len() - 1]);
        let x = self.value(coils).data();
        let mut acc = vec![0.0; px];
        for c in 0..nc {
            for (p, a) in acc.iter_mut().enumerate() {
                let i = 2 * (c * px + p);
                *a += x[i] * x[i] + x[i + 1] * x[i + 1];
            }
        }
        acc.iter_mut().for_each(|a| *a = a.sqrt());
        let value = RealTensor::new(s[1..s.len() - 1].to_vec(), acc)?;
        let rg = self.requires_grad(coils);
        Ok(self.push(value, Op::Rss(coils), rg))
    }

    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        self.map(Op::ClampMin(x, floor), x, |v| v.max(floor))
    }

    /// Complex `z [..., 2]` divided by a real `r` whose shape matches the
    /// trailing pixel axes of `z`; `r` repeats over the leading axes.
    pub fn div_real(&mut self, z: Var, r: Var) -> Result<Var> {
        complex_trailing("div_real", self.value(z))?;
        let (zs, rs) = (self.shape(z).to_vec(), self.shape(r).to_vec());
        let inner = &zs[..zs.len() - 1];
        if rs.len() > inner.len() || inner[inner.len() - rs.len()..] != rs[..] {
            return Err(Error::shape(format!(
                "div_real: divisor {rs:?} does not broadcast over {zs:?}"
            )));
        }
        let px = numel(&rs);
        let (zv, rv) = (self.value(z).data(), self.value(r).data());
        let data = zv
            .iter()
            .enumerate()
            .map(|(i, &v)| v / rv[(i / 2) % px])
            .collect();
        let value = RealTensor::new(zs, data)?;
        let rg = self.rg(&[z, r]);
        Ok(self.push(value, Op::DivReal { z, r }, rg))
    }

    /// Rescales coil maps `[nc, ..., 2]` so that `sum_i |S_i|^2 = 1` at every
    /// pixel. Pixels whose coil vector has norm below [`COIL_NORM_FLOOR`]
    /// are set to the uniform map `1/sqrt(nc)` and pass no gradient.
    pub fn normalize_coils(&mut self, maps: Var) -> Result<Var> {
        complex_trailing("normalize_coils", self.value(maps))?;
        let s = self.shape(maps).to_vec();
        if s.len() < 2 || s[0] == 0 {
            return Err(Error::shape(format!(
                "normalize_coils: expected [nc, ..., 2], got {s:?}"
            )));
        }
        let nc = s[0];
        let px = numel(&s[1..s.len() - 1]);
        let mut data = self.value(maps).data().to_vec();
        let norms = coil_norms(&data, nc, px);
        let uniform = 1.0 / (nc as f64).sqrt();
        for c in 0..nc {
            for p in 0..px {
                let i = 2 * (c * px + p);
                if norms[p] < COIL_NORM_FLOOR {
                    data[i] = uniform;
                    data[i + 1] = 0.0;
                } else {
                    data[i] /= norms[p];
                    data[i + 1] /= norms[p];
                }
            }
        }
        let value = RealTensor::new(s, data)?;
        let rg = self.requires_grad(maps);
        Ok(self.push(value, Op::NormalizeCoils(maps), rg))
    }

    /// `x [B, ...]` divided slice-wise by `a [B]`.
    pub fn div_leading(&mut self, x: Var, a: Var) -> Result<Var> {
        let (xs, as_) = (self.shape(x).to_vec(), self.shape(a).to_vec());
        if xs.is_empty() || as_ != [xs[0]] {
            return Err(Error::shape(format!(
                "div_leading: divisor {as_:?} does not match leading axis of {xs:?}"
            )));
        }
        let inner = numel(&xs[1..]);
        let (xv, av) = (self.value(x).data(), self.value(a).data());
        let data = xv
            .iter()
            .enumerate()
            .map(|(i, &v)| v / av[i / inner])
            .collect();
        self.macs += xv.len() as u64;
        let value = RealTensor::new(xs, data)?;
        let rg = self.rg(&[x, a]);
        Ok(self.push(value, Op::DivLeading { x, a }, rg))
    }

    /// `mean |a - b|` as a one-element tensor.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("l1_mean", self.value(a), self.value(b))?;
        let n = self.value(a).len().max(1) as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        let rg = self.rg(&[a, b]);
        Ok(self.push(RealTensor::scalar(s / n), Op::L1Mean(a, b), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.requires_grad(x);
        self.push(RealTensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::arg(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.node_vjp(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&p, &v)| (p, v)).collect();
        params.sort();
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params,
        })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn node_vjp(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let iv = self.value(*input).data();
                let wv = self.value(*weight).data();
                let mut di = self.nodes[input.0]
                    .requires_grad
                    .then(|| vec![0.0; iv.len()]);
                let mut dw = self.nodes[weight.0]
                    .requires_grad
                    .then(|| vec![0.0; wv.len()]);
                let mut db = bias
                    .filter(|b| self.nodes[b.0].requires_grad)
                    .map(|b| vec![0.0; self.value(b).len()]);
                conv2d_backward(
                    iv,
                    wv,
                    g,
                    geom,
                    di.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (v, d) in [(Some(*input), di), (Some(*weight), dw), (*bias, db)] {
                    if let (Some(v), Some(d)) = (v, d) {
                        add_into(self.slot(grads, v), &d);
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(self.slot(grads, *a), g);
                add_into(self.slot(grads, *b), g);
            }
            Op::Sub(a, b) => {
                add_into(self.slot(grads, *a), g);
                if let Some(s) = self.slot(grads, *b) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s -= g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        s[i] += g[i] * bv[i];
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for i in 0..g.len() {
                        s[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(x, f) => {
                if let Some(s) = self.slot(grads, *x) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += g * f);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                if let Some(s) = self.slot(grads, *x) {
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(s) = self.slot(grads, *x) {
                    for i in 0..g.len() {
                        s[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                }
            }
            Op::SoftmaxLast(x) => {
                let len = *node.value.shape().last().expect("softmax axis");
                if let Some(s) = self.slot(grads, *x) {
                    for ((srow, grow), yrow) in s
                        .chunks_exact_mut(len)
                        .zip(g.chunks_exact(len))
                        .zip(out.chunks_exact(len))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for j in 0..len {
                            srow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::Bmm {
                a,
                b,
                trans_b,
                dims: [batch, m, k, n],
            } => {
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(s) = self.slot(grads, *a) {
                    // dA = G B^T
                    for i in 0..batch {
                        let b_strides = if *trans_b { (k, 1) } else { (1, n) };
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            (n, 1),
                            &bv[i * k * n..(i + 1) * k * n],
                            b_strides,
                            1.0,
                            &mut s[i * m * k..(i + 1) * m * k],
                        );
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for i in 0..batch {
                        let ga = &g[i * m * n..(i + 1) * m * n];
                        let ai = &av[i * m * k..(i + 1) * m * k];
                        let dst = &mut s[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            // B stored [n, k]: dB = G^T A
                            gemm(n, m, k, ga, (1, n), ai, (k, 1), 1.0, dst);
                        } else {
                            // dB = A^T G
                            gemm(k, m, n, ai, (1, k), ga, (n, 1), 1.0, dst);
                        }
                    }
                }
            }
            Op::Reshape(x) => add_into(self.slot(grads, *x), g),
            Op::ToChannels(x) => {
                let s = self.shape(*x).to_vec();
                let (b, hw) = (s[0], s[1] * s[2]);
                if let Some(d) = self.slot(grads, *x) {
                    for i in 0..b {
                        for p in 0..hw {
                            d[2 * (i * hw + p)] += g[(2 * i) * hw + p];
                            d[2 * (i * hw + p) + 1] += g[(2 * i + 1) * hw + p];
                        }
                    }
                }
            }
            Op::ToComplex(x) => {
                let s = self.shape(*x).to_vec();
                let (b, hw) = (s[0], s[2] * s[3]);
                if let Some(d) = self.slot(grads, *x) {
                    for i in 0..b {
                        for p in 0..hw {
                            d[(2 * i) * hw + p] += g[2 * (i * hw + p)];
                            d[(2 * i + 1) * hw + p] += g[2 * (i * hw + p) + 1];
                        }
                    }
                }
            }
            Op::ConcatChannels(parts) => {
                let s = node.value.shape();
                let (n, channels, hw) = (s[0], s[1], s[2] * s[3]);
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if let Some(d) = self.slot(grads, p) {
                        for b in 0..n {
                            let src = &g[(b * channels + offset) * hw..(b * channels + offset + c) * hw];
                            let dst = &mut d[b * c * hw..(b + 1) * c * hw];
                            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        }
                    }
                    offset += c;
                }
            }
            Op::Magnitude(z) => {
                let zv = self.value(*z).data();
                if let Some(d) = self.slot(grads, *z) {
                    for (p, (&m, &gp)) in out.iter().zip(g).enumerate() {
                        if m > 0.0 {
                            d[2 * p] += gp * zv[2 * p] / m;
                            d[2 * p + 1] += gp * zv[2 * p + 1] / m;
                        }
                    }
                }
            }
            Op::Fft2c { x, inverse } => {
                if let Some(d) = self.slot(grads, *x) {
                    let s = node.value.shape();
                    let (h, w) = (s[s.len() - 3], s[s.len() - 2]);
                    let mut back = g.to_vec();
                    fft2c_inplace(&mut back, h, w, !inverse);
                    add_into(Some(d), &back);
                }
            }
            Op::Expand { maps, image } => {
                let nc = self.shape(*maps)[0];
                let px = self.value(*image).len() / 2;
                let (s, x) = (self.value(*maps).data(), self.value(*image).data());
                if let Some(d) = self.slot(grads, *image) {
                    // dx = sum_i conj(S_i) g_i
                    for c in 0..nc {
                        for p in 0..px {
                            let i = 2 * (c * px + p);
                            d[2 * p] += s[i] * g[i] + s[i + 1] * g[i + 1];
                            d[2 * p + 1] += s[i] * g[i + 1] - s[i + 1] * g[i];
                        }
                    }
                }
                if let Some(d) = self.slot(grads, *maps) {
                    // dS_i = g_i conj(x)
                    for c in 0..nc {
                        for p in 0..px {
                            let i = 2 * (c * px + p);
                            let (xr, xi) = (x[2 * p], x[2 * p + 1]);
                            d[i] += g[i] * xr + g[i + 1] * xi;
                            d[i + 1] += g[i + 1] * xr - g[i] * xi;
                        }
                    }
                }
            }
            Op::Reduce { maps, coils } => {
                let nc = self.shape(*maps)[0];
                let px = g.len() / 2;
                let (s, x) = (self.value(*maps).data(), self.value(*coils).data());
                if let Some(d) = self.slot(grads, *coils) {
                    // dc_i = S_i g
                    for c in 0..nc {
                        for p in 0..px {
                            let i = 2 * (c * px + p);
                            let (gr, gi) = (g[2 * p], g[2 * p + 1]);
                            d[i] += s[i] * gr - s[i + 1] * gi;
                            d[i + 1] += s[i] * gi + s[i + 1] * gr;
                        }
                    }
                }
                if let Some(d) = self.slot(grads, *maps) {
                    // dS_i = conj(g) c_i
                    for c in 0..nc {
                        for p in 0..px {
                            let i = 2 * (c * px + p);
                            let (gr, gi) = (g[2 * p], g[2 * p + 1]);
                            d[i] += gr * x[i] + gi * x[i + 1];
                            d[i + 1] += gr * x[i + 1] - gi * x[i];
                        }
                    }
                }
            }
            Op::MaskedReplace {
                kspace,
                mask,
                measured,
            } => {
                let w = mask.len();
                if let Some(d) = self.slot(grads, *kspace) {
                    for (i, (d, &gv)) in d.iter_mut().zip(g).enumerate() {
                        *d += (1.0 - mask[(i / 2) % w]) * gv;
                    }
                }
                if let Some(d) = self.slot(grads, *measured) {
                    for (i, (d, &gv)) in d.iter_mut().zip(g).enumerate() {
                        *d += mask[(i / 2) % w] * gv;
                    }
                }
            }
            Op::Rss(coils) => {
                let px = out.len();
                let x = self.value(*coils).data();
                if let Some(d) = self.slot(grads, *coils) {
                    for (i, dv) in d.iter_mut().enumerate() {
                        let p = (i / 2) % px;
                        if out[p] > 0.0 {
                            *dv += g[p] * x[i] / out[p];
                        }
                    }
                }
            }
            Op::ClampMin(x, floor) => {
                let xv = self.value(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    for i in 0..g.len() {
                        if xv[i] > *floor {
                            d[i] += g[i];
                        }
                    }
                }
            }
            Op::DivReal { z, r } => {
                let (zv, rv) = (self.value(*z).data(), self.value(*r).data());
                let px = rv.len();
                if let Some(d) = self.slot(grads, *z) {
                    for i in 0..g.len() {
                        d[i] += g[i] / rv[(i / 2) % px];
                    }
                }
                if let Some(d) = self.slot(grads, *r) {
                    for i in 0..g.len() {
                        let rp = rv[(i / 2) % px];
                        d[(i / 2) % px] -= g[i] * zv[i] / (rp * rp);
                    }
                }
            }
            Op::NormalizeCoils(maps) => {
                let s = self.shape(*maps);
                let nc = s[0];
                let px = numel(&s[1..s.len() - 1]);
                let norms = coil_norms(self.value(*maps).data(), nc, px);
                if let Some(d) = self.slot(grads, *maps) {
                    // dS = (G - S' Re<S', G>) / n
                    let mut proj = vec![0.0; px];
                    for c in 0..nc {
                        for p in 0..px {
                            let i = 2 * (c * px + p);
                            proj[p] += out[i] * g[i] + out[i + 1] * g[i + 1];
                        }
                    }
                    for c in 0..nc {
                        for p in 0..px {
                            if norms[p] < COIL_NORM_FLOOR {
                                continue;
                            }
                            let i = 2 * (c * px + p);
                            d[i] += (g[i] - out[i] * proj[p]) / norms[p];
                            d[i + 1] += (g[i + 1] - out[i + 1] * proj[p]) / norms[p];
                        }
                    }
                }
            }
            Op::DivLeading { x, a } => {
                let (xv, av) = (self.value(*x).data(), self.value(*a).data());
                let inner = xv.len() / av.len();
                if let Some(d) = self.slot(grads, *x) {
                    for i in 0..g.len() {
                        d[i] += g[i] / av[i / inner];
                    }
                }
                if let Some(d) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        let ab = av[i / inner];
                        d[i / inner] -= g[i] * xv[i] / (ab * ab);
                    }
                }
            }
            Op::L1Mean(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let scale = g[0] / av.len().max(1) as f64;
                if let Some(d) = self.slot(grads, *a) {
                    for i in 0..av.len() {
                        d[i] += scale * sign(av[i] - bv[i]);
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for i in 0..av.len() {
                        d[i] -= scale * sign(av[i] - bv[i]);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
        }
    }
}

fn add_into(slot: Option<&mut Vec<f64>>, g: &[f64]) {
    if let Some(s) = slot {
        s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn coil_norms(data: &[f64], nc: usize, px: usize) -> Vec<f64> {
    let mut norms = vec![0.0; px];
    for c in 0..nc {
        for (p, n) in norms.iter_mut().enumerate() {
            let i = 2 * (c * px + p);
            *n += data[i] * data[i] + data[i + 1] * data[i + 1];
        }
    }
    norms.iter_mut().for_each(|n| *n = n.sqrt());
    norms
}

pub(crate) fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
