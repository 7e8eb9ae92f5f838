//! Same-padded dilated 2-D cross-correlation on NCHW buffers.
//!
//! Each (sample, group) pair is lowered to a single GEMM over an im2col
//! buffer; the backward pass reuses the same lowering.

/// Geometry of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn c_in_group(&self) -> usize {
        self.c_in / self.groups
    }

    pub fn c_out_group(&self) -> usize {
        self.c_out / self.groups
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Rows of the im2col matrix for one group.
    pub fn patch_len(&self) -> usize {
        self.c_in_group() * self.kernel * self.kernel
    }

    /// Nominal multiply-add count, padding taps included.
    pub fn macs(&self) -> u64 {
        (self.batch * self.c_out * self.patch_len() * self.pixels()) as u64
    }

    fn half(&self) -> isize {
        (self.dilation * (self.kernel - 1) / 2) as isize
    }
}

/// `c = a * b + beta * c` for row-major `c` of shape `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    debug_assert!(k == 0 || a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    debug_assert!(k == 0 || b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    // SAFETY: the debug assertions above spell out the extents dgemm reads and
    // writes; every caller derives strides from the same geometry as the
    // slice lengths.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Fills `cols` (patch_len x pixels) from the channels of one group.
fn im2col(input: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let hw = g.pixels();
    let half = g.half();
    let d = g.dilation as isize;
    for ci in 0..g.c_in_group() {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize * d - half;
            for kx in 0..k {
                let dx = kx as isize * d - half;
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (x0, x1) = valid_span(w, dx);
                for y in 0..h {
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out_row[..x0].fill(0.0);
                    out_row[x1..].fill(0.0);
                    let s0 = (x0 as isize + dx) as usize;
                    out_row[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Scatter-adds `cols` back onto the input gradient of one group.
fn col2im(cols: &[f64], g: &ConvGeom, dinput: &mut [f64]) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let hw = g.pixels();
    let half = g.half();
    let d = g.dilation as isize;
    for ci in 0..g.c_in_group() {
        let plane = &mut dinput[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize * d - half;
            for kx in 0..k {
                let dx = kx as isize * d - half;
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let (x0, x1) = valid_span(w, dx);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (x0 as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (x1 - x0)];
                    for (o, v) in dst.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *o += v;
                    }
                }
            }
        }
    }
}

/// Output columns `[x0, x1)` whose tap `x + dx` lands inside `[0, w)`.
fn valid_span(w: usize, dx: isize) -> (usize, usize) {
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).clamp(0, w as isize) as usize;
    (x0.min(w), x1)
}

pub(crate) fn conv2d_forward(
    input: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    g: &ConvGeom,
    out: &mut [f64],
) {
    let hw = g.pixels();
    let (cig, cog, patch) = (g.c_in_group(), g.c_out_group(), g.patch_len());
    let mut cols = vec![0.0; patch * hw];
    for n in 0..g.batch {
        for grp in 0..g.groups {
            let in_off = (n * g.c_in + grp * cig) * hw;
            im2col(&input[in_off..in_off + cig * hw], g, &mut cols);
            let w_off = grp * cog * patch;
            let out_off = (n * g.c_out + grp * cog) * hw;
            let dst = &mut out[out_off..out_off + cog * hw];
            match bias {
                Some(b) => {
                    for (co, row) in dst.chunks_exact_mut(hw).enumerate() {
                        row.fill(b[grp * cog + co]);
                    }
                }
                None => dst.fill(0.0),
            }
            gemm(
                cog,
                patch,
                hw,
                &weight[w_off..w_off + cog * patch],
                (patch, 1),
                &cols,
                (hw, 1),
                1.0,
                dst,
            );
        }
    }
}

/// Accumulates gradients into whichever of the three slots are present.
pub(crate) fn conv2d_backward(
    input: &[f64],
    weight: &[f64],
    gout: &[f64],
    g: &ConvGeom,
    mut dinput: Option<&mut [f64]>,
    mut dweight: Option<&mut [f64]>,
    mut dbias: Option<&mut [f64]>,
) {
    let hw = g.pixels();
    let (cig, cog, patch) = (g.c_in_group(), g.c_out_group(), g.patch_len());
    let mut cols = vec![0.0; patch * hw];
    for n in 0..g.batch {
        for grp in 0..g.groups {
            let out_off = (n * g.c_out + grp * cog) * hw;
            let go = &gout[out_off..out_off + cog * hw];
            let w_off = grp * cog * patch;
            if let Some(db) = dbias.as_deref_mut() {
                for (co, row) in go.chunks_exact(hw).enumerate() {
                    db[grp * cog + co] += row.iter().sum::<f64>();
                }
            }
            let in_off = (n * g.c_in + grp * cig) * hw;
            if let Some(dw) = dweight.as_deref_mut() {
                im2col(&input[in_off..in_off + cig * hw], g, &mut cols);
                // dW[co, j] += sum_p gout[co, p] * cols[j, p]
                gemm(
                    cog,
                    hw,
                    patch,
                    go,
                    (hw, 1),
                    &cols,
                    (1, hw),
                    1.0,
                    &mut dw[w_off..w_off + cog * patch],
                );
            }
            if let Some(di) = dinput.as_deref_mut() {
                // dcols[j, p] = sum_co W[co, j] * gout[co, p]
                gemm(
                    patch,
                    cog,
                    hw,
                    &weight[w_off..w_off + cog * patch],
                    (1, patch),
                    go,
                    (hw, 1),
                    0.0,
                    &mut cols,
                );
                col2im(&cols, g, &mut di[in_off..in_off + cig * hw]);
            }
        }
    }
}
