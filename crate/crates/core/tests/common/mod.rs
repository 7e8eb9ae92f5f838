//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use eamri::tensor::{ComplexTensor, RealTensor};

/// Direct zero-padded dilated cross-correlation.
pub fn conv_oracle(
    x: &RealTensor,
    w: &RealTensor,
    b: &[f64],
    dilation: usize,
    groups: usize,
) -> RealTensor {
    let (n, c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, cig, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let cog = c_out / groups;
    let half = (dilation * (k - 1) / 2) as isize;
    let mut out = RealTensor::zeros(vec![n, c_out, h, wd]);
    for bn in 0..n {
        for co in 0..c_out {
            let grp = co / cog;
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b[co];
                    for ci in 0..cig {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + (ky * dilation) as isize - half;
                                let sx = xx as isize + (kx * dilation) as isize - half;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                acc += w.at(&[co, ci, ky, kx])
                                    * x.at(&[bn, grp * cig + ci, sy as usize, sx as usize]);
                            }
                        }
                    }
                    out.data_mut()[((bn * c_out + co) * h + y) * wd + xx] = acc;
                }
            }
        }
    }
    let _ = c_in;
    out
}

/// Direct centred orthonormal DFT of an `[H, W]` image.
pub fn dft_oracle(x: &ComplexTensor) -> ComplexTensor {
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let mut out = ComplexTensor::zeros(vec![h, w]);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    // centred indices: sample index i corresponds to coordinate i - n/2
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    let phase = -2.0 * std::f64::consts::PI
                        * (((u as f64 - (h / 2) as f64) * (y as f64 - (h / 2) as f64)) / h as f64
                            + ((v as f64 - (w / 2) as f64) * (xx as f64 - (w / 2) as f64)) / w as f64);
                    let (a, b) = x.get(y * w + xx);
                    re += a * phase.cos() - b * phase.sin();
                    im += a * phase.sin() + b * phase.cos();
                }
            }
            out.set(u * w + v, (re * scale, im * scale));
        }
    }
    out
}


/// Centred DFT of every `[H, W]` slice of an `[nc, H, W]` stack.
pub fn dft_stack(x: &ComplexTensor) -> ComplexTensor {
    let parts: Vec<ComplexTensor> = (0..x.shape()[0])
        .map(|c| dft_oracle(&x.slice_leading(c)))
        .collect();
    ComplexTensor::stack(&parts).unwrap()
}

fn cmul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

/// `y_c = M ⊙ DFT(S_c x)` written out coil by coil.
pub fn forward_oracle(x: &ComplexTensor, maps: &ComplexTensor, columns: &[bool]) -> ComplexTensor {
    let (nc, h, w) = (maps.shape()[0], maps.shape()[1], maps.shape()[2]);
    let mut coils = ComplexTensor::zeros(vec![nc, h, w]);
    for c in 0..nc {
        for p in 0..h * w {
            coils.set(c * h * w + p, cmul(maps.get(c * h * w + p), x.get(p)));
        }
    }
    let mut k = dft_stack(&coils);
    for i in 0..k.len() {
        if !columns[i % w] {
            k.set(i, (0.0, 0.0));
        }
    }
    k
}

pub fn reduce_oracle(maps: &ComplexTensor, coils: &ComplexTensor) -> ComplexTensor {
    let (nc, h, w) = (maps.shape()[0], maps.shape()[1], maps.shape()[2]);
    let mut out = ComplexTensor::zeros(vec![h, w]);
    for p in 0..h * w {
        let (mut re, mut im) = (0.0, 0.0);
        for c in 0..nc {
            let (s, z) = (maps.get(c * h * w + p), coils.get(c * h * w + p));
            let v = cmul((s.0, -s.1), z);
            re += v.0;
            im += v.1;
        }
        out.set(p, (re, im));
    }
    out
}

pub fn rss_oracle(coils: &ComplexTensor) -> RealTensor {
    let (nc, h, w) = (coils.shape()[0], coils.shape()[1], coils.shape()[2]);
    let data = (0..h * w)
        .map(|p| {
            (0..nc)
                .map(|c| {
                    let (a, b) = coils.get(c * h * w + p);
                    a * a + b * b
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    RealTensor::new(vec![h, w], data).unwrap()
}

/// Sobel gradient magnitude written as explicit differences of weighted
/// neighbour columns and rows, border pixels replicated.
pub fn sobel_oracle(img: &RealTensor) -> RealTensor {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let p = |y: isize, x: isize| img.at(&[y.clamp(0, h as isize - 1) as usize, x.clamp(0, w as isize - 1) as usize]);
    let mut out = RealTensor::zeros(vec![h, w]);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let right = p(y - 1, x + 1) + 2.0 * p(y, x + 1) + p(y + 1, x + 1);
            let left = p(y - 1, x - 1) + 2.0 * p(y, x - 1) + p(y + 1, x - 1);
            let down = p(y + 1, x - 1) + 2.0 * p(y + 1, x) + p(y + 1, x + 1);
            let up = p(y - 1, x - 1) + 2.0 * p(y - 1, x) + p(y - 1, x + 1);
            out.data_mut()[y as usize * w + x as usize] = ((right - left).powi(2) + (down - up).powi(2)).sqrt();
        }
    }
    out
}

/// `[B, m, k] x [B, k, n]` by triple loop.
pub fn bmm_oracle(a: &RealTensor, b: &RealTensor) -> RealTensor {
    let (batch, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
    let mut out = RealTensor::zeros(vec![batch, m, n]);
    for q in 0..batch {
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..k {
                    s += a.at(&[q, i, l]) * b.at(&[q, l, j]);
                }
                out.data_mut()[(q * m + i) * n + j] = s;
            }
        }
    }
    out
}

/// Mean SSIM over every 7×7 window, statistics computed two-pass per window.
pub fn ssim_oracle(pred: &RealTensor, gt: &RealTensor) -> f64 {
    let (h, w) = (gt.shape()[0], gt.shape()[1]);
    let l = gt.data().iter().cloned().fold(f64::MIN, f64::max);
    let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
    let mut total = 0.0;
    let mut count = 0.0;
    for y in 0..=h - 7 {
        for x in 0..=w - 7 {
            let mut pa = Vec::new();
            let mut pb = Vec::new();
            for dy in 0..7 {
                for dx in 0..7 {
                    pa.push(pred.at(&[y + dy, x + dx]));
                    pb.push(gt.at(&[y + dy, x + dx]));
                }
            }
            let ma = pa.iter().sum::<f64>() / 49.0;
            let mb = pb.iter().sum::<f64>() / 49.0;
            let va = pa.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / 48.0;
            let vb = pb.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / 48.0;
            let cov = pa.iter().zip(&pb).map(|(a, b)| (a - ma) * (b - mb)).sum::<f64>() / 48.0;
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    total / count
}
