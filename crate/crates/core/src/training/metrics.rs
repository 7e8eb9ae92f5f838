use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, RealTensor};

/// PSNR reported when the prediction reproduces the target to within
/// rounding (root-mean-square error at most `1e-10 · max(gt)`).
pub const PSNR_EXACT: f64 = 999.0;

pub const SSIM_WINDOW: usize = 7;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Image-quality summary of one or more reconstructions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub nmse: f64,
}

impl MetricReport {
    /// Metrics of `|pred|` against `|gt|`.
    pub fn of_images(pred: &ComplexTensor, gt: &ComplexTensor) -> Result<Self> {
        let (p, g) = (pred.abs(), gt.abs());
        Ok(Self {
            psnr: psnr(&p, &g)?,
            ssim: ssim(&p, &g)?,
            nmse: nmse(&p, &g)?,
        })
    }

    /// Component-wise mean.
    pub fn mean(reports: &[MetricReport]) -> Self {
        let n = reports.len().max(1) as f64;
        Self {
            psnr: reports.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
            nmse: reports.iter().map(|r| r.nmse).sum::<f64>() / n,
        }
    }
}

fn same(pred: &RealTensor, gt: &RealTensor) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(format!(
            "metric operands differ: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    if gt.is_empty() {
        return Err(Error::arg("metrics need a nonempty image"));
    }
    Ok(())
}

/// `20 log10(max(gt) / rmse)`, or [`PSNR_EXACT`] for an exact match.
pub fn psnr(pred: &RealTensor, gt: &RealTensor) -> Result<f64> {
    same(pred, gt)?;
    let mse = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / gt.len() as f64;
    let peak = gt.max();
    let rmse = mse.sqrt();
    if rmse <= 1e-10 * peak.abs() || rmse == 0.0 {
        return Ok(PSNR_EXACT);
    }
    Ok(20.0 * (peak / rmse).log10())
}

/// `‖pred − gt‖² / ‖gt‖²`.
pub fn nmse(pred: &RealTensor, gt: &RealTensor) -> Result<f64> {
    same(pred, gt)?;
    let den: f64 = gt.data().iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::arg("nmse is undefined for an all-zero target"));
    }
    let num: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / den)
}

/// Summed-area table with a zero first row and column.
fn integral(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut s = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += f(y * w + x);
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

/// Mean structural similarity over every fully contained 7×7 window,
/// using sample (co)variances and dynamic range `max(gt)`.
pub fn ssim(pred: &RealTensor, gt: &RealTensor) -> Result<f64> {
    same(pred, gt)?;
    let (h, w) = match pred.shape() {
        &[h, w] => (h, w),
        s => return Err(Error::shape(format!("ssim expects [H, W], got {s:?}"))),
    };
    let k = SSIM_WINDOW;
    if h < k || w < k {
        return Err(Error::arg(format!("ssim needs images of at least {k}×{k}")));
    }
    let (a, b) = (pred.data(), gt.data());
    let range = gt.max();
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let sa = integral(h, w, |i| a[i]);
    let sb = integral(h, w, |i| b[i]);
    let saa = integral(h, w, |i| a[i] * a[i]);
    let sbb = integral(h, w, |i| b[i] * b[i]);
    let sab = integral(h, w, |i| a[i] * b[i]);
    let n = (k * k) as f64;
    let cov_norm = n / (n - 1.0);
    let window = |s: &[f64], y: usize, x: usize| {
        let w1 = w + 1;
        (s[(y + k) * w1 + x + k] - s[y * w1 + x + k] - s[(y + k) * w1 + x] + s[y * w1 + x]) / n
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - k {
        for x in 0..=w - k {
            let (ma, mb) = (window(&sa, y, x), window(&sb, y, x));
            let va = cov_norm * (window(&saa, y, x) - ma * ma);
            let vb = cov_norm * (window(&sbb, y, x) - mb * mb);
            let vab = cov_norm * (window(&sab, y, x) - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * vab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
