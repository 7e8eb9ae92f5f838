//! Centered, orthonormal 2-D DFT over the last two axes of interleaved
//! complex buffers.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

/// Applies the centered transform to every `h x w` image in `data`
/// (interleaved re/im, `images * h * w` complex values), in place.
///
/// `inverse = false` gives `fftshift(fft2(ifftshift(x))) / sqrt(hw)`;
/// `inverse = true` the matching inverse, which is also the adjoint.
pub(crate) fn fft2c_inplace(data: &mut [f64], h: usize, w: usize, inverse: bool) {
    let hw = h * w;
    debug_assert_eq!(data.len() % (2 * hw), 0);
    let direction = if inverse {
        FftDirection::Inverse
    } else {
        FftDirection::Forward
    };
    let row_fft = plan(w, direction);
    let col_fft = plan(h, direction);
    let scale = 1.0 / (hw as f64).sqrt();
    let mut buf = vec![Complex64::new(0.0, 0.0); hw];
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    let (hs, ws) = (h / 2, w / 2);
    for image in data.chunks_exact_mut(2 * hw) {
        // ifftshift: buf[y, x] = in[(y + h/2) % h, (x + w/2) % w]
        for y in 0..h {
            let sy = (y + hs) % h;
            for x in 0..w {
                let sx = (x + ws) % w;
                let s = 2 * (sy * w + sx);
                buf[y * w + x] = Complex64::new(image[s], image[s + 1]);
            }
        }
        for row in buf.chunks_exact_mut(w) {
            row_fft.process(row);
        }
        for x in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            col_fft.process(&mut col);
            for y in 0..h {
                buf[y * w + x] = col[y];
            }
        }
        // fftshift: out[(y + h/2) % h, (x + w/2) % w] = buf[y, x]
        for y in 0..h {
            let dy = (y + hs) % h;
            for x in 0..w {
                let dx = (x + ws) % w;
                let v = buf[y * w + x] * scale;
                let d = 2 * (dy * w + dx);
                image[d] = v.re;
                image[d + 1] = v.im;
            }
        }
    }
}
