//! PSNR and SSIM (11×11 Gaussian window, σ = 1.5, valid region only).

use super::Image;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PSNR_IDENTICAL: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.pixels.len().max(1) as f64;
    Ok(a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { PSNR_IDENTICAL } else { -10.0 * m.log10() })
}

pub fn l1(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.pixels.len().max(1) as f64;
    Ok(a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid separable filtering of one `h×w` plane.
fn filter(plane: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| win[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| win[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter`]: scatters an `oh×ow` map back onto `h×w`.
fn filter_adjoint(g: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..oh {
        for x in 0..ow {
            let v = g[y * ow + x];
            for k in 0..SSIM_WINDOW {
                rows[(y + k) * ow + x] += win[k] * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for k in 0..SSIM_WINDOW {
                out[y * w + x + k] += win[k] * v;
            }
        }
    }
    out
}

fn channel(pixels: &[f64], c: usize) -> Vec<f64> {
    pixels.iter().skip(c).step_by(3).copied().collect()
}

/// Window statistics and their SSIM partials for one channel. Returns the
/// SSIM map sum plus the per-position derivatives with respect to
/// `E[x]`, `E[x²]` and `E[xy]`.
fn ssim_channel(
    x: &[f64],
    y: &[f64],
    h: usize,
    w: usize,
    win: &[f64; SSIM_WINDOW],
) -> (f64, [Vec<f64>; 3]) {
    let mx = filter(x, h, w, win);
    let my = filter(y, h, w, win);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (pxx, pyy, pxy) = (filter(&xx, h, w, win), filter(&yy, h, w, win), filter(&xy, h, w, win));
    let n = mx.len();
    let mut total = 0.0;
    let mut d_mu = vec![0.0; n];
    let mut d_pxx = vec![0.0; n];
    let mut d_pxy = vec![0.0; n];
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let a1 = 2.0 * ux * uy + C1;
        let a2 = 2.0 * (pxy[i] - ux * uy) + C2;
        let b1 = ux * ux + uy * uy + C1;
        let b2 = (pxx[i] - ux * ux) + (pyy[i] - uy * uy) + C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        d_mu[i] = s * (2.0 * uy / a1 - 2.0 * uy / a2 - 2.0 * ux / b1 + 2.0 * ux / b2);
        d_pxx[i] = -s / b2;
        d_pxy[i] = 2.0 * s / a2;
    }
    (total, [d_mu, d_pxx, d_pxy])
}

fn check_size(h: usize, w: usize) -> Result<()> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Mean SSIM over the valid window positions and the three channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    check_size(a.height, a.width)?;
    let win = gaussian_window();
    let (h, w) = (a.height, a.width);
    let count = ((h + 1 - SSIM_WINDOW) * (w + 1 - SSIM_WINDOW) * 3) as f64;
    let mut total = 0.0;
    for c in 0..3 {
        total += ssim_channel(&channel(&a.pixels, c), &channel(&b.pixels, c), h, w, &win).0;
    }
    Ok(total / count)
}

/// Differentiable SSIM of `x` (`H×W×3`) against the constant `target`.
pub fn ssim_var<'g>(x: Var<'g>, target: &Tensor) -> Result<Var<'g>> {
    let xv = x.value();
    let s = xv.shape().to_vec();
    if s.len() != 3 || s[2] != 3 || s.as_slice() != target.shape() {
        return Err(Error::Shape(format!(
            "SSIM inputs must be matching H×W×3, got {s:?} and {:?}",
            target.shape()
        )));
    }
    let (h, w) = (s[0], s[1]);
    check_size(h, w)?;
    let win = gaussian_window();
    let count = ((h + 1 - SSIM_WINDOW) * (w + 1 - SSIM_WINDOW) * 3) as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; h * w * 3];
    for c in 0..3 {
        let xc = channel(xv.data(), c);
        let yc = channel(target.data(), c);
        let (t, [d_mu, d_pxx, d_pxy]) = ssim_channel(&xc, &yc, h, w, &win);
        total += t;
        let g_mu = filter_adjoint(&d_mu, h, w, &win);
        let g_xx = filter_adjoint(&d_pxx, h, w, &win);
        let g_xy = filter_adjoint(&d_pxy, h, w, &win);
        for p in 0..h * w {
            grad[p * 3 + c] = (g_mu[p] + 2.0 * xc[p] * g_xx[p] + yc[p] * g_xy[p]) / count;
        }
    }
    let grad = Tensor::new(&[h, w, 3], grad);
    Ok(x.graph().op(&[x], Tensor::scalar(total / count), move |g, _| {
        vec![Some(grad.map(|v| v * g.item()))]
    }))
}
