//! Photometric losses with analytic pixel gradients.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::scene_io::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean absolute error over pixels and channels, with its gradient against
/// the rendered image.
pub fn l1_and_grad<T: Real>(
    rendered: &Image<T>,
    target: &Image<T>,
) -> Result<(T, Vec<Vector3<T>>)> {
    check_dims(rendered, target)?;
    let n = rendered.data().len();
    let scale = T::one() / T::of(n as f64);
    let mut total = T::zero();
    let mut grads = vec![Vector3::zeros(); n / 3];
    for (pix, (r, t)) in rendered
        .data()
        .chunks_exact(3)
        .zip(target.data().chunks_exact(3))
        .enumerate()
    {
        for c in 0..3 {
            let d = r[c] - t[c];
            total += d.abs() * scale;
            grads[pix][c] = if d > T::zero() {
                scale
            } else if d < T::zero() {
                -scale
            } else {
                T::zero()
            };
        }
    }
    Ok((total, grads))
}

/// Gaussian-windowed structural similarity, averaged over all fully valid
/// windows and channels, with its gradient against the rendered image.
/// Images smaller than the window have no valid windows and score 1 with
/// zero gradient.
pub fn ssim_and_grad<T: Real>(
    rendered: &Image<T>,
    target: &Image<T>,
) -> Result<(T, Vec<Vector3<T>>)> {
    check_dims(rendered, target)?;
    let (w, h) = (rendered.width() as usize, rendered.height() as usize);
    let mut grads = vec![Vector3::zeros(); w * h];
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Ok((T::one(), grads));
    }
    let win = gaussian_window::<T>();
    let out_w = w - SSIM_WINDOW + 1;
    let out_h = h - SSIM_WINDOW + 1;
    let window_count = T::of((out_w * out_h * 3) as f64);
    let inv_count = T::one() / window_count;
    let c1 = T::of(SSIM_C1);
    let c2 = T::of(SSIM_C2);
    let two = T::of(2.0);

    let rd = rendered.data();
    let td = target.data();
    let mut total = T::zero();
    for wy in 0..out_h {
        for wx in 0..out_w {
            for ch in 0..3 {
                let mut mu_x = T::zero();
                let mut mu_y = T::zero();
                let mut xx = T::zero();
                let mut yy = T::zero();
                let mut xy = T::zero();
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let g = win[ky * SSIM_WINDOW + kx];
                        let idx = ((wy + ky) * w + wx + kx) * 3 + ch;
                        let x = rd[idx];
                        let y = td[idx];
                        mu_x += g * x;
                        mu_y += g * y;
                        xx += g * x * x;
                        yy += g * y * y;
                        xy += g * x * y;
                    }
                }
                let var_x = xx - mu_x * mu_x;
                let var_y = yy - mu_y * mu_y;
                let cov = xy - mu_x * mu_y;
                let a1 = two * mu_x * mu_y + c1;
                let a2 = two * cov + c2;
                let b1 = mu_x * mu_x + mu_y * mu_y + c1;
                let b2 = var_x + var_y + c2;
                let denom = b1 * b2;
                let s = a1 * a2 / denom;
                total += s * inv_count;

                let ds_da1 = a2 / denom;
                let ds_da2 = a1 / denom;
                let ds_db1 = -s / b1;
                let ds_db2 = -s / b2;
                let ds_dmu_x = ds_da1 * two * mu_y + ds_db1 * two * mu_x;
                let ds_dvar_x = ds_db2;
                let ds_dcov = ds_da2 * two;
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let g = win[ky * SSIM_WINDOW + kx];
                        let pix = (wy + ky) * w + wx + kx;
                        let idx = pix * 3 + ch;
                        let x = rd[idx];
                        let y = td[idx];
                        let d = ds_dmu_x * g
                            + ds_dvar_x * two * g * (x - mu_x)
                            + ds_dcov * g * (y - mu_y);
                        grads[pix][ch] += d * inv_count;
                    }
                }
            }
        }
    }
    Ok((total, grads))
}

/// Blended photometric loss `(1-λ)·L1 + λ·(1-SSIM)` and its gradient.
pub fn photometric_loss<T: Real>(
    rendered: &Image<T>,
    target: &Image<T>,
    lambda: T,
) -> Result<(T, Vec<Vector3<T>>)> {
    let (l1, g1) = l1_and_grad(rendered, target)?;
    if lambda == T::zero() {
        return Ok((l1, g1));
    }
    let (ssim, g2) = ssim_and_grad(rendered, target)?;
    let keep = T::one() - lambda;
    let loss = keep * l1 + lambda * (T::one() - ssim);
    let grads = g1
        .into_iter()
        .zip(g2)
        .map(|(a, b)| a * keep - b * lambda)
        .collect();
    Ok((loss, grads))
}

pub fn mse<T: Real>(rendered: &Image<T>, target: &Image<T>) -> Result<T> {
    check_dims(rendered, target)?;
    let n = T::of(rendered.data().len() as f64);
    let mut total = T::zero();
    for (r, t) in rendered.data().iter().zip(target.data()) {
        let d = *r - *t;
        total += d * d;
    }
    Ok(total / n)
}

/// Peak signal-to-noise ratio in dB for unit-range images, capped at 100.
pub fn psnr<T: Real>(rendered: &Image<T>, target: &Image<T>) -> Result<T> {
    let m = mse(rendered, target)?;
    if m < T::of(1e-10) {
        return Ok(T::of(100.0));
    }
    Ok(T::of(-10.0) * m.log10())
}

fn check_dims<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Argument(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn gaussian_window<T: Real>() -> Vec<T> {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut out = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dx = x as f64 - half;
            let dy = y as f64 - half;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            out.push(v);
            sum += v;
        }
    }
    out.into_iter().map(|v| T::of(v / sum)).collect()
}
