//! Map quality metrics: normalized error, hit rate, and SSIM.

use crate::error::{Error, Result};
use crate::map::{RgbMap, ScalarMap};
use crate::real::Real;

/// `‖ref − est‖ / ‖ref‖` over all values.
pub fn normalized_error<T: Real>(reference: &ScalarMap<T>, estimate: &ScalarMap<T>) -> Result<f64> {
    if reference.grid() != estimate.grid() {
        return Err(grid_mismatch(reference.grid(), estimate.grid(), "normalized_error"));
    }
    normalized_error_slices(&[reference.values()], &[estimate.values()])
}

/// `‖ref − est‖ / ‖ref‖` jointly over the three channels.
pub fn normalized_error_rgb<T: Real>(reference: &RgbMap<T>, estimate: &RgbMap<T>) -> Result<f64> {
    if reference.grid() != estimate.grid() {
        return Err(grid_mismatch(reference.grid(), estimate.grid(), "normalized_error"));
    }
    normalized_error_slices(
        &[reference.channel(0), reference.channel(1), reference.channel(2)],
        &[estimate.channel(0), estimate.channel(1), estimate.channel(2)],
    )
}

fn normalized_error_slices<T: Real>(reference: &[&[T]], estimate: &[&[T]]) -> Result<f64> {
    let mut ref_sq = 0.0f64;
    let mut err_sq = 0.0f64;
    for (r, e) in reference.iter().zip(estimate) {
        for (&a, &b) in r.iter().zip(*e) {
            let a = a.to_f();
            let d = a - b.to_f();
            ref_sq += a * a;
            err_sq += d * d;
        }
    }
    if ref_sq == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((err_sq / ref_sq).sqrt())
}

/// Fraction of probe positions that indexed: `1 − zsp_count/n_probes`.
pub fn hit_rate(zsp_count: usize, n_probes: usize) -> Result<f64> {
    if n_probes == 0 {
        return Err(Error::EmptyInput("hit_rate over zero probes"));
    }
    if zsp_count > n_probes {
        return Err(Error::InvalidParam(format!(
            "{zsp_count} failed pixels on a {n_probes}-probe grid"
        )));
    }
    Ok(1.0 - zsp_count as f64 / n_probes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimOptions {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L`; `None` uses the reference's data range (falling
    /// back to 1.0 for a constant reference).
    pub dynamic_range: Option<f64>,
    /// Weight window samples with a centered Gaussian instead of uniformly.
    pub gaussian_window: bool,
    pub gaussian_sigma: f64,
}

impl Default for SsimOptions {
    fn default() -> Self {
        Self {
            window: 8,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: None,
            gaussian_window: false,
            gaussian_sigma: 1.5,
        }
    }
}

/// Mean local structural similarity over all sliding window positions.
pub fn ssim<T: Real>(
    reference: &ScalarMap<T>,
    estimate: &ScalarMap<T>,
    opts: &SsimOptions,
) -> Result<f64> {
    if reference.grid() != estimate.grid() {
        return Err(grid_mismatch(reference.grid(), estimate.grid(), "ssim"));
    }
    let (h, w) = (reference.grid().height(), reference.grid().width());
    ssim_channel(reference.values(), estimate.values(), h, w, opts)
}

/// Unweighted mean of the per-channel SSIM values. The stabilizing dynamic
/// range is shared across channels, taken over the whole reference map, so a
/// channel that happens to span a narrow band is not rescored on its own
/// stretched scale.
pub fn ssim_rgb<T: Real>(
    reference: &RgbMap<T>,
    estimate: &RgbMap<T>,
    opts: &SsimOptions,
) -> Result<f64> {
    if reference.grid() != estimate.grid() {
        return Err(grid_mismatch(reference.grid(), estimate.grid(), "ssim"));
    }
    let (h, w) = (reference.grid().height(), reference.grid().width());
    let range = match opts.dynamic_range {
        Some(l) => l,
        None => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for ch in 0..3 {
                for v in reference.channel(ch) {
                    let v = v.to_f();
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            if hi > lo {
                hi - lo
            } else {
                1.0
            }
        }
    };
    let shared = SsimOptions {
        dynamic_range: Some(range),
        ..*opts
    };
    let mut total = 0.0;
    for ch in 0..3 {
        total += ssim_channel(reference.channel(ch), estimate.channel(ch), h, w, &shared)?;
    }
    Ok(total / 3.0)
}

fn grid_mismatch(
    a: crate::map::ProbeGrid,
    b: crate::map::ProbeGrid,
    context: &'static str,
) -> Error {
    Error::ShapeMismatch {
        expected: format!("{}x{} map", a.height(), a.width()),
        actual: format!("{}x{} map", b.height(), b.width()),
        context,
    }
}

fn ssim_channel<T: Real>(
    reference: &[T],
    estimate: &[T],
    h: usize,
    w: usize,
    opts: &SsimOptions,
) -> Result<f64> {
    let k = opts.window;
    if k == 0 {
        return Err(Error::InvalidParam("ssim window of size 0".into()));
    }
    if k > h || k > w {
        return Err(Error::InvalidParam(format!(
            "ssim window {k} exceeds a {h}x{w} map"
        )));
    }
    let x: Vec<f64> = reference.iter().map(|v| v.to_f()).collect();
    let y: Vec<f64> = estimate.iter().map(|v| v.to_f()).collect();
    let range = match opts.dynamic_range {
        Some(l) => l,
        None => {
            let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                hi - lo
            } else {
                1.0
            }
        }
    };
    let c1 = (opts.k1 * range).powi(2);
    let c2 = (opts.k2 * range).powi(2);
    if opts.gaussian_window {
        return Ok(ssim_gaussian(&x, &y, h, w, k, opts.gaussian_sigma, c1, c2));
    }
    // Integral images over x, y, x², y², xy allow O(1) window moments.
    let sx = integral(&x, h, w, |a, _| a);
    let sy = integral(&y, h, w, |_, b| b);
    let sxx = integral(&x, h, w, |a, _| a * a);
    let syy = integral(&y, h, w, |_, b| b * b);
    let sxy_src: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let sxy = integral(&sxy_src, h, w, |a, _| a);
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let mx = window_sum(&sx, w, r, c, k) / n;
            let my = window_sum(&sy, w, r, c, k) / n;
            let vx = window_sum(&sxx, w, r, c, k) / n - mx * mx;
            let vy = window_sum(&syy, w, r, c, k) / n - my * my;
            let cov = window_sum(&sxy, w, r, c, k) / n - mx * my;
            total += local_ssim(mx, my, vx, vy, cov, c1, c2);
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

fn local_ssim(mx: f64, my: f64, vx: f64, vy: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// `(h+1)×(w+1)` summed-area table of `f(x[i], x[i])`-style sources; the
/// closure receives the value so one helper serves plain, squared, and mixed
/// sums.
fn integral(values: &[f64], h: usize, w: usize, f: fn(f64, f64) -> f64) -> Vec<f64> {
    let mut s = vec![0.0f64; (h + 1) * (w + 1)];
    for r in 0..h {
        let mut row = 0.0;
        for c in 0..w {
            let v = values[r * w + c];
            row += f(v, v);
            s[(r + 1) * (w + 1) + c + 1] = s[r * (w + 1) + c + 1] + row;
        }
    }
    s
}

fn window_sum(s: &[f64], w: usize, r: usize, c: usize, k: usize) -> f64 {
    let stride = w + 1;
    s[(r + k) * stride + c + k] - s[r * stride + c + k] - s[(r + k) * stride + c] + s[r * stride + c]
}

fn ssim_gaussian(
    x: &[f64],
    y: &[f64],
    h: usize,
    w: usize,
    k: usize,
    sigma: f64,
    c1: f64,
    c2: f64,
) -> f64 {
    let center = (k as f64 - 1.0) / 2.0;
    let mut g = vec![0.0f64; k * k];
    for r in 0..k {
        for c in 0..k {
            let d2 = (r as f64 - center).powi(2) + (c as f64 - center).powi(2);
            g[r * k + c] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let z: f64 = g.iter().sum();
    for v in &mut g {
        *v /= z;
    }
    let mut total = 0.0;
    let mut windows = 0usize;
    for r0 in 0..=h - k {
        for c0 in 0..=w - k {
            let (mut mx, mut my) = (0.0, 0.0);
            for r in 0..k {
                for c in 0..k {
                    let gw = g[r * k + c];
                    mx += gw * x[(r0 + r) * w + c0 + c];
                    my += gw * y[(r0 + r) * w + c0 + c];
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for r in 0..k {
                for c in 0..k {
                    let gw = g[r * k + c];
                    let dx = x[(r0 + r) * w + c0 + c] - mx;
                    let dy = y[(r0 + r) * w + c0 + c] - my;
                    vx += gw * dx * dx;
                    vy += gw * dy * dy;
                    cov += gw * dx * dy;
                }
            }
            total += local_ssim(mx, my, vx, vy, cov, c1, c2);
            windows += 1;
        }
    }
    total / windows as f64
}
