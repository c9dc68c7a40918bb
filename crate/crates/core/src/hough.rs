//! Weighted Hough transform for straight-band detection.
//!
//! Every pixel votes its intensity into one `(θ, ρ)` bin per angle, where
//! `ρ = x·cosθ + y·sinθ` in pattern-centered coordinates. Straight bands
//! concentrate their mass into a single bin at the matching angle and smear
//! it across bins elsewhere, so band lines appear as isolated peaks.

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct HoughAccumulator<T: Real> {
    n_theta: usize,
    n_rho: usize,
    pattern_height: usize,
    pattern_width: usize,
    rho_max: f64,
    bins: Vec<T>,
}

/// One detected band line. `theta` and `rho` are the centers of the winning
/// accumulator bin; `strength` is the peak's prominence, `(peak − median)/std`
/// over the accumulator it was picked from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band<T: Real> {
    pub theta: T,
    pub rho: T,
    pub strength: T,
}

impl<T: Real> HoughAccumulator<T> {
    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_rho(&self) -> usize {
        self.n_rho
    }

    pub fn pattern_height(&self) -> usize {
        self.pattern_height
    }

    pub fn pattern_width(&self) -> usize {
        self.pattern_width
    }

    /// Half the pattern diagonal: the largest |ρ| any pixel can reach.
    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    pub fn bins(&self) -> &[T] {
        &self.bins
    }

    pub fn value(&self, t: usize, i: usize) -> T {
        self.bins[t * self.n_rho + i]
    }

    /// Angle at the center of bin row `t`, in `(0, π)`.
    pub fn theta_center(&self, t: usize) -> f64 {
        (t as f64 + 0.5) * std::f64::consts::PI / self.n_theta as f64
    }

    /// Offset at the center of bin column `i`, in `(−ρ_max, ρ_max)`.
    pub fn rho_center(&self, i: usize) -> f64 {
        -self.rho_max + (i as f64 + 0.5) * 2.0 * self.rho_max / self.n_rho as f64
    }

    /// In-place `self − scale·other`, used to flatten the ridge a constant
    /// background paints into every accumulator.
    pub fn subtract_scaled(&mut self, other: &Self, scale: T) -> Result<()> {
        if self.n_theta != other.n_theta
            || self.n_rho != other.n_rho
            || self.pattern_height != other.pattern_height
            || self.pattern_width != other.pattern_width
        {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} accumulator", self.n_theta, self.n_rho),
                actual: format!("{}x{} accumulator", other.n_theta, other.n_rho),
                context: "subtract_scaled",
            });
        }
        for (b, &o) in self.bins.iter_mut().zip(&other.bins) {
            *b -= scale * o;
        }
        Ok(())
    }
}

/// Accumulates a pattern's pixel intensities over `n_theta × n_rho` bins.
///
/// Bin angles are the row centers `(t + 0.5)·π/n_theta`; offsets partition
/// `[−ρ_max, ρ_max]` uniformly. Each pixel lands in exactly one ρ bin per
/// angle, so the accumulator total is `n_theta` times the pattern total.
pub fn hough_transform<T: Real>(
    pattern: &[T],
    pattern_height: usize,
    pattern_width: usize,
    n_theta: usize,
    n_rho: usize,
) -> Result<HoughAccumulator<T>> {
    if pattern_height == 0 || pattern_width == 0 {
        return Err(Error::ZeroGridDim {
            height: pattern_height,
            width: pattern_width,
        });
    }
    if n_theta == 0 || n_rho == 0 {
        return Err(Error::ZeroGridDim {
            height: n_theta,
            width: n_rho,
        });
    }
    if pattern.len() != pattern_height * pattern_width {
        return Err(Error::ShapeMismatch {
            expected: format!("{} pixels", pattern_height * pattern_width),
            actual: format!("{} pixels", pattern.len()),
            context: "hough_transform",
        });
    }
    let h = pattern_height as f64;
    let w = pattern_width as f64;
    let rho_max = (h * h + w * w).sqrt() / 2.0;
    let inv_bin = n_rho as f64 / (2.0 * rho_max);
    let xs: Vec<f64> = (0..pattern_width)
        .map(|c| c as f64 - (w - 1.0) / 2.0)
        .collect();
    let ys: Vec<f64> = (0..pattern_height)
        .map(|r| r as f64 - (h - 1.0) / 2.0)
        .collect();
    // Accumulate in f64 regardless of T so bin totals keep full precision.
    let mut bins = vec![0.0f64; n_theta * n_rho];
    for t in 0..n_theta {
        let theta = (t as f64 + 0.5) * std::f64::consts::PI / n_theta as f64;
        let (sin, cos) = theta.sin_cos();
        let row = &mut bins[t * n_rho..(t + 1) * n_rho];
        for r in 0..pattern_height {
            let base = ys[r] * sin;
            for c in 0..pattern_width {
                let rho = xs[c] * cos + base;
                let i = (((rho + rho_max) * inv_bin) as usize).min(n_rho - 1);
                row[i] += pattern[r * pattern_width + c].to_f();
            }
        }
    }
    Ok(HoughAccumulator {
        n_theta,
        n_rho,
        pattern_height,
        pattern_width,
        rho_max,
        bins: bins.into_iter().map(T::from_f).collect(),
    })
}

fn median_and_std(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (median, var.sqrt())
}

/// Greedy peak picking: repeatedly take the largest unsuppressed bin whose
/// prominence `(value − median)/std` clears the threshold, then suppress its
/// `(±2, ±2)` bin neighborhood. θ wraps modulo π; a line crossing θ = 0 or
/// θ = π flips the sign of ρ, so wrapped neighbors mirror the ρ index.
/// Median and std are those of the accumulator as given. A flat accumulator
/// (std = 0) has no peaks.
pub fn detect_bands<T: Real>(
    acc: &HoughAccumulator<T>,
    max_bands: usize,
    min_prominence: f64,
) -> Vec<Band<T>> {
    let values: Vec<f64> = acc.bins.iter().map(|v| v.to_f()).collect();
    let (median, std) = median_and_std(&values);
    if std == 0.0 || max_bands == 0 {
        return Vec::new();
    }
    let (n_theta, n_rho) = (acc.n_theta, acc.n_rho);
    let mut suppressed = vec![false; values.len()];
    let mut bands = Vec::new();
    while bands.len() < max_bands {
        let mut best: Option<(usize, f64)> = None;
        for (idx, &v) in values.iter().enumerate() {
            if !suppressed[idx] && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((idx, v));
            }
        }
        let Some((idx, peak)) = best else { break };
        let prominence = (peak - median) / std;
        if prominence < min_prominence {
            break;
        }
        let (t0, i0) = (idx / n_rho, idx % n_rho);
        bands.push(Band {
            theta: T::from_f(acc.theta_center(t0)),
            rho: T::from_f(acc.rho_center(i0)),
            strength: T::from_f(prominence),
        });
        for dt in -2i64..=2 {
            let mut t = t0 as i64 + dt;
            let mut ic = i0 as i64;
            if t < 0 {
                t += n_theta as i64;
                ic = n_rho as i64 - 1 - ic;
            } else if t >= n_theta as i64 {
                t -= n_theta as i64;
                ic = n_rho as i64 - 1 - ic;
            }
            for di in -2i64..=2 {
                let i = ic + di;
                if (0..n_rho as i64).contains(&i) {
                    suppressed[t as usize * n_rho + i as usize] = true;
                }
            }
        }
    }
    bands
}
