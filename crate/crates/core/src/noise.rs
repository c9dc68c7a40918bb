//! SNR-targeted Gaussian and Poisson corruption of nonnegative signals.
//!
//! SNR is defined as `20·log10(‖u‖ / ‖u−v‖)` between a reference `u` and a
//! corrupted copy `v`. Gaussian corruption adds i.i.d. noise whose standard
//! deviation is solved from the target SNR; Poisson corruption redraws every
//! entry as counts whose total intensity `σ_psn` is solved so the expected
//! SNR against the rescaled reference `σ_psn·y/‖y‖₁` equals the target.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pattern::PatternStack;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    Gaussian,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub target_snr_db: f64,
    pub seed: u64,
}

fn l2<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|&x| x.to_f() * x.to_f()).sum::<f64>().sqrt()
}

fn l1_nonneg<T: Real>(v: &[T]) -> Result<f64> {
    let mut total = 0.0;
    for (i, &x) in v.iter().enumerate() {
        if x < T::zero() {
            return Err(Error::NegativeEntry(i));
        }
        total += x.to_f();
    }
    Ok(total)
}

/// `20·log10(‖u‖ / ‖u−v‖)` in dB; `+∞` when the two vectors are identical.
pub fn measure_snr<T: Real>(reference: &[T], corrupted: &[T]) -> Result<f64> {
    if reference.len() != corrupted.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} entries", reference.len()),
            actual: format!("{} entries", corrupted.len()),
            context: "measure_snr",
        });
    }
    if reference.is_empty() {
        return Err(Error::EmptyInput("measure_snr"));
    }
    let signal = l2(reference);
    if signal == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let err = reference
        .iter()
        .zip(corrupted)
        .map(|(&u, &v)| {
            let d = u.to_f() - v.to_f();
            d * d
        })
        .sum::<f64>()
        .sqrt();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (signal / err).log10())
}

/// Noise standard deviation hitting a target SNR: `(‖y‖/√N)·10^(−SNR/20)`
/// with `N` the length of the corrupted vector.
pub fn gaussian_sigma<T: Real>(y: &[T], target_snr_db: f64) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptyInput("gaussian_sigma"));
    }
    let norm = l2(y);
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(norm / (y.len() as f64).sqrt() * 10f64.powf(-target_snr_db / 20.0))
}

pub fn add_gaussian_noise<T: Real>(y: &[T], spec: &NoiseSpec) -> Result<Vec<T>> {
    if spec.kind != NoiseKind::Gaussian {
        return Err(Error::InvalidParam(format!(
            "add_gaussian_noise called with {:?} spec",
            spec.kind
        )));
    }
    let sigma = gaussian_sigma(y, spec.target_snr_db)?;
    if sigma == 0.0 {
        return Ok(y.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(y.iter()
        .map(|&v| {
            let eta: f64 = StandardNormal.sample(&mut rng);
            v + T::from_f(eta * sigma)
        })
        .collect())
}

/// Total-intensity scale hitting a target SNR: `(‖y‖₁²/‖y‖²)·10^(SNR/10)`.
/// Models the electron budget; invariant under rescaling of `y`.
pub fn poisson_scale<T: Real>(y: &[T], target_snr_db: f64) -> Result<f64> {
    let l1 = l1_nonneg(y)?;
    if l1 == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let l2sq = y.iter().map(|&x| x.to_f() * x.to_f()).sum::<f64>();
    Ok(l1 * l1 / l2sq * 10f64.powf(target_snr_db / 10.0))
}

/// The noiseless signal on the count scale, `σ_psn·y/‖y‖₁`. Poisson-corrupted
/// outputs should be compared (and SNR-measured) against this.
pub fn poisson_scaled_reference<T: Real>(y: &[T], sigma_psn: f64) -> Result<Vec<T>> {
    let l1 = l1_nonneg(y)?;
    if l1 == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(y.iter().map(|&v| T::from_f(v.to_f() * sigma_psn / l1)).collect())
}

/// Redraws every entry as `Poisson(σ_psn·y_i/‖y‖₁)`; outputs are integer
/// counts on the `σ_psn` scale, not rescaled back.
pub fn add_poisson_noise<T: Real>(y: &[T], spec: &NoiseSpec) -> Result<Vec<T>> {
    if spec.kind != NoiseKind::Poisson {
        return Err(Error::InvalidParam(format!(
            "add_poisson_noise called with {:?} spec",
            spec.kind
        )));
    }
    let sigma = poisson_scale(y, spec.target_snr_db)?;
    let l1 = l1_nonneg(y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    y.iter()
        .map(|&v| {
            let lambda = v.to_f() * sigma / l1;
            if lambda == 0.0 {
                return Ok(T::zero());
            }
            let dist = Poisson::new(lambda)
                .map_err(|e| Error::InvalidParam(format!("poisson mean {lambda}: {e}")))?;
            Ok(T::from_f(dist.sample(&mut rng)))
        })
        .collect()
}

/// Corrupts every pattern of a stack independently. Pattern `l` uses the
/// derived seed `base_seed XOR probe_index`, so results do not depend on
/// worker scheduling.
pub fn corrupt_stack<T: Real>(stack: &PatternStack<T>, spec: &NoiseSpec) -> Result<PatternStack<T>> {
    if spec.kind == NoiseKind::None {
        return Ok(stack.clone());
    }
    let corrupted: Result<Vec<Vec<T>>> = stack
        .probe_indices()
        .par_iter()
        .zip(stack.patterns().par_iter())
        .map(|(&l, pattern)| {
            let per = NoiseSpec {
                seed: spec.seed ^ l as u64,
                ..*spec
            };
            match spec.kind {
                NoiseKind::Gaussian => add_gaussian_noise(pattern, &per),
                NoiseKind::Poisson => add_poisson_noise(pattern, &per),
                NoiseKind::None => unreachable!(),
            }
        })
        .collect();
    stack.with_patterns(corrupted?)
}

/// Mean per-pattern measured SNR (dB) of a corrupted stack against its clean
/// source. Poisson patterns are measured on the count scale.
pub fn measure_stack_snr<T: Real>(
    clean: &PatternStack<T>,
    corrupted: &PatternStack<T>,
    spec: &NoiseSpec,
) -> Result<f64> {
    if clean.len() != corrupted.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} patterns", clean.len()),
            actual: format!("{} patterns", corrupted.len()),
            context: "measure_stack_snr",
        });
    }
    if clean.len() == 0 {
        return Err(Error::EmptyInput("measure_stack_snr"));
    }
    let mut total = 0.0;
    for (u, v) in clean.patterns().iter().zip(corrupted.patterns()) {
        let snr = match spec.kind {
            NoiseKind::Poisson => {
                let sigma = poisson_scale(u, spec.target_snr_db)?;
                let reference = poisson_scaled_reference(u, sigma)?;
                measure_snr(&reference, v)?
            }
            _ => measure_snr(u, v)?,
        };
        total += snr;
    }
    Ok(total / clean.len() as f64)
}
