//! Toy diffraction pattern synthesis.
//!
//! A pattern is a uniform unit background crossed by a handful of straight
//! additive bands. Each band is the set of pixels within `band_width/2` of a
//! line in normal form `x·cosθ + y·sinθ = ρ`, with pixel coordinates centered
//! on the pattern. The band angles and offsets are plain arithmetic in the
//! orientation triple, so synthesis is pure: one orientation always yields
//! one pattern.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::map::SampleMask;
use crate::phantom::GrainMap;
use crate::real::Real;

/// Row-major `height × width` pixel buffer.
pub type Pattern<T> = Vec<T>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternParams<T: Real> {
    pub height: usize,
    pub width: usize,
    pub n_bands: usize,
    pub band_width: T,
    pub amplitude: T,
}

impl<T: Real> Default for PatternParams<T> {
    fn default() -> Self {
        Self {
            height: 64,
            width: 48,
            n_bands: 5,
            band_width: T::from_f(3.0),
            amplitude: T::from_f(2.0),
        }
    }
}

impl<T: Real> PatternParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::ZeroGridDim {
                height: self.height,
                width: self.width,
            });
        }
        if self.n_bands == 0 {
            return Err(Error::InvalidParam("n_bands must be at least 1".into()));
        }
        if !(self.band_width > T::zero()) {
            return Err(Error::InvalidParam(format!(
                "band width {} not positive",
                self.band_width.to_f()
            )));
        }
        if self.amplitude < T::zero() {
            return Err(Error::InvalidParam(format!(
                "band amplitude {} negative",
                self.amplitude.to_f()
            )));
        }
        Ok(())
    }

    pub fn pattern_len(&self) -> usize {
        self.height * self.width
    }

    /// Largest |ρ| a band may take; bands stay inside the detector's
    /// inscribed region rather than clipping its corners.
    pub fn rho_limit(&self) -> f64 {
        0.35 * self.height.min(self.width) as f64
    }
}

fn frac(x: f64) -> f64 {
    x - x.floor()
}

/// Band-line parameters `(θ_j, ρ_j)` for an orientation.
///
/// Successive bands advance the θ fraction by the golden ratio conjugate and
/// the ρ fraction by `√2 − 1`. Both step sizes are irrational and independent,
/// so the j-th bands of two orientations never stay coincident across j: any
/// two distinct orientations produce visibly different band sets.
///
/// `θ_j = π·frac(o₁ + o₃/2 + j·(√5−1)/2)` spans `[0, π)`;
/// `ρ_j = (frac(o₂ + o₃/2 + j·(√2−1)) − ½)·2·ρ_lim` spans `[−ρ_lim, ρ_lim)`.
///
/// Geometry is computed in `f64` regardless of the pattern's scalar type so
/// `f32` and `f64` stacks agree on which pixels belong to a band.
pub fn band_parameters<T: Real>(
    orientation: [T; 3],
    params: &PatternParams<T>,
) -> Vec<(f64, f64)> {
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let silver = 2f64.sqrt() - 1.0;
    let o1 = orientation[0].to_f();
    let o2 = orientation[1].to_f();
    let o3 = orientation[2].to_f();
    let rho_lim = params.rho_limit();
    (0..params.n_bands)
        .map(|j| {
            let theta = std::f64::consts::PI * frac(o1 + 0.5 * o3 + j as f64 * golden);
            let rho = (frac(o2 + 0.5 * o3 + j as f64 * silver) - 0.5) * 2.0 * rho_lim;
            (theta, rho)
        })
        .collect()
}

/// Renders the pattern for one orientation: unit background plus `amplitude`
/// on every pixel within `band_width/2` of a band line.
pub fn synth_pattern<T: Real>(orientation: [T; 3], params: &PatternParams<T>) -> Result<Pattern<T>> {
    params.validate()?;
    let bands = band_parameters(orientation, params);
    let half = params.band_width.to_f() / 2.0;
    let cx = (params.width as f64 - 1.0) / 2.0;
    let cy = (params.height as f64 - 1.0) / 2.0;
    let mut out = vec![T::one(); params.pattern_len()];
    for (theta, rho) in bands {
        let (sin, cos) = theta.sin_cos();
        for r in 0..params.height {
            let y = r as f64 - cy;
            let row = &mut out[r * params.width..(r + 1) * params.width];
            for (c, v) in row.iter_mut().enumerate() {
                let x = c as f64 - cx;
                if (x * cos + y * sin - rho).abs() <= half {
                    *v += params.amplitude;
                }
            }
        }
    }
    Ok(out)
}

/// Patterns acquired at the sampled probe positions of a mask, in ascending
/// probe-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternStack<T: Real> {
    mask: SampleMask,
    pattern_height: usize,
    pattern_width: usize,
    patterns: Vec<Pattern<T>>,
}

impl<T: Real> PatternStack<T> {
    pub fn new(
        mask: SampleMask,
        pattern_height: usize,
        pattern_width: usize,
        patterns: Vec<Pattern<T>>,
    ) -> Result<Self> {
        if pattern_height == 0 || pattern_width == 0 {
            return Err(Error::ZeroGridDim {
                height: pattern_height,
                width: pattern_width,
            });
        }
        if patterns.len() != mask.sampled().len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} patterns", mask.sampled().len()),
                actual: format!("{} patterns", patterns.len()),
                context: "pattern stack",
            });
        }
        let len = pattern_height * pattern_width;
        if let Some(bad) = patterns.iter().position(|p| p.len() != len) {
            return Err(Error::ShapeMismatch {
                expected: format!("{len} pixels"),
                actual: format!("{} pixels", patterns[bad].len()),
                context: "pattern stack entry",
            });
        }
        Ok(Self {
            mask,
            pattern_height,
            pattern_width,
            patterns,
        })
    }

    pub fn mask(&self) -> &SampleMask {
        &self.mask
    }

    pub fn pattern_height(&self) -> usize {
        self.pattern_height
    }

    pub fn pattern_width(&self) -> usize {
        self.pattern_width
    }

    /// Probe index (into the map grid) of each stored pattern, ascending.
    pub fn probe_indices(&self) -> &[usize] {
        self.mask.sampled()
    }

    pub fn patterns(&self) -> &[Pattern<T>] {
        &self.patterns
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Same acquisition geometry with the pixel data replaced (noise models
    /// produce their output stacks through this).
    pub fn with_patterns(&self, patterns: Vec<Pattern<T>>) -> Result<Self> {
        Self::new(
            self.mask.clone(),
            self.pattern_height,
            self.pattern_width,
            patterns,
        )
    }
}

/// Synthesizes the pattern stack a masked acquisition would record over a
/// grain map. Every stored pattern equals `synth_pattern` of its pixel's
/// orientation; patterns are rendered once per grain and reused.
pub fn synth_stack<T: Real>(
    gm: &GrainMap<T>,
    mask: &SampleMask,
    params: &PatternParams<T>,
) -> Result<PatternStack<T>> {
    params.validate()?;
    if mask.grid() != gm.grid() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} mask", gm.grid().height(), gm.grid().width()),
            actual: format!("{}x{} mask", mask.grid().height(), mask.grid().width()),
            context: "synth_stack",
        });
    }
    let mut cache: HashMap<usize, Pattern<T>> = HashMap::new();
    let mut patterns = Vec::with_capacity(mask.sampled().len());
    for &l in mask.sampled() {
        let label = gm.labels()[l];
        if !cache.contains_key(&label) {
            let p = synth_pattern(gm.orientations()[label], params)?;
            cache.insert(label, p);
        }
        patterns.push(cache[&label].clone());
    }
    PatternStack::new(mask.clone(), params.height, params.width, patterns)
}
