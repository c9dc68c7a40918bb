//! Pattern indexing against a library of candidate orientations.
//!
//! Each library entry carries the band-line signature its orientation would
//! produce. A pattern is indexed by detecting band peaks in its (background
//! flattened) Hough accumulator and picking the entry whose signature the
//! detected bands match best under a chamfer distance. Patterns yielding too
//! few bands are declared zero-solution pixels and render as exact black.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hough::{detect_bands, hough_transform, Band, HoughAccumulator};
use crate::map::{ProbeGrid, RgbMap, SampleMask, ScalarMap};
use crate::pattern::{band_parameters, Pattern, PatternParams, PatternStack};
use crate::phantom::GrainMap;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexParams {
    pub n_theta: usize,
    pub n_rho: usize,
    /// Peak-picking stops after this many bands.
    pub max_bands: usize,
    /// Peaks below this prominence are noise, not bands.
    pub min_prominence: f64,
    /// Patterns with fewer detected bands than this fail to index.
    pub min_bands_required: usize,
    /// Smallest pairwise signature distance a library must keep; below it,
    /// detection quantization could flip matches between two entries.
    pub min_signature_separation: f64,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            n_theta: 40,
            n_rho: 40,
            max_bands: 11,
            min_prominence: 4.0,
            min_bands_required: 3,
            // Seed scans put misindexed noiseless patterns only below 0.09
            // separation and perfect recovery at 0.11+; 0.12 splits them.
            min_signature_separation: 0.12,
        }
    }
}

/// Distance between two band lines, normalized so a full θ half-turn and a
/// full ρ sweep both count as 1. A line crossing θ = 0 reappears at θ = π
/// with ρ negated, so the wrapped pairing is also tried.
pub fn band_distance(a: (f64, f64), b: (f64, f64), rho_max: f64) -> f64 {
    let dt = (a.0 - b.0).abs();
    let direct = dt / std::f64::consts::PI + (a.1 - b.1).abs() / (2.0 * rho_max);
    let wrapped =
        (std::f64::consts::PI - dt) / std::f64::consts::PI + (a.1 + b.1).abs() / (2.0 * rho_max);
    direct.min(wrapped)
}

/// Sum over `detected` of the distance to its nearest signature band.
pub fn chamfer_distance(detected: &[(f64, f64)], signature: &[(f64, f64)], rho_max: f64) -> f64 {
    detected
        .iter()
        .map(|&d| {
            signature
                .iter()
                .map(|&s| band_distance(d, s, rho_max))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct OrientationLibrary<T: Real> {
    orientations: Vec<[T; 3]>,
    signatures: Vec<Vec<(f64, f64)>>,
    pattern_params: PatternParams<T>,
    index_params: IndexParams,
    rho_max: f64,
    unit_acc: HoughAccumulator<T>,
}

impl<T: Real> OrientationLibrary<T> {
    /// Builds signatures for the candidate orientations and verifies they
    /// stay distinguishable at the configured Hough resolution.
    pub fn new(
        orientations: Vec<[T; 3]>,
        pattern_params: PatternParams<T>,
        index_params: IndexParams,
    ) -> Result<Self> {
        if orientations.is_empty() {
            return Err(Error::EmptyLibrary);
        }
        pattern_params.validate()?;
        let signatures: Vec<Vec<(f64, f64)>> = orientations
            .iter()
            .map(|&o| band_parameters(o, &pattern_params))
            .collect();
        let h = pattern_params.height as f64;
        let w = pattern_params.width as f64;
        let rho_max = (h * h + w * w).sqrt() / 2.0;
        for i in 0..signatures.len() {
            for j in 0..signatures.len() {
                if i == j {
                    continue;
                }
                let d = chamfer_distance(&signatures[i], &signatures[j], rho_max);
                if d < index_params.min_signature_separation {
                    return Err(Error::DegenerateLibrary(format!(
                        "entries {i} and {j} are {d:.4} apart, below {}",
                        index_params.min_signature_separation
                    )));
                }
            }
        }
        let ones = vec![T::one(); pattern_params.pattern_len()];
        let unit_acc = hough_transform(
            &ones,
            pattern_params.height,
            pattern_params.width,
            index_params.n_theta,
            index_params.n_rho,
        )?;
        Ok(Self {
            orientations,
            signatures,
            pattern_params,
            index_params,
            rho_max,
            unit_acc,
        })
    }

    /// Library of every grain orientation in a phantom.
    pub fn from_grain_map(
        gm: &GrainMap<T>,
        pattern_params: PatternParams<T>,
        index_params: IndexParams,
    ) -> Result<Self> {
        Self::new(gm.orientations().to_vec(), pattern_params, index_params)
    }

    pub fn orientations(&self) -> &[[T; 3]] {
        &self.orientations
    }

    pub fn signature(&self, entry: usize) -> &[(f64, f64)] {
        &self.signatures[entry]
    }

    pub fn pattern_params(&self) -> &PatternParams<T> {
        &self.pattern_params
    }

    pub fn index_params(&self) -> &IndexParams {
        &self.index_params
    }

    pub fn len(&self) -> usize {
        self.orientations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orientations.is_empty()
    }

    /// Entry whose signature is chamfer-nearest to the detected bands, with
    /// the distance. Ties take the lower entry index.
    pub fn match_bands(&self, bands: &[Band<T>]) -> Option<(usize, f64)> {
        if bands.is_empty() {
            return None;
        }
        let detected: Vec<(f64, f64)> = bands.iter().map(|b| (b.theta.to_f(), b.rho.to_f())).collect();
        let mut best: Option<(usize, f64)> = None;
        for (k, sig) in self.signatures.iter().enumerate() {
            let d = chamfer_distance(&detected, sig, self.rho_max);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        best
    }
}

/// Mean intensity over the pixels within `band_width/2` of any band line,
/// minus the mean over the remaining pixels, floored at zero. Zero when no
/// bands are given or either region is empty.
pub fn band_contrast<T: Real>(
    pattern: &[T],
    height: usize,
    width: usize,
    bands: &[Band<T>],
    band_width: T,
) -> Result<T> {
    if height == 0 || width == 0 {
        return Err(Error::ZeroGridDim { height, width });
    }
    if pattern.len() != height * width {
        return Err(Error::ShapeMismatch {
            expected: format!("{} pixels", height * width),
            actual: format!("{} pixels", pattern.len()),
            context: "band_contrast",
        });
    }
    if bands.is_empty() {
        return Ok(T::zero());
    }
    let lines: Vec<(f64, f64, f64)> = bands
        .iter()
        .map(|b| {
            let (sin, cos) = b.theta.to_f().sin_cos();
            (cos, sin, b.rho.to_f())
        })
        .collect();
    let half = band_width.to_f() / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let (mut on_sum, mut on_n, mut off_sum, mut off_n) = (0.0f64, 0usize, 0.0f64, 0usize);
    for r in 0..height {
        let y = r as f64 - cy;
        for c in 0..width {
            let x = c as f64 - cx;
            let on = lines
                .iter()
                .any(|&(cos, sin, rho)| (x * cos + y * sin - rho).abs() <= half);
            let v = pattern[r * width + c].to_f();
            if on {
                on_sum += v;
                on_n += 1;
            } else {
                off_sum += v;
                off_n += 1;
            }
        }
    }
    if on_n == 0 || off_n == 0 {
        return Ok(T::zero());
    }
    let contrast = on_sum / on_n as f64 - off_sum / off_n as f64;
    Ok(T::from_f(contrast.max(0.0)))
}

/// Outcome of indexing one pattern: the matched library entry, the pattern's
/// band contrast, and the detected bands themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternIndex<T: Real> {
    pub orientation: usize,
    pub band_contrast: T,
    pub bands: Vec<Band<T>>,
}

/// Indexes a single pattern; `None` marks a zero-solution pixel (too few
/// detected bands to match).
///
/// The accumulator first has `mean(pattern)` times the unit-pattern
/// accumulator subtracted: a constant background concentrates mass into
/// central ρ bins, and that ridge would otherwise out-vote real band peaks.
pub fn index_pattern<T: Real>(
    pattern: &[T],
    lib: &OrientationLibrary<T>,
) -> Result<Option<PatternIndex<T>>> {
    let pp = &lib.pattern_params;
    let ip = &lib.index_params;
    let mut acc = hough_transform(pattern, pp.height, pp.width, ip.n_theta, ip.n_rho)?;
    let mean = pattern.iter().map(|v| v.to_f()).sum::<f64>() / pattern.len() as f64;
    acc.subtract_scaled(&lib.unit_acc, T::from_f(mean))?;
    let bands = detect_bands(&acc, ip.max_bands, ip.min_prominence);
    if bands.len() < ip.min_bands_required {
        return Ok(None);
    }
    let bc = band_contrast(pattern, pp.height, pp.width, &bands, pp.band_width)?;
    let (entry, _) = lib
        .match_bands(&bands)
        .expect("bands are nonempty, library is nonempty");
    Ok(Some(PatternIndex {
        orientation: entry,
        band_contrast: bc,
        bands,
    }))
}

/// Indexed maps for a whole acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexingResult<T: Real> {
    /// Band contrast per probe; unsampled and failed pixels are exact zero.
    pub bc: ScalarMap<T>,
    /// Orientation color per probe; unsampled and failed pixels are black.
    pub ipf: RgbMap<T>,
    /// The acquisition mask with the failed pixels recorded as ZSPs.
    pub mask: SampleMask,
    /// `1 − |zsp| / N_p` over all probe positions.
    pub hit_rate: f64,
}

/// Indexes every pattern of a stack (in parallel; results are positional, so
/// worker count does not change the output).
pub fn index_stack<T: Real>(
    stack: &PatternStack<T>,
    lib: &OrientationLibrary<T>,
) -> Result<IndexingResult<T>> {
    let pp = &lib.pattern_params;
    if stack.pattern_height() != pp.height || stack.pattern_width() != pp.width {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} patterns", pp.height, pp.width),
            actual: format!(
                "{}x{} patterns",
                stack.pattern_height(),
                stack.pattern_width()
            ),
            context: "index_stack",
        });
    }
    let indexed: Result<Vec<Option<PatternIndex<T>>>> = stack
        .patterns()
        .par_iter()
        .map(|p: &Pattern<T>| index_pattern(p, lib))
        .collect();
    let indexed = indexed?;
    let grid: ProbeGrid = stack.mask().grid();
    let mut bc = ScalarMap::filled(grid, T::zero());
    let mut ipf = RgbMap::black(grid);
    let mut zsp = Vec::new();
    for (&l, item) in stack.probe_indices().iter().zip(&indexed) {
        match item {
            Some(pi) => {
                bc.values_mut()[l] = pi.band_contrast;
                ipf.set_pixel(l, lib.orientations[pi.orientation]);
            }
            None => zsp.push(l),
        }
    }
    let hit_rate = 1.0 - zsp.len() as f64 / grid.count() as f64;
    let mask = SampleMask::new(grid, stack.probe_indices().to_vec(), zsp)?;
    Ok(IndexingResult {
        bc,
        ipf,
        mask,
        hit_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::ProbeGrid;
    use crate::pattern::{synth_pattern, synth_stack};
    use crate::phantom::{phantom_maps, voronoi_phantom};
    use crate::sampling::detect_zsp_rgb;

    fn default_pp() -> PatternParams<f64> {
        PatternParams::default()
    }

    #[test]
    fn band_distance_wraps_across_theta() {
        let near_zero = (0.01, 5.0);
        let near_pi = (std::f64::consts::PI - 0.01, -5.0);
        let d = band_distance(near_zero, near_pi, 40.0);
        assert!(d < 0.01, "wrapped distance {d}");
        let far = band_distance((0.01, 5.0), (std::f64::consts::PI / 2.0, 5.0), 40.0);
        let expected = (std::f64::consts::PI / 2.0 - 0.01) / std::f64::consts::PI;
        assert!((far - expected).abs() < 1e-12);
    }

    #[test]
    fn chamfer_of_a_signature_with_itself_is_zero() {
        let sig = band_parameters([0.3, 0.6, 0.2], &default_pp());
        assert_eq!(chamfer_distance(&sig, &sig, 40.0), 0.0);
    }

    #[test]
    fn near_duplicate_orientations_are_degenerate() {
        let a = [0.3, 0.6, 0.2];
        let b = [0.3 + 1e-4, 0.6, 0.2];
        let err = OrientationLibrary::new(vec![a, b], default_pp(), IndexParams::default());
        assert!(matches!(err, Err(Error::DegenerateLibrary(_))));
    }

    #[test]
    fn empty_library_is_rejected() {
        let err = OrientationLibrary::<f64>::new(Vec::new(), default_pp(), IndexParams::default());
        assert!(matches!(err, Err(Error::EmptyLibrary)));
    }

    #[test]
    fn noiseless_patterns_index_to_their_own_entry() {
        let g = ProbeGrid::new(16, 16).unwrap();
        let gm = voronoi_phantom::<f64>(g, 8, 2).unwrap();
        let lib =
            OrientationLibrary::from_grain_map(&gm, default_pp(), IndexParams::default()).unwrap();
        for (k, &o) in gm.orientations().iter().enumerate() {
            let p = synth_pattern(o, &default_pp()).unwrap();
            let idx = index_pattern(&p, &lib).unwrap().expect("pattern indexes");
            assert_eq!(idx.orientation, k, "entry {k}");
            assert!(idx.bands.len() >= 3);
        }
    }

    #[test]
    fn all_zero_pattern_fails_to_index() {
        let lib = OrientationLibrary::new(
            vec![[0.3, 0.6, 0.2], [0.7, 0.2, 0.8]],
            default_pp(),
            IndexParams::default(),
        )
        .unwrap();
        let p = vec![0.0f64; default_pp().pattern_len()];
        assert!(index_pattern(&p, &lib).unwrap().is_none());
    }

    #[test]
    fn exact_band_lines_recover_the_amplitude() {
        let pp = default_pp();
        let o = [0.3, 0.6, 0.2];
        let p = synth_pattern(o, &pp).unwrap();
        let bands: Vec<Band<f64>> = band_parameters(o, &pp)
            .into_iter()
            .map(|(theta, rho)| Band {
                theta,
                rho,
                strength: 1.0,
            })
            .collect();
        let bc = band_contrast(&p, pp.height, pp.width, &bands, pp.band_width).unwrap();
        // Band crossings raise the on-support mean above the single-band
        // amplitude, so the contrast lands slightly above it, never below.
        let a = pp.amplitude;
        assert!(bc >= a - 1e-9 && bc <= 1.25 * a, "contrast {bc} vs amplitude {a}");
    }

    #[test]
    fn no_bands_means_zero_contrast() {
        let pp = default_pp();
        let p = synth_pattern([0.3, 0.6, 0.2], &pp).unwrap();
        let bc = band_contrast(&p, pp.height, pp.width, &[], pp.band_width).unwrap();
        assert_eq!(bc, 0.0);
    }

    #[test]
    fn detected_bands_recover_most_of_the_amplitude() {
        let pp = default_pp();
        let lib = OrientationLibrary::new(
            vec![[0.3, 0.6, 0.2], [0.7, 0.2, 0.8]],
            pp,
            IndexParams::default(),
        )
        .unwrap();
        let p = synth_pattern([0.3, 0.6, 0.2], &pp).unwrap();
        let idx = index_pattern(&p, &lib).unwrap().unwrap();
        let a = pp.amplitude;
        assert!(
            idx.band_contrast > 0.5 * a && idx.band_contrast < 1.5 * a,
            "detected-band contrast {}",
            idx.band_contrast
        );
    }

    #[test]
    fn full_noiseless_stack_reproduces_the_phantom() {
        let g = ProbeGrid::new(12, 10).unwrap();
        let gm = voronoi_phantom::<f64>(g, 4, 11).unwrap();
        let pp = default_pp();
        let lib = OrientationLibrary::from_grain_map(&gm, pp, IndexParams::default()).unwrap();
        let stack = synth_stack(&gm, &SampleMask::full(g), &pp).unwrap();
        let out = index_stack(&stack, &lib).unwrap();
        assert_eq!(out.hit_rate, 1.0);
        assert!(out.mask.zsp().is_empty());
        let (_, ipf_ref) = phantom_maps(&gm, 0.2).unwrap();
        for ch in 0..3 {
            assert_eq!(out.ipf.channel(ch), ipf_ref.channel(ch), "channel {ch}");
        }
        assert!(out.bc.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn self_consistency_survives_a_resolution_change() {
        let g = ProbeGrid::new(8, 8).unwrap();
        let gm = voronoi_phantom::<f64>(g, 4, 11).unwrap();
        let pp = default_pp();
        let ip = IndexParams {
            n_theta: 60,
            n_rho: 50,
            ..IndexParams::default()
        };
        let lib = OrientationLibrary::from_grain_map(&gm, pp, ip).unwrap();
        let stack = synth_stack(&gm, &SampleMask::full(g), &pp).unwrap();
        let out = index_stack(&stack, &lib).unwrap();
        assert_eq!(out.hit_rate, 1.0);
        let (_, ipf_ref) = phantom_maps(&gm, 0.2).unwrap();
        for ch in 0..3 {
            assert_eq!(out.ipf.channel(ch), ipf_ref.channel(ch), "channel {ch}");
        }
    }

    #[test]
    fn dead_patterns_become_zsps_with_black_pixels() {
        let g = ProbeGrid::new(3, 3).unwrap();
        let gm = voronoi_phantom::<f64>(g, 2, 7).unwrap();
        let pp = default_pp();
        let lib = OrientationLibrary::from_grain_map(&gm, pp, IndexParams::default()).unwrap();
        let stack = synth_stack(&gm, &SampleMask::full(g), &pp).unwrap();
        let mut patterns = stack.patterns().to_vec();
        patterns[4] = vec![0.0; pp.pattern_len()];
        let broken = stack.with_patterns(patterns).unwrap();
        let out = index_stack(&broken, &lib).unwrap();
        assert_eq!(out.mask.zsp(), &[4]);
        assert_eq!(out.hit_rate, 1.0 - 1.0 / 9.0);
        assert_eq!(out.ipf.pixel(4), [0.0; 3]);
        assert_eq!(out.bc.values()[4], 0.0);
        // The ZSP record and the black pixels of the IPF map agree.
        let zsp = detect_zsp_rgb(&out.ipf, &out.mask).unwrap();
        assert_eq!(zsp, out.mask.zsp());
    }

    #[test]
    fn indexing_is_deterministic() {
        let g = ProbeGrid::new(6, 6).unwrap();
        let gm = voronoi_phantom::<f64>(g, 3, 5).unwrap();
        let pp = default_pp();
        let lib = OrientationLibrary::from_grain_map(&gm, pp, IndexParams::default()).unwrap();
        let stack = synth_stack(&gm, &SampleMask::full(g), &pp).unwrap();
        let a = index_stack(&stack, &lib).unwrap();
        let b = index_stack(&stack, &lib).unwrap();
        assert_eq!(a, b);
    }
}
