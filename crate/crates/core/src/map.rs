//! Probe-grid containers: scalar maps, RGB maps, and sample masks.
//!
//! A map assigns one value (or an RGB triple) to every probe position of a
//! rectangular scan grid. Positions are addressed either by `(row, col)` or
//! by a flat raster index `l = row * width + col`; the two addressings are a
//! bijection over `0..count()`.

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeGrid {
    height: usize,
    width: usize,
}

impl ProbeGrid {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ZeroGridDim { height, width });
        }
        Ok(Self { height, width })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> usize {
        self.height * self.width
    }

    pub fn index_of(&self, row: usize, col: usize) -> Result<usize> {
        if row >= self.height || col >= self.width {
            return Err(Error::IndexOutOfRange {
                index: row * self.width + col,
                count: self.count(),
            });
        }
        Ok(row * self.width + col)
    }

    pub fn coords_of(&self, index: usize) -> Result<(usize, usize)> {
        if index >= self.count() {
            return Err(Error::IndexOutOfRange {
                index,
                count: self.count(),
            });
        }
        Ok((index / self.width, index % self.width))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap<T: Real> {
    grid: ProbeGrid,
    values: Vec<T>,
}

impl<T: Real> ScalarMap<T> {
    pub fn new(grid: ProbeGrid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", grid.count()),
                actual: format!("{} values", values.len()),
                context: "scalar map",
            });
        }
        Ok(Self { grid, values })
    }

    pub fn filled(grid: ProbeGrid, value: T) -> Self {
        Self {
            grid,
            values: vec![value; grid.count()],
        }
    }

    pub fn grid(&self) -> ProbeGrid {
        self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }
}

/// RGB map with one triple per probe position; channels stored planar.
/// Channel values are held in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbMap<T: Real> {
    grid: ProbeGrid,
    channels: [Vec<T>; 3],
}

impl<T: Real> RgbMap<T> {
    pub fn new(grid: ProbeGrid, channels: [Vec<T>; 3]) -> Result<Self> {
        for ch in &channels {
            if ch.len() != grid.count() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} values per channel", grid.count()),
                    actual: format!("{} values", ch.len()),
                    context: "rgb map",
                });
            }
            for (i, &v) in ch.iter().enumerate() {
                if v < T::zero() || v > T::one() {
                    return Err(Error::InvalidParam(format!(
                        "rgb channel value {} at pixel {i} outside [0, 1]",
                        v.to_f()
                    )));
                }
            }
        }
        Ok(Self { grid, channels })
    }

    pub fn black(grid: ProbeGrid) -> Self {
        Self {
            grid,
            channels: [
                vec![T::zero(); grid.count()],
                vec![T::zero(); grid.count()],
                vec![T::zero(); grid.count()],
            ],
        }
    }

    pub fn grid(&self) -> ProbeGrid {
        self.grid
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.channels[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        &mut self.channels[c]
    }

    pub fn pixel(&self, index: usize) -> [T; 3] {
        [
            self.channels[0][index],
            self.channels[1][index],
            self.channels[2][index],
        ]
    }

    pub fn set_pixel(&mut self, index: usize, rgb: [T; 3]) {
        for c in 0..3 {
            self.channels[c][index] = rgb[c];
        }
    }
}

/// Set of sampled probe indices, plus the subset that failed to index.
///
/// `sampled` and `zsp` are kept sorted and duplicate-free. The two sets may
/// overlap until [`crate::sampling::merge_zsp`] folds the failures out of the
/// sampled set; after merging they are disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleMask {
    grid: ProbeGrid,
    sampled: Vec<usize>,
    zsp: Vec<usize>,
}

impl SampleMask {
    pub fn new(grid: ProbeGrid, sampled: Vec<usize>, zsp: Vec<usize>) -> Result<Self> {
        for set in [&sampled, &zsp] {
            if !set.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::InvalidMask("not strictly ascending"));
            }
            if let Some(&last) = set.last() {
                if last >= grid.count() {
                    return Err(Error::InvalidMask("index beyond grid"));
                }
            }
        }
        Ok(Self { grid, sampled, zsp })
    }

    /// Mask covering every probe position (acquisition without subsampling).
    pub fn full(grid: ProbeGrid) -> Self {
        Self {
            grid,
            sampled: (0..grid.count()).collect(),
            zsp: Vec::new(),
        }
    }

    pub fn grid(&self) -> ProbeGrid {
        self.grid
    }

    pub fn sampled(&self) -> &[usize] {
        &self.sampled
    }

    pub fn zsp(&self) -> &[usize] {
        &self.zsp
    }

    pub fn is_sampled(&self, index: usize) -> bool {
        self.sampled.binary_search(&index).is_ok()
    }

    /// Dense membership flags for the sampled set.
    pub fn sampled_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.grid.count()];
        for &l in &self.sampled {
            flags[l] = true;
        }
        flags
    }
}

/// Affine range mapping recorded by [`normalize_map`] so it can be undone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord<T: Real> {
    pub lo: T,
    pub hi: T,
    pub target_lo: T,
    pub target_hi: T,
    /// Set when the input was constant: the forward map sent everything to
    /// `target_lo` and the inverse restores the constant `lo`.
    pub degenerate: bool,
}

/// Affinely rescales a map's value range onto `[target_lo, target_hi]`.
pub fn normalize_map<T: Real>(
    map: &ScalarMap<T>,
    target_lo: T,
    target_hi: T,
) -> Result<(ScalarMap<T>, NormalizationRecord<T>)> {
    if target_hi <= target_lo {
        return Err(Error::InvalidParam(format!(
            "normalization target [{}, {}] is empty",
            target_lo.to_f(),
            target_hi.to_f()
        )));
    }
    let values = map.values();
    let lo = values.iter().copied().fold(T::infinity(), T::min);
    let hi = values.iter().copied().fold(T::neg_infinity(), T::max);
    if lo == hi {
        let record = NormalizationRecord {
            lo,
            hi,
            target_lo,
            target_hi,
            degenerate: true,
        };
        return Ok((ScalarMap::filled(map.grid(), target_lo), record));
    }
    let scale = (target_hi - target_lo) / (hi - lo);
    let mapped = values
        .iter()
        .map(|&v| target_lo + (v - lo) * scale)
        .collect();
    let record = NormalizationRecord {
        lo,
        hi,
        target_lo,
        target_hi,
        degenerate: false,
    };
    Ok((ScalarMap::new(map.grid(), mapped)?, record))
}

/// Affinely rescales a map so its values at the mask's sampled pixels span
/// `[target_lo, target_hi]`. Unsampled pixels are rescaled by the same affine
/// map but carry placeholder values, so they must not steer the range; this
/// is the normalization to use on partially observed maps.
pub fn normalize_map_masked<T: Real>(
    map: &ScalarMap<T>,
    mask: &SampleMask,
    target_lo: T,
    target_hi: T,
) -> Result<(ScalarMap<T>, NormalizationRecord<T>)> {
    if target_hi <= target_lo {
        return Err(Error::InvalidParam(format!(
            "normalization target [{}, {}] is empty",
            target_lo.to_f(),
            target_hi.to_f()
        )));
    }
    if mask.grid() != map.grid() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} mask", map.grid().height(), map.grid().width()),
            actual: format!("{}x{} mask", mask.grid().height(), mask.grid().width()),
            context: "normalize_map_masked",
        });
    }
    if mask.sampled().is_empty() {
        return Err(Error::NoObservations("mask samples no pixels"));
    }
    let values = map.values();
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for &l in mask.sampled() {
        lo = lo.min(values[l]);
        hi = hi.max(values[l]);
    }
    if lo == hi {
        let record = NormalizationRecord {
            lo,
            hi,
            target_lo,
            target_hi,
            degenerate: true,
        };
        return Ok((ScalarMap::filled(map.grid(), target_lo), record));
    }
    let scale = (target_hi - target_lo) / (hi - lo);
    let mapped = values
        .iter()
        .map(|&v| target_lo + (v - lo) * scale)
        .collect();
    let record = NormalizationRecord {
        lo,
        hi,
        target_lo,
        target_hi,
        degenerate: false,
    };
    Ok((ScalarMap::new(map.grid(), mapped)?, record))
}

/// Inverts [`normalize_map`] using the recorded range.
pub fn denormalize_map<T: Real>(
    map: &ScalarMap<T>,
    record: &NormalizationRecord<T>,
) -> Result<ScalarMap<T>> {
    if record.degenerate {
        return Ok(ScalarMap::filled(map.grid(), record.lo));
    }
    let scale = (record.hi - record.lo) / (record.target_hi - record.target_lo);
    let restored = map
        .values()
        .iter()
        .map(|&v| record.lo + (v - record.target_lo) * scale)
        .collect();
    ScalarMap::new(map.grid(), restored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn index_and_coords_agree_on_4x3() {
        let g = ProbeGrid::new(4, 3).unwrap();
        assert_eq!(g.index_of(2, 1).unwrap(), 7);
        assert_eq!(g.coords_of(7).unwrap(), (2, 1));
        assert!(g.index_of(4, 0).is_err());
        assert!(g.coords_of(12).is_err());
    }

    #[test]
    fn zero_sized_grids_are_rejected() {
        assert!(ProbeGrid::new(0, 5).is_err());
        assert!(ProbeGrid::new(5, 0).is_err());
    }

    #[test]
    fn normalize_constant_map_is_degenerate_and_restores() {
        let g = ProbeGrid::new(1, 3).unwrap();
        let m = ScalarMap::new(g, vec![2.0f64, 2.0, 2.0]).unwrap();
        let (n, rec) = normalize_map(&m, 0.0, 255.0).unwrap();
        assert!(rec.degenerate);
        assert_eq!(n.values(), &[0.0, 0.0, 0.0]);
        let back = denormalize_map(&n, &rec).unwrap();
        assert_eq!(back.values(), m.values());
    }

    #[test]
    fn normalize_maps_extremes_to_targets() {
        let g = ProbeGrid::new(1, 3).unwrap();
        let m = ScalarMap::new(g, vec![-1.0f64, 0.0, 3.0]).unwrap();
        let (n, rec) = normalize_map(&m, 0.0, 255.0).unwrap();
        assert_eq!(n.values()[0], 0.0);
        assert_eq!(n.values()[2], 255.0);
        assert!(!rec.degenerate);
        let back = denormalize_map(&n, &rec).unwrap();
        for (a, b) in back.values().iter().zip(m.values()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn rgb_map_rejects_out_of_range_channels() {
        let g = ProbeGrid::new(1, 2).unwrap();
        let ch = [vec![0.0f64, 1.1], vec![0.0, 0.0], vec![0.0, 0.0]];
        assert!(RgbMap::new(g, ch).is_err());
    }

    #[test]
    fn mask_rejects_unsorted_and_out_of_range() {
        let g = ProbeGrid::new(2, 2).unwrap();
        assert!(SampleMask::new(g, vec![1, 0], vec![]).is_err());
        assert!(SampleMask::new(g, vec![0, 0], vec![]).is_err());
        assert!(SampleMask::new(g, vec![0, 4], vec![]).is_err());
        let m = SampleMask::new(g, vec![0, 3], vec![1]).unwrap();
        assert!(m.is_sampled(3));
        assert!(!m.is_sampled(1));
        assert_eq!(m.sampled_flags(), vec![true, false, false, true]);
    }

    proptest! {
        #[test]
        fn probe_addressing_is_a_bijection(h in 1usize..40, w in 1usize..40) {
            let g = ProbeGrid::new(h, w).unwrap();
            for l in 0..g.count() {
                let (r, c) = g.coords_of(l).unwrap();
                prop_assert!(r < h && c < w);
                prop_assert_eq!(g.index_of(r, c).unwrap(), l);
            }
        }

        #[test]
        fn normalize_round_trips(
            values in proptest::collection::vec(-1e3f64..1e3, 4..64),
        ) {
            let w = values.len();
            let g = ProbeGrid::new(1, w).unwrap();
            let m = ScalarMap::new(g, values).unwrap();
            let (n, rec) = normalize_map(&m, 0.0, 255.0).unwrap();
            let back = denormalize_map(&n, &rec).unwrap();
            for (a, b) in back.values().iter().zip(m.values()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
