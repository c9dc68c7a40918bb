//! Probe-position subsampling masks and the masking operator.
//!
//! Two acquisition strategies are modelled: uniform density sampling (UDS),
//! which picks positions uniformly at random without replacement, and line
//! hopping, where the probe follows an evenly spaced row template but hops at
//! random to the row above or below each planned position.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::map::{ProbeGrid, RgbMap, SampleMask, ScalarMap};
use crate::real::Real;

fn target_count(grid: ProbeGrid, rate: f64) -> Result<usize> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidRate(rate));
    }
    Ok(((rate * grid.count() as f64).floor() as usize).max(1))
}

/// Uniform density sampling: `max(1, ⌊rate·N⌋)` positions drawn uniformly
/// without replacement.
pub fn uds_mask(grid: ProbeGrid, rate: f64, seed: u64) -> Result<SampleMask> {
    let m = target_count(grid, rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampled = rand::seq::index::sample(&mut rng, grid.count(), m).into_vec();
    sampled.sort_unstable();
    SampleMask::new(grid, sampled, Vec::new())
}

/// Per-row columns of the line-hop template. Row `r` receives
/// `⌊(r+1)M/H⌋ − ⌊rM/H⌋` evenly spaced columns so the row totals sum to `M`.
pub fn linehop_template(grid: ProbeGrid, rate: f64) -> Result<Vec<Vec<usize>>> {
    let m = target_count(grid, rate)?;
    let (h, w) = (grid.height(), grid.width());
    let mut rows = Vec::with_capacity(h);
    for r in 0..h {
        let k = (r + 1) * m / h - r * m / h;
        let cols = (0..k).map(|i| (2 * i + 1) * w / (2 * k)).collect();
        rows.push(cols);
    }
    Ok(rows)
}

/// Line-hop sampling: each template position lands on its own row or an
/// adjacent one, chosen at random. Candidate rows are tried in shuffled
/// order and the first free cell wins, so near-duplicate hops rarely cost
/// coverage; the count stays within one grid width of `⌊rate·N⌋`.
pub fn linehop_mask(grid: ProbeGrid, rate: f64, seed: u64) -> Result<SampleMask> {
    let m = target_count(grid, rate)?;
    if m == grid.count() {
        return Ok(SampleMask::full(grid));
    }
    let template = linehop_template(grid, rate)?;
    let (h, w) = (grid.height(), grid.width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut occupied = vec![false; grid.count()];
    let mut sampled = Vec::with_capacity(m);
    for (r, cols) in template.iter().enumerate() {
        for &c in cols {
            let mut hops: [isize; 3] = [-1, 0, 1];
            hops.shuffle(&mut rng);
            for &dr in &hops {
                let row = (r as isize + dr).clamp(0, h as isize - 1) as usize;
                let l = row * w + c;
                if !occupied[l] {
                    occupied[l] = true;
                    sampled.push(l);
                    break;
                }
            }
        }
    }
    sampled.sort_unstable();
    SampleMask::new(grid, sampled, Vec::new())
}

pub fn effective_rate(mask: &SampleMask) -> f64 {
    mask.sampled().len() as f64 / mask.grid().count() as f64
}

/// Masking operator: sampled pixels are copied bit-exactly, the rest are
/// exactly zero.
pub fn apply_mask<T: Real>(map: &ScalarMap<T>, mask: &SampleMask) -> Result<ScalarMap<T>> {
    check_grids(map.grid(), mask.grid())?;
    let mut out = vec![T::zero(); map.grid().count()];
    for &l in mask.sampled() {
        out[l] = map.values()[l];
    }
    ScalarMap::new(map.grid(), out)
}

pub fn apply_mask_rgb<T: Real>(map: &RgbMap<T>, mask: &SampleMask) -> Result<RgbMap<T>> {
    check_grids(map.grid(), mask.grid())?;
    let mut out = RgbMap::black(map.grid());
    for &l in mask.sampled() {
        out.set_pixel(l, map.pixel(l));
    }
    Ok(out)
}

/// Zero-solution pixels: sampled positions whose value is exactly zero in
/// every channel (the indexer writes zero when it fails).
pub fn detect_zsp<T: Real>(map: &ScalarMap<T>, mask: &SampleMask) -> Result<Vec<usize>> {
    check_grids(map.grid(), mask.grid())?;
    Ok(mask
        .sampled()
        .iter()
        .copied()
        .filter(|&l| map.values()[l] == T::zero())
        .collect())
}

pub fn detect_zsp_rgb<T: Real>(map: &RgbMap<T>, mask: &SampleMask) -> Result<Vec<usize>> {
    check_grids(map.grid(), mask.grid())?;
    Ok(mask
        .sampled()
        .iter()
        .copied()
        .filter(|&l| map.pixel(l) == [T::zero(); 3])
        .collect())
}

/// Removes failed pixels from the sampled set and records them, so the
/// inpainting stage treats them as unsampled.
pub fn merge_zsp(mask: &SampleMask, zsp: &[usize]) -> Result<SampleMask> {
    for &l in zsp {
        if l >= mask.grid().count() {
            return Err(Error::IndexOutOfRange {
                index: l,
                count: mask.grid().count(),
            });
        }
    }
    let mut drop = zsp.to_vec();
    drop.sort_unstable();
    drop.dedup();
    let sampled = mask
        .sampled()
        .iter()
        .copied()
        .filter(|l| drop.binary_search(l).is_err())
        .collect();
    let mut merged = mask.zsp().to_vec();
    merged.extend_from_slice(&drop);
    merged.sort_unstable();
    merged.dedup();
    SampleMask::new(mask.grid(), sampled, merged)
}

fn check_grids(a: ProbeGrid, b: ProbeGrid) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", a.height(), a.width()),
            actual: format!("{}x{}", b.height(), b.width()),
            context: "map vs mask grid",
        });
    }
    Ok(())
}
