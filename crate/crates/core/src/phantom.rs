//! Synthetic ground-truth microstructures.
//!
//! A phantom is a Voronoi tessellation of the probe grid: `n_grains` seeded
//! sites label every pixel by its nearest site, and each grain carries a
//! random orientation triple in `[0,1]³` that acts both as its IPF color and
//! as the parameter of its diffraction patterns.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::map::{ProbeGrid, RgbMap, ScalarMap};
use crate::real::Real;

pub type Orientation<T> = [T; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct GrainMap<T: Real> {
    grid: ProbeGrid,
    labels: Vec<usize>,
    orientations: Vec<Orientation<T>>,
}

impl<T: Real> GrainMap<T> {
    pub fn grid(&self) -> ProbeGrid {
        self.grid
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn orientations(&self) -> &[Orientation<T>] {
        &self.orientations
    }

    pub fn n_grains(&self) -> usize {
        self.orientations.len()
    }

    pub fn orientation_at(&self, index: usize) -> Orientation<T> {
        self.orientations[self.labels[index]]
    }

    pub fn new(
        grid: ProbeGrid,
        labels: Vec<usize>,
        orientations: Vec<Orientation<T>>,
    ) -> Result<Self> {
        if labels.len() != grid.count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", grid.count()),
                actual: format!("{} labels", labels.len()),
                context: "grain map",
            });
        }
        if orientations.is_empty() {
            return Err(Error::EmptyInput("grain orientations"));
        }
        if labels.iter().any(|&l| l >= orientations.len()) {
            return Err(Error::InvalidParam("grain label beyond grain count".into()));
        }
        for (i, a) in orientations.iter().enumerate() {
            for b in orientations.iter().skip(i + 1) {
                if a == b {
                    return Err(Error::InvalidParam(format!(
                        "duplicate grain orientation at grain {i}"
                    )));
                }
            }
        }
        Ok(Self {
            grid,
            labels,
            orientations,
        })
    }
}

/// Orientation components are kept inside [0.1, 0.95] so no grain renders as
/// near-black in the IPF map; exact black is reserved for failed pixels.
fn draw_orientations<T: Real>(rng: &mut ChaCha8Rng, n: usize) -> Vec<Orientation<T>> {
    let mut out: Vec<Orientation<T>> = Vec::with_capacity(n);
    while out.len() < n {
        let candidate = [
            T::from_f(rng.gen_range(0.1..0.95)),
            T::from_f(rng.gen_range(0.1..0.95)),
            T::from_f(rng.gen_range(0.1..0.95)),
        ];
        if !out.contains(&candidate) {
            out.push(candidate);
        }
    }
    out
}

/// Labels every pixel by its nearest site (squared Euclidean distance in
/// integer arithmetic, ties broken toward the lower site index).
pub fn voronoi_from_sites<T: Real>(
    grid: ProbeGrid,
    sites: &[(usize, usize)],
    seed: u64,
) -> Result<GrainMap<T>> {
    if sites.is_empty() {
        return Err(Error::EmptyInput("voronoi sites"));
    }
    for &(r, c) in sites {
        grid.index_of(r, c)?;
    }
    let mut labels = vec![0usize; grid.count()];
    for l in 0..grid.count() {
        let (r, c) = grid.coords_of(l)?;
        let mut best = usize::MAX;
        let mut best_site = 0usize;
        for (k, &(sr, sc)) in sites.iter().enumerate() {
            let dr = r.abs_diff(sr);
            let dc = c.abs_diff(sc);
            let d = dr * dr + dc * dc;
            if d < best {
                best = d;
                best_site = k;
            }
        }
        labels[l] = best_site;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orientations = draw_orientations(&mut rng, sites.len());
    GrainMap::new(grid, labels, orientations)
}

/// Random Voronoi phantom: `n_grains` distinct sites drawn uniformly from the
/// grid, then nearest-site labeling.
pub fn voronoi_phantom<T: Real>(grid: ProbeGrid, n_grains: usize, seed: u64) -> Result<GrainMap<T>> {
    if n_grains == 0 || n_grains > grid.count() {
        return Err(Error::InvalidParam(format!(
            "n_grains {n_grains} outside 1..={}",
            grid.count()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites: Vec<(usize, usize)> = rand::seq::index::sample(&mut rng, grid.count(), n_grains)
        .into_iter()
        .map(|l| (l / grid.width(), l % grid.width()))
        .collect();
    // Re-seed orientation draws from the same stream position for one
    // deterministic generator per phantom.
    let mut labels = vec![0usize; grid.count()];
    for l in 0..grid.count() {
        let (r, c) = grid.coords_of(l)?;
        let mut best = usize::MAX;
        let mut best_site = 0usize;
        for (k, &(sr, sc)) in sites.iter().enumerate() {
            let dr = r.abs_diff(sr);
            let dc = c.abs_diff(sc);
            let d = dr * dr + dc * dc;
            if d < best {
                best = d;
                best_site = k;
            }
        }
        labels[l] = best_site;
    }
    let orientations = draw_orientations(&mut rng, n_grains);
    GrainMap::new(grid, labels, orientations)
}

/// Reference maps: band contrast is 1.0 inside grains and `boundary_contrast`
/// at pixels with at least one 4-neighbor in a different grain; the IPF map
/// colors each pixel by its grain's orientation triple.
pub fn phantom_maps<T: Real>(
    gm: &GrainMap<T>,
    boundary_contrast: T,
) -> Result<(ScalarMap<T>, RgbMap<T>)> {
    if boundary_contrast < T::zero() || boundary_contrast > T::one() {
        return Err(Error::InvalidParam(format!(
            "boundary contrast {} outside [0, 1]",
            boundary_contrast.to_f()
        )));
    }
    let grid = gm.grid();
    let (h, w) = (grid.height(), grid.width());
    let labels = gm.labels();
    let mut bc = vec![T::one(); grid.count()];
    let mut ipf = RgbMap::black(grid);
    for l in 0..grid.count() {
        let (r, c) = grid.coords_of(l)?;
        let here = labels[l];
        let boundary = (r > 0 && labels[l - w] != here)
            || (r + 1 < h && labels[l + w] != here)
            || (c > 0 && labels[l - 1] != here)
            || (c + 1 < w && labels[l + 1] != here);
        if boundary {
            bc[l] = boundary_contrast;
        }
        ipf.set_pixel(l, gm.orientations()[here]);
    }
    Ok((ScalarMap::new(grid, bc)?, ipf))
}
