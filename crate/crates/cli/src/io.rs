//! File formats: 8-bit PGM/PPM maps, JSON masks and sidecars, binary pattern
//! stacks, and the experiment CSV. Every writer has a matching reader and
//! written files round-trip bit-exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ebsdcs_core::map::{NormalizationRecord, ProbeGrid, RgbMap, SampleMask, ScalarMap};
use ebsdcs_core::pattern::PatternStack;
use ebsdcs_core::phantom::GrainMap;

use crate::config::ResultRow;

/// Writes a scalar map whose values already live in [0, 255] as binary PGM.
pub fn write_pgm(path: &Path, map: &ScalarMap<f64>) -> Result<()> {
    let grid = map.grid();
    let mut bytes = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    bytes.extend(map.values().iter().map(|&v| quantize_u8(v)));
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn read_pgm(path: &Path) -> Result<ScalarMap<f64>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (magic, dims, rest) = parse_netpbm_header(&bytes)?;
    if magic != "P5" {
        bail!("{}: expected P5, found {magic}", path.display());
    }
    let (w, h) = dims;
    if rest.len() != w * h {
        bail!("{}: payload is {} bytes, expected {}", path.display(), rest.len(), w * h);
    }
    let grid = ProbeGrid::new(h, w)?;
    Ok(ScalarMap::new(grid, rest.iter().map(|&b| b as f64).collect())?)
}

/// Writes an RGB map with channels in [0, 1] as binary PPM.
pub fn write_ppm(path: &Path, map: &RgbMap<f64>) -> Result<()> {
    let grid = map.grid();
    let mut bytes = format!("P6\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    for l in 0..grid.count() {
        for ch in 0..3 {
            bytes.push(quantize_u8(map.channel(ch)[l] * 255.0));
        }
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn read_ppm(path: &Path) -> Result<RgbMap<f64>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (magic, dims, rest) = parse_netpbm_header(&bytes)?;
    if magic != "P6" {
        bail!("{}: expected P6, found {magic}", path.display());
    }
    let (w, h) = dims;
    if rest.len() != 3 * w * h {
        bail!("{}: payload is {} bytes, expected {}", path.display(), rest.len(), 3 * w * h);
    }
    let grid = ProbeGrid::new(h, w)?;
    let mut channels = [
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
    ];
    for px in rest.chunks_exact(3) {
        for ch in 0..3 {
            channels[ch].push(px[ch] as f64 / 255.0);
        }
    }
    let [r, g, b] = channels;
    Ok(RgbMap::new(grid, [r, g, b])?)
}

fn quantize_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Parses "P5"/"P6", width, height, maxval; supports '#' comments. Returns
/// the payload slice after the single whitespace byte ending the header.
fn parse_netpbm_header(bytes: &[u8]) -> Result<(String, (usize, usize), &[u8])> {
    let mut pos = 0usize;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("truncated netpbm header");
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos])?.to_string());
    }
    // Exactly one whitespace byte separates maxval from the payload.
    pos += 1;
    if pos > bytes.len() {
        bail!("truncated netpbm header");
    }
    let w: usize = tokens[1].parse().context("netpbm width")?;
    let h: usize = tokens[2].parse().context("netpbm height")?;
    let maxval: usize = tokens[3].parse().context("netpbm maxval")?;
    if maxval != 255 {
        bail!("only maxval 255 is supported, found {maxval}");
    }
    Ok((tokens[0].clone(), (w, h), &bytes[pos..]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MaskFile {
    height: usize,
    width: usize,
    sampled: Vec<usize>,
    zsp: Vec<usize>,
}

pub fn write_mask(path: &Path, mask: &SampleMask) -> Result<()> {
    let file = MaskFile {
        height: mask.grid().height(),
        width: mask.grid().width(),
        sampled: mask.sampled().to_vec(),
        zsp: mask.zsp().to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_mask(path: &Path) -> Result<SampleMask> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: MaskFile = serde_json::from_str(&text)?;
    let grid = ProbeGrid::new(file.height, file.width)?;
    Ok(SampleMask::new(grid, file.sampled, file.zsp)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PhantomFile {
    height: usize,
    width: usize,
    labels: Vec<usize>,
    orientations: Vec<[f64; 3]>,
}

pub fn write_phantom(path: &Path, gm: &GrainMap<f64>) -> Result<()> {
    let file = PhantomFile {
        height: gm.grid().height(),
        width: gm.grid().width(),
        labels: gm.labels().to_vec(),
        orientations: gm.orientations().to_vec(),
    };
    let mut text = serde_json::to_string(&file)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_phantom(path: &Path) -> Result<GrainMap<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: PhantomFile = serde_json::from_str(&text)?;
    let grid = ProbeGrid::new(file.height, file.width)?;
    Ok(GrainMap::new(grid, file.labels, file.orientations)?)
}

const STACK_MAGIC: &[u8; 4] = b"EBCS";
const STACK_VERSION: u16 = 1;

/// Binary pattern stack: magic "EBCS", u16 version, u32 probe-grid height
/// and width, u32 pattern height and width, u64 pattern count, then each
/// pattern as little-endian f32 values in ascending probe-index order. The
/// probe indices themselves live in the companion mask JSON.
pub fn write_stack(path: &Path, stack: &PatternStack<f64>) -> Result<()> {
    let grid = stack.mask().grid();
    let mut bytes = Vec::with_capacity(
        30 + stack.len() * stack.pattern_height() * stack.pattern_width() * 4,
    );
    bytes.extend_from_slice(STACK_MAGIC);
    bytes.extend_from_slice(&STACK_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    bytes.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    bytes.extend_from_slice(&(stack.pattern_height() as u32).to_le_bytes());
    bytes.extend_from_slice(&(stack.pattern_width() as u32).to_le_bytes());
    bytes.extend_from_slice(&(stack.len() as u64).to_le_bytes());
    for pattern in stack.patterns() {
        for &v in pattern {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn read_stack(path: &Path, mask: &SampleMask) -> Result<PatternStack<f64>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = std::io::BufReader::new(file);
    let mut head = [0u8; 30];
    reader.read_exact(&mut head).context("stack header")?;
    if &head[0..4] != STACK_MAGIC {
        bail!("{}: not a pattern stack", path.display());
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != STACK_VERSION {
        bail!("{}: unsupported stack version {version}", path.display());
    }
    let grid_h = u32::from_le_bytes(head[6..10].try_into().unwrap()) as usize;
    let grid_w = u32::from_le_bytes(head[10..14].try_into().unwrap()) as usize;
    let pat_h = u32::from_le_bytes(head[14..18].try_into().unwrap()) as usize;
    let pat_w = u32::from_le_bytes(head[18..22].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(head[22..30].try_into().unwrap()) as usize;
    let grid = mask.grid();
    if grid.height() != grid_h || grid.width() != grid_w {
        bail!(
            "{}: stack grid {}x{} does not match mask grid {}x{}",
            path.display(),
            grid_h,
            grid_w,
            grid.height(),
            grid.width()
        );
    }
    if mask.sampled().len() != count {
        bail!(
            "{}: stack holds {} patterns but the mask samples {}",
            path.display(),
            count,
            mask.sampled().len()
        );
    }
    let n = pat_h * pat_w;
    let mut payload = vec![0u8; count * n * 4];
    reader.read_exact(&mut payload).context("stack payload")?;
    let mut trailing = Vec::new();
    reader.read_to_end(&mut trailing)?;
    if !trailing.is_empty() {
        bail!("{}: {} trailing bytes", path.display(), trailing.len());
    }
    let mut patterns = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(n * 4) {
        patterns.push(
            chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
        );
    }
    Ok(PatternStack::new(mask.clone(), pat_h, pat_w, patterns)?)
}

/// Provenance and recovery data stored next to each map file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapSidecar {
    pub kind: String,
    pub height: usize,
    pub width: usize,
    pub normalization: Option<SidecarNormalization>,
    pub mask_file: Option<String>,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SidecarNormalization {
    pub lo: f64,
    pub hi: f64,
    pub target_lo: f64,
    pub target_hi: f64,
    pub degenerate: bool,
}

impl From<&NormalizationRecord<f64>> for SidecarNormalization {
    fn from(r: &NormalizationRecord<f64>) -> Self {
        Self {
            lo: r.lo,
            hi: r.hi,
            target_lo: r.target_lo,
            target_hi: r.target_hi,
            degenerate: r.degenerate,
        }
    }
}

pub fn write_sidecar(path: &Path, sidecar: &MapSidecar) -> Result<()> {
    let mut text = serde_json::to_string_pretty(sidecar)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_sidecar(path: &Path) -> Result<MapSidecar> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub const CSV_HEADER: &str = "study,seed,noise_kind,target_snr_db,measured_snr_db,strategy,rate,effective_rate,map_kind,zsp_correction,hit_rate,hit_rate_sampled,normalized_error,ssim,wall_time_s";

pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut out = String::with_capacity(rows.len() * 96 + 128);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    let mut file =
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Drops the trailing wall-time column from every line, for determinism
/// comparisons across reruns.
pub fn csv_without_timing(text: &str) -> String {
    text.lines()
        .map(|line| match line.rfind(',') {
            Some(i) => &line[..i],
            None => line,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ebsdcs_core::pattern::PatternParams;
    use ebsdcs_core::phantom::{phantom_maps, voronoi_phantom};
    use ebsdcs_core::sampling::uds_mask;

    fn grid() -> ProbeGrid {
        ProbeGrid::new(12, 9).unwrap()
    }

    #[test]
    fn pgm_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let values: Vec<f64> = (0..108).map(|i| (i * 7 % 256) as f64).collect();
        let map = ScalarMap::new(grid(), values).unwrap();
        write_pgm(&path, &map).unwrap();
        let bytes = fs::read(&path).unwrap();
        let loaded = read_pgm(&path).unwrap();
        assert_eq!(loaded.values(), map.values());
        write_pgm(&path, &loaded).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn ppm_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ppm");
        let gm = voronoi_phantom::<f64>(grid(), 4, 3).unwrap();
        let (_, ipf) = phantom_maps(&gm, 0.2).unwrap();
        write_ppm(&path, &ipf).unwrap();
        let bytes = fs::read(&path).unwrap();
        let loaded = read_ppm(&path).unwrap();
        write_ppm(&path, &loaded).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
        // Quantization error stays under half a step.
        for ch in 0..3 {
            for (a, b) in ipf.channel(ch).iter().zip(loaded.channel(ch)) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn mask_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.json");
        let mask = uds_mask(grid(), 0.4, 9).unwrap();
        write_mask(&path, &mask).unwrap();
        let loaded = read_mask(&path).unwrap();
        assert_eq!(loaded.sampled(), mask.sampled());
        assert_eq!(loaded.grid(), mask.grid());
        let bytes = fs::read(&path).unwrap();
        write_mask(&path, &loaded).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn stack_round_trips_through_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stack.ebcs");
        let g = ProbeGrid::new(6, 6).unwrap();
        let gm = voronoi_phantom::<f64>(g, 3, 5).unwrap();
        let mask = uds_mask(g, 0.5, 2).unwrap();
        let pp = PatternParams {
            height: 8,
            width: 6,
            ..PatternParams::default()
        };
        let stack = ebsdcs_core::pattern::synth_stack(&gm, &mask, &pp).unwrap();
        write_stack(&path, &stack).unwrap();
        let bytes = fs::read(&path).unwrap();
        let loaded = read_stack(&path, &mask).unwrap();
        assert_eq!(loaded.len(), stack.len());
        write_stack(&path, &loaded).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
        for (a, b) in stack.patterns().iter().zip(loaded.patterns()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn stack_rejects_wrong_mask() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stack.ebcs");
        let g = ProbeGrid::new(6, 6).unwrap();
        let gm = voronoi_phantom::<f64>(g, 3, 5).unwrap();
        let mask = uds_mask(g, 0.5, 2).unwrap();
        let stack =
            ebsdcs_core::pattern::synth_stack(&gm, &mask, &PatternParams::default()).unwrap();
        write_stack(&path, &stack).unwrap();
        let other = uds_mask(g, 0.25, 2).unwrap();
        assert!(read_stack(&path, &other).is_err());
    }

    #[test]
    fn timing_column_is_stripped() {
        let text = "a,b,wall_time_s\n1,2,0.123\n3,4,9.999";
        assert_eq!(csv_without_timing(text), "a,b\n1,2\n3,4");
    }
}
