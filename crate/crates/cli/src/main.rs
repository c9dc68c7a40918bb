//! Command line driver: single-step subcommands for each pipeline stage plus
//! the sweep and failed-pixel studies. Every command prints one JSON summary
//! line on success; failures print `{"error": ...}` on stderr and exit
//! nonzero.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ebsdcs_cli::config::{ExperimentConfig, NoiseKindCfg, StrategyCfg};
use ebsdcs_cli::experiments::{run_subsampling_sweep, run_zsp_correction};
use ebsdcs_cli::io::{self, MapSidecar};
use ebsdcs_core::bpfa::{inpaint_rgb, inpaint_scalar, select_patch_shape, BpfaParams};
use ebsdcs_core::indexing::{index_stack, IndexParams, OrientationLibrary};
use ebsdcs_core::map::{normalize_map, ProbeGrid, SampleMask};
use ebsdcs_core::metrics::{normalized_error, normalized_error_rgb, ssim, ssim_rgb, SsimOptions};
use ebsdcs_core::noise::{corrupt_stack, measure_stack_snr, NoiseSpec};
use ebsdcs_core::pattern::{synth_stack, PatternParams};
use ebsdcs_core::phantom::{phantom_maps, voronoi_phantom};
use ebsdcs_core::sampling::{effective_rate, linehop_mask, merge_zsp, uds_mask};

#[derive(Parser)]
#[command(name = "ebsdcs", about = "Compressive EBSD simulation toolkit")]
struct Cli {
    /// Base seed for any random draw the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 keeps the default pool size.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PatternArgs {
    #[arg(long, default_value_t = 64)]
    pattern_height: usize,
    #[arg(long, default_value_t = 48)]
    pattern_width: usize,
    #[arg(long, default_value_t = 5)]
    bands: usize,
    #[arg(long, default_value_t = 3.0)]
    band_width: f64,
    #[arg(long, default_value_t = 2.0)]
    amplitude: f64,
}

impl PatternArgs {
    fn params(&self) -> PatternParams<f64> {
        PatternParams {
            height: self.pattern_height,
            width: self.pattern_width,
            n_bands: self.bands,
            band_width: self.band_width,
            amplitude: self.amplitude,
        }
    }
}

#[derive(Args)]
struct BpfaArgs {
    #[arg(long, default_value_t = 25)]
    atoms: usize,
    #[arg(long, default_value_t = 4)]
    sparsity: usize,
    #[arg(long, default_value_t = 1024)]
    batch_size: usize,
    #[arg(long, default_value_t = 4)]
    epochs: usize,
    #[arg(long, default_value_t = 3)]
    em_iters: usize,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
}

impl BpfaArgs {
    fn params(&self, seed: u64) -> BpfaParams {
        BpfaParams {
            n_atoms: self.atoms,
            sparsity: self.sparsity,
            batch_size: self.batch_size,
            epochs: self.epochs,
            em_iters_per_batch: self.em_iters,
            restarts: self.restarts,
            seed,
            ..BpfaParams::default()
        }
    }
}

/// Shared flags of the study subcommands; explicit flags override the
/// config file field by field.
#[derive(Args)]
struct StudyArgs {
    /// Experiment configuration JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    grains: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    noise_kinds: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    snrs_db: Option<Vec<f64>>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    atoms: Option<usize>,
    #[arg(long)]
    sparsity: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    em_iters: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    chunk_size: Option<usize>,
    /// Copy observed probe values back over the inpainted maps.
    #[arg(long)]
    reimpose: bool,
}

impl StudyArgs {
    fn build(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.height {
            config.height = v;
        }
        if let Some(v) = self.width {
            config.width = v;
        }
        if let Some(v) = self.grains {
            config.n_grains = v;
        }
        if let Some(v) = &self.rates {
            config.rates = v.clone();
        }
        if let Some(v) = &self.seeds {
            config.seeds = v.clone();
        }
        if let Some(kinds) = &self.noise_kinds {
            config.noise_kinds = kinds
                .iter()
                .map(|s| NoiseKindCfg::parse(s))
                .collect::<Result<_>>()?;
        }
        if let Some(v) = &self.snrs_db {
            config.snrs_db = v.clone();
        }
        if let Some(s) = &self.strategy {
            config.strategy = StrategyCfg::parse(s)?;
        }
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.atoms {
            config.n_atoms = v;
        }
        if let Some(v) = self.sparsity {
            config.sparsity = v;
        }
        if let Some(v) = self.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = self.em_iters {
            config.em_iters_per_batch = v;
        }
        if let Some(v) = self.restarts {
            config.restarts = v;
        }
        if let Some(v) = self.chunk_size {
            config.chunk_size = v;
        }
        if self.reimpose {
            config.reimpose_samples = true;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Voronoi grain phantom and its reference maps.
    Phantom {
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 8)]
        grains: usize,
        #[arg(long, default_value_t = 0.2)]
        boundary_contrast: f64,
    },
    /// Draw a probe subsampling mask.
    Mask {
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value = "uds")]
        strategy: String,
    },
    /// Synthesize the diffraction patterns a masked acquisition records.
    Synth {
        #[arg(long)]
        phantom: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[command(flatten)]
        pattern: PatternArgs,
    },
    /// Corrupt a pattern stack with detector noise at a target SNR.
    Noise {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 5.0)]
        snr_db: f64,
    },
    /// Index a pattern stack against a phantom's orientation library.
    Index {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        phantom: PathBuf,
        #[command(flatten)]
        pattern: PatternArgs,
    },
    /// Inpaint an incomplete map (PGM or PPM) over its sampling mask.
    Inpaint {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Rate used to pick the patch shape; defaults to the mask's
        /// effective rate.
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        patch_height: Option<usize>,
        #[arg(long)]
        patch_width: Option<usize>,
        /// Drop recorded failed probes from the sampled set before fitting.
        #[arg(long)]
        merge_zsp: bool,
        /// Copy observed probe values back over the result.
        #[arg(long)]
        reimpose: bool,
        #[command(flatten)]
        bpfa: BpfaArgs,
    },
    /// Compare two maps of the same kind.
    Metrics {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
    },
    /// Run the subsampling-rate sweep study.
    Sweep {
        #[command(flatten)]
        study: StudyArgs,
    },
    /// Run the failed-pixel correction study.
    ZspStudy {
        #[command(flatten)]
        study: StudyArgs,
        /// Plant this fraction of failed probes instead of using noise.
        #[arg(long)]
        plant_fraction: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", json!({ "error": format!("{err:#}") }));
            ExitCode::FAILURE
        }
    }
}

fn extension(path: &Path) -> &str {
    path.extension().and_then(|e| e.to_str()).unwrap_or("")
}

fn write_map_sidecar(path: &Path, sidecar: &MapSidecar) -> Result<()> {
    io::write_sidecar(&path.with_extension("json"), sidecar)
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("thread pool")?;
    }
    let out = &cli.out;
    fs::create_dir_all(out).with_context(|| format!("create {}", out.display()))?;
    match cli.command {
        Command::Phantom {
            height,
            width,
            grains,
            boundary_contrast,
        } => {
            let grid = ProbeGrid::new(height, width)?;
            let gm = voronoi_phantom::<f64>(grid, grains, cli.seed)?;
            let (bc, ipf) = phantom_maps(&gm, boundary_contrast)?;
            io::write_phantom(&out.join("phantom.json"), &gm)?;
            let (bc_norm, record) = normalize_map(&bc, 0.0, 255.0)?;
            let bc_path = out.join("phantom_bc.pgm");
            io::write_pgm(&bc_path, &bc_norm)?;
            write_map_sidecar(
                &bc_path,
                &MapSidecar {
                    kind: "bc".into(),
                    height,
                    width,
                    normalization: Some((&record).into()),
                    mask_file: None,
                    seed: cli.seed,
                    config_hash: "adhoc".into(),
                },
            )?;
            let ipf_path = out.join("phantom_ipf.ppm");
            io::write_ppm(&ipf_path, &ipf)?;
            write_map_sidecar(
                &ipf_path,
                &MapSidecar {
                    kind: "ipf".into(),
                    height,
                    width,
                    normalization: None,
                    mask_file: None,
                    seed: cli.seed,
                    config_hash: "adhoc".into(),
                },
            )?;
            println!(
                "{}",
                json!({ "phantom": out.join("phantom.json"), "grains": grains })
            );
        }
        Command::Mask {
            height,
            width,
            rate,
            strategy,
        } => {
            let grid = ProbeGrid::new(height, width)?;
            let mask = match StrategyCfg::parse(&strategy)? {
                StrategyCfg::Uds => uds_mask(grid, rate, cli.seed)?,
                StrategyCfg::Linehop => linehop_mask(grid, rate, cli.seed)?,
            };
            let path = out.join("mask.json");
            io::write_mask(&path, &mask)?;
            println!(
                "{}",
                json!({
                    "mask": path,
                    "sampled": mask.sampled().len(),
                    "effective_rate": effective_rate(&mask),
                })
            );
        }
        Command::Synth {
            phantom,
            mask,
            pattern,
        } => {
            let gm = io::read_phantom(&phantom)?;
            let mask = io::read_mask(&mask)?;
            let stack = synth_stack(&gm, &mask, &pattern.params())?;
            let path = out.join("stack.ebcs");
            io::write_stack(&path, &stack)?;
            println!("{}", json!({ "stack": path, "patterns": stack.len() }));
        }
        Command::Noise {
            stack,
            mask,
            kind,
            snr_db,
        } => {
            let mask = io::read_mask(&mask)?;
            let clean = io::read_stack(&stack, &mask)?;
            let spec = NoiseSpec {
                kind: NoiseKindCfg::parse(&kind)?.to_core(),
                target_snr_db: snr_db,
                seed: cli.seed,
            };
            let noisy = corrupt_stack(&clean, &spec)?;
            let measured = measure_stack_snr(&clean, &noisy, &spec)?;
            let path = out.join("noisy.ebcs");
            io::write_stack(&path, &noisy)?;
            println!(
                "{}",
                json!({ "stack": path, "target_snr_db": snr_db, "measured_snr_db": measured })
            );
        }
        Command::Index {
            stack,
            mask,
            phantom,
            pattern,
        } => {
            let gm = io::read_phantom(&phantom)?;
            let mask = io::read_mask(&mask)?;
            let stack = io::read_stack(&stack, &mask)?;
            let library =
                OrientationLibrary::from_grain_map(&gm, pattern.params(), IndexParams::default())?;
            let result = index_stack(&stack, &library)?;
            let (bc_norm, record) = normalize_map(&result.bc, 0.0, 255.0)?;
            let bc_path = out.join("indexed_bc.pgm");
            io::write_pgm(&bc_path, &bc_norm)?;
            let mask_path = out.join("indexed_mask.json");
            write_map_sidecar(
                &bc_path,
                &MapSidecar {
                    kind: "bc".into(),
                    height: gm.grid().height(),
                    width: gm.grid().width(),
                    normalization: Some((&record).into()),
                    mask_file: Some("indexed_mask.json".into()),
                    seed: cli.seed,
                    config_hash: "adhoc".into(),
                },
            )?;
            let ipf_path = out.join("indexed_ipf.ppm");
            io::write_ppm(&ipf_path, &result.ipf)?;
            write_map_sidecar(
                &ipf_path,
                &MapSidecar {
                    kind: "ipf".into(),
                    height: gm.grid().height(),
                    width: gm.grid().width(),
                    normalization: None,
                    mask_file: Some("indexed_mask.json".into()),
                    seed: cli.seed,
                    config_hash: "adhoc".into(),
                },
            )?;
            io::write_mask(&mask_path, &result.mask)?;
            println!(
                "{}",
                json!({
                    "bc": bc_path,
                    "ipf": ipf_path,
                    "hit_rate": result.hit_rate,
                    "zsp": result.mask.zsp().len(),
                })
            );
        }
        Command::Inpaint {
            map,
            mask,
            rate,
            patch_height,
            patch_width,
            merge_zsp: do_merge,
            reimpose,
            bpfa,
        } => {
            let mask_in = io::read_mask(&mask)?;
            let mask_used = if do_merge {
                merge_zsp(&mask_in, mask_in.zsp())?
            } else {
                mask_in.clone()
            };
            let params = bpfa.params(cli.seed);
            match extension(&map) {
                "pgm" => {
                    let input = io::read_pgm(&map)?;
                    let (ph, pw) = patch_shape_for(
                        rate,
                        patch_height,
                        patch_width,
                        &mask_used,
                        ebsdcs_core::bpfa::MapKind::BandContrast,
                    )?;
                    let mut est = inpaint_scalar(&input, &mask_used, ph, pw, &params)?;
                    if reimpose {
                        for &l in mask_used.sampled() {
                            est.values_mut()[l] = input.values()[l];
                        }
                    }
                    let (norm, record) = normalize_map(&est, 0.0, 255.0)?;
                    let path = out.join("inpainted.pgm");
                    io::write_pgm(&path, &norm)?;
                    write_map_sidecar(
                        &path,
                        &MapSidecar {
                            kind: "bc".into(),
                            height: est.grid().height(),
                            width: est.grid().width(),
                            normalization: Some((&record).into()),
                            mask_file: mask.file_name().map(|n| n.to_string_lossy().into_owned()),
                            seed: cli.seed,
                            config_hash: "adhoc".into(),
                        },
                    )?;
                    println!(
                        "{}",
                        json!({ "map": path, "patch_height": ph, "patch_width": pw })
                    );
                }
                "ppm" => {
                    let input = io::read_ppm(&map)?;
                    let (ph, pw) = patch_shape_for(
                        rate,
                        patch_height,
                        patch_width,
                        &mask_used,
                        ebsdcs_core::bpfa::MapKind::Ipf,
                    )?;
                    let mut est = inpaint_rgb(&input, &mask_used, ph, pw, &params)?;
                    if reimpose {
                        for &l in mask_used.sampled() {
                            est.set_pixel(l, input.pixel(l));
                        }
                    }
                    let path = out.join("inpainted.ppm");
                    io::write_ppm(&path, &est)?;
                    write_map_sidecar(
                        &path,
                        &MapSidecar {
                            kind: "ipf".into(),
                            height: est.grid().height(),
                            width: est.grid().width(),
                            normalization: None,
                            mask_file: mask.file_name().map(|n| n.to_string_lossy().into_owned()),
                            seed: cli.seed,
                            config_hash: "adhoc".into(),
                        },
                    )?;
                    println!(
                        "{}",
                        json!({ "map": path, "patch_height": ph, "patch_width": pw })
                    );
                }
                other => bail!("unsupported map extension {other:?}; expected pgm or ppm"),
            }
        }
        Command::Metrics {
            reference,
            estimate,
        } => {
            let (ext_r, ext_e) = (extension(&reference), extension(&estimate));
            if ext_r != ext_e {
                bail!("reference ({ext_r}) and estimate ({ext_e}) differ in kind");
            }
            let opts = SsimOptions::default();
            let (err, s) = match ext_r {
                "pgm" => {
                    let r = io::read_pgm(&reference)?;
                    let e = io::read_pgm(&estimate)?;
                    (normalized_error(&r, &e)?, ssim(&r, &e, &opts)?)
                }
                "ppm" => {
                    let r = io::read_ppm(&reference)?;
                    let e = io::read_ppm(&estimate)?;
                    (normalized_error_rgb(&r, &e)?, ssim_rgb(&r, &e, &opts)?)
                }
                other => bail!("unsupported map extension {other:?}; expected pgm or ppm"),
            };
            println!("{}", json!({ "normalized_error": err, "ssim": s }));
        }
        Command::Sweep { study } => {
            let config = study.build()?;
            let rows = run_subsampling_sweep(&config, out)?;
            println!(
                "{}",
                json!({ "csv": out.join("sweep.csv"), "rows": rows.len() })
            );
        }
        Command::ZspStudy {
            study,
            plant_fraction,
        } => {
            let mut config = study.build()?;
            if plant_fraction.is_some() {
                config.plant_zsp_fraction = plant_fraction;
            }
            let rows = run_zsp_correction(&config, out)?;
            println!(
                "{}",
                json!({ "csv": out.join("zsp.csv"), "rows": rows.len() })
            );
        }
    }
    Ok(())
}

/// Patch shape priority: explicit dimensions, then the rate flag, then the
/// mask's own effective sampling rate.
fn patch_shape_for(
    rate: Option<f64>,
    patch_height: Option<usize>,
    patch_width: Option<usize>,
    mask: &SampleMask,
    kind: ebsdcs_core::bpfa::MapKind,
) -> Result<(usize, usize)> {
    match (patch_height, patch_width) {
        (Some(h), Some(w)) => Ok((h, w)),
        (None, None) => {
            let rate = rate.unwrap_or_else(|| effective_rate(mask));
            Ok(select_patch_shape(rate, kind)?)
        }
        _ => bail!("patch height and width must be given together"),
    }
}
