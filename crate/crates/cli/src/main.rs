//! Command-line surface: train, evaluate, score single inputs, run the
//! reweighted perceptual metric and its layer sweep, split manifests, and
//! export attention maps.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
//! Every failure prints a single line of the form `error[<class>]: ...`.

mod config;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use iqa_core::backbone::{extract_pair, BackboneConfig};
use iqa_core::checkpoint::{self, CheckpointMeta};
use iqa_core::data::{
    denormalize_mos, detect_kind, load_dataset, load_manifest, split_by_reference, split_records,
    write_manifest, ManifestKind,
};
use iqa_core::error::Error as CoreError;
use iqa_core::imageio::{load_image, save_gray_png};
use iqa_core::lpips_plus::{
    layer_sweep, lpips_plus, lpips_plus_uniform, quality_maps, semantic_weight, MapOrientation,
};
use iqa_core::model::{forward_fr_traced, forward_nr_traced, ForwardTrace, Mode, Prediction};
use iqa_core::params;
use iqa_core::tensor::Tensor;
use iqa_core::trainer::{evaluate, train};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "iqa", about = "Coarse-to-fine attention image quality assessment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a flat JSON config and CSV manifests.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint against a manifest and write a report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Print the scalar score of one input (pair in FR mode).
    Score {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dist: PathBuf,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
    },
    /// Reweighted multi-scale perceptual metric, optionally as a
    /// per-layer SRCC sweep over a MOS-FR manifest.
    #[command(name = "lpips-plus")]
    LpipsPlus {
        #[arg(long, required_unless_present = "sweep")]
        dist: Option<PathBuf>,
        #[arg(long = "ref", required_unless_present = "sweep")]
        reference: Option<PathBuf>,
        /// Weight layer (0 = uniform baseline).
        #[arg(long, default_value_t = iqa_core::lpips_plus::DEFAULT_WEIGHT_LAYER)]
        layer: usize,
        /// MOS-FR manifest for the layer-selection sweep.
        #[arg(long)]
        sweep: Option<PathBuf>,
        /// Pyramid depth of the seeded feature extractor.
        #[arg(long, default_value_t = 5)]
        levels: usize,
        /// Seed of the feature extractor initialization.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report raw unit-normalized squared distances instead of
        /// similarities.
        #[arg(long)]
        distance: bool,
    },
    /// Split a manifest into train/val/test CSVs.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "6:2:2")]
        ratios: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Partition by reference image so no reference leaks across
        /// splits (requires a reference-bearing manifest).
        #[arg(long)]
        by_reference: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-level gate masks and cross-scale attention grids as
    /// grayscale PNGs with min/max sidecars.
    ExportAttn {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dist: PathBuf,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn print(&self) {
        let (class, msg) = match self {
            Failure::Usage(m) => ("usage", m),
            Failure::Data(m) => ("data", m),
            Failure::Numeric(m) => ("numeric", m),
        };
        eprintln!("error[{class}]: {}", msg.replace('\n', " "));
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidArgument(_) => Failure::Usage(e.to_string()),
            CoreError::Numeric(_) | CoreError::NonFiniteLoss { .. } => {
                Failure::Numeric(e.to_string())
            }
            other => Failure::Data(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            Failure::Usage(e.to_string().lines().next().unwrap_or("bad arguments").to_string())
                .print();
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.print();
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train { config, train: train_csv, val, out } => {
            cmd_train(&config, &train_csv, &val, &out)
        }
        Command::Eval { ckpt, manifest, report } => cmd_eval(&ckpt, &manifest, &report),
        Command::Score { ckpt, dist, reference } => cmd_score(&ckpt, &dist, reference.as_deref()),
        Command::LpipsPlus { dist, reference, layer, sweep, levels, seed, distance } => {
            cmd_lpips_plus(
                dist.as_deref(),
                reference.as_deref(),
                layer,
                sweep.as_deref(),
                levels,
                seed,
                distance,
            )
        }
        Command::Split { manifest, ratios, seed, by_reference, out } => {
            cmd_split(&manifest, &ratios, seed, by_reference, &out)
        }
        Command::ExportAttn { ckpt, dist, reference, out } => {
            cmd_export_attn(&ckpt, &dist, reference.as_deref(), &out)
        }
    }
}

fn cmd_train(config: &Path, train_csv: &Path, val_csv: &Path, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| Failure::Data(format!("{}: {e}", config.display())))?;
    let flat: config::FlatConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("{}: {e}", config.display())))?;
    let (model_cfg, train_cfg, options) = flat.build().map_err(Failure::Usage)?;

    let train_kind = detect_kind(train_csv).map_err(Failure::from)?;
    let val_kind = detect_kind(val_csv).map_err(Failure::from)?;
    let train_manifest =
        load_manifest(train_csv, train_kind, options.declared_mos_range).map_err(Failure::from)?;
    let val_manifest =
        load_manifest(val_csv, val_kind, options.declared_mos_range).map_err(Failure::from)?;
    let train_set = load_dataset::<f32>(&train_manifest, options.resize_shorter).map_err(Failure::from)?;
    let val_set = load_dataset::<f32>(&val_manifest, options.resize_shorter).map_err(Failure::from)?;

    let outcome = train(&model_cfg, &train_cfg, &train_set, &val_set).map_err(Failure::from)?;

    std::fs::create_dir_all(out).map_err(|e| Failure::Data(e.to_string()))?;
    let ckpt_path = out.join("model.ckpt");
    checkpoint::save(&ckpt_path, &outcome.params, &outcome.meta).map_err(Failure::from)?;
    let log_path = out.join("trainlog.csv");
    std::fs::write(&log_path, outcome.log.to_csv()).map_err(|e| Failure::Data(e.to_string()))?;

    let last = outcome.log.rows.last().unwrap();
    println!(
        "trained {} epochs, best epoch {}, best val srcc {}",
        outcome.log.rows.len(),
        outcome.log.best_epoch,
        outcome.log.rows[outcome.log.best_epoch].val_srcc
    );
    println!("final val plcc {} srcc {}", last.val_plcc, last.val_srcc);
    println!("checkpoint: {}", ckpt_path.display());
    println!("train log: {}", log_path.display());
    Ok(())
}

fn cmd_eval(ckpt: &Path, manifest_csv: &Path, report_path: &Path) -> Result<(), Failure> {
    let (store, meta) = checkpoint::load(ckpt).map_err(Failure::from)?;
    let kind = detect_kind(manifest_csv).map_err(Failure::from)?;
    let manifest = load_manifest(manifest_csv, kind, None).map_err(Failure::from)?;
    let data = load_dataset::<f32>(&manifest, None).map_err(Failure::from)?;
    let report = evaluate(&meta.config, &store, &data).map_err(Failure::from)?;
    let text = report.to_key_value_text();
    std::fs::write(report_path, &text).map_err(|e| Failure::Data(e.to_string()))?;
    print!("{text}");
    Ok(())
}

fn load_model_input(path: &Path, meta: &CheckpointMeta) -> Result<Tensor<f32>, Failure> {
    let img = load_image::<f32>(path).map_err(Failure::from)?;
    let want = [3, meta.config.input_h, meta.config.input_w];
    if img.shape() != want {
        return Err(Failure::Data(format!(
            "{}: expected 3x{}x{} input, got {:?}",
            path.display(),
            want[1],
            want[2],
            img.shape()
        )));
    }
    Ok(img)
}

fn traced_forward(
    meta: &CheckpointMeta,
    store: &params::ParamStore<f32>,
    dist: &Path,
    reference: Option<&Path>,
) -> Result<ForwardTrace<f32>, Failure> {
    let dist_img = load_model_input(dist, meta)?;
    match meta.config.mode {
        Mode::FullReference => {
            let ref_path = reference.ok_or_else(|| {
                Failure::Usage("full-reference checkpoint needs --ref".into())
            })?;
            let ref_img = load_model_input(ref_path, meta)?;
            forward_fr_traced(&meta.config, store, &dist_img, &ref_img).map_err(Failure::from)
        }
        Mode::NoReference => {
            if reference.is_some() {
                return Err(Failure::Usage(
                    "no-reference checkpoint takes no --ref".into(),
                ));
            }
            forward_nr_traced(&meta.config, store, &dist_img).map_err(Failure::from)
        }
    }
}

fn cmd_score(ckpt: &Path, dist: &Path, reference: Option<&Path>) -> Result<(), Failure> {
    let (store, meta) = checkpoint::load(ckpt).map_err(Failure::from)?;
    let trace = traced_forward(&meta, &store, dist, reference)?;
    let mut value = trace.prediction.scalar_reduced();
    if let (Prediction::Scalar(_), Some((lo, hi))) = (&trace.prediction, meta.mos_range) {
        value = denormalize_mos(value, lo, hi);
    }
    if !value.is_finite() {
        return Err(Failure::Numeric(format!("score is not finite: {value}")));
    }
    println!("{value:.6}");
    Ok(())
}

fn sweep_backbone(levels: usize, seed: u64) -> Result<(BackboneConfig, params::ParamStore<f32>), Failure> {
    let widths = [16usize, 32, 64, 96, 128];
    if levels < 2 || levels > widths.len() {
        return Err(Failure::Usage(format!(
            "levels must be between 2 and {}, got {levels}",
            widths.len()
        )));
    }
    let cfg = BackboneConfig::new(widths[..levels].to_vec());
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let mut store = params::ParamStore::new();
    iqa_core::backbone::register_params(&mut store, &mut rng, &cfg);
    Ok((cfg, store))
}

#[allow(clippy::too_many_arguments)]
fn cmd_lpips_plus(
    dist: Option<&Path>,
    reference: Option<&Path>,
    layer: usize,
    sweep: Option<&Path>,
    levels: usize,
    seed: u64,
    distance: bool,
) -> Result<(), Failure> {
    let (backbone_cfg, store) = sweep_backbone(levels, seed)?;
    let orientation = if distance { MapOrientation::Distance } else { MapOrientation::Similarity };

    if let Some(manifest_csv) = sweep {
        let kind = detect_kind(manifest_csv).map_err(Failure::from)?;
        if kind != ManifestKind::MosFr {
            return Err(Failure::Data(format!(
                "layer sweep needs a MOS-FR manifest, got {}",
                kind.describe()
            )));
        }
        let manifest = load_manifest(manifest_csv, kind, None).map_err(Failure::from)?;
        let data = load_dataset::<f32>(&manifest, None).map_err(Failure::from)?;
        let mut pairs = Vec::new();
        let mut mos = Vec::new();
        for sample in &data.samples {
            if let iqa_core::data::Sample::MosFr { distorted, reference, label } = sample {
                pairs.push(
                    extract_pair(distorted, reference, &backbone_cfg, &store)
                        .map_err(Failure::from)?,
                );
                mos.push(*label);
            }
        }
        let rows = layer_sweep(&pairs, &mos, orientation).map_err(Failure::from)?;
        println!("layer,srcc");
        for row in rows {
            println!("{},{}", row.layer, row.srcc);
        }
        return Ok(());
    }

    let dist = dist.expect("clap enforces --dist without --sweep");
    let reference = reference.expect("clap enforces --ref without --sweep");
    let dist_img = load_image::<f32>(dist).map_err(Failure::from)?;
    let ref_img = load_image::<f32>(reference).map_err(Failure::from)?;
    let (pyr_d, pyr_r) =
        extract_pair(&dist_img, &ref_img, &backbone_cfg, &store).map_err(Failure::from)?;
    let maps = quality_maps(&pyr_d, &pyr_r, orientation).map_err(Failure::from)?;
    let value = if layer == 0 {
        lpips_plus_uniform(&maps)
    } else {
        if layer > levels {
            return Err(Failure::Usage(format!(
                "layer {layer} out of range 0..={levels}"
            )));
        }
        let weight = semantic_weight(&pyr_r, layer).map_err(Failure::from)?;
        lpips_plus(&maps, &weight).map_err(Failure::from)?
    };
    if !value.value.is_finite() {
        return Err(Failure::Numeric("metric is not finite".into()));
    }
    if value.uniform_fallback {
        eprintln!("note: degenerate weight map, used uniform weights");
    }
    println!("{:.6}", value.value);
    Ok(())
}

fn parse_ratios(text: &str) -> Result<(f64, f64, f64), Failure> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Failure::Usage(format!(
            "ratios must look like 6:2:2, got '{text}'"
        )));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("ratios must be numeric, got '{text}'")))?;
    let sum: f64 = nums.iter().sum();
    if sum <= 0.0 || nums.iter().any(|&v| v < 0.0) {
        return Err(Failure::Usage(format!("ratios must be non-negative with a positive sum, got '{text}'")));
    }
    Ok((nums[0] / sum, nums[1] / sum, nums[2] / sum))
}

fn cmd_split(
    manifest_csv: &Path,
    ratios: &str,
    seed: u64,
    by_reference: bool,
    out: &Path,
) -> Result<(), Failure> {
    let ratios = parse_ratios(ratios)?;
    let kind = detect_kind(manifest_csv).map_err(Failure::from)?;
    let manifest = load_manifest(manifest_csv, kind, None).map_err(Failure::from)?;
    let splits = if by_reference {
        split_by_reference(&manifest, ratios, seed).map_err(Failure::from)?
    } else {
        split_records(&manifest, ratios, seed).map_err(Failure::from)?
    };
    std::fs::create_dir_all(out).map_err(|e| Failure::Data(e.to_string()))?;
    for (m, name) in splits.iter().zip(["train.csv", "val.csv", "test.csv"]) {
        let path = out.join(name);
        write_manifest(m, &path).map_err(Failure::from)?;
        println!("{}: {} records", path.display(), m.len());
    }
    Ok(())
}

/// Tiles an `(N×N)` attention matrix (N = grid_h * grid_w) into a
/// `(grid_h·grid_h) × (grid_w·grid_w)` image: one `grid_h × grid_w` heat
/// map per query position, laid out on the query grid.
fn tile_attention(weights: &Tensor<f32>, grid_h: usize, grid_w: usize) -> Tensor<f32> {
    let n = grid_h * grid_w;
    assert_eq!(weights.shape(), &[n, n]);
    let (th, tw) = (grid_h * grid_h, grid_w * grid_w);
    let mut out = vec![0.0f32; th * tw];
    for q in 0..n {
        let (qy, qx) = (q / grid_w, q % grid_w);
        for k in 0..n {
            let (ky, kx) = (k / grid_w, k % grid_w);
            out[(qy * grid_h + ky) * tw + qx * grid_w + kx] = weights.data()[q * n + k];
        }
    }
    Tensor::new(vec![th, tw], out).expect("tile shape")
}

fn write_map(path: &Path, map: &Tensor<f32>) -> Result<(), Failure> {
    let (lo, hi) = save_gray_png(path, map).map_err(Failure::from)?;
    let sidecar = path.with_extension("minmax.txt");
    std::fs::write(&sidecar, format!("min={lo}\nmax={hi}\n"))
        .map_err(|e| Failure::Data(e.to_string()))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_export_attn(
    ckpt: &Path,
    dist: &Path,
    reference: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let (store, meta) = checkpoint::load(ckpt).map_err(Failure::from)?;
    let trace = traced_forward(&meta, &store, dist, reference)?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Data(e.to_string()))?;

    let n = meta.config.levels();
    // gate masks for levels 1..n-1 (the coarsest level has no map to show
    // at a useful resolution)
    for level in 1..n {
        let map = &trace.glp_masks[level - 1];
        write_map(&out.join(format!("glp_mask_l{level}.png")), map)?;
    }
    // chain steps are ordered coarsest pair first: step j fuses level
    // (n-1-j) with level (n-j)
    let (grid_h, grid_w) = meta.config.token_grid();
    for (j, weights) in trace.csa_weights.iter().enumerate() {
        let fine_level = n - 1 - j;
        let tiled = tile_attention(weights, grid_h, grid_w);
        write_map(
            &out.join(format!("csa_l{}_to_l{}.png", fine_level + 1, fine_level)),
            &tiled,
        )?;
    }
    Ok(())
}
