//! `udasr`: dataset synthesis, training, super-resolution, evaluation,
//! inspection and loss curves.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use udasr::candle_core::{DType, Device, Tensor};
use udasr::curve::{render_curve_png, write_curve_csv};
use udasr::data::{
    default_colormap, list_pngs, read_rgb, rgb_to_tensor, tensor_to_rgb, Dataset, DatasetSpec,
    SceneSpec, SynthSpec,
};
use udasr::fsutil::{create_dir_all, save_png, write_atomic};
use udasr::metrics::{evaluate, smooth_trailing};
use udasr::models::{Networks, ParameterReport, ShapeTrace};
use udasr::nn::bilinear_resize;
use udasr::training::{load_checkpoint, read_loss_log, train, RunConfig, Scale};
use udasr::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "udasr", version, about = "Two-domain segmentation and super-resolution toolkit")]
struct Cli {
    /// Overrides any seed given in a config or spec file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Tile/width preset: paper (512 px, width 1) or desk (128 px, width 1/8).
    #[arg(long, global = true, value_parser = parse_scale)]
    scale: Option<Scale>,
    #[command(subcommand)]
    command: Command,
}

fn parse_scale(s: &str) -> std::result::Result<Scale, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic two-domain dataset.
    SynthData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a run config; writes checkpoints and loss.csv to out_dir.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Upscale native low-resolution tiles through backbone and SR head.
    SuperResolve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compute IoU, PSNR and discriminator accuracy; writes a JSON report.
    #[command(group = clap::ArgGroup::new("dataset").required(true))]
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, group = "dataset")]
        data: Option<PathBuf>,
        #[arg(long, group = "dataset")]
        synth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Tiles sampled per domain.
        #[arg(long, default_value_t = 32)]
        tiles: usize,
    },
    /// Print parameter counts and the shape trace of one forward pass.
    Inspect {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Smooth the l_pix column of a loss log; writes CSV or PNG by extension.
    PlotLoss {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        window: usize,
        /// Maximum rows of CSV output.
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', "; ");
            eprintln!("udasr: {msg}");
            ExitCode::from(2)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_synth_spec(path: &Path, cli: &Cli) -> Result<SynthSpec> {
    let mut spec: SynthSpec = read_json(path)?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if let Some(scale) = cli.scale {
        let fitted = SceneSpec::for_tile(scale.tile_size());
        spec.scene.size = fitted.size;
        spec.scene.building_size = fitted.building_size;
    }
    Ok(spec)
}

fn load_run_config(path: Option<&Path>, cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(scale) = cli.scale {
        cfg.apply_scale(scale);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::SynthData { spec, out } => {
            let spec = load_synth_spec(spec, &cli)?;
            let ds = Dataset::synthesize(&spec, &default_colormap())?;
            ds.write(out, &default_colormap())?;
            println!(
                "wrote {} source and {} target scenes to {}",
                ds.source.len(),
                ds.target.len(),
                out.display()
            );
        }
        Command::Train { config, resume } => {
            let cfg = load_run_config(Some(config), &cli)?;
            let outcome = train(&cfg, resume.as_deref())?;
            println!(
                "trained {} steps; checkpoint {}",
                outcome.rows.len(),
                outcome.final_checkpoint.display()
            );
        }
        Command::SuperResolve {
            checkpoint,
            input,
            output,
        } => super_resolve(checkpoint, input, output)?,
        Command::Evaluate {
            checkpoint,
            data,
            synth,
            out,
            tiles,
        } => {
            let ckpt_cfg = udasr::training::read_manifest(checkpoint)?.config;
            let mut spec = match &ckpt_cfg {
                Some(c) => c.dataset_spec()?,
                None => DatasetSpec::paper(),
            };
            if let Some(scale) = cli.scale {
                spec = DatasetSpec::new(scale.tile_size(), scale.tile_size() / 8, spec.blur.sigma)?;
            }
            let dataset = match (data, synth) {
                (Some(root), _) => Dataset::load(root)?,
                (None, Some(s)) => Dataset::synthesize(&load_synth_spec(s, &cli)?, &default_colormap())?,
                (None, None) => unreachable!("clap enforces one dataset flag"),
            };
            let report = evaluate(checkpoint, &dataset, &spec, *tiles, cli.seed.unwrap_or(0))?;
            write_atomic(out, report.to_json()?.as_bytes())?;
            println!("wrote {}", out.display());
        }
        Command::Inspect { config } => inspect(&load_run_config(config.as_deref(), &cli)?)?,
        Command::PlotLoss {
            log,
            out,
            window,
            points,
        } => {
            let rows = read_loss_log(log)?;
            if rows.is_empty() {
                return Err(Error::Dataset(format!("{}: no data rows", log.display())));
            }
            let l_pix: Vec<f64> = rows.iter().map(|r| r.losses.l_pix).collect();
            let steps: Vec<u64> = rows.iter().map(|r| r.step).collect();
            let smooth = smooth_trailing(&l_pix, *window);
            let ext = out.extension().and_then(|e| e.to_str()).unwrap_or("");
            match ext.to_ascii_lowercase().as_str() {
                "png" => render_curve_png(out, &smooth, 640, 400)?,
                "csv" => write_curve_csv(out, "l_pix_smoothed", &steps, &smooth, *points)?,
                _ => {
                    return Err(Error::Config(format!(
                        "{}: output must end in .csv or .png",
                        out.display()
                    )))
                }
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn super_resolve(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let nets = Networks::new(&ckpt.manifest.model)?;
    let upscale = ckpt
        .manifest
        .config
        .as_ref()
        .map_or(8, |c| c.tile_size / c.native_tile());
    let tiles = list_pngs(input)?;
    if tiles.is_empty() {
        return Err(Error::Dataset(format!("{}: no PNG tiles", input.display())));
    }
    let params = ckpt.state.params.frozen();
    let mut jobs = Vec::with_capacity(tiles.len());
    for (stem, path) in &tiles {
        let img = read_rgb(path)?;
        let (h, w) = (img.height() as usize * upscale, img.width() as usize * upscale);
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Shape(format!(
                "{}: {}x{} upscaled by {upscale} is not divisible by 16",
                path.display(),
                img.width(),
                img.height()
            )));
        }
        jobs.push((stem, img, h, w));
    }
    create_dir_all(output)?;
    for (stem, img, h, w) in jobs {
        let x = bilinear_resize(&rgb_to_tensor(&img)?, h, w)?;
        let sr = nets.generator(&params, &x)?.sr;
        save_png(&tensor_to_rgb(&sr)?, &output.join(format!("{stem}.png")))?;
    }
    println!("wrote {} tiles to {}", tiles.len(), output.display());
    Ok(())
}

fn inspect(cfg: &RunConfig) -> Result<()> {
    let nets = Networks::new(&cfg.model_config())?;
    let report = ParameterReport::from_shapes(&nets.parameter_shapes());
    println!("{report}");
    let params = nets.init(DType::F32, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let s = cfg.tile_size;
    let x = Tensor::zeros((1, 3, s, s), DType::F32, &Device::Cpu)?;
    let mut trace = ShapeTrace::default();
    let out = nets.generator_traced(&params.frozen(), &x, Some(&mut trace))?;
    nets.discriminator
        .forward_traced(&params.frozen(), &out.sr, Some(&mut trace))?;
    println!("shape trace ({s}x{s} input):");
    for line in trace.lines() {
        println!("  {line}");
    }
    Ok(())
}
