use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use terracer::evaluation::{evaluate, predict_map, write_ppm};
use terracer::models::{counterpart_2d, preset, Model, PRESETS};
use terracer::raster::{erb1, synthesize_dataset, Manifest, Split, NO_DATA};
use terracer::training::{train, RunInfo, TrainConfig};
use terracer::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "terracer", version, about = "Land-cover segmentation of multispectral imagery")]
struct Cli {
    /// Worker threads (falls back to TERRACER_THREADS, then all cores).
    #[arg(long, global = true, env = "TERRACER_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Create or check datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a model from a JSON config.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Write the predicted label map of one scene.
    Predict(PredictArgs),
    /// Parameter and scale counts of a preset.
    Params(ParamsArgs),
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Load every scene of a manifest and check its invariants.
    Validate { manifest: PathBuf },
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    scenes: usize,
    /// Scene edge in 20 m pixels.
    #[arg(long, default_value_t = 300)]
    size: usize,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    /// Fraction of each scene covered by clouds.
    #[arg(long, default_value_t = 0.0)]
    clouds: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint whose parameters initialize the run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test", value_parser = PossibleValuesParser::new(["train", "test"]))]
    split: String,
    /// Reference erosion radius in meters.
    #[arg(long, default_value_t = 0.0)]
    erode_m: f64,
    #[arg(long)]
    report: PathBuf,
    /// Predict in tiles of this many pixels.
    #[arg(long)]
    tile: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Scene id in the manifest.
    #[arg(long)]
    scene: String,
    /// ERB1 output; a `.json` sidecar and a `.ppm` preview are written beside it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tile: Option<usize>,
}

#[derive(Args, Debug)]
struct ParamsArgs {
    #[arg(value_parser = PossibleValuesParser::new(PRESETS))]
    preset: String,
    #[arg(long)]
    bands: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
}

/// Describes an ERB1 prediction raster.
#[derive(Serialize)]
struct MapSidecar<'a> {
    scene: &'a str,
    width: usize,
    height: usize,
    resolution_m: f64,
    dtype: &'static str,
    /// Values are class-table codes; 65535 marks no data.
    values: &'static str,
    strategy: terracer::training::Strategy,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn log_config(what: &str, value: &impl Serialize) {
    match serde_json::to_string(value) {
        Ok(s) => log::info!("{what}: {s}"),
        Err(e) => log::warn!("could not serialize {what}: {e}"),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Dataset(DatasetCommand::Synth(a)) => {
            log_config("dataset synth", &a);
            let m = synthesize_dataset(&a.out, a.seed, a.scenes, a.size, a.classes, a.clouds)?;
            log::info!("wrote {} scenes to {}", m.scenes.len(), a.out.join("manifest.json").display());
        }
        Command::Dataset(DatasetCommand::Validate { manifest }) => {
            let n = Manifest::load(&manifest)?.validate()?;
            log::info!("{}: {n} scenes valid", manifest.display());
        }
        Command::Train(a) => {
            let mut cfg = TrainConfig::load(&a.config)?;
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
            cfg.max_steps = a.max_steps.or(cfg.max_steps);
            cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
            cfg.checkpoint_dir = a.checkpoint_dir.unwrap_or(cfg.checkpoint_dir);
            log_config("train config", &cfg);
            log::info!("seed {}", cfg.seed);
            let out = train(&cfg, a.resume.as_deref())?;
            if let Some(last) = out.checkpoints.last() {
                log::info!("final checkpoint {}", last.display());
            }
        }
        Command::Eval(a) => {
            log_config("eval", &a);
            let manifest = Manifest::load(&a.manifest)?;
            let (info, model) = RunInfo::load_model(&a.ckpt)?;
            log::info!("seed {}", info.seed);
            let split: Split = a.split.parse()?;
            let (_, report) = evaluate(&model, &manifest, split, a.erode_m, info.strategy, a.tile)?;
            report.save(&a.report)?;
            log::info!("OA {:.4} over {} pixels ({:.1}% excluded)", report.oa, report.evaluated_pixels, 100.0 * report.excluded_fraction);
        }
        Command::Predict(a) => {
            log_config("predict", &a);
            predict(&a)?;
        }
        Command::Params(a) => params(&a)?,
    }
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let (info, model) = RunInfo::load_model(&a.ckpt)?;
    log::info!("seed {}", info.seed);
    let scene = manifest.prepare_scene(manifest.entry(&a.scene)?, info.band_mode)?;
    let map = predict_map(&model, &scene, info.strategy, a.tile)?;
    let to_code = manifest.class_table.id_to_code();
    let codes: Vec<u16> = map.data.iter().map(|id| to_code.get(id).copied().unwrap_or(NO_DATA)).collect();
    erb1::write_u16(&a.out, &codes)?;
    let sidecar = MapSidecar {
        scene: &a.scene,
        width: map.width,
        height: map.height,
        resolution_m: map.resolution_m,
        dtype: "u16",
        values: "class_code",
        strategy: info.strategy,
    };
    let side = a.out.with_extension("json");
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&side, text + "\n").map_err(|e| io_err(&side, e))?;
    write_ppm(&a.out.with_extension("ppm"), &map)?;
    log::info!("wrote {}x{} map to {}", map.height, map.width, a.out.display());
    Ok(())
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn params(a: &ParamsArgs) -> Result<()> {
    let configure = |id: &str| -> Result<Model<f32>> {
        let mut cfg = preset(id)?;
        if let Some(c) = a.classes {
            cfg = cfg.with_classes(c);
        }
        if let (Some(b), true) = (a.bands, id == a.preset) {
            cfg = cfg.with_bands(b);
        }
        cfg.validate()?;
        Model::build(&cfg, 0)
    };
    let model = configure(&a.preset)?;
    let n = model.count_parameters();
    print!(
        "{}\tbands={}\tclasses={}\tparams={} ({:.2}M)\tscales={}",
        a.preset,
        model.config.input_bands(),
        model.config.num_classes(),
        n,
        n as f64 / 1e6,
        model.scales()
    );
    if let Some(base) = counterpart_2d(&a.preset) {
        let m = configure(base)?.count_parameters();
        print!("\treduction={:.1}% vs {base} ({m})", 100.0 * (1.0 - n as f64 / m as f64));
    }
    println!();
    Ok(())
}
