use anyhow::Result;
use clap::{Parser, Subcommand};
use p2d_cli::config::PipelineConfig;
use p2d_cli::manifest::format_eval_table;
use p2d_cli::pipeline;
use p2d_core::eval::StreamConfig;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "p2d",
    version,
    about = "Prompt-guided high-resolution elevation estimation pipeline"
)]
struct Cli {
    /// Pipeline configuration JSON (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Force serial, bit-reproducible execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Override the configured weight registry path.
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic scenes (DTM, DSM, pseudo-RGB) with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Samples per scene class.
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Train a model: --task {lowres|void|update|classifier}.
    Train {
        #[arg(long)]
        task: String,
        /// Scene class (urban|vegetated|bare); not used for classifier.
        #[arg(long)]
        class: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tiled inference with per-patch scene routing.
    Infer {
        /// Red,green,blue raster paths.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        rgb: Vec<PathBuf>,
        #[arg(long)]
        prompt: PathBuf,
        #[arg(long)]
        task: String,
        /// Bypass the classifier and use one class's weights everywhere.
        #[arg(long)]
        force_class: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Blend predicted patches into a seamless DEM.
    Mosaic {
        #[arg(long)]
        patches: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also render a hillshade PNG here.
        #[arg(long)]
        hillshade: Option<PathBuf>,
    },
    /// Fill, flow directions, accumulation, streams; optional truth metrics.
    Hydro {
        #[arg(long)]
        dem: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stream threshold as a fraction of total cells.
        #[arg(long)]
        threshold: Option<f64>,
        /// Buffer radii in cells.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        radii: Option<Vec<f64>>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Candidate-vs-baseline comparison against a truth DEM.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        /// Region mask raster (>0.5 = evaluate).
        #[arg(long)]
        region: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also compare buffered stream networks.
        #[arg(long)]
        streams: bool,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        radii: Option<Vec<f64>>,
        /// Exit nonzero unless candidate elevation RMSE beats the baseline.
        #[arg(long)]
        require_improvement: bool,
    },
    /// Classify tiles of a pseudo-RGB raster.
    Classify {
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        rgb: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn registry_path(cli: &Cli, cfg: &PipelineConfig) -> PathBuf {
    if let Some(r) = &cli.registry {
        return r.clone();
    }
    let configured = PathBuf::from(&cfg.registry);
    if configured.is_absolute() {
        return configured;
    }
    match cli.config.as_deref().and_then(Path::parent) {
        Some(dir) if !dir.as_os_str().is_empty() => dir.join(configured),
        _ => configured,
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = load_config(cli)?;
    let registry = registry_path(cli, &cfg);
    match &cli.cmd {
        Cmd::Synth { out, count } => {
            let manifest = pipeline::cmd_synth(&cfg, out, *count)?;
            println!(
                "wrote {} samples ({} per class) to {}",
                manifest.entries.len(),
                count,
                out.display()
            );
        }
        Cmd::Train { task, class, out } => {
            let manifest = pipeline::cmd_train(&cfg, &registry, task, class.as_deref(), out)?;
            let last = manifest.train_losses.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained {} ({}): final train loss {last:.6}, weights at {}",
                manifest.task,
                manifest.class.as_deref().unwrap_or("-"),
                out.display()
            );
        }
        Cmd::Infer {
            rgb,
            prompt,
            task,
            force_class,
            out,
        } => {
            let manifest = pipeline::cmd_infer(
                &cfg,
                &registry,
                rgb,
                prompt,
                task,
                force_class.as_deref(),
                out,
            )?;
            println!(
                "predicted {} patches into {}",
                manifest.patches.len(),
                out.display()
            );
        }
        Cmd::Mosaic {
            patches,
            out,
            hillshade,
        } => {
            let report = pipeline::cmd_mosaic(patches, out, hillshade.as_deref())?;
            println!(
                "mosaicked {}x{} ({} uncovered cells) to {}",
                report.rows,
                report.cols,
                report.zero_weight_cells,
                out.display()
            );
        }
        Cmd::Hydro {
            dem,
            out,
            threshold,
            radii,
            truth,
        } => {
            let frac = threshold.unwrap_or(cfg.stream_threshold_frac);
            let radii = radii.clone().unwrap_or_else(|| cfg.buffer_radii_cells.clone());
            let report = pipeline::cmd_hydro(dem, out, frac, &radii, truth.as_deref())?;
            match report {
                Some(r) => {
                    for e in &r.entries {
                        println!(
                            "radius {:>5.1} cells: IoU {:.4} precision {:.4} recall {:.4} f1 {:.4}",
                            e.radius_cells,
                            e.metrics.iou,
                            e.metrics.precision,
                            e.metrics.recall,
                            e.metrics.f1
                        );
                    }
                }
                None => println!("stream products written to {}", out.display()),
            }
        }
        Cmd::Eval {
            truth,
            candidate,
            baseline,
            region,
            out,
            streams,
            threshold,
            radii,
            require_improvement,
        } => {
            let stream_config = if *streams {
                Some(StreamConfig {
                    threshold_frac: threshold.unwrap_or(cfg.stream_threshold_frac),
                    radii_cells: radii.clone().unwrap_or_else(|| cfg.buffer_radii_cells.clone()),
                })
            } else {
                None
            };
            let report = pipeline::cmd_eval(
                truth,
                candidate,
                baseline,
                region.as_deref(),
                stream_config,
                out,
            )?;
            print!("{}", format_eval_table(&report));
            if *require_improvement
                && report.candidate.elevation.rmse >= report.baseline.elevation.rmse
            {
                eprintln!(
                    "candidate elevation RMSE {:.4} does not beat baseline {:.4}",
                    report.candidate.elevation.rmse, report.baseline.elevation.rmse
                );
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Classify { rgb, out } => {
            let entries = pipeline::cmd_classify(&cfg, &registry, rgb, out.as_deref())?;
            for e in &entries {
                println!(
                    "tile ({:>4},{:>4}): {} [{:.3}, {:.3}, {:.3}]",
                    e.row0,
                    e.col0,
                    e.class,
                    e.probabilities[0],
                    e.probabilities[1],
                    e.probabilities[2]
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
