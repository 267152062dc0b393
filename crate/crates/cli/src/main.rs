use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ynet_core::app::{self, RunConfig, SceneSet};
use ynet_core::data::{read_samples, SceneKind, SynthConfig};
use ynet_core::{Error, ErrorKind, Result};

/// Goal, waypoint and path heatmap forecasting of pedestrian trajectories.
#[derive(Parser, Debug)]
#[command(name = "ynet", version)]
struct Cli {
    #[command(flatten)]
    opts: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Goal hypotheses per agent.
    #[arg(long = "k-e", global = true)]
    k_e: Option<usize>,
    /// Path hypotheses per goal.
    #[arg(long = "k-a", global = true)]
    k_a: Option<usize>,
    /// Divides goal and waypoint logits at inference.
    #[arg(long, global = true)]
    temperature: Option<f64>,
    /// Waypoint frame indices, comma separated.
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    waypoints: Option<Vec<usize>>,
    /// Plain categorical goal sampling instead of threshold + K-means.
    #[arg(long = "no-ttst", global = true)]
    no_ttst: bool,
    /// Waypoints without the goal-anchored prior.
    #[arg(long = "no-cws", global = true)]
    no_cws: bool,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Raw track CSV to a windowed dataset and a discard log.
    Preprocess {
        #[arg(long)]
        tracks: PathBuf,
        /// Scene manifest(s), one per scene id in the tracks.
        #[arg(long = "scene", required = true)]
        scenes: Vec<PathBuf>,
    },
    /// Generate a synthetic scene and agent tracks.
    Synth {
        #[arg(long, default_value = "fork")]
        kind: String,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 24)]
        agents: usize,
    },
    /// Fit the model on a windowed dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "scene", required = true)]
        scenes: Vec<PathBuf>,
        /// Override the epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Sample K_e × K_a hypotheses per window.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "scene", required = true)]
        scenes: Vec<PathBuf>,
    },
    /// Min-of-K ADE/FDE of predictions against a dataset.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "scene", required = true)]
        scenes: Vec<PathBuf>,
    },
    /// PNG figures of scenes, tracks, predictions and goal maps.
    Plot {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "scene", required = true)]
        scenes: Vec<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Adds a goal-map overlay figure per window.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Only this window key (`agent/window`).
        #[arg(long)]
        agent: Option<String>,
    },
    /// Sampling ablation grid and K_a sweep.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "scene", required = true)]
        scenes: Vec<PathBuf>,
    },
}

fn run_config(o: &Overrides) -> Result<RunConfig> {
    let mut c = match &o.config {
        Some(p) if !p.exists() => {
            return Err(Error::Config(format!("config file {} not found", p.display())))
        }
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = o.seed {
        c.seed = s;
    }
    if let Some(k) = o.k_e {
        c.predict.k_e = k;
    }
    if let Some(k) = o.k_a {
        c.predict.k_a = k;
    }
    if let Some(t) = o.temperature {
        c.train.temperature = t;
    }
    if let Some(w) = &o.waypoints {
        c.train.waypoint_frames = w.clone();
    }
    if o.no_ttst {
        c.predict.ttst = false;
    }
    if o.no_cws {
        c.predict.cws = false;
    }
    Ok(c)
}

fn out_dir(o: &Overrides) -> PathBuf {
    o.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn print_config(c: &RunConfig) -> Result<()> {
    eprintln!("configuration: {}", serde_json::to_string(&c.resolved()?)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = run_config(&cli.opts)?;
    let out = out_dir(&cli.opts);
    match cli.command {
        Command::Preprocess { tracks, scenes } => {
            print_config(&cfg)?;
            let set = SceneSet::load(&scenes)?;
            let r = app::preprocess(&tracks, &set, &cfg.data, &out)?;
            println!("tracks in: {}", r.tracks_in);
            println!("positions in: {}", r.positions_in);
            println!("windows out: {} (length {})", r.windows_out, r.window_length);
            for (reason, n) in &r.discards {
                println!("discarded {reason}: {n}");
            }
        }
        Command::Synth { kind, size, agents } => {
            let sc = SynthConfig {
                kind: kind.parse::<SceneKind>()?,
                size,
                seed: cfg.seed,
                n_agents: agents,
                max_len: 0,
            };
            let manifest = app::synth(&sc, &out)?;
            println!("scene manifest: {}", manifest.display());
            println!("tracks: {}", out.join("tracks.csv").display());
        }
        Command::Train {
            dataset,
            scenes,
            epochs,
        } => {
            let mut cfg = cfg;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            print_config(&cfg)?;
            let set = SceneSet::load(&scenes)?;
            let curve = app::train(&dataset, &set, &cfg, &out, |e| {
                eprintln!(
                    "epoch {:>4}  total {:.3}  goal {:.4}  wp {:.4}  traj {:.4}",
                    e.epoch, e.total, e.goal, e.waypoint, e.trajectory
                );
            })?;
            if let Some(last) = curve.last() {
                println!("final loss: {:.4}", last.total);
            }
            println!("checkpoint: {}", out.join("checkpoint.bin").display());
        }
        Command::Predict {
            checkpoint,
            dataset,
            scenes,
        } => {
            print_config(&cfg)?;
            let set = SceneSet::load(&scenes)?;
            let path = out.join("predictions.jsonl");
            let n = app::predict(&checkpoint, &dataset, &set, &cfg, &path)?;
            println!("hypotheses: {n}");
            println!("predictions: {}", path.display());
        }
        Command::Evaluate {
            predictions,
            dataset,
            scenes,
        } => {
            let set = SceneSet::load(&scenes)?;
            let s = app::evaluate(&predictions, &dataset, &set, &out)?;
            println!(
                "agents {}  K_e {}  K_a {}  min-ADE {:.4}  min-FDE {:.4} ({})",
                s.n_agents,
                s.k_e,
                s.k_a,
                s.min_ade,
                s.min_fde,
                serde_json::to_value(s.units)?.as_str().unwrap_or("")
            );
        }
        Command::Plot {
            dataset,
            scenes,
            predictions,
            checkpoint,
            agent,
        } => {
            let set = SceneSet::load(&scenes)?;
            let model = checkpoint.as_deref().map(|c| app::load_model(c, &cfg)).transpose()?;
            let pc = cfg.resolved()?.predict;
            let written = app::plot(
                &dataset,
                predictions.as_deref(),
                &set,
                model.as_ref().map(|m| (m, &pc)),
                agent.as_deref(),
                &out,
            )?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Ablate {
            checkpoint,
            dataset,
            scenes,
        } => {
            print_config(&cfg)?;
            let set = SceneSet::load(&scenes)?;
            let model = app::load_model(&checkpoint, &cfg)?;
            let windows = read_samples(&dataset)?;
            let rows = app::ablate(&model, &windows, &set, &cfg.resolved()?.predict)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Data(format!("{}: {e}", out.display())))?;
            let path = out.join("ablation.csv");
            app::write_ablation(&path, &rows)?;
            for r in &rows {
                println!(
                    "{:<9} ttst={:<5} cws={:<5} K_e={:<3} K_a={:<2} min-ADE {:.4}  min-FDE {:.4}",
                    r.experiment, r.ttst, r.cws, r.k_e, r.k_a, r.min_ade, r.min_fde
                );
            }
            println!("table: {}", path.display());
        }
    }
    Ok(())
}

fn init_threads() {
    if let Some(n) = std::env::var("YNET_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a second initialisation only fails when a pool exists already
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
