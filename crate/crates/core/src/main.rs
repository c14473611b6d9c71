use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nqp::commands;
use nqp::dataset::DatasetKind;
use nqp::experiment::{preset_by_name, ExperimentConfig};
use nqp::quantum::DensityMatrix;
use nqp::NqpError;

/// Neural quantum propagator for driven-dissipative dynamics.
#[derive(Parser)]
#[command(name = "nqp", version)]
struct Cli {
    /// Experiment config (JSON). Defaults to the preset named by --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in system used when no --config is given.
    #[arg(long, global = true, default_value = "spin_boson")]
    preset: String,
    /// Use the full-size model and training budgets for presets.
    #[arg(long, global = true)]
    paper_scale: bool,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 1 gives bit-exact reruns.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Data,
    Physics,
}

#[derive(Subcommand)]
enum Command {
    /// Print an experiment config for a preset.
    Preset {
        /// spin_boson or three_state_gamma
        name: Option<String>,
    },
    /// Sample a dataset and write it to --out.
    Generate {
        #[arg(long, short)]
        n: Option<usize>,
        #[arg(long, value_enum, default_value = "data")]
        kind: Kind,
    },
    /// Train on a dataset; writes the checkpoint and loss CSV under --out.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Roll a checkpoint out from one initial state; writes a trajectory CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// One value per field channel, comma separated (ω_f or c_k).
        #[arg(long, value_delimiter = ',', required = true)]
        field: Vec<f64>,
        /// Initial state |j⟩⟨j|; defaults to the config's.
        #[arg(long)]
        rho0: Option<usize>,
        /// Final time; defaults to the training window.
        #[arg(long)]
        horizon: Option<f64>,
        /// Hermitize and renormalize between windows.
        #[arg(long)]
        project: bool,
    },
    /// Compare a checkpoint with RK4 for several field values.
    Validate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Field set, channels comma separated; repeat for more sets.
        #[arg(long = "field", required = true, num_args = 1)]
        fields: Vec<String>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Train one model per training window and compare their rollouts.
    AblateTmax {
        #[arg(long = "tmax", required = true, value_delimiter = ',')]
        t_maxes: Vec<f64>,
        #[arg(long = "field", required = true, num_args = 1)]
        fields: Vec<String>,
        #[arg(long)]
        horizon: f64,
    },
}

fn parse_field_sets(raw: &[String]) -> nqp::Result<Vec<Vec<f64>>> {
    raw.iter()
        .map(|s| {
            s.split([',', ';'])
                .map(|x| x.trim().parse::<f64>().map_err(|e| NqpError::Config(format!("bad field value {x:?}: {e}"))))
                .collect()
        })
        .collect()
}

fn load_config(cli: &Cli) -> nqp::Result<ExperimentConfig> {
    match &cli.config {
        Some(path) => ExperimentConfig::load(path),
        None => preset_by_name(&cli.preset, cli.paper_scale),
    }
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir))
}

fn write_or_print(out: Option<&Path>, text: &str) -> nqp::Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> nqp::Result<()> {
    match &cli.command {
        Command::Preset { name } => {
            let name = name.as_deref().unwrap_or(&cli.preset);
            let cfg = preset_by_name(name, cli.paper_scale)?;
            write_or_print(cli.out.as_deref(), &cfg.to_json())
        }
        Command::Generate { n, kind } => {
            let cfg = load_config(cli)?;
            let kind = match kind {
                Kind::Data => DatasetKind::Data,
                Kind::Physics => DatasetKind::Physics,
            };
            let n = n.unwrap_or(match kind {
                DatasetKind::Data => cfg.train.n_data,
                DatasetKind::Physics => cfg.train.n_phys,
            });
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir).join("data.nqpd"));
            let s = commands::cmd_generate(&cfg, n, kind, cli.seed, &out)?;
            println!("n = {}, bytes = {}, seed = {}, path = {}", s.n_samples, s.bytes, s.seed, s.path.display());
            Ok(())
        }
        Command::Train { data } => {
            let cfg = load_config(cli)?;
            let dir = out_dir(cli, &cfg);
            let art = commands::cmd_train(&cfg, data, cli.seed, &dir)?;
            if let (Some(first), Some(last)) = (art.report.first(), art.report.last()) {
                println!("epochs = {}, L(1) = {:.6e}, L(end) = {:.6e}", last.epoch, first.l, last.l);
            }
            println!("checkpoint = {}, loss = {}", art.checkpoint.display(), art.loss_csv.display());
            Ok(())
        }
        Command::Predict { checkpoint, field, rho0, horizon, project } => {
            let cfg = load_config(cli)?;
            let (params, meta) = commands::load_model(&cfg, checkpoint)?;
            let dt = meta.dt;
            let steps = match horizon {
                Some(t) => commands::horizon_steps(dt, *t)?,
                None => params.config.n_steps,
            };
            let rho = match rho0 {
                Some(j) if *j < cfg.system.dim() => DensityMatrix::basis_projector(cfg.system.dim(), *j),
                Some(j) => return Err(NqpError::Config(format!("rho0 = {j} outside a {}-level system", cfg.system.dim()))),
                None => cfg.initial_state(),
            };
            let traj = commands::cmd_predict(&cfg, &params, dt, &rho, field, steps, *project)?;
            write_or_print(cli.out.as_deref(), &commands::trajectory_csv(&traj))
        }
        Command::Validate { checkpoint, fields, horizon } => {
            let cfg = load_config(cli)?;
            let (params, meta) = commands::load_model(&cfg, checkpoint)?;
            let steps = match horizon {
                Some(t) => commands::horizon_steps(meta.dt, *t)?,
                None => params.config.n_steps,
            };
            let report = commands::cmd_validate(&cfg, &params, meta.dt, &parse_field_sets(fields)?, steps)?;
            match &cli.out {
                Some(dir) => report.write(dir, "validation")?,
                None => print!("{}", report.to_csv()),
            }
            Ok(())
        }
        Command::AblateTmax { t_maxes, fields, horizon } => {
            let cfg = load_config(cli)?;
            let dir = out_dir(cli, &cfg).join("ablate_tmax");
            let report = commands::cmd_ablate_tmax(&cfg, t_maxes, &parse_field_sets(fields)?, *horizon, cli.seed, &dir)?;
            for r in &report.runs {
                match &r.error {
                    Some(e) => println!("t_max = {}: failed: {e}", r.t_max),
                    None => println!("t_max = {}: final loss {:.6e}", r.t_max, r.final_loss.unwrap_or(f64::NAN)),
                }
            }
            println!("table = {}", dir.join("ablation_populations.csv").display());
            if report.runs.iter().all(|r| r.error.is_some()) {
                return Err(NqpError::Config("every ablation run failed".into()));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("NQP_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    #[cfg(feature = "parallel")]
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(if e.is_divergence() { 3 } else { 2 })
        }
    }
}
