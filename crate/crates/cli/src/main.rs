use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vstream::baselines::{Comp1Policy, PolicyKind};
use vstream::experiment::{
    self, EpisodeSeeds, EvalOptions, ExperimentKind, Manifest, Policy, RunOptions,
};
use vstream::metrics;
use vstream::mobility::{self, TraceGenParams};
use vstream::oracle::{self, Fixture};
use vstream::par::Execution;
use vstream::plot::{self, Panel};
use vstream::{config, SimConfig};

#[derive(Parser)]
#[command(name = "vstream", version, about = "Vehicular video-streaming simulator and DDPG pushing agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file; the built-in desk profile when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set n_mbs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seeds, comma separated; the config seed when absent.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run cells one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn config(&self) -> Result<SimConfig> {
        let cfg = match &self.config {
            Some(path) => config::load_config_with_overrides(path, &self.overrides)
                .with_context(|| format!("loading {}", path.display()))?,
            None => SimConfig::desk().apply_overrides(&self.overrides)?,
        };
        Ok(cfg)
    }

    fn seeds(&self, cfg: &SimConfig) -> Vec<u64> {
        if self.seed.is_empty() {
            vec![cfg.seed]
        } else {
            self.seed.clone()
        }
    }

    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one learned policy and write its log, checkpoint and manifest.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ddpg")]
        policy: PolicyKind,
        /// Episodes; `n_episodes` from the config when absent.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate a policy (learned policies need `--checkpoint`).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ddpg")]
        policy: PolicyKind,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
    /// Train and evaluate every policy on every seed.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Also run each cell under this mobility trace (FSMC vs trace).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Repeat the comparison for several network sizes.
    SweepScale {
        #[command(flatten)]
        run: RunArgs,
        /// Settings as `KxN`, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "3x6,4x8,5x10")]
        scales: Vec<String>,
    },
    /// Evaluate one checkpoint at several velocities.
    SweepVelocity {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "49,70,91")]
        velocities: Vec<f64>,
    },
    /// Generate a synthetic highway trace.
    TraceGen {
        #[arg(long)]
        vehicles: usize,
        #[arg(long)]
        slots: usize,
        /// km/h
        #[arg(long)]
        mean_speed: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        mbs: usize,
        /// Cell coverage in metres.
        #[arg(long, default_value_t = 500.0)]
        coverage: f64,
        #[arg(long, default_value_t = 0.2)]
        jitter: f64,
        #[arg(long, default_value = "trace.csv")]
        out: PathBuf,
    },
    /// Check simulated transitions against the analytic pmfs.
    ValidateOracle {
        #[arg(long, default_value = "l1")]
        fixture: String,
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Swap in the corrupted delivery rule (negative control).
        #[arg(long)]
        corrupted: bool,
        /// Also write the report as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render metric CSVs to SVG panels.
    Plot {
        csvs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "reward,quality,stalls,drops,efficiency,backhaul,fluctuation")]
        panels: Vec<Panel>,
        #[arg(long, default_value_t = 1)]
        smooth: usize,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Policies, comma separated; all six when absent.
    #[arg(long, value_delimiter = ',')]
    policy: Vec<PolicyKind>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Training episodes per learned cell; `n_episodes` when absent.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, default_value_t = 100)]
    eval_episodes: usize,
}

impl RunArgs {
    fn options(&self, cfg: &SimConfig) -> Result<RunOptions> {
        Ok(RunOptions {
            out_dir: self.common.out_dir()?.to_path_buf(),
            seeds: self.common.seeds(cfg),
            policies: if self.policy.is_empty() {
                PolicyKind::ALL.to_vec()
            } else {
                self.policy.clone()
            },
            train_episodes: self.episodes.unwrap_or(cfg.n_episodes),
            eval_episodes: self.eval_episodes,
            checkpoint: self.checkpoint.clone(),
            exec: self.common.exec(),
        })
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { common, policy, episodes } => train(&common, policy, episodes),
        Command::Eval {
            common,
            policy,
            checkpoint,
            episodes,
        } => eval(&common, policy, checkpoint.as_deref(), episodes),
        Command::Compare { run, trace } => {
            let cfg = run.common.config()?;
            let kind = match trace {
                Some(path) => {
                    let schedule = mobility::load_trace(&path)?;
                    schedule.check_network(cfg.n_vehicles, cfg.n_mbs)?;
                    ExperimentKind::Trace(Arc::new(schedule))
                }
                None => ExperimentKind::Compare,
            };
            experiment(&kind, &cfg, &run)
        }
        Command::SweepScale { run, scales } => {
            let settings = scales.iter().map(|s| parse_scale(s)).collect::<Result<Vec<_>>>()?;
            experiment(&ExperimentKind::Scale(settings), &run.common.config()?, &run)
        }
        Command::SweepVelocity { run, velocities } => {
            experiment(&ExperimentKind::Velocity(velocities), &run.common.config()?, &run)
        }
        Command::TraceGen {
            vehicles,
            slots,
            mean_speed,
            seed,
            mbs,
            coverage,
            jitter,
            out,
        } => {
            let params = TraceGenParams {
                vehicles,
                slots,
                mean_speed_kmh: mean_speed,
                coverage_m: coverage,
                n_mbs: mbs,
                speed_jitter: jitter,
            };
            let trace = mobility::generate_trace(&params, &mut ChaCha8Rng::seed_from_u64(seed));
            let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            trace.write_csv(std::io::BufWriter::new(file))?;
            println!("wrote {} ({} slots, {} vehicles)", out.display(), trace.horizon(), trace.n_vehicles());
            Ok(())
        }
        Command::ValidateOracle {
            fixture,
            samples,
            seed,
            corrupted,
            out,
        } => {
            let fixture = Fixture::by_name(&fixture)?;
            let rule: oracle::DeliveryRule = if corrupted {
                oracle::corrupted_rule
            } else {
                vstream::env::deliver_high_quality_first
            };
            let report = oracle::validate_empirical(&fixture, samples, rule, seed, Execution::Parallel)?;
            print!("{}", report.to_text());
            if let Some(path) = out {
                fs::write(&path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(())
        }
        Command::Plot {
            csvs,
            panels,
            smooth,
            out,
        } => plot_files(&csvs, &panels, smooth, &out),
    }
}

fn parse_scale(s: &str) -> Result<(usize, usize)> {
    let Some((k, n)) = s.split_once('x') else {
        bail!("scale `{s}` is not of the form KxN");
    };
    Ok((k.trim().parse()?, n.trim().parse()?))
}

fn experiment(kind: &ExperimentKind, cfg: &SimConfig, run: &RunArgs) -> Result<()> {
    let opts = run.options(cfg)?;
    let manifest = experiment::run_experiment(kind, cfg, &opts)?;
    println!(
        "{}: {} outputs in {} (config {})",
        manifest.kind,
        manifest.outputs.len(),
        opts.out_dir.display(),
        &manifest.config_hash[..12]
    );
    Ok(())
}

fn train(common: &Common, policy: PolicyKind, episodes: Option<usize>) -> Result<()> {
    if !policy.is_learned() {
        bail!("{policy} has nothing to train");
    }
    let cfg = common.config()?;
    let seeds = common.seeds(&cfg);
    let out = common.out_dir()?;
    let episodes = episodes.unwrap_or(cfg.n_episodes);
    let mobility = experiment::mobility_for(&cfg)?;
    let mut manifest = Manifest::new(
        "train",
        &cfg,
        &RunOptions {
            out_dir: out.to_path_buf(),
            seeds: seeds.clone(),
            policies: vec![policy],
            train_episodes: episodes,
            eval_episodes: 0,
            checkpoint: None,
            exec: common.exec(),
        },
    );
    for seed in seeds {
        let (agent, log) = experiment::train_policy(&cfg, &mobility, policy, seed, episodes, common.exec())?;
        let stem = format!("{policy}_seed{seed}");
        let log_path = out.join(format!("train_{stem}.csv"));
        experiment::write_metrics(&log_path, &log)?;
        let record = experiment::save_agent(&agent, &out.join(format!("{stem}.ckpt")), out)?;
        let tail = &log[log.len().saturating_sub(experiment::SUMMARY_WINDOW)..];
        println!(
            "seed {seed}: last-window reward {:.2}, stall rate {}, checkpoint {}",
            metrics::column_mean(tail, "total_reward").unwrap_or(f64::NAN),
            fmt_opt(metrics::column_mean(tail, "stall_rate")),
            &record.sha256[..12]
        );
        manifest.outputs.push(format!("train_{stem}.csv"));
        manifest.checkpoints.push(record);
    }
    manifest.write(out)?;
    Ok(())
}

fn eval(common: &Common, policy: PolicyKind, checkpoint: Option<&Path>, episodes: usize) -> Result<()> {
    let cfg = common.config()?;
    let out = common.out_dir()?;
    let mobility = experiment::mobility_for(&cfg)?;
    let mut checkpoints = Vec::new();
    let agent_policy = match policy {
        PolicyKind::Comp1 { fraction } => Policy::Comp1(Comp1Policy::from_fraction(fraction, &cfg)?),
        kind => {
            let Some(path) = checkpoint else {
                bail!("{kind} needs --checkpoint");
            };
            let (agent, record) = experiment::load_agent(path, &cfg)?;
            checkpoints.push(record);
            Policy::Learned {
                agent: Box::new(agent),
                lane: kind.lane(&cfg),
            }
        }
    };
    let seeds = common.seeds(&cfg);
    let mut manifest = Manifest::new(
        "eval",
        &cfg,
        &RunOptions {
            out_dir: out.to_path_buf(),
            seeds: seeds.clone(),
            policies: vec![policy],
            train_episodes: 0,
            eval_episodes: episodes,
            checkpoint: checkpoint.map(Path::to_path_buf),
            exec: common.exec(),
        },
    );
    manifest.checkpoints = checkpoints;
    for seed in seeds {
        let opts = EvalOptions {
            episodes,
            seeds: EpisodeSeeds::Evaluation,
            audit: true,
        };
        let rows = experiment::evaluate(&cfg, &mobility, &agent_policy, seed, opts)?;
        let name = format!("eval_{policy}_seed{seed}.csv");
        experiment::write_metrics(&out.join(&name), &rows)?;
        println!(
            "seed {seed}: reward {:.2}, stall rate {}, efficiency {}, quality {}",
            metrics::column_mean(&rows, "total_reward").unwrap_or(f64::NAN),
            fmt_opt(metrics::column_mean(&rows, "stall_rate")),
            fmt_opt(metrics::column_mean(&rows, "transmission_efficiency")),
            fmt_opt(metrics::column_mean(&rows, "mean_quality")),
        );
        manifest.outputs.push(name);
    }
    manifest.write(out)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

fn plot_files(csvs: &[PathBuf], panels: &[Panel], smooth: usize, out: &Path) -> Result<()> {
    if csvs.is_empty() {
        bail!("no CSV files given");
    }
    let mut runs = Vec::new();
    for path in csvs {
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let rows = metrics::read_csv(file).with_context(|| format!("reading {}", path.display()))?;
        let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        runs.push((label, rows));
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for &panel in panels {
        match plot::render_panel(panel, &runs, smooth) {
            Ok(svg) => {
                let path = out.join(format!("{}.svg", panel.name()));
                fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
                println!("wrote {}", path.display());
            }
            Err(plot::PlotError::Empty) => eprintln!("skipping {}: no defined values", panel.name()),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}
