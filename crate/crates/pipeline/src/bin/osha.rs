use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use osha_dataset::{compute_stats, preprocess, ProcessedDataset};
use osha_nn::gradcheck;
use osha_nn::{load_checkpoint, Model};
use osha_pipeline::{ablation_suite, collect, evaluate, train, CollectConfig, EvalConfig, Policy, TrainConfig};
use osha_sim::TrackId;

#[derive(Parser)]
#[command(name = "osha", about = "Highway overtaking lab: collect, preprocess, train, evaluate")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Record expert episodes.
    Collect {
        #[arg(long, default_value_t = 6)]
        episodes: usize,
        #[arg(long, default_value_t = 15.0)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// training | evaluation | straightaway
        #[arg(long, default_value = "training")]
        track: String,
        #[arg(long, default_value_t = 20_000)]
        steps: u32,
        #[arg(long)]
        no_rasters: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prune, augment and extract futures into one processed file.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dataset statistics of a processed file.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Train one model; writes best.ckpt and train_log.json into --out.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// TrainConfig JSON; missing fields take the desk defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-loop evaluation of a checkpoint, or of `expert`.
    Eval {
        /// Checkpoint path, or `expert`.
        #[arg(long)]
        ckpt: String,
        #[arg(long, default_value_t = 15.0)]
        density: f64,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 10_000)]
        seed: u64,
        #[arg(long, default_value_t = 20_000)]
        max_steps: u32,
        /// Write the JSON report here (and the table next to it as .txt).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train or load all five variants and evaluate them on shared seeds.
    Ablation {
        /// Processed file; without it missing variants are evaluated untrained.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of paired evaluation episodes (seeds) per density.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, default_value_t = 10_000)]
        eval_seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "5,15,25")]
        densities: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every parameterized operation.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        configs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        per_tensor: usize,
    },
}

fn train_config(path: Option<&Path>) -> Result<TrainConfig> {
    let Some(p) = path else { return Ok(TrainConfig::desk()) };
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    // start from the desk preset so partial files work
    let mut base = serde_json::to_value(TrainConfig::desk())?;
    merge(&mut base, serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?);
    Ok(serde_json::from_value(base)?)
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

fn write_report(path: &Path, json: &str, table: &str) -> Result<()> {
    std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    let txt = path.with_extension("txt");
    std::fs::write(&txt, table).with_context(|| format!("writing {}", txt.display()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Collect { episodes, density, seed, track, steps, no_rasters, out } => {
            let track = TrackId::from_name(&track).with_context(|| format!("unknown track {track}"))?;
            let cfg = CollectConfig { episodes, density, seed, track, steps, rasters: !no_rasters };
            for s in collect(&cfg, &out)? {
                let m = &s.manifest;
                println!(
                    "seed {} records {} laps {} raw commands {}{}",
                    m.seed,
                    m.records,
                    m.laps,
                    s.raw_commands,
                    m.collision_step.map_or(String::new(), |c| format!(" collision at step {c}"))
                );
            }
        }
        Cmd::Preprocess { input, out } => {
            let data = preprocess(&input)?;
            data.write(&out)?;
            println!("{} episodes, {} samples -> {}", data.episodes.len(), data.sample_count(), out.display());
        }
        Cmd::Stats { data, json } => {
            let stats = compute_stats(&ProcessedDataset::read(&data)?);
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                print!("{}", stats.render());
            }
        }
        Cmd::Train { data, config, out } => {
            let cfg = train_config(config.as_deref())?;
            let data = ProcessedDataset::read(&data)?;
            let (_, report) = train(&cfg, &data, Some(&out), &mut |e| {
                eprintln!("epoch {:>3} train {:.4} val {:.4} acc {:.4}", e.epoch, e.train.total, e.val.total, e.val_lane_accuracy)
            })?;
            print!("{}", report.render());
        }
        Cmd::Eval { ckpt, density, episodes, seed, max_steps, report } => {
            let cfg = EvalConfig { density, episodes, seed, max_steps, ..EvalConfig::default() };
            let model: Option<Model> = if ckpt == "expert" { None } else { Some(load_checkpoint(Path::new(&ckpt))?) };
            let r = match &model {
                Some(m) => evaluate(Policy::Model(m), &ckpt, &cfg)?,
                None => evaluate(Policy::Expert, "expert", &cfg)?,
            };
            let table = r.render();
            print!("{table}");
            if let Some(p) = report {
                write_report(&p, &r.to_json()?, &table)?;
            }
        }
        Cmd::Ablation { data, seeds, eval_seed, densities, config, out } => {
            let cfg = train_config(config.as_deref())?;
            let data = data.map(|p| ProcessedDataset::read(&p)).transpose()?;
            let eval = EvalConfig { episodes: seeds, seed: eval_seed, ..EvalConfig::default() };
            let r = ablation_suite(data.as_ref(), &cfg, &eval, &densities, &out, &mut |a, e| {
                eprintln!("{} epoch {:>3} train {:.4} val {:.4}", a.slug(), e.epoch, e.train.total, e.val.total)
            })?;
            print!("{}", r.render());
        }
        Cmd::Gradcheck { configs, seed, per_tensor } => {
            if configs == 0 {
                bail!("need at least one configuration");
            }
            let results = gradcheck::suite(seed, configs, per_tensor)?;
            let mut failed = 0;
            for (c, checks) in &results {
                for g in checks {
                    let status = if g.passed() { "ok" } else { "FAIL" };
                    println!(
                        "{status:<4} {:<22} checked {:>4} max abs {:.2e} max rel {:.2e}  {c:?}",
                        g.name, g.checked, g.max_abs_err, g.max_rel_err
                    );
                    if !g.passed() {
                        failed += 1;
                    }
                }
            }
            println!("{} configs, {failed} failing checks", results.len());
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
