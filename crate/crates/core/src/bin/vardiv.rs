use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vardiv::binary::save_codebook;
use vardiv::harness::*;
use vardiv::predictor::{save_model, AnyModel};
use vardiv::sampler::run_config;
use vardiv::{Error, Result};

#[derive(Parser)]
#[command(name = "vardiv", version, about = "Diverse next-scale sampling: corpus, models, runs, sweeps and reports")]
struct Cli {
    /// JSON config merged over its preset (desk when absent).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset used when no config file is given.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the synthetic corpus to <out>/corpus.
    Synth,
    /// Fit the residual codebook on the corpus.
    FitCodebook,
    /// Build the prototype model from corpus and codebook.
    BuildModel,
    /// Fit the linear predictor on prototype teacher data.
    Train,
    /// Generate samples for one condition.
    Generate {
        #[arg(long, default_value = "scale_travel")]
        method: String,
        #[arg(long, default_value_t = 0)]
        condition: u64,
        #[arg(long, default_value_t = 4)]
        samples: usize,
        /// Model directory (defaults to <out>/model).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run methods with their default settings and evaluate them.
    Run {
        /// Methods to run; all configured methods when empty.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Sweep the configured axes and extract Pareto fronts.
    Sweep {
        /// Put a generation timestamp comment into pareto.svg.
        #[arg(long)]
        svg_timestamp: bool,
    },
    /// Per-sample wall time of each method relative to the baseline.
    Bench {
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Summarize run directories into markdown and CSV.
    Report { runs: Vec<PathBuf> },
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut c = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset(&cli.preset)?,
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(w) = cli.workers {
        c.workers = w;
    }
    if let Some(o) = &cli.out {
        c.out = o.clone();
    }
    c.validate()?;
    Ok(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    let out = cfg.out.clone();
    match &cli.cmd {
        Cmd::Synth => {
            let path = synth_corpus(&cfg.corpus, cfg.seed, &out.join(CORPUS_DIR))?;
            println!("wrote {}", path.display());
        }
        Cmd::FitCodebook => {
            let corpus = Corpus::load(&out.join(CORPUS_DIR))?;
            let cb = fit_corpus_codebook(&corpus, &cfg)?;
            let path = out.join(CODEBOOK_FILE);
            save_codebook(&path, &cb)?;
            println!("wrote {} (V={}, D={})", path.display(), cb.len(), cb.dim());
        }
        Cmd::BuildModel => {
            let corpus = Corpus::load(&out.join(CORPUS_DIR))?;
            let cb = load_corpus_codebook(&out)?;
            let model = build_prototype_model(&corpus, cb, &cfg)?;
            let path = save_model(&out.join(MODEL_DIR), &AnyModel::Prototype(model))?;
            println!("wrote {}", path.display());
        }
        Cmd::Train => {
            let ws = Workspace::load(cfg.clone(), None)?;
            let proto = ws
                .model
                .as_prototype()
                .ok_or_else(|| Error::Config("train needs the prototype model in <out>/model".into()))?;
            let (linear, report) = train_from_prototypes(proto, &cfg)?;
            for (e, l) in report.epoch_loss.iter().enumerate() {
                println!("epoch {:3}  loss {l:.6}", e + 1);
            }
            let path = save_model(&out.join(LINEAR_DIR), &AnyModel::Linear(linear))?;
            println!("wrote {}", path.display());
        }
        Cmd::Generate {
            method,
            condition,
            samples,
            model,
        } => {
            let method = Method::parse(method)?;
            let ws = Workspace::load(cfg.clone(), model.as_deref())?;
            let cond = ws
                .corpus
                .conditions
                .iter()
                .map(|(c, _)| c)
                .find(|c| c.condition_id() == *condition)
                .ok_or_else(|| Error::Range(format!("corpus has no condition {condition}")))?;
            let dir = out.join("generate").join(method.name());
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })?;
            let point = SweepPoint::defaults(method, &cfg);
            for s in 0..*samples {
                let mut g = point.generation_config(&cfg)?;
                g.seed = sample_seed(cfg.seed, s);
                let r = run_config(&ws.model, cond, &g)?;
                let path = dir.join(format!("c{condition:03}_s{s:02}.ppm"));
                r.image.write_ppm(&path)?;
                println!("wrote {}", path.display());
            }
        }
        Cmd::Run { methods, model } => {
            let ws = Workspace::load(cfg.clone(), model.as_deref())?;
            let methods = if methods.is_empty() {
                cfg.methods.clone()
            } else {
                methods.iter().map(|m| Method::parse(m)).collect::<Result<_>>()?
            };
            let mut records = Vec::new();
            for m in methods {
                let run = run_method(&ws, m)?;
                let dir = persist_run(&out, &run, &ws.condition_ids())?;
                println!("wrote {}", dir.display());
                records.push(run.record);
            }
            print!("\n{}", markdown(&summarize(&records)?));
        }
        Cmd::Sweep { svg_timestamp } => {
            let ws = Workspace::load(cfg.clone(), None)?;
            let outcome = sweep(&ws)?;
            let dir = out.join(SWEEP_DIR);
            write_sweep(&dir, &outcome, *svg_timestamp)?;
            let on_front = outcome.rows.iter().filter(|r| r.global_front).count();
            println!("{} points, {on_front} on the global front; wrote {}", outcome.rows.len(), dir.display());
        }
        Cmd::Bench { samples } => {
            let ws = Workspace::load(cfg.clone(), None)?;
            println!("| method | samples | mean ms | ratio |\n|---|---|---|---|");
            for b in bench_overhead(&ws, *samples)? {
                println!("| {} | {} | {:.3} | {:.3} |", b.method.name(), b.samples, b.mean_ns / 1e6, b.ratio);
            }
        }
        Cmd::Report { runs } => {
            let dirs: Vec<PathBuf> = if runs.is_empty() {
                cfg.methods.iter().map(|m| out.join(RUNS_DIR).join(m.name())).collect()
            } else {
                runs.clone()
            };
            let refs: Vec<&std::path::Path> = dirs.iter().map(PathBuf::as_path).collect();
            let rows = summarize(&load_records(&refs)?)?;
            print!("{}", markdown(&rows));
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            let path = out.join("report.csv");
            std::fs::write(&path, report_csv(&rows)?).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            println!("\nwrote {}", path.display());
        }
    }
    Ok(())
}
