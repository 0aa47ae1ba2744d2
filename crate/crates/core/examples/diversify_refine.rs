//! Baseline, annealed and scale-travel generation for one condition, with the
//! prototype each run settles on and its distance to the nearest corpus image.

use vardiv::harness::{sample_seed, ExperimentConfig, Method, SweepPoint, Workspace};
use vardiv::metrics::{quality_proxy, vendi_score};
use vardiv::sampler::{run_config, Phase};

fn main() -> vardiv::Result<()> {
    let cfg = ExperimentConfig::desk();
    let ws = Workspace::in_memory(cfg.clone())?;
    let (c, refs) = &ws.corpus.conditions[3];
    for method in Method::ALL {
        let mut images = Vec::new();
        let mut line = String::new();
        for s in 0..cfg.seeds {
            let mut g = SweepPoint::defaults(method, &cfg).generation_config(&cfg)?;
            g.seed = sample_seed(cfg.seed, s);
            let r = run_config(&ws.model, c, &g)?;
            let last = r.trace.iter().rev().find(|t| t.phase != Phase::Travel).and_then(|t| t.prototype);
            line.push_str(&last.map_or("-".into(), |p| p.to_string()));
            images.push(r.image);
        }
        let q: f64 = images.iter().map(|i| quality_proxy(i, refs)).sum::<vardiv::Result<f64>>()? / images.len() as f64;
        println!("{:13} prototypes {line}  Vendi {:.3}  Q {q:.4}", method.name(), vendi_score(&images)?);
    }
    Ok(())
}
