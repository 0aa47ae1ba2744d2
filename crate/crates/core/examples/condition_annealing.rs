//! How much an annealed condition drifts from the clean one at each stage, and
//! which prototype the model picks from it.

use vardiv::grid::{mix_ids, RngStream};
use vardiv::harness::{ExperimentConfig, Workspace};
use vardiv::predictor::Predictor;
use vardiv::sampler::anneal_condition;

fn main() -> vardiv::Result<()> {
    let cfg = ExperimentConfig::desk();
    let sched = cfg.generation.text_anneal.expect("desk anneals the text embedding");
    let ws = Workspace::in_memory(cfg)?;
    let model = ws.model.as_prototype().expect("prototype model");
    let c = &ws.corpus.conditions[0].0;
    let sos = model.sos(c)?;
    let canvas = vardiv::grid::FeatureGrid::zeros(16, 16, 3);
    for k in 1..=4 {
        let alpha = sched.level(k)?;
        let mut picks = [0usize; 4];
        let mut cos = 0.0;
        for s in 0..200 {
            let x = anneal_condition(c, alpha, RngStream::new(1, mix_ids(&[k as u64, s])))?;
            let norm = x.values().iter().map(|v| v * v).sum::<f64>().sqrt();
            cos += x.values().iter().zip(c.values()).map(|(a, b)| a * b).sum::<f64>() / norm / 200.0;
            picks[model.select(&canvas, &x, &sos, 1)?] += 1;
        }
        println!("stage {k}: alpha {alpha:.2}, mean cosine to clean {cos:.3}, first-stage picks {picks:?}");
    }
    Ok(())
}
