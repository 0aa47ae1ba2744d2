use vardiv::harness::{sample_seed, ExperimentConfig, Method, SweepPoint, Workspace};
use vardiv::metrics::quality_proxy;
use vardiv::sampler::{run_config, Phase};
use vardiv::schedule::{AnnealSchedule, AnnealTarget, AnnealVariant};

fn desk() -> (ExperimentConfig, Workspace) {
    let cfg = ExperimentConfig::desk();
    let ws = Workspace::in_memory(cfg.clone()).unwrap();
    (cfg, ws)
}

#[test]
fn annealing_spreads_first_stage_choices() {
    let (cfg, ws) = desk();
    let mut g = SweepPoint::defaults(Method::Anneal, &cfg).generation_config(&cfg).unwrap();
    g.text_anneal = Some(AnnealSchedule::new(AnnealVariant::Cosine, 1.0, 4, AnnealTarget::TextEmbedding).unwrap());
    for (c, _) in &ws.corpus.conditions {
        let mut seen = std::collections::BTreeSet::new();
        for s in 0..10 {
            g.seed = sample_seed(cfg.seed, s);
            let r = run_config(&ws.model, c, &g).unwrap();
            seen.insert(r.trace[0].prototype.unwrap());
        }
        assert!(seen.len() >= 2, "condition {}: {seen:?}", c.condition_id());
    }
}

#[test]
fn refinement_raises_quality_over_anneal_only() {
    let (cfg, ws) = desk();
    let anneal = SweepPoint::defaults(Method::Anneal, &cfg).generation_config(&cfg).unwrap();
    let travel = SweepPoint::defaults(Method::ScaleTravel, &cfg).generation_config(&cfg).unwrap();
    let (mut qa, mut qt) = (0.0, 0.0);
    for (c, refs) in &ws.corpus.conditions {
        for s in 0..50 {
            let seed = sample_seed(cfg.seed, s);
            let a = run_config(&ws.model, c, &vardiv::sampler::GenerationConfig { seed, ..anneal.clone() }).unwrap();
            let t = run_config(&ws.model, c, &vardiv::sampler::GenerationConfig { seed, ..travel.clone() }).unwrap();
            // Stage A of refinement replays the anneal-only run up to l.
            let stage_a: Vec<_> = t.trace.iter().filter(|r| r.phase == Phase::Generate).map(|r| r.prototype).collect();
            let plain: Vec<_> = a.trace.iter().take(stage_a.len()).map(|r| r.prototype).collect();
            assert_eq!(stage_a, plain);
            qa += quality_proxy(&a.image, refs).unwrap();
            qt += quality_proxy(&t.image, refs).unwrap();
        }
    }
    let n = (50 * ws.corpus.conditions.len()) as f64;
    assert!(qt / n > qa / n, "refined {} vs anneal-only {}", qt / n, qa / n);
}
