use std::path::Path;

use vardiv::harness::*;
use vardiv::predictor::{save_model, AnyModel, Predictor};
use vardiv::sampler::run_config;

fn small(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.corpus.conditions = 3;
    c.seeds = 4;
    c.codebook_size = 32;
    c.codebook_iters = 8;
    c.sweep.sigma = vec![1.0];
    c.sweep.k_max = vec![2, 3];
    c.sweep.m = vec![2];
    c.out = out.to_path_buf();
    c
}

#[test]
fn disk_pipeline_runs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    prepare(&cfg).unwrap();
    let ws = Workspace::load(cfg.clone(), None).unwrap();
    let mut dirs = Vec::new();
    for m in Method::ALL {
        let run = run_method(&ws, m).unwrap();
        assert_eq!(run.record.rows.len(), 3);
        assert_eq!(run.record.samples.len(), 12);
        assert_eq!(run.record.config_digest, SweepPoint::defaults(m, &cfg).digest(&cfg));
        dirs.push(persist_run(dir.path(), &run, &ws.condition_ids()).unwrap());
    }
    let refs: Vec<&Path> = dirs.iter().map(|d| d.as_path()).collect();
    let rows = summarize(&load_records(&refs).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].method, "baseline");
    assert_eq!(rows[0].d_vendi_pct, 0.0);
    let md = markdown(&rows);
    assert_eq!(md.lines().filter(|l| l.starts_with("| ")).count(), 4);
}

#[test]
fn sweep_files_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let ws = Workspace::in_memory(cfg.clone()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    write_sweep(&a, &sweep(&ws).unwrap(), false).unwrap();
    let ws2 = Workspace::in_memory(ExperimentConfig { workers: 3, ..cfg }).unwrap();
    write_sweep(&b, &sweep(&ws2).unwrap(), false).unwrap();
    for f in ["sweep.csv", METRICS_FILE, "pareto.svg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let rows = read_sweep_csv(&a.join("sweep.csv")).unwrap();
    // |methods| x |sigma| x |k_max| x |m|
    assert_eq!(rows.len(), 3 * 2);
    assert_eq!(read_metrics_csv(&a.join(METRICS_FILE)).unwrap().len(), rows.len() * 3);
}

#[test]
fn trained_linear_model_generates() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.train.epochs = 3;
    let ws = prepare(&cfg).unwrap();
    let proto = ws.model.as_prototype().unwrap();
    let (linear, report) = train_from_prototypes(proto, &cfg).unwrap();
    assert_eq!(report.epoch_loss.len(), 3);
    assert!(report.epoch_loss.last().unwrap() < report.epoch_loss.first().unwrap());
    let ldir = dir.path().join(LINEAR_DIR);
    save_model(&ldir, &AnyModel::Linear(linear)).unwrap();
    let lws = Workspace::load(cfg.clone(), Some(&ldir)).unwrap();
    assert!(lws.model.as_prototype().is_none());
    let run = run_method(&lws, Method::ScaleTravel).unwrap();
    assert!(run.record.rows.iter().all(|r| r.vendi >= 1.0 && r.quality <= 0.0));
}

#[test]
fn desk_method_ordering() {
    let ws = Workspace::in_memory(ExperimentConfig::desk()).unwrap();
    let base = run_method(&ws, Method::Baseline).unwrap().record;
    let anneal = run_method(&ws, Method::Anneal).unwrap().record;
    let travel = run_method(&ws, Method::ScaleTravel).unwrap().record;
    let up = anneal.rows.iter().zip(&base.rows).filter(|(a, b)| a.vendi > b.vendi).count();
    assert!(up * 10 >= 9 * base.rows.len(), "anneal above baseline on {up} conditions");
    let near_one = base.rows.iter().filter(|r| (r.vendi - 1.0).abs() <= 0.05).count();
    assert!(near_one * 2 >= base.rows.len(), "{near_one} collapsed conditions");
    assert!(travel.mean.quality > anneal.mean.quality);
    assert!(travel.mean.vendi > base.mean.vendi);
}

#[test]
fn bench_ratios() {
    let mut cfg = ExperimentConfig::desk();
    cfg.corpus.conditions = 2;
    let ws = Workspace::in_memory(cfg).unwrap();
    let b = bench_overhead(&ws, 40).unwrap();
    assert_eq!(b[0].method, Method::Baseline);
    assert_eq!(b[0].ratio, 1.0);
    assert!(b[1].ratio <= b[2].ratio, "anneal {} vs scale_travel {}", b[1].ratio, b[2].ratio);
}

#[test]
fn generated_images_match_the_corpus_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let ws = prepare(&cfg).unwrap();
    let cond = &ws.corpus.conditions[1].0;
    let mut g = SweepPoint::defaults(Method::ScaleTravel, &cfg).generation_config(&cfg).unwrap();
    g.seed = sample_seed(cfg.seed, 0);
    let r = run_config(&ws.model, cond, &g).unwrap();
    assert_eq!(r.image.dims(), (16, 16));
    assert_eq!(r.pyramid.len(), ws.model.schedule().len());
    let p = dir.path().join("x.ppm");
    r.image.write_ppm(&p).unwrap();
    assert_eq!(vardiv::image::Image::read_ppm(&p).unwrap().to_bytes(), r.image.to_bytes());
}
