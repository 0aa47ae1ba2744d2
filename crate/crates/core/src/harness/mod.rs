//! Experiment orchestration: corpus synthesis, model preparation, method
//! runs, sweeps with Pareto fronts, timing and reports.

mod config;
mod corpus;
mod report;
mod run;

pub use config::{
    canonical_json, digest_value, format_g12, CorpusSpec, ExperimentConfig, GenerationDefaults, Method, SweepAxes,
    TrainSpec,
};
pub use corpus::{condition_embedding, condition_images, corpus_decoder, synth_corpus, Corpus, CorpusEntry, CorpusManifest, CORPUS_MANIFEST};
pub use report::{load_records, markdown, pareto_svg, report_csv, summarize, ReportRow};
pub use run::{
    bench_overhead, build_prototype_model, fit_corpus_codebook, load_corpus_codebook, load_record, mark_fronts,
    persist_run, prepare, read_metrics_csv, read_sweep_csv, run_method, sample_seed, sweep, sweep_points, teacher_dataset,
    train_from_prototypes, write_metrics_csv, write_sweep, BenchEntry, MethodRun, RunRecord, SweepOutcome, SweepPoint,
    SweepRow, Workspace, CODEBOOK_FILE, CORPUS_DIR, LINEAR_DIR, METRICS_FILE, MODEL_DIR, RECORD_FILE, RUNS_DIR, SWEEP_DIR,
};
