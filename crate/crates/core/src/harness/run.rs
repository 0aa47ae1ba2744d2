use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binary::{load_codebook, read_file, save_codebook, write_file};
use crate::codec::{fit_codebook, residual_samples, Codebook};
use crate::error::{Error, Result};
use crate::grid::{mix_ids, RngStream};
use crate::image::Image;
use crate::metrics::{evaluate, pareto_front, FeatureProjection, MetricsReport, MetricsRow, ParetoPoint, SampleSet};
use crate::predictor::{
    load_model, save_model, train_linear, AnyModel, LinearModel, Predictor, PrototypeModel, TrainReport, TrainSample,
};
use crate::sampler::{run_config, GenerationConfig, GenerationResult, Phase};
use crate::schedule::{AnnealSchedule, AnnealTarget, AnnealVariant, CfgSchedule};

use super::config::{digest_value, ExperimentConfig, Method};
use super::corpus::{condition_embedding, corpus_decoder, synth_corpus, Corpus};

pub const CORPUS_DIR: &str = "corpus";
pub const CODEBOOK_FILE: &str = "codebook.varc";
pub const MODEL_DIR: &str = "model";
pub const LINEAR_DIR: &str = "linear";
pub const RUNS_DIR: &str = "runs";
pub const SWEEP_DIR: &str = "sweep";
pub const RECORD_FILE: &str = "record.json";
pub const METRICS_FILE: &str = "metrics.csv";

const FRECHET_FEATURES: usize = 8;

/// Fits the codebook on the multi-scale residuals of every corpus image.
pub fn fit_corpus_codebook(corpus: &Corpus, config: &ExperimentConfig) -> Result<Codebook> {
    let schedule = config.schedule()?;
    let maps: Vec<_> = corpus.feature_maps().into_iter().flat_map(|(_, m)| m).collect();
    let samples = residual_samples(&maps, &schedule)?;
    fit_codebook(
        &samples,
        config.codebook_size,
        config.codebook_iters,
        RngStream::new(config.seed, mix_ids(&[0x6362])),
    )
}

pub fn build_prototype_model(corpus: &Corpus, codebook: Codebook, config: &ExperimentConfig) -> Result<PrototypeModel> {
    PrototypeModel::build(
        corpus.feature_maps(),
        config.schedule()?,
        codebook,
        corpus_decoder(),
        config.model,
        RngStream::new(config.seed, mix_ids(&[0x6d6f64])),
    )
}

/// Teacher-forced examples: every prototype canvas `Z^p_{k-1}` paired with its
/// residual tokens, once with the clean condition and once with the null one.
pub fn teacher_dataset(model: &PrototypeModel) -> Result<Vec<TrainSample>> {
    let mut out = Vec::new();
    for set in model.sets() {
        let null = crate::predictor::ConditionEmbedding::null(set.embedding.condition_id(), set.embedding.dim());
        for cond in [&set.embedding, &null] {
            let sos = model.sos(cond)?;
            for (p, pyr) in set.pyramids.iter().enumerate() {
                for (k, grid) in pyr.grids.iter().enumerate() {
                    out.push(TrainSample {
                        canvas: set.canvas(p, k).clone(),
                        condition: cond.clone(),
                        sos: sos.clone(),
                        target: grid.clone(),
                    });
                }
            }
        }
    }
    Ok(out)
}

pub fn train_from_prototypes(model: &PrototypeModel, config: &ExperimentConfig) -> Result<(LinearModel, TrainReport)> {
    let cond_dim = model.sets().first().map_or(0, |s| s.embedding.dim());
    let init = LinearModel::new(
        model.schedule().clone(),
        model.codebook().clone(),
        model.decoder().clone(),
        cond_dim,
        model.sos_projection().to_vec(),
    )?;
    train_linear(
        &init,
        &teacher_dataset(model)?,
        config.train.epochs,
        config.train.lr,
        RngStream::new(config.seed, mix_ids(&[0x7472])),
    )
}

/// Everything a run needs, in memory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub config: ExperimentConfig,
    pub corpus: Corpus,
    pub model: AnyModel,
}

impl Workspace {
    /// Synthesizes the corpus and builds the prototype model without touching
    /// the disk.
    pub fn in_memory(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let corpus = Corpus {
            spec: config.corpus.clone(),
            conditions: (0..config.corpus.conditions as u64)
                .map(|c| {
                    let emb = condition_embedding(&config.corpus, config.seed, c)?;
                    let imgs = super::corpus::condition_images(&config.corpus, config.seed, c)?
                        .into_iter()
                        .map(|i| quantize_like_ppm(&i))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((emb, imgs))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let codebook = fit_corpus_codebook(&corpus, &config)?;
        let model = AnyModel::Prototype(build_prototype_model(&corpus, codebook, &config)?);
        Ok(Self { config, corpus, model })
    }

    /// Loads corpus and model from `config.out`; `model_dir` overrides the
    /// default prototype model location.
    pub fn load(config: ExperimentConfig, model_dir: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let corpus = Corpus::load(&config.out.join(CORPUS_DIR))?;
        let dir = model_dir.map_or_else(|| config.out.join(MODEL_DIR), Path::to_path_buf);
        let model = load_model(&dir)?;
        if model.schedule().scales() != config.scales.as_slice() {
            return Err(Error::Config(format!(
                "model in {} was built for a different schedule",
                dir.display()
            )));
        }
        Ok(Self { config, corpus, model })
    }

    pub fn projection(&self) -> FeatureProjection {
        let (h, w) = (self.config.corpus.height, self.config.corpus.width);
        FeatureProjection::new(h * w * 3, FRECHET_FEATURES, RngStream::new(self.config.seed, mix_ids(&[0x6664])))
    }

    pub fn condition_ids(&self) -> Vec<u64> {
        self.corpus.conditions.iter().map(|(c, _)| c.condition_id()).collect()
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers.max(1))
            .build()
            .map_err(|e| Error::Invariant(format!("thread pool: {e}")))
    }

    /// Generates `seeds` samples per condition for every point, in parallel;
    /// results come back sorted by (point, condition, seed).
    pub fn generate_all(&self, points: &[SweepPoint]) -> Result<Vec<Vec<Vec<GenerationResult>>>> {
        let conds: Vec<_> = self.corpus.conditions.iter().map(|(c, _)| c).collect();
        let mut tasks = Vec::new();
        for pi in 0..points.len() {
            for ci in 0..conds.len() {
                for s in 0..self.config.seeds {
                    tasks.push((pi, ci, s));
                }
            }
        }
        let configs = points
            .iter()
            .map(|p| p.generation_config(&self.config))
            .collect::<Result<Vec<_>>>()?;
        let results: Vec<((usize, usize, usize), Result<GenerationResult>)> = self.pool()?.install(|| {
            tasks
                .par_iter()
                .map(|&(pi, ci, s)| {
                    let mut cfg = configs[pi].clone();
                    cfg.seed = sample_seed(self.config.seed, s);
                    ((pi, ci, s), run_config(&self.model, conds[ci], &cfg))
                })
                .collect()
        });
        let mut sorted = results;
        sorted.sort_by_key(|(key, _)| *key);
        let mut out: Vec<Vec<Vec<GenerationResult>>> = (0..points.len())
            .map(|_| (0..conds.len()).map(|_| Vec::with_capacity(self.config.seeds)).collect())
            .collect();
        for ((pi, ci, _), r) in sorted {
            out[pi][ci].push(r?);
        }
        Ok(out)
    }

    /// Metrics per condition for one point's samples.
    pub fn evaluate_point(&self, samples: &[Vec<GenerationResult>]) -> Result<Vec<(u64, MetricsReport)>> {
        let projection = self.projection();
        self.corpus
            .conditions
            .iter()
            .zip(samples)
            .map(|((c, refs), results)| {
                let images: Vec<Image> = results.iter().map(|r| r.image.clone()).collect();
                let set = SampleSet::new(c.condition_id(), images, "pixels")?;
                Ok((c.condition_id(), evaluate(&set, refs, &projection)?))
            })
            .collect()
    }
}

/// Round-trips an image through 8-bit quantization so in-memory corpora match
/// ones read back from PPM.
fn quantize_like_ppm(img: &Image) -> Result<Image> {
    let bytes: Vec<f64> = img.to_bytes().iter().map(|&b| b as f64 / 255.0).collect();
    let (h, w) = img.dims();
    Image::new(crate::grid::FeatureGrid::new(h, w, 3, bytes)?)
}

pub fn sample_seed(base: u64, s: usize) -> u64 {
    mix_ids(&[base, s as u64])
}

/// One configuration of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub method: Method,
    pub sigma: f64,
    pub k_max: usize,
    pub m: usize,
    /// Constant CFG weight; `None` keeps the configured schedule.
    pub omega: Option<f64>,
    pub tau: f64,
    pub top_p: f64,
}

impl SweepPoint {
    /// The point matching a config's non-swept defaults.
    pub fn defaults(method: Method, config: &ExperimentConfig) -> Self {
        let g = &config.generation;
        Self {
            method,
            sigma: g.text_anneal.map_or(0.0, |a| a.sigma),
            k_max: g.text_anneal.map_or(1, |a| a.k_max),
            m: g.scale_travel.1,
            omega: None,
            tau: g.tau,
            top_p: g.top_p,
        }
    }

    pub fn generation_config(&self, config: &ExperimentConfig) -> Result<GenerationConfig> {
        let mut c = config.generation_config(self.method, 0)?;
        c.tau = self.tau;
        c.top_p = self.top_p;
        if let Some(w) = self.omega {
            c.cfg = CfgSchedule::fixed(w);
        }
        if self.method != Method::Baseline {
            let base = config.generation.text_anneal;
            let variant = base.map_or(AnnealVariant::Cosine, |a| a.variant);
            let target = base.map_or(AnnealTarget::TextEmbedding, |a| a.target);
            c.text_anneal = Some(AnnealSchedule::new(variant, self.sigma, self.k_max, target)?);
        }
        if self.method == Method::ScaleTravel {
            c.scale_travel = Some((config.generation.scale_travel.0, self.m));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn digest(&self, config: &ExperimentConfig) -> String {
        let v = serde_json::json!({ "experiment": config.digest(), "point": self });
        digest_value(&v)
    }
}

fn mean_report(reports: &[(u64, MetricsReport)]) -> MetricsReport {
    let n = reports.len().max(1) as f64;
    let sum = |f: fn(&MetricsReport) -> f64| reports.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
    MetricsReport {
        mpd: sum(|r| r.mpd),
        vendi: sum(|r| r.vendi),
        frechet: sum(|r| r.frechet),
        quality: sum(|r| r.quality),
        n: reports.iter().map(|(_, r)| r.n).sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub config_digest: String,
    pub samples: Vec<String>,
    pub rows: Vec<MetricsRow>,
    pub mean: MetricsReport,
    /// Summed wall-clock nanoseconds per phase over all samples.
    pub wall_ns: BTreeMap<String, u64>,
}

/// A finished run with its images, not yet written anywhere.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub record: RunRecord,
    pub results: Vec<Vec<GenerationResult>>,
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Generate => "generate",
        Phase::Travel => "travel",
        Phase::Refine => "refine",
    }
}

fn sample_name(c: u64, s: usize) -> String {
    format!("c{c:03}_s{s:02}.ppm")
}

pub fn run_method(ws: &Workspace, method: Method) -> Result<MethodRun> {
    let point = SweepPoint::defaults(method, &ws.config);
    let digest = point.digest(&ws.config);
    let mut all = ws.generate_all(&[point])?;
    let results = all.pop().expect("one point");
    let reports = ws.evaluate_point(&results)?;
    let rows = reports
        .iter()
        .map(|(c, r)| MetricsRow::new(*c, method.name(), r, &digest))
        .collect();
    let mut wall_ns = BTreeMap::new();
    let mut samples = Vec::new();
    for (c, per_seed) in ws.condition_ids().into_iter().zip(&results) {
        for (s, r) in per_seed.iter().enumerate() {
            samples.push(format!("samples/{}", sample_name(c, s)));
            for rec in &r.trace {
                *wall_ns.entry(phase_name(rec.phase).to_string()).or_insert(0) += rec.wall_ns;
            }
        }
    }
    Ok(MethodRun {
        record: RunRecord {
            method,
            config_digest: digest,
            samples,
            rows,
            mean: mean_report(&reports),
            wall_ns,
        },
        results,
    })
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Invariant(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invariant(format!("csv: {e}")))?;
    write_file(path, &bytes)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let bytes = read_file(path, "run `vardiv run` or `vardiv sweep` first")?;
    csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()
        .map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Writes `runs/<method>/` with samples, metrics CSV and the record.
pub fn persist_run(out: &Path, run: &MethodRun, ids: &[u64]) -> Result<PathBuf> {
    let dir = out.join(RUNS_DIR).join(run.record.method.name());
    let samples = dir.join("samples");
    std::fs::create_dir_all(&samples).map_err(|e| Error::io(&samples, e))?;
    for (c, per_seed) in ids.iter().zip(&run.results) {
        for (s, r) in per_seed.iter().enumerate() {
            r.image.write_ppm(&samples.join(sample_name(*c, s)))?;
        }
    }
    write_metrics_csv(&dir.join(METRICS_FILE), &run.record.rows)?;
    let json = serde_json::to_string_pretty(&run.record).expect("record serializes");
    write_file(&dir.join(RECORD_FILE), json.as_bytes())?;
    Ok(dir)
}

pub fn load_record(dir: &Path) -> Result<RunRecord> {
    let path = if dir.is_dir() { dir.join(RECORD_FILE) } else { dir.to_path_buf() };
    let bytes = read_file(&path, "pass run directories produced by `vardiv run`")?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt {
        path: path.clone(),
        reason: e.to_string(),
    })
}

/// Aggregated sweep result for one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub sigma: f64,
    pub k_max: usize,
    pub m: usize,
    pub omega: String,
    pub tau: f64,
    pub top_p: f64,
    pub mpd: f64,
    pub vendi: f64,
    pub frechet: f64,
    pub quality: f64,
    pub n: usize,
    pub config_digest: String,
    pub method_front: bool,
    pub global_front: bool,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    pub rows: Vec<SweepRow>,
    /// Per-condition metrics of every point.
    pub metrics: Vec<MetricsRow>,
}

/// Cartesian product of the sweep axes for every configured method.
pub fn sweep_points(config: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    let d = |m| SweepPoint::defaults(m, config);
    let base = d(Method::Baseline);
    let or = |v: &Vec<f64>, x: f64| if v.is_empty() { vec![x] } else { v.clone() };
    let sigmas = or(&config.sweep.sigma, base.sigma);
    let kmaxes = if config.sweep.k_max.is_empty() { vec![base.k_max] } else { config.sweep.k_max.clone() };
    let ms = if config.sweep.m.is_empty() { vec![base.m] } else { config.sweep.m.clone() };
    let omegas: Vec<Option<f64>> = if config.sweep.omega.is_empty() {
        vec![None]
    } else {
        config.sweep.omega.iter().map(|&w| Some(w)).collect()
    };
    let taus = or(&config.sweep.tau, base.tau);
    let tops = or(&config.sweep.top_p, base.top_p);
    let mut out = Vec::new();
    for &method in &config.methods {
        for &sigma in &sigmas {
            for &k_max in &kmaxes {
                for &m in &ms {
                    for &omega in &omegas {
                        for &tau in &taus {
                            for &top_p in &tops {
                                out.push(SweepPoint {
                                    method,
                                    sigma,
                                    k_max,
                                    m,
                                    omega,
                                    tau,
                                    top_p,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config("the sweep is empty".into()));
    }
    Ok(out)
}

pub fn sweep(ws: &Workspace) -> Result<SweepOutcome> {
    let points = sweep_points(&ws.config)?;
    let results = ws.generate_all(&points)?;
    let mut rows = Vec::with_capacity(points.len());
    let mut metrics = Vec::new();
    for (p, samples) in points.iter().zip(&results) {
        let digest = p.digest(&ws.config);
        let reports = ws.evaluate_point(samples)?;
        metrics.extend(reports.iter().map(|(c, r)| MetricsRow::new(*c, p.method.name(), r, &digest)));
        let mean = mean_report(&reports);
        rows.push(SweepRow {
            method: p.method.name().into(),
            sigma: p.sigma,
            k_max: p.k_max,
            m: p.m,
            omega: p.omega.map_or_else(|| ws.config.generation.cfg.to_string(), |w| w.to_string()),
            tau: p.tau,
            top_p: p.top_p,
            mpd: mean.mpd,
            vendi: mean.vendi,
            frechet: mean.frechet,
            quality: mean.quality,
            n: mean.n,
            config_digest: digest,
            method_front: false,
            global_front: false,
        });
    }
    mark_fronts(&mut rows);
    Ok(SweepOutcome { points, rows, metrics })
}

fn pareto_points(rows: &[SweepRow]) -> Vec<ParetoPoint> {
    rows.iter()
        .map(|r| ParetoPoint::new(r.config_digest.clone(), r.vendi, r.quality))
        .collect()
}

/// Flags points on their method's front and on the global front.
pub fn mark_fronts(rows: &mut [SweepRow]) {
    let mut global = pareto_points(rows);
    pareto_front(&mut global);
    for (r, p) in rows.iter_mut().zip(&global) {
        r.global_front = !p.dominated;
    }
    let methods: Vec<String> = {
        let mut m: Vec<String> = rows.iter().map(|r| r.method.clone()).collect();
        m.dedup();
        m
    };
    for name in methods {
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].method == name).collect();
        let subset: Vec<SweepRow> = idx.iter().map(|&i| rows[i].clone()).collect();
        let mut pts = pareto_points(&subset);
        pareto_front(&mut pts);
        for (&i, p) in idx.iter().zip(&pts) {
            rows[i].method_front = !p.dominated;
        }
    }
}

pub fn write_sweep(dir: &Path, outcome: &SweepOutcome, timestamp: bool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &outcome.rows {
        w.serialize(r).map_err(|e| Error::Invariant(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invariant(format!("csv: {e}")))?;
    write_file(&dir.join("sweep.csv"), &bytes)?;
    write_metrics_csv(&dir.join(METRICS_FILE), &outcome.metrics)?;
    let svg = super::report::pareto_svg(&outcome.rows, timestamp);
    write_file(&dir.join("pareto.svg"), svg.as_bytes())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let bytes = read_file(path, "run `vardiv sweep` first")?;
    csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<std::result::Result<Vec<SweepRow>, _>>()
        .map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub method: Method,
    pub samples: usize,
    pub mean_ns: f64,
    pub ratio: f64,
}

/// Mean single-threaded wall time per sample for each method, relative to
/// the baseline. Methods are interleaved sample by sample so drift in machine
/// load hits them alike.
pub fn bench_overhead(ws: &Workspace, samples: usize) -> Result<Vec<BenchEntry>> {
    let conds: Vec<_> = ws.corpus.conditions.iter().map(|(c, _)| c).collect();
    if conds.is_empty() || samples == 0 {
        return Err(Error::Config("bench needs at least one condition and one sample".into()));
    }
    let configs: Vec<(Method, GenerationConfig)> = Method::ALL
        .iter()
        .map(|&m| {
            let mut c = SweepPoint::defaults(m, &ws.config).generation_config(&ws.config)?;
            c.skip_unguided_null = true;
            Ok((m, c))
        })
        .collect::<Result<_>>()?;
    // Warm-up pass.
    for (_, c) in &configs {
        run_config(&ws.model, conds[0], c)?;
    }
    let mut total = vec![0u128; configs.len()];
    for i in 0..samples {
        let cond = conds[i % conds.len()];
        for (j, (_, c)) in configs.iter().enumerate() {
            let mut c = c.clone();
            c.seed = sample_seed(ws.config.seed, i);
            let t0 = Instant::now();
            run_config(&ws.model, cond, &c)?;
            total[j] += t0.elapsed().as_nanos();
        }
    }
    let mean: Vec<f64> = total.iter().map(|&t| t as f64 / samples as f64).collect();
    Ok(configs
        .iter()
        .zip(&mean)
        .map(|((m, _), &ns)| BenchEntry {
            method: *m,
            samples,
            mean_ns: ns,
            ratio: ns / mean[0],
        })
        .collect())
}

/// `synth`, `fit-codebook` and `build-model` in one go, writing under
/// `config.out`.
pub fn prepare(config: &ExperimentConfig) -> Result<Workspace> {
    config.validate()?;
    let out = &config.out;
    synth_corpus(&config.corpus, config.seed, &out.join(CORPUS_DIR))?;
    let corpus = Corpus::load(&out.join(CORPUS_DIR))?;
    let codebook = fit_corpus_codebook(&corpus, config)?;
    save_codebook(&out.join(CODEBOOK_FILE), &codebook)?;
    let model = AnyModel::Prototype(build_prototype_model(&corpus, codebook, config)?);
    let dir = out.join(MODEL_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    save_model(&dir, &model)?;
    Ok(Workspace {
        config: config.clone(),
        corpus,
        model,
    })
}

pub fn load_corpus_codebook(out: &Path) -> Result<Codebook> {
    load_codebook(&out.join(CODEBOOK_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::desk();
        c.corpus.conditions = 2;
        c.seeds = 3;
        c.codebook_size = 16;
        c.codebook_iters = 5;
        c.sweep.sigma = vec![1.0];
        c.sweep.k_max = vec![3];
        c.sweep.m = vec![2];
        c
    }

    #[test]
    fn in_memory_matches_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small();
        c.out = dir.path().to_path_buf();
        let disk = prepare(&c).unwrap();
        let mem = Workspace::in_memory(c.clone()).unwrap();
        let loaded = Workspace::load(c, None).unwrap();
        let a = run_method(&disk, Method::Anneal).unwrap().record.rows;
        assert_eq!(a, run_method(&mem, Method::Anneal).unwrap().record.rows);
        assert_eq!(a, run_method(&loaded, Method::Anneal).unwrap().record.rows);
    }

    #[test]
    fn sweep_shape_and_worker_invariance() {
        let mut c = small();
        c.sweep.m = vec![2, 3];
        let ws = Workspace::in_memory(c.clone()).unwrap();
        let one = sweep(&ws).unwrap();
        assert_eq!(one.rows.len(), 3 * 2);
        assert_eq!(one.metrics.len(), 3 * 2 * 2);
        assert!(one.rows.iter().any(|r| r.global_front));
        c.workers = 4;
        let ws4 = Workspace { config: c, ..ws };
        let four = sweep(&ws4).unwrap();
        assert_eq!(one.rows, four.rows);
        assert_eq!(one.metrics, four.metrics);
    }

    #[test]
    fn single_point_sweep_is_on_the_front() {
        let mut c = small();
        c.methods = vec![Method::Baseline];
        let ws = Workspace::in_memory(c).unwrap();
        let out = sweep(&ws).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert!(out.rows[0].global_front && out.rows[0].method_front);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::in_memory(small()).unwrap();
        let run = run_method(&ws, Method::Baseline).unwrap();
        let rd = persist_run(dir.path(), &run, &ws.condition_ids()).unwrap();
        assert_eq!(load_record(&rd).unwrap(), run.record);
        assert_eq!(read_metrics_csv(&rd.join(METRICS_FILE)).unwrap(), run.record.rows);
        let img = Image::read_ppm(&rd.join(&run.record.samples[0])).unwrap();
        assert_eq!(img.to_bytes(), run.results[0][0].image.to_bytes());
        let out = sweep(&ws).unwrap();
        write_sweep(&dir.path().join("s"), &out, false).unwrap();
        assert_eq!(read_sweep_csv(&dir.path().join("s/sweep.csv")).unwrap(), out.rows);
    }

    #[test]
    fn missing_inputs_name_the_remedy() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small();
        c.out = dir.path().to_path_buf();
        match Workspace::load(c, None) {
            Err(Error::MissingInput { hint, .. }) => assert!(hint.contains("synth")),
            other => panic!("{other:?}"),
        }
    }
}
