//! Multi-scale encoding of one corpus image with a fitted codebook, and the
//! reconstruction error after each stage.

use vardiv::codec::{accumulate_canvas, multi_scale_encode, Codebook};
use vardiv::harness::{condition_images, fit_corpus_codebook, Corpus, ExperimentConfig};

fn main() -> vardiv::Result<()> {
    let cfg = ExperimentConfig::desk();
    let schedule = cfg.schedule()?;
    let conditions = (0..cfg.corpus.conditions as u64)
        .map(|c| {
            let emb = vardiv::harness::condition_embedding(&cfg.corpus, cfg.seed, c)?;
            Ok((emb, condition_images(&cfg.corpus, cfg.seed, c)?))
        })
        .collect::<vardiv::Result<Vec<_>>>()?;
    let corpus = Corpus { spec: cfg.corpus.clone(), conditions };
    let cb = fit_corpus_codebook(&corpus, &cfg)?;
    let z = corpus.conditions[0].1[0].grid().clone();

    for (name, book) in [("identity", Codebook::identity(3)), ("vq", cb)] {
        let pyr = multi_scale_encode(&z, &schedule, &book)?;
        print!("{name:8}");
        for k in 1..=schedule.len() {
            let err = accumulate_canvas(&pyr.prefix(k), &book)?.sub(&z)?.max_abs();
            print!("  k{k} {err:.4}");
        }
        println!();
    }
    Ok(())
}
