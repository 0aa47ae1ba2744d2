//! Classifier-free guidance followed by temperature / top-p token sampling on a
//! single position.

use vardiv::grid::RngStream;
use vardiv::predictor::{cfg_combine, sample_tokens, LogitGrid};

fn main() -> vardiv::Result<()> {
    let cond = LogitGrid::new((1, 1), 5, vec![2.0, 1.5, 0.2, -1.0, -2.0])?;
    let null = LogitGrid::new((1, 1), 5, vec![1.8, 0.5, 0.4, -0.5, -2.0])?;
    for omega in [0.0, 1.0, 3.0] {
        let q = cfg_combine(&cond, &null, omega)?;
        for (tau, top_p) in [(1.0, 1.0), (0.5, 1.0), (1.0, 0.6)] {
            let mut counts = [0usize; 5];
            for s in 0..4000 {
                let t = sample_tokens(&q, tau, top_p, 1, RngStream::new(3, s))?;
                counts[t.indices().expect("vq tokens")[0] as usize] += 1;
            }
            println!("omega {omega:3.1} tau {tau:3.1} top_p {top_p:3.1}: {counts:?}");
        }
    }
    Ok(())
}
