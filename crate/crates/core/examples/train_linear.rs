//! Fits the linear next-scale predictor on teacher-forced prototype data and
//! samples from it.

use vardiv::harness::{run_method, train_from_prototypes, ExperimentConfig, Method, Workspace};
use vardiv::predictor::AnyModel;

fn main() -> vardiv::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    cfg.corpus.conditions = 4;
    cfg.codebook_size = 64;
    cfg.train.epochs = 15;
    let ws = Workspace::in_memory(cfg.clone())?;
    let (linear, report) = train_from_prototypes(ws.model.as_prototype().expect("prototype model"), &cfg)?;
    for (e, l) in report.epoch_loss.iter().enumerate().step_by(3) {
        println!("epoch {:2} loss {l:.4}", e + 1);
    }
    let lws = Workspace { model: AnyModel::Linear(linear), ..ws };
    for m in Method::ALL {
        let r = run_method(&lws, m)?.record.mean;
        println!("{:13} Vendi {:.3}  Q {:.4}", m.name(), r.vendi, r.quality);
    }
    Ok(())
}
