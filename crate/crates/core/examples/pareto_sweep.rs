//! Desk sweep over sigma, k_max and m, written to `target/pareto_sweep/`.

use vardiv::harness::{sweep, write_sweep, ExperimentConfig, Workspace};

fn main() -> vardiv::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    cfg.workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let ws = Workspace::in_memory(cfg)?;
    let out = sweep(&ws)?;
    for r in &out.rows {
        println!(
            "{:13} sigma {:3} k_max {} m {}  Vendi {:.3}  Q {:.4}{}",
            r.method,
            r.sigma,
            r.k_max,
            r.m,
            r.vendi,
            r.quality,
            if r.global_front { "  front" } else { "" }
        );
    }
    let dir = std::path::Path::new("target/pareto_sweep");
    write_sweep(dir, &out, false)?;
    println!("wrote {}", dir.display());
    Ok(())
}
