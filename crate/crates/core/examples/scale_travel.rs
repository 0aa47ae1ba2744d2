//! Re-encoding a canvas into a coarse prefix. From the full canvas `Z_K` the
//! prefix is exactly the encoder's first `m` maps; from an intermediate `Z_l`
//! it differs, and the gap is what refinement regenerates.

use vardiv::codec::{accumulate_canvas, dequantize, multi_scale_encode, scale_travel, Codebook, TokenPyramid};
use vardiv::grid::{gaussian, FeatureGrid, RngStream, ScaleSchedule};

fn prefix_gap(a: &TokenPyramid, b: &TokenPyramid, cb: &Codebook) -> vardiv::Result<f64> {
    let mut dev = 0.0f64;
    for (x, y) in a.grids.iter().zip(&b.grids) {
        dev = dev.max(dequantize(x, cb)?.sub(&dequantize(y, cb)?)?.max_abs());
    }
    Ok(dev)
}

fn main() -> vardiv::Result<()> {
    let schedule = ScaleSchedule::desk();
    let cb = Codebook::identity(4);
    let z = FeatureGrid::new(16, 16, 4, gaussian(&[16, 16, 4], RngStream::new(7, 0))?)?;
    let pyr = multi_scale_encode(&z, &schedule, &cb)?;
    let z_k = accumulate_canvas(&pyr, &cb)?;
    let l = 5;
    let z_l = accumulate_canvas(&pyr.prefix(l), &cb)?;
    for m in 1..l {
        let from_k = scale_travel(&z_k, &schedule, m, &cb)?;
        let from_l = scale_travel(&z_l, &schedule, m, &cb)?;
        println!(
            "m={m}: from Z_K prefix gap {:.1e}; from Z_{l} prefix gap {:.3}, |Z_{l} - travelled canvas| {:.3}",
            prefix_gap(&from_k, &pyr, &cb)?,
            prefix_gap(&from_l, &pyr, &cb)?,
            accumulate_canvas(&from_l, &cb)?.sub(&z_l)?.max_abs()
        );
    }
    Ok(())
}
