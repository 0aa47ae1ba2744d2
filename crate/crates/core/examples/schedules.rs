//! Guidance weights and annealing levels per stage for every schedule variant.

use vardiv::schedule::{AnnealSchedule, AnnealTarget, AnnealVariant, CfgSchedule, CfgVariant};

fn main() -> vardiv::Result<()> {
    let k = 10;
    println!("guidance, w1=1 wK=6 k_max=6 (piecewise: C=4 on [1, 4])");
    for v in CfgVariant::ALL {
        let s = match v {
            CfgVariant::Constant => CfgSchedule::piecewise(4.0, 1, 4),
            CfgVariant::ConstantInverse => CfgSchedule::piecewise_inverse(4.0, 1, 4),
            _ => CfgSchedule::interpolation(v, 1.0, 6.0, 6),
        };
        let w: Vec<String> = (1..=k).map(|i| s.weight(i, k).map(|x| format!("{x:5.2}"))).collect::<Result<_, _>>()?;
        println!("  {:<36} {}", s.to_string(), w.join(" "));
    }
    println!("annealing, sigma=1 k_max=6");
    for v in [AnnealVariant::Linear, AnnealVariant::Cosine, AnnealVariant::Constant] {
        let s = AnnealSchedule::new(v, 1.0, 6, AnnealTarget::TextEmbedding)?;
        let a: Vec<String> = (1..=k).map(|i| s.level(i).map(|x| format!("{x:5.2}"))).collect::<Result<_, _>>()?;
        println!("  {:<36} {}", s.to_string(), a.join(" "));
    }
    Ok(())
}
