//! MPD, Vendi and Frechet on hand-made image sets.

use vardiv::grid::{gaussian, FeatureGrid, RngStream};
use vardiv::image::Image;
use vardiv::metrics::{frechet_distance, frechet_gaussian, mean_pairwise_distance, vendi_score};

fn image(values: Vec<f64>) -> Image {
    Image::new(FeatureGrid::new(4, 4, 3, values).unwrap()).unwrap()
}

fn main() -> vardiv::Result<()> {
    let same: Vec<Image> = (0..5).map(|_| image(vec![0.4; 48])).collect();
    let noisy: Vec<Image> = (0..5)
        .map(|s| image(gaussian(&[48], RngStream::new(2, s)).unwrap().iter().map(|x| 0.5 + 0.1 * x).collect()))
        .collect();
    let onehot: Vec<Image> = (0..5).map(|p| image((0..48).map(|i| if i == p { 1.0 } else { 0.0 }).collect())).collect();
    for (name, set) in [("identical", &same), ("noisy", &noisy), ("orthogonal", &onehot)] {
        println!("{name:10} MPD {:.4}  Vendi {:.4}", mean_pairwise_distance(set)?, vendi_score(set)?);
    }

    let a: Vec<Vec<f64>> = (0..200).map(|s| gaussian(&[2], RngStream::new(4, s)).unwrap()).collect();
    let b: Vec<Vec<f64>> = a.iter().map(|x| vec![x[0] + 1.0, 2.0 * x[1]]).collect();
    println!("Frechet(A, A) {:.2e}", frechet_distance(&a, &a)?);
    println!("Frechet(A, shifted and stretched A) {:.4}", frechet_distance(&a, &b)?);
    println!("N(0,1) vs N(1,4): {:.6}", frechet_gaussian(&[0.0], &[1.0], &[1.0], &[4.0])?);
    Ok(())
}
