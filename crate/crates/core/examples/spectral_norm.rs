//! Power-iteration spectral normalization of discriminator weights.

use fedni::inpaint::Discriminator;
use fedni::numerics::spectral_normalize;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let disc = Discriminator::new(50, &mut rng);
    for (l, layer) in disc.layers.iter().enumerate() {
        let w = &layer.linear.weight.value;
        for iters in [1, 5, 20, 100, 500] {
            let mut u = vec![1.0; w.cols()];
            let sn = spectral_normalize(w, &mut u, iters);
            let top = DMatrix::from_row_slice(w.rows(), w.cols(), sn.normalized.data())
                .singular_values()
                .max();
            println!(
                "layer {l} {}x{} iters {iters:>3}: sigma {:.5}, top after {top:.6}",
                w.rows(),
                w.cols(),
                sn.sigma
            );
        }
    }
}
