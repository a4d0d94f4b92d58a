//! Reproducible random streams.
//!
//! Every replica draws from its own ChaCha8 stream, keyed by the run seed and
//! the replica id, so results never depend on how replicas are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Independent stream `replica` of the family rooted at `seed`.
pub fn stream(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

/// Fills `out` with i.i.d. centered normal samples of standard deviation `std_dev`.
#[inline]
pub fn fill_normal<R: rand::Rng + ?Sized>(rng: &mut R, std_dev: f64, out: &mut [f64]) {
    for z in out.iter_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *z = std_dev * n;
    }
}
