//! Complex AWGN channel.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SparcError};

/// `y = x + w` with `w` i.i.d. circularly-symmetric complex Gaussian of
/// variance `sigma2` per entry (`sigma2 / 2` per real dimension).
/// Deterministic given the seed.
pub fn add_awgn(x: &[Complex64], sigma2: f64, seed: u64) -> Result<Vec<Complex64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_awgn_with_rng(x, sigma2, &mut rng)
}

/// Same as [`add_awgn`] with a caller-provided RNG stream.
pub fn add_awgn_with_rng<R: Rng>(x: &[Complex64], sigma2: f64, rng: &mut R) -> Result<Vec<Complex64>> {
    if sigma2 <= 0.0 || !sigma2.is_finite() {
        return Err(SparcError::invalid("noise variance must be positive"));
    }
    let std = (sigma2 / 2.0).sqrt();
    Ok(x.iter()
        .map(|&v| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            v + Complex64::new(std * re, std * im)
        })
        .collect())
}
