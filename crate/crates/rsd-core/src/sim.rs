//! Deterministic simulation streams.
//!
//! Every replicate gets its own RNG derived from `(seed, replicate index)`,
//! so parallel and serial sweeps produce bit-identical draws regardless of
//! worker count or schedule.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::model::CovarianceModel;

/// SplitMix64 finalizer; used to fold salts into seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministically combines a base seed with a salt (grid index, suite
/// instance, ...), giving independent-looking sub-seeds.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt.wrapping_add(0x517c_c1b7_2722_0a95)))
}

/// RNG for one replicate of a stream: a fixed keyed cipher with the
/// replicate index as the stream number.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Samples `X ~ N(theta, Sigma)` as `theta + L z` through the model's
/// Cholesky factor, drawing `z` in coordinate order.
pub fn sample_gaussian(
    model: &CovarianceModel,
    theta: &DVector<f64>,
    rng: &mut impl Rng,
) -> Result<DVector<f64>> {
    let n = model.n();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(theta + model.chol_l() * z)
}
