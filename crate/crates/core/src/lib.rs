//! Semi-proximal ADMM solver toolkit.
//!
//! The crate is organized around three layers:
//!
//! * low-level numerical building blocks: linear-operator algebra ([`linop`]),
//!   proximal maps and DC penalty functions ([`prox`]), and a third-order
//!   tensor spectral toolkit ([`tensor`]);
//! * the solvers: two-block sPADMM/AsPADMM with per-iteration convergence
//!   certificates ([`admm`]) and the multi-block symmetric Gauss-Seidel
//!   variant ([`sgs`]);
//! * three end-to-end pipelines ([`apps`]): Lasso, mixed l0/l2,0 sparse
//!   optimization, and robust low-rank tensor completion.

pub mod admm;
pub mod apps;
pub mod linop;
pub mod prox;
pub mod sgs;
pub mod tensor;

pub use linop::{LinearMap, Metric};
pub use prox::{DcPenalty, PhiSurrogate, ProxFunction};
pub use tensor::Tensor3;

/// Deterministic RNG used everywhere a seed appears in the public API.
pub(crate) fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal draw via Box-Muller; keeps the RNG stream identical
/// across platforms without pulling in a distributions crate.
pub(crate) fn normal(rng: &mut impl rand::Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}
