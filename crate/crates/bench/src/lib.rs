//! Shared fixtures for the benchmarks.

use num_complex::Complex64;
use poqk_core::itm::BlackBoxProver;
use poqk_core::provers::{build, ProverKind};
use poqk_core::StateVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Normalized random state on one register of `n` qubits.
pub fn random_state(n: usize, seed: u64) -> StateVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut amps: Vec<Complex64> = (0..1usize << n).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    amps.iter_mut().for_each(|a| *a /= norm);
    StateVector::from_amplitudes(&[("r", n)], amps).expect("power-of-two length")
}

/// A prover holding half of λ EPR pairs, installed as in the extraction
/// experiments.
pub fn installed_prover(kind: &ProverKind, lambda: usize, chal_width: usize) -> (StateVector, BlackBoxProver) {
    let mut world = StateVector::epr_pairs(lambda, "bank", "money").expect("small λ");
    let spec = build(kind, lambda, chal_width).expect("valid prover");
    let bb = BlackBoxProver::install(spec, &mut world, "prover", &[("witness", "money")]).expect("install");
    (world, bb)
}
