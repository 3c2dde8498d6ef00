//! Knowledge extractors: prover observables built from black-box access,
//! the swap isometry Φ, and the extraction experiments.
//!
//! The block space `B` of a prover is `(ans, private)`. For a mask `m`,
//! `Z^B(m) = U_{c}† σ_Z(m)_{ans} U_{c}` with `c = m̄` (Wiesner) or `c = 0`
//! (subspace), and `X^B(m) = U_{c}† σ_Z(m)_{ans} U_{c}` with `c = m` or `c = 1`.
//! Φ maps `|φ⟩_B` to
//! `2^{-λ} Σ_{a,b} X^B(a) Z^B(b)|φ⟩ ⊗ (I ⊗ σ_X(a)σ_Z(b))|EPR⟩_{B'A'}`
//! and the extracted witness is `B'`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aap::{Extractor, ExtractorInput};
use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::gf2::Gf2Basis;
use crate::itm::{BlackBoxProver, Direction, QuantumMachineSpec, Transcript};
use crate::qsim::{gates, max_abs_diff, unitarity_defect, CMatrix, PauliMask, StateVector, C64};
use crate::subspace::{povm_e, subspace_ver_probability, SubspaceSecret};
use crate::wiesner::{ver_probability, WiesnerSecret};

/// Largest λ for the controlled-circuit Φ.
pub const CIRCUIT_LAMBDA_CAP: usize = 4;
/// Largest λ for which correlations are computed by full mask enumeration.
pub const EXACT_CORRELATION_LAMBDA: usize = 3;

/// Which challenge structure the prover answers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Wiesner,
    Subspace,
}

impl Scheme {
    /// Read off the network shape: λ-bit challenges for Wiesner, one bit for
    /// subspace money.
    pub fn of(bb: &BlackBoxProver) -> Result<(Self, usize)> {
        let specs = bb.network_specs();
        if specs.len() != 2 {
            return Err(Error::InvalidMachine("expected network registers (chal, ans)".into()));
        }
        let (c, lambda) = (specs[0].width, specs[1].width);
        match c {
            _ if c == lambda && !(lambda > 1 && c == 1) => Ok((Scheme::Wiesner, lambda)),
            1 => Ok((Scheme::Subspace, lambda)),
            _ => Err(Error::InvalidMachine(format!("challenge width {c} with λ={lambda}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Wiesner => "wiesner",
            Scheme::Subspace => "subspace",
        }
    }
}

/// `X^B(a)` and `Z^B(b)` for every mask, as matrices on the block space.
#[derive(Clone, Debug)]
pub struct ProverObservables {
    pub lambda: usize,
    pub block_qubits: usize,
    pub x: Vec<CMatrix>,
    pub z: Vec<CMatrix>,
    /// Black-box invocations spent building them.
    pub calls: u64,
}

/// Multiplies row `j` of `u` by `(−1)^{m · (j mod 2^λ)}`.
fn ans_parity_rows(u: &CMatrix, m: &BitString) -> CMatrix {
    let mut out = u.clone();
    let low = (1u64 << m.len()) - 1;
    for j in 0..out.nrows() {
        if m.dot(&BitString::new(j as u64 & low, m.len())) {
            out.row_mut(j).neg_mut();
        }
    }
    out
}

fn conjugated_parity(u: &CMatrix, m: &BitString) -> CMatrix {
    u.adjoint() * ans_parity_rows(u, m)
}

impl ProverObservables {
    /// Mask-indexed Wiesner observables from the λ-bit challenge blocks.
    pub fn wiesner(bb: &BlackBoxProver) -> Result<Self> {
        let (scheme, lambda) = Scheme::of(bb)?;
        if scheme != Scheme::Wiesner {
            return Err(Error::InvalidMachine("not a λ-bit-challenge prover".into()));
        }
        let before = bb.calls();
        let blocks: Vec<CMatrix> = BitString::all(lambda).map(|c| bb.challenge_block(&c)).collect::<Result<_>>()?;
        let block_qubits = blocks[0].nrows().trailing_zeros() as usize;
        let masks: Vec<BitString> = BitString::all(lambda).collect();
        let z = masks.iter().map(|m| conjugated_parity(&blocks[m.not().value() as usize], m)).collect();
        let x = masks.iter().map(|m| conjugated_parity(&blocks[m.value() as usize], m)).collect();
        Ok(Self {
            lambda,
            block_qubits,
            x,
            z,
            calls: bb.calls() - before,
        })
    }

    /// Subspace-protocol observables: `Z^B` from the `c = 0` block and `X^B`
    /// from the `c = 1` block.
    pub fn subspace(bb: &BlackBoxProver) -> Result<Self> {
        let (scheme, lambda) = Scheme::of(bb)?;
        if scheme != Scheme::Subspace {
            return Err(Error::InvalidMachine("not a one-bit-challenge prover".into()));
        }
        let before = bb.calls();
        let u0 = bb.challenge_block(&BitString::new(0, 1))?;
        let u1 = bb.challenge_block(&BitString::new(1, 1))?;
        let block_qubits = u0.nrows().trailing_zeros() as usize;
        let masks: Vec<BitString> = BitString::all(lambda).collect();
        Ok(Self {
            lambda,
            block_qubits,
            z: masks.iter().map(|m| conjugated_parity(&u0, m)).collect(),
            x: masks.iter().map(|m| conjugated_parity(&u1, m)).collect(),
            calls: bb.calls() - before,
        })
    }

    pub fn from_black_box(bb: &BlackBoxProver) -> Result<Self> {
        match Scheme::of(bb)?.0 {
            Scheme::Wiesner => Self::wiesner(bb),
            Scheme::Subspace => Self::subspace(bb),
        }
    }

    /// Exact Paulis on the low λ qubits of a block with `aux` further qubits.
    pub fn exact_pauli(lambda: usize, aux: usize) -> Self {
        let id = gates::identity(1 << aux);
        let fam = |axis: fn(BitString) -> PauliMask| {
            BitString::all(lambda)
                .map(|m| gates::kron(&id, &gates::pauli_mask(&axis(m))))
                .collect()
        };
        Self {
            lambda,
            block_qubits: lambda + aux,
            x: fam(PauliMask::x),
            z: fam(PauliMask::z),
            calls: 0,
        }
    }

    /// `X̃(a') = X^B(M^{-1}a')`, `Z̃(b') = Z^B(M^T b')`.
    pub fn tilded(&self, basis: &Gf2Basis) -> Self {
        let masks: Vec<BitString> = BitString::all(self.lambda).collect();
        Self {
            lambda: self.lambda,
            block_qubits: self.block_qubits,
            x: masks.iter().map(|a| self.x[basis.solve(a).value() as usize].clone()).collect(),
            z: masks.iter().map(|b| self.z[basis.apply_transpose(b).value() as usize].clone()).collect(),
            calls: self.calls,
        }
    }

    /// Largest deviation from being a Hermitian unitary.
    pub fn defect(&self) -> f64 {
        self.x
            .iter()
            .chain(&self.z)
            .map(|o| unitarity_defect(o).max(max_abs_diff(o, &o.adjoint())))
            .fold(0.0, f64::max)
    }
}

/// Distribution of the masks in the correlation estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskDistribution {
    Uniform,
    /// Uniform over masks of weight ⌊λ/2⌋.
    WeightHalf,
    /// Each bit is 1 with probability 1/4, the law of `c̄·θ̄` and `c·θ`.
    Biased,
}

impl MaskDistribution {
    pub fn weight(&self, m: &BitString) -> f64 {
        let lambda = m.len() as i32;
        match self {
            MaskDistribution::Uniform => 0.5f64.powi(lambda),
            MaskDistribution::WeightHalf => {
                let k = (lambda / 2) as usize;
                if m.weight() == k {
                    1.0 / binomial(lambda as usize, k)
                } else {
                    0.0
                }
            }
            MaskDistribution::Biased => {
                let w = m.weight() as i32;
                0.25f64.powi(w) * 0.75f64.powi(lambda - w)
            }
        }
    }

    fn sample(&self, lambda: usize, rng: &mut ChaCha8Rng) -> BitString {
        match self {
            MaskDistribution::Uniform => BitString::random(lambda, rng),
            MaskDistribution::WeightHalf => BitString::random_with_weight(lambda, lambda / 2, rng),
            MaskDistribution::Biased => BitString::random(lambda, rng).and(&BitString::random(lambda, rng)),
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    /// `E_m ⟨ψ| σ_Z^A(m) ⊗ Z^B(m) |ψ⟩`.
    pub z_corr: f64,
    /// `E_m ⟨ψ| σ_X^A(m) ⊗ X^B(m) |ψ⟩`.
    pub x_corr: f64,
    pub exact: bool,
}

/// Correlations between the bank's register `bank` and the prover's
/// observables in the joint state `world`. Exact for λ ≤ 3, otherwise an
/// average over 256 sampled masks.
pub fn estimate_correlations(
    obs: &ProverObservables,
    bb: &BlackBoxProver,
    world: &StateVector,
    bank: &str,
    dist: MaskDistribution,
    seed: u64,
) -> Result<Correlations> {
    let lambda = obs.lambda;
    let term = |m: &BitString, axis: fn(BitString) -> PauliMask, o: &CMatrix| -> Result<f64> {
        let mut phi = world.clone();
        phi.apply_pauli_mask(&axis(*m), bank)?;
        bb.apply_block_operator(&mut phi, o)?;
        Ok(world.inner(&phi)?.re)
    };
    let (masks, weights): (Vec<BitString>, Vec<f64>) = if lambda <= EXACT_CORRELATION_LAMBDA {
        BitString::all(lambda).map(|m| (m, dist.weight(&m))).filter(|(_, w)| *w > 0.0).unzip()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..256).map(|_| (dist.sample(lambda, &mut rng), 1.0 / 256.0)).unzip()
    };
    let mut z = 0.0;
    let mut x = 0.0;
    for (m, w) in masks.iter().zip(&weights) {
        z += w * term(m, PauliMask::z, &obs.z[m.value() as usize])?;
        x += w * term(m, PauliMask::x, &obs.x[m.value() as usize])?;
    }
    Ok(Correlations {
        z_corr: z,
        x_corr: x,
        exact: lambda <= EXACT_CORRELATION_LAMBDA,
    })
}

/// The dense isometry `B → B ⊗ B' ⊗ A'`. Output row
/// `j + 2^{|B|}·(x + 2^λ·y)` holds `B = j`, `B' = x`, `A' = y`.
#[derive(Clone, Debug)]
pub struct IsometryPhi {
    pub lambda: usize,
    pub block_qubits: usize,
    pub matrix: CMatrix,
    pub calls: u64,
}

impl IsometryPhi {
    pub fn build(obs: &ProverObservables) -> Result<Self> {
        let lambda = obs.lambda;
        let dim_b = 1usize << obs.block_qubits;
        let l = 1usize << lambda;
        // T_x = Σ_b (−1)^{b·x} Z(b)
        let t: Vec<CMatrix> = (0..l)
            .map(|x| {
                let xb = BitString::new(x as u64, lambda);
                BitString::all(lambda).fold(CMatrix::zeros(dim_b, dim_b), |acc, b| {
                    if b.dot(&xb) {
                        acc - &obs.z[b.value() as usize]
                    } else {
                        acc + &obs.z[b.value() as usize]
                    }
                })
            })
            .collect();
        let scale = C64::new((0.5f64).powf(1.5 * lambda as f64), 0.0);
        let mut matrix = CMatrix::zeros(dim_b * l * l, dim_b);
        for a in 0..l {
            for (x, tx) in t.iter().enumerate() {
                let block = &obs.x[a] * tx * scale;
                let y = x ^ a;
                let row0 = dim_b * (x + l * y);
                matrix.view_mut((row0, 0), (dim_b, dim_b)).copy_from(&block);
            }
        }
        let phi = Self {
            lambda,
            block_qubits: obs.block_qubits,
            matrix,
            calls: obs.calls,
        };
        let defect = phi.isometry_defect();
        if defect > 1e-6 {
            return Err(Error::NotIsometry(defect));
        }
        Ok(phi)
    }

    /// Largest entry of `Φ†Φ − I`.
    pub fn isometry_defect(&self) -> f64 {
        unitarity_defect(&self.matrix)
    }

    /// Applies Φ to the prover's block through the black box, creating
    /// `{prefix}.out` (B') and `{prefix}.anc` (A').
    pub fn apply(&self, bb: &BlackBoxProver, world: &mut StateVector, prefix: &str) -> Result<()> {
        let (out, anc) = (format!("{prefix}.out"), format!("{prefix}.anc"));
        bb.apply_block_isometry(world, &self.matrix, &[(&out, self.lambda), (&anc, self.lambda)])
    }

    /// Applies Φ to unsealed registers (test fixtures and exact-Pauli checks).
    pub fn apply_unsealed(&self, world: &mut StateVector, inputs: &[&str], prefix: &str) -> Result<()> {
        let (out, anc) = (format!("{prefix}.out"), format!("{prefix}.anc"));
        world.apply_isometry(inputs, &self.matrix, &[(&out, self.lambda), (&anc, self.lambda)])
    }
}

/// Applies the same map as [`IsometryPhi`] without materializing it: every
/// observable acts on the amplitude matrix of the block directly, so the cost
/// is `O(4^λ d² r)` for block dimension `d` and `r` columns of the rest of
/// the world instead of building a `4^λ d × d` matrix.
pub fn apply_phi_dense(bb: &BlackBoxProver, world: &mut StateVector, prefix: &str) -> Result<()> {
    let (scheme, lambda) = Scheme::of(bb)?;
    let l = 1usize << lambda;
    let blocks: Vec<CMatrix> = match scheme {
        Scheme::Wiesner => BitString::all(lambda).map(|c| bb.challenge_block(&c)).collect::<Result<_>>()?,
        Scheme::Subspace => vec![bb.challenge_block(&BitString::new(0, 1))?, bb.challenge_block(&BitString::new(1, 1))?],
    };
    let full = l - 1;
    // block index for Z^B(m) and X^B(m)
    type BlockIndex = fn(usize, usize) -> usize;
    let (z_block, x_block): (BlockIndex, BlockIndex) = match scheme {
        Scheme::Wiesner => (|m, full| full & !m, |m, _| m),
        Scheme::Subspace => (|_, _| 0, |_, _| 1),
    };
    let parity = |u: &CMatrix, m: usize, v: &CMatrix| u.adjoint() * ans_parity_rows(&(u * v), &BitString::new(m as u64, lambda));
    let scale = C64::new((0.5f64).powf(1.5 * lambda as f64), 0.0);
    let (out, anc) = (format!("{prefix}.out"), format!("{prefix}.anc"));
    bb.apply_block_map(world, &[(&out, lambda), (&anc, lambda)], |psi| {
        let d = psi.nrows();
        let z_psi: Vec<CMatrix> = (0..l).map(|b| parity(&blocks[z_block(b, full)], b, psi)).collect();
        let mut res = CMatrix::zeros(d * l * l, psi.ncols());
        for x in 0..l {
            let xb = BitString::new(x as u64, lambda);
            let t_psi = BitString::all(lambda).fold(CMatrix::zeros(d, psi.ncols()), |acc, b| {
                if b.dot(&xb) {
                    acc - &z_psi[b.value() as usize]
                } else {
                    acc + &z_psi[b.value() as usize]
                }
            });
            for a in 0..l {
                let row0 = d * (x + l * (x ^ a));
                res.view_mut((row0, 0), (d, psi.ncols())).copy_from(&(parity(&blocks[x_block(a, full)], a, &t_psi) * scale));
            }
        }
        Ok(res)
    })
}

fn single_qubit(world: &mut StateVector, reg: &str, i: usize) -> Result<usize> {
    Ok(world.qubits(&[reg])?[i])
}

/// Φ as a circuit: the control registers are prepared in |+⟩, the prover's
/// round unitary is called with a superposed challenge, and a final Bell
/// rotation maps `(Rb, Ra)` to `(B', A')`. Uses four black-box calls.
pub fn apply_phi_circuit(bb: &BlackBoxProver, world: &mut StateVector, prefix: &str) -> Result<()> {
    let (scheme, lambda) = Scheme::of(bb)?;
    if lambda > CIRCUIT_LAMBDA_CAP {
        return Err(Error::TooLarge(format!("circuit Φ is capped at λ={CIRCUIT_LAMBDA_CAP}")));
    }
    let chal = bb.network_registers()[0].clone();
    let ans = bb.network_registers()[1].clone();
    let (rb, ra) = (format!("{prefix}.out"), format!("{prefix}.anc"));
    world.add_register(&rb, lambda)?;
    world.add_register(&ra, lambda)?;
    let all = BitString::ones(lambda);
    world.hadamard_layer(&all, &rb)?;
    world.hadamard_layer(&all, &ra)?;
    let x = gates::x();
    let z = gates::z();
    let family = |world: &mut StateVector, ctrl: &str, negate: bool| -> Result<()> {
        let load = |world: &mut StateVector| -> Result<()> {
            match scheme {
                Scheme::Wiesner => {
                    for i in 0..lambda {
                        let (c, t) = (single_qubit(world, ctrl, i)?, single_qubit(world, &chal, i)?);
                        world.apply_raw(&[t], &x, &[(c, true)]);
                    }
                    if negate {
                        world.xor_value(&chal, &all)?;
                    }
                }
                Scheme::Subspace => {
                    if !negate {
                        world.xor_value(&chal, &BitString::ones(1))?;
                    }
                }
            }
            Ok(())
        };
        load(world)?;
        bb.apply(world, 0, Direction::Forward)?;
        for i in 0..lambda {
            let (c, t) = (single_qubit(world, ctrl, i)?, single_qubit(world, &ans, i)?);
            world.apply_raw(&[t], &z, &[(c, true)]);
        }
        bb.apply(world, 0, Direction::Inverse)?;
        load(world)
    };
    // Z family reads challenge b̄ (Wiesner) or 0; X family reads a or 1
    family(world, &rb, true)?;
    family(world, &ra, false)?;
    world.hadamard_layer(&all, &rb)?;
    for i in 0..lambda {
        let (c, t) = (single_qubit(world, &rb, i)?, single_qubit(world, &ra, i)?);
        world.apply_raw(&[t], &x, &[(c, true)]);
    }
    Ok(())
}

/// How Φ is realised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhiPath {
    /// Dense matrix from the observables, falling back to the circuit when
    /// the block exceeds the dense cap.
    #[default]
    Auto,
    Dense,
    Circuit,
}

/// The Φ-isometry extractor. Outputs `{prefix}.out`.
#[derive(Clone, Debug)]
pub struct PhiExtractor {
    pub path: PhiPath,
    pub prefix: String,
}

impl Default for PhiExtractor {
    fn default() -> Self {
        Self {
            path: PhiPath::Auto,
            prefix: "ext".into(),
        }
    }
}

impl PhiExtractor {
    pub fn new(path: PhiPath, prefix: &str) -> Self {
        Self {
            path,
            prefix: prefix.to_string(),
        }
    }

    /// Runs the extraction on an installed prover.
    pub fn run(&self, bb: &BlackBoxProver, world: &mut StateVector) -> Result<String> {
        let dense = |world: &mut StateVector| apply_phi_dense(bb, world, &self.prefix);
        match self.path {
            PhiPath::Dense => dense(world)?,
            PhiPath::Circuit => apply_phi_circuit(bb, world, &self.prefix)?,
            PhiPath::Auto => match dense(world) {
                Err(Error::TooLarge(_)) => apply_phi_circuit(bb, world, &self.prefix)?,
                other => other?,
            },
        }
        Ok(format!("{}.out", self.prefix))
    }
}

impl Extractor for PhiExtractor {
    fn name(&self) -> String {
        format!("phi-{}", serde_json::to_value(self.path).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
    }

    fn extract(&self, input: &ExtractorInput<'_>, world: &mut StateVector) -> Result<String> {
        self.run(input.bb, world)
    }
}

/// Runs the prover once on a fixed challenge and rotates its answer back to
/// the computational frame. Recovers the bill from a prover that swaps it out
/// unchanged, and nothing else.
#[derive(Clone, Debug)]
pub struct NaiveExtractor {
    pub challenge: BitString,
}

impl Extractor for NaiveExtractor {
    fn name(&self) -> String {
        format!("naive(c={})", self.challenge)
    }

    fn extract(&self, input: &ExtractorInput<'_>, world: &mut StateVector) -> Result<String> {
        let bb = input.bb;
        let (scheme, lambda) = Scheme::of(bb)?;
        let chal = &bb.network_registers()[0];
        let ans = bb.network_registers()[1].clone();
        world.xor_value(chal, &self.challenge)?;
        bb.apply(world, 0, Direction::Forward)?;
        let rotate = match scheme {
            Scheme::Wiesner => self.challenge,
            Scheme::Subspace if self.challenge.get(0) => BitString::ones(lambda),
            Scheme::Subspace => BitString::zeros(lambda),
        };
        world.hadamard_layer(&rotate, &ans)?;
        Ok(ans)
    }
}

/// Exact probability that the proof relation accepts the extracted register,
/// averaged over the purified bank's secret. The prover holds the B halves
/// of λ EPR pairs whose A halves stay with the bank.
pub fn exact_extraction_acceptance<E: Extractor + ?Sized>(scheme: Scheme, lambda: usize, spec: QuantumMachineSpec, extractor: &E) -> Result<f64> {
    let mut world = StateVector::epr_pairs(lambda, "bank", "money")?;
    let bb = BlackBoxProver::install(spec, &mut world, "prover", &[("witness", "money")])?;
    let transcript = Transcript::default();
    let out = extractor.extract(
        &ExtractorInput {
            bb: &bb,
            x: BitString::empty(),
            agree_transcript: &transcript,
        },
        &mut world,
    )?;
    let mut total = 0.0;
    match scheme {
        Scheme::Wiesner => {
            let w = 0.5f64.powi(lambda as i32);
            for theta in BitString::all(lambda) {
                for b in world.measure_in_basis_branches("bank", &theta)? {
                    if b.probability > 1e-15 {
                        total += w * b.probability * ver_probability(&WiesnerSecret { v: b.outcome, theta }, &b.state, &out)?;
                    }
                }
            }
        }
        Scheme::Subspace => {
            let bases = Gf2Basis::enumerate(lambda);
            let thetas: Vec<BitString> = BitString::all(lambda).filter(|t| t.weight() == lambda / 2).collect();
            let w = 1.0 / (bases.len() * thetas.len()) as f64;
            for basis in &bases {
                for theta in &thetas {
                    for b in world.povm_branches(&povm_e(theta, basis)?, "bank")? {
                        if b.probability > 1e-15 {
                            let s = SubspaceSecret::new(BitString::new(b.outcome as u64, lambda), *theta, basis.clone())?;
                            total += w * b.probability * subspace_ver_probability(&s, &b.state, &out)?;
                        }
                    }
                }
            }
        }
    }
    Ok(total)
}

/// Fit of `δ ≈ C μ^k` over sweep points with `μ, δ > 0`: the smallest `C`
/// with `δ ≤ C μ^{1/4}` at every point, and the least-squares exponent `k`
/// of `log δ` against `log μ` (`None` with fewer than two usable points).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub c_quarter: f64,
    pub exponent: Option<f64>,
}

pub fn fit_extraction_bound(points: &[(f64, f64)]) -> PowerFit {
    let usable: Vec<(f64, f64)> = points.iter().copied().filter(|&(m, d)| m > 0.0 && d > 0.0).collect();
    let c_quarter = points
        .iter()
        .filter(|&&(m, _)| m > 0.0)
        .map(|&(m, d)| d / m.powf(0.25))
        .fold(0.0, f64::max);
    let exponent = (usable.len() >= 2).then(|| {
        let n = usable.len() as f64;
        let xs: Vec<f64> = usable.iter().map(|p| p.0.ln()).collect();
        let ys: Vec<f64> = usable.iter().map(|p| p.1.ln()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        sxy / sxx
    });
    PowerFit { c_quarter, exponent }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provers::{build, ProverKind};
    use crate::subspace::money_state as subspace_money;
    use crate::wiesner::exact_pass_probability;

    fn b(s: &str) -> BitString {
        s.parse().unwrap()
    }

    fn install(kind: &ProverKind, lambda: usize, chal: usize) -> (StateVector, BlackBoxProver) {
        let mut world = StateVector::epr_pairs(lambda, "bank", "money").unwrap();
        let bb = BlackBoxProver::install(build(kind, lambda, chal).unwrap(), &mut world, "prover", &[("witness", "money")]).unwrap();
        (world, bb)
    }

    #[test]
    fn honest_observables_are_paulis_on_the_witness() {
        // block = (ans, witness) at λ = 1; the witness is the high qubit
        let (_, bb) = install(&ProverKind::Honest, 1, 1);
        let obs = ProverObservables::wiesner(&bb).unwrap();
        let i2 = gates::identity(2);
        assert!(max_abs_diff(&obs.z[1], &gates::kron(&gates::z(), &i2)) < 1e-12);
        assert!(max_abs_diff(&obs.x[1], &gates::kron(&gates::x(), &i2)) < 1e-12);
        let anti = &obs.x[1] * &obs.z[1] + &obs.z[1] * &obs.x[1];
        assert!(anti.norm() < 1e-12);
        assert!(obs.defect() < 1e-8);
        assert_eq!(obs.calls, 2);
    }

    #[test]
    fn observables_are_hermitian_unitaries() {
        for kind in [ProverKind::Honest, ProverKind::Depolarizing { q: 0.4 }, ProverKind::PhaseDeviation { phi: 0.7 }] {
            let (_, bb) = install(&kind, 2, 2);
            assert!(ProverObservables::wiesner(&bb).unwrap().defect() < 1e-8);
            let (_, bb) = install(&kind, 2, 1);
            assert!(ProverObservables::subspace(&bb).unwrap().defect() < 1e-8);
        }
    }

    #[test]
    fn phi_is_an_isometry() {
        for lambda in 1..=3 {
            let (_, bb) = install(&ProverKind::Honest, lambda, lambda);
            let phi = IsometryPhi::build(&ProverObservables::wiesner(&bb).unwrap()).unwrap();
            assert!(phi.isometry_defect() < 1e-8);
        }
        let (_, bb) = install(&ProverKind::Depolarizing { q: 0.3 }, 2, 2);
        let phi = IsometryPhi::build(&ProverObservables::wiesner(&bb).unwrap()).unwrap();
        assert!(phi.isometry_defect() < 1e-8);
    }

    #[test]
    fn exact_paulis_swap_out_perfect_epr_pairs() {
        for lambda in 1..=3 {
            for aux in [0, 1] {
                let mut world = StateVector::epr_pairs(lambda, "A", "B").unwrap();
                world.add_register("aux", aux).unwrap();
                let phi = IsometryPhi::build(&ProverObservables::exact_pauli(lambda, aux)).unwrap();
                let inputs: Vec<&str> = if aux > 0 { vec!["B", "aux"] } else { vec!["B"] };
                phi.apply_unsealed(&mut world, &inputs, "ext").unwrap();
                let target = StateVector::epr_pairs(lambda, "A", "ext.out").unwrap();
                let f = world.fidelity(&target, &["A", "ext.out"]).unwrap();
                assert!((f - 1.0).abs() < 1e-9, "λ={lambda} aux={aux}: {f}");
            }
        }
    }

    #[test]
    fn circuit_and_dense_paths_agree() {
        for (kind, lambda, chal) in [
            (ProverKind::Honest, 1, 1),
            (ProverKind::Honest, 3, 3),
            (ProverKind::PauliAttack { xset: b("101"), zset: b("011") }, 3, 3),
            (ProverKind::PhaseDeviation { phi: 0.4 }, 2, 2),
            (ProverKind::Depolarizing { q: 0.2 }, 2, 2),
            (ProverKind::Honest, 2, 1),
            (ProverKind::PhaseDeviation { phi: 0.9 }, 2, 1),
        ] {
            let (world, bb) = install(&kind, lambda, chal);
            let mut dense = world.clone();
            PhiExtractor::new(PhiPath::Dense, "ext").run(&bb, &mut dense).unwrap();
            let mut circ = world.clone();
            let before = bb.calls();
            PhiExtractor::new(PhiPath::Circuit, "ext").run(&bb, &mut circ).unwrap();
            assert_eq!(bb.calls() - before, 4);
            let diff = dense.amplitudes().iter().zip(circ.amplitudes()).map(|(a, c)| (a - c).norm()).fold(0.0, f64::max);
            assert!(diff < 1e-8, "{kind:?} λ={lambda}: {diff}");
        }
    }

    #[test]
    fn matrix_free_phi_matches_materialized_matrix() {
        for (kind, lambda, chal) in [
            (ProverKind::PauliAttack { xset: b("10"), zset: b("01") }, 2, 2),
            (ProverKind::Depolarizing { q: 0.3 }, 2, 2),
            (ProverKind::PhaseDeviation { phi: 0.7 }, 3, 3),
            (ProverKind::PhaseDeviation { phi: 0.7 }, 2, 1),
        ] {
            let (world, bb) = install(&kind, lambda, chal);
            let mut free = world.clone();
            apply_phi_dense(&bb, &mut free, "ext").unwrap();
            let mut mat = world.clone();
            IsometryPhi::build(&ProverObservables::from_black_box(&bb).unwrap()).unwrap().apply(&bb, &mut mat, "ext").unwrap();
            let diff = free.amplitudes().iter().zip(mat.amplitudes()).map(|(a, c)| (a - c).norm()).fold(0.0, f64::max);
            assert!(diff < 1e-10, "{kind:?} λ={lambda}: {diff}");
        }
    }

    #[test]
    fn honest_extraction_is_perfect() {
        for lambda in 1..=3 {
            let p = exact_extraction_acceptance(Scheme::Wiesner, lambda, build(&ProverKind::Honest, lambda, lambda).unwrap(), &PhiExtractor::default()).unwrap();
            assert!((p - 1.0).abs() < 1e-9);
        }
        let p = exact_extraction_acceptance(Scheme::Subspace, 2, build(&ProverKind::Honest, 2, 1).unwrap(), &PhiExtractor::default()).unwrap();
        assert!((p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pauli_attacks_defeat_naive_extraction_but_not_phi() {
        let kind = ProverKind::PauliAttack { xset: b("11"), zset: b("11") };
        let spec = build(&kind, 2, 2).unwrap();
        let naive = exact_extraction_acceptance(Scheme::Wiesner, 2, spec.clone(), &NaiveExtractor { challenge: b("00") }).unwrap();
        let phi = exact_extraction_acceptance(Scheme::Wiesner, 2, spec, &PhiExtractor::default()).unwrap();
        assert!((phi - 1.0).abs() < 1e-9);
        // Z on both qubits before a standard-basis readout: Hadamard-encoded qubits flip
        assert!((naive - 0.25).abs() < 1e-9, "{naive}");
        let honest = exact_extraction_acceptance(Scheme::Wiesner, 2, build(&ProverKind::Honest, 2, 2).unwrap(), &NaiveExtractor { challenge: b("00") }).unwrap();
        assert!((honest - 1.0).abs() < 1e-9);
    }

    #[test]
    fn depolarized_extraction_matches_closed_form() {
        for q in [0.1, 0.3, 1.0] {
            let d = exact_extraction_acceptance(Scheme::Wiesner, 2, build(&ProverKind::Depolarizing { q }, 2, 2).unwrap(), &PhiExtractor::default()).unwrap();
            assert!((d - (1.0 - q / 2.0f64).powi(2)).abs() < 1e-9, "q={q}: {d}");
        }
    }

    #[test]
    fn correlations_follow_the_pass_probability() {
        for kind in [
            ProverKind::Honest,
            ProverKind::Depolarizing { q: 0.2 },
            ProverKind::Depolarizing { q: 0.6 },
            ProverKind::PhaseDeviation { phi: 0.8 },
            ProverKind::RandomAnswer,
        ] {
            let (world, bb) = install(&kind, 2, 2);
            let obs = ProverObservables::wiesner(&bb).unwrap();
            let c = estimate_correlations(&obs, &bb, &world, "bank", MaskDistribution::Biased, 0).unwrap();
            let mu = 1.0 - exact_pass_probability(2, &build(&kind, 2, 2).unwrap()).unwrap();
            assert!(c.z_corr >= 1.0 - 4.0 * mu - 1e-12 && c.x_corr >= 1.0 - 4.0 * mu - 1e-12, "{kind:?}: {c:?} μ={mu}");
            if kind == ProverKind::Honest {
                assert!((c.z_corr - 1.0).abs() < 1e-9 && (c.x_corr - 1.0).abs() < 1e-9);
            }
        }
        let mut last = (1.0 + 1e-12, 1.0 + 1e-12);
        for q in [0.0, 0.25, 0.5, 1.0] {
            let (world, bb) = install(&ProverKind::Depolarizing { q }, 2, 2);
            let obs = ProverObservables::wiesner(&bb).unwrap();
            let c = estimate_correlations(&obs, &bb, &world, "bank", MaskDistribution::Uniform, 0).unwrap();
            assert!(c.z_corr <= last.0 && c.x_corr <= last.1);
            last = (c.z_corr, c.x_corr);
        }
    }

    #[test]
    fn weight_half_distribution_is_normalized() {
        for lambda in 1..=4 {
            for d in [MaskDistribution::Uniform, MaskDistribution::WeightHalf, MaskDistribution::Biased] {
                let s: f64 = BitString::all(lambda).map(|m| d.weight(&m)).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tilded_observables_are_w_conjugates() {
        let (_, bb) = install(&ProverKind::Honest, 2, 1);
        let obs = ProverObservables::subspace(&bb).unwrap();
        for basis in Gf2Basis::enumerate(2) {
            let t = obs.tilded(&basis);
            // W acts on the witness, the high two qubits of the block
            let w = gates::kron(&crate::gf2::w_matrix(&basis), &gates::identity(4));
            for m in BitString::all(2) {
                let k = m.value() as usize;
                assert!(max_abs_diff(&(&w * &t.x[k] * w.adjoint()), &obs.x[k]) < 1e-12);
                assert!(max_abs_diff(&(&w * &t.z[k] * w.adjoint()), &obs.z[k]) < 1e-12);
                assert!(max_abs_diff(&t.x[k], &obs.x[basis.solve(&m).value() as usize]) < 1e-12);
            }
        }
    }

    #[test]
    fn tilded_phi_is_w_rotated_phi() {
        // Φ̃ = (W_{B'} ⊗ W_{A'}) Φ for any prover
        let (_, bb) = install(&ProverKind::PhaseDeviation { phi: 0.5 }, 2, 1);
        let obs = ProverObservables::subspace(&bb).unwrap();
        let basis = Gf2Basis::new(vec![b("11"), b("01")]).unwrap();
        let phi = IsometryPhi::build(&obs).unwrap();
        let tphi = IsometryPhi::build(&obs.tilded(&basis)).unwrap();
        let w = crate::gf2::w_matrix(&basis);
        let rot = gates::kron(&gates::kron(&w, &w), &gates::identity(1 << obs.block_qubits));
        assert!(max_abs_diff(&(rot * &phi.matrix), &tphi.matrix) < 1e-12);
    }

    #[test]
    fn standard_basis_subspace_extraction_matches_wiesner() {
        // with Z the standard basis the subspace bill is the Wiesner bill
        let s = SubspaceSecret::new(b("10"), b("01"), Gf2Basis::standard(2)).unwrap();
        let w = crate::wiesner::money_state(&s.wiesner());
        assert!((subspace_money(&s).fidelity(&w, &["money"]).unwrap() - 1.0).abs() < 1e-12);
        for kind in [ProverKind::Honest, ProverKind::PhaseDeviation { phi: 0.6 }] {
            let (world, bb) = install(&kind, 2, 1);
            let mut out = world.clone();
            PhiExtractor::default().run(&bb, &mut out).unwrap();
            let p_sub = subspace_ver_probability(&s, &conditioned(&out, &s), "ext.out").unwrap();
            let p_wie = ver_probability(&s.wiesner(), &conditioned(&out, &s), "ext.out").unwrap();
            assert!((p_sub - p_wie).abs() < 1e-9, "{kind:?}: {p_sub} vs {p_wie}");
        }
    }

    fn conditioned(world: &StateVector, s: &SubspaceSecret) -> StateVector {
        let br = world.povm_branches(&povm_e(&s.theta, &s.basis).unwrap(), "bank").unwrap();
        br.into_iter().find(|x| x.outcome == s.v.value() as usize).unwrap().state
    }

    #[test]
    fn phase_deviation_degrades_subspace_extraction_continuously() {
        let mut last_p = 1.0 + 1e-12;
        let mut last_e = 1.0 + 1e-12;
        for phi in [0.0, 0.3, 0.6, 0.9, 1.2] {
            let spec = build(&ProverKind::PhaseDeviation { phi }, 2, 1).unwrap();
            let p = crate::subspace::exact_pass_probability(2, &spec).unwrap();
            let e = exact_extraction_acceptance(Scheme::Subspace, 2, spec, &PhiExtractor::default()).unwrap();
            assert!(p <= last_p && e <= last_e, "φ={phi}: p={p} e={e}");
            if phi > 0.0 {
                assert!(p < 1.0 && e < 1.0);
            }
            last_p = p;
            last_e = e;
        }
    }

    #[test]
    fn power_fit() {
        let pts: Vec<(f64, f64)> = [0.01f64, 0.04, 0.09].iter().map(|&m| (m, 2.0 * m.powf(0.5))).collect();
        let fit = fit_extraction_bound(&pts);
        assert!((fit.exponent.unwrap() - 0.5).abs() < 1e-9);
        let expected = pts.iter().map(|&(m, d)| d / m.powf(0.25)).fold(0.0, f64::max);
        assert!((fit.c_quarter - expected).abs() < 1e-12);
        assert_eq!(fit_extraction_bound(&[(0.0, 0.0), (0.1, 0.0)]).exponent, None);
    }
}
