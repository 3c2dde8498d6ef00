//! One-time-padded subspace money and its single-bit-challenge protocol.
//!
//! A bill is `W|$⟩_{v,θ}` where `W|x⟩ = |Mx⟩` for the secret basis
//! `M = (z_1 … z_λ)`. Writing `d = v·θ̄`, `e = v·θ` and `A = span{z_i : θ_i = 1}`
//! this is `X(Md) Z(M^{-T}e) |A⟩`, the uniform superposition over `A` with a
//! Pauli one-time pad.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aap::{
    challenge_response_verifier, prove_phase_outcomes, Bottom, Keyword, MoneyProtocol, OracleMode, RandomOracleTable, Reply, Role,
    Scenario,
};
use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::gf2::{w_matrix, Gf2Basis, Subspace};
use crate::itm::{run_interaction, BlackBoxProver, ClassicalMachineSpec, TurnOrder};
use crate::qsim::{gates, CMatrix, PauliMask, Povm, StateVector, C64};
use crate::wiesner::{money_amplitudes as wiesner_amplitudes, WiesnerSecret};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubspaceSecret {
    pub v: BitString,
    pub theta: BitString,
    pub basis: Gf2Basis,
}

impl SubspaceSecret {
    pub fn new(v: BitString, theta: BitString, basis: Gf2Basis) -> Result<Self> {
        let lambda = basis.lambda();
        if lambda % 2 != 0 {
            return Err(Error::InvalidSecret(format!("λ={lambda} is odd")));
        }
        if v.len() != lambda || theta.len() != lambda {
            return Err(Error::InvalidSecret("v and θ must have width λ".into()));
        }
        if theta.weight() != lambda / 2 {
            return Err(Error::InvalidSecret(format!("|θ|={} but λ/2={}", theta.weight(), lambda / 2)));
        }
        Ok(Self { v, theta, basis })
    }

    pub fn random<R: Rng + ?Sized>(lambda: usize, rng: &mut R) -> Result<Self> {
        if lambda % 2 != 0 {
            return Err(Error::InvalidSecret(format!("λ={lambda} is odd")));
        }
        let basis = Gf2Basis::random(lambda, rng);
        let theta = BitString::random_with_weight(lambda, lambda / 2, rng);
        let v = BitString::random(lambda, rng);
        Ok(Self { v, theta, basis })
    }

    pub fn lambda(&self) -> usize {
        self.basis.lambda()
    }

    /// Every secret at width λ (λ ≤ 3 for the basis enumeration).
    pub fn all(lambda: usize) -> Vec<Self> {
        let mut out = Vec::new();
        for basis in Gf2Basis::enumerate(lambda) {
            for theta in BitString::all(lambda).filter(|t| t.weight() == lambda / 2) {
                for v in BitString::all(lambda) {
                    out.push(Self {
                        v,
                        theta,
                        basis: basis.clone(),
                    });
                }
            }
        }
        out
    }

    pub fn pads(&self) -> PadVectors {
        PadVectors::new(&self.v, &self.theta)
    }

    /// `A = span{z_i : θ_i = 1}`.
    pub fn subspace(&self) -> Subspace {
        self.basis.span_selected(&self.theta)
    }

    /// The X label of the pad, `Md`.
    pub fn x_pad(&self) -> BitString {
        self.basis.apply(&self.pads().d)
    }

    /// The Z label of the pad, `M^{-T}e`.
    pub fn z_pad(&self) -> BitString {
        self.basis.apply_inverse_transpose(&self.pads().e)
    }

    pub fn wiesner(&self) -> WiesnerSecret {
        WiesnerSecret {
            v: self.v,
            theta: self.theta,
        }
    }

    /// `v ‖ θ ‖ z_1 ‖ … ‖ z_λ`, the oracle encoding of the secret.
    pub fn to_bits(&self) -> BitString {
        self.v.concat(&self.theta).concat(&self.basis.to_bits())
    }

    pub fn from_bits(bits: &BitString, lambda: usize) -> Result<Self> {
        if bits.len() != 2 * lambda + lambda * lambda {
            return Err(Error::Dimension("secret encoding must have 2λ+λ² bits".into()));
        }
        let basis = Gf2Basis::from_bits(&bits.slice(2 * lambda, lambda * lambda))?;
        Self::new(bits.slice(0, lambda), bits.slice(lambda, lambda), basis)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadVectors {
    pub d: BitString,
    pub e: BitString,
}

impl PadVectors {
    /// `d = v·θ̄`, `e = v·θ`.
    pub fn new(v: &BitString, theta: &BitString) -> Self {
        Self {
            d: v.and(&theta.not()),
            e: v.and(theta),
        }
    }
}

/// Uniform superposition over a subspace.
fn subspace_amplitudes(a: &Subspace) -> Vec<C64> {
    let elems = a.elements();
    let amp = C64::new(1.0 / (elems.len() as f64).sqrt(), 0.0);
    let mut out = vec![C64::new(0.0, 0.0); 1 << a.ambient()];
    for x in elems {
        out[x.value() as usize] = amp;
    }
    out
}

fn padded(amps: Vec<C64>, x: &BitString, z: &BitString) -> Vec<C64> {
    // X(x) Z(z): index y picks up (−1)^{z·y} before the shift by x
    let mut out = vec![C64::new(0.0, 0.0); amps.len()];
    for (y, a) in amps.into_iter().enumerate() {
        let yb = BitString::new(y as u64, x.len());
        let sign = if z.dot(&yb) { -1.0 } else { 1.0 };
        out[yb.xor(x).value() as usize] = a * sign;
    }
    out
}

/// `X(Md) Z(M^{-T}e) |A⟩` as a local amplitude vector.
pub fn money_amplitudes(secret: &SubspaceSecret) -> Vec<C64> {
    padded(subspace_amplitudes(&secret.subspace()), &secret.x_pad(), &secret.z_pad())
}

/// `W |$⟩_{v,θ}` computed from the Wiesner bill.
pub fn money_amplitudes_via_w(secret: &SubspaceSecret) -> Vec<C64> {
    let w = w_matrix(&secret.basis);
    let psi = CMatrix::from_column_slice(1 << secret.lambda(), 1, &wiesner_amplitudes(&secret.wiesner()));
    (w * psi).iter().copied().collect()
}

/// The pad read coordinate-wise in the basis, `X(Md) Z(Me) |A⟩`. Coincides
/// with the bill for orthogonal bases only.
pub fn coordinate_pad_amplitudes(secret: &SubspaceSecret) -> Vec<C64> {
    let z = secret.basis.apply(&secret.pads().e);
    padded(subspace_amplitudes(&secret.subspace()), &secret.x_pad(), &z)
}

/// The bill as a one-register state named `money`.
pub fn money_state(secret: &SubspaceSecret) -> StateVector {
    StateVector::from_amplitudes(&[("money", secret.lambda())], money_amplitudes(secret)).expect("bill is normalized")
}

fn two_outcome(p: CMatrix) -> Povm {
    let dim = p.nrows();
    Povm::new(vec![p.clone(), gates::identity(dim) - p]).expect("projector pair")
}

/// Removes the pad from `reg`: applies `Z(M^{-T}e)` then `X(Md)`.
fn unpad(secret: &SubspaceSecret, world: &mut StateVector, reg: &str) -> Result<()> {
    world.apply_pauli_mask(&PauliMask::z(secret.z_pad()), reg)?;
    world.apply_pauli_mask(&PauliMask::x(secret.x_pad()), reg)
}

/// `R`: undo the pad, then measure `H^{⊗λ} P_{A⊥} H^{⊗λ} P_A`; accept iff
/// both projections succeed.
pub fn subspace_ver<R: Rng + ?Sized>(secret: &SubspaceSecret, world: &mut StateVector, reg: &str, rng: &mut R) -> Result<bool> {
    unpad(secret, world, reg)?;
    let a = secret.subspace();
    if world.povm_measure(&two_outcome(a.projector()), reg, rng)? != 0 {
        return Ok(false);
    }
    let all = BitString::ones(secret.lambda());
    world.hadamard_layer(&all, reg)?;
    let ok = world.povm_measure(&two_outcome(a.complement().projector()), reg, rng)? == 0;
    world.hadamard_layer(&all, reg)?;
    Ok(ok)
}

/// Exact acceptance probability of [`subspace_ver`].
pub fn subspace_ver_probability(secret: &SubspaceSecret, world: &StateVector, reg: &str) -> Result<f64> {
    let mut w = world.clone();
    unpad(secret, &mut w, reg)?;
    let a = secret.subspace();
    let all = BitString::ones(secret.lambda());
    let mut total = 0.0;
    for b in w.povm_branches(&two_outcome(a.projector()), reg)? {
        if b.outcome != 0 || b.probability < 1e-15 {
            continue;
        }
        let mut s = b.state;
        s.hadamard_layer(&all, reg)?;
        total += b.probability
            * s.povm_branches(&two_outcome(a.complement().projector()), reg)?
                .iter()
                .filter(|x| x.outcome == 0)
                .map(|x| x.probability)
                .sum::<f64>();
    }
    Ok(total)
}

/// The verifier's check on `(c, m)`: `m ⊕ Md ∈ A` for `c = 0` and
/// `m ⊕ M^{-T}e ∈ A⊥` for `c = 1`.
pub fn protocol_check(secret: &SubspaceSecret, c: bool, m: &BitString) -> bool {
    if c {
        secret.subspace().complement().member(&m.xor(&secret.z_pad()))
    } else {
        secret.subspace().member(&m.xor(&secret.x_pad()))
    }
}

/// `V2` with the secret hard-wired and a single challenge bit.
pub fn verifier_v2(secret: &SubspaceSecret) -> ClassicalMachineSpec {
    let s = secret.clone();
    challenge_response_verifier(
        "subspace-v2",
        1,
        secret.lambda(),
        Arc::new(move |c, m| protocol_check(&s, c.get(0), &m)),
    )
}

/// One run of the prove phase against an installed prover.
pub fn protocol_round<R: Rng + ?Sized>(secret: &SubspaceSecret, bb: &BlackBoxProver, world: &mut StateVector, rng: &mut R) -> Result<bool> {
    let v = verifier_v2(secret);
    Ok(run_interaction(&v, bb, world, BitString::zeros(1), TurnOrder::VerifierFirst, rng)?.verdict)
}

/// `E(θ, M) = {W|$⟩_{v,θ}⟨$|W† : v}`; outcome `k` is `v = k`.
pub fn povm_e(theta: &BitString, basis: &Gf2Basis) -> Result<Povm> {
    let lambda = basis.lambda();
    let w = w_matrix(basis);
    let elements = BitString::all(lambda)
        .map(|v| {
            let psi = CMatrix::from_column_slice(1 << lambda, 1, &wiesner_amplitudes(&WiesnerSecret { v, theta: *theta }));
            let phi = &w * psi;
            &phi * phi.adjoint()
        })
        .collect();
    Povm::new(elements)
}

#[derive(Clone, Debug)]
struct Row {
    secret: Option<SubspaceSecret>,
    dispensed: bool,
    bank_half: Option<String>,
    bill_half: Option<String>,
}

/// The subspace scenario. Ids have `2λ+λ²` bits; `H(id)` is programmed to
/// the encoding of the bill's secret when the secret is fixed.
#[derive(Clone, Debug)]
pub struct SubspaceScenario {
    lambda: usize,
    mode: OracleMode,
    h: RandomOracleTable,
    rng: ChaCha8Rng,
    db: BTreeMap<BitString, Row>,
}

impl SubspaceScenario {
    pub fn new(lambda: usize, mode: OracleMode, seed: u64) -> Result<Self> {
        if lambda % 2 != 0 || lambda == 0 || 2 * lambda + lambda * lambda > 64 {
            return Err(Error::Config(format!("subspace money needs even λ ≤ 6, got {lambda}")));
        }
        let id_len = 2 * lambda + lambda * lambda;
        Ok(Self {
            lambda,
            mode,
            h: RandomOracleTable::new(id_len, id_len, seed),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5355_4253),
            db: BTreeMap::new(),
        })
    }

    pub fn minted(&self) -> usize {
        self.db.len()
    }

    /// The secret `H(id)` decodes to, when it has been fixed.
    pub fn hash_secret(&mut self, id: &BitString) -> Option<SubspaceSecret> {
        let row = self.db.get(id)?;
        row.secret.as_ref()?;
        SubspaceSecret::from_bits(&self.h.query(id), self.lambda).ok()
    }

    /// On the first call samples `(θ, M)` and measures the bank's EPR halves
    /// with `E(θ, M)`; the outcome is `v`.
    pub fn purified_secret_query(&mut self, id: &BitString, world: &mut StateVector) -> Result<SubspaceSecret> {
        let lambda = self.lambda;
        let row = self.db.get_mut(id).ok_or_else(|| Error::Oracle(format!("no record for {id}")))?;
        if let Some(s) = &row.secret {
            return Ok(s.clone());
        }
        let a = row.bank_half.clone().ok_or_else(|| Error::Oracle("record without bank half".into()))?;
        let basis = Gf2Basis::random(lambda, &mut self.rng);
        let theta = BitString::random_with_weight(lambda, lambda / 2, &mut self.rng);
        let k = world.povm_measure(&povm_e(&theta, &basis)?, &a, &mut self.rng)?;
        let s = SubspaceSecret::new(BitString::new(k as u64, lambda), theta, basis)?;
        self.h.program(id, &s.to_bits())?;
        row.secret = Some(s.clone());
        Ok(s)
    }

    fn get_id(&mut self, world: &mut StateVector) -> Reply<SubspaceSecret> {
        let id_len = 2 * self.lambda + self.lambda * self.lambda;
        let id = BitString::random(id_len, &mut self.rng);
        if self.db.contains_key(&id) {
            return Reply::Bottom(Bottom::IdCollision);
        }
        let row = match self.mode {
            OracleMode::Real => {
                let s = SubspaceSecret::random(self.lambda, &mut self.rng).expect("λ checked at construction");
                if self.h.program(&id, &s.to_bits()).is_err() {
                    return Reply::Bottom(Bottom::IdCollision);
                }
                Row {
                    secret: Some(s),
                    dispensed: false,
                    bank_half: None,
                    bill_half: None,
                }
            }
            OracleMode::Purified => {
                let (a, b) = (format!("bank.A.{}", id.to_hex()), format!("bank.B.{}", id.to_hex()));
                match StateVector::epr_pairs(self.lambda, &a, &b).and_then(|e| world.tensor(&e)) {
                    Ok(w) => *world = w,
                    Err(_) => return Reply::Bottom(Bottom::IdCollision),
                }
                Row {
                    secret: None,
                    dispensed: false,
                    bank_half: Some(a),
                    bill_half: Some(b),
                }
            }
        };
        self.db.insert(id, row);
        Reply::Id(id)
    }

    fn get_money(&mut self, id: &BitString, world: &mut StateVector) -> Reply<SubspaceSecret> {
        let Some(row) = self.db.get_mut(id) else {
            return Reply::Bottom(Bottom::UnknownId);
        };
        if row.dispensed {
            return Reply::Bottom(Bottom::AlreadyDispensed);
        }
        row.dispensed = true;
        match (&row.bill_half, &row.secret) {
            (Some(b), _) => Reply::Money(b.clone()),
            (None, Some(s)) => {
                let name = format!("bill.{}", id.to_hex());
                world
                    .add_register_with_state(&name, self.lambda, &money_amplitudes(s))
                    .expect("fresh bill register");
                Reply::Money(name)
            }
            (None, None) => unreachable!("real rows carry their secret"),
        }
    }
}

impl Scenario for SubspaceScenario {
    type Secret = SubspaceSecret;

    fn lambda(&self) -> usize {
        self.lambda
    }

    fn id_len(&self) -> usize {
        2 * self.lambda + self.lambda * self.lambda
    }

    fn mode(&self) -> OracleMode {
        self.mode
    }

    fn oracle(&mut self, role: Role, keyword: &str, arg: Option<BitString>, world: &mut StateVector) -> Reply<SubspaceSecret> {
        let Some(kw) = Keyword::parse(keyword) else {
            return Reply::Bottom(Bottom::UnknownKeyword);
        };
        if !kw.allowed(role) {
            return Reply::Bottom(Bottom::WrongRole);
        }
        if kw == Keyword::GetId {
            return self.get_id(world);
        }
        let Some(id) = arg else {
            return Reply::Bottom(Bottom::MissingArgument);
        };
        if !self.db.contains_key(&id) {
            return Reply::Bottom(Bottom::UnknownId);
        }
        match kw {
            Keyword::Public => Reply::Public(BitString::empty()),
            Keyword::GetMoney => self.get_money(&id, world),
            Keyword::Secret => match self.purified_secret_query(&id, world) {
                Ok(s) => Reply::Secret(s),
                Err(_) => Reply::Bottom(Bottom::UnknownId),
            },
            Keyword::GetId => unreachable!(),
        }
    }

    fn agreement(&self, x: &BitString) -> bool {
        self.db.contains_key(x)
    }

    fn proof_relation(&mut self, x: &BitString, witness: &str, world: &mut StateVector) -> Result<bool> {
        match self.oracle(Role::V, "secret", Some(*x), world) {
            Reply::Secret(s) => subspace_ver(&s, world, witness, &mut self.rng),
            _ => Ok(false),
        }
    }
}

impl MoneyProtocol for SubspaceScenario {
    fn scenario_name(&self) -> &'static str {
        "subspace"
    }

    fn challenge_width(&self) -> usize {
        1
    }

    fn verifier(&mut self, x: &BitString, world: &mut StateVector) -> Result<Option<ClassicalMachineSpec>> {
        Ok(match self.oracle(Role::V, "secret", Some(*x), world) {
            Reply::Secret(s) => Some(verifier_v2(&s)),
            _ => None,
        })
    }
}

/// Exact pass probability of `spec`, averaged over every secret at width λ.
pub fn exact_pass_probability(lambda: usize, spec: &crate::itm::QuantumMachineSpec) -> Result<f64> {
    let secrets = SubspaceSecret::all(lambda);
    let mut total = 0.0;
    for s in &secrets {
        let out = prove_phase_outcomes(&money_state(s), "money", spec.clone(), &verifier_v2(s))?;
        total += crate::itm::acceptance_probability(&out);
    }
    Ok(total / secrets.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aap::{run_completeness_experiment, InputStrategy};
    use crate::provers::{build, ProverKind};
    use crate::qsim::max_abs_diff;
    use proptest::prelude::*;

    fn b(s: &str) -> BitString {
        s.parse().unwrap()
    }

    fn close(a: &[C64], b: &[C64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).norm() < 1e-12)
    }

    #[test]
    fn secret_validation() {
        let basis = Gf2Basis::standard(2);
        assert!(SubspaceSecret::new(b("00"), b("11"), basis.clone()).is_err());
        assert!(SubspaceSecret::new(b("00"), b("10"), basis).is_ok());
        assert!(SubspaceSecret::new(b("000"), b("100"), Gf2Basis::standard(3)).is_err());
    }

    #[test]
    fn pad_identities() {
        for lambda in 1..=6 {
            for v in BitString::all(lambda) {
                for theta in BitString::all(lambda) {
                    let p = PadVectors::new(&v, &theta);
                    assert_eq!(p.d.and(&theta).weight(), 0);
                    assert_eq!(p.e.and(&theta.not()).weight(), 0);
                    assert_eq!(p.d.xor(&p.e), v);
                }
            }
        }
    }

    #[test]
    fn unpadded_standard_bill_is_a_subspace_state() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = SubspaceSecret::new(b("00"), b("10"), Gf2Basis::standard(2)).unwrap();
        // (|00⟩ + |10⟩)/√2, position 0 written first
        let expected = [C64::new(h, 0.0), C64::new(h, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
        assert!(close(&money_amplitudes(&s), &expected));
    }

    #[test]
    fn both_constructions_agree_exhaustively() {
        for s in SubspaceSecret::all(2) {
            assert!(close(&money_amplitudes(&s), &money_amplitudes_via_w(&s)), "{s:?}");
        }
    }

    #[test]
    fn coordinate_pad_fails_for_a_skew_basis() {
        let basis = Gf2Basis::new(vec![b("11"), b("01")]).unwrap();
        let s = SubspaceSecret::new(b("10"), b("10"), basis).unwrap();
        let good = money_amplitudes(&s);
        let coord = coordinate_pad_amplitudes(&s);
        let overlap: C64 = good.iter().zip(&coord).map(|(a, b)| a.conj() * b).sum();
        assert!(overlap.norm() < 1e-12);
    }

    #[test]
    fn honest_bill_passes_ver_exactly() {
        for s in SubspaceSecret::all(2) {
            let p = subspace_ver_probability(&s, &money_state(&s), "money").unwrap();
            assert!((p - 1.0).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let s = SubspaceSecret::random(4, &mut rng).unwrap();
            let mut st = money_state(&s);
            assert!(subspace_ver(&s, &mut st, "money", &mut rng).unwrap());
        }
    }

    #[test]
    fn fully_mixed_witness_matches_trace_formula() {
        let world = StateVector::epr_pairs(2, "ref", "money").unwrap();
        for s in SubspaceSecret::all(2) {
            let a = s.subspace();
            let hh = gates::hadamard_mask(&BitString::ones(2));
            let prod = &hh * a.complement().projector() * &hh * a.projector();
            let formula = prod.trace().re / 4.0;
            let p = subspace_ver_probability(&s, &world, "money").unwrap();
            assert!((p - formula).abs() < 1e-12);
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_witness_is_rejected() {
        let basis = Gf2Basis::new(vec![b("11"), b("01")]).unwrap();
        let s = SubspaceSecret::new(b("01"), b("01"), basis).unwrap();
        // padded state outside A: shift by a vector not in A + Md
        let mut st = money_state(&s);
        let outside = (0..4).map(|x| BitString::new(x, 2)).find(|x| !s.subspace().member(x)).unwrap();
        st.xor_value("money", &outside).unwrap();
        assert!(subspace_ver_probability(&s, &st, "money").unwrap() < 1e-12);
    }

    #[test]
    fn honest_prover_completes_exhaustively() {
        let spec = build(&ProverKind::Honest, 2, 1).unwrap();
        for s in SubspaceSecret::all(2) {
            let out = prove_phase_outcomes(&money_state(&s), "money", spec.clone(), &verifier_v2(&s)).unwrap();
            assert!(out.iter().all(|o| o.verdict));
            assert!(out.iter().all(|o| o.transcript.messages[0].bits.len() == 3));
            assert_eq!(out.iter().map(|o| o.coins[0].len()).max(), Some(1));
        }
    }

    #[test]
    fn zero_answer_acceptance_matches_enumeration() {
        let spec = build(&ProverKind::FixedAnswer { beta: b("00") }, 2, 1).unwrap();
        let secrets = SubspaceSecret::all(2);
        let mut hits = 0usize;
        for s in &secrets {
            let a = s.subspace();
            // c = 0: accepted iff Md ∈ A; c = 1: iff M^{-T}e ∈ A⊥, checked by direct inner products
            if a.elements().contains(&s.x_pad()) {
                hits += 1;
            }
            if a.generators().iter().all(|g| !g.dot(&s.z_pad())) {
                hits += 1;
            }
        }
        let brute = hits as f64 / (2 * secrets.len()) as f64;
        assert!((exact_pass_probability(2, &spec).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn honest_c0_outcome_lies_in_the_coordinate_span() {
        for s in SubspaceSecret::all(2) {
            for a in s.subspace().elements() {
                let m = a.xor(&s.x_pad());
                let back = s.basis.solve(&m.xor(&s.x_pad()));
                assert_eq!(back.and(&s.theta.not()).weight(), 0);
            }
        }
    }

    #[test]
    fn povm_reduces_to_basis_measurement_for_standard_basis() {
        let theta = b("10");
        let povm = povm_e(&theta, &Gf2Basis::standard(2)).unwrap();
        let hh = gates::hadamard_mask(&theta);
        for v in BitString::all(2) {
            let proj = gates::basis_projector(4, v.value() as usize);
            assert!(max_abs_diff(povm.element(v.value() as usize), &(&hh * proj * &hh)) < 1e-12);
        }
        let comp = povm_e(&b("00"), &Gf2Basis::standard(2)).unwrap();
        for k in 0..4 {
            assert!(max_abs_diff(comp.element(k), &gates::basis_projector(4, k)) < 1e-12);
        }
    }

    #[test]
    fn povm_is_complete_and_collapses_epr_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for lambda in [2usize, 3] {
            for _ in 0..5 {
                let basis = Gf2Basis::random(lambda, &mut rng);
                let theta = BitString::random(lambda, &mut rng);
                let povm = povm_e(&theta, &basis).unwrap();
                let sum = (0..povm.len()).fold(CMatrix::zeros(1 << lambda, 1 << lambda), |acc, k| acc + povm.element(k));
                assert!(max_abs_diff(&sum, &gates::identity(1 << lambda)) < 1e-10);
            }
        }
        let basis = Gf2Basis::new(vec![b("11"), b("01")]).unwrap();
        let theta = b("01");
        let world = StateVector::epr_pairs(2, "A", "B").unwrap();
        for br in world.povm_branches(&povm_e(&theta, &basis).unwrap(), "A").unwrap() {
            let s = SubspaceSecret::new(BitString::new(br.outcome as u64, 2), theta, basis.clone()).unwrap();
            assert!((br.probability - 0.25).abs() < 1e-12);
            assert!((br.state.fidelity(&money_state(&s), &["B"]).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn purified_scenario_programs_the_oracle() {
        let mut scen = SubspaceScenario::new(2, OracleMode::Purified, 8).unwrap();
        let mut world = StateVector::new();
        let Reply::Id(id) = scen.oracle(Role::I, "getId", None, &mut world) else { panic!() };
        assert_eq!(id.len(), 8);
        assert!(scen.hash_secret(&id).is_none());
        let Reply::Money(reg) = scen.oracle(Role::I, "getMoney", Some(id), &mut world) else { panic!() };
        let Reply::Secret(s) = scen.oracle(Role::V, "secret", Some(id), &mut world) else { panic!() };
        assert_eq!(scen.hash_secret(&id), Some(s.clone()));
        assert!((world.fidelity(&money_state(&s), &[reg.as_str()]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(scen.oracle(Role::P, "secret", Some(id), &mut world), Reply::Bottom(Bottom::WrongRole));
    }

    #[test]
    fn completeness_in_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..10 {
            for lambda in [2, 4] {
                for mode in [OracleMode::Real, OracleMode::Purified] {
                    let mut scen = SubspaceScenario::new(lambda, mode, seed).unwrap();
                    let r = run_completeness_experiment(&mut scen, &ProverKind::Honest, InputStrategy::Honest, &mut rng).unwrap();
                    assert!(r.agree && r.prove, "λ={lambda} {mode:?} seed {seed}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn secret_encoding_round_trips(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for lambda in [2usize, 4, 6] {
                let s = SubspaceSecret::random(lambda, &mut rng).unwrap();
                prop_assert_eq!(SubspaceSecret::from_bits(&s.to_bits(), lambda).unwrap(), s);
            }
        }

        #[test]
        fn honest_bills_pass_the_protocol_check(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = SubspaceSecret::random(4, &mut rng).unwrap();
            let st = money_state(&s);
            for c in [false, true] {
                let mut w = st.clone();
                if c {
                    w.hadamard_layer(&BitString::ones(4), "money").unwrap();
                }
                let m = w.measure("money", &mut rng).unwrap();
                prop_assert!(protocol_check(&s, c, &m));
            }
        }
    }
}
