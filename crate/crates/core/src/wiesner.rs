//! Wiesner money: the bank database with real and purified oracles, `Ver`,
//! and the one-round challenge/response proof of knowledge.

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
use crate::itm::{transcript_distribution, ClassicalMachineSpec, QuantumMachineSpec};
use crate::qsim::{StateVector, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WiesnerSecret {
    pub v: BitString,
    pub theta: BitString,
}

impl WiesnerSecret {
    pub fn new(v: BitString, theta: BitString) -> Result<Self> {
        if v.len() != theta.len() {
            return Err(Error::InvalidSecret(format!("|v|={} but |θ|={}", v.len(), theta.len())));
        }
        Ok(Self { v, theta })
    }

    /// Splits an oracle output `H(id)` of 2λ bits into `(v, θ)`.
    pub fn from_oracle(h: &BitString) -> Self {
        let (v, theta) = h.split(h.len() / 2);
        Self { v, theta }
    }

    pub fn random<R: Rng + ?Sized>(lambda: usize, rng: &mut R) -> Self {
        Self {
            v: BitString::random(lambda, rng),
            theta: BitString::random(lambda, rng),
        }
    }

    pub fn lambda(&self) -> usize {
        self.v.len()
    }

    /// All 4^λ secrets.
    pub fn all(lambda: usize) -> Vec<Self> {
        let mut out = Vec::new();
        for theta in BitString::all(lambda) {
            for v in BitString::all(lambda) {
                out.push(Self { v, theta });
            }
        }
        out
    }
}

/// `|$⟩_{v,θ} = ⊗_i H^{θ_i}|v_i⟩` as a local amplitude vector.
pub fn money_amplitudes(secret: &WiesnerSecret) -> Vec<C64> {
    let lambda = secret.lambda();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    (0..1usize << lambda)
        .map(|x| {
            let mut a = C64::new(1.0, 0.0);
            for i in 0..lambda {
                let xi = (x >> i) & 1 == 1;
                let vi = secret.v.get(i);
                a *= if secret.theta.get(i) {
                    C64::new(if xi && vi { -h } else { h }, 0.0)
                } else if xi == vi {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                };
            }
            a
        })
        .collect()
}

/// The bill as a one-register state named `money`.
pub fn money_state(secret: &WiesnerSecret) -> StateVector {
    StateVector::from_amplitudes(&[("money", secret.lambda())], money_amplitudes(secret)).expect("bill is normalized")
}

/// Positions the verifier checks: `s = c·θ ⊕ c̄·θ̄`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChallengeCheckMask {
    pub s: BitString,
}

impl ChallengeCheckMask {
    pub fn new(c: &BitString, theta: &BitString) -> Self {
        Self {
            s: c.and(theta).xor(&c.not().and(&theta.not())),
        }
    }

    pub fn accepts(&self, beta: &BitString, v: &BitString) -> bool {
        beta.xor(v).and(&self.s).weight() == 0
    }
}

/// Measures `reg` in basis θ and accepts iff the outcome is `v`.
pub fn ver<R: Rng + ?Sized>(secret: &WiesnerSecret, world: &mut StateVector, reg: &str, rng: &mut R) -> Result<bool> {
    Ok(world.measure_in_basis(reg, &secret.theta, rng)? == secret.v)
}

/// Exact acceptance probability of `Ver` on `reg`.
pub fn ver_probability(secret: &WiesnerSecret, world: &StateVector, reg: &str) -> Result<f64> {
    Ok(world
        .measure_in_basis_branches(reg, &secret.theta)?
        .iter()
        .filter(|b| b.outcome == secret.v)
        .map(|b| b.probability)
        .sum())
}

/// `V2` with the secret hard-wired: challenge `c` uniform, accept iff
/// `β_i = v_i` wherever `s_i = 1`.
pub fn verifier_v2(secret: &WiesnerSecret) -> ClassicalMachineSpec {
    let s = *secret;
    challenge_response_verifier(
        "wiesner-v2",
        s.lambda(),
        s.lambda(),
        Arc::new(move |c, beta| ChallengeCheckMask::new(&c, &s.theta).accepts(&beta, &s.v)),
    )
}

#[derive(Clone, Debug)]
struct Row {
    secret: Option<WiesnerSecret>,
    dispensed: bool,
    bank_half: Option<String>,
    bill_half: Option<String>,
}

/// The Wiesner scenario: bank database, random oracle `H` and the
/// scenario's private randomness.
#[derive(Clone, Debug)]
pub struct WiesnerScenario {
    lambda: usize,
    mode: OracleMode,
    h: RandomOracleTable,
    rng: ChaCha8Rng,
    db: BTreeMap<BitString, Row>,
}

impl WiesnerScenario {
    pub fn new(lambda: usize, mode: OracleMode, seed: u64) -> Self {
        assert!((1..=16).contains(&lambda), "λ out of range");
        Self {
            lambda,
            mode,
            h: RandomOracleTable::new(2 * lambda, 2 * lambda, seed),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5749_4553),
            db: BTreeMap::new(),
        }
    }

    pub fn minted(&self) -> usize {
        self.db.len()
    }

    /// `H(id)` split into `(v, θ)`.
    pub fn hash_secret(&mut self, id: &BitString) -> WiesnerSecret {
        WiesnerSecret::from_oracle(&self.h.query(id))
    }

    /// On the first call samples θ and measures the bank's EPR halves in
    /// basis θ; later calls return the stored `(v, θ)`.
    pub fn purified_secret_query(&mut self, id: &BitString, world: &mut StateVector) -> Result<WiesnerSecret> {
        let row = self.db.get_mut(id).ok_or_else(|| Error::Oracle(format!("no record for {id}")))?;
        if let Some(s) = row.secret {
            return Ok(s);
        }
        let a = row.bank_half.clone().ok_or_else(|| Error::Oracle("record without bank half".into()))?;
        let theta = BitString::random(self.lambda, &mut self.rng);
        let v = world.measure_in_basis(&a, &theta, &mut self.rng)?;
        let s = WiesnerSecret { v, theta };
        row.secret = Some(s);
        Ok(s)
    }

    fn get_id(&mut self, world: &mut StateVector) -> Reply<WiesnerSecret> {
        let id = BitString::random(2 * self.lambda, &mut self.rng);
        if self.db.contains_key(&id) {
            return Reply::Bottom(Bottom::IdCollision);
        }
        let row = match self.mode {
            OracleMode::Real => Row {
                secret: Some(self.hash_secret(&id)),
                dispensed: false,
                bank_half: None,
                bill_half: None,
            },
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

    fn get_money(&mut self, id: &BitString, world: &mut StateVector) -> Reply<WiesnerSecret> {
        let Some(row) = self.db.get_mut(id) else {
            return Reply::Bottom(Bottom::UnknownId);
        };
        if row.dispensed {
            return Reply::Bottom(Bottom::AlreadyDispensed);
        }
        row.dispensed = true;
        match (&row.bill_half, row.secret) {
            (Some(b), _) => Reply::Money(b.clone()),
            (None, Some(s)) => {
                let name = format!("bill.{}", id.to_hex());
                world
                    .add_register_with_state(&name, self.lambda, &money_amplitudes(&s))
                    .expect("fresh bill register");
                Reply::Money(name)
            }
            (None, None) => unreachable!("real rows carry their secret"),
        }
    }
}

impl Scenario for WiesnerScenario {
    type Secret = WiesnerSecret;

    fn lambda(&self) -> usize {
        self.lambda
    }

    fn id_len(&self) -> usize {
        2 * self.lambda
    }

    fn mode(&self) -> OracleMode {
        self.mode
    }

    fn oracle(&mut self, role: Role, keyword: &str, arg: Option<BitString>, world: &mut StateVector) -> Reply<WiesnerSecret> {
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
            Reply::Secret(s) => ver(&s, world, witness, &mut self.rng),
            _ => Ok(false),
        }
    }
}

impl MoneyProtocol for WiesnerScenario {
    fn scenario_name(&self) -> &'static str {
        "wiesner"
    }

    fn challenge_width(&self) -> usize {
        self.lambda
    }

    fn verifier(&mut self, x: &BitString, world: &mut StateVector) -> Result<Option<ClassicalMachineSpec>> {
        Ok(match self.oracle(Role::V, "secret", Some(*x), world) {
            Reply::Secret(s) => Some(verifier_v2(&s)),
            _ => None,
        })
    }
}

/// Exact joint law of `(transcript, verdict)` of the prove phase, averaged
/// over the bank's secret. In real mode the prover holds `|$⟩_{v,θ}` for
/// uniform `(v, θ)`; in purified mode it holds EPR halves and the verifier's
/// secret query measures the bank halves in a uniform basis.
pub fn exact_prove_distribution(lambda: usize, mode: OracleMode, spec: &QuantumMachineSpec) -> Result<BTreeMap<(String, bool), f64>> {
    let mut total: BTreeMap<(String, bool), f64> = BTreeMap::new();
    let mut add = |outcomes: &[crate::itm::Outcome], weight: f64| {
        for (k, p) in transcript_distribution(outcomes) {
            *total.entry(k).or_insert(0.0) += weight * p;
        }
    };
    match mode {
        OracleMode::Real => {
            let w = 1.0 / (1u64 << (2 * lambda)) as f64;
            for s in WiesnerSecret::all(lambda) {
                let world = money_state(&s);
                add(&prove_phase_outcomes(&world, "money", spec.clone(), &verifier_v2(&s))?, w);
            }
        }
        OracleMode::Purified => {
            let world = StateVector::epr_pairs(lambda, "bank", "money")?;
            let w = 1.0 / (1u64 << lambda) as f64;
            for theta in BitString::all(lambda) {
                for b in world.measure_in_basis_branches("bank", &theta)? {
                    if b.probability < 1e-15 {
                        continue;
                    }
                    let s = WiesnerSecret { v: b.outcome, theta };
                    add(&prove_phase_outcomes(&b.state, "money", spec.clone(), &verifier_v2(&s))?, w * b.probability);
                }
            }
        }
    }
    Ok(total)
}

/// Exact pass probability of `spec` against a uniformly random bill.
pub fn exact_pass_probability(lambda: usize, spec: &QuantumMachineSpec) -> Result<f64> {
    Ok(exact_prove_distribution(lambda, OracleMode::Real, spec)?
        .iter()
        .filter(|((_, verdict), _)| *verdict)
        .map(|(_, p)| p)
        .sum())
}
