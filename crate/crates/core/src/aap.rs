//! Agree-and-Prove scenarios: role-scoped oracles, lazily sampled random
//! oracles, the agree phase, and the completeness and soundness experiments.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::itm::{
    interaction_distribution, run_interaction, BlackBoxProver, ClassicalMachineSpec, Outcome, QuantumMachineSpec, Sender, Transcript, TurnOrder,
};
use crate::provers::ProverKind;
use crate::qsim::StateVector;
use crate::stats::{derive_seed, splitmix64, Proportion};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    I,
    P,
    V,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Keyword {
    GetId,
    Public,
    GetMoney,
    Secret,
}

impl Keyword {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "getId" => Some(Keyword::GetId),
            "public" => Some(Keyword::Public),
            "getMoney" => Some(Keyword::GetMoney),
            "secret" => Some(Keyword::Secret),
            _ => None,
        }
    }

    /// Roles allowed to issue the query in the money scenarios.
    pub fn allowed(&self, role: Role) -> bool {
        match self {
            Keyword::GetId | Keyword::GetMoney => role == Role::I,
            Keyword::Public => true,
            Keyword::Secret => role == Role::V,
        }
    }
}

/// Tagged failure replies of an oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bottom {
    UnknownId,
    WrongRole,
    AlreadyDispensed,
    IdCollision,
    UnknownKeyword,
    MissingArgument,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Reply<S> {
    Id(BitString),
    Public(BitString),
    /// Name of the world register now holding the bill.
    Money(String),
    Secret(S),
    Bottom(Bottom),
}

impl<S> Reply<S> {
    pub fn is_bottom(&self) -> bool {
        matches!(self, Reply::Bottom(_))
    }
}

/// Lazily sampled random function `{0,1}^in_len → {0,1}^out_len`. Unqueried
/// points take a value derived from `(seed, x)`, so answers do not depend on
/// the order of queries; an entry never changes once fixed.
#[derive(Clone, Debug)]
pub struct RandomOracleTable {
    in_len: usize,
    out_len: usize,
    seed: u64,
    table: BTreeMap<BitString, BitString>,
}

impl RandomOracleTable {
    pub fn new(in_len: usize, out_len: usize, seed: u64) -> Self {
        Self {
            in_len,
            out_len,
            seed,
            table: BTreeMap::new(),
        }
    }

    fn derive(&self, x: &BitString) -> BitString {
        let mix = splitmix64(self.seed ^ splitmix64(x.value() ^ ((self.in_len as u64) << 58)));
        let mut rng = ChaCha8Rng::seed_from_u64(mix);
        BitString::random(self.out_len, &mut rng)
    }

    pub fn query(&mut self, x: &BitString) -> BitString {
        assert_eq!(x.len(), self.in_len, "oracle input width");
        if let Some(y) = self.table.get(x) {
            return *y;
        }
        let y = self.derive(x);
        self.table.insert(*x, y);
        y
    }

    /// Fixes `H(x) = y` for a point nobody has queried yet.
    pub fn program(&mut self, x: &BitString, y: &BitString) -> Result<()> {
        if x.len() != self.in_len || y.len() != self.out_len {
            return Err(Error::Oracle("programmed point has the wrong width".into()));
        }
        match self.table.get(x) {
            Some(old) if old != y => Err(Error::Oracle(format!("H({x}) already fixed"))),
            _ => {
                self.table.insert(*x, *y);
                Ok(())
            }
        }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// Whether a money scenario stores bills (`Real`) or EPR halves whose
/// secret is fixed by a deferred measurement (`Purified`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    #[default]
    Real,
    Purified,
}

/// A setup functionality with its agreement and proof relations.
pub trait Scenario {
    type Secret: Clone + fmt::Debug;

    fn lambda(&self) -> usize;

    fn id_len(&self) -> usize;

    fn mode(&self) -> OracleMode;

    /// `O_F(role, keyword, arg)`. Quantum replies are registers added to `world`.
    fn oracle(&mut self, role: Role, keyword: &str, arg: Option<BitString>, world: &mut StateVector) -> Reply<Self::Secret>;

    /// `C(1^λ, x)`.
    fn agreement(&self, x: &BitString) -> bool;

    /// `R(1^λ, x, ρ)`, measuring the witness register.
    fn proof_relation(&mut self, x: &BitString, witness: &str, world: &mut StateVector) -> Result<bool>;
}

/// The prover's auxiliary input after input generation.
#[derive(Clone, Debug, PartialEq)]
pub struct ProverInput {
    pub id: Option<BitString>,
    pub witness: Option<String>,
}

/// A money scenario together with its challenge/response protocol.
pub trait MoneyProtocol: Scenario {
    fn scenario_name(&self) -> &'static str;

    fn challenge_width(&self) -> usize;

    /// Honest input generation: getId (retrying on ⊥), then getMoney.
    fn honest_input(&mut self, world: &mut StateVector) -> Result<ProverInput> {
        for _ in 0..crate::GET_ID_RETRIES {
            if let Reply::Id(id) = self.oracle(Role::I, "getId", None, world) {
                return match self.oracle(Role::I, "getMoney", Some(id), world) {
                    Reply::Money(reg) => Ok(ProverInput {
                        id: Some(id),
                        witness: Some(reg),
                    }),
                    other => Err(Error::Oracle(format!("getMoney failed: {other:?}"))),
                };
            }
        }
        Err(Error::Oracle(format!("getId returned ⊥ {} times", crate::GET_ID_RETRIES)))
    }

    /// `V2` for the agreed `x`: queries `secret(x)` and returns the classical
    /// verifier, or `None` when the query returns ⊥.
    fn verifier(&mut self, x: &BitString, world: &mut StateVector) -> Result<Option<ClassicalMachineSpec>>;

    fn prover_spec(&self, kind: &ProverKind) -> Result<QuantumMachineSpec> {
        crate::provers::build(kind, self.lambda(), self.challenge_width())
    }
}

/// The verifier of a one-round challenge/response protocol: `T` stores the
/// challenge, `N = chal ‖ ans`, and the verdict is `check(c, β)` provided
/// the prover left the challenge in place.
pub fn challenge_response_verifier(
    name: &str,
    chal_width: usize,
    lambda: usize,
    check: Arc<dyn Fn(BitString, BitString) -> bool + Send + Sync>,
) -> ClassicalMachineSpec {
    ClassicalMachineSpec {
        name: name.to_string(),
        t_width: chal_width,
        n_width: chal_width + lambda,
        rand_width: chal_width,
        rounds: 1,
        round_fn: Arc::new(move |_, t, n, u| (t.xor(&u), n.xor(&u.concat(&BitString::zeros(lambda))))),
        output_fn: Arc::new(move |t, n| n.slice(0, chal_width) == t && check(t, n.slice(chal_width, lambda))),
    }
}

/// Exact prove-phase leaves for a prover holding `witness` in a copy of `world`.
pub fn prove_phase_outcomes(
    world: &StateVector,
    witness: &str,
    spec: QuantumMachineSpec,
    v: &ClassicalMachineSpec,
) -> Result<Vec<Outcome>> {
    let mut w = world.clone();
    let bb = BlackBoxProver::install(spec, &mut w, "prover", &[("witness", witness)])?;
    interaction_distribution(v, &bb, &w, BitString::zeros(v.t_width), TurnOrder::VerifierFirst)
}

/// Outcome of the agree phase.
#[derive(Clone, Debug, PartialEq)]
pub struct AgreeOutcome {
    pub agreed: bool,
    pub x: Option<BitString>,
    pub transcript: Transcript,
}

/// Prover sends its claimed id; the verifier accepts it iff `public(id)` is
/// not ⊥.
pub fn agree_phase<S: Scenario>(scen: &mut S, claim: Option<BitString>, world: &mut StateVector) -> AgreeOutcome {
    let mut transcript = Transcript::default();
    let Some(id) = claim else {
        return AgreeOutcome {
            agreed: false,
            x: None,
            transcript,
        };
    };
    transcript.push(0, Sender::P, id);
    let agreed = id.len() == scen.id_len() && !scen.oracle(Role::V, "public", Some(id), world).is_bottom();
    AgreeOutcome {
        agreed,
        x: agreed.then_some(id),
        transcript,
    }
}

/// How the adversary's input generation and agree-phase claim behave.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputStrategy {
    #[default]
    Honest,
    /// Hands the prover an id that was never minted.
    GarbageId,
    /// Mints honestly but claims a different (unminted) id.
    WrongClaim,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletenessResult {
    pub agree: bool,
    pub prove: bool,
    pub x: Option<BitString>,
    pub agreement_holds: bool,
    pub transcript: Transcript,
}

fn adversarial_input<S: MoneyProtocol>(scen: &mut S, strategy: InputStrategy, world: &mut StateVector) -> Result<ProverInput> {
    let mut input = scen.honest_input(world)?;
    let flip = |id: BitString| id.xor(&BitString::new(1, id.len()));
    match strategy {
        InputStrategy::Honest => {}
        InputStrategy::GarbageId | InputStrategy::WrongClaim => {
            let mut claim = flip(input.id.expect("honest input has an id"));
            while !scen.oracle(Role::V, "public", Some(claim), world).is_bottom() {
                claim = BitString::new(claim.value().wrapping_add(1), claim.len());
            }
            input.id = Some(claim);
        }
    }
    Ok(input)
}

/// Agree phase followed by the prove phase against `prover`.
pub fn run_completeness_experiment<S: MoneyProtocol>(
    scen: &mut S,
    prover: &ProverKind,
    strategy: InputStrategy,
    rng: &mut ChaCha8Rng,
) -> Result<CompletenessResult> {
    let mut world = StateVector::new();
    let input = adversarial_input(scen, strategy, &mut world)?;
    let agree = agree_phase(scen, input.id, &mut world);
    let Some(x) = agree.x else {
        return Ok(CompletenessResult {
            agree: false,
            prove: false,
            x: None,
            agreement_holds: false,
            transcript: agree.transcript,
        });
    };
    let spec = scen.prover_spec(prover)?;
    let witness = input.witness.ok_or_else(|| Error::Oracle("no witness".into()))?;
    let bb = BlackBoxProver::install(spec, &mut world, "prover", &[("witness", &witness)])?;
    let Some(v2) = scen.verifier(&x, &mut world)? else {
        return Ok(CompletenessResult {
            agree: true,
            prove: false,
            x: Some(x),
            agreement_holds: scen.agreement(&x),
            transcript: agree.transcript,
        });
    };
    let run = run_interaction(&v2, &bb, &mut world, BitString::zeros(v2.t_width), TurnOrder::VerifierFirst, rng)?;
    let mut transcript = agree.transcript;
    transcript.messages.extend(run.transcript.messages.iter().map(|m| crate::itm::Message {
        round: m.round + 1,
        ..*m
    }));
    Ok(CompletenessResult {
        agree: true,
        prove: run.verdict,
        x: Some(x),
        agreement_holds: scen.agreement(&x),
        transcript,
    })
}

/// What the extractor is handed.
pub struct ExtractorInput<'a> {
    pub bb: &'a BlackBoxProver,
    pub x: BitString,
    pub agree_transcript: &'a Transcript,
}

/// A knowledge extractor: acts on the world through the black box and
/// returns the name of the register holding its candidate witness.
pub trait Extractor: Sync {
    fn name(&self) -> String;
    fn extract(&self, input: &ExtractorInput<'_>, world: &mut StateVector) -> Result<String>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoundnessResult {
    pub agreed: bool,
    pub x: Option<BitString>,
    /// `None` when the agree phase failed and the extractor wins trivially.
    pub accepted: Option<bool>,
    pub prover_calls: u64,
}

impl SoundnessResult {
    /// The extractor succeeds if the agree phase failed or `R` accepts.
    pub fn extractor_wins(&self) -> bool {
        self.accepted.unwrap_or(true)
    }
}

/// Runs input generation and the agree phase, hands the black-box prover to
/// the extractor, and evaluates `R` on the extracted register.
pub fn run_soundness_experiment<S: MoneyProtocol, E: Extractor + ?Sized>(
    scen: &mut S,
    prover: &ProverKind,
    strategy: InputStrategy,
    extractor: &E,
) -> Result<SoundnessResult> {
    let mut world = StateVector::new();
    let input = adversarial_input(scen, strategy, &mut world)?;
    let agree = agree_phase(scen, input.id, &mut world);
    let Some(x) = agree.x else {
        return Ok(SoundnessResult {
            agreed: false,
            x: None,
            accepted: None,
            prover_calls: 0,
        });
    };
    let spec = scen.prover_spec(prover)?;
    let witness = input.witness.ok_or_else(|| Error::Oracle("no witness".into()))?;
    let bb = BlackBoxProver::install(spec, &mut world, "prover", &[("witness", &witness)])?;
    let out = extractor.extract(
        &ExtractorInput {
            bb: &bb,
            x,
            agree_transcript: &agree.transcript,
        },
        &mut world,
    )?;
    let accepted = scen.proof_relation(&x, &out, &mut world)?;
    Ok(SoundnessResult {
        agreed: true,
        x: Some(x),
        accepted: Some(accepted),
        prover_calls: bb.calls(),
    })
}

/// Monte-Carlo estimates of the pass probability `p` and the extraction
/// failure `δ = 1 − Pr[R accepts]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecurityEstimate {
    pub pass: Proportion,
    pub delta: Proportion,
    pub prover_calls: u64,
}

/// Runs `trials` prove-phase experiments and `trials` soundness experiments.
/// Trial `k` of each family uses `derive_seed(seed, k)` (prove) and
/// `derive_seed(seed ^ 1, k)` (extraction).
pub fn estimate_security<S, F, E>(make: F, prover: &ProverKind, extractor: Option<&E>, trials: u64, seed: u64) -> Result<SecurityEstimate>
where
    S: MoneyProtocol,
    F: Fn(u64) -> S + Sync,
    E: Extractor + ?Sized,
{
    let passes: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let s = derive_seed(seed, k);
            let mut scen = make(s);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            run_completeness_experiment(&mut scen, prover, InputStrategy::Honest, &mut rng).map(|r| r.agree && r.prove)
        })
        .collect::<Result<_>>()?;
    let pass = Proportion::new(passes.iter().filter(|&&b| b).count() as u64, trials);
    let (delta, calls) = match extractor {
        None => (Proportion::new(0, 0), 0),
        Some(e) => {
            let results: Vec<SoundnessResult> = (0..trials)
                .into_par_iter()
                .map(|k| {
                    let mut scen = make(derive_seed(seed ^ 1, k));
                    run_soundness_experiment(&mut scen, prover, InputStrategy::Honest, e)
                })
                .collect::<Result<_>>()?;
            let fails = results.iter().filter(|r| !r.extractor_wins()).count() as u64;
            let calls = results.iter().map(|r| r.prover_calls).max().unwrap_or(0);
            (Proportion::new(fails, trials), calls)
        }
    };
    Ok(SecurityEstimate {
        pass,
        delta,
        prover_calls: calls,
    })
}
