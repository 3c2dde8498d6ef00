//! Security games beyond extraction: the two-copy no-cloning game, per-qubit
//! cloning channels, the nondestructive-interaction detector, the reduction
//! from a proof-of-knowledge breaker to a money cloner, and sequential
//! amplification.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aap::{agree_phase, Extractor, ExtractorInput, MoneyProtocol, OracleMode, Scenario};
use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::itm::{
    interaction_distribution, run_interaction, run_interaction_with_coins, BlackBoxProver, ClassicalMachineSpec, Direction, Outcome,
    QuantumMachineSpec, Sender, Transcript, TurnOrder,
};
use crate::provers::{self, ProverKind};
use crate::qsim::{CMatrix, StateVector, C64};
use crate::stats::{derive_seed, Proportion};
use crate::subspace::SubspaceScenario;
use crate::wiesner::{self, WiesnerScenario};

/// The threshold `(2 − √3)/2` of the proof-of-knowledge to money reduction.
pub const DELTA_0: f64 = 1.0 - 0.866_025_403_784_438_6;

/// Optimizer output shipped with the crate.
pub const CLONER_FIXTURE: &str = include_str!("../fixtures/cloner.json");

/// The four single-qubit Wiesner states `|0⟩, |1⟩, |+⟩, |−⟩`.
pub fn bb84_states() -> [[C64; 2]; 4] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let r = |a: f64, b: f64| [C64::new(a, 0.0), C64::new(b, 0.0)];
    [r(1.0, 0.0), r(0.0, 1.0), r(h, h), r(h, -h)]
}

/// A channel from one qubit to two, as a Stinespring isometry `V` with
/// `4·2^e` rows and 2 columns. Row `a + 2b + 4k` holds output qubit `A = a`,
/// `B = b` and environment basis state `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloneChannel {
    pub name: String,
    pub env_qubits: usize,
    /// Row-major `(re, im)` entries.
    pub isometry: Vec<[f64; 2]>,
    /// Joint-pass value recorded by the optimizer.
    #[serde(default)]
    pub value: Option<f64>,
}

impl CloneChannel {
    pub fn from_matrix(name: &str, env_qubits: usize, v: &CMatrix) -> Result<Self> {
        if v.ncols() != 2 || v.nrows() != 4 << env_qubits {
            return Err(Error::Dimension(format!("clone isometry is {}x{}", v.nrows(), v.ncols())));
        }
        let mut isometry = Vec::with_capacity(v.len());
        for r in 0..v.nrows() {
            for c in 0..2 {
                isometry.push([v[(r, c)].re, v[(r, c)].im]);
            }
        }
        let ch = Self {
            name: name.to_string(),
            env_qubits,
            isometry,
            value: None,
        };
        ch.validate()?;
        Ok(ch)
    }

    pub fn matrix(&self) -> CMatrix {
        CMatrix::from_row_iterator(4 << self.env_qubits, 2, self.isometry.iter().map(|e| C64::new(e[0], e[1])))
    }

    pub fn validate(&self) -> Result<()> {
        if self.isometry.len() != 8 << self.env_qubits {
            return Err(Error::Dimension(format!("{}: {} entries", self.name, self.isometry.len())));
        }
        let d = self.trace_defect();
        if d > 1e-8 {
            return Err(Error::NotIsometry(d));
        }
        Ok(())
    }

    /// The optimized channel from the shipped fixture.
    pub fn optimal() -> Self {
        let ch: Self = serde_json::from_str(CLONER_FIXTURE).expect("cloner fixture parses");
        ch.validate().expect("cloner fixture is an isometry");
        ch
    }

    /// Measure in the computational basis and prepare two copies of the outcome.
    pub fn measure_and_resend() -> Self {
        let mut v = CMatrix::zeros(8, 2);
        v[(0, 0)] = C64::new(1.0, 0.0);
        v[(7, 1)] = C64::new(1.0, 0.0);
        Self::from_matrix("measure-and-resend", 1, &v).expect("valid")
    }

    /// Forward the qubit to A and leave B in `|0⟩`.
    pub fn trivial_split() -> Self {
        Self::from_matrix("trivial-split", 0, &CMatrix::identity(4, 2)).expect("valid")
    }

    /// Choi matrix, index `out + 4·in` with `out = a + 2b`.
    pub fn choi(&self) -> CMatrix {
        let v = self.matrix();
        let env = 1usize << self.env_qubits;
        CMatrix::from_fn(8, 8, |r, c| {
            let (o, i) = (r % 4, r / 4);
            let (o2, i2) = (c % 4, c / 4);
            (0..env).map(|k| v[(o + 4 * k, i)] * v[(o2 + 4 * k, i2)].conj()).sum()
        })
    }

    /// `max |Tr_out J − I|`.
    pub fn trace_defect(&self) -> f64 {
        let j = self.choi();
        let mut worst = 0.0f64;
        for i in 0..2 {
            for i2 in 0..2 {
                let s: C64 = (0..4).map(|o| j[(o + 4 * i, o + 4 * i2)]).sum();
                let target = if i == i2 { 1.0 } else { 0.0 };
                worst = worst.max((s - target).norm());
            }
        }
        worst
    }

    pub fn min_choi_eigenvalue(&self) -> f64 {
        self.choi().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Average over the four Wiesner states of the probability that both
    /// output qubits pass the check of the input state.
    pub fn bb84_value(&self) -> f64 {
        bb84_value(&self.matrix(), self.env_qubits)
    }

    /// Unitary on `(input, B, env)` qubits that acts as `V` when `B` and the
    /// environment start in `|0⟩`.
    pub fn unitary_completion(&self) -> CMatrix {
        complete_isometry(&self.matrix())
    }

    /// Clones register `input` qubit by qubit: copy A stays in `input`, copy
    /// B goes to a new register `b`, the environment to `env`.
    pub fn apply(&self, world: &mut StateVector, input: &str, b: &str, env: &str) -> Result<()> {
        let lambda = world.width(input)?;
        world.add_register(b, lambda)?;
        world.add_register(env, lambda * self.env_qubits)?;
        let u = self.unitary_completion();
        let qa = world.qubits(&[input])?;
        let qb = world.qubits(&[b])?;
        let qe = world.qubits(&[env])?;
        for i in 0..lambda {
            let mut targets = vec![qa[i], qb[i]];
            targets.extend_from_slice(&qe[i * self.env_qubits..(i + 1) * self.env_qubits]);
            world.apply_raw(&targets, &u, &[]);
        }
        Ok(())
    }
}

fn bb84_value(v: &CMatrix, env_qubits: usize) -> f64 {
    let env = 1usize << env_qubits;
    bb84_states()
        .iter()
        .map(|psi| {
            let out: Vec<C64> = (0..v.nrows()).map(|r| v[(r, 0)] * psi[0] + v[(r, 1)] * psi[1]).collect();
            (0..env)
                .map(|k| {
                    let amp: C64 = (0..4).map(|o| (psi[o & 1] * psi[o >> 1]).conj() * out[o + 4 * k]).sum();
                    amp.norm_sqr()
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        / 4.0
}

/// Extends the columns of `v` (placed at input indices 0 and 1) to a unitary
/// by Gram–Schmidt over the standard basis.
fn complete_isometry(v: &CMatrix) -> CMatrix {
    let d = v.nrows();
    let mut cols: Vec<nalgebra::DVector<C64>> = (0..v.ncols()).map(|c| v.column(c).into_owned()).collect();
    for e in 0..d {
        if cols.len() == d {
            break;
        }
        let mut w = nalgebra::DVector::<C64>::zeros(d);
        w[e] = C64::new(1.0, 0.0);
        for c in &cols {
            let proj = c.dotc(&w);
            w -= c * proj;
        }
        let n = w.norm();
        if n > 1e-6 {
            cols.push(w / C64::new(n, 0.0));
        }
    }
    CMatrix::from_columns(&cols)
}

/// Polar-iteration ascent of the joint-pass value over isometries with
/// `env_qubits` environment qubits. The objective is a convex quadratic in
/// `V`, so replacing `V` by the polar part of its gradient never decreases it.
pub fn optimize_cloner(env_qubits: usize, restarts: usize, iterations: usize, seed: u64) -> CloneChannel {
    let rows = 4usize << env_qubits;
    let env = 1usize << env_qubits;
    let states = bb84_states();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, CMatrix)> = None;
    for _ in 0..restarts {
        let g = CMatrix::from_fn(rows, 2, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let mut v = polar(&g);
        for _ in 0..iterations {
            let mut grad = CMatrix::zeros(rows, 2);
            for psi in &states {
                let pp: Vec<C64> = (0..4).map(|o| psi[o & 1] * psi[o >> 1]).collect();
                let vpsi: Vec<C64> = (0..rows).map(|r| v[(r, 0)] * psi[0] + v[(r, 1)] * psi[1]).collect();
                for k in 0..env {
                    let amp: C64 = (0..4).map(|o| pp[o].conj() * vpsi[o + 4 * k]).sum();
                    for o in 0..4 {
                        for c in 0..2 {
                            grad[(o + 4 * k, c)] += pp[o] * amp * psi[c].conj() * 0.25;
                        }
                    }
                }
            }
            v = polar(&grad);
        }
        let val = bb84_value(&v, env_qubits);
        if best.as_ref().map_or(true, |(b, _)| val > *b) {
            best = Some((val, v));
        }
    }
    let (val, v) = best.expect("at least one restart");
    let mut ch = CloneChannel::from_matrix("optimal", env_qubits, &v).expect("polar factor is an isometry");
    ch.value = Some(val);
    ch
}

fn polar(g: &CMatrix) -> CMatrix {
    let svd = g.clone().svd(true, true);
    svd.u.expect("u") * svd.v_t.expect("v_t")
}

/// How the adversary splits one bill between the two provers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloningStrategy {
    OptimalCloner,
    MeasureAndResend,
    TrivialSplit,
    /// Not an attack: B receives a second genuine bill for the same id,
    /// minted outside the oracle interface.
    IndependentBills,
}

impl CloningStrategy {
    pub fn label(&self) -> &'static str {
        match self {
            CloningStrategy::OptimalCloner => "optimal-cloner",
            CloningStrategy::MeasureAndResend => "measure-and-resend",
            CloningStrategy::TrivialSplit => "trivial-split",
            CloningStrategy::IndependentBills => "independent-bills",
        }
    }

    pub fn channel(&self) -> Option<CloneChannel> {
        match self {
            CloningStrategy::OptimalCloner => Some(CloneChannel::optimal()),
            CloningStrategy::MeasureAndResend => Some(CloneChannel::measure_and_resend()),
            CloningStrategy::TrivialSplit => Some(CloneChannel::trivial_split()),
            CloningStrategy::IndependentBills => None,
        }
    }

    /// Strategies that only use the dispensed bill.
    pub fn is_attack(&self) -> bool {
        !matches!(self, CloningStrategy::IndependentBills)
    }
}

/// Writes a genuine bill for an already minted id into a fresh register.
/// Test fixture only: the oracle interface dispenses one bill per id.
pub trait BillForge {
    fn forge_bill(&mut self, x: &BitString, name: &str, world: &mut StateVector) -> Result<()>;
}

impl BillForge for WiesnerScenario {
    fn forge_bill(&mut self, x: &BitString, name: &str, world: &mut StateVector) -> Result<()> {
        if self.mode() != OracleMode::Real || !self.agreement(x) {
            return Err(Error::Config("forging needs a minted id in real mode".into()));
        }
        let s = self.hash_secret(x);
        world.add_register_with_state(name, s.lambda(), &wiesner::money_amplitudes(&s))
    }
}

impl BillForge for SubspaceScenario {
    fn forge_bill(&mut self, x: &BitString, name: &str, world: &mut StateVector) -> Result<()> {
        if self.mode() != OracleMode::Real {
            return Err(Error::Config("forging needs real mode".into()));
        }
        let s = self.hash_secret(x).ok_or_else(|| Error::Config("forging needs a minted id".into()))?;
        world.add_register_with_state(name, s.lambda(), &crate::subspace::money_amplitudes(&s))
    }
}

/// Register of B's copy.
pub const COPY_B: &str = "clone.B";
const CLONE_ENV: &str = "clone.env";

/// Input generation followed by the split: returns `(x, A's register)`.
fn split_bill<S: MoneyProtocol + BillForge>(scen: &mut S, strategy: &CloningStrategy, world: &mut StateVector) -> Result<(BitString, String)> {
    let input = scen.honest_input(world)?;
    let x = input.id.ok_or_else(|| Error::Oracle("no id".into()))?;
    let bill = input.witness.ok_or_else(|| Error::Oracle("no bill".into()))?;
    match strategy.channel() {
        Some(ch) => ch.apply(world, &bill, COPY_B, CLONE_ENV)?,
        None => scen.forge_bill(&x, COPY_B, world)?,
    }
    Ok((x, bill))
}

/// Whether each copy is checked by `Ver` directly or through the interactive
/// prove phase with a prover holding it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameMode {
    #[default]
    Ver,
    Interactive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameOutcome {
    pub a_pass: bool,
    pub b_pass: bool,
    pub same_instance: bool,
}

impl GameOutcome {
    pub fn win(&self) -> bool {
        self.a_pass && self.b_pass && self.same_instance
    }
}

/// One round of the no-cloning game. In interactive mode both provers run
/// `prover` on their copy; each prove phase draws its own verifier coins.
pub fn play_no_cloning_game<S: MoneyProtocol + BillForge>(
    scen: &mut S,
    strategy: &CloningStrategy,
    mode: GameMode,
    prover: &ProverKind,
    rng: &mut ChaCha8Rng,
) -> Result<GameOutcome> {
    let mut world = StateVector::new();
    let (x, bill) = split_bill(scen, strategy, &mut world)?;
    let agree_a = agree_phase(scen, Some(x), &mut world);
    let agree_b = agree_phase(scen, Some(x), &mut world);
    let same_instance = agree_a.agreed && agree_b.agreed && agree_a.x == agree_b.x;
    if !same_instance {
        return Ok(GameOutcome {
            a_pass: false,
            b_pass: false,
            same_instance,
        });
    }
    let (a_pass, b_pass) = match mode {
        GameMode::Ver => {
            let a = scen.proof_relation(&x, &bill, &mut world)?;
            let b = scen.proof_relation(&x, COPY_B, &mut world)?;
            (a, b)
        }
        GameMode::Interactive => {
            let spec = scen.prover_spec(prover)?;
            let pa = BlackBoxProver::install(spec.clone(), &mut world, "pa", &[("witness", &bill)])?;
            let pb = BlackBoxProver::install(spec, &mut world, "pb", &[("witness", COPY_B)])?;
            let v = scen.verifier(&x, &mut world)?.ok_or_else(|| Error::Oracle("secret query failed".into()))?;
            let t0 = BitString::zeros(v.t_width);
            let a = run_interaction(&v, &pa, &mut world, t0, TurnOrder::VerifierFirst, rng)?.verdict;
            let b = run_interaction(&v, &pb, &mut world, t0, TurnOrder::VerifierFirst, rng)?.verdict;
            (a, b)
        }
    };
    Ok(GameOutcome {
        a_pass,
        b_pass,
        same_instance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameReport {
    pub strategy: String,
    pub mode: GameMode,
    pub lambda: usize,
    pub win: Proportion,
    pub a_pass: Proportion,
    pub b_pass: Proportion,
    /// `(3/4)^λ`.
    pub bound: f64,
}

impl GameReport {
    /// Win rate at most `bound + 3σ`, with σ taken at the bound.
    pub fn within_bound(&self) -> bool {
        self.win.estimate <= self.bound + 3.0 * self.win.sigma_at(self.bound)
    }
}

/// Seeded Monte-Carlo estimate of the win rate; trial `k` uses
/// `derive_seed(seed, k)` for the scenario and the coins.
pub fn run_no_cloning_game<S, F>(
    make: F,
    lambda: usize,
    strategy: &CloningStrategy,
    mode: GameMode,
    prover: &ProverKind,
    trials: u64,
    seed: u64,
) -> Result<GameReport>
where
    S: MoneyProtocol + BillForge,
    F: Fn(u64) -> S + Sync,
{
    let outcomes: Vec<GameOutcome> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let s = derive_seed(seed, k);
            let mut scen = make(s);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            play_no_cloning_game(&mut scen, strategy, mode, prover, &mut rng)
        })
        .collect::<Result<_>>()?;
    let count = |f: &dyn Fn(&GameOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as u64;
    Ok(GameReport {
        strategy: strategy.label().into(),
        mode,
        lambda,
        win: Proportion::new(count(&|o| o.win()), trials),
        a_pass: Proportion::new(count(&|o| o.a_pass), trials),
        b_pass: Proportion::new(count(&|o| o.b_pass), trials),
        bound: 0.75f64.powi(lambda as i32),
    })
}

/// Exact `Ver`-mode win probability of a per-qubit channel against Wiesner
/// bills, averaged over all secrets. `Ver` is the projector onto the bill,
/// so winning is the overlap of the two copies with `|$⟩ ⊗ |$⟩`.
pub fn exact_wiesner_game_value(channel: &CloneChannel, lambda: usize) -> Result<f64> {
    let secrets = wiesner::WiesnerSecret::all(lambda);
    let mut total = 0.0;
    for s in &secrets {
        let psi = wiesner::money_amplitudes(s);
        let mut world = StateVector::from_amplitudes(&[("money", lambda)], psi.clone())?;
        channel.apply(&mut world, "money", COPY_B, CLONE_ENV)?;
        let dim = 1usize << lambda;
        let pair: Vec<C64> = (0..dim * dim).map(|i| psi[i % dim] * psi[i / dim]).collect();
        let target = StateVector::from_amplitudes(&[("money", lambda), (COPY_B, lambda)], pair)?;
        total += world.fidelity(&target, &["money", COPY_B])?;
    }
    Ok(total / secrets.len() as f64)
}

// ---- nondestructive interactions ----------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NondestructiveReport {
    /// Every coin sequence yields a single transcript.
    pub deterministic: bool,
    /// Smallest overlap between the initial state and the state obtained by
    /// rewinding a completed run.
    pub min_replay_fidelity: f64,
    pub max_damage: f64,
    pub coin_sequences: usize,
    pub nondestructive: bool,
}

/// Undoes a completed verifier-first run on `state`: applies the prover's
/// inverse rounds and the verifier's network writes in reverse order.
fn rewind(bb: &BlackBoxProver, state: &mut StateVector, transcript: &Transcript) -> Result<()> {
    let msg = |round: usize, sender: Sender| -> Option<BitString> {
        transcript.messages.iter().find(|m| m.round == round && m.sender == sender).map(|m| m.bits)
    };
    for round in (0..bb.rounds()).rev() {
        bb.apply(state, round, Direction::Inverse)?;
        let sent = msg(round, Sender::V).ok_or_else(|| Error::Invariant("transcript lacks a verifier message".into()))?;
        let before = if round == 0 {
            BitString::zeros(sent.len())
        } else {
            msg(round - 1, Sender::P).ok_or_else(|| Error::Invariant("transcript lacks a prover message".into()))?
        };
        let diff = sent.xor(&before);
        let mut off = 0;
        for (name, spec) in bb.network_registers().iter().zip(bb.network_specs()) {
            state.xor_value(name, &diff.slice(off, spec.width))?;
            off += spec.width;
        }
    }
    Ok(())
}

fn replay_fidelity(initial: &StateVector, leaf: &Outcome, bb: &BlackBoxProver) -> Result<f64> {
    let mut s = leaf.state.clone();
    rewind(bb, &mut s, &leaf.transcript)?;
    Ok(initial.inner(&s)?.norm_sqr() / s.norm().powi(2))
}

/// Runs the prover held on `witness` in `init` against every verifier coin
/// sequence and rewinds each branch. The interaction is nondestructive when
/// the transcript is a function of the coins and rewinding restores the
/// state within `tolerance`.
pub fn nondestructive_check(
    prover: QuantumMachineSpec,
    v: &ClassicalMachineSpec,
    init: &StateVector,
    witness: &str,
    tolerance: f64,
) -> Result<NondestructiveReport> {
    let mut world = init.clone();
    let bb = BlackBoxProver::install(prover, &mut world, "prover", &[("witness", witness)])?;
    let leaves = interaction_distribution(v, &bb, &world, BitString::zeros(v.t_width), TurnOrder::VerifierFirst)?;
    let mut by_coins: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut min_f = 1.0f64;
    for leaf in leaves.iter().filter(|l| l.probability > 1e-12) {
        let key = leaf.coins.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("|");
        by_coins.entry(key).or_default().insert(leaf.transcript.to_string());
        min_f = min_f.min(replay_fidelity(&world, leaf, &bb)?);
    }
    let deterministic = by_coins.values().all(|t| t.len() == 1);
    let max_damage = (1.0 - min_f).max(0.0);
    Ok(NondestructiveReport {
        deterministic,
        min_replay_fidelity: min_f,
        max_damage,
        coin_sequences: by_coins.len(),
        nondestructive: deterministic && max_damage <= tolerance,
    })
}

/// The map from verifier messages to prover replies, learned by running the
/// prover on every coin sequence and rewinding after each run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseSignature {
    pub replies: BTreeMap<String, String>,
    /// Repeated queries returned the same reply.
    pub consistent: bool,
    pub runs: usize,
}

pub fn learn_response_signature(
    prover: QuantumMachineSpec,
    v: &ClassicalMachineSpec,
    init: &StateVector,
    witness: &str,
    repeats: usize,
    seed: u64,
) -> Result<ResponseSignature> {
    if v.rand_width * v.rounds > 12 {
        return Err(Error::TooLarge("more than 2^12 coin sequences".into()));
    }
    let mut world = init.clone();
    let bb = BlackBoxProver::install(prover, &mut world, "prover", &[("witness", witness)])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut replies = BTreeMap::new();
    let mut consistent = true;
    let mut runs = 0;
    for all in BitString::all(v.rand_width * v.rounds) {
        let coins: Vec<BitString> = (0..v.rounds).map(|r| all.slice(r * v.rand_width, v.rand_width)).collect();
        for _ in 0..repeats.max(1) {
            let run = run_interaction_with_coins(v, &bb, &mut world, BitString::zeros(v.t_width), TurnOrder::VerifierFirst, &coins, &mut rng)?;
            runs += 1;
            let sent: Vec<String> = run.transcript.from_sender(Sender::V).map(|m| m.bits.to_string()).collect();
            let got: Vec<String> = run.transcript.from_sender(Sender::P).map(|m| m.bits.to_string()).collect();
            let (k, r) = (sent.join("|"), got.join("|"));
            if let Some(prev) = replies.insert(k, r.clone()) {
                consistent &= prev == r;
            }
            rewind(&bb, &mut world, &run.transcript)?;
        }
    }
    Ok(ResponseSignature { replies, consistent, runs })
}

// ---- reduction and amplification ------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoubleVerification {
    pub agreed: bool,
    pub accept_a: bool,
    pub accept_b: bool,
}

impl DoubleVerification {
    pub fn double(&self) -> bool {
        self.agreed && self.accept_a && self.accept_b
    }
}

/// The cloning adversary built from a proof-of-knowledge breaker: split one
/// bill between two provers, run both agree phases, abort unless they agree
/// on the same id, extract from each prover, and submit the two extracted
/// registers to `R` one after the other.
pub fn pok_to_money_adversary<S: MoneyProtocol + BillForge, E: Extractor + ?Sized>(
    scen: &mut S,
    strategy: &CloningStrategy,
    prover: &ProverKind,
    extractor_a: &E,
    extractor_b: &E,
) -> Result<DoubleVerification> {
    let mut world = StateVector::new();
    let (x, bill) = split_bill(scen, strategy, &mut world)?;
    let agree_a = agree_phase(scen, Some(x), &mut world);
    let agree_b = agree_phase(scen, Some(x), &mut world);
    if !(agree_a.agreed && agree_b.agreed && agree_a.x == agree_b.x) {
        return Ok(DoubleVerification {
            agreed: false,
            accept_a: false,
            accept_b: false,
        });
    }
    let spec = scen.prover_spec(prover)?;
    let pa = BlackBoxProver::install(spec.clone(), &mut world, "pa", &[("witness", &bill)])?;
    let pb = BlackBoxProver::install(spec, &mut world, "pb", &[("witness", COPY_B)])?;
    let out_a = extractor_a.extract(
        &ExtractorInput {
            bb: &pa,
            x,
            agree_transcript: &agree_a.transcript,
        },
        &mut world,
    )?;
    let out_b = extractor_b.extract(
        &ExtractorInput {
            bb: &pb,
            x,
            agree_transcript: &agree_b.transcript,
        },
        &mut world,
    )?;
    let accept_a = scen.proof_relation(&x, &out_a, &mut world)?;
    let accept_b = scen.proof_relation(&x, &out_b, &mut world)?;
    Ok(DoubleVerification {
        agreed: true,
        accept_a,
        accept_b,
    })
}

/// Verifier for `n` sequential challenge/response rounds. `T` keeps, per
/// round, the challenge followed by the echoed challenge and the answer the
/// verifier swapped out of `N` before issuing the next challenge.
pub fn sequential_verifier(single: &ClassicalMachineSpec, chal_width: usize, lambda: usize, n: usize) -> ClassicalMachineSpec {
    let slot = 2 * chal_width + lambda;
    let out = single.output_fn.clone();
    let verdicts = move |t: BitString, nf: BitString| -> Vec<bool> {
        (0..n)
            .map(|r| {
                let c = t.slice(r * slot, chal_width);
                let reply = if r + 1 == n { nf } else { t.slice(r * slot + chal_width, chal_width + lambda) };
                out(c, reply)
            })
            .collect()
    };
    ClassicalMachineSpec {
        name: format!("{}x{n}", single.name),
        t_width: n * slot,
        n_width: chal_width + lambda,
        rand_width: chal_width,
        rounds: n,
        round_fn: Arc::new(move |r, t, nn, u| {
            let mut t = t;
            let mut nn = nn;
            if r > 0 {
                let off = (r - 1) * slot + chal_width;
                let stored = t.slice(off, chal_width + lambda);
                t = write_slice(&t, off, &nn);
                nn = stored;
            }
            let c_off = r * slot;
            let c = t.slice(c_off, chal_width).xor(&u);
            t = write_slice(&t, c_off, &c);
            nn = nn.xor(&u.concat(&BitString::zeros(lambda)));
            (t, nn)
        }),
        output_fn: Arc::new(move |t, nf| verdicts(t, nf).iter().all(|&b| b)),
    }
}

fn write_slice(t: &BitString, off: usize, v: &BitString) -> BitString {
    let mut out = *t;
    for i in 0..v.len() {
        out = out.with_bit(off + i, v.get(i));
    }
    out
}

/// Per-round verdicts of a finished sequential run.
pub fn sequential_round_verdicts(single: &ClassicalMachineSpec, chal_width: usize, lambda: usize, n: usize, t: &BitString, nf: &BitString) -> Vec<bool> {
    let slot = 2 * chal_width + lambda;
    (0..n)
        .map(|r| {
            let c = t.slice(r * slot, chal_width);
            let reply = if r + 1 == n { *nf } else { t.slice(r * slot + chal_width, chal_width + lambda) };
            (single.output_fn)(c, reply)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplificationReport {
    pub rounds: usize,
    pub fresh: bool,
    pub per_round: Vec<Proportion>,
    pub overall: Proportion,
}

/// One sequential run. With `fresh` the prover holds `n` genuine copies of
/// the bill (the extra ones forged), otherwise it keeps reusing one bill.
pub fn sequential_run<S: MoneyProtocol + BillForge>(scen: &mut S, prover: &ProverKind, n: usize, fresh: bool, rng: &mut ChaCha8Rng) -> Result<Vec<bool>> {
    let mut world = StateVector::new();
    let input = scen.honest_input(&mut world)?;
    let x = input.id.ok_or_else(|| Error::Oracle("no id".into()))?;
    let bill = input.witness.ok_or_else(|| Error::Oracle("no bill".into()))?;
    let (lambda, cw) = (scen.lambda(), scen.challenge_width());
    let spec = provers::sequential(prover, lambda, cw, n, fresh)?;
    let mut names = vec![bill];
    let bindings: Vec<(String, String)> = if spec.private.iter().any(|r| r.name == "witness0") {
        for k in 1..n {
            let name = format!("copy{k}");
            scen.forge_bill(&x, &name, &mut world)?;
            names.push(name);
        }
        names.iter().enumerate().map(|(k, b)| (format!("witness{k}"), b.clone())).collect()
    } else {
        vec![("witness".to_string(), names[0].clone())]
    };
    let refs: Vec<(&str, &str)> = bindings.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let bb = BlackBoxProver::install(spec, &mut world, "prover", &refs)?;
    let single = scen.verifier(&x, &mut world)?.ok_or_else(|| Error::Oracle("secret query failed".into()))?;
    let v = sequential_verifier(&single, cw, lambda, n);
    let run = run_interaction(&v, &bb, &mut world, BitString::zeros(v.t_width), TurnOrder::VerifierFirst, rng)?;
    let last = run.transcript.from_sender(Sender::P).last().map(|m| m.bits).unwrap_or_default();
    Ok(sequential_round_verdicts(&single, cw, lambda, n, &run.t_final, &last))
}

pub fn sequential_amplification<S, F>(make: F, prover: &ProverKind, n: usize, fresh: bool, trials: u64, seed: u64) -> Result<AmplificationReport>
where
    S: MoneyProtocol + BillForge,
    F: Fn(u64) -> S + Sync,
{
    let runs: Vec<Vec<bool>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let s = derive_seed(seed, k);
            let mut scen = make(s);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            sequential_run(&mut scen, prover, n, fresh, &mut rng)
        })
        .collect::<Result<_>>()?;
    let per_round = (0..n)
        .map(|r| Proportion::new(runs.iter().filter(|v| v[r]).count() as u64, trials))
        .collect();
    let overall = Proportion::new(runs.iter().filter(|v| v.iter().all(|&b| b)).count() as u64, trials);
    Ok(AmplificationReport {
        rounds: n,
        fresh,
        per_round,
        overall,
    })
}

/// Exact overall pass probability of `n` sequential Wiesner rounds on the
/// bill of `secret`.
pub fn exact_sequential_wiesner_for(secret: &wiesner::WiesnerSecret, prover: &ProverKind, n: usize, fresh: bool) -> Result<f64> {
    let lambda = secret.lambda();
    let spec = provers::sequential(prover, lambda, lambda, n, fresh)?;
    let copies = if spec.private.iter().any(|r| r.name == "witness0") { n } else { 1 };
    let mut world = StateVector::new();
    let mut bindings = Vec::new();
    for k in 0..copies {
        let name = format!("bill{k}");
        world.add_register_with_state(&name, lambda, &wiesner::money_amplitudes(secret))?;
        let w = if copies == 1 { "witness".to_string() } else { format!("witness{k}") };
        bindings.push((w, name));
    }
    let refs: Vec<(&str, &str)> = bindings.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let bb = BlackBoxProver::install(spec, &mut world, "prover", &refs)?;
    let v = sequential_verifier(&wiesner::verifier_v2(secret), lambda, lambda, n);
    let leaves = interaction_distribution(&v, &bb, &world, BitString::zeros(v.t_width), TurnOrder::VerifierFirst)?;
    Ok(crate::itm::acceptance_probability(&leaves))
}

/// [`exact_sequential_wiesner_for`] averaged over all secrets.
pub fn exact_sequential_wiesner(lambda: usize, prover: &ProverKind, n: usize, fresh: bool) -> Result<f64> {
    let secrets = wiesner::WiesnerSecret::all(lambda);
    let mut total = 0.0;
    for s in &secrets {
        total += exact_sequential_wiesner_for(s, prover, n, fresh)?;
    }
    Ok(total / secrets.len() as f64)
}
