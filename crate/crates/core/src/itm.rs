//! Interactive machines: quantum provers given as per-round gate circuits on
//! `(N, S)`, classical verifiers given as reversible round maps on `(T, N)`,
//! and the executor that alternates them and logs the transcript.
//!
//! A prover is installed into a world [`StateVector`] as a [`BlackBoxProver`].
//! Its private registers are sealed, so the holder of the handle can only
//! apply the round unitary or its inverse and act on the network registers.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::qsim::{gates, CMatrix, DenseOperator, SealKey, StateVector, C64};

/// Largest `(answer, private)` space turned into a dense block.
pub const DENSE_BLOCK_CAP_QUBITS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sender {
    P,
    V,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Message {
    pub round: usize,
    pub sender: Sender,
    pub bits: BitString,
}

#[derive(Serialize, Deserialize)]
struct MessageRepr {
    round: usize,
    sender: Sender,
    bits: String,
    len: usize,
}

impl Serialize for Message {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MessageRepr {
            round: self.round,
            sender: self.sender,
            bits: self.bits.to_hex(),
            len: self.bits.len(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Message {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = MessageRepr::deserialize(d)?;
        let bits = BitString::from_hex(&r.bits, r.len).map_err(serde::de::Error::custom)?;
        Ok(Message {
            round: r.round,
            sender: r.sender,
            bits,
        })
    }
}

/// Standard-basis outcomes of the network register after every turn.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript {
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn push(&mut self, round: usize, sender: Sender, bits: BitString) {
        self.messages.push(Message { round, sender, bits });
    }

    pub fn from_sender(&self, sender: Sender) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(move |m| m.sender == sender)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("transcript serializes")
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, m) in self.messages.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{:?}{}:{}", m.sender, m.round, m.bits)?;
        }
        Ok(())
    }
}

// ---- quantum machines ---------------------------------------------------------

#[derive(Clone, Debug)]
pub enum GateKind {
    H,
    X,
    Y,
    Z,
    Rz(f64),
    /// Two qubits; the first is the control.
    Cnot,
    Swap,
    Dense(Arc<CMatrix>),
}

impl GateKind {
    fn matrix(&self) -> CMatrix {
        match self {
            GateKind::H => gates::h(),
            GateKind::X => gates::x(),
            GateKind::Y => gates::y(),
            GateKind::Z => gates::z(),
            GateKind::Rz(phi) => gates::rz(*phi),
            GateKind::Cnot => gates::cnot(),
            GateKind::Swap => gates::swap(),
            GateKind::Dense(m) => (**m).clone(),
        }
    }

    fn dagger(&self) -> GateKind {
        match self {
            GateKind::Rz(phi) => GateKind::Rz(-phi),
            GateKind::Dense(m) => GateKind::Dense(Arc::new(m.adjoint())),
            other => other.clone(),
        }
    }
}

/// A gate on machine-local qubits, applied only where every control qubit
/// holds the listed value.
#[derive(Clone, Debug)]
pub struct Gate {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    pub controls: Vec<(usize, bool)>,
}

impl Gate {
    pub fn new(kind: GateKind, qubits: &[usize]) -> Self {
        Self {
            kind,
            qubits: qubits.to_vec(),
            controls: Vec::new(),
        }
    }

    pub fn when(mut self, qubit: usize, value: bool) -> Self {
        self.controls.push((qubit, value));
        self
    }
}

#[derive(Clone, Debug, Default)]
pub struct Circuit {
    pub gates: Vec<Gate>,
}

impl Circuit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, gate: Gate) {
        self.gates.push(gate);
    }

    pub fn inverse(&self) -> Circuit {
        Circuit {
            gates: self
                .gates
                .iter()
                .rev()
                .map(|g| Gate {
                    kind: g.kind.dagger(),
                    qubits: g.qubits.clone(),
                    controls: g.controls.clone(),
                })
                .collect(),
        }
    }

    fn max_qubit(&self) -> Option<usize> {
        self.gates
            .iter()
            .flat_map(|g| g.qubits.iter().chain(g.controls.iter().map(|c| &c.0)))
            .copied()
            .max()
    }

    fn run(&self, state: &mut StateVector, map: &[usize]) {
        for g in &self.gates {
            let targets: Vec<usize> = g.qubits.iter().map(|&q| map[q]).collect();
            let controls: Vec<(usize, bool)> = g.controls.iter().map(|&(q, v)| (map[q], v)).collect();
            state.apply_raw(&targets, &g.kind.matrix(), &controls);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegSpec {
    pub name: String,
    pub width: usize,
}

impl RegSpec {
    pub fn new(name: &str, width: usize) -> Self {
        Self {
            name: name.to_string(),
            width,
        }
    }
}

/// A prover machine. Local qubits number the network registers first, then
/// the private registers, each register contiguous.
#[derive(Clone, Debug)]
pub struct QuantumMachineSpec {
    pub name: String,
    pub network: Vec<RegSpec>,
    pub private: Vec<RegSpec>,
    /// Preparation of the private registers from |0⟩ (or from the bound
    /// witness) before the first round; not part of the round unitaries.
    pub init: Circuit,
    pub rounds: Vec<Circuit>,
}

impl QuantumMachineSpec {
    pub fn network_width(&self) -> usize {
        self.network.iter().map(|r| r.width).sum()
    }

    pub fn private_width(&self) -> usize {
        self.private.iter().map(|r| r.width).sum()
    }

    pub fn local_width(&self) -> usize {
        self.network_width() + self.private_width()
    }

    /// First local qubit of a register.
    pub fn offset(&self, name: &str) -> Result<usize> {
        let mut off = 0;
        for r in self.network.iter().chain(&self.private) {
            if r.name == name {
                return Ok(off);
            }
            off += r.width;
        }
        Err(Error::UnknownRegister(name.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds.is_empty() {
            return Err(Error::InvalidMachine(format!("{} has no rounds", self.name)));
        }
        let width = self.local_width();
        for c in self.rounds.iter().chain(std::iter::once(&self.init)) {
            if let Some(q) = c.max_qubit() {
                if q >= width {
                    return Err(Error::InvalidMachine(format!(
                        "{} addresses local qubit {q} of {width}",
                        self.name
                    )));
                }
            }
            for g in &c.gates {
                let m = g.kind.matrix();
                if m.nrows() != 1 << g.qubits.len() {
                    return Err(Error::InvalidMachine(format!(
                        "{}: gate arity does not match its matrix",
                        self.name
                    )));
                }
                let defect = crate::qsim::unitarity_defect(&m);
                if defect > crate::qsim::OP_TOL {
                    return Err(Error::NotUnitary(defect));
                }
            }
        }
        let init_width = self.network_width();
        if self
            .init
            .gates
            .iter()
            .flat_map(|g| g.qubits.iter().chain(g.controls.iter().map(|c| &c.0)))
            .any(|&q| q < init_width)
        {
            return Err(Error::InvalidMachine(format!(
                "{}: init circuit touches the network",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Opaque handle on a prover installed in a world state.
#[derive(Debug)]
pub struct BlackBoxProver {
    spec: Arc<QuantumMachineSpec>,
    network: Vec<String>,
    private: Vec<String>,
    key: SealKey,
    calls: AtomicU64,
}

impl BlackBoxProver {
    /// Installs `spec` into `world`. Network registers are created as
    /// `{prefix}.{name}` in |0⟩. Private registers listed in `bindings`
    /// (local name, world register) reuse existing world registers; the rest
    /// are created as `{prefix}.{name}`. The init circuit runs, then every
    /// private register is sealed.
    pub fn install(
        spec: QuantumMachineSpec,
        world: &mut StateVector,
        prefix: &str,
        bindings: &[(&str, &str)],
    ) -> Result<Self> {
        spec.validate()?;
        let mut network = Vec::new();
        for r in &spec.network {
            let name = format!("{prefix}.{}", r.name);
            world.add_register(&name, r.width)?;
            network.push(name);
        }
        let mut private = Vec::new();
        for r in &spec.private {
            let name = match bindings.iter().find(|(local, _)| *local == r.name) {
                Some((_, world_name)) => {
                    let w = world.width(world_name)?;
                    if w != r.width {
                        return Err(Error::Dimension(format!(
                            "{world_name} has width {w}, {} expects {}",
                            r.name, r.width
                        )));
                    }
                    world_name.to_string()
                }
                None => {
                    let name = format!("{prefix}.{}", r.name);
                    world.add_register(&name, r.width)?;
                    name
                }
            };
            private.push(name);
        }
        for (local, _) in bindings {
            if !spec.private.iter().any(|r| r.name == *local) {
                return Err(Error::UnknownRegister(local.to_string()));
            }
        }
        let private_refs: Vec<&str> = private.iter().map(String::as_str).collect();
        let key = world.seal(&private_refs)?;
        let bb = Self {
            spec: Arc::new(spec),
            network,
            private,
            key,
            calls: AtomicU64::new(0),
        };
        let map = bb.local_map(world)?;
        bb.spec.init.run(world, &map);
        Ok(bb)
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn rounds(&self) -> usize {
        self.spec.rounds.len()
    }

    /// World names of the network registers, in machine order.
    pub fn network_registers(&self) -> &[String] {
        &self.network
    }

    pub fn network_specs(&self) -> &[RegSpec] {
        &self.spec.network
    }

    pub fn network_width(&self) -> usize {
        self.spec.network_width()
    }

    /// Number of unit-cost prover invocations so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn count(&self, n: u64) {
        self.calls.fetch_add(n, Ordering::Relaxed);
    }

    fn local_map(&self, world: &StateVector) -> Result<Vec<usize>> {
        let net: Vec<&str> = self.network.iter().map(String::as_str).collect();
        let priv_: Vec<&str> = self.private.iter().map(String::as_str).collect();
        let mut map = world.qubits(&net)?;
        map.extend(world.qubits_with_key(&priv_, &self.key)?);
        Ok(map)
    }

    /// World qubits of `(network without its first register, private)`, the
    /// space the per-challenge blocks act on.
    pub(crate) fn block_qubits(&self, world: &StateVector) -> Result<Vec<usize>> {
        let map = self.local_map(world)?;
        Ok(map[self.spec.network[0].width..].to_vec())
    }

    /// Applies round `round` (or its inverse) to the world.
    pub fn apply(&self, world: &mut StateVector, round: usize, dir: Direction) -> Result<()> {
        let circuit = self.spec.rounds.get(round).ok_or_else(|| {
            Error::InvalidMachine(format!("{} has no round {round}", self.spec.name))
        })?;
        let map = self.local_map(world)?;
        match dir {
            Direction::Forward => circuit.run(world, &map),
            Direction::Inverse => circuit.inverse().run(world, &map),
        }
        self.count(1);
        Ok(())
    }

    /// Round-0 block `U_c` on `(answer registers, private registers)` for the
    /// challenge value `c` of the first network register.
    pub fn challenge_block(&self, c: &BitString) -> Result<CMatrix> {
        let chal = &self.spec.network[0];
        if c.len() != chal.width {
            return Err(Error::Dimension(format!(
                "challenge of width {} for register of width {}",
                c.len(),
                chal.width
            )));
        }
        let block_width = self.spec.local_width() - chal.width;
        if block_width > DENSE_BLOCK_CAP_QUBITS {
            return Err(Error::TooLarge(format!(
                "challenge block on {block_width} qubits exceeds the dense cap of {DENSE_BLOCK_CAP_QUBITS}"
            )));
        }
        let dim = 1usize << block_width;
        let map: Vec<usize> = (0..self.spec.local_width()).collect();
        let round = &self.spec.rounds[0];
        let mut block = CMatrix::zeros(dim, dim);
        let chal_mask = (1usize << chal.width) - 1;
        for j in 0..dim {
            let mut s = StateVector::basis(
                &[("chal", chal.width), ("rest", block_width)],
                &[*c, BitString::new(j as u64, block_width)],
            )?;
            round.run(&mut s, &map);
            for (idx, a) in s.amplitudes().iter().enumerate() {
                if a.norm_sqr() < 1e-24 {
                    continue;
                }
                if idx & chal_mask != c.value() as usize {
                    return Err(Error::InvalidMachine(format!(
                        "{} changes its challenge register",
                        self.spec.name
                    )));
                }
                block[(idx >> chal.width, j)] = *a;
            }
        }
        self.count(1);
        Ok(block)
    }

    /// The full round-0 unitary `Σ_c |c⟩⟨c| ⊗ U_c` on `(N, S)`.
    pub fn challenge_controlled_unitary(&self) -> Result<DenseOperator> {
        let width = self.spec.local_width();
        if width > DENSE_BLOCK_CAP_QUBITS {
            return Err(Error::TooLarge(format!(
                "prover unitary on {width} qubits exceeds the dense cap of {DENSE_BLOCK_CAP_QUBITS}"
            )));
        }
        let dim = 1usize << width;
        let map: Vec<usize> = (0..width).collect();
        let mut u = CMatrix::zeros(dim, dim);
        for j in 0..dim {
            let mut s = StateVector::basis(&[("local", width)], &[BitString::new(j as u64, width)])?;
            self.spec.rounds[0].run(&mut s, &map);
            for (idx, a) in s.amplitudes().iter().enumerate() {
                u[(idx, j)] = *a;
            }
        }
        self.count(1);
        let names: Vec<&str> = self.network.iter().map(String::as_str).collect();
        Ok(DenseOperator {
            matrix: u,
            targets: names.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Applies an operator assembled from this prover's own blocks to
    /// `(answer, private)`. Only the extractor builds such operators.
    pub(crate) fn apply_block_operator(&self, world: &mut StateVector, m: &CMatrix) -> Result<()> {
        let qubits = self.block_qubits(world)?;
        if m.nrows() != 1 << qubits.len() {
            return Err(Error::Dimension("block operator size".into()));
        }
        world.apply_raw(&qubits, m, &[]);
        Ok(())
    }

    pub(crate) fn apply_block_isometry(
        &self,
        world: &mut StateVector,
        m: &CMatrix,
        new_regs: &[(&str, usize)],
    ) -> Result<()> {
        let qubits = self.block_qubits(world)?;
        world.apply_isometry_raw(&qubits, m, new_regs)
    }

    pub(crate) fn apply_block_map(
        &self,
        world: &mut StateVector,
        new_regs: &[(&str, usize)],
        f: impl FnOnce(&CMatrix) -> Result<CMatrix>,
    ) -> Result<()> {
        let qubits = self.block_qubits(world)?;
        world.apply_isometry_map_raw(&qubits, new_regs, f)
    }
}

// ---- classical machines ---------------------------------------------------------

pub type RoundFn = Arc<dyn Fn(usize, BitString, BitString, BitString) -> (BitString, BitString) + Send + Sync>;
pub type OutputFn = Arc<dyn Fn(BitString, BitString) -> bool + Send + Sync>;

/// A classical verifier. Each round maps `(T, N, u)` to `(T, N)` and must be a
/// bijection on `(T, N)` for every fixed `u`. The verdict is read from the
/// final `(T, N)`.
#[derive(Clone)]
pub struct ClassicalMachineSpec {
    pub name: String,
    pub t_width: usize,
    pub n_width: usize,
    pub rand_width: usize,
    pub rounds: usize,
    pub round_fn: RoundFn,
    pub output_fn: OutputFn,
}

impl fmt::Debug for ClassicalMachineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClassicalMachineSpec")
            .field("name", &self.name)
            .field("t_width", &self.t_width)
            .field("n_width", &self.n_width)
            .field("rand_width", &self.rand_width)
            .field("rounds", &self.rounds)
            .finish()
    }
}

impl ClassicalMachineSpec {
    /// Exhaustively checks that every round is a bijection on `(T, N)`.
    pub fn check_reversible(&self) -> Result<()> {
        let total = self.t_width + self.n_width;
        if total + self.rand_width > 20 {
            return Err(Error::TooLarge("reversibility check above 2^20 cases".into()));
        }
        for round in 0..self.rounds {
            for u in BitString::all(self.rand_width) {
                let mut seen = vec![false; 1 << total];
                for tn in BitString::all(total) {
                    let (t, n) = tn.split(self.t_width);
                    let (t2, n2) = (self.round_fn)(round, t, n, u);
                    if t2.len() != self.t_width || n2.len() != self.n_width {
                        return Err(Error::InvalidMachine(format!("{}: width changed", self.name)));
                    }
                    let idx = t2.concat(&n2).value() as usize;
                    if seen[idx] {
                        return Err(Error::InvalidMachine(format!(
                            "{}: round {round} is not injective for u={u}",
                            self.name
                        )));
                    }
                    seen[idx] = true;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TurnOrder {
    #[default]
    VerifierFirst,
    ProverFirst,
}

#[derive(Clone, Debug)]
pub struct Interaction {
    pub verdict: bool,
    pub transcript: Transcript,
    pub t_final: BitString,
}

fn check_compatible(v: &ClassicalMachineSpec, p: &BlackBoxProver, world: &StateVector) -> Result<()> {
    if v.rounds != p.rounds() {
        return Err(Error::InvalidMachine(format!(
            "round-count mismatch: verifier {} has {}, prover {} has {}",
            v.name,
            v.rounds,
            p.name(),
            p.rounds()
        )));
    }
    if v.n_width != p.network_width() {
        return Err(Error::Dimension(format!(
            "verifier expects N of width {}, prover has {}",
            v.n_width,
            p.network_width()
        )));
    }
    for name in p.network_registers() {
        let probs = world.probabilities(name)?;
        if (probs[0] - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMachine(format!("network register {name} is not |0⟩")));
        }
    }
    Ok(())
}

fn write_network(world: &mut StateVector, p: &BlackBoxProver, old: &BitString, new: &BitString) -> Result<()> {
    let diff = old.xor(new);
    let mut off = 0;
    for (name, spec) in p.network_registers().iter().zip(p.network_specs()) {
        world.xor_value(name, &diff.slice(off, spec.width))?;
        off += spec.width;
    }
    Ok(())
}

fn measure_network<R: Rng + ?Sized>(world: &mut StateVector, p: &BlackBoxProver, rng: &mut R) -> Result<BitString> {
    let mut out = BitString::empty();
    for name in p.network_registers() {
        out = out.concat(&world.measure(name, rng)?);
    }
    Ok(out)
}

/// Runs the interaction, drawing verifier coins from `rng`.
pub fn run_interaction<R: Rng + ?Sized>(
    v: &ClassicalMachineSpec,
    p: &BlackBoxProver,
    world: &mut StateVector,
    t_init: BitString,
    order: TurnOrder,
    rng: &mut R,
) -> Result<Interaction> {
    let coins: Vec<BitString> = (0..v.rounds).map(|_| BitString::random(v.rand_width, rng)).collect();
    run_interaction_with_coins(v, p, world, t_init, order, &coins, rng)
}

/// Runs the interaction with explicit verifier coins; `rng` drives only the
/// measurements of the network register.
pub fn run_interaction_with_coins<R: Rng + ?Sized>(
    v: &ClassicalMachineSpec,
    p: &BlackBoxProver,
    world: &mut StateVector,
    t_init: BitString,
    order: TurnOrder,
    coins: &[BitString],
    rng: &mut R,
) -> Result<Interaction> {
    check_compatible(v, p, world)?;
    if coins.len() != v.rounds || t_init.len() != v.t_width {
        return Err(Error::Dimension("coins or initial T have the wrong shape".into()));
    }
    let mut t = t_init;
    let mut n = BitString::zeros(v.n_width);
    let mut transcript = Transcript::default();
    for round in 0..v.rounds {
        let prover_turn = |world: &mut StateVector, n: &mut BitString, transcript: &mut Transcript, rng: &mut R| -> Result<()> {
            p.apply(world, round, Direction::Forward)?;
            *n = measure_network(world, p, rng)?;
            transcript.push(round, Sender::P, *n);
            Ok(())
        };
        if order == TurnOrder::ProverFirst {
            prover_turn(world, &mut n, &mut transcript, rng)?;
        }
        let (t2, n2) = (v.round_fn)(round, t, n, coins[round]);
        write_network(world, p, &n, &n2)?;
        t = t2;
        n = n2;
        transcript.push(round, Sender::V, n);
        if order == TurnOrder::VerifierFirst {
            prover_turn(world, &mut n, &mut transcript, rng)?;
        }
    }
    Ok(Interaction {
        verdict: (v.output_fn)(t, n),
        transcript,
        t_final: t,
    })
}

/// One leaf of the exact interaction tree.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub probability: f64,
    pub verdict: bool,
    pub transcript: Transcript,
    pub t_final: BitString,
    pub coins: Vec<BitString>,
    pub state: StateVector,
}

/// Enumerates every verifier coin sequence and every measurement branch.
pub fn interaction_distribution(
    v: &ClassicalMachineSpec,
    p: &BlackBoxProver,
    world: &StateVector,
    t_init: BitString,
    order: TurnOrder,
) -> Result<Vec<Outcome>> {
    check_compatible(v, p, world)?;
    if v.rand_width * v.rounds > 16 {
        return Err(Error::TooLarge("more than 2^16 coin sequences".into()));
    }
    let mut leaves = Vec::new();
    let root = Outcome {
        probability: 1.0,
        verdict: false,
        transcript: Transcript::default(),
        t_final: t_init,
        coins: Vec::new(),
        state: world.clone(),
    };
    expand(v, p, order, root, BitString::zeros(v.n_width), 0, &mut leaves)?;
    Ok(leaves)
}

fn prover_branches(p: &BlackBoxProver, node: Outcome, round: usize) -> Result<Vec<(Outcome, BitString)>> {
    let mut state = node.state;
    p.apply(&mut state, round, Direction::Forward)?;
    let mut partial = vec![(state, BitString::empty(), node.probability)];
    for name in p.network_registers() {
        let mut next = Vec::new();
        for (s, bits, prob) in partial {
            for b in s.measure_branches(name)? {
                next.push((b.state, bits.concat(&b.outcome), prob * b.probability));
            }
        }
        partial = next;
    }
    Ok(partial
        .into_iter()
        .map(|(state, bits, prob)| {
            let mut transcript = node.transcript.clone();
            transcript.push(round, Sender::P, bits);
            (
                Outcome {
                    probability: prob,
                    verdict: false,
                    transcript,
                    t_final: node.t_final,
                    coins: node.coins.clone(),
                    state,
                },
                bits,
            )
        })
        .collect())
}

fn expand(
    v: &ClassicalMachineSpec,
    p: &BlackBoxProver,
    order: TurnOrder,
    node: Outcome,
    n: BitString,
    round: usize,
    leaves: &mut Vec<Outcome>,
) -> Result<()> {
    if round == v.rounds {
        let mut leaf = node;
        leaf.verdict = (v.output_fn)(leaf.t_final, n);
        leaves.push(leaf);
        return Ok(());
    }
    let starts: Vec<(Outcome, BitString)> = if order == TurnOrder::ProverFirst {
        prover_branches(p, node, round)?
    } else {
        vec![(node, n)]
    };
    let weight = 0.5f64.powi(v.rand_width as i32);
    for (start, n) in starts {
        for u in BitString::all(v.rand_width) {
            let (t2, n2) = (v.round_fn)(round, start.t_final, n, u);
            let mut state = start.state.clone();
            write_network(&mut state, p, &n, &n2)?;
            let mut transcript = start.transcript.clone();
            transcript.push(round, Sender::V, n2);
            let mut coins = start.coins.clone();
            coins.push(u);
            let child = Outcome {
                probability: start.probability * weight,
                verdict: false,
                transcript,
                t_final: t2,
                coins,
                state,
            };
            if order == TurnOrder::VerifierFirst {
                for (grand, n3) in prover_branches(p, child, round)? {
                    expand(v, p, order, grand, n3, round + 1, leaves)?;
                }
            } else {
                expand(v, p, order, child, n2, round + 1, leaves)?;
            }
        }
    }
    Ok(())
}

/// Joint probability of `(transcript, verdict)` pairs.
pub fn transcript_distribution(outcomes: &[Outcome]) -> BTreeMap<(String, bool), f64> {
    let mut dist = BTreeMap::new();
    for o in outcomes {
        *dist.entry((o.transcript.to_string(), o.verdict)).or_insert(0.0) += o.probability;
    }
    dist
}

/// Probability that the verifier accepts.
pub fn acceptance_probability(outcomes: &[Outcome]) -> f64 {
    outcomes.iter().filter(|o| o.verdict).map(|o| o.probability).sum()
}

/// Unitary completing `|0…0⟩ ↦ psi` (Householder reflection).
pub fn state_preparation(psi: &[C64]) -> CMatrix {
    let dim = psi.len();
    let norm = psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    let target: Vec<C64> = psi.iter().map(|a| a / norm).collect();
    // phase so that the first component is real non-negative before reflecting
    let phase = if target[0].norm() > 1e-15 {
        target[0] / target[0].norm()
    } else {
        C64::new(1.0, 0.0)
    };
    let t: Vec<C64> = target.iter().map(|a| a / phase).collect();
    let mut w: Vec<C64> = t.iter().map(|a| -a).collect();
    w[0] += C64::new(1.0, 0.0);
    let wn = w.iter().map(|a| a.norm_sqr()).sum::<f64>();
    let mut u = CMatrix::identity(dim, dim);
    if wn > 1e-24 {
        for r in 0..dim {
            for c in 0..dim {
                u[(r, c)] -= w[r] * w[c].conj() * (2.0 / wn);
            }
        }
    }
    u * phase
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::unitarity_defect;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// One-qubit challenge, one-qubit answer, one private qubit: H on the
    /// private qubit when c=1, then CNOT into the answer.
    fn copy_machine() -> QuantumMachineSpec {
        let mut round = Circuit::new();
        round.push(Gate::new(GateKind::H, &[2]).when(0, true));
        round.push(Gate::new(GateKind::Cnot, &[2, 1]));
        round.push(Gate::new(GateKind::H, &[2]).when(0, true));
        QuantumMachineSpec {
            name: "copy".into(),
            network: vec![RegSpec::new("chal", 1), RegSpec::new("ans", 1)],
            private: vec![RegSpec::new("w", 1)],
            init: Circuit::new(),
            rounds: vec![round],
        }
    }

    fn echo_verifier(accept: bool) -> ClassicalMachineSpec {
        ClassicalMachineSpec {
            name: "echo".into(),
            t_width: 1,
            n_width: 2,
            rand_width: 1,
            rounds: 1,
            round_fn: Arc::new(|_, t, n, u| {
                let u2 = u.concat(&BitString::zeros(1));
                (t.xor(&u), n.xor(&u2))
            }),
            output_fn: Arc::new(move |_, _| accept),
        }
    }

    fn world_with_witness(bit: &str) -> StateVector {
        StateVector::basis(&[("witness", 1)], &[bit.parse().unwrap()]).unwrap()
    }

    #[test]
    fn forward_then_inverse_restores_everything() {
        let mut world = world_with_witness("1");
        world.hadamard_layer(&"1".parse().unwrap(), "witness").unwrap();
        let bb = BlackBoxProver::install(copy_machine(), &mut world, "p", &[("w", "witness")]).unwrap();
        world.hadamard_layer(&"1".parse().unwrap(), "p.chal").unwrap();
        let before = world.clone();
        bb.apply(&mut world, 0, Direction::Forward).unwrap();
        bb.apply(&mut world, 0, Direction::Inverse).unwrap();
        assert!((world.inner(&before).unwrap().norm() - 1.0).abs() < 1e-9);
        assert_eq!(bb.calls(), 2);
    }

    #[test]
    fn superposed_challenge_is_linear() {
        let make = |c: Option<&str>| {
            let mut w = world_with_witness("0");
            let bb = BlackBoxProver::install(copy_machine(), &mut w, "p", &[("w", "witness")]).unwrap();
            match c {
                Some(bit) => w.xor_value("p.chal", &bit.parse().unwrap()).unwrap(),
                None => w.hadamard_layer(&"1".parse().unwrap(), "p.chal").unwrap(),
            }
            bb.apply(&mut w, 0, Direction::Forward).unwrap();
            w
        };
        let sup = make(None);
        let (b0, b1) = (make(Some("0")), make(Some("1")));
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..sup.amplitudes().len() {
            let expect = (b0.amplitudes()[i] + b1.amplitudes()[i]) * r;
            assert!((sup.amplitudes()[i] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn sealed_witness_is_not_addressable() {
        let mut world = world_with_witness("0");
        let _bb = BlackBoxProver::install(copy_machine(), &mut world, "p", &[("w", "witness")]).unwrap();
        assert!(matches!(world.measure_branches("witness"), Err(Error::Sealed(_))));
        assert!(world.measure_branches("p.ans").is_ok());
    }

    #[test]
    fn challenge_blocks_differ_by_hadamard_conjugation() {
        let mut world = world_with_witness("0");
        let bb = BlackBoxProver::install(copy_machine(), &mut world, "p", &[("w", "witness")]).unwrap();
        let u0 = bb.challenge_block(&"0".parse().unwrap()).unwrap();
        let u1 = bb.challenge_block(&"1".parse().unwrap()).unwrap();
        // block local order: ans (bit 0), w (bit 1); U_1 = (I⊗H) U_0 (I⊗H)
        let hw = gates::kron(&gates::h(), &gates::identity(2));
        assert!(crate::qsim::max_abs_diff(&u1, &(&hw * &u0 * &hw)) < 1e-12);
        let full = bb.challenge_controlled_unitary().unwrap();
        assert!(unitarity_defect(&full.matrix) < 1e-8);
    }

    #[test]
    fn challenge_blind_prover_has_equal_blocks() {
        let mut spec = copy_machine();
        let mut round = Circuit::new();
        round.push(Gate::new(GateKind::Cnot, &[2, 1]));
        spec.rounds = vec![round];
        let mut world = world_with_witness("0");
        let bb = BlackBoxProver::install(spec, &mut world, "p", &[("w", "witness")]).unwrap();
        let u0 = bb.challenge_block(&"0".parse().unwrap()).unwrap();
        let u1 = bb.challenge_block(&"1".parse().unwrap()).unwrap();
        assert_eq!(u0, u1);
    }

    #[test]
    fn always_reject_verifier() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut world = world_with_witness("1");
        let bb = BlackBoxProver::install(copy_machine(), &mut world, "p", &[("w", "witness")]).unwrap();
        let out = run_interaction(&echo_verifier(false), &bb, &mut world, BitString::zeros(1), TurnOrder::VerifierFirst, &mut rng)
            .unwrap();
        assert!(!out.verdict);
        assert_eq!(out.transcript.len(), 2);
        assert_eq!(out.transcript.messages[0].sender, Sender::V);
        assert_eq!(out.transcript.messages[1].sender, Sender::P);
    }

    #[test]
    fn round_mismatch_is_an_error() {
        let mut v = echo_verifier(true);
        v.rounds = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut world = world_with_witness("1");
        let bb = BlackBoxProver::install(copy_machine(), &mut world, "p", &[("w", "witness")]).unwrap();
        let r = run_interaction(&v, &bb, &mut world, BitString::zeros(1), TurnOrder::VerifierFirst, &mut rng);
        assert!(matches!(r, Err(Error::InvalidMachine(_))));
    }

    #[test]
    fn reversibility_check_catches_collisions() {
        assert!(echo_verifier(true).check_reversible().is_ok());
        let mut bad = echo_verifier(true);
        bad.round_fn = Arc::new(|_, t, n, _| (t, BitString::zeros(n.len())));
        assert!(bad.check_reversible().is_err());
    }

    #[test]
    fn transcript_json_shape() {
        let mut t = Transcript::default();
        t.push(0, Sender::V, "1011".parse().unwrap());
        assert_eq!(t.to_json(), r#"[{"round":0,"sender":"V","bits":"d","len":4}]"#);
        let back: Transcript = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn exact_distribution_sums_to_one() {
        let mut world = world_with_witness("0");
        world.hadamard_layer(&"1".parse().unwrap(), "witness").unwrap();
        let bb = BlackBoxProver::install(copy_machine(), &mut world, "p", &[("w", "witness")]).unwrap();
        let leaves = interaction_distribution(&echo_verifier(true), &bb, &world, BitString::zeros(1), TurnOrder::VerifierFirst).unwrap();
        let total: f64 = leaves.iter().map(|l| l.probability).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // c=0: answer uniform (two leaves); c=1: witness is |+⟩ → answer 0
        assert_eq!(leaves.len(), 3);
    }

    #[test]
    fn state_preparation_maps_zero_to_target() {
        let psi = [C64::new(0.5, 0.0), C64::new(0.0, 0.5), C64::new(-0.5, 0.0), C64::new(0.5, 0.0)];
        let u = state_preparation(&psi);
        assert!(unitarity_defect(&u) < 1e-12);
        for (k, p) in psi.iter().enumerate() {
            assert!((u[(k, 0)] - p).norm() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn prover_round_trip_restores_random_inputs(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut world = world_with_witness("0");
            world.apply_on("witness", &[0], &gates::rz(rng.gen::<f64>() * 6.0)).unwrap();
            world.hadamard_layer(&"1".parse().unwrap(), "witness").unwrap();
            let bb = BlackBoxProver::install(copy_machine(), &mut world, "p", &[("w", "witness")]).unwrap();
            world.hadamard_layer(&"1".parse().unwrap(), "p.chal").unwrap();
            world.apply_on("p.ans", &[0], &gates::rz(rng.gen::<f64>() * 6.0)).unwrap();
            let before = world.clone();
            bb.apply(&mut world, 0, Direction::Forward).unwrap();
            bb.apply(&mut world, 0, Direction::Inverse).unwrap();
            prop_assert!((world.inner(&before).unwrap().norm() - 1.0).abs() < 1e-9);
        }
    }
}
