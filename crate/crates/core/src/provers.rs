//! Prover machines for the challenge/response money protocols.
//!
//! Every prover has network registers `chal` (the challenge) and `ans` (λ
//! answer qubits) and a private register `witness` (λ qubits) plus optional
//! auxiliary qubits. Witness qubit `i` is rotated to the Hadamard basis when
//! its challenge control is 1: challenge bit `i` for Wiesner (λ-bit
//! challenges), the single challenge bit for the subspace protocol.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::itm::{state_preparation, Circuit, Gate, GateKind, QuantumMachineSpec, RegSpec};
use crate::qsim::C64;

/// Parametric prover families used by the experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProverKind {
    /// Rotates the witness into the challenge basis and swaps it into `ans`.
    Honest,
    /// Rotates, copies each witness qubit into `ans` with a CNOT, rotates
    /// back; keeps the collapsed witness for later rounds.
    HonestCopy,
    /// σ_X on `xset` positions whose control is 1 and σ_Z on `zset` positions
    /// whose control is 0, then honest.
    PauliAttack { xset: BitString, zset: BitString },
    /// Each witness qubit is depolarized with probability `q` (purified by two
    /// environment qubits per witness qubit), then honest.
    Depolarizing { q: f64 },
    /// R_Z(φ) on witness qubits whose control is 1, then honest.
    PhaseDeviation { phi: f64 },
    /// Ignores the witness and answers `beta`.
    FixedAnswer { beta: BitString },
    /// Ignores the witness and answers uniformly random bits.
    RandomAnswer,
}

impl ProverKind {
    /// Short label for reports.
    pub fn label(&self) -> String {
        match self {
            ProverKind::Honest => "honest".into(),
            ProverKind::HonestCopy => "honest-copy".into(),
            ProverKind::PauliAttack { xset, zset } => format!("pauli-attack(x={xset},z={zset})"),
            ProverKind::Depolarizing { q } => format!("depolarizing(q={q})"),
            ProverKind::PhaseDeviation { phi } => format!("phase-deviation(phi={phi})"),
            ProverKind::FixedAnswer { beta } => format!("fixed-answer({beta})"),
            ProverKind::RandomAnswer => "random-answer".into(),
        }
    }

    /// Whether the prover's round unitary touches the witness.
    pub fn uses_witness(&self) -> bool {
        !matches!(self, ProverKind::FixedAnswer { .. } | ProverKind::RandomAnswer)
    }
}

/// Qubit layout helper for a challenge/response prover.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub lambda: usize,
    pub chal_width: usize,
}

impl Layout {
    pub fn new(lambda: usize, chal_width: usize) -> Self {
        assert!(chal_width == lambda || chal_width == 1);
        Self { lambda, chal_width }
    }

    pub fn chal(&self, i: usize) -> usize {
        if self.chal_width == 1 {
            0
        } else {
            i
        }
    }

    pub fn ans(&self, i: usize) -> usize {
        self.chal_width + i
    }

    pub fn witness(&self, i: usize) -> usize {
        self.chal_width + self.lambda + i
    }

    pub fn aux(&self, i: usize) -> usize {
        self.chal_width + 2 * self.lambda + i
    }

    fn network(&self) -> Vec<RegSpec> {
        vec![RegSpec::new("chal", self.chal_width), RegSpec::new("ans", self.lambda)]
    }
}

fn controlled_rotation(c: &mut Circuit, l: &Layout) {
    for i in 0..l.lambda {
        c.push(Gate::new(GateKind::H, &[l.witness(i)]).when(l.chal(i), true));
    }
}

fn honest_swap(c: &mut Circuit, l: &Layout) {
    controlled_rotation(c, l);
    for i in 0..l.lambda {
        c.push(Gate::new(GateKind::Swap, &[l.witness(i), l.ans(i)]));
    }
}

/// Two-qubit environment state `√(1−3q/4)|00⟩ + √(q/4)(|01⟩+|10⟩+|11⟩)`.
pub fn depolarizing_environment(q: f64) -> [C64; 4] {
    let a = C64::new((1.0 - 0.75 * q).sqrt(), 0.0);
    let b = C64::new((q / 4.0).sqrt(), 0.0);
    [a, b, b, b]
}

/// Builds the machine for `kind` with a challenge of `chal_width` bits.
pub fn build(kind: &ProverKind, lambda: usize, chal_width: usize) -> Result<QuantumMachineSpec> {
    let l = Layout::new(lambda, chal_width);
    let mut private = vec![RegSpec::new("witness", lambda)];
    let mut init = Circuit::new();
    let mut round = Circuit::new();
    match kind {
        ProverKind::Honest => honest_swap(&mut round, &l),
        ProverKind::HonestCopy => {
            controlled_rotation(&mut round, &l);
            for i in 0..lambda {
                round.push(Gate::new(GateKind::Cnot, &[l.witness(i), l.ans(i)]));
            }
            controlled_rotation(&mut round, &l);
        }
        ProverKind::PauliAttack { xset, zset } => {
            if xset.len() != lambda || zset.len() != lambda {
                return Err(Error::Config("attack masks must have width λ".into()));
            }
            for i in xset.ones_positions() {
                round.push(Gate::new(GateKind::X, &[l.witness(i)]).when(l.chal(i), true));
            }
            for i in zset.ones_positions() {
                round.push(Gate::new(GateKind::Z, &[l.witness(i)]).when(l.chal(i), false));
            }
            honest_swap(&mut round, &l);
        }
        ProverKind::Depolarizing { q } => {
            if !(0.0..=1.0).contains(q) {
                return Err(Error::Config(format!("depolarizing q={q} outside [0,1]")));
            }
            private.push(RegSpec::new("env", 2 * lambda));
            let prep = Arc::new(state_preparation(&depolarizing_environment(*q)));
            for i in 0..lambda {
                init.push(Gate::new(GateKind::Dense(prep.clone()), &[l.aux(2 * i), l.aux(2 * i + 1)]));
                round.push(Gate::new(GateKind::Z, &[l.witness(i)]).when(l.aux(2 * i + 1), true));
                round.push(Gate::new(GateKind::X, &[l.witness(i)]).when(l.aux(2 * i), true));
            }
            honest_swap(&mut round, &l);
        }
        ProverKind::PhaseDeviation { phi } => {
            for i in 0..lambda {
                round.push(Gate::new(GateKind::Rz(*phi), &[l.witness(i)]).when(l.chal(i), true));
            }
            honest_swap(&mut round, &l);
        }
        ProverKind::FixedAnswer { beta } => {
            if beta.len() != lambda {
                return Err(Error::Config("fixed answer must have width λ".into()));
            }
            for i in beta.ones_positions() {
                round.push(Gate::new(GateKind::X, &[l.ans(i)]));
            }
        }
        ProverKind::RandomAnswer => {
            private.push(RegSpec::new("coins", lambda));
            for i in 0..lambda {
                init.push(Gate::new(GateKind::H, &[l.aux(i)]));
                round.push(Gate::new(GateKind::Cnot, &[l.aux(i), l.ans(i)]));
            }
        }
    }
    let spec = QuantumMachineSpec {
        name: kind.label(),
        network: l.network(),
        private,
        init,
        rounds: vec![round],
    };
    spec.validate()?;
    Ok(spec)
}

/// Prover answering round `k` of an `n`-round sequential protocol from
/// witness copy `k` (`fresh = true`) or from a single reused witness.
pub fn sequential(kind: &ProverKind, lambda: usize, chal_width: usize, n: usize, fresh: bool) -> Result<QuantumMachineSpec> {
    let single = build(kind, lambda, chal_width)?;
    if !fresh || !kind.uses_witness() {
        return Ok(QuantumMachineSpec {
            name: format!("{}x{n}", single.name),
            rounds: vec![single.rounds[0].clone(); n],
            ..single
        });
    }
    if !single.private.iter().all(|r| r.name == "witness") {
        return Err(Error::Config(format!("{} cannot be replicated over fresh witnesses", kind.label())));
    }
    let l = Layout::new(lambda, chal_width);
    let base = l.witness(0);
    let rounds = (0..n)
        .map(|k| {
            let shift = |q: usize| if q >= base { q + k * lambda } else { q };
            Circuit {
                gates: single.rounds[0]
                    .gates
                    .iter()
                    .map(|g| Gate {
                        kind: g.kind.clone(),
                        qubits: g.qubits.iter().map(|&q| shift(q)).collect(),
                        controls: g.controls.iter().map(|&(q, v)| (shift(q), v)).collect(),
                    })
                    .collect(),
            }
        })
        .collect();
    let spec = QuantumMachineSpec {
        name: format!("{}x{n}-fresh", single.name),
        network: single.network,
        private: (0..n).map(|k| RegSpec::new(&format!("witness{k}"), lambda)).collect(),
        init: Circuit::new(),
        rounds,
    };
    spec.validate()?;
    Ok(spec)
}

/// Probability that one depolarized qubit survives unchanged in the measured
/// basis: `1 − q/2`.
pub fn depolarizing_survival(q: f64) -> f64 {
    1.0 - q / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn environment_state_is_normalized() {
        for q in [0.0, 0.1, 0.5, 1.0] {
            let e = depolarizing_environment(q);
            let n: f64 = e.iter().map(|a| a.norm_sqr()).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_kinds_build() {
        let kinds = [
            ProverKind::Honest,
            ProverKind::HonestCopy,
            ProverKind::PauliAttack {
                xset: "10".parse().unwrap(),
                zset: "01".parse().unwrap(),
            },
            ProverKind::Depolarizing { q: 0.3 },
            ProverKind::PhaseDeviation { phi: 0.2 },
            ProverKind::FixedAnswer { beta: "11".parse().unwrap() },
            ProverKind::RandomAnswer,
        ];
        for k in &kinds {
            build(k, 2, 2).unwrap();
            build(k, 2, 1).unwrap();
        }
        assert!(build(&ProverKind::Depolarizing { q: 1.5 }, 2, 2).is_err());
    }

    #[test]
    fn kind_json_round_trip() {
        let k = ProverKind::PauliAttack {
            xset: "10".parse().unwrap(),
            zset: "11".parse().unwrap(),
        };
        let s = serde_json::to_string(&k).unwrap();
        assert_eq!(s, r#"{"kind":"pauli-attack","xset":"10","zset":"11"}"#);
        assert_eq!(serde_json::from_str::<ProverKind>(&s).unwrap(), k);
    }

    #[test]
    fn fresh_sequential_prover_uses_distinct_witnesses() {
        let spec = sequential(&ProverKind::Honest, 2, 2, 3, true).unwrap();
        assert_eq!(spec.private.len(), 3);
        assert_eq!(spec.rounds.len(), 3);
        let reused = sequential(&ProverKind::HonestCopy, 2, 2, 3, false).unwrap();
        assert_eq!(reused.private.len(), 1);
    }
}
