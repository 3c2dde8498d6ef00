//! Dense statevector simulation over named registers.
//!
//! Qubits are ordered register-major: registers occupy contiguous ranges in
//! the order they were created, and inside a register qubit `i` is bit `i` of
//! the register value. Global qubit `q` is bit `q` of the basis index, so the
//! first register sits in the least significant bits.
//!
//! A register can be sealed. Sealed registers reject every public operation;
//! only the holder of the matching [`SealKey`] (a black-box prover) can act on
//! them.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<Complex64>;

/// Tolerance for unitarity and projector checks.
pub const OP_TOL: f64 = 1e-8;
/// Tolerance for state normalization.
pub const NORM_TOL: f64 = 1e-10;
/// Largest statevector we are willing to allocate.
pub const MAX_QUBITS: usize = 24;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

static NEXT_SEAL: AtomicU64 = AtomicU64::new(1);

/// Capability to act on registers sealed with it. Not cloneable.
#[derive(Debug)]
pub struct SealKey {
    token: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Register {
    pub name: String,
    pub start: usize,
    pub width: usize,
    sealed: Option<u64>,
}

impl Register {
    pub fn is_sealed(&self) -> bool {
        self.sealed.is_some()
    }

    pub fn qubits(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Z,
}

/// Tensor product of σ_X or σ_Z on the positions where `mask` is 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PauliMask {
    pub axis: Axis,
    pub mask: BitString,
}

impl PauliMask {
    pub fn x(mask: BitString) -> Self {
        Self { axis: Axis::X, mask }
    }

    pub fn z(mask: BitString) -> Self {
        Self { axis: Axis::Z, mask }
    }
}

/// Single- and two-qubit gate matrices. Two-qubit matrices use the first
/// listed qubit as the low bit.
pub mod gates {
    use super::*;

    fn m(dim: usize, entries: &[C64]) -> CMatrix {
        CMatrix::from_row_slice(dim, dim, entries)
    }

    pub fn identity(dim: usize) -> CMatrix {
        CMatrix::identity(dim, dim)
    }

    pub fn h() -> CMatrix {
        let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        m(2, &[s, s, s, -s])
    }

    pub fn x() -> CMatrix {
        m(2, &[ZERO, ONE, ONE, ZERO])
    }

    pub fn y() -> CMatrix {
        let i = C64::new(0.0, 1.0);
        m(2, &[ZERO, -i, i, ZERO])
    }

    pub fn z() -> CMatrix {
        m(2, &[ONE, ZERO, ZERO, -ONE])
    }

    pub fn rz(phi: f64) -> CMatrix {
        m(
            2,
            &[
                C64::from_polar(1.0, -phi / 2.0),
                ZERO,
                ZERO,
                C64::from_polar(1.0, phi / 2.0),
            ],
        )
    }

    /// Control on the low qubit, target the high qubit.
    pub fn cnot() -> CMatrix {
        let mut u = CMatrix::zeros(4, 4);
        for (r, c) in [(0, 0), (3, 1), (2, 2), (1, 3)] {
            u[(r, c)] = ONE;
        }
        u
    }

    pub fn swap() -> CMatrix {
        let mut u = CMatrix::zeros(4, 4);
        for (r, c) in [(0, 0), (2, 1), (1, 2), (3, 3)] {
            u[(r, c)] = ONE;
        }
        u
    }

    /// Projector onto basis state `k` of a `dim`-dimensional space.
    pub fn basis_projector(dim: usize, k: usize) -> CMatrix {
        let mut p = CMatrix::zeros(dim, dim);
        p[(k, k)] = ONE;
        p
    }

    /// Tensor product with `lo` acting on the low qubits.
    pub fn kron(hi: &CMatrix, lo: &CMatrix) -> CMatrix {
        hi.kronecker(lo)
    }

    /// `⊗_i m_i` where `ms[0]` acts on qubit 0.
    pub fn kron_all(ms: &[CMatrix]) -> CMatrix {
        let mut acc = identity(1);
        for mi in ms {
            acc = mi.kronecker(&acc);
        }
        acc
    }

    /// Pauli string σ_axis(mask) on `mask.len()` qubits.
    pub fn pauli_mask(p: &PauliMask) -> CMatrix {
        let factors: Vec<CMatrix> = (0..p.mask.len())
            .map(|i| match (p.mask.get(i), p.axis) {
                (false, _) => identity(2),
                (true, Axis::X) => x(),
                (true, Axis::Z) => z(),
            })
            .collect();
        kron_all(&factors)
    }

    /// H on the positions where `mask` is 1.
    pub fn hadamard_mask(mask: &BitString) -> CMatrix {
        let factors: Vec<CMatrix> = (0..mask.len())
            .map(|i| if mask.get(i) { h() } else { identity(2) })
            .collect();
        kron_all(&factors)
    }
}

/// Largest entry of `U†U − I`.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    let g = u.adjoint() * u;
    max_abs_diff(&g, &CMatrix::identity(g.nrows(), g.ncols()))
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// A dense matrix bound to an ordered list of registers. The matrix index
/// concatenates the registers with the first one in the low bits.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    pub matrix: CMatrix,
    pub targets: Vec<String>,
}

impl DenseOperator {
    /// Checked unitary.
    pub fn unitary(matrix: CMatrix, targets: &[&str]) -> Result<Self> {
        check_square_pow2(&matrix)?;
        let defect = unitarity_defect(&matrix);
        if defect > OP_TOL {
            return Err(Error::NotUnitary(defect));
        }
        Ok(Self::unchecked(matrix, targets))
    }

    /// Checked orthogonal projector.
    pub fn projector(matrix: CMatrix, targets: &[&str]) -> Result<Self> {
        check_square_pow2(&matrix)?;
        let sq = &matrix * &matrix;
        let herm = max_abs_diff(&matrix, &matrix.adjoint());
        let idem = max_abs_diff(&sq, &matrix);
        if herm > OP_TOL || idem > OP_TOL {
            return Err(Error::Dimension(format!(
                "not a projector (hermiticity {herm:.2e}, idempotence {idem:.2e})"
            )));
        }
        Ok(Self::unchecked(matrix, targets))
    }

    fn unchecked(matrix: CMatrix, targets: &[&str]) -> Self {
        Self {
            matrix,
            targets: targets.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

fn check_square_pow2(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() || !m.nrows().is_power_of_two() {
        return Err(Error::Dimension(format!(
            "expected a square 2^k matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// POVM on a register of fixed width; elements are stored with their square
/// roots for the `E^{1/2}` post-measurement update.
#[derive(Clone, Debug)]
pub struct Povm {
    elements: Vec<CMatrix>,
    roots: Vec<CMatrix>,
}

impl Povm {
    pub fn new(elements: Vec<CMatrix>) -> Result<Self> {
        let first = elements
            .first()
            .ok_or_else(|| Error::InvalidPovm("no elements".into()))?;
        check_square_pow2(first)?;
        let dim = first.nrows();
        let mut sum = CMatrix::zeros(dim, dim);
        let mut roots = Vec::with_capacity(elements.len());
        for (k, e) in elements.iter().enumerate() {
            if e.shape() != (dim, dim) {
                return Err(Error::InvalidPovm(format!("element {k} has wrong shape")));
            }
            if max_abs_diff(e, &e.adjoint()) > OP_TOL {
                return Err(Error::InvalidPovm(format!("element {k} is not Hermitian")));
            }
            let eig = SymmetricEigen::new(e.clone());
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            if min < -OP_TOL {
                return Err(Error::InvalidPovm(format!(
                    "element {k} has negative eigenvalue {min:.3e}"
                )));
            }
            let sqrt_vals = eig.eigenvalues.map(|l| C64::new(l.max(0.0).sqrt(), 0.0));
            let root = &eig.eigenvectors
                * CMatrix::from_diagonal(&sqrt_vals)
                * eig.eigenvectors.adjoint();
            roots.push(root);
            sum += e;
        }
        let defect = max_abs_diff(&sum, &CMatrix::identity(dim, dim));
        if defect > OP_TOL {
            return Err(Error::InvalidPovm(format!(
                "elements sum to I only within {defect:.3e}"
            )));
        }
        Ok(Self { elements, roots })
    }

    /// Projective measurement in the computational basis of `width` qubits.
    pub fn computational(width: usize) -> Self {
        let dim = 1 << width;
        let elements: Vec<CMatrix> = (0..dim).map(|k| gates::basis_projector(dim, k)).collect();
        Self {
            roots: elements.clone(),
            elements,
        }
    }

    /// Rank-one projective POVM from the columns of a unitary.
    pub fn from_basis(u: &CMatrix) -> Result<Self> {
        let defect = unitarity_defect(u);
        if defect > OP_TOL {
            return Err(Error::NotUnitary(defect));
        }
        let elements: Vec<CMatrix> = (0..u.ncols())
            .map(|k| {
                let col = u.column(k);
                col * col.adjoint()
            })
            .collect();
        Ok(Self {
            roots: elements.clone(),
            elements,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.elements[0].nrows()
    }

    pub fn element(&self, k: usize) -> &CMatrix {
        &self.elements[k]
    }
}

/// One outcome of an exact measurement enumeration.
#[derive(Clone, Debug)]
pub struct Branch<T> {
    pub outcome: T,
    pub probability: f64,
    pub state: StateVector,
}

#[derive(Clone, Debug)]
pub struct StateVector {
    amps: Vec<C64>,
    regs: Vec<Register>,
}

impl Default for StateVector {
    fn default() -> Self {
        Self::new()
    }
}

impl StateVector {
    /// The zero-qubit state.
    pub fn new() -> Self {
        Self {
            amps: vec![ONE],
            regs: Vec::new(),
        }
    }

    /// All-zero state over the given registers.
    pub fn zero(layout: &[(&str, usize)]) -> Result<Self> {
        let mut s = Self::new();
        for &(name, width) in layout {
            s.add_register(name, width)?;
        }
        Ok(s)
    }

    /// Computational basis state; `values[k]` labels register `k`.
    pub fn basis(layout: &[(&str, usize)], values: &[BitString]) -> Result<Self> {
        if layout.len() != values.len() {
            return Err(Error::Dimension("one value per register expected".into()));
        }
        let mut s = Self::zero(layout)?;
        let mut idx = 0usize;
        for (reg, v) in s.regs.iter().zip(values) {
            if v.len() != reg.width {
                return Err(Error::Dimension(format!(
                    "value {v} does not fit register {} of width {}",
                    reg.name, reg.width
                )));
            }
            idx |= (v.value() as usize) << reg.start;
        }
        s.amps[0] = ZERO;
        s.amps[idx] = ONE;
        Ok(s)
    }

    /// State with explicit amplitudes; the norm must be 1 within tolerance.
    pub fn from_amplitudes(layout: &[(&str, usize)], amps: Vec<C64>) -> Result<Self> {
        let mut s = Self::zero(layout)?;
        if amps.len() != s.amps.len() {
            return Err(Error::Dimension(format!(
                "expected {} amplitudes, got {}",
                s.amps.len(),
                amps.len()
            )));
        }
        s.amps = amps;
        let norm = s.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Dimension(format!("amplitudes have norm {norm}")));
        }
        Ok(s)
    }

    /// `k` EPR pairs; qubit `i` of register `a` is paired with qubit `i` of `b`.
    pub fn epr_pairs(k: usize, a: &str, b: &str) -> Result<Self> {
        let mut s = Self::zero(&[(a, k), (b, k)])?;
        let amp = C64::new((0.5f64).powf(k as f64 / 2.0), 0.0);
        s.amps[0] = ZERO;
        for x in 0..(1usize << k) {
            s.amps[x | (x << k)] = amp;
        }
        Ok(s)
    }

    pub fn num_qubits(&self) -> usize {
        self.regs.iter().map(|r| r.width).sum()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn registers(&self) -> &[Register] {
        &self.regs
    }

    pub fn has_register(&self, name: &str) -> bool {
        self.regs.iter().any(|r| r.name == name)
    }

    pub fn register(&self, name: &str) -> Result<&Register> {
        self.regs
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::UnknownRegister(name.to_string()))
    }

    pub fn width(&self, name: &str) -> Result<usize> {
        Ok(self.register(name)?.width)
    }

    /// Appends a register in |0…0⟩ above all existing qubits.
    pub fn add_register(&mut self, name: &str, width: usize) -> Result<()> {
        let mut local = vec![ZERO; 1 << width];
        local[0] = ONE;
        self.add_register_with_state(name, width, &local)
    }

    /// Appends a register prepared in the given local state.
    pub fn add_register_with_state(&mut self, name: &str, width: usize, local: &[C64]) -> Result<()> {
        if self.has_register(name) {
            return Err(Error::DuplicateRegister(name.to_string()));
        }
        if local.len() != 1 << width {
            return Err(Error::Dimension(format!(
                "register {name} of width {width} needs {} amplitudes",
                1 << width
            )));
        }
        let n = self.num_qubits();
        if n + width > MAX_QUBITS {
            return Err(Error::TooLarge(format!(
                "{} qubits exceeds the {MAX_QUBITS}-qubit cap",
                n + width
            )));
        }
        let mut amps = vec![ZERO; self.amps.len() << width];
        for (hi, &l) in local.iter().enumerate() {
            if l == ZERO {
                continue;
            }
            let base = hi << n;
            for (lo, &a) in self.amps.iter().enumerate() {
                amps[base | lo] = a * l;
            }
        }
        self.amps = amps;
        self.regs.push(Register {
            name: name.to_string(),
            start: n,
            width,
            sealed: None,
        });
        Ok(())
    }

    /// Tensor product with `other` placed above this state.
    pub fn tensor(&self, other: &StateVector) -> Result<StateVector> {
        let n = self.num_qubits();
        if n + other.num_qubits() > MAX_QUBITS {
            return Err(Error::TooLarge("tensor product too large".into()));
        }
        for r in &other.regs {
            if self.has_register(&r.name) {
                return Err(Error::DuplicateRegister(r.name.clone()));
            }
        }
        let mut amps = vec![ZERO; self.amps.len() * other.amps.len()];
        for (hi, &b) in other.amps.iter().enumerate() {
            if b == ZERO {
                continue;
            }
            for (lo, &a) in self.amps.iter().enumerate() {
                amps[(hi << n) | lo] = a * b;
            }
        }
        let mut regs = self.regs.clone();
        regs.extend(other.regs.iter().map(|r| Register {
            start: r.start + n,
            ..r.clone()
        }));
        Ok(StateVector { amps, regs })
    }

    /// Seals registers so that only the returned key can address them.
    pub fn seal(&mut self, names: &[&str]) -> Result<SealKey> {
        let token = NEXT_SEAL.fetch_add(1, Ordering::Relaxed);
        for name in names {
            let reg = self
                .regs
                .iter_mut()
                .find(|r| r.name == *name)
                .ok_or_else(|| Error::UnknownRegister(name.to_string()))?;
            if reg.sealed.is_some() {
                return Err(Error::Sealed(name.to_string()));
            }
            reg.sealed = Some(token);
        }
        Ok(SealKey { token })
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// ⟨self|other⟩ for states with identical layouts.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        self.check_same_layout(other)?;
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    fn check_same_layout(&self, other: &StateVector) -> Result<()> {
        let same = self.regs.len() == other.regs.len()
            && self
                .regs
                .iter()
                .zip(&other.regs)
                .all(|(a, b)| a.name == b.name && a.width == b.width);
        if same {
            Ok(())
        } else {
            Err(Error::Dimension("states have different layouts".into()))
        }
    }

    /// JSON array of `[re, im]` pairs in basis-index order.
    pub fn amplitudes_json(&self) -> String {
        let pairs: Vec<[f64; 2]> = self.amps.iter().map(|a| [a.re, a.im]).collect();
        serde_json::to_string(&pairs).expect("amplitudes serialize")
    }

    // ---- register resolution -------------------------------------------------

    fn resolve_reg(&self, name: &str, key: Option<&SealKey>) -> Result<&Register> {
        let reg = self.register(name)?;
        match (reg.sealed, key) {
            (None, _) => Ok(reg),
            (Some(t), Some(k)) if k.token == t => Ok(reg),
            _ => Err(Error::Sealed(name.to_string())),
        }
    }

    /// Global qubit indices of the concatenated registers.
    fn resolve(&self, names: &[&str], key: Option<&SealKey>) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (k, name) in names.iter().enumerate() {
            if names[..k].contains(name) {
                return Err(Error::Dimension(format!("register {name} listed twice")));
            }
            out.extend(self.resolve_reg(name, key)?.qubits());
        }
        Ok(out)
    }

    pub(crate) fn qubits_with_key(&self, names: &[&str], key: &SealKey) -> Result<Vec<usize>> {
        self.resolve(names, Some(key))
    }

    /// Global qubit indices of public registers.
    pub fn qubits(&self, names: &[&str]) -> Result<Vec<usize>> {
        self.resolve(names, None)
    }

    // ---- gate application ----------------------------------------------------

    /// Applies a checked unitary to the operator's target registers.
    pub fn apply_gate(&mut self, op: &DenseOperator) -> Result<()> {
        let names: Vec<&str> = op.targets.iter().map(String::as_str).collect();
        let qubits = self.resolve(&names, None)?;
        if op.dim() != 1 << qubits.len() {
            return Err(Error::Dimension(format!(
                "operator of dimension {} on {} qubits",
                op.dim(),
                qubits.len()
            )));
        }
        let defect = unitarity_defect(&op.matrix);
        if defect > OP_TOL {
            return Err(Error::NotUnitary(defect));
        }
        self.apply_raw(&qubits, &op.matrix, &[]);
        Ok(())
    }

    /// Applies a unitary to selected positions of one register.
    pub fn apply_on(&mut self, reg: &str, positions: &[usize], u: &CMatrix) -> Result<()> {
        let r = self.resolve_reg(reg, None)?;
        let mut qubits = Vec::with_capacity(positions.len());
        for &p in positions {
            if p >= r.width {
                return Err(Error::Dimension(format!(
                    "position {p} outside register {reg} of width {}",
                    r.width
                )));
            }
            qubits.push(r.start + p);
        }
        if u.nrows() != 1 << qubits.len() || u.ncols() != u.nrows() {
            return Err(Error::Dimension("matrix does not match qubit count".into()));
        }
        let defect = unitarity_defect(u);
        if defect > OP_TOL {
            return Err(Error::NotUnitary(defect));
        }
        self.apply_raw(&qubits, u, &[]);
        Ok(())
    }

    pub fn apply_pauli_mask(&mut self, p: &PauliMask, reg: &str) -> Result<()> {
        let r = self.resolve_reg(reg, None)?;
        if p.mask.len() != r.width {
            return Err(Error::Dimension(format!(
                "mask width {} on register {reg} of width {}",
                p.mask.len(),
                r.width
            )));
        }
        let start = r.start;
        let single = match p.axis {
            Axis::X => gates::x(),
            Axis::Z => gates::z(),
        };
        for i in p.mask.ones_positions() {
            self.apply_raw(&[start + i], &single, &[]);
        }
        Ok(())
    }

    pub fn hadamard_layer(&mut self, mask: &BitString, reg: &str) -> Result<()> {
        let r = self.resolve_reg(reg, None)?;
        if mask.len() != r.width {
            return Err(Error::Dimension(format!(
                "mask width {} on register {reg} of width {}",
                mask.len(),
                r.width
            )));
        }
        let start = r.start;
        let h = gates::h();
        for i in mask.ones_positions() {
            self.apply_raw(&[start + i], &h, &[]);
        }
        Ok(())
    }

    /// XORs a classical value into a register.
    pub fn xor_value(&mut self, reg: &str, value: &BitString) -> Result<()> {
        self.apply_pauli_mask(&PauliMask::x(*value), reg)
    }

    /// Applies `m` to `targets` on the branch where every control qubit has
    /// the required value. No unitarity check.
    pub(crate) fn apply_raw(&mut self, targets: &[usize], m: &CMatrix, controls: &[(usize, bool)]) {
        apply_kernel(&mut self.amps, targets, m, controls);
    }

    // ---- measurement ---------------------------------------------------------

    /// Probability of each value of a register.
    pub fn probabilities(&self, reg: &str) -> Result<Vec<f64>> {
        let r = self.resolve_reg(reg, None)?;
        Ok(self.probabilities_raw(r.start, r.width))
    }

    fn probabilities_raw(&self, start: usize, width: usize) -> Vec<f64> {
        let mask = (1usize << width) - 1;
        let mut probs = vec![0.0; 1 << width];
        for (i, a) in self.amps.iter().enumerate() {
            probs[(i >> start) & mask] += a.norm_sqr();
        }
        probs
    }

    fn project_raw(&mut self, start: usize, width: usize, value: usize, prob: f64) {
        let mask = (1usize << width) - 1;
        let scale = 1.0 / prob.sqrt();
        for (i, a) in self.amps.iter_mut().enumerate() {
            if (i >> start) & mask == value {
                *a *= scale;
            } else {
                *a = ZERO;
            }
        }
    }

    /// Computational-basis measurement of a register.
    pub fn measure<R: Rng + ?Sized>(&mut self, reg: &str, rng: &mut R) -> Result<BitString> {
        let r = self.resolve_reg(reg, None)?;
        let (start, width) = (r.start, r.width);
        Ok(self.measure_raw(start, width, rng))
    }

    pub(crate) fn measure_raw<R: Rng + ?Sized>(&mut self, start: usize, width: usize, rng: &mut R) -> BitString {
        let probs = self.probabilities_raw(start, width);
        let k = sample_index(&probs, rng);
        self.project_raw(start, width, k, probs[k]);
        BitString::new(k as u64, width)
    }

    /// Every outcome with nonzero probability and its post-measurement state.
    pub fn measure_branches(&self, reg: &str) -> Result<Vec<Branch<BitString>>> {
        let r = self.resolve_reg(reg, None)?;
        Ok(self.branches_raw(r.start, r.width))
    }

    pub(crate) fn branches_raw(&self, start: usize, width: usize) -> Vec<Branch<BitString>> {
        let probs = self.probabilities_raw(start, width);
        probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 1e-14)
            .map(|(k, &p)| {
                let mut state = self.clone();
                state.project_raw(start, width, k, p);
                Branch {
                    outcome: BitString::new(k as u64, width),
                    probability: p,
                    state,
                }
            })
            .collect()
    }

    /// Measures qubit `i` in the Hadamard basis where `theta_i = 1` and in the
    /// computational basis elsewhere; the post-state is left in that basis.
    pub fn measure_in_basis<R: Rng + ?Sized>(
        &mut self,
        reg: &str,
        theta: &BitString,
        rng: &mut R,
    ) -> Result<BitString> {
        self.hadamard_layer(theta, reg)?;
        let out = self.measure(reg, rng)?;
        self.hadamard_layer(theta, reg)?;
        Ok(out)
    }

    pub fn measure_in_basis_branches(&self, reg: &str, theta: &BitString) -> Result<Vec<Branch<BitString>>> {
        let mut rotated = self.clone();
        rotated.hadamard_layer(theta, reg)?;
        let mut branches = rotated.measure_branches(reg)?;
        for b in &mut branches {
            b.state.hadamard_layer(theta, reg)?;
        }
        Ok(branches)
    }

    fn povm_vectors(&self, povm: &Povm, qubits: &[usize]) -> Result<Vec<(f64, Vec<C64>)>> {
        if povm.dim() != 1 << qubits.len() {
            return Err(Error::InvalidPovm(format!(
                "POVM of dimension {} on {} qubits",
                povm.dim(),
                qubits.len()
            )));
        }
        Ok(povm
            .roots
            .iter()
            .map(|root| {
                let mut amps = self.amps.clone();
                apply_kernel(&mut amps, qubits, root, &[]);
                let p = amps.iter().map(|a| a.norm_sqr()).sum::<f64>();
                (p, amps)
            })
            .collect())
    }

    pub fn povm_measure<R: Rng + ?Sized>(&mut self, povm: &Povm, reg: &str, rng: &mut R) -> Result<usize> {
        let qubits = self.resolve(&[reg], None)?;
        let outcomes = self.povm_vectors(povm, &qubits)?;
        let probs: Vec<f64> = outcomes.iter().map(|(p, _)| *p).collect();
        let k = sample_index(&probs, rng);
        let scale = 1.0 / probs[k].sqrt();
        self.amps = outcomes[k].1.iter().map(|a| a * scale).collect();
        Ok(k)
    }

    pub fn povm_branches(&self, povm: &Povm, reg: &str) -> Result<Vec<Branch<usize>>> {
        let qubits = self.resolve(&[reg], None)?;
        let outcomes = self.povm_vectors(povm, &qubits)?;
        Ok(outcomes
            .into_iter()
            .enumerate()
            .filter(|(_, (p, _))| *p > 1e-14)
            .map(|(k, (p, amps))| {
                let scale = 1.0 / p.sqrt();
                Branch {
                    outcome: k,
                    probability: p,
                    state: StateVector {
                        amps: amps.into_iter().map(|a| a * scale).collect(),
                        regs: self.regs.clone(),
                    },
                }
            })
            .collect())
    }

    // ---- reduced states ------------------------------------------------------

    /// Columns of this matrix are the (unnormalized) kept-register vectors for
    /// each configuration of the traced-out qubits.
    fn split_matrix(&self, keep: &[usize]) -> CMatrix {
        let n = self.num_qubits();
        let env: Vec<usize> = (0..n).filter(|q| !keep.contains(q)).collect();
        let mut psi = CMatrix::zeros(1 << keep.len(), 1 << env.len());
        for (i, &a) in self.amps.iter().enumerate() {
            if a == ZERO {
                continue;
            }
            psi[(gather_bits(i, keep), gather_bits(i, &env))] = a;
        }
        psi
    }

    /// Partial trace onto the listed registers (first register in the low bits).
    pub fn reduced_density(&self, keep: &[&str]) -> Result<CMatrix> {
        let qubits = self.resolve(keep, None)?;
        if qubits.len() > 12 {
            return Err(Error::TooLarge("reduced density above 12 qubits".into()));
        }
        let psi = self.split_matrix(&qubits);
        Ok(&psi * psi.adjoint())
    }

    /// ⟨t|ρ_on|t⟩ where `target` is a pure state whose layout has the same
    /// widths as the registers `on`.
    pub fn fidelity(&self, target: &StateVector, on: &[&str]) -> Result<f64> {
        let qubits = self.resolve(on, None)?;
        self.fidelity_raw(target, &qubits)
    }

    pub(crate) fn fidelity_raw(&self, target: &StateVector, qubits: &[usize]) -> Result<f64> {
        if target.num_qubits() != qubits.len() {
            return Err(Error::Dimension(format!(
                "target has {} qubits, registers have {}",
                target.num_qubits(),
                qubits.len()
            )));
        }
        let psi = self.split_matrix(qubits);
        let t = nalgebra::DVector::from_iterator(target.amps.len(), target.amps.iter().map(|a| a.conj()));
        let proj = t.transpose() * psi;
        Ok(proj.iter().map(|a| a.norm_sqr()).sum())
    }

    /// ⟨ψ|M|ψ⟩ for `m` acting on the listed registers.
    pub fn expectation(&self, m: &CMatrix, on: &[&str]) -> Result<C64> {
        let qubits = self.resolve(on, None)?;
        if m.nrows() != 1 << qubits.len() {
            return Err(Error::Dimension("operator does not match registers".into()));
        }
        let mut phi = self.amps.clone();
        apply_kernel(&mut phi, &qubits, m, &[]);
        Ok(self.amps.iter().zip(&phi).map(|(a, b)| a.conj() * b).sum())
    }

    /// Applies an isometry `m` with `2^{k+extra}` rows and `2^k` columns to the
    /// input registers. Output index bits below `k` land on the input qubits;
    /// the remaining bits fill new registers appended on top.
    pub fn apply_isometry(&mut self, inputs: &[&str], m: &CMatrix, new_regs: &[(&str, usize)]) -> Result<()> {
        let qubits = self.resolve(inputs, None)?;
        self.apply_isometry_raw(&qubits, m, new_regs)
    }

    pub(crate) fn apply_isometry_raw(&mut self, inputs: &[usize], m: &CMatrix, new_regs: &[(&str, usize)]) -> Result<()> {
        let k = inputs.len();
        let extra: usize = new_regs.iter().map(|r| r.1).sum();
        if m.ncols() != 1 << k || m.nrows() != 1 << (k + extra) {
            return Err(Error::Dimension(format!(
                "isometry is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                1usize << (k + extra),
                1usize << k
            )));
        }
        self.apply_isometry_map_raw(inputs, new_regs, |psi| Ok(m * psi))
    }

    /// Like [`StateVector::apply_isometry`], with the isometry given as a map
    /// on the `2^k × 2^{n-k}` matrix of amplitudes (input index by rest).
    pub(crate) fn apply_isometry_map_raw(
        &mut self,
        inputs: &[usize],
        new_regs: &[(&str, usize)],
        f: impl FnOnce(&CMatrix) -> Result<CMatrix>,
    ) -> Result<()> {
        let k = inputs.len();
        let extra: usize = new_regs.iter().map(|r| r.1).sum();
        let n = self.num_qubits();
        if n + extra > MAX_QUBITS {
            return Err(Error::TooLarge(format!("{} qubits", n + extra)));
        }
        for (name, _) in new_regs {
            if self.has_register(name) {
                return Err(Error::DuplicateRegister(name.to_string()));
            }
        }
        let offsets = offsets(inputs);
        let in_mask = offsets[offsets.len() - 1];
        let bases: Vec<usize> = (0..self.amps.len()).filter(|b| b & in_mask == 0).collect();
        let psi = CMatrix::from_fn(1 << k, bases.len(), |j, c| self.amps[bases[c] | offsets[j]]);
        let phi = f(&psi)?;
        if phi.nrows() != 1 << (k + extra) || phi.ncols() != bases.len() {
            return Err(Error::Dimension(format!(
                "isometry map returned {}x{}, expected {}x{}",
                phi.nrows(),
                phi.ncols(),
                1usize << (k + extra),
                bases.len()
            )));
        }
        let low = (1usize << k) - 1;
        let mut out = vec![ZERO; self.amps.len() << extra];
        for (c, base) in bases.iter().enumerate() {
            for r in 0..phi.nrows() {
                out[base | offsets[r & low] | ((r >> k) << n)] = phi[(r, c)];
            }
        }
        self.amps = out;
        let mut start = n;
        for &(name, width) in new_regs {
            self.regs.push(Register {
                name: name.to_string(),
                start,
                width,
                sealed: None,
            });
            start += width;
        }
        Ok(())
    }
}

/// Basis-index offsets for every local index over `targets`; the last entry
/// is the OR of all target bits.
fn offsets(targets: &[usize]) -> Vec<usize> {
    (0..1usize << targets.len())
        .map(|j| {
            targets
                .iter()
                .enumerate()
                .filter(|(t, _)| (j >> t) & 1 == 1)
                .map(|(_, &q)| 1usize << q)
                .sum()
        })
        .collect()
}

fn gather_bits(i: usize, qubits: &[usize]) -> usize {
    qubits
        .iter()
        .enumerate()
        .map(|(t, &q)| ((i >> q) & 1) << t)
        .sum()
}

fn apply_kernel(amps: &mut [C64], targets: &[usize], m: &CMatrix, controls: &[(usize, bool)]) {
    let dim = 1usize << targets.len();
    debug_assert_eq!(m.nrows(), dim);
    let offs = offsets(targets);
    let tmask = offs[dim - 1];
    let (mut cmask, mut cval) = (0usize, 0usize);
    for &(q, v) in controls {
        cmask |= 1 << q;
        if v {
            cval |= 1 << q;
        }
    }
    let mut buf = vec![ZERO; dim];
    for base in 0..amps.len() {
        if base & tmask != 0 || base & cmask != cval {
            continue;
        }
        for (j, off) in offs.iter().enumerate() {
            buf[j] = amps[base | off];
        }
        for (r, off) in offs.iter().enumerate() {
            let mut acc = ZERO;
            for (c, b) in buf.iter().enumerate() {
                acc += m[(r, c)] * b;
            }
            amps[base | off] = acc;
        }
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = k;
        if x < p {
            return k;
        }
        x -= p;
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    fn close(a: C64, b: C64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn identity_gate_leaves_state() {
        let mut s = StateVector::basis(&[("r", 2)], &[bs("10")]).unwrap();
        let before = s.clone();
        s.apply_gate(&DenseOperator::unitary(gates::identity(4), &["r"]).unwrap())
            .unwrap();
        assert!(close(s.inner(&before).unwrap(), ONE));
    }

    #[test]
    fn hadamard_is_involution() {
        let mut s = StateVector::zero(&[("q", 1)]).unwrap();
        s.hadamard_layer(&bs("1"), "q").unwrap();
        s.hadamard_layer(&bs("1"), "q").unwrap();
        assert!(close(s.amplitudes()[0], ONE));
    }

    #[test]
    fn bit_flip_on_qubit_zero() {
        let mut s = StateVector::zero(&[("r", 2)]).unwrap();
        s.apply_on("r", &[0], &gates::x()).unwrap();
        assert_eq!(s.measure_branches("r").unwrap()[0].outcome, bs("10"));
    }

    #[test]
    fn pauli_mask_examples() {
        let mut s = StateVector::zero(&[("r", 2)]).unwrap();
        s.apply_pauli_mask(&PauliMask::x(bs("11")), "r").unwrap();
        assert!(close(s.amplitudes()[3], ONE));

        let mut plus = StateVector::zero(&[("r", 2)]).unwrap();
        plus.hadamard_layer(&bs("11"), "r").unwrap();
        plus.apply_pauli_mask(&PauliMask::z(bs("10")), "r").unwrap();
        // |−⟩ on qubit 0, |+⟩ on qubit 1
        let h = 0.5;
        let expect = [h, -h, h, -h];
        for (a, e) in plus.amplitudes().iter().zip(expect) {
            assert!(close(*a, C64::new(e, 0.0)));
        }
    }

    #[test]
    fn hadamard_mask_on_first_qubit() {
        let mut s = StateVector::zero(&[("r", 2)]).unwrap();
        s.hadamard_layer(&bs("10"), "r").unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(s.amplitudes()[0], C64::new(r, 0.0)));
        assert!(close(s.amplitudes()[1], C64::new(r, 0.0)));
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut s = StateVector::zero(&[("r", 2)]).unwrap();
        assert!(matches!(
            s.hadamard_layer(&bs("1"), "r"),
            Err(Error::Dimension(_))
        ));
        assert!(s.apply_pauli_mask(&PauliMask::x(bs("111")), "r").is_err());
        let not_unitary = CMatrix::from_element(2, 2, ONE);
        assert!(matches!(
            s.apply_on("r", &[0], &not_unitary),
            Err(Error::NotUnitary(_))
        ));
    }

    #[test]
    fn epr_layout_and_correlations() {
        let s = StateVector::epr_pairs(1, "a", "b").unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let expect = [r, 0.0, 0.0, r];
        for (a, e) in s.amplitudes().iter().zip(expect) {
            assert!(close(*a, C64::new(e, 0.0)));
        }
        let xx = gates::kron(&gates::x(), &gates::x());
        assert!(close(s.expectation(&xx, &["a", "b"]).unwrap(), ONE));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mut t = StateVector::epr_pairs(3, "a", "b").unwrap();
            let a = t.measure("a", &mut rng).unwrap();
            let b = t.measure("b", &mut rng).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn epr_half_purity() {
        let s = StateVector::epr_pairs(2, "a", "b").unwrap();
        let rho = s.reduced_density(&["a"]).unwrap();
        let purity = (&rho * &rho).trace().re;
        assert!((purity - 0.25).abs() < 1e-12);
        let one = StateVector::epr_pairs(1, "a", "b").unwrap();
        let half = one.reduced_density(&["b"]).unwrap();
        assert!(max_abs_diff(&half, &(gates::identity(2) * C64::new(0.5, 0.0))) < 1e-12);
    }

    #[test]
    fn born_rule_frequency_on_plus() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut plus = StateVector::zero(&[("q", 1)]).unwrap();
        plus.hadamard_layer(&bs("1"), "q").unwrap();
        let trials = 100_000;
        let ones = (0..trials)
            .filter(|_| plus.clone().measure("q", &mut rng).unwrap().get(0))
            .count();
        let f = ones as f64 / trials as f64;
        assert!((f - 0.5).abs() < 0.01, "frequency {f}");
    }

    #[test]
    fn measuring_one_is_certain() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = StateVector::basis(&[("q", 1)], &[bs("1")]).unwrap();
        assert_eq!(s.measure("q", &mut rng).unwrap(), bs("1"));
        let branches = s.measure_branches("q").unwrap();
        assert_eq!(branches.len(), 1);
        assert!((branches[0].probability - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_examples() {
        let zero = StateVector::zero(&[("q", 1)]).unwrap();
        let one = StateVector::basis(&[("q", 1)], &[bs("1")]).unwrap();
        let mut plus = zero.clone();
        plus.hadamard_layer(&bs("1"), "q").unwrap();
        assert!((zero.fidelity(&zero, &["q"]).unwrap() - 1.0).abs() < 1e-12);
        assert!(zero.fidelity(&one, &["q"]).unwrap().abs() < 1e-12);
        assert!((zero.fidelity(&plus, &["q"]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn product_state_reduces_to_pure() {
        let mut s = StateVector::zero(&[("a", 1), ("b", 2)]).unwrap();
        s.hadamard_layer(&bs("1"), "a").unwrap();
        s.hadamard_layer(&bs("01"), "b").unwrap();
        let rho = s.reduced_density(&["b"]).unwrap();
        assert!(((&rho * &rho).trace().re - 1.0).abs() < 1e-12);
        assert!((rho.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projective_povm_on_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = StateVector::zero(&[("q", 1)]).unwrap();
        let k = s.povm_measure(&Povm::computational(1), "q", &mut rng).unwrap();
        assert_eq!(k, 0);
    }

    #[test]
    fn povm_rejects_incomplete_sets() {
        let only_zero = vec![gates::basis_projector(2, 0)];
        assert!(matches!(Povm::new(only_zero), Err(Error::InvalidPovm(_))));
    }

    #[test]
    fn unsharp_povm_frequencies_follow_born_rule() {
        // Trine-like two-outcome POVM {E, I−E} with E = 0.3|0⟩⟨0| + 0.6|+⟩⟨+|.
        let mut plus = CMatrix::from_element(2, 2, C64::new(0.5, 0.0));
        plus *= C64::new(0.6, 0.0);
        let e0 = gates::basis_projector(2, 0) * C64::new(0.3, 0.0) + plus;
        let e1 = gates::identity(2) - &e0;
        let povm = Povm::new(vec![e0.clone(), e1]).unwrap();
        let mut s = StateVector::zero(&[("q", 1)]).unwrap();
        s.apply_on("q", &[0], &gates::rz(0.7)).unwrap();
        s.hadamard_layer(&bs("1"), "q").unwrap();
        s.apply_on("q", &[0], &gates::rz(0.4)).unwrap();
        let p0 = s.expectation(&e0, &["q"]).unwrap().re;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| s.clone().povm_measure(&povm, "q", &mut rng).unwrap() == 0)
            .count();
        assert!((hits as f64 / trials as f64 - p0).abs() < 0.01);
        let exact: f64 = s
            .povm_branches(&povm, "q")
            .unwrap()
            .iter()
            .filter(|b| b.outcome == 0)
            .map(|b| b.probability)
            .sum();
        assert!((exact - p0).abs() < 1e-12);
    }

    #[test]
    fn sealed_registers_reject_public_access() {
        let mut s = StateVector::zero(&[("n", 1), ("s", 1)]).unwrap();
        let key = s.seal(&["s"]).unwrap();
        assert!(matches!(s.hadamard_layer(&bs("1"), "s"), Err(Error::Sealed(_))));
        assert!(matches!(s.probabilities("s"), Err(Error::Sealed(_))));
        assert!(matches!(s.reduced_density(&["s"]), Err(Error::Sealed(_))));
        assert!(s.hadamard_layer(&bs("1"), "n").is_ok());
        assert_eq!(s.qubits_with_key(&["s"], &key).unwrap(), vec![1]);
        let other = StateVector::zero(&[("x", 1)]).unwrap().seal(&["x"]).unwrap();
        assert!(s.qubits_with_key(&["s"], &other).is_err());
    }

    #[test]
    fn isometry_appends_registers() {
        // |0⟩ ↦ |0⟩|0⟩, |1⟩ ↦ |1⟩|1⟩ (copy into a new qubit)
        let mut m = CMatrix::zeros(4, 2);
        m[(0, 0)] = ONE;
        m[(3, 1)] = ONE;
        let mut s = StateVector::zero(&[("q", 1), ("other", 1)]).unwrap();
        s.hadamard_layer(&bs("1"), "q").unwrap();
        s.apply_isometry(&["q"], &m, &[("copy", 1)]).unwrap();
        let epr = StateVector::epr_pairs(1, "a", "b").unwrap();
        assert!((s.fidelity(&epr, &["q", "copy"]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_dump_is_pairs() {
        let s = StateVector::zero(&[("q", 1)]).unwrap();
        assert_eq!(s.amplitudes_json(), "[[1.0,0.0],[0.0,0.0]]");
    }

    fn random_state(width: usize, seed: u64) -> StateVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut amps: Vec<C64> = (0..1 << width)
            .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        for a in &mut amps {
            *a /= norm;
        }
        StateVector::from_amplitudes(&[("r", width)], amps).unwrap()
    }

    proptest! {
        #[test]
        fn gate_sequences_preserve_norm(seed in any::<u64>(), ops in proptest::collection::vec((0u8..4, 0u64..8, 0.0f64..6.3), 1..20)) {
            let mut s = random_state(3, seed);
            for (kind, mask, phi) in ops {
                let mask = BitString::new(mask, 3);
                match kind {
                    0 => s.hadamard_layer(&mask, "r").unwrap(),
                    1 => s.apply_pauli_mask(&PauliMask::x(mask), "r").unwrap(),
                    2 => s.apply_pauli_mask(&PauliMask::z(mask), "r").unwrap(),
                    _ => s.apply_on("r", &[(mask.value() % 3) as usize], &gates::rz(phi)).unwrap(),
                }
            }
            prop_assert!((s.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn pauli_group_commutation_phase(seed in any::<u64>(), a in 0u64..8, b in 0u64..8) {
            let (a, b) = (BitString::new(a, 3), BitString::new(b, 3));
            let orig = random_state(3, seed);
            let mut s = orig.clone();
            for _ in 0..2 {
                s.apply_pauli_mask(&PauliMask::x(a), "r").unwrap();
                s.apply_pauli_mask(&PauliMask::z(b), "r").unwrap();
            }
            let sign = if a.dot(&b) { -1.0 } else { 1.0 };
            prop_assert!((orig.inner(&s).unwrap() - C64::new(sign, 0.0)).norm() < 1e-10);
        }

        #[test]
        fn seeded_measurements_repeat(seed in any::<u64>()) {
            let s = random_state(3, seed);
            let run = || {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..5).map(|_| s.clone().measure("r", &mut rng).unwrap()).collect::<Vec<_>>()
            };
            prop_assert_eq!(run(), run());
        }

        #[test]
        fn projective_povm_is_repeatable(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = random_state(2, seed);
            let povm = Povm::from_basis(&gates::hadamard_mask(&BitString::new(seed, 2))).unwrap();
            let first = s.povm_measure(&povm, "r", &mut rng).unwrap();
            let branches = s.povm_branches(&povm, "r").unwrap();
            prop_assert_eq!(branches.len(), 1);
            prop_assert_eq!(branches[0].outcome, first);
        }

        #[test]
        fn reduced_density_has_unit_trace(seed in any::<u64>()) {
            let mut s = random_state(3, seed);
            s.add_register("extra", 1).unwrap();
            let rho = s.reduced_density(&["r"]).unwrap();
            prop_assert!((rho.trace().re - 1.0).abs() < 1e-10);
            prop_assert!(max_abs_diff(&rho, &rho.adjoint()) < 1e-12);
            let eig = SymmetricEigen::new(rho);
            prop_assert!(eig.eigenvalues.iter().all(|&l| l > -1e-10));
        }
    }
}
