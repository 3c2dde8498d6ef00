//! Linear algebra over Z_2^λ.
//!
//! A [`Gf2Basis`] `{z_1..z_λ}` is read as the matrix `M` whose column `i` is
//! `z_i`, so `M x = Σ x_i z_i`. The permutation unitary `W` sends `|x⟩` to
//! `|Mx⟩`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::qsim::{CMatrix, DenseOperator};

/// Row-echelon accumulator that remembers how each row was combined from the
/// inserted vectors.
#[derive(Clone, Debug, Default)]
struct Echelon {
    /// (vector, combination of inserted indices); pivots are distinct high bits.
    rows: Vec<(u64, u64)>,
}

impl Echelon {
    fn reduce(&self, mut v: u64, mut combo: u64) -> (u64, u64) {
        for &(r, c) in &self.rows {
            let pivot = 63 - r.leading_zeros();
            if (v >> pivot) & 1 == 1 {
                v ^= r;
                combo ^= c;
            }
        }
        (v, combo)
    }

    /// Returns false if `v` is already in the span.
    fn insert(&mut self, v: u64, combo: u64) -> bool {
        let (v, combo) = self.reduce(v, combo);
        if v == 0 {
            return false;
        }
        let pivot = 63 - v.leading_zeros();
        // keep every row reduced at the new pivot so `reduce` stays one pass
        for row in &mut self.rows {
            if (row.0 >> pivot) & 1 == 1 {
                row.0 ^= v;
                row.1 ^= combo;
            }
        }
        self.rows.push((v, combo));
        true
    }
}

/// Rank of a set of equal-width vectors.
pub fn rank(vectors: &[BitString]) -> usize {
    let mut e = Echelon::default();
    vectors.iter().filter(|v| e.insert(v.value(), 0)).count()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Gf2Basis {
    vectors: Vec<BitString>,
}

impl Gf2Basis {
    pub fn new(vectors: Vec<BitString>) -> Result<Self> {
        let lambda = vectors.len();
        if vectors.iter().any(|v| v.len() != lambda) {
            return Err(Error::Dimension("basis vectors must have width λ".into()));
        }
        if rank(&vectors) != lambda {
            return Err(Error::DependentBasis);
        }
        Ok(Self { vectors })
    }

    pub fn standard(lambda: usize) -> Self {
        Self {
            vectors: (0..lambda).map(|i| BitString::new(1 << i, lambda)).collect(),
        }
    }

    /// Uniform over invertible matrices by rejection sampling.
    pub fn random<R: Rng + ?Sized>(lambda: usize, rng: &mut R) -> Self {
        loop {
            let vectors: Vec<BitString> = (0..lambda).map(|_| BitString::random(lambda, rng)).collect();
            if let Ok(b) = Self::new(vectors) {
                return b;
            }
        }
    }

    /// Every invertible basis of width `lambda` (λ ≤ 3).
    pub fn enumerate(lambda: usize) -> Vec<Self> {
        assert!(lambda <= 3, "enumeration only for tiny λ");
        let total = 1u64 << (lambda * lambda);
        (0..total)
            .filter_map(|bits| Self::from_bits(&BitString::new(bits, lambda * lambda)).ok())
            .collect()
    }

    pub fn lambda(&self) -> usize {
        self.vectors.len()
    }

    pub fn vectors(&self) -> &[BitString] {
        &self.vectors
    }

    /// `M x`.
    pub fn apply(&self, x: &BitString) -> BitString {
        let lambda = self.lambda();
        assert_eq!(x.len(), lambda);
        x.ones_positions()
            .fold(BitString::zeros(lambda), |acc, i| acc.xor(&self.vectors[i]))
    }

    /// `M^T b`: position `i` is `z_i · b`.
    pub fn apply_transpose(&self, b: &BitString) -> BitString {
        let bits: Vec<bool> = self.vectors.iter().map(|z| z.dot(b)).collect();
        BitString::from_bits(&bits)
    }

    /// `M^{-1} y`.
    pub fn solve(&self, y: &BitString) -> BitString {
        let mut e = Echelon::default();
        for (i, z) in self.vectors.iter().enumerate() {
            e.insert(z.value(), 1 << i);
        }
        let (residual, combo) = e.reduce(y.value(), 0);
        debug_assert_eq!(residual, 0);
        BitString::new(combo, self.lambda())
    }

    pub fn inverse(&self) -> Self {
        let lambda = self.lambda();
        let cols = (0..lambda)
            .map(|j| self.solve(&BitString::new(1 << j, lambda)))
            .collect();
        Self { vectors: cols }
    }

    pub fn transpose(&self) -> Self {
        let lambda = self.lambda();
        let cols = (0..lambda)
            .map(|j| self.apply_transpose(&BitString::new(1 << j, lambda)))
            .collect();
        Self { vectors: cols }
    }

    /// `M^{-T} e`, the label that σ_Z(e) carries after conjugation by `W`.
    pub fn apply_inverse_transpose(&self, e: &BitString) -> BitString {
        self.inverse().apply_transpose(e)
    }

    /// `z_1 ‖ … ‖ z_λ`, λ² bits.
    pub fn to_bits(&self) -> BitString {
        self.vectors
            .iter()
            .fold(BitString::empty(), |acc, z| acc.concat(z))
    }

    pub fn from_bits(bits: &BitString) -> Result<Self> {
        let lambda = (bits.len() as f64).sqrt() as usize;
        if lambda * lambda != bits.len() {
            return Err(Error::Dimension("basis encoding must have λ² bits".into()));
        }
        Self::new((0..lambda).map(|i| bits.slice(i * lambda, lambda)).collect())
    }

    /// Subspace spanned by `z_i` with `theta_i = 1`.
    pub fn span_selected(&self, theta: &BitString) -> Subspace {
        let chosen: Vec<BitString> = theta.ones_positions().map(|i| self.vectors[i]).collect();
        Subspace::span(&chosen, self.lambda())
    }

    /// Hex-encoded vectors, as written in config and report files.
    pub fn to_hex_rows(&self) -> Vec<String> {
        self.vectors.iter().map(BitString::to_hex).collect()
    }
}

/// Permutation matrix with `W|x⟩ = |Mx⟩`.
pub fn w_matrix(basis: &Gf2Basis) -> CMatrix {
    let lambda = basis.lambda();
    let dim = 1 << lambda;
    let mut w = CMatrix::zeros(dim, dim);
    for x in BitString::all(lambda) {
        w[(basis.apply(&x).value() as usize, x.value() as usize)] = Complex64::new(1.0, 0.0);
    }
    w
}

pub fn w_unitary(basis: &Gf2Basis, target: &str) -> DenseOperator {
    DenseOperator::unitary(w_matrix(basis), &[target]).expect("permutation matrices are unitary")
}

/// A linear subspace of Z_2^ambient held by a reduced generator list.
#[derive(Clone, Debug)]
pub struct Subspace {
    ambient: usize,
    echelon: Echelon,
}

impl Subspace {
    pub fn span(vectors: &[BitString], ambient: usize) -> Self {
        let mut echelon = Echelon::default();
        for v in vectors {
            assert_eq!(v.len(), ambient, "vector width differs from ambient dimension");
            echelon.insert(v.value(), 0);
        }
        Self { ambient, echelon }
    }

    pub fn full(ambient: usize) -> Self {
        Gf2Basis::standard(ambient).span_selected(&BitString::ones(ambient))
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.echelon.rows.len()
    }

    pub fn generators(&self) -> Vec<BitString> {
        self.echelon
            .rows
            .iter()
            .map(|&(v, _)| BitString::new(v, self.ambient))
            .collect()
    }

    pub fn member(&self, v: &BitString) -> bool {
        assert_eq!(v.len(), self.ambient);
        self.echelon.reduce(v.value(), 0).0 == 0
    }

    /// `{y : y·x = 0 for all x}`.
    pub fn complement(&self) -> Subspace {
        let mut basis = Vec::new();
        let mut pivots = Vec::new();
        let mut rows: Vec<u64> = self.generators().iter().map(|g| g.value()).collect();
        // nullspace of the generator matrix from its reduced row echelon form
        let mut r = 0;
        for col in 0..self.ambient {
            if let Some(k) = (r..rows.len()).find(|&k| (rows[k] >> col) & 1 == 1) {
                rows.swap(r, k);
                for k2 in 0..rows.len() {
                    if k2 != r && (rows[k2] >> col) & 1 == 1 {
                        rows[k2] ^= rows[r];
                    }
                }
                pivots.push(col);
                r += 1;
            }
        }
        for free in (0..self.ambient).filter(|c| !pivots.contains(c)) {
            let mut y = 1u64 << free;
            for (row, &p) in rows.iter().zip(&pivots) {
                if (row >> free) & 1 == 1 {
                    y |= 1 << p;
                }
            }
            basis.push(BitString::new(y, self.ambient));
        }
        Subspace::span(&basis, self.ambient)
    }

    /// All elements (dim ≤ 16).
    pub fn elements(&self) -> Vec<BitString> {
        let gens = self.generators();
        assert!(gens.len() <= 16);
        (0..1u64 << gens.len())
            .map(|mask| {
                gens.iter()
                    .enumerate()
                    .filter(|(i, _)| (mask >> i) & 1 == 1)
                    .fold(BitString::zeros(self.ambient), |acc, (_, g)| acc.xor(g))
            })
            .collect()
    }

    /// Diagonal projector onto the basis strings in the subspace.
    pub fn projector(&self) -> CMatrix {
        let dim = 1 << self.ambient;
        let mut p = CMatrix::zeros(dim, dim);
        for v in self.elements() {
            p[(v.value() as usize, v.value() as usize)] = Complex64::new(1.0, 0.0);
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn lambda_one_has_one_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(Gf2Basis::random(1, &mut rng).vectors(), &[bs("1")]);
        }
    }

    #[test]
    fn gl22_is_sampled_uniformly() {
        let all = Gf2Basis::enumerate(2);
        assert_eq!(all.len(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut counts: HashMap<Gf2Basis, usize> = HashMap::new();
        for _ in 0..n {
            let b = Gf2Basis::random(2, &mut rng);
            assert_eq!(rank(b.vectors()), 2);
            *counts.entry(b).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            assert!((*c as f64 / n as f64 - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn membership_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let gens: Vec<BitString> = (0..2).map(|_| BitString::random(4, &mut rng)).collect();
            let s = Subspace::span(&gens, 4);
            // brute-force span of the raw generator list
            let mut span = std::collections::HashSet::new();
            for mask in 0..4u64 {
                let mut v = BitString::zeros(4);
                for (i, g) in gens.iter().enumerate() {
                    if (mask >> i) & 1 == 1 {
                        v = v.xor(g);
                    }
                }
                span.insert(v);
            }
            for v in BitString::all(4) {
                assert_eq!(s.member(&v), span.contains(&v));
            }
            assert!(s.member(&BitString::zeros(4)));
            for g in &gens {
                assert!(s.member(g));
            }
        }
    }

    #[test]
    fn complement_examples() {
        assert_eq!(Subspace::full(3).complement().dim(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let basis = Gf2Basis::random(4, &mut rng);
            let theta = BitString::random_with_weight(4, 2, &mut rng);
            let a = basis.span_selected(&theta);
            assert_eq!(a.dim(), 2);
            let perp = a.complement();
            assert_eq!(a.dim() + perp.dim(), 4);
            for x in a.elements() {
                for y in perp.elements() {
                    assert!(!x.dot(&y));
                }
            }
            let back = perp.complement();
            for v in BitString::all(4) {
                assert_eq!(back.member(&v), a.member(&v));
            }
        }
    }

    #[test]
    fn w_for_standard_basis_is_identity() {
        assert_eq!(w_matrix(&Gf2Basis::standard(3)), CMatrix::identity(8, 8));
    }

    #[test]
    fn w_example_at_lambda_two() {
        let basis = Gf2Basis::new(vec![bs("11"), bs("01")]).unwrap();
        assert_eq!(basis.apply(&bs("10")), bs("11"));
        assert_eq!(basis.apply(&bs("01")), bs("01"));
        assert_eq!(basis.apply(&bs("11")), bs("10"));
        let w = w_matrix(&basis);
        for (x, y) in [("10", "11"), ("01", "01"), ("11", "10")] {
            let (x, y) = (bs(x).value() as usize, bs(y).value() as usize);
            assert_eq!(w[(y, x)].re, 1.0);
        }
        assert_eq!(w.transpose() * &w, CMatrix::identity(4, 4));
        assert!(w.iter().all(|e| e.im == 0.0 && (e.re == 0.0 || e.re == 1.0)));
    }

    #[test]
    fn dependent_basis_is_rejected() {
        assert_eq!(
            Gf2Basis::new(vec![bs("11"), bs("11")]),
            Err(Error::DependentBasis)
        );
    }

    proptest! {
        #[test]
        fn w_times_inverse_is_identity(seed in any::<u64>(), lambda in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = Gf2Basis::random(lambda, &mut rng);
            let dim = 1 << lambda;
            prop_assert_eq!(w_matrix(&b) * w_matrix(&b.inverse()), CMatrix::identity(dim, dim));
            let x = BitString::random(lambda, &mut rng);
            prop_assert_eq!(b.solve(&b.apply(&x)), x);
            prop_assert_eq!(Gf2Basis::from_bits(&b.to_bits()).unwrap(), b.clone());
            // M^T and M^{-T} are inverse maps
            prop_assert_eq!(b.apply_inverse_transpose(&b.apply_transpose(&x)), x);
        }

        #[test]
        fn membership_is_linear(seed in any::<u64>(), lambda in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gens: Vec<BitString> = (0..lambda / 2 + 1).map(|_| BitString::random(lambda, &mut rng)).collect();
            let s = Subspace::span(&gens, lambda);
            let elems = s.elements();
            let v = elems[rng.gen_range(0..elems.len())];
            let w = elems[rng.gen_range(0..elems.len())];
            prop_assert!(s.member(&v.xor(&w)));
        }

        #[test]
        fn half_weight_selection_has_half_dimension(seed in any::<u64>(), half in 1usize..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lambda = 2 * half;
            let b = Gf2Basis::random(lambda, &mut rng);
            let theta = BitString::random_with_weight(lambda, half, &mut rng);
            prop_assert_eq!(b.span_selected(&theta).dim(), half);
        }
    }
}
