//! Dense many-body matrices of active-space operators in fixed-occupation sectors.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::fock::{double_hop, hop, sector_basis};
use crate::hamiltonian_io::ActiveSpaceHamiltonian;
use crate::real::{c, cx, czero, Cx, Real};

/// Ordered list of bitstrings spanning a subspace of the Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct Sector {
    pub n_orb: usize,
    pub states: Vec<usize>,
}

impl Sector {
    /// Fixed `(n_alpha, n_beta)` occupation.
    pub fn spin(n_orb: usize, n_alpha: usize, n_beta: usize) -> Self {
        Sector { n_orb, states: sector_basis(n_orb, n_alpha, n_beta) }
    }

    /// Entire Fock space of `2·n_orb` modes.
    pub fn full(n_orb: usize) -> Self {
        Sector { n_orb, states: (0..1usize << (2 * n_orb)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn position(&self, b: usize) -> Option<usize> {
        self.states.binary_search(&b).ok()
    }

    /// Embed a sector vector into the full `2^{2N}` Fock space.
    pub fn embed<T: Real>(&self, v: &[Cx<T>]) -> Vec<Cx<T>> {
        let mut out = vec![czero(); 1usize << (2 * self.n_orb)];
        for (i, &b) in self.states.iter().enumerate() {
            out[b] = v[i];
        }
        out
    }
}

/// Many-body Hamiltonian restricted to `sector` (closed under H for spin sectors
/// and for the full space).
pub fn sector_hamiltonian<T: Real>(h: &ActiveSpaceHamiltonian<T>, sector: &Sector) -> DMatrix<Cx<T>> {
    let n = h.n_orb;
    let dim = sector.dim();
    let mut m = DMatrix::from_element(dim, dim, czero());
    let half = c::<T>(0.5);
    for (col, &b) in sector.states.iter().enumerate() {
        m[(col, col)] += cx(h.e_core, T::zero());
        for p in 0..n {
            for q in 0..n {
                let tpq = h.t[(p, q)];
                if tpq != T::zero() {
                    for s in 0..2 {
                        if let Some((neg, tgt)) = hop(b, s * n + p, s * n + q) {
                            if let Some(row) = sector.position(tgt) {
                                m[(row, col)] += cx(if neg { -tpq } else { tpq }, T::zero());
                            }
                        }
                    }
                }
                for r in 0..n {
                    for s_ in 0..n {
                        let v = h.v(p, q, r, s_);
                        if v == T::zero() {
                            continue;
                        }
                        let hv = half * v;
                        for sig in 0..2 {
                            for tau in 0..2 {
                                if let Some((neg, tgt)) =
                                    double_hop(b, sig * n + p, sig * n + q, tau * n + r, tau * n + s_)
                                {
                                    if let Some(row) = sector.position(tgt) {
                                        m[(row, col)] += cx(if neg { -hv } else { hv }, T::zero());
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    m
}

/// Spin-free one-body operator `Σ_pq d_pq Σ_σ a†_pσ a_qσ` in `sector`.
pub fn sector_one_body<T: Real>(d: &DMatrix<T>, sector: &Sector) -> DMatrix<Cx<T>> {
    let n = sector.n_orb;
    let dim = sector.dim();
    let mut m = DMatrix::from_element(dim, dim, czero());
    for (col, &b) in sector.states.iter().enumerate() {
        for p in 0..n {
            for q in 0..n {
                let x = d[(p, q)];
                if x == T::zero() {
                    continue;
                }
                for s in 0..2 {
                    if let Some((neg, tgt)) = hop(b, s * n + p, s * n + q) {
                        if let Some(row) = sector.position(tgt) {
                            m[(row, col)] += cx(if neg { -x } else { x }, T::zero());
                        }
                    }
                }
            }
        }
    }
    m
}

/// Total spin `S²` within a fixed-`S_z` sector: `S² = S₋S₊ + S_z² + S_z`.
pub fn sector_s_squared<T: Real>(sector: &Sector) -> DMatrix<Cx<T>> {
    let n = sector.n_orb;
    let dim = sector.dim();
    let mut m = DMatrix::from_element(dim, dim, czero());
    for (col, &b) in sector.states.iter().enumerate() {
        let na = (b & ((1 << n) - 1)).count_ones() as f64;
        let nb = (b >> n).count_ones() as f64;
        let sz = 0.5 * (na - nb);
        m[(col, col)] += cx(c(sz * sz + sz), T::zero());
        // S₊ = Σ_p a†_{pα} a_{pβ}
        let mut raised: HashMap<usize, f64> = HashMap::new();
        for p in 0..n {
            if let Some((neg, tgt)) = hop(b, p, n + p) {
                *raised.entry(tgt).or_default() += if neg { -1.0 } else { 1.0 };
            }
        }
        // S₋ = Σ_p a†_{pβ} a_{pα}
        for (&u, &amp) in &raised {
            for p in 0..n {
                if let Some((neg, tgt)) = hop(u, n + p, p) {
                    if let Some(row) = sector.position(tgt) {
                        let v = if neg { -amp } else { amp };
                        m[(row, col)] += cx(c(v), T::zero());
                    }
                }
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eigh;

    #[test]
    fn two_electron_singlet_triplet_split() {
        // H2-like minimal model: the S² spectrum in the Sz=0 sector of 2e/2o
        let sec = Sector::spin(2, 1, 1);
        let s2 = sector_s_squared::<f64>(&sec);
        let (vals, _) = eigh(&s2);
        let rounded: Vec<i64> = vals.iter().map(|v| v.round() as i64).collect();
        assert_eq!(rounded, vec![0, 0, 0, 2]);
    }

    #[test]
    fn hubbard_dimer_ground_energy() {
        // t_12 = -1, on-site U = 4 via v_pppp; exact ground E = (U - sqrt(U² + 16))/2
        let mut h = ActiveSpaceHamiltonian::<f64>::zeros(2);
        h.t[(0, 1)] = -1.0;
        h.t[(1, 0)] = -1.0;
        h.set_v_sym(0, 0, 0, 0, 4.0);
        h.set_v_sym(1, 1, 1, 1, 4.0);
        let m = sector_hamiltonian(&h, &Sector::spin(2, 1, 1));
        let (vals, _) = eigh(&m);
        assert!((vals[0] - (4.0 - (32.0f64).sqrt()) / 2.0).abs() < 1e-12);
    }
}
