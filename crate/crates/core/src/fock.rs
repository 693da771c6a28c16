//! Fermionic Fock-space helpers on the Jordan–Wigner occupation basis.
//!
//! A basis index is a bitstring; bit `j` is the occupation of mode `j`.
//! Spin orbital `(p, sigma)` of `n` spatial orbitals lives on mode `sigma*n + p`
//! (all alpha modes first).

use nalgebra::{ComplexField, DMatrix};

use crate::real::{cx, czero, Cx, Real};

/// Parity of the occupied modes strictly below `j`.
#[inline]
pub fn parity_below(b: usize, j: usize) -> bool {
    (b & ((1usize << j) - 1)).count_ones() & 1 == 1
}

/// `a†_p a_q |b⟩` as `(sign, target)`, or `None` when it annihilates the state.
#[inline]
pub fn hop(b: usize, p: usize, q: usize) -> Option<(bool, usize)> {
    if b >> q & 1 == 0 {
        return None;
    }
    let s1 = parity_below(b, q);
    let b1 = b ^ (1 << q);
    if b1 >> p & 1 == 1 {
        return None;
    }
    let s2 = parity_below(b1, p);
    Some((s1 ^ s2, b1 | (1 << p)))
}

/// `a†_p a†_r a_s a_q |b⟩`.
#[inline]
pub fn double_hop(b: usize, p: usize, q: usize, r: usize, s: usize) -> Option<(bool, usize)> {
    let (s1, b1) = hop_ann(b, q)?;
    let (s2, b2) = hop_ann(b1, s)?;
    let (s3, b3) = hop_cre(b2, r)?;
    let (s4, b4) = hop_cre(b3, p)?;
    Some((s1 ^ s2 ^ s3 ^ s4, b4))
}

#[inline]
fn hop_ann(b: usize, q: usize) -> Option<(bool, usize)> {
    if b >> q & 1 == 0 {
        None
    } else {
        Some((parity_below(b, q), b ^ (1 << q)))
    }
}

#[inline]
fn hop_cre(b: usize, p: usize) -> Option<(bool, usize)> {
    if b >> p & 1 == 1 {
        None
    } else {
        Some((parity_below(b, p), b | (1 << p)))
    }
}

/// Dense many-body matrix of `Σ h_pq a†_p a_q` over the full Fock space.
pub fn dense_one_body<T: Real>(h: &DMatrix<Cx<T>>) -> DMatrix<Cx<T>> {
    let n = h.nrows();
    let dim = 1usize << n;
    let mut out = DMatrix::from_element(dim, dim, czero());
    for b in 0..dim {
        for p in 0..n {
            for q in 0..n {
                let hpq = h[(p, q)];
                if hpq == czero() {
                    continue;
                }
                if let Some((neg, t)) = hop(b, p, q) {
                    out[(t, b)] += if neg { -hpq } else { hpq };
                }
            }
        }
    }
    out
}

/// Apply `Σ h_pq a†_p a_q` to a state vector.
pub fn apply_one_body<T: Real>(h: &DMatrix<Cx<T>>, psi: &[Cx<T>]) -> Vec<Cx<T>> {
    let n = h.nrows();
    let mut out = vec![czero(); psi.len()];
    for (b, &amp) in psi.iter().enumerate() {
        if amp == czero() {
            continue;
        }
        for p in 0..n {
            for q in 0..n {
                let hpq = h[(p, q)];
                if hpq == czero() {
                    continue;
                }
                if let Some((neg, t)) = hop(b, p, q) {
                    let v = hpq * amp;
                    out[t] += if neg { -v } else { v };
                }
            }
        }
    }
    out
}

/// Adjacent-mode 2×2 unitary acting on modes `(p, p+1)`.
#[derive(Clone, Debug)]
pub struct Givens<T: Real> {
    pub p: usize,
    pub g: [[Cx<T>; 2]; 2],
}

/// Factorization of a single-particle unitary into adjacent rotations and
/// trailing phases: `U = G_1 ... G_k · diag(phases)`.
#[derive(Clone, Debug)]
pub struct OrbitalRotation<T: Real> {
    pub rotations: Vec<Givens<T>>,
    pub phases: Vec<Cx<T>>,
}

impl<T: Real> OrbitalRotation<T> {
    /// QR-style elimination with adjacent rotations.
    pub fn decompose(u: &DMatrix<Cx<T>>) -> Self {
        let n = u.nrows();
        let mut a = u.clone();
        let mut left: Vec<Givens<T>> = Vec::new();
        let tiny = T::eps() * c_t::<T>(1e-3);
        for j in 0..n {
            for i in (j + 1..n).rev() {
                let x = a[(i - 1, j)];
                let y = a[(i, j)];
                if y.modulus() <= tiny {
                    continue;
                }
                let r = (x.norm_sqr() + y.norm_sqr()).sqrt();
                let g = [[x.conj() / cx(r, T::zero()), y.conj() / cx(r, T::zero())],
                         [-y / cx(r, T::zero()), x / cx(r, T::zero())]];
                for col in 0..n {
                    let u0 = a[(i - 1, col)];
                    let u1 = a[(i, col)];
                    a[(i - 1, col)] = g[0][0] * u0 + g[0][1] * u1;
                    a[(i, col)] = g[1][0] * u0 + g[1][1] * u1;
                }
                left.push(Givens { p: i - 1, g });
            }
        }
        // G_k...G_1 U = D  =>  U = G_1† ... G_k† D
        let rotations = left
            .into_iter()
            .map(|gv| Givens { p: gv.p, g: adjoint2(&gv.g) })
            .collect();
        let phases = (0..n).map(|k| a[(k, k)] / cx(a[(k, k)].modulus(), T::zero())).collect();
        OrbitalRotation { rotations, phases }
    }

    /// `ψ ← lift(U) ψ`.
    pub fn apply(&self, psi: &mut [Cx<T>]) {
        apply_mode_phases(psi, &self.phases);
        for gv in self.rotations.iter().rev() {
            apply_givens(psi, gv);
        }
    }

    /// `ψ ← lift(U)† ψ`.
    pub fn apply_adjoint(&self, psi: &mut [Cx<T>]) {
        for gv in self.rotations.iter() {
            let inv = Givens { p: gv.p, g: adjoint2(&gv.g) };
            apply_givens(psi, &inv);
        }
        let conj: Vec<Cx<T>> = self.phases.iter().map(|z| z.conj()).collect();
        apply_mode_phases(psi, &conj);
    }
}

#[inline]
fn c_t<T: Real>(x: f64) -> T {
    crate::real::c(x)
}

fn adjoint2<T: Real>(g: &[[Cx<T>; 2]; 2]) -> [[Cx<T>; 2]; 2] {
    [[g[0][0].conj(), g[1][0].conj()], [g[0][1].conj(), g[1][1].conj()]]
}

/// Multiply each basis state by the product of per-mode factors of its occupied modes.
pub fn apply_mode_phases<T: Real>(psi: &mut [Cx<T>], phases: &[Cx<T>]) {
    for (b, amp) in psi.iter_mut().enumerate() {
        let mut f = cx(T::one(), T::zero());
        let mut bits = b;
        while bits != 0 {
            let j = bits.trailing_zeros() as usize;
            f *= phases[j];
            bits &= bits - 1;
        }
        *amp *= f;
    }
}

/// Apply the Fock-space lift of an adjacent-mode 2×2 unitary.
pub fn apply_givens<T: Real>(psi: &mut [Cx<T>], gv: &Givens<T>) {
    let p = gv.p;
    let g = &gv.g;
    let mp = 1usize << p;
    let mq = 1usize << (p + 1);
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    for b in 0..psi.len() {
        if b & (mp | mq) != 0 {
            continue;
        }
        let i10 = b | mp;
        let i01 = b | mq;
        let i11 = b | mp | mq;
        let a10 = psi[i10];
        let a01 = psi[i01];
        psi[i10] = g[0][0] * a10 + g[0][1] * a01;
        psi[i01] = g[1][0] * a10 + g[1][1] * a01;
        psi[i11] *= det;
    }
}

/// Dense lift of a single-particle unitary (column by column).
pub fn dense_lift<T: Real>(rot: &OrbitalRotation<T>, n_modes: usize) -> DMatrix<Cx<T>> {
    let dim = 1usize << n_modes;
    let mut out = DMatrix::from_element(dim, dim, czero());
    let mut e = vec![czero(); dim];
    for col in 0..dim {
        e.iter_mut().for_each(|z| *z = czero());
        e[col] = cx(T::one(), T::zero());
        rot.apply(&mut e);
        for (row, z) in e.iter().enumerate() {
            out[(row, col)] = *z;
        }
    }
    out
}

/// All bitstrings over `2n` modes with `n_alpha` alpha and `n_beta` beta electrons.
pub fn sector_basis(n: usize, n_alpha: usize, n_beta: usize) -> Vec<usize> {
    let lo_mask = (1usize << n) - 1;
    (0..1usize << (2 * n))
        .filter(|b| {
            (b & lo_mask).count_ones() as usize == n_alpha
                && (b >> n).count_ones() as usize == n_beta
        })
        .collect()
}

/// Norm of a state vector.
pub fn norm<T: Real>(psi: &[Cx<T>]) -> T {
    psi.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt()
}

/// `⟨a|b⟩`
pub fn inner<T: Real>(a: &[Cx<T>], b: &[Cx<T>]) -> Cx<T> {
    a.iter().zip(b).fold(czero(), |acc, (x, y)| acc + x.conj() * y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expm_hermitian, random_hermitian, random_unitary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hop_signs_match_anticommutation() {
        // a†_0 a_1 on |11> : a_1 |11> = -|01>... check against a†_1 a_0 adjoint pair
        let (neg, t) = hop(0b10, 0, 1).unwrap();
        assert_eq!(t, 0b01);
        assert!(!neg);
        let (neg, t) = hop(0b110, 0, 2).unwrap();
        assert_eq!(t, 0b011);
        assert!(neg);
    }

    #[test]
    fn lifted_rotation_equals_exponential_of_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4;
        let k = random_hermitian::<f64>(n, &mut rng);
        let u = expm_hermitian(&k, 1.0);
        let lifted = dense_lift(&OrbitalRotation::decompose(&u), n);
        let oracle = expm_hermitian(&dense_one_body(&k), 1.0);
        assert!((lifted - oracle).norm() < 1e-11);
        let _ = random_unitary::<f64>(3, &mut rng);
    }
}
