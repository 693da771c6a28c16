//! Second-order product formulas over CDF fragments, their third-order
//! error operator and the resulting step-size rule.
//!
//! Fragment order is fixed: the one-body term first, then the two-body
//! fragments in stored order. The symmetric step applies them forward with
//! half steps and then in reverse, so the first fragment is outermost.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Flag, Result};
use crate::factorization::{block_norm, CdfFactorization};
use crate::fock::{dense_lift, OrbitalRotation};
use crate::linalg::{commutator, eigh, hermitian_norm};
use crate::manybody::{sector_hamiltonian, Sector};
use crate::real::{c, cx, czero, f, phase, Cx, Real};
use crate::window_simulator::SpectralWindow;

/// Largest spin-orbital count for state-vector stepping.
pub const MAX_STEP_SPIN_ORBITALS: usize = 14;
/// Largest spin-orbital count for dense verification.
pub const MAX_DENSE_SPIN_ORBITALS: usize = 10;
/// Step returned by `delta_max` for commuting fragments (`c = 0`).
pub const DELTA_CAP: f64 = 1.0;
/// Eigenphases this close to ±π are excluded from bias checks.
pub const BRANCH_MARGIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    L,
    R,
}

/// `H̃ = τ (H − e_ref)` on a padded interval of width `lambda_pad`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaledHamiltonian {
    pub tau: f64,
    pub e_ref: f64,
    pub lambda_pad: f64,
    pub side: Side,
    pub e_min_pad: f64,
    pub e_max_pad: f64,
}

/// Pad one spectral bound so that both arcs around the reference edge
/// (`E_hi` for `L`, `E_lo` for `R`) have equal width, then `τ = 2π/Λ`.
pub fn pad_and_rescale<T: Real>(window: &SpectralWindow<T>, side: Side) -> RescaledHamiltonian {
    let (e_min, e_max) = (f(window.e_min), f(window.e_max));
    let e_ref = match side {
        Side::L => f(window.e_hi),
        Side::R => f(window.e_lo),
    };
    let half = (e_ref - e_min).max(e_max - e_ref);
    let lambda_pad = 2.0 * half;
    RescaledHamiltonian {
        tau: 2.0 * std::f64::consts::PI / lambda_pad,
        e_ref,
        lambda_pad,
        side,
        e_min_pad: e_ref - half,
        e_max_pad: e_ref + half,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrotterBudget {
    pub c: f64,
    pub xi: f64,
    pub delta_e_bin: f64,
    pub tau: f64,
    pub delta_max: f64,
}

/// `Δ_max = sqrt(ξ·δE_bin / (c·τ²))`; `c = 0` yields [`DELTA_CAP`].
pub fn delta_max(c: f64, xi: f64, delta_e_bin: f64, tau: f64) -> Result<TrotterBudget> {
    if !(c >= 0.0 && delta_e_bin >= 0.0 && tau > 0.0) {
        return Err(Error::domain("c and delta_e_bin must be non-negative and tau positive"));
    }
    if !(xi > 0.0 && xi <= 0.5) {
        return Err(Error::domain(format!("xi must lie in (0, 0.5], got {xi}")));
    }
    let dm = if c == 0.0 { DELTA_CAP } else { (xi * delta_e_bin / (c * tau * tau)).sqrt() };
    Ok(TrotterBudget { c, xi, delta_e_bin, tau, delta_max: dm })
}

impl TrotterBudget {
    /// Step actually taken: `Δ_max` capped at [`DELTA_CAP`], beyond which the
    /// rescaled spectrum leaves the principal branch.
    pub fn step(&self) -> f64 {
        self.delta_max.min(DELTA_CAP)
    }
}

/// Copy of `cdf` describing `τ (H − e_ref)`.
pub fn rescale_cdf<T: Real>(cdf: &CdfFactorization<T>, r: &RescaledHamiltonian) -> CdfFactorization<T> {
    let tau: T = c(r.tau);
    let mut out = cdf.clone();
    out.z0.iter_mut().for_each(|z| *z *= tau);
    for fr in &mut out.fragments {
        fr.z *= tau;
    }
    out.e_core = tau * (cdf.e_core - c(r.e_ref));
    out
}

/// One diagonal fragment in its own orbital basis.
#[derive(Clone, Debug)]
struct Layer<T: Real> {
    rotation: OrbitalRotation<T>,
    diag: Vec<T>,
}

/// Precomputed fragment bases and diagonals for repeated stepping.
#[derive(Clone, Debug)]
pub struct TrotterCircuit<T: Real> {
    pub n_so: usize,
    layers: Vec<Layer<T>>,
    constant: T,
}

/// Spin-orbital lift `U ⊕ U` of a spatial rotation.
fn spin_block<T: Real>(u: &DMatrix<T>) -> DMatrix<Cx<T>> {
    let n = u.nrows();
    let mut m = DMatrix::from_element(2 * n, 2 * n, czero());
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = cx(u[(i, j)], T::zero());
            m[(n + i, n + j)] = cx(u[(i, j)], T::zero());
        }
    }
    m
}

fn occupations(b: usize, n: usize) -> Vec<usize> {
    (0..n).map(|k| ((b >> k) & 1) + ((b >> (n + k)) & 1)).collect()
}

/// `Σ_k d_k N_k` over all occupation strings.
fn one_body_diag<T: Real>(z0: &[T], n: usize) -> Vec<T> {
    (0..1usize << (2 * n))
        .map(|b| occupations(b, n).iter().zip(z0).fold(T::zero(), |a, (&o, &z)| a + z * c(o as f64)))
        .collect()
}

/// `½ Σ_kl Z_kl N_k N_l − Σ_k (Σ_l Z_kl) N_k` over all occupation strings.
fn two_body_diag<T: Real>(z: &DMatrix<T>, n: usize) -> Vec<T> {
    (0..1usize << (2 * n))
        .map(|b| {
            let occ = occupations(b, n);
            let mut e = T::zero();
            for k in 0..n {
                let nk: T = c(occ[k] as f64);
                for l in 0..n {
                    let nl: T = c(occ[l] as f64);
                    e += z[(k, l)] * (c::<T>(0.5) * nk * nl - nk);
                }
            }
            e
        })
        .collect()
}

impl<T: Real> TrotterCircuit<T> {
    pub fn new(cdf: &CdfFactorization<T>) -> Result<Self> {
        let n = cdf.n_orb();
        let n_so = 2 * n;
        if n_so > MAX_STEP_SPIN_ORBITALS {
            return Err(Error::Capacity { dim: n_so, cap: MAX_STEP_SPIN_ORBITALS });
        }
        let mut layers = vec![Layer {
            rotation: OrbitalRotation::decompose(&spin_block(&cdf.u0)),
            diag: one_body_diag(&cdf.z0, n),
        }];
        for fr in &cdf.fragments {
            layers.push(Layer { rotation: OrbitalRotation::decompose(&spin_block(&fr.u)), diag: two_body_diag(&fr.z, n) });
        }
        Ok(TrotterCircuit { n_so, layers, constant: cdf.e_core })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    fn apply_layer(&self, j: usize, theta: T, psi: &mut [Cx<T>]) {
        let layer = &self.layers[j];
        layer.rotation.apply_adjoint(psi);
        for (amp, &d) in psi.iter_mut().zip(&layer.diag) {
            *amp *= phase(theta * d);
        }
        layer.rotation.apply(psi);
    }

    /// `ψ ← U₂(Δ) ψ`.
    pub fn step(&self, delta: T, psi: &mut [Cx<T>]) {
        let half = delta * c(0.5);
        for j in 0..self.layers.len() {
            self.apply_layer(j, half, psi);
        }
        for j in (0..self.layers.len()).rev() {
            self.apply_layer(j, half, psi);
        }
        let g = phase(delta * self.constant);
        psi.iter_mut().for_each(|a| *a *= g);
    }

    /// Dense one-step unitary.
    pub fn unitary(&self, delta: T) -> DMatrix<Cx<T>> {
        let dim = 1usize << self.n_so;
        let mut u = DMatrix::from_element(dim, dim, czero());
        let mut e = vec![czero(); dim];
        for col in 0..dim {
            e.iter_mut().for_each(|z| *z = czero());
            e[col] = cx(T::one(), T::zero());
            self.step(delta, &mut e);
            u.set_column(col, &nalgebra::DVector::from_column_slice(&e));
        }
        u
    }

    /// Dense Fock-space matrices of the fragments (constants dropped).
    pub fn dense_fragments(&self) -> Vec<DMatrix<Cx<T>>> {
        self.layers
            .iter()
            .map(|l| {
                let lift = dense_lift(&l.rotation, self.n_so);
                let mut scaled = lift.clone();
                for (col, &d) in l.diag.iter().enumerate() {
                    let w = cx(d, T::zero());
                    scaled.column_mut(col).iter_mut().for_each(|z| *z *= w);
                }
                scaled * lift.adjoint()
            })
            .collect()
    }
}

/// `ψ ← U₂(Δ) ψ` for a one-off step.
pub fn trotter_step<T: Real>(cdf: &CdfFactorization<T>, delta: T, state: &[Cx<T>]) -> Result<Vec<Cx<T>>> {
    if !(delta > T::zero()) {
        return Err(Error::domain("delta must be positive"));
    }
    let circ = TrotterCircuit::new(cdf)?;
    if state.len() != 1usize << circ.n_so {
        return Err(Error::domain(format!("state length {} is not 2^{}", state.len(), circ.n_so)));
    }
    let mut psi = state.to_vec();
    circ.step(delta, &mut psi);
    Ok(psi)
}

fn dense_circuit<T: Real>(cdf: &CdfFactorization<T>) -> Result<TrotterCircuit<T>> {
    let n_so = 2 * cdf.n_orb();
    if n_so > MAX_DENSE_SPIN_ORBITALS {
        return Err(Error::Capacity { dim: n_so, cap: MAX_DENSE_SPIN_ORBITALS });
    }
    TrotterCircuit::new(cdf)
}

/// `Σ_j (1/12)[H_j,[L_j,H_j]] + (1/24)[L_j,[L_j,H_j]]` with `L_j = Σ_{h<j} H_h`.
pub fn y3_matrix<T: Real>(frags: &[DMatrix<Cx<T>>]) -> DMatrix<Cx<T>> {
    let dim = frags.first().map_or(0, |m| m.nrows());
    let mut lower = DMatrix::from_element(dim, dim, czero());
    let mut y = DMatrix::from_element(dim, dim, czero());
    let (w12, w24) = (cx(c::<T>(1.0 / 12.0), T::zero()), cx(c::<T>(1.0 / 24.0), T::zero()));
    for (j, h) in frags.iter().enumerate() {
        if j > 0 {
            let lh = commutator(&lower, h);
            y += commutator(h, &lh) * w12 + commutator(&lower, &lh) * w24;
        }
        lower += h;
    }
    y
}

/// Spectral norm of the dense third-order operator.
pub fn y3_norm_exact<T: Real>(cdf: &CdfFactorization<T>) -> Result<T> {
    let circ = dense_circuit(cdf)?;
    let y = y3_matrix(&circ.dense_fragments());
    Ok(spectral_norm(&y))
}

/// Leading error operator of the nested symmetric product, accumulated from
/// the outermost fragment inward:
/// `Σ_j (1/12)[R_j,[R_j,H_j]] − (1/24)[H_j,[H_j,R_j]]`, `R_j = Σ_{h>j} H_h`.
pub fn y3_nested_matrix<T: Real>(frags: &[DMatrix<Cx<T>>]) -> DMatrix<Cx<T>> {
    let dim = frags.first().map_or(0, |m| m.nrows());
    let mut y = DMatrix::from_element(dim, dim, czero());
    let (w12, w24) = (cx(c::<T>(1.0 / 12.0), T::zero()), cx(c::<T>(1.0 / 24.0), T::zero()));
    for j in 0..frags.len() {
        let mut rest = DMatrix::from_element(dim, dim, czero());
        for h in &frags[j + 1..] {
            rest += h;
        }
        let rh = commutator(&rest, &frags[j]);
        let hr = -rh.clone();
        y += commutator(&rest, &rh) * w12 - commutator(&frags[j], &hr) * w24;
    }
    y
}

fn spectral_norm<T: Real>(m: &DMatrix<Cx<T>>) -> T {
    // nested commutators of Hermitian operators are Hermitian; symmetrize away round-off
    let herm = (m + m.adjoint()) * cx(c::<T>(0.5), T::zero());
    hermitian_norm(&herm)
}

/// Upper-bound surrogate: `‖[A,B]‖ ≤ 2‖A‖‖B‖` with `‖H_j‖` bounded by the
/// fragment's LCU 1-norm, summed term by term over the same nested sums.
pub fn y3_norm_heuristic<T: Real>(cdf: &CdfFactorization<T>) -> T {
    let mut norms = vec![cdf.z0.iter().fold(T::zero(), |a, z| a + z.abs())];
    norms.extend(cdf.fragments.iter().map(|fr| block_norm(&fr.z)));
    y3_bound_from_norms(&norms)
}

/// The heuristic bound from fragment 1-norms in application order.
pub fn y3_bound_from_norms<T: Real>(norms: &[T]) -> T {
    let mut lower = T::zero();
    let mut total = T::zero();
    for (j, &a) in norms.iter().enumerate() {
        if j > 0 {
            total += a * a * lower / c(3.0) + lower * lower * a / c(6.0);
        }
        lower += a;
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub delta: f64,
    pub tau: f64,
    pub c: f64,
    pub bound: f64,
    pub max_bias: f64,
    pub n_compared: usize,
    pub n_excluded: usize,
    pub within_bound: bool,
    pub flags: Vec<Flag>,
}

/// Exact spectrum of the factorized Hamiltonian against the eigenphases of
/// one rescaled Trotter step, in Hartree.
pub fn verify_bias<T: Real>(cdf: &CdfFactorization<T>, rescale: &RescaledHamiltonian, delta: f64) -> Result<BiasReport> {
    if !(delta > 0.0) {
        return Err(Error::domain("delta must be positive"));
    }
    let n_so = 2 * cdf.n_orb();
    if n_so > MAX_DENSE_SPIN_ORBITALS {
        return Err(Error::Capacity { dim: n_so, cap: MAX_DENSE_SPIN_ORBITALS });
    }
    let cdf64 = cdf.cast::<f64>();
    let cval = y3_norm_exact(&cdf64)?;
    let h = cdf64.to_hamiltonian();
    let (exact, _) = eigh(&sector_hamiltonian(&h, &Sector::full(cdf64.n_orb())));

    let scaled = rescale_cdf(&cdf64, rescale);
    let u = TrotterCircuit::new(&scaled)?.unitary(delta);
    let (_, tri) = u.schur().unpack();
    let dt = delta * rescale.tau;
    let pi = std::f64::consts::PI;
    let wrap = |x: f64| x - 2.0 * pi * ((x + pi) / (2.0 * pi)).floor();
    let by_value = |a: &f64, b: &f64| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal);
    let mut theta: Vec<f64> = (0..tri.nrows()).map(|k| tri[(k, k)].im.atan2(tri[(k, k)].re)).collect();
    let mut phi: Vec<f64> = exact.iter().map(|&e| wrap(-dt * (e - rescale.e_ref))).collect();
    theta.sort_by(by_value);
    phi.sort_by(by_value);
    // pair the two sorted phase lists up to a cyclic shift, so that an
    // eigenphase crossing ±π does not misalign the rest
    let n = phi.len();
    let pair_err = |shift: isize| {
        (0..n).fold(0.0f64, |m, k| {
            let j = (k as isize + shift).rem_euclid(n as isize) as usize;
            m.max(wrap(theta[j] - phi[k]).abs())
        })
    };
    let shift = (-3isize..=3).min_by(|&a, &b| by_value(&pair_err(a), &pair_err(b))).unwrap_or(0);
    let mut flags = Vec::new();
    let mut excluded = 0;
    let mut max_bias = 0.0f64;
    for k in 0..n {
        let j = (k as isize + shift).rem_euclid(n as isize) as usize;
        if pi - theta[j].abs() < BRANCH_MARGIN || pi - phi[k].abs() < BRANCH_MARGIN {
            excluded += 1;
            continue;
        }
        max_bias = max_bias.max(wrap(theta[j] - phi[k]).abs() / dt);
    }
    if excluded > 0 {
        flags.push(Flag::new("branch_cut", format!("{excluded} eigenphases within {BRANCH_MARGIN:e} of ±π excluded")));
    }
    let bound = cval * rescale.tau * rescale.tau * delta * delta;
    Ok(BiasReport {
        delta,
        tau: rescale.tau,
        c: cval,
        bound,
        max_bias,
        n_compared: n - excluded,
        n_excluded: excluded,
        within_bound: max_bias <= bound,
        flags,
    })
}

/// Least-squares slope of `ln(bias)` against `ln(Δ)`.
pub fn convergence_order(deltas: &[f64], biases: &[f64]) -> f64 {
    let xs: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = biases.iter().map(|b| b.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// JSON report of the `trotter-audit` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub c_exact: Option<f64>,
    pub c_heuristic: f64,
    pub tau_l: f64,
    pub tau_r: f64,
    pub delta_max: f64,
    pub measured_max_bias: Option<f64>,
    pub bias_bound: Option<f64>,
    pub flags: Vec<Flag>,
}

/// Budget from both rescalings (the larger `τ` governs) and, when the system
/// is small enough, the dense bias check at `Δ_max` on both sides.
pub fn audit<T: Real>(cdf: &CdfFactorization<T>, window: &SpectralWindow<T>, xi: f64) -> Result<AuditReport> {
    let l = pad_and_rescale(window, Side::L);
    let r = pad_and_rescale(window, Side::R);
    let tau = l.tau.max(r.tau);
    let c_heur = f(y3_norm_heuristic(cdf));
    let dense = 2 * cdf.n_orb() <= MAX_DENSE_SPIN_ORBITALS;
    let c_exact = if dense { Some(f(y3_norm_exact(cdf)?)) } else { None };
    let mut flags = Vec::new();
    if !dense {
        flags.push(Flag::new("heuristic_c", "system too large for the dense third-order norm"));
    }
    let budget = delta_max(c_exact.unwrap_or(c_heur), xi, f(window.e_hi - window.e_lo), tau)?;
    let (mut bias, mut bound) = (None, None);
    if dense {
        for side in [l, r] {
            let rep = verify_bias(cdf, &side, budget.step())?;
            bias = Some(bias.unwrap_or(0.0f64).max(rep.max_bias));
            bound = Some(bound.unwrap_or(0.0f64).max(rep.bound));
            flags.extend(rep.flags);
        }
    }
    Ok(AuditReport {
        c_exact,
        c_heuristic: c_heur,
        tau_l: l.tau,
        tau_r: r.tau,
        delta_max: budget.delta_max,
        measured_max_bias: bias,
        bias_bound: bound,
        flags,
    })
}

/// Norm of the Hermitian part; exposed for diagnostics.
pub fn hermitian_part_norm<T: Real>(m: &DMatrix<Cx<T>>) -> T {
    spectral_norm(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorization::CdfFragment;
    use crate::linalg::{expm_hermitian, random_orthogonal, random_state, random_symmetric};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_cdf(n: usize, n_frag: usize, seed: u64) -> CdfFactorization<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        CdfFactorization {
            u0: random_orthogonal(n, &mut r),
            z0: (0..n).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect(),
            fragments: (0..n_frag)
                .map(|_| CdfFragment { u: random_orthogonal(n, &mut r), z: random_symmetric(n, &mut r) * 0.5 })
                .collect(),
            n_frag,
            e_core: -1.0,
            frob_error: 0.0,
            flags: vec![],
        }
    }

    fn commuting_cdf(n: usize, seed: u64) -> CdfFactorization<f64> {
        let mut cdf = random_cdf(n, 2, seed);
        let u = cdf.u0.clone();
        for fr in &mut cdf.fragments {
            fr.u = u.clone();
        }
        cdf
    }

    fn window(e_lo: f64, e_hi: f64, e_min: f64, e_max: f64) -> SpectralWindow<f64> {
        SpectralWindow::new(e_lo, e_hi, e_min, e_max, 0.01).unwrap()
    }

    fn dist(a: &[Cx<f64>], b: &[Cx<f64>]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn padding_examples() {
        let w = window(0.0, 1.0, -2.0, 2.0);
        let l = pad_and_rescale(&w, Side::L);
        assert_eq!(l.e_max_pad, 4.0);
        assert_eq!(l.lambda_pad, 6.0);
        assert!((l.tau - std::f64::consts::PI / 3.0).abs() < 1e-15);
        assert!((l.tau * l.lambda_pad - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        let m = window(0.0, 1.0, -1.0, 3.0);
        let r = pad_and_rescale(&m, Side::R);
        assert_eq!(r.e_min_pad, -3.0);
        assert_eq!(r.lambda_pad, 6.0);
        let sym = window(0.0, 0.5, -0.5, 1.5);
        assert_eq!(pad_and_rescale(&sym, Side::L).lambda_pad, 2.0);
    }

    #[test]
    fn delta_max_examples() {
        let b = delta_max(1.0, 0.1, 0.01, 1.0).unwrap();
        assert!((b.delta_max - 1e-3f64.sqrt()).abs() < 1e-12);
        assert_eq!(delta_max(0.0, 0.1, 0.01, 1.0).unwrap().delta_max, DELTA_CAP);
        let d2 = delta_max(1.0, 0.1, 0.01, 2.0).unwrap();
        assert!((d2.delta_max * 2.0 - b.delta_max).abs() < 1e-15);
        assert!(delta_max(-1.0, 0.1, 0.01, 1.0).is_err());
        assert!(delta_max(1.0, 0.7, 0.01, 1.0).is_err());
    }

    #[test]
    fn single_fragment_and_commuting_steps_are_exact() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for cdf in [random_cdf(2, 0, 1), commuting_cdf(2, 2)] {
            let h = cdf.to_hamiltonian();
            let dense = sector_hamiltonian(&h, &Sector::full(2));
            let psi = random_state::<f64>(16, &mut r);
            let out = trotter_step(&cdf, 0.3, &psi).unwrap();
            let exact = crate::linalg::apply(&expm_hermitian(&dense, 0.3), &psi);
            assert!(dist(&out, &exact) < 1e-12);
        }
    }

    #[test]
    fn second_order_convergence_against_dense_exponential() {
        let cdf = random_cdf(2, 1, 4);
        let dense = sector_hamiltonian(&cdf.to_hamiltonian(), &Sector::full(2));
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let psi = random_state::<f64>(16, &mut r);
        let circ = TrotterCircuit::new(&cdf).unwrap();
        // local error of one step is third order; track it at fixed total time
        let errs: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&d| {
                let steps = (0.4 / d) as usize;
                let mut x = psi.clone();
                for _ in 0..steps {
                    circ.step(d, &mut x);
                }
                dist(&x, &crate::linalg::apply(&expm_hermitian(&dense, 0.4), &psi))
            })
            .collect();
        let order = convergence_order(&[0.1, 0.05, 0.025], &errs);
        assert!((order - 2.0).abs() < 0.05, "order {order}");
    }

    #[test]
    fn step_is_unitary_over_many_steps() {
        let cdf = random_cdf(3, 2, 6);
        let circ = TrotterCircuit::new(&cdf).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let mut psi = random_state::<f64>(64, &mut r);
        for _ in 0..1000 {
            let before = crate::fock::norm(&psi);
            circ.step(0.05, &mut psi);
            assert!((crate::fock::norm(&psi) - before).abs() < 1e-12);
        }
        assert!((crate::fock::norm(&psi) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dense_fragments_sum_to_hamiltonian() {
        let cdf = random_cdf(2, 2, 8);
        let circ = TrotterCircuit::new(&cdf).unwrap();
        let mut sum = DMatrix::from_element(16, 16, czero());
        for m in circ.dense_fragments() {
            sum += m;
        }
        for i in 0..16 {
            sum[(i, i)] += cx(cdf.e_core, 0.0);
        }
        let h = sector_hamiltonian(&cdf.to_hamiltonian(), &Sector::full(2));
        assert!((sum - h).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn y3_commuting_and_two_fragment_oracle() {
        assert!(y3_norm_exact(&commuting_cdf(2, 9)).unwrap() < 1e-12);
        let single = random_cdf(2, 0, 10);
        assert!(y3_norm_exact(&single).unwrap() < 1e-12);
        assert_eq!(y3_norm_heuristic(&single), 0.0);
        // two fragments: the formula coincides with the nested expansion up to sign
        let cdf = random_cdf(2, 1, 11);
        let frags = TrotterCircuit::new(&cdf).unwrap().dense_fragments();
        let a = y3_matrix(&frags);
        let b = y3_nested_matrix(&frags);
        assert!((&a + &b).iter().all(|z| z.norm() < 1e-10));
        assert!((y3_norm_exact(&cdf).unwrap() - hermitian_part_norm(&b)).abs() < 1e-10);
        let cdf = random_cdf(2, 2, 15);
        let mut rev = cdf.clone();
        rev.fragments.reverse();
        let (x, y) = (y3_norm_exact(&cdf).unwrap(), y3_norm_exact(&rev).unwrap());
        assert!(x > 0.0 && y > 0.0 && (x - y).abs() > 1e-9);
    }

    #[test]
    fn heuristic_dominates_exact() {
        for seed in 0..50 {
            let cdf = random_cdf(3, 2, 100 + seed);
            let e = y3_norm_exact(&cdf).unwrap();
            assert!(y3_norm_heuristic(&cdf) >= e, "seed {seed}");
        }
        let cdf = commuting_cdf(2, 12);
        assert!(y3_norm_heuristic(&cdf) >= y3_norm_exact(&cdf).unwrap());
    }

    #[test]
    fn bias_within_bound_and_quarters_when_halved() {
        let cdf = random_cdf(2, 1, 13);
        let h = sector_hamiltonian(&cdf.to_hamiltonian(), &Sector::full(2));
        let (vals, _) = eigh(&h);
        let (lo, hi) = (vals[0], vals[vals.len() - 1]);
        let w = window(lo + 0.3 * (hi - lo), lo + 0.5 * (hi - lo), lo, hi);
        let rs = pad_and_rescale(&w, Side::L);
        let cval = y3_norm_exact(&cdf).unwrap();
        let b = delta_max(cval, 0.01, w.e_hi - w.e_lo, rs.tau).unwrap();
        assert!(b.delta_max < DELTA_CAP);
        let r1 = verify_bias(&cdf, &rs, b.delta_max).unwrap();
        assert!(r1.within_bound, "{r1:?}");
        assert!(r1.max_bias <= 0.01 * (w.e_hi - w.e_lo));
        let r2 = verify_bias(&cdf, &rs, b.delta_max / 2.0).unwrap();
        let ratio = r1.max_bias / r2.max_bias;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
        let zero = verify_bias(&commuting_cdf(2, 14), &rs, 0.1).unwrap();
        assert!(zero.max_bias < 1e-10);
    }
}
