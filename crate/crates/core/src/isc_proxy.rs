//! Evolution-proxy observable for intersystem crossing: fast-forwarded
//! one-body spin-orbit evolution, modified Hadamard readout and the
//! single-sided energy filter.

use nalgebra::{ComplexField, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Flag, Result};
use crate::fock::{apply_mode_phases, inner, norm, OrbitalRotation};
use crate::hamiltonian_io::ActiveSpaceHamiltonian;
use crate::linalg::{apply, eigh, hermitian_norm, hermiticity_defect};
use crate::manybody::{sector_hamiltonian, sector_s_squared, Sector};
use crate::qsp_filter::{FilterPolynomial, Orientation};
use crate::real::{c, cx, f, phase, Cx, Real};

/// Largest spin-orbital count the Fock-space routines accept.
pub const MAX_SPIN_ORBITALS: usize = 14;

/// Success probabilities below this are flagged.
pub const SUCCESS_FLOOR: f64 = 1e-6;

/// Default Hadamard-test sample count at accuracy 0.1 and γ = 0.7.
pub const S_HAD_DEFAULT: u64 = 483;

/// Precomputed diagonalization of a single-particle generator.
#[derive(Clone, Debug)]
pub struct FastForward<T: Real> {
    pub eigenvalues: Vec<T>,
    pub rotation: OrbitalRotation<T>,
    pub n_so: usize,
    /// Spectral norm of the single-particle matrix.
    pub h_norm: T,
}

impl<T: Real> FastForward<T> {
    pub fn new(h: &DMatrix<Cx<T>>) -> Result<Self> {
        let n_so = h.nrows();
        if h.ncols() != n_so {
            return Err(Error::domain("generator must be square"));
        }
        if n_so > MAX_SPIN_ORBITALS {
            return Err(Error::Capacity { dim: n_so, cap: MAX_SPIN_ORBITALS });
        }
        let defect = f(hermiticity_defect(h));
        if defect > 1e-10 {
            return Err(Error::domain(format!("generator not Hermitian (defect {defect:e})")));
        }
        let (eigenvalues, vecs) = eigh(h);
        let h_norm = eigenvalues.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        Ok(FastForward { eigenvalues, rotation: OrbitalRotation::decompose(&vecs), n_so, h_norm })
    }

    /// `e^{-itĤ}|ψ⟩ = lift(U₀) · Π_k e^{-itλ_k n_k} · lift(U₀)† |ψ⟩`.
    pub fn evolve(&self, t: T, state: &[Cx<T>]) -> Result<Vec<Cx<T>>> {
        if state.len() != 1usize << self.n_so {
            return Err(Error::domain(format!("state length {} is not 2^{}", state.len(), self.n_so)));
        }
        let mut psi = state.to_vec();
        self.rotation.apply_adjoint(&mut psi);
        let ph: Vec<Cx<T>> = self.eigenvalues.iter().map(|&l| phase(l * t)).collect();
        apply_mode_phases(&mut psi, &ph);
        self.rotation.apply(&mut psi);
        Ok(psi)
    }
}

/// One-shot convenience wrapper around [`FastForward`].
pub fn fast_forward_soc<T: Real>(h: &DMatrix<Cx<T>>, t: T, state: &[Cx<T>]) -> Result<Vec<Cx<T>>> {
    FastForward::new(h)?.evolve(t, state)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyResult {
    pub t: f64,
    pub matrix_element: (f64, f64),
    pub proxy_rate: f64,
    pub limit_estimate: Option<f64>,
    /// `|⟨f|H|i⟩|²`, the short-time target.
    pub coupling_sq: f64,
    /// `C` in `|limit − |⟨f|H|i⟩|²| ≤ C·t²`.
    pub remainder_c: f64,
}

fn check_normalized<T: Real>(v: &[Cx<T>], what: &str) -> Result<()> {
    let n = f(norm(v));
    let tol = if std::mem::size_of::<T>() == 4 { 1e-5 } else { 1e-10 };
    if (n - 1.0).abs() > tol {
        return Err(Error::domain(format!("{what} state not normalized (norm {n})")));
    }
    Ok(())
}

/// `k̃(t) = |⟨f|e^{-itH}|i⟩|²` and its `t → 0` ratio.
///
/// The reported `C` comes from the Taylor remainder
/// `‖e^{-itH} − 1 + itH + t²H²/2‖ ≤ (t‖H‖)³/6`:
/// `C = |Im(h₁*h₂)|/t + |h₂|²/4 + |h₁|‖H‖³/3 + t|h₂|‖H‖³/6 + t²‖H‖⁶/36`
/// with `h_k = ⟨f|Ĥ^k|i⟩`. The first term vanishes for spin-pure states
/// of opposite spin-flip parity.
pub fn proxy_rate<T: Real>(ff: &FastForward<T>, i_state: &[Cx<T>], f_state: &[Cx<T>], t: T) -> Result<ProxyResult> {
    check_normalized(i_state, "initial")?;
    check_normalized(f_state, "final")?;
    let evolved = ff.evolve(t, i_state)?;
    let m = inner(f_state, &evolved);
    let rate = f(m.norm_sqr());
    let tt = f(t);
    let (h1, h2) = moments(ff, i_state, f_state)?;
    let hn = f(ff.many_body_norm());
    let im = (h1.conj() * h2).im.abs();
    let (a1, a2) = (h1.modulus(), h2.modulus());
    let remainder_c = if tt > 0.0 {
        im / tt + a2 * a2 / 4.0 + a1 * hn.powi(3) / 3.0 + tt * a2 * hn.powi(3) / 6.0 + tt * tt * hn.powi(6) / 36.0
    } else {
        f64::INFINITY
    };
    Ok(ProxyResult {
        t: tt,
        matrix_element: (f(m.re), f(m.im)),
        proxy_rate: rate,
        limit_estimate: if tt > 0.0 { Some(rate / (tt * tt)) } else { None },
        coupling_sq: a1 * a1,
        remainder_c,
    })
}

/// Same as [`proxy_rate`] but fails when the limit cannot be formed.
pub fn proxy_limit<T: Real>(ff: &FastForward<T>, i_state: &[Cx<T>], f_state: &[Cx<T>], t: T) -> Result<ProxyResult> {
    if !(t > T::zero()) {
        return Err(Error::domain("t must be positive for the t → 0 ratio"));
    }
    proxy_rate(ff, i_state, f_state, t)
}

impl<T: Real> FastForward<T> {
    /// Many-body spectral norm bound: sum of |single-particle eigenvalues|
    /// over the occupied set maximizing it (all positive or all negative).
    pub fn many_body_norm(&self) -> T {
        let pos = self.eigenvalues.iter().filter(|v| **v > T::zero()).fold(T::zero(), |a, &b| a + b);
        let neg = self.eigenvalues.iter().filter(|v| **v < T::zero()).fold(T::zero(), |a, &b| a - b);
        pos.max(neg)
    }

    /// `Ĥ|ψ⟩` through the eigenbasis.
    pub fn apply_generator(&self, state: &[Cx<T>]) -> Result<Vec<Cx<T>>> {
        let mut psi = state.to_vec();
        self.rotation.apply_adjoint(&mut psi);
        for (b, z) in psi.iter_mut().enumerate() {
            let mut e = T::zero();
            for (k, &l) in self.eigenvalues.iter().enumerate() {
                if b >> k & 1 == 1 {
                    e += l;
                }
            }
            *z *= cx(e, T::zero());
        }
        self.rotation.apply(&mut psi);
        Ok(psi)
    }
}

fn moments<T: Real>(ff: &FastForward<T>, i: &[Cx<T>], fs: &[Cx<T>]) -> Result<(num_complex::Complex<f64>, num_complex::Complex<f64>)> {
    let hi = ff.apply_generator(i)?;
    let hhi = ff.apply_generator(&hi)?;
    let a = inner(fs, &hi);
    let b = inner(fs, &hhi);
    Ok((num_complex::Complex::new(f(a.re), f(a.im)), num_complex::Complex::new(f(b.re), f(b.im))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HadamardReadout {
    pub x_exp: f64,
    pub y_exp: f64,
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
    pub gamma: f64,
}

impl HadamardReadout {
    /// `(x + i y)·γ/(α*β)`
    pub fn recombine(&self) -> num_complex::Complex<f64> {
        let a = num_complex::Complex::new(self.alpha.0, self.alpha.1);
        let b = num_complex::Complex::new(self.beta.0, self.beta.1);
        num_complex::Complex::new(self.x_exp, self.y_exp) * self.gamma / (a.conj() * b)
    }
}

/// Exact ancilla expectations for the state
/// `(α|0⟩|f⟩ + β|1⟩|i⟩)/√(2γ)` with controlled `U(t)` on the `|1⟩` branch:
/// `⟨X⟩ + i⟨Y⟩ = (α*β/γ)·⟨f|U(t)|i⟩`, `γ = (|α|² + |β|²)/2`.
pub fn modified_hadamard<T: Real>(
    ff: &FastForward<T>,
    i_state: &[Cx<T>],
    f_state: &[Cx<T>],
    t: T,
    alpha: num_complex::Complex<f64>,
    beta: num_complex::Complex<f64>,
) -> Result<HadamardReadout> {
    let gamma = (alpha.norm_sqr() + beta.norm_sqr()) / 2.0;
    if !(gamma > 0.0) {
        return Err(Error::domain("γ = 0: both superposition weights vanish"));
    }
    let evolved = ff.evolve(t, i_state)?;
    let m = inner(f_state, &evolved);
    let z = alpha.conj() * beta / gamma * num_complex::Complex::new(f(m.re), f(m.im));
    Ok(HadamardReadout { x_exp: z.re, y_exp: z.im, alpha: (alpha.re, alpha.im), beta: (beta.re, beta.im), gamma })
}

/// Shot-sampled estimate of `(⟨X⟩, ⟨Y⟩)`, `s_had` draws for each basis.
pub fn sample_hadamard(readout: &HadamardReadout, s_had: u64, seed: u64) -> Result<(f64, f64)> {
    if s_had == 0 {
        return Err(Error::domain("s_had must be positive"));
    }
    let mut est = [0.0; 2];
    for (stream, (slot, mean)) in est.iter_mut().zip([readout.x_exp, readout.y_exp]).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        let p_plus = (1.0 + mean.clamp(-1.0, 1.0)) / 2.0;
        let plus = (0..s_had).filter(|_| rng.gen::<f64>() < p_plus).count() as f64;
        *slot = (2.0 * plus - s_had as f64) / s_had as f64;
    }
    Ok((est[0], est[1]))
}

#[derive(Clone, Debug)]
pub struct Projection<T: Real> {
    pub state: Vec<Cx<T>>,
    pub success_prob: f64,
    pub flags: Vec<Flag>,
}

/// Reweight eigen-amplitudes by a left-step filter at `e_cut`; the filter
/// argument is `(E − e_cut)/λ′` with `λ′` the larger distance from `e_cut`
/// to the spectral edges.
pub fn single_sided_projection<T: Real>(
    state: &[Cx<T>],
    h_dense: &DMatrix<Cx<T>>,
    e_cut: T,
    filter: &FilterPolynomial<T>,
) -> Result<Projection<T>> {
    if filter.orientation != Orientation::LeftStep {
        return Err(Error::domain("single-sided projection needs a left-step filter"));
    }
    if state.len() != h_dense.nrows() {
        return Err(Error::domain("state and Hamiltonian dimensions differ"));
    }
    let (vals, vecs) = eigh(h_dense);
    let (lo, hi) = (vals[0], vals[vals.len() - 1]);
    if e_cut < lo || e_cut > hi {
        return Err(Error::domain("e_cut outside the spectral support"));
    }
    let lam = (hi - e_cut).max(e_cut - lo).max(T::eps());
    let coeffs = vecs.adjoint() * nalgebra::DVector::from_column_slice(state);
    let mut filtered = coeffs.clone();
    for (k, z) in filtered.iter_mut().enumerate() {
        *z *= cx(filter.eval((vals[k] - e_cut) / lam), T::zero());
    }
    let success = filtered.iter().map(|z| f(z.norm_sqr())).sum::<f64>();
    let mut flags = Vec::new();
    if success < SUCCESS_FLOOR {
        flags.push(Flag::new("low_success", format!("success probability {success:e} below floor")));
    }
    if success > 0.0 {
        let s = c::<T>(success.sqrt());
        filtered.iter_mut().for_each(|z| *z /= cx(s, T::zero()));
    }
    let out = &vecs * filtered;
    Ok(Projection { state: out.iter().copied().collect(), success_prob: success, flags })
}

/// Reference spin states of an active-space Hamiltonian.
#[derive(Clone, Debug)]
pub struct SpinState<T: Real> {
    pub energy: T,
    pub s_squared: T,
    pub m_s: i32,
    /// Full Fock-space vector.
    pub state: Vec<Cx<T>>,
}

/// Eigenstates of `h` in the `(n_alpha, n_beta)` sector with definite `S²`.
/// Degenerate clusters are rotated to diagonalize `S²`.
pub fn spin_eigenstates<T: Real>(h: &ActiveSpaceHamiltonian<T>, n_alpha: usize, n_beta: usize) -> Vec<SpinState<T>> {
    let sec = Sector::spin(h.n_orb, n_alpha, n_beta);
    let hm = sector_hamiltonian(h, &sec);
    let s2 = sector_s_squared::<T>(&sec);
    let (vals, vecs) = eigh(&hm);
    let mut out = Vec::new();
    let tol = c::<T>(1e-8);
    let mut k = 0;
    while k < vals.len() {
        let mut end = k + 1;
        while end < vals.len() && vals[end] - vals[k] < tol {
            end += 1;
        }
        let block = vecs.columns(k, end - k).clone_owned();
        let s2_block = block.adjoint() * &s2 * &block;
        let (svals, svecs) = eigh(&s2_block);
        let rotated = &block * svecs;
        for j in 0..end - k {
            let col: Vec<Cx<T>> = rotated.column(j).iter().copied().collect();
            out.push(SpinState {
                energy: vals[k + j],
                s_squared: svals[j],
                m_s: n_alpha as i32 - n_beta as i32,
                state: sec.embed(&col),
            });
        }
        k = end;
    }
    out
}

/// Lowest state with spin `s` (0 or 1) and `2·M_s = ms2`; `skip` picks a
/// higher root (`skip = 1` gives the first excited singlet).
pub fn pick_spin_state<T: Real>(
    h: &ActiveSpaceHamiltonian<T>,
    n_elec: usize,
    s: u32,
    ms2: i32,
    skip: usize,
) -> Result<SpinState<T>> {
    let na = (n_elec as i32 + ms2) / 2;
    let nb = n_elec as i32 - na;
    if (n_elec as i32 + ms2) % 2 != 0 || na < 0 || nb < 0 || na as usize > h.n_orb || nb as usize > h.n_orb {
        return Err(Error::domain(format!("no sector for {n_elec} electrons with 2M_s = {ms2}")));
    }
    let target = (s * (s + 1)) as f64;
    spin_eigenstates(h, na as usize, nb as usize)
        .into_iter()
        .filter(|st| (f(st.s_squared) - target).abs() < 1e-6)
        .nth(skip)
        .ok_or_else(|| Error::domain(format!("no state with S = {s} (root {skip}) in the sector")))
}

/// Dense many-body matrix of a one-body generator (oracle use).
pub fn dense_generator<T: Real>(h: &DMatrix<Cx<T>>) -> DMatrix<Cx<T>> {
    crate::fock::dense_one_body(h)
}

/// Spectral norm of the lifted generator, by dense diagonalization.
pub fn dense_generator_norm<T: Real>(h: &DMatrix<Cx<T>>) -> T {
    hermitian_norm(&dense_generator(h))
}

/// `⟨f|Ĥ|i⟩` through the dense lift.
pub fn dense_coupling<T: Real>(h: &DMatrix<Cx<T>>, i: &[Cx<T>], fs: &[Cx<T>]) -> Cx<T> {
    inner(fs, &apply(&dense_generator(h), i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expm_hermitian, random_hermitian, random_state};
    use crate::qsp_filter::synthesize_heaviside;
    use crate::real::czero;

    fn basis(dim: usize, k: usize) -> Vec<Cx<f64>> {
        let mut v = vec![czero(); dim];
        v[k] = cx(1.0, 0.0);
        v
    }

    #[test]
    fn zero_time_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_hermitian::<f64>(4, &mut rng);
        let psi = random_state::<f64>(16, &mut rng);
        let out = fast_forward_soc(&h, 0.0, &psi).unwrap();
        let d: f64 = out.iter().zip(&psi).map(|(a, b)| (a - b).norm()).sum();
        assert!(d < 1e-13);
    }

    #[test]
    fn diagonal_generator_gives_occupied_phase() {
        let lam = [0.3, -0.2, 0.5];
        let h = DMatrix::from_fn(3, 3, |i, j| if i == j { cx(lam[i], 0.0) } else { czero() });
        let det = 0b101;
        let out = fast_forward_soc(&h, 2.0, &basis(8, det)).unwrap();
        let expect = phase(2.0 * (lam[0] + lam[2]));
        assert!((out[det] - expect).norm() < 1e-14);
    }

    #[test]
    fn matches_dense_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random_hermitian::<f64>(4, &mut rng);
        let psi = random_state::<f64>(16, &mut rng);
        let out = fast_forward_soc(&h, 0.7, &psi).unwrap();
        let dense = expm_hermitian(&dense_generator(&h), 0.7);
        let oracle = apply(&dense, &psi);
        let d: f64 = out.iter().zip(&oracle).map(|(a, b)| (a - b).norm()).sum();
        assert!(d < 1e-10);
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut h = DMatrix::from_element(2, 2, czero::<f64>());
        h[(0, 1)] = cx(1.0, 0.0);
        assert!(matches!(FastForward::new(&h), Err(Error::Domain(_))));
    }

    #[test]
    fn two_level_toy() {
        // one electron hopping between two modes: H = g(a†_0 a_1 + h.c.)
        let g = 0.05;
        let h = DMatrix::from_row_slice(2, 2, &[czero(), cx(g, 0.0), cx(g, 0.0), czero()]);
        let ff = FastForward::new(&h).unwrap();
        let (i, fs) = (basis(4, 0b01), basis(4, 0b10));
        for &t in &[0.5, 3.0, 20.0] {
            let r = proxy_rate(&ff, &i, &fs, t).unwrap();
            assert!((r.proxy_rate - (g * t).sin().powi(2)).abs() < 1e-14);
        }
        let r = proxy_limit(&ff, &i, &fs, 1e-3).unwrap();
        assert!((r.limit_estimate.unwrap() / (g * g) - 1.0).abs() < 1e-6);
        assert!(proxy_limit(&ff, &i, &fs, 0.0).is_err());

        let hr = modified_hadamard(&ff, &i, &fs, 4.0, 0.5f64.sqrt().into(), 0.5f64.sqrt().into()).unwrap();
        assert!(hr.x_exp.abs() < 1e-14);
        assert!((hr.y_exp + (g * 4.0).sin()).abs() < 1e-14);
    }

    #[test]
    fn orthogonal_eigenstates_never_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_hermitian::<f64>(2, &mut rng);
        let dense = dense_generator(&h);
        let (_, v) = eigh(&dense);
        let ff = FastForward::new(&h).unwrap();
        let a: Vec<_> = v.column(1).iter().copied().collect();
        let b: Vec<_> = v.column(2).iter().copied().collect();
        for &t in &[0.1, 1.0, 10.0] {
            assert!(proxy_rate(&ff, &a, &b, t).unwrap().proxy_rate < 1e-24);
        }
    }

    #[test]
    fn hadamard_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_hermitian::<f64>(3, &mut rng);
        let ff = FastForward::new(&h).unwrap();
        let i = random_state::<f64>(8, &mut rng);
        let fs = random_state::<f64>(8, &mut rng);
        let alpha = num_complex::Complex::new(0.6, 0.2);
        let beta = num_complex::Complex::new(-0.3, 0.7);
        let hr = modified_hadamard(&ff, &i, &fs, 1.3, alpha, beta).unwrap();
        let r = proxy_rate(&ff, &i, &fs, 1.3).unwrap();
        let m = num_complex::Complex::new(r.matrix_element.0, r.matrix_element.1);
        assert!((hr.recombine() - m).norm() < 1e-12);
        let bound = (alpha * beta).norm() / hr.gamma;
        assert!(hr.x_exp.powi(2) + hr.y_exp.powi(2) <= bound * bound + 1e-12);
        assert!(modified_hadamard(&ff, &i, &fs, 1.0, 0.0.into(), 0.0.into()).is_err());

        // identity evolution, orthogonal states
        let ff0 = FastForward::new(&DMatrix::from_element(3, 3, czero())).unwrap();
        let hr = modified_hadamard(&ff0, &basis(8, 1), &basis(8, 2), 1.0, 0.5f64.sqrt().into(), 0.5f64.sqrt().into()).unwrap();
        assert_eq!((hr.x_exp, hr.y_exp), (0.0, 0.0));

        let (x, y) = sample_hadamard(&hr, 483, 9).unwrap();
        assert!(x.abs() <= 1.0 && y.abs() <= 1.0);
        assert_eq!(sample_hadamard(&hr, 483, 9).unwrap(), (x, y));
    }

    #[test]
    fn single_sided_cases() {
        let eps = 0.01;
        let h = DMatrix::from_fn(4, 4, |i, j| if i == j { cx([-1.0, -0.8, 0.8, 1.0][i], 0.0) } else { czero() });
        let filt = synthesize_heaviside(0.2, eps, Orientation::LeftStep).unwrap();
        let below = basis(4, 0);
        let p = single_sided_projection(&below, &h, 0.0, &filt).unwrap();
        assert!(p.success_prob >= (1.0 - eps) * (1.0 - eps));
        let above = basis(4, 3);
        let p = single_sided_projection(&above, &h, 0.0, &filt).unwrap();
        assert!(p.success_prob <= eps * eps);
        let r = 0.5f64.sqrt();
        let split = vec![cx(r, 0.0), czero(), cx(r, 0.0), czero()];
        let p = single_sided_projection(&split, &h, 0.0, &filt).unwrap();
        assert!((p.success_prob - 0.5).abs() <= 2.0 * eps);
        assert!((norm(&p.state) - 1.0).abs() < 1e-12);
        assert!(single_sided_projection(&split, &h, 0.0, &filt.mirrored()).is_err());
    }

    #[test]
    fn singlet_and_triplet_references() {
        let mut h = ActiveSpaceHamiltonian::<f64>::zeros(2);
        h.t[(0, 0)] = -1.0;
        h.t[(1, 1)] = -0.5;
        h.t[(0, 1)] = 0.1;
        h.t[(1, 0)] = 0.1;
        h.set_v_sym(0, 0, 0, 0, 0.6);
        h.set_v_sym(1, 1, 1, 1, 0.5);
        h.set_v_sym(0, 0, 1, 1, 0.3);
        h.set_v_sym(0, 1, 0, 1, 0.1);
        let s1 = pick_spin_state(&h, 2, 0, 0, 1).unwrap();
        let t0 = pick_spin_state(&h, 2, 1, 0, 0).unwrap();
        let tp = pick_spin_state(&h, 2, 1, 2, 0).unwrap();
        assert!((t0.energy - tp.energy).abs() < 1e-10);
        assert!(inner(&s1.state, &t0.state).norm() < 1e-12);
    }
}
