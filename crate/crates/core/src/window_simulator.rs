//! Exact cumulative window absorption and Monte-Carlo simulation of the
//! threshold-projection estimator with double measurement.
//!
//! Window edges are absolute energies (same frame as the Hamiltonian); an
//! excitation-energy window `[ΔE_lo, ΔE_hi]` becomes `E_0 + [ΔE_lo, ΔE_hi]`.
//!
//! Shot seeding: shot `s` draws from `ChaCha8(seed)` on stream `s`, so every
//! shot is reproducible on its own and shots can run in any order.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Flag, Result};
use crate::linalg::eigh;
use crate::qsp_filter::{window_response, FilterPolynomial};
use crate::real::{c, f, Cx, Real};

/// Refuse dense problems larger than this unless overridden.
pub const DENSE_CAP: usize = 4096;

/// Eigenvalue gap below which the ground state counts as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralWindow<T: Real> {
    pub e_lo: T,
    pub e_hi: T,
    pub e_min: T,
    pub e_max: T,
    pub delta: T,
}

impl<T: Real> SpectralWindow<T> {
    pub fn new(e_lo: T, e_hi: T, e_min: T, e_max: T, delta: T) -> Result<Self> {
        if !(e_min <= e_lo && e_lo < e_hi && e_hi <= e_max) {
            return Err(Error::domain(format!(
                "window needs E_min ≤ E_lo < E_hi ≤ E_max, got {} {} {} {}",
                f(e_min),
                f(e_lo),
                f(e_hi),
                f(e_max)
            )));
        }
        if !(delta > T::zero() && delta < e_hi - e_lo) {
            return Err(Error::domain(format!("transition width {} must lie in (0, E_hi − E_lo)", f(delta))));
        }
        Ok(SpectralWindow { e_lo, e_hi, e_min, e_max, delta })
    }

    /// Window edges relative to a reference (ground) energy.
    pub fn from_excitation(e0: T, lo: T, hi: T, e_min: T, e_max: T, delta: T) -> Result<Self> {
        Self::new(e0 + lo, e0 + hi, e_min, e_max, delta)
    }

    /// Per-threshold normalization `λ′`: the smallest scale putting
    /// `[E_min, E_max]` inside `[-1, 1]` after shifting by `e_th`.
    pub fn normalization(&self, e_th: T) -> T {
        let lam = (self.e_max - e_th).max(e_th - self.e_min);
        if lam > T::zero() {
            lam
        } else {
            T::one()
        }
    }

    /// Filter width `Δ/λ′` needed at threshold `e_th`.
    pub fn required_width(&self, e_th: T) -> T {
        self.delta / self.normalization(e_th)
    }

    pub fn shifted(&self, by: T) -> Self {
        SpectralWindow {
            e_lo: self.e_lo + by,
            e_hi: self.e_hi + by,
            e_min: self.e_min + by,
            e_max: self.e_max + by,
            delta: self.delta,
        }
    }

    pub fn contains(&self, e: T) -> bool {
        e >= self.e_lo && e <= self.e_hi
    }

    pub fn cast<U: Real>(&self) -> SpectralWindow<U> {
        SpectralWindow {
            e_lo: c(f(self.e_lo)),
            e_hi: c(f(self.e_hi)),
            e_min: c(f(self.e_min)),
            e_max: c(f(self.e_max)),
            delta: c(f(self.delta)),
        }
    }
}

/// `D|E_0⟩/√𝒩_D` expanded in the eigenbasis of H.
#[derive(Clone, Debug, PartialEq)]
pub struct DipoleState<T: Real> {
    pub amplitudes: Vec<Cx<T>>,
    pub energies: Vec<T>,
    pub norm_d: T,
}

impl<T: Real> DipoleState<T> {
    pub fn weights(&self) -> Vec<T> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Absorption<T: Real> {
    pub a_window: T,
    pub p_window: T,
    pub norm_d: T,
    pub ground_energy: T,
    pub flags: Vec<Flag>,
}

/// Diagonalized system with the dipole-weighted state attached.
#[derive(Clone, Debug)]
pub struct WindowSystem<T: Real> {
    pub energies: Vec<T>,
    /// Per dipole component: squared transition moments `|⟨E_f|D_c|E_0⟩|²`.
    pub strengths: Vec<Vec<T>>,
    pub flags: Vec<Flag>,
}

impl<T: Real> WindowSystem<T> {
    /// Eigendecompose `h` and collect the transition strengths of every
    /// dipole component. The ground state is the first eigenvector after a
    /// stable ascending sort.
    pub fn new(h: &DMatrix<Cx<T>>, dipoles: &[DMatrix<Cx<T>>]) -> Result<Self> {
        Self::with_cap(h, dipoles, DENSE_CAP)
    }

    pub fn with_cap(h: &DMatrix<Cx<T>>, dipoles: &[DMatrix<Cx<T>>], cap: usize) -> Result<Self> {
        let dim = h.nrows();
        if dim == 0 || h.ncols() != dim {
            return Err(Error::domain("Hamiltonian must be square and non-empty"));
        }
        if dim > cap {
            return Err(Error::Capacity { dim, cap });
        }
        if dipoles.iter().any(|d| d.shape() != (dim, dim)) {
            return Err(Error::domain("dipole and Hamiltonian dimensions differ"));
        }
        let (energies, vecs) = eigh(h);
        let mut flags = Vec::new();
        if dim > 1 && f(energies[1] - energies[0]) < DEGENERACY_TOL {
            flags.push(Flag::new(
                "degenerate_ground",
                format!("ground gap {:e}; lowest-index eigenvector used", f(energies[1] - energies[0])),
            ));
        }
        let g = vecs.column(0).clone_owned();
        let strengths = dipoles
            .iter()
            .map(|d| {
                let dg = d * &g;
                let amp = vecs.adjoint() * dg;
                amp.iter().map(|z| z.norm_sqr()).collect()
            })
            .collect();
        Ok(WindowSystem { energies, strengths, flags })
    }

    /// Summed strengths over components.
    pub fn total_strengths(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.energies.len()];
        for s in &self.strengths {
            for (o, x) in out.iter_mut().zip(s) {
                *o += *x;
            }
        }
        out
    }

    pub fn absorption(&self, window: &SpectralWindow<T>) -> Absorption<T> {
        let tot = self.total_strengths();
        let norm_d = tot.iter().fold(T::zero(), |a, &b| a + b);
        let a_window = self
            .energies
            .iter()
            .zip(&tot)
            .filter(|(e, _)| window.contains(**e))
            .fold(T::zero(), |a, (_, &s)| a + s);
        let p_window = if norm_d > T::zero() { a_window / norm_d } else { T::zero() };
        Absorption { a_window, p_window, norm_d, ground_energy: self.energies[0], flags: self.flags.clone() }
    }

    /// Normalized dipole state (single component or component sum of weights).
    pub fn dipole_state(&self, component: usize) -> DipoleState<T> {
        let s = &self.strengths[component];
        let norm_d = s.iter().fold(T::zero(), |a, &b| a + b);
        let amplitudes = s
            .iter()
            .map(|&w| Cx::new(if norm_d > T::zero() { (w / norm_d).sqrt() } else { T::zero() }, T::zero()))
            .collect();
        DipoleState { amplitudes, energies: self.energies.clone(), norm_d }
    }
}

/// `A_window = Σ_{E_f ∈ window} |⟨E_f|D|E_0⟩|²` and `P_window = A_window/𝒩_D`.
pub fn exact_window_absorption<T: Real>(
    h: &DMatrix<Cx<T>>,
    d: &DMatrix<Cx<T>>,
    window: &SpectralWindow<T>,
) -> Result<Absorption<T>> {
    Ok(WindowSystem::new(h, std::slice::from_ref(d))?.absorption(window))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub eps_samp: f64,
    pub delta_samp: f64,
    pub s: u64,
    pub s_dm: u64,
}

/// Hoeffding shot count `S = ⌈ln(2/δ)/(2ε²)⌉` and `S_dm = ⌈S/2⌉`.
pub fn build_sampling_plan(eps_samp: f64, delta_samp: f64) -> Result<SamplingPlan> {
    if !(eps_samp > 0.0 && eps_samp < 1.0) {
        return Err(Error::domain(format!("eps_samp {eps_samp} outside (0, 1)")));
    }
    if !(delta_samp > 0.0 && delta_samp < 1.0) {
        return Err(Error::domain(format!("delta_samp {delta_samp} outside (0, 1)")));
    }
    let s = ((2.0 / delta_samp).ln() / (2.0 * eps_samp * eps_samp)).ceil() as u64;
    Ok(SamplingPlan { eps_samp, delta_samp, s, s_dm: s.div_ceil(2) })
}

/// Spectral response used for the first Bernoulli of each shot.
#[derive(Clone, Debug)]
pub enum Filters<'a, T: Real> {
    Polynomial { left: &'a FilterPolynomial<T>, right: &'a FilterPolynomial<T> },
    /// Ideal indicator of the window.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub interval: (f64, f64),
    pub half_width: f64,
    pub shots: u64,
    pub bernoullis: u64,
    pub successes: u64,
    /// Success probability of the filtered measurement, `Σ_f w_f pL·pR`.
    pub p_filtered: f64,
    pub seed: u64,
    pub flags: Vec<Flag>,
}

/// Response of every eigenstate and the filtered success probability.
pub fn filtered_responses<T: Real>(
    energies: &[T],
    weights: &[T],
    window: &SpectralWindow<T>,
    filters: &Filters<'_, T>,
) -> Result<(Vec<f64>, f64, Vec<Flag>)> {
    let mut flags = Vec::new();
    let q: Vec<f64> = match filters {
        Filters::Exact => energies.iter().map(|&e| if window.contains(e) { 1.0 } else { 0.0 }).collect(),
        Filters::Polynomial { left, right } => {
            let tol = 1.0 + 1e-9;
            if left.transition_width > f(window.required_width(window.e_hi)) * tol
                || right.transition_width > f(window.required_width(window.e_lo)) * tol
            {
                return Err(Error::domain("filters are not certified at the window's Δ/λ′"));
            }
            let mut band = 0usize;
            let v = energies
                .iter()
                .map(|&e| {
                    let r = window_response(left, right, e, window);
                    if r.flags.iter().any(|fl| fl.code == "transition_band") {
                        band += 1;
                    }
                    f(r.value).clamp(0.0, 1.0)
                })
                .collect();
            if band > 0 {
                flags.push(Flag::new("transition_band", format!("{band} eigenvalue(s) inside a transition band")));
            }
            v
        }
    };
    let p = q.iter().zip(weights).map(|(qi, &w)| qi * f(w)).sum::<f64>();
    Ok((q, p, flags))
}

/// Shot-by-shot simulation. Each shot samples an eigenstate from the dipole
/// state, draws the projection outcome with probability `q_f`, then the
/// un-preparation overlap: it succeeds with probability `P` after an
/// in-window outcome and `1 − P` otherwise. The second in-window bit is the
/// overlap outcome after an in-window result and its complement otherwise,
/// so both bits are Bernoulli(`P`).
pub fn simulate_shots<T: Real>(
    system: &WindowSystem<T>,
    window: &SpectralWindow<T>,
    filters: &Filters<'_, T>,
    plan: &SamplingPlan,
    seed: u64,
) -> Result<Estimate> {
    if plan.s_dm == 0 {
        return Err(Error::domain("sampling plan has no shots"));
    }
    let weights = system.total_strengths();
    let norm = weights.iter().map(|&w| f(w)).sum::<f64>();
    if !(norm > 0.0) {
        return Err(Error::domain("dipole state has zero norm"));
    }
    let w_norm: Vec<T> = weights.iter().map(|&w| c::<T>(f(w) / norm)).collect();
    let (q, p_filtered, mut flags) = filtered_responses(&system.energies, &w_norm, window, filters)?;
    flags.extend(system.flags.iter().cloned());

    let mut cdf = Vec::with_capacity(w_norm.len());
    let mut acc = 0.0;
    for w in &w_norm {
        acc += f(*w);
        cdf.push(acc);
    }
    let successes: u64 = (0..plan.s_dm).map(|shot| one_shot(seed, shot, &cdf, &q, p_filtered)).sum();
    let n = 2 * plan.s_dm;
    let estimate = successes as f64 / n as f64;
    let half_width = ((2.0 / plan.delta_samp).ln() / (2.0 * n as f64)).sqrt();
    Ok(Estimate {
        estimate,
        interval: ((estimate - half_width).max(0.0), (estimate + half_width).min(1.0)),
        half_width,
        shots: plan.s_dm,
        bernoullis: n,
        successes,
        p_filtered,
        seed,
        flags,
    })
}

fn one_shot(seed: u64, shot: u64, cdf: &[f64], q: &[f64], p: f64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shot);
    let u: f64 = rng.gen::<f64>() * cdf[cdf.len() - 1];
    let fidx = cdf.partition_point(|&x| x <= u).min(cdf.len() - 1);
    let first = rng.gen::<f64>() < q[fidx];
    let overlap_p = if first { p } else { 1.0 - p };
    let overlap = rng.gen::<f64>() < overlap_p;
    let second = if first { overlap } else { !overlap };
    first as u64 + second as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::to_complex;

    fn three_level() -> (DMatrix<Cx<f64>>, DMatrix<Cx<f64>>) {
        let h = to_complex(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, 0.06, 0.3])));
        let mut d = DMatrix::<f64>::zeros(3, 3);
        d[(0, 1)] = 0.7;
        d[(1, 0)] = 0.7;
        (h, to_complex(&d))
    }

    #[test]
    fn plan_values() {
        let p = build_sampling_plan(0.1, 0.01).unwrap();
        assert_eq!((p.s, p.s_dm), (265, 133));
        let p = build_sampling_plan(0.999_999, 0.01).unwrap();
        assert_eq!(p.s, 3);
        let p = build_sampling_plan(0.5, 1.0 - 1e-9).unwrap();
        assert_eq!(p.s, ((2.0f64 / (1.0 - 1e-9)).ln() / 0.5).ceil() as u64);
        assert!(build_sampling_plan(0.0, 0.1).is_err());
        assert!(build_sampling_plan(0.1, 1.0).is_err());
    }

    #[test]
    fn three_level_hand_case() {
        let (h, d) = three_level();
        let w = SpectralWindow::new(0.05, 0.07, 0.0, 0.3, 0.005).unwrap();
        let a = exact_window_absorption(&h, &d, &w).unwrap();
        assert!((a.a_window - 0.49).abs() < 1e-14);
        assert!((a.p_window - 1.0).abs() < 1e-14);
    }

    #[test]
    fn full_and_disjoint_windows() {
        let (h, d) = three_level();
        let full = SpectralWindow::new(0.0, 0.3, 0.0, 0.3, 0.01).unwrap();
        assert!((exact_window_absorption(&h, &d, &full).unwrap().p_window - 1.0).abs() < 1e-14);
        let none = SpectralWindow::new(0.1, 0.2, 0.0, 0.3, 0.01).unwrap();
        let a = exact_window_absorption(&h, &d, &none).unwrap();
        assert_eq!((a.a_window, a.p_window), (0.0, 0.0));
    }

    #[test]
    fn window_validation() {
        assert!(SpectralWindow::new(0.2, 0.1, 0.0, 1.0, 0.01).is_err());
        assert!(SpectralWindow::new(0.1, 0.2, 0.0, 1.0, 0.2).is_err());
        assert!(SpectralWindow::new(-0.1, 0.2, 0.0, 1.0, 0.01).is_err());
    }

    #[test]
    fn degenerate_ground_is_flagged() {
        let h = to_complex(&DMatrix::<f64>::identity(2, 2));
        let d = to_complex(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let w = SpectralWindow::new(0.5, 1.5, 0.0, 2.0, 0.1).unwrap();
        let a = exact_window_absorption(&h, &d, &w).unwrap();
        assert!(a.flags.iter().any(|fl| fl.code == "degenerate_ground"));
    }

    #[test]
    fn dense_cap_refuses() {
        let h = DMatrix::from_element(3, 3, Cx::new(0.0, 0.0));
        assert!(matches!(WindowSystem::with_cap(&h, &[], 2), Err(Error::Capacity { .. })));
    }

    #[test]
    fn certain_outcomes() {
        let (h, d) = three_level();
        let sys = WindowSystem::new(&h, &[d]).unwrap();
        let plan = build_sampling_plan(0.1, 0.01).unwrap();
        let inside = SpectralWindow::new(0.05, 0.07, 0.0, 0.3, 0.005).unwrap();
        let e = simulate_shots(&sys, &inside, &Filters::Exact, &plan, 1).unwrap();
        assert_eq!(e.estimate, 1.0);
        let outside = SpectralWindow::new(0.1, 0.2, 0.0, 0.3, 0.005).unwrap();
        let e = simulate_shots(&sys, &outside, &Filters::Exact, &plan, 1).unwrap();
        assert_eq!(e.estimate, 0.0);
        let empty = SamplingPlan { s_dm: 0, ..plan };
        assert!(simulate_shots(&sys, &outside, &Filters::Exact, &empty, 1).is_err());
    }
}
