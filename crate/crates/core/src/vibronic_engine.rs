//! Grid-based spin-vibronic dynamics: linear/quadratic vibronic coupling
//! Hamiltonians on a position grid, split-operator propagation, triplet
//! population traces and initial-slope rates.
//!
//! Coordinates are dimensionless mass- and frequency-weighted, so the
//! reference surface is `Σ_r ω_r/2 (P_r² + Q_r²)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Flag, Result};
use crate::linalg::eigh_real;
use crate::resource_estimator::{BreakdownItem, ResourceEstimate};

type C64 = Complex<f64>;

/// Default cap on `N·K^M`.
pub const DIM_CAP: usize = 1 << 22;
/// Largest dimension handled by dense diagonalization.
pub const DENSE_CAP: usize = 2048;
/// Propagation aborts when the norm drifts further than this.
pub const NORM_ABORT: f64 = 1e-6;

/// Toffoli prefactor of the per-step scaling law.
pub const C_TOF: f64 = 0.45;
/// Ancilla prefactor of the per-step scaling law.
pub const C_ANC: f64 = 0.32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Multiplicity {
    #[serde(rename = "S")]
    Singlet,
    #[serde(rename = "T")]
    Triplet,
}

fn default_extent() -> f64 {
    8.0
}

/// `H = I_el ⊗ (T + V₀) + λ⁰ + Σ_r a_r Q_r + Σ_rs b_rs Q_r Q_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VibronicModel {
    pub spins: Vec<Multiplicity>,
    pub omegas: Vec<f64>,
    /// `N×N`
    pub lambda0: Vec<Vec<f64>>,
    /// `M` matrices of `N×N`; empty means zero.
    #[serde(default)]
    pub a_lin: Vec<Vec<Vec<f64>>>,
    /// `M×M` matrices of `N×N`; empty means zero.
    #[serde(default)]
    pub b_quad: Vec<Vec<Vec<Vec<f64>>>>,
    pub degree: u32,
    pub grid_k: usize,
    #[serde(default = "default_extent")]
    pub q_extent: f64,
}

impl VibronicModel {
    pub fn n_el(&self) -> usize {
        self.spins.len()
    }

    pub fn n_modes(&self) -> usize {
        self.omegas.len()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: VibronicModel = serde_json::from_str(text).map_err(|e| Error::Format(format!("vibronic model: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    /// Uncoupled model with every tensor zero.
    pub fn harmonic(spins: Vec<Multiplicity>, omegas: Vec<f64>, grid_k: usize) -> Self {
        let n = spins.len();
        VibronicModel {
            lambda0: vec![vec![0.0; n]; n],
            a_lin: Vec::new(),
            b_quad: Vec::new(),
            degree: 0,
            spins,
            omegas,
            grid_k,
            q_extent: default_extent(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_el();
        let m = self.n_modes();
        let bad = |s: String| Err(Error::Validation(s));
        if n == 0 || m == 0 {
            return bad("need at least one electronic state and one mode".into());
        }
        if self.omegas.iter().any(|&w| !(w > 0.0)) {
            return bad("mode frequencies must be positive".into());
        }
        if !self.grid_k.is_power_of_two() || self.grid_k < 2 {
            return bad(format!("grid_k = {} is not a power of two", self.grid_k));
        }
        if !(self.q_extent > 0.0) {
            return bad("q_extent must be positive".into());
        }
        if self.degree > 2 {
            return bad(format!("degree {} not in {{0,1,2}}", self.degree));
        }
        let check = |mat: &Vec<Vec<f64>>, what: &str| -> Result<()> {
            if mat.len() != n || mat.iter().any(|r| r.len() != n) {
                return Err(Error::Validation(format!("{what} must be {n}x{n}")));
            }
            for i in 0..n {
                for j in 0..n {
                    if (mat[i][j] - mat[j][i]).abs() > 1e-12 {
                        return Err(Error::Validation(format!("{what} not Hermitian at ({i},{j})")));
                    }
                }
            }
            Ok(())
        };
        check(&self.lambda0, "lambda0")?;
        if !self.a_lin.is_empty() {
            if self.a_lin.len() != m {
                return bad(format!("a_lin needs {m} mode blocks"));
            }
            for (r, a) in self.a_lin.iter().enumerate() {
                check(a, &format!("a_lin[{r}]"))?;
            }
        }
        if !self.b_quad.is_empty() {
            if self.b_quad.len() != m || self.b_quad.iter().any(|row| row.len() != m) {
                return bad(format!("b_quad needs {m}x{m} mode blocks"));
            }
            for r in 0..m {
                for s in 0..m {
                    check(&self.b_quad[r][s], &format!("b_quad[{r}][{s}]"))?;
                }
            }
        }
        Ok(())
    }

    /// Electronic coupling matrix `W′(Q)` at one geometry.
    fn coupling(&self, q: &[f64]) -> DMatrix<f64> {
        let n = self.n_el();
        let mut w = DMatrix::from_fn(n, n, |i, j| self.lambda0[i][j]);
        for (r, a) in self.a_lin.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    w[(i, j)] += a[i][j] * q[r];
                }
            }
        }
        for (r, row) in self.b_quad.iter().enumerate() {
            for (s, b) in row.iter().enumerate() {
                for i in 0..n {
                    for j in 0..n {
                        w[(i, j)] += b[i][j] * q[r] * q[s];
                    }
                }
            }
        }
        w
    }

    /// Connected components of the electronic coupling graph.
    fn blocks(&self) -> Vec<Vec<usize>> {
        let n = self.n_el();
        let mut coupled = vec![vec![false; n]; n];
        let mut mark = |mat: &Vec<Vec<f64>>| {
            for i in 0..n {
                for j in 0..n {
                    if i != j && mat[i][j] != 0.0 {
                        coupled[i][j] = true;
                    }
                }
            }
        };
        mark(&self.lambda0);
        self.a_lin.iter().for_each(&mut mark);
        self.b_quad.iter().flatten().for_each(&mut mark);
        let mut comp = vec![usize::MAX; n];
        let mut out = Vec::new();
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut stack = vec![s];
            let mut members = Vec::new();
            comp[s] = id;
            while let Some(i) = stack.pop() {
                members.push(i);
                for j in 0..n {
                    if coupled[i][j] && comp[j] == usize::MAX {
                        comp[j] = id;
                        stack.push(j);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }
}

/// Position-grid representation of a [`VibronicModel`].
pub struct VibronicGrid {
    pub model: VibronicModel,
    /// Grid coordinates of one mode.
    pub q: Vec<f64>,
    /// `K^M`
    pub n_grid: usize,
    /// `ω_r/2 · p_k²` in FFT order, per mode.
    kinetic: Vec<Vec<f64>>,
    /// Full potential `V₀ + W′` at each grid point.
    potential: Vec<DMatrix<f64>>,
    blocks: Vec<Vec<usize>>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for VibronicGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VibronicGrid").field("model", &self.model).field("n_grid", &self.n_grid).finish()
    }
}

pub fn build_vibronic(model: &VibronicModel) -> Result<VibronicGrid> {
    build_vibronic_capped(model, DIM_CAP)
}

pub fn build_vibronic_capped(model: &VibronicModel, cap: usize) -> Result<VibronicGrid> {
    model.validate()?;
    let k = model.grid_k;
    let m = model.n_modes();
    let n_grid = k.checked_pow(m as u32).filter(|g| g.checked_mul(model.n_el()).is_some_and(|d| d <= cap));
    let Some(n_grid) = n_grid else {
        return Err(Error::Capacity { dim: k.saturating_pow(m as u32).saturating_mul(model.n_el()), cap });
    };
    let h = 2.0 * model.q_extent / k as f64;
    let q: Vec<f64> = (0..k).map(|j| -model.q_extent + j as f64 * h).collect();
    let p: Vec<f64> = (0..k)
        .map(|j| {
            let s = if j < k / 2 { j as f64 } else { j as f64 - k as f64 };
            2.0 * std::f64::consts::PI * s / (k as f64 * h)
        })
        .collect();
    let kinetic = model.omegas.iter().map(|w| p.iter().map(|pk| 0.5 * w * pk * pk).collect()).collect();
    let mut coords = vec![0.0; m];
    let potential = (0..n_grid)
        .map(|g| {
            let mut rest = g;
            let mut v0 = 0.0;
            for r in 0..m {
                coords[r] = q[rest % k];
                rest /= k;
                v0 += 0.5 * model.omegas[r] * coords[r] * coords[r];
            }
            let mut w = model.coupling(&coords);
            for i in 0..model.n_el() {
                w[(i, i)] += v0;
            }
            w
        })
        .collect();
    let mut planner = FftPlanner::new();
    Ok(VibronicGrid {
        model: model.clone(),
        q,
        n_grid,
        kinetic,
        potential,
        blocks: model.blocks(),
        fft: planner.plan_fft_forward(k),
        ifft: planner.plan_fft_inverse(k),
    })
}

impl VibronicGrid {
    pub fn dim(&self) -> usize {
        self.n_grid * self.model.n_el()
    }

    /// Apply `e^{-i·dt·T}` to every electronic component.
    fn kinetic_phase(&self, psi: &mut [C64], dt: f64) {
        let k = self.model.grid_k;
        let norm = 1.0 / k as f64;
        let mut buf = vec![C64::new(0.0, 0.0); k];
        for (r, kin) in self.kinetic.iter().enumerate() {
            let ph: Vec<C64> = kin.iter().map(|&e| C64::from_polar(norm, -dt * e)).collect();
            let stride = k.pow(r as u32);
            for el in 0..self.model.n_el() {
                let base_el = el * self.n_grid;
                for outer in 0..self.n_grid / (stride * k) {
                    for inner in 0..stride {
                        let start = base_el + outer * stride * k + inner;
                        for j in 0..k {
                            buf[j] = psi[start + j * stride];
                        }
                        self.fft.process(&mut buf);
                        buf.iter_mut().zip(&ph).for_each(|(b, p)| *b *= p);
                        self.ifft.process(&mut buf);
                        for j in 0..k {
                            psi[start + j * stride] = buf[j];
                        }
                    }
                }
            }
        }
    }

    /// Exact `e^{-i·dt·V(Q)}` per grid point and coupling block.
    fn potential_propagators(&self, dt: f64) -> Vec<Vec<DMatrix<C64>>> {
        self.potential
            .iter()
            .map(|w| {
                self.blocks
                    .iter()
                    .map(|b| {
                        let sub = DMatrix::from_fn(b.len(), b.len(), |i, j| w[(b[i], b[j])]);
                        let (vals, vecs) = eigh_real(&sub);
                        let vc = vecs.map(|x| C64::new(x, 0.0));
                        let d = DMatrix::from_fn(b.len(), b.len(), |i, j| {
                            if i == j {
                                C64::from_polar(1.0, -dt * vals[i])
                            } else {
                                C64::new(0.0, 0.0)
                            }
                        });
                        &vc * d * vc.transpose()
                    })
                    .collect()
            })
            .collect()
    }

    fn apply_potential(&self, props: &[Vec<DMatrix<C64>>], psi: &mut [C64]) {
        let mut tmp = Vec::new();
        for (g, per_block) in props.iter().enumerate() {
            for (b, u) in self.blocks.iter().zip(per_block) {
                tmp.clear();
                tmp.extend(b.iter().map(|&i| psi[i * self.n_grid + g]));
                for (row, &i) in b.iter().enumerate() {
                    let mut acc = C64::new(0.0, 0.0);
                    for (col, x) in tmp.iter().enumerate() {
                        acc += u[(row, col)] * x;
                    }
                    psi[i * self.n_grid + g] = acc;
                }
            }
        }
    }

    /// Kinetic matrix of one mode: `(1/K) Σ_k cos(p_k (x_j − x_l)) ω/2 p_k²`.
    fn kinetic_matrix(&self, r: usize) -> DMatrix<f64> {
        let k = self.model.grid_k;
        let h = 2.0 * self.model.q_extent / k as f64;
        let kin = &self.kinetic[r];
        let w = self.model.omegas[r];
        DMatrix::from_fn(k, k, |j, l| {
            let d = (j as f64 - l as f64) * h;
            (0..k)
                .map(|m| {
                    let p = (2.0 * kin[m] / w).sqrt() * if m < k / 2 { 1.0 } else { -1.0 };
                    (p * d).cos() * kin[m]
                })
                .sum::<f64>()
                / k as f64
        })
    }

    /// Dense Hamiltonian (electronic index slowest, mode 0 fastest).
    pub fn dense_hamiltonian(&self) -> Result<DMatrix<f64>> {
        let dim = self.dim();
        if dim > DENSE_CAP {
            return Err(Error::Capacity { dim, cap: DENSE_CAP });
        }
        let k = self.model.grid_k;
        let n = self.model.n_el();
        let mut h = DMatrix::zeros(dim, dim);
        for r in 0..self.model.n_modes() {
            let t = self.kinetic_matrix(r);
            let stride = k.pow(r as u32);
            for el in 0..n {
                for g in 0..self.n_grid {
                    let j = (g / stride) % k;
                    let base = g - j * stride;
                    for l in 0..k {
                        h[(el * self.n_grid + g, el * self.n_grid + base + l * stride)] += t[(j, l)];
                    }
                }
            }
        }
        for (g, w) in self.potential.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    h[(i * self.n_grid + g, j * self.n_grid + g)] += w[(i, j)];
                }
            }
        }
        Ok(h)
    }

    /// Lowest eigenvalue by dense diagonalization.
    pub fn ground_energy(&self) -> Result<f64> {
        let h = self.dense_hamiltonian()?;
        Ok(eigh_real(&h).0[0])
    }

    /// `⟨ψ|H|ψ⟩` using the FFT kinetic term.
    pub fn energy(&self, psi: &[C64]) -> f64 {
        let mut e = 0.0;
        let k = self.model.grid_k;
        let mut buf = vec![C64::new(0.0, 0.0); k];
        for (r, kin) in self.kinetic.iter().enumerate() {
            let stride = k.pow(r as u32);
            for el in 0..self.model.n_el() {
                for outer in 0..self.n_grid / (stride * k) {
                    for inner in 0..stride {
                        let start = el * self.n_grid + outer * stride * k + inner;
                        for j in 0..k {
                            buf[j] = psi[start + j * stride];
                        }
                        self.fft.process(&mut buf);
                        e += buf.iter().zip(kin).map(|(b, t)| b.norm_sqr() * t).sum::<f64>() / k as f64;
                    }
                }
            }
        }
        let n = self.model.n_el();
        for (g, w) in self.potential.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    e += (psi[i * self.n_grid + g].conj() * psi[j * self.n_grid + g]).re * w[(i, j)];
                }
            }
        }
        e
    }

    /// Electronic amplitudes times the harmonic ground state of every mode,
    /// optionally displaced to `centers`.
    pub fn product_state(&self, electronic: &[C64], centers: Option<&[f64]>) -> Result<Vec<C64>> {
        let n = self.model.n_el();
        let m = self.model.n_modes();
        if electronic.len() != n {
            return Err(Error::domain(format!("need {n} electronic amplitudes")));
        }
        let k = self.model.grid_k;
        let mut vib = vec![1.0; self.n_grid];
        for (g, v) in vib.iter_mut().enumerate() {
            let mut rest = g;
            for r in 0..m {
                let q0 = centers.and_then(|c| c.get(r)).copied().unwrap_or(0.0);
                let x = self.q[rest % k] - q0;
                rest /= k;
                *v *= (-0.5 * x * x).exp();
            }
        }
        let vn = vib.iter().map(|x| x * x).sum::<f64>().sqrt();
        let en = electronic.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if en == 0.0 {
            return Err(Error::domain("electronic amplitudes vanish"));
        }
        let mut psi = Vec::with_capacity(self.dim());
        for z in electronic {
            psi.extend(vib.iter().map(|&v| z * (v / (vn * en))));
        }
        Ok(psi)
    }

    /// Population of triplet-labelled electronic states.
    pub fn triplet_population(&self, psi: &[C64]) -> f64 {
        self.model
            .spins
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Multiplicity::Triplet)
            .map(|(i, _)| psi[i * self.n_grid..(i + 1) * self.n_grid].iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    }

    /// Largest `dt` keeping the kinetic phase of the grid cutoff momentum
    /// below π.
    pub fn max_stable_dt(&self) -> f64 {
        let t_max: f64 = self.kinetic.iter().map(|k| k.iter().cloned().fold(0.0, f64::max)).sum();
        std::f64::consts::PI / t_max
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationTrace {
    pub times: Vec<f64>,
    pub p_t: Vec<f64>,
    pub norm_drift: f64,
}

/// Symmetric split-operator propagation `e^{-iT dt/2} e^{-iV dt} e^{-iT dt/2}`,
/// recording `P_T` after every step. Returns the trace and the final state.
pub fn propagate(grid: &VibronicGrid, psi0: &[C64], dt: f64, n_steps: usize) -> Result<(PopulationTrace, Vec<C64>)> {
    if psi0.len() != grid.dim() {
        return Err(Error::domain(format!("state length {} is not {}", psi0.len(), grid.dim())));
    }
    let stable = grid.max_stable_dt();
    if !(dt > 0.0) || dt > stable {
        return Err(Error::domain(format!("dt = {dt} outside (0, {stable:.3e}] set by the grid momentum cutoff")));
    }
    let props = grid.potential_propagators(dt);
    let mut psi = psi0.to_vec();
    let norm0 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut times = vec![0.0];
    let mut p_t = vec![grid.triplet_population(&psi) / (norm0 * norm0)];
    let mut drift = 0.0f64;
    for step in 1..=n_steps {
        grid.kinetic_phase(&mut psi, 0.5 * dt);
        grid.apply_potential(&props, &mut psi);
        grid.kinetic_phase(&mut psi, 0.5 * dt);
        let nrm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        drift = drift.max((nrm / norm0 - 1.0).abs());
        if drift > NORM_ABORT {
            return Err(Error::domain(format!("norm drift {drift:e} exceeds {NORM_ABORT:e} at step {step}")));
        }
        times.push(step as f64 * dt);
        p_t.push(grid.triplet_population(&psi) / (norm0 * norm0));
    }
    Ok((PopulationTrace { times, p_t, norm_drift: drift }, psi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub k_isc_vib: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub flags: Vec<Flag>,
}

/// Least-squares slope of `P_T` against `t` through the origin over
/// `t ∈ [t0, t1]`.
pub fn extract_rate(trace: &PopulationTrace, window: (f64, f64)) -> Result<RateFit> {
    let (t0, t1) = window;
    let last = trace.times.last().copied().unwrap_or(0.0);
    if !(t0 >= 0.0 && t1 > t0 && t1 <= last * (1.0 + 1e-12)) {
        return Err(Error::domain(format!("fit window [{t0}, {t1}] outside trace [0, {last}]")));
    }
    let pts: Vec<(f64, f64)> = trace
        .times
        .iter()
        .zip(&trace.p_t)
        .filter(|(t, _)| **t >= t0 && **t <= t1)
        .map(|(t, p)| (*t, *p))
        .collect();
    if pts.len() < 2 {
        return Err(Error::domain("fewer than two samples in the fit window"));
    }
    let stt: f64 = pts.iter().map(|(t, _)| t * t).sum();
    let stp: f64 = pts.iter().map(|(t, p)| t * p).sum();
    let slope = if stt > 0.0 { stp / stt } else { 0.0 };
    let mean = pts.iter().map(|(_, p)| p).sum::<f64>() / pts.len() as f64;
    let ss_tot: f64 = pts.iter().map(|(_, p)| (p - mean).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|(t, p)| (p - slope * t).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else if ss_res == 0.0 { 1.0 } else { 0.0 };
    let mut flags = Vec::new();
    if r2 < 0.9 {
        flags.push(Flag::new("poor_linear_fit", format!("R² = {r2:.4}")));
    }
    if pts.iter().any(|(_, p)| *p >= 0.1) {
        flags.push(Flag::new("large_population", "P_T reaches 0.1 inside the fit window"));
    }
    Ok(RateFit { k_isc_vib: slope, r_squared: r2, n_points: pts.len(), flags })
}

/// Logical cost of `n_steps` second-order steps:
/// per-step Toffoli `C_TOF·N·M^d·(d·(log₂K)² + N)`, ancillas
/// `⌈C_ANC·(d²·log₂K + ⌈log₂N⌉)⌉` on top of `M·log₂K + ⌈log₂N⌉` system qubits.
pub fn vibronic_resources(n_el: u64, m_modes: u64, grid_k: u64, degree: u32, n_steps: u64) -> Result<ResourceEstimate> {
    if n_el == 0 || m_modes == 0 || grid_k < 2 || n_steps == 0 {
        return Err(Error::domain("counts must be at least one (grid_k at least two)"));
    }
    let d = degree as f64;
    let log_k = (grid_k as f64).log2().ceil();
    let log_n = (n_el as f64).log2().ceil();
    let n = n_el as f64;
    let per_step = (C_TOF * n * (m_modes as f64).powi(degree as i32) * (d * log_k * log_k + n)).ceil() as u64;
    let ancillas = (C_ANC * (d * d * log_k + log_n)).ceil() as u64;
    let system = m_modes * log_k as u64 + log_n as u64;
    let mut est = ResourceEstimate {
        algorithm: "vibronic".into(),
        logical_qubits: ancillas + system,
        toffoli_per_shot: per_step * n_steps,
        shots: 1,
        breakdown: vec![BreakdownItem::new("trotter_steps", "steps*C_TOF*N*M^d*(d*log2(K)^2 + N)", per_step * n_steps)],
        parameters: Default::default(),
        flags: Vec::new(),
    };
    est.parameters.insert("per_step_toffoli".into(), per_step as f64);
    est.parameters.insert("ancillas".into(), ancillas as f64);
    est.parameters.insert("system_qubits".into(), system as f64);
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm_hermitian;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn two_state(lambda: f64, a_off: f64, k: usize) -> VibronicModel {
        let mut m = VibronicModel::harmonic(vec![Multiplicity::Singlet, Multiplicity::Triplet], vec![1.0], k);
        m.lambda0 = vec![vec![0.0, lambda], vec![lambda, 0.0]];
        if a_off != 0.0 {
            m.a_lin = vec![vec![vec![0.2, a_off], vec![a_off, -0.2]]];
            m.degree = 1;
        }
        m
    }

    #[test]
    fn harmonic_ground_energy_and_grid_convergence() {
        let m = VibronicModel::harmonic(vec![Multiplicity::Singlet], vec![0.7], 64);
        let e = build_vibronic(&m).unwrap().ground_energy().unwrap();
        assert!((e - 0.35).abs() < 1e-6, "{e}");
        let m2 = VibronicModel { grid_k: 128, ..m };
        let e2 = build_vibronic(&m2).unwrap().ground_energy().unwrap();
        assert!((e2 - e).abs() < 1e-8);
    }

    #[test]
    fn displaced_oscillator_shift() {
        let mut m = VibronicModel::harmonic(vec![Multiplicity::Singlet], vec![1.3], 64);
        m.a_lin = vec![vec![vec![0.4]]];
        m.degree = 1;
        let e = build_vibronic(&m).unwrap().ground_energy().unwrap();
        assert!((e - (0.65 - 0.16 / 2.6)).abs() < 1e-6, "{e}");
    }

    #[test]
    fn zero_coupling_gives_decoupled_copies_and_no_triplet() {
        let m = two_state(0.0, 0.0, 32);
        let g = build_vibronic(&m).unwrap();
        let (vals, _) = eigh_real(&g.dense_hamiltonian().unwrap());
        assert!((vals[0] - vals[1]).abs() < 1e-10 && (vals[0] - 0.5).abs() < 1e-6);
        let psi = g.product_state(&[c(1.0), c(0.0)], Some(&[1.0])).unwrap();
        let (tr, _) = propagate(&g, &psi, 0.05, 200).unwrap();
        assert!(tr.p_t.iter().all(|&p| p == 0.0));
        let fit = extract_rate(&tr, (0.0, 1.0)).unwrap();
        assert_eq!(fit.k_isc_vib, 0.0);
    }

    #[test]
    fn rabi_limit() {
        let lam = 0.03;
        let g = build_vibronic(&two_state(lam, 0.0, 32)).unwrap();
        let psi = g.product_state(&[c(1.0), c(0.0)], None).unwrap();
        let (tr, _) = propagate(&g, &psi, 0.1, 600).unwrap();
        for (t, p) in tr.times.iter().zip(&tr.p_t) {
            assert!((p - (lam * t).sin().powi(2)).abs() < 1e-4);
        }
        assert!(tr.norm_drift <= 1e-8);
        assert_eq!(tr.p_t[0], 0.0);
        // series oracle for the through-origin fit of sin²(λt)
        let fit = extract_rate(&tr, (0.0, 3.0)).unwrap();
        let pts: Vec<f64> = tr.times.iter().copied().filter(|&t| t <= 3.0).collect();
        let series = |t: f64| (lam * t).powi(2) - (lam * t).powi(4) / 3.0;
        let oracle = pts.iter().map(|t| t * series(*t)).sum::<f64>() / pts.iter().map(|t| t * t).sum::<f64>();
        assert!((fit.k_isc_vib / oracle - 1.0).abs() < 0.05);
    }

    #[test]
    fn splitting_error_is_second_order() {
        let g = build_vibronic(&two_state(0.05, 0.15, 16)).unwrap();
        let psi = g.product_state(&[c(1.0), c(0.0)], Some(&[0.5])).unwrap();
        let h = g.dense_hamiltonian().unwrap().map(c);
        let t_end = 2.0;
        let exact = crate::linalg::apply(&expm_hermitian(&h, t_end), &psi);
        let p_exact = g.triplet_population(&exact);
        let err = |dt: f64| {
            let (tr, _) = propagate(&g, &psi, dt, (t_end / dt).round() as usize).unwrap();
            (tr.p_t.last().unwrap() - p_exact).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn energy_drift_scales_quadratically() {
        let g = build_vibronic(&two_state(0.05, 0.15, 32)).unwrap();
        let psi = g.product_state(&[c(1.0), c(0.0)], Some(&[0.5])).unwrap();
        let e0 = g.energy(&psi);
        let drift = |dt: f64| {
            let (_, out) = propagate(&g, &psi, dt, (4.0 / dt).round() as usize).unwrap();
            (g.energy(&out) - e0).abs()
        };
        let (d1, d2) = (drift(0.1), drift(0.05));
        let slope = (d1 / d2).log2();
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn synthetic_exponential_rate() {
        let k = 0.02;
        let times: Vec<f64> = (0..=100).map(|i| i as f64 * 0.01).collect();
        let p_t = times.iter().map(|t| 1.0 - (-k * t).exp()).collect();
        let tr = PopulationTrace { times, p_t, norm_drift: 0.0 };
        let fit = extract_rate(&tr, (0.0, 1.0)).unwrap();
        assert!((fit.k_isc_vib / k - 1.0).abs() < 0.02);
        assert!(fit.flags.is_empty());
    }

    #[test]
    fn oscillatory_window_is_flagged() {
        let times: Vec<f64> = (0..=200).map(|i| i as f64 * 0.05).collect();
        let p_t = times.iter().map(|t| 0.05 * (1.0 + (3.0 * t).sin())).collect();
        let tr = PopulationTrace { times, p_t, norm_drift: 0.0 };
        let fit = extract_rate(&tr, (0.0, 10.0)).unwrap();
        assert!(fit.flags.iter().any(|f| f.code == "poor_linear_fit"));
    }

    #[test]
    fn dimension_cap_and_validation() {
        let m = VibronicModel::harmonic(vec![Multiplicity::Singlet; 2], vec![1.0; 12], 16);
        assert!(matches!(build_vibronic(&m), Err(Error::Capacity { .. })));
        let mut bad = VibronicModel::harmonic(vec![Multiplicity::Singlet], vec![1.0], 48);
        assert!(bad.validate().is_err());
        bad.grid_k = 64;
        bad.omegas[0] = -1.0;
        assert!(bad.validate().is_err());
        let json = r#"{"spins":["S","T"],"omegas":[0.01],"lambda0":[[0,1e-4],[1e-4,0.002]],"degree":0,"grid_k":32}"#;
        let m = VibronicModel::from_json(json).unwrap();
        assert_eq!(m.q_extent, 8.0);
    }

    #[test]
    fn resource_scaling_law() {
        let r = vibronic_resources(5, 19, 128, 2, 370_000).unwrap();
        assert_eq!(r.logical_qubits, 146);
        let ratio = r.toffoli_per_shot as f64 / 3.1e10;
        assert!((1.0 / 3.0..=3.0).contains(&ratio), "{ratio}");
        let d0 = vibronic_resources(5, 19, 128, 0, 1).unwrap();
        assert_eq!(d0.toffoli_per_shot, (C_TOF * 25.0f64).ceil() as u64);
        // d-dependent part scales with (log2 K)²
        let f = |k: u64| vibronic_resources(5, 19, k, 2, 1).unwrap().toffoli_per_shot as f64;
        let base = C_TOF * 5.0 * 361.0 * 5.0;
        let ratio = (f(256) - base) / (f(128) - base);
        assert!((ratio - 64.0 / 49.0).abs() < 1e-4);
    }
}
