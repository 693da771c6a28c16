//! Logical resource estimates (qubits, Toffoli gates, shots) for the
//! threshold-projection, evolution-proxy, Trotterized and vibronic pipelines.
//!
//! Every Toffoli total is the sum of named breakdown items, each carrying the
//! formula it evaluates. Counts are integers throughout so estimates are
//! bit-reproducible.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Flag, Result};
use crate::qsp_filter::{fit_degree, synthesize_heaviside, Orientation};
use crate::trotter_engine::{delta_max, TrotterBudget};
use crate::window_simulator::build_sampling_plan;

pub const DEFAULT_EPS: f64 = 1.6e-4;
pub const DEFAULT_DETERMINANTS: u64 = 10_000;
/// Fixed Toffoli overhead per walk (controls and flag logic).
pub const WALK_CONTROL_TOFFOLI: u64 = 10;
/// Fixed walk ancillas beyond the itemized registers.
pub const WALK_CONSTANT_QUBITS: u64 = 8;

fn ceil_log2(x: u64) -> u64 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionBits {
    pub aleph: u64,
    pub beth: u64,
    pub eps_coeff: f64,
    pub eps_rot: f64,
}

/// `ℵ = ⌈2.5 + log₂(λ′/ε_coeff)⌉`, `ℶ = ⌈5.625 + log₂(2λ′N/ε_rot)⌉`.
pub fn precision_bits(lambda_prime: f64, eps_coeff: f64, eps_rot: f64, n_orb: u64) -> Result<PrecisionBits> {
    if !(lambda_prime > 0.0 && eps_coeff > 0.0 && eps_rot > 0.0 && n_orb > 0) {
        return Err(Error::domain("precision inputs must be positive"));
    }
    let aleph = (2.5 + (lambda_prime / eps_coeff).log2()).ceil().max(1.0) as u64;
    let beth = (5.625 + (2.0 * lambda_prime * n_orb as f64 / eps_rot).log2()).ceil().max(3.0) as u64;
    Ok(PrecisionBits { aleph, beth, eps_coeff, eps_rot })
}

/// Sum-of-Slaters preparation: `L = ⌈log₂D⌉`,
/// Toffoli `(2L−2)·D + 2^{L+1} + D`, ancillas `5L − 3`, both clamped at zero.
pub fn sos_cost(d_dets: u64) -> Result<(u64, u64)> {
    if d_dets == 0 {
        return Err(Error::domain("need at least one determinant"));
    }
    let l = ceil_log2(d_dets) as i128;
    let d = d_dets as i128;
    let toffoli = ((2 * l - 2) * d + (1i128 << (l + 1)) + d).max(0);
    let anc = (5 * l - 3).max(0);
    Ok((toffoli as u64, anc as u64))
}

/// One qubitization walk over a rank-`M` THC factorization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkCostModel {
    pub m_rank: u64,
    pub n_orb: u64,
    pub batch_b: u64,
    pub l_theta: u64,
    pub qrom_calls: u64,
    pub prepare: u64,
    pub select: u64,
    pub reflection: u64,
    pub g_toffoli: u64,
    pub n_aux: u64,
}

/// Rotation angles loaded per SELECT: two basis rotations (μ and ν) of `2N`
/// angles each.
pub fn l_theta(n_orb: u64) -> u64 {
    4 * n_orb
}

/// PREPARE: alias sampling over `M(M+1)/2 + M` coefficients at `ℵ` bits.
/// SELECT: `2⌈L_θ/B⌉` QROM sweeps over `M` entries, `8N` Givens rotations at
/// `ℶ−2` Toffoli and `4N` controlled Majorana swaps. Reflection on the index
/// and keep registers, plus a constant control overhead.
///
/// Ancillas: two index registers `2⌈log₂(M+1)⌉`, the alias index, keep and
/// comparator registers `2ℵ`, angle scratch `B·ℶ`, phase gradient `ℶ` and
/// [`WALK_CONSTANT_QUBITS`].
pub fn walk_cost(m_rank: u64, n_orb: u64, bits: &PrecisionBits, batch_b: u64) -> Result<WalkCostModel> {
    if m_rank == 0 || n_orb == 0 {
        return Err(Error::domain("rank and orbital count must be positive"));
    }
    let lt = l_theta(n_orb);
    if batch_b == 0 || batch_b > lt {
        return Err(Error::domain(format!("batch {batch_b} outside [1, {lt}]")));
    }
    let n_coeff = m_rank * (m_rank + 1) / 2 + m_rank;
    let prepare = n_coeff + bits.aleph + ceil_log2(n_coeff);
    let qrom_calls = lt.div_ceil(batch_b);
    let select = 2 * qrom_calls * m_rank + 8 * n_orb * (bits.beth - 2) + 4 * n_orb;
    let index = ceil_log2(m_rank + 1);
    let reflection = bits.aleph + 2 * index;
    let g = 2 * prepare + select + reflection + WALK_CONTROL_TOFFOLI;
    let n_aux = 2 * index + ceil_log2(n_coeff) + 2 * bits.aleph + batch_b * bits.beth + bits.beth + WALK_CONSTANT_QUBITS;
    Ok(WalkCostModel {
        m_rank,
        n_orb,
        batch_b,
        l_theta: lt,
        qrom_calls,
        prepare,
        select,
        reflection,
        g_toffoli: g,
        n_aux,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakdownItem {
    pub name: String,
    pub formula: String,
    pub toffoli: u64,
}

impl BreakdownItem {
    pub fn new(name: &str, formula: &str, toffoli: u64) -> Self {
        BreakdownItem { name: name.into(), formula: formula.into(), toffoli }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub algorithm: String,
    pub logical_qubits: u64,
    pub toffoli_per_shot: u64,
    pub shots: u64,
    pub breakdown: Vec<BreakdownItem>,
    /// Intermediate quantities (degree, bit widths, step counts, ...).
    pub parameters: BTreeMap<String, f64>,
    pub flags: Vec<Flag>,
}

impl ResourceEstimate {
    fn assemble(algorithm: &str, logical_qubits: u64, shots: u64, breakdown: Vec<BreakdownItem>) -> Self {
        let toffoli_per_shot = breakdown.iter().map(|b| b.toffoli).sum();
        ResourceEstimate {
            algorithm: algorithm.into(),
            logical_qubits,
            toffoli_per_shot,
            shots,
            breakdown,
            parameters: BTreeMap::new(),
            flags: Vec::new(),
        }
    }

    fn param(mut self, key: &str, v: f64) -> Self {
        self.parameters.insert(key.into(), v);
        self
    }

    pub fn total_toffoli(&self) -> u64 {
        self.toffoli_per_shot.saturating_mul(self.shots)
    }

    /// Whether `toffoli_per_shot` equals the sum of the breakdown.
    pub fn breakdown_consistent(&self) -> bool {
        self.breakdown.iter().map(|b| b.toffoli).sum::<u64>() == self.toffoli_per_shot
    }

    pub fn csv_header() -> &'static str {
        "label,n_orb,logical_qubits,toffoli_per_shot,shots"
    }

    pub fn csv_row(&self, label: &str, n_orb: u64) -> String {
        format!("{label},{n_orb},{},{},{}", self.logical_qubits, self.toffoli_per_shot, self.shots)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegreeSource {
    /// Affine fit law in `λ′/Δ`.
    #[default]
    Fit,
    /// Degree of a certified synthesized filter.
    Synthesized,
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}
fn default_dets() -> u64 {
    DEFAULT_DETERMINANTS
}
fn default_batch() -> u64 {
    1
}
fn default_eps_h() -> f64 {
    0.01
}
fn default_eps_samp() -> f64 {
    0.1
}
fn default_delta_samp() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdInputs {
    pub n_orb: u64,
    pub m_rank: u64,
    pub lambda_prime: f64,
    /// Transition width `Δ` in Hartree.
    pub delta: f64,
    #[serde(default = "default_eps_h")]
    pub eps_h: f64,
    #[serde(default = "default_eps_samp")]
    pub eps_samp: f64,
    #[serde(default = "default_delta_samp")]
    pub delta_samp: f64,
    #[serde(default = "default_dets")]
    pub d_dets: u64,
    #[serde(default = "default_batch")]
    pub batch_b: u64,
    #[serde(default = "default_eps")]
    pub eps_coeff: f64,
    #[serde(default = "default_eps")]
    pub eps_rot: f64,
    #[serde(default)]
    pub degree_source: DegreeSource,
}

impl ThresholdInputs {
    pub fn new(n_orb: u64, m_rank: u64, lambda_prime: f64, delta: f64) -> Self {
        ThresholdInputs {
            n_orb,
            m_rank,
            lambda_prime,
            delta,
            eps_h: default_eps_h(),
            eps_samp: default_eps_samp(),
            delta_samp: default_delta_samp(),
            d_dets: DEFAULT_DETERMINANTS,
            batch_b: 1,
            eps_coeff: DEFAULT_EPS,
            eps_rot: DEFAULT_EPS,
            degree_source: DegreeSource::Fit,
        }
    }
}

/// Filter degree for width `Δ/λ′`.
pub fn filter_degree(lambda_prime: f64, delta: f64, eps_h: f64, source: DegreeSource) -> Result<u64> {
    if !(lambda_prime > 0.0 && delta > 0.0) {
        return Err(Error::domain("λ′ and Δ must be positive"));
    }
    match source {
        DegreeSource::Fit => fit_degree(lambda_prime / delta),
        DegreeSource::Synthesized => {
            Ok(synthesize_heaviside(delta / lambda_prime, eps_h, Orientation::RightStep)?.degree as u64)
        }
    }
}

/// `C_SoS + 2·d·G` per shot, `S_dm` shots, `2N + max(n_SoS, n_aux + 3)` qubits.
pub fn threshold_projection_estimate(inp: &ThresholdInputs) -> Result<ResourceEstimate> {
    let bits = precision_bits(inp.lambda_prime, inp.eps_coeff, inp.eps_rot, inp.n_orb)?;
    let walk = walk_cost(inp.m_rank, inp.n_orb, &bits, inp.batch_b)?;
    let d = filter_degree(inp.lambda_prime, inp.delta, inp.eps_h, inp.degree_source)?;
    let (c_sos, n_sos) = sos_cost(inp.d_dets)?;
    let plan = build_sampling_plan(inp.eps_samp, inp.delta_samp)?;
    let qubits = 2 * inp.n_orb + n_sos.max(walk.n_aux + 3);
    let est = ResourceEstimate::assemble(
        "threshold_projection",
        qubits,
        plan.s_dm,
        vec![
            BreakdownItem::new("state_prep", "C_SoS(D)", c_sos),
            BreakdownItem::new("projector_L", "d*G", d * walk.g_toffoli),
            BreakdownItem::new("projector_R", "d*G", d * walk.g_toffoli),
        ],
    );
    Ok(est
        .param("degree", d as f64)
        .param("aleph", bits.aleph as f64)
        .param("beth", bits.beth as f64)
        .param("g_toffoli", walk.g_toffoli as f64)
        .param("n_aux", walk.n_aux as f64)
        .param("n_sos", n_sos as f64)
        .param("qrom_calls", walk.qrom_calls as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionInputs {
    #[serde(flatten)]
    pub base: ThresholdInputs,
    /// Projection success amplitude.
    pub gamma: f64,
    #[serde(default = "default_s_had")]
    pub s_had: u64,
    /// Overrides the SOC evolution cost model.
    #[serde(default)]
    pub c_hsoc: Option<u64>,
}

fn default_s_had() -> u64 {
    crate::isc_proxy::S_HAD_DEFAULT
}

/// SOC evolution as a lifted one-body rotation over `2N` spin orbitals:
/// `(2N(2N−1) + 2N)·(ℶ−2)`.
pub fn c_hsoc(n_orb: u64, beth: u64) -> u64 {
    let m = 2 * n_orb;
    (m * (m - 1) + m) * (beth - 2)
}

/// `4·S_Had·[(C_SoS(2D) + C_proj)/γ² + C_HSOC]` with a single-sided
/// projector `C_proj = d·G`; qubits `2N + max(n_SoS(2D), n_aux + 2)`.
pub fn evolution_proxy_estimate(inp: &EvolutionInputs) -> Result<ResourceEstimate> {
    if !(inp.gamma > 0.0 && inp.gamma <= 1.0) {
        return Err(Error::domain(format!("gamma {} outside (0, 1]", inp.gamma)));
    }
    if inp.s_had == 0 {
        return Err(Error::domain("need at least one Hadamard-test sample"));
    }
    let b = &inp.base;
    let bits = precision_bits(b.lambda_prime, b.eps_coeff, b.eps_rot, b.n_orb)?;
    let walk = walk_cost(b.m_rank, b.n_orb, &bits, b.batch_b)?;
    let d = filter_degree(b.lambda_prime, b.delta, b.eps_h, b.degree_source)?;
    let (c_sos, n_sos) = sos_cost(2 * b.d_dets)?;
    let c_proj = d * walk.g_toffoli;
    let prep = (4.0 * (c_sos + c_proj) as f64 / (inp.gamma * inp.gamma)).ceil() as u64;
    let soc = 4 * inp.c_hsoc.unwrap_or_else(|| c_hsoc(b.n_orb, bits.beth));
    let qubits = 2 * b.n_orb + n_sos.max(walk.n_aux + 2);
    let est = ResourceEstimate::assemble(
        "evolution_proxy",
        qubits,
        inp.s_had,
        vec![
            BreakdownItem::new("state_prep", "4*(C_SoS(2D) + C_proj)/gamma^2", prep),
            BreakdownItem::new("soc_evolution", "4*C_HSOC", soc),
        ],
    );
    Ok(est
        .param("degree", d as f64)
        .param("gamma", inp.gamma)
        .param("aleph", bits.aleph as f64)
        .param("beth", bits.beth as f64)
        .param("g_toffoli", walk.g_toffoli as f64)
        .param("n_aux", walk.n_aux as f64)
        .param("n_sos", n_sos as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrotterInputs {
    pub n_orb: u64,
    /// Two-body fragment count `L`.
    pub n_frag: u64,
    /// Third-order error norm.
    pub c: f64,
    pub tau: f64,
    pub xi: f64,
    /// Energy bin width in Hartree.
    pub delta_e_bin: f64,
    pub degree: u64,
    #[serde(default = "default_dets")]
    pub d_dets: u64,
    #[serde(default = "default_eps")]
    pub eps_rot: f64,
    /// Scale entering the rotation precision.
    pub lambda_prime: f64,
    #[serde(default = "default_eps_samp")]
    pub eps_samp: f64,
    #[serde(default = "default_delta_samp")]
    pub delta_samp: f64,
}

/// Toffoli cost of one symmetric second-order step over `L+1` fragments.
///
/// The symmetric step applies `2(L+1) − 1` fragment exponentials. Each one
/// rotates into and out of its eigenbasis (`N(N−1)` Givens rotations per
/// rotation over both spins, two `ℶ−2` rotations per Givens) and applies
/// diagonal phases: `2N` single-mode phases for the one-body term and
/// `2N(2N−1)/2 + 2N` for a two-body fragment, each at `ℶ−2` Toffoli.
pub fn trotter_step_cost(n_orb: u64, n_frag: u64, beth: u64) -> u64 {
    let n = n_orb;
    let m = 2 * n;
    let rot = beth - 2;
    let basis = 2 * (n * n.saturating_sub(1)) * 2 * rot;
    let one_body = basis + m * rot;
    let two_body = basis + (m * (m - 1) / 2 + m) * rot;
    // outer fragments appear twice, the middle one once
    let apps_one = if n_frag == 0 { 1 } else { 2 };
    let apps_two = if n_frag == 0 { 0 } else { 2 * n_frag - 1 };
    apps_one * one_body + apps_two * two_body
}

/// `S_dm · [C_SoS(D) + 2·d·C_Trot]` with `C_Trot = ⌈1/Δ_max⌉` steps per unit
/// evolution; qubits `2N + max(n_SoS, ℶ + 3)`.
pub fn trotter_qpe_estimate(inp: &TrotterInputs) -> Result<ResourceEstimate> {
    let budget: TrotterBudget = delta_max(inp.c, inp.xi, inp.delta_e_bin, inp.tau)?;
    let bits = precision_bits(inp.lambda_prime, DEFAULT_EPS, inp.eps_rot, inp.n_orb)?;
    let steps = (1.0 / budget.step()).ceil() as u64;
    let per_step = trotter_step_cost(inp.n_orb, inp.n_frag, bits.beth);
    let c_trot = steps * per_step;
    let (c_sos, n_sos) = sos_cost(inp.d_dets)?;
    let plan = build_sampling_plan(inp.eps_samp, inp.delta_samp)?;
    let qubits = 2 * inp.n_orb + n_sos.max(bits.beth + 3);
    let mut est = ResourceEstimate::assemble(
        "trotter_qpe",
        qubits,
        plan.s_dm,
        vec![
            BreakdownItem::new("state_prep", "C_SoS(D)", c_sos),
            BreakdownItem::new("projector_L", "d*C_Trot", inp.degree * c_trot),
            BreakdownItem::new("projector_R", "d*C_Trot", inp.degree * c_trot),
        ],
    );
    if inp.c == 0.0 {
        est.flags.push(Flag::new("commuting_fragments", "zero third-order norm: step capped at one"));
    } else if budget.delta_max > budget.step() {
        est.flags.push(Flag::new("step_capped", format!("delta_max {} capped", budget.delta_max)));
    }
    Ok(est
        .param("steps", steps as f64)
        .param("delta_max", budget.delta_max)
        .param("per_step_toffoli", per_step as f64)
        .param("beth", bits.beth as f64)
        .param("n_sos", n_sos as f64))
}
