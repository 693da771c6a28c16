//! Synthetic stand-ins for four photosensitizer active spaces.
//!
//! Each preset lists orbital counts and a seed; the integrals behind an
//! instance are random but reproducible, and only the summary quantities the
//! cost models need (THC rank, `λ′`, fragment norms) are kept.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::block_norm;
use crate::linalg::{eigh_real, random_symmetric};
use crate::resource_estimator::{filter_degree, DegreeSource, EvolutionInputs, ThresholdInputs, TrotterInputs};
use crate::trotter_engine::y3_bound_from_norms;

const BUNDLED: [(&str, &str); 4] = [
    ("bodipy-1", include_str!("../presets/bodipy-1.json")),
    ("bodipy-2", include_str!("../presets/bodipy-2.json")),
    ("bodipy-3", include_str!("../presets/bodipy-3.json")),
    ("bodipy-4", include_str!("../presets/bodipy-4.json")),
];

pub const DEFAULT_XI: f64 = 0.1;
pub const DEFAULT_GAMMA: f64 = 0.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub seed: u64,
    pub n_orb: Vec<u64>,
    /// THC rank per orbital.
    pub rank_factor: u64,
    /// Half-range of the synthetic core tensor entries (Hartree).
    pub z_scale: f64,
    /// Half-range of the synthetic one-body entries (Hartree).
    pub t_scale: f64,
    /// Filter transition width (Hartree).
    pub delta_ha: f64,
    pub window_nm: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetInstance {
    pub label: String,
    pub n_orb: u64,
    pub m_rank: u64,
    pub lambda_prime: f64,
    pub delta_ha: f64,
    pub n_frag: u64,
    /// Heuristic third-order Trotter norm from fragment 1-norms.
    pub c_trotter: f64,
    pub tau: f64,
    pub delta_e_bin: f64,
}

pub fn names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

/// Bundled preset by name, or a preset JSON file path.
pub fn load(name_or_path: &str) -> Result<Preset> {
    let text = match BUNDLED.iter().find(|(n, _)| *n == name_or_path) {
        Some((_, t)) => t.to_string(),
        None => std::fs::read_to_string(name_or_path)
            .map_err(|e| Error::Io { path: name_or_path.to_string(), source: e })?,
    };
    let p: Preset = serde_json::from_str(&text).map_err(|e| Error::Format(format!("preset: {e}")))?;
    if p.n_orb.is_empty() || p.n_orb.iter().any(|&n| n < 2) || p.rank_factor == 0 {
        return Err(Error::Validation(format!("preset {} needs orbital counts ≥ 2 and a positive rank", p.name)));
    }
    if !(p.z_scale > 0.0 && p.t_scale > 0.0 && p.delta_ha > 0.0) {
        return Err(Error::Validation(format!("preset {} has non-positive scales", p.name)));
    }
    Ok(p)
}

pub fn all() -> Vec<Preset> {
    names().into_iter().map(|n| load(n).expect("bundled preset")).collect()
}

fn one_body_norm(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> f64 {
    let t = random_symmetric::<f64>(n, rng) * scale;
    eigh_real(&t).0.iter().map(|e| e.abs()).sum()
}

fn core_norm(m: usize, scale: f64, rng: &mut ChaCha8Rng) -> f64 {
    let mut z = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let x: f64 = rng.gen_range(-1.0..1.0);
            z[(i, j)] = scale * x;
            z[(j, i)] = scale * x;
        }
    }
    block_norm(&z)
}

impl Preset {
    pub fn instances(&self) -> Vec<PresetInstance> {
        self.n_orb.iter().map(|&n| self.instance(n)).collect()
    }

    fn instance(&self, n_orb: u64) -> PresetInstance {
        let n = n_orb as usize;
        let m = (self.rank_factor * n_orb) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(1000).wrapping_add(n_orb));
        let t_norm = one_body_norm(n, self.t_scale, &mut rng);
        let lambda_prime = t_norm + core_norm(m, self.z_scale, &mut rng);
        // CDF picture: one-body term plus N two-body fragments
        let mut norms = vec![t_norm];
        norms.extend((0..n).map(|_| core_norm(n, self.z_scale * m as f64 / n as f64, &mut rng)));
        let e_lo = crate::nm_to_hartree(self.window_nm[1]);
        let e_hi = crate::nm_to_hartree(self.window_nm[0]);
        // spectrum bounded by the 1-norm on both sides
        let tau = 2.0 * std::f64::consts::PI / (2.0 * (lambda_prime + e_hi));
        PresetInstance {
            label: format!("{}/N{}", self.name, n_orb),
            n_orb,
            m_rank: m as u64,
            lambda_prime,
            delta_ha: self.delta_ha,
            n_frag: n_orb,
            c_trotter: y3_bound_from_norms(&norms),
            tau,
            delta_e_bin: e_hi - e_lo,
        }
    }
}

impl PresetInstance {
    pub fn threshold_inputs(&self) -> ThresholdInputs {
        ThresholdInputs::new(self.n_orb, self.m_rank, self.lambda_prime, self.delta_ha)
    }

    pub fn evolution_inputs(&self) -> EvolutionInputs {
        EvolutionInputs {
            base: self.threshold_inputs(),
            gamma: DEFAULT_GAMMA,
            s_had: crate::isc_proxy::S_HAD_DEFAULT,
            c_hsoc: None,
        }
    }

    pub fn trotter_inputs(&self, xi: f64) -> Result<TrotterInputs> {
        let t = self.threshold_inputs();
        Ok(TrotterInputs {
            n_orb: self.n_orb,
            n_frag: self.n_frag,
            c: self.c_trotter,
            tau: self.tau,
            xi,
            delta_e_bin: self.delta_e_bin,
            degree: filter_degree(self.lambda_prime, self.delta_ha, t.eps_h, DegreeSource::Fit)?,
            d_dets: t.d_dets,
            eps_rot: t.eps_rot,
            lambda_prime: self.lambda_prime,
            eps_samp: t.eps_samp,
            delta_samp: t.delta_samp,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resource_estimator::{evolution_proxy_estimate, threshold_projection_estimate, trotter_qpe_estimate};

    #[test]
    fn bundled_presets_load_with_expected_sizes() {
        let sizes: Vec<Vec<u64>> = all().iter().map(|p| p.n_orb.clone()).collect();
        assert_eq!(sizes, vec![vec![11, 15, 19], vec![11, 19, 35], vec![17, 21, 45], vec![16, 24, 30]]);
        assert!(load("no-such-preset").is_err());
    }

    #[test]
    fn instances_are_deterministic_and_monotone() {
        for p in all() {
            let a = p.instances();
            assert_eq!(a, p.instances());
            for w in a.windows(2) {
                assert!(w[1].lambda_prime > w[0].lambda_prime);
                assert!(w[1].c_trotter > w[0].c_trotter);
                let (t0, t1) = (w[0].threshold_inputs(), w[1].threshold_inputs());
                let (e0, e1) = (threshold_projection_estimate(&t0).unwrap(), threshold_projection_estimate(&t1).unwrap());
                assert!(e1.toffoli_per_shot >= e0.toffoli_per_shot && e1.logical_qubits >= e0.logical_qubits);
                let (v0, v1) = (
                    evolution_proxy_estimate(&w[0].evolution_inputs()).unwrap(),
                    evolution_proxy_estimate(&w[1].evolution_inputs()).unwrap(),
                );
                assert!(v1.total_toffoli() >= v0.total_toffoli());
                let (q0, q1) = (
                    trotter_qpe_estimate(&w[0].trotter_inputs(DEFAULT_XI).unwrap()).unwrap(),
                    trotter_qpe_estimate(&w[1].trotter_inputs(DEFAULT_XI).unwrap()).unwrap(),
                );
                assert!(q1.toffoli_per_shot >= q0.toffoli_per_shot);
            }
        }
    }
}
