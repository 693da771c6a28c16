use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use photoreact::hamiltonian_io::{parse_integral_text, write_hamiltonian, ActiveSpaceHamiltonian, LoadedSystem};
use photoreact::isc_proxy::FastForward;
use photoreact::linalg::{random_hermitian, random_state};
use photoreact::resource_estimator::{
    l_theta, precision_bits, sos_cost, threshold_projection_estimate, walk_cost, ThresholdInputs,
};
use photoreact::window_simulator::build_sampling_plan;
use photoreact::{nm_to_hartree, HC_HARTREE_NM};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shot_counts_are_hoeffding_ceilings(eps in 0.01f64..0.5, delta in 0.001f64..0.5) {
        let p = build_sampling_plan(eps, delta).unwrap();
        let raw = (2.0 / delta).ln() / (2.0 * eps * eps);
        prop_assert!(p.s as f64 >= raw && (p.s as f64) < raw + 1.0);
        prop_assert!(2 * p.s_dm >= p.s && 2 * p.s_dm <= p.s + 1);
    }

    #[test]
    fn precision_bits_follow_log_law(lam in 0.5f64..500.0, eps in 1e-6f64..1e-2, n in 2u64..80) {
        let b = precision_bits(lam, eps, eps, n).unwrap();
        prop_assert_eq!(b.aleph, (2.5 + (lam / eps).log2()).ceil() as u64);
        prop_assert_eq!(b.beth, (5.625 + (2.0 * lam * n as f64 / eps).log2()).ceil() as u64);
        let wider = precision_bits(2.0 * lam, eps, eps, n).unwrap();
        prop_assert_eq!(wider.aleph, b.aleph + 1);
    }

    #[test]
    fn batching_trades_depth_for_width(n in 4u64..50, m_factor in 1u64..8) {
        let bits = precision_bits(10.0, 1.6e-4, 1.6e-4, n).unwrap();
        let lt = l_theta(n);
        let m = m_factor * n;
        let mut prev = walk_cost(m, n, &bits, 1).unwrap();
        prop_assert_eq!(prev.qrom_calls, lt);
        for b in 2..=lt {
            let w = walk_cost(m, n, &bits, b).unwrap();
            prop_assert_eq!(w.qrom_calls, lt.div_ceil(b));
            prop_assert!(w.g_toffoli <= prev.g_toffoli);
            prop_assert!(w.n_aux > prev.n_aux);
            prev = w;
        }
        prop_assert_eq!(prev.qrom_calls, 1);
    }

    #[test]
    fn sos_cost_is_monotone(d in 1u64..1_000_000) {
        let (t0, q0) = sos_cost(d).unwrap();
        let (t1, q1) = sos_cost(2 * d).unwrap();
        prop_assert!(t1 >= t0 && q1 >= q0);
    }

    #[test]
    fn threshold_estimate_monotone_with_consistent_breakdown(
        n in 4u64..60, lam in 1.0f64..200.0, delta in 0.01f64..0.5,
    ) {
        let a = threshold_projection_estimate(&ThresholdInputs::new(n, 6 * n, lam, delta)).unwrap();
        let b = threshold_projection_estimate(&ThresholdInputs::new(n + 1, 6 * (n + 1), lam * 1.1, delta)).unwrap();
        prop_assert!(a.breakdown_consistent() && b.breakdown_consistent());
        prop_assert!(b.toffoli_per_shot >= a.toffoli_per_shot);
        prop_assert!(b.logical_qubits >= a.logical_qubits);
    }

    #[test]
    fn wavelength_conversion_inverts(nm in 100.0f64..2000.0) {
        let e = nm_to_hartree(nm);
        prop_assert!((HC_HARTREE_NM / e - nm).abs() <= 1e-9 * nm);
        prop_assert!(nm_to_hartree(nm + 1.0) < e);
    }

    #[test]
    fn integral_text_round_trips(n in 1usize..5, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = ActiveSpaceHamiltonian::<f64>::zeros(n);
        for p in 0..n {
            for q in 0..=p {
                let x = rng.gen_range(-1.0..1.0);
                h.t[(p, q)] = x;
                h.t[(q, p)] = x;
                for r in 0..n {
                    for s in 0..=r {
                        h.set_v_sym(p, q, r, s, rng.gen_range(-1.0..1.0));
                    }
                }
            }
        }
        h.e_core = rng.gen_range(-10.0..10.0);
        h.n_elec = Some(n);
        let sys = LoadedSystem { hamiltonian: h, dipole: None, soc: None };
        let back = parse_integral_text::<f64>(&write_hamiltonian(&sys)).unwrap();
        let (a, b) = (&sys.hamiltonian, &back.hamiltonian);
        prop_assert!((&a.t - &b.t).amax() <= 1e-12);
        prop_assert!(a.v.iter().zip(&b.v).all(|(x, y)| (x - y).abs() <= 1e-12));
        prop_assert!((a.e_core - b.e_core).abs() <= 1e-12);
        prop_assert_eq!(a.n_elec, b.n_elec);
    }

    #[test]
    fn fast_forward_preserves_norm(n in 1usize..7, seed in any::<u64>(), t in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_hermitian::<f64>(n, &mut rng);
        let psi = random_state::<f64>(1 << n, &mut rng);
        let out = FastForward::new(&h).unwrap().evolve(t, &psi).unwrap();
        let norm: f64 = out.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((norm - 1.0).abs() <= 1e-12);
    }
}
