use std::collections::BTreeMap;

use proptest::prelude::*;

use fluxlattice::netlist::{builtin_circuit, parse_netlist, to_json, Builtin};
use fluxlattice::report::{format_float, round_significant, to_canonical_json};
use fluxlattice::spectra::{junction_asymmetry_decompose, normal_mode_frequencies, normal_mode_oracle, SpinBosonModel};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normal_modes_match_eigenproblem(w1 in 0.5f64..10.0, w2 in 0.5f64..10.0, frac in 0.0f64..0.45) {
        let g_c = frac * w1.min(w2);
        let (p, m) = normal_mode_frequencies(w1, w2, g_c).unwrap();
        let (po, mo) = normal_mode_oracle(w1, w2, g_c).unwrap();
        prop_assert!((p - po).abs() <= 1e-9 * po);
        prop_assert!((m - mo).abs() <= 1e-9 * mo);
        prop_assert!(p >= m && m > 0.0);
    }

    #[test]
    fn asymmetric_junction_decomposition_is_exact(
        e1 in 0.01f64..50.0,
        e2 in 0.01f64..50.0,
        q in -10.0f64..10.0,
        r in -10.0f64..10.0,
    ) {
        let d = junction_asymmetry_decompose(e1, e2).unwrap();
        let (a, b) = (d.original(q, r), d.decomposed(q, r));
        prop_assert!((a - b).abs() <= 1e-10 * (e1 + e2));
    }

    #[test]
    fn rounding_is_idempotent(x in prop::num::f64::NORMAL) {
        let once = round_significant(x);
        prop_assert_eq!(round_significant(once), once);
        prop_assert_eq!(format_float(once), format_float(x));
    }

    #[test]
    fn canonical_json_is_deterministic(entries in prop::collection::btree_map("[a-z]{1,6}", -1e6f64..1e6, 0..8)) {
        let a = to_canonical_json(&entries).unwrap();
        let b = to_canonical_json(&entries.clone()).unwrap();
        prop_assert_eq!(&a, &b);
        let back: BTreeMap<String, f64> = serde_json::from_str(&a).unwrap();
        prop_assert_eq!(to_canonical_json(&back).unwrap(), a);
    }

    #[test]
    fn builtin_netlists_round_trip(
        c_q in 5.0f64..50.0,
        l in 5.0f64..100.0,
        e_j in 0.0f64..2.0,
        asym in -0.5f64..0.5,
        which in 0usize..3,
    ) {
        let b = [Builtin::QubitResonator, Builtin::TwoBlocks, Builtin::Plaquette][which];
        let params: BTreeMap<String, f64> =
            [("C_q", c_q), ("L", l), ("E_J", e_j), ("asymmetry", asym)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
        let c = builtin_circuit(b, &params).unwrap();
        let text = to_json(&c);
        let again = parse_netlist(&text).unwrap();
        prop_assert_eq!(to_json(&again), text);
    }

    #[test]
    fn spin_boson_operators_are_hermitian(
        delta in 0.1f64..10.0,
        omega in 0.1f64..5.0,
        g in -1.0f64..1.0,
        g_c in 0.0f64..0.3,
        dim in 1usize..5,
    ) {
        for m in [
            SpinBosonModel::rabi(delta, omega, g),
            SpinBosonModel::longitudinal(delta, omega, g),
            SpinBosonModel::two_block([delta, delta * 0.9], [omega, omega * 1.1], [g, -g], g_c),
        ] {
            let dims = vec![dim; m.n_resonators()];
            let h = m.to_fock(&dims).unwrap();
            prop_assert!(h.hermiticity_deviation() <= 1e-14 * (1.0 + delta + omega * dim as f64));
            prop_assert_eq!(h.dim(), (1 << m.n_qubits()) * dims.iter().product::<usize>());
        }
    }
}
