use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fluxlattice::lagrangian::{reduce_circuit, standard_block_transform, transform_invariance};
use fluxlattice::netlist::{builtin_circuit, parse_netlist, to_json, validate_circuit, Builtin, Circuit};
use fluxlattice::quantize::{
    default_truncation, fock_hamiltonian, legendre_transform, two_level_reduce, HamiltonianModel, ModeKind,
    TwoLevelOptions,
};
use fluxlattice::spectra::{classify_circuit_coupling, eigensystem, CouplingTag};

fn circuit(b: Builtin, p: &[(&str, f64)]) -> Circuit {
    let params: BTreeMap<String, f64> = p.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    builtin_circuit(b, &params).unwrap()
}

fn hamiltonian(c: &Circuit) -> HamiltonianModel {
    legendre_transform(&reduce_circuit(c).unwrap().reduced).unwrap()
}

fn labels_of(h: &HamiltonianModel, kind: ModeKind) -> Vec<String> {
    h.labels
        .iter()
        .zip(h.mode_kinds())
        .filter(|(_, k)| *k == kind)
        .map(|(l, _)| l.clone())
        .collect()
}

#[test]
fn every_builtin_validates_and_round_trips() {
    for b in Builtin::ALL {
        let c = match b {
            Builtin::QubitNResonators => circuit(b, &[("n", 3.0)]),
            Builtin::JunctionArrayCoupler => circuit(b, &[("k", 3.0)]),
            _ => circuit(b, &[]),
        };
        assert!(validate_circuit(&c).is_valid(), "{b}: {:?}", validate_circuit(&c).messages());
        let again = parse_netlist(&to_json(&c)).unwrap();
        assert_eq!(to_json(&again), to_json(&c));
    }
}

#[test]
fn block_transform_preserves_lagrangian() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for b in [Builtin::QubitResonator, Builtin::TwoBlocks, Builtin::Plaquette] {
        let c = circuit(b, &[("asymmetry", 0.05)]);
        let r = reduce_circuit(&c).unwrap();
        let t = standard_block_transform(&c).unwrap();
        let err = transform_invariance(&r.node_model, &r.block_model, &t, 64, &mut rng);
        assert!(err < 1e-12, "{b}: {err}");
    }
}

#[test]
fn reduced_variables_are_qubits_and_resonators() {
    let h = hamiltonian(&circuit(Builtin::TwoBlocks, &[]));
    assert_eq!(labels_of(&h, ModeKind::Qubit).len(), 2);
    assert_eq!(labels_of(&h, ModeKind::Resonator).len(), 2);
    let h = hamiltonian(&circuit(Builtin::Plaquette, &[]));
    assert_eq!(labels_of(&h, ModeKind::Qubit).len(), 4);
    // one collective coupler mode is cyclic and eliminated
    assert_eq!(labels_of(&h, ModeKind::Resonator).len(), 7);
}

#[test]
fn fock_hamiltonians_are_hermitian_and_converged() {
    for c in [
        circuit(Builtin::QubitResonator, &[]),
        circuit(Builtin::QubitNResonators, &[("n", 1.0)]),
        circuit(Builtin::JunctionArrayCoupler, &[("k", 2.0)]),
    ] {
        let h = hamiltonian(&c);
        let dims = default_truncation(&h);
        let plus: Vec<usize> = dims.iter().map(|d| d + 4).collect();
        let a = fock_hamiltonian(&h, &dims, false).unwrap().operator;
        let b = fock_hamiltonian(&h, &plus, false).unwrap().operator;
        let scale = a.matrix.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        assert!(a.hermiticity_deviation() <= 1e-12 * scale);
        let (ea, eb) = (eigensystem(&a, 4).unwrap(), eigensystem(&b, 4).unwrap());
        let spread = ea.energies[3] - ea.energies[0];
        for (x, y) in ea.energies.iter().zip(&eb.energies) {
            assert!((x - y).abs() < 1e-6 * spread, "{}: {x} vs {y}", c.name);
        }
    }
}

#[test]
fn two_level_model_reproduces_low_transitions() {
    // weak coupler junction: the linearized coupling error scales with E_J
    let c = circuit(Builtin::TwoBlocks, &[("E_J", 0.05)]);
    let h = hamiltonian(&c);
    let dims: Vec<usize> = h
        .mode_kinds()
        .iter()
        .map(|k| if *k == ModeKind::Qubit { 8 } else { 4 })
        .collect();
    let full = fock_hamiltonian(&h, &dims, false).unwrap().operator;
    let exact = eigensystem(&full, 6).unwrap().energies;

    let red = two_level_reduce(&h, TwoLevelOptions::default()).unwrap();
    let approx = eigensystem(&red.model.to_fock(&[4, 4]).unwrap(), 6).unwrap().energies;
    for k in 1..6 {
        let (x, y) = (exact[k] - exact[0], approx[k] - approx[0]);
        assert!((x - y).abs() < 1e-3 * x, "transition {k}: {x} vs {y}");
    }
}

#[test]
fn junction_array_coupling_is_longitudinal() {
    for k in [1.0, 2.0, 3.0] {
        let h = hamiltonian(&circuit(Builtin::JunctionArrayCoupler, &[("k", k)]));
        let q = &labels_of(&h, ModeKind::Qubit)[0];
        let r = &labels_of(&h, ModeKind::Resonator)[0];
        let cls = classify_circuit_coupling(&h, q, r, 60).unwrap();
        assert_eq!(cls.tag, CouplingTag::Longitudinal, "k = {k}: {cls:?}");
    }
}

#[test]
fn asymmetry_mixes_parities() {
    let h = hamiltonian(&circuit(Builtin::QubitResonator, &[("asymmetry", 0.2)]));
    let cls = classify_circuit_coupling(&h, "phi_q", "phi_r", 60).unwrap();
    assert_eq!(cls.tag, CouplingTag::Mixed);
    assert!(cls.ratio.unwrap() > 0.0);
}
