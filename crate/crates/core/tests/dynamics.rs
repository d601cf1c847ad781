use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;

use fluxlattice::dynamics::{
    build_drive, circuit_drive, evolve, find_peaks, locality_probe, locality_probe_full, sideband_scan, DriveKind,
    DriveSpec, Envelope, EvolveOptions, Observable, ScanOptions, ScanPoint,
};
use fluxlattice::lagrangian::reduce_circuit;
use fluxlattice::netlist::{builtin_circuit, Builtin};
use fluxlattice::quantize::legendre_transform;
use fluxlattice::spectra::SpinBosonModel;

fn drive(frequency: f64, amplitude: f64, duration: f64) -> DriveSpec {
    DriveSpec {
        target: 0,
        amplitude,
        frequency,
        phase: 0.0,
        envelope: Envelope::Constant,
        duration,
        kind: DriveKind::Voltage,
    }
}

fn basis(n: usize, k: usize) -> DVector<Complex64> {
    let mut v = DVector::zeros(n);
    v[k] = Complex64::new(1.0, 0.0);
    v
}

#[test]
fn resonant_pulse_flips_qubit() {
    let m = SpinBosonModel::rabi(1.0, 1.0, 0.0);
    let h0 = m.to_sparse(&[1]).unwrap();
    let amp = 0.01;
    let spec = drive(1.0, amp, PI / amp);
    let term = build_drive(&spec, &m, &[1]).unwrap();
    let sz = m.sigma_z_diagonal(0, &[1]).unwrap();
    let obs = [Observable {
        name: "sz".into(),
        diagonal: sz.clone(),
    }];
    let t = evolve(&h0, Some(&term), &basis(2, 0), spec.duration, &obs, EvolveOptions::default()).unwrap();
    let s = t.series("sz").unwrap();
    assert!((s[0] - sz[0]).abs() < 1e-12);
    // counter-rotating corrections are O(amp / Delta)
    assert!((s.last().unwrap() + sz[0]).abs() < 0.02, "final sz {}", s.last().unwrap());
    assert!(t.norm_drift < 1e-8);
}

#[test]
fn undriven_evolution_conserves_sigma_z() {
    let m = SpinBosonModel::two_block([5.0, 4.0], [1.0, 1.2], [0.1, 0.1], 0.1);
    let dims = [5, 5];
    let h0 = m.to_sparse(&dims).unwrap();
    let n = h0.dim();
    // equal superposition of a few product states
    let mut psi = DVector::zeros(n);
    for k in [0, 7, 31, 60] {
        psi[k] = Complex64::new(0.5, 0.0);
    }
    let obs: Vec<Observable> = (0..2)
        .map(|q| Observable {
            name: format!("sz{q}"),
            diagonal: m.sigma_z_diagonal(q, &dims).unwrap(),
        })
        .collect();
    let t = evolve(&h0, None, &psi, 30.0, &obs, EvolveOptions::default()).unwrap();
    for o in &obs {
        let s = t.series(&o.name).unwrap();
        let spread = s.iter().fold(0.0f64, |a, x| a.max((x - s[0]).abs()));
        assert!(spread < 1e-10, "{} varied by {spread}", o.name);
    }
    assert!(t.energy_drift < 1e-8);
}

fn assert_reports_agree(m: &SpinBosonModel, dims: &[usize], spec: &DriveSpec) {
    let a = locality_probe(m, dims, spec, EvolveOptions::default()).unwrap();
    let b = locality_probe_full(m, dims, spec, EvolveOptions::default()).unwrap();
    assert_eq!(a.adjacent, b.adjacent);
    for (x, y) in a.qubit_disturbance.iter().zip(&b.qubit_disturbance) {
        assert!((x - y).abs() < 1e-6, "qubit disturbance {x} vs {y}");
    }
    for (x, y) in a.resonator_transfer.iter().zip(&b.resonator_transfer) {
        assert!((x - y).abs() < 1e-6, "resonator transfer {x} vs {y}");
    }
}

#[test]
fn sector_probe_matches_full_propagation() {
    let two = SpinBosonModel::two_block([5.0, 5.0], [1.0, 1.0], [0.1, 0.1], 0.1);
    assert_reports_agree(&two, &[3, 3], &drive(4.0, 0.05, 40.0));
    let mut second = drive(4.0, 0.05, 40.0);
    second.target = 1;
    assert_reports_agree(&two, &[3, 3], &second);

    let plaq = SpinBosonModel::plaquette(5.0, 1.0, 0.05, [0.1; 4]);
    assert_reports_agree(&plaq, &[2; 8], &drive(4.0, 0.05, 5.0));
}

#[test]
fn uncoupled_scan_is_flat() {
    let m = SpinBosonModel::two_block([5.0, 5.0], [1.0, 1.0], [0.0, 0.0], 0.1);
    let r = sideband_scan(&m, &[3, 3], &drive(0.0, 0.05, 50.0), &[3.9, 4.0, 4.1], ScanOptions::default()).unwrap();
    assert!(r.points.iter().all(|p| p.transfer < 1e-12));
    assert!(r.peaks.is_empty());
}

#[test]
fn peak_finder_reports_half_width() {
    let points: Vec<ScanPoint> = (0..41)
        .map(|i| {
            let f = 0.9 + 0.005 * i as f64;
            ScanPoint {
                frequency: f,
                transfer: (1.0 - ((f - 1.0) / 0.02).abs()).max(0.0),
            }
        })
        .collect();
    let peaks = find_peaks(&points, 0.1, 1e-6);
    assert_eq!(peaks.len(), 1);
    assert!((peaks[0].frequency - 1.0).abs() < 1e-12);
    assert!((peaks[0].width - 0.02).abs() < 1e-9);
}

#[test]
fn invalid_drives_are_rejected() {
    let m = SpinBosonModel::rabi(1.0, 1.0, 0.1);
    assert!(build_drive(&drive(1.0, -1.0, 10.0), &m, &[3]).is_err());
    let mut bad = drive(1.0, 0.1, 10.0);
    bad.target = 3;
    assert!(build_drive(&bad, &m, &[3]).is_err());
}

#[test]
fn circuit_drives_are_transverse_at_the_symmetric_point() {
    let c = builtin_circuit(Builtin::QubitResonator, &BTreeMap::new()).unwrap();
    let h = legendre_transform(&reduce_circuit(&c).unwrap().reduced).unwrap();
    let q = h.labels.iter().position(|l| l.contains('q')).unwrap();
    let mut dims = vec![4; h.dim()];
    dims[q] = 6;
    for kind in [DriveKind::Voltage, DriveKind::Flux] {
        let spec = DriveSpec {
            kind,
            ..drive(1.0, 0.05, 10.0)
        };
        let (op, proj) = circuit_drive(&spec, &h, &h.labels[q], &dims, 40).unwrap();
        assert_eq!(op.dim(), dims.iter().product::<usize>());
        assert!(op.hermiticity_deviation() < 1e-12);
        assert!(proj.transverse > 1e-3, "{kind:?} transverse {}", proj.transverse);
        assert!(proj.longitudinal_residual < 1e-9 * proj.transverse.max(1.0));
    }
}
