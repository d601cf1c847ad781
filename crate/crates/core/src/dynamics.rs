//! Driven time evolution, sideband scans, locality probes and coupler
//! frequency planning.
//!
//! Each step is a fourth-order commutator-free Magnus product of two
//! exponentials, each applied by a Taylor series about the center of the
//! Gershgorin interval of the static Hamiltonian.

use std::collections::HashMap;

use log::{debug, warn};
use nalgebra::DVector;
use nalgebra_sparse::CsrMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantize::{FockOperator, HamiltonianModel, ModeKind, OneModeHamiltonian, Sinusoid1};
use crate::report::{format_float, Report};
use crate::spectra::{diagonalize, normal_mode_frequencies, normal_mode_oracle, Parity, SparseOperator, SpinBosonModel};

pub const NORM_DRIFT_TOLERANCE: f64 = 1e-8;
pub const CONVERGENCE_TOLERANCE: f64 = 1e-6;
/// Required `dt * (spectral half-width)`.
pub const STEP_FACTOR: f64 = 0.25;
pub const THREADS_ENV: &str = "FLUXLATTICE_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Envelope {
    Constant,
    /// Raised-cosine ramps of length `ramp` at both ends.
    CosineRamp { ramp: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveKind {
    Voltage,
    Flux,
}

/// `H_d(t) = amplitude * envelope(t) * cos(frequency t + phase) * O`, where
/// `O` is `sigma_x` of the target in the two-level frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    pub target: usize,
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default = "constant_envelope")]
    pub envelope: Envelope,
    pub duration: f64,
    #[serde(default = "voltage_kind")]
    pub kind: DriveKind,
}

fn constant_envelope() -> Envelope {
    Envelope::Constant
}

fn voltage_kind() -> DriveKind {
    DriveKind::Voltage
}

impl DriveSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) {
            return Err(Error::InvalidArgument("drive amplitude must be >= 0".into()));
        }
        if !(self.duration > 0.0) {
            return Err(Error::InvalidArgument("drive duration must be > 0".into()));
        }
        if let Envelope::CosineRamp { ramp } = self.envelope {
            if !(ramp > 0.0) || 2.0 * ramp > self.duration {
                return Err(Error::InvalidArgument("ramp must fit twice into the duration".into()));
            }
        }
        Ok(())
    }

    pub fn envelope_at(&self, t: f64) -> f64 {
        match self.envelope {
            Envelope::Constant => 1.0,
            Envelope::CosineRamp { ramp } => {
                let edge = t.min(self.duration - t).max(0.0);
                if edge >= ramp {
                    1.0
                } else {
                    0.5 * (1.0 - (std::f64::consts::PI * edge / ramp).cos())
                }
            }
        }
    }

    pub fn coefficient(&self, t: f64) -> f64 {
        self.amplitude * self.envelope_at(t) * (self.frequency * t + self.phase).cos()
    }
}

/// A drive operator together with its time dependence.
#[derive(Debug, Clone)]
pub struct DriveTerm {
    pub spec: DriveSpec,
    pub operator: SparseOperator,
}

/// Two-level drive `amplitude cos(w t + phase) sigma_x` on a spin-boson model.
pub fn build_drive(spec: &DriveSpec, model: &SpinBosonModel, resonator_dims: &[usize]) -> Result<DriveTerm> {
    spec.validate()?;
    let operator = model.qubit_flip(spec.target, resonator_dims, false)?;
    Ok(DriveTerm {
        spec: spec.clone(),
        operator,
    })
}

/// How a circuit-level drive operator looks in the qubit's two lowest states.
#[derive(Debug, Clone, Serialize)]
pub struct DriveProjection {
    pub kind: DriveKind,
    /// |<0|O|1>| per unit amplitude.
    pub transverse: f64,
    /// |<0|O|0> - <1|O|1>| / 2 per unit amplitude.
    pub longitudinal_residual: f64,
}

/// Circuit-level drive operator on the qubit variable `qubit`: the charge
/// `n_q` for a voltage drive, or for a flux drive the first-order response
/// of the qubit's own junctions to a phase modulation `A cos(w t)`,
/// `sum -a_k sin(f_k phi_q + o_k)` (`E_Jq sin phi_q` for one junction).
/// Returns the embedded operator and its two-level projection.
pub fn circuit_drive(
    spec: &DriveSpec,
    h: &HamiltonianModel,
    qubit: &str,
    dims: &[usize],
    one_mode_dim: usize,
) -> Result<(FockOperator, DriveProjection)> {
    spec.validate()?;
    let q = h.index_of(qubit).map_err(|_| Error::UnknownQubit(usize::MAX))?;
    if h.mode_kinds()[q] != ModeKind::Qubit {
        return Err(Error::InvalidArgument(format!("`{qubit}` is not a qubit mode")));
    }
    if dims.len() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            found: dims.len(),
        });
    }
    if spec.kind == DriveKind::Flux && spec.amplitude > 0.1 {
        warn!("flux modulation amplitude {} is not small; first-order drive is inaccurate", spec.amplitude);
    }
    let own: Vec<Sinusoid1> = h
        .sinusoids
        .iter()
        .filter(|s| s.support() == [q])
        .map(|s| Sinusoid1 {
            amplitude: -s.amplitude,
            frequency: s.direction[q],
            offset: s.offset - std::f64::consts::FRAC_PI_2,
        })
        .collect();

    let one = h.one_mode(q);
    let spec1 = one.spectrum(one_mode_dim, 2)?;
    let (transverse, residual) = match spec.kind {
        DriveKind::Voltage => {
            let n = spec1.charge_matrix();
            (spec1.element(&n, 0, 1).abs(), 0.5 * (spec1.element(&n, 0, 0) - spec1.element(&n, 1, 1)).abs())
        }
        DriveKind::Flux => {
            let m = OneModeHamiltonian::function_matrix(&spec1, &own);
            (spec1.element(&m, 0, 1).abs(), 0.5 * (spec1.element(&m, 0, 0) - spec1.element(&m, 1, 1)).abs())
        }
    };

    let mode = h.harmonic_mode(q)?;
    let d = dims[q];
    let a = crate::linalg::annihilation(d);
    let local: nalgebra::DMatrix<Complex64> = match spec.kind {
        // n = i n_zpf (a^dag - a)
        DriveKind::Voltage => ((a.transpose() - &a) * mode.n_zpf).map(|x| Complex64::new(0.0, x)),
        DriveKind::Flux => {
            let x = crate::linalg::position(d, mode.phi_zpf);
            let mut m = nalgebra::DMatrix::zeros(d, d);
            for s in &own {
                m += crate::linalg::cos_of_symmetric(&x, s.frequency, s.offset) * s.amplitude;
            }
            crate::linalg::to_complex(&m)
        }
    };
    let mut full = nalgebra::DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
    for (k, &dk) in dims.iter().enumerate() {
        let f = if k == q {
            local.clone()
        } else {
            nalgebra::DMatrix::identity(dk, dk)
        };
        full = full.kronecker(&f);
    }
    let modes = h
        .labels
        .iter()
        .zip(dims)
        .zip(h.mode_kinds())
        .map(|((l, &dim), kind)| crate::quantize::Mode {
            label: l.clone(),
            dim,
            kind,
        })
        .collect();
    let op = FockOperator::new(modes, full * Complex64::new(spec.amplitude, 0.0))?;
    Ok((
        op,
        DriveProjection {
            kind: spec.kind,
            transverse,
            longitudinal_residual: residual,
        },
    ))
}

// ---------------------------------------------------------------------------
// Propagation

/// Named diagonal observable.
#[derive(Debug, Clone)]
pub struct Observable {
    pub name: String,
    pub diagonal: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    /// Fixed step; chosen from the spectral bound when `None`.
    pub dt: Option<f64>,
    /// Number of recorded samples (excluding t = 0), at most one per step.
    pub samples: usize,
    /// Repeat with dt/2 and require agreement to [`CONVERGENCE_TOLERANCE`].
    pub check_convergence: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            dt: None,
            samples: 400,
            check_convergence: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `values[k][j]`: observable `j` at `times[k]`.
    pub values: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    pub norm_drift: f64,
    pub energy_drift: f64,
    pub dt: f64,
    #[serde(skip)]
    pub final_state: DVector<Complex64>,
}

impl Trajectory {
    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.values.iter().map(|v| v[j]).collect())
    }
}

impl Report for Trajectory {
    fn csv(&self) -> Option<String> {
        let mut s = String::from("time");
        for n in &self.names {
            s.push(',');
            s.push_str(n);
        }
        s.push_str(",energy\n");
        for (k, t) in self.times.iter().enumerate() {
            s.push_str(&format_float(*t));
            for v in &self.values[k] {
                s.push(',');
                s.push_str(&format_float(*v));
            }
            s.push(',');
            s.push_str(&format_float(self.energy[k]));
            s.push('\n');
        }
        Some(s)
    }
}

/// `y += alpha * M x`.
fn spmv_add(m: &CsrMatrix<Complex64>, x: &[Complex64], y: &mut [Complex64], alpha: Complex64) {
    let offsets = m.row_offsets();
    let cols = m.col_indices();
    let vals = m.values();
    for (row, yr) in y.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for k in offsets[row]..offsets[row + 1] {
            acc += vals[k] * x[cols[k]];
        }
        *yr += alpha * acc;
    }
}

/// Gershgorin interval `[lo, hi]` of a Hermitian matrix.
fn gershgorin(m: &CsrMatrix<Complex64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (row, lane) in m.row_iter().enumerate() {
        let mut center = 0.0;
        let mut radius = 0.0;
        for (&c, v) in lane.col_indices().iter().zip(lane.values()) {
            if c == row {
                center = v.re;
            } else {
                radius += v.norm();
            }
        }
        lo = lo.min(center - radius);
        hi = hi.max(center + radius);
    }
    if lo > hi {
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

fn row_radius(m: &CsrMatrix<Complex64>) -> f64 {
    m.row_iter()
        .map(|lane| lane.values().iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn expectation_diag(d: &[f64], psi: &[Complex64]) -> f64 {
    d.iter().zip(psi).map(|(w, z)| w * z.norm_sqr()).sum()
}

fn expectation(m: &CsrMatrix<Complex64>, psi: &[Complex64]) -> f64 {
    let mut y = vec![Complex64::new(0.0, 0.0); psi.len()];
    spmv_add(m, psi, &mut y, Complex64::new(1.0, 0.0));
    psi.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum()
}

/// Largest stable step for `h0` plus an optional drive.
pub fn step_limit(h0: &SparseOperator, drive: Option<&DriveTerm>) -> f64 {
    let (lo, hi) = gershgorin(&h0.matrix);
    let mut half = 0.5 * (hi - lo);
    let mut fastest = 0.0f64;
    if let Some(d) = drive {
        half += d.spec.amplitude * row_radius(&d.operator.matrix);
        fastest = d.spec.frequency.abs();
    }
    // the carrier needs finer sampling than the spectral bound alone gives
    let scale = half.max(2.0 * fastest);
    if scale > 0.0 {
        STEP_FACTOR / scale
    } else {
        f64::INFINITY
    }
}

/// `psi <- exp(-i tau (H0 - center + f D)) psi` by Taylor series.
#[allow(clippy::too_many_arguments)]
fn taylor_step(
    h0: &SparseOperator,
    drive: Option<&SparseOperator>,
    f: f64,
    center: f64,
    tau: f64,
    psi: &mut [Complex64],
    term: &mut Vec<Complex64>,
    next: &mut Vec<Complex64>,
) {
    let minus_i_tau = Complex64::new(0.0, -tau);
    term.copy_from_slice(psi);
    let mut k = 1usize;
    loop {
        next.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        let c = minus_i_tau / k as f64;
        spmv_add(&h0.matrix, term, next, c);
        for (y, x) in next.iter_mut().zip(term.iter()) {
            *y -= c * center * x;
        }
        if let Some(d) = drive {
            if f != 0.0 {
                spmv_add(&d.matrix, term, next, c * f);
            }
        }
        std::mem::swap(term, next);
        let mut tn = 0.0;
        for (p, x) in psi.iter_mut().zip(term.iter()) {
            *p += x;
            tn += x.norm_sqr();
        }
        if tn.sqrt() < 1e-16 || k > 60 {
            break;
        }
        k += 1;
    }
}

fn propagate(
    h0: &SparseOperator,
    drive: Option<&DriveTerm>,
    psi0: &DVector<Complex64>,
    duration: f64,
    steps: usize,
    record_stride: usize,
    observables: &[Observable],
) -> Result<Trajectory> {
    let n = psi0.len();
    let dt = duration / steps as f64;
    let (lo, hi) = gershgorin(&h0.matrix);
    let center = 0.5 * (lo + hi);
    let mut psi: Vec<Complex64> = psi0.iter().copied().collect();
    let mut term = vec![Complex64::new(0.0, 0.0); n];
    let mut next = vec![Complex64::new(0.0, 0.0); n];
    let half = 0.5 * dt;
    let phase = Complex64::from_polar(1.0, -center * half);
    // fourth-order commutator-free Magnus: two exponentials per step with
    // the drive sampled at the Gauss points
    let root3 = 3f64.sqrt();
    let (c1, c2) = (0.5 - root3 / 6.0, 0.5 + root3 / 6.0);
    let (a1, a2) = ((3.0 - 2.0 * root3) / 12.0, (3.0 + 2.0 * root3) / 12.0);

    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut energy = Vec::new();
    let mut norm_drift = 0.0f64;
    let record = |t: f64, psi: &[Complex64], times: &mut Vec<f64>, values: &mut Vec<Vec<f64>>, energy: &mut Vec<f64>| {
        times.push(t);
        values.push(observables.iter().map(|o| expectation_diag(&o.diagonal, psi)).collect());
        energy.push(expectation(&h0.matrix, psi));
    };
    record(0.0, &psi, &mut times, &mut values, &mut energy);

    for step in 0..steps {
        let t0 = step as f64 * dt;
        let (f1, f2) = drive
            .map(|d| (d.spec.coefficient(t0 + c1 * dt), d.spec.coefficient(t0 + c2 * dt)))
            .unwrap_or((0.0, 0.0));
        // each factor is exp(-i dt/2 (H0 + f D)) with H0 weight a1 + a2 = 1/2
        for f in [2.0 * (a2 * f1 + a1 * f2), 2.0 * (a1 * f1 + a2 * f2)] {
            taylor_step(h0, drive.map(|d| &d.operator), f, center, half, &mut psi, &mut term, &mut next);
            psi.iter_mut().for_each(|z| *z *= phase);
        }
        if (step + 1) % record_stride == 0 || step + 1 == steps {
            let t = (step + 1) as f64 * dt;
            let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let drift = (norm - 1.0).abs();
            norm_drift = norm_drift.max(drift);
            if drift > NORM_DRIFT_TOLERANCE {
                return Err(Error::NormDrift { drift, time: t });
            }
            record(t, &psi, &mut times, &mut values, &mut energy);
        }
    }
    let e0 = energy[0];
    let energy_drift = energy
        .iter()
        .map(|e| (e - e0).abs())
        .fold(0.0, f64::max)
        / e0.abs().max(f64::MIN_POSITIVE);
    Ok(Trajectory {
        times,
        names: observables.iter().map(|o| o.name.clone()).collect(),
        values,
        energy,
        norm_drift,
        energy_drift,
        dt,
        final_state: DVector::from_vec(psi),
    })
}

/// Propagate `psi0` under `h0 + drive(t)` for `duration`.
pub fn evolve(
    h0: &SparseOperator,
    drive: Option<&DriveTerm>,
    psi0: &DVector<Complex64>,
    duration: f64,
    observables: &[Observable],
    opts: EvolveOptions,
) -> Result<Trajectory> {
    let n = h0.dim();
    if psi0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: psi0.len(),
        });
    }
    if let Some(d) = drive {
        if d.operator.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: d.operator.dim(),
            });
        }
    }
    if let Some(o) = observables.iter().find(|o| o.diagonal.len() != n) {
        return Err(Error::InvalidArgument(format!("observable `{}` has the wrong dimension", o.name)));
    }
    if !(duration > 0.0) {
        return Err(Error::InvalidArgument("duration must be > 0".into()));
    }
    let norm = psi0.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidState(format!("initial state has norm {norm}")));
    }
    let limit = step_limit(h0, drive);
    let dt = match opts.dt {
        Some(dt) if dt > limit => return Err(Error::StepTooCoarse { dt, limit }),
        Some(dt) if !(dt > 0.0) => return Err(Error::InvalidArgument("dt must be > 0".into())),
        Some(dt) => dt,
        None => limit,
    };
    let samples = opts.samples.max(1);
    // a multiple of the sample count, so every run records on the same grid
    let steps = ((duration / dt).ceil() as usize).max(1).div_ceil(samples) * samples;
    let stride = steps / samples;
    let coarse = propagate(h0, drive, psi0, duration, steps, stride, observables)?;
    if opts.check_convergence {
        let fine = propagate(h0, drive, psi0, duration, 2 * steps, 2 * stride, observables)?;
        let mut diff = 0.0f64;
        for (a, b) in coarse.values.iter().zip(&fine.values) {
            for (x, y) in a.iter().zip(b) {
                diff = diff.max((x - y).abs());
            }
        }
        debug!("step-halving difference {diff:e}");
        if diff > CONVERGENCE_TOLERANCE {
            return Err(Error::NotConverged { difference: diff });
        }
    }
    Ok(coarse)
}

// ---------------------------------------------------------------------------
// Sector decomposition

/// Initial state of a qubit in the locality and scan protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QubitInit {
    Ground,
    Excited,
    Plus,
}

/// Sub-model of the driven qubit and the resonators connected to it, with
/// every other qubit frozen to a `sigma_z` eigenvalue (legal because their
/// couplings are all longitudinal and they are not driven).
#[derive(Debug, Clone)]
struct Sector {
    weight: f64,
    model: SpinBosonModel,
    /// Original index of each sub-model resonator.
    resonators: Vec<usize>,
    /// Frozen `(qubit, sigma_z)` values.
    frozen: Vec<(usize, f64)>,
}

fn union_find_root(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut j = i;
    while parent[j] != r {
        let next = parent[j];
        parent[j] = r;
        j = next;
    }
    r
}

/// Resonators connected to the driven qubit through charge couplings.
fn driven_component(model: &SpinBosonModel, driven: usize) -> Vec<usize> {
    let nr = model.n_resonators();
    let mut parent: Vec<usize> = (0..nr).collect();
    for c in &model.resonator_couplings {
        let (a, b) = (union_find_root(&mut parent, c.first), union_find_root(&mut parent, c.second));
        parent[a] = b;
    }
    let own: Vec<usize> = model
        .couplings
        .iter()
        .filter(|c| c.qubit == driven)
        .map(|c| c.resonator)
        .collect();
    for w in own.windows(2) {
        let (a, b) = (union_find_root(&mut parent, w[0]), union_find_root(&mut parent, w[1]));
        parent[a] = b;
    }
    match own.first() {
        None => Vec::new(),
        Some(&r0) => {
            let root = union_find_root(&mut parent, r0);
            (0..nr).filter(|&r| union_find_root(&mut parent, r) == root).collect()
        }
    }
}

fn sectors(model: &SpinBosonModel, driven: usize, inits: &[QubitInit]) -> Result<Vec<Sector>> {
    model.validate()?;
    if driven >= model.n_qubits() {
        return Err(Error::UnknownQubit(driven));
    }
    for c in &model.couplings {
        if c.qubit != driven && c.parity != Parity::Longitudinal {
            return Err(Error::UnsupportedTopology(
                "sector decomposition needs longitudinal couplings on undriven qubits".into(),
            ));
        }
    }
    let comp = driven_component(model, driven);
    let local: HashMap<usize, usize> = comp.iter().enumerate().map(|(i, &r)| (r, i)).collect();
    // undriven qubits that touch the component
    let mut touching: Vec<usize> = model
        .couplings
        .iter()
        .filter(|c| c.qubit != driven && local.contains_key(&c.resonator))
        .map(|c| c.qubit)
        .collect();
    touching.sort_unstable();
    touching.dedup();
    let choices: Vec<Vec<(f64, f64)>> = touching
        .iter()
        .map(|&q| match inits[q] {
            QubitInit::Ground => vec![(-1.0, 1.0)],
            QubitInit::Excited => vec![(1.0, 1.0)],
            QubitInit::Plus => vec![(-1.0, 0.5), (1.0, 0.5)],
        })
        .collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; touching.len()];
    loop {
        let mut weight = 1.0;
        let mut frozen = Vec::new();
        for (k, &q) in touching.iter().enumerate() {
            let (s, w) = choices[k][idx[k]];
            weight *= w;
            frozen.push((q, s));
        }
        let mut sub = SpinBosonModel {
            qubit_labels: vec![model.qubit_labels[driven].clone()],
            deltas: vec![model.deltas[driven]],
            resonator_labels: comp.iter().map(|&r| model.resonator_labels[r].clone()).collect(),
            omegas: comp.iter().map(|&r| model.omegas[r]).collect(),
            couplings: Vec::new(),
            resonator_couplings: Vec::new(),
            biases: comp.iter().map(|&r| model.bias(r)).collect(),
        };
        for c in &model.couplings {
            if let Some(&lr) = local.get(&c.resonator) {
                if c.qubit == driven {
                    sub.couplings.push(crate::spectra::QubitCoupling {
                        qubit: 0,
                        resonator: lr,
                        g: c.g,
                        parity: c.parity,
                    });
                } else {
                    let s = frozen.iter().find(|(q, _)| *q == c.qubit).map(|p| p.1).unwrap_or(0.0);
                    sub.biases[lr] += c.g * s;
                }
            }
        }
        for c in &model.resonator_couplings {
            if let (Some(&a), Some(&b)) = (local.get(&c.first), local.get(&c.second)) {
                sub.resonator_couplings.push(crate::spectra::ResonatorCoupling {
                    first: a,
                    second: b,
                    g_c: c.g_c,
                });
            }
        }
        out.push(Sector {
            weight,
            model: sub,
            resonators: comp.clone(),
            frozen,
        });
        // odometer
        let mut k = 0;
        loop {
            if k == idx.len() {
                return Ok(out);
            }
            idx[k] += 1;
            if idx[k] < choices[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn bias_signature(m: &SpinBosonModel) -> Vec<u64> {
    m.biases.iter().map(|b| b.to_bits()).collect()
}

/// Product state with the given qubit levels and resonator vacuum.
fn product_state(model: &SpinBosonModel, resonator_dims: &[usize], qubits: &[QubitInit]) -> Result<DVector<Complex64>> {
    let n: usize = model.modes(resonator_dims)?.iter().map(|m| m.dim).product();
    if qubits.len() != model.n_qubits() {
        return Err(Error::DimensionMismatch {
            expected: model.n_qubits(),
            found: qubits.len(),
        });
    }
    let mut psi = DVector::from_element(1, Complex64::new(1.0, 0.0));
    for init in qubits {
        let v = match init {
            QubitInit::Ground => [1.0, 0.0],
            QubitInit::Excited => [0.0, 1.0],
            QubitInit::Plus => [std::f64::consts::FRAC_1_SQRT_2; 2],
        };
        let local = DVector::from_vec(vec![Complex64::new(v[0], 0.0), Complex64::new(v[1], 0.0)]);
        psi = psi.kronecker(&local);
    }
    for &d in resonator_dims {
        let mut vac = DVector::zeros(d);
        vac[0] = Complex64::new(1.0, 0.0);
        psi = psi.kronecker(&vac);
    }
    debug_assert_eq!(psi.len(), n);
    Ok(psi)
}

fn sub_dims(resonators: &[usize], resonator_dims: &[usize]) -> Vec<usize> {
    resonators.iter().map(|&r| resonator_dims[r]).collect()
}

// ---------------------------------------------------------------------------
// Locality

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMethod {
    /// Conserved-sector decomposition around the driven qubit.
    Sectors,
    /// Brute-force propagation of the whole model.
    Full,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalityReport {
    pub driven: usize,
    pub method: ProbeMethod,
    pub qubit_labels: Vec<String>,
    /// max_t |<sigma_z>_driven - <sigma_z>_undriven| per qubit.
    pub qubit_disturbance: Vec<f64>,
    pub resonator_labels: Vec<String>,
    /// max_t |<n>_driven - <n>_undriven| per resonator.
    pub resonator_transfer: Vec<f64>,
    /// Whether the resonator is charge-connected to the driven qubit.
    pub adjacent: Vec<bool>,
    pub norm_drift: f64,
}

impl LocalityReport {
    /// Largest disturbance of any undriven qubit.
    pub fn max_qubit_disturbance(&self) -> f64 {
        self.qubit_disturbance
            .iter()
            .enumerate()
            .filter(|(q, _)| *q != self.driven)
            .map(|(_, d)| *d)
            .fold(0.0, f64::max)
    }

    /// Largest transfer into a resonator not connected to the driven qubit.
    pub fn max_remote_transfer(&self) -> f64 {
        self.resonator_transfer
            .iter()
            .zip(&self.adjacent)
            .filter(|(_, a)| !**a)
            .map(|(t, _)| *t)
            .fold(0.0, f64::max)
    }
}

impl Report for LocalityReport {
    fn csv(&self) -> Option<String> {
        let mut s = String::from("kind,label,disturbance,adjacent\n");
        for (l, d) in self.qubit_labels.iter().zip(&self.qubit_disturbance) {
            s.push_str(&format!("qubit,{l},{},\n", format_float(*d)));
        }
        for ((l, d), a) in self.resonator_labels.iter().zip(&self.resonator_transfer).zip(&self.adjacent) {
            s.push_str(&format!("resonator,{l},{},{a}\n", format_float(*d)));
        }
        Some(s)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Driven and undriven propagation of one sector from the driven qubit in `e`.
fn sector_runs(
    sec: &Sector,
    resonator_dims: &[usize],
    drive: &DriveSpec,
    opts: EvolveOptions,
) -> Result<(Trajectory, Trajectory)> {
    let dims = sub_dims(&sec.resonators, resonator_dims);
    let h0 = sec.model.to_sparse(&dims)?;
    let sub_drive = DriveSpec {
        target: 0,
        ..drive.clone()
    };
    let term = build_drive(&sub_drive, &sec.model, &dims)?;
    let psi0 = product_state(&sec.model, &dims, &[QubitInit::Excited])?;
    let mut obs = vec![Observable {
        name: "sz".into(),
        diagonal: sec.model.sigma_z_diagonal(0, &dims)?,
    }];
    for r in 0..sec.model.n_resonators() {
        obs.push(Observable {
            name: format!("n{r}"),
            diagonal: sec.model.photon_diagonal(r, &dims)?,
        });
    }
    obs.push(Observable {
        name: "norm".into(),
        diagonal: vec![1.0; h0.dim()],
    });
    // both runs on the driven step so their sample grids coincide
    let o = EvolveOptions {
        dt: opts.dt.or(Some(step_limit(&h0, Some(&term)))),
        ..opts
    };
    let with = evolve(&h0, Some(&term), &psi0, drive.duration, &obs, o)?;
    let without = evolve(&h0, None, &psi0, drive.duration, &obs, o)?;
    Ok((with, without))
}

/// Protocol: driven qubit starts in `e`, every other qubit in `|+>`,
/// resonators in vacuum; the drive runs for `drive.duration`.
pub fn locality_probe(
    model: &SpinBosonModel,
    resonator_dims: &[usize],
    drive: &DriveSpec,
    opts: EvolveOptions,
) -> Result<LocalityReport> {
    drive.validate()?;
    let inits = protocol_inits(model, drive.target)?;
    let secs = sectors(model, drive.target, &inits)?;
    let nq = model.n_qubits();
    let nr = model.n_resonators();
    let comp = secs[0].resonators.clone();
    let mut adjacent = vec![false; nr];
    for &r in &comp {
        adjacent[r] = true;
    }
    // one pair of runs per distinct bias signature, in parallel
    let mut unique: Vec<(Vec<u64>, &Sector)> = Vec::new();
    for sec in &secs {
        let key = bias_signature(&sec.model);
        if !unique.iter().any(|(k, _)| *k == key) {
            unique.push((key, sec));
        }
    }
    let runs: Vec<Result<(Trajectory, Trajectory)>> = thread_pool()?.install(|| {
        unique
            .par_iter()
            .map(|(_, sec)| sector_runs(sec, resonator_dims, drive, opts))
            .collect()
    });
    let mut cache: HashMap<Vec<u64>, (Trajectory, Trajectory)> = HashMap::new();
    for ((key, _), r) in unique.into_iter().zip(runs) {
        cache.insert(key, r?);
    }
    let samples = opts.samples.max(1) + 1;
    let mut qubit_drive = vec![vec![0.0; samples]; nq];
    let mut qubit_ref = vec![vec![0.0; samples]; nq];
    let mut res_drive = vec![vec![0.0; samples]; nr];
    let mut res_ref = vec![vec![0.0; samples]; nr];
    let mut norm_drift = 0.0f64;
    for sec in &secs {
        let key = bias_signature(&sec.model);
        let (with, without) = &cache[&key];
        norm_drift = norm_drift.max(with.norm_drift).max(without.norm_drift);
        if with.times.len() != samples {
            return Err(Error::InvalidArgument("sample grid mismatch between sectors".into()));
        }
        for k in 0..samples {
            let (vw, vo) = (&with.values[k], &without.values[k]);
            let norm_w = *vw.last().unwrap();
            let norm_o = *vo.last().unwrap();
            qubit_drive[drive.target][k] += sec.weight * vw[0];
            qubit_ref[drive.target][k] += sec.weight * vo[0];
            for &(q, s) in &sec.frozen {
                qubit_drive[q][k] += sec.weight * s * norm_w;
                qubit_ref[q][k] += sec.weight * s * norm_o;
            }
            for (lr, &r) in sec.resonators.iter().enumerate() {
                res_drive[r][k] += sec.weight * vw[1 + lr];
                res_ref[r][k] += sec.weight * vo[1 + lr];
            }
        }
    }
    Ok(LocalityReport {
        driven: drive.target,
        method: ProbeMethod::Sectors,
        qubit_labels: model.qubit_labels.clone(),
        qubit_disturbance: (0..nq).map(|q| max_abs_diff(&qubit_drive[q], &qubit_ref[q])).collect(),
        resonator_labels: model.resonator_labels.clone(),
        resonator_transfer: (0..nr).map(|r| max_abs_diff(&res_drive[r], &res_ref[r])).collect(),
        adjacent,
        norm_drift,
    })
}

fn protocol_inits(model: &SpinBosonModel, driven: usize) -> Result<Vec<QubitInit>> {
    if driven >= model.n_qubits() {
        return Err(Error::UnknownQubit(driven));
    }
    Ok((0..model.n_qubits())
        .map(|q| if q == driven { QubitInit::Excited } else { QubitInit::Plus })
        .collect())
}

/// Same protocol as [`locality_probe`], propagating the whole model.
pub fn locality_probe_full(
    model: &SpinBosonModel,
    resonator_dims: &[usize],
    drive: &DriveSpec,
    opts: EvolveOptions,
) -> Result<LocalityReport> {
    drive.validate()?;
    let inits = protocol_inits(model, drive.target)?;
    let h0 = model.to_sparse(resonator_dims)?;
    let term = build_drive(drive, model, resonator_dims)?;
    let psi0 = product_state(model, resonator_dims, &inits)?;
    let mut obs = Vec::new();
    for q in 0..model.n_qubits() {
        obs.push(Observable {
            name: format!("sz{q}"),
            diagonal: model.sigma_z_diagonal(q, resonator_dims)?,
        });
    }
    for r in 0..model.n_resonators() {
        obs.push(Observable {
            name: format!("n{r}"),
            diagonal: model.photon_diagonal(r, resonator_dims)?,
        });
    }
    let o = EvolveOptions { dt: opts.dt.or(Some(step_limit(&h0, Some(&term)))), ..opts };
    let with = evolve(&h0, Some(&term), &psi0, drive.duration, &obs, o)?;
    let without = evolve(&h0, None, &psi0, drive.duration, &obs, o)?;
    let column = |t: &Trajectory, j: usize| -> Vec<f64> { t.values.iter().map(|v| v[j]).collect() };
    let nq = model.n_qubits();
    let comp = driven_component(model, drive.target);
    Ok(LocalityReport {
        driven: drive.target,
        method: ProbeMethod::Full,
        qubit_labels: model.qubit_labels.clone(),
        qubit_disturbance: (0..nq).map(|q| max_abs_diff(&column(&with, q), &column(&without, q))).collect(),
        resonator_labels: model.resonator_labels.clone(),
        resonator_transfer: (0..model.n_resonators())
            .map(|r| max_abs_diff(&column(&with, nq + r), &column(&without, nq + r)))
            .collect(),
        adjacent: (0..model.n_resonators()).map(|r| comp.contains(&r)).collect(),
        norm_drift: with.norm_drift.max(without.norm_drift),
    })
}

// ---------------------------------------------------------------------------
// Sideband scans

#[derive(Debug, Clone, Serialize)]
pub struct ScanPoint {
    pub frequency: f64,
    /// max_t |sum_r <n_r>(t) - sum_r <n_r>(0)|.
    pub transfer: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Peak {
    pub frequency: f64,
    pub height: f64,
    /// Full width at half maximum, from linear interpolation.
    pub width: f64,
    /// Step-halving check passed at the peak.
    pub verified: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanResult {
    pub points: Vec<ScanPoint>,
    pub peaks: Vec<Peak>,
    pub norm_drift: f64,
}

impl Report for ScanResult {
    fn csv(&self) -> Option<String> {
        let mut s = String::from("frequency,transfer,peak,width\n");
        for p in &self.points {
            let peak = self.peaks.iter().find(|k| k.frequency == p.frequency);
            s.push_str(&format!(
                "{},{},{},{}\n",
                format_float(p.frequency),
                format_float(p.transfer),
                peak.is_some(),
                peak.map(|k| format_float(k.width)).unwrap_or_default()
            ));
        }
        Some(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScanOptions {
    pub samples: usize,
    /// Peaks below this fraction of the highest point are ignored.
    pub relative_threshold: f64,
    /// Peaks below this absolute transfer are ignored.
    pub absolute_threshold: f64,
    pub verify_peaks: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            samples: 400,
            relative_threshold: 0.1,
            absolute_threshold: 1e-6,
            verify_peaks: true,
        }
    }
}

/// Thread pool honoring [`THREADS_ENV`].
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            b = b.num_threads(n);
        }
    }
    b.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Read-only data shared by every scan point.
struct ScanSystem {
    h0: SparseOperator,
    model: SpinBosonModel,
    dims: Vec<usize>,
    psi0: DVector<Complex64>,
    photons: Vec<f64>,
    norm: Vec<f64>,
}

impl ScanSystem {
    fn new(model: &SpinBosonModel, resonator_dims: &[usize], driven: usize) -> Result<Self> {
        let inits: Vec<QubitInit> = (0..model.n_qubits())
            .map(|q| if q == driven { QubitInit::Excited } else { QubitInit::Ground })
            .collect();
        let mut secs = sectors(model, driven, &inits)?;
        let sec = secs.remove(0);
        let dims = sub_dims(&sec.resonators, resonator_dims);
        let h0 = sec.model.to_sparse(&dims)?;
        // dressed state closest to |e, 0...0>
        let bare = product_state(&sec.model, &dims, &[QubitInit::Excited])?;
        let (_, vecs) = diagonalize(&h0.to_dense())?;
        let target = bare.iter().position(|z| z.norm() > 0.5).expect("basis state");
        let best = (0..vecs.ncols())
            .max_by(|&a, &b| vecs[(target, a)].norm_sqr().total_cmp(&vecs[(target, b)].norm_sqr()))
            .expect("non-empty");
        let mut psi0: DVector<Complex64> = vecs.column(best).into_owned();
        psi0 /= Complex64::new(psi0.norm(), 0.0);
        let mut photons = vec![0.0; h0.dim()];
        for r in 0..sec.model.n_resonators() {
            for (p, n) in photons.iter_mut().zip(sec.model.photon_diagonal(r, &dims)?) {
                *p += n;
            }
        }
        let n = h0.dim();
        Ok(ScanSystem {
            h0,
            model: sec.model,
            dims,
            psi0,
            photons,
            norm: vec![1.0; n],
        })
    }

    fn run(&self, template: &DriveSpec, frequency: f64, samples: usize, check: bool) -> Result<(f64, f64)> {
        let spec = DriveSpec {
            target: 0,
            frequency,
            ..template.clone()
        };
        let term = build_drive(&spec, &self.model, &self.dims)?;
        let obs = [
            Observable {
                name: "photons".into(),
                diagonal: self.photons.clone(),
            },
            Observable {
                name: "norm".into(),
                diagonal: self.norm.clone(),
            },
        ];
        let opts = EvolveOptions {
            dt: None,
            samples,
            check_convergence: check,
        };
        let t = evolve(&self.h0, Some(&term), &self.psi0, spec.duration, &obs, opts)?;
        let n0 = t.values[0][0];
        let transfer = t.values.iter().map(|v| (v[0] - n0).abs()).fold(0.0, f64::max);
        Ok((transfer, t.norm_drift))
    }
}

/// Drive the target qubit at each frequency, starting from the dressed
/// state closest to `|e, vacuum>` with other qubits in `g`, and record the
/// photon transfer. Points run in parallel; peaks are re-run with the
/// step-halving check.
pub fn sideband_scan(
    model: &SpinBosonModel,
    resonator_dims: &[usize],
    template: &DriveSpec,
    frequencies: &[f64],
    opts: ScanOptions,
) -> Result<ScanResult> {
    template.validate()?;
    if frequencies.is_empty() {
        return Err(Error::InvalidArgument("empty frequency list".into()));
    }
    let sys = ScanSystem::new(model, resonator_dims, template.target)?;
    let pool = thread_pool()?;
    let results: Vec<Result<(f64, f64)>> = pool.install(|| {
        frequencies
            .par_iter()
            .map(|&w| sys.run(template, w, opts.samples, false))
            .collect()
    });
    let mut points = Vec::with_capacity(frequencies.len());
    let mut norm_drift = 0.0f64;
    for (&w, r) in frequencies.iter().zip(results) {
        let (transfer, drift) = r?;
        norm_drift = norm_drift.max(drift);
        points.push(ScanPoint { frequency: w, transfer });
    }
    let mut peaks = find_peaks(&points, opts.relative_threshold, opts.absolute_threshold);
    if opts.verify_peaks {
        let checks: Vec<Result<(f64, f64)>> = pool.install(|| {
            peaks
                .par_iter()
                .map(|p| sys.run(template, p.frequency, opts.samples, true))
                .collect()
        });
        for (p, c) in peaks.iter_mut().zip(checks) {
            let (_, drift) = c?;
            norm_drift = norm_drift.max(drift);
            p.verified = true;
        }
    }
    Ok(ScanResult {
        points,
        peaks,
        norm_drift,
    })
}

/// Interior local maxima (plateaus count once) with half-maximum widths.
pub fn find_peaks(points: &[ScanPoint], relative: f64, absolute: f64) -> Vec<Peak> {
    let top = points.iter().map(|p| p.transfer).fold(0.0, f64::max);
    let floor = absolute.max(relative * top);
    let y: Vec<f64> = points.iter().map(|p| p.transfer).collect();
    let x: Vec<f64> = points.iter().map(|p| p.frequency).collect();
    let mut peaks = Vec::new();
    for i in 0..y.len() {
        let left_ok = i == 0 || y[i] > y[i - 1];
        let right_ok = i + 1 == y.len() || y[i] >= y[i + 1];
        if !(left_ok && right_ok) || y[i] < floor {
            continue;
        }
        let half = y[i] / 2.0;
        let mut l = i;
        while l > 0 && y[l] > half {
            l -= 1;
        }
        let xl = if y[l] <= half && l < i {
            x[l] + (half - y[l]) * (x[l + 1] - x[l]) / (y[l + 1] - y[l])
        } else {
            x[l]
        };
        let mut r = i;
        while r + 1 < y.len() && y[r] > half {
            r += 1;
        }
        let xr = if y[r] <= half && r > i {
            x[r - 1] + (y[r - 1] - half) * (x[r] - x[r - 1]) / (y[r - 1] - y[r])
        } else {
            x[r]
        };
        peaks.push(Peak {
            frequency: x[i],
            height: y[i],
            width: (xr - xl).abs(),
            verified: false,
        });
    }
    peaks
}

// ---------------------------------------------------------------------------
// Frequency planning

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionPlan {
    pub omega_1: f64,
    pub omega_2: f64,
    pub g_c: f64,
    pub omega_plus: f64,
    pub omega_minus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPlan {
    pub connections: Vec<ConnectionPlan>,
    pub guard_band: f64,
    pub min_gap: f64,
}

impl Report for FrequencyPlan {}

fn min_gap(freqs: &[f64]) -> f64 {
    let mut f = freqs.to_vec();
    f.sort_by(f64::total_cmp);
    f.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

impl FrequencyPlan {
    pub fn frequencies(&self) -> Vec<f64> {
        self.connections
            .iter()
            .flat_map(|c| [c.omega_plus, c.omega_minus])
            .collect()
    }

    /// Re-derive every frequency with the eigenproblem oracle and check the
    /// plan's invariants.
    pub fn verify(&self) -> Result<()> {
        let mut freqs = Vec::new();
        for c in &self.connections {
            let (p, m) = normal_mode_oracle(c.omega_1, c.omega_2, c.g_c)?;
            for (a, b) in [(p, c.omega_plus), (m, c.omega_minus)] {
                if (a - b).abs() > 1e-9 * a.abs() {
                    return Err(Error::InvalidArgument(format!("stored frequency {b} differs from oracle {a}")));
                }
            }
            freqs.push(p);
            freqs.push(m);
        }
        let gap = min_gap(&freqs);
        if gap < self.guard_band {
            return Err(Error::InfeasibleGuardBand {
                best: gap,
                requested: self.guard_band,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanRequest {
    /// Bare resonator pair per connection.
    pub omegas: Vec<(f64, f64)>,
    pub g_c_min: f64,
    pub g_c_max: f64,
    pub guard_band: f64,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
}

fn default_grid() -> usize {
    281
}

/// Greedy choice of one coupler value per connection from a uniform grid,
/// each maximizing the smallest pairwise gap among the frequencies chosen
/// so far, followed by coordinate-ascent sweeps.
pub fn frequency_plan(req: &PlanRequest) -> Result<FrequencyPlan> {
    if !(req.guard_band > 0.0) {
        return Err(Error::InvalidArgument("guard band must be > 0".into()));
    }
    if req.omegas.is_empty() {
        return Err(Error::InvalidArgument("at least one connection is required".into()));
    }
    if !(req.g_c_min > 0.0) || !(req.g_c_max >= req.g_c_min) || req.grid_points < 1 {
        return Err(Error::InvalidArgument("invalid coupler search range".into()));
    }
    for &(w1, w2) in &req.omegas {
        normal_mode_frequencies(w1, w2, req.g_c_max)?;
    }
    let grid: Vec<f64> = if req.grid_points == 1 {
        vec![req.g_c_min]
    } else {
        (0..req.grid_points)
            .map(|k| req.g_c_min + (req.g_c_max - req.g_c_min) * k as f64 / (req.grid_points - 1) as f64)
            .collect()
    };
    let pair = |j: usize, g: f64| -> [f64; 2] {
        let (w1, w2) = req.omegas[j];
        let (p, m) = normal_mode_frequencies(w1, w2, g).expect("range checked");
        [p, m]
    };
    let n = req.omegas.len();
    let score = |choice: &[usize]| -> f64 {
        let f: Vec<f64> = choice.iter().enumerate().flat_map(|(j, &k)| pair(j, grid[k])).collect();
        min_gap(&f)
    };
    let mut choice: Vec<usize> = Vec::new();
    for _ in 0..n {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for k in 0..grid.len() {
            let mut c = choice.clone();
            c.push(k);
            let s = score(&c);
            if s > best.0 {
                best = (s, k);
            }
        }
        choice.push(best.1);
    }
    let mut current = score(&choice);
    for _ in 0..10 {
        let mut improved = false;
        for j in 0..n {
            for k in 0..grid.len() {
                let mut c = choice.clone();
                c[j] = k;
                let s = score(&c);
                if s > current {
                    current = s;
                    choice = c;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    if current < req.guard_band {
        return Err(Error::InfeasibleGuardBand {
            best: current,
            requested: req.guard_band,
        });
    }
    let connections = choice
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let [p, m] = pair(j, grid[k]);
            ConnectionPlan {
                omega_1: req.omegas[j].0,
                omega_2: req.omegas[j].1,
                g_c: grid[k],
                omega_plus: p,
                omega_minus: m,
            }
        })
        .collect();
    Ok(FrequencyPlan {
        connections,
        guard_band: req.guard_band,
        min_gap: current,
    })
}
