//! Legendre transform, closed-form circuit parameters, truncated Fock-space
//! Hamiltonians and the two-level reduction of anharmonic modes.
//!
//! A [`HamiltonianModel`] reads
//!
//! ```text
//! H = n^T A n + phi^T P phi + sum_k a_k cos(d_k . phi + o_k),   A = K^{-1} / 4
//! ```
//!
//! with `[phi_i, n_j] = i delta_ij`, so a single mode with kinetic
//! coefficient `K = phase_scale C / 2` gets `A = 8 E_C`.
//!
//! Each mode is quantized in the harmonic basis of its own diagonal
//! coefficients: `B_i = P_ii + 1/2 sum_k (-a_k) d_ki^2 cos(o_k)` is the
//! curvature of the potential at the origin, `omega_i = 2 sqrt(A_ii B_ii)`,
//! `phi_i = phi_zpf (a + a^dag)` with `phi_zpf = (A_ii/B_ii)^(1/4)/sqrt 2` and
//! `n_i = i n_zpf (a^dag - a)` with `n_zpf = 1/(2 phi_zpf)`.

use std::f64::consts::FRAC_PI_2;

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lagrangian::{LagrangianModel, QuadraticForm, SinusoidTerm, RCOND_THRESHOLD};
use crate::linalg::{self, rcond, sorted_eigen};
use crate::netlist::{Builtin, Circuit, Topology};
use crate::spectra::{Parity, QubitCoupling, ResonatorCoupling, SpinBosonModel};
use crate::units::{angular_to_ghz, charging_energy, ghz_to_angular, inductive_energy, FEMTO, NANO};

/// Population of the highest retained level above which a truncation is rejected.
pub const TRUNCATION_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_QUBIT_DIM: usize = 12;
pub const DEFAULT_RESONATOR_DIM: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianModel {
    pub labels: Vec<String>,
    pub charge_form: QuadraticForm,
    pub quad_potential: QuadraticForm,
    pub sinusoids: Vec<SinusoidTerm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Qubit,
    Resonator,
}

/// Harmonic data of one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarmonicMode {
    pub charge_coefficient: f64,
    pub curvature: f64,
    pub omega: f64,
    pub phi_zpf: f64,
    pub n_zpf: f64,
}

impl HarmonicMode {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) || !(b > 0.0) {
            return Err(Error::Unbound(format!(
                "harmonic coefficients A = {a:e}, B = {b:e} must be positive"
            )));
        }
        let phi_zpf = (a / b).powf(0.25) / std::f64::consts::SQRT_2;
        Ok(HarmonicMode {
            charge_coefficient: a,
            curvature: b,
            omega: 2.0 * (a * b).sqrt(),
            phi_zpf,
            n_zpf: 0.5 / phi_zpf,
        })
    }
}

impl HamiltonianModel {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownVariable(label.to_string()))
    }

    /// Qubits are the `phi_q*` variables and any variable carrying a
    /// junction of its own; everything else is a resonator.
    pub fn mode_kinds(&self) -> Vec<ModeKind> {
        (0..self.dim())
            .map(|i| {
                let own_junction = self.sinusoids.iter().any(|s| s.support() == [i]);
                if own_junction || self.labels[i].starts_with("phi_q") {
                    ModeKind::Qubit
                } else {
                    ModeKind::Resonator
                }
            })
            .collect()
    }

    pub fn harmonic_mode(&self, i: usize) -> Result<HarmonicMode> {
        let a = self.charge_form.matrix[(i, i)];
        let b = self.quad_potential.matrix[(i, i)]
            + 0.5
                * self
                    .sinusoids
                    .iter()
                    .map(|s| -s.amplitude * s.direction[i].powi(2) * s.offset.cos())
                    .sum::<f64>();
        HarmonicMode::new(a, b).map_err(|e| match e {
            Error::Unbound(m) => Error::Unbound(format!("mode `{}`: {m}", self.labels[i])),
            other => other,
        })
    }

    /// The isolated one-mode Hamiltonian of variable `i` with every other
    /// variable held at zero.
    pub fn one_mode(&self, i: usize) -> OneModeHamiltonian {
        let sinusoids = self
            .sinusoids
            .iter()
            .filter(|s| s.direction[i] != 0.0)
            .map(|s| Sinusoid1 {
                amplitude: s.amplitude,
                frequency: s.direction[i],
                offset: s.offset,
            })
            .collect();
        OneModeHamiltonian {
            charge_coefficient: self.charge_form.matrix[(i, i)],
            quadratic: self.quad_potential.matrix[(i, i)],
            sinusoids,
        }
    }
}

/// `H = A K^{-1}/4` form from a Lagrangian.
pub fn legendre_transform(m: &LagrangianModel) -> Result<HamiltonianModel> {
    let k = &m.kinetic.matrix;
    for i in 0..m.dim() {
        if k.row(i).iter().all(|x| *x == 0.0) {
            return Err(Error::SingularKinetic(format!(
                "variable `{}` has no kinetic term",
                m.labels[i]
            )));
        }
    }
    let rc = rcond(k);
    if !(rc > RCOND_THRESHOLD) {
        return Err(Error::SingularKinetic(format!("reciprocal condition {rc:e}")));
    }
    let chol = nalgebra::Cholesky::new(k.clone())
        .ok_or_else(|| Error::SingularKinetic("kinetic form is not positive definite".into()))?;
    let mut a = chol.inverse() * 0.25;
    linalg::symmetrize(&mut a);
    Ok(HamiltonianModel {
        labels: m.labels.clone(),
        charge_form: QuadraticForm { matrix: a },
        quad_potential: m.quad_potential.clone(),
        sinusoids: m.sinusoids.clone(),
    })
}

// ---------------------------------------------------------------------------
// One-mode Hamiltonians

/// `amplitude * cos(frequency * phi + offset)` of a single variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sinusoid1 {
    pub amplitude: f64,
    pub frequency: f64,
    pub offset: f64,
}

impl Sinusoid1 {
    pub fn cos(amplitude: f64, frequency: f64) -> Self {
        Sinusoid1 {
            amplitude,
            frequency,
            offset: 0.0,
        }
    }

    pub fn sin(amplitude: f64, frequency: f64) -> Self {
        Sinusoid1 {
            amplitude,
            frequency,
            offset: -FRAC_PI_2,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (self.frequency * x + self.offset).cos()
    }
}

/// `H = A n^2 + P phi^2 + sum_k a_k cos(f_k phi + o_k)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OneModeHamiltonian {
    pub charge_coefficient: f64,
    pub quadratic: f64,
    pub sinusoids: Vec<Sinusoid1>,
}

/// Low-lying eigenpairs of a one-mode Hamiltonian in its harmonic basis.
#[derive(Debug, Clone)]
pub struct OneModeSpectrum {
    pub mode: HarmonicMode,
    pub energies: DVector<f64>,
    pub states: DMatrix<f64>,
    pub position: DMatrix<f64>,
}

impl OneModeHamiltonian {
    /// Transmon-like qubit `8 E_C n^2 + (E_L/4) phi^2 - E_Jq cos phi`.
    pub fn qubit(e_c: f64, e_l: f64, e_jq: f64) -> Self {
        OneModeHamiltonian {
            charge_coefficient: 8.0 * e_c,
            quadratic: e_l / 4.0,
            sinusoids: if e_jq != 0.0 {
                vec![Sinusoid1::cos(-e_jq, 1.0)]
            } else {
                Vec::new()
            },
        }
    }

    pub fn harmonic_mode(&self) -> Result<HarmonicMode> {
        let b = self.quadratic
            + 0.5
                * self
                    .sinusoids
                    .iter()
                    .map(|s| -s.amplitude * s.frequency * s.frequency * s.offset.cos())
                    .sum::<f64>();
        HarmonicMode::new(self.charge_coefficient, b)
    }

    pub fn potential(&self, x: f64) -> f64 {
        self.quadratic * x * x + self.sinusoids.iter().map(|s| s.eval(x)).sum::<f64>()
    }

    /// Dense matrix on `dim` harmonic levels.
    pub fn matrix(&self, dim: usize) -> Result<(HarmonicMode, DMatrix<f64>, DMatrix<f64>)> {
        let mode = self.harmonic_mode()?;
        let x = linalg::position(dim, mode.phi_zpf);
        let mut h = quadratic_mode_matrix(dim, &mode, self.charge_coefficient, self.quadratic);
        for s in &self.sinusoids {
            h += linalg::cos_of_symmetric(&x, s.frequency, s.offset) * s.amplitude;
        }
        linalg::symmetrize(&mut h);
        Ok((mode, h, x))
    }

    /// Eigenpairs on `dim` levels; fails if any of the lowest `checked`
    /// states populates the top level above [`TRUNCATION_TOLERANCE`].
    pub fn spectrum(&self, dim: usize, checked: usize) -> Result<OneModeSpectrum> {
        let (mode, h, x) = self.matrix(dim)?;
        let (energies, states) = sorted_eigen(h);
        for k in 0..checked.min(dim) {
            let top = states[(dim - 1, k)].powi(2);
            if top > TRUNCATION_TOLERANCE {
                return Err(Error::TruncationTooSmall {
                    mode: format!("one-mode state {k}"),
                    population: top,
                });
            }
        }
        Ok(OneModeSpectrum {
            mode,
            energies,
            states,
            position: x,
        })
    }

    /// Matrix of `sum_k a_k cos(f_k phi + o_k)` on the same basis.
    pub fn function_matrix(spectrum: &OneModeSpectrum, f: &[Sinusoid1]) -> DMatrix<f64> {
        let dim = spectrum.position.nrows();
        let mut m = DMatrix::zeros(dim, dim);
        for s in f {
            m += linalg::cos_of_symmetric(&spectrum.position, s.frequency, s.offset) * s.amplitude;
        }
        m
    }
}

impl OneModeSpectrum {
    /// `<i|M|j>` in the eigenbasis.
    pub fn element(&self, m: &DMatrix<f64>, i: usize, j: usize) -> f64 {
        let vi = self.states.column(i);
        let vj = self.states.column(j);
        vi.dot(&(m * vj))
    }

    /// Real antisymmetric `N` with `n = i N` on the same basis.
    pub fn charge_matrix(&self) -> DMatrix<f64> {
        let dim = self.position.nrows();
        let a = linalg::annihilation(dim);
        (a.transpose() - a) * self.mode.n_zpf
    }

    /// Gap and anharmonicity oracles from the three lowest levels:
    /// `Delta = 2(E1-E0) - (E2-E1)`, `delta = (E2-E1) - (E1-E0)`.
    pub fn gap_and_anharmonicity(&self) -> (f64, f64) {
        let e = &self.energies;
        let (d1, d2) = (e[1] - e[0], e[2] - e[1]);
        (2.0 * d1 - d2, d2 - d1)
    }
}

/// `A n^2 + P phi^2` on `dim` levels using the normal-ordered forms, so the
/// truncation only drops couplings to levels above the cut.
fn quadratic_mode_matrix(dim: usize, mode: &HarmonicMode, a_coef: f64, p_coef: f64) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(dim, dim);
    let nz2 = mode.n_zpf * mode.n_zpf;
    let pz2 = mode.phi_zpf * mode.phi_zpf;
    for n in 0..dim {
        let diag = 2.0 * n as f64 + 1.0;
        h[(n, n)] = a_coef * nz2 * diag + p_coef * pz2 * diag;
        if n + 2 < dim {
            let off = ((n + 1) as f64 * (n + 2) as f64).sqrt();
            let v = (p_coef * pz2 - a_coef * nz2) * off;
            h[(n, n + 2)] = v;
            h[(n + 2, n)] = v;
        }
    }
    h
}

// ---------------------------------------------------------------------------
// Closed-form parameters

#[derive(Debug, Clone, Serialize)]
pub struct QubitParameters {
    pub label: String,
    pub e_c: f64,
    pub e_l_total: f64,
    pub e_jq: f64,
    pub e_jq_star: f64,
    pub gap: f64,
    pub anharmonicity: f64,
}

impl QubitParameters {
    pub fn from_energies(label: &str, e_c: f64, e_l_total: f64, e_jq: f64) -> Self {
        let e_jq_star = e_jq + e_l_total / 2.0;
        QubitParameters {
            label: label.to_string(),
            e_c,
            e_l_total,
            e_jq,
            e_jq_star,
            gap: 4.0 * (e_jq_star * e_c).sqrt(),
            anharmonicity: -2.0 * e_c * e_jq / e_jq_star,
        }
    }

    pub fn one_mode(&self) -> OneModeHamiltonian {
        OneModeHamiltonian::qubit(self.e_c, self.e_l_total, self.e_jq)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResonatorParameters {
    pub label: String,
    pub omega: f64,
    pub phi_zpf: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingParameters {
    pub qubit: String,
    pub resonator: String,
    pub g: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResonatorCouplingParameters {
    pub first: String,
    pub second: String,
    pub g_c: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivedParameters {
    pub topology: Builtin,
    pub qubits: Vec<QubitParameters>,
    pub resonators: Vec<ResonatorParameters>,
    pub couplings: Vec<CouplingParameters>,
    pub resonator_couplings: Vec<ResonatorCouplingParameters>,
}

impl DerivedParameters {
    /// Flat `name -> value` table, each energy in rad/s and in GHz.
    pub fn flat_report(&self) -> std::collections::BTreeMap<String, f64> {
        let mut out = std::collections::BTreeMap::new();
        let mut put = |key: String, v: f64| {
            out.insert(format!("{key}_ghz"), angular_to_ghz(v));
            out.insert(key, v);
        };
        for q in &self.qubits {
            put(format!("{}.E_C", q.label), q.e_c);
            put(format!("{}.E_L_total", q.label), q.e_l_total);
            put(format!("{}.E_Jq", q.label), q.e_jq);
            put(format!("{}.E_Jq_star", q.label), q.e_jq_star);
            put(format!("{}.Delta", q.label), q.gap);
            put(format!("{}.delta", q.label), q.anharmonicity);
        }
        for r in &self.resonators {
            put(format!("{}.omega_r", r.label), r.omega);
        }
        for c in &self.couplings {
            put(format!("{}.{}.g1", c.qubit, c.resonator), c.g);
        }
        for c in &self.resonator_couplings {
            put(format!("{}.{}.g_c", c.first, c.second), c.g_c);
        }
        out
    }
}

/// Element values of one resonator arm, in SI units.
struct Arm {
    c: f64,
    l: f64,
    e_j: f64,
}

fn arm(t: &Topology, sfx: &str) -> Arm {
    Arm {
        c: t.param(&format!("C{sfx}"), "C") * FEMTO,
        l: t.param(&format!("L{sfx}"), "L") * NANO,
        e_j: ghz_to_angular(t.param(&format!("E_J{sfx}"), "E_J")),
    }
}

/// Longitudinal coupling of a symmetric block with arrays of length `k`:
/// `g = -(E_J / 4k^3) sqrt(E_C / E*_Jq) phi_zpf,r` (leading order in
/// `phi_zpf,q`), negative for the `sigma_z = |e><e| - |g><g|` convention.
pub fn longitudinal_coupling_closed_form(e_j: f64, q: &QubitParameters, phi_zpf_r: f64, k: u32) -> f64 {
    let k3 = f64::from(k).powi(3);
    -(e_j / (4.0 * k3)) * (q.e_c / q.e_jq_star).sqrt() * phi_zpf_r
}

/// Closed forms for a builtin circuit's reduced Hamiltonian.
///
/// Qubit: `E_C = e^2/2C_tot` with `C_tot = 2C_q + sum_j (C_j + C_g,j)`,
/// `E*_Jq = E_Jq + E_L,tot/2`, `Delta = 4 sqrt(E*_Jq E_C)`,
/// `delta = -2 E_C E_Jq / E*_Jq`. Two blocks:
/// `omega_r1 = sqrt((2C_2 + C_g) / ((2C_1C_2 + C_g(C_1+C_2)) L_1))` and
/// `g_c = C_g / (2 sqrt(2C_1C_2 + C_g(C_1+C_2)) ((2C_1+C_g)(2C_2+C_g)L_1L_2)^(1/4))`,
/// generalized to a stray capacitance by replacing the `C_g/8` kinetic
/// coupling with `C_g^2 / (2(4C_g+C_s))`.
pub fn derived_parameters(h: &HamiltonianModel, circuit: &Circuit) -> Result<DerivedParameters> {
    let t = circuit
        .topology
        .as_ref()
        .ok_or_else(|| Error::UnsupportedTopology("closed forms need a builtin circuit".into()))?;
    let ejq = |sfx: &str| ghz_to_angular(t.param(&format!("E_Jq{sfx}"), "E_Jq"));
    let cq = |sfx: &str| t.param(&format!("C_q{sfx}"), "C_q") * FEMTO;
    let mut out = DerivedParameters {
        topology: t.builtin,
        qubits: Vec::new(),
        resonators: Vec::new(),
        couplings: Vec::new(),
        resonator_couplings: Vec::new(),
    };
    let single_arm_resonator = |label: &str, a: &Arm| ResonatorParameters {
        label: label.to_string(),
        omega: 1.0 / (a.l * a.c).sqrt(),
        phi_zpf: ((a.l / a.c).sqrt() / crate::units::phase_scale()).sqrt(),
    };
    match t.builtin {
        Builtin::QubitResonator | Builtin::JunctionArrayCoupler | Builtin::QubitNResonators => {
            let (arms, k): (Vec<(String, Arm)>, u32) = match t.builtin {
                Builtin::QubitNResonators => {
                    let n = t.params["n"] as usize;
                    ((1..=n).map(|j| (format!("phi_r{j}"), arm(t, &format!("_{j}")))).collect(), 1)
                }
                Builtin::JunctionArrayCoupler => (vec![("phi_r".into(), arm(t, ""))], t.params["k"] as u32),
                _ => (vec![("phi_r".into(), arm(t, ""))], 1),
            };
            let c_tot = 2.0 * cq("") + arms.iter().map(|(_, a)| a.c).sum::<f64>();
            let inv_l: f64 = arms.iter().map(|(_, a)| 1.0 / a.l).sum();
            let q = QubitParameters::from_energies(
                "phi_q",
                charging_energy(c_tot),
                inductive_energy(1.0 / inv_l),
                ejq(""),
            );
            for (label, a) in &arms {
                let r = single_arm_resonator(label, a);
                out.couplings.push(CouplingParameters {
                    qubit: q.label.clone(),
                    resonator: label.clone(),
                    g: longitudinal_coupling_closed_form(a.e_j, &q, r.phi_zpf, k),
                });
                out.resonators.push(r);
            }
            out.qubits.push(q);
        }
        Builtin::TwoBlocks => {
            let cg = t.param("C_g", "C_g") * FEMTO;
            let cs = t.param("C_s", "C_s") * FEMTO;
            let arms = [arm(t, "_1"), arm(t, "_2")];
            let kappa = cg * cg / (2.0 * (4.0 * cg + cs));
            // reduced resonator kinetic form (farads): k_i on the diagonal, -kappa off it
            let kd = [(arms[0].c + cg) / 4.0 - kappa, (arms[1].c + cg) / 4.0 - kappa];
            let det = kd[0] * kd[1] - kappa * kappa;
            let scale = crate::units::phase_scale();
            // A = K^{-1}/4 and P = scale/(4L), in rad/s
            let a_diag = [kd[1] / (4.0 * det * scale), kd[0] / (4.0 * det * scale)];
            let a_off = kappa / (4.0 * det * scale);
            let mut zpf = [0.0; 2];
            for i in 0..2 {
                let sfx = format!("_{}", i + 1);
                let c_tot = 2.0 * cq(&sfx) + arms[i].c + cg;
                let q = QubitParameters::from_energies(
                    &format!("phi_q{}", i + 1),
                    charging_energy(c_tot),
                    inductive_energy(arms[i].l),
                    ejq(&sfx),
                );
                let p = scale / (4.0 * arms[i].l);
                let mode = HarmonicMode::new(a_diag[i], p)?;
                zpf[i] = mode.phi_zpf;
                let label = format!("phi_r{}", i + 1);
                out.couplings.push(CouplingParameters {
                    qubit: q.label.clone(),
                    resonator: label.clone(),
                    g: longitudinal_coupling_closed_form(arms[i].e_j, &q, mode.phi_zpf, 1),
                });
                out.resonators.push(ResonatorParameters {
                    label,
                    omega: mode.omega,
                    phi_zpf: mode.phi_zpf,
                });
                out.qubits.push(q);
            }
            out.resonator_couplings.push(ResonatorCouplingParameters {
                first: "phi_r1".into(),
                second: "phi_r2".into(),
                g_c: 2.0 * a_off * (0.5 / zpf[0]) * (0.5 / zpf[1]),
            });
        }
        Builtin::Plaquette => {
            return Err(Error::UnsupportedTopology(
                "no closed forms for the plaquette; reduce it per connection".into(),
            ))
        }
    }
    for q in &out.qubits {
        h.index_of(&q.label)?;
    }
    for r in &out.resonators {
        h.index_of(&r.label)?;
    }
    Ok(out)
}

/// Printed two-block closed forms, valid without stray capacitance.
pub fn two_block_printed_forms(c1: f64, c2: f64, cg: f64, l1: f64, l2: f64) -> (f64, f64) {
    let x = 2.0 * c1 * c2 + cg * (c1 + c2);
    let omega_r1 = ((2.0 * c2 + cg) / (x * l1)).sqrt();
    let g_c = cg / (2.0 * x.sqrt() * ((2.0 * c1 + cg) * (2.0 * c2 + cg) * l1 * l2).powf(0.25));
    (omega_r1, g_c)
}

// ---------------------------------------------------------------------------
// Fock-space operators

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mode {
    pub label: String,
    pub dim: usize,
    pub kind: ModeKind,
}

/// Dense operator on the tensor product of truncated modes; mode 0 is the
/// most significant index.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    pub modes: Vec<Mode>,
    pub matrix: DMatrix<Complex64>,
}

impl FockOperator {
    pub fn new(modes: Vec<Mode>, matrix: DMatrix<Complex64>) -> Result<Self> {
        let dim: usize = modes.iter().map(|m| m.dim).product();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: matrix.nrows(),
            });
        }
        Ok(FockOperator { modes, matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// max |H - H^dag| relative to the largest entry.
    pub fn hermiticity_deviation(&self) -> f64 {
        linalg::hermiticity_deviation(&self.matrix)
    }

    /// The real part, if every imaginary part is exactly zero.
    pub fn real_matrix(&self) -> Option<DMatrix<f64>> {
        if self.matrix.iter().all(|z| z.im == 0.0) {
            Some(self.matrix.map(|z| z.re))
        } else {
            None
        }
    }

    pub fn levels_of(&self, mut index: usize) -> Vec<usize> {
        let mut levels = vec![0; self.modes.len()];
        for (k, m) in self.modes.iter().enumerate().rev() {
            levels[k] = index % m.dim;
            index /= m.dim;
        }
        levels
    }

    pub fn index_of(&self, levels: &[usize]) -> usize {
        self.modes
            .iter()
            .zip(levels)
            .fold(0, |acc, (m, &l)| acc * m.dim + l)
    }

    /// Population of the top level of every mode with more than one level.
    pub fn top_level_populations(&self, state: &DVector<Complex64>) -> Vec<f64> {
        let mut pops = vec![0.0; self.modes.len()];
        for (i, amp) in state.iter().enumerate() {
            let levels = self.levels_of(i);
            for (k, m) in self.modes.iter().enumerate() {
                if m.dim > 1 && levels[k] == m.dim - 1 {
                    pops[k] += amp.norm_sqr();
                }
            }
        }
        pops
    }
}

#[derive(Debug, Clone)]
pub struct FockHamiltonian {
    pub operator: FockOperator,
    /// Frobenius norm of (exact - linearized) when the coupling was linearized.
    pub residual_bound: Option<f64>,
    /// Ground-state population of each mode's top level.
    pub top_populations: Vec<f64>,
}

/// Embed single-mode matrices into the full space (identity elsewhere).
fn embed(dims: &[usize], factors: &[(usize, DMatrix<f64>)]) -> DMatrix<f64> {
    let mut out = DMatrix::from_element(1, 1, 1.0);
    for (k, &d) in dims.iter().enumerate() {
        let f = factors
            .iter()
            .find(|(i, _)| *i == k)
            .map(|(_, m)| m.clone())
            .unwrap_or_else(|| DMatrix::identity(d, d));
        out = out.kronecker(&f);
    }
    out
}

fn embed_complex(dims: &[usize], factors: &[(usize, DMatrix<Complex64>)]) -> DMatrix<Complex64> {
    let mut out = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
    for (k, &d) in dims.iter().enumerate() {
        let f = factors
            .iter()
            .find(|(i, _)| *i == k)
            .map(|(_, m)| m.clone())
            .unwrap_or_else(|| DMatrix::identity(d, d));
        out = out.kronecker(&f);
    }
    out
}

/// Real matrix of `cos(d . phi + o)` over several modes.
fn sinusoid_matrix(dims: &[usize], positions: &[DMatrix<f64>], s: &SinusoidTerm) -> DMatrix<f64> {
    let support = s.support();
    if support.len() == 1 {
        let i = support[0];
        let m = linalg::cos_of_symmetric(&positions[i], s.direction[i], s.offset);
        return embed(dims, &[(i, m)]);
    }
    let factors: Vec<(usize, DMatrix<Complex64>)> = support
        .iter()
        .map(|&i| (i, linalg::expi_of_symmetric(&positions[i], s.direction[i])))
        .collect();
    let phase = Complex64::from_polar(1.0, s.offset);
    embed_complex(dims, &factors).map(|z| (z * phase).re)
}

/// Linearize `cos(d_q phi_q + d_r . phi_r + o)` in the resonator components:
/// `cos(d_q phi_q + o) - sin(d_q phi_q + o) (d_r . phi_r)`.
fn linearized_sinusoid(
    dims: &[usize],
    positions: &[DMatrix<f64>],
    kinds: &[ModeKind],
    s: &SinusoidTerm,
) -> DMatrix<f64> {
    let support = s.support();
    let (qs, rs): (Vec<usize>, Vec<usize>) = support.iter().partition(|&&i| kinds[i] == ModeKind::Qubit);
    if qs.is_empty() || rs.is_empty() {
        return sinusoid_matrix(dims, positions, s);
    }
    let mut qpart = s.clone();
    for &r in &rs {
        qpart.direction[r] = 0.0;
    }
    let cos_q = sinusoid_matrix(dims, positions, &qpart);
    qpart.offset -= FRAC_PI_2;
    let sin_q = sinusoid_matrix(dims, positions, &qpart);
    let mut lin = DMatrix::zeros(cos_q.nrows(), cos_q.ncols());
    for &r in &rs {
        lin += embed(dims, &[(r, positions[r].clone())]) * s.direction[r];
    }
    cos_q - sin_q * lin
}

/// Truncated Fock-space Hamiltonian of `h`. Each mode is expanded in its
/// own harmonic basis; sinusoids enter as matrix functions of the truncated
/// phase operators, or linearized in the resonator variables.
pub fn fock_hamiltonian(h: &HamiltonianModel, dims: &[usize], linearize_coupling: bool) -> Result<FockHamiltonian> {
    let n = h.dim();
    if dims.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: dims.len(),
        });
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument("truncation dimensions must be >= 1".into()));
    }
    let kinds = h.mode_kinds();
    let modes: Vec<HarmonicMode> = (0..n).map(|i| h.harmonic_mode(i)).collect::<Result<_>>()?;
    let positions: Vec<DMatrix<f64>> = (0..n).map(|i| linalg::position(dims[i], modes[i].phi_zpf)).collect();
    let charges: Vec<DMatrix<f64>> = (0..n)
        .map(|i| {
            let a = linalg::annihilation(dims[i]);
            (a.transpose() - a) * modes[i].n_zpf
        })
        .collect();
    let a = &h.charge_form.matrix;
    let p = &h.quad_potential.matrix;
    let total: usize = dims.iter().product();

    let mut quad = DMatrix::zeros(total, total);
    for i in 0..n {
        let m = quadratic_mode_matrix(dims[i], &modes[i], a[(i, i)], p[(i, i)]);
        quad += embed(dims, &[(i, m)]);
        for j in (i + 1)..n {
            // n_i n_j = -N_i N_j
            if a[(i, j)] != 0.0 {
                quad -= embed(dims, &[(i, charges[i].clone()), (j, charges[j].clone())]) * (2.0 * a[(i, j)]);
            }
            if p[(i, j)] != 0.0 {
                quad += embed(dims, &[(i, positions[i].clone()), (j, positions[j].clone())]) * (2.0 * p[(i, j)]);
            }
        }
    }

    let exact_sin = |s: &SinusoidTerm| sinusoid_matrix(dims, &positions, s) * s.amplitude;
    let mut hm = quad.clone();
    let mut residual_bound = None;
    if linearize_coupling {
        let mut diff = DMatrix::zeros(total, total);
        for s in &h.sinusoids {
            let lin = linearized_sinusoid(dims, &positions, &kinds, s) * s.amplitude;
            diff += exact_sin(s) - &lin;
            hm += lin;
        }
        residual_bound = Some(diff.norm());
    } else {
        for s in &h.sinusoids {
            hm += exact_sin(s);
        }
    }
    linalg::symmetrize(&mut hm);

    let fock_modes: Vec<Mode> = (0..n)
        .map(|i| Mode {
            label: h.labels[i].clone(),
            dim: dims[i],
            kind: kinds[i],
        })
        .collect();
    let operator = FockOperator::new(fock_modes, linalg::to_complex(&hm))?;

    let (_, vecs) = sorted_eigen(hm);
    let ground = vecs.column(0).map(|x| Complex64::new(x, 0.0));
    let top_populations = operator.top_level_populations(&ground);
    for (k, pop) in top_populations.iter().enumerate() {
        if *pop > TRUNCATION_TOLERANCE {
            return Err(Error::TruncationTooSmall {
                mode: operator.modes[k].label.clone(),
                population: *pop,
            });
        }
    }
    Ok(FockHamiltonian {
        operator,
        residual_bound,
        top_populations,
    })
}

/// Default truncations: qubits [`DEFAULT_QUBIT_DIM`], resonators [`DEFAULT_RESONATOR_DIM`].
pub fn default_truncation(h: &HamiltonianModel) -> Vec<usize> {
    h.mode_kinds()
        .iter()
        .map(|k| match k {
            ModeKind::Qubit => DEFAULT_QUBIT_DIM,
            ModeKind::Resonator => DEFAULT_RESONATOR_DIM,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Two-level reduction

#[derive(Debug, Clone, Copy)]
pub struct TwoLevelOptions {
    /// Harmonic levels used for each isolated qubit.
    pub qubit_dim: usize,
    /// Required ratio |delta| / (largest coupling element).
    pub gate_factor: f64,
}

impl Default for TwoLevelOptions {
    fn default() -> Self {
        TwoLevelOptions {
            qubit_dim: 40,
            gate_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QubitReport {
    pub label: String,
    pub gap: f64,
    pub anharmonicity: f64,
}

/// Projection of one qubit-resonator coupling onto the qubit's two lowest states.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingReport {
    pub qubit: String,
    pub resonator: String,
    /// (<0|c|0> - <1|c|1>)/2 of the linear coupling factor `c(phi_q)`.
    pub longitudinal: f64,
    /// |<0|c|1>|.
    pub transverse: f64,
    /// Coefficient of `sigma_z (a + a^dag)`.
    pub g: f64,
    /// Coefficient of the static `(a + a^dag)` drive.
    pub bias: f64,
    /// Largest neglected transverse element, in energy units.
    pub transverse_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoLevelReduction {
    pub model: SpinBosonModel,
    pub qubits: Vec<QubitReport>,
    pub couplings: Vec<CouplingReport>,
}

fn qubit_factor(sinusoids: &[&SinusoidTerm], q: usize, weight: impl Fn(&SinusoidTerm) -> f64, shift: f64) -> Vec<Sinusoid1> {
    sinusoids
        .iter()
        .map(|s| Sinusoid1 {
            amplitude: s.amplitude * weight(s),
            frequency: s.direction[q],
            offset: s.offset + shift,
        })
        .collect()
}

/// Project every qubit of `h` onto its two lowest eigenstates and express
/// the qubit-resonator couplings in spin-boson form.
pub fn two_level_reduce(h: &HamiltonianModel, opts: TwoLevelOptions) -> Result<TwoLevelReduction> {
    let kinds = h.mode_kinds();
    let n = h.dim();
    let qidx: Vec<usize> = (0..n).filter(|&i| kinds[i] == ModeKind::Qubit).collect();
    let ridx: Vec<usize> = (0..n).filter(|&i| kinds[i] == ModeKind::Resonator).collect();
    if qidx.is_empty() {
        return Err(Error::TwoLevelInvalid("no anharmonic mode".into()));
    }
    let p = &h.quad_potential.matrix;
    let pmax = linalg::max_abs(p);
    for i in 0..n {
        for j in (i + 1)..n {
            if p[(i, j)].abs() > 1e-12 * pmax {
                return Err(Error::UnsupportedTopology(format!(
                    "inductive coupling between `{}` and `{}`",
                    h.labels[i], h.labels[j]
                )));
            }
        }
    }
    for s in &h.sinusoids {
        if s.support().iter().filter(|&&i| kinds[i] == ModeKind::Resonator).count() > 1
            || s.support().iter().filter(|&&i| kinds[i] == ModeKind::Qubit).count() > 1
        {
            return Err(Error::UnsupportedTopology(
                "a junction couples more than one qubit or resonator".into(),
            ));
        }
    }

    let rmodes: Vec<HarmonicMode> = ridx.iter().map(|&r| h.harmonic_mode(r)).collect::<Result<_>>()?;
    let mut model = SpinBosonModel {
        qubit_labels: qidx.iter().map(|&i| h.labels[i].clone()).collect(),
        deltas: Vec::new(),
        resonator_labels: ridx.iter().map(|&i| h.labels[i].clone()).collect(),
        omegas: rmodes.iter().map(|m| m.omega).collect(),
        couplings: Vec::new(),
        resonator_couplings: Vec::new(),
        biases: vec![0.0; ridx.len()],
    };
    let mut qubits = Vec::new();
    let mut couplings = Vec::new();
    let a = &h.charge_form.matrix;

    for (qk, &q) in qidx.iter().enumerate() {
        let one = h.one_mode(q);
        let spec = one.spectrum(opts.qubit_dim, 3)?;
        let (_, delta) = spec.gap_and_anharmonicity();
        let gap = spec.energies[1] - spec.energies[0];
        model.deltas.push(gap);
        qubits.push(QubitReport {
            label: h.labels[q].clone(),
            gap,
            anharmonicity: delta,
        });
        let charge = spec.charge_matrix();
        let n01 = spec.element(&charge, 0, 1).abs();

        let mut worst = 0.0f64;
        for (rk, &r) in ridx.iter().enumerate() {
            let touching: Vec<&SinusoidTerm> = h
                .sinusoids
                .iter()
                .filter(|s| s.direction[q] != 0.0 && s.direction[r] != 0.0)
                .collect();
            let charge_coupling = 2.0 * a[(q, r)].abs() * rmodes[rk].n_zpf * n01;
            if touching.is_empty() && charge_coupling == 0.0 {
                continue;
            }
            // amp cos(dq q + o + dr r) = amp cos(dq q + o) cos(dr r) - amp sin(dq q + o) sin(dr r)
            let linear = qubit_factor(&touching, q, |s| -s.direction[r], -FRAC_PI_2);
            let even = qubit_factor(&touching, q, |s| 0.5 * s.direction[r].powi(2), 0.0);
            let lm = OneModeHamiltonian::function_matrix(&spec, &linear);
            let em = OneModeHamiltonian::function_matrix(&spec, &even);
            let (f00, f11, f01) = (spec.element(&lm, 0, 0), spec.element(&lm, 1, 1), spec.element(&lm, 0, 1));
            let longitudinal = (f00 - f11) / 2.0;
            let transverse = f01.abs();
            let zpf = rmodes[rk].phi_zpf;
            let g = -longitudinal * zpf;
            let bias = 0.5 * (f00 + f11) * zpf;
            let even_t = spec.element(&em, 0, 1).abs() * zpf * zpf;
            let transverse_residual = (transverse * zpf).max(even_t).max(charge_coupling);
            worst = worst.max(g.abs()).max(transverse_residual);
            model.biases[rk] += bias;
            if g != 0.0 {
                model.couplings.push(QubitCoupling {
                    qubit: qk,
                    resonator: rk,
                    g,
                    parity: Parity::Longitudinal,
                });
            }
            couplings.push(CouplingReport {
                qubit: h.labels[q].clone(),
                resonator: h.labels[r].clone(),
                longitudinal,
                transverse,
                g,
                bias,
                transverse_residual,
            });
        }
        if !(delta.abs() > opts.gate_factor * worst) || delta.abs() < 1e-12 * gap.abs() {
            return Err(Error::TwoLevelInvalid(format!(
                "qubit `{}` has |delta| = {:e}, needs > {} x {:e}",
                h.labels[q],
                delta.abs(),
                opts.gate_factor,
                worst
            )));
        }
    }

    for (x, &i) in ridx.iter().enumerate() {
        for (y, &j) in ridx.iter().enumerate().skip(x + 1) {
            if a[(i, j)] != 0.0 {
                model.resonator_couplings.push(ResonatorCoupling {
                    first: x,
                    second: y,
                    g_c: 2.0 * a[(i, j)] * rmodes[x].n_zpf * rmodes[y].n_zpf,
                });
            }
        }
    }
    if model.omegas.iter().any(|w| !(*w > 0.0)) {
        warn!("non-positive resonator frequency in reduced model");
    }
    Ok(TwoLevelReduction {
        model,
        qubits,
        couplings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::reduce_circuit;
    use crate::netlist::builtin_circuit;
    use std::collections::BTreeMap;

    fn hamiltonian(b: Builtin, p: &[(&str, f64)]) -> (Circuit, HamiltonianModel) {
        let params: BTreeMap<String, f64> = p.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let c = builtin_circuit(b, &params).unwrap();
        let red = reduce_circuit(&c).unwrap();
        (c, legendre_transform(&red.reduced).unwrap())
    }

    #[test]
    fn closed_forms_for_spec_example() {
        let q = QubitParameters::from_energies("q", 0.25, 4.0, 10.0);
        assert!((q.e_jq_star - 12.0).abs() < 1e-12);
        assert!((q.gap - 4.0 * 3.0f64.sqrt()).abs() < 1e-12);
        assert!((q.anharmonicity + 0.25 * 20.0 / 12.0).abs() < 1e-12);
        let h = QubitParameters::from_energies("q", 0.25, 4.0, 0.0);
        assert_eq!(h.anharmonicity, 0.0);
    }

    #[test]
    fn qubit_charge_coefficient_is_8ec() {
        let (c, h) = hamiltonian(Builtin::QubitResonator, &[]);
        let d = derived_parameters(&h, &c).unwrap();
        let q = h.index_of("phi_q").unwrap();
        let a = h.charge_form.matrix[(q, q)];
        assert!((a - 8.0 * d.qubits[0].e_c).abs() < 1e-12 * a);
        // quadratic potential E_L,tot / 4
        let p = h.quad_potential.matrix[(q, q)];
        assert!((p - d.qubits[0].e_l_total / 4.0).abs() < 1e-12 * p);
    }

    #[test]
    fn lc_mode_frequency() {
        let (c, h) = hamiltonian(Builtin::QubitResonator, &[("E_J", 0.0)]);
        let r = h.index_of("phi_r").unwrap();
        let mode = h.harmonic_mode(r).unwrap();
        let t = c.topology.unwrap();
        let expect = 1.0 / (t.params["L"] * NANO * t.params["C"] * FEMTO).sqrt();
        assert!((mode.omega - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn zero_kinetic_row_rejected() {
        let (_, h) = hamiltonian(Builtin::QubitResonator, &[]);
        let mut m = LagrangianModel {
            labels: h.labels.clone(),
            kinetic: QuadraticForm::zeros(2),
            quad_potential: h.quad_potential.clone(),
            sinusoids: h.sinusoids.clone(),
        };
        m.kinetic.matrix[(0, 0)] = 1.0;
        assert!(matches!(legendre_transform(&m), Err(Error::SingularKinetic(_))));
    }

    #[test]
    fn two_block_forms_match_printed() {
        let (c, h) = hamiltonian(Builtin::TwoBlocks, &[]);
        let d = derived_parameters(&h, &c).unwrap();
        let (w, gc) = two_block_printed_forms(100.0 * FEMTO, 100.0 * FEMTO, 10.0 * FEMTO, 40.0 * NANO, 40.0 * NANO);
        assert!((d.resonators[0].omega - w).abs() < 1e-12 * w);
        assert!((d.resonator_couplings[0].g_c - gc).abs() < 1e-12 * gc);
        // and with the reduced Hamiltonian
        let r1 = h.index_of("phi_r1").unwrap();
        let mode = h.harmonic_mode(r1).unwrap();
        assert!((mode.omega - w).abs() < 1e-10 * w);
    }

    #[test]
    fn fock_is_hermitian_and_frozen_resonator() {
        let (_, h) = hamiltonian(Builtin::QubitResonator, &[]);
        let f = fock_hamiltonian(&h, &[12, 10], false).unwrap();
        assert!(f.operator.hermiticity_deviation() < 1e-12);
        let frozen = fock_hamiltonian(&h, &[12, 1], false).unwrap();
        assert_eq!(frozen.operator.dim(), 12);
    }

    #[test]
    fn decoupled_sectors_commute() {
        let (_, h) = hamiltonian(Builtin::QubitResonator, &[("E_J", 0.0)]);
        let f = fock_hamiltonian(&h, &[8, 6], false).unwrap();
        let m = &f.operator;
        let scale = m.matrix.iter().fold(0.0f64, |a, z| a.max(z.norm()));
        // qubit-level changes together with resonator-level changes must vanish
        for i in 0..m.dim() {
            for j in 0..m.dim() {
                let (li, lj) = (m.levels_of(i), m.levels_of(j));
                if li[0] != lj[0] && li[1] != lj[1] {
                    assert!(m.matrix[(i, j)].norm() < 1e-14 * scale);
                }
            }
        }
    }

    #[test]
    fn harmonic_qubit_refused() {
        let (_, h) = hamiltonian(Builtin::QubitResonator, &[("E_Jq", 0.0)]);
        match two_level_reduce(&h, TwoLevelOptions::default()) {
            Err(e) => assert!(e.to_string().starts_with("two-level approximation invalid")),
            Ok(_) => panic!("expected refusal"),
        }
    }

    #[test]
    fn symmetric_block_is_longitudinal() {
        let (_, h) = hamiltonian(Builtin::QubitResonator, &[]);
        let red = two_level_reduce(&h, TwoLevelOptions::default()).unwrap();
        let c = &red.couplings[0];
        assert!(c.transverse < 1e-12 * c.longitudinal.abs().max(1.0), "T = {}", c.transverse);
        assert!(c.longitudinal.abs() > 0.0);
        assert!(c.g < 0.0);
    }
}
