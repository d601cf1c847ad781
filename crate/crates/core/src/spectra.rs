//! Spin-boson models, diagonalization with adiabatic labels, coupling-parity
//! classification, perturbative and exact frames, and normal modes.
//!
//! Model convention, with `sigma_z = |e><e| - |g><g|` (level 0 = g):
//!
//! ```text
//! H = sum_i Delta_i/2 sigma_z^i + sum_j omega_j a_j^dag a_j
//!   + sum g sigma_{z|x}^i (a_j + a_j^dag) + sum_j eps_j (a_j + a_j^dag)
//!   - sum g_c (a_j^dag - a_j)(a_k^dag - a_k)
//! ```

use std::f64::consts::FRAC_PI_2;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, generalized_eigenvalues, sorted_eigen};
use crate::quantize::{FockOperator, HamiltonianModel, Mode, ModeKind, OneModeHamiltonian, Sinusoid1};
use crate::report::format_float;

/// Relative tolerance below which a classifier amplitude counts as zero.
pub const PARITY_TOLERANCE: f64 = 1e-9;
/// Overlap below which an adiabatic label is considered ambiguous.
pub const LABEL_OVERLAP_MIN: f64 = 0.3;
pub const DISPERSIVE_WARNING: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Longitudinal,
    Transverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitCoupling {
    pub qubit: usize,
    pub resonator: usize,
    pub g: f64,
    pub parity: Parity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonatorCoupling {
    pub first: usize,
    pub second: usize,
    pub g_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinBosonModel {
    pub qubit_labels: Vec<String>,
    pub deltas: Vec<f64>,
    pub resonator_labels: Vec<String>,
    pub omegas: Vec<f64>,
    pub couplings: Vec<QubitCoupling>,
    pub resonator_couplings: Vec<ResonatorCoupling>,
    /// Static `(a + a^dag)` drive per resonator.
    #[serde(default)]
    pub biases: Vec<f64>,
}

/// Sparse operator on the qubit (2 levels each) x resonator product space.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub modes: Vec<Mode>,
    pub matrix: CsrMatrix<Complex64>,
}

impl SparseOperator {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn to_dense(&self) -> FockOperator {
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for (i, j, v) in self.matrix.triplet_iter() {
            m[(i, j)] += *v;
        }
        FockOperator {
            modes: self.modes.clone(),
            matrix: m,
        }
    }
}

/// Mixed-radix index arithmetic for a product basis.
#[derive(Debug, Clone)]
pub struct Layout {
    pub dims: Vec<usize>,
    pub strides: Vec<usize>,
}

impl Layout {
    pub fn new(dims: &[usize]) -> Self {
        let mut strides = vec![1; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        Layout {
            dims: dims.to_vec(),
            strides,
        }
    }

    pub fn total(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn level(&self, index: usize, mode: usize) -> usize {
        (index / self.strides[mode]) % self.dims[mode]
    }

    pub fn index(&self, levels: &[usize]) -> usize {
        levels.iter().zip(&self.strides).map(|(l, s)| l * s).sum()
    }
}

impl SpinBosonModel {
    fn empty() -> Self {
        SpinBosonModel {
            qubit_labels: Vec::new(),
            deltas: Vec::new(),
            resonator_labels: Vec::new(),
            omegas: Vec::new(),
            couplings: Vec::new(),
            resonator_couplings: Vec::new(),
            biases: Vec::new(),
        }
    }

    fn single(delta: f64, omega: f64, g: f64, parity: Parity) -> Self {
        let mut m = Self::empty();
        m.qubit_labels.push("q".into());
        m.deltas.push(delta);
        m.resonator_labels.push("r".into());
        m.omegas.push(omega);
        m.biases.push(0.0);
        m.couplings.push(QubitCoupling {
            qubit: 0,
            resonator: 0,
            g,
            parity,
        });
        m
    }

    /// `Delta/2 sigma_z + omega a^dag a + g sigma_x (a + a^dag)`.
    pub fn rabi(delta: f64, omega: f64, g: f64) -> Self {
        Self::single(delta, omega, g, Parity::Transverse)
    }

    /// `Delta/2 sigma_z + omega a^dag a + g sigma_z (a + a^dag)`.
    pub fn longitudinal(delta: f64, omega: f64, g: f64) -> Self {
        Self::single(delta, omega, g, Parity::Longitudinal)
    }

    /// Two qubits, each longitudinally coupled to its own resonator, with
    /// the resonators charge-coupled.
    pub fn two_block(deltas: [f64; 2], omegas: [f64; 2], gs: [f64; 2], g_c: f64) -> Self {
        let mut m = Self::empty();
        for i in 0..2 {
            m.qubit_labels.push(format!("q{}", i + 1));
            m.deltas.push(deltas[i]);
            m.resonator_labels.push(format!("r{}", i + 1));
            m.omegas.push(omegas[i]);
            m.biases.push(0.0);
            m.couplings.push(QubitCoupling {
                qubit: i,
                resonator: i,
                g: gs[i],
                parity: Parity::Longitudinal,
            });
        }
        m.resonator_couplings.push(ResonatorCoupling {
            first: 0,
            second: 1,
            g_c,
        });
        m
    }

    /// Ring of four qubits; connection `j` joins blocks `(i1, i2)` through
    /// resonators `r{i1}_{conn}` and `r{i2}_{conn}` with coupling `g_cs[j]`.
    pub fn plaquette(delta: f64, omega: f64, g: f64, g_cs: [f64; 4]) -> Self {
        let mut m = Self::empty();
        for i in 1..=4 {
            m.qubit_labels.push(format!("q{i}"));
            m.deltas.push(delta);
        }
        for (j, (conn, i1, i2)) in crate::netlist::PLAQUETTE_CONNECTIONS.iter().enumerate() {
            let first = m.omegas.len();
            for i in [*i1, *i2] {
                m.couplings.push(QubitCoupling {
                    qubit: i - 1,
                    resonator: m.omegas.len(),
                    g,
                    parity: Parity::Longitudinal,
                });
                m.resonator_labels.push(format!("r{i}_{conn}"));
                m.omegas.push(omega);
                m.biases.push(0.0);
            }
            m.resonator_couplings.push(ResonatorCoupling {
                first,
                second: first + 1,
                g_c: g_cs[j],
            });
        }
        m
    }

    pub fn n_qubits(&self) -> usize {
        self.deltas.len()
    }

    pub fn n_resonators(&self) -> usize {
        self.omegas.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (nq, nr) = (self.n_qubits(), self.n_resonators());
        if self.qubit_labels.len() != nq || self.resonator_labels.len() != nr {
            return Err(Error::InvalidArgument("label count does not match the model".into()));
        }
        if !self.biases.is_empty() && self.biases.len() != nr {
            return Err(Error::InvalidArgument("one bias per resonator expected".into()));
        }
        if let Some(w) = self.omegas.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::InvalidArgument(format!("resonator frequency {w} must be positive")));
        }
        for c in &self.couplings {
            if c.qubit >= nq {
                return Err(Error::UnknownQubit(c.qubit));
            }
            if c.resonator >= nr {
                return Err(Error::InvalidArgument(format!("unknown resonator {}", c.resonator)));
            }
        }
        for c in &self.resonator_couplings {
            if c.first >= nr || c.second >= nr || c.first == c.second {
                return Err(Error::InvalidArgument("invalid resonator coupling".into()));
            }
        }
        Ok(())
    }

    pub fn bias(&self, r: usize) -> f64 {
        self.biases.get(r).copied().unwrap_or(0.0)
    }

    pub fn modes(&self, resonator_dims: &[usize]) -> Result<Vec<Mode>> {
        if resonator_dims.len() != self.n_resonators() {
            return Err(Error::DimensionMismatch {
                expected: self.n_resonators(),
                found: resonator_dims.len(),
            });
        }
        if resonator_dims.contains(&0) {
            return Err(Error::InvalidArgument("resonator dimensions must be >= 1".into()));
        }
        let mut modes: Vec<Mode> = self
            .qubit_labels
            .iter()
            .map(|l| Mode {
                label: l.clone(),
                dim: 2,
                kind: ModeKind::Qubit,
            })
            .collect();
        modes.extend(self.resonator_labels.iter().zip(resonator_dims).map(|(l, &d)| Mode {
            label: l.clone(),
            dim: d,
            kind: ModeKind::Resonator,
        }));
        Ok(modes)
    }

    /// Sparse Hamiltonian; qubits first, then resonators.
    pub fn to_sparse(&self, resonator_dims: &[usize]) -> Result<SparseOperator> {
        self.validate()?;
        let modes = self.modes(resonator_dims)?;
        let dims: Vec<usize> = modes.iter().map(|m| m.dim).collect();
        let lay = Layout::new(&dims);
        let nq = self.n_qubits();
        let n = lay.total();
        let mut coo = CooMatrix::new(n, n);
        let push = |coo: &mut CooMatrix<Complex64>, r: usize, c: usize, v: f64| {
            if v != 0.0 {
                coo.push(r, c, Complex64::new(v, 0.0));
            }
        };
        for col in 0..n {
            let mut diag = 0.0;
            for (q, d) in self.deltas.iter().enumerate() {
                diag += 0.5 * d * spin(lay.level(col, q));
            }
            for (r, w) in self.omegas.iter().enumerate() {
                diag += w * lay.level(col, nq + r) as f64;
            }
            push(&mut coo, col, col, diag);
            for c in &self.couplings {
                let rm = nq + c.resonator;
                let lq = lay.level(col, c.qubit);
                for (row, amp) in ladder(&lay, col, rm, false) {
                    match c.parity {
                        Parity::Longitudinal => push(&mut coo, row, col, c.g * spin(lq) * amp),
                        Parity::Transverse => {
                            let flipped = flip(&lay, row, c.qubit);
                            push(&mut coo, flipped, col, c.g * amp)
                        }
                    }
                }
            }
            for r in 0..self.n_resonators() {
                let eps = self.bias(r);
                if eps != 0.0 {
                    for (row, amp) in ladder(&lay, col, nq + r, false) {
                        push(&mut coo, row, col, eps * amp);
                    }
                }
            }
            for c in &self.resonator_couplings {
                for (mid, a1) in ladder(&lay, col, nq + c.first, true) {
                    for (row, a2) in ladder(&lay, mid, nq + c.second, true) {
                        push(&mut coo, row, col, -c.g_c * a1 * a2);
                    }
                }
            }
        }
        Ok(SparseOperator {
            modes,
            matrix: CsrMatrix::from(&coo),
        })
    }

    pub fn to_fock(&self, resonator_dims: &[usize]) -> Result<FockOperator> {
        Ok(self.to_sparse(resonator_dims)?.to_dense())
    }

    /// `sigma_x` (or `sigma_y` when `y` is set) of one qubit.
    pub fn qubit_flip(&self, qubit: usize, resonator_dims: &[usize], y: bool) -> Result<SparseOperator> {
        if qubit >= self.n_qubits() {
            return Err(Error::UnknownQubit(qubit));
        }
        let modes = self.modes(resonator_dims)?;
        let dims: Vec<usize> = modes.iter().map(|m| m.dim).collect();
        let lay = Layout::new(&dims);
        let n = lay.total();
        let mut coo = CooMatrix::new(n, n);
        for col in 0..n {
            let row = flip(&lay, col, qubit);
            let v = if y {
                // sigma_y |g> = i |e>, sigma_y |e> = -i |g>
                Complex64::new(0.0, if lay.level(col, qubit) == 0 { 1.0 } else { -1.0 })
            } else {
                Complex64::new(1.0, 0.0)
            };
            coo.push(row, col, v);
        }
        Ok(SparseOperator {
            modes,
            matrix: CsrMatrix::from(&coo),
        })
    }

    /// Diagonal of `sigma_z` for one qubit.
    pub fn sigma_z_diagonal(&self, qubit: usize, resonator_dims: &[usize]) -> Result<Vec<f64>> {
        let dims: Vec<usize> = self.modes(resonator_dims)?.iter().map(|m| m.dim).collect();
        let lay = Layout::new(&dims);
        Ok((0..lay.total()).map(|i| spin(lay.level(i, qubit))).collect())
    }

    /// Diagonal of `a^dag a` for one resonator.
    pub fn photon_diagonal(&self, resonator: usize, resonator_dims: &[usize]) -> Result<Vec<f64>> {
        let dims: Vec<usize> = self.modes(resonator_dims)?.iter().map(|m| m.dim).collect();
        let lay = Layout::new(&dims);
        let m = self.n_qubits() + resonator;
        Ok((0..lay.total()).map(|i| lay.level(i, m) as f64).collect())
    }
}

fn spin(level: usize) -> f64 {
    if level == 0 {
        -1.0
    } else {
        1.0
    }
}

fn flip(lay: &Layout, index: usize, qubit: usize) -> usize {
    if lay.level(index, qubit) == 0 {
        index + lay.strides[qubit]
    } else {
        index - lay.strides[qubit]
    }
}

/// Nonzero elements `(row, value)` of `a + a^dag` (or `a^dag - a` when
/// `antisymmetric`) applied to basis state `col` of `mode`.
fn ladder(lay: &Layout, col: usize, mode: usize, antisymmetric: bool) -> Vec<(usize, f64)> {
    let n = lay.level(col, mode);
    let s = lay.strides[mode];
    let mut out = Vec::with_capacity(2);
    if n + 1 < lay.dims[mode] {
        out.push((col + s, ((n + 1) as f64).sqrt()));
    }
    if n > 0 {
        let v = (n as f64).sqrt();
        out.push((col - s, if antisymmetric { -v } else { v }));
    }
    out
}

// ---------------------------------------------------------------------------
// Eigensystems and labels

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateLabel {
    /// Level of each qubit mode (0 = g).
    pub qubits: Vec<usize>,
    /// Photon number of each resonator mode.
    pub photons: Vec<usize>,
    /// |<product state|eigenstate>|^2.
    pub overlap: f64,
}

impl StateLabel {
    pub fn qubit_label(&self) -> String {
        self.qubits
            .iter()
            .map(|&l| match l {
                0 => "g".to_string(),
                1 => "e".to_string(),
                2 => "f".to_string(),
                n => n.to_string(),
            })
            .collect()
    }

    pub fn photon_label(&self) -> String {
        self.photons.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(";")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub energies: Vec<f64>,
    pub labels: Vec<StateLabel>,
    pub hermiticity_deviation: f64,
    #[serde(skip)]
    pub vectors: Option<DMatrix<Complex64>>,
}

impl SpectrumReport {
    pub fn find(&self, qubits: &[usize], photons: &[usize]) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| l.qubits == qubits && l.photons == photons)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,energy,qubit_label,photon_label\n");
        for (i, (e, l)) in self.energies.iter().zip(&self.labels).enumerate() {
            s.push_str(&format!(
                "{i},{},{},{}\n",
                format_float(*e),
                l.qubit_label(),
                l.photon_label()
            ));
        }
        s
    }
}

/// Full eigendecomposition, ascending; uses the real solver when `H` is real.
pub fn diagonalize(h: &FockOperator) -> Result<(DVector<f64>, DMatrix<Complex64>)> {
    let dev = h.hermiticity_deviation();
    if dev > 1e-12 {
        return Err(Error::NotHermitian { deviation: dev });
    }
    if let Some(mut re) = h.real_matrix() {
        linalg::symmetrize(&mut re);
        let (vals, vecs) = sorted_eigen(re);
        return Ok((vals, linalg::to_complex(&vecs)));
    }
    let eig = SymmetricEigen::new(h.matrix.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((vals, vecs))
}

/// Lowest `k` eigenpairs with adiabatic labels: in energy order, each
/// eigenstate takes the unassigned product state of largest overlap, ties
/// going to the lower bare energy.
pub fn eigensystem(h: &FockOperator, k: usize) -> Result<SpectrumReport> {
    let deviation = h.hermiticity_deviation();
    let (vals, vecs) = diagonalize(h)?;
    let n = h.dim();
    let k = k.min(n);
    let bare: Vec<f64> = (0..n).map(|i| h.matrix[(i, i)].re).collect();
    let mut taken = vec![false; n];
    let mut labels = Vec::with_capacity(k);
    for col in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let p = vecs[(i, col)].norm_sqr();
            best = match best {
                None => Some((i, p)),
                Some((j, q)) if p > q + 1e-9 || ((p - q).abs() <= 1e-9 && bare[i] < bare[j]) => Some((i, p)),
                other => other,
            };
        }
        let (idx, overlap) = best.expect("non-empty basis");
        taken[idx] = true;
        let levels = h.levels_of(idx);
        let mut qubits = Vec::new();
        let mut photons = Vec::new();
        for (m, l) in h.modes.iter().zip(levels) {
            match m.kind {
                ModeKind::Qubit => qubits.push(l),
                ModeKind::Resonator => photons.push(l),
            }
        }
        labels.push(StateLabel {
            qubits,
            photons,
            overlap,
        });
    }
    Ok(SpectrumReport {
        energies: vals.iter().take(k).copied().collect(),
        labels,
        hermiticity_deviation: deviation,
        vectors: Some(vecs.columns(0, k).into_owned()),
    })
}

/// Numeric dispersive shift of the first qubit and first resonator:
/// `[E(e,1) - E(e,0) - E(g,1) + E(g,0)] / 4`, all other modes in their
/// ground level. Normalized to match `chi = g (gamma + gamma_bar) / 2`.
pub fn dispersive_shift_numeric(h: &FockOperator) -> Result<f64> {
    let nq = h.modes.iter().filter(|m| m.kind == ModeKind::Qubit).count();
    let nr = h.modes.len() - nq;
    if nq == 0 || nr == 0 {
        return Err(Error::InvalidArgument("need a qubit and a resonator mode".into()));
    }
    let spec = eigensystem(h, h.dim())?;
    let level = |q: usize, n: usize| -> Result<f64> {
        let mut qs = vec![0; nq];
        qs[0] = q;
        let mut ps = vec![0; nr];
        ps[0] = n;
        let i = spec.find(&qs, &ps).ok_or_else(|| {
            Error::LabelAmbiguity(format!("no eigenstate labelled ({q}, {n})"))
        })?;
        let ov = spec.labels[i].overlap;
        if ov < LABEL_OVERLAP_MIN {
            return Err(Error::LabelAmbiguity(format!(
                "state ({q}, {n}) has overlap {ov:.3} with its product state"
            )));
        }
        Ok(spec.energies[i])
    };
    let comb = level(1, 1)? - level(1, 0)? - level(0, 1)? + level(0, 0)?;
    Ok(comb / 4.0)
}

// ---------------------------------------------------------------------------
// Coupling parity

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingTag {
    Longitudinal,
    Transverse,
    Mixed,
    Uncoupled,
}

impl CouplingTag {
    pub fn from_amplitudes(l: f64, t: f64) -> Self {
        let scale = l.abs().max(t.abs());
        if scale == 0.0 {
            CouplingTag::Uncoupled
        } else if t.abs() <= PARITY_TOLERANCE * scale {
            CouplingTag::Longitudinal
        } else if l.abs() <= PARITY_TOLERANCE * scale {
            CouplingTag::Transverse
        } else {
            CouplingTag::Mixed
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub longitudinal: f64,
    pub transverse: f64,
    pub tag: CouplingTag,
}

/// Longitudinal and transverse amplitudes of the qubit factor `f` in the
/// two lowest eigenstates of `qubit`.
pub fn classify_coupling(qubit: &OneModeHamiltonian, f: &[Sinusoid1], dim: usize) -> Result<Classification> {
    let spec = qubit.spectrum(dim, 2)?;
    let m = OneModeHamiltonian::function_matrix(&spec, f);
    let l = 0.5 * (spec.element(&m, 0, 0) - spec.element(&m, 1, 1));
    let t = spec.element(&m, 0, 1).abs();
    Ok(Classification {
        longitudinal: l,
        transverse: t,
        tag: CouplingTag::from_amplitudes(l, t),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sector {
    /// Qubit factor multiplying `sin(k phi_r)`.
    Odd,
    /// Qubit factor multiplying `cos(k phi_r)`.
    Even,
}

#[derive(Debug, Clone, Serialize)]
pub struct SectorClassification {
    pub sector: Sector,
    pub harmonic: f64,
    pub longitudinal: f64,
    pub transverse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CircuitClassification {
    pub qubit: String,
    pub resonator: String,
    pub sectors: Vec<SectorClassification>,
    pub longitudinal: f64,
    pub transverse: f64,
    /// transverse / |longitudinal|, when the longitudinal part is nonzero.
    pub ratio: Option<f64>,
    pub tag: CouplingTag,
}

/// Split every junction touching both variables as
/// `a cos(d_q q + o + d_r r) = a cos(d_q q + o) cos(d_r r) - a sin(d_q q + o) sin(d_r r)`,
/// group by `|d_r|` and classify the qubit factor of each sector.
pub fn classify_circuit_coupling(
    h: &HamiltonianModel,
    qubit: &str,
    resonator: &str,
    dim: usize,
) -> Result<CircuitClassification> {
    let q = h.index_of(qubit)?;
    let r = h.index_of(resonator)?;
    let one = h.one_mode(q);
    let touching: Vec<_> = h
        .sinusoids
        .iter()
        .filter(|s| s.direction[q] != 0.0 && s.direction[r] != 0.0)
        .collect();
    let mut harmonics: Vec<f64> = Vec::new();
    for s in &touching {
        let k = s.direction[r].abs();
        if !harmonics.iter().any(|h| (h - k).abs() <= 1e-12 * k) {
            harmonics.push(k);
        }
    }
    harmonics.sort_by(f64::total_cmp);
    let mut sectors = Vec::new();
    for &k in &harmonics {
        let group: Vec<_> = touching
            .iter()
            .filter(|s| (s.direction[r].abs() - k).abs() <= 1e-12 * k)
            .collect();
        let odd: Vec<Sinusoid1> = group
            .iter()
            .map(|s| Sinusoid1 {
                amplitude: -s.amplitude * s.direction[r].signum(),
                frequency: s.direction[q],
                offset: s.offset - FRAC_PI_2,
            })
            .collect();
        let even: Vec<Sinusoid1> = group
            .iter()
            .map(|s| Sinusoid1 {
                amplitude: s.amplitude,
                frequency: s.direction[q],
                offset: s.offset,
            })
            .collect();
        for (sector, f) in [(Sector::Odd, odd), (Sector::Even, even)] {
            let c = classify_coupling(&one, &f, dim)?;
            sectors.push(SectorClassification {
                sector,
                harmonic: k,
                longitudinal: c.longitudinal,
                transverse: c.transverse,
            });
        }
    }
    let longitudinal = sectors
        .iter()
        .map(|s| s.longitudinal)
        .fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
    let transverse = sectors.iter().map(|s| s.transverse).fold(0.0f64, f64::max);
    let ratio = (longitudinal != 0.0).then(|| transverse / longitudinal.abs());
    Ok(CircuitClassification {
        qubit: qubit.to_string(),
        resonator: resonator.to_string(),
        sectors,
        longitudinal,
        transverse,
        ratio,
        tag: CouplingTag::from_amplitudes(longitudinal, transverse),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Trig {
    Cos,
    Sin,
}

impl Trig {
    fn eval(self, x: f64) -> f64 {
        match self {
            Trig::Cos => x.cos(),
            Trig::Sin => x.sin(),
        }
    }
}

/// `amplitude * qubit(phi_q/2) * resonator(phi_r/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProductTerm {
    pub amplitude: f64,
    pub qubit: Trig,
    pub resonator: Trig,
}

impl ProductTerm {
    pub fn eval(&self, q: f64, r: f64) -> f64 {
        self.amplitude * self.qubit.eval(q / 2.0) * self.resonator.eval(r / 2.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct JunctionDecomposition {
    pub e_j1: f64,
    pub e_j2: f64,
    pub e_sum: f64,
    pub d: f64,
    pub longitudinal_term: ProductTerm,
    pub transverse_term: ProductTerm,
    pub uncoupled: bool,
}

impl JunctionDecomposition {
    /// The two flux-biased coupling junctions,
    /// `E_J1 sin((phi_r + phi_q)/2) + E_J2 sin((phi_r - phi_q)/2)`.
    pub fn original(&self, q: f64, r: f64) -> f64 {
        self.e_j1 * ((r + q) / 2.0).sin() + self.e_j2 * ((r - q) / 2.0).sin()
    }

    pub fn decomposed(&self, q: f64, r: f64) -> f64 {
        self.longitudinal_term.eval(q, r) + self.transverse_term.eval(q, r)
    }
}

/// `E_JS cos(q/2) sin(r/2) - d E_JS sin(q/2) cos(r/2)` with
/// `E_JS = E_J1 + E_J2` and `d = (E_J2 - E_J1)/E_JS`.
pub fn junction_asymmetry_decompose(e_j1: f64, e_j2: f64) -> Result<JunctionDecomposition> {
    if e_j1 < 0.0 || e_j2 < 0.0 {
        return Err(Error::InvalidArgument("junction energies must be non-negative".into()));
    }
    let e_sum = e_j1 + e_j2;
    let uncoupled = e_sum == 0.0;
    let d = if uncoupled { 0.0 } else { (e_j2 - e_j1) / e_sum };
    Ok(JunctionDecomposition {
        e_j1,
        e_j2,
        e_sum,
        d,
        longitudinal_term: ProductTerm {
            amplitude: e_sum,
            qubit: Trig::Cos,
            resonator: Trig::Sin,
        },
        transverse_term: ProductTerm {
            amplitude: -d * e_sum,
            qubit: Trig::Sin,
            resonator: Trig::Cos,
        },
        uncoupled,
    })
}

// ---------------------------------------------------------------------------
// Frames

fn single_coupling(m: &SpinBosonModel, want: Parity) -> Result<(f64, f64, f64)> {
    m.validate()?;
    if m.n_qubits() != 1 || m.n_resonators() != 1 || m.couplings.len() > 1 {
        return Err(Error::InvalidArgument("frame needs one qubit and one resonator".into()));
    }
    let g = match m.couplings.first() {
        Some(c) if c.parity != want => {
            return Err(Error::ParityMismatch(format!(
                "expected {want:?} coupling, found {:?}",
                c.parity
            )))
        }
        Some(c) => c.g,
        None => 0.0,
    };
    Ok((m.deltas[0], m.omegas[0], g))
}

#[derive(Debug, Clone, Serialize)]
pub struct SchriefferWolff {
    pub gamma: f64,
    pub gamma_bar: f64,
    pub chi: f64,
    /// |g / (Delta - omega)|.
    pub dispersive_ratio: f64,
    pub perturbative: bool,
}

/// Second-order frame of the transverse model:
/// `gamma = g/(Delta-omega)`, `gamma_bar = g/(Delta+omega)`, `chi = g(gamma+gamma_bar)/2`.
pub fn schrieffer_wolff_frame(m: &SpinBosonModel, warn_threshold: f64) -> Result<SchriefferWolff> {
    let (delta, omega, g) = single_coupling(m, Parity::Transverse)?;
    let detuning = delta - omega;
    if detuning.abs() <= 1e-12 * delta.abs().max(omega.abs()) {
        return Err(Error::Resonance);
    }
    let gamma = g / detuning;
    let gamma_bar = g / (delta + omega);
    let ratio = gamma.abs();
    if ratio > warn_threshold {
        warn!("outside the dispersive regime: |g/(Delta-omega)| = {ratio:.3}");
    }
    Ok(SchriefferWolff {
        gamma,
        gamma_bar,
        chi: g * (gamma + gamma_bar) / 2.0,
        dispersive_ratio: ratio,
        perturbative: ratio <= warn_threshold,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LangFirsov {
    pub theta: f64,
    pub energy_offset: f64,
    /// Frobenius norm of the transformed Hamiltonian's off-diagonal part,
    /// restricted to photon numbers <= n_max/2.
    pub residual_offdiag_norm: f64,
    /// Largest deviation of the diagonal from `m omega + s Delta/2 - g^2/omega`
    /// within the same window.
    pub diagonal_error: f64,
}

/// Displacement frame `U = exp(-theta sigma_z (a^dag - a))`, `theta = g/omega`;
/// reports how far `U^dag H U` is from diagonal in the truncated space.
pub fn lang_firsov_frame(m: &SpinBosonModel, n_max: usize) -> Result<LangFirsov> {
    let (delta, omega, g) = single_coupling(m, Parity::Longitudinal)?;
    let theta = g / omega;
    let offset = -g * g / omega;
    let dim = n_max + 1;
    let h = m.to_fock(&[dim])?.real_matrix().expect("real model");
    let a = linalg::annihilation(dim);
    let gen = a.transpose() - &a;
    // exp(-theta s G) for real antisymmetric G via the Hermitian i G
    let ig = gen.map(|x| Complex64::new(0.0, x));
    let eig = SymmetricEigen::new(ig);
    let disp = |s: f64| -> DMatrix<f64> {
        if theta == 0.0 {
            return DMatrix::identity(dim, dim);
        }
        // G = -i (iG), so exp(-theta s G) = exp(i theta s (iG))
        let f = eig.eigenvalues.map(|l| Complex64::from_polar(1.0, theta * s * l));
        let v = &eig.eigenvectors;
        (v * DMatrix::from_diagonal(&f) * v.adjoint()).map(|z| z.re)
    };
    let mut u = DMatrix::zeros(2 * dim, 2 * dim);
    u.view_mut((0, 0), (dim, dim)).copy_from(&disp(-1.0));
    u.view_mut((dim, dim), (dim, dim)).copy_from(&disp(1.0));
    let hp = u.transpose() * h * &u;
    let window = n_max / 2;
    let mut off = 0.0;
    let mut diag_err = 0.0f64;
    for qi in 0..2 {
        for ni in 0..=window {
            let i = qi * dim + ni;
            let expect = ni as f64 * omega + 0.5 * delta * spin(qi) + offset;
            diag_err = diag_err.max((hp[(i, i)] - expect).abs());
            for qj in 0..2 {
                for nj in 0..=window {
                    let j = qj * dim + nj;
                    if i != j {
                        off += hp[(i, j)].powi(2);
                    }
                }
            }
        }
    }
    Ok(LangFirsov {
        theta,
        energy_offset: offset,
        residual_offdiag_norm: off.sqrt(),
        diagonal_error: diag_err,
    })
}

// ---------------------------------------------------------------------------
// Normal modes

/// `Omega_pm^2 = (w1^2 + w2^2)/2 +- sqrt((w1^2 - w2^2)^2 + 16 g_c^2 w1 w2)/2`,
/// returned as `(Omega_plus, Omega_minus)`.
pub fn normal_mode_frequencies(w1: f64, w2: f64, g_c: f64) -> Result<(f64, f64)> {
    if !(w1 > 0.0) || !(w2 > 0.0) {
        return Err(Error::InvalidArgument("bare frequencies must be positive".into()));
    }
    let mean = 0.5 * (w1 * w1 + w2 * w2);
    let root = 0.5 * ((w1 * w1 - w2 * w2).powi(2) + 16.0 * g_c * g_c * w1 * w2).sqrt();
    let plus2 = mean + root;
    // product of the roots avoids cancellation in the minus branch
    let minus2 = (w1 * w1 * w2 * w2 - 4.0 * g_c * g_c * w1 * w2) / plus2;
    if !(minus2 > 0.0) {
        return Err(Error::Instability(minus2));
    }
    Ok((plus2.sqrt(), minus2.sqrt()))
}

/// Independent check: generalized eigenproblem `P v = Omega^2 K v` of two
/// oscillators `H = n^T A n + phi^T B phi` with `A = [[w1/2, g_c], [g_c, w2/2]]`
/// and `B = diag(w1/2, w2/2)`, for which `K = A^{-1}/4`.
pub fn normal_mode_oracle(w1: f64, w2: f64, g_c: f64) -> Result<(f64, f64)> {
    let a = DMatrix::from_row_slice(2, 2, &[w1 / 2.0, g_c, g_c, w2 / 2.0]);
    let k = a
        .try_inverse()
        .map(|m| m * 0.25)
        .ok_or(Error::Instability(0.0))?;
    let p = DMatrix::from_diagonal(&DVector::from_vec(vec![w1 / 2.0, w2 / 2.0]));
    let ev = generalized_eigenvalues(&p, &k).ok_or(Error::Instability(0.0))?;
    if !(ev[0] > 0.0) {
        return Err(Error::Instability(ev[0]));
    }
    Ok((ev[1].sqrt(), ev[0].sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncoupled_longitudinal_ladder() {
        let m = SpinBosonModel::longitudinal(0.8, 1.0, 0.0);
        let s = eigensystem(&m.to_fock(&[20]).unwrap(), 6).unwrap();
        let expect = [-0.4, 0.4, 0.6, 1.4, 1.6, 2.4];
        for (e, x) in s.energies.iter().zip(expect) {
            assert!((e - x).abs() < 1e-12);
        }
        assert_eq!(s.labels[1].qubit_label(), "e");
        assert_eq!(s.labels[2].photons, vec![1]);
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut h = SpinBosonModel::rabi(1.0, 1.0, 0.1).to_fock(&[3]).unwrap();
        h.matrix[(0, 1)] += Complex64::new(0.5, 0.0);
        assert!(matches!(eigensystem(&h, 2), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn sigma_y_is_hermitian() {
        let m = SpinBosonModel::rabi(1.0, 1.0, 0.1);
        let y = m.qubit_flip(0, &[3], true).unwrap().to_dense();
        assert!(y.hermiticity_deviation() < 1e-15);
        assert!(y.real_matrix().is_none());
    }

    #[test]
    fn schrieffer_wolff_example() {
        let sw = schrieffer_wolff_frame(&SpinBosonModel::rabi(5.0, 1.0, 0.1), DISPERSIVE_WARNING).unwrap();
        assert!((sw.gamma - 0.025).abs() < 1e-15);
        assert!((sw.gamma_bar - 0.1 / 6.0).abs() < 1e-15);
        assert!((sw.chi - 0.00208333333).abs() < 1e-10);
        let zero = schrieffer_wolff_frame(&SpinBosonModel::rabi(5.0, 1.0, 0.0), DISPERSIVE_WARNING).unwrap();
        assert_eq!(zero.chi, 0.0);
        assert!(matches!(
            schrieffer_wolff_frame(&SpinBosonModel::rabi(1.0, 1.0, 0.1), DISPERSIVE_WARNING),
            Err(Error::Resonance)
        ));
        assert!(matches!(
            schrieffer_wolff_frame(&SpinBosonModel::longitudinal(5.0, 1.0, 0.1), DISPERSIVE_WARNING),
            Err(Error::ParityMismatch(_))
        ));
    }

    #[test]
    fn lang_firsov_examples() {
        let lf = lang_firsov_frame(&SpinBosonModel::longitudinal(0.8, 1.0, 0.3), 120).unwrap();
        assert!((lf.theta - 0.3).abs() < 1e-15);
        assert!((lf.energy_offset + 0.09).abs() < 1e-15);
        assert!(lf.residual_offdiag_norm < 1e-10, "{}", lf.residual_offdiag_norm);
        let id = lang_firsov_frame(&SpinBosonModel::longitudinal(0.8, 1.0, 0.0), 20).unwrap();
        assert_eq!(id.energy_offset, 0.0);
        assert!(id.residual_offdiag_norm < 1e-14);
        let strong = lang_firsov_frame(&SpinBosonModel::longitudinal(0.8, 1.0, 1.0), 200).unwrap();
        assert!(strong.residual_offdiag_norm < 1e-8, "{}", strong.residual_offdiag_norm);
        assert!(matches!(
            lang_firsov_frame(&SpinBosonModel::rabi(0.8, 1.0, 0.3), 20),
            Err(Error::ParityMismatch(_))
        ));
    }

    #[test]
    fn dispersive_examples() {
        let chi = dispersive_shift_numeric(&SpinBosonModel::rabi(5.0, 1.0, 0.1).to_fock(&[40]).unwrap()).unwrap();
        assert!((chi / 0.00208333333 - 1.0).abs() < 0.02, "{chi}");
        let lon = dispersive_shift_numeric(&SpinBosonModel::longitudinal(5.0, 1.0, 0.1).to_fock(&[60]).unwrap())
            .unwrap();
        assert!(lon.abs() < 1e-10);
        let zero = dispersive_shift_numeric(&SpinBosonModel::rabi(5.0, 1.0, 0.0).to_fock(&[10]).unwrap()).unwrap();
        assert!(zero.abs() < 1e-14);
    }

    #[test]
    fn normal_modes() {
        let (p, m) = normal_mode_frequencies(1.0, 1.0, 0.1).unwrap();
        assert!((p - 1.0954451150103321).abs() < 1e-12);
        assert!((m - 0.8944271909999159).abs() < 1e-12);
        let (p0, m0) = normal_mode_frequencies(1.3, 0.7, 0.0).unwrap();
        assert!((p0 - 1.3).abs() < 1e-15 && (m0 - 0.7).abs() < 1e-15);
        assert!(matches!(normal_mode_frequencies(1.0, 1.0, 0.5), Err(Error::Instability(_))));
        let (op, om) = normal_mode_oracle(1.0, 1.0, 0.1).unwrap();
        assert!((op - p).abs() < 1e-12 && (om - m).abs() < 1e-12);
    }

    #[test]
    fn asymmetry_decomposition() {
        let d = junction_asymmetry_decompose(0.9, 1.1).unwrap();
        assert!((d.e_sum - 2.0).abs() < 1e-15);
        assert!((d.d - 0.1).abs() < 1e-12);
        for (q, r) in [(0.3, -1.2), (2.0, 0.7), (-0.4, 3.1)] {
            assert!((d.original(q, r) - d.decomposed(q, r)).abs() < 1e-14);
        }
        let sym = junction_asymmetry_decompose(1.0, 1.0).unwrap();
        assert_eq!(sym.transverse_term.amplitude, 0.0);
        assert!(junction_asymmetry_decompose(0.0, 0.0).unwrap().uncoupled);
    }

    #[test]
    fn classifier_parity() {
        let qubit = OneModeHamiltonian::qubit(0.25, 4.0, 10.0);
        let even = classify_coupling(&qubit, &[Sinusoid1::cos(1.0, 0.5)], 60).unwrap();
        assert!(even.transverse < 1e-12 && even.longitudinal.abs() > 1e-3);
        assert_eq!(even.tag, CouplingTag::Longitudinal);
        let odd = classify_coupling(&qubit, &[Sinusoid1::sin(1.0, 1.0)], 60).unwrap();
        assert!(odd.longitudinal.abs() < 1e-12 && odd.transverse > 1e-3);
        assert_eq!(odd.tag, CouplingTag::Transverse);
    }

    #[test]
    fn plaquette_structure() {
        let m = SpinBosonModel::plaquette(5.0, 1.0, 0.05, [0.1; 4]);
        assert_eq!(m.n_resonators(), 8);
        assert_eq!(m.resonator_labels[0], "r1_alpha");
        assert_eq!(m.resonator_labels[7], "r1_delta");
        let q1: Vec<usize> = m.couplings.iter().filter(|c| c.qubit == 0).map(|c| c.resonator).collect();
        assert_eq!(q1, vec![0, 7]);
    }

    #[test]
    fn sparse_matches_dense_hermitian() {
        let m = SpinBosonModel::two_block([5.0, 5.2], [1.0, 1.1], [0.05, 0.04], 0.1);
        let h = m.to_fock(&[4, 5]).unwrap();
        assert!(h.hermiticity_deviation() < 1e-15);
        assert_eq!(h.dim(), 2 * 2 * 4 * 5);
    }
}
