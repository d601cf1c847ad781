//! Circuit Lagrangians as (kinetic form, quadratic potential, sinusoids),
//! linear changes of variables and elimination of cyclic variables.
//!
//! Conventions: with `phi` the vector of retained node phases,
//!
//! ```text
//! L/hbar = phidot^T K phidot - phi^T P phi - sum_k a_k cos(d_k . phi + o_k)
//! ```
//!
//! so the potential is stored in U-convention (a junction contributes
//! `a = -E_J`). All coefficients are angular frequencies (rad/s) or their
//! inverses; capacitances enter `K` as `phase_scale * C / 2`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{max_abs, rcond, symmetrize};
use crate::netlist::{validate_circuit, BranchKind, Builtin, Circuit, PLAQUETTE_CONNECTIONS};
use crate::units::{phase_scale, FEMTO};

/// Transforms with a reciprocal condition number at or below this are rejected.
pub const RCOND_THRESHOLD: f64 = 1e-12;

/// Symmetric coefficient matrix of `x^T M x`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub matrix: DMatrix<f64>,
}

impl QuadraticForm {
    pub fn zeros(n: usize) -> Self {
        QuadraticForm {
            matrix: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.matrix * x))
    }

    /// Add `coeff * (e e^T)` for the incidence vector `e`.
    fn add_outer(&mut self, e: &DVector<f64>, coeff: f64) {
        self.matrix += e * e.transpose() * coeff;
    }

    fn congruence(&self, tinv: &DMatrix<f64>) -> Self {
        let mut m = tinv.transpose() * &self.matrix * tinv;
        symmetrize(&mut m);
        QuadraticForm { matrix: m }
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.matrix.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// `amplitude * cos(direction . phi + offset)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidTerm {
    pub amplitude: f64,
    pub direction: DVector<f64>,
    pub offset: f64,
}

impl SinusoidTerm {
    pub fn eval(&self, phi: &DVector<f64>) -> f64 {
        self.amplitude * (self.direction.dot(phi) + self.offset).cos()
    }

    /// Variables with a nonzero direction component.
    pub fn support(&self) -> Vec<usize> {
        (0..self.direction.len())
            .filter(|&i| self.direction[i] != 0.0)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianModel {
    pub labels: Vec<String>,
    pub kinetic: QuadraticForm,
    pub quad_potential: QuadraticForm,
    pub sinusoids: Vec<SinusoidTerm>,
}

impl LagrangianModel {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownVariable(label.to_string()))
    }

    pub fn kinetic_energy(&self, velocity: &DVector<f64>) -> f64 {
        self.kinetic.eval(velocity)
    }

    pub fn potential(&self, phi: &DVector<f64>) -> f64 {
        self.quad_potential.eval(phi) + self.sinusoids.iter().map(|s| s.eval(phi)).sum::<f64>()
    }

    /// `L = T - U` at the given point.
    pub fn evaluate(&self, phi: &DVector<f64>, velocity: &DVector<f64>) -> f64 {
        self.kinetic_energy(velocity) - self.potential(phi)
    }

    /// Sum of the sinusoids that involve both variables, evaluated with every
    /// other variable at zero.
    pub fn coupling_function(&self, a: usize, b: usize) -> impl Fn(f64, f64) -> f64 + '_ {
        let n = self.dim();
        move |x, y| {
            let mut phi = DVector::zeros(n);
            phi[a] = x;
            phi[b] = y;
            self.sinusoids
                .iter()
                .filter(|s| s.direction[a] != 0.0 && s.direction[b] != 0.0)
                .map(|s| s.eval(&phi))
                .sum()
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Sin<'a> {
            amplitude: f64,
            direction: &'a [f64],
            offset: f64,
        }
        #[derive(Serialize)]
        struct Dump<'a> {
            labels: &'a [String],
            kinetic: Vec<Vec<f64>>,
            potential: Vec<Vec<f64>>,
            sinusoids: Vec<Sin<'a>>,
        }
        let dump = Dump {
            labels: &self.labels,
            kinetic: self.kinetic.rows(),
            potential: self.quad_potential.rows(),
            sinusoids: self
                .sinusoids
                .iter()
                .map(|s| Sin {
                    amplitude: s.amplitude,
                    direction: s.direction.as_slice(),
                    offset: s.offset,
                })
                .collect(),
        };
        serde_json::to_value(dump).expect("model dump serializes")
    }
}

/// `new = matrix * old`, with labels for the new variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTransform {
    pub matrix: DMatrix<f64>,
    pub labels: Vec<String>,
}

impl LinearTransform {
    pub fn new(matrix: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        if labels.len() != matrix.nrows() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: labels.len(),
            });
        }
        Ok(LinearTransform { matrix, labels })
    }

    pub fn identity(labels: &[String]) -> Self {
        LinearTransform {
            matrix: DMatrix::identity(labels.len(), labels.len()),
            labels: labels.to_vec(),
        }
    }

    pub fn rcond(&self) -> f64 {
        rcond(&self.matrix)
    }

    fn inverse(&self) -> Result<DMatrix<f64>> {
        let rc = self.rcond();
        if !(rc > RCOND_THRESHOLD) {
            return Err(Error::SingularTransform { rcond: rc });
        }
        self.matrix
            .clone()
            .try_inverse()
            .ok_or(Error::SingularTransform { rcond: rc })
    }
}

/// Node-phase Lagrangian of a validated circuit. The ground node (or the
/// last node when none is flagged) is the reference and is dropped.
pub fn build_lagrangian(c: &Circuit) -> Result<LagrangianModel> {
    let report = validate_circuit(c);
    if !report.is_valid() {
        return Err(Error::InvalidCircuit(report.messages().join("; ")));
    }
    let reference = c.reference_node().unwrap_or_default();
    let vars: Vec<&str> = c
        .nodes
        .iter()
        .map(String::as_str)
        .filter(|n| *n != reference)
        .collect();
    let n = vars.len();
    let scale = phase_scale();
    let incidence = |a: &str, b: &str| {
        let mut e = DVector::zeros(n);
        if let Some(i) = vars.iter().position(|v| *v == a) {
            e[i] += 1.0;
        }
        if let Some(j) = vars.iter().position(|v| *v == b) {
            e[j] -= 1.0;
        }
        e
    };

    let mut kinetic = QuadraticForm::zeros(n);
    let mut quad_potential = QuadraticForm::zeros(n);
    let mut sinusoids = Vec::new();
    for b in &c.branches {
        let e = incidence(&b.nodes[0], &b.nodes[1]);
        match b.kind {
            BranchKind::Capacitor => kinetic.add_outer(&e, scale * b.value / 2.0),
            BranchKind::Inductor => quad_potential.add_outer(&e, scale / (2.0 * b.value)),
            BranchKind::Junction | BranchKind::JunctionArray => sinusoids.push(SinusoidTerm {
                amplitude: -b.value,
                direction: e / f64::from(b.array_length),
                offset: b.phase_offset,
            }),
        }
    }

    for (i, v) in vars.iter().enumerate() {
        if kinetic.matrix.row(i).iter().all(|x| *x == 0.0) {
            return Err(Error::SingularKinetic(format!("node `{v}` has no capacitance")));
        }
    }
    let rc = rcond(&kinetic.matrix);
    if !(rc > RCOND_THRESHOLD) {
        return Err(Error::SingularKinetic(format!("reciprocal condition {rc:e}")));
    }

    Ok(LagrangianModel {
        labels: vars.iter().map(|v| format!("phi_{v}")).collect(),
        kinetic,
        quad_potential,
        sinusoids,
    })
}

/// Change variables to `new = T old`. Directions map by `T^{-T}` so every
/// term keeps its value at corresponding points.
pub fn apply_linear_transform(m: &LagrangianModel, t: &LinearTransform) -> Result<LagrangianModel> {
    if t.matrix.nrows() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: t.matrix.nrows(),
        });
    }
    let tinv = t.inverse()?;
    Ok(transform_with_inverse(m, &tinv, &t.labels))
}

fn transform_with_inverse(m: &LagrangianModel, tinv: &DMatrix<f64>, labels: &[String]) -> LagrangianModel {
    let tinv_t = tinv.transpose();
    LagrangianModel {
        labels: labels.to_vec(),
        kinetic: m.kinetic.congruence(tinv),
        quad_potential: m.quad_potential.congruence(tinv),
        sinusoids: m
            .sinusoids
            .iter()
            .map(|s| SinusoidTerm {
                amplitude: s.amplitude,
                direction: &tinv_t * &s.direction,
                offset: s.offset,
            })
            .collect(),
    }
}

/// A row of a transform written over node names.
type Row = Vec<(String, f64)>;

fn row(terms: &[(&str, f64)]) -> Row {
    terms.iter().map(|(n, w)| (n.to_string(), *w)).collect()
}

/// Per-block qubit and resonator variables of a builtin circuit:
/// `phi_q = phi_a - phi_b`, `phi_r = phi_a + phi_b - 2 phi_c`.
///
/// Connection nodes are kept as their own variables, to be eliminated by
/// [`cholesky_eliminate`]. For the plaquette the per-block sums
/// `phi_s = phi_a + phi_b` are used instead of resonator variables since the
/// eight arm variables of the ring are linearly dependent; see
/// [`plaquette_resonator_transform`].
pub fn standard_block_transform(c: &Circuit) -> Result<LinearTransform> {
    let topology = c
        .topology
        .as_ref()
        .ok_or_else(|| Error::UnsupportedTopology(format!("`{}` is not a builtin circuit", c.name)))?;
    let mut rows: Vec<(String, Row)> = Vec::new();
    match topology.builtin {
        Builtin::QubitResonator | Builtin::JunctionArrayCoupler => {
            rows.push(("phi_q".into(), row(&[("a", 1.0), ("b", -1.0)])));
            rows.push(("phi_r".into(), row(&[("a", 1.0), ("b", 1.0), ("c", -2.0)])));
        }
        Builtin::QubitNResonators => {
            rows.push(("phi_q".into(), row(&[("a", 1.0), ("b", -1.0)])));
            let n = c.nodes.len() - 2;
            for j in 1..=n {
                let cj = format!("c{j}");
                rows.push((
                    format!("phi_r{j}"),
                    row(&[("a", 1.0), ("b", 1.0), (&cj, -2.0)]),
                ));
            }
        }
        Builtin::TwoBlocks => {
            for i in 1..=2 {
                let (a, b) = (format!("a{i}"), format!("b{i}"));
                rows.push((format!("phi_q{i}"), row(&[(&a, 1.0), (&b, -1.0)])));
                rows.push((
                    format!("phi_r{i}"),
                    row(&[(&a, 1.0), (&b, 1.0), ("c", -2.0)]),
                ));
            }
            rows.push(("phi_c".into(), row(&[("c", 1.0), ("g", -1.0)])));
        }
        Builtin::Plaquette => {
            for i in 1..=4 {
                let (a, b) = (format!("a{i}"), format!("b{i}"));
                rows.push((format!("phi_q{i}"), row(&[(&a, 1.0), (&b, -1.0)])));
            }
            for i in 1..=4 {
                let (a, b) = (format!("a{i}"), format!("b{i}"));
                rows.push((format!("phi_s{i}"), row(&[(&a, 1.0), (&b, 1.0)])));
            }
            for (conn, _, _) in PLAQUETTE_CONNECTIONS {
                let cj = format!("c_{conn}");
                rows.push((format!("phi_c_{conn}"), row(&[(&cj, 1.0), ("g", -1.0)])));
            }
        }
    }
    rows_to_transform(c, &rows)
}

fn rows_to_transform(c: &Circuit, rows: &[(String, Row)]) -> Result<LinearTransform> {
    let reference = c.reference_node().unwrap_or_default();
    let vars: Vec<&str> = c
        .nodes
        .iter()
        .map(String::as_str)
        .filter(|n| *n != reference)
        .collect();
    if rows.len() != vars.len() {
        return Err(Error::DimensionMismatch {
            expected: vars.len(),
            found: rows.len(),
        });
    }
    let mut m = DMatrix::zeros(vars.len(), vars.len());
    for (i, (_, terms)) in rows.iter().enumerate() {
        for (node, w) in terms {
            if node == reference {
                continue;
            }
            let j = vars
                .iter()
                .position(|v| v == node)
                .ok_or_else(|| Error::UnknownVariable(node.clone()))?;
            m[(i, j)] += w;
        }
    }
    LinearTransform::new(m, rows.iter().map(|(l, _)| l.clone()).collect())
}

/// Second-stage plaquette transform from `(phi_q, phi_s, phi_c)` to the
/// qubit variables, seven independent arm variables and the one remaining
/// cyclic variable `phi_c_alpha`.
///
/// The eight arm variables `phi_r{i}_{conn} = phi_s{i} - 2 phi_c_{conn}`
/// satisfy `sum (-1)^k r_k = 0` around the ring, so only seven are
/// independent; the eighth (`phi_r1_delta`) is their alternating sum.
pub fn plaquette_resonator_transform(standard_labels: &[String]) -> Result<LinearTransform> {
    let idx = |l: &str| {
        standard_labels
            .iter()
            .position(|x| x == l)
            .ok_or_else(|| Error::UnknownVariable(l.to_string()))
    };
    let n = standard_labels.len();
    let mut m = DMatrix::zeros(n, n);
    let mut labels = Vec::with_capacity(n);
    let mut r = 0;
    for i in 1..=4 {
        let q = format!("phi_q{i}");
        m[(r, idx(&q)?)] = 1.0;
        labels.push(q);
        r += 1;
    }
    for (k, (conn, i1, i2)) in PLAQUETTE_CONNECTIONS.iter().enumerate() {
        for (slot, i) in [*i1, *i2].into_iter().enumerate() {
            if k == 3 && slot == 1 {
                continue;
            }
            m[(r, idx(&format!("phi_s{i}"))?)] = 1.0;
            m[(r, idx(&format!("phi_c_{conn}"))?)] = -2.0;
            labels.push(format!("phi_r{i}_{conn}"));
            r += 1;
        }
    }
    m[(r, idx("phi_c_alpha")?)] = 1.0;
    labels.push("phi_c_alpha".into());
    LinearTransform::new(m, labels)
}

/// Result of [`cholesky_eliminate`].
#[derive(Debug, Clone)]
pub struct Elimination {
    /// The retained variables only.
    pub model: LagrangianModel,
    /// Full transform (cyclic rows first in label order of `cyclic`), for audit.
    pub transform: LinearTransform,
    /// Kinetic coefficients of the decoupled variables (`diag(B)^2`).
    pub decoupled_kinetic: DVector<f64>,
    /// Largest kinetic cross term between decoupled and retained variables
    /// after the full transform, relative to the largest kinetic entry.
    pub cross_term: f64,
}

/// Decouple cyclic variables from the kinetic form with the rescaled
/// Cholesky rows of the cyclic block and drop them.
///
/// With `K_SS = B^T B` (B upper triangular, `D = diag(B)`), the new cyclic
/// variables are `D^{-1} (B phi_S + B^{-T} K_SR phi_R)`; retained variables
/// are unchanged and their kinetic form becomes the Schur complement
/// `K_RR - K_RS K_SS^{-1} K_SR`.
pub fn cholesky_eliminate(m: &LagrangianModel, cyclic: &[&str]) -> Result<Elimination> {
    let n = m.dim();
    let mut s_idx = Vec::new();
    for name in cyclic {
        let i = m.index_of(name)?;
        if !s_idx.contains(&i) {
            s_idx.push(i);
        }
    }
    if s_idx.is_empty() {
        return Err(Error::InvalidArgument("no cyclic variables given".into()));
    }
    let s_set: BTreeSet<usize> = s_idx.iter().copied().collect();
    let r_idx: Vec<usize> = (0..n).filter(|i| !s_set.contains(i)).collect();

    // exact cyclicity, up to rounding left over from earlier transforms
    let pmax = max_abs(&m.quad_potential.matrix);
    for &i in &s_idx {
        let prow = m.quad_potential.matrix.row(i).iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if prow > 64.0 * f64::EPSILON * pmax {
            return Err(Error::NotCyclic(m.labels[i].clone()));
        }
        for s in &m.sinusoids {
            let dmax = s.direction.amax();
            if s.direction[i].abs() > 64.0 * f64::EPSILON * dmax {
                return Err(Error::NotCyclic(m.labels[i].clone()));
            }
        }
    }

    let k = &m.kinetic.matrix;
    let ns = s_idx.len();
    let nr = r_idx.len();
    let k_ss = k.select_rows(&s_idx).select_columns(&s_idx);
    let k_sr = k.select_rows(&s_idx).select_columns(&r_idx);
    let chol = nalgebra::Cholesky::new(k_ss.clone()).ok_or(Error::IndefiniteBlock)?;
    let l = chol.l(); // K_SS = L L^T, B = L^T
    let b = l.transpose();
    let d = b.diagonal();
    let dinv = DMatrix::from_diagonal(&d.map(|x| 1.0 / x));
    let linv = l.clone().try_inverse().ok_or(Error::IndefiniteBlock)?; // B^{-T}
    let binv = linv.transpose();

    // T in the ordering [S; R] over the original variables.
    let mut t = DMatrix::zeros(n, n);
    let mut tinv = DMatrix::zeros(n, n);
    let ts_s = &dinv * &b;
    let ts_r = &dinv * &linv * &k_sr;
    // phi_S = B^{-1} D psi_S - K_SS^{-1} K_SR psi_R
    let ti_s = &binv * DMatrix::from_diagonal(&d);
    let ti_r = -chol.solve(&k_sr);
    for (a, &i) in s_idx.iter().enumerate() {
        for (bb, &j) in s_idx.iter().enumerate() {
            t[(a, j)] = ts_s[(a, bb)];
            tinv[(i, bb)] = ti_s[(a, bb)];
        }
        for (bb, &j) in r_idx.iter().enumerate() {
            t[(a, j)] = ts_r[(a, bb)];
            tinv[(i, ns + bb)] = ti_r[(a, bb)];
        }
    }
    for (a, &i) in r_idx.iter().enumerate() {
        t[(ns + a, i)] = 1.0;
        tinv[(i, ns + a)] = 1.0;
    }

    let mut labels: Vec<String> = s_idx.iter().map(|&i| format!("{}_star", m.labels[i])).collect();
    labels.extend(r_idx.iter().map(|&i| m.labels[i].clone()));
    let full = transform_with_inverse(m, &tinv, &labels);
    let kfull = &full.kinetic.matrix;
    let kscale = max_abs(kfull);
    let mut cross = 0.0f64;
    for a in 0..ns {
        for bb in ns..n {
            cross = cross.max(kfull[(a, bb)].abs());
        }
    }

    // retained block as an explicit Schur complement
    let k_rr = k.select_rows(&r_idx).select_columns(&r_idx);
    let mut schur = &k_rr - k_sr.transpose() * chol.solve(&k_sr);
    symmetrize(&mut schur);
    let p_rr = m.quad_potential.matrix.select_rows(&r_idx).select_columns(&r_idx);
    let model = LagrangianModel {
        labels: r_idx.iter().map(|&i| m.labels[i].clone()).collect(),
        kinetic: QuadraticForm { matrix: schur },
        quad_potential: QuadraticForm { matrix: p_rr },
        sinusoids: m
            .sinusoids
            .iter()
            .map(|s| SinusoidTerm {
                amplitude: s.amplitude,
                direction: DVector::from_iterator(nr, r_idx.iter().map(|&i| s.direction[i])),
                offset: s.offset,
            })
            .collect(),
    };
    Ok(Elimination {
        model,
        transform: LinearTransform::new(t, labels)?,
        decoupled_kinetic: DVector::from_iterator(ns, d.iter().map(|x| x * x)),
        cross_term: if kscale > 0.0 { cross / kscale } else { 0.0 },
    })
}

/// The full reduction of a builtin circuit to its qubit and resonator variables.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub node_model: LagrangianModel,
    pub block_model: LagrangianModel,
    pub reduced: LagrangianModel,
    pub elimination: Option<Elimination>,
}

/// Circuits without builtin topology metadata stay in node variables.
pub fn reduce_circuit(c: &Circuit) -> Result<Reduction> {
    let node_model = build_lagrangian(c)?;
    let block_model = if c.topology.is_some() {
        apply_linear_transform(&node_model, &standard_block_transform(c)?)?
    } else {
        node_model.clone()
    };
    let builtin = c.topology.as_ref().map(|t| t.builtin);
    let elimination = match builtin {
        Some(Builtin::TwoBlocks) => Some(cholesky_eliminate(&block_model, &["phi_c"])?),
        Some(Builtin::Plaquette) => {
            let t2 = plaquette_resonator_transform(&block_model.labels)?;
            let staged = apply_linear_transform(&block_model, &t2)?;
            Some(cholesky_eliminate(&staged, &["phi_c_alpha"])?)
        }
        _ => None,
    };
    let reduced = elimination
        .as_ref()
        .map(|e| e.model.clone())
        .unwrap_or_else(|| block_model.clone());
    Ok(Reduction {
        node_model,
        block_model,
        reduced,
        elimination,
    })
}

/// Largest relative difference of `L` between two models related by `t`
/// (`new = t old`) over random phase/velocity points.
pub fn transform_invariance(
    old: &LagrangianModel,
    new: &LagrangianModel,
    t: &LinearTransform,
    samples: usize,
    rng: &mut impl Rng,
) -> f64 {
    let n = old.dim();
    let ks = max_abs(&old.kinetic.matrix).max(f64::MIN_POSITIVE);
    let ps = max_abs(&old.quad_potential.matrix).max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let phi = DVector::from_fn(n, |_, _| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
        // velocities scaled so both energies are of comparable size
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0) * (ps / ks).sqrt());
        let a = old.evaluate(&phi, &v);
        let b = new.evaluate(&(&t.matrix * &phi), &(&t.matrix * &v));
        let size = old.kinetic_energy(&v).abs() + old.potential(&phi).abs();
        worst = worst.max((a - b).abs() / size.max(f64::MIN_POSITIVE));
    }
    worst
}

/// The plaquette kinetic energy written as a sum over connections.
#[derive(Debug, Clone, Serialize)]
pub struct ConnectionDecomposition {
    /// `(connection, C_j)` with `C_j` over `(phidot_c, phidot_r1, phidot_r2)` in farads.
    pub blocks: Vec<(String, [[f64; 3]; 3])>,
    /// Qubit kinetic coefficient (farads) of `phidot_q^2`, per qubit.
    pub qubit_coefficients: Vec<f64>,
    /// Coefficient (farads) of `(phidot_r1 - phidot_r2)^2` after eliminating
    /// `phi_c` within each connection block.
    pub eliminated_couplings: Vec<(String, f64)>,
    /// max |K_node - K_connections| / max |K_node|.
    pub residual: f64,
}

/// Check that the plaquette node kinetic form equals
/// `sum_i c_i phidot_q,i^2 + sum_j 1/2 v_j^T C_j v_j` with
/// `v_j = (phidot_c_j, phidot_r{i1}_j, phidot_r{i2}_j)`.
pub fn connection_decomposition(c: &Circuit) -> Result<ConnectionDecomposition> {
    let topology = match &c.topology {
        Some(t) if t.builtin == Builtin::Plaquette => t,
        _ => {
            return Err(Error::UnsupportedTopology(
                "connection decomposition needs the plaquette".into(),
            ))
        }
    };
    let model = build_lagrangian(c)?;
    let vars: Vec<String> = model.labels.iter().map(|l| l.trim_start_matches("phi_").to_string()).collect();
    let n = vars.len();
    let unit = |node: &str| {
        let mut e = DVector::zeros(n);
        if let Some(i) = vars.iter().position(|v| v == node) {
            e[i] = 1.0;
        }
        e
    };
    let scale = phase_scale();
    let mut lifted = DMatrix::zeros(n, n);
    let mut qubit_coefficients = vec![0.0; 4];
    for (i, coef) in qubit_coefficients.iter_mut().enumerate() {
        *coef = topology.param(&format!("C_q_{}", i + 1), "C_q") * FEMTO / 2.0;
    }
    let mut blocks = Vec::new();
    let mut eliminated = Vec::new();
    for (conn, i1, i2) in PLAQUETTE_CONNECTIONS {
        let cg = topology.param(&format!("C_g_{conn}"), "C_g") * FEMTO;
        let c1 = topology.param(&format!("C_{i1}_{conn}"), "C") * FEMTO;
        let c2 = topology.param(&format!("C_{i2}_{conn}"), "C") * FEMTO;
        let cs = topology.param(&format!("C_s_{conn}"), "C_s") * FEMTO;
        let cj = [
            [4.0 * cg + cs, cg, cg],
            [cg, (c1 + cg) / 2.0, 0.0],
            [cg, 0.0, (c2 + cg) / 2.0],
        ];
        qubit_coefficients[i1 - 1] += (c1 + cg) / 4.0;
        qubit_coefficients[i2 - 1] += (c2 + cg) / 4.0;
        let ec = unit(&format!("c_{conn}"));
        let arm = |i: usize| unit(&format!("a{i}")) + unit(&format!("b{i}")) - &ec * 2.0;
        let e = [ec.clone(), arm(i1), arm(i2)];
        for (x, ex) in e.iter().enumerate() {
            for (y, ey) in e.iter().enumerate() {
                lifted += ex * ey.transpose() * (scale * cj[x][y] / 2.0);
            }
        }
        let schur12 = cj[1][2] - cj[1][0] * cj[0][2] / cj[0][0];
        // 1/2 * 2 * schur12 * r1 r2 = -coef (r1 - r2)^2 cross part
        eliminated.push((conn.to_string(), -schur12 / 2.0));
        blocks.push((conn.to_string(), cj));
    }
    for (i, coef) in qubit_coefficients.iter().enumerate() {
        let eq = unit(&format!("a{}", i + 1)) - unit(&format!("b{}", i + 1));
        lifted += &eq * eq.transpose() * (scale * coef);
    }
    let k = &model.kinetic.matrix;
    let residual = max_abs(&(k - &lifted)) / max_abs(k);
    Ok(ConnectionDecomposition {
        blocks,
        qubit_coefficients,
        eliminated_couplings: eliminated,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::builtin_circuit;
    use crate::units::ghz_to_angular;
    use std::collections::BTreeMap;

    fn builtin(b: Builtin, p: &[(&str, f64)]) -> Circuit {
        let params: BTreeMap<String, f64> = p.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        builtin_circuit(b, &params).unwrap()
    }

    #[test]
    fn fig3_kinetic_entries() {
        let c = builtin(Builtin::QubitResonator, &[]);
        let m = build_lagrangian(&c).unwrap();
        let s = phase_scale();
        let (cq, cc) = (20.0 * FEMTO, 100.0 * FEMTO);
        assert_eq!(m.labels, ["phi_a", "phi_b"]);
        let k = &m.kinetic.matrix;
        assert!((k[(0, 0)] - s * (cc + cq) / 2.0).abs() < 1e-15 * k[(0, 0)]);
        assert!((k[(1, 1)] - s * (cc + cq) / 2.0).abs() < 1e-15 * k[(1, 1)]);
        assert!((k[(0, 1)] + s * cq / 2.0).abs() < 1e-15 * k[(0, 0)]);
        assert_eq!(m.sinusoids.len(), 3);
    }

    #[test]
    fn zero_coupling_leaves_qubit_junction() {
        let c = builtin(Builtin::QubitResonator, &[("E_J", 0.0)]);
        let m = build_lagrangian(&c).unwrap();
        assert_eq!(m.sinusoids.len(), 1);
        assert!((m.sinusoids[0].amplitude + ghz_to_angular(20.0)).abs() < 1e-3);
    }

    #[test]
    fn fig3_standard_transform_decouples() {
        let c = builtin(Builtin::QubitResonator, &[]);
        let m = build_lagrangian(&c).unwrap();
        let t = standard_block_transform(&c).unwrap();
        let r = apply_linear_transform(&m, &t).unwrap();
        assert_eq!(r.labels, ["phi_q", "phi_r"]);
        assert!(r.kinetic.matrix[(0, 1)].abs() <= 1e-15 * max_abs(&r.kinetic.matrix));
        assert!(r.quad_potential.matrix[(0, 1)].abs() <= 1e-15 * max_abs(&r.quad_potential.matrix));
        // coupling recombines into 2 E_J cos(q/2) sin(r/2) (U-convention sign)
        let ej = ghz_to_angular(0.5);
        let f = r.coupling_function(0, 1);
        for (q, x) in [(0.3, 0.7), (-1.1, 0.2), (2.0, -1.3)] {
            let expect = 2.0 * ej * (q / 2.0f64).cos() * (x / 2.0f64).sin();
            assert!((f(q, x) - expect).abs() < 1e-9 * ej);
        }
    }

    #[test]
    fn identity_transform_is_exact() {
        let c = builtin(Builtin::TwoBlocks, &[("C_s", 3.0)]);
        let m = build_lagrangian(&c).unwrap();
        let out = apply_linear_transform(&m, &LinearTransform::identity(&m.labels)).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn singular_transform_rejected() {
        let c = builtin(Builtin::QubitResonator, &[]);
        let m = build_lagrangian(&c).unwrap();
        let t = LinearTransform::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            vec!["x".into(), "y".into()],
        )
        .unwrap();
        assert!(matches!(
            apply_linear_transform(&m, &t),
            Err(Error::SingularTransform { .. })
        ));
    }

    #[test]
    fn unknown_topology_rejected() {
        let mut c = builtin(Builtin::QubitResonator, &[]);
        c.topology = None;
        assert!(matches!(
            standard_block_transform(&c),
            Err(Error::UnsupportedTopology(_))
        ));
    }

    #[test]
    fn two_blocks_elimination() {
        let cg = 10.0 * FEMTO;
        for cs in [0.0, 5.0] {
            let c = builtin(Builtin::TwoBlocks, &[("C_s", cs)]);
            let red = reduce_circuit(&c).unwrap();
            let e = red.elimination.unwrap();
            assert!(e.cross_term < 1e-14, "cross term {}", e.cross_term);
            let k = &e.model.kinetic.matrix;
            let r1 = e.model.index_of("phi_r1").unwrap();
            let r2 = e.model.index_of("phi_r2").unwrap();
            let coupling = -k[(r1, r2)] / phase_scale();
            let csf = cs * FEMTO;
            let expect = cg * cg / (2.0 * (4.0 * cg + csf));
            assert!((coupling - expect).abs() <= 1e-14 * expect, "{coupling} vs {expect}");
            // mixing coefficient of the decoupled variable
            let mix = e.transform.matrix[(0, 1)] / e.transform.matrix[(0, 4)];
            assert!((mix - cg / (4.0 * cg + csf)).abs() < 1e-14);
        }
    }

    #[test]
    fn eliminating_potential_variable_fails() {
        let c = builtin(Builtin::TwoBlocks, &[]);
        let red = reduce_circuit(&c).unwrap();
        assert!(matches!(
            cholesky_eliminate(&red.block_model, &["phi_q1"]),
            Err(Error::NotCyclic(_))
        ));
    }

    #[test]
    fn plaquette_reduction() {
        let c = builtin(Builtin::Plaquette, &[]);
        let red = reduce_circuit(&c).unwrap();
        assert_eq!(red.block_model.dim(), 12);
        assert_eq!(red.reduced.dim(), 11);
        let e = red.elimination.unwrap();
        assert!(e.cross_term < 1e-14);
        let d = connection_decomposition(&c).unwrap();
        assert!(d.residual < 1e-14, "residual {}", d.residual);
        for (_, coef) in d.eliminated_couplings {
            assert!((coef - 10.0 * FEMTO / 8.0).abs() < 1e-14 * coef);
        }
    }
}
