use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

use fluxlattice::dynamics::{self, DriveKind, DriveSpec, Envelope, EvolveOptions, PlanRequest, ScanOptions};
use fluxlattice::lagrangian::reduce_circuit;
use fluxlattice::netlist::{self, Builtin};
use fluxlattice::quantize::{self, default_truncation, HamiltonianModel, ModeKind};
use fluxlattice::report::to_canonical_json;
use fluxlattice::spectra::{self, DISPERSIVE_WARNING};

create_exception!(fluxlattice, FluxlatticeError, PyException);

fn err(e: fluxlattice::error::Error) -> PyErr {
    FluxlatticeError::new_err(e.to_string())
}

/// Serialize through the canonical JSON writer and hand back Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, data: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = to_canonical_json(data).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Circuit", module = "fluxlattice", skip_from_py_object)]
#[derive(Clone)]
pub struct PyCircuit {
    inner: netlist::Circuit,
}

impl PyCircuit {
    fn hamiltonian(&self) -> PyResult<HamiltonianModel> {
        let red = reduce_circuit(&self.inner).map_err(err)?;
        quantize::legendre_transform(&red.reduced).map_err(err)
    }
}

#[pymethods]
impl PyCircuit {
    /// Build a named builtin circuit; `params` overrides defaults.
    #[staticmethod]
    #[pyo3(signature = (name, params=None))]
    fn builtin(name: &str, params: Option<BTreeMap<String, f64>>) -> PyResult<Self> {
        let b: Builtin = name.parse().map_err(err)?;
        let inner = netlist::builtin_circuit(b, &params.unwrap_or_default()).map_err(err)?;
        Ok(PyCircuit { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyCircuit {
            inner: netlist::parse_netlist(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        netlist::to_json(&self.inner)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn nodes(&self) -> Vec<String> {
        self.inner.nodes.clone()
    }

    fn num_branches(&self) -> usize {
        self.inner.branches.len()
    }

    /// Violation messages; empty when the circuit is valid.
    fn validate(&self) -> Vec<String> {
        netlist::validate_circuit(&self.inner).messages()
    }

    /// Variable labels of the reduced Hamiltonian.
    fn variables(&self) -> PyResult<Vec<String>> {
        Ok(self.hamiltonian()?.labels)
    }

    /// Closed-form parameters keyed like `phi_q.Delta`.
    fn params(&self) -> PyResult<BTreeMap<String, f64>> {
        let h = self.hamiltonian()?;
        Ok(quantize::derived_parameters(&h, &self.inner).map_err(err)?.flat_report())
    }

    /// Lowest levels as `(energy, qubit_label, photon_label)`.
    #[pyo3(signature = (levels=10, truncation=None))]
    fn spectrum(&self, levels: usize, truncation: Option<Vec<usize>>) -> PyResult<Vec<(f64, String, String)>> {
        let h = self.hamiltonian()?;
        let dims = truncation.unwrap_or_else(|| default_truncation(&h));
        let f = quantize::fock_hamiltonian(&h, &dims, false).map_err(err)?;
        let s = spectra::eigensystem(&f.operator, levels).map_err(err)?;
        Ok(s.energies
            .iter()
            .zip(&s.labels)
            .map(|(e, l)| (*e, l.qubit_label(), l.photon_label()))
            .collect())
    }

    /// Longitudinal/transverse amplitudes and tag of one coupling.
    #[pyo3(signature = (qubit=None, resonator=None, dim=60))]
    fn classify<'py>(
        &self,
        py: Python<'py>,
        qubit: Option<String>,
        resonator: Option<String>,
        dim: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let h = self.hamiltonian()?;
        let kinds = h.mode_kinds();
        let first = |k: ModeKind| h.labels.iter().zip(&kinds).find(|(_, x)| **x == k).map(|(l, _)| l.clone());
        let q = qubit
            .or_else(|| first(ModeKind::Qubit))
            .ok_or_else(|| FluxlatticeError::new_err("no qubit variable"))?;
        let r = resonator
            .or_else(|| first(ModeKind::Resonator))
            .ok_or_else(|| FluxlatticeError::new_err("no resonator variable"))?;
        let c = spectra::classify_circuit_coupling(&h, &q, &r, dim).map_err(err)?;
        to_py(py, &c)
    }

    /// Two-level reduction to a spin-boson model.
    fn two_level(&self) -> PyResult<PySpinBoson> {
        let h = self.hamiltonian()?;
        let r = quantize::two_level_reduce(&h, quantize::TwoLevelOptions::default()).map_err(err)?;
        Ok(PySpinBoson { inner: r.model })
    }

    fn __repr__(&self) -> String {
        format!(
            "Circuit(name={:?}, nodes={}, branches={})",
            self.inner.name,
            self.inner.nodes.len(),
            self.inner.branches.len()
        )
    }
}

#[pyclass(name = "SpinBosonModel", module = "fluxlattice", skip_from_py_object)]
#[derive(Clone)]
pub struct PySpinBoson {
    inner: spectra::SpinBosonModel,
}

fn drive_spec(
    target: usize,
    amplitude: f64,
    frequency: f64,
    duration: f64,
    phase: f64,
    ramp: Option<f64>,
) -> DriveSpec {
    DriveSpec {
        target,
        amplitude,
        frequency,
        phase,
        envelope: ramp.map_or(Envelope::Constant, |ramp| Envelope::CosineRamp { ramp }),
        duration,
        kind: DriveKind::Voltage,
    }
}

#[pymethods]
impl PySpinBoson {
    #[staticmethod]
    fn rabi(delta: f64, omega: f64, g: f64) -> Self {
        PySpinBoson {
            inner: spectra::SpinBosonModel::rabi(delta, omega, g),
        }
    }

    #[staticmethod]
    fn longitudinal(delta: f64, omega: f64, g: f64) -> Self {
        PySpinBoson {
            inner: spectra::SpinBosonModel::longitudinal(delta, omega, g),
        }
    }

    #[staticmethod]
    fn two_block(deltas: [f64; 2], omegas: [f64; 2], gs: [f64; 2], g_c: f64) -> Self {
        PySpinBoson {
            inner: spectra::SpinBosonModel::two_block(deltas, omegas, gs, g_c),
        }
    }

    #[staticmethod]
    fn plaquette(delta: f64, omega: f64, g: f64, g_cs: [f64; 4]) -> Self {
        PySpinBoson {
            inner: spectra::SpinBosonModel::plaquette(delta, omega, g, g_cs),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: spectra::SpinBosonModel =
            serde_json::from_str(text).map_err(|e| FluxlatticeError::new_err(e.to_string()))?;
        inner.validate().map_err(err)?;
        Ok(PySpinBoson { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        to_canonical_json(&self.inner).map_err(err)
    }

    #[getter]
    fn n_qubits(&self) -> usize {
        self.inner.n_qubits()
    }

    #[getter]
    fn n_resonators(&self) -> usize {
        self.inner.n_resonators()
    }

    /// Lowest `k` eigenvalues with resonators truncated to `resonator_dims`.
    fn eigenvalues(&self, resonator_dims: Vec<usize>, k: usize) -> PyResult<Vec<f64>> {
        let h = self.inner.to_fock(&resonator_dims).map_err(err)?;
        Ok(spectra::eigensystem(&h, k).map_err(err)?.energies)
    }

    fn dispersive_shift(&self, resonator_dims: Vec<usize>) -> PyResult<f64> {
        let h = self.inner.to_fock(&resonator_dims).map_err(err)?;
        spectra::dispersive_shift_numeric(&h).map_err(err)
    }

    fn schrieffer_wolff<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &spectra::schrieffer_wolff_frame(&self.inner, DISPERSIVE_WARNING).map_err(err)?)
    }

    fn lang_firsov<'py>(&self, py: Python<'py>, n_max: usize) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &spectra::lang_firsov_frame(&self.inner, n_max).map_err(err)?)
    }

    /// Sideband scan; returns the full report (points, peaks, norm drift).
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (resonator_dims, frequencies, amplitude, duration, target=0, samples=400))]
    fn scan<'py>(
        &self,
        py: Python<'py>,
        resonator_dims: Vec<usize>,
        frequencies: Vec<f64>,
        amplitude: f64,
        duration: f64,
        target: usize,
        samples: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let template = drive_spec(target, amplitude, 0.0, duration, 0.0, None);
        let opts = ScanOptions {
            samples,
            ..Default::default()
        };
        let model = &self.inner;
        let r = py
            .detach(|| dynamics::sideband_scan(model, &resonator_dims, &template, &frequencies, opts))
            .map_err(err)?;
        to_py(py, &r)
    }

    /// Drive one qubit and report disturbance of everything else.
    #[pyo3(signature = (resonator_dims, amplitude, frequency, duration, target=0, ramp=None))]
    #[allow(clippy::too_many_arguments)]
    fn locality<'py>(
        &self,
        py: Python<'py>,
        resonator_dims: Vec<usize>,
        amplitude: f64,
        frequency: f64,
        duration: f64,
        target: usize,
        ramp: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let spec = drive_spec(target, amplitude, frequency, duration, 0.0, ramp);
        let model = &self.inner;
        let r = py
            .detach(|| dynamics::locality_probe(model, &resonator_dims, &spec, EvolveOptions::default()))
            .map_err(err)?;
        to_py(py, &r)
    }

    fn __repr__(&self) -> String {
        format!(
            "SpinBosonModel(qubits={}, resonators={})",
            self.inner.n_qubits(),
            self.inner.n_resonators()
        )
    }
}

/// `(Omega_plus, Omega_minus)` of two charge-coupled resonators.
#[pyfunction]
fn normal_modes(omega_1: f64, omega_2: f64, g_c: f64) -> PyResult<(f64, f64)> {
    spectra::normal_mode_frequencies(omega_1, omega_2, g_c).map_err(err)
}

/// Choose coupler values so all normal-mode frequencies are separated by `guard_band`.
#[pyfunction]
#[pyo3(signature = (omegas, g_c_min, g_c_max, guard_band, grid_points=281))]
fn frequency_plan<'py>(
    py: Python<'py>,
    omegas: Vec<(f64, f64)>,
    g_c_min: f64,
    g_c_max: f64,
    guard_band: f64,
    grid_points: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let plan = dynamics::frequency_plan(&PlanRequest {
        omegas,
        g_c_min,
        g_c_max,
        guard_band,
        grid_points,
    })
    .map_err(err)?;
    plan.verify().map_err(err)?;
    to_py(py, &plan)
}

#[pyfunction]
fn builtin_names() -> Vec<&'static str> {
    Builtin::ALL.iter().map(|b| b.name()).collect()
}

#[pymodule]
#[pyo3(name = "fluxlattice")]
fn fluxlattice_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FluxlatticeError", m.py().get_type::<FluxlatticeError>())?;
    m.add_class::<PyCircuit>()?;
    m.add_class::<PySpinBoson>()?;
    m.add_function(wrap_pyfunction!(normal_modes, m)?)?;
    m.add_function(wrap_pyfunction!(frequency_plan, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_names, m)?)?;
    Ok(())
}
