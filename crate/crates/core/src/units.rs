//! Physical constants and the canonical unit convention.
//!
//! Internally every energy is an angular frequency (rad/s, hbar = 1).
//! Capacitances are stored in farads and inductances in henries; the
//! Lagrangian assembly multiplies them by [`phase_scale`] so that all
//! model coefficients come out in rad/s.

use std::f64::consts::PI;

/// Elementary charge (C), exact SI value.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Planck constant (J s), exact SI value.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = PLANCK / (2.0 * PI);
/// Magnetic flux quantum h / 2e (Wb).
pub const FLUX_QUANTUM: f64 = PLANCK / (2.0 * ELEMENTARY_CHARGE);

pub const FEMTO: f64 = 1e-15;
pub const NANO: f64 = 1e-9;
pub const GIGA: f64 = 1e9;

/// (Phi_0 / 2 pi)^2 / hbar, the factor turning `C/2 phidot^2` (farads)
/// into an angular frequency.
pub fn phase_scale() -> f64 {
    let reduced = FLUX_QUANTUM / (2.0 * PI);
    reduced * reduced / HBAR
}

/// Charging energy e^2 / 2C as an angular frequency.
pub fn charging_energy(capacitance: f64) -> f64 {
    ELEMENTARY_CHARGE * ELEMENTARY_CHARGE / (2.0 * capacitance * HBAR)
}

/// Inductive energy (Phi_0 / 2 pi)^2 / L as an angular frequency.
pub fn inductive_energy(inductance: f64) -> f64 {
    phase_scale() / inductance
}

/// Energy given as E/h in GHz converted to rad/s.
pub fn ghz_to_angular(ghz: f64) -> f64 {
    2.0 * PI * GIGA * ghz
}

pub fn angular_to_ghz(omega: f64) -> f64 {
    omega / (2.0 * PI * GIGA)
}
