//! Physical constants and unit conversions.
//!
//! All engine code works in SI units (J, s, m, kg). The constants bundle is
//! passed explicitly wherever a formula needs hbar, G, c or the Planck time,
//! so non-default values (e.g. rescaled toy units) stay easy to inject.

use crate::error::{Error, Result};

/// Bundle of physical constants, SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitsContext {
    /// Reduced Planck constant (J s).
    pub hbar: f64,
    /// Newton's gravitational constant (m^3 kg^-1 s^-2).
    pub g_newton: f64,
    /// Speed of light (m s^-1).
    pub c: f64,
    /// Planck time sqrt(hbar G / c^5) (s).
    pub tau_planck: f64,
    /// One electron-volt (J).
    pub ev: f64,
}

impl Default for UnitsContext {
    /// CODATA values at the precision used throughout the project.
    fn default() -> Self {
        UnitsContext {
            hbar: 1.0546e-34,
            g_newton: 6.674e-11,
            c: 2.998e8,
            tau_planck: 5.391e-44,
            ev: 1.602e-19,
        }
    }
}

impl UnitsContext {
    /// Checks that every constant is strictly positive and finite.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("hbar", self.hbar),
            ("g_newton", self.g_newton),
            ("c", self.c),
            ("tau_planck", self.tau_planck),
            ("ev", self.ev),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "units",
                    reason: format!("{name} must be strictly positive and finite, got {v}"),
                });
            }
        }
        Ok(())
    }

    /// Energy conversion: electron-volts to joules.
    pub fn ev_to_joule(&self, e_ev: f64) -> f64 {
        e_ev * self.ev
    }

    /// Mass-density conversion: g/cm^3 to kg/m^3.
    pub fn g_per_cm3_to_si(rho: f64) -> f64 {
        rho * 1.0e3
    }

    /// Length conversion: centimetres to metres.
    pub fn cm_to_m(l: f64) -> f64 {
        l * 1.0e-2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn defaults_are_codata() {
        let u = UnitsContext::default();
        assert_eq!(u.hbar, 1.0546e-34);
        assert_eq!(u.g_newton, 6.674e-11);
        assert_eq!(u.c, 2.998e8);
        assert_eq!(u.tau_planck, 5.391e-44);
        assert_eq!(u.ev, 1.602e-19);
        u.validate().unwrap();
    }

    #[test]
    fn planck_time_is_consistent_with_the_other_constants() {
        // tau_planck should equal sqrt(hbar G / c^5) at the stored precision.
        let u = UnitsContext::default();
        let derived = (u.hbar * u.g_newton / u.c.powi(5)).sqrt();
        assert!(
            (derived - u.tau_planck).abs() / u.tau_planck < 1e-3,
            "derived {derived:e} vs stored {:e}",
            u.tau_planck
        );
    }

    #[test]
    fn conversions() {
        let u = UnitsContext::default();
        assert_eq!(u.ev_to_joule(1.0), 1.602e-19);
        assert_eq!(UnitsContext::g_per_cm3_to_si(1.0), 1000.0);
        assert_relative_eq!(UnitsContext::cm_to_m(1.0e-5), 1.0e-7, epsilon = 1e-15);
    }

    #[test]
    fn rejects_nonpositive_constants() {
        let mut u = UnitsContext::default();
        u.hbar = 0.0;
        assert!(u.validate().is_err());
    }
}
