//! One-port reflection coefficient and impedance sweeps.

use num_complex::Complex64;
use thiserror::Error;

/// Reference impedance assumed when none is given.
pub const DEFAULT_Z_REF: f64 = 50.0;

/// `|1 - s|` below which a conversion logs a proximity warning.
pub const DEFAULT_PROXIMITY_WARNING: f64 = 1e-9;

/// Slack on `|s| <= 1` and `Re(Z) >= 0` when checking passivity.
pub const PASSIVITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("singular point at index {index}: {what}")]
    Singular { index: usize, what: &'static str },
    #[error("reference impedance must be finite and positive, got {0}")]
    BadReference(f64),
    #[error("frequency axis declares {axis} points but sweep holds {samples}")]
    AxisMismatch { axis: usize, samples: usize },
    #[error("sweep must contain at least one point")]
    Empty,
    #[error("sample {index} is not passive: {detail}")]
    NotPassive { index: usize, detail: String },
}

/// Linear frequency grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqAxis {
    pub start_hz: f64,
    pub step_hz: f64,
    pub count: usize,
}

impl FreqAxis {
    pub fn frequency(&self, index: usize) -> f64 {
        self.start_hz + self.step_hz * index as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionSweep {
    s11: Vec<Complex64>,
    axis: FreqAxis,
    z_ref: f64,
}

impl ReflectionSweep {
    pub fn new(s11: Vec<Complex64>, axis: FreqAxis, z_ref: f64) -> Result<Self, NetworkError> {
        check_axis(&axis, s11.len())?;
        if !(z_ref.is_finite() && z_ref > 0.0) {
            return Err(NetworkError::BadReference(z_ref));
        }
        Ok(Self { s11, axis, z_ref })
    }

    pub fn s11(&self) -> &[Complex64] {
        &self.s11
    }

    pub fn axis(&self) -> FreqAxis {
        self.axis
    }

    pub fn z_ref(&self) -> f64 {
        self.z_ref
    }

    /// Checks `|s11| <= 1` within [`PASSIVITY_TOLERANCE`].
    pub fn check_passive(&self) -> Result<(), NetworkError> {
        for (index, s) in self.s11.iter().enumerate() {
            if s.norm() > 1.0 + PASSIVITY_TOLERANCE {
                return Err(NetworkError::NotPassive {
                    index,
                    detail: format!("|s11| = {}", s.norm()),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpedanceSweep {
    z: Vec<Complex64>,
    axis: FreqAxis,
}

impl ImpedanceSweep {
    pub fn new(z: Vec<Complex64>, axis: FreqAxis) -> Result<Self, NetworkError> {
        check_axis(&axis, z.len())?;
        Ok(Self { z, axis })
    }

    pub fn z(&self) -> &[Complex64] {
        &self.z
    }

    pub fn axis(&self) -> FreqAxis {
        self.axis
    }

    /// Checks `Re(Z) >= 0` within [`PASSIVITY_TOLERANCE`] (relative to `|Z|`).
    pub fn check_passive(&self) -> Result<(), NetworkError> {
        for (index, z) in self.z.iter().enumerate() {
            if z.re < -PASSIVITY_TOLERANCE * z.norm().max(1.0) {
                return Err(NetworkError::NotPassive {
                    index,
                    detail: format!("Re(Z) = {}", z.re),
                });
            }
        }
        Ok(())
    }
}

fn check_axis(axis: &FreqAxis, samples: usize) -> Result<(), NetworkError> {
    if samples == 0 {
        return Err(NetworkError::Empty);
    }
    if axis.count != samples {
        return Err(NetworkError::AxisMismatch {
            axis: axis.count,
            samples,
        });
    }
    Ok(())
}

/// `Z = Zref (1 + s) / (1 - s)` at every point.
pub fn s11_to_impedance(sweep: &ReflectionSweep) -> Result<ImpedanceSweep, NetworkError> {
    s11_to_impedance_with_threshold(sweep, DEFAULT_PROXIMITY_WARNING)
}

pub fn s11_to_impedance_with_threshold(
    sweep: &ReflectionSweep,
    warn_threshold: f64,
) -> Result<ImpedanceSweep, NetworkError> {
    let one = Complex64::new(1.0, 0.0);
    let z = sweep
        .s11
        .iter()
        .enumerate()
        .map(|(index, &s)| {
            if s == one {
                return Err(NetworkError::Singular {
                    index,
                    what: "s11 = 1 (open circuit)",
                });
            }
            let gap = (one - s).norm();
            if gap < warn_threshold {
                log::warn!("s11 at index {index} is within {gap:e} of the open-circuit pole");
            }
            Ok((one + s) / (one - s) * sweep.z_ref)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ImpedanceSweep { z, axis: sweep.axis })
}

/// `s = (Z - Zref) / (Z + Zref)` at every point.
pub fn impedance_to_s11(sweep: &ImpedanceSweep, z_ref: f64) -> Result<ReflectionSweep, NetworkError> {
    if !(z_ref.is_finite() && z_ref > 0.0) {
        return Err(NetworkError::BadReference(z_ref));
    }
    let s11 = sweep
        .z
        .iter()
        .enumerate()
        .map(|(index, &z)| {
            let denom = z + z_ref;
            if denom == Complex64::new(0.0, 0.0) {
                return Err(NetworkError::Singular {
                    index,
                    what: "Z = -Zref",
                });
            }
            Ok((z - z_ref) / denom)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ReflectionSweep {
        s11,
        axis: sweep.axis,
        z_ref,
    })
}

pub fn magnitude(sweep: &ImpedanceSweep) -> Vec<f64> {
    sweep.z.iter().map(|z| z.norm()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn axis(count: usize) -> FreqAxis {
        FreqAxis {
            start_hz: 1e5,
            step_hz: 1e6,
            count,
        }
    }

    fn reflection(values: &[Complex64]) -> ReflectionSweep {
        ReflectionSweep::new(values.to_vec(), axis(values.len()), DEFAULT_Z_REF).unwrap()
    }

    #[test]
    fn s11_to_z_examples() {
        let sweep = reflection(&[
            Complex64::new(0.0, 0.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(1.0 / 3.0, 0.0),
        ]);
        let z = s11_to_impedance(&sweep).unwrap();
        assert_eq!(z.z()[0], Complex64::new(50.0, 0.0));
        assert_eq!(z.z()[1], Complex64::new(0.0, 0.0));
        assert_relative_eq!(z.z()[2].re, 100.0, max_relative = 1e-14);
        assert_eq!(z.axis(), sweep.axis());
        assert_eq!(magnitude(&z)[0], 50.0);
    }

    #[test]
    fn open_circuit_is_reported_with_index() {
        let sweep = reflection(&[Complex64::new(0.2, 0.1), Complex64::new(1.0, 0.0)]);
        assert_eq!(
            s11_to_impedance(&sweep),
            Err(NetworkError::Singular {
                index: 1,
                what: "s11 = 1 (open circuit)"
            })
        );
    }

    #[test]
    fn z_to_s11_examples() {
        let z = ImpedanceSweep::new(vec![Complex64::new(50.0, 0.0), Complex64::new(0.0, 0.0)], axis(2)).unwrap();
        let s = impedance_to_s11(&z, 50.0).unwrap();
        assert_eq!(s.s11()[0], Complex64::new(0.0, 0.0));
        assert_eq!(s.s11()[1], Complex64::new(-1.0, 0.0));
    }

    #[test]
    fn negative_reference_pole() {
        let z = ImpedanceSweep::new(vec![Complex64::new(-50.0, 0.0)], axis(1)).unwrap();
        assert!(matches!(
            impedance_to_s11(&z, 50.0),
            Err(NetworkError::Singular { index: 0, .. })
        ));
    }

    #[test]
    fn magnitude_examples() {
        let z = ImpedanceSweep::new(
            vec![
                Complex64::new(3.0, 4.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(3.0, -4.0),
            ],
            axis(3),
        )
        .unwrap();
        assert_eq!(magnitude(&z), vec![5.0, 0.0, 5.0]);
    }

    #[test]
    fn constructor_contracts() {
        assert_eq!(ReflectionSweep::new(vec![], axis(0), 50.0), Err(NetworkError::Empty));
        assert_eq!(
            ReflectionSweep::new(vec![Complex64::new(0.0, 0.0)], axis(1), 0.0),
            Err(NetworkError::BadReference(0.0))
        );
        assert_eq!(
            ImpedanceSweep::new(vec![Complex64::new(0.0, 0.0)], axis(2)),
            Err(NetworkError::AxisMismatch { axis: 2, samples: 1 })
        );
        assert!(reflection(&[Complex64::new(1.5, 0.0)]).check_passive().is_err());
    }

    fn disc_point() -> impl Strategy<Value = Complex64> {
        (0.0..0.99f64, 0.0..std::f64::consts::TAU).prop_map(|(r, t)| Complex64::from_polar(r, t))
    }

    proptest! {
        #[test]
        fn round_trip_from_reflection(points in proptest::collection::vec(disc_point(), 1..32)) {
            let sweep = reflection(&points);
            let z = s11_to_impedance(&sweep).unwrap();
            prop_assert!(z.check_passive().is_ok());
            for zi in z.z() {
                prop_assert!(zi.re > 0.0);
            }
            let back = impedance_to_s11(&z, DEFAULT_Z_REF).unwrap();
            for (a, b) in back.s11().iter().zip(&points) {
                prop_assert!((a - b).norm() <= 1e-12 * b.norm().max(1.0));
            }
        }

        #[test]
        fn round_trip_from_impedance(re in 0.0..1e4f64, im in -1e4..1e4f64) {
            let z0 = Complex64::new(re, im);
            let z = ImpedanceSweep::new(vec![z0], axis(1)).unwrap();
            let s = impedance_to_s11(&z, DEFAULT_Z_REF).unwrap();
            let back = s11_to_impedance(&s).unwrap();
            prop_assert!((back.z()[0] - z0).norm() <= 1e-12 * z0.norm().max(DEFAULT_Z_REF));
        }
    }
}
