//! Planar quadcopter rigid-body model.
//!
//! Three degrees of freedom (x, y, attitude) driven by two rotor thrusts. The
//! vehicle pitches by differential thrust and translates by tilting the
//! collective thrust vector. Linear and rotational drag both oppose motion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical state of the vehicle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuadState {
    pub px: f64,
    pub py: f64,
    pub theta: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

/// Time derivative of [`QuadState`], field for field.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QuadStateDerivative {
    pub px: f64,
    pub py: f64,
    pub theta: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl QuadState {
    pub fn to_array(self) -> [f64; 6] {
        [self.px, self.py, self.theta, self.vx, self.vy, self.omega]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            px: a[0],
            py: a[1],
            theta: a[2],
            vx: a[3],
            vy: a[4],
            omega: a[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    fn advanced(self, d: &QuadStateDerivative, h: f64) -> Self {
        Self {
            px: self.px + h * d.px,
            py: self.py + h * d.py,
            theta: self.theta + h * d.theta,
            vx: self.vx + h * d.vx,
            vy: self.vy + h * d.vy,
            omega: self.omega + h * d.omega,
        }
    }
}

impl QuadStateDerivative {
    pub fn to_array(self) -> [f64; 6] {
        [self.px, self.py, self.theta, self.vx, self.vy, self.omega]
    }
}

/// Which quantity divides the torque balance in the angular acceleration row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngularDenominator {
    #[default]
    Inertia,
    Mass,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadParams {
    /// Mass [kg].
    pub m: f64,
    /// Rotational inertia about the out-of-plane axis [kg m^2].
    pub inertia: f64,
    /// Rotor arm length [m].
    pub l: f64,
    /// Gravitational acceleration [m/s^2].
    pub g: f64,
    pub cd_v: f64,
    pub cd_omega: f64,
    /// Per-rotor thrust saturation [N].
    pub t_max: f64,
    pub angular_denominator: AngularDenominator,
}

impl Default for QuadParams {
    fn default() -> Self {
        let m = 2.5;
        let g = 9.807;
        Self {
            m,
            inertia: 1.0,
            l: 1.0,
            g,
            cd_v: 0.25,
            cd_omega: 0.02255,
            t_max: 1.5 * m * g,
            angular_denominator: AngularDenominator::Inertia,
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m", self.m),
            ("inertia", self.inertia),
            ("l", self.l),
            ("g", self.g),
            ("t_max", self.t_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(
                    name,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        for (name, v) in [("cd_v", self.cd_v), ("cd_omega", self.cd_omega)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(
                    name,
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        Ok(())
    }

    /// Thrust per rotor that balances gravity.
    pub fn hover_thrust(&self) -> f64 {
        0.5 * self.m * self.g
    }

    fn angular_denominator(&self) -> f64 {
        match self.angular_denominator {
            AngularDenominator::Inertia => self.inertia,
            AngularDenominator::Mass => self.m,
        }
    }
}

/// Left (`t1`) and right (`t2`) rotor thrusts [N].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RotorThrusts {
    pub t1: f64,
    pub t2: f64,
}

impl RotorThrusts {
    pub fn new(t1: f64, t2: f64) -> Self {
        Self { t1, t2 }
    }

    pub fn saturated(self, t_max: f64) -> Self {
        Self {
            t1: saturate(self.t1, t_max),
            t2: saturate(self.t2, t_max),
        }
    }
}

// NaN commands map to zero thrust rather than poisoning the state.
fn saturate(t: f64, t_max: f64) -> f64 {
    if t.is_nan() {
        0.0
    } else {
        t.clamp(0.0, t_max)
    }
}

pub fn derivatives(
    state: &QuadState,
    thrusts: &RotorThrusts,
    params: &QuadParams,
) -> QuadStateDerivative {
    let collective = thrusts.t1 + thrusts.t2;
    let (sin, cos) = state.theta.sin_cos();
    QuadStateDerivative {
        px: state.vx,
        py: state.vy,
        theta: state.omega,
        vx: (-collective * sin - params.cd_v * state.vx) / params.m,
        vy: (collective * cos - params.cd_v * state.vy) / params.m - params.g,
        omega: ((thrusts.t2 - thrusts.t1) * params.l - params.cd_omega * state.omega)
            / params.angular_denominator(),
    }
}

/// Advances the state by one classical Runge-Kutta step with the thrusts held
/// constant over the interval.
pub fn step_rk4(
    state: &QuadState,
    thrusts: &RotorThrusts,
    params: &QuadParams,
    dt: f64,
) -> Result<QuadState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(
            "dt",
            format!("must be finite and > 0, got {dt}"),
        ));
    }
    let k1 = derivatives(state, thrusts, params);
    let k2 = derivatives(&state.advanced(&k1, 0.5 * dt), thrusts, params);
    let k3 = derivatives(&state.advanced(&k2, 0.5 * dt), thrusts, params);
    let k4 = derivatives(&state.advanced(&k3, dt), thrusts, params);

    let s = state.to_array();
    let (k1, k2, k3, k4) = (k1.to_array(), k2.to_array(), k3.to_array(), k4.to_array());
    let mut next = [0.0; 6];
    for i in 0..6 {
        next[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let next = QuadState::from_array(next);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::NonFiniteState)
    }
}
