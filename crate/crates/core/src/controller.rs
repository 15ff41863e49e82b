//! Cascaded proportional controller.
//!
//! The horizontal channel nests four loops (position, velocity, attitude,
//! rate) and ends in a differential thrust command. The vertical channel
//! nests two loops (position, velocity) and ends in a collective thrust
//! command with gravity feedforward.

use serde::{Deserialize, Serialize};

use crate::dynamics::{QuadParams, QuadState, RotorThrusts};
use crate::error::{Error, Result};

pub const GAIN_NAMES: [&str; 6] = ["kp_x", "kp_vx", "kp_theta", "kp_omega", "kp_y", "kp_vy"];

/// Admissible `(lo, hi)` range of each gain, in [`GAIN_NAMES`] order.
pub const GAIN_BOUNDS: [(f64, f64); 6] = [
    (0.5, 2.0),
    (-0.5, -0.1),
    (5.0, 10.0),
    (10.0, 16.0),
    (0.5, 3.0),
    (5.0, 15.0),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainVector {
    pub kp_x: f64,
    pub kp_vx: f64,
    pub kp_theta: f64,
    pub kp_omega: f64,
    pub kp_y: f64,
    pub kp_vy: f64,
}

impl GainVector {
    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            kp_x: a[0],
            kp_vx: a[1],
            kp_theta: a[2],
            kp_omega: a[3],
            kp_y: a[4],
            kp_vy: a[5],
        }
    }

    pub fn to_array(self) -> [f64; 6] {
        [
            self.kp_x,
            self.kp_vx,
            self.kp_theta,
            self.kp_omega,
            self.kp_y,
            self.kp_vy,
        ]
    }

    /// Centre of every gain range.
    pub fn midpoint() -> Self {
        Self::from_array(GAIN_BOUNDS.map(|(lo, hi)| 0.5 * (lo + hi)))
    }

    /// Checks every gain against its range, naming the first violated bound.
    pub fn validate(&self) -> Result<()> {
        for ((name, (lo, hi)), value) in GAIN_NAMES.iter().zip(GAIN_BOUNDS).zip(self.to_array()) {
            if !(lo..=hi).contains(&value) {
                return Err(Error::GainOutOfRange {
                    name,
                    value,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }
}

impl Default for GainVector {
    fn default() -> Self {
        Self::midpoint()
    }
}

/// Per-loop tracking errors, ordered `[e_x, e_vx, e_theta, e_omega, e_y, e_vy]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorVector {
    pub e_x: f64,
    pub e_vx: f64,
    pub e_theta: f64,
    pub e_omega: f64,
    pub e_y: f64,
    pub e_vy: f64,
}

impl ErrorVector {
    pub fn to_array(self) -> [f64; 6] {
        [
            self.e_x,
            self.e_vx,
            self.e_theta,
            self.e_omega,
            self.e_y,
            self.e_vy,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            e_x: a[0],
            e_vx: a[1],
            e_theta: a[2],
            e_omega: a[3],
            e_y: a[4],
            e_vy: a[5],
        }
    }

    pub fn position_error_norm(&self) -> f64 {
        self.e_x.hypot(self.e_y)
    }
}

/// Reference position [m].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefPoint {
    pub x_ref: f64,
    pub y_ref: f64,
}

impl RefPoint {
    pub fn new(x_ref: f64, y_ref: f64) -> Self {
        Self { x_ref, y_ref }
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x_ref - x).hypot(self.y_ref - y)
    }
}

/// Runs both cascades once. Returns the loop errors (before any saturation)
/// and the rotor thrusts clamped to `[0, t_max]`.
pub fn compute_cascade(
    state: &QuadState,
    reference: &RefPoint,
    gains: &GainVector,
    params: &QuadParams,
) -> (ErrorVector, RotorThrusts) {
    let e_x = reference.x_ref - state.px;
    let vx_ref = gains.kp_x * e_x;
    let e_vx = vx_ref - state.vx;
    let theta_ref = gains.kp_vx * e_vx;
    let e_theta = theta_ref - state.theta;
    let omega_ref = gains.kp_theta * e_theta;
    let e_omega = omega_ref - state.omega;
    let u_diff = gains.kp_omega * e_omega;

    let e_y = reference.y_ref - state.py;
    let vy_ref = gains.kp_y * e_y;
    let e_vy = vy_ref - state.vy;
    let u_coll = gains.kp_vy * e_vy + params.m * params.g;

    let errors = ErrorVector {
        e_x,
        e_vx,
        e_theta,
        e_omega,
        e_y,
        e_vy,
    };
    let thrusts =
        RotorThrusts::new(0.5 * (u_coll - u_diff), 0.5 * (u_coll + u_diff)).saturated(params.t_max);
    (errors, thrusts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::derivatives;
    use proptest::prelude::*;

    #[test]
    fn midpoints() {
        assert_eq!(
            GainVector::midpoint().to_array(),
            [1.25, -0.3, 7.5, 13.0, 1.75, 10.0]
        );
        GainVector::midpoint().validate().unwrap();
    }

    #[test]
    fn validation_names_violated_gain() {
        let mut g = GainVector::midpoint();
        g.kp_vx = 0.2;
        match g.validate() {
            Err(Error::GainOutOfRange { name, lo, hi, .. }) => {
                assert_eq!(name, "kp_vx");
                assert_eq!((lo, hi), (-0.5, -0.1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equilibrium_gives_hover_thrust() {
        let p = QuadParams::default();
        let (e, t) = compute_cascade(
            &QuadState::default(),
            &RefPoint::default(),
            &GainVector::midpoint(),
            &p,
        );
        assert_eq!(e.to_array(), [0.0; 6]);
        assert!((t.t1 - 12.25875).abs() < 1e-12);
        assert!((t.t2 - 12.25875).abs() < 1e-12);
    }

    #[test]
    fn proportional_chain() {
        let p = QuadParams::default();
        let g = GainVector {
            kp_x: 1.0,
            kp_vx: -0.3,
            ..GainVector::midpoint()
        };
        let (e, _) = compute_cascade(&QuadState::default(), &RefPoint::new(1.0, 0.0), &g, &p);
        assert_eq!(e.e_x, 1.0);
        assert_eq!(e.e_vx, 1.0);
        assert!((e.e_theta + 0.3).abs() < 1e-15);
    }

    // Expected values from an independent scalar evaluation of the loop chain.
    #[test]
    fn full_cascade_at_midpoints() {
        let p = QuadParams::default();
        let (e, t) = compute_cascade(
            &QuadState::default(),
            &RefPoint::new(1.0, 1.0),
            &GainVector::midpoint(),
            &p,
        );
        let expected = [1.0, 1.25, -0.375, -2.8125, 1.0, 1.75];
        for (a, b) in e.to_array().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{e:?}");
        }
        // Unsaturated t1 would be 39.29 N, above t_max.
        assert!((t.t1 - p.t_max).abs() < 1e-12);
        assert!((t.t2 - 2.7275).abs() < 1e-12);
    }

    #[test]
    fn full_cascade_with_unit_position_gain() {
        let p = QuadParams::default();
        let g = GainVector {
            kp_x: 1.0,
            ..GainVector::midpoint()
        };
        let (e, t) = compute_cascade(&QuadState::default(), &RefPoint::new(1.0, 1.0), &g, &p);
        let expected = [1.0, 1.0, -0.3, -2.25, 1.0, 1.75];
        for (a, b) in e.to_array().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((t.t1 - 35.63375).abs() < 1e-12);
        assert!((t.t2 - 6.38375).abs() < 1e-12);
    }

    #[test]
    fn positive_x_error_pitches_toward_target() {
        let p = QuadParams::default();
        let s = QuadState::default();
        let (e, t) = compute_cascade(&s, &RefPoint::new(1.0, 0.0), &GainVector::midpoint(), &p);
        let theta_ref = GainVector::midpoint().kp_vx * e.e_vx;
        assert!(theta_ref < 0.0);
        let d = derivatives(&s, &t, &p);
        assert!(d.omega < 0.0);
        // Once tilted negative, collective thrust accelerates toward +x.
        let tilted = QuadState { theta: -0.1, ..s };
        let d = derivatives(&tilted, &RotorThrusts::new(12.0, 12.0), &p);
        assert!(d.vx > 0.0);
    }

    #[test]
    fn errors_scale_with_position_offset() {
        let p = QuadParams::default();
        let g = GainVector::midpoint();
        let (a, _) = compute_cascade(&QuadState::default(), &RefPoint::new(0.7, -0.4), &g, &p);
        let (b, _) = compute_cascade(&QuadState::default(), &RefPoint::new(1.4, -0.8), &g, &p);
        for (x, y) in a.to_array().iter().zip(b.to_array()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    fn gains_strategy() -> impl Strategy<Value = GainVector> {
        let r = |i: usize| GAIN_BOUNDS[i].0..=GAIN_BOUNDS[i].1;
        (r(0), r(1), r(2), r(3), r(4), r(5))
            .prop_map(|(a, b, c, d, e, f)| GainVector::from_array([a, b, c, d, e, f]))
    }

    proptest! {
        #[test]
        fn thrusts_always_saturated(
            g in gains_strategy(),
            s in prop::array::uniform6(-1e6f64..1e6),
            r in prop::array::uniform2(-1e6f64..1e6),
        ) {
            let p = QuadParams::default();
            let (_, t) = compute_cascade(&QuadState::from_array(s), &RefPoint::new(r[0], r[1]), &g, &p);
            prop_assert!((0.0..=p.t_max).contains(&t.t1));
            prop_assert!((0.0..=p.t_max).contains(&t.t2));
        }

        #[test]
        fn errors_are_affine_in_state_and_reference(
            g in gains_strategy(),
            s1 in prop::array::uniform6(-10f64..10.0),
            s2 in prop::array::uniform6(-10f64..10.0),
            r1 in prop::array::uniform2(-10f64..10.0),
            r2 in prop::array::uniform2(-10f64..10.0),
        ) {
            let p = QuadParams::default();
            let e = |s: [f64; 6], r: [f64; 2]| {
                compute_cascade(&QuadState::from_array(s), &RefPoint::new(r[0], r[1]), &g, &p).0.to_array()
            };
            let mid_s: [f64; 6] = std::array::from_fn(|i| 0.5 * (s1[i] + s2[i]));
            let mid_r = [0.5 * (r1[0] + r2[0]), 0.5 * (r1[1] + r2[1])];
            let (a, b, m) = (e(s1, r1), e(s2, r2), e(mid_s, mid_r));
            for i in 0..6 {
                prop_assert!((0.5 * (a[i] + b[i]) - m[i]).abs() < 1e-9 * (1.0 + a[i].abs() + b[i].abs()));
            }
        }
    }
}
