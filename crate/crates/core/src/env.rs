//! Gain-scheduling MDP: the agent picks the six controller gains every
//! simulation step and is rewarded for closing the tracking error.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::controller::{compute_cascade, ErrorVector, GainVector, RefPoint, GAIN_BOUNDS};
use crate::dynamics::{step_rk4, QuadParams, QuadState, RotorThrusts};
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

pub const ACTION_DIM: usize = 6;
pub const OBS_DIM: usize = 6;

/// Smallest ISE used in the success reward, so a perfect hover stays finite.
pub const MIN_SUCCESS_ISE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Simulation and control period [s].
    pub dt: f64,
    pub params: QuadParams,
    /// Position tolerance around the terminal point for success [m].
    pub success_pos_tol: f64,
    /// Speed tolerance for success [m/s].
    pub success_vel_tol: f64,
    /// Distance from the current reference that ends the episode [m].
    pub deviation_limit: f64,
    /// Episodes time out past `timeout_factor * expected_duration`.
    pub timeout_factor: f64,
    /// Floor on the current deviation in the shaping reward ratio [m].
    pub div_eps: f64,
    /// When set, success is only possible once the nominal duration has
    /// elapsed. Otherwise it is possible as soon as the reference itself has
    /// settled at the terminal point, which for a step is immediately.
    pub hold_until_nominal: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            params: QuadParams::default(),
            success_pos_tol: 0.1,
            success_vel_tol: 0.1,
            deviation_limit: 10.0,
            timeout_factor: 1.2,
            div_eps: 1e-6,
            hold_until_nominal: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let positive = [
            ("dt", self.dt),
            ("success_pos_tol", self.success_pos_tol),
            ("success_vel_tol", self.success_vel_tol),
            ("deviation_limit", self.deviation_limit),
            ("timeout_factor", self.timeout_factor),
            ("div_eps", self.div_eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(
                    name,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Normalized policy output, one component per gain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionVector(pub [f64; ACTION_DIM]);

impl ActionVector {
    /// Clamps each component to `[-1, 1]`. NaN maps to the range centre.
    pub fn clamped(self) -> Self {
        Self(
            self.0
                .map(|a| if a.is_nan() { 0.0 } else { a.clamp(-1.0, 1.0) }),
        )
    }
}

pub fn rescale_action(action: &ActionVector) -> GainVector {
    let a = action.clamped().0;
    GainVector::from_array(std::array::from_fn(|i| {
        let (lo, hi) = GAIN_BOUNDS[i];
        let w = 0.5 * (a[i] + 1.0);
        (1.0 - w) * lo + w * hi
    }))
}

/// Inverse of [`rescale_action`].
pub fn normalize_gains(gains: &GainVector) -> ActionVector {
    let g = gains.to_array();
    ActionVector(std::array::from_fn(|i| {
        let (lo, hi) = GAIN_BOUNDS[i];
        2.0 * (g[i] - lo) / (hi - lo) - 1.0
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EpisodeOutcome {
    TimeOut,
    Deviation,
    Success,
    Running,
}

impl EpisodeOutcome {
    pub fn is_terminal(self) -> bool {
        self != EpisodeOutcome::Running
    }
}

/// Mutable per-episode bookkeeping.
#[derive(Clone, Debug)]
pub struct EnvState {
    pub quad: QuadState,
    pub traj: Arc<Trajectory>,
    pub t: f64,
    pub step_index: usize,
    /// Running integral of the squared position error [m^2 s].
    pub accumulated_ise: f64,
    pub prev_deviation: f64,
    pub gains: GainVector,
    pub seed: u64,
}

impl EnvState {
    pub fn reference(&self) -> RefPoint {
        self.traj.reference_at(self.t)
    }

    pub fn deviation(&self) -> f64 {
        self.reference().distance_to(self.quad.px, self.quad.py)
    }
}

// Absorbs round-off in t = k * dt when comparing against time thresholds.
const TIME_EPS: f64 = 1e-9;

/// Classifies the current state. Deviation takes priority over time-out,
/// which takes priority over success.
pub fn check_termination(state: &EnvState, config: &EnvConfig) -> EpisodeOutcome {
    if state.deviation() > config.deviation_limit {
        return EpisodeOutcome::Deviation;
    }
    if state.t > config.timeout_factor * state.traj.expected_duration() + TIME_EPS {
        return EpisodeOutcome::TimeOut;
    }
    let terminal = state.traj.terminal();
    let at_target = terminal.distance_to(state.quad.px, state.quad.py) < config.success_pos_tol;
    let settled = state.quad.vx.hypot(state.quad.vy) < config.success_vel_tol;
    let earliest = if config.hold_until_nominal {
        state.traj.nominal_duration()
    } else {
        state.traj.settle_time()
    };
    if at_target && settled && state.t >= earliest - TIME_EPS {
        return EpisodeOutcome::Success;
    }
    EpisodeOutcome::Running
}

pub fn compute_reward(
    outcome: EpisodeOutcome,
    accumulated_ise: f64,
    prev_deviation: f64,
    curr_deviation: f64,
    div_eps: f64,
) -> f64 {
    match outcome {
        EpisodeOutcome::TimeOut => -1.0,
        EpisodeOutcome::Deviation => -5.0,
        EpisodeOutcome::Success => 10.0 / accumulated_ise.max(MIN_SUCCESS_ISE),
        EpisodeOutcome::Running => {
            0.05 * (prev_deviation / curr_deviation.max(div_eps) - 1.0).min(2.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub observation: ErrorVector,
    pub reward: f64,
    pub outcome: EpisodeOutcome,
    /// Gains applied during the step.
    pub gains: GainVector,
    /// Saturated thrusts applied during the step.
    pub thrusts: RotorThrusts,
}

#[derive(Clone, Debug)]
pub struct Environment {
    config: EnvConfig,
    state: Option<EnvState>,
    outcome: EpisodeOutcome,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: None,
            outcome: EpisodeOutcome::Running,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    pub fn outcome(&self) -> EpisodeOutcome {
        self.outcome
    }

    /// Starts an episode at rest at the origin with midpoint gains.
    pub fn reset(&mut self, seed: u64, traj: Arc<Trajectory>) -> Result<ErrorVector> {
        self.reset_from(seed, traj, QuadState::default())
    }

    /// Starts an episode from an arbitrary initial state.
    pub fn reset_from(
        &mut self,
        seed: u64,
        traj: Arc<Trajectory>,
        quad: QuadState,
    ) -> Result<ErrorVector> {
        if (traj.dt() - self.config.dt).abs() > 1e-12 * self.config.dt {
            return Err(Error::InvalidTrajectory(format!(
                "trajectory dt {} differs from simulation dt {}",
                traj.dt(),
                self.config.dt
            )));
        }
        if !quad.is_finite() {
            return Err(Error::NonFiniteState);
        }
        let mut state = EnvState {
            quad,
            traj,
            t: 0.0,
            step_index: 0,
            accumulated_ise: 0.0,
            prev_deviation: 0.0,
            gains: GainVector::midpoint(),
            seed,
        };
        state.prev_deviation = state.deviation();
        let obs = self.observe(&state);
        self.state = Some(state);
        self.outcome = EpisodeOutcome::Running;
        Ok(obs)
    }

    fn observe(&self, state: &EnvState) -> ErrorVector {
        compute_cascade(
            &state.quad,
            &state.reference(),
            &state.gains,
            &self.config.params,
        )
        .0
    }

    pub fn step(&mut self, action: &ActionVector) -> Result<Transition> {
        if self.outcome.is_terminal() {
            return Err(Error::EpisodeTerminated(self.outcome));
        }
        let config = self.config;
        let state = self.state.as_mut().ok_or(Error::NotReset)?;

        state.gains = rescale_action(action);
        let (_, thrusts) = compute_cascade(
            &state.quad,
            &state.reference(),
            &state.gains,
            &config.params,
        );
        state.quad = step_rk4(&state.quad, &thrusts, &config.params, config.dt)?;
        state.step_index += 1;
        state.t = state.step_index as f64 * config.dt;

        let r = state.reference();
        let (ex, ey) = (r.x_ref - state.quad.px, r.y_ref - state.quad.py);
        state.accumulated_ise += (ex * ex + ey * ey) * config.dt;

        let outcome = check_termination(state, &config);
        let curr = state.deviation();
        let reward = compute_reward(
            outcome,
            state.accumulated_ise,
            state.prev_deviation,
            curr,
            config.div_eps,
        );
        state.prev_deviation = curr;
        let gains = state.gains;

        let state = self.state.as_ref().unwrap();
        let observation = self.observe(state);
        self.outcome = outcome;
        Ok(Transition {
            observation,
            reward,
            outcome,
            gains,
            thrusts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::step_reference;
    use proptest::prelude::*;

    fn unit_step() -> Arc<Trajectory> {
        Arc::new(step_reference(1.0, 5.0, 0.02).unwrap())
    }

    fn state_at(quad: QuadState, traj: Arc<Trajectory>, t: f64) -> EnvState {
        EnvState {
            quad,
            traj,
            t,
            step_index: 0,
            accumulated_ise: 0.0,
            prev_deviation: 0.0,
            gains: GainVector::midpoint(),
            seed: 0,
        }
    }

    #[test]
    fn rescale_endpoints_and_midpoint() {
        assert_eq!(
            rescale_action(&ActionVector([0.0; 6])),
            GainVector::midpoint()
        );
        assert_eq!(
            rescale_action(&ActionVector([-1.0; 6])).to_array(),
            [0.5, -0.5, 5.0, 10.0, 0.5, 5.0]
        );
        assert_eq!(
            rescale_action(&ActionVector([1.0; 6])).to_array(),
            [2.0, -0.1, 10.0, 16.0, 3.0, 15.0]
        );
        assert_eq!(
            rescale_action(&ActionVector([7.0; 6])),
            rescale_action(&ActionVector([1.0; 6]))
        );
    }

    #[test]
    fn termination_cases() {
        let origin = Arc::new(step_reference(0.0, 5.0, 0.02).unwrap());
        let cfg = EnvConfig::default();
        let far = QuadState {
            px: 11.0,
            ..Default::default()
        };
        assert_eq!(
            check_termination(&state_at(far, origin.clone(), 0.0), &cfg),
            EpisodeOutcome::Deviation
        );

        let near = QuadState {
            px: 0.5,
            ..Default::default()
        };
        assert_eq!(
            check_termination(&state_at(near, origin.clone(), 6.05), &cfg),
            EpisodeOutcome::TimeOut
        );
        assert_eq!(
            check_termination(&state_at(near, origin.clone(), 6.0), &cfg),
            EpisodeOutcome::Running
        );

        let home = QuadState::default();
        assert_eq!(
            check_termination(&state_at(home, origin.clone(), 5.0), &cfg),
            EpisodeOutcome::Success
        );
        assert_eq!(
            check_termination(&state_at(home, origin.clone(), 0.02), &cfg),
            EpisodeOutcome::Success
        );
        let moving = QuadState {
            vx: 0.2,
            ..Default::default()
        };
        assert_eq!(
            check_termination(&state_at(moving, origin.clone(), 5.0), &cfg),
            EpisodeOutcome::Running
        );

        let hold = EnvConfig {
            hold_until_nominal: true,
            ..cfg
        };
        assert_eq!(
            check_termination(&state_at(home, origin.clone(), 5.0), &hold),
            EpisodeOutcome::Success
        );
        assert_eq!(
            check_termination(&state_at(home, origin, 4.98), &hold),
            EpisodeOutcome::Running
        );
    }

    #[test]
    fn deviation_takes_priority_over_timeout() {
        let cfg = EnvConfig::default();
        let far = QuadState {
            py: -20.0,
            ..Default::default()
        };
        assert_eq!(
            check_termination(&state_at(far, unit_step(), 100.0), &cfg),
            EpisodeOutcome::Deviation
        );
    }

    #[test]
    fn reward_branches() {
        let eps = 1e-6;
        assert_eq!(
            compute_reward(EpisodeOutcome::Success, 2.0, 0.0, 0.0, eps),
            5.0
        );
        assert_eq!(
            compute_reward(EpisodeOutcome::Running, 0.0, 0.7, 0.7, eps),
            0.0
        );
        assert!((compute_reward(EpisodeOutcome::Running, 0.0, 4.0, 1.0, eps) - 0.1).abs() < 1e-15);
        assert_eq!(
            compute_reward(EpisodeOutcome::Deviation, 1.0, 1.0, 1.0, eps),
            -5.0
        );
        assert_eq!(
            compute_reward(EpisodeOutcome::TimeOut, 1.0, 1.0, 1.0, eps),
            -1.0
        );
        assert!((compute_reward(EpisodeOutcome::Running, 0.0, 0.0, 3.0, eps) + 0.05).abs() < 1e-15);
        assert!((compute_reward(EpisodeOutcome::Running, 0.0, 1.0, 0.0, eps) - 0.1).abs() < 1e-15);
        assert!(compute_reward(EpisodeOutcome::Success, 0.0, 0.0, 0.0, eps).is_finite());
    }

    #[test]
    fn reset_observations() {
        let mut env = Environment::new(EnvConfig::default()).unwrap();
        let obs = env.reset(3, unit_step()).unwrap();
        assert_eq!(obs.e_x, 1.0);
        assert_eq!(obs.e_y, 1.0);
        let again = env.reset(3, unit_step()).unwrap();
        assert_eq!(obs, again);
        let zero = env
            .reset(3, Arc::new(step_reference(0.0, 5.0, 0.02).unwrap()))
            .unwrap();
        assert_eq!(zero.to_array(), [0.0; 6]);
    }

    #[test]
    fn first_step_reward_in_shaping_range() {
        let mut env = Environment::new(EnvConfig::default()).unwrap();
        env.reset(0, unit_step()).unwrap();
        let tr = env.step(&ActionVector::default()).unwrap();
        assert_eq!(tr.outcome, EpisodeOutcome::Running);
        assert!((-0.05..=0.1).contains(&tr.reward), "{}", tr.reward);
    }

    #[test]
    fn success_waits_for_moving_reference() {
        use crate::trajectory::waypoint_trajectory;
        let wp = [RefPoint::new(0.0, 0.0), RefPoint::new(2.0, 0.0)];
        let traj = Arc::new(waypoint_trajectory(&wp, 1.0, 0.02, "w").unwrap());
        let cfg = EnvConfig::default();
        let there = QuadState {
            px: 2.0,
            ..Default::default()
        };
        assert_eq!(
            check_termination(&state_at(there, traj.clone(), 1.5), &cfg),
            EpisodeOutcome::Running
        );
        assert_eq!(
            check_termination(&state_at(there, traj, 2.0), &cfg),
            EpisodeOutcome::Success
        );
    }

    #[test]
    fn zero_step_succeeds_immediately() {
        let mut env = Environment::new(EnvConfig::default()).unwrap();
        env.reset(0, Arc::new(step_reference(0.0, 5.0, 0.02).unwrap()))
            .unwrap();
        let tr = env.step(&ActionVector::default()).unwrap();
        assert_eq!(tr.outcome, EpisodeOutcome::Success);
        assert!(env.state().unwrap().accumulated_ise < 1e-6);
    }

    #[test]
    fn zero_step_succeeds_at_nominal_duration_when_holding() {
        let cfg = EnvConfig {
            hold_until_nominal: true,
            ..Default::default()
        };
        let mut env = Environment::new(cfg).unwrap();
        env.reset(0, Arc::new(step_reference(0.0, 5.0, 0.02).unwrap()))
            .unwrap();
        let mut n = 0;
        let tr = loop {
            let tr = env.step(&ActionVector::default()).unwrap();
            n += 1;
            if tr.outcome.is_terminal() {
                break tr;
            }
        };
        assert_eq!(tr.outcome, EpisodeOutcome::Success);
        assert_eq!(n, 250);
        let ise = env.state().unwrap().accumulated_ise;
        assert!(ise < 1e-6);
        assert!(matches!(
            env.step(&ActionVector::default()),
            Err(Error::EpisodeTerminated(EpisodeOutcome::Success))
        ));
    }

    #[test]
    fn forced_deviation() {
        let mut env = Environment::new(EnvConfig::default()).unwrap();
        let start = QuadState {
            px: 11.5,
            py: 1.0,
            ..Default::default()
        };
        env.reset_from(0, unit_step(), start).unwrap();
        let tr = env.step(&ActionVector::default()).unwrap();
        assert_eq!(tr.outcome, EpisodeOutcome::Deviation);
        assert_eq!(tr.reward, -5.0);
    }

    #[test]
    fn step_before_reset_and_dt_mismatch() {
        let mut env = Environment::new(EnvConfig::default()).unwrap();
        assert!(matches!(
            env.step(&ActionVector::default()),
            Err(Error::NotReset)
        ));
        let traj = Arc::new(step_reference(1.0, 5.0, 0.01).unwrap());
        assert!(env.reset(0, traj).is_err());
    }

    #[test]
    fn episodes_are_deterministic() {
        let run = || {
            let mut env = Environment::new(EnvConfig::default()).unwrap();
            let mut bits: Vec<u64> = env
                .reset(9, unit_step())
                .unwrap()
                .to_array()
                .map(f64::to_bits)
                .to_vec();
            for k in 0..200 {
                let a = ActionVector(std::array::from_fn(|i| {
                    ((k * 7 + i * 3) % 11) as f64 / 5.0 - 1.0
                }));
                let tr = env.step(&a).unwrap();
                bits.extend(tr.observation.to_array().map(f64::to_bits));
                bits.push(tr.reward.to_bits());
                if tr.outcome.is_terminal() {
                    break;
                }
            }
            bits
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn shaping_reward_bounded(prev in 0.0f64..1e3, curr in 0.0f64..1e3) {
            let r = compute_reward(EpisodeOutcome::Running, 0.0, prev, curr, 1e-6);
            prop_assert!((-0.05..=0.1).contains(&r));
        }

        #[test]
        fn rescale_round_trip_monotone(a in prop::array::uniform6(-1.0f64..=1.0), b in prop::array::uniform6(-1.0f64..=1.0)) {
            let ga = rescale_action(&ActionVector(a));
            ga.validate().unwrap();
            let back = normalize_gains(&ga).0;
            for i in 0..6 {
                prop_assert!((back[i] - a[i]).abs() < 1e-12);
            }
            let gb = rescale_action(&ActionVector(b)).to_array();
            let ga = ga.to_array();
            for i in 0..6 {
                if a[i] < b[i] {
                    prop_assert!(ga[i] <= gb[i]);
                }
            }
        }
    }
}
