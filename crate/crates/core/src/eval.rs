//! Tracking metrics, closed-loop episode logs, and the baseline-versus-policy
//! comparison report.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{ErrorVector, GainVector, RefPoint};
use crate::dynamics::{QuadState, RotorThrusts};
use crate::env::{
    normalize_gains, ActionVector, EnvConfig, Environment, EpisodeOutcome, ACTION_DIM,
};
use crate::error::{Error, Result};
use crate::nn::PolicyParams;
use crate::trajectory::Trajectory;

/// Integral squared error, left Riemann sum of `e_x^2 + e_y^2`.
pub fn ise(errors: &[(f64, f64)], dt: f64) -> f64 {
    errors.iter().map(|(ex, ey)| (ex * ex + ey * ey) * dt).sum()
}

/// Integral time-weighted squared error with sample `i` taken at `t = i * dt`.
pub fn itse(errors: &[(f64, f64)], dt: f64) -> f64 {
    errors
        .iter()
        .enumerate()
        .map(|(i, (ex, ey))| i as f64 * dt * (ex * ex + ey * ey) * dt)
        .sum()
}

/// ITSE with explicit sample times.
pub fn itse_timed(times: &[f64], errors: &[(f64, f64)], dt: f64) -> f64 {
    times
        .iter()
        .zip(errors)
        .map(|(t, (ex, ey))| t * (ex * ex + ey * ey) * dt)
        .sum()
}

/// Where the gains come from during an episode.
#[derive(Clone, Copy, Debug)]
pub enum GainSource<'a> {
    Static(GainVector),
    /// Deterministic policy: the actor mean, clamped to the action box.
    Policy(&'a PolicyParams),
}

impl GainSource<'_> {
    fn action(&self, obs: &ErrorVector) -> Result<ActionVector> {
        match self {
            GainSource::Static(g) => Ok(normalize_gains(g)),
            GainSource::Policy(p) => {
                let mean = p.mean_action(&obs.to_array())?;
                let a: [f64; ACTION_DIM] =
                    mean.as_slice()
                        .try_into()
                        .map_err(|_| Error::DimensionMismatch {
                            expected: ACTION_DIM,
                            actual: mean.len(),
                        })?;
                Ok(ActionVector(a).clamped())
            }
        }
    }
}

/// State after one control step, together with what produced it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub t: f64,
    pub state: QuadState,
    pub reference: RefPoint,
    pub gains: GainVector,
    pub thrusts: RotorThrusts,
    /// Observation returned after the step.
    pub errors: ErrorVector,
    pub reward: f64,
}

impl EpisodeRow {
    pub fn position_error(&self) -> (f64, f64) {
        (
            self.reference.x_ref - self.state.px,
            self.reference.y_ref - self.state.py,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub trajectory: String,
    pub dt: f64,
    pub rows: Vec<EpisodeRow>,
    pub outcome: EpisodeOutcome,
    /// ISE accumulated by the environment while stepping.
    pub accumulated_ise: f64,
}

pub const EPISODE_CSV_HEADER: [&str; 18] = [
    "t", "px", "py", "theta", "vx", "vy", "omega", "x_ref", "y_ref", "kp_x", "kp_vx", "kp_theta",
    "kp_omega", "kp_y", "kp_vy", "t1", "t2", "reward",
];

impl EpisodeLog {
    pub fn position_errors(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(EpisodeRow::position_error).collect()
    }

    pub fn duration(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.t)
    }

    pub fn ise(&self) -> f64 {
        ise(&self.position_errors(), self.dt)
    }

    /// ITSE weighted by each row's own time stamp.
    pub fn itse(&self) -> f64 {
        let times: Vec<f64> = self.rows.iter().map(|r| r.t).collect();
        itse_timed(&times, &self.position_errors(), self.dt)
    }

    pub fn total_reward(&self) -> f64 {
        self.rows.iter().map(|r| r.reward).sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(EPISODE_CSV_HEADER)?;
        for r in &self.rows {
            let s = r.state.to_array();
            let g = r.gains.to_array();
            let fields = std::iter::once(r.t)
                .chain(s)
                .chain([r.reference.x_ref, r.reference.y_ref])
                .chain(g)
                .chain([r.thrusts.t1, r.thrusts.t2, r.reward]);
            w.write_record(fields.map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Rows of an episode CSV read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTable {
    pub rows: Vec<[f64; 18]>,
}

impl EpisodeTable {
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().ne(EPISODE_CSV_HEADER) {
            return Err(Error::invalid("episode csv", "unexpected header"));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let mut row = [0.0; 18];
            for (slot, field) in row.iter_mut().zip(rec.iter()) {
                *slot = field
                    .parse()
                    .map_err(|_| Error::invalid("episode csv", format!("bad number `{field}`")))?;
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }

    fn position_errors(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .map(|r| (r[7] - r[1], r[8] - r[2]))
            .collect()
    }

    pub fn ise(&self, dt: f64) -> f64 {
        ise(&self.position_errors(), dt)
    }

    pub fn itse(&self, dt: f64) -> f64 {
        let times: Vec<f64> = self.rows.iter().map(|r| r[0]).collect();
        itse_timed(&times, &self.position_errors(), dt)
    }

    pub fn gains(&self) -> Vec<GainVector> {
        self.rows
            .iter()
            .map(|r| GainVector::from_array(r[9..15].try_into().unwrap()))
            .collect()
    }
}

/// Flies `traj` from rest at the origin until the episode terminates.
pub fn run_episode(
    source: GainSource<'_>,
    traj: Arc<Trajectory>,
    config: &EnvConfig,
) -> Result<EpisodeLog> {
    let mut env = Environment::new(*config)?;
    let name = traj.name().to_string();
    let mut obs = env.reset(0, traj)?;
    let mut rows = Vec::new();
    loop {
        let action = source.action(&obs)?;
        let tr = env.step(&action).map_err(|e| Error::EpisodeAborted {
            trajectory: name.clone(),
            t: env.state().map_or(0.0, |s| s.t),
            reason: e.to_string(),
        })?;
        let state = env.state().expect("stepped environment has state");
        rows.push(EpisodeRow {
            t: state.t,
            state: state.quad,
            reference: state.reference(),
            gains: tr.gains,
            thrusts: tr.thrusts,
            errors: tr.observation,
            reward: tr.reward,
        });
        obs = tr.observation;
        if tr.outcome.is_terminal() {
            return Ok(EpisodeLog {
                trajectory: name,
                dt: config.dt,
                rows,
                outcome: tr.outcome,
                accumulated_ise: state.accumulated_ise,
            });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerResult {
    pub outcome: EpisodeOutcome,
    pub duration: f64,
    /// Present only when the trajectory was completed.
    pub ise: Option<f64>,
    pub itse: Option<f64>,
}

impl ControllerResult {
    fn from_log(log: &EpisodeLog) -> Self {
        let done = log.outcome == EpisodeOutcome::Success;
        Self {
            outcome: log.outcome,
            duration: log.duration(),
            ise: done.then(|| log.ise()),
            itse: done.then(|| log.itse()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryComparison {
    pub trajectory: String,
    pub baseline: ControllerResult,
    pub rl: ControllerResult,
    /// `100 * (rl - baseline) / baseline`; negative when RL tracks better.
    pub ise_change_pct: Option<f64>,
    pub itse_change_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<TrajectoryComparison>,
}

pub fn percentage_change(baseline: f64, candidate: f64) -> Option<f64> {
    if candidate == baseline {
        Some(0.0)
    } else if baseline > 0.0 {
        Some(100.0 * (candidate - baseline) / baseline)
    } else {
        None
    }
}

fn change(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    percentage_change(a?, b?)
}

/// Episode logs of one comparison, in trajectory order.
#[derive(Clone, Debug)]
pub struct ComparisonLogs {
    pub baseline: Vec<EpisodeLog>,
    pub rl: Vec<EpisodeLog>,
}

/// Flies every trajectory with both gain sources and tabulates ISE/ITSE.
pub fn compare(
    baseline: GainSource<'_>,
    rl: GainSource<'_>,
    trajectories: &[Arc<Trajectory>],
    config: &EnvConfig,
) -> Result<(EvalReport, ComparisonLogs)> {
    let runs = trajectories
        .par_iter()
        .map(|t| {
            Ok((
                run_episode(baseline, t.clone(), config)?,
                run_episode(rl, t.clone(), config)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = runs
        .iter()
        .map(|(b, r)| {
            let (b_res, r_res) = (ControllerResult::from_log(b), ControllerResult::from_log(r));
            TrajectoryComparison {
                trajectory: b.trajectory.clone(),
                ise_change_pct: change(b_res.ise, r_res.ise),
                itse_change_pct: change(b_res.itse, r_res.itse),
                baseline: b_res,
                rl: r_res,
            }
        })
        .collect();
    let (baseline, rl) = runs.into_iter().unzip();
    Ok((EvalReport { rows }, ComparisonLogs { baseline, rl }))
}

impl EvalReport {
    /// Fixed-width table: ISE and ITSE for both controllers plus the
    /// percentage differences. Missing metrics print as `-`.
    pub fn to_table(&self) -> String {
        let num =
            |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |v| format!("{v:.prec$}"));
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:+.1}%"));
        let name_w = self
            .rows
            .iter()
            .map(|r| r.trajectory.len())
            .max()
            .unwrap_or(0)
            .max(10);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:name_w$} | {:^21} | {:^21} | {:^19}",
            "", "ISE", "ITSE", "Percentage Difference"
        );
        let _ = writeln!(
            out,
            "{:name_w$} | {:>10} {:>10} | {:>10} {:>10} | {:>9} {:>9}",
            "Trajectory", "Baseline", "RL", "Baseline", "RL", "ISE", "ITSE"
        );
        let _ = writeln!(out, "{}", "-".repeat(name_w + 72));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:name_w$} | {:>10} {:>10} | {:>10} {:>10} | {:>9} {:>9}",
                r.trajectory,
                num(r.baseline.ise, 3),
                num(r.rl.ise, 3),
                num(r.baseline.itse, 3),
                num(r.rl.itse, 3),
                pct(r.ise_change_pct),
                pct(r.itse_change_pct),
            );
        }
        out
    }
}
