//! Reference trajectories sampled on a fixed time grid.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::RefPoint;
use crate::error::{Error, Result};

/// Default settle time granted to a step reference [s].
pub const DEFAULT_SETTLE_TIME: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    name: String,
    dt: f64,
    samples: Vec<RefPoint>,
    nominal_duration: f64,
    terminal: RefPoint,
    settle_time: f64,
}

impl Trajectory {
    fn from_samples(name: impl Into<String>, dt: f64, samples: Vec<RefPoint>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidTrajectory("no samples".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidTrajectory(format!(
                "dt must be > 0, got {dt}"
            )));
        }
        if let Some(p) = samples
            .iter()
            .find(|p| !(p.x_ref.is_finite() && p.y_ref.is_finite()))
        {
            return Err(Error::InvalidTrajectory(format!("non-finite sample {p:?}")));
        }
        let terminal = *samples.last().unwrap();
        let held = samples.iter().rev().take_while(|p| **p == terminal).count();
        Ok(Self {
            name: name.into(),
            dt,
            nominal_duration: (samples.len() - 1) as f64 * dt,
            settle_time: (samples.len() - held) as f64 * dt,
            samples,
            terminal,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[RefPoint] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn nominal_duration(&self) -> f64 {
        self.nominal_duration
    }

    pub fn terminal(&self) -> RefPoint {
        self.terminal
    }

    /// Earliest time from which the reference stays at the terminal point.
    pub fn settle_time(&self) -> f64 {
        self.settle_time
    }

    /// Time the vehicle is expected to need to reach the terminal point. For
    /// step references this is the configured settle time.
    pub fn expected_duration(&self) -> f64 {
        self.nominal_duration
    }

    /// Reference at time `t`, held at the terminal point past the end.
    pub fn reference_at(&self, t: f64) -> RefPoint {
        if t <= 0.0 {
            return self.samples[0];
        }
        let idx = (t / self.dt).round() as usize;
        self.samples.get(idx).copied().unwrap_or(self.terminal)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "x_ref", "y_ref"])?;
        for (k, p) in self.samples.iter().enumerate() {
            let t = k as f64 * self.dt;
            w.write_record([t.to_string(), p.x_ref.to_string(), p.y_ref.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Parses a `(t, x_ref, y_ref)` table. The grid spacing is taken from the
    /// first two rows and must be uniform.
    pub fn read_csv<R: std::io::Read>(name: impl Into<String>, reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            t: f64,
            x_ref: f64,
            y_ref: f64,
        }
        let mut rdr = csv::Reader::from_reader(reader);
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<Row>, _>>()?;
        if rows.len() < 2 {
            return Err(Error::InvalidTrajectory(format!(
                "need at least two samples to infer the time step, got {}",
                rows.len()
            )));
        }
        let dt = rows[1].t - rows[0].t;
        if rows[0].t.abs() > 1e-9 {
            return Err(Error::InvalidTrajectory(
                "first sample must be at t = 0".into(),
            ));
        }
        for (k, r) in rows.iter().enumerate() {
            if (r.t - k as f64 * dt).abs() > 1e-6 * dt.max(1.0) {
                return Err(Error::InvalidTrajectory(format!(
                    "non-uniform time grid at row {}",
                    k + 1
                )));
            }
        }
        let samples = rows
            .iter()
            .map(|r| RefPoint::new(r.x_ref, r.y_ref))
            .collect();
        Self::from_samples(name, dt, samples)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "trajectory".into());
        Self::read_csv(name, std::fs::File::open(path)?)
    }
}

/// Number of grid intervals covering `duration`, tolerating round-off when
/// the duration is already a multiple of `dt`.
fn grid_intervals(duration: f64, dt: f64) -> usize {
    (duration / dt - 1e-9).ceil().max(0.0) as usize
}

/// Constant reference at `(amplitude, amplitude)` lasting `nominal_duration`.
pub fn step_reference(amplitude: f64, nominal_duration: f64, dt: f64) -> Result<Trajectory> {
    if !amplitude.is_finite() {
        return Err(Error::InvalidTrajectory(format!(
            "amplitude must be finite, got {amplitude}"
        )));
    }
    if !(nominal_duration.is_finite() && nominal_duration > 0.0) {
        return Err(Error::InvalidTrajectory(format!(
            "nominal duration must be > 0, got {nominal_duration}"
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidTrajectory(format!(
            "dt must be > 0, got {dt}"
        )));
    }
    let n = grid_intervals(nominal_duration, dt);
    let samples = vec![RefPoint::new(amplitude, amplitude); n + 1];
    Trajectory::from_samples(format!("step-{amplitude}"), dt, samples)
}

/// Piecewise minimum-jerk path through a list of waypoints. Each segment
/// starts and ends at rest and lasts `length / speed`.
#[derive(Clone, Debug)]
pub struct WaypointPath {
    waypoints: Vec<RefPoint>,
    /// Cumulative time at each waypoint; `times[0] == 0`.
    times: Vec<f64>,
}

impl WaypointPath {
    pub fn new(waypoints: &[RefPoint], speed: f64) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidTrajectory(format!(
                "need at least two waypoints, got {}",
                waypoints.len()
            )));
        }
        if !(speed.is_finite() && speed > 0.0) {
            return Err(Error::InvalidTrajectory(format!(
                "speed must be > 0, got {speed}"
            )));
        }
        let mut times = Vec::with_capacity(waypoints.len());
        times.push(0.0);
        for (i, pair) in waypoints.windows(2).enumerate() {
            let (a, b) = (pair[0], pair[1]);
            if !(b.x_ref.is_finite()
                && b.y_ref.is_finite()
                && a.x_ref.is_finite()
                && a.y_ref.is_finite())
            {
                return Err(Error::InvalidTrajectory(format!(
                    "non-finite waypoint near index {i}"
                )));
            }
            let len = a.distance_to(b.x_ref, b.y_ref);
            if len == 0.0 {
                return Err(Error::InvalidTrajectory(format!(
                    "duplicate consecutive waypoints at index {i} and {}",
                    i + 1
                )));
            }
            times.push(times[i] + len / speed);
        }
        Ok(Self {
            waypoints: waypoints.to_vec(),
            times,
        })
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn segment_boundaries(&self) -> &[f64] {
        &self.times
    }

    pub fn position(&self, t: f64) -> RefPoint {
        if t <= 0.0 {
            return self.waypoints[0];
        }
        if t >= self.duration() {
            return *self.waypoints.last().unwrap();
        }
        // First segment whose end lies beyond t.
        let seg = self.times.partition_point(|&end| end <= t) - 1;
        let (t0, t1) = (self.times[seg], self.times[seg + 1]);
        let (a, b) = (self.waypoints[seg], self.waypoints[seg + 1]);
        let tau = (t - t0) / (t1 - t0);
        let s = tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau));
        RefPoint::new(
            a.x_ref + s * (b.x_ref - a.x_ref),
            a.y_ref + s * (b.y_ref - a.y_ref),
        )
    }
}

pub fn waypoint_trajectory(
    waypoints: &[RefPoint],
    speed: f64,
    dt: f64,
    tag: impl Into<String>,
) -> Result<Trajectory> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidTrajectory(format!(
            "dt must be > 0, got {dt}"
        )));
    }
    let path = WaypointPath::new(waypoints, speed)?;
    let n = grid_intervals(path.duration(), dt);
    let mut samples = (0..=n)
        .map(|k| path.position((k as f64 * dt).min(path.duration())))
        .collect::<Vec<_>>();
    *samples.last_mut().unwrap() = *waypoints.last().unwrap();
    Trajectory::from_samples(tag, dt, samples)
}

/// Settings for the fixed-seed random waypoint evaluation suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub seeds: Vec<u64>,
    /// Random waypoints per trajectory, after the origin start point.
    pub waypoints: usize,
    /// Waypoints are drawn uniformly from `[0, extent]^2`.
    pub extent: f64,
    pub speed: f64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            waypoints: 5,
            extent: 10.0,
            speed: 1.0,
        }
    }
}

/// Random waypoint trajectory starting at the origin, where every episode
/// starts, followed by `spec.waypoints` uniform draws.
pub fn random_waypoint_trajectory(seed: u64, spec: &SuiteSpec, dt: f64) -> Result<Trajectory> {
    if !(spec.extent.is_finite() && spec.extent > 0.0) {
        return Err(Error::InvalidTrajectory(format!(
            "extent must be > 0, got {}",
            spec.extent
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![RefPoint::default()];
    points.extend((0..spec.waypoints).map(|_| {
        RefPoint::new(
            rng.random_range(0.0..=spec.extent),
            rng.random_range(0.0..=spec.extent),
        )
    }));
    waypoint_trajectory(&points, spec.speed, dt, format!("waypoints-seed-{seed}"))
}

pub fn evaluation_suite(spec: &SuiteSpec, dt: f64) -> Result<Vec<Trajectory>> {
    spec.seeds
        .iter()
        .map(|&seed| random_waypoint_trajectory(seed, spec, dt))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_reference_shapes() {
        let t = step_reference(1.0, 5.0, 0.02).unwrap();
        assert_eq!(t.len(), 251);
        assert!(t.samples().iter().all(|p| *p == RefPoint::new(1.0, 1.0)));
        assert!((t.expected_duration() - 5.0).abs() < 1e-12);

        assert_eq!(t.settle_time(), 0.0);

        let z = step_reference(0.0, 5.0, 0.02).unwrap();
        assert!(z.samples().iter().all(|p| *p == RefPoint::default()));

        let t = step_reference(2.0, 5.0, 0.01).unwrap();
        assert_eq!(t.len(), 501);
        assert_eq!(t.terminal(), RefPoint::new(2.0, 2.0));
    }

    #[test]
    fn step_reference_rejects_bad_input() {
        assert!(step_reference(f64::NAN, 5.0, 0.02).is_err());
        assert!(step_reference(1.0, 0.0, 0.02).is_err());
        assert!(step_reference(1.0, 5.0, -0.02).is_err());
    }

    #[test]
    fn straight_segment_midpoint() {
        let wp = [RefPoint::new(0.0, 0.0), RefPoint::new(10.0, 0.0)];
        let t = waypoint_trajectory(&wp, 1.0, 0.02, "line").unwrap();
        assert!((t.nominal_duration() - 10.0).abs() < 1e-9);
        let mid = t.reference_at(5.0);
        assert!((mid.x_ref - 5.0).abs() < 1e-12 && mid.y_ref == 0.0);
    }

    #[test]
    fn two_segment_duration() {
        let wp = [
            RefPoint::new(0.0, 0.0),
            RefPoint::new(3.0, 0.0),
            RefPoint::new(3.0, 4.0),
        ];
        let t = waypoint_trajectory(&wp, 1.0, 0.02, "l").unwrap();
        assert!((t.expected_duration() - 7.0).abs() < 1e-9);
        assert_eq!(t.len(), 351);
        assert!((t.settle_time() - 7.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_waypoints_rejected() {
        let wp = [RefPoint::new(0.0, 0.0), RefPoint::new(0.0, 0.0)];
        assert!(matches!(
            waypoint_trajectory(&wp, 1.0, 0.02, "d"),
            Err(Error::InvalidTrajectory(_))
        ));
        assert!(waypoint_trajectory(&wp[..1], 1.0, 0.02, "d").is_err());
        let wp = [RefPoint::new(0.0, 0.0), RefPoint::new(1.0, 0.0)];
        assert!(waypoint_trajectory(&wp, 0.0, 0.02, "d").is_err());
    }

    #[test]
    fn path_passes_through_waypoints_at_rest() {
        let wp = [
            RefPoint::new(0.0, 0.0),
            RefPoint::new(3.3, 1.0),
            RefPoint::new(-2.0, 4.5),
            RefPoint::new(7.0, 7.0),
        ];
        let speed = 1.3;
        let path = WaypointPath::new(&wp, speed).unwrap();
        let h = 1e-5;
        for (p, &tb) in wp.iter().zip(path.segment_boundaries()) {
            let q = path.position(tb);
            assert!((q.x_ref - p.x_ref).abs() < 1e-9 && (q.y_ref - p.y_ref).abs() < 1e-9);
            let (a, b) = (path.position(tb - h), path.position(tb + h));
            let v = a.distance_to(b.x_ref, b.y_ref) / (2.0 * h);
            assert!(v < 1e-6 * speed, "velocity {v} at t={tb}");
        }
    }

    #[test]
    fn sampled_grid_hits_aligned_waypoints() {
        let wp = [
            RefPoint::new(0.0, 0.0),
            RefPoint::new(2.0, 0.0),
            RefPoint::new(2.0, 3.0),
        ];
        let t = waypoint_trajectory(&wp, 1.0, 0.01, "grid").unwrap();
        let at2 = t.samples()[200];
        assert!((at2.x_ref - 2.0).abs() < 1e-9 && at2.y_ref.abs() < 1e-9);
        assert_eq!(t.terminal(), RefPoint::new(2.0, 3.0));
    }

    #[test]
    fn reference_holds_after_end() {
        let s = SuiteSpec::default();
        let t = random_waypoint_trajectory(1, &s, 0.02).unwrap();
        for extra in [0.0, 0.01, 1.0, 100.0] {
            assert_eq!(t.reference_at(t.nominal_duration() + extra), t.terminal());
        }
    }

    #[test]
    fn suite_is_reproducible_and_starts_at_origin() {
        let spec = SuiteSpec::default();
        let a = evaluation_suite(&spec, 0.02).unwrap();
        let b = evaluation_suite(&spec, 0.02).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for t in &a {
            assert_eq!(t.samples()[0], RefPoint::default());
            assert!(t.nominal_duration() > 10.0);
        }
        assert_ne!(a[0].samples(), a[1].samples());
    }

    #[test]
    fn csv_round_trip() {
        let t = random_waypoint_trajectory(2, &SuiteSpec::default(), 0.02).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(t.name(), buf.as_slice()).unwrap();
        assert_eq!(back.samples(), t.samples());
        assert!((back.dt() - t.dt()).abs() < 1e-15);
    }

    #[test]
    fn csv_rejects_short_or_empty_files() {
        assert!(Trajectory::read_csv("e", "t,x_ref,y_ref\n".as_bytes()).is_err());
        assert!(Trajectory::read_csv("e", "".as_bytes()).is_err());
        assert!(Trajectory::read_csv("e", "t,x_ref,y_ref\n0,1,1\n".as_bytes()).is_err());
        assert!(
            Trajectory::read_csv("e", "t,x_ref,y_ref\n0,1,1\n0.1,1,1\n0.3,1,1\n".as_bytes())
                .is_err()
        );
    }
}
