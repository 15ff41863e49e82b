//! Flat run configuration. Every key may come from a TOML file or from a
//! `--key value` flag; flags win.

use std::path::{Path, PathBuf};

use quadgain::controller::GainVector;
use quadgain::dynamics::{AngularDenominator, QuadParams};
use quadgain::env::EnvConfig;
use quadgain::ppo::TrainConfig;
use quadgain::trajectory::{SuiteSpec, DEFAULT_SETTLE_TIME};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,

    pub m: f64,
    pub inertia: f64,
    pub l: f64,
    pub g: f64,
    pub cd_v: f64,
    pub cd_omega: f64,
    /// Defaults to 1.5 m g once resolved.
    pub t_max: Option<f64>,
    pub angular_denominator: AngularDenominator,

    pub dt: f64,
    pub success_pos_tol: f64,
    pub success_vel_tol: f64,
    pub deviation_limit: f64,
    pub timeout_factor: f64,
    pub div_eps: f64,
    pub hold_until_nominal: bool,

    /// Reference CSV for `train` and `simulate`; a step when absent.
    pub trajectory: Option<PathBuf>,
    pub step_amplitude: f64,
    pub settle_time: f64,

    pub total_steps: u64,
    pub n_envs: usize,
    pub n_steps_per_env: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub lr: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub n_epochs: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub hidden_sizes: Vec<usize>,
    pub monitor_every: usize,
    pub fold_error_signs: bool,

    pub suite_seeds: Vec<u64>,
    pub suite_waypoints: usize,
    pub suite_extent: f64,
    pub suite_speed: f64,
    pub baseline_gains: [f64; 6],

    /// Policy for `eval` and `simulate`; `<out>/policy.json` when absent.
    pub checkpoint: Option<PathBuf>,
    /// Static gains for `simulate`, used instead of a checkpoint.
    pub gains: Option<[f64; 6]>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let q = QuadParams::default();
        let e = EnvConfig::default();
        let t = TrainConfig::default();
        let s = SuiteSpec::default();
        Self {
            seed: t.seed,
            out: PathBuf::from("runs"),
            m: q.m,
            inertia: q.inertia,
            l: q.l,
            g: q.g,
            cd_v: q.cd_v,
            cd_omega: q.cd_omega,
            t_max: None,
            angular_denominator: q.angular_denominator,
            dt: e.dt,
            success_pos_tol: e.success_pos_tol,
            success_vel_tol: e.success_vel_tol,
            deviation_limit: e.deviation_limit,
            timeout_factor: e.timeout_factor,
            div_eps: e.div_eps,
            hold_until_nominal: e.hold_until_nominal,
            trajectory: None,
            step_amplitude: 1.0,
            settle_time: DEFAULT_SETTLE_TIME,
            total_steps: t.total_steps,
            n_envs: t.n_envs,
            n_steps_per_env: t.n_steps_per_env,
            batch_size: t.batch_size,
            gamma: t.gamma,
            lr: t.lr,
            gae_lambda: t.gae_lambda,
            clip_eps: t.clip_eps,
            n_epochs: t.n_epochs,
            value_coef: t.value_coef,
            entropy_coef: t.entropy_coef,
            max_grad_norm: t.max_grad_norm,
            hidden_sizes: t.hidden_sizes,
            monitor_every: t.monitor_every,
            fold_error_signs: t.fold_error_signs,
            suite_seeds: s.seeds,
            suite_waypoints: s.waypoints,
            suite_extent: s.extent,
            suite_speed: s.speed,
            baseline_gains: GainVector::midpoint().to_array(),
            checkpoint: None,
            gains: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Invalid(#[from] quadgain::Error),
}

/// Parses one flag value as a TOML value. Bare words become strings and
/// comma-separated lists become arrays.
fn parse_value(raw: &str) -> toml::Value {
    let parse = |s: &str| {
        toml::from_str::<toml::Table>(&format!("v = {s}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
    };
    parse(raw)
        .or_else(|| {
            raw.contains(',')
                .then(|| parse(&format!("[{raw}]")))
                .flatten()
        })
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    /// Loads `file` (if any), applies `overrides` in order and fills derived
    /// defaults. Keys in overrides may use hyphens.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.to_path_buf(),
                    source,
                })?;
                toml::from_str::<toml::Table>(&text)?
            }
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            table.insert(key.replace('-', "_"), parse_value(value));
        }
        let mut config: RunConfig = toml::Value::Table(table).try_into()?;
        config.t_max.get_or_insert(1.5 * config.m * config.g);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> quadgain::Result<()> {
        self.env().validate()?;
        self.train().validate()?;
        self.baseline().validate()?;
        if let Some(g) = self.gains {
            GainVector::from_array(g).validate()?;
        }
        Ok(())
    }

    pub fn quad_params(&self) -> QuadParams {
        QuadParams {
            m: self.m,
            inertia: self.inertia,
            l: self.l,
            g: self.g,
            cd_v: self.cd_v,
            cd_omega: self.cd_omega,
            t_max: self.t_max.unwrap_or(1.5 * self.m * self.g),
            angular_denominator: self.angular_denominator,
        }
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            dt: self.dt,
            params: self.quad_params(),
            success_pos_tol: self.success_pos_tol,
            success_vel_tol: self.success_vel_tol,
            deviation_limit: self.deviation_limit,
            timeout_factor: self.timeout_factor,
            div_eps: self.div_eps,
            hold_until_nominal: self.hold_until_nominal,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            total_steps: self.total_steps,
            n_envs: self.n_envs,
            n_steps_per_env: self.n_steps_per_env,
            batch_size: self.batch_size,
            gamma: self.gamma,
            lr: self.lr,
            gae_lambda: self.gae_lambda,
            clip_eps: self.clip_eps,
            n_epochs: self.n_epochs,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            max_grad_norm: self.max_grad_norm,
            hidden_sizes: self.hidden_sizes.clone(),
            monitor_every: self.monitor_every,
            fold_error_signs: self.fold_error_signs,
            seed: self.seed,
        }
    }

    pub fn suite(&self) -> SuiteSpec {
        SuiteSpec {
            seeds: self.suite_seeds.clone(),
            waypoints: self.suite_waypoints,
            extent: self.suite_extent,
            speed: self.suite_speed,
        }
    }

    pub fn baseline(&self) -> GainVector {
        GainVector::from_array(self.baseline_gains)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("policy.json"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn defaults_resolve() {
        let c = RunConfig::load(None, &[]).unwrap();
        assert_eq!(c.t_max, Some(1.5 * 2.5 * 9.807));
        assert_eq!(c.train(), TrainConfig::default());
        assert_eq!(c.env(), EnvConfig::default());
        assert_eq!(c.suite(), SuiteSpec::default());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\ntotal_steps = 1000\nlr = 1e-3\n").unwrap();
        let c = RunConfig::load(
            Some(&path),
            &ov(&[
                ("total-steps", "12288"),
                ("angular-denominator", "mass"),
                ("baseline-gains", "1,-0.3,7,12,1,10"),
                ("hold-until-nominal", "true"),
                ("trajectory", "refs/path.csv"),
            ]),
        )
        .unwrap();
        assert_eq!((c.seed, c.total_steps, c.lr), (3, 12288, 1e-3));
        assert_eq!(c.angular_denominator, AngularDenominator::Mass);
        assert_eq!(c.baseline_gains, [1.0, -0.3, 7.0, 12.0, 1.0, 10.0]);
        assert!(c.hold_until_nominal);
        assert_eq!(c.trajectory, Some(PathBuf::from("refs/path.csv")));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::load(None, &ov(&[("learning-rate", "0.1")])).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn out_of_range_baseline_names_bound() {
        let err = RunConfig::load(
            None,
            &ov(&[("baseline-gains", "[3.0, -0.3, 7, 12, 1, 10]")]),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("kp_x") && msg.contains("[0.5, 2]"), "{msg}");
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::load(
            None,
            &ov(&[("lr", "0.000123456789"), ("gains", "[1,-0.3,7,12,1,10]")]),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("echo.toml");
        std::fs::write(&path, c.to_toml()).unwrap();
        assert_eq!(RunConfig::load(Some(&path), &[]).unwrap(), c);
    }

    #[test]
    fn value_parsing() {
        assert_eq!(parse_value("7"), toml::Value::Integer(7));
        assert_eq!(
            parse_value("run/out"),
            toml::Value::String("run/out".into())
        );
        assert!(matches!(parse_value("1,2"), toml::Value::Array(_)));
        assert_eq!(parse_value("false"), toml::Value::Boolean(false));
    }
}
