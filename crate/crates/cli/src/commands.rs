use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use quadgain::controller::GainVector;
use quadgain::eval::{compare, run_episode, EvalReport, GainSource};
use quadgain::nn::PolicyParams;
use quadgain::ppo::{train, IterationRecord, TrainObserver, TrainingTask, WindowRecord};
use quadgain::trajectory::{evaluation_suite, step_reference, Trajectory};
use serde::Serialize;

use crate::config::RunConfig;

pub type CmdResult = Result<(), Box<dyn std::error::Error>>;

fn prepare_out(config: &RunConfig, echo_name: &str) -> std::io::Result<()> {
    fs::create_dir_all(&config.out)?;
    fs::write(config.out.join(echo_name), config.to_toml())
}

fn reference(config: &RunConfig) -> quadgain::Result<Trajectory> {
    match &config.trajectory {
        Some(path) => Trajectory::load_csv(path),
        None => step_reference(config.step_amplitude, config.settle_time, config.dt),
    }
}

fn load_policy(path: &Path) -> Result<PolicyParams, Box<dyn std::error::Error>> {
    PolicyParams::load(path)
        .map(|(p, _)| p)
        .map_err(|e| format!("cannot load checkpoint `{}`: {e}", path.display()).into())
}

#[derive(Serialize)]
struct MonitorRow {
    window: usize,
    first_iteration: usize,
    last_iteration: usize,
    total_steps: u64,
    successes: usize,
    deviations: usize,
    timeouts: usize,
    mean_episode_reward: Option<f64>,
    mean_success_ise: Option<f64>,
}

struct RunWriter {
    log: BufWriter<File>,
    monitor: csv::Writer<File>,
    checkpoints: PathBuf,
}

impl TrainObserver for RunWriter {
    fn on_iteration(&mut self, record: &IterationRecord, _: &PolicyParams) -> quadgain::Result<()> {
        serde_json::to_writer(&mut self.log, record)?;
        self.log.write_all(b"\n")?;
        self.log.flush()?;
        println!(
            "iteration {:>3}  steps {:>7}  reward {:>8}  successes {:>3}  ev {:.3}",
            record.iteration,
            record.total_steps,
            record
                .mean_episode_reward
                .map_or("-".into(), |r| format!("{r:.3}")),
            record.outcomes.successes,
            record.update.explained_variance,
        );
        Ok(())
    }

    fn on_window(&mut self, w: &WindowRecord, policy: &PolicyParams) -> quadgain::Result<()> {
        self.monitor.serialize(MonitorRow {
            window: w.window,
            first_iteration: w.first_iteration,
            last_iteration: w.last_iteration,
            total_steps: w.total_steps,
            successes: w.outcomes.successes,
            deviations: w.outcomes.deviations,
            timeouts: w.outcomes.timeouts,
            mean_episode_reward: w.mean_episode_reward,
            mean_success_ise: w.mean_success_ise,
        })?;
        self.monitor.flush()?;
        policy.save(
            self.checkpoints
                .join(format!("window-{:02}.json", w.window)),
            w.total_steps,
        )
    }
}

pub fn cmd_train(config: &RunConfig) -> CmdResult {
    prepare_out(config, "train_config.toml")?;
    let checkpoints = config.out.join("checkpoints");
    fs::create_dir_all(&checkpoints)?;
    let task = TrainingTask {
        env: config.env(),
        trajectory: Arc::new(reference(config)?),
    };
    let mut writer = RunWriter {
        log: BufWriter::new(File::create(config.out.join("train_log.jsonl"))?),
        monitor: csv::Writer::from_path(config.out.join("monitoring.csv"))?,
        checkpoints,
    };
    let outcome = train(&config.train(), &task, &mut writer)?;
    let steps = outcome
        .history
        .iterations
        .last()
        .map_or(0, |r| r.total_steps);
    let path = config.out.join("policy.json");
    outcome.policy.save(&path, steps)?;
    println!("saved {}", path.display());
    Ok(())
}

pub fn cmd_eval(config: &RunConfig) -> CmdResult {
    let policy = load_policy(&config.checkpoint_path())?;
    prepare_out(config, "eval_config.toml")?;
    let suite: Vec<Arc<Trajectory>> = evaluation_suite(&config.suite(), config.dt)?
        .into_iter()
        .map(Arc::new)
        .collect();
    let (report, logs) = compare(
        GainSource::Static(config.baseline()),
        GainSource::Policy(&policy),
        &suite,
        &config.env(),
    )?;
    write_report(&config.out, &report)?;
    let episodes = config.out.join("episodes");
    fs::create_dir_all(&episodes)?;
    for (b, r) in logs.baseline.iter().zip(&logs.rl) {
        b.save_csv(episodes.join(format!("{}-baseline.csv", b.trajectory)))?;
        r.save_csv(episodes.join(format!("{}-rl.csv", r.trajectory)))?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn write_report(out: &Path, report: &EvalReport) -> std::io::Result<()> {
    fs::write(
        out.join("eval_report.json"),
        serde_json::to_string_pretty(report)? + "\n",
    )?;
    fs::write(out.join("eval_report.txt"), report.to_table())
}

pub fn cmd_simulate(config: &RunConfig) -> CmdResult {
    let policy;
    let source = match config.gains {
        Some(g) => GainSource::Static(GainVector::from_array(g)),
        None => {
            policy = load_policy(&config.checkpoint_path())?;
            GainSource::Policy(&policy)
        }
    };
    let traj = Arc::new(reference(config)?);
    prepare_out(config, "simulate_config.toml")?;
    let log = run_episode(source, traj, &config.env())?;
    let path = config.out.join("episode.csv");
    log.save_csv(&path)?;
    println!(
        "{}: {:?} after {:.2} s, ISE {:.4}, ITSE {:.4}",
        log.trajectory,
        log.outcome,
        log.duration(),
        log.ise(),
        log.itse()
    );
    println!("saved {}", path.display());
    Ok(())
}
