//! `cps`: run push-sum scenarios, sweeps, attacks and privacy tests.

mod artifacts;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use cps_core::export::{write_errors_csv, write_message_log, write_states_csv};
use cps_core::metrics::{converged_at, default_rate_window};
use cps_core::{
    attack_conventional, attack_reconstruct, estimate_rate, indistinguishability_test, observe,
    privacy_condition, run, run_trials, Algorithm, PrivacyVerdict, RecordMode, ScenarioConfig,
    ScheduleSource, Verdict,
};
use serde::Serialize;

use crate::artifacts::Stage;

#[derive(Parser)]
#[command(
    name = "cps",
    version,
    about = "Confidential push-sum consensus experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write errors.csv, states.csv, messages.json.
    Run(Common),
    /// Mean and variance of the fitted rate over a grid of epsilon values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated epsilon grid.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Classify a target and, where possible, recover its initial value.
    Attack {
        #[command(flatten)]
        common: Common,
        /// 1-based target agent.
        #[arg(long)]
        target: usize,
        /// 1-based colluding agents; defaults to the scenario's list.
        #[arg(long, value_delimiter = ',')]
        adversaries: Vec<usize>,
    },
    /// Two-sample KS test of adversary observations under shifted inputs.
    PrivacyTest {
        #[command(flatten)]
        common: Common,
        /// 1-based target agent.
        #[arg(long)]
        target: usize,
        /// 1-based honest neighbor absorbing the shift.
        #[arg(long)]
        partner: usize,
        /// 1-based colluding agents; defaults to the scenario's list.
        #[arg(long, value_delimiter = ',')]
        adversaries: Vec<usize>,
        #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
        shift: f64,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario: fig2_k10, fig2_k20, fig2_k30, fig3_sweep, fig7_scale.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, env = "CPS_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    big_k: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_parser = ["full", "states-only"])]
    record: Option<String>,
    #[arg(long)]
    override_assumptions: bool,
}

impl Common {
    fn scenario(&self) -> anyhow::Result<ScenarioConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ScenarioConfig::from_file(path)
                .with_context(|| format!("reading scenario {}", path.display()))?,
            (None, Some(name)) => ScenarioConfig::preset(name)?,
            (None, None) => bail!("pass --config PATH or --preset NAME"),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if let Some(eps) = self.epsilon {
            cfg.params.epsilon = eps;
        }
        if let Some(k) = self.big_k {
            cfg.params.big_k = k;
        }
        if let Some(mode) = &self.record {
            cfg.record = Some(mode.parse()?);
        }
        if self.override_assumptions {
            cfg.override_assumptions = true;
        }
        cfg.params.validate()?;
        cfg.record = Some(cfg.record_mode());
        if let ScheduleSource::File(_) = cfg.schedule {
            cfg.schedule = ScheduleSource::Inline(cfg.schedule.resolve()?.to_file_format());
        }
        Ok(cfg)
    }
}

/// Failures that map to exit code 1 rather than 2.
#[derive(Debug)]
struct AuditFailed(usize);

impl std::fmt::Display for AuditFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invariant audit reported {} violation(s)", self.0)
    }
}

impl std::error::Error for AuditFailed {}

#[derive(Serialize)]
struct Manifest<'a> {
    command_line: Vec<String>,
    config: &'a ScenarioConfig,
    seed: u64,
    outputs: Vec<PathBuf>,
    duration_secs: f64,
    checksums: &'a std::collections::BTreeMap<String, String>,
}

fn finish(
    mut stage: Stage,
    cfg: &ScenarioConfig,
    mut outputs: Vec<PathBuf>,
    started: Instant,
) -> anyhow::Result<()> {
    let config_path = stage.write("config.json", |w| {
        w.write_all(cfg.to_json().as_bytes())?;
        writeln!(w)
    })?;
    outputs.push(config_path);
    let checksums = stage.checksums().clone();
    let dir = outputs[0]
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    outputs.push(dir.join("manifest.json"));
    let manifest = Manifest {
        command_line: std::env::args().collect(),
        config: cfg,
        seed: cfg.seed,
        outputs,
        duration_secs: started.elapsed().as_secs_f64(),
        checksums: &checksums,
    };
    stage.write("manifest.json", |w| -> anyhow::Result<()> {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        writeln!(w)?;
        Ok(())
    })?;
    stage.commit()?;
    Ok(())
}

fn one_based(id: usize, n: usize, what: &str) -> anyhow::Result<usize> {
    if id == 0 || id > n {
        bail!("{what} {id} is not an agent id in 1..={n}");
    }
    Ok(id - 1)
}

/// The `--adversaries` list if given, else the scenario's.
fn adversary_set(cfg: &ScenarioConfig, ids: &[usize]) -> anyhow::Result<BTreeSet<usize>> {
    if ids.is_empty() {
        return Ok(cfg.adversaries.iter().copied().collect());
    }
    ids.iter()
        .map(|&a| one_based(a, cfg.params.n, "adversary"))
        .collect()
}

fn cmd_run(common: &Common) -> anyhow::Result<()> {
    let started = Instant::now();
    let cfg = common.scenario()?;
    let tr = run(&cfg)?;
    let (start, end) = default_rate_window(&tr.errors, cfg.params.big_k);
    let gamma_hat = estimate_rate(&tr.errors, start, end).ok();

    let mut stage = Stage::new(&common.out)?;
    let mut outputs = vec![
        stage.write("errors.csv", |w| write_errors_csv(&tr, w))?,
        stage.write("states.csv", |w| write_states_csv(&tr, w))?,
    ];
    if tr.has_messages() {
        outputs.push(stage.write("messages.json", |w| write_message_log(&tr, w))?);
    }
    finish(stage, &cfg, outputs, started)?;

    match converged_at(&tr.errors) {
        Some(k) => println!("converged_at: {k}"),
        None => println!("converged_at: none"),
    }
    println!("final_error: {:e}", tr.final_error());
    match gamma_hat {
        Some(g) => println!("gamma_hat: {g}"),
        None => println!("gamma_hat: none"),
    }
    println!("violations: {}", tr.violations.len());
    if !tr.violations.is_empty() {
        return Err(AuditFailed(tr.violations.len()).into());
    }
    Ok(())
}

const DEFAULT_GRID: [f64; 5] = [0.01, 0.02, 0.05, 0.1, 0.15];

fn cmd_sweep(common: &Common, grid: &[f64], trials: usize) -> anyhow::Result<()> {
    let started = Instant::now();
    if trials == 0 {
        bail!("--trials must be positive");
    }
    let mut base = common.scenario()?;
    base.record = Some(RecordMode::StatesOnly);
    let grid: Vec<f64> = match (grid.is_empty(), common.epsilon) {
        (false, _) => grid.to_vec(),
        (true, Some(eps)) => vec![eps],
        (true, None) => DEFAULT_GRID.to_vec(),
    };
    let max_out = base.schedule.resolve()?.max_out_degree();

    let mut rows = Vec::new();
    let mut audit_failures = 0;
    for &eps in &grid {
        let mut cfg = base.clone();
        cfg.params.epsilon = eps;
        if let Err(e) = cfg
            .params
            .validate()
            .and_then(|_| cfg.params.check_feasible(max_out))
        {
            eprintln!("warning: skipping epsilon {eps}: {e}");
            rows.push((eps, f64::NAN, f64::NAN, 0));
            continue;
        }
        let runs = run_trials(&cfg, trials, 1)?;
        audit_failures += runs.iter().filter(|t| !t.violations.is_empty()).count();
        let gammas: Vec<f64> = runs
            .iter()
            .filter_map(|t| {
                let (s, e) = default_rate_window(&t.errors, cfg.params.big_k);
                estimate_rate(&t.errors, s, e).ok()
            })
            .collect();
        let m = gammas.len() as f64;
        let mean = gammas.iter().sum::<f64>() / m;
        let var = if gammas.len() > 1 {
            gammas.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        rows.push((eps, mean, var, gammas.len()));
    }

    let mut stage = Stage::new(&common.out)?;
    let sweep = stage.write("sweep.csv", |w| -> std::io::Result<()> {
        writeln!(w, "epsilon,gamma_mean,gamma_var,trials")?;
        for (eps, mean, var, n) in &rows {
            writeln!(w, "{eps},{mean},{var},{n}")?;
        }
        Ok(())
    })?;
    finish(stage, &base, vec![sweep], started)?;
    for (eps, mean, var, n) in &rows {
        println!("epsilon {eps}: gamma_mean {mean}, gamma_var {var}, trials {n}");
    }
    if audit_failures > 0 {
        return Err(AuditFailed(audit_failures).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct AttackOutcome {
    method: &'static str,
    recovered: Option<f64>,
    ground_truth: f64,
    abs_error: Option<f64>,
    skipped: Option<String>,
}

#[derive(Serialize)]
struct WitnessReport {
    /// 1-based.
    neighbor: usize,
    round: usize,
}

#[derive(Serialize)]
struct AttackReport {
    target: usize,
    adversaries: Vec<usize>,
    verdict: Verdict,
    witness: Option<WitnessReport>,
    attack: AttackOutcome,
}

fn cmd_attack(common: &Common, target: usize, adversaries: &[usize]) -> anyhow::Result<()> {
    let started = Instant::now();
    let mut cfg = common.scenario()?;
    let n = cfg.params.n;
    let target0 = one_based(target, n, "target")?;
    let adv = adversary_set(&cfg, adversaries)?;
    if adv.contains(&target0) {
        bail!("target {target} is in the adversary set");
    }
    cfg.adversaries = adv.iter().copied().collect();
    cfg.record = Some(RecordMode::Full);
    let schedule = cfg.schedule.resolve()?;
    let PrivacyVerdict {
        verdict, witness, ..
    } = privacy_condition(&schedule, &adv, target0, &cfg.params)?;

    let tr = run(&cfg)?;
    let view = observe(&tr, &adv)?;
    let truth = tr.initial_values[target0];
    let (method, result) = match (cfg.algorithm, verdict) {
        (Algorithm::Conventional, _) => ("conventional", attack_conventional(&view, target0)),
        (Algorithm::Confidential, Verdict::Vulnerable) => {
            ("reconstruct", attack_reconstruct(&view, target0))
        }
        (Algorithm::Confidential, v) => (
            "reconstruct",
            Err(cps_core::Error::AttackInfeasible(format!(
                "target is {v:?}"
            ))),
        ),
    };
    let attack = match result {
        Ok(x) => AttackOutcome {
            method,
            recovered: Some(x),
            ground_truth: truth,
            abs_error: Some((x - truth).abs()),
            skipped: None,
        },
        Err(cps_core::Error::AttackInfeasible(why)) => AttackOutcome {
            method,
            recovered: None,
            ground_truth: truth,
            abs_error: None,
            skipped: Some(why),
        },
        Err(e) => return Err(e.into()),
    };
    let report = AttackReport {
        target,
        adversaries: adv.iter().map(|a| a + 1).collect(),
        verdict,
        witness: witness.map(|w| WitnessReport {
            neighbor: w.neighbor + 1,
            round: w.round,
        }),
        attack,
    };
    let text = serde_json::to_string_pretty(&report)?;
    let mut stage = Stage::new(&common.out)?;
    let path = stage.write("attack.json", |w| writeln!(w, "{text}"))?;
    finish(stage, &cfg, vec![path], started)?;
    println!("{text}");
    Ok(())
}

fn cmd_privacy_test(
    common: &Common,
    target: usize,
    partner: usize,
    adversaries: &[usize],
    shift: f64,
    trials: usize,
    alpha: f64,
) -> anyhow::Result<()> {
    let started = Instant::now();
    let mut cfg = common.scenario()?;
    cfg.adversaries = adversary_set(&cfg, adversaries)?.into_iter().collect();
    let n = cfg.params.n;
    let report = indistinguishability_test(
        &cfg,
        one_based(target, n, "target")?,
        one_based(partner, n, "partner")?,
        shift,
        trials,
        alpha,
    )?;
    let mut stage = Stage::new(&common.out)?;
    let path = stage.write("pvalues.csv", |w| -> std::io::Result<()> {
        writeln!(w, "statistic_id,p_value")?;
        for p in &report.p_values {
            writeln!(w, "{},{}", p.statistic_id, p.p_value)?;
        }
        Ok(())
    })?;
    finish(stage, &cfg, vec![path], started)?;
    println!("result: {}", if report.pass { "pass" } else { "fail" });
    println!(
        "rejections: {}/{} (allowed {}), rejection_fraction: {}",
        report.rejections,
        report.p_values.len(),
        report.allowed_rejections,
        report.rejection_fraction
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(common) => cmd_run(common),
        Command::Sweep {
            common,
            grid,
            trials,
        } => cmd_sweep(common, grid, *trials),
        Command::Attack {
            common,
            target,
            adversaries,
        } => cmd_attack(common, *target, adversaries),
        Command::PrivacyTest {
            common,
            target,
            partner,
            adversaries,
            shift,
            trials,
            alpha,
        } => cmd_privacy_test(
            common,
            *target,
            *partner,
            adversaries,
            *shift,
            *trials,
            *alpha,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<AuditFailed>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
