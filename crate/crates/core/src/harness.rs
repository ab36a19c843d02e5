//! Random MDP generation, experiment configuration and CSV/JSON output.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    pmd_baseline, q_td_pmd, td_pmd, Algorithm, EvalScheme, StepSchedule, Trajectory,
};
use crate::diagnostics::{
    check_shift, compute_metrics, run_checks, CheckReport, CheckStatus, MetricSeries, CHECK_NAMES,
};
use crate::error::{Error, Result};
use crate::mdp::{OptimalityData, TabularMdp};
use crate::mirror::MirrorMap;
use crate::parallel::{map_trials, Execution};
use crate::sampling::{sample_q_td_pmd, sample_td_pmd, GenerativeModel, SampleConfig};
use crate::values::{Policy, StateValue};

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "TDPMD_OUTPUT_DIR";
/// Value-iteration accuracy used for all reference optimal values.
pub const VI_TOLERANCE: f64 = 1e-9;
/// Q* gap below which two actions count as equally optimal.
pub const OPTIMAL_ACTION_TOL: f64 = 1e-6;
pub const CSV_HEADER: &str = "iter,v_err_inf,pol_err_inf,subopt_mass,eta,kappa_term,variant";

const INIT_STREAM: u64 = 1;

/// Random MDP with iid uniform rewards and row-normalized uniform transitions.
///
/// Rewards are drawn first (row-major over `(s, a)`), then each transition
/// row `P(·|s, a)` in the same order.
pub fn random_mdp(
    seed: u64,
    num_states: usize,
    num_actions: usize,
    gamma: f64,
) -> Result<TabularMdp> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::InvalidArgument(
            "MDP sizes must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rewards: Vec<f64> = (0..num_states * num_actions)
        .map(|_| rng.random())
        .collect();
    let mut transitions = Vec::with_capacity(num_states * num_actions * num_states);
    let mut row = vec![0.0; num_states];
    for _ in 0..num_states * num_actions {
        loop {
            row.iter_mut().for_each(|p| *p = rng.random());
            let sum: f64 = row.iter().sum();
            if sum >= 1e-12 {
                transitions.extend(row.iter().map(|p| p / sum));
                break;
            }
        }
    }
    TabularMdp::new(num_states, num_actions, gamma, rewards, transitions)
}

/// Uniform draw from `[0, 1/(1−γ)]^|S|`.
pub fn random_value(seed: u64, num_states: usize, gamma: f64) -> StateValue {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let hi = 1.0 / (1.0 - gamma);
    StateValue::from_vec_unchecked((0..num_states).map(|_| rng.random::<f64>() * hi).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum MdpSource {
    File {
        path: PathBuf,
    },
    /// Without a `seed`, every trial draws its own MDP from its trial seed.
    Random {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        num_states: usize,
        num_actions: usize,
        gamma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ValueInit {
    #[default]
    Zeros,
    /// Uniform on `[0, 1/(1−γ)]` per state, drawn from the trial seed.
    Random,
    /// JSON array of state values.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyInit {
    #[default]
    Uniform,
    /// JSON array of per-state probability rows.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    #[serde(default)]
    pub v0: ValueInit,
    #[serde(default)]
    pub pi0: PolicyInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    pub delta: f64,
    pub alpha: f64,
    /// Explicit per-entry counts; derived from the Hoeffding bounds when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_q: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_v: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: default_dir(),
            prefix: default_prefix(),
        }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_prefix() -> String {
    "run".into()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub map: MirrorMap,
    pub iterations: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Check names, or `"all"`.
    #[serde(default)]
    pub checks: Vec<String>,
    pub mdp: MdpSource,
    pub schedule: StepSchedule,
    #[serde(default)]
    pub scheme: EvalScheme,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file; relative input paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let MdpSource::File { path } = &mut config.mdp {
            rebase(path);
        }
        if let ValueInit::File(p) = &mut config.init.v0 {
            rebase(p);
        }
        if let PolicyInit::File(p) = &mut config.init.pi0 {
            rebase(p);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        self.schedule
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.scheme
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.algorithm != Algorithm::TdPmd && self.scheme != EvalScheme::OneStep {
            return bad(format!(
                "evaluation scheme is only configurable for td_pmd, not {}",
                self.algorithm.name()
            ));
        }
        match (self.algorithm.is_sampled(), &self.sampling) {
            (true, None) => {
                return bad(format!(
                    "{} needs a [sampling] section",
                    self.algorithm.name()
                ))
            }
            (false, Some(_)) => {
                return bad(format!(
                    "[sampling] is only valid for sample-based algorithms, not {}",
                    self.algorithm.name()
                ))
            }
            _ => {}
        }
        if let MdpSource::Random {
            num_states,
            num_actions,
            gamma,
            ..
        } = self.mdp
        {
            if num_states == 0 || num_actions == 0 || !(0.0..1.0).contains(&gamma) {
                return bad(
                    "random MDP needs num_states, num_actions >= 1 and gamma in [0, 1)".into(),
                );
            }
        }
        for name in &self.checks {
            if name != "all" && !CHECK_NAMES.contains(&name.as_str()) {
                return bad(format!(
                    "unknown check `{name}` (known: all, {})",
                    CHECK_NAMES.join(", ")
                ));
            }
        }
        if self.output.prefix.is_empty() || self.output.prefix.contains(['/', '\\']) {
            return bad("output prefix must be a non-empty file name".into());
        }
        Ok(())
    }

    /// Requested checks with `"all"` expanded.
    pub fn check_names(&self) -> Vec<String> {
        if self.checks.iter().any(|c| c == "all") {
            CHECK_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            self.checks.clone()
        }
    }

    /// Output directory after applying the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output.dir.clone(),
        }
    }
}

/// Instance data shared by every algorithm run on one trial.
pub struct Instance {
    pub mdp: TabularMdp,
    pub opt: OptimalityData,
    pub v0: StateValue,
    pub pi0: Policy,
}

impl Instance {
    pub fn build(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        let mdp = match &config.mdp {
            MdpSource::File { path } => TabularMdp::load(path)
                .map_err(|e| Error::Config(format!("cannot load MDP {}: {e}", path.display())))?,
            MdpSource::Random {
                seed: fixed,
                num_states,
                num_actions,
                gamma,
            } => random_mdp(fixed.unwrap_or(seed), *num_states, *num_actions, *gamma)?,
        };
        let opt = mdp.optimal_values(VI_TOLERANCE, OPTIMAL_ACTION_TOL)?;
        let (n, a) = (mdp.num_states(), mdp.num_actions());
        let v0 = match &config.init.v0 {
            ValueInit::Zeros => StateValue::zeros(n),
            ValueInit::Random => random_value(seed, n, mdp.gamma()),
            ValueInit::File(path) => {
                let v = StateValue::new(read_json(path)?)?;
                if v.len() != n {
                    return Err(Error::dims("initial value file", n, v.len()));
                }
                v
            }
        };
        let pi0 = match &config.init.pi0 {
            PolicyInit::Uniform => Policy::uniform(n, a),
            PolicyInit::File(path) => {
                let rows: Vec<Vec<f64>> = read_json(path)?;
                let pi = Policy::from_rows(&rows)?;
                mdp.check_policy(&pi)?;
                pi
            }
        };
        Ok(Instance { mdp, opt, v0, pi0 })
    }

    /// Runs one algorithm on this instance.
    pub fn run(
        &self,
        config: &ExperimentConfig,
        algorithm: Algorithm,
        seed: u64,
    ) -> Result<Trajectory> {
        let (mdp, map, sched, t) = (&self.mdp, config.map, config.schedule, config.iterations);
        let sample_config = |q_variant: bool| -> Result<SampleConfig> {
            let s = config.sampling.ok_or_else(|| {
                Error::Config(format!("{} needs a [sampling] section", algorithm.name()))
            })?;
            let mut c = SampleConfig::derived(
                t,
                mdp.num_states(),
                mdp.num_actions(),
                mdp.gamma(),
                s.delta,
                s.alpha,
                q_variant,
            )?;
            c.m_q = s.m_q.unwrap_or(c.m_q);
            c.m_v = s.m_v.unwrap_or(c.m_v);
            Ok(c)
        };
        match algorithm {
            Algorithm::TdPmd => td_pmd(mdp, map, sched, config.scheme, &self.v0, &self.pi0, t),
            Algorithm::QTdPmd => q_td_pmd(mdp, map, sched, &mdp.induce_q(&self.v0)?, &self.pi0, t),
            Algorithm::Pmd => pmd_baseline(mdp, map, sched, &self.pi0, t),
            Algorithm::SampleTdPmd => {
                let mut gm = GenerativeModel::new(mdp.clone(), seed);
                sample_td_pmd(
                    &mut gm,
                    map,
                    sched,
                    &sample_config(false)?,
                    &self.v0,
                    &self.pi0,
                )
            }
            Algorithm::SampleQTdPmd => {
                let mut gm = GenerativeModel::new(mdp.clone(), seed);
                let q0 = mdp.induce_q(&self.v0)?;
                sample_q_td_pmd(&mut gm, map, sched, &sample_config(true)?, &q0, &self.pi0)
            }
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub algorithm: Algorithm,
    pub variant: String,
    pub kappa0: f64,
    pub final_v_err: f64,
    pub final_pol_err: f64,
    pub checks: Vec<CheckReport>,
    pub wall_ms: f64,
    pub seed: u64,
}

/// One trial of one algorithm.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub trajectory: Trajectory,
    pub metrics: MetricSeries,
    /// CSV body rows, one per iterate (no header).
    pub rows: Vec<String>,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn failed(&self) -> bool {
        self.summary
            .checks
            .iter()
            .any(|c| c.status == CheckStatus::Fail)
    }

    pub fn csv(&self) -> String {
        csv_document(std::slice::from_ref(self))
    }
}

/// Header plus the rows of each output, in order.
pub fn csv_document(outputs: &[RunOutput]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for o in outputs {
        for r in &o.rows {
            out.push_str(r);
            out.push('\n');
        }
    }
    out
}

pub fn csv_rows(metrics: &MetricSeries, variant: &str) -> Vec<String> {
    (0..metrics.len())
        .map(|k| {
            let mut row = format!(
                "{k},{:.16e},{:.16e},{:.16e},",
                metrics.v_err[k], metrics.pol_err[k], metrics.subopt_mass[k]
            );
            if let Some(eta) = metrics.eta[k] {
                let _ = write!(row, "{eta:.16e}");
            }
            let _ = write!(row, ",{:.16e},{variant}", metrics.kappa_term[k]);
            row
        })
        .collect()
}

/// Runs `algorithm` on a prepared instance, then metrics and checks.
pub fn run_on_instance(
    config: &ExperimentConfig,
    inst: &Instance,
    algorithm: Algorithm,
    seed: u64,
) -> Result<RunOutput> {
    let start = Instant::now();
    let traj = inst.run(config, algorithm, seed)?;
    let metrics = compute_metrics(&inst.mdp, &inst.opt, &traj)?;
    let delta = config.sampling.map(|s| s.delta);
    let names = config.check_names();
    let mut checks = run_checks(&names, &inst.mdp, &inst.opt, &traj, &metrics, delta)?;
    if names.iter().any(|n| n == "shift") {
        checks.push(if algorithm == Algorithm::TdPmd {
            check_shift(
                &inst.mdp,
                config.map,
                config.schedule,
                config.scheme,
                &inst.v0,
                &inst.pi0,
                config.iterations,
            )?
        } else {
            CheckReport::not_applicable("shift", "needs an exact TD-PMD run")
        });
    }
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let variant = traj.variant_tag();
    let rows = csv_rows(&metrics, &variant);
    let last = metrics.len() - 1;
    let summary = RunSummary {
        config: config.clone(),
        algorithm,
        variant,
        kappa0: traj.kappa0,
        final_v_err: metrics.v_err[last],
        final_pol_err: metrics.pol_err[last],
        checks,
        wall_ms,
        seed,
    };
    Ok(RunOutput {
        seed,
        trajectory: traj,
        metrics,
        rows,
        summary,
    })
}

/// Runs every trial seed of the configured algorithm.
pub fn run_experiment(config: &ExperimentConfig, exec: Execution) -> Result<Vec<RunOutput>> {
    config.validate()?;
    map_trials(&config.seeds, exec, |&seed| {
        let inst = Instance::build(config, seed)?;
        run_on_instance(config, &inst, config.algorithm, seed)
    })
    .into_iter()
    .collect()
}

/// Runs two algorithms per trial on the same instance.
pub fn run_compare(
    config: &ExperimentConfig,
    algorithms: [Algorithm; 2],
    exec: Execution,
) -> Result<Vec<[RunOutput; 2]>> {
    if algorithms[0] == algorithms[1] {
        return Err(Error::Config(
            "compare needs two different algorithms".into(),
        ));
    }
    for alg in algorithms {
        let mut c = config.clone();
        c.algorithm = alg;
        c.validate()?;
    }
    map_trials(&config.seeds, exec, |&seed| {
        let inst = Instance::build(config, seed)?;
        let run = |alg| {
            let mut c = config.clone();
            c.algorithm = alg;
            run_on_instance(&c, &inst, alg, seed)
        };
        Ok([run(algorithms[0])?, run(algorithms[1])?])
    })
    .into_iter()
    .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| {
        Error::Config(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })
}

/// Writes `<prefix>_seed<seed>.csv` and `.json` per trial; returns the paths.
pub fn write_outputs(dir: &Path, prefix: &str, outputs: &[RunOutput]) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    for o in outputs {
        let stem = format!("{prefix}_seed{}", o.seed);
        let csv = dir.join(format!("{stem}.csv"));
        write_file(&csv, &o.csv())?;
        let json = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&o.summary)?;
        write_file(&json, &(text + "\n"))?;
        written.push(csv);
        written.push(json);
    }
    Ok(written)
}

/// Writes one merged CSV per trial plus both JSON summaries.
pub fn write_compare_outputs(
    dir: &Path,
    prefix: &str,
    pairs: &[[RunOutput; 2]],
) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    for pair in pairs {
        let seed = pair[0].seed;
        let csv = dir.join(format!("{prefix}_compare_seed{seed}.csv"));
        write_file(&csv, &csv_document(pair))?;
        written.push(csv);
        for o in pair {
            let json = dir.join(format!("{prefix}_{}_seed{seed}.json", o.summary.variant));
            write_file(&json, &(serde_json::to_string_pretty(&o.summary)? + "\n"))?;
            written.push(json);
        }
    }
    Ok(written)
}
