//! Experiment orchestration: config files, scenario runners, sweeps, and
//! tabular output.
//!
//! Configs are TOML. A run file looks like
//!
//! ```toml
//! [target]
//! kind = "log_concave"            # uniform | log_concave | piecewise_constant | custom
//!
//! [initial]
//! kind = "barenblatt"             # barenblatt | uniform | custom
//! tau = 0.0625
//!
//! [run]
//! n = 101
//! epsilon = "auto"                # "auto" resolves to 4/n^0.99
//! k = 1e9
//! omega = [-1.0, 1.0]
//! t_final = 1.0
//! sample_times = 64               # count, or an explicit array of times
//! output = "out/example"
//!
//! [integrator]
//! method = "implicit_stiff"       # implicit_stiff | adaptive_explicit
//! rel_tol = 1e-6
//! abs_tol = 1e-9
//! max_step = 0.01
//! ```
//!
//! Sweep files add a `[sweep]` section (`n_values`, `n_max`, `observable`).
//! Runs are seedless; identical configs produce byte-identical outputs.

use crate::dynamics::DynamicsContext;
use crate::ensemble::{InitialDensity, ParticleEnsemble};
use crate::integrator::{integrate, IntegratorConfig, Trajectory};
use crate::mollifier::Mollifier;
use crate::observables::{
    fit_convergence_order, kl_divergence, DiagnosticsRecord, KdeSnapshot,
};
use crate::potentials::{ConfiningPotential, ExternalPotential};
use crate::quadrature::QuadratureSpec;
use crate::target::{KernelTable, TargetDensity};
use crate::{Error, Interval, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Built-in target and initial-density presets used across the examples
/// and the verification suite.
pub mod presets {
    use super::*;

    /// Constant density `1/2` (unit mass on the default domain).
    pub fn uniform_target() -> TargetDensity {
        TargetDensity::uniform(0.5).expect("valid level")
    }

    /// `2/(pi (1 + x^2))`.
    pub fn log_concave_target() -> TargetDensity {
        TargetDensity::log_concave()
    }

    /// Symmetric two-level step profile with unit mass on the default
    /// domain: `1/3` outside `(-0.75, -0.25) U (0.25, 0.75)`, `2/3` inside.
    pub fn piecewise_target() -> TargetDensity {
        TargetDensity::piecewise_constant(
            vec![f64::NEG_INFINITY, -0.75, -0.25, 0.25, 0.75, f64::INFINITY],
            vec![1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0],
        )
        .expect("valid pieces")
    }

    /// The standard compactly supported initial profile.
    pub fn barenblatt_initial() -> InitialDensity {
        InitialDensity::Barenblatt { tau: 0.0625 }
    }
}

/// The bandwidth rule `epsilon = 4 n^(-0.99)`: keeps neighboring kernels
/// overlapping on the midpoint lattice as `n` grows.
pub fn resolve_epsilon(n: usize) -> f64 {
    assert!(n >= 1);
    4.0 * (n as f64).powf(-0.99)
}

// ---- config schema -------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    /// The literal string `"auto"`.
    Auto(String),
    Fixed(f64),
}

impl Default for EpsilonSpec {
    fn default() -> Self {
        Self::Auto("auto".into())
    }
}

impl EpsilonSpec {
    pub fn resolve(&self, n: usize) -> Result<f64> {
        match self {
            Self::Auto(tag) if tag == "auto" => Ok(resolve_epsilon(n)),
            Self::Auto(tag) => Err(Error::InvalidConfig(format!(
                "epsilon must be a positive number or \"auto\", got \"{tag}\""
            ))),
            Self::Fixed(v) if *v > 0.0 && v.is_finite() => Ok(*v),
            Self::Fixed(v) => Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {v}"
            ))),
        }
    }
}

/// A breakpoint entry: a number, or the tokens `"-inf"` / `"+inf"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BreakpointSpec {
    Number(f64),
    Token(String),
}

impl BreakpointSpec {
    fn resolve(&self) -> Result<f64> {
        match self {
            Self::Number(v) => Ok(*v),
            Self::Token(t) => match t.as_str() {
                "-inf" => Ok(f64::NEG_INFINITY),
                "+inf" | "inf" => Ok(f64::INFINITY),
                other => Err(Error::InvalidConfig(format!(
                    "unknown breakpoint token \"{other}\" (use \"-inf\"/\"+inf\" or a number)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetSpec {
    pub kind: String,
    /// Uniform level (default `0.5`).
    pub level: Option<f64>,
    pub breakpoints: Option<Vec<BreakpointSpec>>,
    pub values: Option<Vec<f64>>,
    /// Name of a registered custom density.
    pub name: Option<String>,
}

impl TargetSpec {
    pub fn build(&self) -> Result<TargetDensity> {
        match self.kind.as_str() {
            "uniform" => TargetDensity::uniform(self.level.unwrap_or(0.5)),
            "log_concave" => Ok(TargetDensity::log_concave()),
            "piecewise_constant" => {
                let (bs, vs) = match (&self.breakpoints, &self.values) {
                    (Some(b), Some(v)) => (b, v),
                    _ => {
                        return Err(Error::InvalidConfig(
                            "piecewise_constant target needs breakpoints and values".into(),
                        ))
                    }
                };
                let bs: Vec<f64> = bs.iter().map(|b| b.resolve()).collect::<Result<_>>()?;
                TargetDensity::piecewise_constant(bs, vs.clone())
            }
            "custom" => {
                let name = self.name.as_deref().ok_or_else(|| {
                    Error::InvalidConfig("custom target needs a name".into())
                })?;
                named_custom_target(name)
            }
            other => Err(Error::InvalidConfig(format!(
                "unknown target kind \"{other}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialSpec {
    pub kind: String,
    pub tau: Option<f64>,
    pub name: Option<String>,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self {
            kind: "barenblatt".into(),
            tau: Some(0.0625),
            name: None,
        }
    }
}

impl InitialSpec {
    pub fn build(&self) -> Result<InitialDensity> {
        match self.kind.as_str() {
            "barenblatt" => {
                let tau = self.tau.unwrap_or(0.0625);
                if !(tau > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "barenblatt initial density needs tau > 0, got {tau}"
                    )));
                }
                Ok(InitialDensity::Barenblatt { tau })
            }
            "uniform" => Ok(InitialDensity::UniformOnOmega),
            "custom" => {
                let name = self.name.as_deref().ok_or_else(|| {
                    Error::InvalidConfig("custom initial density needs a name".into())
                })?;
                named_custom_initial(name)
            }
            other => Err(Error::InvalidConfig(format!(
                "unknown initial density kind \"{other}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleTimesSpec {
    Count(usize),
    Times(Vec<f64>),
}

impl Default for SampleTimesSpec {
    fn default() -> Self {
        Self::Count(64)
    }
}

fn default_k() -> f64 {
    1e9
}
fn default_omega() -> [f64; 2] {
    [-1.0, 1.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    pub n: usize,
    #[serde(default)]
    pub epsilon: EpsilonSpec,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_omega")]
    pub omega: [f64; 2],
    pub t_final: f64,
    #[serde(default)]
    pub sample_times: SampleTimesSpec,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IntegratorSection {
    pub method: Option<String>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub max_step: Option<f64>,
    pub initial_step: Option<f64>,
}

impl IntegratorSection {
    pub fn build(&self) -> Result<IntegratorConfig> {
        let mut cfg = match self.method.as_deref() {
            None | Some("implicit_stiff") => IntegratorConfig::stiff(),
            Some("adaptive_explicit") => IntegratorConfig::explicit(),
            Some(other) => {
                return Err(Error::InvalidConfig(format!(
                    "unknown integrator method \"{other}\""
                )))
            }
        };
        if let Some(v) = self.rel_tol {
            cfg.rel_tol = v;
        }
        if let Some(v) = self.abs_tol {
            cfg.abs_tol = v;
        }
        if let Some(v) = self.max_step {
            cfg.max_step = v;
        }
        if let Some(v) = self.initial_step {
            cfg.initial_step = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One experiment run: target, initial density, discretization parameters,
/// and integrator settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub target: TargetSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    pub run: RunSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.n < 1 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if !(self.run.t_final > 0.0) || !self.run.t_final.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "t_final must be positive, got {}",
                self.run.t_final
            )));
        }
        if !(self.run.k >= 0.0) || !self.run.k.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "k must be nonnegative, got {}",
                self.run.k
            )));
        }
        self.omega()?;
        self.run.epsilon.resolve(self.run.n)?;
        self.target.build()?;
        self.initial.build()?;
        self.integrator.build()?;
        if let SampleTimesSpec::Times(ts) = &self.run.sample_times {
            if ts.is_empty() || ts.iter().any(|t| !t.is_finite() || *t < 0.0) {
                return Err(Error::InvalidConfig(
                    "sample_times must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn omega(&self) -> Result<Interval> {
        Interval::new(self.run.omega[0], self.run.omega[1])
    }

    pub fn epsilon(&self) -> Result<f64> {
        self.run.epsilon.resolve(self.run.n)
    }

    /// Default sampling: `t = 0` plus 64 log-spaced times spanning three
    /// decades up to `t_final`, dense enough to resolve the early
    /// exponential decay regime.
    pub fn sample_times(&self) -> Result<Vec<f64>> {
        match &self.run.sample_times {
            SampleTimesSpec::Count(c) => {
                let c = (*c).max(1);
                let t_final = self.run.t_final;
                let mut times = Vec::with_capacity(c + 1);
                times.push(0.0);
                if c == 1 {
                    times.push(t_final);
                } else {
                    let lo = t_final * 1e-3;
                    let ratio = (t_final / lo).powf(1.0 / (c as f64 - 1.0));
                    let mut t = lo;
                    for i in 0..c {
                        if i == c - 1 {
                            times.push(t_final);
                        } else {
                            times.push(t);
                        }
                        t *= ratio;
                    }
                }
                Ok(times)
            }
            SampleTimesSpec::Times(ts) => {
                let mut times = ts.clone();
                if times[0] != 0.0 {
                    times.insert(0, 0.0);
                }
                if times.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidConfig(
                        "sample_times must be strictly increasing".into(),
                    ));
                }
                Ok(times)
            }
        }
    }
}

/// Everything produced by one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub epsilon: f64,
    pub ensemble: ParticleEnsemble,
    pub trajectory: Trajectory,
    pub diagnostics: Vec<DiagnosticsRecord>,
    pub kernel_warning: Option<String>,
}

/// Builds the dynamics context and integrates, without diagnostics.
/// Returns the initial ensemble alongside the trajectory; sweeps use this
/// directly to skip per-sample observables.
pub fn simulate(cfg: &SimConfig) -> Result<(ParticleEnsemble, Trajectory, f64, Option<String>)> {
    cfg.validate()?;
    let omega = cfg.omega()?;
    let epsilon = cfg.epsilon()?;
    let mollifier = Mollifier::new(epsilon);
    let target = cfg.target.build()?;
    let kernels = KernelTable::new(target, mollifier);
    let warning = kernels.warning().map(str::to_owned);
    let ensemble = ParticleEnsemble::from_density(&cfg.initial.build()?, cfg.run.n, omega)?;
    let ctx = DynamicsContext::new(
        kernels,
        ConfiningPotential::new(cfg.run.k, omega),
        ExternalPotential::Zero,
        ensemble.weights().to_vec(),
    )?;
    let trajectory = integrate(
        &ctx,
        ensemble.positions(),
        &cfg.integrator.build()?,
        &cfg.sample_times()?,
    )?;
    Ok((ensemble, trajectory, epsilon, warning))
}

/// Full pipeline: initialize, integrate, and compute the diagnostics table
/// (KL divergence, energy, domain mass) at every sample time.
pub fn run(cfg: &SimConfig) -> Result<RunOutput> {
    let (ensemble, trajectory, epsilon, kernel_warning) = simulate(cfg)?;
    let omega = cfg.omega()?;
    let target = cfg.target.build()?;
    let mollifier = Mollifier::new(epsilon);
    let kernels = KernelTable::new(target.clone(), mollifier);
    let ctx = DynamicsContext::new(
        kernels,
        ConfiningPotential::new(cfg.run.k, omega),
        ExternalPotential::Zero,
        ensemble.weights().to_vec(),
    )?;
    let spec = QuadratureSpec::with_tols(1e-10, 1e-8);
    let mut diagnostics = Vec::with_capacity(trajectory.sample_times.len());
    for (t, state) in trajectory.sample_times.iter().zip(&trajectory.states) {
        let snapshot = KdeSnapshot::new(ensemble.with_positions(state.clone()), mollifier);
        let kl = kl_divergence(&snapshot, &target, omega, &spec)?;
        let energy = ctx.energy(state)?;
        let mass = snapshot.mass_in_interval(omega.lo, omega.hi, &spec)?;
        diagnostics.push(DiagnosticsRecord {
            time: *t,
            kl,
            energy,
            mass_in_omega: mass,
            l1_vs_reference: None,
        });
    }
    Ok(RunOutput {
        epsilon,
        ensemble,
        trajectory,
        diagnostics,
        kernel_warning,
    })
}

// ---- sweeps ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSection {
    #[serde(default = "default_n_values")]
    pub n_values: Vec<usize>,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_observable")]
    pub observable: String,
}

fn default_n_values() -> Vec<usize> {
    vec![20, 40, 80, 160, 320, 640]
}
fn default_n_max() -> usize {
    1280
}
fn default_observable() -> String {
    "l1_vs_reference".into()
}

/// A convergence study: the base run repeated over `n_values`, with the
/// error observable evaluated at `t_final` against either the `n_max`
/// reference run or the target density.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(flatten)]
    pub base: SimConfig,
    pub sweep: SweepSection,
}

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.sweep.n_values.len() < 2 {
            return Err(Error::InvalidConfig(
                "sweep needs at least two n values".into(),
            ));
        }
        if self.sweep.n_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "sweep n values must be strictly increasing".into(),
            ));
        }
        match self.sweep.observable.as_str() {
            "l1_vs_reference" => {
                if self.sweep.n_max <= *self.sweep.n_values.last().unwrap() {
                    return Err(Error::InvalidConfig(
                        "sweep n_max must exceed the largest n".into(),
                    ));
                }
            }
            "l1_vs_target" => {}
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown sweep observable \"{other}\""
                )))
            }
        }
        Ok(())
    }

    fn member(&self, n: usize) -> SimConfig {
        let mut cfg = self.base.clone();
        cfg.run.n = n;
        // only the end state is compared; skip interior samples
        cfg.run.sample_times = SampleTimesSpec::Times(vec![0.0, self.base.run.t_final]);
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub epsilon: f64,
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub order: f64,
    pub intercept: f64,
}

/// Runs the sweep: the `n_max` reference once (when needed), then each
/// member, fitting the convergence order of the configured L1 observable.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let omega = cfg.base.omega()?;
    let target = cfg.base.target.build()?;
    let spec = QuadratureSpec::with_tols(1e-10, 1e-8);

    let reference: Option<KdeSnapshot> = if cfg.sweep.observable == "l1_vs_reference" {
        let member = cfg.member(cfg.sweep.n_max);
        let (ensemble, traj, eps, _) = simulate(&member)?;
        let last = traj.states.last().expect("states nonempty").clone();
        Some(KdeSnapshot::new(
            ensemble.with_positions(last),
            Mollifier::new(eps),
        ))
    } else {
        None
    };

    let mut rows = Vec::with_capacity(cfg.sweep.n_values.len());
    for &n in &cfg.sweep.n_values {
        let member = cfg.member(n);
        let (ensemble, traj, eps, _) = simulate(&member)?;
        let last = traj.states.last().expect("states nonempty").clone();
        let snapshot = KdeSnapshot::new(ensemble.with_positions(last), Mollifier::new(eps));
        let error = match &reference {
            Some(reference) => crate::observables::l1_distance(
                |x| snapshot.eval(x),
                |x| reference.eval(x),
                omega,
                &spec,
            )?,
            None => {
                let spec = spec.clone().with_breakpoints(&target.finite_breakpoints());
                crate::observables::l1_distance(
                    |x| snapshot.eval(x),
                    |x| target.density(x),
                    omega,
                    &spec,
                )?
            }
        };
        rows.push(SweepRow {
            n,
            epsilon: eps,
            error,
        });
    }
    let (order, intercept) = fit_rows(&rows)?;
    Ok(SweepOutput {
        rows,
        order,
        intercept,
    })
}

/// Order fit over sweep rows; separated out so the plumbing can be tested
/// with synthetic error models.
pub fn fit_rows(rows: &[SweepRow]) -> Result<(f64, f64)> {
    let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    fit_convergence_order(&ns, &errors)
}

// ---- output files ---------------------------------------------------------

/// Floats are written with 17 significant digits so files round-trip
/// exactly and reruns are byte-identical.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_diagnostics(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut out = String::from("time,kl,energy,mass_in_omega,l1_vs_reference\n");
    for r in records {
        let l1 = r.l1_vs_reference.map(fmt_float).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_float(r.time),
            fmt_float(r.kl),
            fmt_float(r.energy),
            fmt_float(r.mass_in_omega),
            l1
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_trajectory(path: &Path, trajectory: &Trajectory, weights: &[f64]) -> Result<()> {
    let n = weights.len();
    let mut out = String::from("time");
    for i in 1..=n {
        out.push_str(&format!(",x_{i}"));
    }
    out.push('\n');
    for (t, state) in trajectory.sample_times.iter().zip(&trajectory.states) {
        out.push_str(&fmt_float(*t));
        for x in state {
            out.push(',');
            out.push_str(&fmt_float(*x));
        }
        out.push('\n');
    }
    out.push_str("weights");
    for m in weights {
        out.push(',');
        out.push_str(&fmt_float(*m));
    }
    out.push('\n');
    fs::write(path, out)?;
    Ok(())
}

pub fn write_sweep(dir: &Path, output: &SweepOutput) -> Result<()> {
    let mut table = String::from("n,epsilon,error\n");
    for r in &output.rows {
        table.push_str(&format!(
            "{},{},{}\n",
            r.n,
            fmt_float(r.epsilon),
            fmt_float(r.error)
        ));
    }
    fs::write(dir.join("sweep.csv"), table)?;
    let fit = format!(
        "order,intercept\n{},{}\n",
        fmt_float(output.order),
        fmt_float(output.intercept)
    );
    fs::write(dir.join("order.csv"), fit)?;
    Ok(())
}

pub fn write_run(dir: &Path, output: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_trajectory(
        &dir.join("trajectory.csv"),
        &output.trajectory,
        output.ensemble.weights(),
    )?;
    write_diagnostics(&dir.join("diagnostics.csv"), &output.diagnostics)?;
    Ok(())
}

// ---- named custom densities ------------------------------------------------

fn named_custom_target(name: &str) -> Result<TargetDensity> {
    match name {
        // gently varying bump, strictly inside (0.5, 0.6)
        "bump" => TargetDensity::custom("bump", |x: f64| 0.5 + 0.1 * (x * x).tanh(), 0.5, 0.6),
        other => Err(Error::InvalidConfig(format!(
            "unknown custom target \"{other}\" (available: bump)"
        ))),
    }
}

fn named_custom_initial(name: &str) -> Result<InitialDensity> {
    match name {
        // unit mass on (-1, 1)
        "cosine" => Ok(InitialDensity::Custom {
            name: "cosine".into(),
            density: std::sync::Arc::new(|x: f64| {
                if (-1.0..=1.0).contains(&x) {
                    0.5 * (1.0 + (std::f64::consts::PI * x).cos())
                } else {
                    0.0
                }
            }),
        }),
        other => Err(Error::InvalidConfig(format!(
            "unknown custom initial density \"{other}\" (available: cosine)"
        ))),
    }
}

// ---- CLI -------------------------------------------------------------------

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "blobsim",
    about = "Deterministic blob-method particle simulator on an interval",
    version
)]
struct Cli {
    /// Output directory (overrides the config's `output` field).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration and write trajectory.csv + diagnostics.csv.
    Run { config: PathBuf },
    /// Run a convergence sweep and write sweep.csv + order.csv.
    Sweep { config: PathBuf },
    /// Compare the config's analytic kernels against adaptive quadrature of
    /// the defining integrals (gate: max relative error <= 1e-7).
    KernelsCheck { config: PathBuf },
    /// Check the exact self-similar reference solution against the
    /// continuum equation by finite differences (gate: residual <= 1e-4).
    ExactCheck,
}

const EXIT_OK: i32 = 0;
const EXIT_INVALID: i32 = 1;
const EXIT_NUMERICAL: i32 = 2;

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) | Error::Io(_) => EXIT_INVALID,
        _ => EXIT_NUMERICAL,
    }
}

fn out_dir(flag: &Option<PathBuf>, cfg_out: Option<&PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| cfg_out.cloned())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_run(config: &Path, out_flag: &Option<PathBuf>) -> i32 {
    let cfg = match SimConfig::from_path(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let dir = out_dir(out_flag, cfg.run.output.as_ref());
    match run(&cfg) {
        Ok(output) => {
            if let Some(w) = &output.kernel_warning {
                eprintln!("warning: {w}");
            }
            if let Err(e) = write_run(&dir, &output) {
                eprintln!("error: {e}");
                return EXIT_INVALID;
            }
            let last = output.diagnostics.last().expect("diagnostics nonempty");
            println!(
                "run complete: n = {}, epsilon = {:.6}, {} steps, {} rhs evaluations",
                output.ensemble.len(),
                output.epsilon,
                output.trajectory.step_count,
                output.trajectory.rhs_eval_count
            );
            println!(
                "final t = {}: kl = {:.6e}, energy = {:.9}, mass in domain = {:.6}",
                last.time, last.kl, last.energy, last.mass_in_omega
            );
            println!("wrote {}", dir.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            // salvage whatever the integrator reached before failing
            if let Some(partial) = e.partial_trajectory() {
                if fs::create_dir_all(&dir).is_ok() {
                    if let Ok(ensemble) = cfg
                        .initial
                        .build()
                        .and_then(|i| ParticleEnsemble::from_density(&i, cfg.run.n, cfg.omega()?))
                    {
                        let _ = write_trajectory(
                            &dir.join("trajectory.csv"),
                            partial,
                            ensemble.weights(),
                        );
                    }
                    let _ = fs::write(dir.join("partial.marker"), format!("{e}\n"));
                }
            }
            exit_code_for(&e)
        }
    }
}

fn cmd_sweep(config: &Path, out_flag: &Option<PathBuf>) -> i32 {
    let cfg = match SweepConfig::from_path(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let dir = out_dir(out_flag, cfg.base.run.output.as_ref());
    match run_sweep(&cfg) {
        Ok(output) => {
            if let Err(e) = fs::create_dir_all(&dir).map_err(Error::from).and_then(|_| write_sweep(&dir, &output)) {
                eprintln!("error: {e}");
                return EXIT_INVALID;
            }
            for row in &output.rows {
                println!(
                    "n = {:>5}  epsilon = {:.6}  error = {:.6e}",
                    row.n, row.epsilon, row.error
                );
            }
            println!("fitted order {:.3} (intercept {:.3})", output.order, output.intercept);
            println!("wrote {}", dir.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn cmd_kernels_check(config: &Path) -> i32 {
    let cfg = match SimConfig::from_path(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let target = match cfg.target.build() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let epsilon = match cfg.epsilon() {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    match kernels_check(&target, epsilon) {
        Ok(worst) => {
            println!("max relative kernel error vs quadrature: {worst:.3e} (epsilon = {epsilon:.6})");
            if worst <= 1e-7 {
                println!("kernels-check PASS");
                EXIT_OK
            } else {
                println!("kernels-check FAIL (tolerance 1e-7)");
                EXIT_NUMERICAL
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

/// Maximum relative deviation between the kernel table (analytic when
/// available) and direct quadrature of the defining integrals, over the
/// standard 15 x 15 grid on [-1.5, 1.5]^2.
pub fn kernels_check(target: &TargetDensity, epsilon: f64) -> Result<f64> {
    let mollifier = Mollifier::new(epsilon);
    let table = KernelTable::new(target.clone(), mollifier);
    let mut worst: f64 = 0.0;
    for i in 0..15 {
        for j in 0..15 {
            let x = -1.5 + 3.0 * i as f64 / 14.0;
            let y = -1.5 + 3.0 * j as f64 / 14.0;
            let ga = table.g(x, y)?;
            let gq = crate::oracle::kernel_g_quadrature(target, mollifier, x, y)?;
            let fa = table.f(x, y)?;
            let fq = crate::oracle::kernel_f_quadrature(target, mollifier, x, y)?;
            worst = worst.max((ga - gq).abs() / gq.abs().max(1e-12));
            worst = worst.max((fa - fq).abs() / fq.abs().max(1e-12));
        }
    }
    Ok(worst)
}

fn cmd_exact_check() -> i32 {
    let sol = crate::oracle::ExactSolution::new(0.0625);
    let worst = sol.max_residual(&[0.0, 0.05, 0.1], 50, 1e-4);
    println!("max self-similar solution residual: {worst:.3e}");
    if worst <= 1e-4 {
        println!("exact-check PASS");
        EXIT_OK
    } else {
        println!("exact-check FAIL (tolerance 1e-4)");
        EXIT_NUMERICAL
    }
}

/// Entry point behind the `blobsim` binary. Returns the process exit code:
/// 0 on success, 1 on validation/usage errors, 2 on numerical failure.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            // flush so help text lands before the process exits
            let _ = std::io::stdout().flush();
            return code;
        }
    };
    match &cli.command {
        Command::Run { config } => cmd_run(config, &cli.out),
        Command::Sweep { config } => cmd_sweep(config, &cli.out),
        Command::KernelsCheck { config } => cmd_kernels_check(config),
        Command::ExactCheck => cmd_exact_check(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn epsilon_rule_reference_values() {
        assert_eq!(resolve_epsilon(1), 4.0);
        assert_relative_eq!(resolve_epsilon(101), 0.041474564197616734, max_relative = 1e-14);
        assert_relative_eq!(resolve_epsilon(640), 0.006667174423508401, max_relative = 1e-14);
    }

    #[test]
    fn epsilon_rule_strictly_decreasing() {
        let mut last = f64::INFINITY;
        for n in [1, 2, 5, 20, 101, 640, 1280, 5000] {
            let e = resolve_epsilon(n);
            assert!(e < last);
            last = e;
        }
    }

    fn minimal_config() -> &'static str {
        r#"
[target]
kind = "uniform"

[run]
n = 5
t_final = 0.01
k = 0.0
sample_times = 2

[integrator]
method = "adaptive_explicit"
"#
    }

    #[test]
    fn config_parses_with_defaults() {
        let cfg = SimConfig::from_toml_str(minimal_config()).unwrap();
        assert_eq!(cfg.run.n, 5);
        assert_eq!(cfg.run.omega, [-1.0, 1.0]);
        assert!(matches!(cfg.initial.kind.as_str(), "barenblatt"));
        let times = cfg.sample_times().unwrap();
        assert_eq!(times[0], 0.0);
        assert_eq!(*times.last().unwrap(), 0.01);
    }

    #[test]
    fn config_rejects_nonsense() {
        assert!(SimConfig::from_toml_str("not toml at all [").is_err());
        let bad_kind = minimal_config().replace("uniform", "gaussian");
        assert!(SimConfig::from_toml_str(&bad_kind).is_err());
        let bad_eps = minimal_config().replace("n = 5", "n = 5\nepsilon = \"tiny\"");
        assert!(SimConfig::from_toml_str(&bad_eps).is_err());
    }

    #[test]
    fn piecewise_config_accepts_inf_tokens() {
        let text = r#"
[target]
kind = "piecewise_constant"
breakpoints = ["-inf", -0.75, -0.25, 0.25, 0.75, "+inf"]
values = [0.3333333333333333, 0.6666666666666666, 0.3333333333333333, 0.6666666666666666, 0.3333333333333333]

[run]
n = 5
t_final = 0.01
"#;
        let cfg = SimConfig::from_toml_str(text).unwrap();
        let t = cfg.target.build().unwrap();
        assert_eq!(t.density(0.5), 2.0 / 3.0);
        assert_eq!(t.density(-5.0), 1.0 / 3.0);
    }

    #[test]
    fn stationary_single_particle_run() {
        let text = r#"
[target]
kind = "uniform"

[initial]
kind = "uniform"

[run]
n = 1
t_final = 0.5
k = 0.0
sample_times = 4

[integrator]
method = "adaptive_explicit"
"#;
        let cfg = SimConfig::from_toml_str(text).unwrap();
        let out = run(&cfg).unwrap();
        for state in &out.trajectory.states {
            assert_eq!(state[0], 0.0);
        }
        // KL of a stationary point mass stays constant over time
        let kl0 = out.diagnostics[0].kl;
        for d in &out.diagnostics {
            assert_relative_eq!(d.kl, kl0, max_relative = 1e-9);
            assert!(d.kl >= 0.0);
        }
    }

    #[test]
    fn synthetic_sweep_fit_plumbing() {
        let rows: Vec<SweepRow> = [10usize, 20, 40, 80]
            .iter()
            .map(|&n| SweepRow {
                n,
                epsilon: resolve_epsilon(n),
                error: 3.0 / n as f64,
            })
            .collect();
        let (order, _) = fit_rows(&rows).unwrap();
        assert_relative_eq!(order, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn float_formatting_round_trips() {
        for &v in &[0.1, -3.5e-7, 0.041474564197616734, 1e9, 0.0] {
            let s = fmt_float(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back, v, "{s}");
        }
    }
}
