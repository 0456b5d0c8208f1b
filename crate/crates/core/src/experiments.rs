//! Batch drivers behind the command-line tool.
//!
//! Every experiment starts from `μ⁰ = 4·1_[0,0.25]` on `[0, 1.5]`, sweeps a
//! list of diffusivities in parallel and returns plain tables. CSV assembly
//! happens after all workers have joined, so output is deterministic.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibria::{solve_equilibrium, DiffusiveEquilibrium};
use crate::error::{Error, Result};
use crate::fv::{initial_density, run_fv, FVConfig, FVTrajectory, MassTransferEvent};
use crate::measures::{DensityField, Grid1D, MixedMeasure};
use crate::particle::{self, ParticleSolverConfig, ParticleTrajectory};
use crate::potentials::{PotentialKind, PotentialSpec, DEFAULT_EPSILON};
use crate::transport::{w2_density_to_atoms, w2_mixed};

/// Times are matched to recorded snapshots up to this difference.
const TIME_MATCH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Early,
    Longrun,
    Minimizers,
    Rate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Early => "early",
            ExperimentKind::Longrun => "longrun",
            ExperimentKind::Minimizers => "minimizers",
            ExperimentKind::Rate => "rate",
        }
    }
}

fn potential_name(kind: PotentialKind) -> &'static str {
    match kind {
        PotentialKind::C0NewtonianQuadratic => "c0",
        PotentialKind::C2Regularized => "c2",
        PotentialKind::Zero => "zero",
    }
}

/// Fully resolved experiment parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub potential: PotentialKind,
    /// Core half-width of the C² kernel.
    pub epsilon: f64,
    /// Diffusivities, strictly decreasing.
    pub nu: Vec<f64>,
    pub m: f64,
    pub alpha: f64,
    /// Table times for `early` and `rate`.
    pub output_times: Vec<f64>,
    pub cells: usize,
    pub particles: usize,
    /// Snapshot spacing of `longrun`.
    pub snapshot_interval: f64,
    /// Horizon of the `longrun` finite-volume runs.
    pub t_end: f64,
    /// Horizon of the particle run that produces the plain equilibrium.
    pub particle_t_end: f64,
    pub out_dir: PathBuf,
    /// Seed for randomized checks; the shipped experiments are deterministic.
    pub seed: u64,
}

/// Partial configuration, as read from a JSON file or from flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub experiment: Option<ExperimentKind>,
    pub potential: Option<PotentialKind>,
    pub epsilon: Option<f64>,
    pub nu: Option<Vec<f64>>,
    pub m: Option<f64>,
    pub alpha: Option<f64>,
    pub output_times: Option<Vec<f64>>,
    pub cells: Option<usize>,
    pub particles: Option<usize>,
    pub snapshot_interval: Option<f64>,
    pub t_end: Option<f64>,
    pub particle_t_end: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl ConfigOverrides {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Field-wise merge in which `other` wins.
    pub fn merge(self, other: ConfigOverrides) -> Self {
        Self {
            experiment: other.experiment.or(self.experiment),
            potential: other.potential.or(self.potential),
            epsilon: other.epsilon.or(self.epsilon),
            nu: other.nu.or(self.nu),
            m: other.m.or(self.m),
            alpha: other.alpha.or(self.alpha),
            output_times: other.output_times.or(self.output_times),
            cells: other.cells.or(self.cells),
            particles: other.particles.or(self.particles),
            snapshot_interval: other.snapshot_interval.or(self.snapshot_interval),
            t_end: other.t_end.or(self.t_end),
            particle_t_end: other.particle_t_end.or(self.particle_t_end),
            out_dir: other.out_dir.or(self.out_dir),
            seed: other.seed.or(self.seed),
        }
    }
}

fn decades(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|k| 10f64.powi(-k)).collect()
}

impl ExperimentConfig {
    /// Defaults for an experiment and kernel.
    pub fn defaults(experiment: ExperimentKind, potential: PotentialKind) -> Self {
        let c2 = potential == PotentialKind::C2Regularized;
        let nu = match experiment {
            ExperimentKind::Early | ExperimentKind::Rate => decades(3, 7),
            ExperimentKind::Longrun if c2 => vec![1e-5, 1e-7],
            ExperimentKind::Longrun => vec![1e-4, 1e-6],
            ExperimentKind::Minimizers => decades(1, 6),
        };
        Self {
            experiment,
            potential,
            epsilon: DEFAULT_EPSILON,
            nu,
            m: 2.0,
            alpha: 1.0,
            output_times: if c2 { vec![0.5, 1.0, 5.0] } else { vec![0.1, 0.5, 3.0] },
            cells: 1500,
            particles: if experiment == ExperimentKind::Longrun { 400 } else { 1000 },
            snapshot_interval: 0.1,
            t_end: if c2 { 15.0 } else { 10.0 },
            particle_t_end: 200.0,
            out_dir: PathBuf::from("results"),
            seed: 0,
        }
    }

    /// Starts from the defaults for the requested experiment and kernel
    /// (early, C² when unspecified; C⁰ for minimizers) and applies overrides.
    pub fn resolve(o: ConfigOverrides) -> Result<Self> {
        let experiment = o.experiment.unwrap_or(ExperimentKind::Early);
        let default_potential = if experiment == ExperimentKind::Minimizers {
            PotentialKind::C0NewtonianQuadratic
        } else {
            PotentialKind::C2Regularized
        };
        let mut c = Self::defaults(experiment, o.potential.unwrap_or(default_potential));
        macro_rules! apply {
            ($($f:ident),*) => { $(if let Some(v) = o.$f { c.$f = v; })* };
        }
        apply!(epsilon, nu, m, alpha, output_times, cells, particles, snapshot_interval, t_end, particle_t_end, out_dir, seed);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Domain(msg));
        if self.nu.is_empty() {
            return bad("nu list is empty".into());
        }
        if self.nu.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return bad(format!("diffusivities must be finite and nonnegative: {:?}", self.nu));
        }
        if self.nu.windows(2).any(|w| w[1] >= w[0]) {
            return bad(format!("nu list must be strictly decreasing: {:?}", self.nu));
        }
        if self.output_times.is_empty() || self.output_times.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return bad(format!("output times must be positive: {:?}", self.output_times));
        }
        if self.output_times.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("output times must be strictly increasing: {:?}", self.output_times));
        }
        if !(self.m > 1.0) {
            return bad(format!("diffusion exponent m must exceed 1, got {}", self.m));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.cells == 0 || self.particles == 0 {
            return bad("cells and particles must be positive".into());
        }
        if !(self.snapshot_interval > 0.0 && self.t_end > 0.0 && self.particle_t_end >= self.t_end) {
            return bad(format!(
                "need snapshot interval > 0, t_end > 0 and particle_t_end >= t_end, got {}, {}, {}",
                self.snapshot_interval, self.t_end, self.particle_t_end
            ));
        }
        if self.experiment == ExperimentKind::Minimizers {
            if self.potential != PotentialKind::C0NewtonianQuadratic {
                return bad("the minimizer sweep is defined for the c0 kernel only".into());
            }
            if self.m != 2.0 || self.alpha != 1.0 {
                return bad("the minimizer sweep requires m = 2 and alpha = 1".into());
            }
            if self.nu.iter().any(|&v| v == 0.0) {
                return bad("the minimizer sweep requires nu > 0".into());
            }
        }
        self.spec().map(|_| ())
    }

    pub fn spec(&self) -> Result<PotentialSpec> {
        match self.potential {
            PotentialKind::C2Regularized => PotentialSpec::c2(self.epsilon),
            kind => Ok(PotentialSpec::from_kind(kind)),
        }
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::domain(self.cells)
    }

    fn fv_config(&self, nu: f64, t_end: f64, times: Vec<f64>) -> Result<FVConfig> {
        let mut cfg = FVConfig::new(self.spec()?, nu, t_end).with_output_times(times).with_grid(self.grid()?);
        cfg.alpha = self.alpha;
        cfg.m = self.m;
        Ok(cfg)
    }

    /// `k·Δ` for `k = 1, …` up to `t_end`.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let n = (self.t_end / self.snapshot_interval + 1e-9).floor() as usize;
        (1..=n).map(|k| k as f64 * self.snapshot_interval).collect()
    }

    fn file_stem(&self) -> String {
        format!("{}_{}", self.experiment.name(), potential_name(self.potential))
    }
}

fn at_time<'a, T>(times: &[f64], items: &'a [T], t: f64) -> Option<&'a T> {
    times.iter().position(|&s| (s - t).abs() <= TIME_MATCH).map(|k| &items[k])
}

fn wrap(nu: f64, t: f64) -> impl Fn(Error) -> Error {
    move |e| Error::Run { nu, t, source: Box::new(e) }
}

fn sci(v: f64) -> String {
    format!("{v:.5e}")
}

fn opt_sci(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), sci)
}

/// Conservation and dissipation record of one finite-volume run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FvDiagnostics {
    pub nu: f64,
    pub steps: usize,
    pub max_mass_drift: f64,
    /// Smallest cell value over all snapshots.
    pub min_density: f64,
    /// Largest `(E_k − E_{k−1})/(t_k − t_{k−1})` between snapshots.
    pub max_energy_rise_rate: f64,
}

impl FvDiagnostics {
    fn of(nu: f64, traj: &FVTrajectory) -> Self {
        let min_density = traj
            .snapshots
            .iter()
            .flat_map(|s| s.values.iter().copied())
            .fold(f64::INFINITY, f64::min);
        Self {
            nu,
            steps: traj.steps,
            max_mass_drift: traj.max_mass_drift,
            min_density,
            max_energy_rise_rate: rise_rate(&traj.times, traj.energies.iter().map(|e| e.total)),
        }
    }
}

fn rise_rate(times: &[f64], energies: impl Iterator<Item = f64>) -> f64 {
    let e: Vec<f64> = energies.collect();
    (1..e.len())
        .map(|k| (e[k] - e[k - 1]) / (times[k] - times[k - 1]))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn run_particles(cfg: &ExperimentConfig, t_end: f64, times: Vec<f64>) -> Result<ParticleTrajectory> {
    let pcfg = ParticleSolverConfig::new(cfg.spec()?, t_end).with_output_times(times).with_particles(cfg.particles);
    particle::run(&particle::initial_ensemble(cfg.particles)?, &pcfg).map_err(wrap(0.0, t_end))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EarlyRow {
    pub nu: f64,
    pub t: f64,
    pub w2: f64,
}

/// `d_W(μ_ν(t), μ(t))` at the table times for every `ν`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EarlyTable {
    pub potential: PotentialKind,
    pub m: f64,
    pub rows: Vec<EarlyRow>,
    pub fv: Vec<FvDiagnostics>,
    pub particle_energy_rise_rate: f64,
}

impl EarlyTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("nu,t,w2\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", sci(r.nu), sci(r.t), sci(r.w2));
        }
        s
    }

    pub fn w2(&self, nu: f64, t: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.nu == nu && (r.t - t).abs() <= TIME_MATCH)
            .map(|r| r.w2)
    }

    pub fn times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !ts.iter().any(|&t| (t - r.t).abs() <= TIME_MATCH) {
                ts.push(r.t);
            }
        }
        ts
    }

    pub fn nus(&self) -> Vec<f64> {
        let mut ns: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !ns.contains(&r.nu) {
                ns.push(r.nu);
            }
        }
        ns
    }
}

pub fn run_early(cfg: &ExperimentConfig) -> Result<EarlyTable> {
    cfg.validate()?;
    let times = cfg.output_times.clone();
    let t_end = *times.last().expect("validated nonempty");
    let plain = run_particles(cfg, t_end, times.clone())?;
    let grid = cfg.grid()?;
    let initial = initial_density(grid)?;
    let per_nu: Vec<Result<(Vec<EarlyRow>, FvDiagnostics)>> = cfg
        .nu
        .par_iter()
        .map(|&nu| {
            let fcfg = cfg.fv_config(nu, t_end, times.clone())?;
            let traj = run_fv(&initial, &fcfg).map_err(wrap(nu, t_end))?;
            let mut rows = Vec::with_capacity(times.len());
            for &t in &times {
                let rho = traj.snapshot_at(t).ok_or_else(|| missing(nu, t))?;
                let parts = plain.state_at(t).ok_or_else(|| missing(nu, t))?;
                let (w2, _) = w2_density_to_atoms(rho, parts).map_err(wrap(nu, t))?;
                rows.push(EarlyRow { nu, t, w2 });
            }
            Ok((rows, FvDiagnostics::of(nu, &traj)))
        })
        .collect();
    let mut rows = Vec::new();
    let mut fv = Vec::new();
    for r in per_nu {
        let (rs, d) = r?;
        rows.extend(rs);
        fv.push(d);
    }
    Ok(EarlyTable {
        potential: cfg.potential,
        m: cfg.m,
        rows,
        fv,
        particle_energy_rise_rate: rise_rate(&plain.times, plain.energies.iter().copied()),
    })
}

fn missing(nu: f64, t: f64) -> Error {
    Error::Run { nu, t, source: Box::new(Error::Precondition("no snapshot recorded at this time".into())) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LongrunRow {
    pub nu: f64,
    pub t: f64,
    pub w2_to_particle: f64,
    pub w2_to_mubar: f64,
    pub energy_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LongrunSummary {
    pub nu: f64,
    pub first_transfer: Option<f64>,
    /// Snapshot time at which `d_W(μ_ν(t), μ̄)` is smallest.
    pub argmin_w2_to_mubar: f64,
    pub min_w2_to_mubar: f64,
    pub final_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongrunReport {
    pub potential: PotentialKind,
    pub snapshot_interval: f64,
    pub rows: Vec<LongrunRow>,
    pub events: Vec<(f64, MassTransferEvent)>,
    pub summaries: Vec<LongrunSummary>,
    /// Plain equilibrium `μ̄`: the final particle state, nearby particles merged.
    #[serde(skip)]
    pub mubar: MixedMeasure,
    /// Time at which the particle run met its equilibrium tolerance, if ever.
    pub particle_equilibrium: Option<f64>,
    /// Energy of the particle run at the end of its horizon.
    pub plain_plateau_energy: f64,
    pub particle_summary_csv: String,
    pub fv: Vec<FvDiagnostics>,
    pub particle_energy_rise_rate: f64,
}

impl LongrunReport {
    pub fn series_csv(&self) -> String {
        let mut s = String::from("nu,t,w2_to_particle,w2_to_mubar,energy_total\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                sci(r.nu),
                sci(r.t),
                sci(r.w2_to_particle),
                sci(r.w2_to_mubar),
                sci(r.energy_total)
            );
        }
        s
    }

    pub fn events_csv(&self) -> String {
        let mut s = String::from("nu,time,boundary_mass_before,boundary_mass_after\n");
        for (nu, e) in &self.events {
            let _ = writeln!(s, "{},{},{},{}", sci(*nu), sci(e.time), sci(e.before), sci(e.after));
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "nu,first_transfer,argmin_w2_to_mubar,min_w2_to_mubar,final_energy,plain_plateau_energy,particle_equilibrium\n",
        );
        for r in &self.summaries {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                sci(r.nu),
                opt_sci(r.first_transfer),
                sci(r.argmin_w2_to_mubar),
                sci(r.min_w2_to_mubar),
                sci(r.final_energy),
                sci(self.plain_plateau_energy),
                opt_sci(self.particle_equilibrium)
            );
        }
        s
    }

    pub fn summary(&self, nu: f64) -> Option<&LongrunSummary> {
        self.summaries.iter().find(|s| s.nu == nu)
    }

    /// `d_W(μ_ν(t), μ̄)` series for one diffusivity.
    pub fn mubar_series(&self, nu: f64) -> Vec<(f64, f64)> {
        self.rows.iter().filter(|r| r.nu == nu).map(|r| (r.t, r.w2_to_mubar)).collect()
    }
}

pub fn run_longrun(cfg: &ExperimentConfig) -> Result<LongrunReport> {
    cfg.validate()?;
    let snaps = cfg.snapshot_times();
    let mut ptimes = snaps.clone();
    if ptimes.last().map_or(true, |&t| t < cfg.particle_t_end) {
        ptimes.push(cfg.particle_t_end);
    }
    let plain = run_particles(cfg, cfg.particle_t_end, ptimes)?;
    let mubar = particle::to_measure(plain.final_state());
    let grid = cfg.grid()?;
    let initial = initial_density(grid)?;

    type Worker = (Vec<LongrunRow>, Vec<MassTransferEvent>, LongrunSummary, FvDiagnostics);
    let per_nu: Vec<Result<Worker>> = cfg
        .nu
        .par_iter()
        .map(|&nu| {
            let fcfg = cfg.fv_config(nu, cfg.t_end, snaps.clone())?;
            let traj = run_fv(&initial, &fcfg).map_err(wrap(nu, cfg.t_end))?;
            let mut rows = Vec::with_capacity(traj.times.len());
            for (k, &t) in traj.times.iter().enumerate() {
                let rho: &DensityField = &traj.snapshots[k];
                let parts = at_time(&plain.times, &plain.states, t).ok_or_else(|| missing(nu, t))?;
                let (w_p, _) = w2_density_to_atoms(rho, parts).map_err(wrap(nu, t))?;
                let w_bar = w2_mixed(&rho.clone().into_measure(), &mubar).map_err(wrap(nu, t))?;
                rows.push(LongrunRow { nu, t, w2_to_particle: w_p, w2_to_mubar: w_bar, energy_total: traj.energies[k].total });
            }
            let (argmin, min) = rows
                .iter()
                .skip(1)
                .fold((f64::NAN, f64::INFINITY), |acc, r| if r.w2_to_mubar < acc.1 { (r.t, r.w2_to_mubar) } else { acc });
            let summary = LongrunSummary {
                nu,
                first_transfer: traj.first_transfer_time(),
                argmin_w2_to_mubar: argmin,
                min_w2_to_mubar: min,
                final_energy: traj.energies.last().expect("initial energy recorded").total,
            };
            Ok((rows, traj.events.clone(), summary, FvDiagnostics::of(nu, &traj)))
        })
        .collect();

    let mut report = LongrunReport {
        potential: cfg.potential,
        snapshot_interval: cfg.snapshot_interval,
        rows: Vec::new(),
        events: Vec::new(),
        summaries: Vec::new(),
        mubar,
        particle_equilibrium: plain.equilibrium_time,
        plain_plateau_energy: *plain.energies.last().expect("initial energy recorded"),
        particle_summary_csv: plain.summary_csv(),
        fv: Vec::new(),
        particle_energy_rise_rate: rise_rate(&plain.times, plain.energies.iter().copied()),
    };
    for r in per_nu {
        let (rows, events, summary, diag) = r?;
        report.rows.extend(rows);
        report.events.extend(events.into_iter().map(|e| (summary.nu, e)));
        report.summaries.push(summary);
        report.fv.push(diag);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinimizerRow {
    pub equilibrium: DiffusiveEquilibrium,
    pub w2_to_plain_minimizer: f64,
    /// `c1·e^{L/s}`.
    pub layer_at_end: f64,
    /// `c1·e^{(L−10⁻²)/s}`.
    pub layer_near_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimizerTable {
    pub rows: Vec<MinimizerRow>,
    /// First diffusivity the solver rejected as ill-conditioned; the sweep stops there.
    pub truncated_at: Option<(f64, String)>,
}

impl MinimizerTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("nu,c1,c2,L,mass_residual,w2_to_plain_minimizer,c1_exp_L,c1_exp_L_minus_0.01\n");
        for r in &self.rows {
            let e = &r.equilibrium;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                sci(e.nu),
                sci(e.c1),
                sci(e.c2),
                sci(e.length),
                sci(e.mass() - 1.0),
                sci(r.w2_to_plain_minimizer),
                sci(r.layer_at_end),
                sci(r.layer_near_end)
            );
        }
        s
    }
}

pub fn run_minimizers(cfg: &ExperimentConfig) -> Result<MinimizerTable> {
    cfg.validate()?;
    let mut solved = Vec::new();
    let mut truncated_at = None;
    for &nu in &cfg.nu {
        match solve_equilibrium(nu, None) {
            Ok(e) => solved.push(e),
            Err(e @ Error::Conditioning { .. }) => {
                truncated_at = Some((nu, e.to_string()));
                break;
            }
            Err(e) => return Err(wrap(nu, f64::INFINITY)(e)),
        }
    }
    let rows = solved
        .par_iter()
        .map(|e| {
            Ok(MinimizerRow {
                equilibrium: *e,
                w2_to_plain_minimizer: e.w2_to_plain_minimizer().map_err(wrap(e.nu, f64::INFINITY))?,
                layer_at_end: e.growing_mode(e.length),
                layer_near_end: e.growing_mode(e.length - 1e-2),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MinimizerTable { rows, truncated_at })
}

/// `β = min{α − dm/(d+2), 1/(d+2)}`.
pub fn beta(d: usize, alpha: f64, m: f64) -> f64 {
    let d = d as f64;
    (alpha - d * m / (d + 2.0)).min(1.0 / (d + 2.0))
}

/// Least-squares fit of `log w2` against `log ν` at one table time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate {
    pub t: f64,
    pub slope: f64,
    pub intercept: f64,
    pub beta: f64,
    /// `β/2`, the exponent of the upper bound on `d_W`.
    pub bound_exponent: f64,
    pub points: usize,
    /// False when `w2` is not strictly decreasing as `ν` decreases.
    pub monotone: bool,
}

pub fn estimate_rate(rows: &[EarlyRow], t: f64, alpha: f64, m: f64) -> Result<RateEstimate> {
    let mut pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| (r.t - t).abs() <= TIME_MATCH)
        .map(|r| (r.nu, r.w2))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Precondition(format!("need at least 3 diffusivities at t = {t}, got {}", pts.len())));
    }
    if pts.iter().any(|&(nu, w)| !(nu > 0.0 && w > 0.0)) {
        return Err(Error::Domain(format!("log-log fit needs positive nu and w2 at t = {t}")));
    }
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let monotone = pts.windows(2).all(|w| w[1].1 < w[0].1);
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    if !slope.is_finite() {
        return Err(Error::Domain(format!("degenerate fit at t = {t}")));
    }
    let b = beta(1, alpha, m);
    Ok(RateEstimate { t, slope, intercept: my - slope * mx, beta: b, bound_exponent: 0.5 * b, points: pts.len(), monotone })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub early: EarlyTable,
    pub estimates: Vec<RateEstimate>,
}

impl RateReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,slope,intercept,beta,beta_half,points,monotone\n");
        for r in &self.estimates {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                sci(r.t),
                sci(r.slope),
                sci(r.intercept),
                sci(r.beta),
                sci(r.bound_exponent),
                r.points,
                r.monotone
            );
        }
        s
    }
}

pub fn run_rate(cfg: &ExperimentConfig) -> Result<RateReport> {
    let early = run_early(cfg)?;
    let estimates = early
        .times()
        .into_iter()
        .map(|t| estimate_rate(&early.rows, t, cfg.alpha, cfg.m))
        .collect::<Result<Vec<_>>>()?;
    Ok(RateReport { early, estimates })
}

/// Outcome of any experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Report {
    Early(EarlyTable),
    Longrun(LongrunReport),
    Minimizers(MinimizerTable),
    Rate(RateReport),
}

pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    Ok(match cfg.experiment {
        ExperimentKind::Early => Report::Early(run_early(cfg)?),
        ExperimentKind::Longrun => Report::Longrun(run_longrun(cfg)?),
        ExperimentKind::Minimizers => Report::Minimizers(run_minimizers(cfg)?),
        ExperimentKind::Rate => Report::Rate(run_rate(cfg)?),
    })
}

impl Report {
    /// `(file name, contents)` pairs, one table per file.
    pub fn files(&self, cfg: &ExperimentConfig) -> Vec<(String, String)> {
        let stem = cfg.file_stem();
        match self {
            Report::Early(t) => vec![(format!("{stem}.csv"), t.to_csv())],
            Report::Longrun(r) => vec![
                (format!("{stem}.csv"), r.series_csv()),
                (format!("{stem}_events.csv"), r.events_csv()),
                (format!("{stem}_summary.csv"), r.summary_csv()),
                (format!("{stem}_particles.csv"), r.particle_summary_csv.clone()),
                (format!("{stem}_mubar.csv"), r.mubar.to_csv_string()),
            ],
            Report::Minimizers(t) => vec![(format!("{stem}.csv"), t.to_csv())],
            Report::Rate(r) => vec![
                (format!("{stem}.csv"), r.to_csv()),
                (format!("{stem}_table.csv"), r.early.to_csv()),
            ],
        }
    }

    /// Writes every table into `dir`, creating it if needed.
    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (name, body) in self.files(cfg) {
            let p = dir.join(name);
            fs::write(&p, body)?;
            paths.push(p);
        }
        Ok(paths)
    }
}
