//! Particle method for the plain aggregation model on an interval.
//!
//! Each particle moves with `v_i = −Σ_j w_j K'(x_i − x_j)`, projected so
//! that a particle sitting on an endpoint cannot be pushed out of the domain
//! (slip, no-flux: in 1-D the tangential part of an outward velocity is 0).
//! Time stepping is forward Euler followed by clamping to the domain.

use serde::Serialize;

use crate::energy::interaction_energy;
use crate::error::{Error, Result};
use crate::measures::{Grid1D, MixedMeasure, ParticleEnsemble};
use crate::potentials::{PotentialKind, PotentialSpec};

/// Particles closer than this are reported as one atom when exported.
pub const CLUSTER_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleSolverConfig {
    pub n_particles: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Run stops once the largest projected speed drops below this.
    pub equilibrium_tol: f64,
    pub potential: PotentialSpec,
    /// Only the bounds are used.
    pub domain: Grid1D,
    /// Snapshot times in `(0, t_end]`; the initial state is always recorded.
    pub output_times: Vec<f64>,
}

impl ParticleSolverConfig {
    pub fn new(potential: PotentialSpec, t_end: f64) -> Self {
        Self {
            n_particles: 200,
            dt: 1e-3,
            t_end,
            equilibrium_tol: 1e-8,
            potential,
            domain: Grid1D::default(),
            output_times: vec![t_end],
        }
    }

    pub fn with_output_times(mut self, times: Vec<f64>) -> Self {
        self.output_times = times;
        self
    }

    pub fn with_particles(mut self, n: usize) -> Self {
        self.n_particles = n;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Domain(format!("time step must be positive, got {}", self.dt)));
        }
        if self.n_particles == 0 {
            return Err(Error::Domain("need at least one particle".into()));
        }
        if !(self.equilibrium_tol > 0.0) {
            return Err(Error::Domain("equilibrium tolerance must be positive".into()));
        }
        if self.output_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("output times must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParticleTrajectory {
    pub times: Vec<f64>,
    #[serde(skip)]
    pub states: Vec<ParticleEnsemble>,
    pub energies: Vec<f64>,
    pub max_speeds: Vec<f64>,
    /// Time at which the projected speed fell below tolerance, if it did.
    pub equilibrium_time: Option<f64>,
}

impl ParticleTrajectory {
    /// Snapshot recorded at time `t` (matched to within 1e-9).
    pub fn state_at(&self, t: f64) -> Option<&ParticleEnsemble> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9).map(|k| &self.states[k])
    }

    pub fn final_state(&self) -> &ParticleEnsemble {
        self.states.last().expect("trajectory always holds the initial state")
    }

    /// `t,energy,max_speed` rows.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("t,energy,max_speed\n");
        for k in 0..self.times.len() {
            s.push_str(&format!("{:.5e},{:.5e},{:.5e}\n", self.times[k], self.energies[k], self.max_speeds[k]));
        }
        s
    }
}

/// `n` equal-weight particles at the mid-quantiles of `4·1_[0, 0.25]`.
pub fn initial_ensemble(n: usize) -> Result<ParticleEnsemble> {
    ParticleEnsemble::mid_quantiles_uniform(n, 0.0, 0.25)
}

/// Unprojected velocities by direct O(N²) summation.
pub fn velocities(e: &ParticleEnsemble, spec: &PotentialSpec) -> Vec<f64> {
    let x = e.positions();
    let w = e.weights();
    x.iter()
        .map(|&xi| {
            let s: f64 = x.iter().zip(w).map(|(&xj, &wj)| wj * spec.eval_dk(xi - xj)).sum();
            -s
        })
        .collect()
}

/// Same field as [`velocities`], using that both kernels are `x + sign(x)φ'(|x|)`
/// with `φ' ≡ −½` outside the core radius. Positions must be sorted. Cost is
/// O(N·k) with k the number of neighbours inside the core.
pub fn velocities_sorted(e: &ParticleEnsemble, spec: &PotentialSpec) -> Vec<f64> {
    let x = e.positions();
    let w = e.weights();
    let n = x.len();
    if spec.kind == PotentialKind::Zero {
        return vec![0.0; n];
    }
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &wi in w {
        prefix.push(prefix.last().unwrap() + wi);
    }
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + w[i];
    }
    let total = prefix[n];
    let moment: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
    let core = spec.core_radius();

    let mut out = vec![0.0; n];
    let (mut tie_lo, mut tie_hi) = (0usize, 0usize);
    let (mut near_lo, mut near_hi) = (0usize, 0usize);
    for i in 0..n {
        let xi = x[i];
        while x[tie_lo] < xi {
            tie_lo += 1;
        }
        tie_hi = tie_hi.max(i);
        while tie_hi < n && x[tie_hi] == xi {
            tie_hi += 1;
        }
        let below = prefix[tie_lo];
        let above = suffix[tie_hi];
        let mut v = -(xi * total - moment) + 0.5 * (below - above);
        if core > 0.0 {
            while xi - x[near_lo] > core {
                near_lo += 1;
            }
            near_hi = near_hi.max(i);
            while near_hi < n && x[near_hi] - xi <= core {
                near_hi += 1;
            }
            let mut corr = 0.0;
            for j in near_lo..near_hi {
                let d = xi - x[j];
                if d != 0.0 {
                    let r = d.abs();
                    let c = r * r * r / (4.0 * core * core * core) - 3.0 * r / (4.0 * core) + 0.5;
                    corr += if d > 0.0 { w[j] * c } else { -w[j] * c };
                }
            }
            v -= corr;
        }
        out[i] = v;
    }
    out
}

/// Tangential projection of a velocity at `x`: outward velocities on an
/// endpoint become 0, everything else passes through.
pub fn project(x: f64, v: f64, left: f64, right: f64) -> Result<f64> {
    if !(x >= left && x <= right) {
        return Err(Error::Precondition(format!("position {x} outside [{left}, {right}]")));
    }
    if (x == left && v < 0.0) || (x == right && v > 0.0) {
        Ok(0.0)
    } else {
        Ok(v)
    }
}

fn projected_velocities(e: &ParticleEnsemble, cfg: &ParticleSolverConfig) -> Vec<f64> {
    let (l, r) = (cfg.domain.left, cfg.domain.right);
    velocities_sorted(e, &cfg.potential)
        .into_iter()
        .zip(e.positions())
        .map(|(v, &x)| project(x, v, l, r).expect("particles are clamped into the domain"))
        .collect()
}

fn advance(e: &ParticleEnsemble, v: &[f64], dt: f64, cfg: &ParticleSolverConfig) -> ParticleEnsemble {
    let (l, r) = (cfg.domain.left, cfg.domain.right);
    let positions = e.positions().iter().zip(v).map(|(&x, &vi)| (x + dt * vi).clamp(l, r)).collect();
    let mut next = e.clone();
    next.set_positions(positions);
    next
}

/// One forward-Euler step of size `cfg.dt`.
pub fn step(e: &ParticleEnsemble, cfg: &ParticleSolverConfig) -> ParticleEnsemble {
    let v = projected_velocities(e, cfg);
    advance(e, &v, cfg.dt, cfg)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn ensemble_energy(e: &ParticleEnsemble, spec: &PotentialSpec) -> f64 {
    interaction_energy(&e.to_measure(0.0), spec)
}

/// Integrates to `t_end`, or until the projected speed is below tolerance.
/// After an early equilibrium the remaining output times receive the frozen
/// state.
pub fn run(initial: &ParticleEnsemble, cfg: &ParticleSolverConfig) -> Result<ParticleTrajectory> {
    cfg.validate()?;
    let (l, r) = (cfg.domain.left, cfg.domain.right);
    if initial.positions().iter().any(|&x| x < l || x > r) {
        return Err(Error::Precondition("initial particles outside the domain".into()));
    }
    let mut outputs: Vec<f64> = cfg.output_times.iter().copied().filter(|&t| t > 0.0 && t <= cfg.t_end).collect();
    if outputs.last().map_or(true, |&t| t < cfg.t_end) {
        outputs.push(cfg.t_end);
    }

    let mut state = initial.clone();
    let mut v = projected_velocities(&state, cfg);
    let mut traj = ParticleTrajectory {
        times: vec![0.0],
        energies: vec![ensemble_energy(&state, &cfg.potential)],
        max_speeds: vec![max_abs(&v)],
        states: vec![state.clone()],
        equilibrium_time: None,
    };
    let mut t = 0.0;
    for &t_out in &outputs {
        while t < t_out && traj.equilibrium_time.is_none() {
            let remaining = t_out - t;
            let dt = if remaining <= cfg.dt * (1.0 + 1e-9) { remaining } else { cfg.dt };
            state = advance(&state, &v, dt, cfg);
            t = if dt == remaining { t_out } else { t + dt };
            v = projected_velocities(&state, cfg);
            if max_abs(&v) < cfg.equilibrium_tol {
                traj.equilibrium_time = Some(t);
            }
        }
        traj.times.push(t_out);
        traj.energies.push(ensemble_energy(&state, &cfg.potential));
        traj.max_speeds.push(max_abs(&v));
        traj.states.push(state.clone());
    }
    Ok(traj)
}

/// Exported measure of a particle state with nearby particles merged.
pub fn to_measure(e: &ParticleEnsemble) -> MixedMeasure {
    e.to_measure(CLUSTER_TOLERANCE)
}
