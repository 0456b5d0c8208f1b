//! Finite-volume solver for the diffusive aggregation model.
//!
//! Cell-centered upwind scheme on the full velocity
//! `u = −∂ₓ(ν^α m/(m−1) ρ^{m−1} + K∗ρ)`, explicit Euler in time with an
//! adaptive step and zero flux through both domain endpoints. Mass is
//! conserved by construction (telescoping fluxes) and the step restriction
//! keeps every cell nonnegative.

use serde::Serialize;

use crate::energy::{diffusive_energy, EnergyBreakdown};
use crate::error::{Error, Result};
use crate::measures::{indicator_density, DensityField, Grid1D};
use crate::potentials::{KernelTable, PotentialSpec};

/// Fraction of the total mass the boundary layer must lose for the drop to
/// count as a transfer.
pub const TRANSFER_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FVConfig {
    pub grid: Grid1D,
    pub nu: f64,
    pub alpha: f64,
    pub m: f64,
    pub cfl: f64,
    pub t_end: f64,
    pub potential: PotentialSpec,
    pub output_times: Vec<f64>,
}

impl FVConfig {
    /// Default grid, `α = 1`, `m = 2`, CFL 0.4 and a single output at `t_end`.
    pub fn new(potential: PotentialSpec, nu: f64, t_end: f64) -> Self {
        Self {
            grid: Grid1D::default(),
            nu,
            alpha: 1.0,
            m: 2.0,
            cfl: 0.4,
            t_end,
            potential,
            output_times: vec![t_end],
        }
    }

    pub fn with_output_times(mut self, times: Vec<f64>) -> Self {
        self.output_times = times;
        self
    }

    pub fn with_grid(mut self, grid: Grid1D) -> Self {
        self.grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(Error::Domain(format!("diffusivity must be nonnegative, got {}", self.nu)));
        }
        if !(self.m > 1.0) {
            return Err(Error::Domain(format!("diffusion exponent m must exceed 1, got {}", self.m)));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Domain(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        if !(self.t_end >= 0.0) {
            return Err(Error::Domain(format!("end time must be nonnegative, got {}", self.t_end)));
        }
        if self.output_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("output times must be strictly increasing".into()));
        }
        Ok(())
    }

    fn pressure_coefficient(&self) -> f64 {
        if self.nu == 0.0 {
            0.0
        } else {
            self.nu.powf(self.alpha) * self.m / (self.m - 1.0)
        }
    }
}

/// Initial datum `4·1_[0, 0.25]` on `grid`.
pub fn initial_density(grid: Grid1D) -> Result<DensityField> {
    indicator_density(0.0, 0.25, 4.0, grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassTransferEvent {
    pub time: f64,
    /// Boundary-layer mass the drop is measured from.
    pub before: f64,
    /// Boundary-layer mass at `time`.
    pub after: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FVTrajectory {
    pub times: Vec<f64>,
    #[serde(skip)]
    pub snapshots: Vec<DensityField>,
    pub energies: Vec<EnergyBreakdown>,
    /// Last step size taken before each snapshot (0 for the initial state).
    pub dts: Vec<f64>,
    pub events: Vec<MassTransferEvent>,
    pub gap_tol: f64,
    pub layer_width: f64,
    pub max_mass_drift: f64,
    pub steps: usize,
}

impl FVTrajectory {
    pub fn snapshot_at(&self, t: f64) -> Option<&DensityField> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9).map(|k| &self.snapshots[k])
    }

    pub fn final_snapshot(&self) -> &DensityField {
        self.snapshots.last().expect("trajectory always holds the initial state")
    }

    pub fn first_transfer_time(&self) -> Option<f64> {
        self.events.first().map(|e| e.time)
    }

    /// `t,dt,mass,energy_total,energy_entropy,boundary_mass` rows.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("t,dt,mass,energy_total,energy_entropy,boundary_mass\n");
        for k in 0..self.times.len() {
            let rho = &self.snapshots[k];
            let bm = near_wall_mass(rho, self.layer_width);
            s.push_str(&format!(
                "{:.5e},{:.5e},{:.5e},{:.5e},{:.5e},{:.5e}\n",
                self.times[k], self.dts[k], rho.mass(), self.energies[k].total, self.energies[k].entropy, bm
            ));
        }
        s
    }
}

/// Holds the kernel table and scratch buffers for repeated steps on one grid.
#[derive(Debug, Clone)]
pub struct FvSolver {
    cfg: FVConfig,
    table: KernelTable,
    xi: Vec<f64>,
    u: Vec<f64>,
    flux: Vec<f64>,
}

impl FvSolver {
    pub fn new(cfg: FVConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.grid.n_cells;
        let table = KernelTable::new(&cfg.potential, n, cfg.grid.h());
        Ok(Self { cfg, table, xi: vec![0.0; n], u: vec![0.0; n.saturating_sub(1)], flux: vec![0.0; n + 1] })
    }

    pub fn config(&self) -> &FVConfig {
        &self.cfg
    }

    /// Fills `self.u[e]` for interior edges `e` in `edges` (edge `e` sits
    /// between cells `e` and `e + 1`), treating `ρ` as zero outside `support`.
    fn fill_velocities(&mut self, rho: &[f64], support: std::ops::Range<usize>, edges: std::ops::Range<usize>) {
        let h = self.cfg.grid.h();
        let cells = edges.start..edges.end + 1;
        self.table.convolve_window(rho, support, cells.clone(), &mut self.xi);
        let p = self.cfg.pressure_coefficient();
        if p > 0.0 {
            let m = self.cfg.m;
            for i in cells {
                let r = rho[i];
                let pow = if m == 2.0 { r } else if r > 0.0 { r.powf(m - 1.0) } else { 0.0 };
                self.xi[i] += p * pow;
            }
        }
        for e in edges {
            self.u[e] = -(self.xi[e + 1] - self.xi[e]) / h;
        }
    }

    /// Velocities on all `n − 1` interior edges.
    pub fn edge_velocities(&mut self, rho: &DensityField) -> Vec<f64> {
        let n = rho.values.len();
        if n < 2 {
            return Vec::new();
        }
        self.fill_velocities(&rho.values, 0..n, 0..n - 1);
        self.u.clone()
    }

    /// Advances `rho` by one step no longer than `cap` and returns the step
    /// size used. Flux is computed only where the density can move.
    pub fn step(&mut self, rho: &mut DensityField, cap: f64, time: f64) -> Result<f64> {
        let n = rho.values.len();
        let h = self.cfg.grid.h();
        let support = match support_range(&rho.values) {
            Some(s) if n >= 2 => s,
            _ => return Ok(cap),
        };
        let edges = support.start.saturating_sub(1)..support.end.min(n - 1);
        self.fill_velocities(&rho.values, support, edges.clone());

        let mut umax = 0.0f64;
        for e in edges.clone() {
            umax = umax.max(self.u[e].abs());
        }
        if umax == 0.0 {
            return Ok(cap);
        }
        // outflow rate of each cell: guards positivity for any cfl in (0, 1]
        let mut out_rate = 0.0f64;
        for i in edges.start..(edges.end + 1).min(n) {
            let right = if i < n - 1 { self.u[i].max(0.0) } else { 0.0 };
            let left = if i > 0 { (-self.u[i - 1]).max(0.0) } else { 0.0 };
            out_rate = out_rate.max(right + left);
        }
        // the margin keeps rounding from pushing a fully drained cell below 0
        let dt = (self.cfg.cfl * h / umax).min((1.0 - 1e-9) * h / out_rate).min(cap);

        let r = &mut rho.values;
        self.flux[edges.start + 1..=edges.end].fill(0.0);
        for e in edges.clone() {
            let u = self.u[e];
            self.flux[e + 1] = u.max(0.0) * r[e] + u.min(0.0) * r[e + 1];
        }
        let lam = dt / h;
        for i in edges.start..(edges.end + 1).min(n) {
            let f_right = if i < n - 1 { self.flux[i + 1] } else { 0.0 };
            let f_left = if i > 0 { self.flux[i] } else { 0.0 };
            let v = r[i] - lam * (f_right - f_left);
            if v < 0.0 {
                return Err(Error::NegativeDensity { cell: i, value: v, time: time + dt });
            }
            r[i] = v;
        }
        Ok(dt)
    }
}

fn support_range(values: &[f64]) -> Option<std::ops::Range<usize>> {
    let lo = values.iter().position(|&v| v > 0.0)?;
    let hi = values.iter().rposition(|&v| v > 0.0)?;
    Some(lo..hi + 1)
}

/// Velocities on interior edges for a one-off evaluation.
pub fn edge_velocities(rho: &DensityField, cfg: &FVConfig) -> Result<Vec<f64>> {
    Ok(FvSolver::new(cfg.clone())?.edge_velocities(rho))
}

/// One step with the step size capped at `cap`.
pub fn fv_step(rho: &DensityField, cfg: &FVConfig, cap: f64) -> Result<(DensityField, f64)> {
    let mut next = rho.clone();
    let dt = FvSolver::new(cfg.clone())?.step(&mut next, cap, 0.0)?;
    Ok((next, dt))
}

/// Default gap threshold, `10⁻²·max ρ⁰`.
pub fn default_gap_tol(initial: &DensityField) -> f64 {
    1e-2 * initial.max()
}

/// Runs to `t_end`, recording a snapshot (with energy) at every output time,
/// then logs mass-transfer events over the recorded snapshots.
pub fn run_fv(initial: &DensityField, cfg: &FVConfig) -> Result<FVTrajectory> {
    if initial.grid != cfg.grid {
        return Err(Error::Precondition("initial density lives on a different grid".into()));
    }
    let mut solver = FvSolver::new(cfg.clone())?;
    let mut outputs: Vec<f64> = cfg.output_times.iter().copied().filter(|&t| t > 0.0 && t <= cfg.t_end).collect();
    if outputs.last().map_or(true, |&t| t < cfg.t_end) && cfg.t_end > 0.0 {
        outputs.push(cfg.t_end);
    }
    let energy = |rho: &DensityField| diffusive_energy(rho, cfg.nu, cfg.alpha, cfg.m, &cfg.potential);

    let mass0 = initial.mass();
    let mut traj = FVTrajectory {
        times: vec![0.0],
        snapshots: vec![initial.clone()],
        energies: vec![energy(initial)?],
        dts: vec![0.0],
        events: Vec::new(),
        gap_tol: default_gap_tol(initial),
        layer_width: TransferCriterion::for_initial(initial).layer_width,
        max_mass_drift: 0.0,
        steps: 0,
    };
    let mut rho = initial.clone();
    let mut t = 0.0;
    let mut last_dt = 0.0;
    for &t_out in &outputs {
        while t < t_out {
            let cap = t_out - t;
            let dt = solver.step(&mut rho, cap, t)?;
            t = if dt >= cap { t_out } else { t + dt };
            last_dt = dt;
            traj.steps += 1;
            traj.max_mass_drift = traj.max_mass_drift.max((rho.mass() - mass0).abs());
        }
        traj.times.push(t_out);
        traj.energies.push(energy(&rho)?);
        traj.dts.push(last_dt);
        traj.snapshots.push(rho.clone());
    }
    if traj.snapshots.len() >= 2 {
        let crit = TransferCriterion::for_initial(initial);
        traj.events = crit.detect(&traj.times, &traj.snapshots)?;
    }
    Ok(traj)
}

/// Maximal run of cells above `gap_tol` starting at the left endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryComponent {
    /// Cells `0..end` belong to the component.
    pub end: usize,
    pub mass: f64,
    /// A later cell is again above `gap_tol`, i.e. a gap separates the
    /// component from the rest of the mass.
    pub separated: bool,
}

pub fn boundary_component(rho: &DensityField, gap_tol: f64) -> Option<BoundaryComponent> {
    let v = &rho.values;
    if v.first().map_or(true, |&x| x <= gap_tol) {
        return None;
    }
    let end = v.iter().position(|&x| x <= gap_tol).unwrap_or(v.len());
    let mass = rho.grid.h() * v[..end].iter().sum::<f64>();
    let separated = v[end..].iter().any(|&x| x > gap_tol);
    Some(BoundaryComponent { end, mass, separated })
}

/// Mass within `width` of the left endpoint (whole cells whose center lies
/// inside).
pub fn near_wall_mass(rho: &DensityField, width: f64) -> f64 {
    let g = rho.grid;
    let cells = rho.values.iter().enumerate().take_while(|(i, _)| g.center(*i) - g.left < width);
    g.h() * cells.map(|(_, v)| v).sum::<f64>()
}

/// How mass leaving the boundary layer is recognised.
///
/// The layer is the mass within `layer_width` of the wall. Tracking starts
/// once the boundary component is separated from the swarm by a gap; an
/// event fires when the layer has lost more than `fraction` of the total
/// mass relative to its largest value since tracking (re)started. A run of
/// consecutive decreasing snapshots is one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferCriterion {
    pub gap_tol: f64,
    pub layer_width: f64,
    pub fraction: f64,
}

impl TransferCriterion {
    /// Gap threshold `10⁻²·max ρ⁰`, layer width 0.05 (half the default
    /// regularization radius), 1% of the total mass.
    pub fn for_initial(initial: &DensityField) -> Self {
        Self { gap_tol: default_gap_tol(initial), layer_width: 0.05, fraction: TRANSFER_FRACTION }
    }

    pub fn detect(&self, times: &[f64], snapshots: &[DensityField]) -> Result<Vec<MassTransferEvent>> {
        if snapshots.len() < 2 || times.len() != snapshots.len() {
            return Err(Error::Precondition("need at least two snapshots with matching times".into()));
        }
        let total = snapshots[0].mass();
        let mut events = Vec::new();
        let mut reference: Option<f64> = None;
        let mut in_episode = false;
        let mut prev_layer = f64::INFINITY;
        for (t, rho) in times.iter().zip(snapshots) {
            let layer = near_wall_mass(rho, self.layer_width);
            let separated = boundary_component(rho, self.gap_tol).is_some_and(|c| c.separated);
            if in_episode && layer >= prev_layer {
                in_episode = false;
                reference = None;
            }
            if !in_episode && separated {
                let r = reference.map_or(layer, |r: f64| r.max(layer));
                reference = Some(r);
                if r - layer > self.fraction * total {
                    events.push(MassTransferEvent { time: *t, before: r, after: layer });
                    in_episode = true;
                }
            }
            if !separated && !in_episode {
                reference = None;
            }
            prev_layer = layer;
        }
        Ok(events)
    }
}

/// Times at which mass starts leaving the boundary layer, using the default
/// criterion with the given gap threshold.
pub fn detect_mass_transfer(traj: &FVTrajectory, gap_tol: f64) -> Result<Vec<f64>> {
    let crit = TransferCriterion { gap_tol, ..TransferCriterion::for_initial(&traj.snapshots[0]) };
    Ok(crit.detect(&traj.times, &traj.snapshots)?.into_iter().map(|e| e.time).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize) -> Grid1D {
        Grid1D::new(0.0, 1.5, n).unwrap()
    }

    #[test]
    fn uniform_density_without_interaction_is_still() {
        let g = grid(30);
        let rho = DensityField::new(g, vec![1.0 / 1.5; 30]).unwrap();
        let cfg = FVConfig::new(PotentialSpec::zero(), 1e-3, 1.0).with_grid(g);
        assert!(edge_velocities(&rho, &cfg).unwrap().iter().all(|&u| u == 0.0));
        let (next, dt) = fv_step(&rho, &cfg, 0.25).unwrap();
        assert_eq!(next, rho);
        assert_eq!(dt, 0.25);
    }

    #[test]
    fn zero_diffusion_uses_convolution_gradient_only() {
        let g = grid(2);
        let rho = DensityField::new(g, vec![0.0, 1.0 / 0.75]).unwrap();
        let spec = PotentialSpec::c0();
        let cfg = FVConfig::new(spec, 0.0, 1.0).with_grid(g);
        let u = edge_velocities(&rho, &cfg).unwrap();
        let h = 0.75;
        let conv: Vec<f64> = (0..2).map(|i| h * spec.eval_k((i as f64 - 1.0) * h) * rho.values[1]).collect();
        assert_abs_diff_eq!(u[0], -(conv[1] - conv[0]) / h, epsilon = 1e-15);
    }

    #[test]
    fn diffusion_spreads_a_bump() {
        let g = grid(3);
        let h = g.h();
        let rho = DensityField::new(g, vec![0.0, 1.0 / h, 0.0]).unwrap();
        let cfg = FVConfig::new(PotentialSpec::zero(), 1e-2, 1.0).with_grid(g);
        let u = edge_velocities(&rho, &cfg).unwrap();
        // ξ = 2ν(0, 1/h, 0): left edge points left, right edge points right
        assert_abs_diff_eq!(u[0], -2e-2 / (h * h), epsilon = 1e-12);
        assert_abs_diff_eq!(u[1], 2e-2 / (h * h), epsilon = 1e-12);
    }

    #[test]
    fn three_cell_hand_update() {
        // u = (+a, −a) points inward from empty cells: nothing moves.
        // u = (−a, +a) drains half the centre mass through each edge.
        let g = grid(3);
        let h = g.h();
        let dt = 0.01;
        let a = h / (2.0 * dt);
        let rho = [0.0, 1.0 / h, 0.0];
        let update = |u: [f64; 2]| {
            let f = [0.0, u[0].max(0.0) * rho[0] + u[0].min(0.0) * rho[1], u[1].max(0.0) * rho[1] + u[1].min(0.0) * rho[2], 0.0];
            (0..3).map(|i| rho[i] - dt / h * (f[i + 1] - f[i])).collect::<Vec<_>>()
        };
        assert_eq!(update([a, -a]), rho.to_vec());
        let drained = update([-a, a]);
        assert_abs_diff_eq!(drained[0], 0.5 / h, epsilon = 1e-12);
        assert_abs_diff_eq!(drained[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(drained[2], 0.5 / h, epsilon = 1e-12);
    }

    #[test]
    fn steps_conserve_mass_and_stay_nonnegative() {
        let g = grid(300);
        for (spec, nu) in [(PotentialSpec::c0(), 1e-3), (PotentialSpec::c2(0.1).unwrap(), 1e-5), (PotentialSpec::c0(), 0.0)] {
            let cfg = FVConfig::new(spec, nu, 1.0).with_grid(g).with_output_times((1..=20).map(|k| 0.05 * k as f64).collect());
            let traj = run_fv(&initial_density(g).unwrap(), &cfg).unwrap();
            assert!(traj.max_mass_drift <= 1e-12, "drift {}", traj.max_mass_drift);
            for s in &traj.snapshots {
                assert!(s.values.iter().all(|&v| v >= 0.0));
            }
            let slack = 10.0 * g.h() * g.h();
            for k in 1..traj.times.len() {
                let dt = traj.times[k] - traj.times[k - 1];
                assert!(traj.energies[k].total <= traj.energies[k - 1].total + slack * dt);
            }
        }
    }

    #[test]
    fn cfl_one_is_still_positive() {
        let g = grid(200);
        let mut cfg = FVConfig::new(PotentialSpec::c0(), 1e-2, 0.2).with_grid(g);
        cfg.cfl = 1.0;
        run_fv(&initial_density(g).unwrap(), &cfg).unwrap();
    }

    #[test]
    fn frozen_trajectory_has_no_events() {
        let g = grid(100);
        let cfg = FVConfig::new(PotentialSpec::zero(), 0.0, 1.0).with_grid(g).with_output_times(vec![0.5, 1.0]);
        let traj = run_fv(&initial_density(g).unwrap(), &cfg).unwrap();
        assert!(traj.snapshots.iter().all(|s| s == &traj.snapshots[0]));
        assert!(detect_mass_transfer(&traj, traj.gap_tol).unwrap().is_empty());
        assert!(traj.events.is_empty());
    }

    fn two_lumps(g: Grid1D, left: f64) -> DensityField {
        let mut v = vec![0.0; g.n_cells];
        v[0] = left / g.h();
        v[10] = (1.0 - left) / g.h();
        DensityField::new(g, v).unwrap()
    }

    #[test]
    fn detects_a_boundary_drop_across_a_gap() {
        let g = grid(30);
        let snaps = vec![two_lumps(g, 0.5), two_lumps(g, 0.5), two_lumps(g, 0.2), two_lumps(g, 0.2), two_lumps(g, 0.1)];
        let times = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let crit = TransferCriterion::for_initial(&snaps[0]);
        let events = crit.detect(&times, &snaps).unwrap();
        assert_eq!(events.iter().map(|e| e.time).collect::<Vec<_>>(), vec![2.0, 4.0]);
        assert_abs_diff_eq!(events[0].before, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(events[0].after, 0.2, epsilon = 1e-12);
        assert!(crit.detect(&times[..1], &snaps[..1]).is_err());
    }

    #[test]
    fn connected_states_log_no_transfer() {
        // same layer loss, but the layer is joined to the rest of the mass
        let g = grid(30);
        let joined = |left: f64| {
            let mut v = vec![(1.0 - left) / (10.0 * g.h()); g.n_cells];
            v[11..].fill(0.0);
            v[0] = left / g.h();
            DensityField::new(g, v).unwrap()
        };
        let snaps = vec![joined(0.5), joined(0.2)];
        let crit = TransferCriterion::for_initial(&snaps[0]);
        assert!(crit.detect(&[0.0, 1.0], &snaps).unwrap().is_empty());
    }
}
