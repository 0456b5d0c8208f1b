//! Equilibria and minimizers on `[0, 1.5]` with no external potential.
//!
//! For the plain model with the C⁰ kernel the minimizer is `1_[0,1]` (up to
//! translation). With `m = 2`, `α = 1` and `ν > 0`, equilibria touching the
//! wall have the form
//!
//! ```text
//! μ̄_ν(x) = c1·e^{x/s} + c2·e^{−x/s} + 1   on [0, L],   s = √(2ν)
//! ```
//!
//! chosen so that `Λ_ν = 2νμ̄_ν + K∗μ̄_ν` is flat on the support: the ansatz
//! makes `Λ_ν'' ≡ 0`, and the remaining conditions are `Λ_ν'(0) = 0`, unit
//! mass and `μ̄_ν(L) = 0`.
//!
//! On the solution set `{mass = 1, μ̄_ν(L) = 0}` one finds `Λ_ν' ≡ −ν·μ̄_ν(0)²`,
//! so the flatness condition has a double root and its Jacobian is singular
//! at the solution. Newton therefore runs on the equivalent well-posed system
//! `[μ̄_ν(0), mass − 1, μ̄_ν(L)]` and the original residuals are checked
//! afterwards. The unknown `c1` is carried as `a = c1·e^{L/s}`, which stays
//! of order one while `c1` itself decays like `e^{−1/s}`.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{indicator_density, DensityField, Grid1D, MixedMeasure};
use crate::potentials::{KernelTable, PotentialSpec};
use crate::transport::w2_mixed;

/// Residual bound for an accepted equilibrium.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
/// Newton iteration cap per solve.
pub const MAX_ITERATIONS: usize = 100;
/// Starting diffusivity of the continuation path.
pub const CONTINUATION_START: f64 = 0.1;
/// Continuation steps per decade of ν.
const STEPS_PER_DECADE: usize = 4;
/// Cells used to discretize an equilibrium for transport distances.
pub const FINE_CELLS: usize = 150_000;

/// Largest `L/s` for which `c1 = a·e^{−L/s}` is still a normal double with
/// full relative precision.
fn max_exponent() -> f64 {
    (f64::EPSILON / f64::MIN_POSITIVE).ln()
}

/// The plain-model minimizer `1_[0,1]` on the default grid.
pub fn plain_minimizer() -> MixedMeasure {
    plain_minimizer_on(Grid1D::default())
}

pub fn plain_minimizer_on(grid: Grid1D) -> MixedMeasure {
    indicator_density(0.0, 1.0, 1.0, grid).expect("[0, 1] fits the domain").into_measure()
}

/// First variation `Λ_ν` sampled at the cell centers of a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaProfile {
    pub grid: Grid1D,
    pub values: Vec<f64>,
    /// Mass-weighted mean of `Λ_ν` over the support.
    pub multiplier: f64,
    /// Whether the cell (or an atom in it) carries mass.
    pub support: Vec<bool>,
}

impl LambdaProfile {
    /// Largest `|Λ_ν − λ_ν|` over supported cells, ignoring the `skip`
    /// outermost supported cells at each end.
    pub fn max_deviation_on_support(&self, skip: usize) -> f64 {
        let idx: Vec<usize> = (0..self.values.len()).filter(|&i| self.support[i]).collect();
        if idx.len() <= 2 * skip {
            return 0.0;
        }
        idx[skip..idx.len() - skip]
            .iter()
            .map(|&i| (self.values[i] - self.multiplier).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest `Λ_ν − λ_ν` over cells without mass (`+∞` if there are none).
    pub fn min_excess_off_support(&self) -> f64 {
        (0..self.values.len())
            .filter(|&i| !self.support[i])
            .map(|i| self.values[i] - self.multiplier)
            .fold(f64::INFINITY, f64::min)
    }
}

/// `Λ = ν^α m/(m−1) ρ^{m−1} + K∗μ` at cell centers, midpoint rule for the
/// density part and exact sums for atoms.
pub fn lambda_profile(m: &MixedMeasure, nu: f64, alpha: f64, m_exp: f64, spec: &PotentialSpec) -> Result<LambdaProfile> {
    if !(nu >= 0.0) {
        return Err(Error::Domain(format!("diffusivity must be nonnegative, got {nu}")));
    }
    if !(m_exp > 1.0) {
        return Err(Error::Domain(format!("diffusion exponent m must exceed 1, got {m_exp}")));
    }
    if nu > 0.0 && m.density().is_none() {
        return Err(Error::Domain("entropy variation is undefined for a purely atomic measure".into()));
    }
    let grid = m.density().map_or_else(Grid1D::default, |d| d.grid);
    let n = grid.n_cells;
    let h = grid.h();
    let mut values = match m.density() {
        Some(d) => KernelTable::new(spec, n, h).convolve(&d.values),
        None => vec![0.0; n],
    };
    let mut support = vec![false; n];
    for a in m.atoms() {
        for (i, v) in values.iter_mut().enumerate() {
            *v += a.mass * spec.eval_k(grid.center(i) - a.location);
        }
        let cell = (((a.location - grid.left) / h) as usize).min(n - 1);
        support[cell] = true;
    }
    let mut weighted = 0.0;
    let mut mass = 0.0;
    if let Some(d) = m.density() {
        let coeff = if nu > 0.0 { nu.powf(alpha) * m_exp / (m_exp - 1.0) } else { 0.0 };
        for i in 0..n {
            let r = d.values[i];
            if r > 0.0 {
                support[i] = true;
                values[i] += coeff * if m_exp == 2.0 { r } else { r.powf(m_exp - 1.0) };
                weighted += h * r * values[i];
                mass += h * r;
            }
        }
    }
    for a in m.atoms() {
        let conv_at_atom: f64 = m.atoms().iter().map(|b| b.mass * spec.eval_k(a.location - b.location)).sum::<f64>()
            + m.density().map_or(0.0, |d| {
                (0..n).map(|j| h * d.values[j] * spec.eval_k(a.location - grid.center(j))).sum::<f64>()
            });
        weighted += a.mass * conv_at_atom;
        mass += a.mass;
    }
    let multiplier = if mass > 0.0 { weighted / mass } else { 0.0 };
    Ok(LambdaProfile { grid, values, multiplier, support })
}

/// Residuals `[Λ_ν'(0), mass − 1, μ̄_ν(L)]` of the ansatz.
pub fn equilibrium_residuals(c1: f64, c2: f64, length: f64, nu: f64) -> Result<[f64; 3]> {
    if !(length > 0.0) || !(nu > 0.0) {
        return Err(Error::Domain(format!("need L > 0 and ν > 0, got L = {length}, ν = {nu}")));
    }
    let s = (2.0 * nu).sqrt();
    let big = (length / s).exp();
    let a = c1 * big;
    Ok(Ansatz { a, c2, length, s }.residuals())
}

/// Ansatz in scaled form, `c1 = a·e^{−L/s}`.
#[derive(Debug, Clone, Copy)]
struct Ansatz {
    a: f64,
    c2: f64,
    length: f64,
    s: f64,
}

impl Ansatz {
    fn small(&self) -> f64 {
        (-self.length / self.s).exp()
    }

    fn mass(&self) -> f64 {
        let e = self.small();
        self.s * (self.a + self.c2) * (1.0 - e) + self.length
    }

    fn first_moment(&self) -> f64 {
        let (s, l, e) = (self.s, self.length, self.small());
        self.a * (s * (l - s) + s * s * e) + self.c2 * (s * s - s * (l + s) * e) + 0.5 * l * l
    }

    fn density_at_zero(&self) -> f64 {
        1.0 + self.a * self.small() + self.c2
    }

    fn density_at_end(&self) -> f64 {
        self.a + self.c2 * self.small() + 1.0
    }

    /// `Λ'(0) = 2ν μ'(0) + (K∗μ)'(0)` with the C⁰ kernel: `(K∗μ)'(0) = M/2 − M₁`.
    fn flatness(&self) -> f64 {
        let e = self.small();
        self.s * (self.a * e - self.c2) + 0.5 * self.mass() - self.first_moment()
    }

    fn residuals(&self) -> [f64; 3] {
        [self.flatness(), self.mass() - 1.0, self.density_at_end()]
    }

    /// The system Newton actually solves.
    fn system(&self) -> Vector3<f64> {
        Vector3::new(self.density_at_zero(), self.mass() - 1.0, self.density_at_end())
    }

    fn jacobian(&self) -> Matrix3<f64> {
        let (s, e, a, c2) = (self.s, self.small(), self.a, self.c2);
        Matrix3::new(
            e, 1.0, -a * e / s,
            s * (1.0 - e), s * (1.0 - e), (a + c2) * e + 1.0,
            1.0, e, -c2 * e / s,
        )
    }
}

/// A solved diffusive equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiffusiveEquilibrium {
    pub nu: f64,
    pub c1: f64,
    pub c2: f64,
    pub length: f64,
    pub s: f64,
    /// `c1·e^{L/s}`, the boundary-layer amplitude at the right edge.
    pub c1_scaled: f64,
    pub iterations: usize,
    /// Max-norm of [`equilibrium_residuals`] at the solution.
    pub residual: f64,
}

impl DiffusiveEquilibrium {
    fn ansatz(&self) -> Ansatz {
        Ansatz { a: self.c1_scaled, c2: self.c2, length: self.length, s: self.s }
    }

    /// `c1·e^{x/s}`, evaluated without forming `c1` or `e^{x/s}` separately.
    pub fn growing_mode(&self, x: f64) -> f64 {
        self.c1_scaled * ((x - self.length) / self.s).exp()
    }

    /// Density, zero outside `[0, L]`.
    pub fn density(&self, x: f64) -> f64 {
        if !(0.0..=self.length).contains(&x) {
            return 0.0;
        }
        self.growing_mode(x) + self.c2 * (-x / self.s).exp() + 1.0
    }

    pub fn mass(&self) -> f64 {
        self.ansatz().mass()
    }

    pub fn residuals(&self) -> [f64; 3] {
        self.ansatz().residuals()
    }

    /// `∫_0^x μ̄_ν` for `x` in `[0, L]`.
    fn partial_mass(&self, x: f64) -> f64 {
        let s = self.s;
        s * (self.growing_mode(x) - self.growing_mode(0.0)) - s * self.c2 * ((-x / s).exp() - 1.0) + x
    }

    /// `∫_0^x y μ̄_ν(y) dy` for `x` in `[0, L]`.
    fn partial_moment(&self, x: f64) -> f64 {
        let s = self.s;
        let ex = (-x / s).exp();
        self.growing_mode(x) * (s * x - s * s) + self.growing_mode(0.0) * s * s
            + self.c2 * (s * s - (s * x + s * s) * ex)
            + 0.5 * x * x
    }

    fn second_moment(&self) -> f64 {
        let (s, l) = (self.s, self.length);
        let e = (-l / s).exp();
        s * (self.c1_scaled * (l * l - 2.0 * s * l + 2.0 * s * s) - 2.0 * s * s * self.growing_mode(0.0))
            + s * self.c2 * (2.0 * s * s - e * (l * l + 2.0 * s * l + 2.0 * s * s))
            + l * l * l / 3.0
    }

    /// `Λ_ν(x) = 2νμ̄_ν(x) + (K∗μ̄_ν)(x)` in closed form for the C⁰ kernel.
    pub fn lambda(&self, x: f64) -> f64 {
        let l = self.length;
        let m0 = self.mass();
        let m1 = self.partial_moment(l);
        let m2 = self.second_moment();
        let xc = x.clamp(0.0, l);
        let a = self.partial_mass(xc);
        let b = self.partial_moment(xc);
        let abs_term = 2.0 * x * a - 2.0 * b + m1 - x * m0;
        let quad_term = x * x * m0 - 2.0 * x * m1 + m2;
        2.0 * self.nu * self.density(x) - 0.5 * abs_term + 0.5 * quad_term
    }

    /// Value of `Λ_ν` on the support.
    pub fn multiplier(&self) -> f64 {
        self.lambda(0.5 * self.length)
    }

    /// Exact cell averages on `grid`, rescaled to unit mass.
    pub fn to_density(&self, grid: Grid1D) -> Result<DensityField> {
        let h = grid.h();
        let mut values: Vec<f64> = (0..grid.n_cells)
            .map(|i| {
                let lo = grid.edge(i).clamp(0.0, self.length);
                let hi = grid.edge(i + 1).clamp(0.0, self.length);
                if hi > lo {
                    ((self.partial_mass(hi) - self.partial_mass(lo)) / h).max(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        let mass: f64 = h * values.iter().sum::<f64>();
        values.iter_mut().for_each(|v| *v /= mass);
        DensityField::new(grid, values)
    }

    /// `W₂(μ̄_ν, 1_[0,1])` on a fine grid of the domain.
    pub fn w2_to_plain_minimizer(&self) -> Result<f64> {
        let grid = Grid1D::domain(FINE_CELLS)?;
        let mu = self.to_density(grid)?.into_measure();
        w2_mixed(&mu, &plain_minimizer_on(grid))
    }
}

fn initial_guess(nu: f64) -> Ansatz {
    let s = (2.0 * nu).sqrt();
    let length = 1.0 + 2.0 * s;
    let c = -1.0 / (1.0 + (-length / s).exp());
    Ansatz { a: c, c2: c, length, s }
}

fn check_conditioning(nu: f64, length: f64, s: f64) -> Result<()> {
    if length / s > max_exponent() {
        return Err(Error::Conditioning {
            nu,
            reason: format!(
                "L/s = {:.1} exceeds {:.1}: c1 = O(e^(-L/s)) is below double precision",
                length / s,
                max_exponent()
            ),
        });
    }
    Ok(())
}

/// Damped Newton from `start`.
fn newton(nu: f64, start: Ansatz) -> Result<DiffusiveEquilibrium> {
    let s = start.s;
    let mut x = start;
    let mut f = x.system();
    let norm = |v: &Vector3<f64>| v.amax();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        if !f.iter().all(|v| v.is_finite()) {
            return Err(Error::Conditioning { nu, reason: "non-finite residual".into() });
        }
        if norm(&f) <= 1e-15 {
            break;
        }
        let jac = x.jacobian();
        if !jac.iter().all(|v| v.is_finite()) {
            return Err(Error::Conditioning { nu, reason: "non-finite Jacobian".into() });
        }
        let step = jac.lu().solve(&(-f)).ok_or_else(|| Error::Conditioning {
            nu,
            reason: "singular Jacobian".into(),
        })?;
        iterations += 1;
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-6 {
            let trial = Ansatz {
                a: x.a + lambda * step[0],
                c2: x.c2 + lambda * step[1],
                length: x.length + lambda * step[2],
                s,
            };
            if trial.length > 0.0 {
                let ft = trial.system();
                if ft.iter().all(|v| v.is_finite()) && norm(&ft) < norm(&f) {
                    x = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            // no decrease possible: either converged to rounding or stuck
            break;
        }
    }
    let r = x.residuals();
    let residual = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let c1 = x.a * x.small();
    if !(residual <= RESIDUAL_TOLERANCE) {
        return Err(Error::Convergence { nu, iterations, residual, c1, c2: x.c2, length: x.length });
    }
    check_conditioning(nu, x.length, s)?;
    Ok(DiffusiveEquilibrium { nu, c1, c2: x.c2, length: x.length, s, c1_scaled: x.a, iterations, residual })
}

/// Solves for the equilibrium at `nu`. Without a guess, continues from
/// `ν = 10⁻¹` in logarithmic steps, warm-starting each solve.
pub fn solve_equilibrium(nu: f64, guess: Option<(f64, f64, f64)>) -> Result<DiffusiveEquilibrium> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Domain(format!("diffusivity must be positive, got {nu}")));
    }
    let s = (2.0 * nu).sqrt();
    // L > 1 always, so this rejects hopeless targets before any work
    check_conditioning(nu, 1.0, s)?;
    if let Some((c1, c2, length)) = guess {
        if !(length > 0.0) {
            return Err(Error::Domain(format!("guess length must be positive, got {length}")));
        }
        return newton(nu, Ansatz { a: c1 * (length / s).exp(), c2, length, s });
    }
    if nu >= CONTINUATION_START {
        return newton(nu, initial_guess(nu));
    }
    let mut current = newton(CONTINUATION_START, initial_guess(CONTINUATION_START))?;
    let decades = (CONTINUATION_START / nu).log10();
    let steps = ((decades * STEPS_PER_DECADE as f64).ceil() as usize).max(1);
    for k in 1..=steps {
        let nu_k = if k == steps { nu } else { CONTINUATION_START * 10f64.powf(-decades * k as f64 / steps as f64) };
        let s_k = (2.0 * nu_k).sqrt();
        let warm = Ansatz { a: current.c1_scaled, c2: current.c2, length: current.length, s: s_k };
        current = newton(nu_k, warm)?;
    }
    Ok(current)
}

/// `nu,c1,c2,L,mass_residual,w2_to_plain_minimizer` rows.
pub fn equilibria_csv(sols: &[DiffusiveEquilibrium]) -> Result<String> {
    let mut out = String::from("nu,c1,c2,L,mass_residual,w2_to_plain_minimizer\n");
    for e in sols {
        out.push_str(&format!(
            "{:.5e},{:.5e},{:.5e},{:.5e},{:.5e},{:.5e}\n",
            e.nu,
            e.c1,
            e.c2,
            e.length,
            e.mass() - 1.0,
            e.w2_to_plain_minimizer()?
        ));
    }
    Ok(out)
}
