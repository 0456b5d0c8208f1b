//! Probability measures on a bounded interval: cell-averaged densities,
//! weighted particle ensembles, and mixed atom-plus-density measures with
//! CDF and quantile primitives.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Left end of the computational domain used by the experiments.
pub const DOMAIN_LEFT: f64 = 0.0;
/// Right end of the computational domain used by the experiments.
pub const DOMAIN_RIGHT: f64 = 1.5;
/// Default number of cells on `[0, 1.5]`, giving `h = 10⁻³`.
pub const DEFAULT_CELLS: usize = 1500;

/// Uniform cell-centered grid on `[left, right]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub left: f64,
    pub right: f64,
    pub n_cells: usize,
}

impl Grid1D {
    pub fn new(left: f64, right: f64, n_cells: usize) -> Result<Self> {
        if !(left.is_finite() && right.is_finite() && right > left) {
            return Err(Error::Domain(format!("grid needs left < right, got [{left}, {right}]")));
        }
        if n_cells == 0 {
            return Err(Error::Domain("grid needs at least one cell".into()));
        }
        Ok(Self { left, right, n_cells })
    }

    /// `[0, 1.5]` with the given number of cells.
    pub fn domain(n_cells: usize) -> Result<Self> {
        Self::new(DOMAIN_LEFT, DOMAIN_RIGHT, n_cells)
    }

    pub fn h(&self) -> f64 {
        (self.right - self.left) / self.n_cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.left + (i as f64 + 0.5) * self.h()
    }

    /// Left edge of cell `i`; `edge(n_cells)` is exactly `right`.
    pub fn edge(&self, i: usize) -> f64 {
        if i >= self.n_cells {
            self.right
        } else {
            self.left + i as f64 * self.h()
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.left && x <= self.right
    }
}

impl Default for Grid1D {
    fn default() -> Self {
        Self { left: DOMAIN_LEFT, right: DOMAIN_RIGHT, n_cells: DEFAULT_CELLS }
    }
}

/// Piecewise-constant nonnegative density, one value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: Grid1D,
    pub values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells {
            return Err(Error::Precondition(format!(
                "{} density values for {} cells",
                values.len(),
                grid.n_cells
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!("density value {v} in cell {i} is not a finite nonnegative number")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid1D) -> Self {
        Self { grid, values: vec![0.0; grid.n_cells] }
    }

    /// Builds a density from a function sampled at cell centers.
    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..grid.n_cells).map(|i| f(grid.center(i))).collect();
        Self::new(grid, values)
    }

    pub fn mass(&self) -> f64 {
        self.grid.h() * self.values.iter().sum::<f64>()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn into_measure(self) -> MixedMeasure {
        MixedMeasure { atoms: Vec::new(), density: Some(self) }
    }
}

/// `height · 1_[a,b]` averaged onto the cells of `grid`.
pub fn indicator_density(a: f64, b: f64, height: f64, grid: Grid1D) -> Result<DensityField> {
    if !(a < b) {
        return Err(Error::Domain(format!("indicator needs a < b, got [{a}, {b}]")));
    }
    if a < grid.left || b > grid.right {
        return Err(Error::Domain(format!(
            "indicator [{a}, {b}] leaves the grid [{}, {}]",
            grid.left, grid.right
        )));
    }
    if !(height >= 0.0 && height.is_finite()) {
        return Err(Error::Domain(format!("indicator height {height} must be finite and nonnegative")));
    }
    let h = grid.h();
    let values = (0..grid.n_cells)
        .map(|i| {
            let overlap = (grid.edge(i + 1).min(b) - grid.edge(i).max(a)).max(0.0);
            height * overlap / h
        })
        .collect();
    DensityField::new(grid, values)
}

/// Weighted Dirac ensemble `Σ w_i δ_{x_i}`, kept sorted by position.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    positions: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleEnsemble {
    /// Sorts particles by position (stable, so equal positions keep their order).
    pub fn new(positions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if positions.len() != weights.len() {
            return Err(Error::Precondition(format!(
                "{} positions but {} weights",
                positions.len(),
                weights.len()
            )));
        }
        if positions.is_empty() {
            return Err(Error::Precondition("an ensemble needs at least one particle".into()));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("particle positions must be finite".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Domain("particle weights must be positive".into()));
        }
        let mut order: Vec<usize> = (0..positions.len()).collect();
        order.sort_by(|&i, &j| positions[i].total_cmp(&positions[j]));
        let positions = order.iter().map(|&i| positions[i]).collect();
        let weights = order.iter().map(|&i| weights[i]).collect();
        Ok(Self { positions, weights })
    }

    /// Every particle carries mass `1/n`.
    pub fn equal_weights(positions: Vec<f64>) -> Result<Self> {
        let w = 1.0 / positions.len().max(1) as f64;
        let weights = vec![w; positions.len()];
        Self::new(positions, weights)
    }

    /// `n` equal-weight particles at the mid-quantiles of the uniform
    /// probability on `[a, b]`: `x_k = a + (b − a)(k − ½)/n`.
    pub fn mid_quantiles_uniform(n: usize, a: f64, b: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Precondition("need at least one particle".into()));
        }
        let positions = (1..=n).map(|k| a + (b - a) * (k as f64 - 0.5) / n as f64).collect();
        Self::equal_weights(positions)
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Replaces the positions, re-sorting if needed. Weights travel with
    /// their particles.
    pub(crate) fn set_positions(&mut self, positions: Vec<f64>) {
        debug_assert_eq!(positions.len(), self.weights.len());
        if positions.windows(2).all(|w| w[0] <= w[1]) {
            self.positions = positions;
        } else {
            let mut order: Vec<usize> = (0..positions.len()).collect();
            order.sort_by(|&i, &j| positions[i].total_cmp(&positions[j]));
            self.weights = order.iter().map(|&i| self.weights[i]).collect();
            self.positions = order.iter().map(|&i| positions[i]).collect();
        }
    }

    /// Groups particles lying within `tol` of the first member of their
    /// group into single atoms at the mass-weighted mean position.
    pub fn clustered_atoms(&self, tol: f64) -> Vec<Atom> {
        let mut atoms: Vec<Atom> = Vec::new();
        let mut start = 0;
        while start < self.len() {
            let anchor = self.positions[start];
            let mut end = start + 1;
            while end < self.len() && self.positions[end] - anchor <= tol {
                end += 1;
            }
            let mass: f64 = self.weights[start..end].iter().sum();
            let location = if end - start == 1 {
                anchor
            } else {
                let moment: f64 = (start..end).map(|k| self.weights[k] * self.positions[k]).sum();
                (moment / mass).clamp(anchor, self.positions[end - 1])
            };
            atoms.push(Atom { location, mass });
            start = end;
        }
        atoms
    }

    /// Groups consecutive particles separated by at most `gap` (chained) and
    /// returns one atom per group at the group's center of mass.
    pub fn groups(&self, gap: f64) -> Vec<Atom> {
        let mut out: Vec<Atom> = Vec::new();
        let mut start = 0;
        for k in 1..=self.len() {
            if k == self.len() || self.positions[k] - self.positions[k - 1] > gap {
                let mass: f64 = self.weights[start..k].iter().sum();
                let moment: f64 = (start..k).map(|j| self.weights[j] * self.positions[j]).sum();
                out.push(Atom { location: moment / mass, mass });
                start = k;
            }
        }
        out
    }

    /// Export as a purely atomic measure, merging clusters closer than `tol`.
    pub fn to_measure(&self, tol: f64) -> MixedMeasure {
        MixedMeasure { atoms: self.clustered_atoms(tol), density: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

/// Atoms plus an optional piecewise-constant density.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedMeasure {
    atoms: Vec<Atom>,
    density: Option<DensityField>,
}

/// One monotone piece of a measure, in position order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Piece {
    Atom { x: f64, mass: f64 },
    Slab { a: f64, b: f64, rho: f64 },
}

impl Piece {
    fn mass(&self) -> f64 {
        match *self {
            Piece::Atom { mass, .. } => mass,
            Piece::Slab { a, b, rho } => rho * (b - a),
        }
    }
}

/// Piece of a quantile function on normalized mass coordinates:
/// `Q(u) = x0 + slope·(u − u0)` for `u ∈ [u0, u1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct QuantilePiece {
    pub u0: f64,
    pub u1: f64,
    pub x0: f64,
    pub slope: f64,
}

impl MixedMeasure {
    /// Sorts atoms and merges exact ties. Atoms must lie inside the density's
    /// grid when a density is present.
    pub fn new(mut atoms: Vec<Atom>, density: Option<DensityField>) -> Result<Self> {
        if atoms.iter().any(|a| !(a.mass > 0.0 && a.mass.is_finite() && a.location.is_finite())) {
            return Err(Error::Domain("atoms need finite locations and positive masses".into()));
        }
        if let Some(d) = &density {
            if let Some(a) = atoms.iter().find(|a| !d.grid.contains(a.location)) {
                return Err(Error::Domain(format!("atom at {} lies outside the domain", a.location)));
            }
        }
        atoms.sort_by(|a, b| a.location.total_cmp(&b.location));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.last_mut() {
                Some(last) if last.location == a.location => last.mass += a.mass,
                _ => merged.push(a),
            }
        }
        if merged.is_empty() && density.is_none() {
            return Err(Error::Precondition("a measure needs atoms or a density".into()));
        }
        Ok(Self { atoms: merged, density })
    }

    pub fn from_atoms(atoms: Vec<Atom>) -> Result<Self> {
        Self::new(atoms, None)
    }

    pub fn atom(location: f64, mass: f64) -> Result<Self> {
        Self::new(vec![Atom { location, mass }], None)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density(&self) -> Option<&DensityField> {
        self.density.as_ref()
    }

    pub fn total_mass(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.mass).sum();
        atoms + self.density.as_ref().map_or(0.0, DensityField::mass)
    }

    /// Shifts every atom and the density grid by `c`.
    pub fn translated(&self, c: f64) -> Self {
        let atoms = self.atoms.iter().map(|a| Atom { location: a.location + c, mass: a.mass }).collect();
        let density = self.density.as_ref().map(|d| DensityField {
            grid: Grid1D { left: d.grid.left + c, right: d.grid.right + c, n_cells: d.grid.n_cells },
            values: d.values.clone(),
        });
        Self { atoms, density }
    }

    /// Positive-mass pieces in increasing position. An atom on a cell edge
    /// is placed before the cell to its right.
    pub(crate) fn pieces(&self) -> Vec<Piece> {
        let mut out = Vec::new();
        let mut ai = 0;
        if let Some(d) = &self.density {
            let g = d.grid;
            for (i, &rho) in d.values.iter().enumerate() {
                let (a, b) = (g.edge(i), g.edge(i + 1));
                let mut start = a;
                while ai < self.atoms.len() && self.atoms[ai].location < b {
                    let y = self.atoms[ai].location;
                    if rho > 0.0 && y > start {
                        out.push(Piece::Slab { a: start, b: y, rho });
                        start = y;
                    }
                    out.push(Piece::Atom { x: y, mass: self.atoms[ai].mass });
                    ai += 1;
                }
                if rho > 0.0 && b > start {
                    out.push(Piece::Slab { a: start, b, rho });
                }
            }
        }
        out.extend(self.atoms[ai..].iter().map(|a| Piece::Atom { x: a.location, mass: a.mass }));
        out
    }

    /// Right-continuous cumulative mass `μ((-∞, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for p in self.pieces() {
            match p {
                Piece::Atom { x: y, mass } => {
                    if y > x {
                        break;
                    }
                    acc += mass;
                }
                Piece::Slab { a, b, rho } => {
                    if a >= x {
                        break;
                    }
                    acc += rho * (b.min(x) - a);
                }
            }
        }
        acc
    }

    /// Generalized inverse `inf{x : cdf(x) ≥ u·total}` for `u ∈ [0, 1]`.
    /// At `u = 0` this is the infimum of the support.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain(format!("quantile level {u} outside [0, 1]")));
        }
        let pieces = self.pieces();
        let target = u * self.total_mass();
        let mut acc = 0.0;
        for p in &pieces {
            let m = p.mass();
            if acc + m >= target {
                return Ok(match *p {
                    Piece::Atom { x, .. } => x,
                    Piece::Slab { a, b, rho } => (a + (target - acc).max(0.0) / rho).min(b),
                });
            }
            acc += m;
        }
        // rounding left target just above the accumulated total
        Ok(match pieces.last() {
            Some(Piece::Atom { x, .. }) => *x,
            Some(Piece::Slab { b, .. }) => *b,
            None => f64::NAN,
        })
    }

    /// Quantile function on `[0, 1]` as linear pieces; atoms have slope 0.
    pub(crate) fn quantile_pieces(&self) -> Vec<QuantilePiece> {
        let pieces = self.pieces();
        let total: f64 = pieces.iter().map(Piece::mass).sum();
        let mut out = Vec::with_capacity(pieces.len());
        let mut acc = 0.0;
        for p in &pieces {
            let u0 = acc / total;
            acc += p.mass();
            let u1 = acc / total;
            let (x0, slope) = match *p {
                Piece::Atom { x, .. } => (x, 0.0),
                Piece::Slab { a, rho, .. } => (a, total / rho),
            };
            out.push(QuantilePiece { u0, u1, x0, slope });
        }
        if let Some(last) = out.last_mut() {
            last.u1 = 1.0;
        }
        out
    }

    /// `∫ x² dμ`, exact for the piecewise-constant representation.
    pub fn second_moment(&self) -> f64 {
        self.pieces()
            .iter()
            .map(|p| match *p {
                Piece::Atom { x, mass } => mass * x * x,
                Piece::Slab { a, b, rho } => rho * (b * b * b - a * a * a) / 3.0,
            })
            .sum()
    }

    /// Writes the CSV form: an optional `!grid,left,right,n_cells` line, an
    /// `x,rho` header with one row per cell, and `!atom,location,mass` rows.
    /// Numbers use the shortest round-trip representation.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        if let Some(d) = &self.density {
            let g = d.grid;
            let _ = writeln!(s, "!grid,{:e},{:e},{}", g.left, g.right, g.n_cells);
            s.push_str("x,rho\n");
            for (i, v) in d.values.iter().enumerate() {
                let _ = writeln!(s, "{:e},{:e}", g.center(i), v);
            }
        }
        for a in &self.atoms {
            let _ = writeln!(s, "!atom,{:e},{:e}", a.location, a.mass);
        }
        s
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut grid: Option<Grid1D> = None;
        let mut values = Vec::new();
        let mut atoms = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line == "x,rho" {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let bad = || Error::Parse(format!("line {}: `{line}`", lineno + 1));
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
            match fields.as_slice() {
                ["!grid", l, r, n] => {
                    let n = n.trim().parse::<usize>().map_err(|_| bad())?;
                    grid = Some(Grid1D::new(num(l)?, num(r)?, n)?);
                }
                ["!atom", x, m] => atoms.push(Atom { location: num(x)?, mass: num(m)? }),
                [_, rho] => values.push(num(rho)?),
                _ => return Err(bad()),
            }
        }
        let density = match grid {
            Some(g) => Some(DensityField::new(g, values)?),
            None if values.is_empty() => None,
            None => return Err(Error::Parse("density rows without a !grid line".into())),
        };
        Self::new(atoms, density)
    }
}

impl From<DensityField> for MixedMeasure {
    fn from(d: DensityField) -> Self {
        d.into_measure()
    }
}
