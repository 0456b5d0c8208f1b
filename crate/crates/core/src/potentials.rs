//! Interaction potentials: Newtonian repulsion with quadratic attraction, and
//! its C² regularization where `|x|` is replaced by an even quartic on
//! `[-ε, ε]`.
//!
//! Both kinds are even, so `K(x)` is evaluated on `|x|` and the derivative is
//! assembled from the radial derivative with the sign of `x`. This makes
//! evenness and oddness exact in floating point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regularization width used by every shipped experiment.
pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialKind {
    /// `K(x) = -|x|/2 + x²/2`.
    #[serde(rename = "c0")]
    C0NewtonianQuadratic,
    /// `K_ε(x) = φ_ε(x) + x²/2` with a quartic core on `|x| ≤ ε`.
    #[serde(rename = "c2")]
    C2Regularized,
    /// `K ≡ 0`. Not used by experiments; handy for isolating diffusion.
    #[serde(rename = "zero")]
    Zero,
}

impl std::str::FromStr for PotentialKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c0" => Ok(PotentialKind::C0NewtonianQuadratic),
            "c2" => Ok(PotentialKind::C2Regularized),
            "zero" => Ok(PotentialKind::Zero),
            other => Err(Error::Parse(format!("unknown potential `{other}` (expected c0 or c2)"))),
        }
    }
}

impl std::fmt::Display for PotentialKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PotentialKind::C0NewtonianQuadratic => "c0",
            PotentialKind::C2Regularized => "c2",
            PotentialKind::Zero => "zero",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    /// Half-width of the regularized core. Ignored unless `kind` is C².
    pub epsilon: f64,
}

impl PotentialSpec {
    pub fn c0() -> Self {
        Self { kind: PotentialKind::C0NewtonianQuadratic, epsilon: DEFAULT_EPSILON }
    }

    pub fn c2(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Domain(format!("regularization width must be positive, got {epsilon}")));
        }
        Ok(Self { kind: PotentialKind::C2Regularized, epsilon })
    }

    pub fn zero() -> Self {
        Self { kind: PotentialKind::Zero, epsilon: DEFAULT_EPSILON }
    }

    /// Builds a spec of the given kind with the default regularization width.
    pub fn from_kind(kind: PotentialKind) -> Self {
        Self { kind, epsilon: DEFAULT_EPSILON }
    }

    /// Repulsive part `φ` evaluated at a nonnegative distance.
    fn repulsion(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::C0NewtonianQuadratic => -0.5 * r,
            PotentialKind::C2Regularized => {
                let e = self.epsilon;
                if r <= e {
                    let r2 = r * r;
                    r2 * r2 / (16.0 * e * e * e) - 3.0 * r2 / (8.0 * e) - 3.0 * e / 16.0
                } else {
                    -0.5 * r
                }
            }
            PotentialKind::Zero => 0.0,
        }
    }

    /// `dφ/dr` at a nonnegative distance.
    fn repulsion_slope(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::C0NewtonianQuadratic => -0.5,
            PotentialKind::C2Regularized => {
                let e = self.epsilon;
                if r <= e {
                    r * r * r / (4.0 * e * e * e) - 3.0 * r / (4.0 * e)
                } else {
                    -0.5
                }
            }
            PotentialKind::Zero => 0.0,
        }
    }

    /// Interaction potential `K(x)`.
    pub fn eval_k(&self, x: f64) -> f64 {
        if self.kind == PotentialKind::Zero {
            return 0.0;
        }
        let r = x.abs();
        self.repulsion(r) + 0.5 * r * r
    }

    /// Derivative `K'(x)`. Returns exactly 0 at `x = 0` for every kind, so a
    /// particle exerts no force on itself (the C⁰ kind uses `sign(0) = 0`).
    pub fn eval_dk(&self, x: f64) -> f64 {
        if self.kind == PotentialKind::Zero || x == 0.0 {
            return 0.0;
        }
        let r = x.abs();
        let radial = self.repulsion_slope(r) + r;
        if x > 0.0 {
            radial
        } else {
            -radial
        }
    }

    /// Radius beyond which the repulsive part has constant slope `-1/2`.
    /// Zero for the C⁰ kind.
    pub fn core_radius(&self) -> f64 {
        match self.kind {
            PotentialKind::C2Regularized => self.epsilon,
            _ => 0.0,
        }
    }
}

/// Tabulated `K` on the lattice `k·h`, used for O(n²) direct summation of
/// `(K∗ρ)(x_i) = h Σ_j K(x_i − x_j) ρ_j` on a uniform cell-centered grid.
///
/// Cell centers differ by exact multiples of `h`, so the table is indexed by
/// `j − i` and every row of the sum is a contiguous dot product.
#[derive(Debug, Clone)]
pub struct KernelTable {
    n: usize,
    h: f64,
    // full[k] = K((k - (n - 1)) h), k = 0 .. 2n - 1
    full: Vec<f64>,
}

impl KernelTable {
    pub fn new(spec: &PotentialSpec, n: usize, h: f64) -> Self {
        let full = (0..2 * n - 1)
            .map(|k| spec.eval_k((k as f64 - (n as f64 - 1.0)) * h))
            .collect();
        Self { n, h, full }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Writes `h Σ_j K(x_i − x_j) ρ_j` into `out`. Summation order is fixed,
    /// so results are bit-reproducible.
    pub fn convolve_into(&self, rho: &[f64], out: &mut [f64]) {
        assert_eq!(rho.len(), self.n, "density length does not match kernel table");
        assert_eq!(out.len(), self.n);
        let n = self.n;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.full[n - 1 - i..2 * n - 1 - i];
            *o = self.h * dot(row, rho);
        }
    }

    /// Like [`convolve_into`](Self::convolve_into), but only for rows in
    /// `rows` and treating `rho` as zero outside `support`.
    pub fn convolve_window(
        &self,
        rho: &[f64],
        support: std::ops::Range<usize>,
        rows: std::ops::Range<usize>,
        out: &mut [f64],
    ) {
        assert_eq!(rho.len(), self.n, "density length does not match kernel table");
        assert!(support.end <= self.n && rows.end <= self.n && out.len() == self.n);
        let n = self.n;
        let src = &rho[support.clone()];
        for i in rows {
            let start = n - 1 - i + support.start;
            out[i] = self.h * dot(&self.full[start..start + src.len()], src);
        }
    }

    pub fn convolve(&self, rho: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.convolve_into(rho, &mut out);
        out
    }
}

/// Dot product with four interleaved accumulators (fixed order).
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
