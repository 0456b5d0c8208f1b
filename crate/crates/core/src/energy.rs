//! Interaction energy `½∬K(x−y)dμdμ` and the diffusive energy that adds
//! `ν^α/(m−1)∫ρ^m`. Density integrals use the midpoint rule on cell centers.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{DensityField, MixedMeasure};
use crate::potentials::{KernelTable, PotentialSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub interaction: f64,
    pub entropy: f64,
    /// Always zero: no external potential is used.
    pub external: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub(crate) fn assemble(interaction: f64, entropy: f64) -> Self {
        let external = 0.0;
        Self { interaction, entropy, external, total: interaction + entropy + external }
    }
}

/// `½ h² Σ_ij ρ_i ρ_j K(x_i − x_j)`.
fn density_self_energy(d: &DensityField, spec: &PotentialSpec) -> f64 {
    let h = d.grid.h();
    let table = KernelTable::new(spec, d.grid.n_cells, h);
    let conv = table.convolve(&d.values);
    0.5 * h * crate::potentials::dot(&d.values, &conv)
}

/// Interaction energy of any mixed measure. The atom double sum includes
/// the diagonal, which contributes `½ w² K(0)`.
pub fn interaction_energy(m: &MixedMeasure, spec: &PotentialSpec) -> f64 {
    let atoms = m.atoms();
    let mut atom_atom = 0.0;
    for a in atoms {
        for b in atoms {
            atom_atom += a.mass * b.mass * spec.eval_k(a.location - b.location);
        }
    }
    let mut cross = 0.0;
    let mut dens = 0.0;
    if let Some(d) = m.density() {
        let g = d.grid;
        let h = g.h();
        for a in atoms {
            let s: f64 = d
                .values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, v)| v * spec.eval_k(a.location - g.center(j)))
                .sum();
            cross += a.mass * h * s;
        }
        dens = density_self_energy(d, spec);
    }
    0.5 * atom_atom + cross + dens
}

/// Plain-model energy as a breakdown with no entropy term.
pub fn plain_energy(m: &MixedMeasure, spec: &PotentialSpec) -> EnergyBreakdown {
    EnergyBreakdown::assemble(interaction_energy(m, spec), 0.0)
}

/// `ν^α/(m−1) h Σ ρ_i^m`.
pub fn entropy(rho: &DensityField, nu: f64, alpha: f64, m: f64) -> Result<f64> {
    if !(m > 1.0) {
        return Err(Error::Domain(format!("diffusion exponent m must exceed 1, got {m}")));
    }
    if !(nu >= 0.0) {
        return Err(Error::Domain(format!("diffusivity must be nonnegative, got {nu}")));
    }
    if nu == 0.0 {
        return Ok(0.0);
    }
    let coeff = nu.powf(alpha) / (m - 1.0);
    let sum: f64 = if m == 2.0 {
        rho.values.iter().map(|v| v * v).sum()
    } else {
        rho.values.iter().map(|v| v.powf(m)).sum()
    };
    Ok(coeff * rho.grid.h() * sum)
}

/// Regularized energy of a density.
pub fn diffusive_energy(
    rho: &DensityField,
    nu: f64,
    alpha: f64,
    m: f64,
    spec: &PotentialSpec,
) -> Result<EnergyBreakdown> {
    let s = entropy(rho, nu, alpha, m)?;
    Ok(EnergyBreakdown::assemble(density_self_energy(rho, spec), s))
}
