//! Exact 2-Wasserstein distances on the line.
//!
//! In 1-D the optimal plan is monotone, so `W₂²(a, b) = ∫₀¹ (Q_a(u) − Q_b(u))² du`
//! with `Q` the quantile functions. Both quantile functions here are piecewise
//! linear, and each piece of their common refinement is integrated in closed
//! form. [`w2_density_to_atoms`] is the direct construction for a density
//! against Dirac masses: it partitions the support into intervals carrying the
//! atom masses and integrates the squared displacement on each.

use crate::error::{Error, Result};
use crate::measures::{DensityField, MixedMeasure, ParticleEnsemble, QuantilePiece};

/// Largest tolerated difference in total mass between compared measures.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Optimal partition of a density's support onto a set of atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    /// `x_0 < x_1 < … < x_n`; `[x_{i−1}, x_i]` is sent to `targets[i − 1]`.
    pub cuts: Vec<f64>,
    /// Atom locations, ties merged, increasing.
    pub targets: Vec<f64>,
    /// Atom masses matching `targets`, rescaled to the density's mass.
    pub masses: Vec<f64>,
}

fn check_masses(left: f64, right: f64) -> Result<()> {
    if (left - right).abs() > MASS_TOLERANCE || !left.is_finite() || !right.is_finite() {
        return Err(Error::MassMismatch { left, right });
    }
    Ok(())
}

/// `∫_0^Δ (c0 + c1 s)² ds`, written as a sum of squares so it is never negative.
fn linear_square_integral(c0: f64, c1: f64, delta: f64) -> f64 {
    let mid = c0 + 0.5 * c1 * delta;
    delta * (mid * mid + c1 * c1 * delta * delta / 12.0)
}

fn eval(p: &QuantilePiece, u: f64) -> f64 {
    if p.slope == 0.0 {
        p.x0
    } else {
        p.x0 + p.slope * (u - p.u0)
    }
}

/// Squared distance between two piecewise-linear quantile functions.
fn quantile_distance_sq(qa: &[QuantilePiece], qb: &[QuantilePiece]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut lo = 0.0;
    let mut total = 0.0;
    while i < qa.len() && j < qb.len() {
        let hi = qa[i].u1.min(qb[j].u1);
        if hi > lo {
            let c0 = eval(&qa[i], lo) - eval(&qb[j], lo);
            let c1 = qa[i].slope - qb[j].slope;
            total += linear_square_integral(c0, c1, hi - lo);
            lo = hi;
        }
        if qa[i].u1 <= hi {
            i += 1;
        }
        if qb[j].u1 <= hi {
            j += 1;
        }
    }
    total
}

/// 2-Wasserstein distance between two measures of equal mass.
pub fn w2_mixed(a: &MixedMeasure, b: &MixedMeasure) -> Result<f64> {
    check_masses(a.total_mass(), b.total_mass())?;
    let qa = a.quantile_pieces();
    let qb = b.quantile_pieces();
    Ok(quantile_distance_sq(&qa, &qb).sqrt())
}

/// 2-Wasserstein distance from a cell-averaged density to a weighted
/// particle ensemble, together with the optimal partition.
///
/// Cut `x_i` is the `S_i`-quantile of the density, `S_i` the cumulative
/// atom mass; inside a zero-density plateau the cut sits at its left edge.
pub fn w2_density_to_atoms(rho: &DensityField, mu: &ParticleEnsemble) -> Result<(f64, PartitionPlan)> {
    let rho_mass = rho.mass();
    check_masses(rho_mass, mu.total_mass())?;

    // merge ties so cuts are strictly increasing
    let mut targets: Vec<f64> = Vec::new();
    let mut masses: Vec<f64> = Vec::new();
    for (&x, &w) in mu.positions().iter().zip(mu.weights()) {
        match targets.last() {
            Some(&y) if y == x => *masses.last_mut().unwrap() += w,
            _ => {
                targets.push(x);
                masses.push(w);
            }
        }
    }
    let scale = rho_mass / masses.iter().sum::<f64>();
    masses.iter_mut().for_each(|m| *m *= scale);
    let mut cumulative = Vec::with_capacity(masses.len());
    let mut acc = 0.0;
    for m in &masses {
        acc += m;
        cumulative.push(acc);
    }

    let g = rho.grid;
    let mut cuts = Vec::with_capacity(targets.len() + 1);
    let mut dist_sq = 0.0;
    let mut atom = 0;
    let mut cell_lo_mass = 0.0;
    let last_positive = rho.values.iter().rposition(|&v| v > 0.0);
    let Some(last_positive) = last_positive else {
        return Err(Error::Precondition("density has no mass".into()));
    };
    // the final cumulative target is pinned to the density's exact total
    *cumulative.last_mut().unwrap() = f64::INFINITY;

    for (k, &v) in rho.values.iter().enumerate().take(last_positive + 1) {
        if v <= 0.0 {
            continue;
        }
        let (a, b) = (g.edge(k), g.edge(k + 1));
        if cuts.is_empty() {
            cuts.push(a);
        }
        let cell_hi_mass = cell_lo_mass + v * (b - a);
        let mut p = a;
        loop {
            let target = cumulative[atom];
            let ends_here = target <= cell_hi_mass;
            let q = if ends_here {
                (a + (target - cell_lo_mass) / v).clamp(p, b)
            } else {
                b
            };
            let len = q - p;
            if len > 0.0 {
                let d = 0.5 * (p + q) - targets[atom];
                dist_sq += v * len * (d * d + len * len / 12.0);
            }
            p = q;
            if ends_here {
                cuts.push(q);
                atom += 1;
                if atom == targets.len() {
                    break;
                }
            } else {
                break;
            }
        }
        cell_lo_mass = cell_hi_mass;
        if atom == targets.len() {
            break;
        }
    }
    cuts.push(g.edge(last_positive + 1));
    debug_assert_eq!(cuts.len(), targets.len() + 1);
    Ok((dist_sq.sqrt(), PartitionPlan { cuts, targets, masses }))
}

/// Test oracle: sort both equal-weight ensembles and match rank to rank.
pub fn w2_discrete_oracle(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Precondition(format!("particle counts differ: {} vs {}", a.len(), b.len())));
    }
    let w = a.weights()[0];
    let uniform = |e: &ParticleEnsemble| e.weights().iter().all(|&x| (x - w).abs() <= 1e-12 * w);
    if !uniform(a) || !uniform(b) {
        return Err(Error::Precondition("oracle needs uniform equal weights".into()));
    }
    let mut xa = a.positions().to_vec();
    let mut xb = b.positions().to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let n = xa.len() as f64;
    let sum: f64 = xa.iter().zip(&xb).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{indicator_density, Atom, Grid1D};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_density() -> DensityField {
        indicator_density(0.0, 1.0, 1.0, Grid1D::default()).unwrap()
    }

    #[test]
    fn uniform_to_midpoint() {
        let mu = ParticleEnsemble::new(vec![0.5], vec![1.0]).unwrap();
        let (d, plan) = w2_density_to_atoms(&unit_density(), &mu).unwrap();
        assert_abs_diff_eq!(d, (1.0f64 / 12.0).sqrt(), epsilon = 1e-12);
        assert_eq!(plan.cuts.len(), 2);
        let m = MixedMeasure::atom(0.5, 1.0).unwrap();
        let d2 = w2_mixed(&unit_density().into_measure(), &m).unwrap();
        assert_abs_diff_eq!(d, d2, epsilon = 1e-12);
    }

    #[test]
    fn uniform_to_two_quarters() {
        let mu = ParticleEnsemble::new(vec![0.25, 0.75], vec![0.5, 0.5]).unwrap();
        let (d, plan) = w2_density_to_atoms(&unit_density(), &mu).unwrap();
        assert_abs_diff_eq!(d, (1.0f64 / 48.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(plan.cuts[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn quantization_converges_monotonically() {
        let rho = indicator_density(0.0, 0.25, 4.0, Grid1D::default()).unwrap();
        let mut prev = f64::INFINITY;
        for n in [1, 2, 4, 8, 16, 32, 64] {
            let mu = ParticleEnsemble::mid_quantiles_uniform(n, 0.0, 0.25).unwrap();
            let (d, _) = w2_density_to_atoms(&rho, &mu).unwrap();
            assert!(d < prev);
            // closed form for uniform mass on an interval of length 0.25
            assert_abs_diff_eq!(d, 0.25 / (n as f64 * 12f64.sqrt()), epsilon = 1e-12);
            prev = d;
        }
    }

    #[test]
    fn mixed_examples() {
        let a = MixedMeasure::atom(0.0, 1.0).unwrap();
        let b = MixedMeasure::atom(1.0, 1.0).unwrap();
        assert_eq!(w2_mixed(&a, &b).unwrap(), 1.0);
        let m = MixedMeasure::new(
            vec![Atom { location: 0.1, mass: 0.3 }],
            Some(indicator_density(0.2, 0.9, 1.0, Grid1D::default()).unwrap()),
        )
        .unwrap();
        assert_eq!(w2_mixed(&m, &m).unwrap(), 0.0);
        let shifted = m.translated(0.37);
        assert_abs_diff_eq!(w2_mixed(&m, &shifted).unwrap(), 0.37, epsilon = 1e-12);
    }

    #[test]
    fn mass_mismatch_is_rejected() {
        let a = MixedMeasure::atom(0.0, 1.0).unwrap();
        let b = MixedMeasure::atom(0.0, 0.9).unwrap();
        assert!(matches!(w2_mixed(&a, &b), Err(Error::MassMismatch { .. })));
        let mu = ParticleEnsemble::new(vec![0.5], vec![0.5]).unwrap();
        assert!(w2_density_to_atoms(&unit_density(), &mu).is_err());
    }

    #[test]
    fn oracle_examples() {
        let a = ParticleEnsemble::equal_weights(vec![0.0, 1.0]).unwrap();
        let b = ParticleEnsemble::equal_weights(vec![1.0, 0.0]).unwrap();
        assert_eq!(w2_discrete_oracle(&a, &b).unwrap(), 0.0);
        let c = ParticleEnsemble::equal_weights(vec![0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(w2_discrete_oracle(&a, &c).unwrap(), 0.5, epsilon = 1e-15);
        let three = ParticleEnsemble::equal_weights(vec![0.0, 0.5, 1.0]).unwrap();
        assert!(w2_discrete_oracle(&a, &three).is_err());
        let uneven = ParticleEnsemble::new(vec![0.0, 1.0], vec![0.3, 0.7]).unwrap();
        assert!(w2_discrete_oracle(&a, &uneven).is_err());
    }

    #[test]
    fn oracle_matches_quantile_route_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let xs: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.5)).collect();
            let ys: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.5)).collect();
            let a = ParticleEnsemble::equal_weights(xs).unwrap();
            let b = ParticleEnsemble::equal_weights(ys).unwrap();
            let oracle = w2_discrete_oracle(&a, &b).unwrap();
            let mixed = w2_mixed(&a.to_measure(0.0), &b.to_measure(0.0)).unwrap();
            assert_abs_diff_eq!(oracle, mixed, epsilon = 1e-10);
        }
    }

    #[test]
    fn partition_intervals_carry_atom_masses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = Grid1D::new(0.0, 1.5, 300).unwrap();
        for _ in 0..50 {
            // density with interleaved empty cells
            let vals: Vec<f64> =
                (0..300).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..2.0) }).collect();
            let mut d = DensityField::new(grid, vals).unwrap();
            let m = d.mass();
            d.values.iter_mut().for_each(|v| *v /= m);
            let n = rng.gen_range(1..40);
            let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.5)).collect();
            let mu = ParticleEnsemble::equal_weights(xs).unwrap();
            let (dist, plan) = w2_density_to_atoms(&d, &mu).unwrap();
            let measure = d.clone().into_measure();
            assert!(plan.cuts.windows(2).all(|w| w[0] < w[1]), "{:?}", plan.cuts);
            for (i, s) in plan.masses.iter().enumerate() {
                let got = measure.cdf(plan.cuts[i + 1]) - measure.cdf(plan.cuts[i]);
                assert!((got - s).abs() <= 1e-12, "interval {i}: {got} vs {s}");
            }
            let via_quantiles = w2_mixed(&measure, &mu.to_measure(0.0)).unwrap();
            assert_abs_diff_eq!(dist, via_quantiles, epsilon = 1e-12);
        }
    }
}
