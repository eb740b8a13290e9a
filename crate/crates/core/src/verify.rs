//! Equivalence-theorem checks for D-optimality and numerical checks of the
//! structural properties of the Poisson-Gamma information matrix.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{criterion_value, cross_model_eligible, CriterionSpec};
use crate::error::{check_dim, Error, Result};
use crate::model::{
    info_pg, info_poisson, info_population, merge_population, Design, DesignRegion, ModelKind,
    ModelSpec, Point, PopulationDesign,
};
use crate::numerics::{loewner_geq, SymMatrix};

/// Which D-criterion a design is claimed to be optimal for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquivalenceKind {
    DPg,
    DPoisson,
    /// D_s for all slopes in the Poisson model (the same designs are
    /// optimal in the Poisson-Gamma model).
    DsPoisson,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub max_sensitivity: f64,
    pub trace_bound: f64,
    pub worst_point: Point,
    /// `max_sensitivity − trace_bound`.
    pub violation: f64,
    pub passes: bool,
    /// `|sensitivity − trace_bound|` at each support point, in design order.
    pub support_equalities: Vec<f64>,
}

/// Precomputed pieces of a sensitivity function `x ↦ e^{η(x)}·(f(x)ᵀ K f(x) − shift)`.
struct Kernel {
    /// `K`
    inv: SymMatrix,
    shift: f64,
    bound: f64,
}

impl Kernel {
    fn new(design: &Design, model: &ModelSpec, kind: EquivalenceKind) -> Result<Self> {
        let mpo = info_poisson(design, model)?.matrix;
        let inv = mpo.inverse().ok_or(Error::SingularInfo)?;
        let p = model.p() as f64;
        Ok(match kind {
            EquivalenceKind::DPoisson => Kernel {
                inv,
                shift: 0.0,
                bound: p,
            },
            EquivalenceKind::DsPoisson => {
                // M⁻¹A(AᵀM⁻¹A)⁻¹AᵀM⁻¹ with A selecting the slopes
                let k = model.p() - 1;
                let ga = inv.columns(1, k).into_owned();
                let inner = ga
                    .rows(1, k)
                    .into_owned()
                    .try_inverse()
                    .ok_or(Error::SingularInfo)?;
                Kernel {
                    inv: SymMatrix::symmetrize(&ga * inner * ga.transpose()),
                    shift: 0.0,
                    bound: k as f64,
                }
            }
            EquivalenceKind::DPg => {
                let c = mpo[(0, 0)] + model.b / model.m as f64;
                Kernel {
                    inv,
                    shift: 1.0 / c,
                    bound: p - mpo[(0, 0)] / c,
                }
            }
        })
    }

    fn eval(&self, x: &[f64], model: &ModelSpec) -> Result<f64> {
        let f: DVector<f64> = model.regressor(x)?;
        Ok(model.eta(x)?.exp() * (self.inv.quad(&f) - self.shift))
    }
}

/// Sensitivity function of the Poisson-Gamma D-criterion,
/// `λ(η)·f(x)ᵀM̃⁻¹ M M̃⁻¹f(x)` with `M̃ = (a/b)·M_Po` and `λ(η) = (a/b)e^η`.
///
/// Evaluated as `e^η·(f(x)ᵀM_Po⁻¹f(x) − 1/(e₁ᵀM_Po e₁ + b/m))`, which no
/// longer involves `a`. A design is D-optimal iff this never exceeds
/// [`trace_bound_pg`].
pub fn sensitivity_pg(x: &[f64], design: &Design, model: &ModelSpec) -> Result<f64> {
    Kernel::new(design, model, EquivalenceKind::DPg)?.eval(x, model)
}

/// Classical Poisson D sensitivity `e^η·f(x)ᵀM_Po⁻¹f(x)` (bound `p`).
pub fn sensitivity_poisson(x: &[f64], design: &Design, model: &ModelSpec) -> Result<f64> {
    Kernel::new(design, model, EquivalenceKind::DPoisson)?.eval(x, model)
}

/// `tr(M M̃⁻¹) = p − e₁ᵀM_Po e₁ / (e₁ᵀM_Po e₁ + b/m)`.
pub fn trace_bound_pg(design: &Design, model: &ModelSpec) -> Result<f64> {
    Ok(Kernel::new(design, model, EquivalenceKind::DPg)?.bound)
}

/// Default grid resolution for the equivalence check in `dim` covariates.
pub fn default_grid_per_axis(dim: usize) -> usize {
    match dim {
        0..=2 => 201,
        3 => 41,
        _ => 11,
    }
}

/// Evaluates the sensitivity on a tensor grid over the region and at the
/// support points. `tol` is relative to the trace bound.
pub fn check_equivalence(
    design: &Design,
    model: &ModelSpec,
    region: &DesignRegion,
    kind: EquivalenceKind,
    grid_per_axis: usize,
    tol: f64,
) -> Result<EquivalenceReport> {
    check_dim(model.p() - 1, region.dim())?;
    check_dim(region.dim(), design.point_dim())?;
    if grid_per_axis < 2 {
        return Err(Error::Invalid(format!(
            "grid needs at least 2 points per axis, got {grid_per_axis}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Invalid(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let kernel = Kernel::new(design, model, kind)?;

    let mut points = region.grid(grid_per_axis);
    points.extend(design.points().iter().cloned());
    let values: Vec<f64> = points
        .par_iter()
        .map(|x| kernel.eval(x, model))
        .collect::<Result<_>>()?;
    // first index of the maximum, so ties resolve the same way every run
    let (worst, max_sensitivity) =
        values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| {
                if v > bv || v.is_nan() && !bv.is_nan() {
                    (i, v)
                } else {
                    (bi, bv)
                }
            });

    let support_equalities: Vec<f64> = values[values.len() - design.len()..]
        .iter()
        .map(|v| (v - kernel.bound).abs())
        .collect();
    let violation = max_sensitivity - kernel.bound;
    let limit = tol * kernel.bound;
    let passes = violation <= limit && support_equalities.iter().all(|g| *g <= limit);
    Ok(EquivalenceReport {
        max_sensitivity,
        trace_bound: kernel.bound,
        worst_point: points[worst].clone(),
        violation,
        passes,
        support_equalities,
    })
}

fn loewner_tol(m: &SymMatrix, tol: f64) -> f64 {
    tol * m.amax().max(1.0)
}

/// `M(αξ₁ + (1−α)ξ₂) ≥ αM(ξ₁) + (1−α)M(ξ₂)` in the Loewner order for every
/// `α`, with `tol` relative to the largest matrix entry.
pub fn check_superadditivity(
    xi1: &Design,
    xi2: &Design,
    alphas: &[f64],
    model: &ModelSpec,
    tol: f64,
) -> Result<bool> {
    check_dim(xi1.point_dim(), xi2.point_dim())?;
    let m1 = info_pg(xi1, model)?.matrix;
    let m2 = info_pg(xi2, model)?.matrix;
    for &alpha in alphas {
        let mixed = info_pg(&xi1.mix(xi2, alpha)?, model)?.matrix;
        let combo = m1.scaled(alpha).add(&m2.scaled(1.0 - alpha));
        if !loewner_geq(&mixed, &combo, loewner_tol(&mixed, tol))? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The merged individual design carries at least the information of the
/// population design it came from.
pub fn check_corollary_merge(pop: &PopulationDesign, model: &ModelSpec, tol: f64) -> Result<bool> {
    for d in pop.designs() {
        check_dim(model.p() - 1, d.point_dim())?;
    }
    let merged = info_pg(&merge_population(pop), model)?.matrix;
    let population = info_population(pop, model)?.matrix;
    loewner_geq(&merged, &population, loewner_tol(&merged, tol))
}

fn value_or_inf(
    design: &Design,
    model: &ModelSpec,
    crit: &CriterionSpec,
    kind: ModelKind,
) -> Result<f64> {
    match criterion_value(design, model, crit, kind) {
        Err(Error::NotIdentifiable) => Ok(f64::INFINITY),
        other => other,
    }
}

fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |(bi, bv), (i, v)| if *v < bv { (i, *v) } else { (bi, bv) },
        )
        .0
}

/// Whether `design` and `candidates` have the same best element under the
/// Poisson and the Poisson-Gamma model for an L, c or intercept-free D_A
/// criterion. A winner in one model counts as a winner in the other if it
/// is tied with that model's minimum to relative 1e-10.
pub fn check_cross_model_optima(
    design: &Design,
    model: &ModelSpec,
    crit: &CriterionSpec,
    candidates: &[Design],
) -> Result<bool> {
    if !cross_model_eligible(crit, model.p())? {
        return Err(Error::IneligibleCriterion);
    }
    let all: Vec<&Design> = std::iter::once(design).chain(candidates).collect();
    let values = |kind| -> Result<Vec<f64>> {
        all.iter()
            .map(|d| value_or_inf(d, model, crit, kind))
            .collect()
    };
    let po = values(ModelKind::Poisson)?;
    let pg = values(ModelKind::PoissonGamma)?;
    let wins = |vals: &[f64], i: usize| {
        let best = vals[argmin(vals)];
        vals[i] == best || vals[i] <= best + 1e-10 * best.abs()
    };
    Ok(wins(&pg, argmin(&po)) && wins(&po, argmin(&pg)))
}
