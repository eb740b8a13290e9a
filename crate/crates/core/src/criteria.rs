//! Optimality criteria for both models and design efficiencies.
//!
//! Values are reported in their natural orientation: `det M` for D
//! (larger is better) and `det(AᵀM⁻A)`, `tr(M⁻B)`, `cᵀM⁻c` for the
//! others (smaller is better). Optimizers use [`objective`], which maps
//! every criterion to a concave "larger is better" scale.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{self, info_matrix, Design, ModelKind, ModelSpec};
use crate::numerics::{self, column_rank, generalized_inverse, sym_rank, SymMatrix, DEFAULT_TOL};

/// Choice of optimality criterion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum CriterionSpec {
    D,
    /// `det(AᵀM⁻A)` for a `p × s` matrix `A` of full column rank.
    DA {
        #[serde(rename = "A", with = "numerics::rows")]
        a: DMatrix<f64>,
    },
    /// D_A with `A` selecting the listed parameters.
    Ds {
        indices: Vec<usize>,
    },
    /// `tr(M⁻B)` for symmetric positive semidefinite `B`.
    L {
        #[serde(rename = "B", with = "numerics::rows")]
        b: DMatrix<f64>,
    },
    /// `cᵀM⁻c`.
    #[serde(rename = "c")]
    C {
        c: Vec<f64>,
    },
}

impl CriterionSpec {
    /// Checks the variant's invariants for `p` parameters.
    pub fn validate(&self, p: usize) -> Result<()> {
        match self {
            CriterionSpec::D => Ok(()),
            CriterionSpec::DA { a } => {
                check_dim(p, a.nrows())?;
                if a.ncols() == 0 || a.ncols() >= p || column_rank(a, 1e-9) < a.ncols() {
                    return Err(Error::RankDeficientA);
                }
                Ok(())
            }
            CriterionSpec::Ds { indices } => selector(indices, p).map(|_| ()),
            CriterionSpec::L { b } => {
                check_dim(p, b.nrows())?;
                let sym = SymMatrix::new(b.clone())?;
                if sym.min_eigenvalue() < -1e-10 * sym.amax().max(1.0) {
                    return Err(Error::Invalid(
                        "L-criterion matrix B must be positive semidefinite".into(),
                    ));
                }
                Ok(())
            }
            CriterionSpec::C { c } => {
                check_dim(p, c.len())?;
                if c.iter().all(|v| *v == 0.0) {
                    return Err(Error::Invalid("c must be nonzero".into()));
                }
                Ok(())
            }
        }
    }

    /// Whether larger natural values are better (only D).
    pub fn larger_is_better(&self) -> bool {
        matches!(self, CriterionSpec::D)
    }

    /// Matrix whose columns must lie in the range of the information matrix
    /// for the criterion to be defined. `None` for D.
    pub fn estimand(&self, p: usize) -> Result<Option<DMatrix<f64>>> {
        self.validate(p)?;
        Ok(match self {
            CriterionSpec::D => None,
            CriterionSpec::DA { a } => Some(a.clone()),
            CriterionSpec::Ds { indices } => Some(selector(indices, p)?),
            CriterionSpec::L { b } => Some(b.clone()),
            CriterionSpec::C { c } => Some(DMatrix::from_column_slice(p, 1, c)),
        })
    }

    /// Exponent of the homogeneous version used in efficiencies.
    pub fn efficiency_exponent(&self, p: usize) -> Result<f64> {
        Ok(match self {
            CriterionSpec::D => 1.0 / p as f64,
            CriterionSpec::DA { .. } | CriterionSpec::Ds { .. } => {
                1.0 / self.estimand(p)?.expect("DA has an estimand").ncols() as f64
            }
            CriterionSpec::L { .. } | CriterionSpec::C { .. } => 1.0,
        })
    }

    /// `Aᵀe₁ = 0`: the criterion ignores the intercept, so its values
    /// differ between the models only by a constant factor.
    fn ignores_intercept(&self, p: usize) -> Result<bool> {
        Ok(match self {
            CriterionSpec::DA { .. } | CriterionSpec::Ds { .. } => {
                let a = self.estimand(p)?.expect("DA has an estimand");
                a.row(0).iter().all(|v| *v == 0.0)
            }
            _ => false,
        })
    }
}

fn selector(indices: &[usize], p: usize) -> Result<DMatrix<f64>> {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.is_empty()
        || sorted.len() != indices.len()
        || sorted.len() >= p
        || sorted.iter().any(|i| *i >= p)
    {
        return Err(Error::BadIndexSet(format!(
            "{indices:?} is not a nonempty proper subset of 0..{p}"
        )));
    }
    let mut a = DMatrix::zeros(p, indices.len());
    for (col, &i) in indices.iter().enumerate() {
        a[(i, col)] = 1.0;
    }
    Ok(a)
}

/// D_A criterion whose `A` selects the given parameter indices.
pub fn ds_spec(indices: &[usize], p: usize) -> Result<CriterionSpec> {
    Ok(CriterionSpec::DA {
        a: selector(indices, p)?,
    })
}

/// Criterion evaluated on an information matrix that is already built.
pub fn criterion_from_info(info: &SymMatrix, crit: &CriterionSpec) -> Result<f64> {
    let p = info.dim();
    match crit.estimand(p)? {
        None => {
            if sym_rank(info, DEFAULT_TOL) < p {
                return Err(Error::SingularForD);
            }
            Ok(info.det())
        }
        Some(a) => {
            if !model::in_column_space(info, &a) {
                return Err(Error::NotIdentifiable);
            }
            let g = generalized_inverse(info, DEFAULT_TOL);
            Ok(linear_part(&g, crit, &a))
        }
    }
}

fn linear_part(g: &SymMatrix, crit: &CriterionSpec, a: &DMatrix<f64>) -> f64 {
    match crit {
        CriterionSpec::DA { .. } | CriterionSpec::Ds { .. } => {
            (a.transpose() * g.as_matrix() * a).determinant()
        }
        CriterionSpec::L { b } => (g.as_matrix() * b).trace(),
        CriterionSpec::C { .. } => {
            let c = a.column(0);
            c.dot(&(g.as_matrix() * c))
        }
        CriterionSpec::D => unreachable!("D has no estimand"),
    }
}

/// Criterion value of `design` in the chosen model.
pub fn criterion_value(
    design: &Design,
    model: &ModelSpec,
    crit: &CriterionSpec,
    kind: ModelKind,
) -> Result<f64> {
    let info = info_matrix(design, model, kind)?;
    criterion_from_info(&info, crit)
}

/// `det M` of the Poisson-Gamma information from the Poisson information
/// alone: `(a/b)^p det(M_Po) / (1 + (m/b)·e₁ᵀM_Po e₁)`.
pub fn det_pg_via_poisson(design: &Design, model: &ModelSpec) -> Result<f64> {
    let mpo = model::info_poisson(design, model)?;
    Ok(det_pg_from_poisson(&mpo, model))
}

pub(crate) fn det_pg_from_poisson(mpo: &SymMatrix, model: &ModelSpec) -> f64 {
    let p = mpo.dim();
    if sym_rank(mpo, DEFAULT_TOL) < p {
        return 0.0;
    }
    (model.a / model.b).powi(p as i32) * mpo.det() / (1.0 + model.m as f64 / model.b * mpo[(0, 0)])
}

/// `det(M_Po)⁻¹ + (m/b)·det(AᵀM_Po⁻¹A)` with `A` selecting all slopes.
/// Minimizing it is the same as maximizing the Poisson-Gamma D-criterion.
pub fn weighted_d_ds_objective(design: &Design, model: &ModelSpec) -> Result<f64> {
    let p = model.p();
    if p < 2 {
        return Err(Error::BadP(p));
    }
    let mpo = model::info_poisson(design, model)?;
    let slopes: Vec<usize> = (1..p).collect();
    let ds = criterion_from_info(&mpo, &ds_spec(&slopes, p)?)?;
    let det = criterion_from_info(&mpo, &CriterionSpec::D)?;
    Ok(1.0 / det + model.m as f64 / model.b * ds)
}

/// Efficiency of `design` relative to `optimal`, using the homogeneous
/// version of the criterion (exponent `1/p` for D, `1/s` for D_A, plain
/// ratio for L and c).
pub fn efficiency(
    design: &Design,
    model: &ModelSpec,
    crit: &CriterionSpec,
    kind: ModelKind,
    optimal: &Design,
) -> Result<f64> {
    let p = model.p();
    let exponent = crit.efficiency_exponent(p)?;
    match crit {
        CriterionSpec::D => {
            let det_of = |d: &Design| -> Result<f64> {
                let info = info_matrix(d, model, kind)?;
                Ok(if sym_rank(&info, DEFAULT_TOL) < p {
                    0.0
                } else {
                    info.det().max(0.0)
                })
            };
            let best = det_of(optimal)?;
            if !(best > 0.0) {
                return Err(Error::ZeroCriterion);
            }
            Ok((det_of(design)? / best).powf(exponent))
        }
        _ => {
            let best = criterion_value(optimal, model, crit, kind)?;
            let cand = criterion_value(design, model, crit, kind)?;
            if !(cand > 0.0) {
                return Err(Error::ZeroCriterion);
            }
            Ok((best / cand).powf(exponent))
        }
    }
}

/// Concave, larger-is-better version of a criterion:
/// `ln det M`, `−ln det(AᵀM⁻¹A)`, `−tr(M⁻¹B)` or `−cᵀM⁻¹c`.
/// Returns `−∞` for a singular matrix.
pub fn objective(info: &SymMatrix, crit: &CriterionSpec) -> f64 {
    let Some(inv) = info.inverse() else {
        return f64::NEG_INFINITY;
    };
    match crit {
        CriterionSpec::D => {
            let d = info.det();
            if d > 0.0 {
                d.ln()
            } else {
                f64::NEG_INFINITY
            }
        }
        _ => {
            let Ok(Some(a)) = crit.estimand(info.dim()) else {
                return f64::NEG_INFINITY;
            };
            let v = linear_part(&inv, crit, &a);
            match crit {
                CriterionSpec::DA { .. } | CriterionSpec::Ds { .. } => -v.ln(),
                _ => -v,
            }
        }
    }
}

/// Gradient of [`objective`] with respect to the information matrix,
/// as a symmetric matrix `G` with `dφ = tr(G dM)`.
pub fn objective_gradient(info: &SymMatrix, crit: &CriterionSpec) -> Option<SymMatrix> {
    let inv = info.inverse()?;
    let g = match crit {
        CriterionSpec::D => inv.into_matrix(),
        _ => {
            let a = crit.estimand(info.dim()).ok()??;
            let ga = inv.as_matrix() * &a;
            match crit {
                CriterionSpec::DA { .. } | CriterionSpec::Ds { .. } => {
                    let inner = (a.transpose() * &ga).try_inverse()?;
                    &ga * inner * ga.transpose()
                }
                CriterionSpec::L { b } => inv.as_matrix() * b * inv.as_matrix(),
                CriterionSpec::C { .. } => &ga * ga.transpose(),
                CriterionSpec::D => unreachable!(),
            }
        }
    };
    Some(SymMatrix::symmetrize(g))
}

/// Whether the criterion is one for which both models share the same
/// optimal designs: L, c, or D_A with `Aᵀe₁ = 0`.
pub fn cross_model_eligible(crit: &CriterionSpec, p: usize) -> Result<bool> {
    Ok(match crit {
        CriterionSpec::L { .. } | CriterionSpec::C { .. } => true,
        CriterionSpec::DA { .. } | CriterionSpec::Ds { .. } => crit.ignores_intercept(p)?,
        CriterionSpec::D => false,
    })
}
