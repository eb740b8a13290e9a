//! Closed-form locally optimal designs on a rectangular region for
//! first-order multiple regression `f(x) = (1, xᵀ)ᵀ`.
//!
//! All designs here share one geometry: a support point at the vertex `d`
//! where the intensity `exp(f(x)ᵀβ)` is largest, and one point on each
//! edge leaving `d`, at linear-predictor distance `z` from it
//! (`d − (z/β_i)·e_i`). Only `z` and the weights differ between criteria.

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::model::{Design, DesignRegion, ModelSpec, Point};
use crate::numerics::solve_root_bracketed;

const BRACKET_NUDGE: f64 = 1e-9;
const ROOT_TOL: f64 = 1e-12;

/// A constructed design together with its distance parameter and whether
/// it fits into the region (only then is it claimed optimal).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClosedFormResult {
    pub design: Design,
    pub z_star: f64,
    pub feasible: bool,
    /// `min_i |β_i|·(v_i − u_i)`.
    pub bound: f64,
}

fn check_p(p: usize) -> Result<()> {
    if p < 2 {
        Err(Error::BadP(p))
    } else {
        Ok(())
    }
}

fn check_z(z: f64) -> Result<()> {
    if z > 0.0 && z.is_finite() {
        Ok(())
    } else {
        Err(Error::NonpositiveZ(z))
    }
}

/// Vertex of the region maximizing the intensity: `d_i = v_i` for
/// `β_i > 0`, `d_i = u_i` for `β_i < 0`.
pub fn vertex_d(region: &DesignRegion, beta: &[f64]) -> Result<Point> {
    check_p(beta.len())?;
    check_dim(beta.len() - 1, region.dim())?;
    beta[1..]
        .iter()
        .enumerate()
        .map(|(i, &bi)| {
            if bi > 0.0 {
                Ok(region.upper[i])
            } else if bi < 0.0 {
                Ok(region.lower[i])
            } else {
                Err(Error::ZeroSlope(i + 1))
            }
        })
        .collect()
}

/// D-optimal Poisson-Gamma weights `(w₁, w_p)` for the edge points and the
/// vertex, where the vertex has linear predictor `eta_vertex` and the edge
/// points `eta_vertex − z`.
pub fn weights_pg(p: usize, m: u32, b: f64, eta_vertex: f64, z: f64) -> Result<(f64, f64)> {
    check_p(p)?;
    check_z(z)?;
    let r = m as f64 / b;
    let ratio = (1.0 + r * eta_vertex.exp()) / (1.0 + r * (eta_vertex - z).exp());
    Ok(split_weights(p, ratio))
}

/// D_s-optimal weights for the slope parameters:
/// `w_p = 2 / (p + √((p−2)² + 4(p−1)e^z))`.
pub fn weights_ds(p: usize, z: f64) -> Result<(f64, f64)> {
    check_p(p)?;
    check_z(z)?;
    Ok(split_weights(p, z.exp()))
}

fn split_weights(p: usize, ratio: f64) -> (f64, f64) {
    let pf = p as f64;
    let wp = 2.0 / (pf + ((pf - 2.0).powi(2) + 4.0 * (pf - 1.0) * ratio).sqrt());
    ((1.0 - wp) / (pf - 1.0), wp)
}

/// Left-hand side of the optimality equation for `z`; its unique positive
/// root is the Poisson-Gamma D-optimal distance.
pub fn zstar_pg_equation(p: usize, m: u32, b: f64, eta_vertex: f64, z: f64) -> Result<f64> {
    let (w1, wp) = weights_pg(p, m, b, eta_vertex, z)?;
    let pf = p as f64;
    let intercept_info = (pf - 1.0) * w1 * (eta_vertex - z).exp() + wp * eta_vertex.exp();
    Ok(m as f64 * intercept_info * (z * (pf - 1.0) * w1 - 2.0) + b * (z * pf * w1 - 2.0))
}

fn zstar_pg_raw(p: usize, m: u32, b: f64, eta_vertex: f64) -> Result<f64> {
    check_p(p)?;
    let pf = p as f64;
    let lo = 2.0 * (pf - 1.0) / pf + BRACKET_NUDGE;
    let hi = 2.0 * pf / (pf - 1.0) - BRACKET_NUDGE;
    solve_root_bracketed(
        |z| zstar_pg_equation(p, m, b, eta_vertex, z).expect("z is inside the positive bracket"),
        lo,
        hi,
        ROOT_TOL,
    )
}

/// Distance `z*` of the Poisson-Gamma D-optimal design.
pub fn zstar_pg(model: &ModelSpec, region: &DesignRegion) -> Result<f64> {
    let d = vertex_d(region, &model.beta)?;
    zstar_pg_raw(model.p(), model.m, model.b, model.eta(&d)?)
}

/// Distance `z*` of the D_s-optimal design for all slopes, the root of
/// `z·(1 − w_p(z)) = 2` on `(2, 2p/(p−1))`.
pub fn zstar_ds(p: usize) -> Result<f64> {
    check_p(p)?;
    let pf = p as f64;
    let lo = 2.0 + BRACKET_NUDGE.min(0.25 * (2.0 * pf / (pf - 1.0) - 2.0));
    let hi = 2.0 * pf / (pf - 1.0) - BRACKET_NUDGE.min(0.25 * (2.0 * pf / (pf - 1.0) - 2.0));
    solve_root_bracketed(
        |z| {
            let (_, wp) = weights_ds(p, z).expect("z is inside the positive bracket");
            z * (1.0 - wp) - 2.0
        },
        lo,
        hi,
        ROOT_TOL,
    )
}

/// Design of the common family: edge points `d − (z/β_i)e_i` with weight
/// `w1` each, then the vertex `d` with weight `wp`.
pub fn family_design(vertex: &[f64], beta: &[f64], z: f64, w1: f64, wp: f64) -> Result<Design> {
    let k = vertex.len();
    check_dim(beta.len() - 1, k)?;
    let mut points = Vec::with_capacity(k + 1);
    for i in 0..k {
        let mut x = vertex.to_vec();
        x[i] -= z / beta[i + 1];
        points.push(x);
    }
    points.push(vertex.to_vec());
    let mut weights = vec![w1; k];
    weights.push(wp);
    Design::from_masses(points, weights)
}

/// `min_i |β_i|·(v_i − u_i)`: the largest `z` that keeps all edge points
/// inside the region.
pub fn distance_bound(region: &DesignRegion, beta: &[f64]) -> f64 {
    beta[1..]
        .iter()
        .zip(region.lower.iter().zip(&region.upper))
        .map(|(bi, (u, v))| bi.abs() * (v - u))
        .fold(f64::INFINITY, f64::min)
}

fn build(
    model: &ModelSpec,
    region: &DesignRegion,
    z: f64,
    weights: (f64, f64),
) -> Result<ClosedFormResult> {
    let d = vertex_d(region, &model.beta)?;
    let bound = distance_bound(region, &model.beta);
    Ok(ClosedFormResult {
        design: family_design(&d, &model.beta, z, weights.0, weights.1)?,
        z_star: z,
        feasible: z <= bound,
        bound,
    })
}

fn check_model_region(model: &ModelSpec, region: &DesignRegion) -> Result<()> {
    check_p(model.p())?;
    check_dim(model.p() - 1, region.dim())
}

/// D-optimal design for the Poisson-Gamma model.
pub fn d_optimal_pg(model: &ModelSpec, region: &DesignRegion) -> Result<ClosedFormResult> {
    check_model_region(model, region)?;
    let z = zstar_pg(model, region)?;
    let eta_d = model.eta(&vertex_d(region, &model.beta)?)?;
    let w = weights_pg(model.p(), model.m, model.b, eta_d, z)?;
    build(model, region, z, w)
}

/// D_s-optimal design for all slope parameters. The same design is optimal
/// in the Poisson and the Poisson-Gamma model and does not depend on
/// `a`, `b` or `m`.
pub fn ds_optimal(model: &ModelSpec, region: &DesignRegion) -> Result<ClosedFormResult> {
    check_model_region(model, region)?;
    let z = zstar_ds(model.p())?;
    let w = weights_ds(model.p(), z)?;
    build(model, region, z, w)
}

/// D-optimal design for the Poisson model: `z* = 2`, equal weights.
pub fn d_optimal_poisson(model: &ModelSpec, region: &DesignRegion) -> Result<ClosedFormResult> {
    check_model_region(model, region)?;
    let w = 1.0 / model.p() as f64;
    build(model, region, 2.0, (w, w))
}
