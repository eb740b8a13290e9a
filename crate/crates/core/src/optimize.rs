//! Numerical design search used to cross-check the closed-form results:
//! weight optimization on a fixed candidate set and a one-dimensional scan
//! over the distance `z` of the vertex/edge design family.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closedform::{family_design, vertex_d, weights_ds, weights_pg};
use crate::criteria::{
    criterion_from_info, det_pg_via_poisson, ds_spec, objective, objective_gradient, CriterionSpec,
};
use crate::error::{Error, Result};
use crate::model::{info_poisson, Design, DesignRegion, ModelKind, ModelSpec, Point};
use crate::numerics::SymMatrix;

const PRUNE: f64 = 1e-9;
const NEIGHBOUR_LIMIT: usize = 1000;

fn default_max_iters() -> usize {
    10_000
}

fn default_step_tol() -> f64 {
    1e-13
}

fn default_gap_tol() -> f64 {
    1e-10
}

/// Candidate set and stopping rules for [`optimize_weights`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub candidates: Vec<Point>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Stop once an iteration improves the (log-scale) objective by less.
    #[serde(default = "default_step_tol")]
    pub step_tol: f64,
    /// Stop once the duality-style gap certifies the objective is within
    /// this of the optimum.
    #[serde(default = "default_gap_tol")]
    pub gap_tol: f64,
    pub criterion: CriterionSpec,
    pub model_kind: ModelKind,
}

impl GridOptions {
    pub fn new(candidates: Vec<Point>, criterion: CriterionSpec, model_kind: ModelKind) -> Self {
        GridOptions {
            candidates,
            max_iters: default_max_iters(),
            step_tol: default_step_tol(),
            gap_tol: default_gap_tol(),
            criterion,
            model_kind,
        }
    }

    fn validate(&self, model: &ModelSpec) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Invalid("candidate set is empty".into()));
        }
        let dim = model.p() - 1;
        let mut seen = HashSet::with_capacity(self.candidates.len());
        for x in &self.candidates {
            crate::error::check_dim(dim, x.len())?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("candidate {x:?} is not finite")));
            }
            let key: Vec<u64> = x.iter().map(|v| (v + 0.0).to_bits()).collect();
            if !seen.insert(key) {
                return Err(Error::Invalid(format!("duplicate candidate {x:?}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::Invalid("max_iters must be positive".into()));
        }
        if !(self.step_tol > 0.0) {
            return Err(Error::Invalid(format!(
                "step_tol must be positive, got {}",
                self.step_tol
            )));
        }
        if !(self.gap_tol >= 0.0) {
            return Err(Error::Invalid(format!(
                "gap_tol must be nonnegative, got {}",
                self.gap_tol
            )));
        }
        self.criterion.validate(model.p())
    }
}

/// Outcome of a weight optimization with its objective trace.
#[derive(Clone, Debug)]
pub struct OptimizeTrace {
    pub design: Design,
    /// Objective after the start and after every iteration.
    pub history: Vec<f64>,
    /// `max_j ∂φ/∂w_j − Σ_j w_j ∂φ/∂w_j` at the returned weights; an upper
    /// bound on the remaining suboptimality of the concave objective.
    pub gap: f64,
}

/// Candidates in a flat layout with their intensities.
struct Problem<'a> {
    model: &'a ModelSpec,
    crit: &'a CriterionSpec,
    kind: ModelKind,
    p: usize,
    /// covariates only, `p − 1` per candidate
    xs: Vec<f64>,
    lambda: Vec<f64>,
}

/// Information-matrix-level state shared by objective and gradient.
struct Eval {
    phi: f64,
    /// `∂φ/∂w_j = λ_j f_jᵀ H f_j`.
    h: DMatrix<f64>,
}

impl<'a> Problem<'a> {
    fn new(opts: &'a GridOptions, model: &'a ModelSpec) -> Result<Self> {
        let lambda = opts
            .candidates
            .par_iter()
            .map(|x| Ok(model.eta(x)?.exp()))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Problem {
            model,
            crit: &opts.criterion,
            kind: opts.model_kind,
            p: model.p(),
            xs: opts.candidates.iter().flatten().copied().collect(),
            lambda,
        })
    }

    fn n(&self) -> usize {
        self.lambda.len()
    }

    fn f(&self, j: usize) -> DVector<f64> {
        let k = self.p - 1;
        let mut f = DVector::from_element(self.p, 1.0);
        f.rows_mut(1, k)
            .copy_from_slice(&self.xs[j * k..(j + 1) * k]);
        f
    }

    fn x(&self, j: usize) -> &[f64] {
        let k = self.p - 1;
        &self.xs[j * k..(j + 1) * k]
    }

    /// Summed in fixed-size chunks so the result does not depend on thread
    /// scheduling.
    fn poisson_moment(&self, support: &[(usize, f64)]) -> DMatrix<f64> {
        let p = self.p;
        let partial: Vec<Vec<f64>> = support
            .par_chunks(4096)
            .map(|chunk| {
                let mut acc = vec![0.0; p * p];
                let mut f = vec![1.0; p];
                for &(j, w) in chunk {
                    f[1..].copy_from_slice(self.x(j));
                    let s = w * self.lambda[j];
                    for r in 0..p {
                        let sr = s * f[r];
                        for c in r..p {
                            acc[r * p + c] += sr * f[c];
                        }
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![0.0; p * p];
        for part in partial {
            total.iter_mut().zip(part).for_each(|(t, v)| *t += v);
        }
        DMatrix::from_fn(p, p, |r, c| total[r.min(c) * p + r.max(c)])
    }

    fn eval_moment(&self, mpo: &DMatrix<f64>, with_gradient: bool) -> Eval {
        let mpo = SymMatrix::symmetrize(mpo.clone());
        let (info, transform, scale) = match self.kind {
            ModelKind::Poisson => (mpo, DMatrix::identity(self.p, self.p), 1.0),
            ModelKind::PoissonGamma => {
                // M = (a/b)(M_Po − u uᵀ/c) with u = M_Po e₁; ∂M/∂w_j = (a/b)λ_j (L f_j)(L f_j)ᵀ
                // where L = I − u e₁ᵀ/c.
                let (a, b, m) = (self.model.a, self.model.b, self.model.m as f64);
                let u = mpo.column(0).into_owned();
                let c = mpo[(0, 0)] + b / m;
                let pg =
                    SymMatrix::symmetrize((mpo.as_matrix() - &u * u.transpose() / c) * (a / b));
                let mut l = DMatrix::<f64>::identity(self.p, self.p);
                for i in 0..self.p {
                    l[(i, 0)] -= u[i] / c;
                }
                (pg, l, a / b)
            }
        };
        let phi = objective(&info, self.crit);
        let h = match (
            with_gradient && phi.is_finite(),
            objective_gradient(&info, self.crit),
        ) {
            (true, Some(g)) => transform.transpose() * g.as_matrix() * &transform * scale,
            _ => DMatrix::zeros(self.p, self.p),
        };
        Eval { phi, h }
    }

    fn derivative(&self, h: &DMatrix<f64>, j: usize) -> f64 {
        let x = self.x(j);
        let mut q = h[(0, 0)];
        for (r, xr) in x.iter().enumerate() {
            let mut row = 2.0 * h[(0, r + 1)];
            for (c, xc) in x.iter().enumerate() {
                row += h[(r + 1, c + 1)] * xc;
            }
            q += row * xr;
        }
        self.lambda[j] * q
    }

    fn all_derivatives(&self, h: &DMatrix<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        out.par_chunks_mut(4096)
            .enumerate()
            .for_each(|(ci, chunk)| {
                for (i, d) in chunk.iter_mut().enumerate() {
                    *d = self.derivative(h, ci * 4096 + i);
                }
            });
        out
    }

    fn phi(&self, support: &[(usize, f64)]) -> f64 {
        self.eval_moment(&self.poisson_moment(support), false).phi
    }
}

fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn prune(support: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    let kept: Vec<(usize, f64)> = support.into_iter().filter(|(_, w)| *w >= PRUNE).collect();
    let total: f64 = kept.iter().map(|(_, w)| w).sum();
    kept.into_iter().map(|(j, w)| (j, w / total)).collect()
}

impl Problem<'_> {
    /// Moves mass from support point `l` to candidate `k`, choosing the
    /// amount by bisection on the directional derivative (the objective is
    /// concave along the segment).
    fn exchange(&self, mpo: &DMatrix<f64>, k: usize, l: usize, wl: f64) -> f64 {
        let fk = self.f(k);
        let fl = self.f(l);
        let dir = &fk * fk.transpose() * self.lambda[k] - &fl * fl.transpose() * self.lambda[l];
        let slope = |delta: f64| {
            let ev = self.eval_moment(&(mpo + &dir * delta), true);
            if !ev.phi.is_finite() {
                return f64::NEG_INFINITY;
            }
            self.derivative(&ev.h, k) - self.derivative(&ev.h, l)
        };
        if slope(wl) >= 0.0 {
            return wl;
        }
        let (mut lo, mut hi) = (0.0, wl);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

impl Problem<'_> {
    /// Optimal pairwise exchanges between support points adjacent along
    /// each coordinate. Clusters of neighbouring grid points around one
    /// optimal point otherwise merge very slowly.
    fn neighbour_exchanges(&self, support: &mut [(usize, f64)], mpo: &mut DMatrix<f64>) {
        let k = self.p - 1;
        for axis in 0..k {
            let mut order: Vec<usize> = (0..support.len()).collect();
            order.sort_by(|a, b| {
                let (ja, jb) = (support[*a].0, support[*b].0);
                self.x(ja)[axis]
                    .total_cmp(&self.x(jb)[axis])
                    .then(ja.cmp(&jb))
            });
            for pair in order.windows(2) {
                let (pa, pb) = (pair[0], pair[1]);
                let ev = self.eval_moment(mpo, true);
                if !ev.phi.is_finite() {
                    return;
                }
                let ((a, wa), (b, wb)) = (support[pa], support[pb]);
                let (da, db) = (self.derivative(&ev.h, a), self.derivative(&ev.h, b));
                let (to, from, pto, pfrom, wfrom) = if da > db {
                    (a, b, pa, pb, wb)
                } else {
                    (b, a, pb, pa, wa)
                };
                if da == db || wfrom <= 0.0 {
                    continue;
                }
                let delta = self.exchange(mpo, to, from, wfrom);
                let (ft, ff) = (self.f(to), self.f(from));
                *mpo += (&ft * ft.transpose() * self.lambda[to]
                    - &ff * ff.transpose() * self.lambda[from])
                    * delta;
                support[pto].1 += delta;
                support[pfrom].1 -= delta;
            }
        }
    }
}

/// Maximizes the criterion over weights on the candidate set.
///
/// Each iteration first shifts mass from the worst support point to the
/// best candidate (a vertex-exchange step), then for D-criteria applies the
/// multiplicative update `w_j ← w_j·d_j / Σ_i w_i d_i` with `d_j = ∂φ/∂w_j`.
/// An update that does not raise the objective is replaced by a projected
/// gradient step with backtracking. Weights below 1e-9 are dropped.
pub fn optimize_weights(opts: &GridOptions, model: &ModelSpec) -> Result<Design> {
    optimize_weights_traced(opts, model).map(|t| t.design)
}

pub fn optimize_weights_traced(opts: &GridOptions, model: &ModelSpec) -> Result<OptimizeTrace> {
    opts.validate(model)?;
    let prob = Problem::new(opts, model)?;
    let n = prob.n();
    let mut support: Vec<(usize, f64)> = (0..n).map(|j| (j, 1.0 / n as f64)).collect();
    let mut mpo = prob.poisson_moment(&support);
    let mut ev = prob.eval_moment(&mpo, true);
    if !ev.phi.is_finite() {
        return Err(Error::SingularStart);
    }
    let multiplicative = matches!(opts.criterion, CriterionSpec::D);
    let mut history = vec![ev.phi];
    let mut gap;
    let mut iter = 0;
    loop {
        let d = prob.all_derivatives(&ev.h);
        let avg: f64 = support.iter().map(|(j, w)| w * d[*j]).sum();
        let k = first_argmax(&d);
        gap = d[k] - avg;
        if iter >= opts.max_iters || gap <= opts.gap_tol {
            break;
        }
        iter += 1;
        let start_phi = ev.phi;

        // vertex exchange: worst support point to best candidate
        let (pos_l, &(l, wl)) = support
            .iter()
            .enumerate()
            .min_by(|a, b| d[a.1 .0].total_cmp(&d[b.1 .0]))
            .expect("support is never empty");
        if l != k {
            let delta = prob.exchange(&mpo, k, l, wl);
            let mut moved = support.clone();
            moved[pos_l].1 -= delta;
            match moved.iter_mut().find(|(j, _)| *j == k) {
                Some(entry) => entry.1 += delta,
                None => moved.push((k, delta)),
            }
            let moved = prune(moved);
            let moved_mpo = prob.poisson_moment(&moved);
            let moved_ev = prob.eval_moment(&moved_mpo, true);
            if moved_ev.phi > ev.phi {
                support = moved;
                mpo = moved_mpo;
                ev = moved_ev;
            }
        }

        if support.len() <= NEIGHBOUR_LIMIT {
            let mut moved = support.clone();
            let mut moved_mpo = mpo.clone();
            prob.neighbour_exchanges(&mut moved, &mut moved_mpo);
            let moved = prune(moved.into_iter().map(|(j, w)| (j, w.max(0.0))).collect());
            let moved_mpo = prob.poisson_moment(&moved);
            let moved_ev = prob.eval_moment(&moved_mpo, true);
            if moved_ev.phi > ev.phi {
                support = moved;
                mpo = moved_mpo;
                ev = moved_ev;
            }
        }

        let mut improved = false;
        if multiplicative {
            let ds: Vec<f64> = support
                .par_iter()
                .map(|(j, _)| prob.derivative(&ev.h, *j))
                .collect();
            let avg: f64 = support.iter().zip(&ds).map(|((_, w), dj)| w * dj).sum();
            if avg > 0.0 && ds.iter().all(|dj| *dj > 0.0) {
                let trial = prune(
                    support
                        .iter()
                        .zip(&ds)
                        .map(|((j, w), dj)| (*j, w * dj / avg))
                        .collect(),
                );
                let trial_mpo = prob.poisson_moment(&trial);
                let trial_ev = prob.eval_moment(&trial_mpo, true);
                if trial_ev.phi > ev.phi {
                    support = trial;
                    mpo = trial_mpo;
                    ev = trial_ev;
                    improved = true;
                }
            }
        }
        if !improved {
            // projected gradient on the support plus the best candidate
            let d = prob.all_derivatives(&ev.h);
            let k = first_argmax(&d);
            let mut idx: Vec<usize> = support.iter().map(|(j, _)| *j).collect();
            if !idx.contains(&k) {
                idx.push(k);
            }
            let w0: Vec<f64> = idx
                .iter()
                .map(|j| {
                    support
                        .iter()
                        .find(|(i, _)| i == j)
                        .map_or(0.0, |(_, w)| *w)
                })
                .collect();
            let grad: Vec<f64> = idx.iter().map(|j| d[*j]).collect();
            let spread = grad.iter().fold(f64::NEG_INFINITY, |m, g| m.max(*g))
                - grad.iter().fold(f64::INFINITY, |m, g| m.min(*g));
            let mut t = if spread > 0.0 { 1.0 / spread } else { 1.0 };
            for _ in 0..50 {
                let stepped: Vec<f64> = w0.iter().zip(&grad).map(|(w, g)| w + t * g).collect();
                let trial = prune(idx.iter().copied().zip(project_simplex(&stepped)).collect());
                let trial_phi = prob.phi(&trial);
                if trial_phi > ev.phi {
                    support = trial;
                    mpo = prob.poisson_moment(&support);
                    ev = prob.eval_moment(&mpo, true);
                    break;
                }
                t *= 0.5;
            }
        }

        history.push(ev.phi);
        let gain = ev.phi - start_phi;
        if gain <= 0.0 && iter == 1 && gap > 1e-6 * (1.0 + avg.abs()) {
            return Err(Error::NoImprovement);
        }
        if gain < opts.step_tol {
            let d = prob.all_derivatives(&ev.h);
            let avg: f64 = support.iter().map(|(j, w)| w * d[*j]).sum();
            gap = d[first_argmax(&d)] - avg;
            break;
        }
    }

    support.sort_by_key(|(j, _)| *j);
    let points = support
        .iter()
        .map(|(j, _)| opts.candidates[*j].clone())
        .collect();
    let weights = support.iter().map(|(_, w)| *w).collect();
    Ok(OptimizeTrace {
        design: Design::from_masses(points, weights)?,
        history,
        gap,
    })
}

/// Which member of the vertex/edge family [`zscan`] evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZscanFamily {
    /// Poisson-Gamma D weights, scored by `det M`.
    PgD,
    /// D_s weights for the slopes, scored by `1 / det(AᵀM_Po⁻¹A)`.
    PoissonDs,
}

/// Scans `z_grid`, building the family design at every `z` and returning
/// the `(z, value)` pair with the largest value (first one on ties).
pub fn zscan(
    model: &ModelSpec,
    region: &DesignRegion,
    z_grid: &[f64],
    family: ZscanFamily,
) -> Result<(f64, f64)> {
    if z_grid.is_empty() {
        return Err(Error::Invalid("z grid is empty".into()));
    }
    if let Some(z) = z_grid.iter().find(|z| !(**z > 0.0)) {
        return Err(Error::NonpositiveZ(*z));
    }
    if z_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Invalid("z grid must be sorted".into()));
    }
    let p = model.p();
    let d = vertex_d(region, &model.beta)?;
    let eta_d = model.eta(&d)?;
    let ds = ds_spec(&(1..p).collect::<Vec<_>>(), p)?;
    let values = z_grid
        .par_iter()
        .map(|&z| {
            let (w1, wp) = match family {
                ZscanFamily::PgD => weights_pg(p, model.m, model.b, eta_d, z)?,
                ZscanFamily::PoissonDs => weights_ds(p, z)?,
            };
            let xi = family_design(&d, &model.beta, z, w1, wp)?;
            match family {
                ZscanFamily::PgD => det_pg_via_poisson(&xi, model),
                ZscanFamily::PoissonDs => {
                    Ok(1.0 / criterion_from_info(&info_poisson(&xi, model)?.matrix, &ds)?)
                }
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let best = first_argmax(&values);
    Ok((z_grid[best], values[best]))
}

/// `start, start + step, …` up to `end` (inclusive within half a step).
pub fn linspace_step(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 0.5).floor() as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}
