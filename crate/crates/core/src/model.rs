//! The Poisson and Poisson-Gamma models, designs and information matrices.
//!
//! A statistical unit receives `m` observations `Y_j` that are Poisson with
//! mean `θ·exp(f(x_j)ᵀβ)` given a block effect `θ ~ Gamma(a, rate b)`.
//! Integrating `θ` out gives a closed-form joint density and an information
//! matrix that is a rank-one downdate of the Poisson information.

use std::collections::HashMap;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{check_dim, Error, Result};
use crate::numerics::{column_rank, generalized_inverse, range_projector, SymMatrix, DEFAULT_TOL};

/// A covariate vector `x ∈ ℝ^{p−1}`.
pub type Point = Vec<f64>;

const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Weight sums read from files may be off by rounding in the printed
/// digits; within this slack they are renormalized.
const INPUT_WEIGHT_SLACK: f64 = 1e-5;

/// Which of the two models an information matrix or criterion refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Poisson,
    PoissonGamma,
}

/// Regression coefficients, Gamma block-effect parameters and the number of
/// observations per statistical unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct ModelSpec {
    pub beta: Vec<f64>,
    /// Gamma shape.
    pub a: f64,
    /// Gamma rate.
    pub b: f64,
    pub m: u32,
}

#[derive(Deserialize)]
struct RawModel {
    beta: Vec<f64>,
    a: f64,
    b: f64,
    m: u32,
}

impl TryFrom<RawModel> for ModelSpec {
    type Error = Error;

    fn try_from(r: RawModel) -> Result<Self> {
        ModelSpec::new(r.beta, r.a, r.b, r.m)
    }
}

impl ModelSpec {
    pub fn new(beta: Vec<f64>, a: f64, b: f64, m: u32) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Invalid("beta must have at least one entry".into()));
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("beta entries must be finite".into()));
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Invalid(format!(
                "Gamma shape a must be positive, got {a}"
            )));
        }
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Invalid(format!(
                "Gamma rate b must be positive, got {b}"
            )));
        }
        if m == 0 {
            return Err(Error::Invalid("m must be at least 1".into()));
        }
        Ok(Self { beta, a, b, m })
    }

    /// Number of regression parameters.
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    /// `f(x) = (1, xᵀ)ᵀ`, checking that `x` has `p − 1` coordinates.
    pub fn regressor(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.p() - 1, x.len())?;
        Ok(regressor(x))
    }

    /// Linear predictor `f(x)ᵀβ`.
    pub fn eta(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.p() - 1, x.len())?;
        Ok(self.beta[0]
            + x.iter()
                .zip(&self.beta[1..])
                .map(|(xi, bi)| xi * bi)
                .sum::<f64>())
    }

    /// Copy of the model with a different parameter vector.
    pub fn with_beta(&self, beta: Vec<f64>) -> Result<Self> {
        Self::new(beta, self.a, self.b, self.m)
    }
}

/// `f(x) = (1, x₁, …, x_{p−1})`.
pub fn regressor(x: &[f64]) -> DVector<f64> {
    let mut f = DVector::zeros(x.len() + 1);
    f[0] = 1.0;
    for (i, v) in x.iter().enumerate() {
        f[i + 1] = *v;
    }
    f
}

/// First standard unit vector of length `p` (the intercept direction).
pub fn e1(p: usize) -> DVector<f64> {
    let mut e = DVector::zeros(p);
    e[0] = 1.0;
    e
}

/// An approximate individual design: finitely many distinct support
/// points with weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDesign")]
pub struct Design {
    points: Vec<Point>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDesign {
    points: Vec<Point>,
    weights: Vec<f64>,
}

impl TryFrom<RawDesign> for Design {
    type Error = Error;

    fn try_from(r: RawDesign) -> Result<Self> {
        let sum: f64 = r.weights.iter().sum();
        if (sum - 1.0).abs() <= INPUT_WEIGHT_SLACK && sum > 0.0 {
            let w = r.weights.iter().map(|w| w / sum).collect();
            Design::new(r.points, w)
        } else {
            Design::new(r.points, r.weights)
        }
    }
}

impl Design {
    /// Validates weights and coalesces repeated points by summing their
    /// weights.
    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        check_dim(points.len(), weights.len())?;
        if points.is_empty() {
            return Err(Error::Invalid(
                "a design needs at least one support point".into(),
            ));
        }
        let dim = points[0].len();
        for x in &points {
            check_dim(dim, x.len())?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid("support points must be finite".into()));
            }
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Invalid("weights must be non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Invalid(format!("weights sum to {sum}, not 1")));
        }
        let mut index: HashMap<Vec<u64>, usize> = HashMap::with_capacity(points.len());
        let mut out_points: Vec<Point> = Vec::with_capacity(points.len());
        let mut out_weights: Vec<f64> = Vec::with_capacity(points.len());
        for (x, w) in points.into_iter().zip(weights) {
            // -0.0 and 0.0 are the same covariate value
            let key = x.iter().map(|v| (v + 0.0).to_bits()).collect();
            match index.get(&key) {
                Some(&k) => out_weights[k] += w,
                None => {
                    index.insert(key, out_points.len());
                    out_points.push(x);
                    out_weights.push(w);
                }
            }
        }
        Ok(Self {
            points: out_points,
            weights: out_weights,
        })
    }

    /// One-point design.
    pub fn dirac(x: Point) -> Self {
        Self {
            points: vec![x],
            weights: vec![1.0],
        }
    }

    /// Builds a design from unnormalized non-negative masses.
    pub fn from_masses(points: Vec<Point>, masses: Vec<f64>) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Invalid("total mass must be positive".into()));
        }
        let mut w: Vec<f64> = masses.iter().map(|v| v / total).collect();
        // absorb the rounding residue so the sum is one to the last bit
        let resid = 1.0 - w.iter().sum::<f64>();
        if let Some(k) = (0..w.len()).max_by(|&i, &j| w[i].total_cmp(&w[j])) {
            w[k] += resid;
        }
        Self::new(points, w)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Dimension of the covariate space.
    pub fn point_dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point, f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }

    /// The convex combination `α·self + (1 − α)·other`.
    pub fn mix(&self, other: &Design, alpha: f64) -> Result<Design> {
        check_dim(self.point_dim(), other.point_dim())?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Invalid(format!(
                "mixing weight {alpha} outside [0, 1]"
            )));
        }
        let points = self
            .points
            .iter()
            .chain(other.points.iter())
            .cloned()
            .collect();
        let masses = self
            .weights
            .iter()
            .map(|w| alpha * w)
            .chain(other.weights.iter().map(|w| (1.0 - alpha) * w))
            .collect();
        Design::from_masses(points, masses)
    }

    fn check_model(&self, model: &ModelSpec) -> Result<()> {
        check_dim(model.p() - 1, self.point_dim())
    }
}

/// Proportions `q_i` of statistical units receiving individual design `ξ_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPopulation")]
pub struct PopulationDesign {
    designs: Vec<Design>,
    q: Vec<f64>,
}

#[derive(Deserialize)]
struct RawPopulation {
    designs: Vec<Design>,
    q: Vec<f64>,
}

impl TryFrom<RawPopulation> for PopulationDesign {
    type Error = Error;

    fn try_from(r: RawPopulation) -> Result<Self> {
        PopulationDesign::new(r.designs, r.q)
    }
}

impl PopulationDesign {
    pub fn new(designs: Vec<Design>, q: Vec<f64>) -> Result<Self> {
        check_dim(designs.len(), q.len())?;
        if designs.is_empty() {
            return Err(Error::Invalid(
                "a population design needs at least one design".into(),
            ));
        }
        let dim = designs[0].point_dim();
        for d in &designs {
            check_dim(dim, d.point_dim())?;
        }
        if q.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Invalid("proportions must be non-negative".into()));
        }
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Invalid(format!("proportions sum to {sum}, not 1")));
        }
        Ok(Self { designs, q })
    }

    pub fn designs(&self) -> &[Design] {
        &self.designs
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }
}

/// Axis-aligned box `[u₁,v₁] × … × [u_{p−1},v_{p−1}]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRegion")]
pub struct DesignRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Deserialize)]
struct RawRegion {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawRegion> for DesignRegion {
    type Error = Error;

    fn try_from(r: RawRegion) -> Result<Self> {
        DesignRegion::new(r.lower, r.upper)
    }
}

impl DesignRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        for (i, (u, v)) in lower.iter().zip(&upper).enumerate() {
            if !(u < v) || !u.is_finite() || !v.is_finite() {
                return Err(Error::Invalid(format!(
                    "region side {i}: need lower < upper, got [{u}, {v}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(xi, (u, v))| *xi >= u - slack && *xi <= v + slack)
    }

    /// Tensor grid with `per_axis` equally spaced values per side
    /// (including both ends).
    pub fn grid(&self, per_axis: usize) -> Vec<Point> {
        let per_axis = per_axis.max(2);
        let axes: Vec<Vec<f64>> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(u, v)| {
                (0..per_axis)
                    .map(|k| u + (v - u) * k as f64 / (per_axis - 1) as f64)
                    .collect()
            })
            .collect();
        let mut out: Vec<Point> = vec![Vec::new()];
        for axis in &axes {
            let mut next = Vec::with_capacity(out.len() * axis.len());
            for prefix in &out {
                for v in axis {
                    let mut x = prefix.clone();
                    x.push(*v);
                    next.push(x);
                }
            }
            out = next;
        }
        out
    }
}

/// A symmetric positive semidefinite information matrix tagged with the
/// model it belongs to.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InfoMatrix {
    pub matrix: SymMatrix,
    pub kind: ModelKind,
}

impl Deref for InfoMatrix {
    type Target = SymMatrix;

    fn deref(&self) -> &SymMatrix {
        &self.matrix
    }
}

fn poisson_moment(design: &Design, model: &ModelSpec) -> Result<SymMatrix> {
    design.check_model(model)?;
    let p = model.p();
    let mut acc = DMatrix::<f64>::zeros(p, p);
    for (x, w) in design.iter() {
        let f = regressor(x);
        let lambda = model.eta(x)?.exp();
        acc += (&f * f.transpose()) * (w * lambda);
    }
    Ok(SymMatrix::symmetrize(acc))
}

/// Poisson information `Σ_j w_j e^{f(x_j)ᵀβ} f(x_j)f(x_j)ᵀ`.
pub fn info_poisson(design: &Design, model: &ModelSpec) -> Result<InfoMatrix> {
    Ok(InfoMatrix {
        matrix: poisson_moment(design, model)?,
        kind: ModelKind::Poisson,
    })
}

/// Rank-one downdate of the Poisson information scaled by `a/b`.
fn pg_from_poisson(mpo: &SymMatrix, model: &ModelSpec) -> SymMatrix {
    let col = mpo.column(0).into_owned();
    let denom = mpo[(0, 0)] + model.b / model.m as f64;
    let downdate = (&col * col.transpose()) / denom;
    SymMatrix::symmetrize((mpo.as_matrix() - downdate) * (model.a / model.b))
}

/// Poisson-Gamma information of an individual design,
/// `(a/b)·(M_Po − M_Po e₁e₁ᵀ M_Po / (e₁ᵀM_Po e₁ + b/m))`.
pub fn info_pg(design: &Design, model: &ModelSpec) -> Result<InfoMatrix> {
    let mpo = poisson_moment(design, model)?;
    Ok(InfoMatrix {
        matrix: pg_from_poisson(&mpo, model),
        kind: ModelKind::PoissonGamma,
    })
}

pub fn info_matrix(design: &Design, model: &ModelSpec, kind: ModelKind) -> Result<InfoMatrix> {
    match kind {
        ModelKind::Poisson => info_poisson(design, model),
        ModelKind::PoissonGamma => info_pg(design, model),
    }
}

/// `L = I − M_Po e₁e₁ᵀ / (e₁ᵀM_Po e₁ + b/m)`, the regular factor with
/// `M = (a/b)·L·M_Po`. Lower triangular apart from its first column.
pub fn l_matrix(design: &Design, model: &ModelSpec) -> Result<DMatrix<f64>> {
    let mpo = poisson_moment(design, model)?;
    Ok(l_from_poisson(&mpo, model))
}

pub(crate) fn l_from_poisson(mpo: &SymMatrix, model: &ModelSpec) -> DMatrix<f64> {
    let p = mpo.dim();
    let denom = mpo[(0, 0)] + model.b / model.m as f64;
    let mut l = DMatrix::<f64>::identity(p, p);
    for i in 0..p {
        l[(i, 0)] -= mpo[(i, 0)] / denom;
    }
    l
}

/// Generalized inverse of the Poisson-Gamma information assembled from the
/// Moore-Penrose inverse of the Poisson information:
/// `(b/a)·M_Po⁻ + (m/a)·e₁e₁ᵀ`.
pub fn pg_inverse_from_poisson(design: &Design, model: &ModelSpec) -> Result<SymMatrix> {
    let mpo = poisson_moment(design, model)?;
    Ok(pg_inverse_from_poisson_matrix(&mpo, model))
}

pub(crate) fn pg_inverse_from_poisson_matrix(mpo: &SymMatrix, model: &ModelSpec) -> SymMatrix {
    let mut g = generalized_inverse(mpo, DEFAULT_TOL)
        .scaled(model.b / model.a)
        .into_matrix();
    g[(0, 0)] += model.m as f64 / model.a;
    SymMatrix::symmetrize(g)
}

fn check_unit_inputs(model: &ModelSpec, xs: &[Point], ys: &[i64]) -> Result<()> {
    check_dim(model.m as usize, xs.len())?;
    check_dim(model.m as usize, ys.len())?;
    if let Some(y) = ys.iter().find(|y| **y < 0) {
        return Err(Error::NegativeCount(*y));
    }
    Ok(())
}

/// Log of the joint density of the `m` counts of one statistical unit,
/// obtained by integrating the Gamma block effect out.
pub fn log_density(model: &ModelSpec, xs: &[Point], ys: &[i64]) -> Result<f64> {
    check_unit_inputs(model, xs, ys)?;
    let (a, b) = (model.a, model.b);
    let mut total_y = 0.0;
    let mut lin = 0.0;
    let mut lambda_sum = 0.0;
    let mut log_fact = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let eta = model.eta(x)?;
        let y = y as f64;
        total_y += y;
        lin += eta * y;
        lambda_sum += eta.exp();
        log_fact += ln_gamma(y + 1.0);
    }
    Ok(
        ln_gamma(a + total_y) - ln_gamma(a) - log_fact + lin
            - (a + total_y) * (b + lambda_sum).ln()
            + a * b.ln(),
    )
}

/// Gradient of [`log_density`] with respect to β.
pub fn score(model: &ModelSpec, xs: &[Point], ys: &[i64]) -> Result<DVector<f64>> {
    check_unit_inputs(model, xs, ys)?;
    let p = model.p();
    let mut direct = DVector::<f64>::zeros(p);
    let mut weighted = DVector::<f64>::zeros(p);
    let mut total_y = 0.0;
    let mut lambda_sum = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let f = regressor(x);
        let lambda = model.eta(x)?.exp();
        direct += &f * y as f64;
        weighted += &f * lambda;
        total_y += y as f64;
        lambda_sum += lambda;
    }
    Ok(direct - weighted * ((model.a + total_y) / (model.b + lambda_sum)))
}

/// Fisher information of one statistical unit observed at `xs` (repeated
/// points count as replications).
pub fn fisher_info_unit(model: &ModelSpec, xs: &[Point]) -> Result<SymMatrix> {
    check_dim(model.m as usize, xs.len())?;
    let p = model.p();
    let mut ipo = DMatrix::<f64>::zeros(p, p);
    for x in xs {
        let f = model.regressor(x)?;
        ipo += (&f * f.transpose()) * model.eta(x)?.exp();
    }
    let col = ipo.column(0).into_owned();
    let denom = ipo[(0, 0)] + model.b;
    let downdate = (&col * col.transpose()) / denom;
    Ok(SymMatrix::symmetrize(
        (ipo - downdate) * (model.a / model.b),
    ))
}

/// Total information of `n` single-observation units (the generalized
/// negative binomial model), `Σ_i a e^{η_i}/(e^{η_i} + b) f(x_i)f(x_i)ᵀ`.
pub fn negbin_total_info(points: &[Point], model: &ModelSpec) -> Result<SymMatrix> {
    if model.m != 1 {
        return Err(Error::ModelMNotOne(model.m));
    }
    let p = model.p();
    let mut acc = DMatrix::<f64>::zeros(p, p);
    for x in points {
        let f = model.regressor(x)?;
        let lambda = model.eta(x)?.exp();
        acc += (&f * f.transpose()) * (model.a * lambda / (lambda + model.b));
    }
    Ok(SymMatrix::symmetrize(acc))
}

/// `Σ_i q_i M(ξ_i)` in the Poisson-Gamma model.
pub fn info_population(pop: &PopulationDesign, model: &ModelSpec) -> Result<InfoMatrix> {
    let p = model.p();
    let mut acc = SymMatrix::zeros(p);
    for (d, q) in pop.designs().iter().zip(pop.q()) {
        acc = acc.add(&info_pg(d, model)?.matrix.scaled(*q));
    }
    Ok(InfoMatrix {
        matrix: acc,
        kind: ModelKind::PoissonGamma,
    })
}

/// The individual design `Σ_i q_i ξ_i`, with shared points coalesced.
pub fn merge_population(pop: &PopulationDesign) -> Design {
    let mut points = Vec::new();
    let mut masses = Vec::new();
    for (d, q) in pop.designs().iter().zip(pop.q()) {
        for (x, w) in d.iter() {
            points.push(x.clone());
            masses.push(q * w);
        }
    }
    Design::from_masses(points, masses).expect("population proportions are validated")
}

/// Whether `Aᵀβ` is identifiable: every column of `A` lies in the column
/// space of the information matrix (`rank[M] == rank[M | A]`).
pub fn identifiable(
    design: &Design,
    model: &ModelSpec,
    a: &DMatrix<f64>,
    kind: ModelKind,
) -> Result<bool> {
    check_dim(model.p(), a.nrows())?;
    if a.ncols() == 0 || a.ncols() > model.p() || column_rank(a, 1e-9) < a.ncols() {
        return Err(Error::RankDeficientA);
    }
    let info = info_matrix(design, model, kind)?;
    Ok(in_column_space(&info, a))
}

pub(crate) fn in_column_space(m: &SymMatrix, a: &DMatrix<f64>) -> bool {
    let proj = range_projector(m, DEFAULT_TOL);
    let resid = a - proj.as_matrix() * a;
    resid.amax() <= 1e-9 * a.amax().max(1.0)
}
