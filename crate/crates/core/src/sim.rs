//! Monte-Carlo sampling from the Gamma-Poisson hierarchy, used to check
//! the model layer against simulated data.
//!
//! Every statistical unit has its own random stream, seeded by a hash of
//! the global seed and the unit index, so results do not depend on the
//! order or the threads in which units are drawn.

use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{score, ModelSpec, Point};
use crate::numerics::SymMatrix;

const CHUNK: usize = 1024;

/// Model, the `m` covariate points of one unit, number of units and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: ModelSpec,
    pub xs: Vec<Point>,
    pub n_units: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(model: ModelSpec, xs: Vec<Point>, n_units: usize, seed: u64) -> Result<Self> {
        let cfg = SimConfig {
            model,
            xs,
            n_units,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.model.m as usize, self.xs.len())?;
        for x in &self.xs {
            check_dim(self.model.p() - 1, x.len())?;
        }
        if self.n_units == 0 {
            return Err(Error::Invalid("n_units must be at least 1".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_rng(seed: u64, unit_index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(unit_index)))
}

/// Counts of unit `unit_index`: `θ ~ Gamma(a, rate b)`, then
/// `y_j ~ Poisson(θ·e^{f(x_j)ᵀβ})` independently.
pub fn sample_unit(cfg: &SimConfig, unit_index: u64) -> Vec<i64> {
    let mut rng = unit_rng(cfg.seed, unit_index);
    let gamma = Gamma::new(cfg.model.a, 1.0 / cfg.model.b).expect("model parameters are validated");
    let theta: f64 = gamma.sample(&mut rng);
    cfg.xs
        .iter()
        .map(|x| {
            let mean = theta * cfg.model.eta(x).expect("points are validated").exp();
            if mean > 0.0 && mean.is_finite() {
                Poisson::new(mean)
                    .expect("mean is positive")
                    .sample(&mut rng) as i64
            } else {
                0
            }
        })
        .collect()
}

/// All units' counts, in unit order.
pub fn sample_all(cfg: &SimConfig) -> Vec<Vec<i64>> {
    (0..cfg.n_units as u64)
        .into_par_iter()
        .map(|i| sample_unit(cfg, i))
        .collect()
}

/// Per-unit statistics reduced in fixed-size chunks and then in order, so
/// sums are identical from run to run.
fn reduce_units<T, F, G>(cfg: &SimConfig, zero: T, per_unit: F, combine: G) -> T
where
    T: Clone + Send + Sync,
    F: Fn(&mut T, Vec<i64>) + Sync,
    G: Fn(T, T) -> T,
{
    let chunks = cfg.n_units.div_ceil(CHUNK);
    let partial: Vec<T> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = zero.clone();
            for i in c * CHUNK..((c + 1) * CHUNK).min(cfg.n_units) {
                per_unit(&mut acc, sample_unit(cfg, i as u64));
            }
            acc
        })
        .collect();
    partial.into_iter().fold(zero, combine)
}

/// Sample mean, sample variance and standard error of the mean for each
/// of the `m` observations of a unit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountMoments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub se: Vec<f64>,
    /// Standard error of the sample variance, `√((μ₄ − σ⁴)/n)`.
    pub variance_se: Vec<f64>,
    /// Fraction of units with `y_j = 0`.
    pub zero_fraction: Vec<f64>,
}

pub fn count_moments(cfg: &SimConfig) -> CountMoments {
    let m = cfg.xs.len();
    // per observation: Σy, Σy², Σy³, Σy⁴, #zeros
    let sums = reduce_units(
        cfg,
        vec![[0.0f64; 5]; m],
        |acc, ys| {
            for (a, y) in acc.iter_mut().zip(ys) {
                let y = y as f64;
                a[0] += y;
                a[1] += y * y;
                a[2] += y * y * y;
                a[3] += y * y * y * y;
                a[4] += (y == 0.0) as u8 as f64;
            }
        },
        |mut a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                for k in 0..5 {
                    x[k] += y[k];
                }
            }
            a
        },
    );
    let n = cfg.n_units as f64;
    let mut out = CountMoments {
        mean: Vec::with_capacity(m),
        variance: Vec::with_capacity(m),
        se: Vec::with_capacity(m),
        variance_se: Vec::with_capacity(m),
        zero_fraction: Vec::with_capacity(m),
    };
    for s in sums {
        let mean = s[0] / n;
        let var = if n > 1.0 {
            (s[1] - n * mean * mean) / (n - 1.0)
        } else {
            0.0
        };
        out.mean.push(mean);
        out.variance.push(var);
        let (e2, e3, e4) = (s[1] / n, s[2] / n, s[3] / n);
        let mu4 = e4 - 4.0 * mean * e3 + 6.0 * mean * mean * e2 - 3.0 * mean.powi(4);
        out.se.push((var / n).sqrt());
        out.variance_se
            .push(((mu4 - var * var).max(0.0) / n).sqrt());
        out.zero_fraction.push(s[4] / n);
    }
    out
}

/// Monte-Carlo estimate of the Fisher information of one unit with the
/// entrywise standard errors of the average, plus the mean score.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FisherEstimate {
    pub info: SymMatrix,
    #[serde(with = "crate::numerics::rows")]
    pub se: DMatrix<f64>,
    pub mean_score: Vec<f64>,
    pub score_se: Vec<f64>,
}

/// Average over units of `s·sᵀ` with `s` the score at the true β.
pub fn empirical_fisher(cfg: &SimConfig) -> SymMatrix {
    empirical_fisher_with_se(cfg).info
}

pub fn empirical_fisher_with_se(cfg: &SimConfig) -> FisherEstimate {
    let p = cfg.model.p();
    // Σ s, Σ s sᵀ, Σ (s sᵀ)²
    let zero = (
        vec![0.0; p],
        DMatrix::<f64>::zeros(p, p),
        DMatrix::<f64>::zeros(p, p),
    );
    let (s1, s2, s4) = reduce_units(
        cfg,
        zero,
        |acc, ys| {
            let s = score(&cfg.model, &cfg.xs, &ys).expect("sampled counts are valid");
            for (a, v) in acc.0.iter_mut().zip(s.iter()) {
                *a += v;
            }
            let outer = &s * s.transpose();
            acc.2 += outer.component_mul(&outer);
            acc.1 += outer;
        },
        |a, b| {
            (
                a.0.iter().zip(&b.0).map(|(x, y)| x + y).collect(),
                a.1 + b.1,
                a.2 + b.2,
            )
        },
    );
    let n = cfg.n_units as f64;
    let mean = &s2 / n;
    let var = (&s4 / n - mean.component_mul(&mean)) * (n / (n - 1.0).max(1.0));
    let se = var.map(|v| (v.max(0.0) / n).sqrt());
    let mean_score: Vec<f64> = s1.iter().map(|v| v / n).collect();
    let score_se = (0..p)
        .map(|i| (var_of_score(&mean, &mean_score, i, n) / n).sqrt())
        .collect();
    FisherEstimate {
        info: SymMatrix::symmetrize(mean),
        se,
        mean_score,
        score_se,
    }
}

fn var_of_score(mean_outer: &DMatrix<f64>, mean_score: &[f64], i: usize, n: f64) -> f64 {
    ((mean_outer[(i, i)] - mean_score[i] * mean_score[i]) * n / (n - 1.0).max(1.0)).max(0.0)
}

/// Writes all counts as CSV with columns `unit_index,j,x1,…,y`.
pub fn write_counts_csv<W: Write>(cfg: &SimConfig, mut out: W) -> std::io::Result<()> {
    let dim = cfg.model.p() - 1;
    let mut header = String::from("unit_index,j");
    for k in 1..=dim {
        header.push_str(&format!(",x{k}"));
    }
    writeln!(out, "{header},y")?;
    for (i, ys) in sample_all(cfg).into_iter().enumerate() {
        for (j, (x, y)) in cfg.xs.iter().zip(ys).enumerate() {
            let coords: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            if coords.is_empty() {
                writeln!(out, "{i},{j},{y}")?;
            } else {
                writeln!(out, "{i},{j},{},{y}", coords.join(","))?;
            }
        }
    }
    Ok(())
}
