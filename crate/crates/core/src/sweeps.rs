//! Randomized sweeps over Gaussian pairs and 1-D density pairs that exercise
//! the CS / KL / TV relations of [`crate::closed_forms`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_forms::{
    cs_gaussian, kl_gaussian, prop2_conditions, prop3_verify, prop4_verify, tv_gaussian_equal_cov, GaussianParams,
};
use crate::error::{Error, Result};
use crate::kernel::{IntervalGrid, QuadratureRule};
use crate::rng::substream;

/// Residuals below this count as violations of an exact inequality.
pub const SWEEP_TOLERANCE: f64 = 1e-8;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `A·Aᵀ + 0.1·I` with `A` entries drawn from `N(0,1)`.
pub fn random_covariance(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| normal(rng));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

fn random_mean(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.gen_range(-3.0..=3.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Record {
    pub replicate: usize,
    pub d: usize,
    pub cs: f64,
    pub kl_pq: f64,
    pub kl_qp: f64,
    /// `min(KL) - CS`.
    pub slack: f64,
}

impl Prop1Record {
    pub fn violated(&self) -> bool {
        self.slack < -SWEEP_TOLERANCE
    }
}

/// Random Gaussian pairs with `d ∈ 1..=8`, means in `[-3, 3]^d` and
/// covariances from [`random_covariance`].
pub fn prop1_sweep(replicates: usize, seed: u64) -> Result<Vec<Prop1Record>> {
    (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, "prop1", i as u64);
            let d = rng.gen_range(1..=8usize);
            let p = GaussianParams::new(random_mean(&mut rng, d), random_covariance(&mut rng, d))?;
            let q = GaussianParams::new(random_mean(&mut rng, d), random_covariance(&mut rng, d))?;
            let cs = cs_gaussian(&p, &q)?;
            let kl_pq = kl_gaussian(&p, &q)?;
            let kl_qp = kl_gaussian(&q, &p)?;
            Ok(Prop1Record { replicate: i, d, cs, kl_pq, kl_qp, slack: kl_pq.min(kl_qp) - cs })
        })
        .collect()
}

/// Which sufficient condition a [`Prop2Record`] was drawn to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prop2Family {
    /// Equal covariances, mean-gap condition.
    Cond1,
    /// Unequal covariances, eigenvalue condition.
    Cond2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop2Record {
    pub family: Prop2Family,
    pub replicate: usize,
    pub d: usize,
    /// Closed-form TV; only available for equal covariances.
    pub tv: Option<f64>,
    pub sqrt_cs: f64,
    pub cond2_lhs: f64,
    /// Draws rejected before this pair met its condition.
    pub rejected_draws: usize,
}

impl Prop2Record {
    /// `TV ≤ √CS` for the first family, `√CS ≥ 1` for the second.
    pub fn violated(&self) -> bool {
        match self.family {
            Prop2Family::Cond1 => self.tv.is_some_and(|tv| tv > self.sqrt_cs + SWEEP_TOLERANCE),
            Prop2Family::Cond2 => self.sqrt_cs < 1.0 - SWEEP_TOLERANCE,
        }
    }
}

const PROP2_MAX_DRAWS: usize = 10_000;

/// `replicates` pairs per family, each redrawn until its condition holds.
/// Second-family pairs scale one covariance by a log-uniform factor in
/// `[1e-3, 1e3]` so that the eigenvalue condition is reachable.
pub fn prop2_sweep(replicates: usize, seed: u64) -> Result<Vec<Prop2Record>> {
    let jobs: Vec<(Prop2Family, usize)> = [Prop2Family::Cond1, Prop2Family::Cond2]
        .iter()
        .flat_map(|&f| (0..replicates).map(move |i| (f, i)))
        .collect();
    jobs.into_par_iter()
        .map(|(family, i)| {
            let label = match family {
                Prop2Family::Cond1 => "prop2-cond1",
                Prop2Family::Cond2 => "prop2-cond2",
            };
            let mut rng = substream(seed, label, i as u64);
            for attempt in 0..PROP2_MAX_DRAWS {
                let d = rng.gen_range(1..=8usize);
                let (p, q) = match family {
                    Prop2Family::Cond1 => {
                        let cov = random_covariance(&mut rng, d);
                        (
                            GaussianParams::new(random_mean(&mut rng, d), cov.clone())?,
                            GaussianParams::new(random_mean(&mut rng, d), cov)?,
                        )
                    }
                    Prop2Family::Cond2 => {
                        let scale = 10f64.powf(rng.gen_range(-3.0..=3.0));
                        let c1 = random_covariance(&mut rng, d) * scale;
                        (
                            GaussianParams::new(random_mean(&mut rng, d), c1)?,
                            GaussianParams::new(random_mean(&mut rng, d), random_covariance(&mut rng, d))?,
                        )
                    }
                };
                let cond = prop2_conditions(&p, &q)?;
                let met = match family {
                    Prop2Family::Cond1 => cond.cond1 == Some(true),
                    Prop2Family::Cond2 => cond.cond2,
                };
                if !met {
                    continue;
                }
                let tv = match family {
                    Prop2Family::Cond1 => Some(tv_gaussian_equal_cov(&p, &q)?),
                    Prop2Family::Cond2 => None,
                };
                return Ok(Prop2Record {
                    family,
                    replicate: i,
                    d,
                    tv,
                    sqrt_cs: cs_gaussian(&p, &q)?.sqrt(),
                    cond2_lhs: cond.cond2_lhs,
                    rejected_draws: attempt,
                });
            }
            Err(Error::Config(format!("no pair met {label} within {PROP2_MAX_DRAWS} draws")))
        })
        .collect()
}

/// A univariate Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture1d {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Mixture1d {
    pub fn density(&self, x: f64) -> f64 {
        let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.sds)
            .map(|((w, m), s)| {
                let z = (x - m) / s;
                w * c / s * (-0.5 * z * z).exp()
            })
            .sum()
    }

    /// Single Gaussian or two-component mixture with means in `[-3, 3]` and
    /// standard deviations in `[0.3, 2]`.
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let k = rng.gen_range(1..=2usize);
        let mut weights = vec![1.0];
        if k == 2 {
            let w = rng.gen_range(0.2..0.8);
            weights = vec![w, 1.0 - w];
        }
        let means = (0..k).map(|_| rng.gen_range(-3.0..=3.0)).collect();
        let sds = (0..k).map(|_| rng.gen_range(0.3..=2.0)).collect();
        Self { weights, means, sds }
    }

    fn support_hint(&self) -> (f64, f64) {
        let lo = self.means.iter().zip(&self.sds).map(|(m, s)| m - 8.0 * s).fold(f64::INFINITY, f64::min);
        let hi = self.means.iter().zip(&self.sds).map(|(m, s)| m + 8.0 * s).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Simpson grid covering eight standard deviations around every component
/// of both densities.
pub fn adaptive_grid(p: &Mixture1d, q: &Mixture1d, points: usize) -> Result<IntervalGrid> {
    let (a, b) = p.support_hint();
    let (c, d) = q.support_hint();
    IntervalGrid::new(a.min(c), b.max(d), points, QuadratureRule::Simpson)
}

/// Thresholds tried, largest first, when looking for an `ε` that meets the
/// overlap condition.
pub const PROP4_EPSILONS: [f64; 8] = [1e-1, 3e-2, 1e-2, 1e-3, 1e-4, 1e-6, 1e-8, 1e-10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop34Record {
    pub replicate: usize,
    pub p: Mixture1d,
    pub q: Mixture1d,
    pub prop3_lhs: f64,
    pub prop3_rhs: f64,
    pub prop3_slack: f64,
    pub c1: f64,
    pub tv: f64,
    pub sqrt_cs: f64,
    /// First threshold in [`PROP4_EPSILONS`] meeting the overlap condition.
    pub prop4_epsilon: Option<f64>,
}

impl Prop34Record {
    pub fn prop3_violated(&self) -> bool {
        self.prop3_slack < -1e-6
    }

    /// `TV > √CS` although the overlap condition was met.
    pub fn prop4_violated(&self) -> bool {
        self.prop4_epsilon.is_some() && self.tv > self.sqrt_cs + SWEEP_TOLERANCE
    }
}

pub const PROP34_GRID_POINTS: usize = 4001;

/// Random 1-D density pairs checked on adaptive grids.
pub fn prop34_sweep(replicates: usize, seed: u64) -> Result<Vec<Prop34Record>> {
    (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, "prop34", i as u64);
            let p = Mixture1d::random(&mut rng);
            let q = Mixture1d::random(&mut rng);
            let grid = adaptive_grid(&p, &q, PROP34_GRID_POINTS)?;
            let r3 = prop3_verify(|x| p.density(x), |x| q.density(x), &grid)?;
            let mut prop4_epsilon = None;
            let mut tv = f64::NAN;
            let mut sqrt_cs = f64::NAN;
            for &eps in &PROP4_EPSILONS {
                let r4 = prop4_verify(|x| p.density(x), |x| q.density(x), &grid, eps)?;
                tv = r4.tv;
                sqrt_cs = r4.sqrt_cs;
                if r4.condition_met {
                    prop4_epsilon = Some(eps);
                    break;
                }
            }
            Ok(Prop34Record {
                replicate: i,
                prop3_slack: r3.slack(),
                prop3_lhs: r3.lhs,
                prop3_rhs: r3.rhs,
                c1: r3.c1,
                p,
                q,
                tv,
                sqrt_cs,
                prop4_epsilon,
            })
        })
        .collect()
}
