//! Closed-form divergences and numeric checks of the CS/KL/TV relations.
//!
//! Every CS value in this module is the unsquared form
//! `-log(∫pq / √(∫p² ∫q²))`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Dirichlet, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};
use crate::kernel::{cholesky_checked, eigenvalues_pd_pencil, Cholesky, IntervalGrid};
use crate::rng::substream;

const SIMPLEX_TOL: f64 = 1e-12;
const EQUAL_COV_TOL: f64 = 1e-10;

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Multivariate Gaussian with a positive-definite covariance.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("Gaussian mean has non-finite entries".into()));
        }
        if cov.nrows() != mean.len() {
            return Err(Error::Config(format!(
                "mean has dimension {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        let chol = cholesky_checked(&cov, "covariance")?;
        Ok(Self { mean, cov, chol })
    }

    /// `N(mu, var)` in one dimension.
    pub fn univariate(mu: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mu), DMatrix::from_element(1, 1, var))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    fn log_det(&self) -> f64 {
        self.chol.log_det()
    }

    /// Density of a one-dimensional Gaussian. Fails for `d > 1`.
    pub fn density_1d(&self) -> Result<impl Fn(f64) -> f64> {
        if self.dim() != 1 {
            return Err(Error::Config("density_1d needs a univariate Gaussian".into()));
        }
        let (mu, var) = (self.mean[0], self.cov[(0, 0)]);
        let norm = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
        Ok(move |x: f64| norm * (-(x - mu) * (x - mu) / (2.0 * var)).exp())
    }
}

fn check_same_dim(p: &GaussianParams, q: &GaussianParams) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::Config(format!("Gaussian dimensions differ: {} vs {}", p.dim(), q.dim())));
    }
    Ok(())
}

/// `xᵀ A⁻¹ x` via a Cholesky factor of `A`.
fn mahalanobis_sq(chol: &Cholesky, x: &DVector<f64>) -> f64 {
    let mut v: Vec<f64> = x.iter().copied().collect();
    chol.solve_lower_in_place(&mut v);
    v.iter().map(|a| a * a).sum()
}

/// `½ δᵀ(Σ₁+Σ₂)⁻¹δ + ½ log(|Σ₁+Σ₂| / (2^d √(|Σ₁||Σ₂|)))`.
pub fn cs_gaussian(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    check_same_dim(p, q)?;
    let sum = &p.cov + &q.cov;
    let chol = cholesky_checked(&sum, "sigma1 + sigma2")?;
    let delta = &q.mean - &p.mean;
    let d = p.dim() as f64;
    let quad = mahalanobis_sq(&chol, &delta);
    let v = 0.5 * quad + 0.5 * (chol.log_det() - d * std::f64::consts::LN_2 - 0.5 * (p.log_det() + q.log_det()));
    Ok(v.max(0.0))
}

/// `½(tr(Σ₂⁻¹Σ₁) - d + δᵀΣ₂⁻¹δ + log(|Σ₂|/|Σ₁|))`.
pub fn kl_gaussian(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    check_same_dim(p, q)?;
    let d = p.dim();
    let mut trace = 0.0;
    for j in 0..d {
        let mut col: Vec<f64> = p.cov.column(j).iter().copied().collect();
        q.chol.solve_in_place(&mut col);
        trace += col[j];
    }
    let delta = &q.mean - &p.mean;
    let quad = mahalanobis_sq(&q.chol, &delta);
    let v = 0.5 * (trace - d as f64 + quad + q.log_det() - p.log_det());
    Ok(v.max(0.0))
}

fn covariances_equal(p: &GaussianParams, q: &GaussianParams) -> bool {
    p.cov.iter().zip(q.cov.iter()).all(|(a, b)| (a - b).abs() <= EQUAL_COV_TOL)
}

/// `2Φ(½‖Σ^{-1/2}δ‖) - 1` for Gaussians sharing one covariance.
pub fn tv_gaussian_equal_cov(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    check_same_dim(p, q)?;
    if !covariances_equal(p, q) {
        return Err(Error::Precondition(
            "covariances differ; use tv_numeric for the general case".into(),
        ));
    }
    let m = mahalanobis_sq(&p.chol, &(&q.mean - &p.mean)).sqrt();
    // 2Φ(m/2) - 1 == erf(m / (2√2)), which keeps precision near 0
    Ok(erf(m / (2.0 * std::f64::consts::SQRT_2)))
}

/// Numeric TV on a grid, with the measured masses of both densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericTv {
    pub tv: f64,
    pub mass_p: f64,
    pub mass_q: f64,
    /// Set when either mass is more than 0.01 away from 1.
    pub warning: Option<String>,
}

fn grid_values(f: &impl Fn(f64) -> f64, grid: &IntervalGrid, name: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = grid.abscissae().iter().map(|&x| f(x)).collect();
    if let Some((i, bad)) = v.iter().enumerate().find(|(_, y)| !(**y >= 0.0) || !y.is_finite()) {
        return Err(Error::Input(format!(
            "density {name} is {bad} at x = {}",
            grid.abscissae()[i]
        )));
    }
    Ok(v)
}

fn mass_warning(mass_p: f64, mass_q: f64, tol: f64) -> Option<String> {
    let off: Vec<String> = [("p", mass_p), ("q", mass_q)]
        .iter()
        .filter(|(_, m)| (m - 1.0).abs() > tol)
        .map(|(n, m)| format!("{n} has grid mass {m:.6}"))
        .collect();
    (!off.is_empty()).then(|| off.join("; "))
}

/// `½ Σ wᵢ |p(xᵢ) - q(xᵢ)|`.
pub fn tv_numeric(p: impl Fn(f64) -> f64, q: impl Fn(f64) -> f64, grid: &IntervalGrid) -> Result<NumericTv> {
    let pv = grid_values(&p, grid, "p")?;
    let qv = grid_values(&q, grid, "q")?;
    let diff: Vec<f64> = pv.iter().zip(&qv).map(|(a, b)| (a - b).abs()).collect();
    let mass_p = grid.integrate_values(&pv);
    let mass_q = grid.integrate_values(&qv);
    Ok(NumericTv {
        tv: 0.5 * grid.integrate_values(&diff),
        mass_p,
        mass_q,
        warning: mass_warning(mass_p, mass_q, 0.01),
    })
}

/// Probability vector on `K` states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Config("empty distribution".into()));
        }
        if let Some(v) = probs.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Input(format!("probability {v} is not a finite nonnegative number")));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Input(format!("probabilities sum to {s}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Rescale nonnegative weights to sum to one.
    pub fn normalized(weights: &[f64]) -> Result<Self> {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return Err(Error::Input("weights must have a positive sum".into()));
        }
        Self::new(weights.iter().map(|w| w / s).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// TV, CS and KL between two discrete distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDivergences {
    pub tv: f64,
    /// `+∞` when the supports are disjoint.
    pub cs: f64,
    /// `+∞` when `p` puts mass where `q` has none.
    pub kl: f64,
    pub support_violation: bool,
}

pub fn discrete_divergences(p: &DiscreteDist, q: &DiscreteDist) -> Result<DiscreteDivergences> {
    if p.len() != q.len() {
        return Err(Error::Config(format!("distributions have {} and {} states", p.len(), q.len())));
    }
    let (mut abs, mut pq, mut pp, mut qq, mut kl) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut support_violation = false;
    for (&a, &b) in p.probs.iter().zip(&q.probs) {
        abs += (a - b).abs();
        pq += a * b;
        pp += a * a;
        qq += b * b;
        if a > 0.0 {
            if b > 0.0 {
                kl += a * (a / b).ln();
            } else {
                support_violation = true;
            }
        }
    }
    let cs = if pq > 0.0 { (-(pq / (pp.sqrt() * qq.sqrt())).ln()).max(0.0) } else { f64::INFINITY };
    Ok(DiscreteDivergences {
        tv: 0.5 * abs,
        cs,
        kl: if support_violation { f64::INFINITY } else { kl.max(0.0) },
        support_violation,
    })
}

/// `min(KL(p‖q), KL(q‖p)) - CS(p,q)`; nonnegative for every Gaussian pair.
pub fn prop1_verify(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    let kl = kl_gaussian(p, q)?.min(kl_gaussian(q, p)?);
    Ok(kl - cs_gaussian(p, q)?)
}

/// The two sufficient conditions for `TV ≤ √CS` between Gaussians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop2Conditions {
    /// Only evaluated when the covariances are equal.
    pub cond1: Option<bool>,
    pub cond2: bool,
    /// `Σ log((2 + λᵢ + 1/λᵢ)/4)` over eigenvalues of `Σ₂⁻¹Σ₁`.
    pub cond2_lhs: f64,
}

impl Prop2Conditions {
    pub fn any(&self) -> bool {
        self.cond1.unwrap_or(false) || self.cond2
    }
}

pub fn prop2_conditions(p: &GaussianParams, q: &GaussianParams) -> Result<Prop2Conditions> {
    check_same_dim(p, q)?;
    let cond1 = if covariances_equal(p, q) {
        let m = mahalanobis_sq(&p.chol, &(&p.mean - &q.mean)).sqrt();
        Some(0.5 * m >= 2.0 * std_normal_cdf(m / 2.0) - 1.0)
    } else {
        None
    };
    let lambdas = eigenvalues_pd_pencil(&p.cov, &q.cov)?;
    let lhs: f64 = lambdas.iter().map(|l| ((2.0 + l + 1.0 / l) / 4.0).ln()).sum();
    Ok(Prop2Conditions { cond1, cond2: lhs >= 4.0, cond2_lhs: lhs })
}

/// Both sides of the CS/KL inequality on a bounded domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop3Result {
    pub lhs: f64,
    pub rhs: f64,
    pub c1: f64,
    pub c2: f64,
    /// Set when `∫_K p < 0.99`.
    pub warning: Option<String>,
}

impl Prop3Result {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// `C₁[D_CS - log|K| + 2 log C₂]` against `D_KL`, all integrals over the grid.
pub fn prop3_verify(p: impl Fn(f64) -> f64, q: impl Fn(f64) -> f64, grid: &IntervalGrid) -> Result<Prop3Result> {
    let pv = grid_values(&p, grid, "p")?;
    let qv = grid_values(&q, grid, "q")?;
    let w = grid.weights();
    let (mut c1, mut pp, mut qq, mut pq, mut kl) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..pv.len() {
        let (a, b) = (pv[i], qv[i]);
        c1 += w[i] * a;
        pp += w[i] * a * a;
        qq += w[i] * b * b;
        pq += w[i] * a * b;
        if a > 0.0 {
            kl += if b > 0.0 { w[i] * a * (a / b).ln() } else { f64::INFINITY };
        }
    }
    if !(c1 > 0.0) || !(pp > 0.0) || !(qq > 0.0) {
        return Err(Error::Input("densities vanish on the integration domain".into()));
    }
    let cs = if pq > 0.0 { -(pq / (pp * qq).sqrt()).ln() } else { f64::INFINITY };
    let c2 = c1 * (pp * qq).powf(-0.25);
    let lhs = c1 * (cs - grid.length().ln() + 2.0 * c2.ln());
    let warning = (c1 < 0.99).then(|| format!("p has mass {c1:.6} on the integration domain"));
    Ok(Prop3Result { lhs, rhs: kl, c1, c2, warning })
}

/// Overlap condition and the TV / √CS pair it is meant to order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop4Result {
    pub condition_met: bool,
    pub tv: f64,
    pub sqrt_cs: f64,
    /// Sup of `p·q` over `{p > ε, q > ε}`, max of the base and refined grids.
    pub t_sup: f64,
    /// Measure of `{p > ε, q > ε}`, max of the base and refined grids.
    pub measure: f64,
    pub c3: f64,
    /// True when the 10× refined grid raised `T·|A|` by more than 1%.
    pub refinement_changed: bool,
}

fn overlap_terms(pv: &[f64], qv: &[f64], w: &[f64], eps: f64) -> (f64, f64) {
    let (mut t, mut meas) = (0.0f64, 0.0);
    for i in 0..pv.len() {
        if pv[i] > eps && qv[i] > eps {
            t = t.max(pv[i] * qv[i]);
            meas += w[i];
        }
    }
    (t, meas)
}

/// Evaluates the overlap condition `C₃ ≥ e²(2ε + T|A_ε^∁|)²` on the grid.
///
/// The grid sup can only underestimate `T`, so the condition is evaluated
/// with the larger of the base-grid and 10× refined-grid values.
pub fn prop4_verify(
    p: impl Fn(f64) -> f64,
    q: impl Fn(f64) -> f64,
    grid: &IntervalGrid,
    eps: f64,
) -> Result<Prop4Result> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("epsilon must be positive, got {eps}")));
    }
    let pv = grid_values(&p, grid, "p")?;
    let qv = grid_values(&q, grid, "q")?;
    let w = grid.weights();
    let (t0, m0) = overlap_terms(&pv, &qv, w, eps);

    let fine = grid.refined(10)?;
    let pf = grid_values(&p, &fine, "p")?;
    let qf = grid_values(&q, &fine, "q")?;
    let (t1, m1) = overlap_terms(&pf, &qf, fine.weights(), eps);
    let (t_sup, measure) = (t0.max(t1), m0.max(m1));
    let refinement_changed = t1 * m1 > 1.01 * t0 * m0 + f64::MIN_POSITIVE;

    let (mut pp, mut qq, mut pq, mut abs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..pv.len() {
        pp += w[i] * pv[i] * pv[i];
        qq += w[i] * qv[i] * qv[i];
        pq += w[i] * pv[i] * qv[i];
        abs += w[i] * (pv[i] - qv[i]).abs();
    }
    let c3 = pp * qq;
    let bound = 2.0 * eps + t_sup * measure;
    let cs = if pq > 0.0 { (-(pq / c3.sqrt()).ln()).max(0.0) } else { f64::INFINITY };
    Ok(Prop4Result {
        condition_met: c3 >= std::f64::consts::E.powi(2) * bound * bound,
        tv: 0.5 * abs,
        sqrt_cs: cs.sqrt(),
        t_sup,
        measure,
        c3,
        refinement_changed,
    })
}

/// One random simplex pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexSample {
    pub replicate: usize,
    pub tv: f64,
    pub cs: f64,
    pub kl: f64,
}

/// Violation counts of `TV ≤ √CS` and `CS ≤ KL` over a batch of pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexRelation {
    pub k: usize,
    pub tv_cs_violations: usize,
    pub cs_kl_violations: usize,
    pub samples: Vec<SimplexSample>,
}

impl SimplexRelation {
    pub fn from_samples(k: usize, samples: Vec<SimplexSample>) -> Self {
        let tv_cs_violations = samples.iter().filter(|s| s.tv > s.cs.sqrt() + 1e-12).count();
        let cs_kl_violations = samples.iter().filter(|s| s.cs > s.kl + 1e-12).count();
        Self { k, tv_cs_violations, cs_kl_violations, samples }
    }

    pub fn cs_kl_violation_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.cs_kl_violations as f64 / self.samples.len() as f64
        }
    }

    /// Rows `tv,cs,kl,K,replicate` with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tv,cs,kl,K,replicate\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{},{},{}\n", s.tv, s.cs, s.kl, self.k, s.replicate));
        }
        out
    }
}

/// Draws `replicates` pairs uniformly from the `K`-simplex (Dirichlet(1,…,1))
/// and records TV, CS and KL for each. Replicate `r` uses its own stream, so
/// results do not depend on the thread count.
pub fn simplex_mc_relation(k: usize, replicates: usize, seed: u64) -> Result<SimplexRelation> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 states, got {k}")));
    }
    let alpha = vec![1.0; k];
    let dir = Dirichlet::new(&alpha).map_err(|e| Error::Config(e.to_string()))?;
    let samples = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, &format!("simplex-k{k}"), r as u64);
            let p = DiscreteDist::normalized(&dir.sample(&mut rng))?;
            let q = DiscreteDist::normalized(&dir.sample(&mut rng))?;
            let d = discrete_divergences(&p, &q)?;
            Ok(SimplexSample { replicate: r, tv: d.tv, cs: d.cs, kl: d.kl })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimplexRelation::from_samples(k, samples))
}

/// Conditional table `p̂(y|z)`, one row per `z` state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorTable {
    n_z: usize,
    n_y: usize,
    probs: Vec<f64>,
}

impl PredictorTable {
    pub fn new(n_z: usize, n_y: usize, probs: Vec<f64>) -> Result<Self> {
        if n_z == 0 || n_y == 0 || probs.len() != n_z * n_y {
            return Err(Error::Config(format!("predictor table must be {n_z}x{n_y}, got {} entries", probs.len())));
        }
        for (z, row) in probs.chunks(n_y).enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Input(format!("predictor row {z} is not on the simplex")));
            }
        }
        Ok(Self { n_z, n_y, probs })
    }

    /// Mixes each row with the uniform floor so every entry is at least `exp(-M)`.
    pub fn clamped(n_z: usize, n_y: usize, probs: &[f64], m: f64) -> Result<Self> {
        let floor = (-m).exp();
        if floor * n_y as f64 >= 1.0 {
            return Err(Error::Config(format!("exp(-{m}) floor is infeasible with {n_y} classes")));
        }
        let scale = 1.0 - floor * n_y as f64;
        Self::new(n_z, n_y, probs.iter().map(|p| floor + scale * p).collect())
    }

    pub fn get(&self, z: usize, y: usize) -> f64 {
        self.probs[z * self.n_y + y]
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }
}

/// Train/test losses and the two generalization bounds built from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundAuditRecord {
    pub l_train: f64,
    pub l_test: f64,
    pub kl_bound_value: f64,
    pub cs_bound_value: f64,
    pub cs_condition_met: bool,
    /// The threshold at which the overlap condition was met.
    pub epsilon: Option<f64>,
    #[serde(rename = "M")]
    pub m: f64,
}

impl BoundAuditRecord {
    pub fn kl_bound_holds(&self) -> bool {
        self.l_test <= self.kl_bound_value + 1e-12
    }

    pub fn cs_bound_holds(&self) -> bool {
        self.l_test <= self.cs_bound_value + 1e-12
    }
}

/// Smallest-slack search for a threshold `ε` at which the discrete overlap
/// condition `Σp²Σq² ≥ e²(2ε + T|A_ε^∁|)²` holds. `|A|` counts states and `T`
/// is the largest `pᵢqᵢ` over states with both masses above `ε`.
fn discrete_overlap_condition(p: &[f64], q: &[f64]) -> Option<f64> {
    let c3: f64 = p.iter().map(|v| v * v).sum::<f64>() * q.iter().map(|v| v * v).sum::<f64>();
    let mut candidates: Vec<f64> = p.iter().chain(q).copied().filter(|v| *v > 0.0).collect();
    candidates.push(1e-15);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates.into_iter().find(|&eps| {
        let (mut t, mut count) = (0.0f64, 0.0);
        for (a, b) in p.iter().zip(q) {
            if *a > eps && *b > eps {
                t = t.max(a * b);
                count += 1.0;
            }
        }
        let bound = 2.0 * eps + t * count;
        c3 >= std::f64::consts::E.powi(2) * bound * bound
    })
}

/// Expected losses under source and target joints over `(z, y)` states
/// (index `z·n_y + y`) and the KL- and CS-form bounds on the test loss.
pub fn bound_audit(
    joint_s: &DiscreteDist,
    joint_t: &DiscreteDist,
    predictor: &PredictorTable,
    m: f64,
) -> Result<BoundAuditRecord> {
    let states = predictor.n_z * predictor.n_y;
    if joint_s.len() != states || joint_t.len() != states {
        return Err(Error::Config(format!(
            "joints must have {states} states, got {} and {}",
            joint_s.len(),
            joint_t.len()
        )));
    }
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::Config(format!("M must be positive, got {m}")));
    }
    let floor = (-m).exp() * (1.0 - 1e-12);
    if let Some(i) = predictor.probs.iter().position(|v| *v < floor) {
        return Err(Error::Precondition(format!(
            "predictor entry (z={}, y={}) is below exp(-M); clamp it first",
            i / predictor.n_y,
            i % predictor.n_y
        )));
    }
    let loss: Vec<f64> = predictor.probs.iter().map(|p| -p.ln()).collect();
    let l_train: f64 = joint_s.probs().iter().zip(&loss).map(|(p, l)| p * l).sum();
    let l_test: f64 = joint_t.probs().iter().zip(&loss).map(|(p, l)| p * l).sum();
    let div = discrete_divergences(joint_t, joint_s)?;
    let epsilon = discrete_overlap_condition(joint_t.probs(), joint_s.probs());
    Ok(BoundAuditRecord {
        l_train,
        l_test,
        kl_bound_value: l_train + m / std::f64::consts::SQRT_2 * div.kl.sqrt(),
        cs_bound_value: l_train + m * div.cs.sqrt(),
        cs_condition_met: epsilon.is_some(),
        epsilon,
        m,
    })
}

/// A random audit with `|z| ∈ 1..=8`, `|y| ∈ 2..=4`, Dirichlet(1) joints and
/// a Dirichlet(1) predictor clamped at `exp(-M)`.
pub fn random_bound_audit(seed: u64, index: u64, m: f64) -> Result<BoundAuditRecord> {
    let mut rng = substream(seed, "bound-audit", index);
    let n_z = rng.gen_range(1..=8usize);
    let n_y = rng.gen_range(2..=4usize);
    let states = vec![1.0; n_z * n_y];
    let joint = Dirichlet::new(&states).map_err(|e| Error::Config(e.to_string()))?;
    let js = DiscreteDist::normalized(&joint.sample(&mut rng))?;
    let jt = DiscreteDist::normalized(&joint.sample(&mut rng))?;
    let row = Dirichlet::new(&vec![1.0; n_y]).map_err(|e| Error::Config(e.to_string()))?;
    let mut probs = Vec::with_capacity(n_z * n_y);
    for _ in 0..n_z {
        let r = row.sample(&mut rng);
        let s: f64 = r.iter().sum();
        probs.extend(r.iter().map(|v| v / s));
    }
    let predictor = PredictorTable::clamped(n_z, n_y, &probs, m)?;
    bound_audit(&js, &jt, &predictor, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{quadrature_grid, QuadratureRule};
    use proptest::prelude::*;

    fn g1(mu: f64, var: f64) -> GaussianParams {
        GaussianParams::univariate(mu, var).unwrap()
    }

    fn pdf(mu: f64, var: f64) -> impl Fn(f64) -> f64 {
        move |x| (-(x - mu) * (x - mu) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    // Composite Simpson on [lo, hi] with n (even) subintervals.
    fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
        }
        s * h / 3.0
    }

    fn cs_quadrature_1d(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
        let (p, q) = (pdf(m1, v1), pdf(m2, v2));
        let span = 14.0 * v1.max(v2).sqrt();
        let (lo, hi) = (m1.min(m2) - span, m1.max(m2) + span);
        let pq = simpson(|x| p(x) * q(x), lo, hi, 40_000);
        let pp = simpson(|x| p(x) * p(x), lo, hi, 40_000);
        let qq = simpson(|x| q(x) * q(x), lo, hi, 40_000);
        -(pq / (pp * qq).sqrt()).ln()
    }

    fn kl_quadrature_1d(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
        let (p, q) = (pdf(m1, v1), pdf(m2, v2));
        let span = 14.0 * v1.max(v2).sqrt();
        let f = |x: f64| {
            let a = p(x);
            if a > 0.0 {
                a * (a / q(x)).ln()
            } else {
                0.0
            }
        };
        simpson(f, m1.min(m2) - span, m1.max(m2) + span, 40_000)
    }

    fn gaussian_2d(mean: [f64; 2], a: [f64; 4]) -> GaussianParams {
        // covariance A Aᵀ + 0.1 I
        let am = DMatrix::from_row_slice(2, 2, &a);
        let cov = &am * am.transpose() + DMatrix::identity(2, 2) * 0.1;
        GaussianParams::new(DVector::from_row_slice(&mean), cov).unwrap()
    }

    fn pdf_2d(g: &GaussianParams) -> impl Fn(f64, f64) -> f64 {
        let inv = g.cov().clone().try_inverse().unwrap();
        let det = g.cov().determinant();
        let (m0, m1) = (g.mean()[0], g.mean()[1]);
        move |x, y| {
            let (dx, dy) = (x - m0, y - m1);
            let q = inv[(0, 0)] * dx * dx + 2.0 * inv[(0, 1)] * dx * dy + inv[(1, 1)] * dy * dy;
            (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
        }
    }

    fn cs_quadrature_2d(p: &GaussianParams, q: &GaussianParams) -> f64 {
        let (fp, fq) = (pdf_2d(p), pdf_2d(q));
        let span = |i: usize| 10.0 * p.cov()[(i, i)].max(q.cov()[(i, i)]).sqrt();
        let bounds: Vec<(f64, f64)> = (0..2)
            .map(|i| (p.mean()[i].min(q.mean()[i]) - span(i), p.mean()[i].max(q.mean()[i]) + span(i)))
            .collect();
        let n = 400;
        let (hx, hy) = ((bounds[0].1 - bounds[0].0) / n as f64, (bounds[1].1 - bounds[1].0) / n as f64);
        let wt = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let (mut pq, mut pp, mut qq) = (0.0, 0.0, 0.0);
        for i in 0..=n {
            let x = bounds[0].0 + i as f64 * hx;
            for j in 0..=n {
                let y = bounds[1].0 + j as f64 * hy;
                let w = wt(i) * wt(j);
                let (a, b) = (fp(x, y), fq(x, y));
                pq += w * a * b;
                pp += w * a * a;
                qq += w * b * b;
            }
        }
        -(pq / (pp * qq).sqrt()).ln()
    }

    #[test]
    fn cs_gaussian_examples() {
        assert!(cs_gaussian(&g1(0.3, 2.0), &g1(0.3, 2.0)).unwrap().abs() < 1e-12);
        let v = cs_gaussian(&g1(0.0, 1.0), &g1(1.0, 1.0)).unwrap();
        assert!((v - 0.25).abs() < 1e-12);
        assert!((v - cs_quadrature_1d(0.0, 1.0, 1.0, 1.0)).abs() < 1e-8);
        let v = cs_gaussian(&g1(0.0, 1.0), &g1(0.0, 4.0)).unwrap();
        assert!((v - 0.5 * 1.25f64.ln()).abs() < 1e-12);
        assert!((v - cs_quadrature_1d(0.0, 1.0, 0.0, 4.0)).abs() < 1e-8);
    }

    #[test]
    fn kl_gaussian_examples() {
        assert!(kl_gaussian(&g1(0.0, 3.0), &g1(0.0, 3.0)).unwrap().abs() < 1e-12);
        let v = kl_gaussian(&g1(0.0, 1.0), &g1(1.0, 1.0)).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        let fwd = kl_gaussian(&g1(0.0, 1.0), &g1(0.0, 4.0)).unwrap();
        let back = kl_gaussian(&g1(0.0, 4.0), &g1(0.0, 1.0)).unwrap();
        assert!((fwd - kl_quadrature_1d(0.0, 1.0, 0.0, 4.0)).abs() < 1e-8, "{fwd}");
        assert!((back - kl_quadrature_1d(0.0, 4.0, 0.0, 1.0)).abs() < 1e-8, "{back}");
        assert!((fwd - 0.318_147).abs() < 1e-6 && (back - 0.806_853).abs() < 1e-6);
    }

    #[test]
    fn gaussian_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            GaussianParams::new(DVector::zeros(2), bad),
            Err(Error::NotPositiveDefinite { .. })
        ));
        let p = GaussianParams::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(cs_gaussian(&p, &g1(0.0, 1.0)), Err(Error::Config(_))));
    }

    #[test]
    fn tv_equal_cov_examples() {
        assert_eq!(tv_gaussian_equal_cov(&g1(2.0, 1.0), &g1(2.0, 1.0)).unwrap(), 0.0);
        let v = tv_gaussian_equal_cov(&g1(0.0, 1.0), &g1(1.0, 1.0)).unwrap();
        // grid oracle of ½∫|p - q| with 10⁶ points
        let (p, q) = (pdf(0.0, 1.0), pdf(1.0, 1.0));
        let oracle = 0.5 * simpson(|x| (p(x) - q(x)).abs(), -10.0, 11.0, 1_000_000);
        assert!((v - oracle).abs() < 1e-8, "{v} vs {oracle}");
        assert!((v - 0.382_924_922_548).abs() < 1e-9);
        let mut last = v;
        for gap in [2.0, 4.0, 8.0, 16.0, 40.0] {
            let t = tv_gaussian_equal_cov(&g1(0.0, 1.0), &g1(gap, 1.0)).unwrap();
            assert!(t > last && t <= 1.0);
            last = t;
        }
        assert!((last - 1.0).abs() < 1e-12);
        assert!(matches!(tv_gaussian_equal_cov(&g1(0.0, 1.0), &g1(0.0, 2.0)), Err(Error::Precondition(_))));
    }

    #[test]
    fn tv_numeric_examples() {
        let grid = quadrature_grid(-8.0, 9.0, 100_000).unwrap();
        let same = tv_numeric(pdf(0.0, 1.0), pdf(0.0, 1.0), &grid).unwrap();
        assert_eq!(same.tv, 0.0);
        let v = tv_numeric(pdf(0.0, 1.0), pdf(1.0, 1.0), &grid).unwrap();
        assert!((v.tv - 0.3829).abs() < 1e-4, "{}", v.tv);
        assert!(v.warning.is_none());
        let far = tv_numeric(pdf(-20.0, 0.5), pdf(20.0, 0.5), &quadrature_grid(-30.0, 30.0, 200_001).unwrap()).unwrap();
        assert!((far.tv - 1.0).abs() < 1e-6);
        let short = tv_numeric(pdf(0.0, 1.0), pdf(0.0, 1.0), &quadrature_grid(0.0, 3.0, 101).unwrap()).unwrap();
        assert!(short.warning.is_some());
        assert!(tv_numeric(|_| -1.0, pdf(0.0, 1.0), &grid).is_err());
    }

    #[test]
    fn discrete_examples() {
        let p = DiscreteDist::new(vec![0.5, 0.5]).unwrap();
        let d = discrete_divergences(&p, &p).unwrap();
        assert_eq!((d.tv, d.kl), (0.0, 0.0));
        assert!(d.cs.abs() < 1e-15);
        let q = DiscreteDist::new(vec![0.9, 0.1]).unwrap();
        let d = discrete_divergences(&p, &q).unwrap();
        assert!((d.tv - 0.4).abs() < 1e-12);
        assert!((d.cs - 0.2473).abs() < 1e-4, "{}", d.cs);
        assert!((d.kl - 0.5108).abs() < 1e-4, "{}", d.kl);
        assert!(d.tv * d.tv <= d.cs && d.cs <= d.kl);
        let a = DiscreteDist::new(vec![1.0, 0.0]).unwrap();
        let b = DiscreteDist::new(vec![0.0, 1.0]).unwrap();
        let d = discrete_divergences(&a, &b).unwrap();
        assert_eq!(d.tv, 1.0);
        assert!(d.cs.is_infinite() && d.kl.is_infinite() && d.support_violation);
        let q = DiscreteDist::new(vec![0.99, 0.01]).unwrap();
        let d = discrete_divergences(&p, &q).unwrap();
        assert!((d.cs - 0.3366).abs() < 1e-4 && (d.kl - 1.614).abs() < 1e-3);
        assert!(DiscreteDist::new(vec![0.5, 0.6]).is_err());
        assert!(DiscreteDist::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn prop1_examples() {
        assert!(prop1_verify(&g1(1.0, 2.0), &g1(1.0, 2.0)).unwrap().abs() < 1e-12);
        assert!((prop1_verify(&g1(0.0, 1.0), &g1(1.0, 1.0)).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn prop2_examples() {
        let c = prop2_conditions(&g1(0.0, 1.0), &g1(1.0, 1.0)).unwrap();
        assert_eq!(c.cond1, Some(true));
        assert!(!c.cond2 && c.cond2_lhs.abs() < 1e-12);
        let c = prop2_conditions(&g1(0.0, 1.0), &g1(0.0, 3.0)).unwrap();
        assert_eq!(c.cond1, None);
        // λ with (2 + λ + 1/λ)/4 = r in every one of 1024 dimensions
        let lambda_for = |r: f64| {
            let b = 4.0 * r - 2.0;
            (b + (b * b - 4.0).sqrt()) / 2.0
        };
        let at = |r: f64| {
            let d = 1024;
            let p = GaussianParams::new(DVector::zeros(d), DMatrix::identity(d, d) * lambda_for(r)).unwrap();
            let q = GaussianParams::new(DVector::zeros(d), DMatrix::identity(d, d)).unwrap();
            prop2_conditions(&p, &q).unwrap()
        };
        let c = at(1.003);
        assert!((c.cond2_lhs - 1024.0 * 1.003f64.ln()).abs() < 1e-6);
        assert!(!c.cond2, "1024 · ln 1.003 ≈ 3.07 falls short of 4");
        assert!(at(1.004).cond2);
    }

    #[test]
    fn prop3_examples() {
        let grid = IntervalGrid::new(-8.0, 9.0, 20_001, QuadratureRule::Simpson).unwrap();
        let same = prop3_verify(pdf(0.0, 1.0), pdf(0.0, 1.0), &grid).unwrap();
        assert!(same.rhs.abs() < 1e-12);
        assert!(same.lhs <= 0.0);
        let expected = same.c1 * (-(grid.length().ln()) + 2.0 * same.c2.ln());
        assert!((same.lhs - expected).abs() < 1e-9);
        let r = prop3_verify(pdf(0.0, 1.0), pdf(1.0, 1.0), &grid).unwrap();
        assert!(r.slack() > 0.0, "{r:?}");
        assert!((r.rhs - 0.5).abs() < 1e-6);
        assert!(r.warning.is_none());
        let narrow = prop3_verify(pdf(0.0, 1.0), pdf(1.0, 1.0), &quadrature_grid(1.0, 2.0, 101).unwrap()).unwrap();
        assert!(narrow.warning.is_some());
    }

    #[test]
    fn prop4_examples() {
        let grid = quadrature_grid(-3.0, 13.0, 16_001).unwrap();
        let r = prop4_verify(pdf(0.0, 0.04), pdf(10.0, 0.04), &grid, 1e-4).unwrap();
        assert!(r.condition_met);
        assert!((r.tv - 1.0).abs() < 1e-9 && r.tv <= r.sqrt_cs);
        let same = prop4_verify(pdf(0.0, 1.0), pdf(0.0, 1.0), &quadrature_grid(-8.0, 8.0, 4001).unwrap(), 1e-3).unwrap();
        assert!(!same.condition_met);
        assert!(prop4_verify(pdf(0.0, 1.0), pdf(0.0, 1.0), &grid, 0.0).is_err());
    }

    #[test]
    fn prop4_condition_flips_as_means_separate() {
        let eps = 1e-3;
        let flags: Vec<bool> = [0.0, 1.0, 2.0, 4.0, 8.0, 12.0]
            .iter()
            .map(|&gap| {
                let grid = quadrature_grid(-10.0, gap + 10.0, 8001).unwrap();
                prop4_verify(pdf(0.0, 1.0), pdf(gap, 1.0), &grid, eps).unwrap().condition_met
            })
            .collect();
        assert!(!flags[0] && *flags.last().unwrap(), "{flags:?}");
        let first = flags.iter().position(|f| *f).unwrap();
        assert!(flags[first..].iter().all(|f| *f), "{flags:?}");
    }

    #[test]
    fn simplex_relation_counts_and_csv() {
        let forced: Vec<SimplexSample> = (0..10)
            .map(|r| {
                let p = DiscreteDist::new(vec![0.2, 0.3, 0.5]).unwrap();
                let d = discrete_divergences(&p, &p).unwrap();
                SimplexSample { replicate: r, tv: d.tv, cs: d.cs, kl: d.kl }
            })
            .collect();
        let rel = SimplexRelation::from_samples(3, forced);
        assert_eq!((rel.tv_cs_violations, rel.cs_kl_violations), (0, 0));
        let a = simplex_mc_relation(3, 50, 7).unwrap();
        let b = simplex_mc_relation(3, 50, 7).unwrap();
        assert_eq!(a, b);
        let csv = a.to_csv();
        assert!(csv.starts_with("tv,cs,kl,K,replicate\n"));
        assert_eq!(csv.lines().count(), 51);
        assert!(simplex_mc_relation(1, 5, 0).is_err());
    }

    #[test]
    fn simplex_relation_ignores_thread_count() {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| simplex_mc_relation(10, 200, 3).unwrap());
        let b = four.install(|| simplex_mc_relation(10, 200, 3).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn bound_audit_examples() {
        let j = DiscreteDist::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let pred = PredictorTable::clamped(2, 2, &[0.7, 0.3, 0.0, 1.0], 4.0).unwrap();
        let r = bound_audit(&j, &j, &pred, 4.0).unwrap();
        assert_eq!(r.l_test, r.l_train);
        assert!(r.kl_bound_holds() && r.cs_bound_holds());
        assert!(((-4.0f64).exp() - 0.0183).abs() < 1e-4);
        let raw = PredictorTable::new(2, 2, vec![0.7, 0.3, 0.0, 1.0]).unwrap();
        assert!(matches!(bound_audit(&j, &j, &raw, 4.0), Err(Error::Precondition(_))));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"M\":4.0"));
    }

    #[test]
    fn random_audits_respect_kl_bound() {
        for i in 0..200 {
            let r = random_bound_audit(5, i, 4.0).unwrap();
            assert!(r.kl_bound_holds(), "{r:?}");
            if r.cs_condition_met {
                assert!(r.cs_bound_holds(), "{r:?}");
            }
        }
    }

    fn gaussian_strategy(d: usize) -> impl Strategy<Value = GaussianParams> {
        (
            proptest::collection::vec(-3.0f64..3.0, d),
            proptest::collection::vec(-1.5f64..1.5, d * d),
        )
            .prop_map(move |(m, a)| {
                let am = DMatrix::from_row_slice(d, d, &a);
                let cov = &am * am.transpose() + DMatrix::identity(d, d) * 0.1;
                GaussianParams::new(DVector::from_vec(m), cov).unwrap()
            })
    }

    fn pair_any_dim() -> impl Strategy<Value = (GaussianParams, GaussianParams)> {
        (1usize..=8).prop_flat_map(|d| (gaussian_strategy(d), gaussian_strategy(d)))
    }

    fn simplex(k: usize) -> impl Strategy<Value = DiscreteDist> {
        proptest::collection::vec(0.001f64..1.0, k).prop_map(|w| DiscreteDist::normalized(&w).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn cs_is_symmetric((p, q) in pair_any_dim()) {
            let a = cs_gaussian(&p, &q).unwrap();
            let b = cs_gaussian(&q, &p).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn discrete_cs_is_symmetric((p, q) in (2usize..12).prop_flat_map(|k| (simplex(k), simplex(k)))) {
            let a = discrete_divergences(&p, &q).unwrap().cs;
            let b = discrete_divergences(&q, &p).unwrap().cs;
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn cs_matches_1d_quadrature(m1 in -3.0f64..3.0, v1 in 0.2f64..4.0, m2 in -3.0f64..3.0, v2 in 0.2f64..4.0) {
            let v = cs_gaussian(&g1(m1, v1), &g1(m2, v2)).unwrap();
            prop_assert!((v - cs_quadrature_1d(m1, v1, m2, v2)).abs() < 1e-5);
        }

        #[test]
        fn cs_matches_2d_quadrature(
            m in proptest::array::uniform4(-2.0f64..2.0),
            a in proptest::array::uniform4(-1.0f64..1.0),
            b in proptest::array::uniform4(-1.0f64..1.0),
        ) {
            let p = gaussian_2d([m[0], m[1]], a);
            let q = gaussian_2d([m[2], m[3]], b);
            let v = cs_gaussian(&p, &q).unwrap();
            prop_assert!((v - cs_quadrature_2d(&p, &q)).abs() < 1e-5, "{} vs {}", v, cs_quadrature_2d(&p, &q));
        }

        #[test]
        fn prop1_residual_is_nonnegative((p, q) in pair_any_dim()) {
            prop_assert!(prop1_verify(&p, &q).unwrap() >= -1e-8);
        }

        #[test]
        fn prop2_conditions_imply_tv_bound(m1 in -4.0f64..4.0, m2 in -4.0f64..4.0, v in 0.1f64..4.0, log_ratio in -7.0f64..7.0) {
            let equal = prop2_conditions(&g1(m1, v), &g1(m2, v)).unwrap();
            if equal.any() {
                let tv = tv_gaussian_equal_cov(&g1(m1, v), &g1(m2, v)).unwrap();
                prop_assert!(tv <= cs_gaussian(&g1(m1, v), &g1(m2, v)).unwrap().sqrt() + 1e-8);
            }
            let v2 = v * log_ratio.exp();
            let c = prop2_conditions(&g1(m1, v), &g1(m2, v2)).unwrap();
            if c.any() {
                let s = v.max(v2).sqrt();
                let grid = quadrature_grid(m1.min(m2) - 12.0 * s, m1.max(m2) + 12.0 * s, 400_001).unwrap();
                let tv = tv_numeric(pdf(m1, v), pdf(m2, v2), &grid).unwrap().tv;
                prop_assert!(tv <= cs_gaussian(&g1(m1, v), &g1(m2, v2)).unwrap().sqrt() + 1e-8);
            }
        }
    }
}
