//! Sample-based divergence estimators.
//!
//! | Function | Quantity |
//! |----------|----------|
//! | [`cs_estimate`] | CS divergence between two feature samples (log of Gram means) |
//! | [`mmd_sq_estimate`] | biased (V-statistic) squared MMD |
//! | [`ccs_estimate`] | conditional CS divergence of `p(y|z)`, symmetric Gram-ratio form |
//! | [`cmmd_estimate`] | conditional MMD via regularized Gram solves |
//! | [`class_cmmd_estimate`] | sum over shared classes of per-class MMD² |
//! | [`kl_knn_estimate`] | k-NN KL divergence (Wang, Kulkarni, Verdú 2009) |
//! | [`ckl_chain_estimate`] | conditional KL as joint minus marginal k-NN KL |
//!
//! The CS sample estimator is `log m_ss + log m_tt - 2 log m_st` where `m`
//! are Gram means; it equals `-log((∫pq)² / ∫p²∫q²)` for Gaussian KDEs with
//! bandwidth `σ/√2`. The closed forms in [`crate::closed_forms`] use the
//! unsquared ratio, so a closed-form value must be doubled before it is
//! compared to a sample estimate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{rbf_cross_gram, rbf_gram, sq_dist, Cholesky, GramMatrix, KernelSpec, SampleMatrix};

/// Floor applied to log arguments and ratio denominators.
pub const LOG_FLOOR: f64 = 1e-300;

const SIMPLEX_TOL: f64 = 1e-6;

/// Features paired with per-sample outputs (predictions or one-hot labels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDomain {
    features: SampleMatrix,
    outputs: SampleMatrix,
}

impl LabeledDomain {
    /// Pair features with simplex rows. Rows must be nonnegative and sum to 1 within 1e-6.
    pub fn new(features: SampleMatrix, outputs: SampleMatrix) -> Result<Self> {
        if features.n() != outputs.n() {
            return Err(Error::Config(format!(
                "{} feature rows but {} output rows",
                features.n(),
                outputs.n()
            )));
        }
        for (i, r) in outputs.rows().enumerate() {
            let s: f64 = r.iter().sum();
            if r.iter().any(|v| *v < 0.0) || (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Input(format!("output row {i} is not on the probability simplex (sum {s})")));
            }
        }
        Ok(Self { features, outputs })
    }

    /// One-hot outputs over `classes` classes.
    pub fn from_labels(features: SampleMatrix, labels: &[usize], classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&c| c >= classes) {
            return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
        }
        let mut data = vec![0.0; labels.len() * classes];
        for (i, &c) in labels.iter().enumerate() {
            data[i * classes + c] = 1.0;
        }
        let outputs = SampleMatrix::from_flat(labels.len(), classes, data)?;
        Self::new(features, outputs)
    }

    pub fn features(&self) -> &SampleMatrix {
        &self.features
    }

    pub fn outputs(&self) -> &SampleMatrix {
        &self.outputs
    }

    pub fn n(&self) -> usize {
        self.features.n()
    }

    pub fn select(&self, indices: &[usize]) -> LabeledDomain {
        LabeledDomain { features: self.features.select(indices), outputs: self.outputs.select(indices) }
    }

    /// Class index per row when every row is exactly one-hot.
    pub fn hard_labels(&self) -> Option<Vec<usize>> {
        self.outputs
            .rows()
            .map(|r| {
                let ones: Vec<usize> = r.iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i).collect();
                (ones.len() == 1 && r.iter().filter(|v| **v != 0.0).count() == 1).then(|| ones[0])
            })
            .collect()
    }

    /// Stack `self` on top of `other`.
    pub fn pooled(&self, other: &LabeledDomain) -> Result<LabeledDomain> {
        Ok(LabeledDomain {
            features: self.features.vconcat(&other.features)?,
            outputs: self.outputs.vconcat(&other.outputs)?,
        })
    }
}

/// Estimator identifiers used in reports and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EstimatorKind {
    Cs,
    #[serde(rename = "MMD2")]
    Mmd2,
    Ccs,
    Cmmd,
    ClassCmmd,
    KlKnn,
    CklChain,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Cs => "CS",
            EstimatorKind::Mmd2 => "MMD2",
            EstimatorKind::Ccs => "CCS",
            EstimatorKind::Cmmd => "CMMD",
            EstimatorKind::ClassCmmd => "CLASS_CMMD",
            EstimatorKind::KlKnn => "KL_KNN",
            EstimatorKind::CklChain => "CKL_CHAIN",
        }
    }
}

/// Diagnostic conditions raised while estimating.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateFlag {
    /// A log argument or denominator fell below [`LOG_FLOOR`] and was clamped.
    Underflow,
    /// A zero k-th neighbour distance was replaced by a tiny positive one.
    DuplicatePoints,
    /// Classes present in only one domain were left out.
    SkippedClasses(usize),
}

/// A scalar estimate with the diagnostic flags raised while computing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub flags: Vec<EstimateFlag>,
}

impl Estimate {
    fn clean(value: f64) -> Self {
        Self { value, flags: Vec::new() }
    }

    pub fn underflow(&self) -> bool {
        self.flags.contains(&EstimateFlag::Underflow)
    }
}

/// Serializable result of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub schema_version: u32,
    pub estimator: EstimatorKind,
    pub value: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub bandwidth: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub auxiliary: BTreeMap<String, f64>,
    #[serde(default)]
    pub flags: Vec<EstimateFlag>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

impl DivergenceReport {
    pub fn new(estimator: EstimatorKind, est: Estimate, n_source: usize, n_target: usize, bandwidth: f64) -> Result<Self> {
        if !est.value.is_finite() {
            return Err(Error::NumericalInstability(format!("{} produced {}", estimator.name(), est.value)));
        }
        if n_source == 0 || n_target == 0 {
            return Err(Error::Config("reports need at least one sample per domain".into()));
        }
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            estimator,
            value: est.value,
            n_source,
            n_target,
            bandwidth,
            auxiliary: BTreeMap::new(),
            flags: est.flags,
        })
    }

    pub fn with_aux(mut self, key: &str, value: f64) -> Self {
        self.auxiliary.insert(key.to_string(), value);
        self
    }
}

fn floored_ln(x: f64, underflow: &mut bool) -> f64 {
    if !(x > LOG_FLOOR) {
        *underflow = true;
        LOG_FLOOR.ln()
    } else {
        x.ln()
    }
}

fn floored(x: f64, underflow: &mut bool) -> f64 {
    if x <= LOG_FLOOR {
        *underflow = true;
        LOG_FLOOR
    } else {
        x
    }
}

fn same_dim(a: &SampleMatrix, b: &SampleMatrix, what: &str) -> Result<()> {
    if a.d() != b.d() {
        return Err(Error::Config(format!("{what} dimension mismatch: {} vs {}", a.d(), b.d())));
    }
    Ok(())
}

pub(crate) fn cs_from_means(m_ss: f64, m_tt: f64, m_st: f64) -> Estimate {
    let mut uf = false;
    let v = floored_ln(m_ss, &mut uf) + floored_ln(m_tt, &mut uf) - 2.0 * floored_ln(m_st, &mut uf);
    Estimate { value: v, flags: if uf { vec![EstimateFlag::Underflow] } else { Vec::new() } }
}

/// `log mean(K^ss) + log mean(K^tt) - 2 log mean(K^st)`.
pub fn cs_estimate(zs: &SampleMatrix, zt: &SampleMatrix, spec: KernelSpec) -> Result<Estimate> {
    same_dim(zs, zt, "feature")?;
    let kss = rbf_gram(zs, spec);
    let ktt = rbf_gram(zt, spec);
    let kst = rbf_cross_gram(zs, zt, spec)?;
    Ok(cs_from_means(kss.mean(), ktt.mean(), kst.mean()))
}

/// `mean(K^ss) + mean(K^tt) - 2 mean(K^st)`.
pub fn mmd_sq_estimate(zs: &SampleMatrix, zt: &SampleMatrix, spec: KernelSpec) -> Result<f64> {
    same_dim(zs, zt, "feature")?;
    let kss = rbf_gram(zs, spec);
    let ktt = rbf_gram(zt, spec);
    let kst = rbf_cross_gram(zs, zt, spec)?;
    Ok(kss.mean() + ktt.mean() - 2.0 * kst.mean())
}

/// The eight Gram blocks of the conditional estimators. `*_st` are
/// source-rows × target-columns; the `ts` blocks are their transposes.
pub(crate) struct ConditionalGrams {
    pub ks: GramMatrix,
    pub ls: GramMatrix,
    pub kt: GramMatrix,
    pub lt: GramMatrix,
    pub kst: GramMatrix,
    pub lst: GramMatrix,
}

impl ConditionalGrams {
    pub fn build(source: &LabeledDomain, target: &LabeledDomain, spec_z: KernelSpec, spec_y: KernelSpec) -> Result<Self> {
        same_dim(source.features(), target.features(), "feature")?;
        same_dim(source.outputs(), target.outputs(), "output")?;
        Ok(Self {
            ks: rbf_gram(source.features(), spec_z),
            ls: rbf_gram(source.outputs(), spec_y),
            kt: rbf_gram(target.features(), spec_z),
            lt: rbf_gram(target.outputs(), spec_y),
            kst: rbf_cross_gram(source.features(), target.features(), spec_z)?,
            lst: rbf_cross_gram(source.outputs(), target.outputs(), spec_y)?,
        })
    }

    /// Blocks of pooled Grams restricted to `s_idx` (source) and `t_idx` (target).
    pub fn from_pooled(k: &GramMatrix, l: &GramMatrix, s_idx: &[usize], t_idx: &[usize]) -> Self {
        Self {
            ks: k.block(s_idx, s_idx),
            ls: l.block(s_idx, s_idx),
            kt: k.block(t_idx, t_idx),
            lt: l.block(t_idx, t_idx),
            kst: k.block(s_idx, t_idx),
            lst: l.block(s_idx, t_idx),
        }
    }
}

/// Σ_j [Σ_i K_ji L_ji / (a_j · b_j)] where `a`, `b` are per-row normalizers.
fn ratio_sum(k: &GramMatrix, l: &GramMatrix, a: &[f64], b: &[f64], uf: &mut bool) -> f64 {
    let mut total = 0.0;
    for j in 0..k.rows() {
        let num: f64 = k.row(j).iter().zip(l.row(j)).map(|(x, y)| x * y).sum();
        total += num / (floored(a[j], uf) * floored(b[j], uf));
    }
    total
}

pub(crate) fn ccs_from_grams(g: &ConditionalGrams) -> Estimate {
    let mut uf = false;
    let ks_rows = g.ks.row_sums();
    let kt_rows = g.kt.row_sums();
    let kst_rows = g.kst.row_sums();
    let kts = g.kst.transpose();
    let lts = g.lst.transpose();
    let kts_rows = kts.row_sums();

    let quad_s = ratio_sum(&g.ks, &g.ls, &ks_rows, &ks_rows, &mut uf);
    let quad_t = ratio_sum(&g.kt, &g.lt, &kt_rows, &kt_rows, &mut uf);
    let cross_st = ratio_sum(&g.kst, &g.lst, &ks_rows, &kst_rows, &mut uf);
    let cross_ts = ratio_sum(&kts, &lts, &kts_rows, &kt_rows, &mut uf);

    let value = floored_ln(quad_s, &mut uf) + floored_ln(quad_t, &mut uf)
        - floored_ln(cross_st, &mut uf)
        - floored_ln(cross_ts, &mut uf);
    Estimate { value, flags: if uf { vec![EstimateFlag::Underflow] } else { Vec::new() } }
}

/// Conditional CS divergence between `p_s(y|z)` and `p_t(y|z)`.
///
/// Both cross terms carry weight one, which makes the estimate symmetric in
/// its arguments and exactly zero when `source == target`.
pub fn ccs_estimate(source: &LabeledDomain, target: &LabeledDomain, spec_z: KernelSpec, spec_y: KernelSpec) -> Result<Estimate> {
    let g = ConditionalGrams::build(source, target, spec_z, spec_y)?;
    Ok(ccs_from_grams(&g))
}

/// Columns `F` with `L ≈ F Fᵀ`, from pivoted Cholesky stopped once the
/// largest residual diagonal drops below `tol`. Exact up to `tol` for PSD
/// `L`; one-hot label Grams have rank equal to the number of classes.
pub(crate) fn low_rank_factor(l: &GramMatrix, tol: f64) -> Vec<Vec<f64>> {
    let n = l.rows();
    let mut resid: Vec<f64> = (0..n).map(|i| l.get(i, i)).collect();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < n {
        let (p, &dmax) = resid
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        if dmax <= tol {
            break;
        }
        let piv = dmax.sqrt();
        let mut col = vec![0.0; n];
        for i in 0..n {
            let mut v = l.get(i, p);
            for c in &cols {
                v -= c[i] * c[p];
            }
            col[i] = v / piv;
        }
        col[p] = piv;
        for i in 0..n {
            resid[i] -= col[i] * col[i];
        }
        resid[p] = 0.0;
        cols.push(col);
    }
    cols
}

const CMMD_FACTOR_TOL: f64 = 1e-14;

fn regularized_cholesky(k: &GramMatrix, lambda: f64, which: &str) -> Result<Cholesky> {
    let n = k.rows();
    let mut a = k.values().to_vec();
    for i in 0..n {
        a[i * n + i] += lambda;
    }
    let chol = Cholesky::factor(&a, n)
        .ok_or_else(|| Error::NumericalInstability(format!("Cholesky of regularized {which} Gram failed")))?;
    // A pivot this small means K + λI is singular to working precision.
    let lower = chol.lower();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let d = lower[(i, i)] * lower[(i, i)];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo <= hi * (n as f64) * f64::EPSILON {
        return Err(Error::NumericalInstability(format!(
            "regularized {which} Gram is singular to working precision (pivot ratio {:.3e})",
            lo / hi
        )));
    }
    Ok(chol)
}

fn quad_form(k: &GramMatrix, u: &[f64], v: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, ui) in u.iter().enumerate() {
        let kv: f64 = k.row(i).iter().zip(v).map(|(a, b)| a * b).sum();
        total += ui * kv;
    }
    total
}

/// Conditional MMD from feature Gram blocks and a factor of the pooled output
/// Gram (`f_s`, `f_t` are the source and target rows of each factor column).
pub(crate) fn cmmd_from_blocks(
    ks: &GramMatrix,
    kt: &GramMatrix,
    kst: &GramMatrix,
    factor: &[Vec<f64>],
    s_idx: &[usize],
    t_idx: &[usize],
    lambda: f64,
) -> Result<f64> {
    let cs = regularized_cholesky(ks, lambda, "source")?;
    let ct = regularized_cholesky(kt, lambda, "target")?;
    let (mut term_s, mut term_t, mut cross) = (0.0, 0.0, 0.0);
    for col in factor {
        let mut us: Vec<f64> = s_idx.iter().map(|&i| col[i]).collect();
        let mut ut: Vec<f64> = t_idx.iter().map(|&i| col[i]).collect();
        cs.solve_in_place(&mut us);
        ct.solve_in_place(&mut ut);
        term_s += quad_form(ks, &us, &us);
        term_t += quad_form(kt, &ut, &ut);
        cross += quad_form(kst, &us, &ut);
    }
    let v = term_s + term_t - 2.0 * cross;
    if !v.is_finite() {
        return Err(Error::NumericalInstability(format!("conditional MMD evaluated to {v}")));
    }
    Ok(v)
}

/// Conditional MMD
/// `tr(K^s K̃s⁻¹ L^s K̃s⁻¹) + tr(K^t K̃t⁻¹ L^t K̃t⁻¹) - 2 tr(K^st K̃t⁻¹ L^ts K̃s⁻¹)`
/// with `K̃ = K + λI`.
///
/// `K̃⁻¹` is only ever applied through Cholesky triangular solves. The output
/// Gram `L` is factored once over the pooled sample, so each trace costs one
/// pair of solves per factor column.
pub fn cmmd_estimate(source: &LabeledDomain, target: &LabeledDomain, spec: KernelSpec, lambda: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    same_dim(source.features(), target.features(), "feature")?;
    same_dim(source.outputs(), target.outputs(), "output")?;
    let ks = rbf_gram(source.features(), spec);
    let kt = rbf_gram(target.features(), spec);
    let kst = rbf_cross_gram(source.features(), target.features(), spec)?;
    let pooled = source.outputs().vconcat(target.outputs())?;
    let l = rbf_gram(&pooled, spec);
    let factor = low_rank_factor(&l, CMMD_FACTOR_TOL);
    let m = source.n();
    let s_idx: Vec<usize> = (0..m).collect();
    let t_idx: Vec<usize> = (m..m + target.n()).collect();
    cmmd_from_blocks(&ks, &kt, &kst, &factor, &s_idx, &t_idx, lambda)
}

/// Splits sample indices by class; `None` when some row is not one-hot.
fn class_members(d: &LabeledDomain) -> Result<Vec<Vec<usize>>> {
    let labels = d
        .hard_labels()
        .ok_or_else(|| Error::Precondition("class-conditional MMD needs one-hot labels".into()))?;
    let mut members = vec![Vec::new(); d.outputs().d()];
    for (i, c) in labels.into_iter().enumerate() {
        members[c].push(i);
    }
    Ok(members)
}

pub(crate) fn class_cmmd_from_pooled(
    k: &GramMatrix,
    s_members: &[Vec<usize>],
    t_members: &[Vec<usize>],
) -> Result<Estimate> {
    let mut total = 0.0;
    let (mut shared, mut skipped) = (0usize, 0usize);
    for (sc, tc) in s_members.iter().zip(t_members) {
        if sc.is_empty() && tc.is_empty() {
            continue;
        }
        if sc.is_empty() || tc.is_empty() {
            skipped += 1;
            continue;
        }
        shared += 1;
        total += k.block(sc, sc).mean() + k.block(tc, tc).mean() - 2.0 * k.block(sc, tc).mean();
    }
    if shared == 0 {
        return Err(Error::Input("no class is present in both domains".into()));
    }
    let mut est = Estimate::clean(total);
    if skipped > 0 {
        est.flags.push(EstimateFlag::SkippedClasses(skipped));
    }
    Ok(est)
}

/// Σ over classes present in both domains of the MMD² between that class's features.
pub fn class_cmmd_estimate(source: &LabeledDomain, target: &LabeledDomain, spec: KernelSpec) -> Result<Estimate> {
    same_dim(source.features(), target.features(), "feature")?;
    same_dim(source.outputs(), target.outputs(), "output")?;
    let sm = class_members(source)?;
    let tm = class_members(target)?;
    let m = source.n();
    let pooled = source.features().vconcat(target.features())?;
    let k = rbf_gram(&pooled, spec);
    let tm: Vec<Vec<usize>> = tm.into_iter().map(|c| c.into_iter().map(|i| i + m).collect()).collect();
    class_cmmd_from_pooled(&k, &sm, &tm)
}

/// k-NN KL estimate on pooled indices. `sq(i, j)` is the squared distance
/// between pooled points `i` and `j`; `x_idx` indexes the first sample and
/// `y_idx` the second. `dim` is the ambient dimension.
pub(crate) fn kl_knn_indexed(
    sq: impl Fn(usize, usize) -> f64,
    x_idx: &[usize],
    y_idx: &[usize],
    dim: usize,
    k: usize,
) -> Result<Estimate> {
    let (n, m) = (x_idx.len(), y_idx.len());
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    if n <= k {
        return Err(Error::Precondition(format!("need more than k={k} samples in x, got {n}")));
    }
    if m < k {
        return Err(Error::Precondition(format!("need at least k={k} samples in y, got {m}")));
    }
    let mut within = Vec::with_capacity(n - 1);
    let mut cross = Vec::with_capacity(m);
    let mut pairs = Vec::with_capacity(n);
    let mut min_pos = f64::INFINITY;
    for &i in x_idx {
        within.clear();
        cross.clear();
        within.extend(x_idx.iter().filter(|&&j| j != i).map(|&j| sq(i, j)));
        cross.extend(y_idx.iter().map(|&j| sq(i, j)));
        for &v in within.iter().chain(cross.iter()) {
            if v > 0.0 && v < min_pos {
                min_pos = v;
            }
        }
        let rho = *within.select_nth_unstable_by(k - 1, f64::total_cmp).1;
        let nu = *cross.select_nth_unstable_by(k - 1, f64::total_cmp).1;
        pairs.push((rho, nu));
    }
    // distances are squared here, so the floor is (min_dist · 1e-6)²
    let floor = if min_pos.is_finite() { min_pos * 1e-12 } else { LOG_FLOOR };
    let mut replaced = false;
    let mut fix = |v: f64| {
        if v > 0.0 {
            v
        } else {
            replaced = true;
            floor
        }
    };
    let mut log_sum = 0.0;
    for (rho, nu) in pairs {
        let (rho, nu) = (fix(rho), fix(nu));
        log_sum += 0.5 * (nu / rho).ln();
    }
    let value = dim as f64 / n as f64 * log_sum + (m as f64 / (n as f64 - 1.0)).ln();
    let flags = if replaced { vec![EstimateFlag::DuplicatePoints] } else { Vec::new() };
    Ok(Estimate { value, flags })
}

fn kl_knn_core(x: &SampleMatrix, y: &SampleMatrix, k: usize) -> Result<Estimate> {
    same_dim(x, y, "sample")?;
    let n = x.n();
    let row = |i: usize| if i < n { x.row(i) } else { y.row(i - n) };
    let x_idx: Vec<usize> = (0..n).collect();
    let y_idx: Vec<usize> = (n..n + y.n()).collect();
    let est = kl_knn_indexed(|i, j| sq_dist(row(i), row(j)), &x_idx, &y_idx, x.d(), k)?;
    Ok(est)
}

/// `(d/n) Σ log(ν_k/ρ_k) + log(m/(n-1))`, with `ρ_k` the k-th neighbour
/// distance within `x` (self excluded) and `ν_k` the k-th neighbour distance
/// from `x_i` into `y`.
pub fn kl_knn_estimate(x: &SampleMatrix, y: &SampleMatrix, k: usize) -> Result<Estimate> {
    kl_knn_core(x, y, k)
}

/// `KL(p_s(x,y) ‖ p_t(x,y)) - KL(p_s(x) ‖ p_t(x))`, both by k-NN.
pub fn ckl_chain_estimate(source: &LabeledDomain, target: &LabeledDomain, k: usize) -> Result<Estimate> {
    let js = source.features().hconcat(source.outputs())?;
    let jt = target.features().hconcat(target.outputs())?;
    let joint = kl_knn_core(&js, &jt, k)?;
    let marginal = kl_knn_core(source.features(), target.features(), k)?;
    let mut flags = joint.flags;
    for f in marginal.flags {
        if !flags.contains(&f) {
            flags.push(f);
        }
    }
    Ok(Estimate { value: joint.value - marginal.value, flags })
}
