//! Desk-scale domain adaptation: a small fully connected network trained with
//! CS / conditional-CS alignment terms or the three-step bi-classifier
//! adversarial procedure, on synthetic 2-D shift tasks.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::divergences::{LabeledDomain, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::kernel::SampleMatrix;
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Activation {
    #[default]
    Relu,
    LeakyRelu,
}

const LEAKY_SLOPE: f64 = 0.01;

/// One affine layer, `x·W + b` with `W` of shape `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub bias: DMatrix<f64>,
}

/// A stack of dense layers with the activation between consecutive layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    fn init(widths: &[usize], rng: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| {
                let scale = 1.0 / (w[0] as f64).sqrt();
                Dense {
                    weights: DMatrix::from_fn(w[0], w[1], |_, _| {
                        let z: f64 = StandardNormal.sample(rng);
                        z * scale
                    }),
                    bias: DMatrix::zeros(1, w[1]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    fn set_flat(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&src[at..at + n]);
            at += n;
            let n = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&src[at..at + n]);
            at += n;
        }
        at
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.flat() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// Widths of the feature extractor `f: d_x → h → d_z` and the two
/// classifiers `g₁, g₂: d_z → h → K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub activation: Activation,
}

impl ModelShape {
    pub fn feature_widths(&self) -> [usize; 3] {
        [self.input_dim, self.hidden, self.feature_dim]
    }

    pub fn classifier_widths(&self) -> [usize; 3] {
        [self.feature_dim, self.hidden, self.classes]
    }

    /// Parameter count implied by the widths.
    pub fn param_count(&self) -> usize {
        let count = |w: [usize; 3]| w.windows(2).map(|p| p[0] * p[1] + p[1]).sum::<usize>();
        count(self.feature_widths()) + 2 * count(self.classifier_widths())
    }
}

/// Parameter blocks of [`MlpModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    F,
    G1,
    G2,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::F, Block::G1, Block::G2];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub shape: ModelShape,
    pub f: Mlp,
    pub g1: Mlp,
    pub g2: Mlp,
}

impl MlpModel {
    /// Gaussian init scaled by `1/√fan_in`, zero biases; `g₁` and `g₂` draw
    /// from different streams.
    pub fn new(shape: ModelShape, seed: u64) -> Result<Self> {
        if shape.input_dim == 0 || shape.hidden == 0 || shape.feature_dim == 0 || shape.classes < 2 {
            return Err(Error::Config(format!("invalid model shape {shape:?}")));
        }
        Ok(Self {
            shape,
            f: Mlp::init(&shape.feature_widths(), &mut substream(seed, "init-f", 0)),
            g1: Mlp::init(&shape.classifier_widths(), &mut substream(seed, "init-g", 1)),
            g2: Mlp::init(&shape.classifier_widths(), &mut substream(seed, "init-g", 2)),
        })
    }

    pub fn block(&self, b: Block) -> &Mlp {
        match b {
            Block::F => &self.f,
            Block::G1 => &self.g1,
            Block::G2 => &self.g2,
        }
    }

    fn block_mut(&mut self, b: Block) -> &mut Mlp {
        match b {
            Block::F => &mut self.f,
            Block::G1 => &mut self.g1,
            Block::G2 => &mut self.g2,
        }
    }

    pub fn param_count(&self) -> usize {
        Block::ALL.iter().map(|&b| self.block(b).param_count()).sum()
    }

    /// All parameters, in the order `f`, `g₁`, `g₂`; layer by layer, weights
    /// (column-major) before biases.
    pub fn params_flat(&self) -> Vec<f64> {
        Block::ALL.iter().flat_map(|&b| self.block(b).flat()).collect()
    }

    pub fn set_params_flat(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(Error::Input(format!("expected {} parameters, got {}", self.param_count(), src.len())));
        }
        let mut at = 0;
        for b in Block::ALL {
            at += self.block_mut(b).set_flat(&src[at..]);
        }
        Ok(())
    }

    pub fn block_hash(&self, b: Block) -> u64 {
        self.block(b).hash()
    }

    /// Class probabilities from `g₁ ∘ f`.
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let xv = tape.leaf(x.clone());
        let z = bound.features(&tape, xv);
        let p = bound.classify(&tape, Block::G1, z);
        tape.value(p)
    }

    fn bind(&self, tape: &Tape) -> BoundModel {
        let bind_mlp = |m: &Mlp| {
            m.layers
                .iter()
                .map(|l| (tape.leaf(l.weights.clone()), tape.leaf(l.bias.clone())))
                .collect::<Vec<_>>()
        };
        BoundModel { activation: self.shape.activation, f: bind_mlp(&self.f), g1: bind_mlp(&self.g1), g2: bind_mlp(&self.g2) }
    }
}

struct BoundModel {
    activation: Activation,
    f: Vec<(Var, Var)>,
    g1: Vec<(Var, Var)>,
    g2: Vec<(Var, Var)>,
}

impl BoundModel {
    fn run(&self, tape: &Tape, layers: &[(Var, Var)], x: Var) -> Var {
        let mut h = x;
        for (i, &(w, b)) in layers.iter().enumerate() {
            h = tape.add_row(tape.matmul(h, w), b);
            if i + 1 < layers.len() {
                h = match self.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::LeakyRelu => tape.leaky_relu(h, LEAKY_SLOPE),
                };
            }
        }
        h
    }

    fn features(&self, tape: &Tape, x: Var) -> Var {
        self.run(tape, &self.f, x)
    }

    fn classify(&self, tape: &Tape, which: Block, z: Var) -> Var {
        let layers = match which {
            Block::F => panic!("f is not a classifier"),
            Block::G1 => &self.g1,
            Block::G2 => &self.g2,
        };
        let logits = self.run(tape, layers, z);
        tape.softmax_rows(logits)
    }

    fn block(&self, b: Block) -> &[(Var, Var)] {
        match b {
            Block::F => &self.f,
            Block::G1 => &self.g1,
            Block::G2 => &self.g2,
        }
    }

    /// Flat gradient in the order of [`MlpModel::params_flat`].
    fn flat_grad(&self, tape: &Tape, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for b in Block::ALL {
            for &(w, bias) in self.block(b) {
                for v in [w, bias] {
                    let shape = tape.value(v).shape();
                    out.extend_from_slice(grads.get_or_zeros(v, shape.0, shape.1).as_slice());
                }
            }
        }
        out
    }
}

/// Mean cross-entropy `-(1/M) Σ y·log ŷ`. With `clamp = Some(M)` the log is
/// taken of `max(ŷ, e^{-M})`, so each term is at most `M`.
pub fn cross_entropy_loss(pred: &SampleMatrix, labels: &SampleMatrix, clamp: Option<f64>) -> Result<f64> {
    if pred.n() != labels.n() || pred.d() != labels.d() {
        return Err(Error::Input(format!(
            "prediction shape {}×{} does not match label shape {}×{}",
            pred.n(),
            pred.d(),
            labels.n(),
            labels.d()
        )));
    }
    let floor = clamp.map_or(LOG_FLOOR, |m| (-m).exp());
    let total: f64 = pred
        .as_slice()
        .iter()
        .zip(labels.as_slice())
        .filter(|(_, &y)| y != 0.0)
        .map(|(&p, &y)| -y * p.max(floor).ln())
        .sum();
    Ok(total / pred.n() as f64)
}

/// Mean Shannon entropy of the rows, with `0·log 0 = 0`.
pub fn entropy_loss(pred: &SampleMatrix) -> f64 {
    let total: f64 = pred.as_slice().iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    total / pred.n() as f64
}

fn tape_cross_entropy(t: &Tape, p: Var, y: Var, floor: f64) -> Var {
    let m = t.value(y).nrows() as f64;
    t.scale(t.sum(t.mul(y, t.ln(p, floor))), -1.0 / m)
}

fn tape_entropy(t: &Tape, p: Var) -> Var {
    let n = t.value(p).nrows() as f64;
    t.scale(t.sum(t.mul(p, t.ln(p, LOG_FLOOR))), -1.0 / n)
}

fn tape_gram(t: &Tape, a: Var, b: Var, sigma: f64) -> Var {
    let d = t.pairwise_sq_dist(a, b);
    t.exp(t.scale(d, -1.0 / (2.0 * sigma * sigma)))
}

fn tape_cs(t: &Tape, zs: Var, zt: Var, sigma: f64) -> Var {
    let kss = t.ln(t.mean(tape_gram(t, zs, zs, sigma)), LOG_FLOOR);
    let ktt = t.ln(t.mean(tape_gram(t, zt, zt, sigma)), LOG_FLOOR);
    let kst = t.ln(t.mean(tape_gram(t, zs, zt, sigma)), LOG_FLOOR);
    t.sub(t.add(kss, ktt), t.scale(kst, 2.0))
}

fn tape_ratio_sum(t: &Tape, k: Var, l: Var, a: Var, b: Var) -> Var {
    let num = t.row_sums(t.mul(k, l));
    t.sum(t.div(num, t.mul(a, b)))
}

/// Conditional CS between `(zs, ys)` and `(zt, yt)`, the same four-term
/// expression as [`crate::ccs_estimate`].
fn tape_ccs(t: &Tape, zs: Var, ys: Var, zt: Var, yt: Var, sigma_z: f64, sigma_y: f64) -> Var {
    let ks = tape_gram(t, zs, zs, sigma_z);
    let ls = tape_gram(t, ys, ys, sigma_y);
    let kt = tape_gram(t, zt, zt, sigma_z);
    let lt = tape_gram(t, yt, yt, sigma_y);
    let kst = tape_gram(t, zs, zt, sigma_z);
    let lst = tape_gram(t, ys, yt, sigma_y);
    let kts = t.transpose(kst);
    let lts = t.transpose(lst);
    let ks_rows = t.row_sums(ks);
    let kt_rows = t.row_sums(kt);
    let kst_rows = t.row_sums(kst);
    let kts_rows = t.row_sums(kts);
    let quad_s = tape_ratio_sum(t, ks, ls, ks_rows, ks_rows);
    let quad_t = tape_ratio_sum(t, kt, lt, kt_rows, kt_rows);
    let cross_st = tape_ratio_sum(t, kst, lst, ks_rows, kst_rows);
    let cross_ts = tape_ratio_sum(t, kts, lts, kts_rows, kt_rows);
    let pos = t.add(t.ln(quad_s, LOG_FLOOR), t.ln(quad_t, LOG_FLOOR));
    let neg = t.add(t.ln(cross_st, LOG_FLOOR), t.ln(cross_ts, LOG_FLOOR));
    t.sub(pos, neg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrainMode {
    SourceOnly,
    CsOnly,
    CcsOnly,
    CsPlusCcs,
    Adversarial,
}

impl TrainMode {
    pub const ALL: [TrainMode; 5] =
        [TrainMode::SourceOnly, TrainMode::CsOnly, TrainMode::CcsOnly, TrainMode::CsPlusCcs, TrainMode::Adversarial];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::SourceOnly => "SOURCE_ONLY",
            TrainMode::CsOnly => "CS_ONLY",
            TrainMode::CcsOnly => "CCS_ONLY",
            TrainMode::CsPlusCcs => "CS_PLUS_CCS",
            TrainMode::Adversarial => "ADVERSARIAL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }

    fn uses_cs(self) -> bool {
        matches!(self, TrainMode::CsOnly | TrainMode::CsPlusCcs | TrainMode::Adversarial)
    }

    fn uses_ccs(self) -> bool {
        matches!(self, TrainMode::CcsOnly | TrainMode::CsPlusCcs | TrainMode::Adversarial)
    }
}

/// Source-side outputs fed to the conditional CS term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SourceOutputs {
    Predictions,
    #[default]
    Labels,
}

/// Trainer hyperparameters. Field names are the JSON keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub sigma_z: f64,
    pub sigma_y: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub hidden: usize,
    pub feature_dim: usize,
    pub activation: Activation,
    /// Divergence terms see unit-norm features.
    pub normalize_features: bool,
    pub source_outputs: SourceOutputs,
    /// Clamp `M` for the cross-entropy log.
    pub ce_clamp: Option<f64>,
    /// Replace the weighted alignment terms by `M·√(CS + CCS)`.
    pub root_bound: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            beta: 1.0,
            gamma: 0.1,
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 64,
            sigma_z: 1.0,
            sigma_y: 1.0,
            seed: 0,
            mode: TrainMode::CsPlusCcs,
            hidden: 32,
            feature_dim: 8,
            activation: Activation::Relu,
            normalize_features: true,
            source_outputs: SourceOutputs::Labels,
            ce_clamp: None,
            root_bound: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [("lambda", self.lambda), ("beta", self.beta), ("gamma", self.gamma)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a nonnegative real, got {v}")));
            }
        }
        let pos = [("learning_rate", self.learning_rate), ("sigma_z", self.sigma_z), ("sigma_y", self.sigma_y)];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.hidden == 0 || self.feature_dim == 0 {
            return Err(Error::Config("hidden and feature_dim must be positive".into()));
        }
        if let Some(m) = self.ce_clamp {
            if !(m > 0.0) {
                return Err(Error::Config(format!("ce_clamp must be positive, got {m}")));
            }
        }
        if let Some(m) = self.root_bound {
            if !(m > 0.0) {
                return Err(Error::Config(format!("root_bound must be positive, got {m}")));
            }
        }
        Ok(())
    }

    pub fn shape(&self, input_dim: usize, classes: usize) -> ModelShape {
        ModelShape { input_dim, hidden: self.hidden, feature_dim: self.feature_dim, classes, activation: self.activation }
    }

    fn ce_floor(&self) -> f64 {
        self.ce_clamp.map_or(LOG_FLOOR, |m| (-m).exp())
    }
}

/// Target labels, readable only by [`evaluate`].
#[derive(Clone)]
pub struct SealedLabels(Vec<usize>);

impl std::fmt::Debug for SealedLabels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SealedLabels({} entries)", self.0.len())
    }
}

impl SealedLabels {
    pub fn seal(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Labeled source, unlabeled target, and sealed target labels for evaluation.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    source: LabeledDomain,
    target: SampleMatrix,
    target_labels: SealedLabels,
    classes: usize,
}

impl DomainDataset {
    pub fn new(source: LabeledDomain, target: SampleMatrix, target_labels: SealedLabels) -> Result<Self> {
        if source.features().d() != target.d() {
            return Err(Error::Input(format!("source dim {} vs target dim {}", source.features().d(), target.d())));
        }
        if target_labels.len() != target.n() {
            return Err(Error::Input(format!("{} target labels for {} target rows", target_labels.len(), target.n())));
        }
        if source.hard_labels().is_none() {
            return Err(Error::Input("source outputs must be one-hot labels".into()));
        }
        let classes = source.outputs().d();
        if let Some(&bad) = target_labels.0.iter().find(|&&c| c >= classes) {
            return Err(Error::Input(format!("target label {bad} out of range for {classes} classes")));
        }
        Ok(Self { source, target, target_labels, classes })
    }

    pub fn source(&self) -> &LabeledDomain {
        &self.source
    }

    pub fn target(&self) -> &SampleMatrix {
        &self.target
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.target.d()
    }

    /// A copy with different sealed labels, for contamination checks.
    pub fn with_target_labels(&self, labels: SealedLabels) -> Result<Self> {
        Self::new(self.source.clone(), self.target.clone(), labels)
    }

    fn batch(&self, s_idx: &[usize], t_idx: &[usize]) -> Batch {
        let s = self.source.select(s_idx);
        Batch {
            xs: s.features().to_dmatrix(),
            ys: s.outputs().to_dmatrix(),
            xt: self.target.select(t_idx).to_dmatrix(),
        }
    }
}

/// One minibatch. There is deliberately no target label field.
#[derive(Debug, Clone)]
pub struct Batch {
    pub xs: DMatrix<f64>,
    pub ys: DMatrix<f64>,
    pub xt: DMatrix<f64>,
}

/// Differentiable quantities exposed for gradient checking and training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Source cross-entropy of `g₁`.
    CrossEntropy,
    /// Target prediction entropy of `g₁`.
    Entropy,
    /// CS divergence between source and target features.
    Cs,
    /// Conditional CS between source and target `(z, ŷ₁)`.
    Ccs,
    /// The minimized loss of a distance-metric step in the given mode.
    Metric(TrainMode),
    /// Step 1 of the adversarial round.
    AdversarialJoint,
    /// Step 2: classifier loss minus target discrepancy.
    AdversarialClassifiers,
    /// Step 3: target discrepancy between the two classifiers.
    AdversarialFeatures,
}

/// Named loss components from one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub entropy: f64,
    pub cs: f64,
    pub ccs: f64,
    pub discrepancy: f64,
}

struct Built {
    total: Var,
    parts: Vec<(&'static str, Var)>,
}

fn build_objective(t: &Tape, m: &BoundModel, batch: &Batch, cfg: &TrainConfig, obj: Objective) -> Built {
    let xs = t.leaf(batch.xs.clone());
    let ys = t.leaf(batch.ys.clone());
    let xt = t.leaf(batch.xt.clone());
    let zs = m.features(t, xs);
    let zt = m.features(t, xt);
    let (ds, dt) = if cfg.normalize_features { (t.l2_normalize_rows(zs), t.l2_normalize_rows(zt)) } else { (zs, zt) };
    let floor = cfg.ce_floor();
    let src_out = |p: Var| match cfg.source_outputs {
        SourceOutputs::Predictions => p,
        SourceOutputs::Labels => ys,
    };
    let ccs_for = |g: Block| {
        let ps = m.classify(t, g, zs);
        let pt = m.classify(t, g, zt);
        tape_ccs(t, ds, src_out(ps), dt, pt, cfg.sigma_z, cfg.sigma_y)
    };
    // Discrepancy between the two classifiers on target features.
    let discrepancy = || {
        let p1 = m.classify(t, Block::G1, zt);
        let p2 = m.classify(t, Block::G2, zt);
        tape_ccs(t, dt, p1, dt, p2, cfg.sigma_z, cfg.sigma_y)
    };
    // ½ Σₙ (CE_n + γ·Ent_n)
    let cls_loss = |parts: &mut Vec<(&'static str, Var)>| {
        let mut ce_sum = None;
        let mut ent_sum = None;
        for g in [Block::G1, Block::G2] {
            let ce = tape_cross_entropy(t, m.classify(t, g, zs), ys, floor);
            let ent = tape_entropy(t, m.classify(t, g, zt));
            ce_sum = Some(ce_sum.map_or(ce, |a| t.add(a, ce)));
            ent_sum = Some(ent_sum.map_or(ent, |a| t.add(a, ent)));
        }
        let ce = t.scale(ce_sum.unwrap(), 0.5);
        let ent = t.scale(ent_sum.unwrap(), 0.5);
        parts.push(("ce", ce));
        parts.push(("entropy", ent));
        t.add(ce, t.scale(ent, cfg.gamma))
    };

    let mut parts = Vec::new();
    let total = match obj {
        Objective::CrossEntropy => tape_cross_entropy(t, m.classify(t, Block::G1, zs), ys, floor),
        Objective::Entropy => tape_entropy(t, m.classify(t, Block::G1, zt)),
        Objective::Cs => tape_cs(t, ds, dt, cfg.sigma_z),
        Objective::Ccs => ccs_for(Block::G1),
        Objective::Metric(mode) => {
            let ce = tape_cross_entropy(t, m.classify(t, Block::G1, zs), ys, floor);
            parts.push(("ce", ce));
            let cs = mode.uses_cs().then(|| tape_cs(t, ds, dt, cfg.sigma_z));
            let ccs = mode.uses_ccs().then(|| ccs_for(Block::G1));
            if let Some(v) = cs {
                parts.push(("cs", v));
            }
            if let Some(v) = ccs {
                parts.push(("ccs", v));
            }
            match cfg.root_bound {
                Some(mb) if cs.is_some() || ccs.is_some() => {
                    let sum = match (cs, ccs) {
                        (Some(a), Some(b)) => t.add(a, b),
                        (Some(a), None) | (None, Some(a)) => a,
                        (None, None) => unreachable!(),
                    };
                    t.add(ce, t.scale(t.sqrt(sum), mb))
                }
                _ => {
                    let mut total = ce;
                    if let Some(v) = cs {
                        total = t.add(total, t.scale(v, cfg.lambda));
                    }
                    if let Some(v) = ccs {
                        total = t.add(total, t.scale(v, cfg.beta));
                    }
                    total
                }
            }
        }
        Objective::AdversarialJoint => {
            let cls = cls_loss(&mut parts);
            let cs = tape_cs(t, ds, dt, cfg.sigma_z);
            let ccs = t.add(ccs_for(Block::G1), ccs_for(Block::G2));
            parts.push(("cs", cs));
            parts.push(("ccs", ccs));
            t.add(t.add(cls, t.scale(cs, cfg.lambda)), t.scale(ccs, cfg.beta))
        }
        Objective::AdversarialClassifiers => {
            let cls = cls_loss(&mut parts);
            let d = discrepancy();
            parts.push(("discrepancy", d));
            t.sub(cls, d)
        }
        Objective::AdversarialFeatures => {
            let d = discrepancy();
            parts.push(("discrepancy", d));
            d
        }
    };
    Built { total, parts }
}

fn breakdown(t: &Tape, built: &Built) -> LossBreakdown {
    let mut out = LossBreakdown { total: t.scalar(built.total), ..Default::default() };
    for &(name, v) in &built.parts {
        let x = t.scalar(v);
        match name {
            "ce" => out.ce = x,
            "entropy" => out.entropy = x,
            "cs" => out.cs = x,
            "ccs" => out.ccs = x,
            "discrepancy" => out.discrepancy = x,
            _ => {}
        }
    }
    out
}

/// Value of an objective at the current parameters.
pub fn objective_value(model: &MlpModel, batch: &Batch, cfg: &TrainConfig, obj: Objective) -> f64 {
    let t = Tape::new();
    let m = model.bind(&t);
    let built = build_objective(&t, &m, batch, cfg, obj);
    t.scalar(built.total)
}

/// Value and exact gradient (ordered as [`MlpModel::params_flat`]).
pub fn objective_value_and_grad(model: &MlpModel, batch: &Batch, cfg: &TrainConfig, obj: Objective) -> (f64, Vec<f64>) {
    let (b, g) = eval_with_grad(model, batch, cfg, obj);
    (b.total, g)
}

fn eval_with_grad(model: &MlpModel, batch: &Batch, cfg: &TrainConfig, obj: Objective) -> (LossBreakdown, Vec<f64>) {
    let t = Tape::new();
    let m = model.bind(&t);
    let built = build_objective(&t, &m, batch, cfg, obj);
    let grads = t.backward(built.total);
    (breakdown(&t, &built), m.flat_grad(&t, &grads))
}

fn block_ranges(model: &MlpModel) -> [(Block, std::ops::Range<usize>); 3] {
    let nf = model.f.param_count();
    let ng = model.g1.param_count();
    [(Block::F, 0..nf), (Block::G1, nf..nf + ng), (Block::G2, nf + ng..nf + 2 * ng)]
}

/// One SGD step on `obj`, touching only `blocks`.
pub fn sgd_step(model: &mut MlpModel, batch: &Batch, cfg: &TrainConfig, obj: Objective, blocks: &[Block], step: &str) -> Result<LossBreakdown> {
    let (loss, grad) = eval_with_grad(model, batch, cfg, obj);
    if !loss.total.is_finite() {
        return Err(Error::NonFiniteLoss { step: step.into(), detail: format!("{loss:?}") });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { step: step.into(), detail: format!("non-finite gradient at parameter {i}") });
    }
    for (block, range) in block_ranges(model) {
        if !blocks.contains(&block) {
            continue;
        }
        let mut p = model.block(block).flat();
        for (v, g) in p.iter_mut().zip(&grad[range]) {
            *v -= cfg.learning_rate * g;
        }
        model.block_mut(block).set_flat(&p);
    }
    Ok(loss)
}

/// One gradient step of `CE + λ·CS + β·CCS` (terms selected by `cfg.mode`).
pub fn metric_train_step(model: &mut MlpModel, batch: &Batch, cfg: &TrainConfig) -> Result<LossBreakdown> {
    if cfg.mode == TrainMode::Adversarial {
        return Err(Error::Config("metric_train_step does not run ADVERSARIAL mode".into()));
    }
    sgd_step(model, batch, cfg, Objective::Metric(cfg.mode), &Block::ALL, "metric")
}

/// Losses of the three steps of one adversarial round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RoundLosses {
    pub joint: LossBreakdown,
    pub classifiers: LossBreakdown,
    pub features: LossBreakdown,
}

/// Joint update of all parameters, then classifiers only (maximizing their
/// target discrepancy), then the feature extractor only (minimizing it).
pub fn adversarial_round(model: &mut MlpModel, batch: &Batch, cfg: &TrainConfig) -> Result<RoundLosses> {
    if cfg.mode != TrainMode::Adversarial {
        return Err(Error::Config(format!("adversarial_round needs ADVERSARIAL mode, got {}", cfg.mode.name())));
    }
    let joint = sgd_step(model, batch, cfg, Objective::AdversarialJoint, &Block::ALL, "step1")?;
    let classifiers = sgd_step(model, batch, cfg, Objective::AdversarialClassifiers, &[Block::G1, Block::G2], "step2")?;
    let features = sgd_step(model, batch, cfg, Objective::AdversarialFeatures, &[Block::F], "step3")?;
    Ok(RoundLosses { joint, classifiers, features })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub source_accuracy: f64,
    pub target_accuracy: f64,
    pub target_entropy: f64,
}

fn argmax_rows(p: &DMatrix<f64>) -> Vec<usize> {
    (0..p.nrows())
        .map(|i| {
            let row = p.row(i);
            (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// Accuracies of `g₁ ∘ f` and the mean entropy of its target predictions.
/// The only reader of the sealed target labels.
pub fn evaluate(model: &MlpModel, dataset: &DomainDataset) -> Evaluation {
    let ps = model.predict(&dataset.source.features().to_dmatrix());
    let pt = model.predict(&dataset.target.to_dmatrix());
    let source_truth = dataset.source.hard_labels().expect("validated one-hot");
    let pt_sample = SampleMatrix::from_dmatrix(&pt).expect("finite predictions");
    Evaluation {
        source_accuracy: accuracy(&argmax_rows(&ps), &source_truth),
        target_accuracy: accuracy(&argmax_rows(&pt), &dataset.target_labels.0),
        target_entropy: entropy_loss(&pt_sample),
    }
}

/// One row of a training curve, recorded at the end of each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub ce: f64,
    pub entropy: f64,
    pub cs: f64,
    pub ccs: f64,
    pub discrepancy: f64,
    pub source_accuracy: f64,
    pub target_accuracy: f64,
    pub target_entropy: f64,
}

pub const CURVE_HEADER: &str =
    "epoch,step,loss,ce,entropy,cs,ccs,discrepancy,source_accuracy,target_accuracy,target_entropy";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub model: MlpModel,
    pub curve: Vec<CurveRow>,
    pub final_eval: Evaluation,
}

impl TrainResult {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from(CURVE_HEADER);
        out.push('\n');
        for r in &self.curve {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.step,
                r.loss,
                r.ce,
                r.entropy,
                r.cs,
                r.ccs,
                r.discrepancy,
                r.source_accuracy,
                r.target_accuracy,
                r.target_entropy
            ));
        }
        out
    }
}

/// Trains a fresh model for `cfg.epochs` passes over the source domain.
/// Each step draws a source batch and a target batch of `cfg.batch_size`
/// rows from per-epoch shuffles.
pub fn train(dataset: &DomainDataset, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    let mut model = MlpModel::new(cfg.shape(dataset.input_dim(), dataset.classes()), cfg.seed)?;
    let ns = dataset.source.n();
    let nt = dataset.target.n();
    let bs = cfg.batch_size.min(ns).min(nt);
    let steps_per_epoch = ns.div_ceil(bs);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut s_order: Vec<usize> = (0..ns).collect();
        let mut t_order: Vec<usize> = (0..nt).collect();
        s_order.shuffle(&mut substream(cfg.seed, "batch-source", epoch as u64));
        t_order.shuffle(&mut substream(cfg.seed, "batch-target", epoch as u64));
        let mut acc = LossBreakdown::default();
        for b in 0..steps_per_epoch {
            let pick = |order: &[usize]| (0..bs).map(|i| order[(b * bs + i) % order.len()]).collect::<Vec<_>>();
            let batch = dataset.batch(&pick(&s_order), &pick(&t_order));
            let loss = if cfg.mode == TrainMode::Adversarial {
                let r = adversarial_round(&mut model, &batch, cfg)?;
                LossBreakdown { discrepancy: r.features.discrepancy, ..r.joint }
            } else {
                metric_train_step(&mut model, &batch, cfg)?
            };
            acc.total += loss.total;
            acc.ce += loss.ce;
            acc.entropy += loss.entropy;
            acc.cs += loss.cs;
            acc.ccs += loss.ccs;
            acc.discrepancy += loss.discrepancy;
            step += 1;
        }
        let k = steps_per_epoch as f64;
        let ev = evaluate(&model, dataset);
        curve.push(CurveRow {
            epoch: epoch + 1,
            step,
            loss: acc.total / k,
            ce: acc.ce / k,
            entropy: acc.entropy / k,
            cs: acc.cs / k,
            ccs: acc.ccs / k,
            discrepancy: acc.discrepancy / k,
            source_accuracy: ev.source_accuracy,
            target_accuracy: ev.target_accuracy,
            target_entropy: ev.target_entropy,
        });
    }
    let final_eval = evaluate(&model, dataset);
    Ok(TrainResult { model, curve, final_eval })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SynthKind {
    MeanShiftBlobs,
    RotatedMoons,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::MeanShiftBlobs => "MEAN_SHIFT_BLOBS",
            SynthKind::RotatedMoons => "ROTATED_MOONS",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [SynthKind::MeanShiftBlobs, SynthKind::RotatedMoons].into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }

    pub fn classes(self) -> usize {
        match self {
            SynthKind::MeanShiftBlobs => 3,
            SynthKind::RotatedMoons => 2,
        }
    }

    /// The shift used by the benchmark tasks.
    pub fn default_shift(self) -> Shift {
        match self {
            SynthKind::MeanShiftBlobs => Shift::translation(BLOB_SHIFT[0], BLOB_SHIFT[1]),
            SynthKind::RotatedMoons => Shift::rotation(30.0),
        }
    }
}

/// Rotation (degrees, counter-clockwise about the task centre) followed by a
/// translation, applied to the target domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub rotation_deg: f64,
    pub translation: [f64; 2],
}

impl Shift {
    pub fn none() -> Self {
        Self { rotation_deg: 0.0, translation: [0.0, 0.0] }
    }

    pub fn rotation(deg: f64) -> Self {
        Self { rotation_deg: deg, translation: [0.0, 0.0] }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self { rotation_deg: 0.0, translation: [dx, dy] }
    }

    fn apply(&self, p: [f64; 2], centre: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (x, y) = (p[0] - centre[0], p[1] - centre[1]);
        [c * x - s * y + centre[0] + self.translation[0], s * x + c * y + centre[1] + self.translation[1]]
    }
}

const MOON_NOISE: f64 = 0.1;
const MOON_CENTRE: [f64; 2] = [0.5, 0.25];
const BLOB_MEANS: [[f64; 2]; 3] = [[0.0, 0.0], [3.0, 0.0], [1.5, 2.6]];
const BLOB_STD: f64 = 0.6;
const BLOB_SHIFT: [f64; 2] = [0.0, 2.5];

fn synth_points(kind: SynthKind, n: usize, rng: &mut impl Rng) -> (Vec<[f64; 2]>, Vec<usize>) {
    let k = kind.classes();
    let mut pts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        let p = match kind {
            SynthKind::RotatedMoons => {
                let t: f64 = PI * rng.gen::<f64>();
                let base = if c == 0 { [t.cos(), t.sin()] } else { [1.0 - t.cos(), 0.5 - t.sin()] };
                let (nx, ny): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
                [base[0] + MOON_NOISE * nx, base[1] + MOON_NOISE * ny]
            }
            SynthKind::MeanShiftBlobs => {
                let m = BLOB_MEANS[c];
                let (nx, ny): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
                [m[0] + BLOB_STD * nx, m[1] + BLOB_STD * ny]
            }
        };
        pts.push(p);
        labels.push(c);
    }
    (pts, labels)
}

fn centre(kind: SynthKind) -> [f64; 2] {
    match kind {
        SynthKind::RotatedMoons => MOON_CENTRE,
        SynthKind::MeanShiftBlobs => [1.5, 0.87],
    }
}

/// Source and shifted target drawn from the same class-conditional
/// generator; target labels are sealed.
pub fn synth_domain_pair(kind: SynthKind, n_source: usize, n_target: usize, shift: Shift, seed: u64) -> Result<DomainDataset> {
    let k = kind.classes();
    if n_source < 10 * k || n_target < 10 * k {
        return Err(Error::Config(format!("{} needs at least {} points per domain", kind.name(), 10 * k)));
    }
    let (sp, sl) = synth_points(kind, n_source, &mut substream(seed, "synth-source", 0));
    let (tp, tl) = synth_points(kind, n_target, &mut substream(seed, "synth-target", 0));
    let c = centre(kind);
    let tp: Vec<Vec<f64>> = tp.into_iter().map(|p| shift.apply(p, c).to_vec()).collect();
    let sp: Vec<Vec<f64>> = sp.into_iter().map(|p| p.to_vec()).collect();
    let source = LabeledDomain::from_labels(SampleMatrix::from_rows(&sp)?, &sl, k)?;
    DomainDataset::new(source, SampleMatrix::from_rows(&tp)?, SealedLabels::seal(tl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergences::{ccs_estimate, cs_estimate};
    use crate::kernel::{normalize_rows, KernelSpec};

    fn small_cfg(mode: TrainMode) -> TrainConfig {
        TrainConfig { mode, epochs: 3, batch_size: 16, hidden: 8, feature_dim: 4, ..TrainConfig::default() }
    }

    fn fixed_batch(kind: SynthKind, seed: u64, n: usize) -> (DomainDataset, Batch) {
        let ds = synth_domain_pair(kind, n, n, kind.default_shift(), seed).unwrap();
        let idx: Vec<usize> = (0..n).collect();
        let b = ds.batch(&idx, &idx);
        (ds, b)
    }

    #[test]
    fn cross_entropy_examples() {
        let y = SampleMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let one_hot = SampleMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(cross_entropy_loss(&one_hot, &y, None).unwrap(), 0.0);
        let uniform = SampleMatrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert!((cross_entropy_loss(&uniform, &y, None).unwrap() - 2f64.ln()).abs() < 1e-15);
        let bad = SampleMatrix::from_rows(&[vec![0.02, 0.98]]).unwrap();
        let v = cross_entropy_loss(&bad, &y, Some(4.0)).unwrap();
        assert!((v - 3.912).abs() < 5e-4 && v <= 4.0);
        let worse = SampleMatrix::from_rows(&[vec![1e-6, 1.0 - 1e-6]]).unwrap();
        assert_eq!(cross_entropy_loss(&worse, &y, Some(4.0)).unwrap(), 4.0);
        let three = SampleMatrix::from_rows(&[vec![0.2, 0.3, 0.5]]).unwrap();
        assert!(matches!(cross_entropy_loss(&three, &y, None), Err(Error::Input(_))));
    }

    #[test]
    fn entropy_examples() {
        let one_hot = SampleMatrix::from_rows(&[vec![0.0, 1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(entropy_loss(&one_hot), 0.0);
        let uniform = SampleMatrix::from_rows(&[vec![0.25; 4]]).unwrap();
        assert!((entropy_loss(&uniform) - 4f64.ln()).abs() < 1e-15);
        let mix = SampleMatrix::from_rows(&[vec![0.0, 1.0, 0.0, 0.0], vec![0.25; 4]]).unwrap();
        assert!((entropy_loss(&mix) - 0.5 * 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn parameter_count_matches_shape() {
        let cfg = TrainConfig::default();
        let shape = cfg.shape(2, 3);
        let m = MlpModel::new(shape, 1).unwrap();
        assert_eq!(m.param_count(), shape.param_count());
        assert_eq!(m.params_flat().len(), shape.param_count());
        assert_eq!(shape.param_count(), (2 * 32 + 32 + 32 * 8 + 8) + 2 * (8 * 32 + 32 + 32 * 3 + 3));
        assert_ne!(m.block_hash(Block::G1), m.block_hash(Block::G2));
    }

    #[test]
    fn softmax_outputs_are_simplex_rows() {
        let (ds, _) = fixed_batch(SynthKind::RotatedMoons, 3, 40);
        let m = MlpModel::new(TrainConfig::default().shape(2, 2), 5).unwrap();
        let p = m.predict(&ds.target().to_dmatrix());
        for i in 0..p.nrows() {
            assert!((p.row(i).sum() - 1.0).abs() < 1e-9);
            assert!(p.row(i).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn tape_divergences_match_estimators() {
        let (ds, batch) = fixed_batch(SynthKind::MeanShiftBlobs, 4, 30);
        let cfg =
            TrainConfig { hidden: 8, feature_dim: 4, source_outputs: SourceOutputs::Predictions, ..TrainConfig::default() };
        let m = MlpModel::new(cfg.shape(2, 3), 9).unwrap();
        let t = Tape::new();
        let bound = m.bind(&t);
        let zs = bound.features(&t, t.leaf(batch.xs.clone()));
        let zt = bound.features(&t, t.leaf(batch.xt.clone()));
        let ps = t.value(bound.classify(&t, Block::G1, zs));
        let pt = t.value(bound.classify(&t, Block::G1, zt));
        let zs = normalize_rows(&SampleMatrix::from_dmatrix(&t.value(zs)).unwrap()).unwrap();
        let zt = normalize_rows(&SampleMatrix::from_dmatrix(&t.value(zt)).unwrap()).unwrap();
        let spec = KernelSpec::new(1.0).unwrap();
        let cs = cs_estimate(&zs, &zt, spec).unwrap().value;
        let s = LabeledDomain::new(zs, SampleMatrix::from_dmatrix(&ps).unwrap()).unwrap();
        let tg = LabeledDomain::new(zt, SampleMatrix::from_dmatrix(&pt).unwrap()).unwrap();
        let ccs = ccs_estimate(&s, &tg, spec, spec).unwrap().value;
        assert!((objective_value(&m, &batch, &cfg, Objective::Cs) - cs).abs() < 1e-10);
        assert!((objective_value(&m, &batch, &cfg, Objective::Ccs) - ccs).abs() < 1e-10);
        assert!(ds.classes() == 3);
    }

    fn finite_difference_check(obj: Objective, cfg: &TrainConfig, kind: SynthKind) {
        let classes = kind.classes();
        for point in 0..3u64 {
            let (_, batch) = fixed_batch(kind, 100 + point, 30);
            let mut m = MlpModel::new(cfg.shape(2, classes), 200 + point).unwrap();
            let (_, grad) = objective_value_and_grad(&m, &batch, cfg, obj);
            let base = m.params_flat();
            let mut rng = substream(point, "fd-coords", 0);
            for _ in 0..20 {
                let i = rng.gen_range(0..base.len());
                let h = 1e-5;
                let mut p = base.clone();
                p[i] += h;
                m.set_params_flat(&p).unwrap();
                let up = objective_value(&m, &batch, cfg, obj);
                p[i] -= 2.0 * h;
                m.set_params_flat(&p).unwrap();
                let down = objective_value(&m, &batch, cfg, obj);
                m.set_params_flat(&base).unwrap();
                let fd = (up - down) / (2.0 * h);
                // Floor keeps rounding noise on near-zero components from dominating.
                let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-4);
                assert!(rel < 1e-4, "{obj:?} point {point} coord {i}: ad {} fd {fd}", grad[i]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = TrainConfig { hidden: 8, feature_dim: 4, activation: Activation::LeakyRelu, ..TrainConfig::default() };
        for obj in [
            Objective::CrossEntropy,
            Objective::Entropy,
            Objective::Cs,
            Objective::Ccs,
            Objective::Metric(TrainMode::CsPlusCcs),
            Objective::AdversarialJoint,
            Objective::AdversarialClassifiers,
            Objective::AdversarialFeatures,
        ] {
            finite_difference_check(obj, &cfg, SynthKind::MeanShiftBlobs);
        }
        let root = TrainConfig { root_bound: Some(2.0), source_outputs: SourceOutputs::Predictions, ..cfg };
        finite_difference_check(Objective::Metric(TrainMode::CsPlusCcs), &root, SynthKind::RotatedMoons);
    }

    #[test]
    fn adversarial_round_freezes_blocks() {
        let (_, batch) = fixed_batch(SynthKind::MeanShiftBlobs, 7, 30);
        let cfg = small_cfg(TrainMode::Adversarial);
        let mut m = MlpModel::new(cfg.shape(2, 3), 1).unwrap();
        sgd_step(&mut m, &batch, &cfg, Objective::AdversarialJoint, &Block::ALL, "step1").unwrap();
        let f_before = m.block_hash(Block::F);
        let g_before = (m.block_hash(Block::G1), m.block_hash(Block::G2));
        sgd_step(&mut m, &batch, &cfg, Objective::AdversarialClassifiers, &[Block::G1, Block::G2], "step2").unwrap();
        assert_eq!(m.block_hash(Block::F), f_before);
        assert_ne!((m.block_hash(Block::G1), m.block_hash(Block::G2)), g_before);
        let g_mid = (m.block_hash(Block::G1), m.block_hash(Block::G2));
        sgd_step(&mut m, &batch, &cfg, Objective::AdversarialFeatures, &[Block::F], "step3").unwrap();
        assert_eq!((m.block_hash(Block::G1), m.block_hash(Block::G2)), g_mid);
        assert_ne!(m.block_hash(Block::F), f_before);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(200))]

        #[test]
        fn frozen_blocks_never_move(data_seed in 0u64..1000, init_seed in 0u64..1000, n in 30usize..50, lr in 1e-3f64..0.5) {
            let (_, batch) = fixed_batch(SynthKind::MeanShiftBlobs, data_seed, n);
            let cfg = TrainConfig { learning_rate: lr, ..small_cfg(TrainMode::Adversarial) };
            let mut m = MlpModel::new(cfg.shape(2, 3), init_seed).unwrap();
            sgd_step(&mut m, &batch, &cfg, Objective::AdversarialJoint, &Block::ALL, "step1").unwrap();
            let f = m.block_hash(Block::F);
            sgd_step(&mut m, &batch, &cfg, Objective::AdversarialClassifiers, &[Block::G1, Block::G2], "step2").unwrap();
            proptest::prop_assert_eq!(m.block_hash(Block::F), f);
            let g = (m.block_hash(Block::G1), m.block_hash(Block::G2));
            sgd_step(&mut m, &batch, &cfg, Objective::AdversarialFeatures, &[Block::F], "step3").unwrap();
            proptest::prop_assert_eq!((m.block_hash(Block::G1), m.block_hash(Block::G2)), g);
        }

        #[test]
        fn training_repeats_exactly(data_seed in 0u64..1000, seed in 0u64..1000, mode_idx in 0usize..5) {
            let ds = synth_domain_pair(SynthKind::RotatedMoons, 24, 24, Shift::rotation(30.0), data_seed).unwrap();
            let cfg = TrainConfig { epochs: 1, seed, ..small_cfg(TrainMode::ALL[mode_idx]) };
            let a = train(&ds, &cfg).unwrap();
            let b = train(&ds, &cfg).unwrap();
            proptest::prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn identical_classifiers_have_zero_discrepancy() {
        let (_, batch) = fixed_batch(SynthKind::RotatedMoons, 8, 30);
        let cfg = small_cfg(TrainMode::Adversarial);
        let mut m = MlpModel::new(cfg.shape(2, 2), 2).unwrap();
        m.g2 = m.g1.clone();
        assert_eq!(objective_value(&m, &batch, &cfg, Objective::AdversarialFeatures), 0.0);
        let r = adversarial_round(&mut m, &batch, &cfg).unwrap();
        assert_eq!(r.classifiers.discrepancy, 0.0);
    }

    #[test]
    fn mode_preconditions() {
        let (_, batch) = fixed_batch(SynthKind::RotatedMoons, 8, 30);
        let mut m = MlpModel::new(small_cfg(TrainMode::CsOnly).shape(2, 2), 2).unwrap();
        assert!(adversarial_round(&mut m, &batch, &small_cfg(TrainMode::CsOnly)).is_err());
        assert!(metric_train_step(&mut m, &batch, &small_cfg(TrainMode::Adversarial)).is_err());
    }

    #[test]
    fn source_only_ignores_target_batch() {
        let (_, batch) = fixed_batch(SynthKind::MeanShiftBlobs, 8, 30);
        let cfg = small_cfg(TrainMode::SourceOnly);
        let m = MlpModel::new(cfg.shape(2, 3), 2).unwrap();
        let mut other = batch.clone();
        other.xt.apply(|v| *v += 10.0);
        let (a, ga) = objective_value_and_grad(&m, &batch, &cfg, Objective::Metric(TrainMode::SourceOnly));
        let (b, gb) = objective_value_and_grad(&m, &other, &cfg, Objective::Metric(TrainMode::SourceOnly));
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        assert_eq!(a, objective_value(&m, &batch, &cfg, Objective::CrossEntropy));
    }

    #[test]
    fn loss_decreases_on_fixed_batch() {
        for mode in TrainMode::ALL {
            let (_, batch) = fixed_batch(SynthKind::MeanShiftBlobs, 11, 40);
            let cfg = TrainConfig { learning_rate: 0.01, ..small_cfg(mode) };
            let m = MlpModel::new(cfg.shape(2, 3), 3).unwrap();
            let objectives: Vec<(Objective, Vec<Block>)> = if mode == TrainMode::Adversarial {
                vec![
                    (Objective::AdversarialJoint, Block::ALL.to_vec()),
                    (Objective::AdversarialClassifiers, vec![Block::G1, Block::G2]),
                    (Objective::AdversarialFeatures, vec![Block::F]),
                ]
            } else {
                vec![(Objective::Metric(mode), Block::ALL.to_vec())]
            };
            for (obj, blocks) in objectives {
                let mut model = m.clone();
                let mut prev = objective_value(&model, &batch, &cfg, obj);
                let mut decreases = 0;
                for _ in 0..10 {
                    sgd_step(&mut model, &batch, &cfg, obj, &blocks, "probe").unwrap();
                    let now = objective_value(&model, &batch, &cfg, obj);
                    if now <= prev {
                        decreases += 1;
                    }
                    prev = now;
                }
                assert!(decreases >= 8, "{mode:?} {obj:?}: {decreases}/10");
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_label_blind() {
        let ds = synth_domain_pair(SynthKind::RotatedMoons, 60, 60, Shift::rotation(30.0), 5).unwrap();
        let flipped: Vec<usize> = ds.target_labels.0.iter().map(|&c| 1 - c).collect();
        let ds_flipped = ds.with_target_labels(SealedLabels::seal(flipped)).unwrap();
        for mode in TrainMode::ALL {
            let cfg = small_cfg(mode);
            let a = train(&ds, &cfg).unwrap();
            let b = train(&ds, &cfg).unwrap();
            assert_eq!(a, b);
            let c = train(&ds_flipped, &cfg).unwrap();
            assert_eq!(a.model.params_flat(), c.model.params_flat());
            for (x, y) in a.curve.iter().zip(&c.curve) {
                assert_eq!(x.loss, y.loss);
                assert!((x.target_accuracy + y.target_accuracy - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn synthetic_tasks() {
        let a = synth_domain_pair(SynthKind::RotatedMoons, 40, 40, Shift::rotation(30.0), 1).unwrap();
        let b = synth_domain_pair(SynthKind::RotatedMoons, 40, 40, Shift::rotation(30.0), 1).unwrap();
        assert_eq!(a.target().as_slice(), b.target().as_slice());
        assert_eq!(a.source().features().as_slice(), b.source().features().as_slice());
        // zero shift: the two domains come from one generator
        let z = synth_domain_pair(SynthKind::MeanShiftBlobs, 3000, 3000, Shift::none(), 2).unwrap();
        let mean = |m: &SampleMatrix, j: usize| m.rows().map(|r| r[j]).sum::<f64>() / m.n() as f64;
        for j in 0..2 {
            assert!((mean(z.source().features(), j) - mean(z.target(), j)).abs() < 0.1);
        }
        assert!(synth_domain_pair(SynthKind::MeanShiftBlobs, 20, 40, Shift::none(), 0).is_err());
        let cfg = TrainConfig::default();
        let untrained = MlpModel::new(cfg.shape(2, 2), 6).unwrap();
        let big = synth_domain_pair(SynthKind::RotatedMoons, 400, 400, Shift::none(), 3).unwrap();
        let ev = evaluate(&untrained, &big);
        assert!((0.0..=1.0).contains(&ev.target_accuracy));
        assert!(ev.target_entropy >= 0.0 && ev.target_entropy <= 2f64.ln() + 1e-12);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = TrainConfig { mode: TrainMode::Adversarial, lambda: 0.5, ..TrainConfig::default() };
        let s = serde_json::to_string(&cfg).unwrap();
        assert!(s.contains("\"mode\":\"ADVERSARIAL\""));
        let back: TrainConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        let partial: TrainConfig = serde_json::from_str(r#"{"mode":"CS_ONLY","epochs":5}"#).unwrap();
        assert_eq!(partial.epochs, 5);
        assert_eq!(partial.gamma, 0.1);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lamda":1}"#).is_err());
        assert!(TrainConfig { sigma_z: 0.0, ..cfg }.validate().is_err());
    }
}
