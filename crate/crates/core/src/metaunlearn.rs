//! Learned unlearning loss.
//!
//! `h_φ` maps the classifier's per-sample outputs (logits, penultimate
//! features, an identity embedding and the ground-truth targets) to a
//! non-negative scalar. Unlearning is one gradient step on its mean over the
//! support set, `θ_u = θ − η ∇_θ h_φ(f_θ(S))`.
//!
//! Meta-training differentiates the auxiliary alignment objective `A(θ_u)`
//! through that step. With `v = ∇_{θ_u} A`,
//!
//! ```text
//! ∇_φ A = −η (∂²M/∂φ∂θ)ᵀ v = −η · d/dε ∇_φ M(θ + ε v, φ) |_{ε=0}
//! ```
//!
//! so the outer gradient is exactly the tangent part of the reverse-mode
//! `∇_φ M` evaluated on dual numbers seeded with `v` on the classifier
//! parameters (forward-over-reverse). No first-order approximation is made.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classifier::{self, ClassifierState};
use crate::data::{self, Batch, Dataset, IdentitySampler, UnlearningRequest};
use crate::error::{Error, Result};
use crate::evaluation;
use crate::nn::{self, Matrix};
use crate::scalar::{Dual, Scalar};

/// Which per-sample signals are concatenated into the meta-loss input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputToggles {
    pub logits: bool,
    pub features: bool,
    pub identity: bool,
    pub targets: bool,
}

impl Default for InputToggles {
    fn default() -> Self {
        Self { logits: true, features: true, identity: true, targets: true }
    }
}

impl InputToggles {
    pub const LOGITS: Self = Self { logits: true, features: false, identity: false, targets: false };
    pub const LOGITS_FEATURES: Self = Self { logits: true, features: true, identity: false, targets: false };
    pub const LOGITS_FEATURES_IDS: Self = Self { logits: true, features: true, identity: true, targets: false };
    pub const ALL: Self = Self { logits: true, features: true, identity: true, targets: true };

    pub fn any(&self) -> bool {
        self.logits || self.features || self.identity || self.targets
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (on, name) in
            [(self.logits, "logits"), (self.features, "features"), (self.identity, "ids"), (self.targets, "targets")]
        {
            if on {
                parts.push(name);
            }
        }
        parts.join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaLossArch {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub toggles: InputToggles,
    /// Identities owning an embedding row, sorted; row `i` belongs to `identity_rows[i]`.
    pub identity_rows: Vec<u32>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    emb: usize,
    w0: usize,
    b0: usize,
    g1: usize,
    be1: usize,
    w2: usize,
    b2: usize,
    g2: usize,
    be2: usize,
    w6: usize,
    b6: usize,
    total: usize,
}

impl MetaLossArch {
    pub fn input_dim(&self) -> usize {
        let t = self.toggles;
        self.num_classes * usize::from(t.logits)
            + self.feature_dim * usize::from(t.features)
            + self.embed_dim * usize::from(t.identity)
            + self.num_classes * usize::from(t.targets)
    }

    fn embedding_rows(&self) -> usize {
        if self.toggles.identity {
            self.identity_rows.len()
        } else {
            0
        }
    }

    fn layout(&self) -> Layout {
        let (h, d) = (self.hidden, self.input_dim());
        let emb = 0;
        let w0 = emb + self.embedding_rows() * self.embed_dim;
        let b0 = w0 + h * d;
        let g1 = b0 + h;
        let be1 = g1 + h;
        let w2 = be1 + h;
        let b2 = w2 + h * h;
        let g2 = b2 + h;
        let be2 = g2 + h;
        let w6 = be2 + h;
        let b6 = w6 + h;
        Layout { emb, w0, b0, g1, be1, w2, b2, g2, be2, w6, b6, total: b6 + 1 }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    fn row_of(&self, identity: u32) -> Result<usize> {
        self.identity_rows.binary_search(&identity).map_err(|_| Error::UnknownIdentity(identity))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaLossState {
    pub arch: MetaLossArch,
    /// Embedding table followed by the network weights.
    pub params: Vec<f64>,
    /// Inner (unlearning) step size.
    pub eta: f64,
    /// Outer learning rate the state was trained with.
    pub outer_lr: f64,
    pub seed: u64,
    pub epochs_trained: usize,
}

impl MetaLossState {
    /// PyTorch-style initialization: N(0, 1) embeddings, U(±1/√fan_in) linear
    /// layers, unit LayerNorm gains.
    pub fn init(arch: MetaLossArch, eta: f64, outer_lr: f64, seed: u64) -> Result<Self> {
        if !arch.toggles.any() {
            return Err(Error::Config("meta-loss needs at least one enabled input".into()));
        }
        if arch.hidden == 0 || (arch.toggles.identity && arch.embed_dim == 0) {
            return Err(Error::Config("meta-loss widths must be positive".into()));
        }
        let p = arch.dropout;
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout {p} must lie in [0, 1)")));
        }
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::Config("eta must be finite and non-negative".into()));
        }
        let mut ids = arch.identity_rows.clone();
        ids.sort_unstable();
        ids.dedup();
        if ids != arch.identity_rows {
            return Err(Error::Config("identity rows must be sorted and unique".into()));
        }
        let l = arch.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; l.total];
        for v in &mut params[l.emb..l.w0] {
            *v = StandardNormal.sample(&mut rng);
        }
        let mut uniform = |range: std::ops::Range<usize>, fan_in: usize, params: &mut [f64]| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut params[range] {
                *v = rng.random_range(-bound..bound);
            }
        };
        let (h, d) = (arch.hidden, arch.input_dim());
        uniform(l.w0..l.g1, d, &mut params);
        uniform(l.w2..l.g2, h, &mut params);
        uniform(l.w6..l.total, h, &mut params);
        params[l.g1..l.be1].fill(1.0);
        params[l.g2..l.be2].fill(1.0);
        Ok(Self { arch, params, eta, outer_lr, seed, epochs_trained: 0 })
    }

    pub fn embedding(&self) -> &[f64] {
        let l = self.arch.layout();
        &self.params[l.emb..l.w0]
    }

    /// Copy with the output projection (weights and bias) zeroed.
    pub fn with_zero_output(&self) -> Self {
        let l = self.arch.layout();
        let mut s = self.clone();
        s.params[l.w6..l.total].fill(0.0);
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::persist::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let state: MetaLossState = crate::persist::read_json(path)?;
        if state.params.len() != state.arch.param_count() {
            return Err(Error::Dimension(format!(
                "meta-loss checkpoint {} has {} parameters, expected {}",
                path.display(),
                state.params.len(),
                state.arch.param_count()
            )));
        }
        Ok(state)
    }
}

/// Embedding rows for a batch (all zero when identity input is off).
fn embedding_rows(arch: &MetaLossArch, batch: &Batch) -> Result<Vec<usize>> {
    if !arch.toggles.identity {
        return Ok(vec![0; batch.len()]);
    }
    batch.identities.iter().map(|&id| arch.row_of(id)).collect()
}

struct MetaPass<S> {
    value: S,
    grad_params: Vec<S>,
    d_logits: Vec<S>,
    d_features: Vec<S>,
}

#[derive(Clone, Copy)]
struct Needs {
    params: bool,
    inputs: bool,
}

/// Mean meta-loss over the batch and, on request, its reverse-mode gradients
/// with respect to φ and to the classifier outputs.
#[allow(clippy::too_many_arguments)]
fn meta_pass<S: Scalar>(
    arch: &MetaLossArch,
    params: &[S],
    logits: &[S],
    features: &[S],
    rows: &[usize],
    targets: &Matrix,
    mask: Option<&[f64]>,
    needs: Needs,
) -> MetaPass<S> {
    let l = arch.layout();
    let (h, d_in, c, fd, e) = (arch.hidden, arch.input_dim(), arch.num_classes, arch.feature_dim, arch.embed_dim);
    let t = arch.toggles;
    let n = rows.len();
    let any_grad = needs.params || needs.inputs;
    let mut grad = vec![S::zero(); if needs.params { l.total } else { 0 }];
    let mut d_logits = vec![S::zero(); if needs.inputs { n * c } else { 0 }];
    let mut d_features = vec![S::zero(); if needs.inputs { n * fd } else { 0 }];
    let mut value = S::zero();
    let inv_n = 1.0 / n as f64;

    let (w0, b0) = (&params[l.w0..l.b0], &params[l.b0..l.g1]);
    let (g1, be1) = (&params[l.g1..l.be1], &params[l.be1..l.w2]);
    let (w2, b2) = (&params[l.w2..l.b2], &params[l.b2..l.g2]);
    let (g2, be2) = (&params[l.g2..l.be2], &params[l.be2..l.w6]);
    let (w6, b6) = (&params[l.w6..l.b6], params[l.b6]);

    let mut x = Vec::with_capacity(d_in);
    let mut z0 = vec![S::zero(); h];
    let mut a1 = vec![S::zero(); h];
    let mut z2 = vec![S::zero(); h];
    let mut a5 = vec![S::zero(); h];
    for r in 0..n {
        x.clear();
        if t.logits {
            x.extend_from_slice(&logits[r * c..(r + 1) * c]);
        }
        if t.features {
            x.extend_from_slice(&features[r * fd..(r + 1) * fd]);
        }
        if t.identity {
            let at = l.emb + rows[r] * e;
            x.extend_from_slice(&params[at..at + e]);
        }
        if t.targets {
            x.extend(targets.row(r).iter().map(|&v| S::from_f64(v)));
        }
        nn::linear(w0, b0, &x, &mut z0);
        let c1 = nn::layer_norm(&z0, g1, be1, &mut a1);
        nn::linear(w2, b2, &a1, &mut z2);
        let keep = mask.map(|m| &m[r * h..(r + 1) * h]);
        let dropped: Vec<S> = z2
            .iter()
            .enumerate()
            .map(|(j, &z)| match keep {
                Some(k) => z.gelu().scale(k[j]),
                None => z.gelu(),
            })
            .collect();
        let c5 = nn::layer_norm(&dropped, g2, be2, &mut a5);
        let mut o = b6;
        for (w, a) in w6.iter().zip(&a5) {
            o += *w * *a;
        }
        value += o.softplus();
        if !any_grad {
            continue;
        }

        // Reverse sweep for this sample, upstream gradient 1/n.
        let d_o = o.sigmoid().scale(inv_n);
        let mut scratch_w6 = vec![S::zero(); h];
        let da5: Vec<S> = w6.iter().map(|&w| w * d_o).collect();
        for (g, a) in scratch_w6.iter_mut().zip(&a5) {
            *g = d_o * *a;
        }
        let mut dg2 = vec![S::zero(); h];
        let mut dbe2 = vec![S::zero(); h];
        let mut d_dropped = vec![S::zero(); h];
        nn::layer_norm_backward(&c5, g2, &da5, &mut dg2, &mut dbe2, &mut d_dropped);
        let dz2: Vec<S> = (0..h)
            .map(|j| {
                let k = keep.map_or(1.0, |k| k[j]);
                d_dropped[j].scale(k) * z2[j].gelu_grad()
            })
            .collect();
        let mut gw2 = vec![S::zero(); h * h];
        let mut gb2 = vec![S::zero(); h];
        let mut da1 = vec![S::zero(); h];
        nn::linear_backward(w2, &a1, &dz2, &mut gw2, &mut gb2, Some(&mut da1));
        let mut dg1 = vec![S::zero(); h];
        let mut dbe1 = vec![S::zero(); h];
        let mut dz0 = vec![S::zero(); h];
        nn::layer_norm_backward(&c1, g1, &da1, &mut dg1, &mut dbe1, &mut dz0);
        let mut gw0 = vec![S::zero(); h * d_in];
        let mut gb0 = vec![S::zero(); h];
        let mut dx = vec![S::zero(); d_in];
        nn::linear_backward(w0, &x, &dz0, &mut gw0, &mut gb0, Some(&mut dx));

        if needs.params {
            let add = |dst: &mut [S], src: &[S]| {
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += *b;
                }
            };
            add(&mut grad[l.w0..l.b0], &gw0);
            add(&mut grad[l.b0..l.g1], &gb0);
            add(&mut grad[l.g1..l.be1], &dg1);
            add(&mut grad[l.be1..l.w2], &dbe1);
            add(&mut grad[l.w2..l.b2], &gw2);
            add(&mut grad[l.b2..l.g2], &gb2);
            add(&mut grad[l.g2..l.be2], &dg2);
            add(&mut grad[l.be2..l.w6], &dbe2);
            add(&mut grad[l.w6..l.b6], &scratch_w6);
            grad[l.b6] += d_o;
        }
        let mut at = 0;
        if t.logits {
            if needs.inputs {
                d_logits[r * c..(r + 1) * c].copy_from_slice(&dx[at..at + c]);
            }
            at += c;
        }
        if t.features {
            if needs.inputs {
                d_features[r * fd..(r + 1) * fd].copy_from_slice(&dx[at..at + fd]);
            }
            at += fd;
        }
        if t.identity && needs.params {
            let row = l.emb + rows[r] * e;
            for k in 0..e {
                grad[row + k] += dx[at + k];
            }
        }
    }
    MetaPass { value: value.scale(inv_n), grad_params: grad, d_logits, d_features }
}

fn check_compat(meta: &MetaLossState, classifier: &ClassifierState) -> Result<()> {
    if meta.arch.num_classes != classifier.arch.num_classes || meta.arch.feature_dim != classifier.arch.feature_dim() {
        return Err(Error::Dimension(format!(
            "meta-loss expects C={} D={}, classifier has C={} D={}",
            meta.arch.num_classes,
            meta.arch.feature_dim,
            classifier.arch.num_classes,
            classifier.arch.feature_dim()
        )));
    }
    Ok(())
}

fn nonempty(batch: &Batch, what: &str) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Request(format!("{what} is empty")));
    }
    Ok(())
}

/// `h_φ(f_θ(batch))` in inference mode (no dropout).
pub fn metaloss_forward(meta: &MetaLossState, classifier: &ClassifierState, batch: &Dataset) -> Result<f64> {
    metaloss_forward_batch(meta, classifier, &batch.to_batch(), None)
}

fn metaloss_forward_batch(
    meta: &MetaLossState,
    classifier: &ClassifierState,
    batch: &Batch,
    mask: Option<&[f64]>,
) -> Result<f64> {
    check_compat(meta, classifier)?;
    nonempty(batch, "meta-loss batch")?;
    let rows = embedding_rows(&meta.arch, batch)?;
    let (features, logits) = classifier.forward(&batch.inputs)?;
    let pass = meta_pass::<f64>(
        &meta.arch,
        &meta.params,
        &logits.data,
        &features.data,
        &rows,
        &batch.targets,
        mask,
        Needs { params: false, inputs: false },
    );
    Ok(pass.value)
}

/// `(h_φ(f_θ(batch)), ∇_θ h_φ(f_θ(batch)))`.
fn inner_gradient(
    meta: &MetaLossState,
    classifier: &ClassifierState,
    batch: &Batch,
    mask: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    check_compat(meta, classifier)?;
    nonempty(batch, "support set")?;
    if batch.inputs.cols != classifier.arch.input_dim {
        return Err(Error::Dimension("support features do not match the classifier".into()));
    }
    let rows = embedding_rows(&meta.arch, batch)?;
    let t = classifier::trace::<f64, f64>(&classifier.arch, &classifier.params, &batch.inputs);
    let pass = meta_pass::<f64>(
        &meta.arch,
        &meta.params,
        &t.logits,
        t.features(),
        &rows,
        &batch.targets,
        mask,
        Needs { params: false, inputs: true },
    );
    let d_features = meta.arch.toggles.features.then_some(pass.d_features.as_slice());
    let grad = if meta.arch.toggles.logits || meta.arch.toggles.features {
        let d_logits = if meta.arch.toggles.logits { pass.d_logits } else { vec![0.0; t.logits.len()] };
        classifier::backward(&classifier.arch, &classifier.params, &t, d_features, &d_logits)
    } else {
        vec![0.0; classifier.params.len()]
    };
    Ok((pass.value, grad))
}

fn step_from(classifier: &ClassifierState, grad: &[f64], eta: f64) -> Result<ClassifierState> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("meta-loss gradient".into()));
    }
    let params = classifier.params.iter().zip(grad).map(|(p, g)| p - eta * g).collect();
    classifier.with_params(params)
}

/// One gradient step on the meta-loss over all support samples at once.
pub fn unlearn_step(classifier: &ClassifierState, meta: &MetaLossState, support: &Dataset) -> Result<ClassifierState> {
    let (_, grad) = inner_gradient(meta, classifier, &support.to_batch(), None)?;
    step_from(classifier, &grad, meta.eta)
}

/// Unlearning at deployment time: only the support set and θ are read.
pub fn apply_unlearning(
    classifier: &ClassifierState,
    meta: &MetaLossState,
    support: &Dataset,
) -> Result<ClassifierState> {
    unlearn_step(classifier, meta, support)
}

/// [`apply_unlearning`] on a request, reading nothing but its support set.
pub fn apply_to_request(
    classifier: &ClassifierState,
    meta: &MetaLossState,
    request: &UnlearningRequest,
) -> Result<ClassifierState> {
    apply_unlearning(classifier, meta, request.support())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuxTerms {
    First,
    Second,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionKernel {
    Squared,
    SmoothL1,
}

impl RegressionKernel {
    pub fn value(self, d: f64) -> f64 {
        match self {
            RegressionKernel::Squared => d * d,
            RegressionKernel::SmoothL1 => {
                if d.abs() < 1.0 {
                    0.5 * d * d
                } else {
                    d.abs() - 0.5
                }
            }
        }
    }

    pub fn derivative(self, d: f64) -> f64 {
        match self {
            RegressionKernel::Squared => 2.0 * d,
            RegressionKernel::SmoothL1 => {
                if d.abs() < 1.0 {
                    d
                } else {
                    d.signum()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuxLossConfig {
    pub terms: AuxTerms,
    pub accuracy_scaling: bool,
    pub kernel: RegressionKernel,
}

impl Default for AuxLossConfig {
    fn default() -> Self {
        Self { terms: AuxTerms::Both, accuracy_scaling: true, kernel: RegressionKernel::Squared }
    }
}

impl AuxLossConfig {
    pub fn first(&self) -> bool {
        matches!(self.terms, AuxTerms::First | AuxTerms::Both)
    }

    pub fn second(&self) -> bool {
        matches!(self.terms, AuxTerms::Second | AuxTerms::Both)
    }

    pub fn label(&self) -> String {
        let terms = match self.terms {
            AuxTerms::First => "first",
            AuxTerms::Second => "second",
            AuxTerms::Both => "first+second",
        };
        let mut s = terms.to_string();
        if self.accuracy_scaling {
            s.push_str("+accuracy");
        }
        if self.kernel == RegressionKernel::SmoothL1 {
            s.push_str("+smooth-l1");
        }
        s
    }
}

/// Task losses entering the auxiliary objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxTerms3 {
    pub forget_unlearned: f64,
    pub val_unlearned: f64,
    pub val_original: f64,
}

/// `A` from the three task losses and their (constant) performance scores.
/// Returns `A` and `(∂A/∂L_f(θ_u), ∂A/∂L_v(θ_u))`.
pub fn aux_from_losses(losses: AuxTerms3, perf: Option<(f64, f64, f64)>, cfg: &AuxLossConfig) -> (f64, (f64, f64)) {
    let (sf, sv, so) = match (cfg.accuracy_scaling, perf) {
        (true, Some((pf, pv, po))) => (1.0 - pf, 1.0 - pv, 1.0 - po),
        _ => (1.0, 1.0, 1.0),
    };
    let f = sf * losses.forget_unlearned;
    let v = sv * losses.val_unlearned;
    let o = so * losses.val_original;
    let k = cfg.kernel;
    let mut a = 0.0;
    let (mut d_f, mut d_v) = (0.0, 0.0);
    if cfg.first() {
        a += k.value(f - v);
        d_f += sf * k.derivative(f - v);
        d_v -= sv * k.derivative(f - v);
    }
    if cfg.second() {
        a += k.value(f - o);
        d_f += sf * k.derivative(f - o);
    }
    (a, (d_f, d_v))
}

/// Loss and performance of the frozen original model on the validation set.
#[derive(Debug, Clone, Copy)]
pub struct ValidationReference {
    pub loss: f64,
    pub perf: f64,
}

impl ValidationReference {
    pub fn compute(theta: &ClassifierState, validation: &Batch) -> Result<Self> {
        Ok(Self { loss: theta.loss(validation)?, perf: evaluation::performance_on_batch(theta, validation)? })
    }
}

#[derive(Debug, Clone)]
pub struct AuxEvaluation {
    pub value: f64,
    pub losses: AuxTerms3,
    /// `∇_{θ_u} A`.
    pub grad_theta_u: Vec<f64>,
}

fn aux_evaluate(
    theta_u: &ClassifierState,
    forget: &Batch,
    validation: &Batch,
    reference: ValidationReference,
    cfg: &AuxLossConfig,
) -> Result<AuxEvaluation> {
    nonempty(forget, "forget set")?;
    nonempty(validation, "validation set")?;
    let (lf, gf) = theta_u.loss_and_grad(forget)?;
    let (lv, gv) = theta_u.loss_and_grad(validation)?;
    for (what, v) in [("forget loss", lf), ("validation loss", lv), ("original validation loss", reference.loss)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(what.into()));
        }
    }
    let perf = if cfg.accuracy_scaling {
        Some((
            evaluation::performance_on_batch(theta_u, forget)?,
            evaluation::performance_on_batch(theta_u, validation)?,
            reference.perf,
        ))
    } else {
        None
    };
    let losses = AuxTerms3 { forget_unlearned: lf, val_unlearned: lv, val_original: reference.loss };
    let (value, (d_f, d_v)) = aux_from_losses(losses, perf, cfg);
    let grad_theta_u = gf.iter().zip(&gv).map(|(a, b)| d_f * a + d_v * b).collect();
    Ok(AuxEvaluation { value, losses, grad_theta_u })
}

/// Alignment objective `A` of an unlearned model against the original one.
pub fn auxiliary_loss(
    theta_u: &ClassifierState,
    theta: &ClassifierState,
    d_f: &Dataset,
    d_v: &Dataset,
    cfg: &AuxLossConfig,
) -> Result<f64> {
    let val = d_v.to_batch();
    let reference = ValidationReference::compute(theta, &val)?;
    Ok(aux_evaluate(theta_u, &d_f.to_batch(), &val, reference, cfg)?.value)
}

/// Outer gradient `∇_φ A` given `v = ∇_{θ_u} A`, by differentiating
/// `∇_φ h_φ(f_θ(S))` along `v` with dual numbers.
fn outer_gradient(
    meta: &MetaLossState,
    classifier: &ClassifierState,
    support: &Batch,
    mask: Option<&[f64]>,
    v: &[f64],
) -> Result<Vec<f64>> {
    let rows = embedding_rows(&meta.arch, support)?;
    let theta: Vec<Dual> = classifier.params.iter().zip(v).map(|(&p, &d)| Dual::new(p, d)).collect();
    let t = classifier::trace_with::<Dual>(&classifier.arch, &theta, &support.inputs);
    let phi: Vec<Dual> = meta.params.iter().map(|&p| Dual::constant(p)).collect();
    let pass = meta_pass::<Dual>(
        &meta.arch,
        &phi,
        &t.logits,
        t.features(),
        &rows,
        &support.targets,
        mask,
        Needs { params: true, inputs: false },
    );
    Ok(pass.grad_params.iter().map(|g| -meta.eta * g.d).collect())
}

/// Result of one simulated request: `A` and `∇_φ A` through the inner step.
#[derive(Debug, Clone)]
pub struct SimulatedStep {
    pub aux: f64,
    pub losses: AuxTerms3,
    pub grad_phi: Vec<f64>,
    pub theta_u: ClassifierState,
}

/// Runs the inner unlearning step on `support` and differentiates the
/// auxiliary loss on `(forget, validation)` back to φ.
#[allow(clippy::too_many_arguments)]
pub fn simulate_step(
    classifier: &ClassifierState,
    meta: &MetaLossState,
    support: &Batch,
    forget: &Batch,
    validation: &Batch,
    reference: ValidationReference,
    cfg: &AuxLossConfig,
    mask: Option<&[f64]>,
) -> Result<SimulatedStep> {
    let (_, g) = inner_gradient(meta, classifier, support, mask)?;
    let theta_u = step_from(classifier, &g, meta.eta)?;
    let aux = aux_evaluate(&theta_u, forget, validation, reference, cfg)?;
    let grad_phi = outer_gradient(meta, classifier, support, mask, &aux.grad_theta_u)?;
    Ok(SimulatedStep { aux: aux.value, losses: aux.losses, grad_phi, theta_u })
}

/// `A(φ)` evaluated from scratch; used as the finite-difference oracle.
#[allow(clippy::too_many_arguments)]
pub fn aux_of_phi(
    classifier: &ClassifierState,
    meta: &MetaLossState,
    support: &Batch,
    forget: &Batch,
    validation: &Batch,
    reference: ValidationReference,
    cfg: &AuxLossConfig,
    mask: Option<&[f64]>,
) -> Result<f64> {
    let (_, g) = inner_gradient(meta, classifier, support, mask)?;
    let theta_u = step_from(classifier, &g, meta.eta)?;
    Ok(aux_evaluate(&theta_u, forget, validation, reference, cfg)?.value)
}

/// AMSGrad variant of Adam, no weight decay.
#[derive(Debug, Clone)]
pub struct AmsGrad {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    v_max: Vec<f64>,
    t: u32,
}

impl AmsGrad {
    pub fn new(n: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], v_max: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            self.v_max[i] = self.v_max[i].max(self.v[i]);
            let denom = (self.v_max[i] / bc2).sqrt() + self.eps;
            params[i] -= lr * (self.m[i] / bc1) / denom;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaTrainConfig {
    pub epochs: usize,
    /// Inner unlearning step size η.
    pub eta: f64,
    /// Initial outer learning rate α, cosine-annealed to zero.
    pub outer_lr: f64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub inputs: InputToggles,
    pub aux: AuxLossConfig,
    pub seed: u64,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            eta: 0.1,
            outer_lr: 1e-3,
            hidden: 64,
            embed_dim: 16,
            dropout: 0.5,
            inputs: InputToggles::ALL,
            aux: AuxLossConfig::default(),
            seed: 0,
        }
    }
}

impl MetaTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.outer_lr.is_finite() && self.outer_lr > 0.0) {
            return Err(Error::Config("outer_lr must be positive".into()));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::Config("eta must be non-negative".into()));
        }
        if !self.inputs.any() {
            return Err(Error::Config("at least one meta-loss input must be enabled".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::Config("meta-loss widths must be positive".into()));
        }
        Ok(())
    }

    pub fn arch_for(&self, classifier: &ClassifierState, identities: impl IntoIterator<Item = u32>) -> MetaLossArch {
        let rows: BTreeSet<u32> = identities.into_iter().collect();
        MetaLossArch {
            num_classes: classifier.arch.num_classes,
            feature_dim: classifier.arch.feature_dim(),
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            dropout: self.dropout,
            toggles: self.inputs,
            identity_rows: rows.into_iter().collect(),
        }
    }
}

/// One line of the meta-training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestLog {
    pub epoch: usize,
    pub request: usize,
    pub aux: f64,
    pub identity_hash: String,
}

#[derive(Debug, Clone)]
pub struct MetaTrainOutcome {
    pub state: MetaLossState,
    pub log: Vec<RequestLog>,
}

pub fn identity_hash(ids: &BTreeSet<u32>) -> String {
    let joined: Vec<String> = ids.iter().map(u32::to_string).collect();
    crate::persist::sha256_bytes(joined.join(",").as_bytes())[..16].to_string()
}

fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, hidden: usize, p: f64) -> Option<Vec<f64>> {
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some((0..rows * hidden).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
}

/// Trains `h_φ` by simulating requests of `n_s` identities drawn without
/// replacement from `train`, each epoch covering every identity once.
pub fn meta_train(
    classifier: &ClassifierState,
    train: &Dataset,
    validation: &Dataset,
    n_s: usize,
    cfg: &MetaTrainConfig,
) -> Result<MetaTrainOutcome> {
    cfg.validate()?;
    let eligible: Vec<u32> =
        train.identity_index().iter().filter(|(_, pos)| pos.len() >= 2).map(|(&id, _)| id).collect();
    let arch = cfg.arch_for(classifier, train.identities());
    let mut state = MetaLossState::init(arch, cfg.eta, cfg.outer_lr, cfg.seed)?;
    let sampler = IdentitySampler::new(eligible, n_s)?;
    let val = validation.to_batch();
    nonempty(&val, "validation set")?;
    let reference = ValidationReference::compute(classifier, &val)?;
    let mut opt = AmsGrad::new(state.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d65_7461);
    let total = cfg.epochs * sampler.requests_per_epoch();
    let mut log = Vec::with_capacity(total);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        for (request, ids) in sampler.epoch(&mut rng).into_iter().enumerate() {
            let (req, _) = data::carve_request(train, &ids, &mut rng)?;
            let support = req.support().to_batch();
            let forget = req.forget_set().to_batch();
            let mask = dropout_mask(&mut rng, support.len(), cfg.hidden, cfg.dropout);
            let sim = simulate_step(classifier, &state, &support, &forget, &val, reference, &cfg.aux, mask.as_deref())
                .map_err(|e| Error::MetaTrain {
                    epoch,
                    request,
                    seed: cfg.seed,
                    identities: ids.iter().copied().collect(),
                    message: e.to_string(),
                })?;
            if !sim.aux.is_finite() || sim.grad_phi.iter().any(|g| !g.is_finite()) {
                return Err(Error::MetaTrain {
                    epoch,
                    request,
                    seed: cfg.seed,
                    identities: ids.iter().copied().collect(),
                    message: format!("non-finite auxiliary loss {}", sim.aux),
                });
            }
            let lr = 0.5 * cfg.outer_lr * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos());
            opt.step(&mut state.params, &sim.grad_phi, lr);
            let entry = RequestLog { epoch, request, aux: sim.aux, identity_hash: identity_hash(&ids) };
            log::debug!(
                "meta epoch {} request {} A={:.6e} ids={}",
                entry.epoch,
                entry.request,
                entry.aux,
                entry.identity_hash
            );
            log.push(entry);
            step += 1;
        }
        state.epochs_trained += 1;
    }
    Ok(MetaTrainOutcome { state, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Architecture;
    use crate::data::{generate_dataset, split_by_identity, GeneratorConfig, TaskKind};

    fn toy() -> (ClassifierState, Dataset, MetaLossState) {
        let gen = GeneratorConfig {
            num_identities: 12,
            samples_per_identity: 4,
            feature_dim: 4,
            num_classes: 3,
            ..Default::default()
        };
        let ds = generate_dataset(&gen, 2).unwrap();
        let arch = Architecture::new(4, vec![6, 5], 3, TaskKind::MultiLabel).unwrap();
        let clf = ClassifierState::init(arch, 1);
        let cfg = MetaTrainConfig { hidden: 6, embed_dim: 3, ..Default::default() };
        let meta = MetaLossState::init(cfg.arch_for(&clf, ds.identities()), 0.1, 1e-3, 5).unwrap();
        (clf, ds, meta)
    }

    #[test]
    fn zero_output_layer_gives_ln2() {
        let (clf, ds, meta) = toy();
        let m = metaloss_forward(&meta.with_zero_output(), &clf, &ds).unwrap();
        assert!((m - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn forward_is_permutation_invariant_and_nonnegative() {
        let (clf, ds, meta) = toy();
        let a = metaloss_forward(&meta, &clf, &ds).unwrap();
        let mut rev = ds.samples().to_vec();
        rev.reverse();
        let b = metaloss_forward(&meta, &clf, &Dataset::new(ds.schema(), rev).unwrap()).unwrap();
        assert!(a >= 0.0);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn input_width_follows_toggles() {
        let (clf, ds, _) = toy();
        let cfg = MetaTrainConfig { hidden: 6, embed_dim: 3, ..Default::default() };
        let arch = cfg.arch_for(&clf, ds.identities());
        assert_eq!(arch.input_dim(), 3 + 5 + 3 + 3);
        let only = MetaLossArch { toggles: InputToggles::LOGITS, ..arch.clone() };
        assert_eq!(only.input_dim(), 3);
        let none = MetaLossArch {
            toggles: InputToggles { logits: false, features: false, identity: false, targets: false },
            ..arch
        };
        assert!(MetaLossState::init(none, 0.1, 1e-3, 0).is_err());
    }

    #[test]
    fn unknown_identity_is_rejected() {
        let (clf, ds, meta) = toy();
        let mut s = ds.samples()[0].clone();
        s.identity = 999;
        let bad = Dataset::new(ds.schema(), vec![s]).unwrap();
        assert!(matches!(metaloss_forward(&meta, &clf, &bad), Err(Error::UnknownIdentity(999))));
    }

    #[test]
    fn zero_eta_and_constant_loss_are_noops() {
        let (clf, ds, meta) = toy();
        let support = ds.filter_identities(|i| i < 2);
        let frozen = MetaLossState { eta: 0.0, ..meta.clone() };
        assert_eq!(unlearn_step(&clf, &frozen, &support).unwrap().params, clf.params);

        let arch = MetaLossArch {
            toggles: InputToggles { logits: false, features: false, identity: true, targets: true },
            ..meta.arch.clone()
        };
        let constant = MetaLossState::init(arch, 0.1, 1e-3, 3).unwrap();
        assert_eq!(unlearn_step(&clf, &constant, &support).unwrap().params, clf.params);
    }

    #[test]
    fn one_step_delta_is_minus_eta_gradient() {
        let (clf, ds, meta) = toy();
        let support = ds.filter_identities(|i| i == 3);
        let out = unlearn_step(&clf, &meta, &support).unwrap();
        let (_, g) = inner_gradient(&meta, &clf, &support.to_batch(), None).unwrap();
        for ((new, old), gi) in out.params.iter().zip(&clf.params).zip(&g) {
            assert!((new - (old - meta.eta * gi)).abs() < 1e-15);
        }
        assert!(g.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn inner_gradient_matches_finite_differences() {
        let (clf, ds, meta) = toy();
        let support = ds.filter_identities(|i| i < 3).to_batch();
        let (_, g) = inner_gradient(&meta, &clf, &support, None).unwrap();
        let h = 1e-6;
        for i in 0..clf.params.len() {
            let mut p = clf.params.clone();
            p[i] += h;
            let up = metaloss_forward_batch(&meta, &clf.with_params(p.clone()).unwrap(), &support, None).unwrap();
            p[i] -= 2.0 * h;
            let dn = metaloss_forward_batch(&meta, &clf.with_params(p).unwrap(), &support, None).unwrap();
            let num = (up - dn) / (2.0 * h);
            assert!((g[i] - num).abs() <= 1e-6 * num.abs().max(1e-4), "param {i}: {} vs {num}", g[i]);
        }
    }

    #[test]
    fn aux_hand_case() {
        let losses = AuxTerms3 { forget_unlearned: 0.5, val_unlearned: 0.7, val_original: 0.6 };
        let cfg = AuxLossConfig { terms: AuxTerms::Both, accuracy_scaling: false, kernel: RegressionKernel::Squared };
        let (a, _) = aux_from_losses(losses, None, &cfg);
        assert!((a - 0.05).abs() < 1e-15);
        let scaled = AuxLossConfig { accuracy_scaling: true, ..cfg };
        let (a, (df, _)) = aux_from_losses(losses, Some((1.0, 0.5, 0.5)), &scaled);
        // Forget operand vanishes: A = (0 - 0.35)^2 + (0 - 0.3)^2.
        assert!((a - (0.35f64.powi(2) + 0.3f64.powi(2))).abs() < 1e-15);
        assert_eq!(df, 0.0);
        let l1 = AuxLossConfig { kernel: RegressionKernel::SmoothL1, ..cfg };
        let (a, _) = aux_from_losses(losses, None, &l1);
        assert!((a - (0.5 * 0.04 + 0.5 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn aux_is_zero_when_aligned() {
        let (clf, ds, _) = toy();
        let cfg = AuxLossConfig { terms: AuxTerms::Both, accuracy_scaling: false, kernel: RegressionKernel::Squared };
        // Same dataset on both sides with θ_u = θ: every operand is equal.
        assert_eq!(auxiliary_loss(&clf, &clf, &ds, &ds, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn amsgrad_first_step_moves_by_lr() {
        let mut opt = AmsGrad::new(2);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[0.5, -2.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn meta_train_request_count_and_zero_epochs() {
        let gen = GeneratorConfig {
            num_identities: 25,
            samples_per_identity: 3,
            feature_dim: 4,
            num_classes: 3,
            ..Default::default()
        };
        let ds = generate_dataset(&gen, 0).unwrap();
        let b = split_by_identity(&ds, [0.8, 0.1, 0.1], 0).unwrap();
        let arch = Architecture::new(4, vec![6, 5], 3, TaskKind::MultiLabel).unwrap();
        let clf = ClassifierState::init(arch, 1);
        let cfg = MetaTrainConfig { epochs: 0, hidden: 6, embed_dim: 3, ..Default::default() };
        let zero = meta_train(&clf, &b.train, &b.validation, 4, &cfg).unwrap();
        let init =
            MetaLossState::init(cfg.arch_for(&clf, b.train.identities()), cfg.eta, cfg.outer_lr, cfg.seed).unwrap();
        assert_eq!(zero.state.params, init.params);
        assert!(zero.log.is_empty());

        let one = meta_train(&clf, &b.train, &b.validation, 4, &MetaTrainConfig { epochs: 1, ..cfg }).unwrap();
        assert_eq!(one.log.len(), 5); // ⌈20 / 4⌉
        assert_ne!(one.state.params, init.params);
    }
}
