//! Contrastive objectives with per-anchor values and analytic gradients.
//!
//! Every objective is built on one softmax kernel over cosine logits. For anchor
//! `i` with targets `b_j` the logit is `ψ(cos(a_i, b_j)) / τ` where `ψ` either
//! passes the cosine through unchanged or shifts its angle by a margin
//! (`cos(θ + c)`). Masked targets drop out of the denominator; the positive
//! `j == i` is always kept.
//!
//! Gradients are reported for the batch mean, i.e. `∂ mean / ∂ row`.
//! Filter masks and margin weights are constants for differentiation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{dot, norm};
use crate::similarity::{
    filter_mask, margin_weights, FilterMask, FilterOrientation, MarginWeights, SoftLabels,
};

pub mod gradcheck;

pub use gradcheck::{grad_check, GradCheckReport, SlotCheck};

pub type Batch = [Vec<f64>];

/// Reference temperature for both the text-only and the multimodal objectives.
pub const DEFAULT_TEMPERATURE: f64 = 0.05;
/// Reference angular margin in radians.
pub const DEFAULT_MARGIN: f64 = 0.125;
/// Reference teacher-similarity threshold for negative filtering.
pub const DEFAULT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig {
    /// Temperature for the text-only objectives.
    pub tau: f64,
    /// Temperature for objectives against teacher features.
    pub tau_prime: f64,
    /// Angular margin `m_c` in radians.
    pub margin: f64,
    pub threshold: f64,
    pub sum_over_both_dropout_views: bool,
    pub filter_orientation: FilterOrientation,
    /// Report real gradients for the projected teacher batch instead of zeros.
    pub teacher_gradients: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TEMPERATURE,
            tau_prime: DEFAULT_TEMPERATURE,
            margin: DEFAULT_MARGIN,
            threshold: DEFAULT_THRESHOLD,
            sum_over_both_dropout_views: true,
            filter_orientation: FilterOrientation::ExcludeSimilar,
            teacher_gradients: false,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.tau_prime > 0.0 && self.tau_prime.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tau_prime must be positive, got {}",
                self.tau_prime
            )));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "margin must be ≥ 0, got {}",
                self.margin
            )));
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(Error::ThresholdOutOfRange(self.threshold));
        }
        Ok(())
    }
}

/// Identifies which input batch a gradient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    /// First dropout view (or the anchor batch).
    View,
    /// Second dropout view.
    ViewPrime,
    /// Positive / teacher batch of a single-target objective.
    Target,
    /// Projected teacher text batch.
    TextTarget,
    /// Projected teacher visual batch.
    VisualTarget,
}

impl Slot {
    pub fn name(self) -> &'static str {
        match self {
            Slot::View => "view",
            Slot::ViewPrime => "view_prime",
            Slot::Target => "target",
            Slot::TextTarget => "text_target",
            Slot::VisualTarget => "visual_target",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub per_anchor: Vec<f64>,
    pub mean: f64,
    pub grads: BTreeMap<Slot, Vec<Vec<f64>>>,
}

impl LossResult {
    pub fn grad(&self, slot: Slot) -> Option<&[Vec<f64>]> {
        self.grads.get(&slot).map(Vec::as_slice)
    }
}

/// How the logit of one (anchor, target) cosine is formed.
#[derive(Clone, Copy)]
enum Shift<'a> {
    None,
    /// `cos(θ + m)` on the positive pair only.
    Positive(f64),
    /// `cos(θ − m·Δ_ij)` on every negative pair.
    Negatives(f64, &'a MarginWeights),
}

struct Kernel<'a> {
    anchors: &'a Batch,
    targets: &'a Batch,
    tau: f64,
    shift: Shift<'a>,
    mask: Option<&'a FilterMask>,
}

/// Per-anchor losses and gradients of their *sum*.
struct KernelOutput {
    losses: Vec<f64>,
    grad_anchors: Vec<Vec<f64>>,
    grad_targets: Vec<Vec<f64>>,
}

/// Returns `(ψ(x), ψ'(x))` for `ψ(x) = cos(arccos(x) + shift)`.
fn shifted_cosine(x: f64, shift: f64) -> (f64, f64) {
    if shift == 0.0 {
        return (x, 1.0);
    }
    let theta = x.acos();
    let sin_theta = theta.sin().max(1e-12);
    ((theta + shift).cos(), (theta + shift).sin() / sin_theta)
}

/// Sum in ascending order, so the result does not depend on batch order.
fn ordered_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

/// `ln(1 + Σ e^{d_j})` without overflow and without cancellation near zero.
fn log1p_sum_exp(diffs: &[f64]) -> f64 {
    let max = diffs.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        ordered_sum(diffs.iter().map(|d| d.exp())).ln_1p()
    } else {
        max + ((-max).exp() + ordered_sum(diffs.iter().map(|d| (d - max).exp()))).ln()
    }
}

impl Kernel<'_> {
    fn run(&self) -> Result<KernelOutput> {
        let n = self.anchors.len();
        let dim = check_batch(self.anchors)?;
        let tdim = check_batch(self.targets)?;
        if self.targets.len() != n {
            return Err(Error::BatchLengthMismatch {
                left: n,
                right: self.targets.len(),
            });
        }
        if tdim != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: tdim,
            });
        }
        if let Some(mask) = self.mask {
            if mask.shape() != (n, n) {
                return Err(Error::MaskShapeMismatch {
                    expected: n,
                    got: mask.shape(),
                });
            }
            if (0..n).any(|i| !mask.keeps(i, i)) {
                return Err(Error::DegenerateInput("mask drops a positive pair"));
            }
        }
        if let Shift::Negatives(_, delta) = self.shift {
            if delta.shape() != (n, n) {
                return Err(Error::ShapeMismatch(format!(
                    "margin weights {:?} for batch of {n}",
                    delta.shape()
                )));
            }
        }

        let anorm: Vec<f64> = self.anchors.iter().map(|a| norm(a)).collect();
        let tnorm: Vec<f64> = self.targets.iter().map(|b| norm(b)).collect();

        let mut out = KernelOutput {
            losses: Vec::with_capacity(n),
            grad_anchors: vec![vec![0.0; dim]; n],
            grad_targets: vec![vec![0.0; dim]; n],
        };
        let mut cos = vec![0.0; n];
        let mut logit = vec![0.0; n];
        let mut slope = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let x = (dot(&self.anchors[i], &self.targets[j]) / (anorm[i] * tnorm[j]))
                    .clamp(-1.0, 1.0);
                let shift = match self.shift {
                    Shift::None => 0.0,
                    Shift::Positive(m) if i == j => m,
                    Shift::Positive(_) => 0.0,
                    Shift::Negatives(_, _) if i == j => 0.0,
                    Shift::Negatives(m, delta) => -m * delta.get(i, j),
                };
                let (psi, dpsi) = shifted_cosine(x, shift);
                cos[j] = x;
                logit[j] = psi / self.tau;
                slope[j] = dpsi / self.tau;
            }
            let kept: Vec<usize> = (0..n)
                .filter(|&j| j != i && self.mask.is_none_or(|m| m.keeps(i, j)))
                .collect();
            let diffs: Vec<f64> = kept.iter().map(|&j| logit[j] - logit[i]).collect();
            let loss = log1p_sum_exp(&diffs);
            out.losses.push(loss);

            // dℓ/dlogit_j = softmax_j − [j == i]
            let mut coeff = vec![0.0; n];
            coeff[i] = (-loss).exp_m1();
            for (&j, d) in kept.iter().zip(&diffs) {
                coeff[j] = (d - loss).exp();
            }
            for j in 0..n {
                if coeff[j] == 0.0 {
                    continue;
                }
                let dx = coeff[j] * slope[j];
                let (a, b) = (&self.anchors[i], &self.targets[j]);
                let (na, nb) = (anorm[i], tnorm[j]);
                let x = cos[j];
                for k in 0..dim {
                    out.grad_anchors[i][k] += dx * (b[k] / (na * nb) - x * a[k] / (na * na));
                    out.grad_targets[j][k] += dx * (a[k] / (na * nb) - x * b[k] / (nb * nb));
                }
            }
        }
        Ok(out)
    }
}

fn check_batch(batch: &Batch) -> Result<usize> {
    let first = batch.first().ok_or(Error::EmptyBatch)?;
    let dim = first.len();
    for (i, row) in batch.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        if norm(row) == 0.0 {
            return Err(Error::ZeroNormVector { index: i });
        }
    }
    if dim == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    Ok(dim)
}

fn scale(rows: &mut [Vec<f64>], s: f64) {
    for row in rows {
        for v in row {
            *v *= s;
        }
    }
}

fn add_into(acc: &mut [Vec<f64>], rows: &[Vec<f64>], s: f64) {
    for (a, r) in acc.iter_mut().zip(rows) {
        for (x, y) in a.iter_mut().zip(r) {
            *x += s * y;
        }
    }
}

fn zeros_like(batch: &Batch) -> Vec<Vec<f64>> {
    batch.iter().map(|r| vec![0.0; r.len()]).collect()
}

fn finish(per_anchor: Vec<f64>, mut grads: BTreeMap<Slot, Vec<Vec<f64>>>) -> Result<LossResult> {
    let n = per_anchor.len() as f64;
    let mean = ordered_sum(per_anchor.iter().copied()) / n;
    if !mean.is_finite() {
        return Err(Error::NonFiniteLoss { step: None });
    }
    for rows in grads.values_mut() {
        scale(rows, 1.0 / n);
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { step: None });
        }
    }
    Ok(LossResult {
        per_anchor,
        mean,
        grads,
    })
}

fn check_pair_lengths(a: &Batch, b: &Batch) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::BatchLengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Dropout-positive InfoNCE over two views of the same sentences.
pub fn simcse_loss(h_z: &Batch, h_zp: &Batch, cfg: &ObjectiveConfig) -> Result<LossResult> {
    cfg.validate()?;
    let out = Kernel {
        anchors: h_z,
        targets: h_zp,
        tau: cfg.tau,
        shift: Shift::None,
        mask: None,
    }
    .run()?;
    finish(
        out.losses,
        BTreeMap::from([
            (Slot::View, out.grad_anchors),
            (Slot::ViewPrime, out.grad_targets),
        ]),
    )
}

/// Two-view contrast of student rows against one teacher batch, with an
/// optional filter mask and optional adaptive negative margin.
fn two_view_teacher(
    s_z: &Batch,
    s_zp: &Batch,
    m: &Batch,
    mask: Option<&FilterMask>,
    shift: Shift<'_>,
    both_views: bool,
    cfg: &ObjectiveConfig,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_pair_lengths(s_z, s_zp)?;
    check_pair_lengths(s_z, m)?;
    let first = Kernel {
        anchors: s_z,
        targets: m,
        tau: cfg.tau_prime,
        shift,
        mask,
    }
    .run()?;
    let mut losses = first.losses;
    let mut grad_target = first.grad_targets;
    let grad_view = first.grad_anchors;
    let grad_view_prime = if both_views {
        let second = Kernel {
            anchors: s_zp,
            targets: m,
            tau: cfg.tau_prime,
            shift,
            mask,
        }
        .run()?;
        for (l, r) in losses.iter_mut().zip(&second.losses) {
            *l += r;
        }
        add_into(&mut grad_target, &second.grad_targets, 1.0);
        second.grad_anchors
    } else {
        check_batch(s_zp)?;
        zeros_like(s_zp)
    };
    if !cfg.teacher_gradients {
        grad_target = zeros_like(m);
    }
    Ok((losses, grad_view, grad_view_prime, grad_target))
}

/// Multimodal InfoNCE of both student views against projected visual features.
pub fn mcse_loss(
    s_z: &Batch,
    s_zp: &Batch,
    v: &Batch,
    cfg: &ObjectiveConfig,
) -> Result<LossResult> {
    filtered_or_plain(s_z, s_zp, v, None, cfg)
}

/// Multimodal InfoNCE whose denominators skip negatives dropped by `mask`.
pub fn filtered_infonce(
    s_z: &Batch,
    s_zp: &Batch,
    m: &Batch,
    mask: &FilterMask,
    cfg: &ObjectiveConfig,
) -> Result<LossResult> {
    filtered_or_plain(s_z, s_zp, m, Some(mask), cfg)
}

fn filtered_or_plain(
    s_z: &Batch,
    s_zp: &Batch,
    m: &Batch,
    mask: Option<&FilterMask>,
    cfg: &ObjectiveConfig,
) -> Result<LossResult> {
    cfg.validate()?;
    let (losses, gz, gzp, gm) = two_view_teacher(s_z, s_zp, m, mask, Shift::None, true, cfg)?;
    finish(
        losses,
        BTreeMap::from([(Slot::View, gz), (Slot::ViewPrime, gzp), (Slot::Target, gm)]),
    )
}

/// InfoNCE with an additive angular margin on the positive pair.
pub fn arccse_loss(h_z: &Batch, h_zp: &Batch, cfg: &ObjectiveConfig) -> Result<LossResult> {
    cfg.validate()?;
    check_pair_lengths(h_z, h_zp)?;
    check_batch(h_z)?;
    check_batch(h_zp)?;
    for (i, (a, b)) in h_z.iter().zip(h_zp).enumerate() {
        let theta = crate::numerics::angle(a, b)?;
        if theta + cfg.margin >= std::f64::consts::PI {
            return Err(Error::MarginOutOfRange(format!(
                "positive angle {theta:.6} + margin {} reaches π at anchor {i}",
                cfg.margin
            )));
        }
    }
    let out = Kernel {
        anchors: h_z,
        targets: h_zp,
        tau: cfg.tau,
        shift: Shift::Positive(cfg.margin),
        mask: None,
    }
    .run()?;
    finish(
        out.losses,
        BTreeMap::from([
            (Slot::View, out.grad_anchors),
            (Slot::ViewPrime, out.grad_targets),
        ]),
    )
}

fn check_adaptive_margin(delta: &MarginWeights, cfg: &ObjectiveConfig) -> Result<()> {
    if cfg.margin * delta.max() >= std::f64::consts::PI {
        return Err(Error::MarginOutOfRange(format!(
            "margin {} × max Δ {} must stay below π",
            cfg.margin,
            delta.max()
        )));
    }
    Ok(())
}

/// Adaptive angular margin contrast: each negative angle is reduced by `m_c·Δ_ij`.
///
/// Row `i` of `positive` is the positive for anchor `i`; the other rows are its negatives.
pub fn adapacse_loss(
    anchor: &Batch,
    positive: &Batch,
    delta: &MarginWeights,
    cfg: &ObjectiveConfig,
) -> Result<LossResult> {
    cfg.validate()?;
    check_adaptive_margin(delta, cfg)?;
    let out = Kernel {
        anchors: anchor,
        targets: positive,
        tau: cfg.tau,
        shift: Shift::Negatives(cfg.margin, delta),
        mask: None,
    }
    .run()?;
    finish(
        out.losses,
        BTreeMap::from([
            (Slot::View, out.grad_anchors),
            (Slot::Target, out.grad_targets),
        ]),
    )
}

/// Adaptive angular margin contrast against a teacher batch with threshold filtering.
pub fn adapacse_filtered_loss(
    s_z: &Batch,
    s_zp: &Batch,
    m: &Batch,
    mask: &FilterMask,
    delta: &MarginWeights,
    cfg: &ObjectiveConfig,
) -> Result<LossResult> {
    cfg.validate()?;
    check_adaptive_margin(delta, cfg)?;
    let (losses, gz, gzp, gm) = two_view_teacher(
        s_z,
        s_zp,
        m,
        Some(mask),
        Shift::Negatives(cfg.margin, delta),
        cfg.sum_over_both_dropout_views,
        cfg,
    )?;
    finish(
        losses,
        BTreeMap::from([(Slot::View, gz), (Slot::ViewPrime, gzp), (Slot::Target, gm)]),
    )
}

/// Filter masks and margin weights of the two distillation branches.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchWeights {
    pub visual_mask: FilterMask,
    pub visual_delta: MarginWeights,
    pub text_mask: FilterMask,
    pub text_delta: MarginWeights,
}

impl BranchWeights {
    /// Visual branch from text–visual labels, text branch from text–text labels.
    pub fn from_soft_labels(soft: &SoftLabels, cfg: &ObjectiveConfig) -> Result<Self> {
        Ok(Self {
            visual_mask: filter_mask(&soft.tv, cfg.threshold, cfg.filter_orientation)?,
            visual_delta: margin_weights(&soft.tv),
            text_mask: filter_mask(&soft.tt, cfg.threshold, cfg.filter_orientation)?,
            text_delta: margin_weights(&soft.tt),
        })
    }

    /// Same margins, filtering disabled.
    pub fn without_filter(mut self) -> Self {
        let n = self.visual_mask.shape().0;
        self.visual_mask = FilterMask::all_pass(n);
        self.text_mask = FilterMask::all_pass(n);
        self
    }
}

/// Mean of the visual and text filtered adaptive-margin branches.
pub fn kdmcse_loss(
    s_z: &Batch,
    s_zp: &Batch,
    v: &Batch,
    t: &Batch,
    soft: &SoftLabels,
    cfg: &ObjectiveConfig,
) -> Result<LossResult> {
    cfg.validate()?;
    let weights = BranchWeights::from_soft_labels(soft, cfg)?;
    kdmcse_loss_with(s_z, s_zp, v, t, &weights, cfg)
}

/// [`kdmcse_loss`] with precomputed masks and margin weights.
pub fn kdmcse_loss_with(
    s_z: &Batch,
    s_zp: &Batch,
    v: &Batch,
    t: &Batch,
    weights: &BranchWeights,
    cfg: &ObjectiveConfig,
) -> Result<LossResult> {
    let visual = adapacse_filtered_loss(
        s_z,
        s_zp,
        v,
        &weights.visual_mask,
        &weights.visual_delta,
        cfg,
    )?;
    let text = adapacse_filtered_loss(s_z, s_zp, t, &weights.text_mask, &weights.text_delta, cfg)?;
    let per_anchor: Vec<f64> = visual
        .per_anchor
        .iter()
        .zip(&text.per_anchor)
        .map(|(a, b)| (a + b) / 2.0)
        .collect();
    let n = per_anchor.len() as f64;
    let mean = ordered_sum(per_anchor.iter().copied()) / n;

    let half = |res: &LossResult, slot: Slot| -> Vec<Vec<f64>> {
        let mut g = res.grads[&slot].clone();
        scale(&mut g, 0.5);
        g
    };
    let mut view = half(&visual, Slot::View);
    add_into(&mut view, &text.grads[&Slot::View], 0.5);
    let mut view_prime = half(&visual, Slot::ViewPrime);
    add_into(&mut view_prime, &text.grads[&Slot::ViewPrime], 0.5);
    Ok(LossResult {
        per_anchor,
        mean,
        grads: BTreeMap::from([
            (Slot::View, view),
            (Slot::ViewPrime, view_prime),
            (Slot::VisualTarget, half(&visual, Slot::Target)),
            (Slot::TextTarget, half(&text, Slot::Target)),
        ]),
    })
}
