//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    adapacse_filtered_loss, adapacse_loss, arccse_loss, filtered_infonce, kdmcse_loss, mcse_loss,
    simcse_loss, LossResult, ObjectiveConfig, Slot,
};
use crate::error::{Error, Result};
use crate::similarity::{filter_mask, margin_weights, pairwise_cosine, soft_labels};
use crate::teacher_store::Modality;

pub type Inputs = BTreeMap<Slot, Vec<Vec<f64>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct SlotCheck {
    pub slot: Slot,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub slots: Vec<SlotCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.slots.iter().all(|s| s.pass)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.slots.iter().map(|s| s.max_rel_err).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of `loss(inputs).mean` against
/// `(f(x + εe) − f(x − εe)) / 2ε` for every coordinate of every slot in `inputs`.
pub fn grad_check<F>(
    loss: F,
    inputs: &Inputs,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&Inputs) -> Result<LossResult>,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!(
            "epsilon {epsilon} outside [1e-6, 1e-3]"
        )));
    }
    let base = loss(inputs)?;
    if !base.mean.is_finite() {
        return Err(Error::NonFiniteLoss { step: None });
    }
    let mut slots = Vec::new();
    let mut probe = inputs.clone();
    for (&slot, rows) in inputs {
        let analytic = base.grad(slot).ok_or_else(|| {
            Error::ShapeMismatch(format!("no gradient reported for slot {}", slot.name()))
        })?;
        let mut worst = 0.0f64;
        for (r, row) in rows.iter().enumerate() {
            for (k, &x) in row.iter().enumerate() {
                probe.get_mut(&slot).unwrap()[r][k] = x + epsilon;
                let plus = loss(&probe)?.mean;
                probe.get_mut(&slot).unwrap()[r][k] = x - epsilon;
                let minus = loss(&probe)?.mean;
                probe.get_mut(&slot).unwrap()[r][k] = x;
                if !(plus.is_finite() && minus.is_finite()) {
                    return Err(Error::NonFiniteLoss { step: None });
                }
                let numeric = (plus - minus) / (2.0 * epsilon);
                worst = worst.max(relative_error(analytic[r][k], numeric));
            }
        }
        slots.push(SlotCheck {
            slot,
            max_rel_err: worst,
            pass: worst < tolerance,
        });
    }
    Ok(GradCheckReport { slots })
}

/// The objectives exposed to gradient checking and to the `gradcheck` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Simcse,
    Mcse,
    FilteredInfonce,
    Arccse,
    Adapacse,
    AdapacseFiltered,
    Kdmcse,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 7] = [
        ObjectiveKind::Simcse,
        ObjectiveKind::Mcse,
        ObjectiveKind::FilteredInfonce,
        ObjectiveKind::Arccse,
        ObjectiveKind::Adapacse,
        ObjectiveKind::AdapacseFiltered,
        ObjectiveKind::Kdmcse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Simcse => "simcse",
            ObjectiveKind::Mcse => "mcse",
            ObjectiveKind::FilteredInfonce => "filtered_infonce",
            ObjectiveKind::Arccse => "arccse",
            ObjectiveKind::Adapacse => "adapacse",
            ObjectiveKind::AdapacseFiltered => "adapacse_filtered",
            ObjectiveKind::Kdmcse => "kdmcse",
        }
    }
}

/// A random batch for one objective, together with the frozen raw teacher
/// features its masks and margin weights are derived from.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub kind: ObjectiveKind,
    pub inputs: Inputs,
    pub raw_text: Vec<Vec<f64>>,
    pub raw_visual: Vec<Vec<f64>>,
}

fn gaussian_row(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    // Box–Muller keeps this free of extra distribution crates.
    (0..dim)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}

fn jittered(rng: &mut impl Rng, rows: &[Vec<f64>], noise: f64) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let n = gaussian_row(rng, r.len());
            r.iter().zip(n).map(|(a, b)| a + noise * b).collect()
        })
        .collect()
}

impl RandomCase {
    /// All rows are jittered copies of one shared direction, so every logit
    /// stays within a few units of the others and positive angles stay inside `(0, π)`.
    pub fn generate(kind: ObjectiveKind, n: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Rows cluster around a shared direction. Independent Gaussian rows give
        // logit gaps near 1/τ, and the resulting e^-16-sized gradient entries sit
        // below what a central difference of an O(1) loss can resolve.
        let shared: Vec<f64> = gaussian_row(&mut rng, dim)
            .iter()
            .map(|x| 4.0 * x)
            .collect();
        let view = jittered(&mut rng, &vec![shared; n], 1.0);
        let view_prime = jittered(&mut rng, &view, 0.75);
        let raw_text = jittered(&mut rng, &view, 0.8);
        let raw_visual = jittered(&mut rng, &raw_text, 0.6);
        let target = jittered(&mut rng, &view, 0.75);
        let visual = jittered(&mut rng, &raw_visual, 0.75);
        let text = jittered(&mut rng, &raw_text, 0.75);
        let inputs: Inputs = match kind {
            ObjectiveKind::Simcse | ObjectiveKind::Arccse => {
                BTreeMap::from([(Slot::View, view), (Slot::ViewPrime, view_prime)])
            }
            ObjectiveKind::Adapacse => BTreeMap::from([(Slot::View, view), (Slot::Target, target)]),
            ObjectiveKind::Mcse
            | ObjectiveKind::FilteredInfonce
            | ObjectiveKind::AdapacseFiltered => BTreeMap::from([
                (Slot::View, view),
                (Slot::ViewPrime, view_prime),
                (Slot::Target, target),
            ]),
            ObjectiveKind::Kdmcse => BTreeMap::from([
                (Slot::View, view),
                (Slot::ViewPrime, view_prime),
                (Slot::VisualTarget, visual),
                (Slot::TextTarget, text),
            ]),
        };
        Self {
            kind,
            inputs,
            raw_text,
            raw_visual,
        }
    }

    /// Evaluates the objective on `inputs`, deriving masks and margin weights
    /// from the raw teacher features (constant under perturbation of `inputs`).
    pub fn evaluate(&self, inputs: &Inputs, cfg: &ObjectiveConfig) -> Result<LossResult> {
        let g = |s: Slot| inputs[&s].as_slice();
        let tt = || {
            pairwise_cosine(
                &self.raw_text,
                &self.raw_text,
                Modality::Text,
                Modality::Text,
            )
        };
        match self.kind {
            ObjectiveKind::Simcse => simcse_loss(g(Slot::View), g(Slot::ViewPrime), cfg),
            ObjectiveKind::Arccse => arccse_loss(g(Slot::View), g(Slot::ViewPrime), cfg),
            ObjectiveKind::Mcse => {
                mcse_loss(g(Slot::View), g(Slot::ViewPrime), g(Slot::Target), cfg)
            }
            ObjectiveKind::FilteredInfonce => {
                let mask = filter_mask(&tt()?, cfg.threshold, cfg.filter_orientation)?;
                filtered_infonce(
                    g(Slot::View),
                    g(Slot::ViewPrime),
                    g(Slot::Target),
                    &mask,
                    cfg,
                )
            }
            ObjectiveKind::Adapacse => {
                adapacse_loss(g(Slot::View), g(Slot::Target), &margin_weights(&tt()?), cfg)
            }
            ObjectiveKind::AdapacseFiltered => {
                let sim = tt()?;
                let mask = filter_mask(&sim, cfg.threshold, cfg.filter_orientation)?;
                adapacse_filtered_loss(
                    g(Slot::View),
                    g(Slot::ViewPrime),
                    g(Slot::Target),
                    &mask,
                    &margin_weights(&sim),
                    cfg,
                )
            }
            ObjectiveKind::Kdmcse => {
                let soft = soft_labels(&self.raw_text, &self.raw_visual)?;
                kdmcse_loss(
                    g(Slot::View),
                    g(Slot::ViewPrime),
                    g(Slot::VisualTarget),
                    g(Slot::TextTarget),
                    &soft,
                    cfg,
                )
            }
        }
    }

    /// Gradient check with teacher gradients switched on so every slot is exercised.
    pub fn check(
        &self,
        cfg: &ObjectiveConfig,
        epsilon: f64,
        tolerance: f64,
    ) -> Result<GradCheckReport> {
        let cfg = ObjectiveConfig {
            teacher_gradients: true,
            ..cfg.clone()
        };
        grad_check(|x| self.evaluate(x, &cfg), &self.inputs, epsilon, tolerance)
    }
}
