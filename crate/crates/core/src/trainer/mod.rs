//! Interleaved training: text-only dropout contrast on most steps, and a
//! multimodal objective against frozen teacher features every `p`-th step.

use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{DropoutMask, HeadKind, NodeId, StudentDims, StudentParams, Tape};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, StsPair};
use crate::objectives::{
    kdmcse_loss_with, mcse_loss, simcse_loss, BranchWeights, LossResult, ObjectiveConfig, Slot,
};
use crate::similarity::soft_labels;
use crate::teacher_store::FeatureTable;

pub mod config;
pub mod data;
pub mod optimizer;

pub use config::{Objective, OptimizerKind, TrainConfig};
pub use data::{DatasetManifest, EpochSampler, SyntheticCorpus, SyntheticSpec};
pub use optimizer::Optimizer;

/// `⌈|D| / |D^M|⌉`.
pub fn paired_step(size_text: usize, size_multimodal: usize) -> Result<usize> {
    if size_text == 0 || size_multimodal == 0 {
        return Err(Error::InvalidConfig("dataset sizes must be ≥ 1".into()));
    }
    Ok(size_text.div_ceil(size_multimodal))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    TextOnly,
    Multimodal,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::TextOnly => "text",
            StepKind::Multimodal => "multimodal",
        }
    }
}

/// Multimodal exactly when `p` divides the 1-based step `t`.
pub fn step_kind(t: usize, p: usize) -> StepKind {
    if p >= 1 && t.is_multiple_of(p) {
        StepKind::Multimodal
    } else {
        StepKind::TextOnly
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub kind: StepKind,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestCheckpoint {
    pub step: usize,
    pub spearman: f64,
    pub params: StudentParams,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub best: Option<BestCheckpoint>,
}

/// Floats with nine significant digits.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.8e}")
    }
}

impl TrainHistory {
    pub fn steps_csv(&self) -> String {
        let mut s = String::from("step,branch,loss\n");
        for r in &self.steps {
            let _ = writeln!(s, "{},{},{}", r.step, r.kind.name(), fmt_float(r.loss));
        }
        s
    }

    pub fn evals_csv(&self) -> String {
        let mut s = String::from("step,spearman,alignment,uniformity\n");
        for r in &self.evals {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.step,
                fmt_float(r.report.spearman),
                fmt_float(r.report.alignment),
                fmt_float(r.report.uniformity)
            );
        }
        s
    }
}

/// Fresh student for `config` covering every sentence of the manifest and dev set.
pub fn init_student(
    config: &TrainConfig,
    manifest: &DatasetManifest,
    text: &FeatureTable,
    visual: &FeatureTable,
    dev: &[StsPair],
) -> Result<StudentParams> {
    let ids = manifest.sentence_ids(dev.iter().flat_map(|p| [p.a.as_str(), p.b.as_str()]));
    let dims = StudentDims {
        hidden: config.hidden_dim,
        grounded: config.grounded_dim,
        teacher_text: text.dim(),
        teacher_visual: visual.dim(),
    };
    let mut student = StudentParams::init(ids, dims, config.dropout_rate, config.seed)?;
    student
        .values
        .base
        .iter_mut()
        .for_each(|v| *v *= config.init_scale);
    Ok(student)
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn mask_seed(seed: u64, step: usize, slot: usize, view: u64) -> DropoutMask {
    DropoutMask::new(
        mix(
            mix(mix(seed ^ 0xd1b5_4a32_d192_ed03).wrapping_add(step as u64))
                .wrapping_add(slot as u64),
        )
        .wrapping_add(view),
    )
}

struct Views {
    first: Vec<(NodeId, Vec<f64>)>,
    second: Vec<(NodeId, Vec<f64>)>,
}

fn two_views(
    student: &StudentParams,
    tape: &mut Tape,
    ids: &[&str],
    head: HeadKind,
    seed: u64,
    step: usize,
) -> Result<Views> {
    let mut views = Views {
        first: Vec::with_capacity(ids.len()),
        second: Vec::with_capacity(ids.len()),
    };
    for (slot, id) in ids.iter().enumerate() {
        for view in 0..2u64 {
            let (h, hv) = student.encode_on(tape, id, mask_seed(seed, step, slot, view))?;
            let out = student.project_on(tape, Some(h), &hv, head)?;
            if view == 0 {
                views.first.push(out);
            } else {
                views.second.push(out);
            }
        }
    }
    Ok(views)
}

fn values(nodes: &[(NodeId, Vec<f64>)]) -> Vec<Vec<f64>> {
    nodes.iter().map(|(_, v)| v.clone()).collect()
}

fn upstream(
    nodes: &[(NodeId, Vec<f64>)],
    loss: &LossResult,
    slot: Slot,
    out: &mut Vec<(NodeId, Vec<f64>)>,
) {
    if let Some(grads) = loss.grad(slot) {
        out.extend(nodes.iter().zip(grads).map(|((n, _), g)| (*n, g.clone())));
    }
}

/// Everything one training run reads.
pub struct TrainInputs<'a> {
    pub manifest: &'a DatasetManifest,
    pub text: &'a FeatureTable,
    pub visual: &'a FeatureTable,
    pub dev: &'a [StsPair],
}

/// Runs the interleaved loop, updating `student` in place.
pub fn train(
    config: &TrainConfig,
    inputs: &TrainInputs<'_>,
    student: &mut StudentParams,
) -> Result<TrainHistory> {
    config.validate()?;
    let TrainInputs {
        manifest,
        text,
        visual,
        dev,
    } = *inputs;
    let multimodal = config.objective.uses_multimodal();
    if config.steps > 0 {
        if manifest.text_only.is_empty() {
            return Err(Error::InconsistentManifest(
                "text-only dataset is empty".into(),
            ));
        }
        if multimodal && manifest.multimodal.is_empty() {
            return Err(Error::InconsistentManifest(format!(
                "objective {} needs image-text pairs",
                config.objective.name()
            )));
        }
    }
    if multimodal {
        manifest.check_against(text, visual)?;
    }
    for id in manifest.sentence_ids(dev.iter().flat_map(|p| [p.a.as_str(), p.b.as_str()])) {
        if student.base_row(&id).is_err() {
            return Err(Error::InconsistentManifest(format!(
                "student has no row for {id:?}"
            )));
        }
    }
    if student.dims.teacher_text != text.dim() || student.dims.teacher_visual != visual.dim() {
        return Err(Error::InconsistentManifest(
            "teacher feature dims differ from the student heads".into(),
        ));
    }

    let period = if multimodal && config.steps > 0 {
        paired_step(manifest.text_only.len(), manifest.multimodal.len())?
    } else {
        usize::MAX
    };
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let mut text_sampler = EpochSampler::new(manifest.text_only.len(), seeds.next_u64());
    let mut pair_sampler = EpochSampler::new(manifest.multimodal.len(), seeds.next_u64());
    let mask_base = seeds.next_u64();

    let ocfg = ObjectiveConfig {
        teacher_gradients: config.train_teacher_heads,
        margin: if config.objective == Objective::KdmcseNoMargin {
            0.0
        } else {
            config.objective_config.margin
        },
        ..config.objective_config.clone()
    };
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut history = TrainHistory::default();

    for step in 1..=config.steps {
        let kind = if multimodal {
            step_kind(step, period)
        } else {
            StepKind::TextOnly
        };
        let mut tape = Tape::new();
        let mut up = Vec::new();
        let mut forward = || -> Result<LossResult> {
            Ok(match kind {
                StepKind::TextOnly => {
                    let batch = text_sampler.next_batch(config.batch_size);
                    let ids: Vec<&str> = batch
                        .iter()
                        .map(|&i| manifest.text_only[i].as_str())
                        .collect();
                    let views =
                        two_views(student, &mut tape, &ids, HeadKind::Simcse, mask_base, step)?;
                    let loss = simcse_loss(&values(&views.first), &values(&views.second), &ocfg)?;
                    upstream(&views.first, &loss, Slot::View, &mut up);
                    upstream(&views.second, &loss, Slot::ViewPrime, &mut up);
                    loss
                }
                StepKind::Multimodal => {
                    let batch = pair_sampler.next_batch(config.batch_size);
                    let pairs: Vec<&(String, String)> =
                        batch.iter().map(|&i| &manifest.multimodal[i]).collect();
                    let ids: Vec<&str> = pairs.iter().map(|(s, _)| s.as_str()).collect();
                    let images: Vec<&str> = pairs.iter().map(|(_, i)| i.as_str()).collect();
                    let raw_text = text.gather(&ids)?;
                    let raw_visual = visual.gather(&images)?;
                    let views = two_views(
                        student,
                        &mut tape,
                        &ids,
                        HeadKind::Grounded,
                        mask_base,
                        step,
                    )?;
                    let mut project =
                        |rows: &[Vec<f64>], head| -> Result<Vec<(NodeId, Vec<f64>)>> {
                            rows.iter()
                                .map(|r| student.project_on(&mut tape, None, r, head))
                                .collect()
                        };
                    let v = project(&raw_visual, HeadKind::TeacherVisual)?;
                    let (sz, szp) = (values(&views.first), values(&views.second));
                    let loss = if config.objective == Objective::Mcse {
                        let loss = mcse_loss(&sz, &szp, &values(&v), &ocfg)?;
                        upstream(&v, &loss, Slot::Target, &mut up);
                        loss
                    } else {
                        let t = project(&raw_text, HeadKind::TeacherText)?;
                        let soft = soft_labels(&raw_text, &raw_visual)?;
                        let mut weights = BranchWeights::from_soft_labels(&soft, &ocfg)?;
                        if config.objective == Objective::KdmcseNoFilter {
                            weights = weights.without_filter();
                        }
                        let loss =
                            kdmcse_loss_with(&sz, &szp, &values(&v), &values(&t), &weights, &ocfg)?;
                        upstream(&v, &loss, Slot::VisualTarget, &mut up);
                        upstream(&t, &loss, Slot::TextTarget, &mut up);
                        loss
                    };
                    upstream(&views.first, &loss, Slot::View, &mut up);
                    upstream(&views.second, &loss, Slot::ViewPrime, &mut up);
                    loss
                }
            })
        };
        // a diverged student surfaces as non-finite embeddings inside the objective
        let loss = forward().map_err(|e| match e {
            Error::NonFiniteInput => Error::NonFiniteLoss { step: Some(step) },
            other => other,
        })?;
        if !loss.mean.is_finite() {
            return Err(Error::NonFiniteLoss { step: Some(step) });
        }
        let grads = student.backward(&tape, &up)?;
        if !grads.is_finite() {
            return Err(Error::NonFiniteLoss { step: Some(step) });
        }
        optimizer.step_tensors(&mut student.values, &grads, config.learning_rate)?;
        history.steps.push(StepRecord {
            step,
            kind,
            loss: loss.mean,
        });

        if step % config.eval_every == 0 {
            let report = evaluate(student, dev)?;
            let better = history
                .best
                .as_ref()
                .is_none_or(|b| report.spearman > b.spearman);
            if better {
                history.best = Some(BestCheckpoint {
                    step,
                    spearman: report.spearman,
                    params: student.clone(),
                });
            }
            history.evals.push(EvalRecord { step, report });
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests;
