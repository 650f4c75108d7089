//! Learning-rate schedules and per-stage optimizer/hyperparameter records.
//!
//! The schedule math is generic over the scalar type; presets use `f64`.

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seqpack::BatchSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleShape {
    Cosine,
}

/// Cosine-decay schedule with optional linear warmup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec<F: Float = f64> {
    pub peak_lr: F,
    pub min_lr: F,
    pub total_steps: u64,
    /// Fraction of total_steps spent in linear warmup, in [0, 1).
    pub warmup_fraction: F,
    pub shape: ScheduleShape,
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("step {step} outside [0, {total}]")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("invalid schedule: {0}")]
    Invalid(String),
}

impl<F: Float> ScheduleSpec<F> {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.min_lr > F::zero() && self.min_lr <= self.peak_lr) {
            return Err(ScheduleError::Invalid("need 0 < min_lr <= peak_lr".into()));
        }
        if self.total_steps == 0 {
            return Err(ScheduleError::Invalid("total_steps must be positive".into()));
        }
        if !(self.warmup_fraction >= F::zero() && self.warmup_fraction < F::one()) {
            return Err(ScheduleError::Invalid("warmup_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> u64 {
        let total = F::from(self.total_steps).unwrap();
        (self.warmup_fraction * total).round().to_u64().unwrap()
    }
}

/// Learning rate at a step: linear warmup from 0 to peak over the warmup
/// span, then cosine decay min + (peak - min) * (1 + cos(pi * t)) / 2 with
/// t the progress through the decay span. Exact at both endpoints:
/// lr(warmup_end) = peak, lr(total_steps) = min.
pub fn lr_at<F: Float>(spec: &ScheduleSpec<F>, step: u64) -> Result<F, ScheduleError> {
    spec.validate()?;
    if step > spec.total_steps {
        return Err(ScheduleError::StepOutOfRange {
            step,
            total: spec.total_steps,
        });
    }
    let warmup = spec.warmup_steps();
    if step < warmup {
        let progress = F::from(step).unwrap() / F::from(warmup).unwrap();
        return Ok(spec.peak_lr * progress);
    }
    let decay_span = spec.total_steps - warmup;
    if decay_span == 0 {
        return Ok(spec.min_lr);
    }
    let t = F::from(step - warmup).unwrap() / F::from(decay_span).unwrap();
    let two = F::from(2.0).unwrap();
    let cos = (F::from(std::f64::consts::PI).unwrap() * t).cos();
    Ok(spec.min_lr + (spec.peak_lr - spec.min_lr) * (F::one() + cos) / two)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    AdamW,
    RmsProp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec<F: Float = f64> {
    pub kind: OptimizerKind,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    pub weight_decay: F,
    /// DPO loss temperature; recorded here because the artifact records
    /// configs, not the DPO objective.
    pub dpo_beta: Option<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageName {
    Pretrain,
    LongContext,
    Sft,
    Dpo,
}

/// Batch geometry: token-denominated for pretraining stages,
/// sequence-count for alignment stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageBatch {
    Tokens(BatchSpec),
    Sequences(u64),
}

/// Full per-stage record: schedule, optimizer, context and rotary base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig<F: Float = f64> {
    pub name: StageName,
    pub schedule: ScheduleSpec<F>,
    pub optimizer: OptimizerSpec<F>,
    pub seq_len: u64,
    pub rotary_base: F,
    pub batch: StageBatch,
    pub epochs: Option<u64>,
    /// Fields not stated by the published record, filled by convention.
    pub inferred_fields: Vec<String>,
}

fn adamw<F: Float>() -> OptimizerSpec<F> {
    OptimizerSpec {
        kind: OptimizerKind::AdamW,
        beta1: F::from(0.9).unwrap(),
        beta2: F::from(0.95).unwrap(),
        epsilon: F::from(1e-6).unwrap(),
        weight_decay: F::from(0.1).unwrap(),
        dpo_beta: None,
    }
}

/// The four training-stage presets.
///
/// Stated numbers: stage-1 lr 3.2e-4 -> 3.2e-5; long-context lr 2e-5 ->
/// 1.28e-5 over 20,000 steps with rotary base 1e6; SFT peak 5e-5, 10%
/// warmup, 3 epochs, 512-sequence batches; DPO RMSProp, peak 5e-7, 10%
/// warmup, beta 0.01. Everything else is convention and listed in
/// `inferred_fields`.
pub fn stage_presets<F: Float>() -> Vec<StageConfig<F>> {
    let f = |v: f64| F::from(v).unwrap();
    // Stage-1 step count derived from the token budget, not stated.
    let pretrain_steps = derive_total_steps(1_322_090_182_830, 4_194_304);
    vec![
        StageConfig {
            name: StageName::Pretrain,
            schedule: ScheduleSpec {
                peak_lr: f(3.2e-4),
                min_lr: f(3.2e-5),
                total_steps: pretrain_steps,
                warmup_fraction: F::zero(),
                shape: ScheduleShape::Cosine,
            },
            optimizer: adamw(),
            seq_len: 4096,
            rotary_base: f(10_000.0),
            batch: StageBatch::Tokens(BatchSpec::new(256, 4, 1, 4096)),
            epochs: None,
            inferred_fields: vec![
                "warmup_fraction=0".into(),
                "rotary_base=10000".into(),
                "total_steps derived from token budget / tokens_per_step".into(),
            ],
        },
        StageConfig {
            name: StageName::LongContext,
            schedule: ScheduleSpec {
                peak_lr: f(2e-5),
                min_lr: f(1.28e-5),
                total_steps: 20_000,
                warmup_fraction: F::zero(),
                shape: ScheduleShape::Cosine,
            },
            optimizer: adamw(),
            seq_len: 16_384,
            rotary_base: f(1_000_000.0),
            batch: StageBatch::Tokens(BatchSpec::new(256, 4, 1, 16_384)),
            epochs: None,
            inferred_fields: vec![
                "warmup_fraction=0".into(),
                "batch spec (256,4,1,16384) reconciles 20k steps with ~300B tokens".into(),
            ],
        },
        StageConfig {
            name: StageName::Sft,
            schedule: ScheduleSpec {
                peak_lr: f(5e-5),
                min_lr: f(5e-6),
                total_steps: 3_000,
                warmup_fraction: f(0.10),
                shape: ScheduleShape::Cosine,
            },
            optimizer: adamw(),
            seq_len: 4096,
            rotary_base: f(1_000_000.0),
            batch: StageBatch::Sequences(512),
            epochs: Some(3),
            inferred_fields: vec![
                "min_lr=peak/10".into(),
                "total_steps nominal (depends on dataset size)".into(),
                "rotary_base carried over from long-context stage".into(),
            ],
        },
        StageConfig {
            name: StageName::Dpo,
            schedule: ScheduleSpec {
                peak_lr: f(5e-7),
                min_lr: f(5e-8),
                total_steps: 1_000,
                warmup_fraction: f(0.10),
                shape: ScheduleShape::Cosine,
            },
            optimizer: OptimizerSpec {
                kind: OptimizerKind::RmsProp,
                beta1: f(0.9),
                beta2: f(0.999),
                epsilon: f(1e-8),
                weight_decay: F::zero(),
                dpo_beta: Some(f(0.01)),
            },
            seq_len: 4096,
            rotary_base: f(1_000_000.0),
            batch: StageBatch::Sequences(512),
            epochs: None,
            inferred_fields: vec![
                "min_lr=peak/10".into(),
                "total_steps nominal".into(),
                "RMSProp betas/epsilon conventional".into(),
                "batch size carried over from SFT".into(),
            ],
        },
    ]
}

/// Steps needed to consume a token budget at a fixed tokens-per-step,
/// rounded up.
pub fn derive_total_steps(token_budget: u64, tokens_per_step: u64) -> u64 {
    token_budget.div_ceil(tokens_per_step)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stage1() -> ScheduleSpec {
        ScheduleSpec {
            peak_lr: 3.2e-4,
            min_lr: 3.2e-5,
            total_steps: 10_000,
            warmup_fraction: 0.0,
            shape: ScheduleShape::Cosine,
        }
    }

    #[test]
    fn stage1_endpoints() {
        let spec = stage1();
        assert_eq!(lr_at(&spec, 0).unwrap(), 3.2e-4);
        assert_eq!(lr_at(&spec, spec.total_steps).unwrap(), 3.2e-5);
    }

    #[test]
    fn decay_midpoint_is_arithmetic_mean() {
        let spec = stage1();
        let mid = lr_at(&spec, spec.total_steps / 2).unwrap();
        assert!((mid - 1.76e-4).abs() < 1e-12, "{mid}");
    }

    #[test]
    fn sft_warmup_reaches_peak_exactly() {
        let spec: ScheduleSpec = ScheduleSpec {
            peak_lr: 5e-5,
            min_lr: 5e-6,
            total_steps: 1000,
            warmup_fraction: 0.10,
            shape: ScheduleShape::Cosine,
        };
        assert_eq!(lr_at(&spec, 100).unwrap(), 5e-5);
        // linear on the way up
        assert!((lr_at(&spec, 50).unwrap() - 2.5e-5).abs() < 1e-18);
    }

    #[test]
    fn monotone_nonincreasing_after_warmup_and_continuous() {
        let spec: ScheduleSpec = ScheduleSpec {
            peak_lr: 1e-3,
            min_lr: 1e-5,
            total_steps: 5000,
            warmup_fraction: 0.2,
            shape: ScheduleShape::Cosine,
        };
        let warmup = spec.warmup_steps();
        let mut prev = lr_at(&spec, warmup).unwrap();
        assert_eq!(prev, spec.peak_lr);
        for step in warmup + 1..=spec.total_steps {
            let lr = lr_at(&spec, step).unwrap();
            assert!(lr <= prev, "step {step}");
            prev = lr;
        }
        // junction continuity: last warmup step is within one warmup
        // increment of the peak
        let before = lr_at(&spec, warmup - 1).unwrap();
        assert!((spec.peak_lr - before) <= spec.peak_lr / warmup as f64 + 1e-15);
    }

    #[test]
    fn step_out_of_range_rejected() {
        assert!(matches!(
            lr_at(&stage1(), 10_001),
            Err(ScheduleError::StepOutOfRange { .. })
        ));
    }

    #[test]
    fn generic_over_scalar() {
        let spec: ScheduleSpec<f32> = ScheduleSpec {
            peak_lr: 3.2e-4,
            min_lr: 3.2e-5,
            total_steps: 100,
            warmup_fraction: 0.0,
            shape: ScheduleShape::Cosine,
        };
        assert_eq!(lr_at(&spec, 100).unwrap(), 3.2e-5f32);
    }

    #[test]
    fn presets_carry_the_published_numbers() {
        let presets = stage_presets::<f64>();
        let by_name = |n| presets.iter().find(|p| p.name == n).unwrap();
        let long = by_name(StageName::LongContext);
        assert_eq!(long.schedule.peak_lr, 2e-5);
        assert_eq!(long.schedule.min_lr, 1.28e-5);
        assert_eq!(long.rotary_base, 1_000_000.0);
        assert_eq!(long.schedule.total_steps, 20_000);
        let dpo = by_name(StageName::Dpo);
        assert_eq!(dpo.optimizer.kind, OptimizerKind::RmsProp);
        assert_eq!(dpo.optimizer.dpo_beta, Some(0.01));
        assert_eq!(dpo.schedule.peak_lr, 5e-7);
        let pre = by_name(StageName::Pretrain);
        assert_eq!(pre.optimizer.kind, OptimizerKind::AdamW);
        assert_eq!(
            (pre.optimizer.beta1, pre.optimizer.beta2, pre.optimizer.epsilon, pre.optimizer.weight_decay),
            (0.9, 0.95, 1e-6, 0.1)
        );
        let sft = by_name(StageName::Sft);
        assert_eq!(sft.batch, StageBatch::Sequences(512));
        assert_eq!(sft.epochs, Some(3));
    }

    #[test]
    fn presets_serialize_losslessly() {
        let presets = stage_presets::<f64>();
        let json = serde_json::to_string(&presets).unwrap();
        let back: Vec<StageConfig<f64>> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, presets);
    }
}
