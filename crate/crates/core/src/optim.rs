//! Training mechanics shared by the scorer and the judge: adaptive-moment
//! updates with decoupled weight decay, cosine learning-rate schedule with
//! linear warmup, global-norm gradient clipping, and gradient accumulation.
//!
//! Frozen parameters (trainable mask false) receive neither the gradient
//! update nor weight decay, which is what keeps adapter base matrices
//! bit-identical across steps.

use crate::params::ParamVec;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// The update-rule family is fixed (adaptive moments, decoupled decay);
    /// the base learning rate is a free choice for this model scale.
    pub base_lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            warmup_ratio: 0.1,
            weight_decay: 0.01,
            max_grad_norm: 0.5,
            batch_size: 4,
            grad_accum_steps: 8,
            epochs: 3,
            seed: 42,
        }
    }
}

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient encountered ({context})")]
    NonFiniteGradient { context: String },
    #[error("non-finite parameter after update ({context})")]
    NonFiniteParam { context: String },
}

/// Optimizer steps one run will take: epochs x ceil(n / (batch x accum)).
pub fn total_steps(n_examples: usize, cfg: &OptimizerConfig) -> usize {
    let macro_batch = cfg.batch_size * cfg.grad_accum_steps;
    assert!(macro_batch > 0, "batch size and accumulation must be positive");
    cfg.epochs * n_examples.div_ceil(macro_batch)
}

/// Learning rate at an optimizer step: linear warmup from 0 to `base_lr`
/// over `warmup_ratio * total_steps`, then cosine decay to 0.
pub fn lr_at(step: usize, total_steps: usize, cfg: &OptimizerConfig) -> f64 {
    assert!(total_steps >= 1, "total_steps must be at least 1");
    assert!(step <= total_steps, "step beyond schedule end");
    let warmup = (cfg.warmup_ratio * total_steps as f64).floor() as usize;
    if step < warmup {
        return cfg.base_lr * step as f64 / warmup as f64;
    }
    let denom = (total_steps - warmup).max(1) as f64;
    let progress = (step - warmup) as f64 / denom;
    cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Scale gradients so the global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut [f64], max_norm: f64) -> Result<f64, OptimError> {
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient { context: "before clipping".into() });
    }
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    Ok(norm)
}

/// First and second moment buffers plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One adaptive-moment update with decoupled weight decay. Frozen entries
/// are skipped entirely.
pub fn adamw_step(
    params: &mut ParamVec,
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<(), OptimError> {
    assert_eq!(grads.len(), params.len(), "gradient length mismatch");
    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    for i in 0..params.len() {
        if !params.trainable[i] {
            continue;
        }
        let g = grads[i];
        if !g.is_finite() {
            return Err(OptimError::NonFiniteGradient { context: format!("index {i}") });
        }
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        let p = params.values[i];
        let next = p - lr * (m_hat / (v_hat.sqrt() + EPS) + cfg.weight_decay * p);
        if !next.is_finite() {
            return Err(OptimError::NonFiniteParam { context: format!("index {i}") });
        }
        params.values[i] = next;
    }
    Ok(())
}

/// Generic epoch/accumulation loop shared by the scorer and judge trainers.
///
/// `batch_grad(params, example_indices, grad_buf)` must add the mean
/// gradient over the given examples into `grad_buf` and return the mean
/// loss. The loop averages micro-batch gradients within each macro step,
/// clips, schedules, and applies the optimizer update. Returns the
/// per-epoch mean loss curve.
pub fn train_loop<E, F>(
    params: &mut ParamVec,
    n_examples: usize,
    cfg: &OptimizerConfig,
    rng: &mut ChaCha8Rng,
    mut batch_grad: F,
) -> Result<Vec<f64>, E>
where
    E: From<OptimError>,
    F: FnMut(&ParamVec, &[usize], &mut [f64]) -> Result<f64, E>,
{
    assert!(n_examples > 0, "empty training set");
    let total = total_steps(n_examples, cfg);
    let macro_batch = cfg.batch_size * cfg.grad_accum_steps;
    let mut state = AdamState::new(params.len());
    let mut step_idx = 0usize;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n_examples).collect();
    let mut acc = vec![0.0; params.len()];
    let mut micro = vec![0.0; params.len()];
    for _epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in order.chunks(macro_batch) {
            acc.iter_mut().for_each(|g| *g = 0.0);
            let mut micro_count = 0usize;
            for mb in chunk.chunks(cfg.batch_size) {
                micro.iter_mut().for_each(|g| *g = 0.0);
                let loss = batch_grad(params, mb, &mut micro)?;
                epoch_loss += loss;
                epoch_batches += 1;
                for (a, g) in acc.iter_mut().zip(&micro) {
                    *a += g;
                }
                micro_count += 1;
            }
            let inv = 1.0 / micro_count as f64;
            acc.iter_mut().for_each(|g| *g *= inv);
            clip_gradients(&mut acc, cfg.max_grad_norm).map_err(E::from)?;
            let lr = lr_at(step_idx, total, cfg);
            adamw_step(params, &acc, &mut state, lr, cfg).map_err(E::from)?;
            step_idx += 1;
        }
        curve.push(epoch_loss / epoch_batches as f64);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Layout;
    use crate::rng::seeded_rng;
    use approx::assert_relative_eq;

    fn cfg() -> OptimizerConfig {
        OptimizerConfig::default()
    }

    #[test]
    fn defaults_match_documented_values() {
        let c = cfg();
        assert_eq!(c.warmup_ratio, 0.1);
        assert_eq!(c.weight_decay, 0.01);
        assert_eq!(c.max_grad_norm, 0.5);
        assert_eq!(c.batch_size, 4);
        assert_eq!(c.grad_accum_steps, 8);
        assert_eq!(c.epochs, 3);
        assert_eq!(c.seed, 42);
    }

    #[test]
    fn lr_schedule_endpoints() {
        let c = cfg();
        assert_eq!(lr_at(0, 100, &c), 0.0);
        assert_relative_eq!(lr_at(10, 100, &c), c.base_lr, max_relative = 1e-12);
        // Midpoint of the cosine segment: warmup 10, remaining 90, step 55.
        assert_relative_eq!(lr_at(55, 100, &c), 0.5 * c.base_lr, max_relative = 1e-12);
        assert!(lr_at(100, 100, &c).abs() < 1e-15);
    }

    #[test]
    fn lr_schedule_continuous_at_warmup_boundary() {
        let c = cfg();
        let before = lr_at(9, 100, &c);
        let at = lr_at(10, 100, &c);
        assert!(at >= before);
        assert_relative_eq!(at, c.base_lr, max_relative = 1e-12);
        assert_relative_eq!(before, 0.9 * c.base_lr, max_relative = 1e-12);
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let mut g = vec![0.3, 0.0, 0.0];
        let norm = clip_gradients(&mut g, 0.5).unwrap();
        assert_relative_eq!(norm, 0.3, max_relative = 1e-12);
        assert_eq!(g, vec![0.3, 0.0, 0.0]);
    }

    #[test]
    fn clip_scales_to_max_norm_and_preserves_direction() {
        let mut g = vec![0.6, 0.8];
        clip_gradients(&mut g, 0.5).unwrap();
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert_relative_eq!(norm, 0.5, max_relative = 1e-9);
        // Direction preserved: components keep their 3:4 ratio.
        assert_relative_eq!(g[0] / g[1], 0.75, max_relative = 1e-9);
    }

    #[test]
    fn clip_rejects_non_finite() {
        let mut g = vec![f64::NAN];
        assert!(clip_gradients(&mut g, 0.5).is_err());
    }

    fn scalar_params(x: f64) -> ParamVec {
        let mut l = Layout::new();
        l.register("x", 1, 1);
        let mut p = ParamVec::zeros(l);
        p.values[0] = x;
        p
    }

    #[test]
    fn single_step_matches_hand_derived_update() {
        // f(x) = x^2 at x = 1: g = 2. Independent arithmetic of the same
        // update equations, written out rather than calling adamw_step.
        let c = cfg();
        let lr = 1e-3;
        let g = 2.0;
        let m = (1.0 - BETA1) * g;
        let v = (1.0 - BETA2) * g * g;
        let m_hat = m / (1.0 - BETA1);
        let v_hat = v / (1.0 - BETA2);
        let expected = 1.0 - lr * (m_hat / (v_hat.sqrt() + EPS) + c.weight_decay * 1.0);

        let mut p = scalar_params(1.0);
        let mut st = AdamState::new(1);
        adamw_step(&mut p, &[2.0], &mut st, lr, &c).unwrap();
        assert_relative_eq!(p.values[0], expected, max_relative = 1e-15);
        assert_relative_eq!(p.values[0], 0.998990000005, max_relative = 1e-9);
    }

    #[test]
    fn zero_grad_zero_decay_leaves_params_unchanged() {
        let mut c = cfg();
        c.weight_decay = 0.0;
        let mut p = scalar_params(0.7);
        let mut st = AdamState::new(1);
        adamw_step(&mut p, &[0.0], &mut st, 1e-3, &c).unwrap();
        assert_eq!(p.values[0], 0.7);
    }

    #[test]
    fn zero_grad_decay_shrinks_by_decoupled_factor() {
        let c = cfg();
        let mut p = scalar_params(0.7);
        let mut st = AdamState::new(1);
        let lr = 1e-3;
        adamw_step(&mut p, &[0.0], &mut st, lr, &c).unwrap();
        assert_relative_eq!(
            p.values[0],
            0.7 * (1.0 - lr * c.weight_decay),
            max_relative = 1e-12
        );
    }

    #[test]
    fn frozen_params_receive_no_update_or_decay() {
        let c = cfg();
        let mut p = scalar_params(0.7);
        p.set_trainable("x", false);
        let mut st = AdamState::new(1);
        adamw_step(&mut p, &[5.0], &mut st, 1e-3, &c).unwrap();
        assert_eq!(p.values[0], 0.7);
    }

    #[test]
    fn total_steps_accounting() {
        let c = cfg();
        // 720 examples, macro batch 32 -> ceil = 23 per epoch, 3 epochs.
        assert_eq!(total_steps(720, &c), 69);
        assert_eq!(total_steps(1, &c), 3);
    }

    /// Quadratic objective over a small parameter vector; mean gradient.
    fn quad_grad(p: &ParamVec, idx: &[usize], grad: &mut [f64], data: &[f64]) -> f64 {
        let mut loss = 0.0;
        for &i in idx {
            let d = data[i];
            for (k, pk) in p.values.iter().enumerate() {
                let r = pk - d;
                loss += r * r;
                grad[k] += 2.0 * r / idx.len() as f64;
            }
        }
        loss / idx.len() as f64
    }

    #[test]
    fn accumulation_equivalence() {
        // (batch 4, accum 8) must equal (batch 32, accum 1) on identical
        // data order; n divisible by 32 keeps micro-batches full.
        let data: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let run = |batch: usize, accum: usize| -> Vec<f64> {
            let mut l = Layout::new();
            l.register("w", 1, 3);
            let mut p = ParamVec::zeros(l);
            p.values.copy_from_slice(&[0.5, -0.2, 0.9]);
            let mut c = cfg();
            c.batch_size = batch;
            c.grad_accum_steps = accum;
            c.epochs = 2;
            let mut rng = seeded_rng(7, "accum-equivalence");
            let d = data.clone();
            let _curve: Vec<f64> = train_loop::<OptimError, _>(
                &mut p,
                d.len(),
                &c,
                &mut rng,
                |p, idx, g| Ok(quad_grad(p, idx, g, &d)),
            )
            .unwrap();
            p.values
        };
        let a = run(4, 8);
        let b = run(32, 1);
        let dist: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(dist < 1e-6, "parameter distance {dist} exceeds 1e-6");
    }

    #[test]
    fn train_loop_reduces_quadratic_loss() {
        let data: Vec<f64> = vec![0.25; 40];
        let mut l = Layout::new();
        l.register("w", 1, 2);
        let mut p = ParamVec::zeros(l);
        p.values.copy_from_slice(&[1.0, -1.0]);
        let mut c = cfg();
        c.epochs = 10;
        c.base_lr = 0.05;
        let mut rng = seeded_rng(7, "loss-decreases");
        let curve: Vec<f64> = train_loop::<OptimError, _>(
            &mut p,
            data.len(),
            &c,
            &mut rng,
            |p, idx, g| Ok(quad_grad(p, idx, g, &data)),
        )
        .unwrap();
        assert!(curve.last().unwrap() < curve.first().unwrap());
    }
}
