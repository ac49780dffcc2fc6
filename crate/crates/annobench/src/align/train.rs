//! Alternating adversarial training with an in-module adaptive-moment
//! optimizer. Deterministic given the seed; single-threaded.

use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{add_scaled, discriminator, generator, reconstruction};
use super::model::{AlignmentModel, Family};
use super::{AlignError, PairedCell};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub step_size: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub seed: u64,
    pub disc_steps_per_gen_step: usize,
    pub sample_with_replacement: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            step_size: 1e-3,
            steps: 1000,
            batch_size: 16,
            gamma: 1.0,
            seed: 0,
            disc_steps_per_gen_step: 1,
            sample_with_replacement: false,
        }
    }
}

/// Per-step objective values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub rec: f64,
    pub dis: f64,
    pub gen: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First/second moment state for one update family.
struct AdamState {
    m: AlignmentModel,
    v: AlignmentModel,
    t: u64,
}

impl AdamState {
    fn new(model: &AlignmentModel) -> Self {
        AdamState {
            m: model.zeroed_like(),
            v: model.zeroed_like(),
            t: 0,
        }
    }

    fn update(
        &mut self,
        model: &mut AlignmentModel,
        grads: &AlignmentModel,
        family: Family,
        step_size: f64,
    ) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        let g_blocks: Vec<Vec<f64>> = grads.blocks().into_iter().map(|(_, b)| b.clone()).collect();
        let mut m_blocks = self.m.blocks_mut();
        let mut v_blocks = self.v.blocks_mut();
        for (bi, (fam, params)) in model.blocks_mut().into_iter().enumerate() {
            if fam != family {
                continue;
            }
            let g = &g_blocks[bi];
            let m = &mut m_blocks[bi].1;
            let v = &mut v_blocks[bi].1;
            for i in 0..params.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] -= step_size * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

fn class_indices(data: &[PairedCell], n_classes: usize) -> Result<Vec<Vec<usize>>, AlignError> {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, c) in data.iter().enumerate() {
        if c.label >= n_classes {
            return Err(AlignError::BadInput(format!(
                "label {} out of range for {} classes",
                c.label, n_classes
            )));
        }
        by_class[c.label].push(i);
    }
    Ok(by_class)
}

fn sample_batch(
    rng: &mut ChaCha8Rng,
    pool: &[usize],
    batch_size: usize,
    with_replacement: bool,
) -> Vec<usize> {
    if with_replacement {
        (0..batch_size).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
    } else {
        index_sample(rng, pool.len(), batch_size)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    }
}

/// Stepwise trainer holding optimizer moments and the sampling RNG, so
/// callers can interleave evaluation with training. Feed it the same `data`
/// slice every step.
pub struct TrainDriver {
    cfg: TrainConfig,
    rng: ChaCha8Rng,
    gen_opt: AdamState,
    disc_opt: AdamState,
    by_class: Vec<Vec<usize>>,
    step: usize,
}

impl TrainDriver {
    pub fn new(
        model: &AlignmentModel,
        data: &[PairedCell],
        cfg: TrainConfig,
    ) -> Result<Self, AlignError> {
        if data.is_empty() {
            return Err(AlignError::EmptyBatch);
        }
        if cfg.batch_size == 0 {
            return Err(AlignError::BadInput("batch_size must be positive".to_string()));
        }
        let by_class = class_indices(data, model.dims.n_classes)?;
        for (k, pool) in by_class.iter().enumerate() {
            if pool.is_empty() || (!cfg.sample_with_replacement && pool.len() < cfg.batch_size) {
                return Err(AlignError::ClassTooSmall {
                    class: k,
                    have: pool.len(),
                    need: cfg.batch_size,
                });
            }
        }
        Ok(TrainDriver {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            gen_opt: AdamState::new(model),
            disc_opt: AdamState::new(model),
            by_class,
            cfg,
            step: 0,
        })
    }

    /// One alternating update: `disc_steps_per_gen_step` discriminator steps
    /// on fresh per-class batches, then one generator step minimizing
    /// reconstruction plus `gamma` times the class-averaged generator
    /// objective.
    pub fn step(
        &mut self,
        model: &mut AlignmentModel,
        data: &[PairedCell],
    ) -> Result<LossRecord, AlignError> {
        let n_classes = model.dims.n_classes as f64;
        let cfg = self.cfg;
        let mut dis_loss = 0.0;
        for _ in 0..cfg.disc_steps_per_gen_step {
            let mut total = model.zeroed_like();
            let mut loss_acc = 0.0;
            for (k, pool) in self.by_class.iter().enumerate() {
                let idx =
                    sample_batch(&mut self.rng, pool, cfg.batch_size, cfg.sample_with_replacement);
                let batch: Vec<&PairedCell> = idx.iter().map(|&i| &data[i]).collect();
                let (loss, grads) = discriminator(model, &batch, k, true)?;
                loss_acc += loss / n_classes;
                add_scaled(&mut total, &grads.unwrap(), 1.0 / n_classes);
            }
            self.disc_opt
                .update(model, &total, Family::Discriminator, cfg.step_size);
            dis_loss = loss_acc;
        }

        // generator phase: reconstruction over the stratified union batch
        // plus the class-averaged adversarial/cycle objective
        let mut union: Vec<&PairedCell> = Vec::new();
        let mut per_class: Vec<Vec<&PairedCell>> = Vec::new();
        for pool in &self.by_class {
            let idx =
                sample_batch(&mut self.rng, pool, cfg.batch_size, cfg.sample_with_replacement);
            let batch: Vec<&PairedCell> = idx.iter().map(|&i| &data[i]).collect();
            union.extend(batch.iter().copied());
            per_class.push(batch);
        }
        let (rec_loss, rec_grads) = reconstruction(model, &union, true)?;
        let mut total = rec_grads.unwrap();
        let mut gen_loss = 0.0;
        for (k, batch) in per_class.iter().enumerate() {
            let (loss, grads) = generator(model, batch, k, true)?;
            gen_loss += loss / n_classes;
            add_scaled(&mut total, &grads.unwrap(), cfg.gamma / n_classes);
        }
        self.gen_opt
            .update(model, &total, Family::Generator, cfg.step_size);

        if !rec_loss.is_finite() || !dis_loss.is_finite() || !gen_loss.is_finite() {
            return Err(AlignError::Diverged { step: self.step });
        }
        let record = LossRecord {
            step: self.step,
            rec: rec_loss,
            dis: dis_loss,
            gen: gen_loss,
        };
        self.step += 1;
        Ok(record)
    }
}

/// Run `cfg.steps` alternating updates and return the loss history.
pub fn train(
    model: &mut AlignmentModel,
    data: &[PairedCell],
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>, AlignError> {
    let mut driver = TrainDriver::new(model, data, *cfg)?;
    let mut history = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        history.push(driver.step(model, data)?);
    }
    Ok(history)
}
