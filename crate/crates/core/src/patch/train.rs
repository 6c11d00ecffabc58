use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor2;
use crate::patch::block::{InitStrategy, VirtualTokenBlock, INIT_TEXT_FULL};
use crate::prompt::{assemble, DetectionMode, PromptTemplate, TokenSequence};
use crate::toyvlm::model::Model;
use crate::toyvlm::scene::Scene;
use crate::util::derive_seed;
use crate::world::{question_tokens, QASample, SceneDetections};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd,
    AdamW { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd
    }
}

/// Hyperparameters for one block-tuning run. `epochs` is the total schedule
/// length; resuming a block that already trained `e` epochs runs the
/// remaining `epochs - e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n: usize,
    pub template: PromptTemplate,
    pub det_mode: DetectionMode,
    pub init: InitStrategy,
    pub lr_init: f64,
    pub lr_floor: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n: 20,
            template: PromptTemplate::PatchStandard,
            det_mode: DetectionMode::Category,
            init: InitStrategy::Text(INIT_TEXT_FULL.to_string()),
            lr_init: 2e-3,
            lr_floor: 5e-6,
            weight_decay: 0.05,
            epochs: 30,
            batch_size: 1,
            optimizer: Optimizer::Sgd,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Error::Config(m);
        if self.n == 0 {
            return Err(bad("block needs at least one virtual token to train".into()));
        }
        if !self.template.takes_virtual() {
            return Err(bad(format!(
                "template {} has no slot for virtual tokens",
                self.template
            )));
        }
        for (name, x) in [("lr_init", self.lr_init), ("lr_floor", self.lr_floor)] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(bad(format!("{name} = {x} must be finite and non-negative")));
            }
        }
        if self.lr_floor > self.lr_init {
            return Err(bad(format!(
                "lr_floor {} exceeds lr_init {}",
                self.lr_floor, self.lr_init
            )));
        }
        if !(self.weight_decay.is_finite() && (0.0..1.0).contains(&self.weight_decay)) {
            return Err(bad(format!(
                "weight_decay {} must sit in [0, 1)",
                self.weight_decay
            )));
        }
        if self.epochs == 0 {
            return Err(bad("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size must be positive".into()));
        }
        if let Optimizer::AdamW { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(bad(format!(
                    "adamw parameters ({beta1}, {beta2}, {eps}) out of range"
                )));
            }
        }
        Ok(())
    }
}

/// Cosine decay over `total` steps with exact endpoints: step 0 yields
/// `init`, step `total - 1` yields `floor`.
pub fn cosine_lr(step: usize, total: usize, init: f64, floor: f64) -> f64 {
    if total <= 1 || step == 0 {
        return init;
    }
    let s = step.min(total - 1) as f64;
    let t = (total - 1) as f64;
    floor + 0.5 * (init - floor) * (1.0 + (std::f64::consts::PI * s / t).cos())
}

/// One supervised sample: encoded scene features plus the full prompt with
/// the answer tokens appended.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub features: Tensor2,
    pub seq: TokenSequence,
}

/// Assembles supervised examples for a slice of the question set. Scene
/// features are encoded once per scene. Detections are looked up by scene id
/// and ignored for templates that take none.
pub fn prepare_examples(
    model: &Model,
    qa: &[QASample],
    scenes: &[Scene],
    dets: &[SceneDetections],
    template: PromptTemplate,
    mode: DetectionMode,
    virtual_count: usize,
) -> Result<Vec<TrainExample>> {
    let scene_by_id: HashMap<u64, &Scene> = scenes.iter().map(|s| (s.id, s)).collect();
    let dets_by_id: HashMap<u64, &SceneDetections> =
        dets.iter().map(|d| (d.scene_id, d)).collect();
    let mut features_cache: HashMap<u64, Tensor2> = HashMap::new();
    let slots = model.cfg().image_slots();
    let empty = Vec::new();
    let mut out = Vec::with_capacity(qa.len());
    for sample in qa {
        let scene = scene_by_id.get(&sample.scene_id).ok_or_else(|| {
            Error::Eval(format!("sample {} references unknown scene {}", sample.id, sample.scene_id))
        })?;
        let det_list = if template.takes_detections() && mode != DetectionMode::None {
            &dets_by_id
                .get(&sample.scene_id)
                .ok_or_else(|| {
                    Error::Eval(format!("scene {} has no detections", sample.scene_id))
                })?
                .outcome
                .detections
        } else {
            &empty
        };
        let features = match features_cache.get(&sample.scene_id) {
            Some(f) => f.clone(),
            None => {
                let f = model.encode_scene(scene)?;
                features_cache.insert(sample.scene_id, f.clone());
                f
            }
        };
        let question = question_tokens(sample.category, model.vocab())?;
        let answer = sample.label.token_id(model.vocab());
        let seq = assemble(
            template,
            slots,
            det_list,
            mode,
            &question,
            virtual_count,
            model.vocab(),
            Some(answer),
        )?;
        out.push(TrainExample { features, seq });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean answer loss per epoch run by this call, in order.
    pub epoch_losses: Vec<f64>,
    /// Optimizer steps taken across the whole schedule so far.
    pub steps_total: usize,
    /// Epochs completed across the whole schedule so far.
    pub epochs_done: usize,
    pub final_loss: f64,
}

/// Tunes the block against the frozen model. Only the block moves: the
/// update is `delta <- (1 - wd / total_steps) * delta - lr_step * grad`,
/// with the learning rate on a cosine schedule over all scheduled steps.
/// The backbone hash is taken before and checked after.
pub fn train(
    model: &Model,
    block: &mut VirtualTokenBlock,
    examples: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Train("no training examples".into()));
    }
    if block.n() != cfg.n {
        return Err(Error::Train(format!(
            "block has {} rows, config says {}",
            block.n(),
            cfg.n
        )));
    }
    if block.dim() != model.cfg().dim {
        return Err(Error::Train(format!(
            "block dim {} does not match model dim {}",
            block.dim(),
            model.cfg().dim
        )));
    }
    let hash_before = model.params_hash();
    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let shrink = 1.0 - cfg.weight_decay / total_steps as f64;
    let start_epoch = block.trained_epochs();
    if start_epoch >= cfg.epochs {
        return Ok(TrainReport {
            epoch_losses: vec![],
            steps_total: start_epoch * steps_per_epoch,
            epochs_done: start_epoch,
            final_loss: f64::NAN,
        });
    }

    let (n, dim) = (block.n(), block.dim());
    let mut moment1 = Tensor2::zeros(n, dim);
    let mut moment2 = Tensor2::zeros(n, dim);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs - start_epoch);
    let mut step = start_epoch * steps_per_epoch;
    for epoch in start_epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, &format!("epoch/{epoch}")));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let lr = cosine_lr(step, total_steps, cfg.lr_init, cfg.lr_floor);
            let mut grad = Tensor2::zeros(n, dim);
            for &i in chunk {
                let ex = &examples[i];
                let mut fp = model.forward(&ex.features, &ex.seq, Some(block.matrix()))?;
                let loss_id = fp.add_answer_loss(&ex.seq)?;
                let loss = fp.tape.value(loss_id).data()[0];
                if !loss.is_finite() {
                    return Err(Error::Train(format!(
                        "non-finite loss {loss} at step {step} (epoch {epoch}, lr {lr:.3e}); \
                         lower the learning rate"
                    )));
                }
                epoch_loss += loss;
                grad.add_scaled_assign(&fp.backward_virtual(loss_id)?, 1.0)?;
            }
            grad.scale_assign(1.0 / chunk.len() as f64);
            block.matrix_mut().scale_assign(shrink);
            match cfg.optimizer {
                Optimizer::Sgd => {
                    block.matrix_mut().add_scaled_assign(&grad, -lr)?;
                }
                Optimizer::AdamW { beta1, beta2, eps } => {
                    let t = (step + 1) as f64;
                    let (c1, c2) = (1.0 - beta1.powf(t), 1.0 - beta2.powf(t));
                    let m = moment1.data_mut();
                    let v = moment2.data_mut();
                    let g = grad.data();
                    let d = block.matrix_mut().data_mut();
                    for i in 0..g.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        d[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
            step += 1;
        }
        epoch_losses.push(epoch_loss / examples.len() as f64);
    }
    block.set_trained_epochs(cfg.epochs);

    if model.params_hash() != hash_before {
        return Err(Error::Train(
            "backbone parameters changed during block tuning".into(),
        ));
    }
    let final_loss = *epoch_losses.last().expect("ran at least one epoch");
    Ok(TrainReport {
        epoch_losses,
        steps_total: step,
        epochs_done: cfg.epochs,
        final_loss,
    })
}
