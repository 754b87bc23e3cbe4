use super::loss::{mixup, total_loss};
use super::metrics::{argmax, Metrics};
use super::{Result, TrainError};
use crate::dsp::SpectrogramImage;
use crate::gackan::GacKanModel;
use crate::nncore::{zero_grads, AdamW, AdamWConfig, LrSchedule, Mode, Module, StateKind, Tensor};
use crate::sigsynth::rng::mix_seed;
use crate::sigsynth::JammerClass;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

/// One model input with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub class: JammerClass,
    pub jnr_db: f64,
    pub image: SpectrogramImage,
}

impl LabeledSample {
    pub fn label(&self) -> usize {
        self.class.code() as usize
    }
}

/// Random access to labeled images, in memory or on disk.
pub trait Dataset {
    fn len(&self) -> usize;
    fn label(&self, i: usize) -> usize;
    fn jnr_db(&self, i: usize) -> f64;
    /// Writes the CHW image of sample `i` into `out`.
    fn load_into(&self, i: usize, out: &mut [f32]) -> Result<()>;
    fn image_shape(&self) -> [usize; 3];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Dataset for [LabeledSample] {
    fn len(&self) -> usize {
        <[LabeledSample]>::len(self)
    }

    fn label(&self, i: usize) -> usize {
        self[i].label()
    }

    fn jnr_db(&self, i: usize) -> f64 {
        self[i].jnr_db
    }

    fn load_into(&self, i: usize, out: &mut [f32]) -> Result<()> {
        let px = &self[i].image.pixels;
        if px.len() != out.len() {
            return Err(TrainError::Data(format!("sample {} has {} values, expected {}", self[i].id, px.len(), out.len())));
        }
        out.copy_from_slice(px);
        Ok(())
    }

    fn image_shape(&self) -> [usize; 3] {
        self.first().map_or([3, 0, 0], |s| s.image.shape())
    }
}

/// A subset of another dataset selected by index.
pub struct Subset<'a, D: Dataset + ?Sized> {
    pub inner: &'a D,
    pub indices: &'a [usize],
}

impl<D: Dataset + ?Sized> Dataset for Subset<'_, D> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn label(&self, i: usize) -> usize {
        self.inner.label(self.indices[i])
    }

    fn jnr_db(&self, i: usize) -> f64 {
        self.inner.jnr_db(self.indices[i])
    }

    fn load_into(&self, i: usize, out: &mut [f32]) -> Result<()> {
        self.inner.load_into(self.indices[i], out)
    }

    fn image_shape(&self) -> [usize; 3] {
        self.inner.image_shape()
    }
}

/// Training hyperparameters as a flat document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub mixup_alpha: f64,
    pub label_smoothing: f64,
    pub kan_l1_lambda: f64,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            mixup_alpha: 1.0,
            label_smoothing: 0.1,
            kan_l1_lambda: 1e-5,
            base_lr: 1e-3,
            warmup_epochs: 5,
            min_lr: 0.0,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// 30 epochs at batch 32 for the 64×64 profile.
    pub fn desk() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            ..Self::default()
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.base_lr,
            warmup_epochs: self.warmup_epochs,
            total_epochs: self.epochs,
            min_lr: self.min_lr,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.base_lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 || self.batch_size < 2 {
            return bad(format!("need epochs ≥ 1 and batch size ≥ 2, got {} and {}", self.epochs, self.batch_size));
        }
        if !(self.mixup_alpha > 0.0) {
            return bad(format!("mixup alpha must be positive, got {}", self.mixup_alpha));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label smoothing must be in [0, 1), got {}", self.label_smoothing));
        }
        let non_negative = [
            self.kan_l1_lambda,
            self.base_lr,
            self.min_lr,
            self.weight_decay,
            self.adam_eps,
        ];
        if non_negative.iter().any(|v| !(*v >= 0.0)) || self.min_lr > self.base_lr {
            return bad("learning rates, decay and regularization must be non-negative with min_lr ≤ base_lr".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("AdamW betas must be in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// Named copy of every model tensor (parameters and running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl ModelState {
    pub fn capture<M: Module<f32> + ?Sized>(model: &M) -> Self {
        let mut tensors = Vec::new();
        model.visit("", &mut |name, _, t| {
            tensors.push((name.to_string(), t.shape().to_vec(), t.data().to_vec()));
        });
        Self { tensors }
    }

    /// Copies the stored values back; names and shapes must match exactly.
    pub fn restore<M: Module<f32> + ?Sized>(&self, model: &mut M) -> Result<()> {
        let mut idx = 0;
        let mut err = None;
        model.visit_mut("", &mut |name, _, t| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(idx) {
                Some((n, s, d)) if n == name && s.as_slice() == t.shape() => t.data_mut().copy_from_slice(d),
                Some((n, s, _)) => {
                    err = Some(format!("tensor {idx}: stored {n} {s:?}, model has {name} {:?}", t.shape()))
                }
                None => err = Some(format!("model tensor {name} missing from state")),
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(TrainError::Data(e));
        }
        if idx != self.tensors.len() {
            return Err(TrainError::Data(format!(
                "state holds {} tensors, model has {idx}",
                self.tensors.len()
            )));
        }
        Ok(())
    }
}

/// Best-validation snapshot and per-epoch history of a [`fit`] run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub state: ModelState,
    pub history: Vec<EpochRecord>,
}

fn load_batch<D: Dataset + ?Sized>(data: &D, idx: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
    let [c, h, w] = data.image_shape();
    let per = c * h * w;
    let mut buf = vec![0f32; idx.len() * per];
    for (k, &i) in idx.iter().enumerate() {
        data.load_into(i, &mut buf[k * per..(k + 1) * per])?;
    }
    let labels = idx.iter().map(|&i| data.label(i)).collect();
    Ok((Tensor::from_vec(&[idx.len(), c, h, w], buf)?, labels))
}

/// Predicted class of every sample, in order.
pub fn predict<D: Dataset + ?Sized>(model: &mut GacKanModel<f32>, data: &D, batch_size: usize) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = load_batch(data, chunk)?;
        let logits = model.forward(&x, Mode::Eval)?;
        let k = logits.shape()[1];
        out.extend(logits.data().chunks(k).map(argmax));
    }
    Ok(out)
}

/// Eval-mode metrics over a dataset.
pub fn evaluate<D: Dataset + ?Sized>(model: &mut GacKanModel<f32>, data: &D, batch_size: usize) -> Result<Metrics> {
    if data.is_empty() {
        return Err(TrainError::Data("cannot evaluate an empty set".into()));
    }
    let preds = predict(model, data, batch_size)?;
    let labels: Vec<usize> = (0..data.len()).map(|i| data.label(i)).collect();
    let jnrs: Vec<f64> = (0..data.len()).map(|i| data.jnr_db(i)).collect();
    Metrics::from_predictions(&preds, &labels, &jnrs, model.arch.num_classes)
}

/// Trains with AdamW, mixup, label smoothing and the spline L1 penalty,
/// validating every epoch. On return the model holds the best-validation
/// parameters (earliest epoch on ties).
pub fn fit<D: Dataset + ?Sized, V: Dataset + ?Sized>(
    model: &mut GacKanModel<f32>,
    train: &D,
    val: &V,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.len() < 2 || val.is_empty() {
        return Err(TrainError::Data(format!(
            "need at least 2 training and 1 validation sample, got {} and {}",
            train.len(),
            val.len()
        )));
    }
    let sched = cfg.schedule();
    let mut opt = AdamW::new(cfg.optimizer());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelState)> = None;
    for epoch in 0..cfg.epochs {
        let lr = sched.lr_at(epoch);
        opt.set_lr(lr);
        let mut rng = Pcg32::seed_from_u64(mix_seed(&[cfg.seed, epoch as u64]));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            // batch norm cannot train on a single sample
            if chunk.len() < 2 {
                continue;
            }
            let (x, labels) = load_batch(train, chunk)?;
            let mixed = mixup(&x, &labels, cfg.mixup_alpha, &mut rng)?;
            zero_grads(model);
            let logits = model.forward(&mixed.images, Mode::Train)?;
            let parts = total_loss(
                &logits,
                &mixed.labels_a,
                &mixed.labels_b,
                mixed.lambda,
                cfg.label_smoothing,
                cfg.kan_l1_lambda,
                model.head.l1(),
            )
            .map_err(|_| TrainError::NonFinite { epoch, batch: b, lr })?;
            if !parts.total.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: b, lr });
            }
            model.backward(&parts.grad_logits)?;
            model.head.add_l1_grad(cfg.kan_l1_lambda);
            opt.step(model).map_err(|_| TrainError::NonFinite { epoch, batch: b, lr })?;
            loss_sum += parts.total * chunk.len() as f64;
            seen += chunk.len();
        }
        let val_accuracy = evaluate(model, val, cfg.batch_size)?.overall_accuracy;
        let train_loss = loss_sum / seen.max(1) as f64;
        log::info!("epoch {epoch}: lr {lr:.3e} loss {train_loss:.4} val acc {val_accuracy:.4}");
        history.push(EpochRecord { epoch, lr, train_loss, val_accuracy });
        if best.as_ref().is_none_or(|(_, acc, _)| val_accuracy > *acc) {
            best = Some((epoch, val_accuracy, ModelState::capture(model)));
        }
    }
    let (best_epoch, best_val_accuracy, state) = best.expect("at least one epoch");
    state.restore(model)?;
    Ok(TrainOutcome {
        best_epoch,
        best_val_accuracy,
        state,
        history,
    })
}

/// Parameter names in visiting order, for diagnostics.
pub fn parameter_names<M: Module<f32> + ?Sized>(model: &M) -> Vec<String> {
    let mut names = Vec::new();
    model.visit("", &mut |n, k, _| {
        if k == StateKind::Param {
            names.push(n.to_string());
        }
    });
    names
}
