//! SGD-with-momentum training loop: reduce-on-plateau learning rate,
//! early stopping on validation accuracy, seeded stratified splits, and a
//! checkpoint data model that makes runs resumable and bit-reproducible.
//!
//! Binary tasks are trained through the two-logit softmax form; its loss
//! value and gradient coincide exactly with binary cross entropy on the
//! positive-class probability, which keeps the tape op surface small.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{argmax_rows, Model, NetworkSpec};
use crate::error::CoreError;
use crate::ops::loss::categorical_cross_entropy_value;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::volume::PreprocessConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TaskKind {
    Multiclass,
    Binary,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub task: TaskKind,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub lr_floor: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: TaskKind::Multiclass,
            batch_size: 8,
            learning_rate: 0.03,
            momentum: 0.9,
            plateau_factor: 0.5,
            plateau_patience: 6,
            lr_floor: 1e-5,
            early_stop_patience: 20,
            max_epochs: 50,
            seed: 0,
            val_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(CoreError::InvalidConfig(
                "batch size and max epochs must be >= 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(CoreError::InvalidConfig(
                "learning rate must be finite and non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CoreError::InvalidConfig(
                "momentum must lie in [0, 1)".into(),
            ));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(CoreError::InvalidConfig(
                "plateau factor must lie in (0, 1)".into(),
            ));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(CoreError::InvalidConfig("patience values must be >= 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 0.5) {
            return Err(CoreError::InvalidConfig(
                "validation fraction must lie in (0, 0.5]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate in effect during this epoch.
    pub lr: f64,
    pub seconds: f64,
}

/// Halves (by `factor`) the learning rate after `patience` consecutive
/// epochs without a strict validation-loss improvement, never below `floor`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    floor: f64,
    best: Option<f64>,
    since: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, floor: f64) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            floor,
            best: None,
            since: 0,
        }
    }

    pub fn from_state(
        lr: f64,
        factor: f64,
        patience: usize,
        floor: f64,
        best: Option<f64>,
        since: usize,
    ) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            floor,
            best,
            since,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn since(&self) -> usize {
        self.since
    }

    /// Feed one epoch's validation loss; returns the rate for the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        match self.best {
            Some(b) if val_loss >= b => {
                self.since += 1;
                if self.since >= self.patience {
                    self.lr = (self.lr * self.factor).max(self.floor);
                    self.since = 0;
                }
            }
            _ => {
                self.best = Some(val_loss);
                self.since = 0;
            }
        }
        self.lr
    }
}

/// Tracks the best validation accuracy; requests a stop after `patience`
/// consecutive epochs without exceeding it. Ties keep the earlier epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStop {
    patience: usize,
    best_acc: f64,
    best_epoch: usize,
    since: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        EarlyStop {
            patience,
            best_acc: -1.0,
            best_epoch: 0,
            since: 0,
        }
    }

    pub fn from_state(patience: usize, best_acc: f64, best_epoch: usize, since: usize) -> Self {
        EarlyStop {
            patience,
            best_acc,
            best_epoch,
            since,
        }
    }

    pub fn best_acc(&self) -> f64 {
        self.best_acc
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn since(&self) -> usize {
        self.since
    }

    /// Returns (improved, stop).
    pub fn observe(&mut self, epoch: usize, val_acc: f64) -> (bool, bool) {
        if val_acc > self.best_acc {
            self.best_acc = val_acc;
            self.best_epoch = epoch;
            self.since = 0;
            (true, false)
        } else {
            self.since += 1;
            (false, self.since >= self.patience)
        }
    }
}

/// In-memory training set: preprocessed single-item tensors plus labels.
pub struct Dataset {
    pub inputs: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
}

impl Dataset {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.inputs.is_empty() {
            return Err(CoreError::InvalidData("empty dataset".into()));
        }
        if self.inputs.len() != self.labels.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} inputs vs {} labels",
                self.inputs.len(),
                self.labels.len()
            )));
        }
        if self.classes.len() < 2 {
            return Err(CoreError::InvalidData("need at least 2 classes".into()));
        }
        let shape = self.inputs[0].shape();
        for t in &self.inputs {
            let [n, c, _, _, _] = t.dims5()?;
            if n != 1 || c != 1 || t.shape() != shape {
                return Err(CoreError::ShapeMismatch(
                    "every dataset item must be a [1,1,E,E,E] tensor of one shared extent".into(),
                ));
            }
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.classes.len()) {
            return Err(CoreError::InvalidData(format!(
                "label {l} out of range for {} classes",
                self.classes.len()
            )));
        }
        Ok(())
    }
}

/// Deterministic stratified split; at least one item per class stays in
/// training, and single-item classes contribute no validation items.
pub fn split_stratified(
    labels: &[usize],
    classes: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), CoreError> {
    if !(val_fraction > 0.0 && val_fraction <= 0.5) {
        return Err(CoreError::InvalidConfig(
            "validation fraction must lie in (0, 0.5]".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for k in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
        if idx.is_empty() {
            return Err(CoreError::InvalidData(format!(
                "class {k} has no items to split"
            )));
        }
        idx.shuffle(&mut rng);
        let n_val = if idx.len() == 1 {
            0
        } else {
            (libm::round(val_fraction * idx.len() as f64) as usize).clamp(1, idx.len() - 1)
        };
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    if val.is_empty() {
        return Err(CoreError::InvalidData(
            "validation split is empty, dataset too small".into(),
        ));
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// One SGD-with-momentum update: v <- mu v - lr g, p <- p + v.
pub fn sgd_update(
    param: &mut Tensor<f32>,
    velocity: &mut Tensor<f32>,
    grad: &Tensor<f32>,
    lr: f64,
    mu: f64,
) {
    assert_eq!(param.shape(), grad.shape(), "gradient shape mismatch");
    assert_eq!(param.shape(), velocity.shape(), "velocity shape mismatch");
    let p = param.data_mut();
    let v = velocity.data_mut();
    let g = grad.data();
    for i in 0..p.len() {
        let vi = mu * v[i] as f64 - lr * g[i] as f64;
        v[i] = vi as f32;
        p[i] = (p[i] as f64 + vi) as f32;
    }
}

/// Everything needed to resume or deploy: every named store tensor, the
/// optimizer's velocity buffers, and the loop state.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointData {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub meta: TrailerMeta,
}

pub const MOMENTUM_PREFIX: &str = "momentum.";

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TrailerMeta {
    pub epoch: usize,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub lr: f64,
    pub sched_best_val_loss: Option<f64>,
    pub sched_since: usize,
    pub es_since: usize,
    pub seed: u64,
    pub classes: Vec<String>,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub preprocess: Option<PreprocessConfig>,
}

fn snapshot(
    model: &Model<f32>,
    velocities: &[Option<Tensor<f32>>],
    meta: TrailerMeta,
) -> CheckpointData {
    let mut tensors = Vec::with_capacity(model.store().len() * 2);
    for e in model.store().iter() {
        tensors.push((e.name.clone(), e.tensor.clone()));
    }
    for (i, v) in velocities.iter().enumerate() {
        if let Some(v) = v {
            let name = format!("{MOMENTUM_PREFIX}{}", model.store().entry(i).name);
            tensors.push((name, v.clone()));
        }
    }
    CheckpointData { tensors, meta }
}

/// Loads a checkpoint's tensors into the model and returns the velocity
/// buffers. Every store entry must be present with a matching shape.
pub fn restore(
    model: &mut Model<f32>,
    ckpt: &CheckpointData,
) -> Result<Vec<Option<Tensor<f32>>>, CoreError> {
    let mut velocities: Vec<Option<Tensor<f32>>> = vec![None; model.store().len()];
    let mut seen = vec![false; model.store().len()];
    for (name, tensor) in &ckpt.tensors {
        if let Some(stripped) = name.strip_prefix(MOMENTUM_PREFIX) {
            let target = model.store().iter().position(|e| e.name == stripped);
            let Some(i) = target else {
                return Err(CoreError::InvalidData(format!(
                    "checkpoint velocity {name} has no matching parameter"
                )));
            };
            velocities[i] = Some(tensor.clone());
            continue;
        }
        let Some(slot) = model.store_mut().get_mut(name) else {
            return Err(CoreError::InvalidData(format!(
                "checkpoint tensor {name} is not a model parameter"
            )));
        };
        if slot.shape() != tensor.shape() {
            return Err(CoreError::ShapeMismatch(format!(
                "checkpoint tensor {name} has shape {:?}, model expects {:?}",
                tensor.shape(),
                slot.shape()
            )));
        }
        *slot = tensor.clone();
        let i = model
            .store()
            .iter()
            .position(|e| &e.name == name)
            .expect("entry just looked up");
        seen[i] = true;
    }
    if let Some(i) = seen.iter().position(|&s| !s) {
        return Err(CoreError::InvalidData(format!(
            "checkpoint is missing tensor {}",
            model.store().entry(i).name
        )));
    }
    Ok(velocities)
}

pub struct FitResult {
    /// Checkpoint of the best-accuracy epoch this call observed. A resumed
    /// run that never improves returns the resume checkpoint; callers keep
    /// the on-disk best in that case (its meta still names the best epoch).
    pub best: CheckpointData,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

fn batch_of(data: &Dataset, idx: &[usize]) -> (Tensor<f32>, Vec<usize>) {
    let shape = data.inputs[idx[0]].shape();
    let item_len: usize = shape[1..].iter().product();
    let mut buf = Vec::with_capacity(idx.len() * item_len);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        buf.extend_from_slice(data.inputs[i].data());
        labels.push(data.labels[i]);
    }
    let mut bshape = shape.to_vec();
    bshape[0] = idx.len();
    (
        Tensor::new(bshape, buf).expect("batch assembly from validated items"),
        labels,
    )
}

fn eval_on(
    model: &Model<f32>,
    data: &Dataset,
    idx: &[usize],
    batch_size: usize,
) -> Result<(f64, f64), CoreError> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in idx.chunks(batch_size) {
        let (batch, labels) = batch_of(data, chunk);
        let probs = model.forward_eval(&batch)?;
        loss_sum += categorical_cross_entropy_value(&probs, &labels)? * chunk.len() as f64;
        let preds = argmax_rows(&probs);
        correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok((loss_sum / idx.len() as f64, correct as f64 / idx.len() as f64))
}

/// Per-epoch shuffle seed; stateless so that resumed runs replay the exact
/// batch order of an uninterrupted run.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains to convergence. The observer sees every epoch's record, a full
/// checkpoint of the post-epoch state, and whether it is the new best;
/// `clock` supplies monotonic seconds for the records.
pub fn fit(
    model: &mut Model<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    preprocess: Option<PreprocessConfig>,
    resume: Option<&CheckpointData>,
    clock: &mut dyn FnMut() -> f64,
    observer: &mut dyn FnMut(&EpochRecord, &CheckpointData, bool) -> Result<(), CoreError>,
) -> Result<FitResult, CoreError> {
    cfg.validate()?;
    data.validate()?;
    match cfg.task {
        TaskKind::Binary if data.classes.len() != 2 => {
            return Err(CoreError::InvalidConfig(format!(
                "binary task with {} classes",
                data.classes.len()
            )));
        }
        _ => {}
    }
    if model.classes() != data.classes.len() {
        return Err(CoreError::InvalidConfig(format!(
            "model has {} outputs but the dataset declares {} classes",
            model.classes(),
            data.classes.len()
        )));
    }

    let (train_idx, val_idx) =
        split_stratified(&data.labels, data.classes.len(), cfg.val_fraction, cfg.seed)?;
    for k in 0..data.classes.len() {
        if !train_idx.iter().any(|&i| data.labels[i] == k) {
            return Err(CoreError::InvalidData(format!(
                "class {} missing from the training split",
                data.classes[k]
            )));
        }
    }

    let mut velocities: Vec<Option<Tensor<f32>>> = vec![None; model.store().len()];
    let mut scheduler = PlateauScheduler::new(
        cfg.learning_rate,
        cfg.plateau_factor,
        cfg.plateau_patience,
        cfg.lr_floor,
    );
    let mut early = EarlyStop::new(cfg.early_stop_patience);
    let mut start_epoch = 1;
    if let Some(ckpt) = resume {
        velocities = restore(model, ckpt)?;
        let m = &ckpt.meta;
        scheduler = PlateauScheduler::from_state(
            m.lr,
            cfg.plateau_factor,
            cfg.plateau_patience,
            cfg.lr_floor,
            m.sched_best_val_loss,
            m.sched_since,
        );
        early = EarlyStop::from_state(
            cfg.early_stop_patience,
            m.best_val_acc,
            m.best_epoch,
            m.es_since,
        );
        start_epoch = m.epoch + 1;
    }

    let mut history = Vec::new();
    let mut best: Option<CheckpointData> = resume.cloned();
    let mut stopped_early = false;

    for epoch in start_epoch..=cfg.max_epochs {
        let t0 = clock();
        let lr = scheduler.lr();

        let mut order = train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch));
        order.shuffle(&mut rng);

        let mut train_loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (batch, labels) = batch_of(data, chunk);
            let mut tape = Tape::new();
            let (logits, param_nodes) = model.forward_train(&mut tape, batch)?;
            let loss = tape.softmax_cross_entropy(logits, labels)?;
            let loss_val = tape.value(loss).data()[0] as f64;
            if !loss_val.is_finite() {
                return Err(CoreError::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {bi}"
                )));
            }
            train_loss_sum += loss_val * chunk.len() as f64;
            let mut grads = tape.backward(loss)?;
            for (store_idx, node) in param_nodes {
                let Some(g) = grads.take(node) else { continue };
                let vel = velocities[store_idx]
                    .get_or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
                let mut pv = core::mem::replace(
                    model.store_mut().tensor_mut(store_idx),
                    Tensor::scalar(0.0),
                );
                sgd_update(&mut pv, vel, &g, lr, cfg.momentum);
                *model.store_mut().tensor_mut(store_idx) = pv;
            }
        }
        let train_loss = train_loss_sum / train_idx.len() as f64;

        let (val_loss, val_acc) = eval_on(model, data, &val_idx, cfg.batch_size)?;
        scheduler.observe(val_loss);
        let (improved, stop) = early.observe(epoch, val_acc);

        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            lr,
            seconds: clock() - t0,
        };
        let meta = TrailerMeta {
            epoch,
            best_val_acc: early.best_acc(),
            best_epoch: early.best_epoch(),
            lr: scheduler.lr(),
            sched_best_val_loss: scheduler.best(),
            sched_since: scheduler.since(),
            es_since: early.since(),
            seed: cfg.seed,
            classes: data.classes.clone(),
            network: model.spec().clone(),
            train: cfg.clone(),
            preprocess: preprocess.clone(),
        };
        let ckpt = snapshot(model, &velocities, meta);
        observer(&record, &ckpt, improved)?;
        history.push(record);
        if improved || best.is_none() {
            best = Some(ckpt);
        }
        if stop {
            stopped_early = true;
            break;
        }
    }

    Ok(FitResult {
        best: best.expect("at least one epoch ran or a resume checkpoint exists"),
        history,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_phinet, PhiNetSpec};
    use alloc::string::ToString;

    #[test]
    fn sgd_hand_example_reaches_0_8() {
        // loss = p^2, grad = 2p, lr 0.1, no momentum: 1 -> 0.8
        let mut p = Tensor::new(vec![1], vec![1.0f32]).unwrap();
        let mut v = Tensor::zeros(vec![1]);
        let g = Tensor::new(vec![1], vec![2.0f32]).unwrap();
        sgd_update(&mut p, &mut v, &g, 0.1, 0.0);
        assert!((p.data()[0] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let mut p = Tensor::new(vec![1], vec![0.0f32]).unwrap();
        let mut v = Tensor::zeros(vec![1]);
        let g = Tensor::new(vec![1], vec![1.0f32]).unwrap();
        sgd_update(&mut p, &mut v, &g, 0.1, 0.9);
        sgd_update(&mut p, &mut v, &g, 0.1, 0.9);
        // v1 = -0.1, v2 = -0.19, p = -0.29
        assert!((p.data()[0] + 0.29).abs() < 1e-6);
    }

    #[test]
    fn plateau_decays_exactly_by_factor() {
        let mut s = PlateauScheduler::new(1.0, 0.5, 2, 1e-5);
        assert_eq!(s.observe(1.0), 1.0); // first observation sets best
        assert_eq!(s.observe(1.0), 1.0); // since = 1
        assert_eq!(s.observe(1.0), 0.5); // since = 2 -> decay
        assert_eq!(s.observe(0.5), 0.5); // improvement resets
        assert_eq!(s.observe(0.6), 0.5);
        assert_eq!(s.observe(0.6), 0.25);
    }

    #[test]
    fn plateau_respects_the_floor() {
        let mut s = PlateauScheduler::new(2e-5, 0.5, 1, 1e-5);
        s.observe(1.0);
        assert_eq!(s.observe(1.0), 1e-5);
        assert_eq!(s.observe(1.0), 1e-5);
    }

    #[test]
    fn early_stop_trace_stops_at_epoch_five() {
        // accuracy trace 0.5, 0.9, 0.9, 0.9, 0.9 with patience 3
        let mut es = EarlyStop::new(3);
        assert_eq!(es.observe(1, 0.5), (true, false));
        assert_eq!(es.observe(2, 0.9), (true, false));
        assert_eq!(es.observe(3, 0.9), (false, false));
        assert_eq!(es.observe(4, 0.9), (false, false));
        assert_eq!(es.observe(5, 0.9), (false, true));
        assert_eq!(es.best_epoch(), 2);
    }

    #[test]
    fn stratified_split_is_deterministic_and_balanced() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let (tr, va) = split_stratified(&labels, 3, 0.2, 7).unwrap();
        let (tr2, va2) = split_stratified(&labels, 3, 0.2, 7).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);
        assert_eq!(va.len(), 6);
        for k in 0..3 {
            assert_eq!(va.iter().filter(|&&i| labels[i] == k).count(), 2);
        }
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
    }

    fn toy_dataset(extent: usize, per_class: usize) -> Dataset {
        // class 0: dim cube, class 1: bright cube; trivially separable
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..per_class * 2 {
            let class = i % 2;
            let level = if class == 0 { 0.2 } else { 0.9 } + (i as f32) * 1e-3;
            inputs.push(Tensor::full(vec![1, 1, extent, extent, extent], level));
            labels.push(class);
        }
        Dataset {
            inputs,
            labels,
            classes: vec!["A".to_string(), "B".to_string()],
        }
    }

    fn tiny_model(seed: u64) -> Model<f32> {
        build_phinet(&PhiNetSpec::tiny(2), seed).unwrap()
    }

    fn quick_cfg(max_epochs: usize) -> TrainConfig {
        TrainConfig {
            max_epochs,
            batch_size: 4,
            learning_rate: 0.02,
            early_stop_patience: 50,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_freezes_every_parameter() {
        let mut model = tiny_model(5);
        let before: Vec<Tensor<f32>> = model
            .store()
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.clone())
            .collect();
        let data = toy_dataset(16, 5);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            momentum: 0.0,
            ..quick_cfg(3)
        };
        let mut clock = || 0.0;
        let mut obs = |_: &EpochRecord, _: &CheckpointData, _: bool| Ok(());
        fit(&mut model, &data, &cfg, None, None, &mut clock, &mut obs).unwrap();
        let after: Vec<&Tensor<f32>> = model
            .store()
            .iter()
            .filter(|e| e.trainable)
            .map(|e| &e.tensor)
            .collect();
        for (b, a) in before.iter().zip(after) {
            assert_eq!(b, a);
        }
    }

    #[test]
    fn identical_runs_replay_identically() {
        let data = toy_dataset(16, 6);
        let run = || {
            let mut model = tiny_model(11);
            let mut clock = || 0.0;
            let mut obs = |_: &EpochRecord, _: &CheckpointData, _: bool| Ok(());
            fit(
                &mut model,
                &data,
                &quick_cfg(4),
                None,
                None,
                &mut clock,
                &mut obs,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best.tensors, b.best.tensors);
    }

    #[test]
    fn resume_replays_the_uninterrupted_run() {
        let data = toy_dataset(16, 6);
        let cfg = quick_cfg(6);

        let mut full_model = tiny_model(21);
        let mut clock = || 0.0;
        let mut obs = |_: &EpochRecord, _: &CheckpointData, _: bool| Ok(());
        let full = fit(
            &mut full_model,
            &data,
            &cfg,
            None,
            None,
            &mut clock,
            &mut obs,
        )
        .unwrap();

        // capture the checkpoint written after epoch 3, then resume from it
        let mut mid: Option<CheckpointData> = None;
        let mut part_model = tiny_model(21);
        let mut cfg3 = cfg.clone();
        cfg3.max_epochs = 3;
        let mut obs_mid = |r: &EpochRecord, c: &CheckpointData, _: bool| {
            if r.epoch == 3 {
                mid = Some(c.clone());
            }
            Ok(())
        };
        fit(
            &mut part_model,
            &data,
            &cfg3,
            None,
            None,
            &mut clock,
            &mut obs_mid,
        )
        .unwrap();

        let mut resumed_model = tiny_model(99); // weights come from the checkpoint
        let mid = mid.unwrap();
        let mut obs2 = |_: &EpochRecord, _: &CheckpointData, _: bool| Ok(());
        let resumed = fit(
            &mut resumed_model,
            &data,
            &cfg,
            None,
            Some(&mid),
            &mut clock,
            &mut obs2,
        )
        .unwrap();

        assert_eq!(resumed.history, full.history[3..].to_vec());
        // final weights agree with the uninterrupted run bitwise
        for (a, b) in full_model.store().iter().zip(resumed_model.store().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor, b.tensor);
        }
    }

    #[test]
    fn single_class_dataset_is_rejected() {
        let mut data = toy_dataset(16, 4);
        data.classes = vec!["only".to_string()];
        data.labels = vec![0; data.labels.len()];
        let mut model = tiny_model(1);
        let mut clock = || 0.0;
        let mut obs = |_: &EpochRecord, _: &CheckpointData, _: bool| Ok(());
        assert!(fit(
            &mut model,
            &data,
            &quick_cfg(1),
            None,
            None,
            &mut clock,
            &mut obs
        )
        .is_err());
    }

    #[test]
    fn checkpoint_restore_rejects_missing_tensors() {
        let mut model = tiny_model(2);
        let data = toy_dataset(16, 3);
        let mut clock = || 0.0;
        let mut kept: Option<CheckpointData> = None;
        let mut obs = |_: &EpochRecord, c: &CheckpointData, _: bool| {
            kept = Some(c.clone());
            Ok(())
        };
        fit(
            &mut model,
            &data,
            &quick_cfg(1),
            None,
            None,
            &mut clock,
            &mut obs,
        )
        .unwrap();
        let mut broken = kept.unwrap();
        broken.tensors.remove(0);
        assert!(restore(&mut model, &broken).is_err());
    }
}
