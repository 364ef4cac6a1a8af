//! Mini-batch SGD with classical momentum over the multitask loss.
//!
//! Per epoch: seeded shuffle, then for each batch the mean gradient over the
//! batch drives `buf = momentum*buf + grad; param -= lr*buf`. Train metrics
//! are accumulated from the same forward passes that produce the gradients
//! (so they track the moving parameters); validation runs after each epoch
//! on the frozen snapshot.

use crate::autodiff::Gradients;
use crate::model::{ModelError, TeacherStudentModel};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            momentum: 0.9,
            batch_size: 16,
            epochs: 15,
            alpha: 0.4,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(TrainError::Config(format!(
                "learning rate {} must be finite and nonnegative",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!(
                "momentum {} outside [0,1)",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(TrainError::Config(format!(
                "alpha {} outside [0,1]",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss_teacher: f64,
    pub train_loss_student: f64,
    pub train_acc_teacher: f64,
    pub train_acc_student: f64,
    pub val_loss_teacher: f64,
    pub val_loss_student: f64,
    pub val_acc_teacher: f64,
    pub val_acc_student: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub wall_time: Duration,
}

impl TrainReport {
    /// CSV rows per epoch. Wall time is left out on purpose so reruns with
    /// the same seed produce byte-identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,loss_teacher_train,loss_student_train,acc_teacher_val,acc_student_val,\
             loss_teacher_val,loss_student_val,acc_teacher_train,acc_student_train\n",
        );
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                e.epoch,
                e.train_loss_teacher,
                e.train_loss_student,
                e.val_acc_teacher,
                e.val_acc_student,
                e.val_loss_teacher,
                e.val_loss_student,
                e.train_acc_teacher,
                e.train_acc_student,
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub teacher_accuracy: f64,
    pub student_accuracy: f64,
    pub teacher_loss: f64,
    pub student_loss: f64,
}

/// Accuracy (argmax vs label) and mean per-head cross-entropy over a set.
pub fn evaluate(
    model: &TeacherStudentModel,
    set: &[(Tensor, usize)],
) -> Result<EvalMetrics, TrainError> {
    if set.is_empty() {
        return Err(TrainError::Config("cannot evaluate an empty set".into()));
    }
    let mut loss_t = 0.0;
    let mut loss_s = 0.0;
    let mut hit_t = 0usize;
    let mut hit_s = 0usize;
    for (image, label) in set {
        let lg = model.loss_graph(image, *label)?;
        loss_t += lg.graph.value(lg.loss_teacher).data()[0];
        loss_s += lg.graph.value(lg.loss_student).data()[0];
        if lg.yt.argmax() == *label {
            hit_t += 1;
        }
        if lg.ys.argmax() == *label {
            hit_s += 1;
        }
    }
    let n = set.len() as f64;
    Ok(EvalMetrics {
        teacher_accuracy: hit_t as f64 / n,
        student_accuracy: hit_s as f64 / n,
        teacher_loss: loss_t / n,
        student_loss: loss_s / n,
    })
}

/// Train in place; returns the per-epoch report. The config's alpha is
/// written into the model so the loss graphs and the report agree.
pub fn train(
    model: &mut TeacherStudentModel,
    train_set: &[(Tensor, usize)],
    val_set: &[(Tensor, usize)],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::Config("training set is empty".into()));
    }
    for (_, label) in train_set.iter().chain(val_set.iter()) {
        if *label >= model.config.num_classes {
            return Err(ModelError::LabelOutOfRange {
                label: *label,
                classes: model.config.num_classes,
            }
            .into());
        }
    }
    model.config.alpha = cfg.alpha;

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_t = 0.0;
        let mut loss_s = 0.0;
        let mut hit_t = 0usize;
        let mut hit_s = 0usize;

        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = Gradients::none(model.n_params());
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (image, label) = &train_set[i];
                let sr = model.sample_loss_and_gradients(image, *label)?;
                if !sr.loss.total.is_finite() {
                    return Err(TrainError::Diverged {
                        epoch,
                        batch: batch_idx,
                        loss: sr.loss.total,
                    });
                }
                grads.add_scaled(&sr.grads, inv);
                loss_t += sr.loss.teacher;
                loss_s += sr.loss.student;
                if sr.yt.argmax() == *label {
                    hit_t += 1;
                }
                if sr.ys.argmax() == *label {
                    hit_s += 1;
                }
            }
            for (idx, param) in model.params_mut().iter_mut().enumerate() {
                if let Some(g) = grads.get(idx) {
                    param.momentum.scale_inplace(cfg.momentum);
                    param.momentum.add_scaled(g, 1.0);
                    param.value.add_scaled(&param.momentum, -cfg.learning_rate);
                }
            }
        }

        let n = train_set.len() as f64;
        let val = evaluate(model, val_set)?;
        epochs.push(EpochMetrics {
            epoch,
            train_loss_teacher: loss_t / n,
            train_loss_student: loss_s / n,
            train_acc_teacher: hit_t as f64 / n,
            train_acc_student: hit_s as f64 / n,
            val_loss_teacher: val.teacher_loss,
            val_loss_student: val.student_loss,
            val_acc_teacher: val.teacher_accuracy,
            val_acc_student: val.student_accuracy,
        });
    }

    Ok(TrainReport {
        epochs,
        wall_time: start.elapsed(),
    })
}
