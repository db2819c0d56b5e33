//! Learning without forgetting: distill the pre-task model's softened
//! outputs while learning the new task.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{log_softmax_at, softmax_row};
use crate::continual::{Capabilities, Strategy, TaskContext, TaskPlan};
use crate::error::{bail, Result};
use crate::model::{ForwardOptions, Model, Sample};
use crate::store::{GradientRecord, Granularity, ParameterStore};

pub const DEFAULT_LWF_ALPHA: f64 = 0.5;
pub const DEFAULT_LWF_TEMPERATURE: f64 = 2.0;

/// `CE(student, label) + α · (−Σ_c p_c^old(T) log p_c^new(T))` for one row
/// of logits.
pub fn lwf_loss(student: &[f64], teacher: &[f64], label: usize, alpha: f64, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        bail!(Config, "distillation temperature must be positive, got {}", temperature);
    }
    if student.len() != teacher.len() || label >= student.len() {
        bail!(Shape, "logit rows of {} and {} with label {}", student.len(), teacher.len(), label);
    }
    let ce = -log_softmax_at(student, 1.0, label);
    Ok(ce + alpha * distillation(student, teacher, temperature))
}

/// `−Σ_c softmax(teacher/T)_c · log softmax(student/T)_c`.
pub fn distillation(student: &[f64], teacher: &[f64], temperature: f64) -> f64 {
    let mut p_old = vec![0.0; teacher.len()];
    softmax_row(teacher, temperature, &mut p_old);
    p_old.iter().enumerate().filter(|(_, p)| **p != 0.0).map(|(c, p)| -p * log_softmax_at(student, temperature, c)).sum()
}

#[derive(Debug, Clone)]
pub struct Lwf {
    pub alpha: f64,
    pub temperature: f64,
    teacher: Option<ParameterStore>,
}

impl Lwf {
    pub fn new(alpha: f64, temperature: f64) -> Self {
        Self { alpha, temperature, teacher: None }
    }
}

impl Strategy for Lwf {
    fn name(&self) -> &str {
        "lwf"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { needs_previous_model: true, ..Capabilities::default() }
    }

    fn hyperparameters(&self) -> Vec<(String, f64)> {
        vec![("alpha".into(), self.alpha), ("temperature".into(), self.temperature)]
    }

    /// Snapshots `θ_{t−1}` as the teacher from the second task on.
    fn prepare(&mut self, ctx: &TaskContext<'_>, _store: &mut ParameterStore) -> Result<TaskPlan> {
        if !(self.temperature > 0.0) {
            bail!(Config, "distillation temperature must be positive, got {}", self.temperature);
        }
        self.teacher = if ctx.task_index > 0 { Some(ctx.previous_model()?.clone()) } else { None };
        Ok(TaskPlan::default())
    }

    fn loss_and_grad(&mut self, ctx: &TaskContext<'_>, store: &ParameterStore, batch: &[Sample]) -> Result<(f64, GradientRecord)> {
        match &self.teacher {
            Some(teacher) => lwf_batch_loss_and_grad(ctx.model, store, teacher, batch, self.alpha, self.temperature),
            None => ctx.model.batch_loss_and_grad(store, batch, ForwardOptions::default()),
        }
    }
}

/// Batch-mean [`lwf_loss`] under `store` with `teacher` fixed, and its
/// gradient.
pub fn lwf_batch_loss_and_grad(
    model: &Model,
    store: &ParameterStore,
    teacher: &ParameterStore,
    batch: &[Sample],
    alpha: f64,
    temperature: f64,
) -> Result<(f64, GradientRecord)> {
    if !(temperature > 0.0) {
        bail!(Config, "distillation temperature must be positive, got {}", temperature);
    }
    let tb = model.build_batch(teacher, batch, ForwardOptions::default())?;
    let (_, cols) = tb.graph.dims(tb.logits);
    let tz = tb.graph.value(tb.logits);
    let mut bg = model.build_batch(store, batch, ForwardOptions::default())?;
    let mut rows = Vec::with_capacity(bg.targets.len());
    let mut soft = vec![0.0; bg.targets.len() * cols];
    for (k, t) in bg.targets.iter().enumerate() {
        rows.push((t.row, t.weight));
        softmax_row(&tz[t.row * cols..(t.row + 1) * cols], temperature, &mut soft[k * cols..(k + 1) * cols]);
    }
    let ce = bg.cross_entropy()?;
    let kd = bg.graph.soft_cross_entropy(bg.logits, rows, soft, temperature)?;
    let kd = bg.graph.scale(kd, alpha);
    let total = bg.graph.add(ce, kd)?;
    let loss = bg.graph.scalar(total);
    let grad = bg.graph.backward(total, store, Granularity::PerBatch)?;
    grad.check_finite(store, "distillation gradient")?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig, Objective};

    #[test]
    fn symmetric_teacher_is_uniform() {
        let mut p = [0.0; 2];
        softmax_row(&[0.0, 0.0], 2.0, &mut p);
        assert_eq!(p, [0.5, 0.5]);
    }

    #[test]
    fn self_distillation_equals_teacher_entropy_and_is_minimal() {
        let z = [0.4, -1.2, 2.0];
        let mut p = [0.0; 3];
        softmax_row(&z, 2.0, &mut p);
        let entropy: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
        assert!((distillation(&z, &z, 2.0) - entropy).abs() < 1e-12);
        assert!(distillation(&[0.5, -1.2, 2.0], &z, 2.0) > entropy);
    }

    #[test]
    fn loss_formula_and_validation() {
        let (s, t) = ([1.0, 0.0], [0.0, 0.0]);
        let want = -(1.0f64.exp() / (1.0f64.exp() + 1.0)).ln() + 0.5 * distillation(&s, &t, 2.0);
        assert!((lwf_loss(&s, &t, 0, 0.5, 2.0).unwrap() - want).abs() < 1e-15);
        assert!(lwf_loss(&s, &t, 0, 0.5, 0.0).is_err());
        assert!(lwf_loss(&s, &t, 2, 0.5, 1.0).is_err());
    }

    struct WithTeacher<'a> {
        model: &'a Model,
        teacher: &'a ParameterStore,
    }

    impl Objective for WithTeacher<'_> {
        fn loss(&self, store: &ParameterStore, batch: &[Sample]) -> Result<f64> {
            Ok(self.loss_and_grad(store, batch)?.0)
        }
        fn loss_and_grad(&self, store: &ParameterStore, batch: &[Sample]) -> Result<(f64, GradientRecord)> {
            lwf_batch_loss_and_grad(self.model, store, self.teacher, batch, 0.5, 2.0)
        }
    }

    #[test]
    fn distillation_gradient_matches_finite_differences() {
        let (m, s) = build_model(ModelConfig::mlp(&[3, 4, 3], 1)).unwrap();
        let (_, teacher) = build_model(ModelConfig::mlp(&[3, 4, 3], 2)).unwrap();
        let batch = vec![Sample::labeled(vec![0.3, -0.2, 1.0], 2), Sample::labeled(vec![-1.0, 0.5, 0.1], 0)];
        let obj = WithTeacher { model: &m, teacher: &teacher };
        let rep = crate::model::finite_difference_check(&obj, &s, &batch, 1e-6).unwrap();
        assert!(rep.max_deviation <= 1e-7, "{:?}", rep);
        let single = lwf_loss(m.logits(&s, &batch[0]).unwrap().data(), m.logits(&teacher, &batch[0]).unwrap().data(), 2, 0.5, 2.0).unwrap();
        let pair = lwf_loss(m.logits(&s, &batch[1]).unwrap().data(), m.logits(&teacher, &batch[1]).unwrap().data(), 0, 0.5, 2.0).unwrap();
        assert!((obj.loss(&s, &batch).unwrap() - (single + pair) / 2.0).abs() < 1e-12);
    }
}
