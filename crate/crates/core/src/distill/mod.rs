//! Temperature softening, task and distillation losses, and the teacher's
//! soft-label store.
//!
//! Each loss has a graph form (`*_var`) used during training and a plain
//! tensor form that evaluates the same graph on constants, so the two agree
//! bit for bit.

mod store;

pub use store::{generate_soft_labels, SoftLabelStore};

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Graph, Var};
use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

/// Lower bound applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistillMode {
    /// Soft cross-entropy on the output distribution only.
    Output,
    /// Adds a projected mean-squared error on final hidden states.
    OutputPlusFeature,
}

impl fmt::Display for DistillMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistillMode::Output => "output",
            DistillMode::OutputPlusFeature => "output+feature",
        })
    }
}

impl FromStr for DistillMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "output" => Ok(DistillMode::Output),
            "output+feature" | "feature" => Ok(DistillMode::OutputPlusFeature),
            other => Err(Error::Config(format!("unknown distillation mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillConfig {
    pub temperature: f64,
    /// Weight of the distillation term.
    pub alpha: f64,
    pub mode: DistillMode,
    /// Weight of the feature term; ignored in output mode.
    pub feature_weight: f64,
    /// Multiply the distillation term by `T²`.
    pub scale_by_t_squared: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            temperature: 1.0,
            alpha: 0.5,
            mode: DistillMode::Output,
            feature_weight: 0.0,
            scale_by_t_squared: true,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.feature_weight >= 0.0 && self.feature_weight.is_finite()) {
            return Err(Error::Config(format!(
                "feature_weight must be nonnegative, got {}",
                self.feature_weight
            )));
        }
        Ok(())
    }

    /// Coefficient on the distillation loss.
    pub fn distill_weight(&self) -> f64 {
        if self.scale_by_t_squared {
            self.alpha * self.temperature * self.temperature
        } else {
            self.alpha
        }
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive, got {t}")))
    }
}

/// `softmax_rows(logits / T)`.
pub fn soften_var(g: &mut Graph, logits: Var, t: f64) -> Result<Var> {
    check_temperature(t)?;
    let scaled = g.scale(logits, 1.0 / t)?;
    g.softmax_rows(scaled)
}

/// Mean over rows of `-Σ_c target_c · ln(max(p_c, 1e-12))`.
pub fn soft_cross_entropy_var(g: &mut Graph, targets: Var, probs: Var) -> Result<Var> {
    let (tt, tp) = (g.value(targets), g.value(probs));
    if tt.shape() != tp.shape() || tt.shape().len() != 2 {
        return Err(Error::Shape {
            op: "soft_cross_entropy",
            lhs: tt.shape().to_vec(),
            rhs: tp.shape().to_vec(),
        });
    }
    let batch = tt.rows() as f64;
    let logp = g.log_floor(probs, PROB_FLOOR)?;
    let prod = g.mul(targets, logp)?;
    let total = g.sum(prod)?;
    g.scale(total, -1.0 / batch)
}

/// One-hot `[labels.len() × classes]` matrix.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    contract!(!labels.is_empty(), "one_hot of an empty label list");
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        contract!(l < classes, "label {l} outside 0..{classes}");
        t.data_mut()[i * classes + l] = 1.0;
    }
    Ok(t)
}

/// Cross-entropy of `probs` against integer labels.
pub fn task_loss_var(g: &mut Graph, labels: &[usize], probs: Var) -> Result<Var> {
    let classes = g.value(probs).cols();
    let targets = g.constant(one_hot(labels, classes)?);
    soft_cross_entropy_var(g, targets, probs)
}

/// Soft cross-entropy of the student distribution against the teacher's.
pub fn distill_loss_var(g: &mut Graph, teacher_probs: Var, student_probs: Var) -> Result<Var> {
    soft_cross_entropy_var(g, teacher_probs, student_probs)
}

/// `w·L_distill + (1-alpha)·L_task` with `w` from [`DistillConfig::distill_weight`].
pub fn combined_loss_var(g: &mut Graph, l_task: Var, l_distill: Var, cfg: &DistillConfig) -> Result<Var> {
    let d = g.scale(l_distill, cfg.distill_weight())?;
    let t = g.scale(l_task, 1.0 - cfg.alpha)?;
    g.add(d, t)
}

/// Mean squared error between `student_hidden · projection` and
/// `teacher_hidden`, over every entry.
pub fn feature_distill_loss_var(g: &mut Graph, teacher_hidden: Var, student_hidden: Var, projection: Var) -> Result<Var> {
    let projected = g.matmul(student_hidden, projection)?;
    let diff = g.sub(projected, teacher_hidden)?;
    let sq = g.mul(diff, diff)?;
    g.mean(sq)
}

pub fn soften(logits: &Tensor, t: f64) -> Result<Tensor> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let p = soften_var(&mut g, l, t)?;
    Ok(g.value(p).clone())
}

pub fn task_loss(labels: &[usize], probs: &Tensor) -> Result<f64> {
    contract!(
        labels.len() == probs.rows(),
        "{} labels for {} probability rows",
        labels.len(),
        probs.rows()
    );
    let mut g = Graph::new();
    let p = g.constant(probs.clone());
    let l = task_loss_var(&mut g, labels, p)?;
    Ok(g.value(l).item())
}

pub fn distill_loss(teacher_probs: &Tensor, student_probs: &Tensor) -> Result<f64> {
    contract!(
        teacher_probs.shape() == student_probs.shape(),
        "teacher {:?} and student {:?} shapes differ",
        teacher_probs.shape(),
        student_probs.shape()
    );
    let mut g = Graph::new();
    let t = g.constant(teacher_probs.clone());
    let s = g.constant(student_probs.clone());
    let l = distill_loss_var(&mut g, t, s)?;
    Ok(g.value(l).item())
}

pub fn combined_loss(l_task: f64, l_distill: f64, cfg: &DistillConfig) -> f64 {
    cfg.distill_weight() * l_distill + (1.0 - cfg.alpha) * l_task
}

pub fn feature_distill_loss(teacher_hidden: &Tensor, student_hidden: &Tensor, projection: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let t = g.constant(teacher_hidden.clone());
    let s = g.constant(student_hidden.clone());
    let p = g.constant(projection.clone());
    let l = feature_distill_loss_var(&mut g, t, s, p)?;
    Ok(g.value(l).item())
}
