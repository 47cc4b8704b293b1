//! Central finite-difference oracle for gradients computed by [`Graph::backward`].
//!
//! Nonsmooth points (e.g. `|x|` at 0, ReLU exactly at a kink) are outside the
//! domain of this check: central differences average the two one-sided slopes
//! there and will disagree with any chosen subgradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamId, Var};
use crate::distill::task_loss_var;
use crate::error::{contract, Result};
use crate::model::{encode, AttentionMask, EncoderModel, ModelConfig, ModelVars};
use crate::tensor::Tensor;

/// Evaluates `f` with `params` registered as `ParamId(0..n)` leaves.
fn eval<F>(f: &F, params: &[Tensor]) -> Result<(Graph, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, t)| g.param(ParamId(i), t.clone()))
        .collect();
    let loss = f(&mut g, &vars)?;
    contract!(g.value(loss).len() == 1, "gradient check needs a scalar function");
    Ok((g, loss))
}

/// Relative error used by the check: `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Largest relative error between reverse-mode and central-difference
/// gradients over every coordinate of every parameter.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    contract!(h > 0.0, "finite-difference step must be positive, got {h}");
    let (g, loss) = eval(&f, params)?;
    let base = g.value(loss).item();
    let (g2, loss2) = eval(&f, params)?;
    contract!(
        base.to_bits() == g2.value(loss2).item().to_bits(),
        "function is not deterministic: two evaluations at the same point differ"
    );
    let grads = g.backward(loss)?;

    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        let analytic = grads.get(ParamId(pi)).expect("every leaf is reported");
        for j in 0..param.len() {
            let orig = param.data()[j];
            probe[pi].data_mut()[j] = orig + h;
            let (gp, lp) = eval(&f, &probe)?;
            probe[pi].data_mut()[j] = orig - h;
            let (gm, lm) = eval(&f, &probe)?;
            probe[pi].data_mut()[j] = orig;
            let numeric = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data()[j], numeric));
        }
    }
    Ok(worst)
}

/// Checks the full classifier loss of a freshly initialized model on a
/// random batch of `batch` sequences. One-dimensional parameters are
/// perturbed away from their zero/one initialization first so that every
/// term carries gradient.
pub fn model_gradcheck(config: &ModelConfig, batch: usize, seed: u64, h: f64) -> Result<f64> {
    contract!(batch >= 1, "gradient check needs a nonempty batch");
    contract!(config.vocab_size > 4, "gradient check needs a vocabulary with content ids");
    let mut model = EncoderModel::new(*config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.params_mut() {
        if t.shape().len() == 1 {
            for x in t.data_mut() {
                *x += rng.gen_range(-0.2..0.2);
            }
        }
    }
    let s = config.max_seq_len;
    let lengths: Vec<usize> = (0..batch).map(|_| rng.gen_range(2..=s)).collect();
    let seqs: Vec<Vec<usize>> = lengths
        .iter()
        .map(|&len| {
            (0..s)
                .map(|p| match p {
                    0 => crate::data::CLS,
                    p if p < len => rng.gen_range(4..config.vocab_size),
                    _ => crate::data::PAD,
                })
                .collect()
        })
        .collect();
    let mask = AttentionMask::from_lengths(&lengths, s)?;
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..config.num_classes)).collect();
    let f = |g: &mut Graph, vars: &[Var]| {
        let mv = ModelVars::from_slice(config, vars);
        let fwd = encode(g, &mv, config, &seqs, &mask)?;
        let probs = g.softmax_rows(fwd.logits)?;
        task_loss_var(g, &labels, probs)
    };
    finite_diff_check(f, model.params(), h)
}
