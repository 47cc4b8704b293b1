use std::collections::BTreeSet;

use super::TrainConfig;
use crate::autograd::{GradientMap, ParamId};
use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

/// AdamW moments for a fixed list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    names: Vec<String>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    frozen: BTreeSet<ParamId>,
}

impl OptimizerState {
    /// Zero moments shaped like `params`; `names` label diagnostics.
    pub fn new(names: Vec<String>, params: &[Tensor]) -> Self {
        assert_eq!(names.len(), params.len(), "one name per parameter");
        OptimizerState {
            names,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
            frozen: BTreeSet::new(),
        }
    }

    /// Excludes `id` from updates, weight decay, and clipping.
    pub fn freeze(&mut self, id: ParamId) {
        self.frozen.insert(id);
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, id: ParamId) -> &Tensor {
        &self.m[id.0]
    }

    pub fn second_moment(&self, id: ParamId) -> &Tensor {
        &self.v[id.0]
    }
}

/// One decoupled-weight-decay Adam update, after clipping the global
/// gradient norm to `cfg.clip_norm`.
pub fn optimizer_step(
    params: &mut [Tensor],
    grads: &GradientMap,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    contract!(
        params.len() == state.m.len(),
        "optimizer state tracks {} parameters, got {}",
        state.m.len(),
        params.len()
    );
    let mut live = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        let id = ParamId(i);
        if state.frozen.contains(&id) {
            continue;
        }
        let g = grads
            .get(id)
            .ok_or_else(|| Error::Contract(format!("no gradient for parameter `{}`", state.names[i])))?;
        contract!(
            g.shape() == p.shape(),
            "gradient for `{}` has shape {:?}, parameter {:?}",
            state.names[i],
            g.shape(),
            p.shape()
        );
        if g.data().iter().any(|x| x.is_nan()) {
            return Err(Error::Training(format!("NaN gradient for parameter `{}`", state.names[i])));
        }
        live.push((i, g));
    }

    let mut factor = 1.0;
    if let Some(max_norm) = cfg.clip_norm {
        let norm = live
            .iter()
            .flat_map(|(_, g)| g.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        if norm > max_norm {
            factor = max_norm / norm;
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, wd, eps) = (cfg.learning_rate, cfg.weight_decay, cfg.adam_eps);
    for (i, g) in live {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((theta, &gi), mi), vi) in params[i].data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            let gi = gi * factor;
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *theta = *theta - lr * (m_hat / (v_hat.sqrt() + eps)) - lr * wd * *theta;
        }
    }
    Ok(())
}
