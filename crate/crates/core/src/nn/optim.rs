use super::{NnError, ParamStore, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moments, one pair per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn zeros_like(params: &ParamStore) -> Self {
        let z: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { m: z.clone(), v: z }
    }
}

/// One decoupled-weight-decay Adam update at 1-based step `t` for every
/// parameter whose id starts with one of `prefixes`. A missing gradient counts
/// as zero, so decay still applies.
pub fn adam_step(
    params: &mut ParamStore,
    state: &mut AdamState,
    hyper: &AdamHyper,
    t: u64,
    prefixes: &[&str],
) -> Result<()> {
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(NnError::ShapeMismatch(format!("{} moments for {} parameters", state.m.len(), params.len())));
    }
    if t == 0 {
        return Err(NnError::InvalidConfig("adam steps are 1-based".into()));
    }
    let c1 = 1.0 - hyper.beta1.powi(t as i32);
    let c2 = 1.0 - hyper.beta2.powi(t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        if !prefixes.iter().any(|pre| p.id.starts_with(pre)) {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        p.value.same_shape(m)?;
        if let Some(g) = &p.grad {
            p.value.same_shape(g)?;
        }
        let grad = p.grad.as_ref().map(Tensor::data);
        let values = p.value.data_mut();
        for j in 0..values.len() {
            let g = grad.map_or(0.0, |g| g[j]);
            let mj = &mut m.data_mut()[j];
            *mj = hyper.beta1 * *mj + (1.0 - hyper.beta1) * g;
            let mhat = *mj / c1;
            let vj = &mut v.data_mut()[j];
            *vj = hyper.beta2 * *vj + (1.0 - hyper.beta2) * g * g;
            let vhat = *vj / c2;
            let x = values[j];
            values[j] = x - hyper.lr * hyper.weight_decay * x - hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}
