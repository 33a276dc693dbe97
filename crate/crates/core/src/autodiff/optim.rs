use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::params::ParamStore;

/// SGD over the parameters selected by `filter`, with global-norm gradient
/// clipping: when the joint gradient norm exceeds `clip_norm`, all selected
/// gradients are rescaled to that norm before the update.
pub fn sgd_step(
    store: &mut ParamStore,
    lr: f64,
    clip_norm: Option<f64>,
    filter: impl Fn(&str) -> bool,
) -> Result<()> {
    let mut sq_norm = 0.0;
    for (name, p) in store.iter() {
        if !filter(name) {
            continue;
        }
        for &g in &p.grad {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
            sq_norm += g * g;
        }
    }
    let norm = sq_norm.sqrt();
    let scale = match clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    for (name, p) in store.iter_mut() {
        if !filter(name) {
            continue;
        }
        for (v, g) in p.data.iter_mut().zip(&p.grad) {
            *v -= lr * scale * g;
        }
    }
    Ok(())
}

/// Per-parameter first/second moment state for Adam.
#[derive(Debug, Default, Clone)]
pub struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }
}

/// Adam update over the parameters selected by `filter`. No weight decay.
pub fn adam_step(
    store: &mut ParamStore,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    filter: impl Fn(&str) -> bool,
) -> Result<()> {
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - beta1.powf(t);
    let bc2 = 1.0 - beta2.powf(t);
    for (name, p) in store.iter_mut() {
        if !filter(name) {
            continue;
        }
        for &g in &p.grad {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
        }
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; p.data.len()]);
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; p.data.len()]);
        for k in 0..p.data.len() {
            let g = p.grad[k];
            m[k] = beta1 * m[k] + (1.0 - beta1) * g;
            v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            p.data[k] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(grad: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        let n = grad.len();
        s.register("p", vec![n], vec![0.0; n]).unwrap();
        s.add_grad("p", &grad).unwrap();
        s
    }

    #[test]
    fn sgd_clips_global_norm() {
        // grad norm 10, clip 5 -> effective grads scaled by 0.5
        let mut s = store_with(vec![6.0, 8.0]);
        sgd_step(&mut s, 1.0, Some(5.0), |_| true).unwrap();
        let p = s.get("p").unwrap();
        assert!((p.data[0] + 3.0).abs() < 1e-12);
        assert!((p.data[1] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut s = store_with(vec![1.0, 1.0]);
        sgd_step(&mut s, 0.0, None, |_| true).unwrap();
        assert_eq!(s.get("p").unwrap().data, vec![0.0, 0.0]);
        let mut adam = AdamState::new();
        adam_step(&mut s, &mut adam, 0.0, 0.9, 0.999, 1e-8, |_| true).unwrap();
        assert_eq!(s.get("p").unwrap().data, vec![0.0, 0.0]);
    }

    #[test]
    fn sgd_converges_on_quadratic() {
        // f(x) = 0.5 (x - 3)^2, grad = x - 3; 100 steps at lr 0.1 from 0.
        let mut s = ParamStore::new();
        s.register("x", vec![1], vec![0.0]).unwrap();
        for _ in 0..100 {
            let x = s.get("x").unwrap().data[0];
            s.zero_grads();
            s.add_grad("x", &[x - 3.0]).unwrap();
            sgd_step(&mut s, 0.1, None, |_| true).unwrap();
        }
        let x = s.get("x").unwrap().data[0];
        assert!((x - 3.0).abs() < 1e-3, "x = {x}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store_with(vec![f64::NAN]);
        let err = sgd_step(&mut s, 0.1, None, |_| true).unwrap_err();
        assert!(err.to_string().contains("`p`"), "{err}");
    }

    #[test]
    fn filters_select_disjoint_parameter_sets() {
        let mut s = ParamStore::new();
        s.register("lm.w", vec![1], vec![0.0]).unwrap();
        s.register("core.w", vec![1], vec![0.0]).unwrap();
        s.add_grad("lm.w", &[1.0]).unwrap();
        s.add_grad("core.w", &[1.0]).unwrap();
        sgd_step(&mut s, 0.5, None, |n| !n.starts_with("lm.")).unwrap();
        assert_eq!(s.get("lm.w").unwrap().data, vec![0.0]);
        assert_eq!(s.get("core.w").unwrap().data, vec![-0.5]);
        let mut adam = AdamState::new();
        adam_step(&mut s, &mut adam, 0.1, 0.9, 0.999, 1e-8, |n| {
            n.starts_with("lm.")
        })
        .unwrap();
        assert!(s.get("lm.w").unwrap().data[0] < 0.0);
        assert_eq!(s.get("core.w").unwrap().data, vec![-0.5]);
    }

    #[test]
    fn adam_moves_toward_minimum() {
        let mut s = ParamStore::new();
        s.register("x", vec![1], vec![4.0]).unwrap();
        let mut adam = AdamState::new();
        for _ in 0..2000 {
            let x = s.get("x").unwrap().data[0];
            s.zero_grads();
            s.add_grad("x", &[2.0 * x]).unwrap(); // f = x^2
            adam_step(&mut s, &mut adam, 0.01, 0.9, 0.999, 1e-8, |_| true).unwrap();
        }
        assert!(s.get("x").unwrap().data[0].abs() < 0.05);
    }
}
