use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::params::ParamStore;
use super::tape::{Tape, Value};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<(String, usize)>,
    pub coordinates_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compare reverse-mode gradients of `loss_fn` against central differences
/// `(f(p + eps) - f(p - eps)) / 2 eps`.
///
/// `samples_per_param` coordinates are drawn per tensor (all of them when a
/// tensor is smaller); sampling keeps the check fast on full-size models
/// while still touching every parameter block. Relative error per
/// coordinate is `|a - n| / max(|a|, |n|)`, reported as 0 when both are
/// below 1e-6.
pub fn grad_check(
    store: &mut ParamStore,
    eps: f64,
    samples_per_param: usize,
    seed: u64,
    mut loss_fn: impl FnMut(&ParamStore, &mut Tape) -> Result<Value>,
) -> Result<GradCheckReport> {
    // Analytic gradients.
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    tape.backward(loss)?;
    tape.flush_grads(store)?;
    let analytic: Vec<(String, Vec<f64>)> = store
        .iter()
        .map(|(n, p)| (n.to_string(), p.grad.clone()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coordinates_checked: 0,
    };

    for (name, grads) in &analytic {
        let n = grads.len();
        let coords: Vec<usize> = if n <= samples_per_param {
            (0..n).collect()
        } else {
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < samples_per_param {
                picked.insert(rng.gen_range(0..n));
            }
            picked.into_iter().collect()
        };
        for k in coords {
            let orig = store.get(name)?.data[k];
            store.get_mut(name)?.data[k] = orig + eps;
            let mut tp = Tape::new();
            let lp = loss_fn(store, &mut tp)?;
            let fp = tp.scalar(lp);
            store.get_mut(name)?.data[k] = orig - eps;
            let mut tm = Tape::new();
            let lm = loss_fn(store, &mut tm)?;
            let fm = tm.scalar(lm);
            store.get_mut(name)?.data[k] = orig;

            let numeric = (fp - fm) / (2.0 * eps);
            let a = grads[k];
            let scale = a.abs().max(numeric.abs());
            let rel = if scale < 1e-6 {
                0.0
            } else {
                (a - numeric).abs() / scale
            };
            report.coordinates_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), k));
            }
        }
    }
    Ok(report)
}
