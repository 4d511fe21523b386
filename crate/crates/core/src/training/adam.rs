use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParameterStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates per trainable parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(params: &ParameterStore) -> Self {
        let mut s = Self::default();
        for (name, p) in params.iter().filter(|(_, p)| p.trainable) {
            s.m.insert(name.to_string(), Tensor::zeros(p.value.shape()));
            s.v.insert(name.to_string(), Tensor::zeros(p.value.shape()));
        }
        s
    }
}

/// One bias-corrected Adam update. Frozen parameters and parameters without
/// a gradient entry are left alone.
pub fn adam_step(
    params: &mut ParameterStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads {
        let Some(p) = params.get(name) else {
            return Err(Error::Argument(format!(
                "gradient for unknown parameter {name:?}"
            )));
        };
        if !p.trainable {
            continue;
        }
        if g.shape() != p.value.shape() {
            return Err(Error::shape(
                format!("adam gradient {name}"),
                p.value.shape(),
                g.shape(),
            ));
        }
        for moments in [&state.m, &state.v] {
            match moments.get(name) {
                Some(t) if t.shape() == p.value.shape() => {}
                Some(t) => {
                    return Err(Error::shape(
                        format!("adam moment {name}"),
                        p.value.shape(),
                        t.shape(),
                    ))
                }
                None => return Err(Error::Argument(format!("no optimizer state for {name:?}"))),
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        if !p.trainable {
            continue;
        }
        let Some(g) = grads.get(name) else { continue };
        let m = state.m.get_mut(name).expect("checked above");
        let v = state.v.get_mut(name).expect("checked above");
        let w = p.value.values_mut();
        for (((w, m), v), g) in w
            .iter_mut()
            .zip(m.values_mut())
            .zip(v.values_mut())
            .zip(g.values())
        {
            *m = config.beta1 * *m + (1.0 - config.beta1) * g;
            *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}
