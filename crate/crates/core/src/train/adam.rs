//! Adam over a strategy-selected parameter subset.
//!
//! Moments exist only for the selected tensors, so unselected
//! parameters are untouched by construction: the update loop never
//! visits them. Bias-correction factors are computed in `f64` and the
//! element update runs in the model's scalar type, matching what a
//! deployed fixed-width implementation would do.

use crate::error::Error;
use crate::nn::{GradStore, ModelParams, ParamRole, Scalar, UpdateStrategy};

/// Optimizer hyperparameters. `lr = 0` is allowed and makes the step a
/// no-op on the parameters (moments still advance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("adam", "learning rate must be finite and >= 0"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid("adam", format!("{name} must be in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("adam", "epsilon must be positive"));
        }
        Ok(())
    }
}

struct MomentTensor<T> {
    layer: usize,
    role: ParamRole,
    m: Vec<T>,
    v: Vec<T>,
}

/// First and second moments for the selected parameters, plus the step
/// counter driving bias correction.
pub struct AdamState<T> {
    step: u64,
    moments: Vec<MomentTensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like the strategy's selection in `params`.
    pub fn new(params: &ModelParams<T>, strategy: &UpdateStrategy) -> AdamState<T> {
        let moments = params
            .tensors()
            .iter()
            .filter(|t| strategy.selects(t.role))
            .map(|t| MomentTensor {
                layer: t.layer,
                role: t.role,
                m: vec![T::zero(); t.data.len()],
                v: vec![T::zero(); t.data.len()],
            })
            .collect();
        AdamState { step: 0, moments }
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update from accumulated gradients. Gradients must cover
/// exactly the tensors the state was built for.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &GradStore<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(), Error> {
    cfg.validate()?;
    if grads.tensors().len() != state.moments.len() {
        return Err(Error::invalid(
            "adam",
            format!(
                "{} gradient tensors vs {} moment tensors",
                grads.tensors().len(),
                state.moments.len()
            ),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let scale = T::from_f64(cfg.lr / bc1);
    let b1 = T::from_f64(cfg.beta1);
    let b1c = T::from_f64(1.0 - cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let b2c = T::from_f64(1.0 - cfg.beta2);
    let inv_bc2 = T::from_f64(1.0 / bc2);
    let eps = T::from_f64(cfg.eps);

    for (g, mom) in grads.tensors().iter().zip(&mut state.moments) {
        if g.layer != mom.layer || g.role != mom.role || g.data.len() != mom.m.len() {
            return Err(Error::invalid(
                "adam",
                format!(
                    "gradient tensor (layer {}, {}) does not match optimizer state",
                    g.layer,
                    g.role.tag()
                ),
            ));
        }
        let p = params.get_mut(g.layer, g.role).ok_or_else(|| {
            Error::invalid(
                "adam",
                format!("no parameter tensor at layer {} role {}", g.layer, g.role.tag()),
            )
        })?;
        if p.data.len() != g.data.len() {
            return Err(Error::invalid("adam", "parameter and gradient length mismatch"));
        }
        for k in 0..g.data.len() {
            let gk = g.data[k];
            mom.m[k] = b1 * mom.m[k] + b1c * gk;
            mom.v[k] = b2 * mom.v[k] + b2c * gk * gk;
            let vhat = mom.v[k] * inv_bc2;
            p.data[k] -= scale * mom.m[k] / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
