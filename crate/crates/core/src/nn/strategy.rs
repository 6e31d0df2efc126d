//! Selective parameter-update strategies.
//!
//! A strategy names the set of parameter roles the optimizer may touch.
//! Everything else stays bit-identical through a fine-tune, and the backward
//! pass only computes (and only retains activations for) what the selected
//! set needs.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamRole;

/// How batch-norm layers behave while training.
///
/// `Batch`: normalize with batch statistics and update running statistics;
/// the mode used whenever the bn scale is being trained, letting
/// normalization adapt to the new domain.
///
/// `Frozen`: normalize with the stored running statistics, which are treated
/// as constants and never updated. Strategies that leave the bn scale alone
/// default to this; it is what makes bias-only training run without
/// retaining any activation tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    Batch,
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateStrategy {
    roles: BTreeSet<ParamRole>,
    bn_mode: BnMode,
    label: String,
}

impl UpdateStrategy {
    /// Every weight and bias in the network.
    pub fn all_wb() -> UpdateStrategy {
        UpdateStrategy::from_roles(
            "all_wb",
            [
                ParamRole::ConvWeight,
                ParamRole::ConvBias,
                ParamRole::BnGamma,
                ParamRole::BnBeta,
                ParamRole::FcWeight,
                ParamRole::FcBias,
            ],
        )
    }

    /// Only the fully connected head; backpropagation stops right there.
    pub fn fc_wb() -> UpdateStrategy {
        UpdateStrategy::from_roles("fc_wb", [ParamRole::FcWeight, ParamRole::FcBias])
    }

    /// Only batch-norm scale and shift.
    pub fn bn_wb() -> UpdateStrategy {
        UpdateStrategy::from_roles("bn_wb", [ParamRole::BnGamma, ParamRole::BnBeta])
    }

    /// Only bias-like terms: conv biases, bn shifts, fc bias.
    pub fn bias() -> UpdateStrategy {
        UpdateStrategy::from_roles(
            "bias",
            [ParamRole::ConvBias, ParamRole::BnBeta, ParamRole::FcBias],
        )
    }

    /// The four named presets in table order.
    pub fn presets() -> [UpdateStrategy; 4] {
        [
            UpdateStrategy::all_wb(),
            UpdateStrategy::bn_wb(),
            UpdateStrategy::fc_wb(),
            UpdateStrategy::bias(),
        ]
    }

    fn from_roles(label: &str, roles: impl IntoIterator<Item = ParamRole>) -> UpdateStrategy {
        let roles: BTreeSet<ParamRole> = roles.into_iter().collect();
        let bn_mode = default_bn_mode(&roles);
        UpdateStrategy { roles, bn_mode, label: label.to_string() }
    }

    /// Union of two strategies, e.g. `bias` + `fc_wb` trains every bias plus
    /// the whole head.
    pub fn union(&self, other: &UpdateStrategy) -> UpdateStrategy {
        let roles: BTreeSet<ParamRole> = self.roles.union(&other.roles).copied().collect();
        let bn_mode = default_bn_mode(&roles);
        let label = format!("{}+{}", self.label, other.label);
        UpdateStrategy { roles, bn_mode, label }
    }

    /// Parses labels like `all_wb`, `bias`, or unions like `bias+fc_wb`.
    pub fn parse(label: &str) -> Result<UpdateStrategy> {
        let mut parts = label.split('+');
        let mut strat = Self::parse_single(parts.next().unwrap_or_default())?;
        for part in parts {
            strat = strat.union(&Self::parse_single(part)?);
        }
        Ok(strat)
    }

    fn parse_single(label: &str) -> Result<UpdateStrategy> {
        match label.trim() {
            "all_wb" => Ok(UpdateStrategy::all_wb()),
            "fc_wb" => Ok(UpdateStrategy::fc_wb()),
            "bn_wb" => Ok(UpdateStrategy::bn_wb()),
            "bias" => Ok(UpdateStrategy::bias()),
            other => Err(Error::invalid(
                "strategy",
                format!("unknown preset '{other}' (expected all_wb, fc_wb, bn_wb, or bias)"),
            )),
        }
    }

    pub fn selects(&self, role: ParamRole) -> bool {
        role.trainable() && self.roles.contains(&role)
    }

    pub fn roles(&self) -> impl Iterator<Item = ParamRole> + '_ {
        self.roles.iter().copied()
    }

    pub fn bn_mode(&self) -> BnMode {
        self.bn_mode
    }

    /// Overrides the batch-norm behavior chosen by the default rule.
    pub fn with_bn_mode(mut self, mode: BnMode) -> UpdateStrategy {
        self.bn_mode = mode;
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Human table name, e.g. "all (w+b)" or "bias (b)".
    pub fn display_name(&self) -> String {
        match self.label.as_str() {
            "all_wb" => "all (w+b)".to_string(),
            "fc_wb" => "fc (w+b)".to_string(),
            "bn_wb" => "bn (w+b)".to_string(),
            "bias" => "all (b)".to_string(),
            other => other.replace("_wb", " (w+b)").replace('+', " + "),
        }
    }
}

/// Batch statistics adapt only when the bn scale is trained; otherwise the
/// layer stays pinned to its pretrained statistics.
fn default_bn_mode(roles: &BTreeSet<ParamRole>) -> BnMode {
    if roles.contains(&ParamRole::BnGamma) {
        BnMode::Batch
    } else {
        BnMode::Frozen
    }
}

impl fmt::Display for UpdateStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}
