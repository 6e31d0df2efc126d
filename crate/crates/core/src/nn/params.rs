//! Flat parameter store addressed by (layer index, role).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::arch::{ArchDescriptor, LayerSpec, Shape};
use crate::nn::Scalar;

/// What a parameter tensor is for. Running statistics are state, not
/// trainable weights, but live here so checkpoints capture them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    ConvWeight,
    ConvBias,
    BnGamma,
    BnBeta,
    BnRunningMean,
    BnRunningVar,
    FcWeight,
    FcBias,
}

impl ParamRole {
    pub const ALL: [ParamRole; 8] = [
        ParamRole::ConvWeight,
        ParamRole::ConvBias,
        ParamRole::BnGamma,
        ParamRole::BnBeta,
        ParamRole::BnRunningMean,
        ParamRole::BnRunningVar,
        ParamRole::FcWeight,
        ParamRole::FcBias,
    ];

    /// Roles an optimizer may ever touch; running statistics are excluded.
    pub fn trainable(self) -> bool {
        !matches!(self, ParamRole::BnRunningMean | ParamRole::BnRunningVar)
    }

    pub fn tag(self) -> &'static str {
        match self {
            ParamRole::ConvWeight => "conv_weight",
            ParamRole::ConvBias => "conv_bias",
            ParamRole::BnGamma => "bn_gamma",
            ParamRole::BnBeta => "bn_beta",
            ParamRole::BnRunningMean => "bn_running_mean",
            ParamRole::BnRunningVar => "bn_running_var",
            ParamRole::FcWeight => "fc_weight",
            ParamRole::FcBias => "fc_bias",
        }
    }

    pub fn from_tag(tag: &str) -> Option<ParamRole> {
        ParamRole::ALL.into_iter().find(|r| r.tag() == tag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub layer: usize,
    pub role: ParamRole,
    /// Logical dims: conv weight [out, in, k, k]; fc weight [out, in];
    /// per-channel vectors [c].
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> ParamTensor<T> {
    fn filled(layer: usize, role: ParamRole, shape: Vec<usize>, value: T) -> ParamTensor<T> {
        let len = shape.iter().product();
        ParamTensor { layer, role, shape, data: vec![value; len] }
    }
}

/// All parameters of one network, ordered by layer then role.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    tensors: Vec<ParamTensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded init: weights and biases uniform in +-1/sqrt(fan_in), batch
    /// norm at identity (gamma 1, beta 0, running mean 0, running var 1).
    /// Tensor draw order follows the layer list, so a seed fully determines
    /// every value.
    pub fn init(arch: &ArchDescriptor, seed: u64) -> Result<ModelParams<T>> {
        let shapes = arch.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        for (idx, layer) in arch.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv2d { out_channels, kernel, bias, .. } => {
                    let in_channels = match shapes.input[idx] {
                        Shape::Map { channels, .. } => channels,
                        Shape::Vec(_) => unreachable!("validated"),
                    };
                    let fan_in = in_channels * kernel * kernel;
                    let shape = vec![out_channels, in_channels, kernel, kernel];
                    tensors.push(uniform_tensor(&mut rng, idx, ParamRole::ConvWeight, shape, fan_in));
                    if bias {
                        tensors.push(uniform_tensor(
                            &mut rng,
                            idx,
                            ParamRole::ConvBias,
                            vec![out_channels],
                            fan_in,
                        ));
                    }
                }
                LayerSpec::BatchNorm { channels } => {
                    tensors.push(ParamTensor::filled(idx, ParamRole::BnGamma, vec![channels], T::one()));
                    tensors.push(ParamTensor::filled(idx, ParamRole::BnBeta, vec![channels], T::zero()));
                    tensors.push(ParamTensor::filled(
                        idx,
                        ParamRole::BnRunningMean,
                        vec![channels],
                        T::zero(),
                    ));
                    tensors.push(ParamTensor::filled(
                        idx,
                        ParamRole::BnRunningVar,
                        vec![channels],
                        T::one(),
                    ));
                }
                LayerSpec::FullyConnected { out_features } => {
                    let in_features = match shapes.input[idx] {
                        Shape::Vec(n) => n,
                        Shape::Map { .. } => unreachable!("validated"),
                    };
                    tensors.push(uniform_tensor(
                        &mut rng,
                        idx,
                        ParamRole::FcWeight,
                        vec![out_features, in_features],
                        in_features,
                    ));
                    tensors.push(uniform_tensor(
                        &mut rng,
                        idx,
                        ParamRole::FcBias,
                        vec![out_features],
                        in_features,
                    ));
                }
                LayerSpec::Relu | LayerSpec::MaxPool { .. } | LayerSpec::Flatten => {}
            }
        }
        Ok(ModelParams { tensors })
    }

    pub fn from_tensors(tensors: Vec<ParamTensor<T>>) -> ModelParams<T> {
        ModelParams { tensors }
    }

    pub fn tensors(&self) -> &[ParamTensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, layer: usize, role: ParamRole) -> Option<&ParamTensor<T>> {
        self.tensors.iter().find(|t| t.layer == layer && t.role == role)
    }

    pub fn get_mut(&mut self, layer: usize, role: ParamRole) -> Option<&mut ParamTensor<T>> {
        self.tensors.iter_mut().find(|t| t.layer == layer && t.role == role)
    }

    /// Like [`ModelParams::get`] but panics; for tensors the descriptor
    /// guarantees to exist.
    pub fn expect(&self, layer: usize, role: ParamRole) -> &ParamTensor<T> {
        self.get(layer, role)
            .unwrap_or_else(|| panic!("missing {} for layer {layer}", role.tag()))
    }

    /// Mutable twin of [`ModelParams::expect`].
    pub fn expect_mut(&mut self, layer: usize, role: ParamRole) -> &mut ParamTensor<T> {
        self.get_mut(layer, role)
            .unwrap_or_else(|| panic!("missing {} for layer {layer}", role.tag()))
    }

    /// Total scalar count across all tensors, running statistics included.
    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    layer: t.layer,
                    role: t.role,
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| U::from_f64(v.into_f64())).collect(),
                })
                .collect(),
        }
    }
}

fn uniform_tensor<T: Scalar>(
    rng: &mut ChaCha8Rng,
    layer: usize,
    role: ParamRole,
    shape: Vec<usize>,
    fan_in: usize,
) -> ParamTensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    ParamTensor { layer, role, shape, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seed_deterministic() {
        let arch = ArchDescriptor::compact();
        let a: ModelParams<f32> = ModelParams::init(&arch, 7).unwrap();
        let b: ModelParams<f32> = ModelParams::init(&arch, 7).unwrap();
        let c: ModelParams<f32> = ModelParams::init(&arch, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn reference_tensor_inventory() {
        let arch = ArchDescriptor::reference();
        let p: ModelParams<f32> = ModelParams::init(&arch, 0).unwrap();
        let convs = p.tensors().iter().filter(|t| t.role == ParamRole::ConvWeight).count();
        let conv_biases = p.tensors().iter().filter(|t| t.role == ParamRole::ConvBias).count();
        let gammas = p.tensors().iter().filter(|t| t.role == ParamRole::BnGamma).count();
        assert_eq!(convs, 8);
        assert_eq!(conv_biases, 0);
        assert_eq!(gammas, 8);
        assert!(p.get(p.tensors().last().unwrap().layer, ParamRole::FcBias).is_some());
    }

    #[test]
    fn bn_starts_at_identity() {
        let arch = ArchDescriptor::compact();
        let p: ModelParams<f64> = ModelParams::init(&arch, 1).unwrap();
        let bn_layer = p
            .tensors()
            .iter()
            .find(|t| t.role == ParamRole::BnGamma)
            .map(|t| t.layer)
            .unwrap();
        assert!(p.expect(bn_layer, ParamRole::BnGamma).data.iter().all(|&v| v == 1.0));
        assert!(p.expect(bn_layer, ParamRole::BnBeta).data.iter().all(|&v| v == 0.0));
        assert!(p.expect(bn_layer, ParamRole::BnRunningVar).data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn weight_bound_respects_fan_in() {
        let arch = ArchDescriptor::reference();
        let p: ModelParams<f64> = ModelParams::init(&arch, 3).unwrap();
        let w = p.expect(0, ParamRole::ConvWeight);
        // first conv: fan_in = 1 * 5 * 5
        let bound = 1.0 / 25f64.sqrt();
        assert!(w.data.iter().all(|v| v.abs() <= bound));
        assert!(w.data.iter().any(|v| v.abs() > bound * 0.5));
    }
}
