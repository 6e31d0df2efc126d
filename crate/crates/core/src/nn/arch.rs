//! Network architecture as data: an input spec plus an ordered layer list.
//!
//! The engine, the parameter store, and the cost model all walk the same
//! descriptor, so shapes are resolved once here and reused everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input tensor layout (single frame): channels x height x width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputSpec {
    pub fn elems(&self) -> usize {
        self.channels * self.height * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    FullyConnected {
        out_features: usize,
    },
}

/// Shape of the tensor flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map { channels: usize, height: usize, width: usize },
    Vec(usize),
}

impl Shape {
    pub fn elems(&self) -> usize {
        match *self {
            Shape::Map { channels, height, width } => channels * height * width,
            Shape::Vec(n) => n,
        }
    }

    /// Feature-map dimensions, erring on flat shapes.
    pub fn map_dims(&self) -> Result<(usize, usize, usize)> {
        match *self {
            Shape::Map { channels, height, width } => Ok((channels, height, width)),
            Shape::Vec(_) => Err(Error::invalid("shape", "expected a feature map, found a vector")),
        }
    }
}

/// Output dimension every descriptor must end in: (x, y, z, yaw).
pub const POSE_OUTPUTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
}

/// Resolved per-layer input/output shapes for a valid descriptor.
#[derive(Debug, Clone)]
pub struct LayerShapes {
    pub input: Vec<Shape>,
    pub output: Vec<Shape>,
}

impl ArchDescriptor {
    /// Checks shape chaining and structural rules, returning resolved
    /// per-layer shapes.
    ///
    /// Rules: convolutions and pools only on feature maps with positive
    /// output dims; each batch-norm layer directly follows a convolution
    /// with the same channel count; fully connected layers only on flattened
    /// vectors; the final output is exactly [`POSE_OUTPUTS`] wide.
    pub fn shapes(&self) -> Result<LayerShapes> {
        if self.input.channels == 0 || self.input.height == 0 || self.input.width == 0 {
            return Err(Error::invalid("input spec", "zero-sized input"));
        }
        if self.layers.is_empty() {
            return Err(Error::invalid("descriptor", "no layers"));
        }
        let mut cur = Shape::Map {
            channels: self.input.channels,
            height: self.input.height,
            width: self.input.width,
        };
        let mut input_shapes = Vec::with_capacity(self.layers.len());
        let mut output_shapes = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let next = match *layer {
                LayerSpec::Conv2d { out_channels, kernel, stride, padding, .. } => {
                    let (_c, h, w) = expect_map(cur, idx, "conv2d")?;
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(layer_err(idx, "conv2d needs positive channels/kernel/stride"));
                    }
                    let oh = conv_out(h, kernel, stride, padding)
                        .ok_or_else(|| layer_err(idx, "conv2d kernel larger than padded input"))?;
                    let ow = conv_out(w, kernel, stride, padding)
                        .ok_or_else(|| layer_err(idx, "conv2d kernel larger than padded input"))?;
                    Shape::Map { channels: out_channels, height: oh, width: ow }
                }
                LayerSpec::BatchNorm { channels } => {
                    let (c, ..) = expect_map(cur, idx, "batch norm")?;
                    let follows_conv =
                        idx > 0 && matches!(self.layers[idx - 1], LayerSpec::Conv2d { .. });
                    if !follows_conv {
                        return Err(layer_err(idx, "batch norm must directly follow a conv2d"));
                    }
                    if channels != c {
                        return Err(layer_err(
                            idx,
                            format!("batch norm channels {channels} != feature channels {c}"),
                        ));
                    }
                    cur
                }
                LayerSpec::Relu => cur,
                LayerSpec::MaxPool { kernel, stride } => {
                    let (c, h, w) = expect_map(cur, idx, "max pool")?;
                    if kernel == 0 || stride == 0 {
                        return Err(layer_err(idx, "max pool needs positive kernel/stride"));
                    }
                    let oh = conv_out(h, kernel, stride, 0)
                        .ok_or_else(|| layer_err(idx, "max pool kernel larger than input"))?;
                    let ow = conv_out(w, kernel, stride, 0)
                        .ok_or_else(|| layer_err(idx, "max pool kernel larger than input"))?;
                    Shape::Map { channels: c, height: oh, width: ow }
                }
                LayerSpec::Flatten => match cur {
                    Shape::Map { .. } => Shape::Vec(cur.elems()),
                    Shape::Vec(_) => return Err(layer_err(idx, "flatten input already flat")),
                },
                LayerSpec::FullyConnected { out_features } => match cur {
                    Shape::Vec(_) => {
                        if out_features == 0 {
                            return Err(layer_err(idx, "fully connected needs positive width"));
                        }
                        Shape::Vec(out_features)
                    }
                    Shape::Map { .. } => {
                        return Err(layer_err(idx, "fully connected input must be flattened"))
                    }
                },
            };
            input_shapes.push(cur);
            output_shapes.push(next);
            cur = next;
        }
        if cur != Shape::Vec(POSE_OUTPUTS) {
            return Err(Error::invalid(
                "descriptor",
                format!("final output must be {POSE_OUTPUTS} values, got {cur:?}"),
            ));
        }
        Ok(LayerShapes { input: input_shapes, output: output_shapes })
    }

    /// Reference full-size descriptor: the deployed estimator this crate
    /// studies. Eight bias-free conv + batch-norm + relu blocks over a
    /// 96x160 grayscale frame, one early max pool, and a 1920-to-4 head;
    /// about 292k parameters and 14.1 MMAC per forward frame.
    pub fn reference() -> ArchDescriptor {
        let conv = |out_channels, kernel, stride, padding| LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride,
            padding,
            bias: false,
        };
        let bn = |channels| LayerSpec::BatchNorm { channels };
        ArchDescriptor {
            input: InputSpec { channels: 1, height: 96, width: 160 },
            layers: vec![
                conv(30, 5, 2, 2),
                bn(30),
                LayerSpec::Relu,
                LayerSpec::MaxPool { kernel: 2, stride: 2 },
                conv(32, 3, 2, 1),
                bn(32),
                LayerSpec::Relu,
                conv(32, 3, 1, 1),
                bn(32),
                LayerSpec::Relu,
                conv(32, 3, 2, 1),
                bn(32),
                LayerSpec::Relu,
                conv(64, 3, 1, 1),
                bn(64),
                LayerSpec::Relu,
                conv(64, 3, 1, 1),
                bn(64),
                LayerSpec::Relu,
                conv(116, 3, 2, 1),
                bn(116),
                LayerSpec::Relu,
                conv(128, 3, 1, 1),
                bn(128),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::FullyConnected { out_features: POSE_OUTPUTS },
            ],
        }
    }

    /// Compact descriptor for desk-scale experiments: same input contract
    /// and layer vocabulary as [`ArchDescriptor::reference`] at roughly 2%
    /// of the compute (about 7.7k parameters, 0.43 MMAC per frame), so full
    /// train/fine-tune studies run in minutes on a laptop core.
    pub fn compact() -> ArchDescriptor {
        let conv = |out_channels| LayerSpec::Conv2d {
            out_channels,
            kernel: 3,
            stride: 2,
            padding: 1,
            bias: false,
        };
        let bn = |channels| LayerSpec::BatchNorm { channels };
        ArchDescriptor {
            input: InputSpec { channels: 1, height: 96, width: 160 },
            layers: vec![
                LayerSpec::MaxPool { kernel: 2, stride: 2 },
                conv(8),
                bn(8),
                LayerSpec::Relu,
                conv(12),
                bn(12),
                LayerSpec::Relu,
                conv(16),
                bn(16),
                LayerSpec::Relu,
                conv(24),
                bn(24),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::FullyConnected { out_features: POSE_OUTPUTS },
            ],
        }
    }
}

fn expect_map(s: Shape, idx: usize, what: &str) -> Result<(usize, usize, usize)> {
    match s {
        Shape::Map { channels, height, width } => Ok((channels, height, width)),
        Shape::Vec(_) => Err(layer_err(idx, format!("{what} needs a feature-map input"))),
    }
}

fn layer_err(idx: usize, why: impl Into<String>) -> Error {
    Error::invalid(format!("layer {idx}"), why)
}

/// Output extent of a strided window op, or None if the kernel does not fit.
pub(crate) fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}
