use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Parameters, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::seed::rng;

use super::network::{Forward, Network};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        units: usize,
    },
    Relu,
    Flatten,
    /// `x + body(x)`; the body must preserve the shape of its input.
    Residual {
        body: Vec<Layer>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    SimpleCnn,
    SmallMlp,
    TinyResidual,
}

impl ArchKind {
    pub const ALL: [ArchKind; 3] = [
        ArchKind::SimpleCnn,
        ArchKind::SmallMlp,
        ArchKind::TinyResidual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::SimpleCnn => "simple_cnn",
            ArchKind::SmallMlp => "small_mlp",
            ArchKind::TinyResidual => "tiny_residual",
        }
    }

    pub fn build(self, channels: usize, num_classes: usize) -> Architecture {
        match self {
            ArchKind::SimpleCnn => Architecture::simple_cnn(channels, num_classes),
            ArchKind::SmallMlp => Architecture::small_mlp(channels, num_classes),
            ArchKind::TinyResidual => Architecture::tiny_residual(channels, num_classes),
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture {s:?}")))
    }
}

/// Layer sequence over a fixed per-sample input shape. The final layer is a
/// dense layer whose width is the class count; softmax is applied on top.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

fn conv(out_channels: usize, stride: usize) -> Layer {
    Layer::Conv {
        out_channels,
        kernel: 3,
        stride,
        padding: 1,
    }
}

impl Architecture {
    /// Two 3×3 convolutions (16 and 32 channels, stride 2) and two dense layers.
    pub fn simple_cnn(channels: usize, num_classes: usize) -> Self {
        Architecture {
            name: ArchKind::SimpleCnn.as_str().into(),
            input_shape: vec![channels, 32, 32],
            layers: vec![
                conv(16, 2),
                Layer::Relu,
                conv(32, 2),
                Layer::Relu,
                Layer::Flatten,
                Layer::Dense { units: 128 },
                Layer::Relu,
                Layer::Dense { units: num_classes },
            ],
        }
    }

    pub fn small_mlp(channels: usize, num_classes: usize) -> Self {
        Architecture {
            name: ArchKind::SmallMlp.as_str().into(),
            input_shape: vec![channels, 32, 32],
            layers: vec![
                Layer::Flatten,
                Layer::Dense { units: 128 },
                Layer::Relu,
                Layer::Dense { units: num_classes },
            ],
        }
    }

    /// Strided stem, one two-convolution residual block, a strided
    /// transition convolution, then the same dense head as SimpleCNN.
    pub fn tiny_residual(channels: usize, num_classes: usize) -> Self {
        Architecture {
            name: ArchKind::TinyResidual.as_str().into(),
            input_shape: vec![channels, 32, 32],
            layers: vec![
                conv(16, 2),
                Layer::Relu,
                Layer::Residual {
                    body: vec![conv(16, 1), Layer::Relu, conv(16, 1)],
                },
                Layer::Relu,
                conv(32, 2),
                Layer::Relu,
                Layer::Flatten,
                Layer::Dense { units: 128 },
                Layer::Relu,
                Layer::Dense { units: num_classes },
            ],
        }
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Dense { units }) => *units,
            _ => 0,
        }
    }

    /// Checks that shapes chain through every layer and that the network
    /// ends in a dense classification layer.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes() == 0 {
            return Err(Error::Config(format!(
                "architecture {} must end in a dense layer",
                self.name
            )));
        }
        let mut shape = self.input_shape.clone();
        walk_shapes(&self.layers, &mut shape, &mut |_, _, _| {})?;
        Ok(())
    }

    /// Counts layers of each kind, descending into residual bodies.
    pub fn count_layers(&self, pred: impl Fn(&Layer) -> bool + Copy) -> usize {
        fn go(layers: &[Layer], pred: impl Fn(&Layer) -> bool + Copy) -> usize {
            layers
                .iter()
                .map(|l| match l {
                    Layer::Residual { body } => usize::from(pred(l)) + go(body, pred),
                    _ => usize::from(pred(l)),
                })
                .sum()
        }
        go(&self.layers, pred)
    }

    /// Width of the penultimate activation, if it comes from a dense layer.
    pub fn embedding_width(&self) -> Option<usize> {
        let n = self.layers.len();
        self.layers[..n.saturating_sub(1)]
            .iter()
            .rev()
            .find(|l| !matches!(l, Layer::Relu))
            .and_then(|l| match l {
                Layer::Dense { units } => Some(*units),
                _ => None,
            })
    }

    /// Names of the final dense layer's weight and bias.
    pub fn last_layer_param_names(&self) -> (String, String) {
        let i = self.layers.len() - 1;
        (format!("{i}.weight"), format!("{i}.bias"))
    }
}

/// Visits parameterized layers in declaration order with their input shape,
/// updating `shape` to each layer's output.
fn walk_shapes(
    layers: &[Layer],
    shape: &mut Vec<usize>,
    visit: &mut dyn FnMut(&str, &Layer, &[usize]),
) -> Result<()> {
    fn go(
        prefix: &str,
        layers: &[Layer],
        shape: &mut Vec<usize>,
        visit: &mut dyn FnMut(&str, &Layer, &[usize]),
    ) -> Result<()> {
        for (i, layer) in layers.iter().enumerate() {
            let path = if prefix.is_empty() {
                i.to_string()
            } else {
                format!("{prefix}.{i}")
            };
            match layer {
                Layer::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let &[_, h, w] = shape.as_slice() else {
                        return Err(Error::Config(format!(
                            "conv layer {path} needs a C×H×W input, got {shape:?}"
                        )));
                    };
                    if *stride == 0 || h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                        return Err(Error::Config(format!(
                            "conv layer {path} does not fit {shape:?}"
                        )));
                    }
                    visit(&path, layer, shape);
                    *shape = vec![
                        *out_channels,
                        (h + 2 * padding - kernel) / stride + 1,
                        (w + 2 * padding - kernel) / stride + 1,
                    ];
                }
                Layer::Dense { units } => {
                    if shape.len() != 1 {
                        return Err(Error::Config(format!(
                            "dense layer {path} needs a flat input, got {shape:?}"
                        )));
                    }
                    visit(&path, layer, shape);
                    *shape = vec![*units];
                }
                Layer::Relu => {}
                Layer::Flatten => *shape = vec![shape.iter().product()],
                Layer::Residual { body } => {
                    let before = shape.clone();
                    go(&path, body, shape, visit)?;
                    if *shape != before {
                        return Err(Error::Config(format!(
                            "residual block {path} maps {before:?} to {shape:?}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
    go("", layers, shape, visit)
}

impl Network for Architecture {
    /// Fan-in scaled uniform weights, `U(±√(6/fan_in))`, and zero biases.
    fn init_params(&self, seed: u64) -> Result<Parameters> {
        self.validate()?;
        let mut rng = rng(seed);
        let mut params = Parameters::new();
        let mut specs = Vec::new();
        let mut shape = self.input_shape.clone();
        walk_shapes(
            &self.layers,
            &mut shape,
            &mut |path, layer, input| match layer {
                Layer::Conv {
                    out_channels,
                    kernel,
                    ..
                } => specs.push((
                    path.to_string(),
                    vec![*out_channels, input[0], *kernel, *kernel],
                    input[0] * kernel * kernel,
                )),
                Layer::Dense { units } => {
                    specs.push((path.to_string(), vec![input[0], *units], input[0]))
                }
                _ => {}
            },
        )?;
        for (path, wshape, fan_in) in specs {
            let bound = (6.0 / fan_in as f64).sqrt();
            let n: usize = wshape.iter().product();
            let units = if wshape.len() == 4 {
                wshape[0]
            } else {
                wshape[1]
            };
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            params.insert(format!("{path}.weight"), Tensor::new(wshape, data)?)?;
            params.insert(format!("{path}.bias"), Tensor::zeros(vec![units]))?;
        }
        Ok(params)
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], input: Var) -> Result<Forward> {
        let mut cursor = 0;
        let mut embedding = None;
        let last = self.layers.len() - 1;
        let mut x = input;
        for (i, layer) in self.layers.iter().enumerate() {
            if i == last {
                embedding = self.embedding_width().map(|_| x);
            }
            x = apply(tape, layer, params, &mut cursor, x)?;
        }
        if cursor != params.len() {
            return Err(Error::Dimension(format!(
                "{} parameters supplied, {cursor} consumed",
                params.len()
            )));
        }
        Ok(Forward {
            logits: x,
            embedding,
        })
    }

    fn sample_shape(&self) -> Vec<usize> {
        self.input_shape.clone()
    }
}

fn next_param(params: &[Var], cursor: &mut usize) -> Result<Var> {
    let v = params
        .get(*cursor)
        .copied()
        .ok_or_else(|| Error::Dimension("ran out of parameters".into()))?;
    *cursor += 1;
    Ok(v)
}

fn apply(
    tape: &mut Tape,
    layer: &Layer,
    params: &[Var],
    cursor: &mut usize,
    x: Var,
) -> Result<Var> {
    Ok(match layer {
        Layer::Conv {
            stride, padding, ..
        } => {
            let w = next_param(params, cursor)?;
            let b = next_param(params, cursor)?;
            let y = tape.conv2d(x, w, *stride, *padding)?;
            tape.add_channel_bias(y, b)?
        }
        Layer::Dense { .. } => {
            let w = next_param(params, cursor)?;
            let b = next_param(params, cursor)?;
            let y = tape.matmul(x, w)?;
            tape.add_row_bias(y, b)?
        }
        Layer::Relu => tape.relu(x),
        Layer::Flatten => tape.flatten(x)?,
        Layer::Residual { body } => {
            let mut h = x;
            for l in body {
                h = apply(tape, l, params, cursor, h)?;
            }
            tape.add(x, h)?
        }
    })
}
