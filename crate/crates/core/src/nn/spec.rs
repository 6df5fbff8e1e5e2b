//! Declarative architecture description and shape inference.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::NnError;

/// Activation shape of a single sample: `[channels, height, width]`.
pub type Shape3 = [usize; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Maxpool {
        kernel: usize,
        stride: usize,
    },
    AvgpoolGlobal,
    Relu,
    FullyConnected {
        out_features: usize,
    },
    /// 1×1 squeeze conv + ReLU feeding parallel 1×1 and 3×3 (pad 1) expand
    /// convs + ReLU, concatenated along channels.
    Fire {
        squeeze: usize,
        expand1x1: usize,
        expand3x3: usize,
    },
    /// Sum of the previous layer's output and the bypass source named in
    /// [`ArchSpec::residual_edges`].
    ResidualAdd,
    /// Cross-channel local response normalization.
    Lrn {
        size: usize,
        alpha: f64,
        beta: f64,
        k: f64,
    },
    SoftmaxXentHead,
}

impl LayerKind {
    pub fn lrn_default() -> Self {
        LayerKind::Lrn {
            size: 5,
            alpha: 1e-4,
            beta: 0.75,
            k: 1.0,
        }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv2d { .. } | LayerKind::FullyConnected { .. } | LayerKind::Fire { .. }
        )
    }

    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Maxpool { .. } => "maxpool",
            LayerKind::AvgpoolGlobal => "avgpool_global",
            LayerKind::Relu => "relu",
            LayerKind::FullyConnected { .. } => "fully_connected",
            LayerKind::Fire { .. } => "fire",
            LayerKind::ResidualAdd => "residual_add",
            LayerKind::Lrn { .. } => "lrn",
            LayerKind::SoftmaxXentHead => "softmax_xent_head",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub trainable: bool,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
            trainable: true,
        }
    }
}

/// One parameter tensor a layer owns.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamShape {
    /// Full name, `<layer>.<suffix>`.
    pub name: String,
    pub shape: Vec<usize>,
    /// Zero for biases, which are initialized to 0.
    pub fan_in: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub input_shape: Shape3,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
    /// `(from_layer, to_layer)`: `to_layer` is a residual_add consuming `from_layer`'s output.
    pub residual_edges: Vec<(String, String)>,
}

pub(crate) fn conv_out(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if kernel == 0 || stride == 0 || kernel > padded || stride > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl ArchSpec {
    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Bypass source layer index for each residual_add layer index.
    pub fn residual_sources(&self) -> Result<BTreeMap<usize, usize>, NnError> {
        let mut sources = BTreeMap::new();
        for (from, to) in &self.residual_edges {
            let fail = |reason: String| NnError::ShapeInference {
                layer: to.clone(),
                reason,
            };
            let ti = self.layer_index(to).ok_or_else(|| fail(format!("unknown residual target {to}")))?;
            let fi = self.layer_index(from).ok_or_else(|| fail(format!("unknown residual source {from}")))?;
            if self.layers[ti].kind != LayerKind::ResidualAdd {
                return Err(fail("residual edge must end at a residual_add layer".into()));
            }
            if fi + 1 >= ti {
                return Err(fail(format!("bypass source {from} must precede the layer feeding {to}")));
            }
            if sources.insert(ti, fi).is_some() {
                return Err(fail("residual_add has more than one bypass edge".into()));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kind == LayerKind::ResidualAdd && !sources.contains_key(&i) {
                return Err(NnError::ShapeInference {
                    layer: l.name.clone(),
                    reason: "residual_add without a bypass edge".into(),
                });
            }
        }
        Ok(sources)
    }

    /// Output shape of every layer, validating the whole graph.
    pub fn infer_shapes(&self) -> Result<Vec<Shape3>, NnError> {
        let mut names = BTreeSet::new();
        for l in &self.layers {
            if l.name.is_empty() || l.name.contains('.') || l.name.contains('/') {
                return Err(NnError::ShapeInference {
                    layer: l.name.clone(),
                    reason: "layer names must be nonempty and free of '.' and '/'".into(),
                });
            }
            if !names.insert(l.name.as_str()) {
                return Err(NnError::ShapeInference {
                    layer: l.name.clone(),
                    reason: "duplicate layer name".into(),
                });
            }
        }
        if self.input_shape.contains(&0) {
            return Err(NnError::ShapeInference {
                layer: "input".into(),
                reason: format!("degenerate input shape {:?}", self.input_shape),
            });
        }
        let sources = self.residual_sources()?;
        let mut shapes: Vec<Shape3> = Vec::with_capacity(self.layers.len());
        let mut cur = self.input_shape;
        for (i, l) in self.layers.iter().enumerate() {
            let fail = |reason: String| NnError::ShapeInference {
                layer: l.name.clone(),
                reason,
            };
            let [c, h, w] = cur;
            let is_last = i + 1 == self.layers.len();
            cur = match l.kind {
                LayerKind::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                } => {
                    if out_channels == 0 {
                        return Err(fail("zero output channels".into()));
                    }
                    match (conv_out(h, kernel, stride, pad), conv_out(w, kernel, stride, pad)) {
                        (Some(oh), Some(ow)) => [out_channels, oh, ow],
                        _ => {
                            return Err(fail(format!(
                                "kernel {kernel} / stride {stride} do not fit padded input {}x{}",
                                h + 2 * pad,
                                w + 2 * pad
                            )))
                        }
                    }
                }
                LayerKind::Maxpool { kernel, stride } => {
                    match (conv_out(h, kernel, stride, 0), conv_out(w, kernel, stride, 0)) {
                        (Some(oh), Some(ow)) => [c, oh, ow],
                        _ => return Err(fail(format!("pool window {kernel} does not fit {h}x{w}"))),
                    }
                }
                LayerKind::AvgpoolGlobal => [c, 1, 1],
                LayerKind::Relu => cur,
                LayerKind::FullyConnected { out_features } => {
                    if out_features == 0 {
                        return Err(fail("zero output features".into()));
                    }
                    [out_features, 1, 1]
                }
                LayerKind::Fire {
                    squeeze,
                    expand1x1,
                    expand3x3,
                } => {
                    if squeeze == 0 || expand1x1 + expand3x3 == 0 {
                        return Err(fail("fire needs squeeze >= 1 and expand1x1 + expand3x3 >= 1".into()));
                    }
                    [expand1x1 + expand3x3, h, w]
                }
                LayerKind::ResidualAdd => {
                    let src = shapes[sources[&i]];
                    if src != cur {
                        return Err(fail(format!("bypass shape {src:?} differs from {cur:?}")));
                    }
                    cur
                }
                LayerKind::Lrn { size, alpha, beta, k } => {
                    if size == 0 || size % 2 == 0 || !(alpha >= 0.0 && beta >= 0.0 && k > 0.0) {
                        return Err(fail("lrn needs an odd window and alpha, beta >= 0, k > 0".into()));
                    }
                    cur
                }
                LayerKind::SoftmaxXentHead => {
                    if !is_last {
                        return Err(fail("softmax head must be the final layer".into()));
                    }
                    if c * h * w != self.num_classes {
                        return Err(fail(format!(
                            "head receives {} values but there are {} classes",
                            c * h * w,
                            self.num_classes
                        )));
                    }
                    [self.num_classes, 1, 1]
                }
            };
            shapes.push(cur);
        }
        match self.layers.last() {
            Some(l) if l.kind == LayerKind::SoftmaxXentHead => Ok(shapes),
            _ => Err(NnError::ShapeInference {
                layer: self.layers.last().map_or("input".into(), |l| l.name.clone()),
                reason: "final layer must be softmax_xent_head".into(),
            }),
        }
    }

    /// Parameter tensors of layer `index` given its input shape.
    pub fn layer_params(&self, index: usize, input: Shape3) -> Vec<ParamShape> {
        let l = &self.layers[index];
        let [c, h, w] = input;
        let p = |suffix: &str, shape: Vec<usize>, fan_in: usize| ParamShape {
            name: format!("{}.{}", l.name, suffix),
            shape,
            fan_in,
        };
        match l.kind {
            LayerKind::Conv2d {
                out_channels, kernel, ..
            } => vec![
                p("weight", vec![out_channels, c, kernel, kernel], c * kernel * kernel),
                p("bias", vec![out_channels], 0),
            ],
            LayerKind::FullyConnected { out_features } => vec![
                p("weight", vec![out_features, c * h * w], c * h * w),
                p("bias", vec![out_features], 0),
            ],
            LayerKind::Fire {
                squeeze,
                expand1x1,
                expand3x3,
            } => {
                let mut v = vec![
                    p("squeeze.weight", vec![squeeze, c, 1, 1], c),
                    p("squeeze.bias", vec![squeeze], 0),
                ];
                if expand1x1 > 0 {
                    v.push(p("expand1x1.weight", vec![expand1x1, squeeze, 1, 1], squeeze));
                    v.push(p("expand1x1.bias", vec![expand1x1], 0));
                }
                if expand3x3 > 0 {
                    v.push(p("expand3x3.weight", vec![expand3x3, squeeze, 3, 3], squeeze * 9));
                    v.push(p("expand3x3.bias", vec![expand3x3], 0));
                }
                v
            }
            _ => Vec::new(),
        }
    }

    /// Input shape of every layer, given inferred output shapes.
    pub fn input_shapes(&self, outputs: &[Shape3]) -> Vec<Shape3> {
        std::iter::once(self.input_shape)
            .chain(outputs.iter().copied())
            .take(self.layers.len())
            .collect()
    }

    pub fn all_params(&self) -> Result<Vec<(usize, ParamShape)>, NnError> {
        let outs = self.infer_shapes()?;
        let ins = self.input_shapes(&outs);
        Ok((0..self.layers.len())
            .flat_map(|i| self.layer_params(i, ins[i]).into_iter().map(move |p| (i, p)))
            .collect())
    }

    pub fn param_count(&self) -> Result<usize, NnError> {
        Ok(self
            .all_params()?
            .iter()
            .map(|(_, p)| p.shape.iter().product::<usize>())
            .sum())
    }

    /// The last layer that owns parameters: the classifier learned from scratch.
    pub fn classifier_layer(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| l.kind.is_parametric())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// Layer index owning a parameter name (`<layer>.<suffix>`).
pub(crate) fn param_layer(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(layers: Vec<LayerSpec>, classes: usize) -> ArchSpec {
        ArchSpec {
            name: "t".into(),
            input_shape: [1, 3, 3],
            num_classes: classes,
            layers,
            residual_edges: vec![],
        }
    }

    #[test]
    fn stride_beyond_padded_input_fails_naming_the_layer() {
        let spec = tiny(
            vec![
                LayerSpec::new(
                    "c1",
                    LayerKind::Conv2d {
                        out_channels: 2,
                        kernel: 1,
                        stride: 4,
                        pad: 0,
                    },
                ),
                LayerSpec::new("head", LayerKind::SoftmaxXentHead),
            ],
            2,
        );
        match spec.infer_shapes() {
            Err(NnError::ShapeInference { layer, .. }) => assert_eq!(layer, "c1"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn head_must_match_classes() {
        let spec = tiny(
            vec![
                LayerSpec::new("fc", LayerKind::FullyConnected { out_features: 3 }),
                LayerSpec::new("head", LayerKind::SoftmaxXentHead),
            ],
            4,
        );
        assert!(spec.infer_shapes().is_err());
        let ok = ArchSpec { num_classes: 3, ..spec };
        assert_eq!(ok.infer_shapes().unwrap(), vec![[3, 1, 1], [3, 1, 1]]);
        assert_eq!(ok.param_count().unwrap(), 3 * 9 + 3);
    }

    #[test]
    fn fire_and_duplicate_name_validation() {
        let bad_fire = tiny(
            vec![
                LayerSpec::new(
                    "f",
                    LayerKind::Fire {
                        squeeze: 0,
                        expand1x1: 1,
                        expand3x3: 1,
                    },
                ),
                LayerSpec::new("head", LayerKind::SoftmaxXentHead),
            ],
            18,
        );
        assert!(bad_fire.infer_shapes().is_err());
        let dup = tiny(
            vec![
                LayerSpec::new("a", LayerKind::Relu),
                LayerSpec::new("a", LayerKind::Relu),
                LayerSpec::new("head", LayerKind::SoftmaxXentHead),
            ],
            9,
        );
        assert!(dup.infer_shapes().is_err());
    }
}
