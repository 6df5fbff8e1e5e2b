//! Desk-scale versions of the three architecture families.

use serde::{Deserialize, Serialize};

use super::spec::{ArchSpec, LayerKind, LayerSpec};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "mini-alexnet")]
    MiniAlexnet,
    #[serde(rename = "mini-vgg")]
    MiniVgg,
    #[serde(rename = "mini-squeezenet")]
    MiniSqueezenet,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::MiniAlexnet, Arch::MiniVgg, Arch::MiniSqueezenet];

    pub fn name(self) -> &'static str {
        match self {
            Arch::MiniAlexnet => "mini-alexnet",
            Arch::MiniVgg => "mini-vgg",
            Arch::MiniSqueezenet => "mini-squeezenet",
        }
    }

    pub fn spec(self, opts: PresetOptions) -> Result<ArchSpec, NnError> {
        let spec = match self {
            Arch::MiniAlexnet => mini_alexnet(opts),
            Arch::MiniVgg => mini_vgg(opts),
            Arch::MiniSqueezenet => mini_squeezenet(opts),
        };
        spec.infer_shapes()?;
        Ok(spec)
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Arch {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| NnError::UnknownArch(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresetOptions {
    pub num_classes: usize,
    /// Square input side in pixels; inputs are always RGB.
    pub input_size: usize,
}

impl PresetOptions {
    pub fn new(num_classes: usize) -> Self {
        PresetOptions {
            num_classes,
            input_size: 64,
        }
    }

    pub fn with_input_size(mut self, input_size: usize) -> Self {
        self.input_size = input_size;
        self
    }
}

fn conv(name: &str, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> LayerSpec {
    LayerSpec::new(
        name,
        LayerKind::Conv2d {
            out_channels,
            kernel,
            stride,
            pad,
        },
    )
}

fn relu(name: &str) -> LayerSpec {
    LayerSpec::new(name, LayerKind::Relu)
}

fn pool(name: &str, kernel: usize, stride: usize) -> LayerSpec {
    LayerSpec::new(name, LayerKind::Maxpool { kernel, stride })
}

fn fc(name: &str, out_features: usize) -> LayerSpec {
    LayerSpec::new(name, LayerKind::FullyConnected { out_features })
}

fn fire(name: &str, squeeze: usize, expand: usize) -> LayerSpec {
    LayerSpec::new(
        name,
        LayerKind::Fire {
            squeeze,
            expand1x1: expand,
            expand3x3: expand,
        },
    )
}

fn head() -> LayerSpec {
    LayerSpec::new("prob", LayerKind::SoftmaxXentHead)
}

fn fc_stack(layers: &mut Vec<LayerSpec>, num_classes: usize) {
    layers.extend([
        fc("fc6", 256),
        relu("relu6"),
        fc("fc7", 256),
        relu("relu7"),
        fc("fc8", num_classes),
        head(),
    ]);
}

fn spec(name: &str, opts: PresetOptions, layers: Vec<LayerSpec>, residual_edges: Vec<(String, String)>) -> ArchSpec {
    ArchSpec {
        name: name.into(),
        input_shape: [3, opts.input_size, opts.input_size],
        num_classes: opts.num_classes,
        layers,
        residual_edges,
    }
}

/// Five convolutions, LRN after the first two pools, three fc layers.
pub fn mini_alexnet(opts: PresetOptions) -> ArchSpec {
    let mut layers = vec![
        conv("conv1", 16, 5, 2, 2),
        relu("relu1"),
        pool("pool1", 3, 2),
        LayerSpec::new("norm1", LayerKind::lrn_default()),
        conv("conv2", 32, 5, 1, 2),
        relu("relu2"),
        pool("pool2", 3, 2),
        LayerSpec::new("norm2", LayerKind::lrn_default()),
        conv("conv3", 48, 3, 1, 1),
        relu("relu3"),
        conv("conv4", 48, 3, 1, 1),
        relu("relu4"),
        conv("conv5", 32, 3, 1, 1),
        relu("relu5"),
        pool("pool5", 3, 2),
    ];
    fc_stack(&mut layers, opts.num_classes);
    spec("mini-alexnet", opts, layers, vec![])
}

/// Three stacks of two 3×3 convolutions, each followed by a 2×2 pool.
pub fn mini_vgg(opts: PresetOptions) -> ArchSpec {
    let mut layers = Vec::new();
    for (stage, width) in [16, 32, 64].into_iter().enumerate() {
        let s = stage + 1;
        for j in 1..=2 {
            layers.push(conv(&format!("conv{s}_{j}"), width, 3, 1, 1));
            layers.push(relu(&format!("relu{s}_{j}")));
        }
        layers.push(pool(&format!("pool{s}"), 2, 2));
    }
    fc_stack(&mut layers, opts.num_classes);
    spec("mini-vgg", opts, layers, vec![])
}

/// conv, pool, fire×3, pool, fire×4, pool, fire, 1×1 conv, global average
/// pool, with identity bypasses around fire3, fire5, fire7 and fire9.
pub fn mini_squeezenet(opts: PresetOptions) -> ArchSpec {
    let bypass = |n: u32| LayerSpec::new(format!("bypass{n}"), LayerKind::ResidualAdd);
    let layers = vec![
        conv("conv1", 16, 3, 2, 1),
        relu("relu1"),
        pool("pool1", 3, 2),
        fire("fire2", 8, 16),
        fire("fire3", 8, 16),
        bypass(3),
        fire("fire4", 16, 32),
        pool("pool4", 3, 2),
        fire("fire5", 16, 32),
        bypass(5),
        fire("fire6", 24, 48),
        fire("fire7", 24, 48),
        bypass(7),
        fire("fire8", 32, 64),
        pool("pool8", 3, 2),
        fire("fire9", 32, 64),
        bypass(9),
        conv("conv10", opts.num_classes, 1, 1, 0),
        LayerSpec::new("pool10", LayerKind::AvgpoolGlobal),
        head(),
    ];
    let edges = [("fire2", "bypass3"), ("pool4", "bypass5"), ("fire6", "bypass7"), ("pool8", "bypass9")]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    spec("mini-squeezenet", opts, layers, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_infer_at_default_and_small_inputs() {
        for arch in Arch::ALL {
            for size in [32, 48, 64] {
                let s = arch.spec(PresetOptions::new(10).with_input_size(size)).unwrap();
                assert_eq!(s.infer_shapes().unwrap().last().unwrap(), &[10, 1, 1]);
            }
        }
    }

    #[test]
    fn squeezenet_param_count_matches_closed_form() {
        let k = 166;
        let conv = |cin: usize, cout: usize, ks: usize| cout * cin * ks * ks + cout;
        let fire = |cin: usize, s: usize, e: usize| conv(cin, s, 1) + conv(s, e, 1) + conv(s, e, 3);
        let expected = conv(3, 16, 3)
            + fire(16, 8, 16)
            + fire(32, 8, 16)
            + fire(32, 16, 32)
            + fire(64, 16, 32)
            + fire(64, 24, 48)
            + fire(96, 24, 48)
            + fire(96, 32, 64)
            + fire(128, 32, 64)
            + conv(128, k, 1);
        let spec = Arch::MiniSqueezenet.spec(PresetOptions::new(k)).unwrap();
        assert_eq!(spec.param_count().unwrap(), expected);
    }

    #[test]
    fn alexnet_has_three_fc_layers_and_two_lrn() {
        let s = mini_alexnet(PresetOptions::new(5));
        let count = |tag: &str| s.layers.iter().filter(|l| l.kind.tag() == tag).count();
        assert_eq!(count("fully_connected"), 3);
        assert_eq!(count("conv2d"), 5);
        assert_eq!(count("lrn"), 2);
        assert_eq!(count("maxpool"), 3);
    }

    #[test]
    fn arch_names_round_trip() {
        for a in Arch::ALL {
            assert_eq!(a.name().parse::<Arch>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.name()));
        }
    }
}
