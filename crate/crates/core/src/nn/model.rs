use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use super::layers::{self, ConvGeom, LrnParams};
use super::spec::{param_layer, ArchSpec, LayerKind, ParamShape, Shape3};
use super::NnError;
use crate::rng;
use crate::tensor::{Element, Tensor};

pub type Params<T> = BTreeMap<String, Tensor<T>>;

/// Instantiated network: parameters, momentum buffers and the update counter.
#[derive(Debug, Clone)]
pub struct Model<T: Element = f32> {
    pub(crate) spec: ArchSpec,
    pub(crate) out_shapes: Vec<Shape3>,
    pub(crate) params: Params<T>,
    pub(crate) momentum: Params<T>,
    pub(crate) iteration: u64,
    /// Bumped on every parameter mutation; caches from older generations are stale.
    pub(crate) generation: u64,
}

/// Which layers came from a checkpoint and which were freshly initialized.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InitReport {
    pub restored: Vec<String>,
    pub reinitialized_layers: Vec<String>,
}

/// Weight std of the last parametric layer, which produces the logits.
pub const CLASSIFIER_INIT_STD: f64 = 0.01;

/// He-normal weights (std = sqrt(2 / fan_in)) and zero biases, except the
/// classifier whose weights use [`CLASSIFIER_INIT_STD`].
pub(crate) fn init_param<T: Element>(spec: &ArchSpec, index: usize, j: usize, p: &ParamShape, seed: u64) -> Tensor<T> {
    let std = if spec.classifier_layer() == Some(index) {
        CLASSIFIER_INIT_STD
    } else {
        (2.0 / p.fan_in.max(1) as f64).sqrt()
    };
    let init_seed = rng::derive_seed(seed, rng::purpose::INIT);
    normal_init(p, std, init_seed, ((index as u64) << 8) | j as u64)
}

fn normal_init<T: Element>(p: &ParamShape, std: f64, seed: u64, stream: u64) -> Tensor<T> {
    let mut t = Tensor::zeros(&p.shape);
    if p.fan_in > 0 {
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut r = rng::stream(seed, stream);
        for v in t.data_mut() {
            *v = T::from_f64(normal.sample(&mut r));
        }
    }
    t
}

impl<T: Element> Model<T> {
    /// Randomly initialized model; each layer draws from its own stream.
    pub fn random(spec: ArchSpec, seed: u64) -> Result<Self, NnError> {
        let out_shapes = spec.infer_shapes()?;
        let mut model = Model {
            spec,
            out_shapes,
            params: BTreeMap::new(),
            momentum: BTreeMap::new(),
            iteration: 0,
            generation: 0,
        };
        for i in 0..model.spec.layers.len() {
            model.init_layer(i, seed);
        }
        Ok(model)
    }

    pub(crate) fn init_layer(&mut self, index: usize, seed: u64) {
        let input = self.input_shape_of(index);
        for (j, p) in self.spec.layer_params(index, input).iter().enumerate() {
            let t = init_param(&self.spec, index, j, p, seed);
            self.momentum.remove(&p.name);
            self.params.insert(p.name.clone(), t);
        }
        self.generation += 1;
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn momentum(&self) -> &Params<T> {
        &self.momentum
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn input_shape_of(&self, index: usize) -> Shape3 {
        if index == 0 {
            self.spec.input_shape
        } else {
            self.out_shapes[index - 1]
        }
    }

    pub fn output_shapes(&self) -> &[Shape3] {
        &self.out_shapes
    }

    pub fn is_trainable_param(&self, name: &str) -> bool {
        let layer = param_layer(name);
        self.spec
            .layers
            .iter()
            .any(|l| l.name == layer && l.trainable)
            && self.params.contains_key(name)
    }

    pub fn trainable_param_names(&self) -> Vec<String> {
        self.params
            .keys()
            .filter(|n| self.is_trainable_param(n))
            .cloned()
            .collect()
    }

    /// Mutable parameter access; invalidates outstanding caches.
    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.generation += 1;
        self.params.get_mut(name)
    }

    pub fn set_trainable(&mut self, layer: &str, trainable: bool) -> Result<(), NnError> {
        let l = self
            .spec
            .layers
            .iter_mut()
            .find(|l| l.name == layer)
            .ok_or_else(|| NnError::UnknownLayer(layer.to_string()))?;
        l.trainable = trainable;
        if !trainable {
            let prefix = format!("{layer}.");
            self.momentum.retain(|k, _| !k.starts_with(&prefix));
        }
        self.generation += 1;
        Ok(())
    }

    /// Copies the model into another precision.
    pub fn cast<U: Element>(&self) -> Model<U> {
        let conv = |m: &Params<T>| m.iter().map(|(k, v)| (k.clone(), v.cast())).collect();
        Model {
            spec: self.spec.clone(),
            out_shapes: self.out_shapes.clone(),
            params: conv(&self.params),
            momentum: conv(&self.momentum),
            iteration: self.iteration,
            generation: 0,
        }
    }

    fn p(&self, layer: &str, suffix: &str) -> &[T] {
        self.params[&format!("{layer}.{suffix}")].data()
    }
}

enum Aux<T> {
    None,
    Pool(Vec<usize>),
    Lrn(Vec<T>),
    /// Post-ReLU squeeze, expand1x1 and expand3x3 activations.
    Fire { squeezed: Vec<T>, e1: Vec<T>, e3: Vec<T> },
    Probs(Tensor<T>),
}

/// Activations recorded by [`Model::forward`] for the matching backward pass.
pub struct ForwardCache<T: Element> {
    input: Tensor<T>,
    outputs: Vec<Tensor<T>>,
    aux: Vec<Aux<T>>,
    labels: Option<Vec<usize>>,
    generation: u64,
}

pub struct ForwardOutput<T: Element> {
    /// `[N, num_classes]`
    pub logits: Tensor<T>,
    pub loss: Option<T>,
    pub cache: ForwardCache<T>,
}

impl<T: Element> ForwardOutput<T> {
    pub fn probabilities(&self) -> &Tensor<T> {
        match self.cache.aux.last() {
            Some(Aux::Probs(p)) => p,
            _ => unreachable!("head always records probabilities"),
        }
    }
}

fn fire_geoms(input: Shape3, squeeze: usize, e1: usize, e3: usize) -> (ConvGeom, ConvGeom, ConvGeom) {
    let [_, h, w] = input;
    (
        ConvGeom::new(input, squeeze, 1, 1, 0),
        ConvGeom::new([squeeze, h, w], e1, 1, 1, 0),
        ConvGeom::new([squeeze, h, w], e3, 3, 1, 1),
    )
}

impl<T: Element> Model<T> {
    pub fn forward(&self, batch: &Tensor<T>, labels: Option<&[usize]>) -> Result<ForwardOutput<T>, NnError> {
        let [c, h, w] = self.spec.input_shape;
        let shape = batch.shape();
        if shape.len() != 4 || shape[1..] != [c, h, w] || shape[0] == 0 {
            return Err(NnError::ShapeMismatch {
                expected: vec![0, c, h, w],
                actual: shape.to_vec(),
            });
        }
        let n = shape[0];
        if let Some(labels) = labels {
            if labels.len() != n {
                return Err(NnError::ShapeMismatch {
                    expected: vec![n],
                    actual: vec![labels.len()],
                });
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= self.spec.num_classes) {
                return Err(NnError::LabelOutOfRange {
                    label: bad,
                    classes: self.spec.num_classes,
                });
            }
        }
        let sources = self.spec.residual_sources()?;
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.spec.layers.len());
        let mut aux = Vec::with_capacity(self.spec.layers.len());
        let mut loss = None;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let x = if i == 0 { batch } else { &outputs[i - 1] };
            let input = self.input_shape_of(i);
            let [oc, oh, ow] = self.out_shapes[i];
            let out_shape = [n, oc, oh, ow];
            let name = layer.name.as_str();
            let (out, a) = match layer.kind {
                LayerKind::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                } => {
                    let g = ConvGeom::new(input, out_channels, kernel, stride, pad);
                    let y = g.forward(x.data(), n, self.p(name, "weight"), self.p(name, "bias"));
                    (Tensor::from_vec(&out_shape, y), Aux::None)
                }
                LayerKind::Maxpool { kernel, stride } => {
                    let p = layers::maxpool_forward(x.data(), n, input, kernel, stride, [oh, ow]);
                    (Tensor::from_vec(&out_shape, p.out), Aux::Pool(p.argmax))
                }
                LayerKind::AvgpoolGlobal => {
                    let y = layers::avgpool_forward(x.data(), n * input[0], input[1] * input[2]);
                    (Tensor::from_vec(&out_shape, y), Aux::None)
                }
                LayerKind::Relu => {
                    let mut y = x.clone();
                    layers::relu_inplace(y.data_mut());
                    (y, Aux::None)
                }
                LayerKind::FullyConnected { out_features } => {
                    let d = input.iter().product::<usize>();
                    let mut y = vec![T::zero(); n * out_features];
                    for row in y.chunks_exact_mut(out_features) {
                        row.copy_from_slice(self.p(name, "bias"));
                    }
                    T::gemm(n, d, out_features, T::one(), x.data(), false, self.p(name, "weight"), true, T::one(), &mut y);
                    (Tensor::from_vec(&out_shape, y), Aux::None)
                }
                LayerKind::Fire {
                    squeeze,
                    expand1x1,
                    expand3x3,
                } => {
                    let (gs, g1, g3) = fire_geoms(input, squeeze, expand1x1, expand3x3);
                    let mut sq = gs.forward(x.data(), n, self.p(name, "squeeze.weight"), self.p(name, "squeeze.bias"));
                    layers::relu_inplace(&mut sq);
                    let mut e1 = Vec::new();
                    let mut e3 = Vec::new();
                    if expand1x1 > 0 {
                        e1 = g1.forward(&sq, n, self.p(name, "expand1x1.weight"), self.p(name, "expand1x1.bias"));
                        layers::relu_inplace(&mut e1);
                    }
                    if expand3x3 > 0 {
                        e3 = g3.forward(&sq, n, self.p(name, "expand3x3.weight"), self.p(name, "expand3x3.bias"));
                        layers::relu_inplace(&mut e3);
                    }
                    let hw = oh * ow;
                    let mut y = Vec::with_capacity(n * oc * hw);
                    for s in 0..n {
                        y.extend_from_slice(&e1[s * expand1x1 * hw..(s + 1) * expand1x1 * hw]);
                        y.extend_from_slice(&e3[s * expand3x3 * hw..(s + 1) * expand3x3 * hw]);
                    }
                    (
                        Tensor::from_vec(&out_shape, y),
                        Aux::Fire {
                            squeezed: sq,
                            e1,
                            e3,
                        },
                    )
                }
                LayerKind::ResidualAdd => {
                    let mut y = x.clone();
                    y.add_assign(&outputs[sources[&i]]);
                    (y, Aux::None)
                }
                LayerKind::Lrn { size, alpha, beta, k } => {
                    let (y, scale) = layers::lrn_forward(x.data(), n, input, LrnParams { size, alpha, beta, k });
                    (Tensor::from_vec(&out_shape, y), Aux::Lrn(scale))
                }
                LayerKind::SoftmaxXentHead => {
                    let logits = x.clone().reshape(&[n, self.spec.num_classes]);
                    let (probs, l) = layers::softmax_xent(&logits, labels);
                    loss = l;
                    (logits.reshape(&out_shape), Aux::Probs(probs))
                }
            };
            outputs.push(out);
            aux.push(a);
        }
        let logits = outputs
            .last()
            .expect("specs have a head")
            .clone()
            .reshape(&[n, self.spec.num_classes]);
        Ok(ForwardOutput {
            logits,
            loss,
            cache: ForwardCache {
                input: batch.clone(),
                outputs,
                aux,
                labels: labels.map(<[usize]>::to_vec),
                generation: self.generation,
            },
        })
    }

    /// Gradients of the mean loss for every trainable parameter.
    ///
    /// Frozen layers still pass gradients down to earlier trainable layers
    /// but get no entries of their own.
    pub fn backward(&self, cache: &ForwardCache<T>) -> Result<Params<T>, NnError> {
        if cache.generation != self.generation {
            return Err(NnError::StaleCache);
        }
        let labels = cache.labels.as_ref().ok_or(NnError::MissingLabels)?;
        let layers_spec = &self.spec.layers;
        let mut grads = Params::new();
        let Some(first_trainable) = layers_spec
            .iter()
            .position(|l| l.trainable && l.kind.is_parametric())
        else {
            return Ok(grads);
        };
        let sources = self.spec.residual_sources()?;
        let n = cache.input.shape()[0];
        let mut dout: Vec<Option<Tensor<T>>> = vec![None; layers_spec.len()];
        for i in (first_trainable..layers_spec.len()).rev() {
            let layer = &layers_spec[i];
            let name = layer.name.as_str();
            let x = if i == 0 { &cache.input } else { &cache.outputs[i - 1] };
            let input = self.input_shape_of(i);
            let need_dx = i > first_trainable;
            let want_params = layer.trainable;
            let dx: Option<Vec<T>> = if let LayerKind::SoftmaxXentHead = layer.kind {
                let Aux::Probs(probs) = &cache.aux[i] else { unreachable!() };
                let k = self.spec.num_classes;
                let inv_n = T::one() / T::from_f64(n as f64);
                let mut d = probs.data().to_vec();
                for (s, &label) in labels.iter().enumerate() {
                    d[s * k + label] = d[s * k + label] - T::one();
                }
                d.iter_mut().for_each(|v| *v = *v * inv_n);
                Some(d)
            } else {
                let Some(dy) = dout[i].take() else {
                    continue;
                };
                let dy = dy.into_data();
                match layer.kind {
                    LayerKind::Conv2d {
                        out_channels,
                        kernel,
                        stride,
                        pad,
                    } => {
                        let g = ConvGeom::new(input, out_channels, kernel, stride, pad);
                        self.conv_grads(&g, name, "", x.data(), n, &dy, want_params, need_dx, &mut grads)
                    }
                    LayerKind::Maxpool { .. } => {
                        let Aux::Pool(argmax) = &cache.aux[i] else { unreachable!() };
                        need_dx.then(|| layers::maxpool_backward(&dy, argmax, x.len()))
                    }
                    LayerKind::AvgpoolGlobal => need_dx.then(|| layers::avgpool_backward(&dy, input[1] * input[2])),
                    LayerKind::Relu => need_dx.then(|| {
                        let mut d = dy;
                        layers::relu_mask(&mut d, cache.outputs[i].data());
                        d
                    }),
                    LayerKind::FullyConnected { out_features } => {
                        let d = input.iter().product::<usize>();
                        if want_params {
                            let mut dw = Tensor::zeros(&[out_features, d]);
                            T::gemm(out_features, n, d, T::one(), &dy, true, x.data(), false, T::zero(), dw.data_mut());
                            let mut db = Tensor::zeros(&[out_features]);
                            for row in dy.chunks_exact(out_features) {
                                for (b, &g) in db.data_mut().iter_mut().zip(row) {
                                    *b = *b + g;
                                }
                            }
                            grads.insert(format!("{name}.weight"), dw);
                            grads.insert(format!("{name}.bias"), db);
                        }
                        need_dx.then(|| {
                            let mut dx = vec![T::zero(); n * d];
                            T::gemm(n, out_features, d, T::one(), &dy, false, self.p(name, "weight"), false, T::zero(), &mut dx);
                            dx
                        })
                    }
                    LayerKind::Fire {
                        squeeze,
                        expand1x1,
                        expand3x3,
                    } => {
                        let Aux::Fire { squeezed, e1, e3 } = &cache.aux[i] else { unreachable!() };
                        let (gs, g1, g3) = fire_geoms(input, squeeze, expand1x1, expand3x3);
                        let hw = input[1] * input[2];
                        let mut d1 = Vec::with_capacity(e1.len());
                        let mut d3 = Vec::with_capacity(e3.len());
                        for s in 0..n {
                            let row = &dy[s * (expand1x1 + expand3x3) * hw..];
                            d1.extend_from_slice(&row[..expand1x1 * hw]);
                            d3.extend_from_slice(&row[expand1x1 * hw..(expand1x1 + expand3x3) * hw]);
                        }
                        layers::relu_mask(&mut d1, e1);
                        layers::relu_mask(&mut d3, e3);
                        let mut dsq = vec![T::zero(); squeezed.len()];
                        if expand1x1 > 0 {
                            let d = self.conv_grads(&g1, name, "expand1x1.", squeezed, n, &d1, want_params, true, &mut grads);
                            add_into(&mut dsq, &d.expect("requested"));
                        }
                        if expand3x3 > 0 {
                            let d = self.conv_grads(&g3, name, "expand3x3.", squeezed, n, &d3, want_params, true, &mut grads);
                            add_into(&mut dsq, &d.expect("requested"));
                        }
                        layers::relu_mask(&mut dsq, squeezed);
                        self.conv_grads(&gs, name, "squeeze.", x.data(), n, &dsq, want_params, need_dx, &mut grads)
                    }
                    LayerKind::ResidualAdd => {
                        let src = sources[&i];
                        if src >= first_trainable {
                            accumulate(&mut dout[src], &dy, &self.out_shapes[src], n);
                        }
                        need_dx.then_some(dy)
                    }
                    LayerKind::Lrn { size, alpha, beta, k } => {
                        let Aux::Lrn(scale) = &cache.aux[i] else { unreachable!() };
                        need_dx.then(|| {
                            layers::lrn_backward(x.data(), scale, &dy, n, input, LrnParams { size, alpha, beta, k })
                        })
                    }
                    LayerKind::SoftmaxXentHead => unreachable!(),
                }
            };
            if let (Some(dx), true) = (dx, need_dx) {
                accumulate(&mut dout[i - 1], &dx, &self.out_shapes[i - 1], n);
            }
        }
        Ok(grads)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_grads(
        &self,
        g: &ConvGeom,
        layer: &str,
        prefix: &str,
        x: &[T],
        n: usize,
        dy: &[T],
        want_params: bool,
        need_dx: bool,
        grads: &mut Params<T>,
    ) -> Option<Vec<T>> {
        let wname = format!("{layer}.{prefix}weight");
        let bname = format!("{layer}.{prefix}bias");
        let weight = self.params[&wname].data();
        if want_params {
            let mut dw = Tensor::zeros(self.params[&wname].shape());
            let mut db = Tensor::zeros(self.params[&bname].shape());
            let dx = g.backward(x, n, weight, dy, Some((dw.data_mut(), db.data_mut())), need_dx);
            grads.insert(wname, dw);
            grads.insert(bname, db);
            dx
        } else if need_dx {
            g.backward(x, n, weight, dy, None, true)
        } else {
            None
        }
    }
}

fn add_into<T: Element>(acc: &mut [T], v: &[T]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a = *a + b;
    }
}

fn accumulate<T: Element>(slot: &mut Option<Tensor<T>>, g: &[T], shape: &Shape3, n: usize) {
    match slot {
        Some(t) => add_into(t.data_mut(), g),
        None => *slot = Some(Tensor::from_vec(&[n, shape[0], shape[1], shape[2]], g.to_vec())),
    }
}
