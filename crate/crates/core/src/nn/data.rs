//! Image-to-tensor glue for training and scoring.

use std::path::PathBuf;

use rayon::prelude::*;

use super::model::Model;
use super::NnError;
use crate::evalproto::{EvalError, ProbeScorer};
use crate::imagecore::{self, Image, InterpMethod};
use crate::tensor::Tensor;

const PIXEL_MEAN: f32 = 127.5;
const PIXEL_SCALE: f32 = 127.5;

/// RGB, bilinear resize to `size`×`size`, pixels mapped to [-1, 1].
pub fn preprocess(img: &Image, size: usize) -> Result<Tensor<f32>, NnError> {
    let rgb = img.to_rgb();
    let side = size as u32;
    let sized = if rgb.width() == side && rgb.height() == side {
        rgb
    } else {
        imagecore::resize(&rgb, side, side, InterpMethod::Bilinear)?
    };
    Ok(imagecore::to_tensor(&sized, &[PIXEL_MEAN; 3], &[PIXEL_SCALE; 3])?)
}

/// Indexed labelled training samples.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, index: usize) -> usize;

    /// `[C, H, W]` network input for sample `index`.
    fn load(&self, index: usize) -> Result<Tensor<f32>, NnError>;

    /// Loads a batch in parallel; the result keeps `indices` order.
    fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>), NnError> {
        let items = indices
            .par_iter()
            .map(|&i| self.load(i))
            .collect::<Result<Vec<_>, _>>()?;
        let labels = indices.iter().map(|&i| self.label(i)).collect();
        Ok((Tensor::stack(&items), labels))
    }
}

/// Decoded images held in memory, converted on access.
pub struct ImageSource {
    items: Vec<(Image, usize)>,
    input_size: usize,
}

impl ImageSource {
    /// Images are resized once up front so batches only pay for conversion.
    pub fn new(items: Vec<(Image, usize)>, input_size: usize) -> Result<Self, NnError> {
        let side = input_size as u32;
        let items = items
            .into_par_iter()
            .map(|(img, label)| {
                let rgb = img.to_rgb();
                let sized = if rgb.width() == side && rgb.height() == side {
                    rgb
                } else {
                    imagecore::resize(&rgb, side, side, InterpMethod::Bilinear)?
                };
                Ok((sized, label))
            })
            .collect::<Result<Vec<_>, NnError>>()?;
        Ok(ImageSource { items, input_size })
    }
}

impl SampleSource for ImageSource {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn label(&self, index: usize) -> usize {
        self.items[index].1
    }

    fn load(&self, index: usize) -> Result<Tensor<f32>, NnError> {
        preprocess(&self.items[index].0, self.input_size)
    }
}

/// Image files decoded on every access; for sets too large to keep resident.
pub struct PathSource {
    items: Vec<(PathBuf, usize)>,
    input_size: usize,
}

impl PathSource {
    pub fn new(items: Vec<(PathBuf, usize)>, input_size: usize) -> Self {
        PathSource { items, input_size }
    }
}

impl SampleSource for PathSource {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn label(&self, index: usize) -> usize {
        self.items[index].1
    }

    fn load(&self, index: usize) -> Result<Tensor<f32>, NnError> {
        let img = imagecore::load_image(&self.items[index].0)?;
        preprocess(&img, self.input_size)
    }
}

/// Scores probes with the softmax output of a trained network.
pub struct NetworkScorer<'a> {
    model: &'a Model<f32>,
}

impl<'a> NetworkScorer<'a> {
    pub fn new(model: &'a Model<f32>) -> Self {
        NetworkScorer { model }
    }
}

impl ProbeScorer for NetworkScorer<'_> {
    fn num_subjects(&self) -> usize {
        self.model.num_classes()
    }

    fn score_batch(&self, probes: &[Image]) -> Result<Vec<Vec<f64>>, EvalError> {
        let scorer_err = |e: NnError| EvalError::Scorer(e.to_string());
        let size = self.model.spec().input_shape[1];
        let tensors = probes
            .iter()
            .map(|p| preprocess(p, size))
            .collect::<Result<Vec<_>, _>>()
            .map_err(scorer_err)?;
        let out = self
            .model
            .forward(&Tensor::stack(&tensors), None)
            .map_err(scorer_err)?;
        let k = self.model.num_classes();
        Ok(out
            .probabilities()
            .data()
            .chunks_exact(k)
            .map(|row| row.iter().map(|&p| p as f64).collect())
            .collect())
    }
}
