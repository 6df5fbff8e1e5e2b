//! Finite-difference verification of backpropagation, in f64.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::model::Model;
use super::spec::ArchSpec;
use super::NnError;
use crate::rng;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Compare at most this many randomly chosen entries per parameter
    /// tensor; `None` checks every entry.
    pub max_entries_per_tensor: Option<usize>,
    /// Denominator floor of the relative error, so entries whose gradient
    /// is essentially zero are judged on absolute difference.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            max_entries_per_tensor: None,
            floor: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckResult {
    pub max_relative_error: f64,
    /// Parameter holding the worst entry.
    pub worst: String,
    pub entries_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Random f64 batch of the spec's input shape with labels drawn uniformly.
pub fn random_batch(spec: &ArchSpec, n: usize, seed: u64) -> (Tensor<f64>, Vec<usize>) {
    let mut r = rng::rng_from_seed(seed);
    let [c, h, w] = spec.input_shape;
    let data = (0..n * c * h * w).map(|_| StandardNormal.sample(&mut r)).collect();
    let labels = (0..n).map(|_| r.random_range(0..spec.num_classes)).collect();
    (Tensor::from_vec(&[n, c, h, w], data), labels)
}

/// Compares backprop gradients with central differences of the mean loss.
///
/// Biases start from small random values rather than zero so that their
/// gradients are exercised away from ReLU kinks.
pub fn grad_check(spec: &ArchSpec, batch: &Tensor<f64>, labels: &[usize], opts: GradCheckOptions) -> Result<GradCheckResult, NnError> {
    grad_check_in::<f64>(spec, batch, labels, opts)
}

/// [`grad_check`] carried out in precision `T`.
pub fn grad_check_in<T: Element>(
    spec: &ArchSpec,
    batch: &Tensor<f64>,
    labels: &[usize],
    opts: GradCheckOptions,
) -> Result<GradCheckResult, NnError> {
    let batch: Tensor<T> = batch.cast();
    let batch = &batch;
    let mut model = Model::<T>::random(spec.clone(), opts.seed)?;
    let mut r = rng::stream(opts.seed, 0x4743);
    let names: Vec<String> = model.params().keys().cloned().collect();
    for name in names.iter().filter(|n| n.ends_with("bias")) {
        for v in model.param_mut(name).expect("listed").data_mut() {
            *v = T::from_f64(0.1 * { let z: f64 = StandardNormal.sample(&mut r); z });
        }
    }
    let out = model.forward(batch, Some(labels))?;
    let grads = model.backward(&out.cache)?;
    let loss = |m: &Model<T>| -> Result<f64, NnError> { Ok(m.forward(batch, Some(labels))?.loss.expect("labels").as_f64()) };
    let mut result = GradCheckResult {
        max_relative_error: 0.0,
        worst: String::new(),
        entries_checked: 0,
    };
    for name in &names {
        let analytic = grads
            .get(name)
            .ok_or_else(|| NnError::UnknownParameter(name.clone()))?
            .data()
            .iter()
            .map(|v| v.as_f64())
            .collect::<Vec<_>>();
        let entries: Vec<usize> = match opts.max_entries_per_tensor {
            Some(k) if k < analytic.len() => {
                let mut v = sample(&mut r, analytic.len(), k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..analytic.len()).collect(),
        };
        for i in entries {
            let orig = model.params()[name].data()[i];
            model.param_mut(name).expect("listed").data_mut()[i] = T::from_f64(orig.as_f64() + opts.epsilon);
            let plus = loss(&model)?;
            model.param_mut(name).expect("listed").data_mut()[i] = T::from_f64(orig.as_f64() - opts.epsilon);
            let minus = loss(&model)?;
            model.param_mut(name).expect("listed").data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let err = relative_error(analytic[i], numeric, opts.floor);
            result.entries_checked += 1;
            if err > result.max_relative_error || result.worst.is_empty() {
                result.max_relative_error = err;
                result.worst = format!("{name}[{i}]");
            }
        }
    }
    Ok(result)
}
