use serde::{Deserialize, Serialize};

use super::model::{Model, Params};
use super::spec::{param_layer, LayerKind};
use super::NnError;
use crate::rng;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    FullLearning,
    /// Only fully-connected layers train; the classifier restarts from scratch.
    SelectiveFc,
    /// Everything trains; the classifier restarts from scratch.
    SelectiveAllButHead,
}

impl FreezePolicy {
    pub const ALL: [FreezePolicy; 3] = [
        FreezePolicy::FullLearning,
        FreezePolicy::SelectiveFc,
        FreezePolicy::SelectiveAllButHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FreezePolicy::FullLearning => "full_learning",
            FreezePolicy::SelectiveFc => "selective_fc",
            FreezePolicy::SelectiveAllButHead => "selective_all_but_head",
        }
    }

    pub fn is_selective(self) -> bool {
        self != FreezePolicy::FullLearning
    }
}

impl std::fmt::Display for FreezePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FreezePolicy {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FreezePolicy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| NnError::UnknownPolicy(s.to_string()))
    }
}

impl<T: Element> Model<T> {
    /// Momentum SGD with L2 weight decay folded into the velocity.
    ///
    /// The whole gradient map is checked before any parameter moves, so a
    /// rejected step leaves the model untouched.
    pub fn sgd_step(&mut self, grads: &Params<T>, lr: f64, momentum: f64, weight_decay: f64) -> Result<(), NnError> {
        for (name, g) in grads {
            let p = self
                .params
                .get(name)
                .ok_or_else(|| NnError::UnknownParameter(name.clone()))?;
            if !self.is_trainable_param(name) {
                return Err(NnError::FrozenParameter(name.clone()));
            }
            if p.shape() != g.shape() {
                return Err(NnError::ShapeMismatch {
                    expected: p.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(NnError::NonFiniteGradient {
                    layer: param_layer(name).to_string(),
                });
            }
        }
        let (lr, m, wd) = (T::from_f64(lr), T::from_f64(momentum), T::from_f64(weight_decay));
        for (name, g) in grads {
            let p = self.params.get_mut(name).expect("checked above");
            let v = self
                .momentum
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = m * *vv + gv + wd * *pv;
                *pv = *pv - lr * *vv;
            }
        }
        self.iteration += 1;
        self.generation += 1;
        Ok(())
    }

    /// Sets per-layer trainable flags and re-initializes the classifier for
    /// selective policies. Returns the names of re-initialized layers.
    pub fn apply_freeze_policy(&mut self, policy: FreezePolicy, seed: u64) -> Result<Vec<String>, NnError> {
        let has_fc = self
            .spec
            .layers
            .iter()
            .any(|l| matches!(l.kind, LayerKind::FullyConnected { .. }));
        if policy == FreezePolicy::SelectiveFc && !has_fc {
            return Err(NnError::PolicyMismatch {
                policy,
                arch: self.spec.name.clone(),
            });
        }
        for l in &mut self.spec.layers {
            l.trainable = match policy {
                FreezePolicy::SelectiveFc => matches!(l.kind, LayerKind::FullyConnected { .. }),
                _ => true,
            };
        }
        let trainable: Vec<String> = self.trainable_param_names();
        self.momentum.retain(|k, _| trainable.contains(k));
        self.generation += 1;
        let mut reinit = Vec::new();
        if policy.is_selective() {
            let head = self
                .spec
                .classifier_layer()
                .ok_or_else(|| NnError::PolicyMismatch {
                    policy,
                    arch: self.spec.name.clone(),
                })?;
            self.init_layer(head, rng::derive_seed(seed, rng::purpose::HEAD));
            reinit.push(self.spec.layers[head].name.clone());
        }
        Ok(reinit)
    }
}
