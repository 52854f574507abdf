use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum UpdateRule {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    /// Unfactored Adafactor without first-order momentum: decaying second
    /// moment `β₂(t) = 1 − t^decay`, then RMS update clipping.
    AdafactorLite { decay: f64, eps: f64, update_clip: f64 },
}

impl UpdateRule {
    pub fn adam() -> Self {
        UpdateRule::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn adafactor_lite() -> Self {
        UpdateRule::AdafactorLite {
            decay: -0.8,
            eps: 1e-30,
            update_clip: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub rule: UpdateRule,
    pub lr: f64,
    /// Global-norm clip threshold; `None` disables clipping.
    pub clip: Option<f64>,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            rule: UpdateRule::adam(),
            lr,
            clip: None,
        }
    }

    pub fn adafactor_lite(lr: f64, clip: f64) -> Self {
        Self {
            rule: UpdateRule::adafactor_lite(),
            lr,
            clip: Some(clip),
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    step: u64,
    moments: BTreeMap<ParamId, Moments>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    pub clipped: bool,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn second_moments(&self) -> impl Iterator<Item = &[f64]> {
        self.moments.values().map(|m| m.second.as_slice())
    }

    /// Applies one update to every trainable parameter that has a gradient.
    ///
    /// The global norm is taken over exactly those gradients before
    /// clipping. A non-finite gradient aborts the step with parameters and
    /// state untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) -> Result<StepReport> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("optimizer gradient"));
        }
        let active: Vec<ParamId> = grads
            .iter()
            .map(|(id, _)| id)
            .filter(|&id| params.is_trainable(id))
            .collect();
        let norm = active
            .iter()
            .map(|&id| grads.get(id).expect("listed").norm_sq())
            .sum::<f64>()
            .sqrt();
        let (scale, clipped) = match self.config.clip {
            Some(c) if norm > c => (c / norm, true),
            _ => (1.0, false),
        };

        self.step += 1;
        let t = self.step as f64;
        let lr = self.config.lr;
        for id in active {
            let g = grads.get(id).expect("listed").data();
            let p = params.get_mut(id).data_mut();
            let m = self.moments.entry(id).or_insert_with(|| Moments {
                first: vec![0.0; g.len()],
                second: vec![0.0; g.len()],
            });
            match self.config.rule {
                UpdateRule::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powf(t);
                    let c2 = 1.0 - beta2.powf(t);
                    for i in 0..g.len() {
                        let gi = g[i] * scale;
                        m.first[i] = beta1 * m.first[i] + (1.0 - beta1) * gi;
                        m.second[i] = beta2 * m.second[i] + (1.0 - beta2) * gi * gi;
                        let mhat = m.first[i] / c1;
                        let vhat = m.second[i] / c2;
                        p[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
                UpdateRule::AdafactorLite {
                    decay,
                    eps,
                    update_clip,
                } => {
                    let beta2 = 1.0 - t.powf(decay);
                    let mut update: Vec<f64> = Vec::with_capacity(g.len());
                    for i in 0..g.len() {
                        let gi = g[i] * scale;
                        m.second[i] = beta2 * m.second[i] + (1.0 - beta2) * (gi * gi + eps);
                        update.push(gi / m.second[i].sqrt());
                    }
                    let rms = (update.iter().map(|u| u * u).sum::<f64>() / update.len() as f64).sqrt();
                    let denom = (rms / update_clip).max(1.0);
                    for (pi, u) in p.iter_mut().zip(&update) {
                        *pi -= lr * u / denom;
                    }
                }
            }
        }
        Ok(StepReport {
            grad_norm: norm,
            clipped,
        })
    }
}

/// Serializable optimizer state with moments keyed by parameter name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSnapshot {
    pub config: OptimizerConfig,
    pub step: u64,
    pub moments: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn snapshot(&self, params: &ParamStore) -> OptimizerSnapshot {
        OptimizerSnapshot {
            config: self.config,
            step: self.step,
            moments: self
                .moments
                .iter()
                .map(|(&id, m)| (params.name(id).to_string(), m.first.clone(), m.second.clone()))
                .collect(),
        }
    }

    pub fn restore(snap: &OptimizerSnapshot, params: &ParamStore) -> Result<Self> {
        let mut moments = BTreeMap::new();
        for (name, first, second) in &snap.moments {
            let id = params.id(name)?;
            if first.len() != params.get(id).len() || second.len() != first.len() {
                return Err(Error::Checkpoint(format!("optimizer moments for {name} have the wrong size")));
            }
            moments.insert(
                id,
                Moments {
                    first: first.clone(),
                    second: second.clone(),
                },
            );
        }
        Ok(Self {
            config: snap.config,
            step: snap.step,
            moments,
        })
    }
}

/// Scales `grads` in place to global norm `clip` when it is exceeded.
pub fn clip_global_norm(grads: &mut Grads, clip: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > clip {
        grads.scale(clip / norm);
    }
    norm
}
