use serde::{Deserialize, Serialize};

use super::tensor::Real;

/// Named parameter arrays, addressed by the index returned from [`ParamSet::add`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<Param<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T> Default for ParamSet<T> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn add(&mut self, name: String, shape: Vec<usize>, data: Vec<T>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.push(Param { name, shape, data });
        self.entries.len() - 1
    }

    pub fn value(&self, index: usize) -> &[T] {
        &self.entries[index].data
    }

    pub fn value_mut(&mut self, index: usize) -> &mut [T] {
        &mut self.entries[index].data
    }

    pub fn entries(&self) -> &[Param<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Param<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Vec<T>> {
        self.entries.iter().map(|p| vec![T::zero(); p.data.len()]).collect()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::lit(v.to_f64().unwrap_or(f64::NAN))).collect(),
                })
                .collect(),
        }
    }
}

pub fn accumulate<T: Real>(into: &mut [Vec<T>], from: &[Vec<T>]) {
    for (a, b) in into.iter_mut().zip(from) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += *y;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f32>>,
    pub second_moment: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet<f32>) -> Self {
        Self {
            config,
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut ParamSet<f32>, grads: &[Vec<f32>]) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let step_size = (c.learning_rate * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t))) as f32;
        let (b1, b2, eps) = (c.beta1 as f32, c.beta2 as f32, c.epsilon as f32);
        let bias2 = (1.0 - c.beta2.powi(t)).sqrt() as f32;
        for (((p, g), m), v) in params
            .entries_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((w, g), m), v) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                // eps is applied to the bias-corrected second moment.
                *w -= step_size * *m / (v.sqrt() + eps * bias2);
            }
        }
    }
}
