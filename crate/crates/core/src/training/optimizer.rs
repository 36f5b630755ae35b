use crate::model::{ModelParams, ParamGradients};

/// Adam with decoupled weight decay. Biases and layernorm vectors are not decayed.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    first: ModelParams,
    second: ModelParams,
    steps: u64,
    frozen: Vec<String>,
}

fn decays(name: &str) -> bool {
    !(name.ends_with("_bias") || name.contains("norm"))
}

impl AdamW {
    pub fn new(params: &ModelParams, beta1: f64, beta2: f64, epsilon: f64, weight_decay: f64) -> Self {
        AdamW {
            beta1,
            beta2,
            epsilon,
            weight_decay,
            first: params.zeros_like(),
            second: params.zeros_like(),
            steps: 0,
            frozen: Vec::new(),
        }
    }

    /// Tensors named here are never updated.
    pub fn freeze(&mut self, name: &str) {
        self.frozen.push(name.to_string());
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGradients, lr: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.epsilon, self.weight_decay);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut());
        for ((((name, p), (_, g)), (_, m)), (_, v)) in tensors {
            if self.frozen.contains(&name) {
                continue;
            }
            let decay = if decays(&name) { wd } else { 0.0 };
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                *p -= lr * (update + decay * *p);
            });
        }
    }
}
