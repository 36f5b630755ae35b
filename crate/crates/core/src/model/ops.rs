use ndarray::{Array1, Array2, Axis};

pub(crate) const LN_EPS: f64 = 1e-12;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax in place.
pub(crate) fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// `log(sum(exp(v)))` computed stably.
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Cached pieces of a layernorm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub(crate) fn layer_norm(x: &Array2<f64>, gain: &Array2<f64>, bias: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
    let h = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / h;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / h;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let normalized = &centered * &inv_std.view().insert_axis(Axis(1));
    let out = &normalized * gain + bias;
    (out, LayerNormCache { normalized, inv_std })
}

/// Returns the input gradient; accumulates gain and bias gradients.
pub(crate) fn layer_norm_backward(
    d_out: &Array2<f64>,
    cache: &LayerNormCache,
    gain: &Array2<f64>,
    d_gain: &mut Array2<f64>,
    d_bias: &mut Array2<f64>,
) -> Array2<f64> {
    let h = d_out.ncols() as f64;
    *d_gain += &(d_out * &cache.normalized).sum_axis(Axis(0)).insert_axis(Axis(0));
    *d_bias += &d_out.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_norm = d_out * gain;
    let mean_d = d_norm.sum_axis(Axis(1)) / h;
    let mean_dx = (&d_norm * &cache.normalized).sum_axis(Axis(1)) / h;
    let mut d_in = d_norm - &mean_d.insert_axis(Axis(1)) - &(&cache.normalized * &mean_dx.insert_axis(Axis(1)));
    d_in *= &cache.inv_std.view().insert_axis(Axis(1));
    d_in
}
