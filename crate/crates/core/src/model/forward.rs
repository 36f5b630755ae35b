use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops::{gelu, gelu_grad, layer_norm, layer_norm_backward, sigmoid, softmax_rows, LayerNormCache};
use super::{LayerParams, Model, ParamGradients};
use crate::encoder_input::EncodedInput;
use crate::error::{Error, Result};

/// Which positions the masked-token head is evaluated at.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum MlmHead {
    Off,
    #[default]
    All,
    At(Vec<usize>),
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    pub mlm: MlmHead,
}

/// Activations of one encoder layer kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input: Array2<f64>,
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    /// Attention weights per head, `active x active`.
    pub attention: Vec<Array2<f64>>,
    pub context: Array2<f64>,
    attn_dropout: Option<Array2<f64>>,
    attn_norm: LayerNormCache,
    pub hidden: Array2<f64>,
    ffn_pre: Array2<f64>,
    ffn_act: Array2<f64>,
    ffn_dropout: Option<Array2<f64>>,
    ffn_norm: LayerNormCache,
}

/// Everything the backward pass needs from a forward call.
///
/// Only positions with `attention_mask = 1` enter the stack. Since padded keys
/// are excluded from every softmax and padded queries feed no head, dropping
/// those rows is the same computation as an additive `-inf` key mask.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input positions of the active rows, ascending.
    pub positions: Vec<usize>,
    token_ids: Vec<usize>,
    segment_ids: Vec<usize>,
    position_ids: Vec<usize>,
    speaker_ids: Vec<usize>,
    pub layers: Vec<LayerTrace>,
    pub final_hidden: Array2<f64>,
    seq_len: usize,
}

impl ForwardTrace {
    /// Attention weights of `head` in `layer`; rows and columns index active positions.
    pub fn attention(&self, layer: usize, head: usize) -> &Array2<f64> {
        &self.layers[layer].attention[head]
    }

    fn row_of(&self, position: usize) -> Option<usize> {
        self.positions.binary_search(&position).ok()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub match_logit: f64,
    pub nsp_logits: [f64; 2],
    /// `seq_len x vocab`; rows that were not evaluated (padding, or positions
    /// outside [`MlmHead::At`]) are zero.
    pub mlm_logits: Option<Array2<f64>>,
    pub trace: ForwardTrace,
}

/// Loss gradients with respect to the head outputs.
#[derive(Debug, Clone, Default)]
pub struct HeadGradients {
    pub match_logit: f64,
    pub nsp_logits: [f64; 2],
    /// `(input position, d loss / d logits)` for masked-token rows.
    pub mlm: Vec<(usize, Vec<f64>)>,
}

fn check_finite(m: &Array2<f64>, layer: usize, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            layer,
            what: what.to_string(),
        })
    }
}

fn dropout_mask(rng: &mut ChaCha8Rng, shape: (usize, usize), rate: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < rate { 0.0 } else { keep })
}

impl Model {
    fn check_input(&self, input: &EncodedInput) -> Result<()> {
        let len = input.len();
        if [input.segment_ids.len(), input.position_ids.len(), input.speaker_ids.len(), input.attention_mask.len()]
            .iter()
            .any(|&l| l != len)
        {
            return Err(Error::Input("id tracks have unequal lengths".into()));
        }
        if len == 0 || len > self.config.max_seq_len {
            return Err(Error::Input(format!(
                "sequence length {len} outside 1..={}",
                self.config.max_seq_len
            )));
        }
        let tracks: [(&'static str, &[usize], usize); 4] = [
            ("token", &input.token_ids, self.config.vocab_size),
            ("segment", &input.segment_ids, 2),
            ("position", &input.position_ids, self.config.max_seq_len),
            ("speaker", &input.speaker_ids, self.config.num_speaker_roles),
        ];
        for (track, ids, size) in tracks {
            if let Some((index, &id)) = ids.iter().enumerate().find(|(_, &id)| id >= size) {
                return Err(Error::IdRange { track, index, id, size });
            }
        }
        if input.attention_mask[0] != 1 {
            return Err(Error::Input("position 0 must be an attended [CLS] slot".into()));
        }
        Ok(())
    }

    fn embed_rows(&self, input: &EncodedInput, positions: &[usize]) -> Array2<f64> {
        let p = &self.params;
        let mut x = Array2::zeros((positions.len(), self.config.hidden_dim));
        for (r, &i) in positions.iter().enumerate() {
            let mut row = x.row_mut(r);
            row.assign(&p.token_table.row(input.token_ids[i]));
            row += &p.segment_table.row(input.segment_ids[i]);
            row += &p.position_table.row(input.position_ids[i]);
            row += &p.speaker_table.row(input.speaker_ids[i]);
        }
        x
    }

    /// Summed token, segment, position and speaker embeddings for every position.
    pub fn embed(&self, input: &EncodedInput) -> Result<Array2<f64>> {
        self.check_input(input)?;
        let all: Vec<usize> = (0..input.len()).collect();
        Ok(self.embed_rows(input, &all))
    }

    /// Deterministic forward pass with every head evaluated.
    pub fn forward(&self, input: &EncodedInput) -> Result<ForwardOutput> {
        self.forward_with(input, &ForwardOptions::default(), None)
    }

    /// Forward pass. Dropout is applied only when `dropout_rng` is given and the
    /// configured rate is positive.
    pub fn forward_with(
        &self,
        input: &EncodedInput,
        options: &ForwardOptions,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput> {
        self.check_input(input)?;
        let cfg = &self.config;
        let positions: Vec<usize> = (0..input.len()).filter(|&i| input.attention_mask[i] == 1).collect();
        let pick = |track: &[usize]| positions.iter().map(|&i| track[i]).collect::<Vec<_>>();

        let mut x = self.embed_rows(input, &positions);
        check_finite(&x, 0, "embeddings")?;
        let rate = cfg.dropout_rate;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for (l, lp) in self.params.layers.iter().enumerate() {
            let rng = if rate > 0.0 { dropout_rng.as_deref_mut() } else { None };
            let (out, trace) = self.layer_forward(lp, x, rng)?;
            check_finite(&out, l, "layer output")?;
            layers.push(trace);
            x = out;
        }

        let p = &self.params;
        let cls = x.row(0);
        let match_logit = cls.dot(&p.match_weight.column(0)) + p.match_bias[[0, 0]];
        let nsp = cls.dot(&p.nsp_weight) + p.nsp_bias.row(0);
        let mlm_logits = self.mlm_head(&x, &positions, input.len(), &options.mlm);
        if !match_logit.is_finite() || nsp.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: cfg.num_layers,
                what: "head logits".into(),
            });
        }

        let trace = ForwardTrace {
            token_ids: pick(&input.token_ids),
            segment_ids: pick(&input.segment_ids),
            position_ids: pick(&input.position_ids),
            speaker_ids: pick(&input.speaker_ids),
            positions,
            layers,
            final_hidden: x,
            seq_len: input.len(),
        };
        Ok(ForwardOutput {
            match_logit,
            nsp_logits: [nsp[0], nsp[1]],
            mlm_logits,
            trace,
        })
    }

    fn mlm_head(&self, x: &Array2<f64>, positions: &[usize], seq_len: usize, mode: &MlmHead) -> Option<Array2<f64>> {
        let p = &self.params;
        let mut logits = Array2::zeros((seq_len, self.config.vocab_size));
        match mode {
            MlmHead::Off => return None,
            MlmHead::All => {
                let dense = x.dot(&p.mlm_weight) + &p.mlm_bias;
                for (r, &i) in positions.iter().enumerate() {
                    logits.row_mut(i).assign(&dense.row(r));
                }
            }
            MlmHead::At(wanted) => {
                for &i in wanted {
                    if let Ok(r) = positions.binary_search(&i) {
                        let row = x.row(r).dot(&p.mlm_weight) + p.mlm_bias.row(0);
                        logits.row_mut(i).assign(&row);
                    }
                }
            }
        }
        Some(logits)
    }

    fn layer_forward(
        &self,
        lp: &LayerParams,
        x: Array2<f64>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array2<f64>, LayerTrace)> {
        let heads = self.config.num_heads;
        let d = self.config.head_dim();
        let scale = 1.0 / (d as f64).sqrt();
        let n = x.nrows();

        let query = x.dot(&lp.query) + &lp.query_bias;
        let key = x.dot(&lp.key) + &lp.key_bias;
        let value = x.dot(&lp.value) + &lp.value_bias;
        let mut context = Array2::zeros((n, self.config.hidden_dim));
        let mut attention = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * d..(h + 1) * d];
            let mut scores = query.slice(cols).dot(&key.slice(cols).t());
            scores *= scale;
            softmax_rows(&mut scores);
            context.slice_mut(cols).assign(&scores.dot(&value.slice(cols)));
            attention.push(scores);
        }
        let mut attn_out = context.dot(&lp.output) + &lp.output_bias;
        let rate = self.config.dropout_rate;
        let attn_dropout = rng.as_deref_mut().map(|r| dropout_mask(r, attn_out.dim(), rate));
        if let Some(mask) = &attn_dropout {
            attn_out *= mask;
        }
        let (hidden, attn_norm) = layer_norm(&(&x + &attn_out), &lp.attn_norm_gain, &lp.attn_norm_bias);

        let ffn_pre = hidden.dot(&lp.ffn_in) + &lp.ffn_in_bias;
        let ffn_act = ffn_pre.mapv(gelu);
        let mut ffn_out = ffn_act.dot(&lp.ffn_out) + &lp.ffn_out_bias;
        let ffn_dropout = rng.map(|r| dropout_mask(r, ffn_out.dim(), rate));
        if let Some(mask) = &ffn_dropout {
            ffn_out *= mask;
        }
        let (out, ffn_norm) = layer_norm(&(&hidden + &ffn_out), &lp.ffn_norm_gain, &lp.ffn_norm_bias);

        Ok((
            out,
            LayerTrace {
                input: x,
                query,
                key,
                value,
                attention,
                context,
                attn_dropout,
                attn_norm,
                hidden,
                ffn_pre,
                ffn_act,
                ffn_dropout,
                ffn_norm,
            },
        ))
    }

    /// Matching probability `sigmoid(match_logit)`.
    pub fn score(&self, input: &EncodedInput) -> Result<f64> {
        let out = self.forward_with(input, &ForwardOptions { mlm: MlmHead::Off }, None)?;
        Ok(sigmoid(out.match_logit))
    }

    /// Exact gradients of the loss with respect to every parameter, given the
    /// loss gradients at the heads.
    pub fn backward(&self, trace: &ForwardTrace, head: &HeadGradients) -> Result<ParamGradients> {
        let cfg = &self.config;
        let p = &self.params;
        if trace.layers.len() != cfg.num_layers || trace.final_hidden.ncols() != cfg.hidden_dim {
            return Err(Error::Input("forward trace does not match the model".into()));
        }
        let mut g = p.zeros_like();
        let x_final = &trace.final_hidden;
        let mut dx = Array2::<f64>::zeros(x_final.dim());

        // [CLS] heads.
        let cls = x_final.row(0);
        {
            let mut d_cls = dx.row_mut(0);
            if head.match_logit != 0.0 {
                g.match_weight.column_mut(0).scaled_add(head.match_logit, &cls);
                g.match_bias[[0, 0]] += head.match_logit;
                d_cls.scaled_add(head.match_logit, &p.match_weight.column(0));
            }
            for j in 0..2 {
                let dj = head.nsp_logits[j];
                if dj != 0.0 {
                    g.nsp_weight.column_mut(j).scaled_add(dj, &cls);
                    g.nsp_bias[[0, j]] += dj;
                    d_cls.scaled_add(dj, &p.nsp_weight.column(j));
                }
            }
        }
        // Masked-token head.
        for (pos, d_logits) in &head.mlm {
            if d_logits.len() != cfg.vocab_size {
                return Err(Error::Input(format!("mlm gradient at {pos} has wrong width")));
            }
            let r = trace
                .row_of(*pos)
                .ok_or_else(|| Error::Input(format!("mlm gradient at inactive position {pos} (len {})", trace.seq_len)))?;
            let d_logits = Array1::from_vec(d_logits.clone());
            let x_row = x_final.row(r);
            let outer = x_row
                .view()
                .insert_axis(Axis(1))
                .dot(&d_logits.view().insert_axis(Axis(0)));
            g.mlm_weight += &outer;
            g.mlm_bias.row_mut(0).scaled_add(1.0, &d_logits);
            let d_row = p.mlm_weight.dot(&d_logits);
            dx.row_mut(r).scaled_add(1.0, &d_row);
        }

        for (l, (lp, lt)) in p.layers.iter().zip(&trace.layers).enumerate().rev() {
            dx = self.layer_backward(lp, lt, &mut g.layers[l], dx);
        }

        for (r, d_row) in dx.rows().into_iter().enumerate() {
            g.token_table.row_mut(trace.token_ids[r]).scaled_add(1.0, &d_row);
            g.segment_table.row_mut(trace.segment_ids[r]).scaled_add(1.0, &d_row);
            g.position_table.row_mut(trace.position_ids[r]).scaled_add(1.0, &d_row);
            g.speaker_table.row_mut(trace.speaker_ids[r]).scaled_add(1.0, &d_row);
        }
        Ok(g)
    }

    fn layer_backward(&self, lp: &LayerParams, lt: &LayerTrace, g: &mut LayerParams, d_out: Array2<f64>) -> Array2<f64> {
        let d = self.config.head_dim();
        let scale = 1.0 / (d as f64).sqrt();

        // Feed-forward sublayer.
        let d_res2 = layer_norm_backward(&d_out, &lt.ffn_norm, &lp.ffn_norm_gain, &mut g.ffn_norm_gain, &mut g.ffn_norm_bias);
        let mut d_hidden = d_res2.clone();
        let mut d_ffn = d_res2;
        if let Some(mask) = &lt.ffn_dropout {
            d_ffn *= mask;
        }
        g.ffn_out += &lt.ffn_act.t().dot(&d_ffn);
        g.ffn_out_bias += &sum_rows(&d_ffn);
        let mut d_pre = d_ffn.dot(&lp.ffn_out.t());
        ndarray::Zip::from(&mut d_pre).and(&lt.ffn_pre).for_each(|dv, &x| *dv *= gelu_grad(x));
        g.ffn_in += &lt.hidden.t().dot(&d_pre);
        g.ffn_in_bias += &sum_rows(&d_pre);
        d_hidden += &d_pre.dot(&lp.ffn_in.t());

        // Attention sublayer.
        let d_res1 = layer_norm_backward(&d_hidden, &lt.attn_norm, &lp.attn_norm_gain, &mut g.attn_norm_gain, &mut g.attn_norm_bias);
        let mut d_x = d_res1.clone();
        let mut d_attn = d_res1;
        if let Some(mask) = &lt.attn_dropout {
            d_attn *= mask;
        }
        g.output += &lt.context.t().dot(&d_attn);
        g.output_bias += &sum_rows(&d_attn);
        let d_context = d_attn.dot(&lp.output.t());

        let mut d_query = Array2::zeros(lt.query.dim());
        let mut d_key = Array2::zeros(lt.key.dim());
        let mut d_value = Array2::zeros(lt.value.dim());
        for (h, probs) in lt.attention.iter().enumerate() {
            let cols = s![.., h * d..(h + 1) * d];
            let d_ctx_h = d_context.slice(cols);
            let v_h = lt.value.slice(cols);
            let d_probs = d_ctx_h.dot(&v_h.t());
            d_value.slice_mut(cols).assign(&probs.t().dot(&d_ctx_h));
            let mut d_scores = softmax_backward(probs, &d_probs);
            d_scores *= scale;
            d_query.slice_mut(cols).assign(&d_scores.dot(&lt.key.slice(cols)));
            d_key.slice_mut(cols).assign(&d_scores.t().dot(&lt.query.slice(cols)));
        }
        let x_t = lt.input.t();
        g.query += &x_t.dot(&d_query);
        g.query_bias += &sum_rows(&d_query);
        g.key += &x_t.dot(&d_key);
        g.key_bias += &sum_rows(&d_key);
        g.value += &x_t.dot(&d_value);
        g.value_bias += &sum_rows(&d_value);
        d_x += &d_query.dot(&lp.query.t());
        d_x += &d_key.dot(&lp.key.t());
        d_x += &d_value.dot(&lp.value.t());
        d_x
    }
}

fn sum_rows(m: &Array2<f64>) -> Array2<f64> {
    m.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// Row-wise softmax Jacobian-vector product.
fn softmax_backward(probs: &Array2<f64>, d_probs: &Array2<f64>) -> Array2<f64> {
    let dot = (probs * d_probs).sum_axis(Axis(1));
    let mut out = d_probs - &dot.insert_axis(Axis(1));
    out *= probs;
    out
}
