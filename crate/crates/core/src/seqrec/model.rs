//! Forward and backward passes of the pre-norm transformer recommender.
//!
//! Per position `i`, the input embedding is `entity[token_i] + position[i]`.
//! Each block computes
//!
//! ```text
//! x ← x + Dropout(Attention(LayerNorm(x)))
//! x ← x + Dropout(W_b · GELU(W_a · LayerNorm(x)))
//! ```
//!
//! and the item scores come from the final-normed hidden state at the `[MASK]`
//! position: `GELU(h W₁ᵀ + b₁) W₂ᵀ + b₂`.

use rand::Rng;

use super::params::Params;
use super::tensor::{gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, softmax_in_place, NormCache, Scalar};

/// Activations of one block retained for backprop and inspection.
#[derive(Debug, Clone)]
pub struct LayerTrace<T> {
    pub input: Vec<T>,
    attn_norm: NormCache<T>,
    attn_in: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `heads × n × n` attention probabilities.
    pub attention: Vec<T>,
    context: Vec<T>,
    attn_dropout: Option<Vec<T>>,
    pub after_attn: Vec<T>,
    ff_norm: NormCache<T>,
    ff_input: Vec<T>,
    ff_pre: Vec<T>,
    ff_act: Vec<T>,
    ff_dropout: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub tokens: Vec<usize>,
    pub heads: usize,
    embed_dropout: Option<Vec<T>>,
    pub layers: Vec<LayerTrace<T>>,
    /// Final block output, `n × d` (before the final layer norm).
    pub hidden: Vec<T>,
    final_norm: NormCache<T>,
    head_input: Vec<T>,
    head_pre: Vec<T>,
    head_act: Vec<T>,
    pub scores: Vec<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Attention probabilities of `layer`, head `h`, as an `n × n` row-major slice.
    pub fn attention(&self, layer: usize, head: usize) -> &[T] {
        let n = self.tokens.len();
        &self.layers[layer].attention[head * n * n..(head + 1) * n * n]
    }
}

fn dropout_mask<T: Scalar, R: Rng>(len: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    (0..len).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect()
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v = *v * k;
        }
    }
}

/// Runs the network on `tokens` (ids below the `[MASK]` id, or the mask id
/// itself); scores are read at the last position. Pass `dropout = Some((p, rng))`
/// for training mode.
pub(crate) fn forward<T: Scalar, R: Rng>(
    params: &Params<T>,
    heads: usize,
    tokens: &[usize],
    mut dropout: Option<(f64, &mut R)>,
) -> ForwardTrace<T> {
    let n = tokens.len();
    let d = params.entity.cols;
    let dh = d / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();

    let mut x = vec![T::zero(); n * d];
    for (i, &tok) in tokens.iter().enumerate() {
        let e = params.entity.row(tok);
        let p = params.position.row(i);
        for j in 0..d {
            x[i * d + j] = e[j] + p[j];
        }
    }
    let mut masks = |len: usize| match dropout.as_mut() {
        Some((p, rng)) if *p > 0.0 => Some(dropout_mask::<T, _>(len, *p, *rng)),
        _ => None,
    };
    let embed_dropout = masks(n * d);
    apply_mask(&mut x, &embed_dropout);

    let mut layers = Vec::with_capacity(params.layers.len());
    for lp in &params.layers {
        let input = x.clone();
        let (attn_in, attn_norm) = layer_norm(&x, n, d, &lp.attn_norm_gain, &lp.attn_norm_bias);
        let q = linear(&attn_in, n, &lp.query, &lp.query_bias);
        let k = linear(&attn_in, n, &lp.key, &vec![T::zero(); d]);
        let v = linear(&attn_in, n, &lp.value, &lp.value_bias);
        let mut attention = vec![T::zero(); heads * n * n];
        let mut context = vec![T::zero(); n * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let row = &mut attention[h * n * n + i * n..h * n * n + (i + 1) * n];
                for (j, s) in row.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for c in 0..dh {
                        acc = acc + q[i * d + off + c] * k[j * d + off + c];
                    }
                    *s = acc * scale;
                }
                softmax_in_place(row);
                for c in 0..dh {
                    let mut acc = T::zero();
                    for j in 0..n {
                        acc = acc + row[j] * v[j * d + off + c];
                    }
                    context[i * d + off + c] = acc;
                }
            }
        }
        let mut attn_out = linear(&context, n, &lp.output, &lp.output_bias);
        let attn_dropout = masks(n * d);
        apply_mask(&mut attn_out, &attn_dropout);
        let after_attn: Vec<T> = x.iter().zip(&attn_out).map(|(&a, &b)| a + b).collect();

        let (ff_input, ff_norm) = layer_norm(&after_attn, n, d, &lp.ff_norm_gain, &lp.ff_norm_bias);
        let ff_pre = linear(&ff_input, n, &lp.ff_in, &lp.ff_in_bias);
        let ff_act: Vec<T> = ff_pre.iter().map(|&z| gelu(z)).collect();
        let mut ff_out = linear(&ff_act, n, &lp.ff_out, &lp.ff_out_bias);
        let ff_dropout = masks(n * d);
        apply_mask(&mut ff_out, &ff_dropout);
        x = after_attn.iter().zip(&ff_out).map(|(&a, &b)| a + b).collect();

        layers.push(LayerTrace {
            input,
            attn_norm,
            attn_in,
            q,
            k,
            v,
            attention,
            context,
            attn_dropout,
            after_attn,
            ff_norm,
            ff_input,
            ff_pre,
            ff_act,
            ff_dropout,
        });
    }

    let last = &x[(n - 1) * d..n * d];
    let (head_input, final_norm) = layer_norm(last, 1, d, &params.final_norm_gain, &params.final_norm_bias);
    let head_pre = linear(&head_input, 1, &params.head_hidden, &params.head_hidden_bias);
    let head_act: Vec<T> = head_pre.iter().map(|&z| gelu(z)).collect();
    let scores = linear(&head_act, 1, &params.head_out, &params.head_out_bias);

    ForwardTrace {
        tokens: tokens.to_vec(),
        heads,
        embed_dropout,
        layers,
        hidden: x,
        final_norm,
        head_input,
        head_pre,
        head_act,
        scores,
    }
}

/// Accumulates `∂loss/∂params` into `grads` given `∂loss/∂scores`.
pub(crate) fn backward<T: Scalar>(params: &Params<T>, trace: &ForwardTrace<T>, dscores: &[T], grads: &mut Params<T>) {
    let n = trace.tokens.len();
    let d = params.entity.cols;
    let heads = trace.heads;
    let dh = d / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();

    let dact = linear_backward(&trace.head_act, dscores, 1, &params.head_out, &mut grads.head_out, &mut grads.head_out_bias);
    let dpre: Vec<T> = dact.iter().zip(&trace.head_pre).map(|(&g, &z)| g * gelu_grad(z)).collect();
    let dhead_in =
        linear_backward(&trace.head_input, &dpre, 1, &params.head_hidden, &mut grads.head_hidden, &mut grads.head_hidden_bias);
    let dlast = layer_norm_backward(
        &dhead_in,
        &trace.final_norm,
        1,
        d,
        &params.final_norm_gain,
        &mut grads.final_norm_gain,
        &mut grads.final_norm_bias,
    );
    let mut dx = vec![T::zero(); n * d];
    dx[(n - 1) * d..].copy_from_slice(&dlast);

    for (l, (lp, lt)) in params.layers.iter().zip(&trace.layers).enumerate().rev() {
        let lg = &mut grads.layers[l];

        // Feed-forward sub-block; the residual passes dx through unchanged.
        let mut dff_out = dx.clone();
        apply_mask(&mut dff_out, &lt.ff_dropout);
        let dff_act = linear_backward(&lt.ff_act, &dff_out, n, &lp.ff_out, &mut lg.ff_out, &mut lg.ff_out_bias);
        let dff_pre: Vec<T> = dff_act.iter().zip(&lt.ff_pre).map(|(&g, &z)| g * gelu_grad(z)).collect();
        let dff_in = linear_backward(&lt.ff_input, &dff_pre, n, &lp.ff_in, &mut lg.ff_in, &mut lg.ff_in_bias);
        let dnorm = layer_norm_backward(&dff_in, &lt.ff_norm, n, d, &lp.ff_norm_gain, &mut lg.ff_norm_gain, &mut lg.ff_norm_bias);
        for (a, b) in dx.iter_mut().zip(&dnorm) {
            *a = *a + *b;
        }

        // Attention sub-block.
        let mut dattn_out = dx.clone();
        apply_mask(&mut dattn_out, &lt.attn_dropout);
        let dcontext = linear_backward(&lt.context, &dattn_out, n, &lp.output, &mut lg.output, &mut lg.output_bias);
        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        let mut dprob = vec![T::zero(); n];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let probs = &lt.attention[h * n * n + i * n..h * n * n + (i + 1) * n];
                for j in 0..n {
                    let mut acc = T::zero();
                    for c in 0..dh {
                        let g = dcontext[i * d + off + c];
                        acc = acc + g * lt.v[j * d + off + c];
                        dv[j * d + off + c] = dv[j * d + off + c] + probs[j] * g;
                    }
                    dprob[j] = acc;
                }
                let dot: T = probs.iter().zip(&dprob).map(|(&p, &g)| p * g).sum();
                for j in 0..n {
                    let ds = probs[j] * (dprob[j] - dot) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    for c in 0..dh {
                        dq[i * d + off + c] = dq[i * d + off + c] + ds * lt.k[j * d + off + c];
                        dk[j * d + off + c] = dk[j * d + off + c] + ds * lt.q[i * d + off + c];
                    }
                }
            }
        }
        let mut dattn_in = linear_backward(&lt.attn_in, &dq, n, &lp.query, &mut lg.query, &mut lg.query_bias);
        let mut unused_bias = vec![T::zero(); d];
        let dk_in = linear_backward(&lt.attn_in, &dk, n, &lp.key, &mut lg.key, &mut unused_bias);
        let dv_in = linear_backward(&lt.attn_in, &dv, n, &lp.value, &mut lg.value, &mut lg.value_bias);
        for ((a, b), c) in dattn_in.iter_mut().zip(&dk_in).zip(&dv_in) {
            *a = *a + *b + *c;
        }
        let dnorm =
            layer_norm_backward(&dattn_in, &lt.attn_norm, n, d, &lp.attn_norm_gain, &mut lg.attn_norm_gain, &mut lg.attn_norm_bias);
        for (a, b) in dx.iter_mut().zip(&dnorm) {
            *a = *a + *b;
        }
        debug_assert_eq!(lt.input.len(), n * d);
    }

    apply_mask(&mut dx, &trace.embed_dropout);
    for (i, &tok) in trace.tokens.iter().enumerate() {
        let g = &dx[i * d..(i + 1) * d];
        let er = grads.entity.row_mut(tok);
        for j in 0..d {
            er[j] = er[j] + g[j];
        }
        let pr = grads.position.row_mut(i);
        for j in 0..d {
            pr[j] = pr[j] + g[j];
        }
    }
}
