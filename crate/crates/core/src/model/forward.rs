use rayon::prelude::*;

use super::params::*;
use super::ModelParams;
use crate::error::{Error, Result};
use crate::numcore::kernels::{add_row_bias, dot, col_sums_acc, matmul_acc, matmul_nt_acc, matmul_tn_acc};
use crate::numcore::{
    dropout_mask, gelu_grad, layer_norm_rows,
    ops::{gelu_scalar, softmax_in_place}, layer_norm_rows_backward, softmax_rows_backward,
    LayerNormCache, ParameterSet, SeededRng, Tensor, LN_EPS,
};

/// One gradient array per parameter, in layout order.
pub type Grads = Vec<Tensor>;

struct EmbedCache {
    input: Vec<f64>,
    ln: LayerNormCache,
    drop: Option<Vec<f64>>,
}

struct LayerCache {
    x_in: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention probabilities, `heads × S × S`.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    attn_drop: Option<Vec<f64>>,
    ln1: LayerNormCache,
    x1: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    ff_drop: Option<Vec<f64>>,
    /// Residual sum entering the second norm.
    ff_sum: Vec<f64>,
    ln2: LayerNormCache,
}

/// Activations of one sequence's forward pass, kept for the backward pass.
pub struct Forward {
    steps: usize,
    train_mode: bool,
    embed: EmbedCache,
    layers: Vec<LayerCache>,
    hidden: Vec<f64>,
    recon: Vec<f64>,
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, s)| *v *= s);
    }
}

fn check_channels(params: &ModelParams, channels: &Tensor) -> Result<usize> {
    let cfg = params.config();
    if channels.rank() != 2 || channels.cols() != cfg.channels {
        return Err(Error::shape(
            "model input",
            channels.shape(),
            &[channels.rows(), cfg.channels],
        ));
    }
    let m = channels.rows();
    if m + 1 > cfg.max_seq_len {
        return Err(Error::InvalidArgument(format!(
            "sequence of {m} steps plus [CLS] exceeds max_seq_len {}",
            cfg.max_seq_len
        )));
    }
    channels.ensure_finite("model input")?;
    Ok(m)
}

fn embed_forward(
    params: &ModelParams,
    input: &[f64],
    m: usize,
    train: bool,
    rng: &mut SeededRng,
) -> (Vec<f64>, EmbedCache) {
    let cfg = params.config();
    let (d, h, s) = (cfg.channels, cfg.hidden, m + 1);
    let pos = params.value(POS);
    let mut pre = vec![0.0; s * h];
    pre[..h].copy_from_slice(params.value(CLS));
    matmul_acc(input, params.value(W_E), &mut pre[h..], m, d, h);
    add_row_bias(&mut pre[h..], params.value(B_E));
    for (v, p) in pre.iter_mut().zip(&pos[..s * h]) {
        *v += p;
    }
    let (mut e, ln) = layer_norm_rows(&pre, h, params.value(EMB_G), params.value(EMB_B), LN_EPS);
    let drop = dropout_mask(e.len(), cfg.dropout_rate, train, rng);
    apply_mask(&mut e, &drop);
    (
        e,
        EmbedCache {
            input: input.to_vec(),
            ln,
            drop,
        },
    )
}

fn affine(x: &[f64], w: &[f64], b: &[f64], rows: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * n];
    matmul_acc(x, w, &mut out, rows, k, n);
    add_row_bias(&mut out, b);
    out
}

struct AttnOut {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    attn_drop: Option<Vec<f64>>,
    ln1: LayerNormCache,
}

fn attention_block(
    params: &ModelParams,
    l: usize,
    x_in: &[f64],
    s: usize,
    train: bool,
    rng: &mut SeededRng,
) -> (Vec<f64>, AttnOut) {
    let cfg = params.config();
    let (h, heads) = (cfg.hidden, cfg.heads);
    let dk = cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let base = ModelParams::layer_base(l);
    let p = |slot: usize| params.value(base + slot);

    let q = affine(x_in, p(WQ), p(BQ), s, h, h);
    let mut k = vec![0.0; s * h];
    matmul_acc(x_in, p(WK), &mut k, s, h, h);
    let v = affine(x_in, p(WV), p(BV), s, h, h);

    let mut probs = vec![0.0; heads * s * s];
    let mut ctx = vec![0.0; s * h];
    for hd in 0..heads {
        let off = hd * dk;
        let ph = &mut probs[hd * s * s..(hd + 1) * s * s];
        for i in 0..s {
            let qi = &q[i * h + off..i * h + off + dk];
            let row = &mut ph[i * s..(i + 1) * s];
            for (j, r) in row.iter_mut().enumerate() {
                *r = scale * dot(qi, &k[j * h + off..j * h + off + dk]);
            }
            softmax_in_place(row);
            let ci = &mut ctx[i * h + off..i * h + off + dk];
            for (j, &pij) in row.iter().enumerate() {
                let vj = &v[j * h + off..j * h + off + dk];
                for (c, vv) in ci.iter_mut().zip(vj) {
                    *c += pij * vv;
                }
            }
        }
    }

    let mut attn = affine(&ctx, p(WO), p(BO), s, h, h);
    let attn_drop = dropout_mask(attn.len(), cfg.dropout_rate, train, rng);
    apply_mask(&mut attn, &attn_drop);
    for (a, x) in attn.iter_mut().zip(x_in) {
        *a += x;
    }
    let (x1, ln1) = layer_norm_rows(&attn, h, p(LN1_G), p(LN1_B), LN_EPS);
    (
        x1,
        AttnOut {
            q,
            k,
            v,
            probs,
            ctx,
            attn_drop,
            ln1,
        },
    )
}

struct FfnOut {
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    ff_drop: Option<Vec<f64>>,
    ff_sum: Vec<f64>,
    ln2: LayerNormCache,
}

fn ffn_block(
    params: &ModelParams,
    l: usize,
    x1: &[f64],
    s: usize,
    train: bool,
    rng: &mut SeededRng,
) -> (Vec<f64>, FfnOut) {
    let cfg = params.config();
    let (h, f) = (cfg.hidden, cfg.ff_dim);
    let base = ModelParams::layer_base(l);
    let p = |slot: usize| params.value(base + slot);

    let ff_pre = affine(x1, p(W1), p(B1), s, h, f);
    let ff_act: Vec<f64> = ff_pre.iter().map(|&x| gelu_scalar(x)).collect();
    let mut ff_out = affine(&ff_act, p(W2), p(B2), s, f, h);
    let ff_drop = dropout_mask(ff_out.len(), cfg.dropout_rate, train, rng);
    apply_mask(&mut ff_out, &ff_drop);
    for (o, x) in ff_out.iter_mut().zip(x1) {
        *o += x;
    }
    let (x2, ln2) = layer_norm_rows(&ff_out, h, p(LN2_G), p(LN2_B), LN_EPS);
    (
        x2,
        FfnOut {
            ff_pre,
            ff_act,
            ff_drop,
            ff_sum: ff_out,
            ln2,
        },
    )
}

fn layer_forward(
    params: &ModelParams,
    l: usize,
    x_in: Vec<f64>,
    s: usize,
    train: bool,
    rng: &mut SeededRng,
) -> (Vec<f64>, LayerCache) {
    let (x1, a) = attention_block(params, l, &x_in, s, train, rng);
    let (x2, f) = ffn_block(params, l, &x1, s, train, rng);
    (
        x2,
        LayerCache {
            x_in,
            q: a.q,
            k: a.k,
            v: a.v,
            probs: a.probs,
            ctx: a.ctx,
            attn_drop: a.attn_drop,
            ln1: a.ln1,
            x1,
            ff_pre: f.ff_pre,
            ff_act: f.ff_act,
            ff_drop: f.ff_drop,
            ff_sum: f.ff_sum,
            ln2: f.ln2,
        },
    )
}

fn head_forward(params: &ModelParams, hidden: &[f64], m: usize) -> Vec<f64> {
    let cfg = params.config();
    let (d, h) = (cfg.channels, cfg.hidden);
    let hb = params.head_base();
    affine(&hidden[h..], params.value(hb), params.value(hb + 1), m, h, d)
}

/// Full forward pass over one `M×D` channel matrix: embedding with `[CLS]`
/// at position 0, the encoder stack, and the reconstruction head.
pub fn forward(
    params: &ModelParams,
    channels: &Tensor,
    train_mode: bool,
    rng: &mut SeededRng,
) -> Result<Forward> {
    let m = check_channels(params, channels)?;
    let s = m + 1;
    let (mut x, embed) = embed_forward(params, channels.data(), m, train_mode, rng);
    let mut layers = Vec::with_capacity(params.config().layers);
    for l in 0..params.config().layers {
        let (next, cache) = layer_forward(params, l, x, s, train_mode, rng);
        layers.push(cache);
        x = next;
    }
    let recon = head_forward(params, &x, m);
    Ok(Forward {
        steps: m,
        train_mode,
        embed,
        layers,
        hidden: x,
        recon,
    })
}

impl Forward {
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Reconstructed `M×D` channels.
    pub fn reconstruction_data(&self) -> &[f64] {
        &self.recon
    }

    pub fn reconstruction(&self, channels: usize) -> Tensor {
        Tensor::matrix(self.steps, channels, self.recon.clone()).expect("shape")
    }

    /// Final hidden states, `(M+1)×H`, `[CLS]` in row 0.
    pub fn hidden_data(&self) -> &[f64] {
        &self.hidden
    }

    pub fn hidden(&self, width: usize) -> Tensor {
        Tensor::matrix(self.steps + 1, width, self.hidden.clone()).expect("shape")
    }

    /// Attention probabilities of `layer`, laid out `heads × S × S`.
    pub fn attention(&self, layer: usize) -> &[f64] {
        &self.layers[layer].probs
    }

    /// Reconstruction after the parameter at layout index `changed` has been
    /// modified in `params`, recomputing only the blocks downstream of it.
    /// Reconstruction after entry `entry` of parameter `changed` was edited,
    /// recomputing only what depends on it.
    ///
    /// Agrees with a fresh evaluation-mode [`forward`] up to rounding.
    ///
    /// # Panics
    /// If this pass ran in training mode (dropout draws cannot be replayed).
    pub fn reconstruct_after_change(
        &self,
        params: &ModelParams,
        changed: usize,
        entry: usize,
    ) -> Vec<f64> {
        assert!(!self.train_mode, "incremental recompute needs an eval-mode pass");
        let cfg = params.config();
        let s = self.steps + 1;
        let mut rng = SeededRng::new(0);
        let head = params.head_base();
        let (mut x, first_layer) = if changed >= head {
            return head_forward(params, &self.hidden, self.steps);
        } else if changed < EMBED_SLOTS {
            let (e, _) = embed_forward(params, &self.embed.input, self.steps, false, &mut rng);
            (e, 0)
        } else {
            let l = (changed - EMBED_SLOTS) / LAYER_SLOTS;
            let slot = (changed - EMBED_SLOTS) % LAYER_SLOTS;
            let x2 = if slot < W1 {
                let x1 = attention_block(params, l, &self.layers[l].x_in, s, false, &mut rng).0;
                ffn_block(params, l, &x1, s, false, &mut rng).0
            } else {
                self.ffn_after_change(params, l, slot, entry)
            };
            (x2, l + 1)
        };
        for l in first_layer..cfg.layers {
            x = layer_forward(params, l, x, s, false, &mut rng).0;
        }
        head_forward(params, &x, self.steps)
    }

    /// Output of layer `l` when only entry `entry` of one feed-forward
    /// parameter moved: a single column of the inner or outer projection.
    fn ffn_after_change(&self, params: &ModelParams, l: usize, slot: usize, entry: usize) -> Vec<f64> {
        let cfg = params.config();
        let (h, f) = (cfg.hidden, cfg.ff_dim);
        let s = self.steps + 1;
        let c = &self.layers[l];
        let base = ModelParams::layer_base(l);
        let p = |slot: usize| params.value(base + slot);
        let (w1, b1, w2, b2) = (p(W1), p(B1), p(W2), p(B2));
        let mut sum = c.ff_sum.clone();
        match slot {
            W1 | B1 => {
                let j = if slot == W1 { entry % f } else { entry };
                let w2_row = &w2[j * h..(j + 1) * h];
                for r in 0..s {
                    let x1 = &c.x1[r * h..(r + 1) * h];
                    let pre = b1[j] + (0..h).map(|i| x1[i] * w1[i * f + j]).sum::<f64>();
                    let delta = gelu_scalar(pre) - c.ff_act[r * f + j];
                    for (o, w) in sum[r * h..(r + 1) * h].iter_mut().zip(w2_row) {
                        *o += delta * w;
                    }
                }
            }
            W2 | B2 => {
                let k = if slot == W2 { entry % h } else { entry };
                for r in 0..s {
                    let act = &c.ff_act[r * f..(r + 1) * f];
                    let out = b2[k] + (0..f).map(|j| act[j] * w2[j * h + k]).sum::<f64>();
                    sum[r * h + k] = c.x1[r * h + k] + out;
                }
            }
            _ => {}
        }
        layer_norm_rows(&sum, h, p(LN2_G), p(LN2_B), LN_EPS).0
    }

    /// Gradients of a scalar loss given its derivative w.r.t. the
    /// reconstruction (`M×D`).
    pub fn backward(&self, params: &ModelParams, d_recon: &[f64]) -> Grads {
        let cfg = params.config();
        let (d, h, m) = (cfg.channels, cfg.hidden, self.steps);
        let mut grads = zero_grads(params);
        let hb = params.head_base();
        let mut d_hidden = vec![0.0; (m + 1) * h];
        matmul_tn_acc(&self.hidden[h..], d_recon, grads[hb].data_mut(), m, h, d);
        col_sums_acc(d_recon, grads[hb + 1].data_mut());
        matmul_nt_acc(d_recon, params.value(hb), &mut d_hidden[h..], m, d, h);
        self.backward_encoder(params, d_hidden, &mut grads);
        grads
    }

    /// Gradients of a scalar loss given its derivative w.r.t. the final hidden
    /// states (`(M+1)×H`). The head receives no gradient.
    pub fn backward_hidden(&self, params: &ModelParams, d_hidden: &[f64]) -> Grads {
        let mut grads = zero_grads(params);
        self.backward_encoder(params, d_hidden.to_vec(), &mut grads);
        grads
    }

    fn backward_encoder(&self, params: &ModelParams, mut dx: Vec<f64>, grads: &mut Grads) {
        for l in (0..self.layers.len()).rev() {
            dx = layer_backward(params, l, &self.layers[l], &dx, grads);
        }
        embed_backward(params, &self.embed, self.steps, &dx, grads);
    }
}

fn zero_grads(params: &ModelParams) -> Grads {
    params
        .parameters()
        .iter()
        .map(|p| Tensor::zeros(p.value.shape()))
        .collect()
}

fn two_mut(g: &mut Grads, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a < b);
    let (lo, hi) = g.split_at_mut(b);
    (lo[a].data_mut(), hi[0].data_mut())
}

fn layer_backward(
    params: &ModelParams,
    l: usize,
    c: &LayerCache,
    dx2: &[f64],
    grads: &mut Grads,
) -> Vec<f64> {
    let cfg = params.config();
    let (h, f, heads) = (cfg.hidden, cfg.ff_dim, cfg.heads);
    let dk = cfg.head_dim();
    let s = dx2.len() / h;
    let scale = 1.0 / (dk as f64).sqrt();
    let base = ModelParams::layer_base(l);
    let p = |slot: usize| params.value(base + slot);

    // Feed-forward block.
    let mut dr2 = {
        let (dg, db) = two_mut(grads, base + LN2_G, base + LN2_B);
        layer_norm_rows_backward(dx2, &c.ln2, p(LN2_G), dg, db)
    };
    let mut dx1 = dr2.clone();
    apply_mask(&mut dr2, &c.ff_drop);
    let dff_out = dr2;
    matmul_tn_acc(&c.ff_act, &dff_out, grads[base + W2].data_mut(), s, f, h);
    col_sums_acc(&dff_out, grads[base + B2].data_mut());
    let mut dff = vec![0.0; s * f];
    matmul_nt_acc(&dff_out, p(W2), &mut dff, s, h, f);
    for (g, &x) in dff.iter_mut().zip(&c.ff_pre) {
        *g *= gelu_grad(x);
    }
    matmul_tn_acc(&c.x1, &dff, grads[base + W1].data_mut(), s, h, f);
    col_sums_acc(&dff, grads[base + B1].data_mut());
    matmul_nt_acc(&dff, p(W1), &mut dx1, s, f, h);

    // Attention block.
    let mut dr1 = {
        let (dg, db) = two_mut(grads, base + LN1_G, base + LN1_B);
        layer_norm_rows_backward(&dx1, &c.ln1, p(LN1_G), dg, db)
    };
    let mut dx = dr1.clone();
    apply_mask(&mut dr1, &c.attn_drop);
    let dattn = dr1;
    matmul_tn_acc(&c.ctx, &dattn, grads[base + WO].data_mut(), s, h, h);
    col_sums_acc(&dattn, grads[base + BO].data_mut());
    let mut dctx = vec![0.0; s * h];
    matmul_nt_acc(&dattn, p(WO), &mut dctx, s, h, h);

    let mut dq = vec![0.0; s * h];
    let mut dk_ = vec![0.0; s * h];
    let mut dv = vec![0.0; s * h];
    let mut dp = vec![0.0; s * s];
    for hd in 0..heads {
        let off = hd * dk;
        let ph = &c.probs[hd * s * s..(hd + 1) * s * s];
        for i in 0..s {
            let dci = &dctx[i * h + off..i * h + off + dk];
            for j in 0..s {
                let vj = &c.v[j * h + off..j * h + off + dk];
                dp[i * s + j] = dot(dci, vj);
                let pij = ph[i * s + j];
                let dvj = &mut dv[j * h + off..j * h + off + dk];
                for (g, x) in dvj.iter_mut().zip(dci) {
                    *g += pij * x;
                }
            }
        }
        let ds = softmax_rows_backward(ph, &dp, s);
        for i in 0..s {
            for j in 0..s {
                let g = scale * ds[i * s + j];
                if g == 0.0 {
                    continue;
                }
                for t in 0..dk {
                    dq[i * h + off + t] += g * c.k[j * h + off + t];
                    dk_[j * h + off + t] += g * c.q[i * h + off + t];
                }
            }
        }
    }
    for (dproj, w, b) in [(&dq, WQ, Some(BQ)), (&dk_, WK, None), (&dv, WV, Some(BV))] {
        matmul_tn_acc(&c.x_in, dproj, grads[base + w].data_mut(), s, h, h);
        if let Some(b) = b {
            col_sums_acc(dproj, grads[base + b].data_mut());
        }
        matmul_nt_acc(dproj, p(w), &mut dx, s, h, h);
    }
    dx
}

fn embed_backward(params: &ModelParams, c: &EmbedCache, m: usize, de: &[f64], grads: &mut Grads) {
    let cfg = params.config();
    let (d, h) = (cfg.channels, cfg.hidden);
    let mut de = de.to_vec();
    apply_mask(&mut de, &c.drop);
    let dpre = {
        let (dg, db) = two_mut(grads, EMB_G, EMB_B);
        layer_norm_rows_backward(&de, &c.ln, params.value(EMB_G), dg, db)
    };
    let dpos = grads[POS].data_mut();
    for (g, x) in dpos.iter_mut().zip(&dpre) {
        *g += x;
    }
    for (g, x) in grads[CLS].data_mut().iter_mut().zip(&dpre[..h]) {
        *g += x;
    }
    matmul_tn_acc(&c.input, &dpre[h..], grads[W_E].data_mut(), m, d, h);
    col_sums_acc(&dpre[h..], grads[B_E].data_mut());
}

/// Embedding stage only: `(M+1)×H`, `[CLS]` in row 0.
pub fn embed(
    params: &ModelParams,
    channels: &Tensor,
    train_mode: bool,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    let m = check_channels(params, channels)?;
    let (e, _) = embed_forward(params, channels.data(), m, train_mode, rng);
    Tensor::matrix(m + 1, params.config().hidden, e)
}

/// Encoder stack only, applied to an `(S)×H` embedding.
pub fn encode(
    params: &ModelParams,
    embedded: &Tensor,
    train_mode: bool,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    let h = params.config().hidden;
    if embedded.rank() != 2 || embedded.cols() != h || embedded.rows() > params.config().max_seq_len
    {
        return Err(Error::shape("encode", embedded.shape(), &[embedded.rows(), h]));
    }
    let s = embedded.rows();
    let mut x = embedded.data().to_vec();
    for l in 0..params.config().layers {
        x = layer_forward(params, l, x, s, train_mode, rng).0;
    }
    let out = Tensor::matrix(s, h, x)?;
    out.ensure_finite("encoder output")?;
    Ok(out)
}

/// Reconstruction head over the data rows of `hidden` (row 0 is `[CLS]` and
/// is skipped).
pub fn reconstruct(params: &ModelParams, hidden: &Tensor) -> Result<Tensor> {
    let cfg = params.config();
    if hidden.rank() != 2 || hidden.cols() != cfg.hidden || hidden.rows() < 2 {
        return Err(Error::shape("reconstruct", hidden.shape(), &[0, cfg.hidden]));
    }
    let m = hidden.rows() - 1;
    Tensor::matrix(m, cfg.channels, head_forward(params, hidden.data(), m))
}

/// Evaluation-mode `[CLS]` output for one snippet.
pub fn cls_embedding(params: &ModelParams, channels: &Tensor) -> Result<Vec<f64>> {
    // Evaluation mode never draws from the generator.
    let mut rng = SeededRng::new(0);
    let fwd = forward(params, channels, false, &mut rng)?;
    let h = params.config().hidden;
    let v = fwd.hidden[..h].to_vec();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("[CLS] embedding".into()));
    }
    Ok(v)
}

/// [`cls_embedding`] for many snippets, evaluated in parallel; output order
/// follows input order.
pub fn cls_embeddings(params: &ModelParams, channels: &[&Tensor]) -> Result<Vec<Vec<f64>>> {
    channels
        .par_iter()
        .map(|c| cls_embedding(params, c))
        .collect()
}
