//! Backend contract and a small trainable encoder-decoder with exact
//! hand-written gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::{softmax, Scalar};

/// Per-step decoder logits and cross-attention of one forward pass.
pub struct BackendOutput<T, C> {
    /// `logits[i]`: scores over the generation vocabulary at step `i`.
    pub logits: Vec<Vec<T>>,
    /// `attention[h][i][k]`: head `h`, output step `i`, input position `k`.
    /// Rows are non-negative and sum to one.
    pub attention: Vec<Vec<Vec<T>>>,
    pub cache: C,
}

/// An encoder-decoder exposing logits and cross-attention, with parameters
/// stored in one flat slice owned by the caller.
pub trait Backend<T: Scalar>: Send + Sync {
    type Cache: Send;

    fn num_params(&self) -> usize;
    fn num_heads(&self) -> usize;
    /// Size of the generation vocabulary (length of each logits row).
    fn gen_size(&self) -> usize;
    fn init(&self, rng: &mut dyn rand::RngCore) -> Vec<T>;

    /// `src`: encoder input ids. `tgt_in`: decoder input ids, starting with
    /// the begin-of-sequence id; one output step per input id.
    fn forward(&self, params: &[T], src: &[usize], tgt_in: &[usize]) -> BackendOutput<T, Self::Cache>;

    /// Accumulates parameter gradients into `grads` given gradients of the
    /// loss with respect to every logit and to the attention rows of `head`.
    fn backward(
        &self,
        params: &[T],
        out: &BackendOutput<T, Self::Cache>,
        d_logits: &[Vec<T>],
        head: usize,
        d_attention: &[Vec<T>],
        grads: &mut [T],
    );
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub src_vocab: usize,
    /// Decoder input vocabulary (begin marker, copy marker, generation ids).
    pub tgt_vocab: usize,
    pub gen_size: usize,
    pub hidden: usize,
    pub max_src: usize,
    pub max_tgt: usize,
    /// Source id of the KB mask. When set and present in the input, the
    /// copy head normalizes over masked positions only.
    #[serde(default)]
    pub mask_id: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    emb_src: usize,
    pos_src: usize,
    w_enc: usize,
    b_enc: usize,
    w_ctx: usize,
    emb_tgt: usize,
    pos_tgt: usize,
    b_dec: usize,
    w_att: usize,
    w_copy: usize,
    w_out: usize,
    b_out: usize,
    end: usize,
}

impl Layout {
    fn new(c: &ToyConfig) -> Self {
        let d = c.hidden;
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let emb_src = take(c.src_vocab * d);
        let pos_src = take(c.max_src * d);
        let w_enc = take(d * d);
        let b_enc = take(d);
        let w_ctx = take(d * d);
        let emb_tgt = take(c.tgt_vocab * d);
        let pos_tgt = take(c.max_tgt * d);
        let b_dec = take(d);
        let w_att = take(d * d);
        let w_copy = take(2 * d * d);
        let w_out = take(c.gen_size * 2 * d);
        let b_out = take(c.gen_size);
        Self {
            emb_src,
            pos_src,
            w_enc,
            b_enc,
            w_ctx,
            emb_tgt,
            pos_tgt,
            b_dec,
            w_att,
            w_copy,
            w_out,
            b_out,
            end: off,
        }
    }
}

/// Single-layer encoder-decoder:
///
/// ```text
/// h_k   = tanh(W_enc (E[x_k] + P[k]) + b_enc)
/// c     = mean_k h_k
/// s_i   = tanh(W_ctx c + F[y_i] + Q[i] + b_dec)
/// a_i   = softmax_k(h_k . (W_att s_i) / sqrt(d))
/// g_i   = sum_k a_ik h_k
/// b_i   = softmax_k(h_k . (W_copy [s_i ; g_i]) / sqrt(d))
/// DEC_i = W_out [s_i ; g_i] + b_out
/// ```
///
/// Head 0 (`a`) feeds the decoder context; head 1 (`b`, the last head) is
/// read only by the copy layer. Its query sees the head-0 context so that
/// two questions reaching the same decoder state can still point at
/// different masked positions, and its softmax skips unmasked positions so
/// that copy mass cannot settle on a token that is never copied. Positions past the configured maxima reuse
/// the last position embedding.
#[derive(Debug, Clone, Copy)]
pub struct ToyBackend {
    config: ToyConfig,
    layout: Layout,
}

pub struct ToyCache<T> {
    src: Vec<usize>,
    tgt_in: Vec<usize>,
    e: Vec<Vec<T>>,
    h: Vec<Vec<T>>,
    c: Vec<T>,
    s: Vec<Vec<T>>,
    q: Vec<Vec<T>>,
    r: Vec<Vec<T>>,
    ctx: Vec<Vec<T>>,
}

fn matvec<T: Scalar>(w: &[T], rows: usize, cols: usize, x: &[T], out: &mut [T]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        out[r] = row.iter().zip(x).map(|(&a, &b)| a * b).sum();
    }
}

/// `out += W^T y`.
fn matvec_t_add<T: Scalar>(w: &[T], rows: usize, cols: usize, y: &[T], out: &mut [T]) {
    for r in 0..rows {
        let yr = y[r];
        if yr == T::zero() {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, &a) in out.iter_mut().zip(row) {
            *o += a * yr;
        }
    }
}

/// `G += y x^T`.
fn outer_add<T: Scalar>(g: &mut [T], rows: usize, cols: usize, y: &[T], x: &[T]) {
    for r in 0..rows {
        let yr = y[r];
        if yr == T::zero() {
            continue;
        }
        let row = &mut g[r * cols..(r + 1) * cols];
        for (o, &a) in row.iter_mut().zip(x) {
            *o += yr * a;
        }
    }
}

/// Softmax over the kept entries; the others get exactly zero.
fn masked_softmax<T: Scalar>(scores: &[T], keep: &Option<Vec<bool>>) -> Vec<T> {
    let Some(keep) = keep else {
        return if scores.is_empty() { Vec::new() } else { softmax(scores) };
    };
    let kept: Vec<T> = scores.iter().zip(keep).filter(|(_, &k)| k).map(|(&v, _)| v).collect();
    let mut p = softmax(&kept).into_iter();
    keep.iter().map(|&k| if k { p.next().unwrap() } else { T::zero() }).collect()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

impl ToyBackend {
    pub fn new(config: ToyConfig) -> Self {
        Self {
            layout: Layout::new(&config),
            config,
        }
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    fn src_pos(&self, k: usize) -> usize {
        k.min(self.config.max_src - 1)
    }

    fn tgt_pos(&self, i: usize) -> usize {
        i.min(self.config.max_tgt - 1)
    }

    fn scale<T: Scalar>(&self) -> T {
        T::lit(1.0 / (self.config.hidden as f64).sqrt())
    }

    /// Backpropagates `d_a` (gradient w.r.t. one attention row) through the
    /// softmax and the bilinear score `h_k . (W x) / sqrt(d)`, where `W`
    /// starts at offset `w` and `query = W x`.
    #[allow(clippy::too_many_arguments)]
    fn attention_backward<T: Scalar>(
        &self,
        params: &[T],
        cache: &ToyCache<T>,
        query: &[T],
        x: &[T],
        weights: &[T],
        d_a: &[T],
        w: usize,
        d_h: &mut [Vec<T>],
        d_x: &mut [T],
        grads: &mut [T],
        scale: T,
    ) {
        let d = self.config.hidden;
        let cols = x.len();
        let mean: T = weights.iter().zip(d_a).map(|(&a, &da)| a * da).sum();
        let mut d_q = vec![T::zero(); d];
        for k in 0..weights.len() {
            let d_score = weights[k] * (d_a[k] - mean) * scale;
            if d_score == T::zero() {
                continue;
            }
            for j in 0..d {
                d_h[k][j] += d_score * query[j];
                d_q[j] += d_score * cache.h[k][j];
            }
        }
        outer_add(&mut grads[w..w + d * cols], d, cols, &d_q, x);
        matvec_t_add(&params[w..w + d * cols], d, cols, &d_q, d_x);
    }
}

impl<T: Scalar> Backend<T> for ToyBackend {
    type Cache = ToyCache<T>;

    fn num_params(&self) -> usize {
        self.layout.end
    }

    fn num_heads(&self) -> usize {
        2
    }

    fn gen_size(&self) -> usize {
        self.config.gen_size
    }

    fn init(&self, rng: &mut dyn rand::RngCore) -> Vec<T> {
        let d = self.config.hidden;
        let l = &self.layout;
        let mut p = vec![T::zero(); l.end];
        let mut fill = |from: usize, to: usize, bound: f64| {
            for x in &mut p[from..to] {
                *x = T::lit(rng.gen_range(-bound..bound));
            }
        };
        let mat = (3.0 / d as f64).sqrt();
        fill(l.emb_src, l.w_enc, 0.5);
        fill(l.w_enc, l.b_enc, mat);
        fill(l.w_ctx, l.emb_tgt, mat);
        fill(l.emb_tgt, l.b_dec, 0.5);
        fill(l.w_att, l.w_out, mat);
        fill(l.w_out, l.b_out, (3.0 / (2 * d) as f64).sqrt());
        p
    }

    fn forward(&self, params: &[T], src: &[usize], tgt_in: &[usize]) -> BackendOutput<T, ToyCache<T>> {
        let c = &self.config;
        let l = &self.layout;
        let d = c.hidden;
        let w_enc = &params[l.w_enc..l.b_enc];
        let b_enc = &params[l.b_enc..l.w_ctx];
        let mut e = Vec::with_capacity(src.len());
        let mut h = Vec::with_capacity(src.len());
        let mut centroid = vec![T::zero(); d];
        for (k, &x) in src.iter().enumerate() {
            let emb = &params[l.emb_src + x * d..l.emb_src + (x + 1) * d];
            let pos = &params[l.pos_src + self.src_pos(k) * d..][..d];
            let ek: Vec<T> = emb.iter().zip(pos).map(|(&a, &b)| a + b).collect();
            let mut hk = vec![T::zero(); d];
            matvec(w_enc, d, d, &ek, &mut hk);
            for (v, &b) in hk.iter_mut().zip(b_enc) {
                *v = (*v + b).tanh();
            }
            for (cv, &v) in centroid.iter_mut().zip(&hk) {
                *cv += v;
            }
            e.push(ek);
            h.push(hk);
        }
        if !src.is_empty() {
            let n = T::lit(src.len() as f64);
            for v in &mut centroid {
                *v /= n;
            }
        }
        let mut base = vec![T::zero(); d];
        matvec(&params[l.w_ctx..l.emb_tgt], d, d, &centroid, &mut base);
        for (v, &b) in base.iter_mut().zip(&params[l.b_dec..l.w_att]) {
            *v += b;
        }
        let scale = self.scale::<T>();
        let w_att = &params[l.w_att..l.w_copy];
        let w_copy = &params[l.w_copy..l.w_out];
        let w_out = &params[l.w_out..l.b_out];
        let b_out = &params[l.b_out..l.end];
        let g = c.gen_size;
        let copy_mask: Option<Vec<bool>> = c.mask_id.and_then(|m| {
            let keep: Vec<bool> = src.iter().map(|&x| x == m).collect();
            keep.contains(&true).then_some(keep)
        });
        let mut s = Vec::with_capacity(tgt_in.len());
        let mut q = Vec::with_capacity(tgt_in.len());
        let mut r = Vec::with_capacity(tgt_in.len());
        let mut copy_att = Vec::with_capacity(tgt_in.len());
        let mut ctx = Vec::with_capacity(tgt_in.len());
        let mut att = Vec::with_capacity(tgt_in.len());
        let mut logits = Vec::with_capacity(tgt_in.len());
        for (i, &y) in tgt_in.iter().enumerate() {
            let emb = &params[l.emb_tgt + y * d..][..d];
            let pos = &params[l.pos_tgt + self.tgt_pos(i) * d..][..d];
            let si: Vec<T> = (0..d).map(|j| (base[j] + emb[j] + pos[j]).tanh()).collect();
            let mut qi = vec![T::zero(); d];
            matvec(w_att, d, d, &si, &mut qi);
            let scores: Vec<T> = h.iter().map(|hk| dot(hk, &qi) * scale).collect();
            let ai = if scores.is_empty() { Vec::new() } else { softmax(&scores) };
            let mut ci = vec![T::zero(); d];
            for (hk, &a) in h.iter().zip(&ai) {
                for (cv, &hv) in ci.iter_mut().zip(hk) {
                    *cv += a * hv;
                }
            }
            let joint: Vec<T> = si.iter().chain(&ci).copied().collect();
            let mut ri = vec![T::zero(); d];
            matvec(w_copy, d, 2 * d, &joint, &mut ri);
            let copy_scores: Vec<T> = h.iter().map(|hk| dot(hk, &ri) * scale).collect();
            copy_att.push(masked_softmax(&copy_scores, &copy_mask));
            r.push(ri);
            let mut zi = vec![T::zero(); g];
            matvec(w_out, g, 2 * d, &joint, &mut zi);
            for (z, &b) in zi.iter_mut().zip(b_out) {
                *z += b;
            }
            s.push(si);
            q.push(qi);
            ctx.push(ci);
            att.push(ai);
            logits.push(zi);
        }
        BackendOutput {
            logits,
            attention: vec![att, copy_att],
            cache: ToyCache {
                src: src.to_vec(),
                tgt_in: tgt_in.to_vec(),
                e,
                h,
                c: centroid,
                s,
                q,
                r,
                ctx,
            },
        }
    }

    fn backward(
        &self,
        params: &[T],
        out: &BackendOutput<T, ToyCache<T>>,
        d_logits: &[Vec<T>],
        head: usize,
        d_attention: &[Vec<T>],
        grads: &mut [T],
    ) {
        debug_assert!(head < 2);
        let c = &self.config;
        let l = &self.layout;
        let d = c.hidden;
        let g = c.gen_size;
        let cache = &out.cache;
        let att = &out.attention[0];
        let n = cache.h.len();
        let scale = self.scale::<T>();
        let mut d_h = vec![vec![T::zero(); d]; n];
        let mut d_c = vec![T::zero(); d];
        for i in 0..cache.tgt_in.len() {
            let dz = &d_logits[i];
            let si = &cache.s[i];
            let ci = &cache.ctx[i];
            let ai = &att[i];
            for (gb, &v) in grads[l.b_out..l.end].iter_mut().zip(dz) {
                *gb += v;
            }
            let joint: Vec<T> = si.iter().chain(ci).copied().collect();
            outer_add(&mut grads[l.w_out..l.b_out], g, 2 * d, dz, &joint);
            let mut d_joint = vec![T::zero(); 2 * d];
            matvec_t_add(&params[l.w_out..l.b_out], g, 2 * d, dz, &mut d_joint);
            let copy_row = d_attention.get(i);
            // head 1 reads [s_i ; g_i], so it goes first and adds to both
            if head == 1 {
                if let Some(row) = copy_row {
                    let bi = &out.attention[1][i];
                    self.attention_backward(
                        params, cache, &cache.r[i], &joint, bi, row, l.w_copy, &mut d_h, &mut d_joint, grads, scale,
                    );
                }
            }
            let (d_s_out, d_ctx) = d_joint.split_at(d);
            let mut d_s = d_s_out.to_vec();

            // head 0: through the context vector (and the copy layer if selected)
            let mut d_a = vec![T::zero(); n];
            for k in 0..n {
                d_a[k] = dot(&cache.h[k], d_ctx);
                let a = ai[k];
                for (dh, &v) in d_h[k].iter_mut().zip(d_ctx) {
                    *dh += a * v;
                }
            }
            if head == 0 {
                if let Some(row) = copy_row {
                    for (da, &v) in d_a.iter_mut().zip(row) {
                        *da += v;
                    }
                }
            }
            self.attention_backward(params, cache, &cache.q[i], si, ai, &d_a, l.w_att, &mut d_h, &mut d_s, grads, scale);

            let d_u: Vec<T> = d_s.iter().zip(si).map(|(&ds, &s)| ds * (T::one() - s * s)).collect();
            outer_add(&mut grads[l.w_ctx..l.emb_tgt], d, d, &d_u, &cache.c);
            matvec_t_add(&params[l.w_ctx..l.emb_tgt], d, d, &d_u, &mut d_c);
            let y = cache.tgt_in[i];
            let p = self.tgt_pos(i);
            for j in 0..d {
                grads[l.emb_tgt + y * d + j] += d_u[j];
                grads[l.pos_tgt + p * d + j] += d_u[j];
                grads[l.b_dec + j] += d_u[j];
            }
        }
        if n == 0 {
            return;
        }
        let inv_n = T::lit(1.0 / n as f64);
        for k in 0..n {
            let hk = &cache.h[k];
            let d_v: Vec<T> = (0..d)
                .map(|j| (d_h[k][j] + d_c[j] * inv_n) * (T::one() - hk[j] * hk[j]))
                .collect();
            outer_add(&mut grads[l.w_enc..l.b_enc], d, d, &d_v, &cache.e[k]);
            for j in 0..d {
                grads[l.b_enc + j] += d_v[j];
            }
            let mut d_e = vec![T::zero(); d];
            matvec_t_add(&params[l.w_enc..l.b_enc], d, d, &d_v, &mut d_e);
            let x = cache.src[k];
            let p = self.src_pos(k);
            for j in 0..d {
                grads[l.emb_src + x * d + j] += d_e[j];
                grads[l.pos_src + p * d + j] += d_e[j];
            }
        }
    }
}
