//! Encoder forward pass, MLM loss and its hand-written backward pass.
//!
//! Sequences are packed row-wise: every token of every sequence is one row
//! of an `N × hidden` activation matrix, so the dense layers run as single
//! matrix products. Attention runs per sequence and never mixes sequences.

use std::ops::Range;

use rand::Rng;

use super::ops::{
    add_in_place, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward,
    matmul, LnCache, Scalar,
};
use super::{Index, MlmError, TransformerParams};
use crate::seed::GameRng;
use crate::tokenizer::{tokenize, Vocab, MASK_ID};

/// One prediction target: position `pos` of sequence `seq` should be `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskedLabel {
    pub seq: usize,
    pub pos: usize,
    pub target: u32,
}

pub(crate) struct Packed {
    starts: Vec<usize>,
    lens: Vec<usize>,
    prob_offsets: Vec<usize>,
    ids: Vec<u32>,
    positions: Vec<usize>,
    key_valid: Vec<bool>,
    rows: usize,
}

fn pack<T: Scalar>(
    params: &TransformerParams<T>,
    seqs: &[Vec<u32>],
    key_mask: Option<&[Vec<bool>]>,
) -> Result<Packed, MlmError> {
    let config = params.config();
    if seqs.is_empty() {
        return Err(MlmError::Empty("batch has no sequences".into()));
    }
    if let Some(mask) = key_mask {
        if mask.len() != seqs.len() || mask.iter().zip(seqs).any(|(m, s)| m.len() != s.len()) {
            return Err(MlmError::Config(
                "attention mask shape differs from the batch".into(),
            ));
        }
    }
    let mut p = Packed {
        starts: Vec::with_capacity(seqs.len()),
        lens: Vec::with_capacity(seqs.len()),
        prob_offsets: Vec::with_capacity(seqs.len()),
        ids: Vec::new(),
        positions: Vec::new(),
        key_valid: Vec::new(),
        rows: 0,
    };
    let mut prob_total = 0;
    for (s, seq) in seqs.iter().enumerate() {
        if seq.is_empty() {
            return Err(MlmError::Empty(format!("sequence {s} is empty")));
        }
        if seq.len() > config.max_seq {
            return Err(MlmError::TooLong {
                len: seq.len(),
                max: config.max_seq,
            });
        }
        if let Some(&id) = seq.iter().find(|&&id| id as usize >= config.vocab) {
            return Err(MlmError::BadToken {
                id,
                vocab: config.vocab,
            });
        }
        let valid: Vec<bool> = match key_mask {
            Some(m) => m[s].clone(),
            None => vec![true; seq.len()],
        };
        if !valid.iter().any(|&v| v) {
            return Err(MlmError::Empty(format!("sequence {s} is entirely padding")));
        }
        p.starts.push(p.rows);
        p.lens.push(seq.len());
        p.prob_offsets.push(prob_total);
        prob_total += config.heads * seq.len() * seq.len();
        p.ids.extend_from_slice(seq);
        p.positions.extend(0..seq.len());
        p.key_valid.extend(valid);
        p.rows += seq.len();
    }
    Ok(p)
}

fn pair_mut<T>(buf: &mut [T], a: Range<usize>, b: Range<usize>) -> (&mut [T], &mut [T]) {
    assert!(a.end <= b.start || b.end <= a.start, "overlapping tensors");
    if a.start < b.start {
        let (lo, hi) = buf.split_at_mut(b.start);
        (&mut lo[a], &mut hi[..b.len()])
    } else {
        let (lo, hi) = buf.split_at_mut(a.start);
        (&mut hi[..a.len()], &mut lo[b])
    }
}

/// Inverted-dropout multipliers, or `None` when dropout is inactive.
fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut Option<&mut GameRng>) -> Option<Vec<T>> {
    let rng = rng.as_deref_mut()?;
    if p <= 0.0 {
        return None;
    }
    let keep = T::of(1.0 / (1.0 - p));
    Some(
        (0..len)
            .map(|_| if rng.gen_bool(p) { T::zero() } else { keep })
            .collect(),
    )
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v = *v * k;
        }
    }
}

struct LayerCache<T> {
    x_in: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    drop_attn: Option<Vec<T>>,
    ln1: LnCache<T>,
    x1: Vec<T>,
    ff_pre: Vec<T>,
    ff_act: Vec<T>,
    drop_ff: Option<Vec<T>>,
    ln2: LnCache<T>,
}

struct EncoderCache<T> {
    emb_ln: LnCache<T>,
    drop_emb: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
}

fn attention_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    p: &Packed,
    heads: usize,
    hidden: usize,
) -> (Vec<T>, Vec<T>) {
    let dh = hidden / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let total: usize = p.lens.iter().map(|l| heads * l * l).sum();
    let mut probs = vec![T::zero(); total];
    let mut ctx = vec![T::zero(); p.rows * hidden];
    for s in 0..p.starts.len() {
        let (a, len) = (p.starts[s], p.lens[s]);
        for h in 0..heads {
            let base = p.prob_offsets[s] + h * len * len;
            let hc = h * dh;
            for i in 0..len {
                let qi = &q[(a + i) * hidden + hc..][..dh];
                let row = &mut probs[base + i * len..base + (i + 1) * len];
                let mut max = T::neg_infinity();
                for j in 0..len {
                    if p.key_valid[a + j] {
                        let kj = &k[(a + j) * hidden + hc..][..dh];
                        let dot = qi
                            .iter()
                            .zip(kj)
                            .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                        row[j] = dot * scale;
                        max = max.max(row[j]);
                    }
                }
                let mut sum = T::zero();
                for j in 0..len {
                    if p.key_valid[a + j] {
                        row[j] = (row[j] - max).exp();
                        sum = sum + row[j];
                    } else {
                        row[j] = T::zero();
                    }
                }
                for x in row.iter_mut() {
                    *x = *x / sum;
                }
                let out = &mut ctx[(a + i) * hidden + hc..][..dh];
                for j in 0..len {
                    let pij = row[j];
                    if pij != T::zero() {
                        let vj = &v[(a + j) * hidden + hc..][..dh];
                        for (o, &x) in out.iter_mut().zip(vj) {
                            *o = *o + pij * x;
                        }
                    }
                }
            }
        }
    }
    (ctx, probs)
}

#[allow(clippy::type_complexity)]
fn attention_backward<T: Scalar>(
    dctx: &[T],
    cache: &LayerCache<T>,
    p: &Packed,
    heads: usize,
    hidden: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = hidden / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut dp = Vec::new();
    for s in 0..p.starts.len() {
        let (a, len) = (p.starts[s], p.lens[s]);
        dp.resize(len, T::zero());
        for h in 0..heads {
            let base = p.prob_offsets[s] + h * len * len;
            let hc = h * dh;
            for i in 0..len {
                let row = &cache.probs[base + i * len..base + (i + 1) * len];
                let gi = &dctx[(a + i) * hidden + hc..][..dh];
                let mut weighted = T::zero();
                for j in 0..len {
                    if !p.key_valid[a + j] {
                        dp[j] = T::zero();
                        continue;
                    }
                    let vj = &v[(a + j) * hidden + hc..][..dh];
                    dp[j] = gi
                        .iter()
                        .zip(vj)
                        .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                    weighted = weighted + row[j] * dp[j];
                    let dvj = &mut dv[(a + j) * hidden + hc..][..dh];
                    for (d, &g) in dvj.iter_mut().zip(gi) {
                        *d = *d + row[j] * g;
                    }
                }
                let qi_off = (a + i) * hidden + hc;
                for j in 0..len {
                    if !p.key_valid[a + j] {
                        continue;
                    }
                    let ds = row[j] * (dp[j] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    let kj_off = (a + j) * hidden + hc;
                    for d in 0..dh {
                        dq[qi_off + d] = dq[qi_off + d] + ds * k[kj_off + d];
                        dk[kj_off + d] = dk[kj_off + d] + ds * q[qi_off + d];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

fn encode<T: Scalar>(
    params: &TransformerParams<T>,
    idx: &Index,
    p: &Packed,
    mut rng: Option<&mut GameRng>,
) -> (Vec<T>, EncoderCache<T>) {
    let c = params.config();
    let (h, f, n) = (c.hidden, c.feed_forward, p.rows);
    let w = params.data();
    let tok = &w[idx.tok.clone()];
    let pos = &w[idx.pos.clone()];
    let mut x = vec![T::zero(); n * h];
    for r in 0..n {
        let t = &tok[p.ids[r] as usize * h..][..h];
        let q = &pos[p.positions[r] * h..][..h];
        for j in 0..h {
            x[r * h + j] = t[j] + q[j];
        }
    }
    let (mut x, emb_ln) = layer_norm(&x, &w[idx.emb_g.clone()], &w[idx.emb_b.clone()], h);
    let drop_emb = dropout_mask(x.len(), c.dropout, &mut rng);
    apply_mask(&mut x, &drop_emb);
    let mut layers = Vec::with_capacity(c.layers);
    for li in &idx.layers {
        let qm = linear(&x, &w[li.wq.clone()], &w[li.bq.clone()], n, h, h);
        let km = linear(&x, &w[li.wk.clone()], &w[li.bk.clone()], n, h, h);
        let vm = linear(&x, &w[li.wv.clone()], &w[li.bv.clone()], n, h, h);
        let (ctx, probs) = attention_forward(&qm, &km, &vm, p, c.heads, h);
        let mut attn = linear(&ctx, &w[li.wo.clone()], &w[li.bo.clone()], n, h, h);
        let drop_attn = dropout_mask(attn.len(), c.dropout, &mut rng);
        apply_mask(&mut attn, &drop_attn);
        add_in_place(&mut attn, &x);
        let (x1, ln1) = layer_norm(&attn, &w[li.ln1_g.clone()], &w[li.ln1_b.clone()], h);
        let ff_pre = linear(&x1, &w[li.w1.clone()], &w[li.b1.clone()], n, h, f);
        let ff_act: Vec<T> = ff_pre.iter().map(|&z| gelu(z)).collect();
        let mut ff = linear(&ff_act, &w[li.w2.clone()], &w[li.b2.clone()], n, f, h);
        let drop_ff = dropout_mask(ff.len(), c.dropout, &mut rng);
        apply_mask(&mut ff, &drop_ff);
        add_in_place(&mut ff, &x1);
        let (x2, ln2) = layer_norm(&ff, &w[li.ln2_g.clone()], &w[li.ln2_b.clone()], h);
        layers.push(LayerCache {
            x_in: std::mem::replace(&mut x, x2),
            q: qm,
            k: km,
            v: vm,
            probs,
            ctx,
            drop_attn,
            ln1,
            x1,
            ff_pre,
            ff_act,
            drop_ff,
            ln2,
        });
    }
    (
        x,
        EncoderCache {
            emb_ln,
            drop_emb,
            layers,
        },
    )
}

fn encode_backward<T: Scalar>(
    params: &TransformerParams<T>,
    idx: &Index,
    p: &Packed,
    cache: &EncoderCache<T>,
    mut dx: Vec<T>,
    grad: &mut [T],
) {
    let c = params.config();
    let (h, f, n) = (c.hidden, c.feed_forward, p.rows);
    let w = params.data();
    for (li, lc) in idx.layers.iter().zip(&cache.layers).rev() {
        let (dg, db) = pair_mut(grad, li.ln2_g.clone(), li.ln2_b.clone());
        let dsum2 = layer_norm_backward(&dx, &lc.ln2, &w[li.ln2_g.clone()], dg, db, h);
        let mut dff = dsum2.clone();
        apply_mask(&mut dff, &lc.drop_ff);
        let (dw, db) = pair_mut(grad, li.w2.clone(), li.b2.clone());
        let mut dact = linear_backward(&lc.ff_act, &w[li.w2.clone()], &dff, dw, db, n, f, h);
        for (d, &z) in dact.iter_mut().zip(&lc.ff_pre) {
            *d = *d * gelu_grad(z);
        }
        let (dw, db) = pair_mut(grad, li.w1.clone(), li.b1.clone());
        let mut dx1 = linear_backward(&lc.x1, &w[li.w1.clone()], &dact, dw, db, n, h, f);
        add_in_place(&mut dx1, &dsum2);
        let (dg, db) = pair_mut(grad, li.ln1_g.clone(), li.ln1_b.clone());
        let dsum1 = layer_norm_backward(&dx1, &lc.ln1, &w[li.ln1_g.clone()], dg, db, h);
        let mut dattn = dsum1.clone();
        apply_mask(&mut dattn, &lc.drop_attn);
        let (dw, db) = pair_mut(grad, li.wo.clone(), li.bo.clone());
        let dctx = linear_backward(&lc.ctx, &w[li.wo.clone()], &dattn, dw, db, n, h, h);
        let (dq, dk, dv) = attention_backward(&dctx, lc, p, c.heads, h);
        let mut dx_in = dsum1;
        for (d, wr, br) in [
            (&dq, li.wq.clone(), li.bq.clone()),
            (&dk, li.wk.clone(), li.bk.clone()),
            (&dv, li.wv.clone(), li.bv.clone()),
        ] {
            let (dw, db) = pair_mut(grad, wr.clone(), br);
            let part = linear_backward(&lc.x_in, &w[wr], d, dw, db, n, h, h);
            add_in_place(&mut dx_in, &part);
        }
        dx = dx_in;
    }
    apply_mask(&mut dx, &cache.drop_emb);
    let (dg, db) = pair_mut(grad, idx.emb_g.clone(), idx.emb_b.clone());
    let demb = layer_norm_backward(&dx, &cache.emb_ln, &w[idx.emb_g.clone()], dg, db, h);
    for r in 0..n {
        let t = idx.tok.start + p.ids[r] as usize * h;
        let q = idx.pos.start + p.positions[r] * h;
        for j in 0..h {
            grad[t + j] = grad[t + j] + demb[r * h + j];
            grad[q + j] = grad[q + j] + demb[r * h + j];
        }
    }
}

struct HeadCache<T> {
    rows: Vec<usize>,
    xs: Vec<T>,
    z: Vec<T>,
    ln: LnCache<T>,
    t: Vec<T>,
}

/// Vocabulary logits (`rows.len() × vocab`) for the selected encoder rows.
fn head_forward<T: Scalar>(
    params: &TransformerParams<T>,
    idx: &Index,
    x: &[T],
    rows: Vec<usize>,
) -> (Vec<T>, HeadCache<T>) {
    let c = params.config();
    let (h, v, m) = (c.hidden, c.vocab, rows.len());
    let w = params.data();
    let mut xs = Vec::with_capacity(m * h);
    for &r in &rows {
        xs.extend_from_slice(&x[r * h..(r + 1) * h]);
    }
    let z = linear(&xs, &w[idx.head_w.clone()], &w[idx.head_b.clone()], m, h, h);
    let g: Vec<T> = z.iter().map(|&a| gelu(a)).collect();
    let (t, ln) = layer_norm(&g, &w[idx.head_g.clone()], &w[idx.head_beta.clone()], h);
    let bias = &w[idx.out_bias.clone()];
    let mut logits = Vec::with_capacity(m * v);
    for _ in 0..m {
        logits.extend_from_slice(bias);
    }
    matmul(
        &t,
        false,
        &w[idx.tok.clone()],
        true,
        &mut logits,
        m,
        h,
        v,
        T::one(),
    );
    (logits, HeadCache { rows, xs, z, ln, t })
}

fn head_backward<T: Scalar>(
    params: &TransformerParams<T>,
    idx: &Index,
    cache: &HeadCache<T>,
    dlogits: &[T],
    grad: &mut [T],
    n_rows: usize,
) -> Vec<T> {
    let c = params.config();
    let (h, v, m) = (c.hidden, c.vocab, cache.rows.len());
    let w = params.data();
    matmul(
        dlogits,
        true,
        &cache.t,
        false,
        &mut grad[idx.tok.clone()],
        v,
        m,
        h,
        T::one(),
    );
    let ob = &mut grad[idx.out_bias.clone()];
    for r in 0..m {
        add_in_place(ob, &dlogits[r * v..(r + 1) * v]);
    }
    let mut dt = vec![T::zero(); m * h];
    matmul(
        dlogits,
        false,
        &w[idx.tok.clone()],
        false,
        &mut dt,
        m,
        v,
        h,
        T::zero(),
    );
    let (dg, db) = pair_mut(grad, idx.head_g.clone(), idx.head_beta.clone());
    let mut dz = layer_norm_backward(&dt, &cache.ln, &w[idx.head_g.clone()], dg, db, h);
    for (d, &z) in dz.iter_mut().zip(&cache.z) {
        *d = *d * gelu_grad(z);
    }
    let (dw, db) = pair_mut(grad, idx.head_w.clone(), idx.head_b.clone());
    let dxs = linear_backward(&cache.xs, &w[idx.head_w.clone()], &dz, dw, db, m, h, h);
    let mut dx = vec![T::zero(); n_rows * h];
    for (k, &r) in cache.rows.iter().enumerate() {
        add_in_place(&mut dx[r * h..(r + 1) * h], &dxs[k * h..(k + 1) * h]);
    }
    dx
}

/// Per-position vocabulary logits for each sequence, row-major
/// `len × vocab`. Keys with a `false` mask entry are excluded from attention.
pub fn forward<T: Scalar>(
    params: &TransformerParams<T>,
    seqs: &[Vec<u32>],
    key_mask: Option<&[Vec<bool>]>,
) -> Result<Vec<Vec<T>>, MlmError> {
    let p = pack(params, seqs, key_mask)?;
    let idx = params.index();
    let (x, _) = encode(params, &idx, &p, None);
    let (logits, _) = head_forward(params, &idx, &x, (0..p.rows).collect());
    let v = params.config().vocab;
    Ok(p.starts
        .iter()
        .zip(&p.lens)
        .map(|(&a, &len)| logits[a * v..(a + len) * v].to_vec())
        .collect())
}

fn label_rows(p: &Packed, labels: &[MaskedLabel], vocab: usize) -> Result<Vec<usize>, MlmError> {
    if labels.is_empty() {
        return Err(MlmError::Empty("no label positions".into()));
    }
    labels
        .iter()
        .map(|l| {
            if l.seq >= p.starts.len() || l.pos >= p.lens[l.seq] {
                return Err(MlmError::Config(format!("label {l:?} outside the batch")));
            }
            if l.target as usize >= vocab {
                return Err(MlmError::BadToken {
                    id: l.target,
                    vocab,
                });
            }
            Ok(p.starts[l.seq] + l.pos)
        })
        .collect()
}

/// Mean cross-entropy over label rows and its gradient w.r.t. the logits.
fn cross_entropy<T: Scalar>(logits: &[T], labels: &[MaskedLabel], vocab: usize) -> (f64, Vec<T>) {
    let m = labels.len();
    let inv_m = T::of(1.0 / m as f64);
    let mut dlogits = logits.to_vec();
    let mut loss = 0.0;
    for (r, l) in labels.iter().enumerate() {
        let row = &mut dlogits[r * vocab..(r + 1) * vocab];
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum = sum + *x;
        }
        let target = l.target as usize;
        loss += (sum.ln() + max - logits[r * vocab + target]).f64();
        for x in row.iter_mut() {
            *x = *x / sum * inv_m;
        }
        row[target] = row[target] - inv_m;
    }
    (loss / m as f64, dlogits)
}

/// Mean masked-token cross-entropy (no dropout).
pub fn mlm_loss<T: Scalar>(
    params: &TransformerParams<T>,
    seqs: &[Vec<u32>],
    labels: &[MaskedLabel],
) -> Result<f64, MlmError> {
    let p = pack(params, seqs, None)?;
    let vocab = params.config().vocab;
    let rows = label_rows(&p, labels, vocab)?;
    let idx = params.index();
    let (x, _) = encode(params, &idx, &p, None);
    let (logits, _) = head_forward(params, &idx, &x, rows);
    Ok(cross_entropy(&logits, labels, vocab).0)
}

/// Loss and gradient for every parameter, laid out like the parameter buffer.
/// Dropout is sampled from `rng` when given; without it the pass is
/// deterministic.
pub fn mlm_loss_and_grad<T: Scalar>(
    params: &TransformerParams<T>,
    seqs: &[Vec<u32>],
    labels: &[MaskedLabel],
    rng: Option<&mut GameRng>,
) -> Result<(f64, Vec<T>), MlmError> {
    let p = pack(params, seqs, None)?;
    let vocab = params.config().vocab;
    let rows = label_rows(&p, labels, vocab)?;
    let idx = params.index();
    let (x, cache) = encode(params, &idx, &p, rng);
    let (logits, head_cache) = head_forward(params, &idx, &x, rows);
    let (loss, dlogits) = cross_entropy(&logits, labels, vocab);
    let mut grad = vec![T::zero(); params.len()];
    let dx = head_backward(params, &idx, &head_cache, &dlogits, &mut grad, p.rows);
    encode_backward(params, &idx, &p, &cache, dx, &mut grad);
    Ok((loss, grad))
}

/// Softmax distribution (f64) at the single `[MASK]` of each sequence.
pub fn masked_distributions<T: Scalar>(
    params: &TransformerParams<T>,
    seqs: &[Vec<u32>],
) -> Result<Vec<Vec<f64>>, MlmError> {
    let p = pack(params, seqs, None)?;
    let mut rows = Vec::with_capacity(seqs.len());
    for (s, seq) in seqs.iter().enumerate() {
        let masks: Vec<usize> = (0..seq.len()).filter(|&i| seq[i] == MASK_ID).collect();
        if masks.len() != 1 {
            return Err(MlmError::MaskCount(masks.len()));
        }
        rows.push(p.starts[s] + masks[0]);
    }
    let idx = params.index();
    let (x, _) = encode(params, &idx, &p, None);
    let (logits, _) = head_forward(params, &idx, &x, rows);
    let v = params.config().vocab;
    Ok(logits
        .chunks(v)
        .map(|row| {
            let mut probs: Vec<f64> = row.iter().map(|x| x.f64()).collect();
            super::ops::softmax_in_place(&mut probs);
            probs
        })
        .collect())
}

/// Ranks every vocabulary token for the single `[MASK]` in `text`, most
/// probable first (ties by id).
pub fn fill_mask<T: Scalar>(
    params: &TransformerParams<T>,
    vocab: &Vocab,
    text: &str,
) -> Result<Vec<(String, f64)>, MlmError> {
    if vocab.len() != params.config().vocab {
        return Err(MlmError::Config(format!(
            "vocab has {} tokens but the model expects {}",
            vocab.len(),
            params.config().vocab
        )));
    }
    let ids = tokenize(vocab, text);
    let probs = masked_distributions(params, &[ids])?.remove(0);
    Ok(rank(&probs)
        .into_iter()
        .map(|(id, p)| (vocab.token(id).unwrap_or_default().to_string(), p))
        .collect())
}

/// Token ids sorted by descending probability, ties by ascending id.
pub fn rank(probs: &[f64]) -> Vec<(u32, f64)> {
    let mut ranked: Vec<(u32, f64)> = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| (i as u32, p))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}
