//! The five classification heads over a frozen `n_layers × hidden` stack.
//!
//! * `cnn-trans-enc`: three CNN[CLS] replicas produce Q, K and V for a first
//!   encoder layer; a second layer projects the vectorized attention output
//!   down to `outdim`; a softmax classifier follows.
//! * `trans-enc`: the same two layers with Q, K, V linearly projected from the
//!   stack.
//! * `cnn-cls`: one CNN[CLS] block, vectorized, into a softmax classifier.
//! * `kim-cnn`: three single-channel convolutions over the last layer.
//! * `softmax`: a linear softmax classifier over the last layer.
//!
//! Every forward returns class log-probabilities.

mod config;
mod params;

use alloc::format;
use alloc::vec::Vec;

use rand::RngCore;

pub use config::{ModelConfig, QkvMode, Variant, BANK_FILTERS, CNN_ROWS};
pub use params::{catalog, Bound, Group, Init, ParamSpec, ParameterStore, CNN_REPLICAS, KIM_MAPS, QKV_BANKS};

use crate::{Error, Result, Tape, Tensor, Var};

/// Training mode carries the dropout generator; evaluation mode is
/// deterministic.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut dyn RngCore),
}

impl Mode<'_> {
    fn dropout(&mut self, tape: &mut Tape<'_>, x: Var, ratio: f64) -> Result<Var> {
        match self {
            Mode::Eval => Ok(x),
            Mode::Train(rng) => tape.dropout(x, ratio, &mut **rng),
        }
    }
}

/// Intermediate handles of one CNN[CLS] block.
pub struct CnnClsTrace {
    /// `h`, `s`, `v` after tanh, each `4 × n`.
    pub maps: [Var; 3],
    /// The pooled maps, each `4 × d_model`.
    pub pooled: [Var; 3],
    /// `[h_p; s_p; v_p]` (after dropout in training mode).
    pub out: Var,
}

/// Number of stacks in a `(B·n_layers) × hidden` input.
fn batch_of(tape: &Tape<'_>, x: Var, cfg: &ModelConfig) -> Result<usize> {
    let shape = tape.shape(x);
    if shape.len() != 2 || shape[1] != cfg.hidden || shape[0] == 0 || !shape[0].is_multiple_of(cfg.n_layers) {
        return Err(Error::Dimension {
            op: "input stack",
            left: shape.to_vec(),
            right: alloc::vec![cfg.n_layers, cfg.hidden],
        });
    }
    Ok(shape[0] / cfg.n_layers)
}

/// One CNN[CLS] block over a single `n_layers × hidden` stack: three filter
/// banks, tanh, adaptive max pooling to `d_model`, row concatenation,
/// dropout.
pub fn cnn_cls_forward(
    tape: &mut Tape<'_>,
    p: &Bound<'_>,
    prefix: &str,
    cfg: &ModelConfig,
    x: Var,
    mode: &mut Mode<'_>,
) -> Result<CnnClsTrace> {
    if batch_of(tape, x, cfg)? != 1 {
        return Err(Error::Dimension {
            op: "cnn_cls",
            left: tape.shape(x).to_vec(),
            right: alloc::vec![cfg.n_layers, cfg.hidden],
        });
    }
    let mut maps = [x; 3];
    let mut pooled = [x; 3];
    for (i, bank) in QKV_BANKS.iter().enumerate() {
        let w = p.get(&format!("{prefix}.{bank}.w"));
        let b = p.get(&format!("{prefix}.{bank}.b"));
        let conv = match cfg.qkv_mode {
            QkvMode::Full => tape.conv1d(x, w, b, cfg.stride)?,
            QkvMode::Literal => {
                let mut rows = Vec::with_capacity(BANK_FILTERS);
                for group in 0..CNN_ROWS / BANK_FILTERS {
                    let window = tape.slice_rows(x, group * BANK_FILTERS, BANK_FILTERS)?;
                    rows.push(tape.conv1d(window, w, b, cfg.stride)?);
                }
                let width = tape.shape(rows[0])[1];
                rows.push(tape.constant(Tensor::zeros(&[1, width])));
                tape.concat_rows(&rows)?
            }
        };
        maps[i] = tape.tanh(conv)?;
        pooled[i] = tape.adaptive_max_pool(maps[i], cfg.d_model)?;
    }
    let stacked = tape.concat_rows(&pooled)?;
    let out = mode.dropout(tape, stacked, cfg.dropout)?;
    Ok(CnnClsTrace { maps, pooled, out })
}

/// CNN[CLS] applied to each stack of a batch; outputs stacked by rows.
fn cnn_cls_batch(
    tape: &mut Tape<'_>,
    p: &Bound<'_>,
    prefix: &str,
    cfg: &ModelConfig,
    x: Var,
    batch: usize,
    mode: &mut Mode<'_>,
) -> Result<(Vec<CnnClsTrace>, Var)> {
    let mut traces = Vec::with_capacity(batch);
    for b in 0..batch {
        let xb = if batch == 1 {
            x
        } else {
            tape.slice_rows(x, b * cfg.n_layers, cfg.n_layers)?
        };
        traces.push(cnn_cls_forward(tape, p, prefix, cfg, xb, mode)?);
    }
    let outs: Vec<Var> = traces.iter().map(|t| t.out).collect();
    let all = if batch == 1 { outs[0] } else { tape.concat_rows(&outs)? };
    Ok((traces, all))
}

/// Intermediate handles of a multi-head attention.
pub struct AttentionTrace {
    /// Row-stochastic attention matrices, sample-major then head.
    pub weights: Vec<Var>,
    /// `Concat(head_1, …, head_h)` per sample, stacked by rows:
    /// `(B·rows) × h·d_v`, before the output projection.
    pub concat: Var,
}

/// Scaled dot-product attention over `h` heads whose projections are stored
/// side by side in `{prefix}.w_q`, `{prefix}.w_k`, `{prefix}.w_v`.
///
/// `q`, `k`, `v` stack `batch` sequences of equal length by rows; attention
/// never crosses sequences.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    tape: &mut Tape<'_>,
    p: &Bound<'_>,
    prefix: &str,
    cfg: &ModelConfig,
    q: Var,
    k: Var,
    v: Var,
    batch: usize,
) -> Result<AttentionTrace> {
    if cfg.heads == 0 || cfg.heads * cfg.d_v() != cfg.d_model {
        return Err(Error::Config(format!(
            "heads * d_v must equal d_model: {} * {} != {}",
            cfg.heads,
            cfg.d_v(),
            cfg.d_model
        )));
    }
    let total = tape.shape(q)[0];
    if batch == 0 || !total.is_multiple_of(batch) {
        return Err(Error::Dimension {
            op: "multi_head_attention",
            left: tape.shape(q).to_vec(),
            right: alloc::vec![batch],
        });
    }
    let rows = total / batch;
    let qp = tape.matmul(q, p.get(&format!("{prefix}.w_q")))?;
    let kp = tape.matmul(k, p.get(&format!("{prefix}.w_k")))?;
    let vp = tape.matmul(v, p.get(&format!("{prefix}.w_v")))?;
    let scale = 1.0 / libm::sqrt(cfg.d_k as f64);
    let (dk, dv) = (cfg.d_k, cfg.d_v());
    let mut weights = Vec::with_capacity(batch * cfg.heads);
    let mut samples = Vec::with_capacity(batch);
    for b in 0..batch {
        let r0 = b * rows;
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = tape.slice(qp, r0, rows, h * dk, dk)?;
            let kh = tape.slice(kp, r0, rows, h * dk, dk)?;
            let vh = tape.slice(vp, r0, rows, h * dv, dv)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let attn = tape.softmax_rows(scores)?;
            heads.push(tape.matmul(attn, vh)?);
            weights.push(attn);
        }
        samples.push(tape.concat_cols(&heads)?);
    }
    let concat = if batch == 1 {
        samples[0]
    } else {
        tape.concat_rows(&samples)?
    };
    Ok(AttentionTrace { weights, concat })
}

fn ln(tape: &mut Tape<'_>, p: &Bound<'_>, prefix: &str, x: Var, eps: f64) -> Result<Var> {
    tape.layer_norm(
        x,
        p.get(&format!("{prefix}.gain")),
        p.get(&format!("{prefix}.shift")),
        eps,
    )
}

/// `norm(a + tanh(a))`, the activation sublayer shared by both encoder layers.
fn tanh_sublayer(tape: &mut Tape<'_>, p: &Bound<'_>, prefix: &str, a: Var, eps: f64) -> Result<Var> {
    let t = tape.tanh(a)?;
    let r = tape.add(a, t)?;
    ln(tape, p, prefix, r, eps)
}

/// First encoder layer: `A = norm(X + MHA(Q, K, V))`, `X0 = norm(A + tanh(A))`.
///
/// All inputs stack `batch` samples by rows; the result has the shape of `x`.
#[allow(clippy::too_many_arguments)]
pub fn encoder_layer1_forward(
    tape: &mut Tape<'_>,
    p: &Bound<'_>,
    cfg: &ModelConfig,
    x: Var,
    q: Var,
    k: Var,
    v: Var,
    batch: usize,
) -> Result<Var> {
    let att = multi_head_attention(tape, p, "enc1", cfg, q, k, v, batch)?;
    let projected = tape.matmul(att.concat, p.get("enc1.w_o"))?;
    let residual = tape.add(x, projected)?;
    let a = ln(tape, p, "enc1.ln1", residual, cfg.layer_norm_eps)?;
    tanh_sublayer(tape, p, "enc1.ln2", a, cfg.layer_norm_eps)
}

/// Intermediate handles of the second encoder layer.
pub struct Layer2Trace {
    pub attention: AttentionTrace,
    /// One row per sample: `vec(Concat(heads))`, length `rows · d_model`.
    pub z: Var,
    /// One `outdim` representation per sample.
    pub output: Var,
}

/// Second encoder layer. Q, K, V are linear projections of `x0`; each
/// sample's attention output is vectorized and projected to `outdim` with
/// no residual.
pub fn encoder_layer2_forward(
    tape: &mut Tape<'_>,
    p: &Bound<'_>,
    cfg: &ModelConfig,
    x0: Var,
    batch: usize,
) -> Result<Layer2Trace> {
    let q = tape.matmul(x0, p.get("enc2.in_q"))?;
    let k = tape.matmul(x0, p.get("enc2.in_k"))?;
    let v = tape.matmul(x0, p.get("enc2.in_v"))?;
    let attention = multi_head_attention(tape, p, "enc2", cfg, q, k, v, batch)?;
    // row-major blocks: sample b's rows are contiguous, so this is vec() per sample
    let per_sample = tape.value(attention.concat).len() / batch;
    let z = tape.reshape(attention.concat, &[batch, per_sample])?;
    let m = tape.matmul(z, p.get("enc2.w_o"))?;
    let b = ln(tape, p, "enc2.ln1", m, cfg.layer_norm_eps)?;
    let output = tanh_sublayer(tape, p, "enc2.ln2", b, cfg.layer_norm_eps)?;
    Ok(Layer2Trace { attention, z, output })
}

fn classify(tape: &mut Tape<'_>, p: &Bound<'_>, features: Var) -> Result<Var> {
    let logits = tape.matmul(features, p.get("head.w"))?;
    tape.log_softmax_rows(logits)
}

/// Intermediate handles of the CNN-enhanced encoder.
pub struct CnnTransEncTrace {
    /// Per replica (Q, K, V), per sample.
    pub qkv: [Vec<CnnClsTrace>; 3],
    /// Stacked replica outputs fed to the first layer.
    pub qkv_out: [Var; 3],
    pub x0: Var,
    pub layer2: Layer2Trace,
    pub log_probs: Var,
}

pub fn cnn_trans_enc_trace(
    tape: &mut Tape<'_>,
    p: &Bound<'_>,
    cfg: &ModelConfig,
    x: Var,
    mode: &mut Mode<'_>,
) -> Result<CnnTransEncTrace> {
    let batch = batch_of(tape, x, cfg)?;
    let (tq, q) = cnn_cls_batch(tape, p, CNN_REPLICAS[0], cfg, x, batch, mode)?;
    let (tk, k) = cnn_cls_batch(tape, p, CNN_REPLICAS[1], cfg, x, batch, mode)?;
    let (tv, v) = cnn_cls_batch(tape, p, CNN_REPLICAS[2], cfg, x, batch, mode)?;
    let x0 = encoder_layer1_forward(tape, p, cfg, x, q, k, v, batch)?;
    let layer2 = encoder_layer2_forward(tape, p, cfg, x0, batch)?;
    let log_probs = classify(tape, p, layer2.output)?;
    Ok(CnnTransEncTrace {
        qkv: [tq, tk, tv],
        qkv_out: [q, k, v],
        x0,
        layer2,
        log_probs,
    })
}

/// Three CNN[CLS] replicas, two encoder layers, softmax classifier.
pub fn cnn_trans_enc_forward(
    tape: &mut Tape<'_>,
    p: &Bound<'_>,
    cfg: &ModelConfig,
    x: Var,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    Ok(cnn_trans_enc_trace(tape, p, cfg, x, mode)?.log_probs)
}

/// Two encoder layers whose first-layer Q, K, V are linear projections of
/// the stack.
pub fn trans_enc_forward(tape: &mut Tape<'_>, p: &Bound<'_>, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let batch = batch_of(tape, x, cfg)?;
    let q = tape.matmul(x, p.get("proj.w_q"))?;
    let k = tape.matmul(x, p.get("proj.w_k"))?;
    let v = tape.matmul(x, p.get("proj.w_v"))?;
    let x0 = encoder_layer1_forward(tape, p, cfg, x, q, k, v, batch)?;
    let layer2 = encoder_layer2_forward(tape, p, cfg, x0, batch)?;
    classify(tape, p, layer2.output)
}

/// One CNN[CLS] block whose vectorized output feeds a softmax classifier.
pub fn cnn_cls_classifier_forward(
    tape: &mut Tape<'_>,
    p: &Bound<'_>,
    cfg: &ModelConfig,
    x: Var,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let batch = batch_of(tape, x, cfg)?;
    let (_, all) = cnn_cls_batch(tape, p, "cnn", cfg, x, batch, mode)?;
    let per_sample = tape.value(all).len() / batch;
    let features = tape.reshape(all, &[batch, per_sample])?;
    classify(tape, p, features)
}

/// Kim-CNN over last-layer vectors, one per row of `x` (`B × hidden`).
pub fn kim_cnn_forward(
    tape: &mut Tape<'_>,
    p: &Bound<'_>,
    cfg: &ModelConfig,
    x: Var,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let x = if tape.shape(x).len() == 1 {
        tape.reshape(x, &[1, cfg.hidden])?
    } else {
        x
    };
    let batch = tape.shape(x)[0];
    let mut rows = Vec::with_capacity(batch);
    for b in 0..batch {
        let row = if batch == 1 { x } else { tape.slice_rows(x, b, 1)? };
        let mut pooled = Vec::with_capacity(3);
        for (map, &width) in KIM_MAPS.iter().zip(&cfg.kim_windows) {
            let w = p.get(&format!("kim.{map}.w"));
            let bias = p.get(&format!("kim.{map}.b"));
            let conv = tape.conv1d(row, w, bias, cfg.stride)?;
            let act = tape.tanh(conv)?;
            pooled.push(tape.adaptive_max_pool(act, cfg.kim_pool_target(width))?);
        }
        let features = tape.concat_cols(&pooled)?;
        rows.push(mode.dropout(tape, features, cfg.dropout)?);
    }
    let features = if batch == 1 { rows[0] } else { tape.concat_rows(&rows)? };
    classify(tape, p, features)
}

/// Linear softmax classifier over last-layer vectors (`B × hidden`).
pub fn softmax_head_forward(tape: &mut Tape<'_>, p: &Bound<'_>, h_last: Var) -> Result<Var> {
    classify(tape, p, h_last)
}

/// Last-layer rows of a stacked batch.
fn last_layers(tape: &mut Tape<'_>, x: Var, cfg: &ModelConfig, batch: usize) -> Result<Var> {
    let mut rows = Vec::with_capacity(batch);
    for b in 0..batch {
        rows.push(tape.slice_rows(x, b * cfg.n_layers + cfg.n_layers - 1, 1)?);
    }
    if batch == 1 {
        Ok(rows[0])
    } else {
        tape.concat_rows(&rows)
    }
}

/// Class log-probabilities of the configured variant, `B × n_classes`, for
/// `B` stacks laid out by rows in `x` (`(B·n_layers) × hidden`).
pub fn forward(tape: &mut Tape<'_>, p: &Bound<'_>, cfg: &ModelConfig, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
    let batch = batch_of(tape, x, cfg)?;
    match cfg.variant {
        Variant::CnnTransEnc => cnn_trans_enc_forward(tape, p, cfg, x, mode),
        Variant::TransEnc => trans_enc_forward(tape, p, cfg, x),
        Variant::CnnCls => cnn_cls_classifier_forward(tape, p, cfg, x, mode),
        Variant::KimCnn => {
            let last = last_layers(tape, x, cfg, batch)?;
            kim_cnn_forward(tape, p, cfg, last, mode)
        }
        Variant::Softmax => {
            let last = last_layers(tape, x, cfg, batch)?;
            softmax_head_forward(tape, p, last)
        }
    }
}

/// Stacks samples into one `(B·n_layers) × hidden` tensor.
pub fn stack_batch(stacks: &[Tensor]) -> Result<Tensor> {
    let first = stacks.first().ok_or(Error::Empty("batch"))?;
    let shape = first.shape();
    let mut data = Vec::with_capacity(first.len() * stacks.len());
    for s in stacks {
        if s.shape() != shape {
            return Err(Error::Dimension {
                op: "stack_batch",
                left: shape.to_vec(),
                right: s.shape().to_vec(),
            });
        }
        data.extend_from_slice(s.data());
    }
    Tensor::new(&[shape[0] * stacks.len(), shape[1]], data)
}

/// Mean negative log-likelihood of `labels[i]` under each stack.
pub fn batch_loss(
    tape: &mut Tape<'_>,
    p: &Bound<'_>,
    cfg: &ModelConfig,
    stacks: &[Tensor],
    labels: &[usize],
    mode: &mut Mode<'_>,
) -> Result<Var> {
    if stacks.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: stacks.len(),
            right: labels.len(),
        });
    }
    let x = tape.constant(stack_batch(stacks)?);
    let lp = forward(tape, p, cfg, x, mode)?;
    let c = cfg.n_classes;
    let mut picks = Vec::with_capacity(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Validation(format!("label {y} outside [0, {c})")));
        }
        picks.push(tape.pick(lp, i * c + y)?);
    }
    let total = tape.sum(&picks)?;
    tape.scale(total, -1.0 / labels.len() as f64)
}

/// Class probabilities for one stack in evaluation mode.
pub fn predict_proba(store: &ParameterStore, cfg: &ModelConfig, x: &Tensor) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let xv = tape.leaf_ref(x, false);
    let lp = forward(&mut tape, &p, cfg, xv, &mut Mode::Eval)?;
    Ok(tape.value(lp).iter().map(|v| libm::exp(*v)).collect())
}

/// Most probable class of each stack (first on ties), evaluated in chunks.
pub fn predict_many(store: &ParameterStore, cfg: &ModelConfig, stacks: &[Tensor]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(stacks.len());
    for chunk in stacks.chunks(16) {
        let x = stack_batch(chunk)?;
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let xv = tape.leaf_ref(&x, false);
        let lp = forward(&mut tape, &p, cfg, xv, &mut Mode::Eval)?;
        out.extend(tape.value(lp).chunks(cfg.n_classes).map(argmax));
    }
    Ok(out)
}

/// Most probable class (first on ties).
pub fn predict(store: &ParameterStore, cfg: &ModelConfig, x: &Tensor) -> Result<usize> {
    let probs = predict_proba(store, cfg, x)?;
    Ok(argmax(&probs))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
