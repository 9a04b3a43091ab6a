use ndarray::{s, Array1, Array2, Array3, ArrayView1, Axis};

use super::dropout::{DropoutPlan, DropoutSite};
use super::params::TransducerParams;
use crate::error::{Error, Result};
use crate::lattice::{EmissionLattice, TargetSeq};
use crate::logspace::log_softmax_in_place;
use crate::views::FeatureSeq;

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x_win: Array2<f64>,
    enc_h: Array2<f64>,
    enc_mask: Option<Array2<f64>>,
    enc: Array2<f64>,
    /// `(previous token, token before that)` per predictor step.
    context: Vec<(usize, usize)>,
    pred_in: Array2<f64>,
    pred_h: Array2<f64>,
    pred_mask: Option<Array2<f64>>,
    pred: Array2<f64>,
    join_z: Array2<f64>,
    join_mask: Option<Array2<f64>>,
    probs: Array2<f64>,
}

impl ForwardCache {
    pub fn encoder_output(&self) -> &Array2<f64> {
        &self.enc
    }

    pub fn t_len(&self) -> usize {
        self.enc.nrows()
    }

    pub fn u_len(&self) -> usize {
        self.context.len() - 1
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub lattice: EmissionLattice,
    pub cache: ForwardCache,
}

fn apply_mask(x: &Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x.clone(),
    }
}

/// Stacks `±context` frames around every `stride`-th frame, zero padded.
fn context_windows(p: &TransducerParams, x: &FeatureSeq) -> Result<Array2<f64>> {
    let d = p.dims;
    if x.feat_dim() != d.feat_dim {
        return Err(Error::shape(format!(
            "features have {} bins, model expects {}",
            x.feat_dim(),
            d.feat_dim
        )));
    }
    let t_raw = x.t_len();
    let t_len = d.encoder_len(t_raw);
    let mut win = Array2::zeros((t_len, d.window_dim()));
    for t in 0..t_len {
        let centre = (t * d.stride) as isize;
        for (slot, off) in (-(d.context as isize)..=d.context as isize).enumerate() {
            let src = centre + off;
            if (0..t_raw as isize).contains(&src) {
                win.slice_mut(s![t, slot * d.feat_dim..(slot + 1) * d.feat_dim])
                    .assign(&x.frames().row(src as usize));
            }
        }
    }
    Ok(win)
}

fn encode_cached(
    p: &TransducerParams,
    x: &FeatureSeq,
    dropout: &DropoutPlan,
) -> Result<(Array2<f64>, Array2<f64>, Option<Array2<f64>>, Array2<f64>)> {
    let x_win = context_windows(p, x)?;
    let enc_h = (x_win.dot(&p.enc_w1.t()) + &p.enc_b1).mapv(f64::tanh);
    let enc_mask = dropout.mask(DropoutSite::Encoder, enc_h.nrows(), enc_h.ncols());
    let enc = apply_mask(&enc_h, &enc_mask).dot(&p.enc_w2.t()) + &p.enc_b2;
    Ok((x_win, enc_h, enc_mask, enc))
}

/// Encoder output `(T, H)`.
pub fn encode(p: &TransducerParams, x: &FeatureSeq, dropout: &DropoutPlan) -> Result<Array2<f64>> {
    Ok(encode_cached(p, x, dropout)?.3)
}

fn predictor_input(p: &TransducerParams, prev1: usize, prev2: usize) -> Array1<f64> {
    let h = p.dims.hidden;
    let mut v = Array1::zeros(2 * h);
    v.slice_mut(s![..h]).assign(&p.embed.row(prev1));
    v.slice_mut(s![h..]).assign(&p.embed.row(prev2));
    v
}

/// Predictor state given the last two emitted tokens (0 = start of sequence).
pub fn predictor_output(p: &TransducerParams, prev1: usize, prev2: usize) -> Array1<f64> {
    (p.pred_w.dot(&predictor_input(p, prev1, prev2)) + &p.pred_b).mapv(f64::tanh)
}

/// Log-probabilities over `V+1` outputs for one encoder row and predictor state.
pub fn joint_log_probs(
    p: &TransducerParams,
    enc: ArrayView1<f64>,
    pred: ArrayView1<f64>,
) -> Array1<f64> {
    let z = (p.join_enc.dot(&enc) + p.join_pred.dot(&pred) + &p.join_b).mapv(f64::tanh);
    let mut logits = p.out_w.dot(&z) + &p.out_b;
    log_softmax_in_place(logits.as_slice_mut().expect("contiguous"));
    logits
}

/// Full `(T, U+1, V+1)` lattice for one utterance plus cached activations.
pub fn model_forward(
    p: &TransducerParams,
    x: &FeatureSeq,
    target: &TargetSeq,
    dropout: &DropoutPlan,
) -> Result<ForwardPass> {
    let d = p.dims;
    if target.tokens().iter().any(|&k| k > d.vocab) {
        return Err(Error::shape("target token outside model vocabulary"));
    }
    let (x_win, enc_h, enc_mask, enc) = encode_cached(p, x, dropout)?;
    let t_len = enc.nrows();
    let u_len = target.len();
    let rows = u_len + 1;

    let y = target.tokens();
    let context: Vec<(usize, usize)> = (0..rows)
        .map(|u| {
            let prev1 = if u >= 1 { y[u - 1] } else { 0 };
            let prev2 = if u >= 2 { y[u - 2] } else { 0 };
            (prev1, prev2)
        })
        .collect();
    let mut pred_in = Array2::zeros((rows, 2 * d.hidden));
    for (u, &(a, b)) in context.iter().enumerate() {
        pred_in.row_mut(u).assign(&predictor_input(p, a, b));
    }
    let pred_h = (pred_in.dot(&p.pred_w.t()) + &p.pred_b).mapv(f64::tanh);
    let pred_mask = dropout.mask(DropoutSite::Predictor, rows, d.hidden);
    let pred = apply_mask(&pred_h, &pred_mask);

    let a = enc.dot(&p.join_enc.t());
    let b = pred.dot(&p.join_pred.t()) + &p.join_b;
    let mut join_z = Array2::zeros((t_len * rows, d.joiner));
    for t in 0..t_len {
        for u in 0..rows {
            let mut z = join_z.row_mut(t * rows + u);
            z.assign(&a.row(t));
            z += &b.row(u);
            z.mapv_inplace(f64::tanh);
        }
    }
    let join_mask = dropout.mask(DropoutSite::Joiner, t_len * rows, d.joiner);
    let mut logits = apply_mask(&join_z, &join_mask).dot(&p.out_w.t()) + &p.out_b;
    for mut row in logits.rows_mut() {
        log_softmax_in_place(row.as_slice_mut().expect("contiguous"));
    }
    if logits.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("model output".into()));
    }
    let probs = logits.mapv(f64::exp);
    let lattice = EmissionLattice::from_log_probs(
        logits
            .into_shape_with_order((t_len, rows, d.vocab + 1))
            .expect("row major"),
    )?;
    Ok(ForwardPass {
        lattice,
        cache: ForwardCache {
            x_win,
            enc_h,
            enc_mask,
            enc,
            context,
            pred_in,
            pred_h,
            pred_mask,
            pred,
            join_z,
            join_mask,
            probs,
        },
    })
}

/// Gradients of a scalar loss given its gradient w.r.t. each lattice entry
/// (treated as free log-probabilities) and, optionally, w.r.t. the encoder
/// output.
pub fn model_backward(
    p: &TransducerParams,
    cache: &ForwardCache,
    lattice_grad: &Array3<f64>,
    enc_grad: Option<&Array2<f64>>,
) -> Result<TransducerParams> {
    let d = p.dims;
    let (t_len, rows) = (cache.t_len(), cache.u_len() + 1);
    let out = d.vocab + 1;
    if lattice_grad.dim() != (t_len, rows, out) {
        return Err(Error::shape(format!(
            "lattice gradient {:?} does not match cached ({t_len}, {rows}, {out})",
            lattice_grad.dim()
        )));
    }
    if let Some(g) = enc_grad {
        if g.dim() != cache.enc.dim() {
            return Err(Error::shape(
                "encoder gradient does not match encoder output",
            ));
        }
    }
    let mut grads = TransducerParams::zeros(d);

    // log-softmax: dlogit = g - p * sum(g)
    let g = lattice_grad
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((t_len * rows, out))
        .expect("row major");
    let gsum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    let dlogit = &g - &(&cache.probs * &gsum);

    let zd = apply_mask(&cache.join_z, &cache.join_mask);
    grads.out_w = dlogit.t().dot(&zd);
    grads.out_b = dlogit.sum_axis(Axis(0));
    let mut dz = dlogit.dot(&p.out_w);
    if let Some(m) = &cache.join_mask {
        dz *= m;
    }
    let da = dz * cache.join_z.mapv(|z| 1.0 - z * z);
    grads.join_b = da.sum_axis(Axis(0));
    let da3 = da
        .into_shape_with_order((t_len, rows, d.joiner))
        .expect("row major");
    let d_enc_proj = da3.sum_axis(Axis(1));
    let d_pred_proj = da3.sum_axis(Axis(0));
    grads.join_enc = d_enc_proj.t().dot(&cache.enc);
    grads.join_pred = d_pred_proj.t().dot(&cache.pred);

    // predictor
    let mut dpred = d_pred_proj.dot(&p.join_pred);
    if let Some(m) = &cache.pred_mask {
        dpred *= m;
    }
    let dpre = dpred * cache.pred_h.mapv(|h| 1.0 - h * h);
    grads.pred_b = dpre.sum_axis(Axis(0));
    grads.pred_w = dpre.t().dot(&cache.pred_in);
    let dpred_in = dpre.dot(&p.pred_w);
    let h = d.hidden;
    for (u, &(a, b)) in cache.context.iter().enumerate() {
        let mut row = grads.embed.row_mut(a);
        row += &dpred_in.slice(s![u, ..h]);
        let mut row = grads.embed.row_mut(b);
        row += &dpred_in.slice(s![u, h..]);
    }

    // encoder
    let mut denc = d_enc_proj.dot(&p.join_enc);
    if let Some(ge) = enc_grad {
        denc += ge;
    }
    grads.enc_b2 = denc.sum_axis(Axis(0));
    grads.enc_w2 = denc.t().dot(&apply_mask(&cache.enc_h, &cache.enc_mask));
    let mut dh = denc.dot(&p.enc_w2);
    if let Some(m) = &cache.enc_mask {
        dh *= m;
    }
    let dpre = dh * cache.enc_h.mapv(|h| 1.0 - h * h);
    grads.enc_b1 = dpre.sum_axis(Axis(0));
    grads.enc_w1 = dpre.t().dot(&cache.x_win);
    Ok(grads)
}

/// Mean squared difference between two encoder outputs.
pub fn encoder_mse(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("encoder outputs differ in shape"));
    }
    let n = a.len().max(1) as f64;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// Gradients of `encoder_mse` w.r.t. `a` and `b`.
pub fn encoder_mse_grad(a: &Array2<f64>, b: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if a.dim() != b.dim() {
        return Err(Error::shape("encoder outputs differ in shape"));
    }
    let ga = (a - b) * (2.0 / a.len().max(1) as f64);
    let gb = -&ga;
    Ok((ga, gb))
}
