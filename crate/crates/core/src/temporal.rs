//! Temporal encoding of graph embeddings and the binary classifier head.

use crate::autodiff::{bce_value, sigmoid, Graph, Tensor, Var};
use crate::blackout::BlackoutMask;
use crate::error::{Error, Result};
use crate::features::ScenarioFeatures;
use crate::gat::{fuse_view, Bound, EgoView, FusionTrace, SharedProjection};
use crate::model::{idx, Hyperparams, ModelParams};

/// Sinusoidal position table, `len × width`.
pub fn positional_encoding(len: usize, width: usize) -> Tensor {
    let mut data = vec![0.0; len * width];
    for pos in 0..len {
        for i in 0..width {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / width as f64);
            data[pos * width + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(len, width, data).expect("positional shape")
}

/// Attention-weight vars recorded during a forward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub fusion: FusionTrace,
    /// Encoder self-attention matrices, `T × T`, one per layer and head.
    pub encoder: Vec<Var>,
    /// Attention-pooling weights, `1 × T`.
    pub pool: Vec<Var>,
}

/// Adds positions and applies the pre-norm encoder layers.
pub fn encode_sequence(g: &mut Graph, p: &Bound, x: Var, mut trace: Option<&mut Trace>) -> Result<Var> {
    let hp = p.hyper;
    let (t_len, n) = g.value(x).dims2("encode_sequence")?;
    if t_len == 0 || t_len > hp.t_max {
        return Err(Error::invalid(format!(
            "sequence length {t_len} outside 1..={}",
            hp.t_max
        )));
    }
    let pe = g.constant(positional_encoding(t_len, n))?;
    let mut h = g.add(x, pe)?;
    let heads = hp.encoder_heads;
    let dh = n / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    for l in 0..hp.encoder_layers {
        let v = |o| p.get(idx::layer(l, o));
        let a = g.layer_norm(h, v(idx::LN1_GAIN), v(idx::LN1_BIAS))?;
        let q = g.matmul(a, v(idx::Q))?;
        let k = g.matmul(a, v(idx::K))?;
        let val = g.matmul(a, v(idx::V))?;
        let mut outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let qh = g.slice(q, 1, hd * dh, dh)?;
            let kh = g.slice(k, 1, hd * dh, dh)?;
            let vh = g.slice(val, 1, hd * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let att = g.softmax(scores, 1)?;
            if let Some(tr) = trace.as_deref_mut() {
                tr.encoder.push(att);
            }
            outs.push(g.matmul(att, vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 1)? };
        let o = g.matmul(cat, v(idx::O))?;
        h = g.add(h, o)?;
        let b = g.layer_norm(h, v(idx::LN2_GAIN), v(idx::LN2_BIAS))?;
        let f1 = g.matmul(b, v(idx::FFN_W1))?;
        let f1 = g.add_bias(f1, v(idx::FFN_B1))?;
        let f1 = g.relu(f1);
        let f2 = g.matmul(f1, v(idx::FFN_W2))?;
        let f2 = g.add_bias(f2, v(idx::FFN_B2))?;
        h = g.add(h, f2)?;
    }
    Ok(h)
}

/// Softmax-weighted average of the rows of `x` (`T × n`) scored by
/// `w_ap` (`n × 1`). Returns the pooled `1 × n` vector and the `1 × T`
/// weights.
pub fn attention_pool(g: &mut Graph, x: Var, w_ap: Var) -> Result<(Var, Var)> {
    if g.value(x).rows() == 0 {
        return Err(Error::invalid("attention pooling over an empty sequence"));
    }
    let scores = g.matmul(x, w_ap)?;
    let scores = g.transpose(scores)?;
    let weights = g.softmax(scores, 1)?;
    let z = g.matmul(weights, x)?;
    Ok((z, weights))
}

/// Probability and decision for a logit; anomalous iff `p > 0.5`.
pub fn classify(logit: f64) -> (f64, bool) {
    let p = sigmoid(logit);
    (p, p > 0.5)
}

/// Head on top of the encoder output: pooled vector to probability (`1×1`).
pub fn head(g: &mut Graph, p: &Bound, encoded: Var, trace: Option<&mut Trace>) -> Result<Var> {
    let h0 = idx::head(p.hyper.encoder_layers);
    let (z, weights) = attention_pool(g, encoded, p.get(h0))?;
    if let Some(tr) = trace {
        tr.pool.push(weights);
    }
    let logit = g.matmul(z, p.get(h0 + 1))?;
    let logit = g.add(logit, p.get(h0 + 2))?;
    Ok(g.sigmoid(logit))
}

/// One (ego, mask) request within a scenario.
#[derive(Debug, Clone, Copy)]
pub struct EgoRequest<'a> {
    pub ego: usize,
    pub mask: Option<&'a BlackoutMask>,
}

/// Probabilities (`1×1` vars) for several egos of one scenario, sharing the
/// sensor projection.
pub fn forward_group(
    g: &mut Graph,
    p: &Bound,
    features: &ScenarioFeatures,
    requests: &[EgoRequest<'_>],
    mut trace: Option<&mut Trace>,
) -> Result<Vec<Var>> {
    if features.horizon > p.hyper.t_max {
        return Err(Error::invalid(format!(
            "horizon {} exceeds model t_max {}",
            features.horizon, p.hyper.t_max
        )));
    }
    let shared = SharedProjection::new(g, p, features)?;
    let mut out = Vec::with_capacity(requests.len());
    for req in requests {
        let view = EgoView::new(features, req.ego, req.mask)?;
        let fused = fuse_view(g, p, shared, &view, trace.as_deref_mut().map(|t| &mut t.fusion))?;
        let enc = encode_sequence(g, p, fused, trace.as_deref_mut())?;
        out.push(head(g, p, enc, trace.as_deref_mut())?);
    }
    Ok(out)
}

/// Anomaly probability of `ego` in a scenario under an optional blackout.
pub fn forward(params: &ModelParams, features: &ScenarioFeatures, ego: usize, mask: Option<&BlackoutMask>) -> Result<f64> {
    let mut g = Graph::new();
    let p = Bound::new(&mut g, params, false)?;
    let out = forward_group(&mut g, &p, features, &[EgoRequest { ego, mask }], None)?;
    Ok(g.value(out[0]).data()[0])
}

/// Probabilities for every listed ego of one scenario, unmasked.
pub fn forward_egos(params: &ModelParams, features: &ScenarioFeatures, requests: &[EgoRequest<'_>]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = Bound::new(&mut g, params, false)?;
    let out = forward_group(&mut g, &p, features, requests, None)?;
    Ok(out.iter().map(|v| g.value(*v).data()[0]).collect())
}

/// Weighted binary cross-entropy, averaged over samples.
pub fn bce_loss(probabilities: &[f64], labels: &[f64], pos_weight: f64) -> Result<f64> {
    if probabilities.len() != labels.len() {
        return Err(Error::Shape {
            op: "bce_loss",
            left: vec![probabilities.len()],
            right: vec![labels.len()],
        });
    }
    if labels.is_empty() {
        return Err(Error::invalid("bce_loss of zero samples"));
    }
    Ok(bce_value(probabilities, labels, pos_weight))
}

/// Checks that `hp` can classify sequences of `horizon` steps.
pub fn check_horizon(hp: &Hyperparams, horizon: usize) -> Result<()> {
    if horizon == 0 || horizon > hp.t_max {
        return Err(Error::invalid(format!("horizon {horizon} outside 1..={}", hp.t_max)));
    }
    Ok(())
}
