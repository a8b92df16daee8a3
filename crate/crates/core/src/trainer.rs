//! Bi-level training loop.
//!
//! Each step runs four stages in order:
//! 1. forward a knowledge-base batch through encoder, channel, decoder and
//!    the frozen classifier, keeping per-sample losses and gradients;
//! 2. take a temporary decoder step weighted by the current significances;
//! 3. evaluate the clean meta batch through the temporary learner and move
//!    the significance function against the meta-loss gradient, which flows
//!    back through the temporary step;
//! 4. re-weight the stage-1 losses with the updated significances, update
//!    the decoder, and send the channel-output gradient back to the
//!    transmitter, which updates the encoder.

use std::collections::VecDeque;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{channel_vjp, equalize, equalize_vjp, ChannelConfig, ChannelRealization};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::kb::{sample_batch, sample_meta_batch, KnowledgeBase, MetaSet};
use crate::nn::{pragmatic_loss_grad, EncoderRecord, LearnerState, LossWeights};
use crate::scm::{extend_all, extension_samples, Sef, SplineSpec};
use crate::tensor::Tensor;

/// Which learner parameters the temporary (stage 2) update touches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerScope {
    #[default]
    Decoder,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Learner step size.
    pub alpha: f64,
    /// Significance-function step size.
    pub beta: f64,
    pub batch: usize,
    pub meta_batch: usize,
    pub eval_every: usize,
    pub inner_scope: InnerScope,
    /// Heavy-ball coefficient for the final updates; 0 is plain SGD.
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            alpha: 0.01,
            beta: 1e-3,
            batch: 64,
            meta_batch: 32,
            eval_every: 50,
            inner_scope: InnerScope::Decoder,
            momentum: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.meta_batch == 0 {
            return Err(Error::Validation("batch sizes must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Validation("eval_every must be positive".into()));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Validation(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Completed,
    /// Fading too deep to equalize; no parameters changed.
    SkippedDeepFade,
    /// A loss or gradient was not finite; no parameters changed.
    AbortedNonFinite,
}

/// Diagnostics of one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub status: StepStatus,
    pub ids: Vec<u64>,
    pub labels: Vec<usize>,
    pub losses: Vec<f64>,
    pub significance: Vec<f64>,
    pub significance_updated: Vec<f64>,
    pub meta_loss: f64,
    pub decoder_grad_norm: f64,
    pub encoder_grad_norm: f64,
    pub sef_grad_norm: f64,
    pub h_re: f64,
    pub h_im: f64,
    /// Noise seed of the channel block, identifying the realization.
    pub channel_id: u64,
}

impl StepRecord {
    fn skipped(step: usize, status: StepStatus, ids: Vec<u64>, labels: Vec<usize>, r: &ChannelRealization) -> Self {
        StepRecord {
            step,
            status,
            ids,
            labels,
            losses: Vec::new(),
            significance: Vec::new(),
            significance_updated: Vec::new(),
            meta_loss: f64::NAN,
            decoder_grad_norm: 0.0,
            encoder_grad_norm: 0.0,
            sef_grad_norm: 0.0,
            h_re: r.h.re,
            h_im: r.h.im,
            channel_id: r.noise_seed,
        }
    }
}

/// What the receiver sends back to the transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackTuple {
    /// Gradient of the weighted batch loss with respect to the channel output.
    pub grad_y: Tensor,
    pub y: Tensor,
    pub h: Complex64,
}

impl FeedbackTuple {
    pub fn validate(&self, record: &EncoderRecord) -> Result<()> {
        if self.grad_y.shape() != record.x.shape() || self.y.shape() != record.x.shape() {
            return Err(Error::Config("feedback shapes do not match the recorded channel input".into()));
        }
        if self.grad_y.data().iter().any(|v| !v.is_finite()) || !self.h.re.is_finite() || !self.h.im.is_finite() {
            return Err(Error::NonFinite("feedback tuple holds non-finite values".into()));
        }
        Ok(())
    }
}

/// Per-sample results of a forward/backward pass over one batch.
#[derive(Debug, Clone)]
pub struct BatchPass {
    pub record: EncoderRecord,
    pub realization: ChannelRealization,
    /// Channel output `[n, 2B]`.
    pub y: Tensor,
    pub losses: Vec<f64>,
    /// `d L_i / d decoder params`.
    pub decoder_grads: Vec<Vec<f64>>,
    /// `d L_i / d y_i` (row `i` of the channel output only).
    pub grad_y: Vec<Vec<f64>>,
}

impl BatchPass {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

/// Runs `samples` through the learner and a given channel block, using
/// noise stream `stream`.
pub fn batch_pass(
    learner: &LearnerState,
    samples: &[&Sample],
    realization: &ChannelRealization,
    stream: u64,
    weights: LossWeights,
) -> Result<BatchPass> {
    if samples.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.image.as_slice()).collect();
    let batch = Tensor::stack(&rows, &[learner.source_len()])?;
    let record = learner.encode(&batch)?;
    let y = realization.apply(record.x.data(), stream)?;
    let xhat = equalize(&y, realization)?;
    let width = learner.channel_reals();
    let h = realization.h;
    let per: Vec<(f64, Vec<f64>, Vec<f64>)> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let trace = learner.decoder.forward(&xhat[i * width..(i + 1) * width])?;
            let (loss, g_recon) = pragmatic_loss_grad(learner.classifier(), trace.output(), &s.image, s.label, weights)?;
            let mut g = vec![0.0; learner.decoder.param_count()];
            let g_xhat = learner.decoder.backward(&trace, &g_recon, &mut g)?;
            Ok((loss.combined, g, equalize_vjp(h, &g_xhat)))
        })
        .collect::<Result<_>>()?;
    let mut losses = Vec::with_capacity(per.len());
    let mut decoder_grads = Vec::with_capacity(per.len());
    let mut grad_y = Vec::with_capacity(per.len());
    for (l, g, gy) in per {
        losses.push(l);
        decoder_grads.push(g);
        grad_y.push(gy);
    }
    Ok(BatchPass {
        y: Tensor::new(vec![samples.len(), width], y)?,
        record,
        realization: *realization,
        losses,
        decoder_grads,
        grad_y,
    })
}

/// Per-sample encoder gradients `d L_i / d encoder params`, including the
/// coupling through the batch power normalization.
pub fn per_sample_encoder_grads(learner: &LearnerState, pass: &BatchPass) -> Result<Vec<Vec<f64>>> {
    let rec = &pass.record;
    let width = learner.channel_reals();
    let raw = rec.raw();
    let norm = &rec.norm;
    // sum_k J_k^T z_k, shared by every sample's coupling term.
    let coupling = if norm.bypassed {
        None
    } else {
        let rows: Vec<Vec<f64>> = (0..pass.len())
            .into_par_iter()
            .map(|k| learner.encoder_row_vjp(rec, k, &raw[k * width..(k + 1) * width]))
            .collect::<Result<_>>()?;
        Some(crate::nn::sum_rows(rows, learner.encoder.param_count()))
    };
    (0..pass.len())
        .into_par_iter()
        .map(|i| {
            let g = channel_vjp(pass.realization.h, &pass.grad_y[i]);
            let z = &raw[i * width..(i + 1) * width];
            let mut own = learner.encoder_row_vjp(rec, i, &g)?;
            own.iter_mut().for_each(|v| *v *= norm.scale);
            if let Some(u) = &coupling {
                let gz: f64 = g.iter().zip(z).map(|(a, b)| a * b).sum();
                let k = norm.scale * gz / norm.energy;
                for (o, ui) in own.iter_mut().zip(u) {
                    *o -= k * ui;
                }
            }
            Ok(own)
        })
        .collect()
}

/// `w - (alpha / n) sum_i v_i g_i`, summed in sample order.
pub fn weighted_step(w: &[f64], grads: &[Vec<f64>], v: &[f64], alpha: f64) -> Vec<f64> {
    let n = grads.len() as f64;
    let mut acc = vec![0.0; w.len()];
    for (g, vi) in grads.iter().zip(v) {
        for (a, gi) in acc.iter_mut().zip(g) {
            *a += vi * gi;
        }
    }
    w.iter().zip(&acc).map(|(wi, a)| wi - alpha / n * a).collect()
}

/// Temporary learner after the significance-weighted inner step.
pub fn temp_update(
    learner: &LearnerState,
    pass: &BatchPass,
    v: &[f64],
    alpha: f64,
    scope: InnerScope,
    encoder_grads: Option<&[Vec<f64>]>,
) -> Result<LearnerState> {
    let mut temp = learner.clone();
    let dec = weighted_step(learner.decoder.params(), &pass.decoder_grads, v, alpha);
    temp.decoder.set_params(&dec)?;
    if scope == InnerScope::Full {
        let eg = encoder_grads.ok_or_else(|| Error::State("full inner scope needs per-sample encoder gradients".into()))?;
        let enc = weighted_step(learner.encoder.params(), eg, v, alpha);
        temp.encoder.set_params(&enc)?;
    }
    Ok(temp)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = crate::nn::sum_rows(rows.to_vec(), rows.first().map_or(0, Vec::len));
    let m = rows.len() as f64;
    acc.iter_mut().for_each(|v| *v /= m);
    acc
}

/// Meta-loss gradients at the temporary learner.
#[derive(Debug, Clone)]
pub struct MetaPass {
    pub pass: BatchPass,
    /// Per-sample gradients over the inner-scope parameters (decoder first,
    /// then encoder in full scope).
    pub per_sample: Vec<Vec<f64>>,
}

impl MetaPass {
    pub fn loss(&self) -> f64 {
        self.pass.mean_loss()
    }

    pub fn mean_grad(&self) -> Vec<f64> {
        mean_rows(&self.per_sample)
    }
}

/// Per-sample gradients over the inner-scope parameters: decoder, then
/// encoder in full scope. `enc` reuses already computed encoder gradients.
pub fn inner_grads(learner: &LearnerState, pass: &BatchPass, scope: InnerScope, enc: Option<Vec<Vec<f64>>>) -> Result<Vec<Vec<f64>>> {
    Ok(match scope {
        InnerScope::Decoder => pass.decoder_grads.clone(),
        InnerScope::Full => {
            let enc = match enc {
                Some(e) => e,
                None => per_sample_encoder_grads(learner, pass)?,
            };
            pass.decoder_grads
                .iter()
                .zip(enc)
                .map(|(d, e)| d.iter().copied().chain(e).collect())
                .collect()
        }
    })
}

pub fn meta_pass(
    temp: &LearnerState,
    meta: &[&Sample],
    realization: &ChannelRealization,
    weights: LossWeights,
    scope: InnerScope,
) -> Result<MetaPass> {
    let pass = batch_pass(temp, meta, realization, 1, weights)?;
    let per_sample = inner_grads(temp, &pass, scope, None)?;
    Ok(MetaPass { pass, per_sample })
}

/// Mean meta loss and its gradient over the inner-scope parameters. The
/// encoder part goes through one feedback backward with unit weights instead
/// of per-sample gradients.
pub fn meta_gradient(
    temp: &LearnerState,
    meta: &[&Sample],
    realization: &ChannelRealization,
    weights: LossWeights,
    scope: InnerScope,
) -> Result<(f64, Vec<f64>)> {
    let pass = batch_pass(temp, meta, realization, 1, weights)?;
    let mut grad = mean_rows(&pass.decoder_grads);
    if scope == InnerScope::Full {
        let fb = receiver_feedback(&pass, &vec![1.0; pass.len()])?;
        grad.extend(encoder_feedback_grad(temp, &pass.record, &fb)?);
    }
    Ok((pass.mean_loss(), grad))
}

/// Gradient of the meta loss with respect to the significance parameters,
/// obtained by pulling the meta gradient back through the inner step
/// (reverse mode over `w* = w - (alpha/n) sum_j V(L_j) g_j`).
pub fn sef_meta_gradient(sef: &Sef, losses: &[f64], train_grads: &[Vec<f64>], meta_grad: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let n = losses.len() as f64;
    let mut grad = vec![0.0; sef.param_count()];
    for (l, g) in losses.iter().zip(train_grads) {
        let cot = -alpha / n * dot(meta_grad, g);
        sef.backward_into(*l, cot, &mut grad)?;
    }
    Ok(grad)
}

/// `Theta - beta * grad`.
pub fn scm_update(sef: &Sef, grad: &[f64], beta: f64) -> Sef {
    let mut next = sef.clone();
    for (p, g) in next.params_mut().iter_mut().zip(grad) {
        *p -= beta * g;
    }
    next
}

/// Closed-form significance update from the explicit matrix of gradient
/// inner products `G_ij = <grad L_i^meta(w*), grad L_j(w)>`:
/// `Theta + (alpha beta / n) sum_j (1/m sum_i G_ij) dV(L_j)/dTheta`.
/// Only valid for a plain-SGD inner step and update.
pub fn scm_update_closed_form(
    sef: &Sef,
    losses: &[f64],
    train_grads: &[Vec<f64>],
    meta_grads: &[Vec<f64>],
    alpha: f64,
    beta: f64,
    momentum: f64,
) -> Result<Sef> {
    if momentum != 0.0 {
        return Err(Error::Contract(
            "closed-form significance update assumes plain SGD; momentum is enabled".into(),
        ));
    }
    let n = train_grads.len();
    let m = meta_grads.len();
    let gram: Vec<Vec<f64>> = meta_grads
        .iter()
        .map(|gi| train_grads.iter().map(|gj| dot(gi, gj)).collect())
        .collect();
    let mut next = sef.clone();
    let mut delta = vec![0.0; sef.param_count()];
    for j in 0..n {
        let col: f64 = (0..m).map(|i| gram[i][j]).sum::<f64>() / m as f64;
        let dv = sef.eval_grad(losses[j])?.params;
        for (d, g) in delta.iter_mut().zip(dv) {
            *d += col * g;
        }
    }
    let k = alpha * beta / n as f64;
    for (p, d) in next.params_mut().iter_mut().zip(delta) {
        *p += k * d;
    }
    Ok(next)
}

/// Receiver side of stage 4: `d/dy` of `(1/n) sum_i v_i L_i`.
pub fn receiver_feedback(pass: &BatchPass, v: &[f64]) -> Result<FeedbackTuple> {
    let n = pass.len() as f64;
    let width = pass.y.row_len();
    let mut g = Vec::with_capacity(pass.len() * width);
    for (gy, vi) in pass.grad_y.iter().zip(v) {
        g.extend(gy.iter().map(|x| vi * x / n));
    }
    Ok(FeedbackTuple {
        grad_y: Tensor::new(pass.y.shape().to_vec(), g)?,
        y: pass.y.clone(),
        h: pass.realization.h,
    })
}

/// Transmitter side: encoder gradient from the feedback tuple and its own
/// recorded forward pass.
pub fn encoder_feedback_grad(learner: &LearnerState, record: &EncoderRecord, fb: &FeedbackTuple) -> Result<Vec<f64>> {
    fb.validate(record)?;
    let grad_x = channel_vjp(fb.h, fb.grad_y.data());
    learner.encoder_backward(record, &grad_x)
}

/// Applies `w1 - alpha * grad` to the encoder; returns the gradient used.
pub fn encoder_feedback(learner: &mut LearnerState, record: &EncoderRecord, fb: &FeedbackTuple, alpha: f64) -> Result<Vec<f64>> {
    let g = encoder_feedback_grad(learner, record, fb)?;
    let p: Vec<f64> = learner.encoder.params().iter().zip(&g).map(|(w, gi)| w - alpha * gi).collect();
    learner.encoder.set_params(&p)?;
    Ok(g)
}

/// Encoder gradient of `(1/n) sum_i v_i L_i` computed end to end in one
/// pass, treating the channel and equalizer as real 2x2 linear maps.
pub fn monolithic_encoder_grad(
    learner: &LearnerState,
    samples: &[&Sample],
    realization: &ChannelRealization,
    stream: u64,
    v: &[f64],
    weights: LossWeights,
) -> Result<Vec<f64>> {
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.image.as_slice()).collect();
    let batch = Tensor::stack(&rows, &[learner.source_len()])?;
    let record = learner.encode(&batch)?;
    let x = record.x.data();
    let noise = realization.apply(&vec![0.0; x.len()], stream)?;
    let (hr, hi) = (realization.h.re, realization.h.im);
    let p = hr * hr + hi * hi;
    // y = H x + n, x_hat = E y.
    let hmat = [[hr, -hi], [hi, hr]];
    let emat = [[hr / p, hi / p], [-hi / p, hr / p]];
    let mut m = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            m[r][c] = emat[r][0] * hmat[0][c] + emat[r][1] * hmat[1][c];
        }
    }
    let mut xhat = vec![0.0; x.len()];
    for k in (0..x.len()).step_by(2) {
        let y0 = hmat[0][0] * x[k] + hmat[0][1] * x[k + 1] + noise[k];
        let y1 = hmat[1][0] * x[k] + hmat[1][1] * x[k + 1] + noise[k + 1];
        xhat[k] = emat[0][0] * y0 + emat[0][1] * y1;
        xhat[k + 1] = emat[1][0] * y0 + emat[1][1] * y1;
    }
    let width = learner.channel_reals();
    let n = samples.len() as f64;
    let mut grad_x = vec![0.0; x.len()];
    for (i, s) in samples.iter().enumerate() {
        let trace = learner.decoder.forward(&xhat[i * width..(i + 1) * width])?;
        let (_, g_recon) = pragmatic_loss_grad(learner.classifier(), trace.output(), &s.image, s.label, weights)?;
        let g_xhat = learner.decoder.backward_input(&trace, &g_recon)?;
        for k in (0..width).step_by(2) {
            let (a, b) = (g_xhat[k], g_xhat[k + 1]);
            grad_x[i * width + k] = v[i] * (m[0][0] * a + m[1][0] * b) / n;
            grad_x[i * width + k + 1] = v[i] * (m[0][1] * a + m[1][1] * b) / n;
        }
    }
    learner.encoder_backward(&record, &grad_x)
}

/// One step of plain SGD on the unweighted batch loss, written without any
/// significance machinery. Reference for the constant-significance case.
pub fn plain_sgd_step(
    learner: &mut LearnerState,
    samples: &[&Sample],
    realization: &ChannelRealization,
    alpha: f64,
    weights: LossWeights,
) -> Result<()> {
    let pass = batch_pass(learner, samples, realization, 0, weights)?;
    let n = pass.len() as f64;
    let mut sum = vec![0.0; learner.decoder.param_count()];
    for g in &pass.decoder_grads {
        for (a, gi) in sum.iter_mut().zip(g) {
            *a += gi;
        }
    }
    let dec: Vec<f64> = learner.decoder.params().iter().zip(&sum).map(|(w, a)| w - alpha * (a / n)).collect();
    let mut gy = Vec::new();
    for row in &pass.grad_y {
        gy.extend(row.iter().map(|x| x / n));
    }
    let grad_x = channel_vjp(realization.h, &gy);
    let g = learner.encoder_backward(&pass.record, &grad_x)?;
    let enc: Vec<f64> = learner.encoder.params().iter().zip(&g).map(|(w, gi)| w - alpha * gi).collect();
    learner.decoder.set_params(&dec)?;
    learner.encoder.set_params(&enc)?;
    Ok(())
}

/// Learner, significance function and optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub learner: LearnerState,
    pub sef: Sef,
    pub cfg: TrainConfig,
    pub weights: LossWeights,
    pub channel: ChannelConfig,
    step: usize,
    velocity_decoder: Vec<f64>,
    velocity_encoder: Vec<f64>,
    velocity_sef: Vec<f64>,
    history: VecDeque<f64>,
}

impl Trainer {
    pub fn new(learner: LearnerState, sef: Sef, cfg: TrainConfig, weights: LossWeights, channel: ChannelConfig) -> Result<Self> {
        cfg.validate()?;
        channel.validate()?;
        if !learner.is_frozen() {
            return Err(Error::State("train the pragmatic classifier before the learner".into()));
        }
        Ok(Trainer {
            velocity_decoder: vec![0.0; learner.decoder.param_count()],
            velocity_encoder: vec![0.0; learner.encoder.param_count()],
            velocity_sef: vec![0.0; sef.param_count()],
            learner,
            sef,
            cfg,
            weights,
            channel,
            step: 0,
            history: VecDeque::with_capacity(crate::scm::grid::LOSS_HISTORY),
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Recent knowledge-base losses, oldest first.
    pub fn loss_history(&self) -> Vec<f64> {
        self.history.iter().copied().collect()
    }

    /// Draws batches and a channel block, then runs [`Trainer::step_with`].
    pub fn step<R: Rng, C: Rng>(&mut self, kb: &KnowledgeBase, meta: &MetaSet, batch_rng: &mut R, channel_rng: &mut C) -> Result<StepRecord> {
        let idx = sample_batch(kb.len(), self.cfg.batch.min(kb.len()), batch_rng)?;
        let midx = sample_meta_batch(meta, self.cfg.meta_batch.min(meta.len()), batch_rng)?;
        let realization = self.channel.draw(channel_rng)?;
        let samples: Vec<&Sample> = idx.iter().map(|&i| kb.sample(i)).collect();
        let meta_samples: Vec<&Sample> = midx.iter().map(|&i| &meta.samples()[i]).collect();
        self.step_with(&samples, &meta_samples, &realization)
    }

    /// One full bi-level step on given batches and channel block.
    pub fn step_with(&mut self, samples: &[&Sample], meta: &[&Sample], realization: &ChannelRealization) -> Result<StepRecord> {
        let step = self.step;
        self.step += 1;
        let ids: Vec<u64> = samples.iter().map(|s| s.id).collect();
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        if let Err(e) = realization.check_fade() {
            log::warn!("step {step}: {e}; skipping");
            return Ok(StepRecord::skipped(step, StepStatus::SkippedDeepFade, ids, labels, realization));
        }
        let cfg = self.cfg.clone();

        // Stage 1.
        let pass = batch_pass(&self.learner, samples, realization, 0, self.weights)?;
        if pass.losses.iter().any(|l| !l.is_finite()) {
            log::error!("step {step}: non-finite task loss; step aborted");
            let mut rec = StepRecord::skipped(step, StepStatus::AbortedNonFinite, ids, labels, realization);
            rec.losses = pass.losses;
            return Ok(rec);
        }
        let v: Vec<f64> = pass.losses.iter().map(|&l| self.sef.eval(l)).collect::<Result<_>>()?;

        // Stage 2.
        let enc_grads = match cfg.inner_scope {
            InnerScope::Full => Some(per_sample_encoder_grads(&self.learner, &pass)?),
            InnerScope::Decoder => None,
        };
        let temp = temp_update(&self.learner, &pass, &v, cfg.alpha, cfg.inner_scope, enc_grads.as_deref())?;
        let train_grads = inner_grads(&self.learner, &pass, cfg.inner_scope, enc_grads)?;

        // Stage 3.
        let (meta_loss, meta_grad) = meta_gradient(&temp, meta, realization, self.weights, cfg.inner_scope)?;
        let sef_grad = sef_meta_gradient(&self.sef, &pass.losses, &train_grads, &meta_grad, cfg.alpha)?;
        if !meta_loss.is_finite() || sef_grad.iter().any(|g| !g.is_finite()) {
            log::error!("step {step}: non-finite meta loss or gradient; step aborted");
            let mut rec = StepRecord::skipped(step, StepStatus::AbortedNonFinite, ids, labels, realization);
            rec.losses = pass.losses;
            return Ok(rec);
        }
        apply_momentum(&mut self.velocity_sef, &sef_grad, cfg.momentum);
        for (p, g) in self.sef.params_mut().iter_mut().zip(&self.velocity_sef) {
            *p -= cfg.beta * g;
        }

        // Stage 4.
        let v_new: Vec<f64> = pass.losses.iter().map(|&l| self.sef.eval(l)).collect::<Result<_>>()?;
        let n = pass.len() as f64;
        let mut dec_grad = vec![0.0; self.learner.decoder.param_count()];
        for (g, vi) in pass.decoder_grads.iter().zip(&v_new) {
            for (a, gi) in dec_grad.iter_mut().zip(g) {
                *a += vi * gi;
            }
        }
        dec_grad.iter_mut().for_each(|a| *a /= n);
        let fb = receiver_feedback(&pass, &v_new)?;
        let enc_grad = encoder_feedback_grad(&self.learner, &pass.record, &fb)?;
        apply_momentum(&mut self.velocity_decoder, &dec_grad, cfg.momentum);
        apply_momentum(&mut self.velocity_encoder, &enc_grad, cfg.momentum);
        for (p, g) in self.learner.decoder.params_mut().iter_mut().zip(&self.velocity_decoder) {
            *p -= cfg.alpha * g;
        }
        for (p, g) in self.learner.encoder.params_mut().iter_mut().zip(&self.velocity_encoder) {
            *p -= cfg.alpha * g;
        }

        for &l in &pass.losses {
            if self.history.len() == crate::scm::grid::LOSS_HISTORY {
                self.history.pop_front();
            }
            self.history.push_back(l);
        }
        Ok(StepRecord {
            step,
            status: StepStatus::Completed,
            ids,
            labels,
            losses: pass.losses,
            significance: v,
            significance_updated: v_new,
            meta_loss,
            decoder_grad_norm: norm(&dec_grad),
            encoder_grad_norm: norm(&enc_grad),
            sef_grad_norm: norm(&sef_grad),
            h_re: realization.h.re,
            h_im: realization.h.im,
            channel_id: realization.noise_seed,
        })
    }

    /// Moves a KAN significance function onto a finer grid, fitting the
    /// transform on recent losses plus a uniform stratum.
    pub fn extend_grid<R: Rng>(&mut self, target: SplineSpec, rng: &mut R) -> Result<()> {
        let Sef::Kan(kan) = &self.sef else {
            return Err(Error::Config("grid extension needs a KAN significance function".into()));
        };
        let samples = extension_samples(&self.loss_history(), &target, rng);
        let next = extend_all(kan, target, &samples)?;
        self.velocity_sef = vec![0.0; next.param_count()];
        self.sef = Sef::Kan(next);
        Ok(())
    }
}

/// Plain SGD copies the gradient; otherwise `v <- mu v + g`.
fn apply_momentum(velocity: &mut [f64], grad: &[f64], mu: f64) {
    for (v, g) in velocity.iter_mut().zip(grad) {
        *v = if mu == 0.0 { *g } else { mu * *v + g };
    }
}
