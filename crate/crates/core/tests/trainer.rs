use num_complex::Complex64;
use talsc_core::channel::{ChannelConfig, ChannelRealization};
use talsc_core::data::Sample;
use talsc_core::rng::{child, Stream};
use talsc_core::scm::{Kan, Sef, SplineSpec};
use talsc_core::trainer::{
    batch_pass, encoder_feedback, encoder_feedback_grad, monolithic_encoder_grad, plain_sgd_step, receiver_feedback,
    scm_update, scm_update_closed_form, sef_meta_gradient, temp_update, InnerScope, StepStatus, TrainConfig, Trainer,
};
use talsc_core::verify::{toy_learner, toy_samples, toy_weights};
use talsc_core::Error;

fn refs(s: &[Sample]) -> Vec<&Sample> {
    s.iter().collect()
}

fn kan_sef(seed: u64) -> Sef {
    let spec = SplineSpec::new(0.0, 10.0, 8, 3).unwrap();
    Sef::kan(vec![1, 4, 1], spec, &mut child(seed, Stream::Init, 1)).unwrap()
}

fn trainer(sef: Sef, cfg: TrainConfig) -> Trainer {
    Trainer::new(toy_learner(3).unwrap(), sef, cfg, toy_weights(), ChannelConfig::rayleigh(10.0)).unwrap()
}

fn rayleigh(seed: u64) -> ChannelRealization {
    ChannelConfig::rayleigh(10.0).draw(&mut child(seed, Stream::Channel, 0)).unwrap()
}

#[test]
fn constant_significance_reproduces_plain_sgd_bit_exactly() {
    let cfg = TrainConfig {
        alpha: 0.2,
        ..TrainConfig::default()
    };
    let mut t = trainer(Sef::Constant(1.0), cfg);
    let mut reference = toy_learner(3).unwrap();
    let meta = toy_samples(4, 500, 9);
    for step in 0..5u64 {
        let batch = toy_samples(6, 100 * step, 9);
        let r = rayleigh(step);
        t.step_with(&refs(&batch), &refs(&meta), &r).unwrap();
        plain_sgd_step(&mut reference, &refs(&batch), &r, 0.2, toy_weights()).unwrap();
        assert_eq!(t.learner.encoder.params(), reference.encoder.params(), "encoder, step {step}");
        assert_eq!(t.learner.decoder.params(), reference.decoder.params(), "decoder, step {step}");
    }
}

#[test]
fn zero_meta_rate_keeps_significances_and_updates_like_stage_two() {
    let cfg = TrainConfig {
        alpha: 0.3,
        beta: 0.0,
        ..TrainConfig::default()
    };
    let sef = kan_sef(1);
    let mut t = trainer(sef.clone(), cfg);
    let batch = toy_samples(6, 0, 2);
    let meta = toy_samples(4, 50, 2);
    let r = rayleigh(4);
    let before = t.learner.clone();
    let rec = t.step_with(&refs(&batch), &refs(&meta), &r).unwrap();
    assert_eq!(t.sef, sef);
    assert_eq!(rec.significance, rec.significance_updated);
    let pass = batch_pass(&before, &refs(&batch), &r, 0, toy_weights()).unwrap();
    let temp = temp_update(&before, &pass, &rec.significance, 0.3, InnerScope::Decoder, None).unwrap();
    for (a, b) in t.learner.decoder.params().iter().zip(temp.decoder.params()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let cfg = TrainConfig {
        alpha: 0.0,
        beta: 0.5,
        ..TrainConfig::default()
    };
    let sef = kan_sef(2);
    let mut t = trainer(sef.clone(), cfg);
    let before = t.learner.clone();
    let rec = t
        .step_with(&refs(&toy_samples(6, 0, 3)), &refs(&toy_samples(4, 50, 3)), &rayleigh(1))
        .unwrap();
    assert_eq!(rec.status, StepStatus::Completed);
    assert_eq!(t.sef, sef);
    assert_eq!(t.learner, before);
}

#[test]
fn temporary_update_special_cases() {
    let learner = toy_learner(5).unwrap();
    let batch = toy_samples(5, 0, 5);
    let r = rayleigh(2);
    let pass = batch_pass(&learner, &refs(&batch), &r, 0, toy_weights()).unwrap();
    let zero = temp_update(&learner, &pass, &[0.0; 5], 0.7, InnerScope::Decoder, None).unwrap();
    assert_eq!(zero.decoder.params(), learner.decoder.params());

    let single = batch_pass(&learner, &refs(&batch[..1]), &r, 0, toy_weights()).unwrap();
    let t = temp_update(&learner, &single, &[0.6], 0.7, InnerScope::Decoder, None).unwrap();
    for ((after, before), g) in t.decoder.params().iter().zip(learner.decoder.params()).zip(&single.decoder_grads[0]) {
        assert!((after - (before - 0.7 * 0.6 * g)).abs() < 1e-15);
    }
}

#[test]
fn orthogonal_gradients_leave_the_significance_function_unchanged() {
    let sef = kan_sef(3);
    let train = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
    let meta = vec![vec![0.0, 0.0, 2.0], vec![0.0, 0.0, -1.0]];
    let next = scm_update_closed_form(&sef, &[1.0, 4.0], &train, &meta, 0.1, 0.1, 0.0).unwrap();
    assert_eq!(next, sef);
}

#[test]
fn scalar_closed_form_matches_hand_arithmetic() {
    // One train and one meta sample with scalar gradients a and b on a
    // quadratic; V is a single spline with a sigmoid.
    let spec = SplineSpec::new(0.0, 10.0, 4, 3).unwrap();
    let mut kan = Kan::zeros(vec![1, 1], spec).unwrap();
    for (i, c) in kan.params_mut().iter_mut().enumerate() {
        *c = 0.1 * i as f64 - 0.2;
    }
    let sef = Sef::Kan(kan.clone());
    let (a, b, alpha, beta, loss) = (1.5, -0.4, 0.3, 0.05, 2.5);
    let next = scm_update_closed_form(&sef, &[loss], &[vec![a]], &[vec![b]], alpha, beta, 0.0).unwrap();
    let basis = spec.basis(loss);
    let raw: f64 = basis.iter().zip(kan.params()).map(|(x, c)| x * c).sum();
    let v = 1.0 / (1.0 + (-raw).exp());
    for i in 0..basis.len() {
        let want = kan.params()[i] + alpha * beta * (b * a) * v * (1.0 - v) * basis[i];
        assert!((next.params()[i] - want).abs() < 1e-12);
    }
}

#[test]
fn aligned_samples_gain_significance_and_opposed_samples_lose_it() {
    let sef = kan_sef(4);
    let g = vec![0.3, -1.2, 0.8];
    let anti: Vec<f64> = g.iter().map(|x| -x).collect();
    let losses = [1.0, 8.0];
    let grad = sef_meta_gradient(&sef, &losses, &[g.clone(), anti], &g, 0.5).unwrap();
    let next = scm_update(&sef, &grad, 0.5);
    assert!(next.eval(1.0).unwrap() > sef.eval(1.0).unwrap());
    assert!(next.eval(8.0).unwrap() < sef.eval(8.0).unwrap());
}

#[test]
fn closed_form_refuses_momentum() {
    let sef = kan_sef(5);
    let r = scm_update_closed_form(&sef, &[1.0], &[vec![1.0]], &[vec![1.0]], 0.1, 0.1, 0.5);
    assert!(matches!(r, Err(Error::Contract(_))));
}

#[test]
fn meta_loss_decreases_when_only_the_significance_function_learns() {
    let learner = toy_learner(11).unwrap();
    let batch = toy_samples(8, 0, 11);
    let meta = toy_samples(4, 100, 11);
    let r = rayleigh(11);
    let w = toy_weights();
    let pass = batch_pass(&learner, &refs(&batch), &r, 0, w).unwrap();
    let mut sef = kan_sef(6);
    let meta_loss = |s: &Sef| {
        let v: Vec<f64> = pass.losses.iter().map(|&l| s.eval(l).unwrap()).collect();
        let t = temp_update(&learner, &pass, &v, 2.0, InnerScope::Decoder, None).unwrap();
        talsc_core::trainer::meta_pass(&t, &refs(&meta), &r, w, InnerScope::Decoder).unwrap()
    };
    let first = meta_loss(&sef).loss();
    let mut last = first;
    for _ in 0..50 {
        let mp = meta_loss(&sef);
        last = mp.loss();
        let g = sef_meta_gradient(&sef, &pass.losses, &pass.decoder_grads, &mp.mean_grad(), 2.0).unwrap();
        sef = scm_update(&sef, &g, 1e-3);
    }
    assert!(last < first, "{last} !< {first}");
}

#[test]
fn unit_channel_feedback_equals_direct_backprop() {
    let learner = toy_learner(6).unwrap();
    let batch = toy_samples(5, 0, 6);
    let r = ChannelConfig::awgn(10.0).draw(&mut child(6, Stream::Channel, 0)).unwrap();
    let v = [0.2, 0.9, 0.5, 1.0, 0.1];
    let pass = batch_pass(&learner, &refs(&batch), &r, 0, toy_weights()).unwrap();
    let fb = receiver_feedback(&pass, &v).unwrap();
    let g = encoder_feedback_grad(&learner, &pass.record, &fb).unwrap();
    let mono = monolithic_encoder_grad(&learner, &refs(&batch), &r, 0, &v, toy_weights()).unwrap();
    assert_eq!(g, mono);
}

#[test]
fn zero_feedback_leaves_the_encoder_alone() {
    let mut learner = toy_learner(7).unwrap();
    let batch = toy_samples(4, 0, 7);
    let pass = batch_pass(&learner, &refs(&batch), &rayleigh(3), 0, toy_weights()).unwrap();
    let fb = receiver_feedback(&pass, &[0.0; 4]).unwrap();
    let before = learner.encoder.params().to_vec();
    encoder_feedback(&mut learner, &pass.record, &fb, 0.5).unwrap();
    assert_eq!(learner.encoder.params(), &before[..]);
}

#[test]
fn stale_transmitter_record_is_rejected() {
    let mut learner = toy_learner(8).unwrap();
    let batch = toy_samples(4, 0, 8);
    let pass = batch_pass(&learner, &refs(&batch), &rayleigh(5), 0, toy_weights()).unwrap();
    let fb = receiver_feedback(&pass, &[1.0; 4]).unwrap();
    learner.encoder.params_mut()[0] += 0.1;
    assert!(matches!(encoder_feedback_grad(&learner, &pass.record, &fb), Err(Error::State(_))));
}

#[test]
fn deep_fade_skips_the_step() {
    let mut t = trainer(kan_sef(7), TrainConfig::default());
    let before = t.learner.clone();
    let fade = ChannelRealization::fixed(Complex64::new(1e-14, 0.0));
    let rec = t
        .step_with(&refs(&toy_samples(4, 0, 1)), &refs(&toy_samples(2, 9, 1)), &fade)
        .unwrap();
    assert_eq!(rec.status, StepStatus::SkippedDeepFade);
    assert_eq!(t.learner, before);
}

#[test]
fn full_scope_step_runs_and_records_finite_values() {
    let cfg = TrainConfig {
        inner_scope: InnerScope::Full,
        alpha: 0.1,
        beta: 0.01,
        ..TrainConfig::default()
    };
    let mut t = trainer(Sef::mlp(&[4], &mut child(1, Stream::Init, 3)).unwrap(), cfg);
    let rec = t
        .step_with(&refs(&toy_samples(6, 0, 4)), &refs(&toy_samples(3, 40, 4)), &rayleigh(9))
        .unwrap();
    assert_eq!(rec.status, StepStatus::Completed);
    assert!(rec.meta_loss.is_finite());
    assert_eq!(rec.losses.len(), 6);
}

#[test]
fn momentum_runs_with_velocity() {
    let cfg = TrainConfig {
        momentum: 0.9,
        alpha: 0.1,
        ..TrainConfig::default()
    };
    let mut t = trainer(kan_sef(8), cfg);
    for s in 0..3 {
        let rec = t
            .step_with(&refs(&toy_samples(6, 10 * s, 4)), &refs(&toy_samples(3, 400, 4)), &rayleigh(s))
            .unwrap();
        assert_eq!(rec.status, StepStatus::Completed);
    }
}

#[test]
fn grid_extension_keeps_significances() {
    let mut t = trainer(kan_sef(9), TrainConfig::default());
    for s in 0..4 {
        t.step_with(&refs(&toy_samples(8, 10 * s, 4)), &refs(&toy_samples(3, 400, 4)), &rayleigh(s))
            .unwrap();
    }
    let before: Vec<f64> = (0..50).map(|i| t.sef.eval(i as f64 * 0.2).unwrap()).collect();
    let target = SplineSpec::new(0.0, 10.0, 40, 3).unwrap();
    t.extend_grid(target, &mut child(1, Stream::Batch, 0)).unwrap();
    assert_eq!(t.sef.param_count(), 4 * 2 * 43);
    for (i, b) in before.iter().enumerate() {
        assert!((t.sef.eval(i as f64 * 0.2).unwrap() - b).abs() < 1e-2);
    }
}

#[test]
fn aggregated_meta_gradient_is_mean_of_per_sample_gradients() {
    let learner = toy_learner(12).unwrap();
    let meta = toy_samples(6, 0, 12);
    let r = rayleigh(12);
    for scope in [InnerScope::Decoder, InnerScope::Full] {
        let mp = talsc_core::trainer::meta_pass(&learner, &refs(&meta), &r, toy_weights(), scope).unwrap();
        let n = mp.per_sample.len() as f64;
        let mut mean = vec![0.0; mp.per_sample[0].len()];
        for row in &mp.per_sample {
            for (m, g) in mean.iter_mut().zip(row) {
                *m += g / n;
            }
        }
        let (loss, grad) = talsc_core::trainer::meta_gradient(&learner, &refs(&meta), &r, toy_weights(), scope).unwrap();
        assert_eq!(loss, mp.loss());
        assert_eq!(grad.len(), mean.len());
        let scale = mean.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for (a, b) in grad.iter().zip(&mean) {
            assert!((a - b).abs() <= 1e-10 * scale.max(1.0), "{a} vs {b}");
        }
    }
}
