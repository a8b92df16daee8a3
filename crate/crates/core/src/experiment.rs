//! End-to-end experiment runs: data and classifier preparation, bias
//! injection, training with periodic evaluation, and the result bundle.
//!
//! Bundle layout under the run directory:
//!
//! ```text
//! config.toml                 canonical config
//! results/metrics.csv         one row per evaluation
//! results/sef_epoch_NNNNNN.csv significance curve at each evaluation
//! results/step_records.jsonl  one StepRecord per training step
//! results/kb_snapshot.csv     id,label,shadow_label,v_i after training
//! results/kb_losses.csv       id,loss,v_i,corrupted after training
//! results/loss_histogram.csv  losses of the last evaluation window
//! results/confusion.csv       final confusion matrix
//! results/summary.json        final scalars
//! checkpoints/final.bin       learner, classifier and significance parameters
//! ```
//!
//! A failed run leaves whatever was written plus `results/FAILED`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::channel::{equalize, ChannelConfig, ChannelRealization};
use crate::checkpoint::{self, Array};
use crate::config::{BiasKind, DataSource, ExperimentConfig, Mode, SefBackend};
use crate::data::{load_cifar10_batch, Dataset, Sample, ToyDigits};
use crate::error::{Error, Result};
use crate::kb::{apply_flip, apply_imbalance, split_meta, FlipSpec, ImbalanceSpec, KnowledgeBase, MetaSet};
use crate::metrics::{f1_per_class, loss_histograms, macro_f1, ms_ssim, spearman, ConfusionMatrix, MsSsimConfig};
use crate::nn::{train_pragmatic_classifier, LearnerState, LossWeights, Network, Topology};
use crate::rng::{child, substream, Rng, Stream};
use crate::scm::{verify_theorem1, Sef, SplineSpec};
use crate::tensor::Tensor;
use crate::trainer::{batch_pass, StepRecord, StepStatus, Trainer};

/// Rows per evaluation block; each block gets its own channel draw.
const EVAL_BLOCK: usize = 64;
/// Points on each exported significance curve.
const SEF_PROBES: usize = 200;
const HISTOGRAM_BINS: usize = 20;

/// Clean data and the frozen classifier, shared by every bias setting.
#[derive(Debug, Clone)]
pub struct Base {
    pub topology: Topology,
    pub classifier: Network,
    pub classifier_accuracy: f64,
    /// Clean pool the knowledge base and metadata are drawn from.
    pub pool: Dataset,
    pub test: Dataset,
}

/// A base plus one bias realization.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub base: Base,
    pub kb: KnowledgeBase,
    pub meta: MetaSet,
}

/// Splits every class in order into classifier, pool and test parts.
fn split_by_class(data: Dataset, sizes: [usize; 3]) -> Result<[Dataset; 3]> {
    let classes = data.classes();
    let shape = data.shape();
    let mut seen = vec![0usize; classes];
    let mut parts: [Vec<Sample>; 3] = Default::default();
    for s in data.into_samples() {
        let k = seen[s.label];
        seen[s.label] += 1;
        let mut edge = 0;
        for (p, &size) in sizes.iter().enumerate() {
            edge += size;
            if k < edge {
                parts[p].push(s);
                break;
            }
        }
    }
    let need: usize = sizes.iter().sum();
    if let Some((c, have)) = seen.iter().enumerate().find(|(_, &n)| n < need) {
        return Err(Error::Validation(format!("class {c} has {have} samples, the splits need {need}")));
    }
    let [a, b, c] = parts;
    Ok([
        Dataset::new(a, classes, shape)?,
        Dataset::new(b, classes, shape)?,
        Dataset::new(c, classes, shape)?,
    ])
}

/// Builds the data splits and trains the frozen classifier.
pub fn prepare_base(cfg: &ExperimentConfig) -> Result<Base> {
    cfg.validate()?;
    let d = &cfg.data;
    let sizes = [d.classifier_per_class, d.kb_per_class, d.test_per_class];
    let data = match d.source {
        DataSource::Toy => {
            let mut gen = ToyDigits::new(d.side, d.classes);
            gen.noise = d.noise;
            gen.dropout = d.dropout;
            gen.generate(sizes.iter().sum(), 0, &mut substream(cfg.seed, Stream::Data))?
        }
        DataSource::Cifar10 => {
            let path = d.path.as_ref().expect("validated");
            let full = load_cifar10_batch(path, 0)?;
            if full.classes() != d.classes {
                return Err(Error::Config(format!(
                    "data.classes is {} but the batch has {} classes",
                    d.classes,
                    full.classes()
                )));
            }
            full
        }
    };
    let l = &cfg.learner;
    let topology = Topology {
        image: data.shape(),
        symbols: l.symbols,
        conv_channels: l.conv_channels.clone(),
        kernel: l.kernel,
        stride: l.stride,
        padding: l.padding,
        classes: d.classes,
        classifier_hidden: l.classifier_hidden,
    };
    let [cls, pool, test] = split_by_class(data, sizes)?;
    let net = Network::new(topology.classifier_layers())?.init(&mut child(cfg.seed, Stream::Init, 1));
    let (classifier, classifier_accuracy) =
        train_pragmatic_classifier(net, &cls, &test, &l.classifier, &mut child(cfg.seed, Stream::Init, 2))?;
    log::info!("classifier held-out accuracy {classifier_accuracy:.4}");
    Ok(Base {
        topology,
        classifier,
        classifier_accuracy,
        pool,
        test,
    })
}

/// Takes the clean metadata out of the pool, then corrupts the rest.
pub fn inject_bias(base: &Base, cfg: &ExperimentConfig) -> Result<Prepared> {
    let (meta, rest) = split_meta(base.pool.clone(), cfg.meta.per_class)?;
    let mut rng = substream(cfg.seed, Stream::Kb);
    let classes = cfg.data.classes;
    let kb = match cfg.bias.kind {
        BiasKind::None => KnowledgeBase::clean(rest),
        BiasKind::Flip => apply_flip(rest, FlipSpec { p: cfg.bias.fnr, classes }, &mut rng)?,
        BiasKind::Imbalance => {
            let max_class = rest.class_counts().into_iter().min().unwrap_or(0);
            let spec = ImbalanceSpec {
                factor: cfg.bias.factor,
                max_class,
                classes,
            };
            apply_imbalance(rest, spec, &mut rng)?
        }
    };
    if kb.len() < cfg.train.batch {
        return Err(Error::Validation(format!(
            "knowledge base has {} samples, fewer than the batch size {}",
            kb.len(),
            cfg.train.batch
        )));
    }
    Ok(Prepared {
        base: base.clone(),
        kb,
        meta,
    })
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    inject_bias(&prepare_base(cfg)?, cfg)
}

/// Test-set scores of one learner state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub sra: f64,
    pub macro_f1: f64,
    pub f1: Vec<f64>,
    pub ms_ssim_mean: f64,
    pub ms_ssim_minority: f64,
    #[serde(skip)]
    pub confusion: ConfusionMatrix,
}

/// Draws until the block is not in a deep fade.
fn usable_block<R: rand::Rng>(channel: &ChannelConfig, rng: &mut R) -> Result<ChannelRealization> {
    loop {
        let r = channel.draw(rng)?;
        if r.check_fade().is_ok() {
            return Ok(r);
        }
        log::warn!("evaluation block in deep fade; redrawing");
    }
}

/// Reconstructs `samples` through the channel in blocks.
pub fn reconstruct(learner: &LearnerState, samples: &[&Sample], channel: &ChannelConfig, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for block in samples.chunks(EVAL_BLOCK) {
        let rows: Vec<&[f64]> = block.iter().map(|s| s.image.as_slice()).collect();
        let batch = Tensor::stack(&rows, &[learner.source_len()])?;
        let record = learner.encode(&batch)?;
        let realization = usable_block(channel, rng)?;
        let y = realization.apply(record.x.data(), 0)?;
        let xhat = Tensor::new(vec![block.len(), learner.channel_reals()], equalize(&y, &realization)?)?;
        let recon = learner.forward_decoder(&xhat)?;
        for i in 0..block.len() {
            out.push(recon.row(i).to_vec());
        }
    }
    Ok(out)
}

pub fn evaluate(
    learner: &LearnerState,
    test: &Dataset,
    channel: &ChannelConfig,
    minority: usize,
    rng: &mut Rng,
) -> Result<Evaluation> {
    let samples: Vec<&Sample> = test.samples().iter().collect();
    let recon = reconstruct(learner, &samples, channel, rng)?;
    let shape = test.shape();
    let ssim_cfg = MsSsimConfig::default();
    let mut confusion = ConfusionMatrix::new(test.classes());
    let mut ssim_all = 0.0;
    let (mut ssim_min, mut n_min) = (0.0, 0usize);
    for (s, r) in samples.iter().zip(&recon) {
        confusion.add(s.label, learner.classify(r)?)?;
        let clipped: Vec<f64> = r.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let q = ms_ssim(&clipped, &s.image, shape, &ssim_cfg)?;
        ssim_all += q;
        if s.label == minority {
            ssim_min += q;
            n_min += 1;
        }
    }
    let f1 = f1_per_class(&confusion);
    Ok(Evaluation {
        sra: confusion.accuracy()?,
        macro_f1: macro_f1(&confusion),
        f1,
        ms_ssim_mean: ssim_all / samples.len() as f64,
        ms_ssim_minority: if n_min == 0 { f64::NAN } else { ssim_min / n_min as f64 },
        confusion,
    })
}

/// Final scalars of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub mode: String,
    pub steps: usize,
    pub completed_steps: usize,
    pub sra: f64,
    pub macro_f1: f64,
    pub f1: Vec<f64>,
    pub minority_class: usize,
    pub minority_f1: f64,
    pub ms_ssim_mean: f64,
    pub ms_ssim_minority: f64,
    /// Mean meta-loss over the last fifth of the completed steps.
    pub meta_loss_smoothed: f64,
    /// Spearman of (loss, significance) over the last evaluation window.
    pub spearman_window: f64,
    /// Spearman of (loss, significance) over the whole knowledge base.
    pub spearman_kb: f64,
    pub histogram_overlap: f64,
    pub classifier_accuracy: f64,
    pub flipped_fraction: f64,
    pub sef_params: usize,
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.8}")
    } else {
        "nan".into()
    }
}

fn metrics_header(classes: usize) -> String {
    let mut h = String::from("step,sra,macro_f1");
    for c in 0..classes {
        write!(h, ",f1_class_{c}").expect("string write");
    }
    h.push_str(",ms_ssim_mean,ms_ssim_minority,meta_loss\n");
    h
}

fn metrics_row(step: usize, e: &Evaluation, meta_loss: f64) -> String {
    let mut r = format!("{step},{},{}", fmt(e.sra), fmt(e.macro_f1));
    for f in &e.f1 {
        write!(r, ",{}", fmt(*f)).expect("string write");
    }
    writeln!(r, ",{},{},{}", fmt(e.ms_ssim_mean), fmt(e.ms_ssim_minority), fmt(meta_loss)).expect("string write");
    r
}

fn sef_curve(sef: &Sef, spec: &SplineSpec) -> Result<String> {
    let mut s = String::from("loss,significance\n");
    for (x, v) in sef.probe(spec.a, spec.b, SEF_PROBES)? {
        writeln!(s, "{},{}", fmt(x), fmt(v)).expect("string write");
    }
    Ok(s)
}

/// Mean task loss of the current learner over the whole metadata set.
fn direct_meta_loss(trainer: &Trainer, meta: &MetaSet, rng: &mut Rng) -> Result<f64> {
    let samples: Vec<&Sample> = meta.samples().iter().collect();
    let mut total = 0.0;
    for block in samples.chunks(EVAL_BLOCK) {
        let r = usable_block(&trainer.channel, rng)?;
        let pass = batch_pass(&trainer.learner, block, &r, 0, trainer.weights)?;
        total += pass.losses.iter().sum::<f64>();
    }
    Ok(total / samples.len() as f64)
}

/// Class with the fewest knowledge-base samples, lowest index on ties.
pub fn minority_class(kb: &KnowledgeBase) -> usize {
    let counts = kb.class_counts();
    let min = counts.iter().copied().min().unwrap_or(0);
    counts.iter().position(|&c| c == min).unwrap_or(0)
}

pub fn build_sef(cfg: &ExperimentConfig, mode: Mode) -> Result<Sef> {
    if mode == Mode::Baseline {
        return Ok(Sef::Constant(1.0));
    }
    let mut rng = child(cfg.seed, Stream::Init, 3);
    let mut sef = match cfg.scm.backend {
        SefBackend::Kan => Sef::kan(cfg.scm.shape.clone(), cfg.scm.spline()?, &mut rng)?,
        SefBackend::Mlp => Sef::mlp(&cfg.scm.mlp_widths()?, &mut rng)?,
        SefBackend::Constant => Sef::Constant(1.0),
    };
    if let Some(v) = cfg.scm.initial_significance {
        sef.shift_logit((v / (1.0 - v)).ln());
    }
    Ok(sef)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Runs one mode into `dir`, writing the result bundle.
pub fn run_mode(prep: &Prepared, cfg: &ExperimentConfig, mode: Mode, dir: &Path) -> Result<RunSummary> {
    let results = dir.join("results");
    fs::create_dir_all(&results)?;
    fs::create_dir_all(dir.join("checkpoints"))?;
    let _ = fs::remove_file(results.join("FAILED"));
    match run_inner(prep, cfg, mode, dir) {
        Ok(s) => Ok(s),
        Err(e) => {
            fs::write(results.join("FAILED"), format!("{e}\n"))?;
            Err(e)
        }
    }
}

fn run_inner(prep: &Prepared, cfg: &ExperimentConfig, mode: Mode, dir: &Path) -> Result<RunSummary> {
    let results = dir.join("results");
    fs::write(dir.join("config.toml"), cfg.to_canonical())?;
    let seed = cfg.seed;
    let base = &prep.base;
    let mut learner = LearnerState::from_topology(&base.topology, &mut child(seed, Stream::Init, 0))?;
    learner.freeze_classifier(base.classifier.clone())?;
    let weights = LossWeights::from_compression(cfg.learner.symbols, learner.source_len(), cfg.learner.gamma)?;
    let sef = build_sef(cfg, mode)?;
    let mut trainer = Trainer::new(learner, sef, cfg.train.clone(), weights, cfg.channel.clone())?;
    let spec = cfg.scm.spline()?;
    let minority = minority_class(&prep.kb);
    let flipped: HashSet<u64> = prep.kb.entries().iter().filter(|e| e.is_corrupted()).map(|e| e.sample.id).collect();

    let mut metrics = create(&results.join("metrics.csv"))?;
    metrics.write_all(metrics_header(cfg.data.classes).as_bytes())?;
    let mut records_out = create(&results.join("step_records.jsonl"))?;

    let mut batch_rng = substream(seed, Stream::Batch);
    let mut channel_rng = substream(seed, Stream::Channel);
    let mut meta_losses: Vec<f64> = Vec::new();
    let mut window: Vec<StepRecord> = Vec::new();
    let mut last_window: Vec<StepRecord> = Vec::new();

    let eval_at = |trainer: &Trainer, step: usize, window: &[StepRecord], out: &mut BufWriter<File>| -> Result<Evaluation> {
        let mut rng = child(seed, Stream::Eval, step as u64);
        let e = evaluate(&trainer.learner, &base.test, &trainer.channel, minority, &mut rng)?;
        let done: Vec<f64> = window
            .iter()
            .filter(|r| r.status == StepStatus::Completed)
            .map(|r| r.meta_loss)
            .collect();
        let meta_loss = if done.is_empty() {
            direct_meta_loss(trainer, &prep.meta, &mut rng)?
        } else {
            done.iter().sum::<f64>() / done.len() as f64
        };
        out.write_all(metrics_row(step, &e, meta_loss).as_bytes())?;
        out.flush()?;
        fs::write(results.join(format!("sef_epoch_{step:06}.csv")), sef_curve(&trainer.sef, &spec)?)?;
        log::info!(
            "{} step {step}: sra {:.4} macro-F1 {:.4} meta-loss {meta_loss:.4}",
            mode.name(),
            e.sra,
            e.macro_f1
        );
        Ok(e)
    };

    let mut last = eval_at(&trainer, 0, &[], &mut metrics)?;
    for t in 1..=cfg.train.steps {
        let rec = trainer.step(&prep.kb, &prep.meta, &mut batch_rng, &mut channel_rng)?;
        serde_json::to_writer(&mut records_out, &rec).map_err(|e| Error::Format(e.to_string()))?;
        records_out.write_all(b"\n")?;
        if rec.status == StepStatus::AbortedNonFinite {
            records_out.flush()?;
            return Err(Error::NonFinite(format!("step {} produced a non-finite loss", rec.step)));
        }
        if rec.status == StepStatus::Completed {
            meta_losses.push(rec.meta_loss);
        }
        window.push(rec);
        if mode == Mode::Talsc && cfg.scm.extend_at == Some(t) {
            let target = SplineSpec::new(spec.a, spec.b, cfg.scm.extend_to.expect("validated"), spec.order)?;
            trainer.extend_grid(target, &mut child(seed, Stream::Init, 4))?;
            log::info!("step {t}: significance grid extended to {}", target.grid);
        }
        if t % cfg.train.eval_every == 0 || t == cfg.train.steps {
            last = eval_at(&trainer, t, &window, &mut metrics)?;
            last_window = std::mem::take(&mut window);
        }
    }
    records_out.flush()?;
    metrics.flush()?;

    // Knowledge-base sweep with the final parameters.
    let mut kb = prep.kb.clone();
    let samples: Vec<&Sample> = prep.kb.entries().iter().map(|e| &e.sample).collect();
    let mut rng = child(seed, Stream::Eval, u64::MAX);
    let mut kb_losses = Vec::with_capacity(samples.len());
    for block in samples.chunks(EVAL_BLOCK) {
        let r = usable_block(&trainer.channel, &mut rng)?;
        kb_losses.extend(batch_pass(&trainer.learner, block, &r, 0, trainer.weights)?.losses);
    }
    let mut kb_csv = String::from("id,loss,v_i,corrupted\n");
    let mut kb_v = Vec::with_capacity(kb_losses.len());
    for (i, &l) in kb_losses.iter().enumerate() {
        let v = trainer.sef.eval(l)?;
        kb.set_significance(i, v);
        kb_v.push(v);
        let e = &kb.entries()[i];
        writeln!(kb_csv, "{},{},{},{}", e.sample.id, fmt(l), fmt(v), u8::from(e.is_corrupted())).expect("string write");
    }
    fs::write(results.join("kb_losses.csv"), kb_csv)?;
    kb.write_snapshot(create(&results.join("kb_snapshot.csv"))?)?;

    let hist = loss_histograms(&last_window, &flipped, HISTOGRAM_BINS, spec.a, spec.b)?;
    fs::write(results.join("loss_histogram.csv"), hist.to_csv())?;
    fs::write(results.join("confusion.csv"), last.confusion.to_csv())?;

    let (wl, wv): (Vec<f64>, Vec<f64>) = last_window
        .iter()
        .filter(|r| r.status == StepStatus::Completed)
        .flat_map(|r| r.losses.iter().copied().zip(r.significance.iter().copied()))
        .unzip();
    let tail = (meta_losses.len() / 5).max(1).min(meta_losses.len());
    let smoothed = if meta_losses.is_empty() {
        f64::NAN
    } else {
        meta_losses[meta_losses.len() - tail..].iter().sum::<f64>() / tail as f64
    };
    let summary = RunSummary {
        mode: mode.name().into(),
        steps: cfg.train.steps,
        completed_steps: meta_losses.len(),
        sra: last.sra,
        macro_f1: last.macro_f1,
        f1: last.f1.clone(),
        minority_class: minority,
        minority_f1: last.f1[minority],
        ms_ssim_mean: last.ms_ssim_mean,
        ms_ssim_minority: last.ms_ssim_minority,
        meta_loss_smoothed: smoothed,
        spearman_window: if wl.len() >= 2 { spearman(&wl, &wv)? } else { f64::NAN },
        spearman_kb: if kb_losses.len() >= 2 { spearman(&kb_losses, &kb_v)? } else { f64::NAN },
        histogram_overlap: hist.overlap(),
        classifier_accuracy: base.classifier_accuracy,
        flipped_fraction: prep.kb.flipped_fraction(),
        sef_params: trainer.sef.param_count(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(results.join("summary.json"), json + "\n")?;

    let l = &trainer.learner;
    checkpoint::save(
        &dir.join("checkpoints").join("final.bin"),
        &[
            Array::vector("encoder", l.encoder.params()),
            Array::vector("decoder", l.decoder.params()),
            Array::vector("classifier", l.classifier().params()),
            Array::vector("significance", trainer.sef.params()),
        ],
    )?;
    Ok(summary)
}

/// Runs every mode the config asks for under `out`; `both` also writes
/// `delta.csv` (talsc minus baseline).
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<RunSummary>> {
    let prep = prepare(cfg)?;
    run_prepared(&prep, cfg, out)
}

pub fn run_prepared(prep: &Prepared, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<RunSummary>> {
    fs::create_dir_all(out)?;
    let mut summaries = Vec::new();
    for &mode in cfg.mode.runs() {
        let dir = if cfg.mode == Mode::Both { out.join(mode.name()) } else { out.to_path_buf() };
        summaries.push(run_mode(prep, cfg, mode, &dir)?);
    }
    if let [t, b] = summaries.as_slice() {
        fs::write(out.join("delta.csv"), delta_csv(t, b))?;
    }
    Ok(summaries)
}

fn delta_csv(t: &RunSummary, b: &RunSummary) -> String {
    let mut s = String::from("metric,talsc,baseline,delta\n");
    for (name, x, y) in [
        ("sra", t.sra, b.sra),
        ("macro_f1", t.macro_f1, b.macro_f1),
        ("minority_f1", t.minority_f1, b.minority_f1),
        ("ms_ssim_mean", t.ms_ssim_mean, b.ms_ssim_mean),
        ("ms_ssim_minority", t.ms_ssim_minority, b.ms_ssim_minority),
        ("meta_loss_smoothed", t.meta_loss_smoothed, b.meta_loss_smoothed),
    ] {
        writeln!(s, "{name},{},{},{}", fmt(x), fmt(y), fmt(x - y)).expect("string write");
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    SnrDb,
    Fnr,
    ImbalanceFactor,
    GridSize,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::SnrDb => "snr_db",
            SweepAxis::Fnr => "fnr",
            SweepAxis::ImbalanceFactor => "imbalance_factor",
            SweepAxis::GridSize => "grid_size",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "snr_db" => SweepAxis::SnrDb,
            "fnr" => SweepAxis::Fnr,
            "imbalance_factor" => SweepAxis::ImbalanceFactor,
            "grid_size" => SweepAxis::GridSize,
            other => {
                return Err(Error::Validation(format!(
                    "unknown sweep axis {other:?}; expected snr_db, fnr, imbalance_factor or grid_size"
                )))
            }
        })
    }
}

/// Runs one experiment per axis value under `out/<axis>_<value>` and writes
/// `out/sweep.csv`. The grid-size axis instead writes the spline
/// approximation table for a sine target to `out/theorem1.csv`.
pub fn run_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64], out: &Path) -> Result<PathBuf> {
    if values.is_empty() {
        return Err(Error::Validation("sweep needs at least one axis value".into()));
    }
    fs::create_dir_all(out)?;
    if axis == SweepAxis::GridSize {
        let grids = values
            .iter()
            .map(|&v| {
                if v >= 1.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::Validation(format!("grid sizes must be positive integers, got {v}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let table = verify_theorem1(f64::sin, cfg.scm.domain[0], cfg.scm.domain[1], cfg.scm.order, &grids)?;
        let path = out.join("theorem1.csv");
        fs::write(&path, format!("{}# log-log slope {}\n", table.to_csv(), fmt(table.slope)))?;
        return Ok(path);
    }
    let shared = if axis == SweepAxis::SnrDb { Some(prepare(cfg)?) } else { None };
    let base = match &shared {
        Some(p) => p.base.clone(),
        None => prepare_base(cfg)?,
    };
    let mut csv = format!("{},mode,sra,macro_f1,minority_f1,ms_ssim_mean,meta_loss_smoothed\n", axis.name());
    for &v in values {
        let mut point = cfg.clone();
        match axis {
            SweepAxis::SnrDb => point.channel.snr_db = v,
            SweepAxis::Fnr => {
                point.bias.kind = BiasKind::Flip;
                point.bias.fnr = v;
            }
            SweepAxis::ImbalanceFactor => {
                point.bias.kind = BiasKind::Imbalance;
                point.bias.factor = v;
            }
            SweepAxis::GridSize => unreachable!("handled above"),
        }
        point.validate()?;
        let prep = match &shared {
            Some(p) => p.clone(),
            None => inject_bias(&base, &point)?,
        };
        let dir = out.join(format!("{}_{v}", axis.name()));
        for s in run_prepared(&prep, &point, &dir)? {
            writeln!(
                csv,
                "{v},{},{},{},{},{},{}",
                s.mode,
                fmt(s.sra),
                fmt(s.macro_f1),
                fmt(s.minority_f1),
                fmt(s.ms_ssim_mean),
                fmt(s.meta_loss_smoothed)
            )
            .expect("string write");
        }
    }
    let path = out.join("sweep.csv");
    fs::write(&path, csv)?;
    Ok(path)
}
