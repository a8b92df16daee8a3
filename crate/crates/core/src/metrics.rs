//! Evaluation metrics: recovery accuracy, confusion matrices and F1,
//! multi-scale SSIM, and loss-distribution diagnostics.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::error::{Error, Result};
use crate::trainer::StepRecord;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_predictions(predicted: &[usize], truth: &[usize], classes: usize) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::Validation(format!(
                "{} predictions for {} labels",
                predicted.len(),
                truth.len()
            )));
        }
        let mut m = ConfusionMatrix::new(classes);
        for (&p, &t) in predicted.iter().zip(truth) {
            m.add(t, p)?;
        }
        Ok(m)
    }

    /// Builds a matrix from explicit rows of counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let classes = rows.len();
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::Validation("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            classes,
            counts: rows.concat(),
        })
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return Err(Error::Validation(format!(
                "class pair ({truth}, {predicted}) outside {} classes",
                self.classes
            )));
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    /// `trace / total`; a validation error when empty.
    pub fn accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Validation("accuracy of an empty confusion matrix".into()));
        }
        Ok(self.trace() as f64 / total as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for c in 0..self.classes {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
        for t in 0..self.classes {
            s.push_str(&t.to_string());
            for p in 0..self.classes {
                s.push_str(&format!(",{}", self.get(t, p)));
            }
            s.push('\n');
        }
        s
    }
}

/// Fraction of predictions equal to the labels.
pub fn sra(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::Validation("accuracy of an empty prediction set".into()));
    }
    if predicted.len() != truth.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Per-class F1; 0 when precision and recall are both 0 (or undefined).
pub fn f1_per_class(m: &ConfusionMatrix) -> Vec<f64> {
    (0..m.classes())
        .map(|c| {
            let tp = m.get(c, c) as f64;
            let predicted: f64 = (0..m.classes()).map(|t| m.get(t, c) as f64).sum();
            let actual: f64 = (0..m.classes()).map(|p| m.get(c, p) as f64).sum();
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if actual > 0.0 { tp / actual } else { 0.0 };
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .collect()
}

pub fn macro_f1(m: &ConfusionMatrix) -> f64 {
    let f = f1_per_class(m);
    f.iter().sum::<f64>() / f.len() as f64
}

/// Multi-scale SSIM settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsSsimConfig {
    pub weights: Vec<f64>,
    pub window: usize,
    pub sigma: f64,
    /// Dynamic range of pixel values.
    pub range: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        MsSsimConfig {
            weights: vec![0.0448, 0.2856, 0.3001, 0.2363, 0.1333],
            window: 11,
            sigma: 1.5,
            range: 1.0,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl MsSsimConfig {
    /// Levels usable for the given smallest image side: each level halves
    /// the image, and the coarsest must still cover half a window.
    pub fn levels_for(&self, min_side: usize) -> usize {
        let half = self.window.div_ceil(2).max(1);
        if min_side < half {
            return 1;
        }
        let ratio = (min_side / half).max(1);
        let fit = 1 + ratio.ilog2() as usize;
        fit.min(self.weights.len()).max(1)
    }

    /// The first `levels` weights, renormalized to sum to 1.
    pub fn level_weights(&self, levels: usize) -> Vec<f64> {
        let w = &self.weights[..levels];
        let s: f64 = w.iter().sum();
        w.iter().map(|x| x / s).collect()
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM and mean contrast-structure term of one plane.
fn ssim_components(a: &[f64], b: &[f64], h: usize, w: usize, cfg: &MsSsimConfig) -> (f64, f64) {
    let mut size = cfg.window.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian_kernel(size, cfg.sigma);
    let c1 = (cfg.k1 * cfg.range).powi(2);
    let c2 = (cfg.k2 * cfg.range).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (mu_a, _, _) = filter_valid(a, h, w, &k);
    let (mu_b, _, _) = filter_valid(b, h, w, &k);
    let (e_aa, _, _) = filter_valid(&aa, h, w, &k);
    let (e_bb, _, _) = filter_valid(&bb, h, w, &k);
    let (e_ab, _, _) = filter_valid(&ab, h, w, &k);
    let n = mu_a.len() as f64;
    let mut ssim = 0.0;
    let mut cs = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let contrast = (2.0 * cov + c2) / (va + vb + c2);
        let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs += contrast;
        ssim += lum * contrast;
    }
    (ssim / n, cs / n)
}

/// 2x2 average pooling (odd trailing rows/columns dropped).
fn downsample(img: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = 0.25
                * (img[2 * y * w + 2 * x] + img[2 * y * w + 2 * x + 1] + img[(2 * y + 1) * w + 2 * x] + img[(2 * y + 1) * w + 2 * x + 1]);
        }
    }
    (out, oh, ow)
}

/// Multi-scale SSIM of two channel-major images, averaged over channels.
/// Negative per-level terms are clamped to 0 before the weighted product.
pub fn ms_ssim(a: &[f64], b: &[f64], shape: ImageShape, cfg: &MsSsimConfig) -> Result<f64> {
    if a.len() != b.len() || a.len() != shape.len() {
        return Err(Error::Validation("MS-SSIM inputs must share the image shape".into()));
    }
    let levels = cfg.levels_for(shape.height.min(shape.width));
    if levels < cfg.weights.len() {
        log::debug!(
            "MS-SSIM: {}x{} images support {levels} of {} levels",
            shape.height,
            shape.width,
            cfg.weights.len()
        );
    }
    let weights = cfg.level_weights(levels);
    let plane = shape.height * shape.width;
    let mut total = 0.0;
    for c in 0..shape.channels {
        let mut pa = a[c * plane..(c + 1) * plane].to_vec();
        let mut pb = b[c * plane..(c + 1) * plane].to_vec();
        let (mut h, mut w) = (shape.height, shape.width);
        let mut value = 1.0;
        for (l, wl) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_components(&pa, &pb, h, w, cfg);
            let term = if l + 1 == levels { ssim } else { cs };
            value *= term.max(0.0).powf(*wl);
            if l + 1 < levels {
                let (na, nh, nw) = downsample(&pa, h, w);
                pb = downsample(&pb, h, w).0;
                pa = na;
                h = nh;
                w = nw;
            }
        }
        total += value;
    }
    Ok(total / shape.channels as f64)
}

/// Loss histograms split into clean and corrupted knowledge-base samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistogram {
    pub edges: Vec<f64>,
    pub clean: Vec<u64>,
    pub flipped: Vec<u64>,
}

impl LossHistogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_left,bin_right,count_clean,count_flipped\n");
        for i in 0..self.clean.len() {
            s.push_str(&format!(
                "{:.6},{:.6},{},{}\n",
                self.edges[i],
                self.edges[i + 1],
                self.clean[i],
                self.flipped[i]
            ));
        }
        s
    }

    /// `sum_b min(p_clean(b), p_flipped(b))` of the normalized histograms;
    /// 0 when either group is empty.
    pub fn overlap(&self) -> f64 {
        let nc: u64 = self.clean.iter().sum();
        let nf: u64 = self.flipped.iter().sum();
        if nc == 0 || nf == 0 {
            return 0.0;
        }
        self.clean
            .iter()
            .zip(&self.flipped)
            .map(|(&c, &f)| (c as f64 / nc as f64).min(f as f64 / nf as f64))
            .sum()
    }
}

/// Histograms of the losses in `records`, with samples whose id is in
/// `flipped` counted separately. Losses outside `[lo, hi]` go to the end bins.
pub fn loss_histograms(records: &[StepRecord], flipped: &HashSet<u64>, bins: usize, lo: f64, hi: f64) -> Result<LossHistogram> {
    if bins == 0 || !(lo < hi) {
        return Err(Error::Validation("histogram needs bins > 0 and lo < hi".into()));
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut clean = vec![0; bins];
    let mut bad = vec![0; bins];
    for r in records {
        for (id, &l) in r.ids.iter().zip(&r.losses) {
            let b = (((l - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            if flipped.contains(id) {
                bad[b] += 1;
            } else {
                clean[b] += 1;
            }
        }
    }
    Ok(LossHistogram {
        edges,
        clean,
        flipped: bad,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; NaN when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Validation("spearman needs two equal-length samples of size >= 2".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    Ok(pearson(&rx, &ry))
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use rand::Rng;

    #[test]
    fn accuracy_special_cases() {
        assert_eq!(sra(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(sra(&[0], &[1]).unwrap(), 0.0);
        assert!(sra(&[], &[]).is_err());
    }

    #[test]
    fn random_guessing_scores_one_tenth() {
        let mut rng = substream(1, Stream::Eval);
        let n = 100_000;
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        assert!((sra(&p, &t).unwrap() - 0.1).abs() < 0.01);
    }

    #[test]
    fn accuracy_is_the_trace_ratio() {
        let p = [0, 1, 1, 2, 0, 2, 2];
        let t = [0, 1, 2, 2, 1, 2, 0];
        let m = ConfusionMatrix::from_predictions(&p, &t, 3).unwrap();
        assert_eq!(m.total(), 7);
        assert_eq!(m.accuracy().unwrap(), sra(&p, &t).unwrap());
    }

    #[test]
    fn f1_by_hand() {
        let m = ConfusionMatrix::from_rows(&[vec![8, 2], vec![1, 9]]).unwrap();
        let f = f1_per_class(&m);
        let (p, r) = (8.0 / 9.0, 8.0 / 10.0);
        assert!((f[0] - 2.0 * p * r / (p + r)).abs() < 1e-12);
        assert!((f[0] - 0.8421).abs() < 1e-4);
    }

    #[test]
    fn f1_edge_cases() {
        let m = ConfusionMatrix::from_rows(&[vec![3, 0, 0], vec![0, 4, 0], vec![0, 0, 0]]).unwrap();
        assert_eq!(f1_per_class(&m), vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn level_counts() {
        let cfg = MsSsimConfig::default();
        assert_eq!(cfg.levels_for(32), 3);
        assert_eq!(cfg.levels_for(16), 2);
        assert_eq!(cfg.levels_for(256), 5);
        let w = cfg.level_weights(3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    fn texture(seed: u64, shape: ImageShape) -> Vec<f64> {
        let mut rng = substream(seed, Stream::Eval);
        (0..shape.len()).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn identical_images_score_one() {
        let shape = ImageShape::new(3, 32, 32);
        let a = texture(1, shape);
        assert!((ms_ssim(&a, &a, shape, &MsSsimConfig::default()).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn negative_texture_scores_low() {
        let shape = ImageShape::new(1, 32, 32);
        let a = texture(2, shape);
        let neg: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        assert!(ms_ssim(&a, &neg, shape, &MsSsimConfig::default()).unwrap() < 0.1);
    }

    #[test]
    fn ms_ssim_is_symmetric() {
        let shape = ImageShape::new(1, 16, 16);
        let a = texture(3, shape);
        let b: Vec<f64> = a.iter().zip(texture(4, shape)).map(|(x, y)| 0.7 * x + 0.3 * y).collect();
        let cfg = MsSsimConfig::default();
        let ab = ms_ssim(&a, &b, shape, &cfg).unwrap();
        let ba = ms_ssim(&b, &a, shape, &cfg).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab > 0.0 && ab < 1.0);
    }

    #[test]
    fn spearman_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_counts_and_overlap() {
        let rec = StepRecord {
            step: 0,
            status: crate::trainer::StepStatus::Completed,
            ids: vec![1, 2, 3, 4],
            labels: vec![0; 4],
            losses: vec![0.1, 0.2, 5.0, 12.0],
            significance: vec![],
            significance_updated: vec![],
            meta_loss: 0.0,
            decoder_grad_norm: 0.0,
            encoder_grad_norm: 0.0,
            sef_grad_norm: 0.0,
            h_re: 1.0,
            h_im: 0.0,
            channel_id: 0,
        };
        let none = loss_histograms(&[rec.clone()], &HashSet::new(), 10, 0.0, 10.0).unwrap();
        assert_eq!(none.flipped.iter().sum::<u64>(), 0);
        assert_eq!(none.clean.iter().sum::<u64>(), 4);
        assert_eq!(none.overlap(), 0.0);
        let split = loss_histograms(&[rec], &HashSet::from([3, 4]), 10, 0.0, 10.0).unwrap();
        assert_eq!(split.clean[0], 2);
        assert_eq!(split.flipped[5] + split.flipped[9], 2);
        assert_eq!(split.overlap(), 0.0);
    }
}
