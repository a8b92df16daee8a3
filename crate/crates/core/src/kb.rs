//! Knowledge base construction: label flipping, class imbalance and the
//! clean metadata split.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ImageShape, Sample};
use crate::error::{Error, Result};

/// A knowledge-base sample with its significance and the label it had
/// before corruption. The shadow label is for diagnostics only.
#[derive(Debug, Clone, PartialEq)]
pub struct KbEntry {
    pub sample: Sample,
    pub significance: f64,
    shadow_label: usize,
}

impl KbEntry {
    pub fn shadow_label(&self) -> usize {
        self.shadow_label
    }

    pub fn is_corrupted(&self) -> bool {
        self.shadow_label != self.sample.label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    entries: Vec<KbEntry>,
    classes: usize,
    shape: ImageShape,
}

impl KnowledgeBase {
    /// Wraps clean data with significance 1 and shadows equal to the labels.
    pub fn clean(data: Dataset) -> Self {
        let classes = data.classes();
        let shape = data.shape();
        let entries = data
            .into_samples()
            .into_iter()
            .map(|s| KbEntry {
                shadow_label: s.label,
                sample: s,
                significance: 1.0,
            })
            .collect();
        KnowledgeBase { entries, classes, shape }
    }

    pub fn entries(&self) -> &[KbEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.entries[i].sample
    }

    /// Sets `v_i`, clamped into [0,1].
    pub fn set_significance(&mut self, i: usize, v: f64) {
        self.entries[i].significance = v.clamp(0.0, 1.0);
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for e in &self.entries {
            counts[e.sample.label] += 1;
        }
        counts
    }

    pub fn flipped_fraction(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().filter(|e| e.is_corrupted()).count() as f64 / self.entries.len() as f64
    }

    /// Overwrites the shadow labels; used to show they never reach training.
    pub fn scramble_shadows<R: Rng>(&mut self, rng: &mut R) {
        for e in &mut self.entries {
            e.shadow_label = rng.random_range(0..self.classes);
        }
    }

    /// CSV of `id,label,shadow_label,v_i`.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "id,label,shadow_label,v_i")?;
        for e in &self.entries {
            writeln!(w, "{},{},{},{}", e.sample.id, e.sample.label, e.shadow_label, e.significance)?;
        }
        Ok(())
    }

    pub fn ids(&self) -> HashSet<u64> {
        self.entries.iter().map(|e| e.sample.id).collect()
    }
}

/// Symmetric label flipping with noise rate `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipSpec {
    pub p: f64,
    pub classes: usize,
}

impl FlipSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Validation(format!(
                "label flipping needs at least 2 classes, got {}",
                self.classes
            )));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::Validation(format!("flip rate must lie in [0,1), got {}", self.p)));
        }
        Ok(())
    }

    /// Row-stochastic flipping matrix: `1-p` on the diagonal, `p/(C-1)` elsewhere.
    pub fn matrix(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let off = self.p / (self.classes - 1) as f64;
        Ok((0..self.classes)
            .map(|r| {
                (0..self.classes)
                    .map(|c| if r == c { 1.0 - self.p } else { off })
                    .collect()
            })
            .collect())
    }
}

/// Keeps each label with probability `1-p`, otherwise moves it uniformly to
/// one of the other classes.
pub fn apply_flip<R: Rng>(clean: Dataset, spec: FlipSpec, rng: &mut R) -> Result<KnowledgeBase> {
    spec.validate()?;
    if clean.classes() != spec.classes {
        return Err(Error::Validation(format!(
            "flip spec has {} classes, data has {}",
            spec.classes,
            clean.classes()
        )));
    }
    let mut kb = KnowledgeBase::clean(clean);
    for e in &mut kb.entries {
        if rng.random::<f64>() < spec.p {
            let shift = rng.random_range(1..spec.classes);
            e.sample.label = (e.sample.label + shift) % spec.classes;
        }
    }
    Ok(kb)
}

/// Geometric class-size schedule `N / f^(k/(C-1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceSpec {
    pub factor: f64,
    pub max_class: usize,
    pub classes: usize,
}

impl ImbalanceSpec {
    /// Target size of every class; round-half-up with at least one sample.
    pub fn counts(&self) -> Result<Vec<usize>> {
        if !(self.factor >= 1.0) || !self.factor.is_finite() {
            return Err(Error::Validation(format!("imbalance factor must be >= 1, got {}", self.factor)));
        }
        if self.classes == 0 || self.max_class == 0 {
            return Err(Error::Validation("imbalance needs classes and a positive max size".into()));
        }
        if self.classes == 1 {
            return Ok(vec![self.max_class]);
        }
        let last = (self.classes - 1) as f64;
        Ok((0..self.classes)
            .map(|k| {
                let exact = self.max_class as f64 / self.factor.powf(k as f64 / last);
                ((exact + 0.5).floor() as usize).max(1)
            })
            .collect())
    }
}

/// Subsamples class `k` without replacement down to its scheduled size.
pub fn apply_imbalance<R: Rng>(clean: Dataset, spec: ImbalanceSpec, rng: &mut R) -> Result<KnowledgeBase> {
    if clean.classes() != spec.classes {
        return Err(Error::Validation(format!(
            "imbalance spec has {} classes, data has {}",
            spec.classes,
            clean.classes()
        )));
    }
    let counts = spec.counts()?;
    let available = clean.class_counts();
    for (k, (&want, &have)) in counts.iter().zip(&available).enumerate() {
        if have < want {
            return Err(Error::Validation(format!(
                "class {k} has {have} samples but the schedule needs {want}"
            )));
        }
    }
    let classes = clean.classes();
    let shape = clean.shape();
    let mut groups: Vec<Vec<Sample>> = vec![Vec::new(); classes];
    for s in clean.into_samples() {
        groups[s.label].push(s);
    }
    let mut keep = Vec::new();
    for (k, group) in groups.into_iter().enumerate() {
        let picked = index::sample(rng, group.len(), counts[k]).into_vec();
        let mut picked_sorted = picked;
        picked_sorted.sort_unstable();
        let mut slots: Vec<Option<Sample>> = group.into_iter().map(Some).collect();
        for i in picked_sorted {
            keep.push(slots[i].take().expect("index sampled once"));
        }
    }
    keep.shuffle(rng);
    Ok(KnowledgeBase::clean(Dataset::new(keep, classes, shape)?))
}

/// Small clean, class-balanced metadata pool.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaSet {
    samples: Vec<Sample>,
    per_class: Vec<usize>,
}

impl MetaSet {
    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn per_class(&self) -> &[usize] {
        &self.per_class
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> HashSet<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }
}

/// Takes the first `m` samples of every class as metadata; the rest is
/// returned unchanged in order.
pub fn split_meta(clean: Dataset, m: usize) -> Result<(MetaSet, Dataset)> {
    let counts = clean.class_counts();
    if let Some((k, have)) = counts.iter().enumerate().find(|(_, &c)| c < m) {
        return Err(Error::Validation(format!(
            "class {k} has {have} samples, metadata needs {m}"
        )));
    }
    let classes = clean.classes();
    let shape = clean.shape();
    let mut taken = vec![0usize; classes];
    let mut meta = Vec::with_capacity(m * classes);
    let mut rest = Vec::new();
    for s in clean.into_samples() {
        if taken[s.label] < m {
            taken[s.label] += 1;
            meta.push(s);
        } else {
            rest.push(s);
        }
    }
    Ok((
        MetaSet {
            samples: meta,
            per_class: taken,
        },
        Dataset::new(rest, classes, shape)?,
    ))
}

/// `n` distinct indices in `0..len`, uniformly without replacement.
pub fn sample_batch<R: Rng>(len: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::Validation(format!("batch of {n} requested from {len} samples")));
    }
    Ok(index::sample(rng, len, n).into_vec())
}

pub fn sample_meta_batch<R: Rng>(meta: &MetaSet, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    sample_batch(meta.len(), m, rng)
}
