//! Experiment configuration: a sectioned TOML file with strict key checking.
//!
//! Every semantic error is reported against the line of the offending key
//! (or its section header when the key was left at its default).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::nn::ClassifierTraining;
use crate::scm::{kan_param_count, mlp_width_for, SplineSpec};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Learned significance function.
    Talsc,
    /// Every sample weighted 1.
    Baseline,
    Both,
}

impl Mode {
    /// The concrete runs this mode expands to.
    pub fn runs(self) -> &'static [Mode] {
        match self {
            Mode::Talsc => &[Mode::Talsc],
            Mode::Baseline => &[Mode::Baseline],
            Mode::Both => &[Mode::Talsc, Mode::Baseline],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Talsc => "talsc",
            Mode::Baseline => "baseline",
            Mode::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Synthetic glyph images.
    Toy,
    /// One CIFAR-10 binary batch file.
    Cifar10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Toy image side length.
    pub side: usize,
    pub classes: usize,
    /// Clean samples per class used to train the frozen classifier.
    pub classifier_per_class: usize,
    /// Samples per class available to the knowledge base before the meta
    /// split and bias injection.
    pub kb_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
    pub dropout: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Toy,
            path: None,
            side: 16,
            classes: 10,
            classifier_per_class: 60,
            kb_per_class: 60,
            test_per_class: 30,
            noise: 0.1,
            dropout: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub symbols: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// MSE scale in the task loss.
    pub gamma: f64,
    pub classifier_hidden: usize,
    pub classifier: ClassifierTraining,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            symbols: 16,
            conv_channels: vec![8, 16],
            kernel: 3,
            stride: 2,
            padding: 1,
            gamma: 10.0,
            classifier_hidden: 64,
            classifier: ClassifierTraining::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasKind {
    Flip,
    Imbalance,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasConfig {
    pub kind: BiasKind,
    /// Label flipping rate.
    pub fnr: f64,
    /// Largest over smallest class size.
    pub factor: f64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            kind: BiasKind::None,
            fnr: 0.0,
            factor: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub per_class: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig { per_class: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SefBackend {
    Kan,
    Mlp,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScmConfig {
    pub backend: SefBackend,
    /// KAN layer widths, `[1, ..., 1]`.
    pub shape: Vec<usize>,
    pub grid: usize,
    pub order: usize,
    /// Loss interval covered by the spline grid.
    pub domain: [f64; 2],
    /// MLP hidden widths; empty picks one layer matching the KAN's size.
    pub mlp_hidden: Vec<usize>,
    /// Finer grid to move onto during training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extend_to: Option<usize>,
    /// Step at which the grid is extended.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extend_at: Option<usize>,
    /// Significance the function starts at, before the initial jitter.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_significance: Option<f64>,
}

impl Default for ScmConfig {
    fn default() -> Self {
        ScmConfig {
            backend: SefBackend::Kan,
            shape: vec![1, 8, 1],
            grid: 8,
            order: 3,
            domain: [0.0, 10.0],
            mlp_hidden: Vec::new(),
            extend_to: None,
            extend_at: None,
            initial_significance: None,
        }
    }
}

impl ScmConfig {
    pub fn spline(&self) -> Result<SplineSpec> {
        SplineSpec::new(self.domain[0], self.domain[1], self.grid, self.order)
    }

    /// Hidden widths of the MLP backend.
    pub fn mlp_widths(&self) -> Result<Vec<usize>> {
        if !self.mlp_hidden.is_empty() {
            return Ok(self.mlp_hidden.clone());
        }
        Ok(vec![mlp_width_for(kan_param_count(&self.shape, &self.spline()?))])
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_mode() -> Mode {
    Mode::Both
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub name: String,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    pub channel: ChannelConfig,
    #[serde(default)]
    pub bias: BiasConfig,
    #[serde(default)]
    pub meta: MetaConfig,
    #[serde(default)]
    pub scm: ScmConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

/// A semantic problem with one key.
struct Issue {
    key: &'static str,
    message: String,
}

fn issue(key: &'static str, message: impl Into<String>) -> Issue {
    Issue {
        key,
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(parse_message(text, &e)))?;
        if let Some(i) = cfg.issues().into_iter().next() {
            let line = locate(text, i.key);
            return Err(Error::Config(match line {
                Some(n) => format!("line {n}: {}: {}", i.key, i.message),
                None => format!("{}: {}", i.key, i.message),
            }));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_canonical(&self) -> String {
        toml::to_string(self).expect("config values are representable")
    }

    pub fn validate(&self) -> Result<()> {
        match self.issues().into_iter().next() {
            Some(i) => Err(Error::Config(format!("{}: {}", i.key, i.message))),
            None => Ok(()),
        }
    }

    fn issues(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        if self.seed > i64::MAX as u64 {
            out.push(issue("seed", format!("must be at most {}, got {}", i64::MAX, self.seed)));
        }
        if self.name.trim().is_empty() {
            out.push(issue("name", "must not be empty"));
        }
        let d = &self.data;
        if d.classes < 2 {
            out.push(issue("data.classes", format!("need at least 2 classes, got {}", d.classes)));
        }
        if d.source == DataSource::Cifar10 && d.path.is_none() {
            out.push(issue("data.path", "cifar10 source needs a batch file path"));
        }
        if d.classifier_per_class == 0 || d.test_per_class == 0 {
            out.push(issue("data.test_per_class", "classifier and test splits must be non-empty"));
        }
        if d.kb_per_class <= self.meta.per_class {
            out.push(issue(
                "data.kb_per_class",
                format!(
                    "must exceed meta.per_class ({}) so the knowledge base is non-empty",
                    self.meta.per_class
                ),
            ));
        }
        if !(d.noise >= 0.0) || !(0.0..1.0).contains(&d.dropout) {
            out.push(issue("data.noise", "noise must be >= 0 and dropout in [0, 1)"));
        }
        let l = &self.learner;
        if l.symbols == 0 {
            out.push(issue("learner.symbols", "must be positive"));
        }
        if l.kernel == 0 || l.stride == 0 {
            out.push(issue("learner.kernel", "kernel and stride must be positive"));
        }
        if !(l.gamma > 0.0) || !l.gamma.is_finite() {
            out.push(issue("learner.gamma", format!("must be positive, got {}", l.gamma)));
        }
        if !(0.0..=1.0).contains(&l.classifier.floor) {
            out.push(issue("learner.classifier.floor", "must lie in [0, 1]"));
        }
        if let Err(e) = self.channel.validate() {
            out.push(issue("channel.kind", e.to_string()));
        }
        let b = &self.bias;
        match b.kind {
            BiasKind::Flip if !(0.0..1.0).contains(&b.fnr) => {
                out.push(issue("bias.fnr", format!("must lie in [0, 1), got {}", b.fnr)))
            }
            BiasKind::Imbalance if !(b.factor >= 1.0) || !b.factor.is_finite() => {
                out.push(issue("bias.factor", format!("must be >= 1, got {}", b.factor)))
            }
            _ => {}
        }
        let s = &self.scm;
        if s.shape.len() < 2 || s.shape[0] != 1 || s.shape[s.shape.len() - 1] != 1 || s.shape.contains(&0) {
            out.push(issue("scm.shape", format!("must be [1, ..., 1] with positive widths, got {:?}", s.shape)));
        }
        if let Err(e) = s.spline() {
            out.push(issue("scm.grid", e.to_string()));
        }
        if s.mlp_hidden.contains(&0) {
            out.push(issue("scm.mlp_hidden", "widths must be positive"));
        }
        match (s.extend_to, s.extend_at) {
            (Some(g), Some(_)) if g <= s.grid => {
                out.push(issue("scm.extend_to", format!("must exceed scm.grid ({}), got {g}", s.grid)))
            }
            (Some(_), Some(_)) if s.backend != SefBackend::Kan => {
                out.push(issue("scm.extend_to", "grid extension needs the kan backend"))
            }
            (Some(_), None) | (None, Some(_)) => {
                out.push(issue("scm.extend_to", "extend_to and extend_at must be given together"))
            }
            _ => {}
        }
        if let Some(v) = s.initial_significance {
            if !(v > 0.0 && v < 1.0) {
                out.push(issue("scm.initial_significance", format!("must lie strictly between 0 and 1, got {v}")));
            }
        }
        if let Err(e) = self.train.validate() {
            out.push(issue("train.steps", e.to_string()));
        }
        if self.train.meta_batch > self.meta.per_class * d.classes {
            out.push(issue(
                "train.meta_batch",
                format!(
                    "exceeds the metadata size {}",
                    self.meta.per_class * d.classes
                ),
            ));
        }
        out
    }
}

/// Line number (1-based) of `section.key`, falling back to `[section]`.
fn locate(text: &str, path: &str) -> Option<usize> {
    let section = path.rsplit_once('.').map_or("", |(s, _)| s);
    let mut current = String::new();
    let mut header = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header = Some(n + 1);
            }
            continue;
        }
        let Some((k, _)) = line.split_once('=') else { continue };
        let k = k.trim();
        let full = if current.is_empty() { k.to_string() } else { format!("{current}.{k}") };
        if full == path {
            return Some(n + 1);
        }
    }
    header
}

fn parse_message(text: &str, e: &toml::de::Error) -> String {
    let detail = e.message().trim().to_string();
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {detail}")
        }
        None => detail,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
seed = 3
name = "smoke"

[channel]
kind = "awgn"
snr_db = 10.0

[train]
steps = 5
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::parse(SMALL).unwrap();
        assert_eq!(cfg.train.steps, 5);
        assert_eq!(cfg.train.batch, 64);
        assert_eq!(cfg.meta.per_class, 10);
        assert_eq!(cfg.learner.gamma, 10.0);
        assert_eq!(cfg.mode, Mode::Both);
    }

    #[test]
    fn unknown_key_names_its_line() {
        let text = SMALL.replace("steps = 5", "steps = 5\nstepz = 4");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("line 11"), "{err}");
        assert!(err.contains("stepz"), "{err}");
    }

    #[test]
    fn semantic_error_names_its_line() {
        let text = SMALL.replace("snr_db = 10.0", "snr_db = 10.0\n\n[scm]\ngrid = 0");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.starts_with("configuration error: line 10: scm.grid"), "{err}");
    }

    #[test]
    fn rician_without_r_is_rejected() {
        let text = SMALL.replace("awgn", "rician");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("line 6"), "{err}");
    }

    #[test]
    fn canonical_form_round_trips() {
        let cfg = ExperimentConfig::parse(SMALL).unwrap();
        let text = cfg.to_canonical();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn mlp_width_matches_kan_size() {
        let mut s = ScmConfig::default();
        s.grid = 40;
        assert_eq!(s.mlp_widths().unwrap(), vec![229]);
    }
}
