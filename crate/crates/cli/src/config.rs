//! Run configuration, read from a TOML file with every field optional.

use std::path::{Path, PathBuf};

use ampkin::body_model::{make_toy_template, BodyTemplate};
use ampkin::metrics::{Alignment, LossWeights};
use ampkin::synth::{NoiseModel, DEFAULT_HEATMAP_SIGMA, SSIM_GATE, SSIM_WINDOW};
use ampkin::tokenizer::{Reduction, TokenizerLossWeights};
use ampkin::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub template: TemplateConfig,
    pub loss: LossWeights,
    pub tokenizer: TokenizerConfig,
    pub metrics: MetricsConfig,
    pub synth: SynthConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            template: TemplateConfig::default(),
            loss: LossWeights::default(),
            tokenizer: TokenizerConfig::default(),
            metrics: MetricsConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    /// Binary template file; the procedural toy body is used when absent.
    pub path: Option<PathBuf>,
    pub toy_vertices: usize,
    pub toy_seed: u64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            path: None,
            toy_vertices: 512,
            toy_seed: 0,
        }
    }
}

impl TemplateConfig {
    pub fn load(&self) -> Result<BodyTemplate> {
        match &self.path {
            Some(p) => BodyTemplate::load(p),
            None => make_toy_template(self.toy_vertices, self.toy_seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    #[default]
    Soft,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub codebook_size: usize,
    pub dim: usize,
    pub tokens: usize,
    pub gamma: f64,
    pub reset_threshold: f64,
    pub weights: TokenizerLossWeights,
    pub reduction: Reduction,
    pub decode: DecodeMode,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            codebook_size: 256,
            dim: 64,
            tokens: 16,
            gamma: 0.99,
            reset_threshold: 1e-3,
            weights: TokenizerLossWeights::default(),
            reduction: Reduction::Sum,
            decode: DecodeMode::Soft,
        }
    }
}

impl TokenizerConfig {
    /// Codebook and token shapes used at full scale.
    pub fn full_scale() -> Self {
        TokenizerConfig {
            codebook_size: 2048,
            dim: 256,
            tokens: 320,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub alignment: Alignment,
    /// Keep joints and vertices of amputated parts in the metrics.
    pub include_amputated: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            alignment: Alignment::Similarity,
            include_amputated: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    pub heatmap_sigma: f64,
    pub heatmaps: bool,
    pub noise_model: NoiseModel,
    pub noise_ratio: f64,
    /// Pixels; defaults to 5% of the bounding-box diagonal.
    pub noise_sigma: Option<f64>,
    pub ssim_window: usize,
    pub ssim_threshold: f64,
    /// Probability that a drawn sample has at least one amputated limb.
    pub amputee_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 256,
            height: 256,
            heatmap_sigma: DEFAULT_HEATMAP_SIGMA,
            heatmaps: true,
            noise_model: NoiseModel::Subset,
            noise_ratio: 0.0,
            noise_sigma: None,
            ssim_window: SSIM_WINDOW,
            ssim_threshold: SSIM_GATE,
            amputee_fraction: 0.5,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        self.loss
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.template.path.is_none() && self.template.toy_vertices == 0 {
            return bad("template.toy_vertices must be positive");
        }
        let t = &self.tokenizer;
        if t.codebook_size == 0 || t.dim == 0 || t.tokens == 0 {
            return bad("tokenizer shapes must be positive");
        }
        if !(0.0..1.0).contains(&t.gamma) {
            return bad("tokenizer.gamma must lie in [0, 1)");
        }
        if !(t.reset_threshold >= 0.0) {
            return bad("tokenizer.reset_threshold must be non-negative");
        }
        let w = &t.weights;
        if [w.mix, w.codebook, w.commitment]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return bad("tokenizer weights must be finite and non-negative");
        }
        let s = &self.synth;
        if s.width == 0 || s.height == 0 {
            return bad("synth image size must be positive");
        }
        if !(s.heatmap_sigma > 0.0) {
            return bad("synth.heatmap_sigma must be positive");
        }
        if !(0.0..=1.0).contains(&s.noise_ratio) {
            return bad("synth.noise_ratio must lie in [0, 1]");
        }
        if s.noise_sigma.is_some_and(|v| !(v >= 0.0)) {
            return bad("synth.noise_sigma must be non-negative");
        }
        if s.ssim_window < 3 || s.ssim_window % 2 == 0 {
            return bad("synth.ssim_window must be odd and at least 3");
        }
        if !(0.0..=1.0).contains(&s.amputee_fraction) {
            return bad("synth.amputee_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}
