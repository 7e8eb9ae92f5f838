use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which network topology to build.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    /// Edge prediction plus one edge attention module per cascade.
    #[default]
    Full,
    /// Plain cascaded de-aliasing blocks, no edge branch.
    M1,
    /// Edge map concatenated with the image and fused by a 1×1 conv.
    M2,
    /// One edge attention module shared by all cascades.
    M3,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [Self::Full, Self::M1, Self::M2, Self::M3];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::M1 => "m1",
            Self::M2 => "m2",
            Self::M3 => "m3",
        }
    }
}

impl std::str::FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "m1" => Ok(Self::M1),
            "m2" => Ok(Self::M2),
            "m3" => Ok(Self::M3),
            other => Err(Error::arg(format!("unknown variant `{other}`"))),
        }
    }
}

/// Ground-truth edge extractor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeOperator {
    #[default]
    Sobel,
    Canny,
}

impl EdgeOperator {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sobel => "sobel",
            Self::Canny => "canny",
        }
    }
}

impl std::str::FromStr for EdgeOperator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sobel" => Ok(Self::Sobel),
            "canny" => Ok(Self::Canny),
            other => Err(Error::arg(format!("unknown edge operator `{other}`"))),
        }
    }
}

/// Architecture, data and optimisation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    /// Number of cascades.
    pub cascades: usize,
    /// Recursions of the shared dilated block inside each de-aliasing block.
    pub recursions: usize,
    /// Feature width of the cascades and the edge network.
    pub channels: usize,
    pub heads: usize,
    pub msrb_count: usize,
    pub image_size: usize,
    pub coils: usize,
    pub af: usize,
    pub center_fraction: f64,
    pub noise_sigma: f64,
    pub beta: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch: usize,
    pub steps: usize,
    /// Steps between validation passes and log lines.
    pub eval_every: usize,
    pub seed: u64,
    pub variant: VariantKind,
    pub edge_op: EdgeOperator,
    /// Apply the attention temperature after `A·V` instead of on the logits.
    pub literal_alpha: bool,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            cascades: 4,
            recursions: 3,
            channels: 32,
            heads: 4,
            msrb_count: 3,
            image_size: 32,
            coils: 4,
            af: 4,
            center_fraction: 0.08,
            noise_sigma: 0.0,
            beta: 1.0,
            lr: 5e-4,
            weight_decay: 1e-7,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch: 4,
            steps: 500,
            eval_every: 50,
            seed: 0,
            variant: VariantKind::Full,
            edge_op: EdgeOperator::Sobel,
            literal_alpha: false,
        }
    }
}

impl ReconConfig {
    /// Desk-scale training setup: two cascades, two recursions, width 16.
    pub fn desk() -> Self {
        Self {
            cascades: 2,
            recursions: 2,
            channels: 16,
            ..Self::default()
        }
    }

    /// Toy size used by the gradient suite.
    pub fn toy() -> Self {
        Self {
            cascades: 2,
            recursions: 2,
            channels: 8,
            image_size: 8,
            coils: 2,
            batch: 1,
            steps: 1,
            ..Self::default()
        }
    }

    /// Width of the sensitivity refiner.
    pub fn sme_channels(&self) -> usize {
        (self.channels / 4).max(2)
    }

    /// Width of the image head.
    pub fn head_channels(&self) -> usize {
        (self.channels / 2).max(2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.cascades == 0 || self.recursions == 0 || self.msrb_count == 0 {
            return bad("cascades, recursions and msrb_count must be positive".into());
        }
        if self.channels == 0 || self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return bad(format!(
                "channels ({}) must be a positive multiple of heads ({})",
                self.channels, self.heads
            ));
        }
        if !self.image_size.is_power_of_two() || self.image_size < 4 {
            return bad(format!("image_size {} must be a power of two ≥ 4", self.image_size));
        }
        if self.coils == 0 || self.af == 0 || self.batch == 0 || self.eval_every == 0 {
            return bad("coils, af, batch and eval_every must be positive".into());
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || self.beta < 0.0 || self.noise_sigma < 0.0 {
            return bad("lr must be positive; weight_decay, beta and noise_sigma non-negative".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam moments must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
