use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    V1,
    V2,
    V3,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::V1, Variant::V2, Variant::V3];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
        })
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            "v3" => Ok(Variant::V3),
            other => Err(ModelError::InvalidConfig(format!(
                "unknown variant `{other}` (expected v1, v2 or v3)"
            ))),
        }
    }
}

/// Network hyperparameters. Class counts are fixed at 10 / 80 / 14.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub variant: Variant,
    pub n_mels: usize,
    /// Output channels of the four conv blocks.
    pub channels: Vec<usize>,
    pub time_pool: Vec<usize>,
    pub freq_pool: Vec<usize>,
    /// Hidden units per GRU direction.
    pub gru_hidden: usize,
    /// Width of both layers in every dense block.
    pub dense_width: usize,
    /// Width of the v3 branch layers.
    pub branch_width: usize,
    /// Channels of the v1 residual ASC head.
    pub asc_res_channels: usize,
    pub dropout: f64,
    pub mixup_alpha: f64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self::full(Variant::V3)
    }
}

impl ArchitectureConfig {
    pub fn full(variant: Variant) -> Self {
        Self {
            variant,
            n_mels: 128,
            channels: vec![64, 128, 256, 512],
            time_pool: vec![2, 2, 1, 1],
            freq_pool: vec![2, 2, 2, 2],
            gru_hidden: 512,
            dense_width: 1024,
            branch_width: 256,
            asc_res_channels: 64,
            dropout: 0.2,
            mixup_alpha: 0.4,
        }
    }

    /// Small network for CPU-scale training runs.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            variant,
            channels: vec![8, 16, 16, 32],
            gru_hidden: 16,
            dense_width: 32,
            branch_width: 16,
            asc_res_channels: 4,
            dropout: 0.1,
            ..Self::full(variant)
        }
    }

    /// Minimal network for finite-difference checks (no dropout).
    pub fn gradcheck(variant: Variant) -> Self {
        Self {
            variant,
            n_mels: 16,
            channels: vec![4, 4, 4, 4],
            gru_hidden: 8,
            dense_width: 6,
            branch_width: 4,
            asc_res_channels: 2,
            dropout: 0.0,
            ..Self::full(variant)
        }
    }

    pub fn time_reduction(&self) -> usize {
        self.time_pool.iter().product()
    }

    pub fn freq_reduction(&self) -> usize {
        self.freq_pool.iter().product()
    }

    /// Smallest accepted input length in feature frames.
    pub fn min_frames(&self) -> usize {
        self.time_reduction().max(16)
    }

    /// Frames after the conv stack for `frames` input frames.
    pub fn pooled_frames(&self, frames: usize) -> usize {
        self.time_pool.iter().fold(frames, |t, p| t / p)
    }

    pub fn last_channels(&self) -> usize {
        *self.channels.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.channels.len() != 4 || self.time_pool.len() != 4 || self.freq_pool.len() != 4 {
            return bad("channels, time_pool and freq_pool need exactly 4 entries".into());
        }
        let positive = self.channels.iter().chain(&self.time_pool).chain(&self.freq_pool);
        if positive.copied().any(|v| v == 0) {
            return bad("channels and pool factors must be positive".into());
        }
        if self.n_mels / self.freq_reduction() == 0 {
            return bad(format!(
                "{} mel bands vanish under frequency pooling by {}",
                self.n_mels,
                self.freq_reduction()
            ));
        }
        for (name, v) in [
            ("gru_hidden", self.gru_hidden),
            ("dense_width", self.dense_width),
            ("branch_width", self.branch_width),
            ("asc_res_channels", self.asc_res_channels),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.mixup_alpha > 0.0) {
            return bad("mixup_alpha must be positive".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
