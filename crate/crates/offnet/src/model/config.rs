//! Architectural hyperparameters and their text-file form.

use super::{ModelError, Result};

/// Spatial scale of each encoder stage relative to the input.
pub const STAGE_STRIDES: [usize; 4] = [4, 8, 16, 32];

/// Hidden expansion factor inside the mix-FFN.
pub const FFN_EXPANSION: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub stage_dims: [usize; 4],
    pub stage_depths: [usize; 4],
    pub stage_heads: [usize; 4],
    /// Key/value spatial reduction per stage for efficient self-attention.
    pub reduction_ratios: [usize; 4],
    pub decoder_dim: usize,
    pub fusion_enabled: bool,
    /// Number of encoder stages actually built (1..=4); the decoder consumes
    /// exactly these. Used by the ablation harness.
    pub encoder_stages: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    /// Full-scale configuration for 1280x704 inputs.
    fn default() -> Self {
        ModelConfig {
            stage_dims: [64, 128, 320, 512],
            stage_depths: [2, 2, 2, 2],
            stage_heads: [1, 2, 5, 8],
            reduction_ratios: [8, 4, 2, 1],
            decoder_dim: 256,
            fusion_enabled: true,
            encoder_stages: 4,
            input_h: 704,
            input_w: 1280,
            num_classes: 2,
        }
    }
}

impl ModelConfig {
    /// Small configuration that trains on a CPU in seconds.
    pub fn toy(input_h: usize, input_w: usize) -> Self {
        ModelConfig {
            stage_dims: [8, 16, 32, 64],
            stage_depths: [1, 1, 1, 1],
            stage_heads: [1, 2, 4, 8],
            reduction_ratios: [8, 4, 2, 1],
            decoder_dim: 32,
            fusion_enabled: true,
            encoder_stages: 4,
            input_h,
            input_w,
            num_classes: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes != 2 {
            return Err(ModelError::Config(format!(
                "num_classes is fixed at 2, got {}",
                self.num_classes
            )));
        }
        if !(1..=4).contains(&self.encoder_stages) {
            return Err(ModelError::Config(format!(
                "encoder_stages must be in 1..=4, got {}",
                self.encoder_stages
            )));
        }
        if self.decoder_dim == 0 {
            return Err(ModelError::Config("decoder_dim must be positive".into()));
        }
        if self.input_h == 0
            || self.input_w == 0
            || self.input_h % 32 != 0
            || self.input_w % 32 != 0
        {
            return Err(ModelError::Config(format!(
                "input extents {}x{} must be positive multiples of 32",
                self.input_w, self.input_h
            )));
        }
        for i in 0..self.encoder_stages {
            if self.stage_dims[i] == 0 || self.stage_depths[i] == 0 {
                return Err(ModelError::Config(format!(
                    "stage {} has zero dim or depth",
                    i + 1
                )));
            }
            if self.stage_heads[i] == 0 || self.stage_dims[i] % self.stage_heads[i] != 0 {
                return Err(ModelError::Config(format!(
                    "stage {} dim {} is not divisible by heads {}",
                    i + 1,
                    self.stage_dims[i],
                    self.stage_heads[i]
                )));
            }
            let r = self.reduction_ratios[i];
            if r == 0 {
                return Err(ModelError::Config(format!(
                    "stage {} reduction ratio must be >= 1",
                    i + 1
                )));
            }
            let (h, w) = self.stage_resolution(i);
            if r > 1 && (h % r != 0 || w % r != 0) {
                return Err(ModelError::Config(format!(
                    "stage {} grid {h}x{w} is not divisible by reduction {r}",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Grid extents (h, w) of stage `i` (0-based): 1/4, 1/8, 1/16, 1/32 of
    /// the input.
    pub fn stage_resolution(&self, stage: usize) -> (usize, usize) {
        (
            self.input_h / STAGE_STRIDES[stage],
            self.input_w / STAGE_STRIDES[stage],
        )
    }

    pub fn stage_resolutions(&self) -> Vec<(usize, usize)> {
        (0..self.encoder_stages)
            .map(|i| self.stage_resolution(i))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let list = |v: &[usize; 4]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "stage_dims = {}\nstage_depths = {}\nstage_heads = {}\nreduction_ratios = {}\n\
             decoder_dim = {}\nfusion_enabled = {}\nencoder_stages = {}\n\
             input_h = {}\ninput_w = {}\nnum_classes = {}\n",
            list(&self.stage_dims),
            list(&self.stage_depths),
            list(&self.stage_heads),
            list(&self.reduction_ratios),
            self.decoder_dim,
            self.fusion_enabled,
            self.encoder_stages,
            self.input_h,
            self.input_w,
            self.num_classes,
        )
    }

    /// Parse the `key = value` text form; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ModelError::Config(format!("line {}: expected 'key = value'", idx + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let parse_usize = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| ModelError::Config(format!("line {}: bad integer {v:?}", idx + 1)))
            };
            let parse_list = |v: &str| -> Result<[usize; 4]> {
                let items: Vec<usize> = v
                    .split(',')
                    .map(|tok| parse_usize(tok.trim()))
                    .collect::<Result<_>>()?;
                items
                    .try_into()
                    .map_err(|_| ModelError::Config(format!("line {}: expected 4 values", idx + 1)))
            };
            match key {
                "stage_dims" => cfg.stage_dims = parse_list(value)?,
                "stage_depths" => cfg.stage_depths = parse_list(value)?,
                "stage_heads" => cfg.stage_heads = parse_list(value)?,
                "reduction_ratios" => cfg.reduction_ratios = parse_list(value)?,
                "decoder_dim" => cfg.decoder_dim = parse_usize(value)?,
                "fusion_enabled" => {
                    cfg.fusion_enabled = value.parse::<bool>().map_err(|_| {
                        ModelError::Config(format!("line {}: bad bool {value:?}", idx + 1))
                    })?
                }
                "encoder_stages" => cfg.encoder_stages = parse_usize(value)?,
                "input_h" => cfg.input_h = parse_usize(value)?,
                "input_w" => cfg.input_w = parse_usize(value)?,
                "num_classes" => cfg.num_classes = parse_usize(value)?,
                other => {
                    return Err(ModelError::Config(format!(
                        "line {}: unknown key {other:?}",
                        idx + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
