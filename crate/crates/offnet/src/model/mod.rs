//! The two-stream freespace detection network.
//!
//! An RGB stream and a surface-normal stream each pass through four
//! hierarchical transformer stages (overlapped patch embedding, efficient
//! self-attention, mix-FFN). After every stage the streams are merged by a
//! gated fusion layer whose sigmoid gate re-weights the image stream and
//! whose complement re-weights the normal stream; the refined streams feed
//! the next stage and their sum feeds the all-MLP decoder, which emits a
//! per-pixel two-class probability map at the input resolution.

mod checkpoint;
mod config;
pub mod layers;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ModelConfig, FFN_EXPANSION, STAGE_STRIDES};

use std::path::Path;
use std::rc::Rc;

use thiserror::Error;

use crate::dataset::GroundTruth;
use crate::tensor::{ops, Init, ParamSet, Parameter, Tensor, TensorError};
use layers::{tokens_to_grid, Decoder, FusionGate, Stage};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Class-channel layout of the probability map.
pub const CLASS_NOT_TRAVERSABLE: usize = 0;
pub const CLASS_TRAVERSABLE: usize = 1;

/// Probability clamp inside the loss; keeps the worst case finite.
pub const PROB_CLAMP: f32 = 1e-7;

/// Default initialization: truncated normal, std 0.02, for projections.
pub const DEFAULT_INIT_STD: f64 = 0.02;

/// Per-stage feature triple, in grid layout `[C_i, h_i, w_i]`.
pub struct StageFeatures {
    pub rgb: Tensor,
    pub sn: Tensor,
    pub fused: Tensor,
    pub grid: (usize, usize),
}

pub struct OffNet {
    config: ModelConfig,
    params: ParamSet,
    rgb_stages: Vec<Stage>,
    sn_stages: Vec<Stage>,
    fusion: Vec<Option<FusionGate>>,
    decoder: Decoder,
}

impl OffNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::with_init(config, seed, DEFAULT_INIT_STD)
    }

    /// Build with a custom weight-initialization scale (the gradient oracle
    /// prefers a better-conditioned operating point than std 0.02).
    pub fn with_init(config: ModelConfig, seed: u64, init_std: f64) -> Result<Self> {
        config.validate()?;
        let params = ParamSet::new(seed);
        let init = Init::TruncNormal(init_std);
        let root = params.root();

        let build_stream = |name: &str| -> Result<Vec<Stage>> {
            let vb = root.pp(name);
            (0..config.encoder_stages)
                .map(|i| {
                    let in_ch = if i == 0 { 3 } else { config.stage_dims[i - 1] };
                    Stage::new(
                        &vb.pp(&format!("stage{}", i + 1)),
                        i,
                        in_ch,
                        config.stage_dims[i],
                        config.stage_depths[i],
                        config.stage_heads[i],
                        config.reduction_ratios[i],
                        init,
                    )
                })
                .collect()
        };
        let rgb_stages = build_stream("enc_rgb")?;
        let sn_stages = build_stream("enc_sn")?;

        let fusion = (0..config.encoder_stages)
            .map(|i| {
                if config.fusion_enabled {
                    FusionGate::new(
                        &root.pp(&format!("fusion.stage{}", i + 1)),
                        config.stage_dims[i],
                        init,
                    )
                    .map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let decoder = Decoder::new(
            &root.pp("decoder"),
            &config.stage_dims[..config.encoder_stages],
            config.decoder_dim,
            config.num_classes,
            init,
        )?;

        Ok(OffNet {
            config,
            params,
            rgb_stages,
            sn_stages,
            fusion,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> Vec<Rc<Parameter>> {
        self.params.parameters()
    }

    pub fn find_parameter(&self, name: &str) -> Option<Rc<Parameter>> {
        self.params.find(name)
    }

    /// Exact count of scalar entries across all parameters.
    pub fn count_parameters(&self) -> usize {
        self.params.count_scalars()
    }

    pub fn zero_grads(&self) {
        self.params.zero_grads();
    }

    fn check_input(&self, name: &str, x: &Tensor) -> Result<()> {
        let expect = [3, self.config.input_h, self.config.input_w];
        if x.shape() != expect {
            return Err(ModelError::Config(format!(
                "{name} input has shape {:?}, config expects {expect:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Run the two encoder streams with per-stage fusion. The refined
    /// streams chain into the next stage; `fused` is what the decoder sees.
    pub fn forward_features(&self, image: &Tensor, normals: &Tensor) -> Result<Vec<StageFeatures>> {
        self.check_input("image", image)?;
        self.check_input("surface-normal", normals)?;
        let mut features = Vec::with_capacity(self.config.encoder_stages);
        let mut rgb_in = image.clone();
        let mut sn_in = normals.clone();
        for i in 0..self.config.encoder_stages {
            let (rgb_tok, (h, w)) = self.rgb_stages[i].forward(&rgb_in)?;
            let (sn_tok, _) = self.sn_stages[i].forward(&sn_in)?;
            let (rgb_out, sn_out, fused) = match &self.fusion[i] {
                Some(gate) => {
                    let out = gate.forward(&rgb_tok, &sn_tok)?;
                    (out.img_out, out.sn_out, out.fused)
                }
                None => {
                    let fused = ops::add(&rgb_tok, &sn_tok)?;
                    (rgb_tok, sn_tok, fused)
                }
            };
            let stage = StageFeatures {
                rgb: tokens_to_grid(&rgb_out, h, w)?,
                sn: tokens_to_grid(&sn_out, h, w)?,
                fused: tokens_to_grid(&fused, h, w)?,
                grid: (h, w),
            };
            rgb_in = stage.rgb.clone();
            sn_in = stage.sn.clone();
            features.push(stage);
        }
        Ok(features)
    }

    /// Full forward pass: per-pixel class probabilities `[2, H, W]`.
    pub fn forward(&self, image: &Tensor, normals: &Tensor) -> Result<Tensor> {
        let features = self.forward_features(image, normals)?;
        let fused: Vec<Tensor> = features.iter().map(|f| f.fused.clone()).collect();
        Ok(self
            .decoder
            .forward(&fused, self.config.input_h, self.config.input_w)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.parameters())
    }

    pub fn load(&self, path: &Path) -> Result<()> {
        load_checkpoint(path, &self.parameters())
    }
}

/// Mean binary cross-entropy of a probability map against the binary ground
/// truth, probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(probs: &Tensor, gt: &GroundTruth) -> Result<Tensor> {
    let expect = [2, gt.height, gt.width];
    if probs.shape() != expect {
        return Err(ModelError::Tensor(TensorError::ShapeMismatch {
            op: "bce_loss",
            lhs: probs.shape().to_vec(),
            rhs: expect.to_vec(),
        }));
    }
    let labels: Vec<usize> = gt
        .binary()
        .iter()
        .map(|&t| {
            if t {
                CLASS_TRAVERSABLE
            } else {
                CLASS_NOT_TRAVERSABLE
            }
        })
        .collect();
    Ok(ops::nll_mean(probs, &labels, PROB_CLAMP)?)
}

/// Average per-sample losses into the batch loss (the 1/batch factor).
pub fn batch_mean(losses: &[Tensor]) -> Result<Tensor> {
    let mut iter = losses.iter();
    let first = iter
        .next()
        .ok_or_else(|| ModelError::Config("batch_mean of an empty batch".into()))?;
    let mut total = first.clone();
    for loss in iter {
        total = ops::add(&total, loss)?;
    }
    Ok(ops::mul_scalar(&total, 1.0 / losses.len() as f32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TriClass;
    use crate::rng::SplitMix64;

    fn random_input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        let count: usize = shape.iter().product();
        Tensor::from_vec(
            (0..count).map(|_| rng.uniform(0.0, 1.0) as f32).collect(),
            shape,
        )
        .unwrap()
    }

    fn gt_all(width: usize, height: usize, class: TriClass) -> GroundTruth {
        GroundTruth::from_tri(width, height, vec![class; width * height]).unwrap()
    }

    #[test]
    fn stage_grids_follow_the_resolution_schedule() {
        let model = OffNet::new(ModelConfig::toy(64, 64), 0).unwrap();
        let image = random_input(&[3, 64, 64], 1);
        let normals = random_input(&[3, 64, 64], 2);
        let features = model.forward_features(&image, &normals).unwrap();
        let grids: Vec<(usize, usize)> = features.iter().map(|f| f.grid).collect();
        assert_eq!(grids, vec![(16, 16), (8, 8), (4, 4), (2, 2)]);
        for (i, f) in features.iter().enumerate() {
            let dim = model.config().stage_dims[i];
            assert_eq!(f.rgb.shape(), &[dim, f.grid.0, f.grid.1]);
            assert_eq!(f.sn.shape(), f.rgb.shape());
            assert_eq!(f.fused.shape(), f.rgb.shape());
        }
    }

    #[test]
    fn forward_emits_normalized_probabilities() {
        let model = OffNet::new(ModelConfig::toy(64, 64), 3).unwrap();
        let image = Tensor::zeros(&[3, 64, 64]);
        let normals = Tensor::zeros(&[3, 64, 64]);
        let probs = model.forward(&image, &normals).unwrap();
        assert_eq!(probs.shape(), &[2, 64, 64]);
        let v = probs.to_vec();
        for i in 0..(64 * 64) {
            let sum = v[i] + v[64 * 64 + i];
            assert!(sum.is_finite() && (sum - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let model = OffNet::new(ModelConfig::toy(32, 64), 7).unwrap();
        let image = random_input(&[3, 32, 64], 5);
        let normals = random_input(&[3, 32, 64], 6);
        let a = model.forward(&image, &normals).unwrap().to_vec();
        let b = model.forward(&image, &normals).unwrap().to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn fusion_disabled_sums_the_streams() {
        let mut cfg = ModelConfig::toy(32, 32);
        cfg.fusion_enabled = false;
        let model = OffNet::new(cfg, 11).unwrap();
        let image = random_input(&[3, 32, 32], 8);
        let normals = random_input(&[3, 32, 32], 9);
        let features = model.forward_features(&image, &normals).unwrap();
        for f in &features {
            let sum = ops::add(&f.rgb, &f.sn).unwrap();
            assert_eq!(f.fused.to_vec(), sum.to_vec());
        }
    }

    #[test]
    fn count_parameters_matches_enumeration_oracle() {
        let cfg = ModelConfig::toy(64, 64);
        let model = OffNet::new(cfg.clone(), 0).unwrap();

        // Independent layer-by-layer tally.
        let mut expect = 0usize;
        for _stream in 0..2 {
            for i in 0..4 {
                let c = cfg.stage_dims[i];
                let c_in = if i == 0 { 3 } else { cfg.stage_dims[i - 1] };
                let k = if i == 0 { 7 } else { 3 };
                expect += c * c_in * k * k + c; // embed conv
                expect += 2 * c; // embed norm
                for _ in 0..cfg.stage_depths[i] {
                    expect += 2 * c; // block norm
                    expect += 4 * (c * c + c); // q, k, v, proj
                    let r = cfg.reduction_ratios[i];
                    if r > 1 {
                        expect += c * c * r * r + c; // sr conv
                    }
                    let hidden = c * FFN_EXPANSION;
                    expect += c * hidden + hidden; // fc1
                    expect += hidden * 9 + hidden; // depthwise 3x3
                    expect += hidden * c + c; // fc2
                }
            }
        }
        for i in 0..4 {
            expect += cfg.stage_dims[i] * cfg.stage_dims[i] + cfg.stage_dims[i]; // fusion gate
            expect += cfg.stage_dims[i] * cfg.decoder_dim + cfg.decoder_dim; // decoder proj
        }
        expect += cfg.decoder_dim * 4 * cfg.decoder_dim + cfg.decoder_dim; // decoder fuse
        expect += cfg.decoder_dim * 2 + 2; // classifier

        assert_eq!(model.count_parameters(), expect);
    }

    #[test]
    fn doubling_dims_quadruples_attention_projections() {
        let cfg = ModelConfig::toy(64, 64);
        let mut doubled = cfg.clone();
        for d in &mut doubled.stage_dims {
            *d *= 2;
        }
        let a = OffNet::new(cfg, 0).unwrap();
        let b = OffNet::new(doubled, 0).unwrap();
        for name in [
            "enc_rgb.stage1.block1.attn.q.weight",
            "enc_sn.stage3.block1.attn.proj.weight",
        ] {
            let pa = a.find_parameter(name).unwrap().len();
            let pb = b.find_parameter(name).unwrap().len();
            assert_eq!(pb, 4 * pa, "{name}");
        }
    }

    #[test]
    fn fusion_parameter_difference_is_exactly_the_gate_tally() {
        let cfg_on = ModelConfig::toy(64, 64);
        let mut cfg_off = cfg_on.clone();
        cfg_off.fusion_enabled = false;
        let on = OffNet::new(cfg_on.clone(), 0).unwrap();
        let off = OffNet::new(cfg_off, 0).unwrap();
        let gate_tally: usize = cfg_on.stage_dims.iter().map(|&c| c * c + c).sum();
        assert_eq!(on.count_parameters() - off.count_parameters(), gate_tally);
    }

    #[test]
    fn truncated_encoder_uses_only_the_first_stages() {
        let mut cfg = ModelConfig::toy(64, 64);
        cfg.encoder_stages = 2;
        let model = OffNet::new(cfg, 1).unwrap();
        let image = random_input(&[3, 64, 64], 1);
        let normals = random_input(&[3, 64, 64], 2);
        let features = model.forward_features(&image, &normals).unwrap();
        assert_eq!(features.len(), 2);
        let probs = model.forward(&image, &normals).unwrap();
        assert_eq!(probs.shape(), &[2, 64, 64]);
    }

    #[test]
    fn bce_loss_reference_values() {
        // Uniform 0.5 -> ln 2.
        let probs = Tensor::full(&[2, 2, 2], 0.5);
        let gt = gt_all(2, 2, TriClass::Traversable);
        let loss = bce_loss(&probs, &gt).unwrap().item().unwrap() as f64;
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-6);

        // Perfect prediction -> 0 (up to the clamp).
        let mut data = vec![0.0f32; 8];
        for v in data.iter_mut().skip(4) {
            *v = 1.0;
        }
        let probs = Tensor::from_vec(data, &[2, 2, 2]).unwrap();
        let loss = bce_loss(&probs, &gt).unwrap().item().unwrap();
        assert!(loss.abs() < 1e-5);

        // Worst case stays finite at -ln(1e-7).
        let probs = Tensor::zeros(&[2, 2, 2]);
        let loss = bce_loss(&probs, &gt).unwrap().item().unwrap();
        assert!(loss.is_finite());
        assert!((loss - 16.118095).abs() < 1e-3);
    }

    #[test]
    fn batch_mean_averages_losses() {
        let l1 = Tensor::scalar(1.0);
        let l2 = Tensor::scalar(3.0);
        let m = batch_mean(&[l1, l2]).unwrap();
        assert_eq!(m.item().unwrap(), 2.0);
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let dir = std::env::temp_dir().join(format!("offnet-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let model = OffNet::new(ModelConfig::toy(32, 32), 13).unwrap();
        let p1 = dir.join("a.ckpt");
        let p2 = dir.join("b.ckpt");
        model.save(&p1).unwrap();
        let other = OffNet::new(ModelConfig::toy(32, 32), 14).unwrap();
        assert_ne!(
            other.parameters()[0].tensor().to_vec(),
            model.parameters()[0].tensor().to_vec()
        );
        other.load(&p1).unwrap();
        other.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn checkpoint_rejects_mismatched_architecture() {
        let dir = std::env::temp_dir().join(format!("offnet-ckpt-mis-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let model = OffNet::new(ModelConfig::toy(32, 32), 13).unwrap();
        let path = dir.join("toy.ckpt");
        model.save(&path).unwrap();
        let mut other_cfg = ModelConfig::toy(32, 32);
        other_cfg.stage_dims = [16, 32, 64, 128];
        let other = OffNet::new(other_cfg, 0).unwrap();
        assert!(matches!(other.load(&path), Err(ModelError::Checkpoint(_))));
    }
}
