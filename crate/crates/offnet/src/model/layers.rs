//! Network building blocks: patch embedding, efficient self-attention,
//! mix-FFN, encoder blocks, the fusion gate, and the all-MLP decoder.
//!
//! Token tensors are `[N, C]` with `N = h * w` in row-major grid order;
//! grid tensors are `[C, h, w]`.

use crate::tensor::{ops, Init, ParamBuilder, Parameter, Tensor};
use std::rc::Rc;

use super::config::FFN_EXPANSION;
use super::Result;

pub const LN_EPS: f32 = 1e-6;

pub fn grid_to_tokens(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    Ok(ops::permute(&ops::reshape(x, &[c, h * w])?, &[1, 0])?)
}

pub fn tokens_to_grid(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let c = x.shape()[1];
    Ok(ops::reshape(&ops::permute(x, &[1, 0])?, &[c, h, w])?)
}

pub struct Linear {
    pub weight: Rc<Parameter>,
    pub bias: Rc<Parameter>,
}

impl Linear {
    pub fn new(vb: &ParamBuilder, in_dim: usize, out_dim: usize, init: Init) -> Result<Self> {
        Ok(Self {
            weight: vb.take("weight", &[in_dim, out_dim], init)?,
            bias: vb.take("bias", &[out_dim], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::linear(
            x,
            self.weight.tensor(),
            Some(self.bias.tensor()),
        )?)
    }
}

pub struct Conv2dLayer {
    pub weight: Rc<Parameter>,
    pub bias: Rc<Parameter>,
    stride: usize,
    padding: usize,
    groups: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        vb: &ParamBuilder,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        init: Init,
    ) -> Result<Self> {
        Ok(Self {
            weight: vb.take("weight", &[out_ch, in_ch / groups, kernel, kernel], init)?,
            bias: vb.take("bias", &[out_ch], Init::Zeros)?,
            stride,
            padding,
            groups,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::conv2d(
            x,
            self.weight.tensor(),
            Some(self.bias.tensor()),
            self.stride,
            self.padding,
            self.groups,
        )?)
    }
}

pub struct LayerNormLayer {
    pub gamma: Rc<Parameter>,
    pub beta: Rc<Parameter>,
}

impl LayerNormLayer {
    pub fn new(vb: &ParamBuilder, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: vb.take("gamma", &[dim], Init::Ones)?,
            beta: vb.take("beta", &[dim], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::layer_norm(
            x,
            self.gamma.tensor(),
            self.beta.tensor(),
            LN_EPS,
        )?)
    }
}

/// Overlapped convolutional patch embedding followed by layer norm.
/// Stage 1 uses kernel 7 / stride 4 / padding 3, later stages kernel 3 /
/// stride 2 / padding 1, so grids follow the 1/4, 1/8, 1/16, 1/32 schedule.
pub struct PatchEmbed {
    pub conv: Conv2dLayer,
    pub norm: LayerNormLayer,
}

pub fn patch_embed_geometry(stage: usize) -> (usize, usize, usize) {
    if stage == 0 {
        (7, 4, 3)
    } else {
        (3, 2, 1)
    }
}

impl PatchEmbed {
    pub fn new(
        vb: &ParamBuilder,
        stage: usize,
        in_ch: usize,
        out_ch: usize,
        init: Init,
    ) -> Result<Self> {
        let (kernel, stride, padding) = patch_embed_geometry(stage);
        Ok(Self {
            conv: Conv2dLayer::new(
                &vb.pp("conv"),
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
                1,
                init,
            )?,
            norm: LayerNormLayer::new(&vb.pp("norm"), out_ch)?,
        })
    }

    /// Returns normalized tokens plus the embedded grid extents.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, (usize, usize))> {
        let grid = self.conv.forward(x)?;
        let (h, w) = (grid.shape()[1], grid.shape()[2]);
        let tokens = self.norm.forward(&grid_to_tokens(&grid)?)?;
        Ok((tokens, (h, w)))
    }
}

/// Scaled dot-product attention whose keys and values come from a spatially
/// reduced copy of the sequence (a learned stride-r projection) when the
/// reduction ratio exceeds 1.
pub struct EfficientSelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
    sr: Option<Conv2dLayer>,
    dim: usize,
    heads: usize,
    reduction: usize,
}

impl EfficientSelfAttention {
    pub fn new(
        vb: &ParamBuilder,
        dim: usize,
        heads: usize,
        reduction: usize,
        init: Init,
    ) -> Result<Self> {
        let sr = if reduction > 1 {
            Some(Conv2dLayer::new(
                &vb.pp("sr"),
                dim,
                dim,
                reduction,
                reduction,
                0,
                1,
                init,
            )?)
        } else {
            None
        };
        Ok(Self {
            q: Linear::new(&vb.pp("q"), dim, dim, init)?,
            k: Linear::new(&vb.pp("k"), dim, dim, init)?,
            v: Linear::new(&vb.pp("v"), dim, dim, init)?,
            proj: Linear::new(&vb.pp("proj"), dim, dim, init)?,
            sr,
            dim,
            heads,
            reduction,
        })
    }

    pub fn forward(&self, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        let n = h * w;
        debug_assert_eq!(x.shape(), &[n, self.dim]);
        if self.dim % self.heads != 0 {
            return Err(crate::tensor::TensorError::Dimension {
                op: "efficient_self_attention",
                msg: format!("dim {} not divisible by {} heads", self.dim, self.heads),
            }
            .into());
        }
        if self.reduction > 1 && (h % self.reduction != 0 || w % self.reduction != 0) {
            return Err(crate::tensor::TensorError::Dimension {
                op: "efficient_self_attention",
                msg: format!("grid {h}x{w} not divisible by reduction {}", self.reduction),
            }
            .into());
        }
        let q = self.q.forward(x)?;
        let kv_src = match &self.sr {
            Some(sr) => {
                let reduced = sr.forward(&tokens_to_grid(x, h, w)?)?;
                grid_to_tokens(&reduced)?
            }
            None => x.clone(),
        };
        let m = kv_src.shape()[0];
        let k = self.k.forward(&kv_src)?;
        let v = self.v.forward(&kv_src)?;

        let d = self.dim / self.heads;
        let qh = ops::permute(&ops::reshape(&q, &[n, self.heads, d])?, &[1, 0, 2])?;
        let kt = ops::permute(&ops::reshape(&k, &[m, self.heads, d])?, &[1, 2, 0])?;
        let vh = ops::permute(&ops::reshape(&v, &[m, self.heads, d])?, &[1, 0, 2])?;

        let scale = 1.0 / (d as f32).sqrt();
        let scores = ops::mul_scalar(&ops::matmul(&qh, &kt)?, scale);
        let attn = ops::softmax(&scores, 2)?;
        let context = ops::matmul(&attn, &vh)?;
        let merged = ops::reshape(&ops::permute(&context, &[1, 0, 2])?, &[n, self.dim])?;
        self.proj.forward(&merged)
    }
}

/// Position-encoding feed-forward: expand, 3x3 depthwise convolution on the
/// grid, GELU, contract, residual add.
pub struct MixFfn {
    pub fc1: Linear,
    pub dwconv: Conv2dLayer,
    pub fc2: Linear,
}

impl MixFfn {
    pub fn new(vb: &ParamBuilder, dim: usize, init: Init) -> Result<Self> {
        let hidden = dim * FFN_EXPANSION;
        Ok(Self {
            fc1: Linear::new(&vb.pp("fc1"), dim, hidden, init)?,
            dwconv: Conv2dLayer::new(&vb.pp("dwconv"), hidden, hidden, 3, 1, 1, hidden, init)?,
            fc2: Linear::new(&vb.pp("fc2"), hidden, dim, init)?,
        })
    }

    pub fn forward(&self, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        let expanded = self.fc1.forward(x)?;
        let conv = self.dwconv.forward(&tokens_to_grid(&expanded, h, w)?)?;
        let activated = ops::gelu(&grid_to_tokens(&conv)?);
        let contracted = self.fc2.forward(&activated)?;
        Ok(ops::add(&contracted, x)?)
    }
}

/// One encoder block: pre-norm attention with residual, then mix-FFN.
pub struct Block {
    norm: LayerNormLayer,
    attn: EfficientSelfAttention,
    ffn: MixFfn,
}

impl Block {
    pub fn new(
        vb: &ParamBuilder,
        dim: usize,
        heads: usize,
        reduction: usize,
        init: Init,
    ) -> Result<Self> {
        Ok(Self {
            norm: LayerNormLayer::new(&vb.pp("norm"), dim)?,
            attn: EfficientSelfAttention::new(&vb.pp("attn"), dim, heads, reduction, init)?,
            ffn: MixFfn::new(&vb.pp("ffn"), dim, init)?,
        })
    }

    pub fn forward(&self, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        let attended = self.attn.forward(&self.norm.forward(x)?, h, w)?;
        let residual = ops::add(&attended, x)?;
        self.ffn.forward(&residual, h, w)
    }
}

/// One hierarchical stage: patch embedding followed by its blocks.
pub struct Stage {
    embed: PatchEmbed,
    blocks: Vec<Block>,
}

impl Stage {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        vb: &ParamBuilder,
        stage: usize,
        in_ch: usize,
        dim: usize,
        depth: usize,
        heads: usize,
        reduction: usize,
        init: Init,
    ) -> Result<Self> {
        let embed = PatchEmbed::new(&vb.pp("embed"), stage, in_ch, dim, init)?;
        let blocks = (0..depth)
            .map(|j| {
                Block::new(
                    &vb.pp(&format!("block{}", j + 1)),
                    dim,
                    heads,
                    reduction,
                    init,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { embed, blocks })
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, (usize, usize))> {
        let (mut tokens, (h, w)) = self.embed.forward(x)?;
        for block in &self.blocks {
            tokens = block.forward(&tokens, h, w)?;
        }
        Ok((tokens, (h, w)))
    }
}

pub struct FusionOutput {
    pub img_out: Tensor,
    pub sn_out: Tensor,
    pub fused: Tensor,
    pub gate: Tensor,
}

/// Gated two-stream fusion: a per-channel linear layer over the summed
/// features followed by a sigmoid produces the gate `a`; the image stream is
/// re-weighted by `a`, the surface-normal stream by its complement `1 - a`,
/// and each keeps a residual path.
pub struct FusionGate {
    pub mlp: Linear,
}

impl FusionGate {
    pub fn new(vb: &ParamBuilder, dim: usize, init: Init) -> Result<Self> {
        Ok(Self {
            mlp: Linear::new(&vb.pp("gate"), dim, dim, init)?,
        })
    }

    pub fn forward(&self, img: &Tensor, sn: &Tensor) -> Result<FusionOutput> {
        let summed = ops::add(img, sn)?;
        let gate = ops::sigmoid(&self.mlp.forward(&summed)?);
        let img_out = ops::add(&ops::mul(&gate, img)?, img)?;
        let complement = ops::add_scalar(&ops::mul_scalar(&gate, -1.0), 1.0);
        let sn_out = ops::add(&ops::mul(&complement, sn)?, sn)?;
        let fused = ops::add(&img_out, &sn_out)?;
        Ok(FusionOutput {
            img_out,
            sn_out,
            fused,
            gate,
        })
    }
}

/// All-MLP decoder: per-stage linear projection to a common width, bilinear
/// upsampling to the 1/4-scale grid, concatenation, linear fusion, linear
/// classification, upsampling to the input resolution, and a class softmax.
pub struct Decoder {
    proj: Vec<Linear>,
    fuse: Linear,
    classifier: Linear,
}

impl Decoder {
    pub fn new(
        vb: &ParamBuilder,
        stage_dims: &[usize],
        decoder_dim: usize,
        num_classes: usize,
        init: Init,
    ) -> Result<Self> {
        let proj = stage_dims
            .iter()
            .enumerate()
            .map(|(i, &dim)| Linear::new(&vb.pp(&format!("proj{}", i + 1)), dim, decoder_dim, init))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            proj,
            fuse: Linear::new(
                &vb.pp("fuse"),
                decoder_dim * stage_dims.len(),
                decoder_dim,
                init,
            )?,
            classifier: Linear::new(&vb.pp("classifier"), decoder_dim, num_classes, init)?,
        })
    }

    /// `features` are fused stage grids `[C_i, h_i, w_i]`, finest first.
    pub fn forward(&self, features: &[Tensor], out_h: usize, out_w: usize) -> Result<Tensor> {
        let (h0, w0) = (features[0].shape()[1], features[0].shape()[2]);
        let mut upsampled = Vec::with_capacity(features.len());
        for (feat, proj) in features.iter().zip(&self.proj) {
            let (h, w) = (feat.shape()[1], feat.shape()[2]);
            let projected = proj.forward(&grid_to_tokens(feat)?)?;
            upsampled.push(ops::resize_bilinear(
                &tokens_to_grid(&projected, h, w)?,
                h0,
                w0,
            )?);
        }
        let refs: Vec<&Tensor> = upsampled.iter().collect();
        let stacked = ops::concat(&refs, 0)?;
        let fused = self.fuse.forward(&grid_to_tokens(&stacked)?)?;
        let logits = self.classifier.forward(&fused)?;
        let grid = tokens_to_grid(&logits, h0, w0)?;
        let full = ops::resize_bilinear(&grid, out_h, out_w)?;
        Ok(ops::softmax(&full, 0)?)
    }
}
