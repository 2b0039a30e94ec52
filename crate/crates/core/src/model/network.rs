//! Single-box grounding network.
//!
//! A four-stage strided convolutional backbone turns the letterboxed image
//! into `patch_grid²` visual tokens with fixed 2D sine/cosine positions. A
//! small transformer encodes the phrase. The fusion transformer attends over
//! `[REG] ++ visual ++ text` and the fused `[REG]` state is decoded by a
//! three-layer head into a normalized `(cx, cy, w, h)` box.

use candle_core::{DType, Device, Tensor, D};

use super::config::{LoraConfig, ModelConfig};
use super::params::{Init, ParamStore};
use super::tokenizer::tokenize;
use crate::data::image::GrayImage;
use crate::error::{Error, Result};
use crate::geometry::{letterbox, BoxNorm, Projection};

/// Smallest coordinate the box head emits, keeping outputs inside (0, 1].
pub const MIN_BOX_COORD: f64 = 1e-6;

const MASK_BIAS: f64 = 1e9;
const LN_EPS: f64 = 1e-5;

/// Whether low-rank adapters are attached to the weights.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum AdapterState {
    None,
    Attached { config: LoraConfig },
    Merged { config: LoraConfig },
}

#[derive(Debug, Clone)]
pub struct GroundingModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub adapter: AdapterState,
    pos2d: Tensor,
}

type Spec = (String, Vec<usize>, Init);

fn linear_spec(specs: &mut Vec<Spec>, name: &str, fan_in: usize, fan_out: usize, gain: f64) {
    let std = gain * (2.0 / (fan_in + fan_out) as f64).sqrt();
    specs.push((
        format!("{name}.weight"),
        vec![fan_out, fan_in],
        Init::Normal(std),
    ));
    specs.push((format!("{name}.bias"), vec![fan_out], Init::Zeros));
}

fn norm_spec(specs: &mut Vec<Spec>, name: &str, e: usize) {
    specs.push((format!("{name}.gamma"), vec![e], Init::Ones));
    specs.push((format!("{name}.beta"), vec![e], Init::Zeros));
}

fn block_spec(specs: &mut Vec<Spec>, prefix: &str, e: usize) {
    norm_spec(specs, &format!("{prefix}.ln1"), e);
    for p in ["q", "k", "v", "o"] {
        linear_spec(specs, &format!("{prefix}.attn.{p}"), e, e, 1.0);
    }
    norm_spec(specs, &format!("{prefix}.ln2"), e);
    linear_spec(specs, &format!("{prefix}.mlp.fc1"), e, 2 * e, 1.0);
    linear_spec(specs, &format!("{prefix}.mlp.fc2"), 2 * e, e, 1.0);
}

/// Names, shapes and initializers of every base weight.
pub fn param_specs(cfg: &ModelConfig) -> Vec<Spec> {
    let e = cfg.embed_dim;
    let mut specs = Vec::new();

    let mut c_in = 1;
    for (i, c_out) in cfg.backbone_channels().into_iter().enumerate() {
        let fan_in = c_in * 9;
        specs.push((
            format!("visual.conv{i}.weight"),
            vec![c_out, c_in, 3, 3],
            Init::Normal((2.0 / fan_in as f64).sqrt()),
        ));
        specs.push((format!("visual.conv{i}.bias"), vec![c_out], Init::Zeros));
        c_in = c_out;
    }
    norm_spec(&mut specs, "visual.norm", e);

    specs.push((
        "text.embed".into(),
        vec![cfg.vocab.len(), e],
        Init::Normal(1.0),
    ));
    specs.push((
        "text.pos".into(),
        vec![cfg.max_text_len, e],
        Init::Normal(0.1),
    ));
    for i in 0..cfg.text_layers {
        block_spec(&mut specs, &format!("text.{i}"), e);
    }
    norm_spec(&mut specs, "text.norm", e);

    specs.push(("fusion.reg".into(), vec![1, e], Init::Normal(1.0)));
    specs.push((
        "fusion.pos".into(),
        vec![cfg.fusion_len(), e],
        Init::Normal(0.1),
    ));
    for i in 0..cfg.fusion_layers {
        block_spec(&mut specs, &format!("fusion.{i}"), e);
    }
    norm_spec(&mut specs, "fusion.norm", e);

    linear_spec(&mut specs, "head.0", e, e, 1.0);
    linear_spec(&mut specs, "head.1", e, e, 1.0);
    linear_spec(&mut specs, "head.2", e, 4, 0.1);
    specs
}

/// Fixed 2D sine/cosine encoding: half the channels code the row, half the column.
fn positional_2d(grid: usize, dim: usize, dtype: DType) -> Result<Tensor> {
    let quarter = dim / 4;
    let mut data = Vec::with_capacity(grid * grid * dim);
    for r in 0..grid {
        for c in 0..grid {
            for (pos, _) in [(r, 0), (c, 1)] {
                for k in 0..quarter {
                    let freq = 1.0 / 100f64.powf(k as f64 / quarter as f64);
                    data.push((pos as f64 * freq).sin());
                }
                for k in 0..quarter {
                    let freq = 1.0 / 100f64.powf(k as f64 / quarter as f64);
                    data.push((pos as f64 * freq).cos());
                }
            }
        }
    }
    Ok(Tensor::from_vec(data, (grid * grid, dim), &Device::Cpu)?.to_dtype(dtype)?)
}

fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    let xn = xc.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
    Ok(xn.broadcast_mul(gamma)?.broadcast_add(beta)?)
}

fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// 3x3 convolution, stride 2, zero padding 1, as an explicit im2col matmul.
///
/// Spatial sides must be even.
pub fn conv3x3_stride2(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (bs, c, h, wd) = x.dims4()?;
    let c_out = w.dim(0)?;
    if h % 2 != 0 || wd % 2 != 0 || w.dims() != [c_out, c, 3, 3] {
        return Err(Error::InvalidInput(format!(
            "conv3x3_stride2 got input {:?} and kernel {:?}",
            x.dims(),
            w.dims()
        )));
    }
    let (oh, ow) = (h / 2, wd / 2);
    let xp = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    let mut cols = Vec::with_capacity(9);
    for ky in 0..3 {
        for kx in 0..3 {
            let tap = xp
                .narrow(2, ky, h)?
                .narrow(3, kx, wd)?
                .contiguous()?
                .reshape((bs, c, oh, 2, ow, 2))?
                .narrow(3, 0, 1)?
                .narrow(5, 0, 1)?
                .contiguous()?
                .reshape((bs, c, oh * ow))?;
            cols.push(tap);
        }
    }
    let col = Tensor::stack(&cols, 2)?.reshape((bs, c * 9, oh * ow))?;
    let y = w.reshape((c_out, c * 9))?.broadcast_matmul(&col)?;
    Ok(y.broadcast_add(&b.reshape((1, c_out, 1))?)?
        .reshape((bs, c_out, oh, ow))?)
}

/// `(sigmoid(x))` via tanh, which has a well-behaved gradient at both tails.
fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x * 0.5)?.tanh()? + 1.0)?.affine(0.5, 0.0)?)
}

impl GroundingModel {
    /// Freshly initialized weights (the general-stage starting point).
    pub fn init(config: ModelConfig, dtype: DType) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&param_specs(&config), config.init_seed, dtype)?;
        Self::from_params(config, params, AdapterState::None)
    }

    pub fn from_params(
        config: ModelConfig,
        params: ParamStore,
        adapter: AdapterState,
    ) -> Result<Self> {
        config.validate()?;
        for (name, shape, _) in param_specs(&config) {
            let t = params
                .get(&name)
                .map_err(|_| Error::Checkpoint(format!("missing weight {name}")))?;
            if t.dims() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "weight {name} has shape {:?}, config expects {shape:?}",
                    t.dims()
                )));
            }
        }
        let pos2d = positional_2d(config.patch_grid as usize, config.embed_dim, params.dtype())?;
        Ok(Self {
            config,
            params,
            adapter,
            pos2d,
        })
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    /// A deep copy running in `dtype` (f64 is used for gradient checks).
    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        Self::from_params(
            self.config.clone(),
            self.params.to_dtype(dtype)?,
            self.adapter.clone(),
        )
    }

    fn p(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name)
    }

    /// `x W^T + b`, plus the low-rank update when an adapter is attached.
    fn linear(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        let w = self.p(&format!("{name}.weight"))?;
        let b = self.p(&format!("{name}.bias"))?;
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().expect("rank >= 1");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let x2 = x.reshape((rows, in_dim))?;
        let mut y = x2.matmul(&w.t()?)?.broadcast_add(b)?;
        if let AdapterState::Attached { config } = &self.adapter {
            let a_name = format!("{name}.lora_a");
            if self.params.contains(&a_name) {
                let a = self.p(&a_name)?;
                let bm = self.p(&format!("{name}.lora_b"))?;
                let delta = x2.matmul(&a.t()?)?.matmul(&bm.t()?)?;
                y = (y + (delta * config.scale())?)?;
            }
        }
        let mut out_dims = dims;
        *out_dims.last_mut().expect("rank >= 1") = w.dim(0)?;
        Ok(y.reshape(out_dims)?)
    }

    fn norm(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        layer_norm(
            x,
            self.p(&format!("{name}.gamma"))?,
            self.p(&format!("{name}.beta"))?,
        )
    }

    /// Multi-head self-attention; `key_bias` is `(N, 1, 1, T)` with large
    /// negative entries at padded keys.
    fn attention(&self, x: &Tensor, prefix: &str, key_bias: &Tensor) -> Result<Tensor> {
        let (n, t, e) = x.dims3()?;
        let h = self.config.fusion_heads;
        let d = e / h;
        let split = |y: Tensor| -> Result<Tensor> {
            Ok(y.reshape((n, t, h, d))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.linear(x, &format!("{prefix}.q"))?)?;
        let k = split(self.linear(x, &format!("{prefix}.k"))?)?;
        let v = split(self.linear(x, &format!("{prefix}.v"))?)?;
        let scores = (q.matmul(&k.t()?)? * (1.0 / (d as f64).sqrt()))?.broadcast_add(key_bias)?;
        let probs = softmax_last(&scores)?;
        let out = probs.matmul(&v)?.transpose(1, 2)?.reshape((n, t, e))?;
        self.linear(&out, &format!("{prefix}.o"))
    }

    fn block(&self, x: &Tensor, prefix: &str, key_bias: &Tensor) -> Result<Tensor> {
        let a = self.attention(
            &self.norm(x, &format!("{prefix}.ln1"))?,
            &format!("{prefix}.attn"),
            key_bias,
        )?;
        let x = (x + a)?;
        let h = self.linear(
            &self.norm(&x, &format!("{prefix}.ln2"))?,
            &format!("{prefix}.mlp.fc1"),
        )?;
        let h = self.linear(&h.gelu()?, &format!("{prefix}.mlp.fc2"))?;
        Ok((x + h)?)
    }

    fn key_bias(mask: &Tensor) -> Result<Tensor> {
        let (n, t) = mask.dims2()?;
        Ok(((mask - 1.0)? * MASK_BIAS)?.reshape((n, 1, 1, t))?)
    }

    /// Pooled convolutional feature map `(B, C, patch_grid, patch_grid)`.
    pub fn backbone(&self, images: &Tensor) -> Result<Tensor> {
        let s = self.config.image_size as usize;
        let dims = images.dims();
        if dims.len() != 4 || dims[1] != 1 || dims[2] != s || dims[3] != s {
            return Err(Error::InvalidInput(format!(
                "expected images of shape (B, 1, {s}, {s}), got {dims:?}"
            )));
        }
        let mut x = images.clone();
        for i in 0..4 {
            let w = self.p(&format!("visual.conv{i}.weight"))?;
            let b = self.p(&format!("visual.conv{i}.bias"))?;
            x = conv3x3_stride2(&x, w, b)?.gelu()?;
        }
        let k = self.config.pool_factor();
        if k > 1 {
            x = x.avg_pool2d(k)?;
        }
        Ok(x)
    }

    /// Backbone features as `(B, patch_grid², embed_dim)` tokens, before
    /// positional encoding.
    pub fn encode_image_features(&self, images: &Tensor) -> Result<Tensor> {
        let x = self.backbone(images)?;
        let (b, c, gh, gw) = x.dims4()?;
        let tokens = x.reshape((b, c, gh * gw))?.transpose(1, 2)?.contiguous()?;
        self.norm(&tokens, "visual.norm")
    }

    pub fn encode_image(&self, images: &Tensor) -> Result<Tensor> {
        Ok(self
            .encode_image_features(images)?
            .broadcast_add(&self.pos2d)?)
    }

    /// Text tokens `(N, max_text_len, embed_dim)`; padded keys are masked.
    pub fn encode_text(&self, ids: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (n, l) = ids.dims2()?;
        if l != self.config.max_text_len {
            return Err(Error::InvalidInput(format!(
                "expected {} token ids per phrase, got {l}",
                self.config.max_text_len
            )));
        }
        let e = self.config.embed_dim;
        let emb = self
            .p("text.embed")?
            .index_select(&ids.flatten_all()?, 0)?
            .reshape((n, l, e))?;
        let mut x = emb.broadcast_add(self.p("text.pos")?)?;
        let bias = Self::key_bias(mask)?;
        for i in 0..self.config.text_layers {
            x = self.block(&x, &format!("text.{i}"), &bias)?;
        }
        self.norm(&x, "text.norm")
    }

    /// Predicted `(cx, cy, w, h)` per query, shape `(N, 4)`.
    ///
    /// `images` is `(B, 1, S, S)`; `image_index[i]` picks the image for query
    /// `i`; `ids` and `mask` are `(N, max_text_len)`.
    pub fn forward(
        &self,
        images: &Tensor,
        image_index: &Tensor,
        ids: &Tensor,
        mask: &Tensor,
    ) -> Result<Tensor> {
        let visual = self.encode_image(images)?.index_select(image_index, 0)?;
        let text = self.encode_text(ids, mask)?;
        let (n, _, e) = text.dims3()?;
        let reg = self
            .p("fusion.reg")?
            .reshape((1, 1, e))?
            .broadcast_as((n, 1, e))?;
        let mut x =
            Tensor::cat(&[&reg, &visual, &text], 1)?.broadcast_add(self.p("fusion.pos")?)?;
        let prefix_mask = Tensor::ones(
            (n, 1 + self.config.visual_tokens()),
            self.dtype(),
            &Device::Cpu,
        )?;
        let bias = Self::key_bias(&Tensor::cat(&[&prefix_mask, mask], 1)?)?;
        for i in 0..self.config.fusion_layers {
            x = self.block(&x, &format!("fusion.{i}"), &bias)?;
        }
        let x = self.norm(&x, "fusion.norm")?;
        let reg_out = x.narrow(1, 0, 1)?.squeeze(1)?;
        let h = self.linear(&reg_out, "head.0")?.gelu()?;
        let h = self.linear(&h, "head.1")?.gelu()?;
        let out = sigmoid(&self.linear(&h, "head.2")?)?;
        Ok(out.clamp(MIN_BOX_COORD, 1.0)?)
    }

    /// Builds the input tensors for a set of letterboxed images and phrases.
    pub fn prepare(
        &self,
        images: &[&GrayImage],
        queries: &[(usize, &str)],
    ) -> Result<PreparedBatch> {
        let s = self.config.image_size;
        let mut pix = Vec::with_capacity(images.len() * (s * s) as usize);
        for img in images {
            if img.width != s || img.height != s {
                return Err(Error::InvalidInput(format!(
                    "expected {s}x{s} letterboxed image, got {}x{}",
                    img.width, img.height
                )));
            }
            pix.extend_from_slice(&img.pixels);
        }
        let l = self.config.max_text_len;
        let mut ids = Vec::with_capacity(queries.len() * l);
        let mut mask = Vec::with_capacity(queries.len() * l);
        let mut index = Vec::with_capacity(queries.len());
        for (img, text) in queries {
            if *img >= images.len() {
                return Err(Error::InvalidInput(format!(
                    "query refers to image {img} of {}",
                    images.len()
                )));
            }
            let t = tokenize(text, &self.config);
            if t.is_all_padding() {
                return Err(Error::InvalidInput(format!(
                    "phrase '{text}' has no tokens"
                )));
            }
            ids.extend(t.ids);
            mask.extend(t.mask.iter().map(|&m| m as f32));
            index.push(*img as u32);
        }
        let dev = Device::Cpu;
        let n = queries.len();
        Ok(PreparedBatch {
            images: Tensor::from_vec(pix, (images.len(), 1, s as usize, s as usize), &dev)?
                .to_dtype(self.dtype())?,
            image_index: Tensor::from_vec(index, n, &dev)?,
            ids: Tensor::from_vec(ids, (n, l), &dev)?,
            mask: Tensor::from_vec(mask, (n, l), &dev)?.to_dtype(self.dtype())?,
        })
    }

    pub fn forward_prepared(&self, batch: &PreparedBatch) -> Result<Tensor> {
        self.forward(&batch.images, &batch.image_index, &batch.ids, &batch.mask)
    }

    /// Normalized boxes in the letterboxed frame, one per query.
    pub fn predict(
        &self,
        images: &[&GrayImage],
        queries: &[(usize, &str)],
    ) -> Result<Vec<BoxNorm>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.forward_prepared(&self.prepare(images, queries)?)?;
        let rows = out.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        rows.into_iter()
            .map(|r| BoxNorm::new(r[0], r[1], r[2], r[3]))
            .collect()
    }

    /// Grounds one phrase in one source image and maps the box back to
    /// source pixels, clamped to the image.
    pub fn ground(&self, image: &GrayImage, text: &str) -> Result<Grounding> {
        let lb = letterbox(image.size(), self.config.image_size)?;
        let boxed = image.letterboxed(&lb)?;
        let norm = self.predict(&[&boxed], &[(0, text)])?[0];
        let projection = lb.project(&norm);
        if projection.was_clamped {
            tracing::info!(raw = ?projection.raw, clamped = ?projection.clamped, "clamped predicted box to image bounds");
        }
        Ok(Grounding { norm, projection })
    }
}

#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub images: Tensor,
    pub image_index: Tensor,
    pub ids: Tensor,
    pub mask: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grounding {
    /// Box in the letterboxed model frame.
    pub norm: BoxNorm,
    /// Box in source pixels.
    pub projection: Projection,
}

impl Grounding {
    pub fn box_xyxy(&self) -> [f64; 4] {
        self.projection.clamped
    }
}
