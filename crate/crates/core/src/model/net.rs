use super::input::SampleInput;
use super::{FusionMode, ModelConfig};
use crate::erp::{aggregate_band_features, LatitudeWeights};
use crate::error::{Error, Result};
use crate::nn::ops::{self, LayerNormCache};
use crate::nn::params::{init_rng, InitRng};
use crate::nn::{
    AttentionCache, Conv2d, Gradients, LayerNorm, Linear, MultiHeadAttention, ParamId, ParamStore, Tensor,
};

/// Sinusoidal position table `[t, d]`.
fn positional_encoding(t: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; t * d];
    for pos in 0..t {
        for i in 0..d {
            let freq = 10_000f64.powf(-((i / 2 * 2) as f64) / d as f64);
            let angle = pos as f64 * freq;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![t, d], data).expect("pe shape")
}

// ---------------------------------------------------------------------------
// convolutional encoders

struct ConvStack {
    convs: Vec<Conv2d>,
    pool_after: Vec<bool>,
    proj: Linear,
}

struct StageCache {
    input: Tensor,
    pre: Tensor,
    pool: Option<(Vec<usize>, Vec<usize>)>,
}

struct ConvStackCache {
    stages: Vec<StageCache>,
    gap_shape: Vec<usize>,
    pooled: Tensor,
}

impl ConvStack {
    fn new(
        store: &mut ParamStore,
        rng: &mut InitRng,
        name: &str,
        channels: &[usize],
        pool_after: Vec<bool>,
        d_model: usize,
    ) -> Result<Self> {
        let mut convs = Vec::with_capacity(channels.len());
        let mut c_in = 1;
        for (i, &c) in channels.iter().enumerate() {
            convs.push(Conv2d::new(store, rng, &format!("{name}.conv{i}"), c_in, c, 3, 1)?);
            c_in = c;
        }
        let proj = Linear::new(store, rng, &format!("{name}.proj"), c_in, d_model)?;
        Ok(ConvStack {
            convs,
            pool_after,
            proj,
        })
    }

    /// `[N, 1, H, W] -> [N, d_model]`
    fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, ConvStackCache)> {
        let mut h = x.clone();
        let mut stages = Vec::with_capacity(self.convs.len());
        for (conv, &pool) in self.convs.iter().zip(&self.pool_after) {
            let pre = conv.forward(store, &h)?;
            let act = ops::relu(&pre);
            let (next, pool) = if pool {
                let (p, idx) = ops::maxpool2(&act)?;
                (p, Some((act.shape().to_vec(), idx)))
            } else {
                (act, None)
            };
            stages.push(StageCache { input: h, pre, pool });
            h = next;
        }
        let gap_shape = h.shape().to_vec();
        let pooled = ops::global_avg_pool(&h)?;
        let y = self.proj.forward(store, &pooled)?;
        Ok((
            y,
            ConvStackCache {
                stages,
                gap_shape,
                pooled,
            },
        ))
    }

    fn backward(&self, store: &ParamStore, cache: &ConvStackCache, dy: &Tensor, grads: &mut Gradients) {
        let dpooled = self.proj.backward(store, &cache.pooled, dy, grads);
        let mut dh = ops::global_avg_pool_backward(&cache.gap_shape, &dpooled);
        for (i, (conv, st)) in self.convs.iter().zip(&cache.stages).enumerate().rev() {
            if let Some((shape, idx)) = &st.pool {
                dh = ops::maxpool2_backward(shape, idx, &dh);
            }
            let dpre = ops::relu_backward(&st.pre, &dh);
            if i == 0 {
                conv.backward_params(store, &st.input, &dpre, grads);
            } else {
                dh = conv.backward(store, &st.input, &dpre, grads);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// transformer block

struct Block {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    cross: Option<(LayerNorm, MultiHeadAttention)>,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

struct BlockCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    cross: Option<(LayerNormCache, AttentionCache)>,
    ln2: LayerNormCache,
    ff_in: Tensor,
    ff_pre: Tensor,
    ff_act: Tensor,
}

impl Block {
    fn new(store: &mut ParamStore, rng: &mut InitRng, name: &str, cfg: &ModelConfig, cross: bool) -> Result<Self> {
        let d = cfg.d_model;
        let ln1 = LayerNorm::new(store, &format!("{name}.ln1"), d)?;
        let attn = MultiHeadAttention::new(store, rng, &format!("{name}.self_attn"), d, cfg.heads)?;
        let cross = if cross {
            Some((
                LayerNorm::new(store, &format!("{name}.ln_cross"), d)?,
                MultiHeadAttention::new(store, rng, &format!("{name}.cross_attn"), d, cfg.heads)?,
            ))
        } else {
            None
        };
        Ok(Block {
            ln1,
            attn,
            cross,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d)?,
            ff1: Linear::new(store, rng, &format!("{name}.ff1"), d, d * cfg.ffn_mult)?,
            ff2: Linear::new(store, rng, &format!("{name}.ff2"), d * cfg.ffn_mult, d)?,
        })
    }

    /// Pre-norm residual sublayers: self-attention, optional cross-attention
    /// to `context`, feed-forward.
    fn forward(&self, store: &ParamStore, x: &Tensor, context: Option<&Tensor>) -> Result<(Tensor, BlockCache)> {
        let (h, ln1) = self.ln1.forward(store, x)?;
        let (a, attn) = self.attn.forward(store, &h, &h)?;
        let mut x = x.add(&a)?;
        let cross = match (&self.cross, context) {
            (Some((ln, mha)), Some(ctx)) => {
                let (h, lc) = ln.forward(store, &x)?;
                let (c, ac) = mha.forward(store, &h, ctx)?;
                x = x.add(&c)?;
                Some((lc, ac))
            }
            (Some(_), None) => return Err(Error::Invalid("cross-attention block needs audio tokens".into())),
            (None, _) => None,
        };
        let (ff_in, ln2) = self.ln2.forward(store, &x)?;
        let ff_pre = self.ff1.forward(store, &ff_in)?;
        let ff_act = ops::relu(&ff_pre);
        let f = self.ff2.forward(store, &ff_act)?;
        let y = ops::guard(x.add(&f)?, "transformer block")?;
        Ok((
            y,
            BlockCache {
                ln1,
                attn,
                cross,
                ln2,
                ff_in,
                ff_pre,
                ff_act,
            },
        ))
    }

    /// Returns the input gradient and, for cross blocks, the context gradient.
    fn backward(
        &self,
        store: &ParamStore,
        cache: &BlockCache,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> (Tensor, Option<Tensor>) {
        let dact = self.ff2.backward(store, &cache.ff_act, dy, grads);
        let dpre = ops::relu_backward(&cache.ff_pre, &dact);
        let dff_in = self.ff1.backward(store, &cache.ff_in, &dpre, grads);
        let mut dx = dy.clone();
        dx.add_assign(&self.ln2.backward(store, &cache.ln2, &dff_in, grads));
        let mut dctx = None;
        if let (Some((ln, mha)), Some((lc, ac))) = (&self.cross, &cache.cross) {
            let (dq, dkv) = mha.backward(store, ac, &dx, grads);
            dx.add_assign(&ln.backward(store, lc, &dq, grads));
            dctx = Some(dkv);
        }
        let (mut dq, dkv) = self.attn.backward(store, &cache.attn, &dx, grads);
        dq.add_assign(&dkv);
        dx.add_assign(&self.ln1.backward(store, &cache.ln1, &dq, grads));
        (dx, dctx)
    }
}

fn mean_rows(x: &Tensor) -> Tensor {
    let (t, d) = (x.shape()[0], x.shape()[1]);
    let mut out = vec![0.0; d];
    for r in 0..t {
        for (o, v) in out.iter_mut().zip(x.row(r)) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= t as f64;
    }
    Tensor::new(vec![1, d], out).expect("mean row")
}

fn mean_rows_backward(t: usize, dy: &Tensor) -> Tensor {
    let d = dy.len();
    let row: Vec<f64> = dy.data().iter().map(|g| g / t as f64).collect();
    Tensor::new(vec![t, d], row.repeat(t)).expect("mean rows grad")
}

// ---------------------------------------------------------------------------
// network

enum Fusion {
    Transformer { blocks: Vec<Block>, norm: LayerNorm },
    Pooled { hidden: Linear },
}

/// Parameter handles of the full model. Parameters themselves live in a
/// [`ParamStore`] passed to every call.
pub struct Network {
    config: ModelConfig,
    encoders: Vec<ConvStack>,
    band_logits: ParamId,
    temporal: Block,
    audio: ConvStack,
    audio_norm: LayerNorm,
    fusion: Fusion,
    head: Linear,
}

/// Scale applied to the Kaiming init of the regression head.
const HEAD_INIT_SCALE: f64 = 1e-3;

/// Raw head output and the score on the `[0, 1]` scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Output {
    pub logit: f64,
    pub score: f64,
}

pub struct ForwardCache {
    encoders: Vec<ConvStackCache>,
    band_feats: Vec<Tensor>,
    band_weights: Vec<f64>,
    temporal: BlockCache,
    audio: ConvStackCache,
    audio_norm: LayerNormCache,
    fusion: FusionCache,
    head_in: Tensor,
}

enum FusionCache {
    Transformer {
        blocks: Vec<BlockCache>,
        norm: LayerNormCache,
        t: usize,
    },
    Pooled {
        t_video: usize,
        t_audio: usize,
        hidden_in: Tensor,
        hidden_pre: Tensor,
    },
}

impl Network {
    /// Build the network, registering freshly initialized parameters in `store`.
    pub fn new(config: &ModelConfig, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        let mut rng = init_rng(config.seed);
        let d = config.d_model;
        let band_pools: Vec<bool> = (0..config.band_channels.len())
            .map(|i| i + 1 < config.band_channels.len())
            .collect();
        let encoders = (0..config.bands)
            .map(|m| {
                ConvStack::new(
                    store,
                    &mut rng,
                    &format!("video.band{m}"),
                    &config.band_channels,
                    band_pools.clone(),
                    d,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let band_logits = store.register("video.band_logits", Tensor::zeros(&[config.bands]))?;
        let temporal = Block::new(store, &mut rng, "video.temporal", config, false)?;
        let audio = ConvStack::new(store, &mut rng, "audio.cnn", &config.audio_channels, vec![true; 4], d)?;
        let audio_norm = LayerNorm::new(store, "audio.norm", d)?;
        let (fusion, head_in) = match config.fusion_mode {
            FusionMode::Transformer => {
                let cross = config.cross_attention_blocks();
                let blocks = (0..config.fusion_blocks)
                    .map(|i| Block::new(store, &mut rng, &format!("fusion.block{i}"), config, cross.contains(&i)))
                    .collect::<Result<Vec<_>>>()?;
                let norm = LayerNorm::new(store, "fusion.norm", d)?;
                (Fusion::Transformer { blocks, norm }, d)
            }
            FusionMode::Cat => (
                Fusion::Pooled {
                    hidden: Linear::new(store, &mut rng, "fusion.hidden", 2 * d, d)?,
                },
                d,
            ),
            FusionMode::Add => (
                Fusion::Pooled {
                    hidden: Linear::new(store, &mut rng, "fusion.hidden", d, d)?,
                },
                d,
            ),
        };
        let head = Linear::new(store, &mut rng, "head", head_in, 1)?;
        for v in store.get_mut(head.w).data_mut() {
            *v *= HEAD_INIT_SCALE;
        }
        Ok(Network {
            config: config.clone(),
            encoders,
            band_logits,
            temporal,
            audio,
            audio_norm,
            fusion,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Effective latitude weights for a given band prior.
    pub fn band_weights(&self, store: &ParamStore, prior: &[f64]) -> Result<Vec<f64>> {
        Ok(LatitudeWeights::new(prior.to_vec(), store.get(self.band_logits).data().to_vec())?.effective_weights)
    }

    fn check_input(&self, input: &SampleInput) -> Result<()> {
        let (bh, bw) = super::BAND_INPUT;
        if input.bands.len() != self.config.bands || input.prior.len() != self.config.bands {
            return Err(Error::Shape(format!(
                "input has {} bands, model expects {}",
                input.bands.len(),
                self.config.bands
            )));
        }
        let t = input.bands[0].shape().first().copied().unwrap_or(0);
        for b in &input.bands {
            b.expect_shape(&[t.max(1), 1, bh, bw], "video band")?;
        }
        let s = input.audio.shape();
        if s.len() != 4 || s[0] == 0 || s[1] != 1 || !s[2].is_multiple_of(16) || !s[3].is_multiple_of(16) {
            return Err(Error::Shape(format!("audio patches have shape {s:?}")));
        }
        Ok(())
    }

    /// Video tokens `[T, d]`.
    fn video_forward(
        &self,
        store: &ParamStore,
        input: &SampleInput,
    ) -> Result<(Tensor, Vec<ConvStackCache>, Vec<Tensor>, Vec<f64>, BlockCache)> {
        let mut caches = Vec::with_capacity(self.encoders.len());
        let mut feats = Vec::with_capacity(self.encoders.len());
        for (enc, band) in self.encoders.iter().zip(&input.bands) {
            let (f, c) = enc.forward(store, band)?;
            feats.push(f);
            caches.push(c);
        }
        let weights = LatitudeWeights::new(input.prior.clone(), store.get(self.band_logits).data().to_vec())?;
        let (t, d) = (feats[0].shape()[0], self.config.d_model);
        let mut agg = Vec::with_capacity(t * d);
        for r in 0..t {
            let rows: Vec<Vec<f64>> = feats.iter().map(|f| f.row(r).to_vec()).collect();
            agg.extend(aggregate_band_features(&rows, &weights)?);
        }
        let mut tokens = Tensor::new(vec![t, d], agg)?;
        if self.config.temporal_encoding {
            tokens = tokens.add(&positional_encoding(t, d))?;
        }
        let (tokens, block) = self.temporal.forward(store, &tokens, None)?;
        Ok((tokens, caches, feats, weights.effective_weights, block))
    }

    /// Audio tokens `[P, d]` before and after the token layer norm.
    fn audio_forward(
        &self,
        store: &ParamStore,
        input: &SampleInput,
    ) -> Result<(Tensor, ConvStackCache, LayerNormCache)> {
        let (mut tokens, cache) = self.audio.forward(store, &input.audio)?;
        if self.config.audio_positional_encoding {
            tokens = tokens.add(&positional_encoding(tokens.shape()[0], self.config.d_model))?;
        }
        let (normed, ln) = self.audio_norm.forward(store, &tokens)?;
        Ok((normed, cache, ln))
    }

    /// Video tokens `[T, d]` after band aggregation and temporal modeling.
    pub fn video_tokens(&self, store: &ParamStore, input: &SampleInput) -> Result<Tensor> {
        self.check_input(input)?;
        Ok(self.video_forward(store, input)?.0)
    }

    /// Audio tokens `[P, d]`.
    pub fn audio_tokens(&self, store: &ParamStore, input: &SampleInput) -> Result<Tensor> {
        self.check_input(input)?;
        Ok(self.audio_forward(store, input)?.0)
    }

    pub fn forward(&self, store: &ParamStore, input: &SampleInput) -> Result<(Output, ForwardCache)> {
        self.check_input(input)?;
        let (video, encoders, band_feats, band_weights, temporal) = self.video_forward(store, input)?;
        let (audio, audio_cache, audio_norm) = self.audio_forward(store, input)?;
        let (head_in, fusion) = match &self.fusion {
            Fusion::Transformer { blocks, norm } => {
                let mut x = video;
                let mut caches = Vec::with_capacity(blocks.len());
                for b in blocks {
                    let (y, c) = b.forward(store, &x, Some(&audio))?;
                    caches.push(c);
                    x = y;
                }
                let (normed, nc) = norm.forward(store, &x)?;
                (
                    mean_rows(&normed),
                    FusionCache::Transformer {
                        blocks: caches,
                        norm: nc,
                        t: x.shape()[0],
                    },
                )
            }
            Fusion::Pooled { hidden } => {
                let (v, a) = (mean_rows(&video), mean_rows(&audio));
                let hidden_in = match self.config.fusion_mode {
                    FusionMode::Cat => {
                        let mut cat = v.into_data();
                        cat.extend_from_slice(a.data());
                        Tensor::new(vec![1, 2 * self.config.d_model], cat)?
                    }
                    _ => v.add(&a)?,
                };
                let hidden_pre = hidden.forward(store, &hidden_in)?;
                (
                    ops::relu(&hidden_pre),
                    FusionCache::Pooled {
                        t_video: video.shape()[0],
                        t_audio: audio.shape()[0],
                        hidden_in,
                        hidden_pre,
                    },
                )
            }
        };
        let logit = self.head.forward(store, &head_in)?.data()[0];
        let out = Output {
            logit,
            score: ops::sigmoid(logit),
        };
        Ok((
            out,
            ForwardCache {
                encoders,
                band_feats,
                band_weights,
                temporal,
                audio: audio_cache,
                audio_norm,
                fusion,
                head_in,
            },
        ))
    }

    /// Parameter gradients given `d loss / d logit`.
    pub fn backward(&self, store: &ParamStore, cache: &ForwardCache, dlogit: f64) -> Gradients {
        let mut grads = store.zero_grads();
        let d = self.config.d_model;
        let dhead_in = self.head.backward(
            store,
            &cache.head_in,
            &Tensor::new(vec![1, 1], vec![dlogit]).expect("scalar"),
            &mut grads,
        );
        let (dvideo, daudio) = match (&self.fusion, &cache.fusion) {
            (
                Fusion::Transformer { blocks, norm },
                FusionCache::Transformer {
                    blocks: bc,
                    norm: nc,
                    t,
                },
            ) => {
                let dnormed = mean_rows_backward(*t, &dhead_in);
                let mut dx = norm.backward(store, nc, &dnormed, &mut grads);
                let p = cache.audio_norm.xhat.shape()[0];
                let mut daudio = Tensor::zeros(&[p, d]);
                for (b, c) in blocks.iter().zip(bc).rev() {
                    let (dxi, dctx) = b.backward(store, c, &dx, &mut grads);
                    if let Some(da) = dctx {
                        daudio.add_assign(&da);
                    }
                    dx = dxi;
                }
                (dx, daudio)
            }
            (
                Fusion::Pooled { hidden },
                FusionCache::Pooled {
                    t_video,
                    t_audio,
                    hidden_in,
                    hidden_pre,
                },
            ) => {
                let dpre = ops::relu_backward(hidden_pre, &dhead_in);
                let din = hidden.backward(store, hidden_in, &dpre, &mut grads);
                let (dv, da) = match self.config.fusion_mode {
                    FusionMode::Cat => (
                        Tensor::new(vec![1, d], din.data()[..d].to_vec()).expect("dv"),
                        Tensor::new(vec![1, d], din.data()[d..].to_vec()).expect("da"),
                    ),
                    _ => (din.clone(), din),
                };
                (mean_rows_backward(*t_video, &dv), mean_rows_backward(*t_audio, &da))
            }
            _ => unreachable!("fusion cache matches fusion kind"),
        };

        // audio branch
        let dtokens = self.audio_norm.backward(store, &cache.audio_norm, &daudio, &mut grads);
        self.audio.backward(store, &cache.audio, &dtokens, &mut grads);

        // video branch
        let (dagg, _) = self.temporal.backward(store, &cache.temporal, &dvideo, &mut grads);
        let w = &cache.band_weights;
        let g: Vec<f64> = cache
            .band_feats
            .iter()
            .map(|f| f.data().iter().zip(dagg.data()).map(|(a, b)| a * b).sum())
            .collect();
        let gbar: f64 = w.iter().zip(&g).map(|(a, b)| a * b).sum();
        let dlogits: Vec<f64> = w.iter().zip(&g).map(|(wm, gm)| wm * (gm - gbar)).collect();
        grads.accumulate(
            self.band_logits,
            &Tensor::new(vec![w.len()], dlogits).expect("logit grad"),
        );
        for ((enc, c), &wm) in self.encoders.iter().zip(&cache.encoders).zip(w) {
            enc.backward(store, c, &dagg.scale(wm), &mut grads);
        }
        grads
    }

    /// Squared error against `target` in `[0, 1]` and its parameter gradient.
    pub fn loss_and_grad(&self, store: &ParamStore, input: &SampleInput, target: f64) -> Result<(f64, Gradients)> {
        let (out, cache) = self.forward(store, input)?;
        let err = out.score - target;
        let dlogit = 2.0 * err * out.score * (1.0 - out.score);
        Ok((err * err, self.backward(store, &cache, dlogit)))
    }

    /// Squared error only.
    pub fn loss(&self, store: &ParamStore, input: &SampleInput, target: f64) -> Result<f64> {
        let (out, _) = self.forward(store, input)?;
        Ok((out.score - target).powi(2))
    }
}
