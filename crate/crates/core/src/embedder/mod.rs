//! Forward-only TDNN x-vector embedder.

mod io;
mod pool;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::config::{parse_list, FlatConfig, KeyDoc};
use crate::error::{Error, Result};
use crate::featpipe::Features;
use crate::tensor::{Tensor, TensorFile};

pub use io::{read_embeddings, write_embeddings, Embedding};
pub use pool::{attentive_stats_pool, stats_pool, Attention, VAR_FLOOR};

pub const BN_EPS: f64 = 1e-5;

/// One frame-level layer: affine over `context` offsets scaled by `dilation`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLayer {
    pub out_dim: usize,
    pub context: Vec<i32>,
    pub dilation: usize,
}

impl FrameLayer {
    pub fn new(out_dim: usize, context: impl Into<Vec<i32>>, dilation: usize) -> Self {
        Self {
            out_dim,
            context: context.into(),
            dilation,
        }
    }

    fn offsets(&self) -> impl Iterator<Item = i64> + '_ {
        self.context.iter().map(move |&c| c as i64 * self.dilation as i64)
    }

    /// Frames lost at each edge.
    fn span(&self) -> (usize, usize) {
        let lo = self.offsets().min().unwrap_or(0).min(0);
        let hi = self.offsets().max().unwrap_or(0).max(0);
        ((-lo) as usize, hi as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Statistics,
    Attentive,
}

impl std::str::FromStr for Pooling {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "statistics" | "stats" => Ok(Self::Statistics),
            "attentive" => Ok(Self::Attentive),
            other => Err(format!("unknown pooling `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TdnnSpec {
    pub input_dim: usize,
    pub layers: Vec<FrameLayer>,
    pub pooling: Pooling,
    pub embed_dim: usize,
    pub attention_hidden: usize,
}

impl Default for TdnnSpec {
    /// The 5-layer x-vector network over 80-dim Fbank.
    fn default() -> Self {
        Self {
            input_dim: 80,
            layers: vec![
                FrameLayer::new(512, [-2, -1, 0, 1, 2], 1),
                FrameLayer::new(512, [-1, 0, 1], 2),
                FrameLayer::new(512, [-1, 0, 1], 3),
                FrameLayer::new(512, [0], 1),
                FrameLayer::new(1500, [0], 1),
            ],
            pooling: Pooling::Statistics,
            embed_dim: 512,
            attention_hidden: 128,
        }
    }
}

pub const EMBEDDER_KEYS: &[KeyDoc] = &[
    KeyDoc { key: "num_mels", default: "80", help: "input feature dimension" },
    KeyDoc { key: "tdnn_dims", default: "512,512,512,512,1500", help: "frame layer output sizes" },
    KeyDoc { key: "tdnn_context", default: "-2:2,-1:1,-1:1,0:0,0:0", help: "per-layer context offsets `lo:hi`" },
    KeyDoc { key: "tdnn_dilation", default: "1,2,3,1,1", help: "per-layer dilation" },
    KeyDoc { key: "pooling", default: "statistics", help: "statistics | attentive" },
    KeyDoc { key: "embed_dim", default: "512", help: "embedding size" },
    KeyDoc { key: "attention_hidden", default: "128", help: "attention scorer width (attentive pooling)" },
];

impl TdnnSpec {
    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        let d = Self::default();
        let dims: Vec<usize> = c.get_list("tdnn_dims", d.layers.iter().map(|l| l.out_dim).collect())?;
        let contexts: Vec<String> = match c.raw("tdnn_context") {
            Some(v) => parse_list(v).map_err(|e| Error::config(format!("tdnn_context: {e}")))?,
            None => vec!["-2:2".into(), "-1:1".into(), "-1:1".into(), "0:0".into(), "0:0".into()],
        };
        let dilation: Vec<usize> = c.get_list("tdnn_dilation", d.layers.iter().map(|l| l.dilation).collect())?;
        if dims.len() != contexts.len() || dims.len() != dilation.len() {
            return Err(Error::config("tdnn_dims, tdnn_context and tdnn_dilation need equal lengths"));
        }
        let mut layers = Vec::with_capacity(dims.len());
        for ((out_dim, ctx), dil) in dims.into_iter().zip(contexts).zip(dilation) {
            let (lo, hi) = ctx
                .split_once(':')
                .and_then(|(a, b)| Some((a.parse::<i32>().ok()?, b.parse::<i32>().ok()?)))
                .ok_or_else(|| Error::config(format!("bad context range `{ctx}`")))?;
            if lo > hi {
                return Err(Error::config(format!("empty context range `{ctx}`")));
            }
            layers.push(FrameLayer::new(out_dim, (lo..=hi).collect::<Vec<_>>(), dil));
        }
        let spec = Self {
            input_dim: c.get("num_mels", d.input_dim)?,
            layers,
            pooling: c.get("pooling", d.pooling)?,
            embed_dim: c.get("embed_dim", d.embed_dim)?,
            attention_hidden: c.get("attention_hidden", d.attention_hidden)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("at least one frame layer is required"));
        }
        if self.embed_dim == 0 || self.input_dim == 0 {
            return Err(Error::config("embed_dim and input dim must be positive"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.out_dim == 0 || l.context.is_empty() || l.dilation == 0 {
                return Err(Error::config(format!("frame{i}: empty layer")));
            }
        }
        if self.pooling == Pooling::Attentive && self.attention_hidden == 0 {
            return Err(Error::config("attention_hidden must be positive"));
        }
        Ok(())
    }

    /// Smallest input length that leaves one frame after every layer.
    pub fn min_frames(&self) -> usize {
        1 + self.layers.iter().map(|l| l.span().0 + l.span().1).sum::<usize>()
    }

    fn pooled_dim(&self) -> usize {
        2 * self.layers.last().map_or(0, |l| l.out_dim)
    }

    /// Expected `(name, shape)` of every parameter.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut in_dim = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("frame{i}.weight"), vec![l.out_dim, in_dim * l.context.len()]));
            out.push((format!("frame{i}.bias"), vec![l.out_dim]));
            for part in ["mean", "var", "weight", "bias"] {
                out.push((format!("frame{i}.bn.{part}"), vec![l.out_dim]));
            }
            in_dim = l.out_dim;
        }
        if self.pooling == Pooling::Attentive {
            out.push(("pool.attn_w".into(), vec![self.attention_hidden, in_dim]));
            out.push(("pool.attn_b".into(), vec![self.attention_hidden]));
            out.push(("pool.attn_v".into(), vec![self.attention_hidden]));
        }
        out.push(("segment.weight".into(), vec![self.embed_dim, self.pooled_dim()]));
        out.push(("segment.bias".into(), vec![self.embed_dim]));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerWeights {
    weight: DMatrix<f64>,
    bias: DVector<f64>,
    bn_scale: DVector<f64>,
    bn_shift: DVector<f64>,
}

/// A spec bound to validated weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    spec: TdnnSpec,
    layers: Vec<LayerWeights>,
    attention: Option<Attention>,
    seg_weight: DMatrix<f64>,
    seg_bias: DVector<f64>,
}

fn fetch(file: &TensorFile, name: &str, shape: &[usize]) -> Result<Tensor> {
    let layer = name.split('.').next().unwrap_or(name).to_string();
    let t = file.get(name).ok_or_else(|| Error::Shape {
        layer: layer.clone(),
        reason: format!("missing tensor `{name}`"),
    })?;
    if t.shape != shape {
        return Err(Error::Shape {
            layer,
            reason: format!("`{name}` has shape {:?}, expected {:?}", t.shape, shape),
        });
    }
    Ok(t.clone())
}

fn matrix(file: &TensorFile, name: &str, shape: &[usize]) -> Result<DMatrix<f64>> {
    fetch(file, name, shape)?.to_matrix()
}

fn vector(file: &TensorFile, name: &str, len: usize) -> Result<DVector<f64>> {
    Ok(fetch(file, name, &[len])?.to_vector())
}

impl Embedder {
    pub fn new(spec: TdnnSpec, weights: &TensorFile) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut in_dim = spec.input_dim;
        for (i, l) in spec.layers.iter().enumerate() {
            let p = format!("frame{i}");
            let weight = matrix(weights, &format!("{p}.weight"), &[l.out_dim, in_dim * l.context.len()])?;
            let bias = vector(weights, &format!("{p}.bias"), l.out_dim)?;
            let mean = vector(weights, &format!("{p}.bn.mean"), l.out_dim)?;
            let var = vector(weights, &format!("{p}.bn.var"), l.out_dim)?;
            let gamma = vector(weights, &format!("{p}.bn.weight"), l.out_dim)?;
            let beta = vector(weights, &format!("{p}.bn.bias"), l.out_dim)?;
            if var.iter().any(|&v| v < 0.0) {
                return Err(Error::Shape {
                    layer: p,
                    reason: "negative running variance".into(),
                });
            }
            // y' = (y - mean) / sqrt(var + eps) * gamma + beta, folded
            let bn_scale = DVector::from_fn(l.out_dim, |j, _| gamma[j] / (var[j] + BN_EPS).sqrt());
            let bn_shift = DVector::from_fn(l.out_dim, |j, _| beta[j] - mean[j] * bn_scale[j]);
            layers.push(LayerWeights {
                weight,
                bias,
                bn_scale,
                bn_shift,
            });
            in_dim = l.out_dim;
        }
        let attention = match spec.pooling {
            Pooling::Statistics => None,
            Pooling::Attentive => Some(Attention {
                w: matrix(weights, "pool.attn_w", &[spec.attention_hidden, in_dim])?,
                b: vector(weights, "pool.attn_b", spec.attention_hidden)?,
                v: vector(weights, "pool.attn_v", spec.attention_hidden)?,
            }),
        };
        let seg_weight = matrix(weights, "segment.weight", &[spec.embed_dim, spec.pooled_dim()])?;
        let seg_bias = vector(weights, "segment.bias", spec.embed_dim)?;
        Ok(Self {
            spec,
            layers,
            attention,
            seg_weight,
            seg_bias,
        })
    }

    pub fn spec(&self) -> &TdnnSpec {
        &self.spec
    }

    pub fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }

    /// Frame-level activations after the last frame layer.
    pub fn frame_outputs(&self, feats: &Features) -> Result<DMatrix<f64>> {
        if feats.ncols() != self.spec.input_dim {
            return Err(Error::Shape {
                layer: "input".into(),
                reason: format!("features have {} columns, expected {}", feats.ncols(), self.spec.input_dim),
            });
        }
        let mut h = feats.clone();
        for (i, (l, w)) in self.spec.layers.iter().zip(&self.layers).enumerate() {
            let (left, right) = l.span();
            let t_in = h.nrows();
            if t_in < left + right + 1 {
                return Err(Error::Shape {
                    layer: format!("frame{i}"),
                    reason: format!("{t_in} input frames, context needs at least {}", left + right + 1),
                });
            }
            let t_out = t_in - left - right;
            let d_in = h.ncols();
            let mut spliced = DMatrix::zeros(t_out, d_in * l.context.len());
            for (k, off) in l.offsets().enumerate() {
                let src = (left as i64 + off) as usize;
                spliced
                    .view_mut((0, k * d_in), (t_out, d_in))
                    .copy_from(&h.view((src, 0), (t_out, d_in)));
            }
            let mut y = spliced * w.weight.transpose();
            for mut row in y.row_iter_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    let a = (*v + w.bias[j]).max(0.0);
                    *v = a * w.bn_scale[j] + w.bn_shift[j];
                }
            }
            h = y;
        }
        Ok(h)
    }

    pub fn pool(&self, h: &DMatrix<f64>) -> DVector<f64> {
        match &self.attention {
            None => stats_pool(h),
            Some(a) => attentive_stats_pool(h, a),
        }
    }

    /// Segment-layer affine output, before any nonlinearity.
    pub fn forward(&self, feats: &Features) -> Result<DVector<f64>> {
        let pooled = self.pool(&self.frame_outputs(feats)?);
        let e = &self.seg_weight * pooled + &self.seg_bias;
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite embedding".into()));
        }
        Ok(e)
    }

    pub fn embed(&self, key: impl Into<String>, feats: &Features) -> Result<Embedding> {
        Ok(Embedding {
            key: key.into(),
            vector: self.forward(feats)?,
        })
    }

    /// Applies `forward` to each item, keeping input order.
    pub fn extract<'a, I>(&'a self, items: I) -> impl Iterator<Item = Result<Embedding>> + 'a
    where
        I: IntoIterator<Item = Result<(String, Features)>>,
        I::IntoIter: 'a,
    {
        items.into_iter().map(move |r| r.and_then(|(k, f)| self.embed(k, &f)))
    }

    /// Like [`extract`](Self::extract) over `workers` threads; output order
    /// matches input order.
    pub fn extract_parallel(&self, items: Vec<(String, Features)>, workers: usize) -> Vec<Result<Embedding>> {
        par_map(items, workers, |(k, f)| self.embed(k, &f))
    }
}

/// Order-preserving parallel map over contiguous chunks.
pub fn par_map<T, U, F>(items: Vec<T>, workers: usize, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync,
{
    let workers = workers.max(1);
    if workers == 1 || items.len() < 2 {
        return items.into_iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let mut chunks: Vec<Vec<T>> = Vec::new();
    let mut it = items.into_iter().peekable();
    while it.peek().is_some() {
        chunks.push(it.by_ref().take(chunk).collect());
    }
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|c| s.spawn(move || c.into_iter().map(f).collect::<Vec<U>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Random weights for a spec: Gaussian affine weights scaled by fan-in and
/// mildly perturbed normalisation statistics.
pub fn random_weights(spec: &TdnnSpec, seed: u64) -> Result<TensorFile> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut file = TensorFile::new();
    let near_one = Uniform::new(0.5, 1.5);
    let small = Normal::new(0.0, 0.1).expect("valid normal");
    for (name, shape) in spec.parameter_shapes() {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = if name.ends_with(".bn.var") || name.ends_with(".bn.weight") {
            (0..n).map(|_| near_one.sample(&mut rng) as f32).collect()
        } else if shape.len() == 2 {
            let std = (2.0 / shape[1] as f64).sqrt();
            let d = Normal::new(0.0, std).expect("valid normal");
            (0..n).map(|_| d.sample(&mut rng) as f32).collect()
        } else {
            (0..n).map(|_| small.sample(&mut rng) as f32).collect()
        };
        file.insert(name, Tensor::new(shape, data)?);
    }
    Ok(file)
}
