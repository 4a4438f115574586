//! Compact bidirectional transformer encoder with explicit forward and
//! backward passes. Everything is f32 over ndarray; no dropout, so runs are
//! bit-reproducible under a fixed seed.

use ndarray::{s, Array1, Array2, Array3, Array4, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

const LN_EPS: f32 = 1e-5;
const NEG_INF: f32 = -1e9;
const INIT_STD: f32 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden_dim == 0 || self.num_layers == 0 || self.num_heads == 0 {
            return Err("encoder dimensions must be positive".into());
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.vocab_size < 4 {
            return Err("vocab_size must cover the special tokens".into());
        }
        if self.max_positions < 2 {
            return Err("max_positions must be at least 2".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub wq: Array2<f32>,
    pub bq: Array1<f32>,
    pub wk: Array2<f32>,
    pub bk: Array1<f32>,
    pub wv: Array2<f32>,
    pub bv: Array1<f32>,
    pub wo: Array2<f32>,
    pub bo: Array1<f32>,
    pub attn_ln_g: Array1<f32>,
    pub attn_ln_b: Array1<f32>,
    pub w1: Array2<f32>,
    pub b1: Array1<f32>,
    pub w2: Array2<f32>,
    pub b2: Array1<f32>,
    pub ffn_ln_g: Array1<f32>,
    pub ffn_ln_b: Array1<f32>,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub word_emb: Array2<f32>,
    pub pos_emb: Array2<f32>,
    pub emb_ln_g: Array1<f32>,
    pub emb_ln_b: Array1<f32>,
    pub layers: Vec<LayerParams>,
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub w: Array2<f32>,
    pub b: Array1<f32>,
}

fn normal_array2(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f32> {
    let dist = Normal::new(0.0f32, INIT_STD).expect("valid normal");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

impl LayerParams {
    fn init(h: usize, f: usize, rng: &mut impl Rng) -> Self {
        LayerParams {
            wq: normal_array2(h, h, rng),
            bq: Array1::zeros(h),
            wk: normal_array2(h, h, rng),
            bk: Array1::zeros(h),
            wv: normal_array2(h, h, rng),
            bv: Array1::zeros(h),
            wo: normal_array2(h, h, rng),
            bo: Array1::zeros(h),
            attn_ln_g: Array1::ones(h),
            attn_ln_b: Array1::zeros(h),
            w1: normal_array2(h, f, rng),
            b1: Array1::zeros(f),
            w2: normal_array2(f, h, rng),
            b2: Array1::zeros(h),
            ffn_ln_g: Array1::ones(h),
            ffn_ln_b: Array1::zeros(h),
        }
    }

    fn zeros(h: usize, f: usize) -> Self {
        LayerParams {
            wq: Array2::zeros((h, h)),
            bq: Array1::zeros(h),
            wk: Array2::zeros((h, h)),
            bk: Array1::zeros(h),
            wv: Array2::zeros((h, h)),
            bv: Array1::zeros(h),
            wo: Array2::zeros((h, h)),
            bo: Array1::zeros(h),
            attn_ln_g: Array1::zeros(h),
            attn_ln_b: Array1::zeros(h),
            w1: Array2::zeros((h, f)),
            b1: Array1::zeros(f),
            w2: Array2::zeros((f, h)),
            b2: Array1::zeros(h),
            ffn_ln_g: Array1::zeros(h),
            ffn_ln_b: Array1::zeros(h),
        }
    }
}

#[cfg(test)]
macro_rules! layer_tensor_names {
    () => {
        [
            "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "attn_ln_g", "attn_ln_b", "w1", "b1",
            "w2", "b2", "ffn_ln_g", "ffn_ln_b",
        ]
    };
}

impl EncoderParams {
    pub fn init(config: EncoderConfig, rng: &mut impl Rng) -> Self {
        let h = config.hidden_dim;
        let f = config.ffn_dim;
        EncoderParams {
            word_emb: normal_array2(config.vocab_size, h, rng),
            pos_emb: normal_array2(config.max_positions, h, rng),
            emb_ln_g: Array1::ones(h),
            emb_ln_b: Array1::zeros(h),
            layers: (0..config.num_layers)
                .map(|_| LayerParams::init(h, f, rng))
                .collect(),
            config,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let h = self.config.hidden_dim;
        let f = self.config.ffn_dim;
        EncoderParams {
            config: self.config,
            word_emb: Array2::zeros(self.word_emb.dim()),
            pos_emb: Array2::zeros(self.pos_emb.dim()),
            emb_ln_g: Array1::zeros(h),
            emb_ln_b: Array1::zeros(h),
            layers: (0..self.config.num_layers)
                .map(|_| LayerParams::zeros(h, f))
                .collect(),
        }
    }

    /// Visits every tensor's data in the canonical order used for
    /// serialization and optimizer state.
    pub fn for_each_tensor_mut(&mut self, f: &mut impl FnMut(&mut [f32])) {
        f(self.word_emb.as_slice_mut().expect("standard layout"));
        f(self.pos_emb.as_slice_mut().expect("standard layout"));
        f(self.emb_ln_g.as_slice_mut().expect("standard layout"));
        f(self.emb_ln_b.as_slice_mut().expect("standard layout"));
        for layer in &mut self.layers {
            f(layer.wq.as_slice_mut().expect("standard layout"));
            f(layer.bq.as_slice_mut().expect("standard layout"));
            f(layer.wk.as_slice_mut().expect("standard layout"));
            f(layer.bk.as_slice_mut().expect("standard layout"));
            f(layer.wv.as_slice_mut().expect("standard layout"));
            f(layer.bv.as_slice_mut().expect("standard layout"));
            f(layer.wo.as_slice_mut().expect("standard layout"));
            f(layer.bo.as_slice_mut().expect("standard layout"));
            f(layer.attn_ln_g.as_slice_mut().expect("standard layout"));
            f(layer.attn_ln_b.as_slice_mut().expect("standard layout"));
            f(layer.w1.as_slice_mut().expect("standard layout"));
            f(layer.b1.as_slice_mut().expect("standard layout"));
            f(layer.w2.as_slice_mut().expect("standard layout"));
            f(layer.b2.as_slice_mut().expect("standard layout"));
            f(layer.ffn_ln_g.as_slice_mut().expect("standard layout"));
            f(layer.ffn_ln_b.as_slice_mut().expect("standard layout"));
        }
    }

    pub fn for_each_tensor(&self, f: &mut impl FnMut(&[f32])) {
        for (_, _, data) in self.tensors() {
            f(data);
        }
    }

    /// Visits parameter/gradient slices in lockstep, in canonical order.
    pub fn for_each_pair_mut(
        &mut self,
        other: &EncoderParams,
        f: &mut impl FnMut(&mut [f32], &[f32]),
    ) {
        f(
            self.word_emb.as_slice_mut().expect("standard layout"),
            other.word_emb.as_slice().expect("standard layout"),
        );
        f(
            self.pos_emb.as_slice_mut().expect("standard layout"),
            other.pos_emb.as_slice().expect("standard layout"),
        );
        f(
            self.emb_ln_g.as_slice_mut().expect("standard layout"),
            other.emb_ln_g.as_slice().expect("standard layout"),
        );
        f(
            self.emb_ln_b.as_slice_mut().expect("standard layout"),
            other.emb_ln_b.as_slice().expect("standard layout"),
        );
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            f(mine.wq.as_slice_mut().unwrap(), theirs.wq.as_slice().unwrap());
            f(mine.bq.as_slice_mut().unwrap(), theirs.bq.as_slice().unwrap());
            f(mine.wk.as_slice_mut().unwrap(), theirs.wk.as_slice().unwrap());
            f(mine.bk.as_slice_mut().unwrap(), theirs.bk.as_slice().unwrap());
            f(mine.wv.as_slice_mut().unwrap(), theirs.wv.as_slice().unwrap());
            f(mine.bv.as_slice_mut().unwrap(), theirs.bv.as_slice().unwrap());
            f(mine.wo.as_slice_mut().unwrap(), theirs.wo.as_slice().unwrap());
            f(mine.bo.as_slice_mut().unwrap(), theirs.bo.as_slice().unwrap());
            f(
                mine.attn_ln_g.as_slice_mut().unwrap(),
                theirs.attn_ln_g.as_slice().unwrap(),
            );
            f(
                mine.attn_ln_b.as_slice_mut().unwrap(),
                theirs.attn_ln_b.as_slice().unwrap(),
            );
            f(mine.w1.as_slice_mut().unwrap(), theirs.w1.as_slice().unwrap());
            f(mine.b1.as_slice_mut().unwrap(), theirs.b1.as_slice().unwrap());
            f(mine.w2.as_slice_mut().unwrap(), theirs.w2.as_slice().unwrap());
            f(mine.b2.as_slice_mut().unwrap(), theirs.b2.as_slice().unwrap());
            f(
                mine.ffn_ln_g.as_slice_mut().unwrap(),
                theirs.ffn_ln_g.as_slice().unwrap(),
            );
            f(
                mine.ffn_ln_b.as_slice_mut().unwrap(),
                theirs.ffn_ln_b.as_slice().unwrap(),
            );
        }
    }

    /// (name, shape, data) triples in canonical order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut out: Vec<(String, Vec<usize>, &[f32])> = vec![
            (
                "word_emb".into(),
                self.word_emb.shape().to_vec(),
                self.word_emb.as_slice().expect("standard layout"),
            ),
            (
                "pos_emb".into(),
                self.pos_emb.shape().to_vec(),
                self.pos_emb.as_slice().expect("standard layout"),
            ),
            (
                "emb_ln_g".into(),
                self.emb_ln_g.shape().to_vec(),
                self.emb_ln_g.as_slice().expect("standard layout"),
            ),
            (
                "emb_ln_b".into(),
                self.emb_ln_b.shape().to_vec(),
                self.emb_ln_b.as_slice().expect("standard layout"),
            ),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            let fields: [(&str, &[usize], &[f32]); 16] = [
                ("wq", layer.wq.shape(), layer.wq.as_slice().unwrap()),
                ("bq", layer.bq.shape(), layer.bq.as_slice().unwrap()),
                ("wk", layer.wk.shape(), layer.wk.as_slice().unwrap()),
                ("bk", layer.bk.shape(), layer.bk.as_slice().unwrap()),
                ("wv", layer.wv.shape(), layer.wv.as_slice().unwrap()),
                ("bv", layer.bv.shape(), layer.bv.as_slice().unwrap()),
                ("wo", layer.wo.shape(), layer.wo.as_slice().unwrap()),
                ("bo", layer.bo.shape(), layer.bo.as_slice().unwrap()),
                (
                    "attn_ln_g",
                    layer.attn_ln_g.shape(),
                    layer.attn_ln_g.as_slice().unwrap(),
                ),
                (
                    "attn_ln_b",
                    layer.attn_ln_b.shape(),
                    layer.attn_ln_b.as_slice().unwrap(),
                ),
                ("w1", layer.w1.shape(), layer.w1.as_slice().unwrap()),
                ("b1", layer.b1.shape(), layer.b1.as_slice().unwrap()),
                ("w2", layer.w2.shape(), layer.w2.as_slice().unwrap()),
                ("b2", layer.b2.shape(), layer.b2.as_slice().unwrap()),
                (
                    "ffn_ln_g",
                    layer.ffn_ln_g.shape(),
                    layer.ffn_ln_g.as_slice().unwrap(),
                ),
                (
                    "ffn_ln_b",
                    layer.ffn_ln_b.shape(),
                    layer.ffn_ln_b.as_slice().unwrap(),
                ),
            ];
            for (name, shape, data) in fields {
                out.push((format!("layer{i}.{name}"), shape.to_vec(), data));
            }
        }
        out
    }

    /// Rebuilds parameters from named tensors (as produced by `tensors`).
    pub fn from_tensor_map(
        config: EncoderConfig,
        map: &std::collections::HashMap<String, (Vec<usize>, Vec<f32>)>,
    ) -> Result<Self, String> {
        let take2 = |name: &str| -> Result<Array2<f32>, String> {
            let (shape, data) = map.get(name).ok_or_else(|| format!("missing tensor `{name}`"))?;
            if shape.len() != 2 {
                return Err(format!("tensor `{name}` is not 2-dimensional"));
            }
            Array2::from_shape_vec((shape[0], shape[1]), data.clone())
                .map_err(|e| format!("tensor `{name}`: {e}"))
        };
        let take1 = |name: &str| -> Result<Array1<f32>, String> {
            let (shape, data) = map.get(name).ok_or_else(|| format!("missing tensor `{name}`"))?;
            if shape.len() != 1 {
                return Err(format!("tensor `{name}` is not 1-dimensional"));
            }
            Ok(Array1::from_vec(data.clone()))
        };
        let mut layers = Vec::with_capacity(config.num_layers);
        for i in 0..config.num_layers {
            let n = |field: &str| format!("layer{i}.{field}");
            layers.push(LayerParams {
                wq: take2(&n("wq"))?,
                bq: take1(&n("bq"))?,
                wk: take2(&n("wk"))?,
                bk: take1(&n("bk"))?,
                wv: take2(&n("wv"))?,
                bv: take1(&n("bv"))?,
                wo: take2(&n("wo"))?,
                bo: take1(&n("bo"))?,
                attn_ln_g: take1(&n("attn_ln_g"))?,
                attn_ln_b: take1(&n("attn_ln_b"))?,
                w1: take2(&n("w1"))?,
                b1: take1(&n("b1"))?,
                w2: take2(&n("w2"))?,
                b2: take1(&n("b2"))?,
                ffn_ln_g: take1(&n("ffn_ln_g"))?,
                ffn_ln_b: take1(&n("ffn_ln_b"))?,
            });
        }
        let params = EncoderParams {
            word_emb: take2("word_emb")?,
            pos_emb: take2("pos_emb")?,
            emb_ln_g: take1("emb_ln_g")?,
            emb_ln_b: take1("emb_ln_b")?,
            layers,
            config,
        };
        let expected = 4 + 16 * config.num_layers;
        if map.len() != expected {
            return Err(format!("expected {expected} tensors, found {}", map.len()));
        }
        Ok(params)
    }

    /// Exact bit-level equality of every parameter.
    pub fn bitwise_eq(&self, other: &EncoderParams) -> bool {
        if self.config != other.config {
            return false;
        }
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len()
            && a.iter().zip(&b).all(|((_, _, x), (_, _, y))| {
                x.len() == y.len()
                    && x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits())
            })
    }
}

impl HeadParams {
    pub fn init(hidden: usize, num_labels: usize, rng: &mut impl Rng) -> Self {
        HeadParams {
            w: normal_array2(hidden, num_labels, rng),
            b: Array1::zeros(num_labels),
        }
    }

    pub fn zeros_like(&self) -> Self {
        HeadParams {
            w: Array2::zeros(self.w.dim()),
            b: Array1::zeros(self.b.dim()),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.w.ncols()
    }

    pub fn for_each_tensor_mut(&mut self, f: &mut impl FnMut(&mut [f32])) {
        f(self.w.as_slice_mut().expect("standard layout"));
        f(self.b.as_slice_mut().expect("standard layout"));
    }

    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        vec![
            (
                "head.w".into(),
                self.w.shape().to_vec(),
                self.w.as_slice().expect("standard layout"),
            ),
            (
                "head.b".into(),
                self.b.shape().to_vec(),
                self.b.as_slice().expect("standard layout"),
            ),
        ]
    }

    pub fn from_tensor_map(
        map: &std::collections::HashMap<String, (Vec<usize>, Vec<f32>)>,
    ) -> Result<Self, String> {
        let (w_shape, w_data) = map.get("head.w").ok_or("missing tensor `head.w`")?;
        let (_, b_data) = map.get("head.b").ok_or("missing tensor `head.b`")?;
        if w_shape.len() != 2 {
            return Err("tensor `head.w` is not 2-dimensional".into());
        }
        Ok(HeadParams {
            w: Array2::from_shape_vec((w_shape[0], w_shape[1]), w_data.clone())
                .map_err(|e| e.to_string())?,
            b: Array1::from_vec(b_data.clone()),
        })
    }

    pub fn bitwise_eq(&self, other: &HeadParams) -> bool {
        self.w.dim() == other.w.dim()
            && self
                .w
                .iter()
                .zip(other.w.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self
                .b
                .iter()
                .zip(other.b.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

// ── Tensor file format ───────────────────────────────────────────────────
// magic "SBWT", u32 version, u32 count, then per tensor:
//   u32 name_len, name bytes, u32 ndim, u64 dims…, f32 LE data.

const WEIGHTS_MAGIC: &[u8; 4] = b"SBWT";

pub fn write_tensors(
    path: &std::path::Path,
    tensors: &[(String, Vec<usize>, &[f32])],
) -> std::io::Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&1u32.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for dim in shape {
            buf.extend_from_slice(&(*dim as u64).to_le_bytes());
        }
        for value in *data {
            buf.extend_from_slice(&value.to_le_bytes());
        }
    }
    std::fs::write(path, buf)
}

pub fn read_tensors(
    path: &std::path::Path,
) -> std::io::Result<std::collections::HashMap<String, (Vec<usize>, Vec<f32>)>> {
    let data = std::fs::read(path)?;
    let bad = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string());
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> std::io::Result<&[u8]> {
        let end = *pos + n;
        let slice = data.get(*pos..end).ok_or_else(|| bad("truncated weights file"))?;
        *pos = end;
        Ok(slice)
    };
    if take(&mut pos, 4)? != WEIGHTS_MAGIC {
        return Err(bad("not a weights file"));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != 1 {
        return Err(bad("unsupported weights version"));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut map = std::collections::HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| bad("bad tensor name"))?;
        let ndim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
        }
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()));
        }
        map.insert(name, (shape, values));
    }
    Ok(map)
}

// ── Forward / backward ───────────────────────────────────────────────────

pub struct LnCache {
    xhat: Array3<f32>,
    inv_std: Array2<f32>,
}

pub struct LayerCache {
    input: Array3<f32>,
    q: Array3<f32>,
    k: Array3<f32>,
    v: Array3<f32>,
    att: Array4<f32>,
    ctx: Array3<f32>,
    ln1: LnCache,
    h1: Array3<f32>,
    ffn_pre: Array3<f32>,
    ffn_act: Array3<f32>,
    ln2: LnCache,
}

pub struct EncoderCache {
    emb_ln: LnCache,
    layers: Vec<LayerCache>,
    pub hidden: Array3<f32>,
}

fn linear_fwd(x: &Array3<f32>, w: &Array2<f32>, b: &Array1<f32>) -> Array3<f32> {
    let (bs, t, h) = x.dim();
    let x2 = x.to_shape((bs * t, h)).expect("contiguous");
    let mut y2 = x2.dot(w);
    y2 += b;
    y2.into_shape_with_order((bs, t, w.ncols())).expect("shape")
}

fn linear_bwd(
    x: &Array3<f32>,
    w: &Array2<f32>,
    dy: &Array3<f32>,
) -> (Array3<f32>, Array2<f32>, Array1<f32>) {
    let (bs, t, h) = x.dim();
    let o = w.ncols();
    let x2 = x.to_shape((bs * t, h)).expect("contiguous");
    let dy2 = dy.to_shape((bs * t, o)).expect("contiguous");
    let dw = x2.t().dot(&dy2);
    let db = dy2.sum_axis(Axis(0));
    let dx2 = dy2.dot(&w.t());
    (
        dx2.into_shape_with_order((bs, t, h)).expect("shape"),
        dw,
        db,
    )
}

fn layer_norm_fwd(x: &Array3<f32>, g: &Array1<f32>, b: &Array1<f32>) -> (Array3<f32>, LnCache) {
    let (bs, t, h) = x.dim();
    let mut y = Array3::zeros((bs, t, h));
    let mut xhat = Array3::zeros((bs, t, h));
    let mut inv_std = Array2::zeros((bs, t));
    for bi in 0..bs {
        for ti in 0..t {
            let row = x.slice(s![bi, ti, ..]);
            let mean = row.sum() / h as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / h as f32;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[[bi, ti]] = inv;
            for hi in 0..h {
                let xh = (x[[bi, ti, hi]] - mean) * inv;
                xhat[[bi, ti, hi]] = xh;
                y[[bi, ti, hi]] = g[hi] * xh + b[hi];
            }
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_bwd(
    dy: &Array3<f32>,
    cache: &LnCache,
    g: &Array1<f32>,
) -> (Array3<f32>, Array1<f32>, Array1<f32>) {
    let (bs, t, h) = dy.dim();
    let mut dx = Array3::zeros((bs, t, h));
    let mut dg = Array1::zeros(h);
    let mut db = Array1::zeros(h);
    let mut dxhat = vec![0.0f32; h];
    for bi in 0..bs {
        for ti in 0..t {
            let inv = cache.inv_std[[bi, ti]];
            let mut m1 = 0.0f32;
            let mut m2 = 0.0f32;
            for hi in 0..h {
                let dyv = dy[[bi, ti, hi]];
                let xh = cache.xhat[[bi, ti, hi]];
                dg[hi] += dyv * xh;
                db[hi] += dyv;
                let dxh = dyv * g[hi];
                dxhat[hi] = dxh;
                m1 += dxh;
                m2 += dxh * xh;
            }
            m1 /= h as f32;
            m2 /= h as f32;
            for hi in 0..h {
                dx[[bi, ti, hi]] = inv * (dxhat[hi] - m1 - cache.xhat[[bi, ti, hi]] * m2);
            }
        }
    }
    (dx, dg, db)
}

const GELU_C: f32 = 0.797_884_56;
const GELU_A: f32 = 0.044_715;

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f32) -> f32 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn softmax_rows_inplace(scores: &mut Array2<f32>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for value in row.iter_mut() {
            *value = (*value - max).exp();
            sum += *value;
        }
        for value in row.iter_mut() {
            *value /= sum;
        }
    }
}

/// Runs the encoder over a padded batch. `mask` is 1 for real tokens and 0
/// for padding; padded key positions are excluded from attention.
pub fn encoder_forward(
    params: &EncoderParams,
    ids: &Array2<usize>,
    mask: &Array2<f32>,
) -> EncoderCache {
    let (bs, t) = ids.dim();
    let h = params.config.hidden_dim;
    let heads = params.config.num_heads;
    let dh = h / heads;
    let scale = 1.0 / (dh as f32).sqrt();

    let mut x = Array3::zeros((bs, t, h));
    for bi in 0..bs {
        for ti in 0..t {
            let id = ids[[bi, ti]];
            for hi in 0..h {
                x[[bi, ti, hi]] = params.word_emb[[id, hi]] + params.pos_emb[[ti, hi]];
            }
        }
    }
    let (mut hidden, emb_ln) = layer_norm_fwd(&x, &params.emb_ln_g, &params.emb_ln_b);

    let mut layer_caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let input = hidden;
        let q = linear_fwd(&input, &layer.wq, &layer.bq);
        let k = linear_fwd(&input, &layer.wk, &layer.bk);
        let v = linear_fwd(&input, &layer.wv, &layer.bv);

        let mut att = Array4::zeros((bs, heads, t, t));
        let mut ctx = Array3::zeros((bs, t, h));
        for bi in 0..bs {
            for a in 0..heads {
                let cols = a * dh..(a + 1) * dh;
                let qv = q.slice(s![bi, .., cols.clone()]);
                let kv = k.slice(s![bi, .., cols.clone()]);
                let vv = v.slice(s![bi, .., cols.clone()]);
                let mut scores = qv.dot(&kv.t());
                scores.mapv_inplace(|value| value * scale);
                for tj in 0..t {
                    if mask[[bi, tj]] == 0.0 {
                        for ti in 0..t {
                            scores[[ti, tj]] += NEG_INF;
                        }
                    }
                }
                softmax_rows_inplace(&mut scores);
                att.slice_mut(s![bi, a, .., ..]).assign(&scores);
                let c = scores.dot(&vv);
                ctx.slice_mut(s![bi, .., cols]).assign(&c);
            }
        }
        let attn_out = linear_fwd(&ctx, &layer.wo, &layer.bo);
        let res1 = &input + &attn_out;
        let (h1, ln1) = layer_norm_fwd(&res1, &layer.attn_ln_g, &layer.attn_ln_b);

        let ffn_pre = linear_fwd(&h1, &layer.w1, &layer.b1);
        let ffn_act = ffn_pre.mapv(gelu);
        let ffn_out = linear_fwd(&ffn_act, &layer.w2, &layer.b2);
        let res2 = &h1 + &ffn_out;
        let (h2, ln2) = layer_norm_fwd(&res2, &layer.ffn_ln_g, &layer.ffn_ln_b);

        layer_caches.push(LayerCache {
            input,
            q,
            k,
            v,
            att,
            ctx,
            ln1,
            h1,
            ffn_pre,
            ffn_act,
            ln2,
        });
        hidden = h2;
    }

    EncoderCache {
        emb_ln,
        layers: layer_caches,
        hidden,
    }
}

/// Backpropagates `d_hidden` through the encoder and returns parameter
/// gradients in an `EncoderParams`-shaped container.
pub fn encoder_backward(
    params: &EncoderParams,
    ids: &Array2<usize>,
    cache: &EncoderCache,
    d_hidden: Array3<f32>,
) -> EncoderParams {
    let (bs, t) = ids.dim();
    let h = params.config.hidden_dim;
    let heads = params.config.num_heads;
    let dh = h / heads;
    let scale = 1.0 / (dh as f32).sqrt();

    let mut grads = params.zeros_like();
    let mut d = d_hidden;

    for (li, layer) in params.layers.iter().enumerate().rev() {
        let lc = &cache.layers[li];
        let g = &mut grads.layers[li];

        let (d_res2, dg2, db2) = layer_norm_bwd(&d, &lc.ln2, &layer.ffn_ln_g);
        g.ffn_ln_g += &dg2;
        g.ffn_ln_b += &db2;

        // res2 = h1 + ffn_out
        let (d_ffn_act, dw2, db2l) = linear_bwd(&lc.ffn_act, &layer.w2, &d_res2);
        g.w2 += &dw2;
        g.b2 += &db2l;
        let mut d_ffn_pre = d_ffn_act;
        d_ffn_pre.zip_mut_with(&lc.ffn_pre, |dv, &pre| *dv *= gelu_grad(pre));
        let (d_h1_ffn, dw1, db1) = linear_bwd(&lc.h1, &layer.w1, &d_ffn_pre);
        g.w1 += &dw1;
        g.b1 += &db1;
        let d_h1 = &d_res2 + &d_h1_ffn;

        let (d_res1, dg1, db1n) = layer_norm_bwd(&d_h1, &lc.ln1, &layer.attn_ln_g);
        g.attn_ln_g += &dg1;
        g.attn_ln_b += &db1n;

        // res1 = input + attn_out
        let (d_ctx, dwo, dbo) = linear_bwd(&lc.ctx, &layer.wo, &d_res1);
        g.wo += &dwo;
        g.bo += &dbo;

        let mut d_q = Array3::zeros((bs, t, h));
        let mut d_k = Array3::zeros((bs, t, h));
        let mut d_v = Array3::zeros((bs, t, h));
        for bi in 0..bs {
            for a in 0..heads {
                let cols = a * dh..(a + 1) * dh;
                let att = lc.att.slice(s![bi, a, .., ..]);
                let qv = lc.q.slice(s![bi, .., cols.clone()]);
                let kv = lc.k.slice(s![bi, .., cols.clone()]);
                let vv = lc.v.slice(s![bi, .., cols.clone()]);
                let d_ctx_h = d_ctx.slice(s![bi, .., cols.clone()]);

                let d_att = d_ctx_h.dot(&vv.t());
                let d_v_h = att.t().dot(&d_ctx_h);
                // softmax backward: ds = att ∘ (d_att − rowsum(d_att ∘ att))
                let rowsum = (&d_att * &att).sum_axis(Axis(1));
                let mut ds = d_att;
                for ti in 0..t {
                    for tj in 0..t {
                        ds[[ti, tj]] = att[[ti, tj]] * (ds[[ti, tj]] - rowsum[ti]);
                    }
                }
                let d_q_h = ds.dot(&kv).mapv(|value| value * scale);
                let d_k_h = ds.t().dot(&qv).mapv(|value| value * scale);
                d_q.slice_mut(s![bi, .., cols.clone()]).assign(&d_q_h);
                d_k.slice_mut(s![bi, .., cols.clone()]).assign(&d_k_h);
                d_v.slice_mut(s![bi, .., cols]).assign(&d_v_h);
            }
        }

        let (d_in_q, dwq, dbq) = linear_bwd(&lc.input, &layer.wq, &d_q);
        let (d_in_k, dwk, dbk) = linear_bwd(&lc.input, &layer.wk, &d_k);
        let (d_in_v, dwv, dbv) = linear_bwd(&lc.input, &layer.wv, &d_v);
        g.wq += &dwq;
        g.bq += &dbq;
        g.wk += &dwk;
        g.bk += &dbk;
        g.wv += &dwv;
        g.bv += &dbv;

        let mut d_input = d_res1;
        d_input += &d_in_q;
        d_input += &d_in_k;
        d_input += &d_in_v;
        d = d_input;
    }

    let (d_emb, dg, db) = layer_norm_bwd(&d, &cache.emb_ln, &params.emb_ln_g);
    grads.emb_ln_g += &dg;
    grads.emb_ln_b += &db;
    for bi in 0..bs {
        for ti in 0..t {
            let id = ids[[bi, ti]];
            for hi in 0..h {
                let dv = d_emb[[bi, ti, hi]];
                grads.word_emb[[id, hi]] += dv;
                grads.pos_emb[[ti, hi]] += dv;
            }
        }
    }
    grads
}

/// Hidden state of the leading `[CLS]` position, used as the sequence
/// representation.
pub fn cls_hidden(cache: &EncoderCache) -> Array2<f32> {
    cache.hidden.slice(s![.., 0, ..]).to_owned()
}

pub fn head_forward(cls: &Array2<f32>, head: &HeadParams) -> Array2<f32> {
    let mut logits = cls.dot(&head.w);
    logits += &head.b;
    logits
}

/// Softmax cross-entropy. Returns mean loss, row-wise probabilities, and
/// the logit gradient (already divided by batch size).
pub fn softmax_cross_entropy(
    logits: &Array2<f32>,
    labels: &[usize],
) -> (f64, Array2<f32>, Array2<f32>) {
    let (bs, c) = logits.dim();
    assert_eq!(bs, labels.len());
    let mut probs = logits.clone();
    softmax_rows_inplace(&mut probs);
    let mut loss = 0.0f64;
    for (bi, &label) in labels.iter().enumerate() {
        loss -= f64::from(probs[[bi, label]].max(1e-12)).ln();
    }
    loss /= bs as f64;
    let mut dlogits = probs.clone();
    for (bi, &label) in labels.iter().enumerate() {
        dlogits[[bi, label]] -= 1.0;
    }
    dlogits.mapv_inplace(|value| value / bs as f32);
    let _ = c;
    (loss, probs, dlogits)
}

/// Head gradients plus the upstream gradient for the `[CLS]` hidden state.
pub fn head_backward(
    cls: &Array2<f32>,
    head: &HeadParams,
    dlogits: &Array2<f32>,
) -> (HeadParams, Array2<f32>) {
    let dw = cls.t().dot(dlogits);
    let db = dlogits.sum_axis(Axis(0));
    let dcls = dlogits.dot(&head.w.t());
    (HeadParams { w: dw, b: db }, dcls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_config() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 12,
            hidden_dim: 8,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 16,
            max_positions: 8,
        }
    }

    fn toy_batch() -> (Array2<usize>, Array2<f32>, Vec<usize>) {
        let ids = ndarray::arr2(&[[2usize, 5, 6, 7, 3], [2, 8, 9, 3, 0]]);
        let mask = ndarray::arr2(&[[1.0f32, 1.0, 1.0, 1.0, 1.0], [1.0, 1.0, 1.0, 1.0, 0.0]]);
        (ids, mask, vec![0, 1])
    }

    fn loss_of(params: &EncoderParams, head: &HeadParams) -> f64 {
        let (ids, mask, labels) = toy_batch();
        let cache = encoder_forward(params, &ids, &mask);
        let cls = cls_hidden(&cache);
        let logits = head_forward(&cls, head);
        softmax_cross_entropy(&logits, &labels).0
    }

    #[test]
    fn softmax_rows_are_normalized() {
        let mut scores = ndarray::arr2(&[[1.0f32, 2.0, 3.0], [0.0, 0.0, 0.0]]);
        softmax_rows_inplace(&mut scores);
        for row in scores.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = EncoderParams::init(toy_config(), &mut rng);
        let (ids, mask, _) = toy_batch();
        let a = encoder_forward(&params, &ids, &mask);
        let b = encoder_forward(&params, &ids, &mask);
        assert_eq!(a.hidden, b.hidden);
    }

    #[test]
    fn extra_padding_leaves_cls_state_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = EncoderParams::init(toy_config(), &mut rng);
        let ids = ndarray::arr2(&[[2usize, 5, 3]]);
        let mask = ndarray::arr2(&[[1.0f32, 1.0, 1.0]]);
        let padded_ids = ndarray::arr2(&[[2usize, 5, 3, 0, 0]]);
        let padded_mask = ndarray::arr2(&[[1.0f32, 1.0, 1.0, 0.0, 0.0]]);
        let short = cls_hidden(&encoder_forward(&params, &ids, &mask));
        let long = cls_hidden(&encoder_forward(&params, &padded_ids, &padded_mask));
        assert_eq!(short, long);
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = EncoderParams::init(toy_config(), &mut rng);
        let mut head = HeadParams::init(8, 2, &mut rng);
        let (ids, mask, labels) = toy_batch();

        let cache = encoder_forward(&params, &ids, &mask);
        let cls = cls_hidden(&cache);
        let logits = head_forward(&cls, &head);
        let (_, _, dlogits) = softmax_cross_entropy(&logits, &labels);
        let (head_grads, dcls) = head_backward(&cls, &head, &dlogits);
        let (bs, t) = ids.dim();
        let mut d_hidden = Array3::zeros((bs, t, params.config.hidden_dim));
        d_hidden.slice_mut(s![.., 0, ..]).assign(&dcls);
        let enc_grads = encoder_backward(&params, &ids, &cache, d_hidden);

        let h = 1e-2f32;
        let mut checked = 0usize;
        // sample coordinates across every encoder tensor plus the head
        let mut flat_grads: Vec<Vec<f32>> = Vec::new();
        enc_grads.for_each_tensor(&mut |slice| flat_grads.push(slice.to_vec()));
        let n_enc_tensors = flat_grads.len();
        flat_grads.push(head_grads.w.as_slice().unwrap().to_vec());
        flat_grads.push(head_grads.b.as_slice().unwrap().to_vec());

        for tensor_idx in 0..flat_grads.len() {
            let len = flat_grads[tensor_idx].len();
            for probe in 0..2usize {
                let elem = (probe * 7919 + tensor_idx * 31) % len;
                let perturb = |params: &mut EncoderParams, head: &mut HeadParams, delta: f32| {
                    let mut cursor = 0usize;
                    let mut apply = |slice: &mut [f32]| {
                        if cursor == tensor_idx {
                            slice[elem] += delta;
                        }
                        cursor += 1;
                    };
                    params.for_each_tensor_mut(&mut apply);
                    if tensor_idx == n_enc_tensors {
                        head.w.as_slice_mut().unwrap()[elem] += delta;
                    } else if tensor_idx == n_enc_tensors + 1 {
                        head.b.as_slice_mut().unwrap()[elem] += delta;
                    }
                };
                perturb(&mut params, &mut head, h);
                let up = loss_of(&params, &head);
                perturb(&mut params, &mut head, -2.0 * h);
                let down = loss_of(&params, &head);
                perturb(&mut params, &mut head, h);
                let numeric = (up - down) / (2.0 * f64::from(h));
                let analytic = f64::from(flat_grads[tensor_idx][elem]);
                let tol = 1e-3 + 0.08 * numeric.abs().max(analytic.abs());
                assert!(
                    (numeric - analytic).abs() <= tol,
                    "tensor {tensor_idx} elem {elem}: numeric {numeric} vs analytic {analytic}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 2 * (4 + 16 * 2 + 2));
    }

    #[test]
    fn tensor_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = EncoderParams::init(toy_config(), &mut rng);
        write_tensors(&path, &params.tensors()).unwrap();
        let map = read_tensors(&path).unwrap();
        let reloaded = EncoderParams::from_tensor_map(params.config, &map).unwrap();
        assert!(params.bitwise_eq(&reloaded));
    }

    #[test]
    fn layer_names_cover_every_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = EncoderParams::init(toy_config(), &mut rng);
        let tensors = params.tensors();
        assert_eq!(tensors.len(), 4 + 16 * 2);
        let names = layer_tensor_names!();
        for name in names {
            assert!(tensors.iter().any(|(n, _, _)| n == &format!("layer0.{name}")));
        }
    }
}
