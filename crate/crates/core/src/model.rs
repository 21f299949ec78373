//! Shared-weight 3-D encoder, feature merge, transformer quizzer and the
//! translation reset.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, SampleRegion, Var};
use crate::geometry::{warp_translate, PointDisplacements};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::volume::Volume;
use crate::{Error, Point3, Result};

/// Voxels per feature cell along each axis.
pub const FEATURE_STRIDE: usize = 8;

const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Cube side of the model-frame volumes.
    pub input_size: usize,
    /// Channels of the last encoder stage.
    pub channels: usize,
    /// Residual blocks in each of the three encoder stages.
    pub encoder_blocks: [usize; 3],
    pub tf_layers: usize,
    pub tf_heads: usize,
    pub tf_dim: usize,
    pub mlp_hidden: usize,
    /// Weight of the feature-correlation prior added to every cross-attention
    /// logit over search-half tokens; zero disables it.
    pub corr_temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            channels: 64,
            encoder_blocks: [1, 1, 1],
            tf_layers: 4,
            tf_heads: 4,
            tf_dim: 128,
            mlp_hidden: 256,
            corr_temperature: 10.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.input_size < FEATURE_STRIDE || self.input_size % FEATURE_STRIDE != 0 {
            return bad(format!("input_size {} must be a positive multiple of 8", self.input_size));
        }
        if self.channels < 4 || self.channels % 4 != 0 {
            return bad(format!("channels {} must be a positive multiple of 4", self.channels));
        }
        if self.encoder_blocks.contains(&0) {
            return bad(format!("encoder_blocks {:?} must all be at least 1", self.encoder_blocks));
        }
        if self.tf_heads == 0 || self.tf_dim % self.tf_heads != 0 {
            return bad(format!("tf_dim {} not divisible by tf_heads {}", self.tf_dim, self.tf_heads));
        }
        if self.tf_dim < 6 {
            return bad(format!("tf_dim {} too small for a 3-D positional encoding", self.tf_dim));
        }
        if !(self.corr_temperature >= 0.0 && self.corr_temperature.is_finite()) {
            return bad(format!("corr_temperature must be non-negative, got {}", self.corr_temperature));
        }
        if self.tf_layers == 0 || self.mlp_hidden == 0 {
            return bad("tf_layers and mlp_hidden must be positive".to_string());
        }
        Ok(())
    }

    /// Spatial shape `[d, h, w]` of the merged map for cubic inputs of side `s`.
    pub fn merged_dims(s: usize) -> [usize; 3] {
        let c = s / FEATURE_STRIDE;
        [c, c, 2 * c]
    }

    /// Scale applied to the head output so predictions come out in voxels.
    pub fn output_scale(&self) -> f64 {
        self.input_size as f64 / 2.0
    }
}

/// Merged encoder output `[c, d/8, h/8, w/4]`; the reference half occupies
/// the first `w/8` cells of the last axis.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    tensor: Tensor<f32>,
    provenance: Option<String>,
}

impl FeatureMap {
    pub fn new(tensor: Tensor<f32>, provenance: Option<String>) -> Result<Self> {
        let s = tensor.shape();
        if s.len() != 4 || s[3] != 2 * s[2] || s[1] != s[2] || s.contains(&0) {
            return Err(Error::ShapeMismatch(format!("feature map shape {s:?} is not C x n x n x 2n")));
        }
        Ok(Self { tensor, provenance })
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }

    pub fn shape(&self) -> [usize; 4] {
        let s = self.tensor.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn channels(&self) -> usize {
        self.shape()[0]
    }

    pub fn provenance(&self) -> Option<&str> {
        self.provenance.as_deref()
    }

    pub fn with_provenance(mut self, p: impl Into<String>) -> Self {
        self.provenance = Some(p.into());
        self
    }

    /// The reference (`0`) or search (`1`) half as `[c, n, n, n]`.
    pub fn half(&self, which: usize) -> Tensor<f32> {
        let [c, d, h, w] = self.shape();
        let hw = w / 2;
        let mut out = Vec::with_capacity(c * d * h * hw);
        for row in self.tensor.data().chunks(w) {
            out.extend_from_slice(&row[which * hw..(which + 1) * hw]);
        }
        Tensor::new(&[c, d, h, hw], out).expect("sizes agree")
    }
}

/// Sinusoidal encoding of a point with coordinates in `[0, 1]`.
///
/// Each axis gets `dim / 6` frequency pairs `(sin, cos)` with geometrically
/// spaced angular frequencies from `pi/2` to `128 pi`; leftover slots are zero.
pub fn positional_encoding(u: Point3, dim: usize) -> Vec<f64> {
    let nf = dim / 6;
    let mut out = vec![0.0; dim];
    for (a, &ua) in u.iter().enumerate() {
        for k in 0..nf {
            let e = if nf > 1 { k as f64 / (nf - 1) as f64 } else { 0.0 };
            let w = 0.5 * core::f64::consts::PI * Float::powf(256.0, e);
            let (s, c) = (w * ua).sin_cos();
            out[a * 2 * nf + 2 * k] = s;
            out[a * 2 * nf + 2 * k + 1] = c;
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
struct Lin {
    w: usize,
    b: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct ConvNorm {
    w: usize,
    norm: Norm,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Debug)]
struct Block {
    c1: ConvNorm,
    c2: ConvNorm,
    down: Option<ConvNorm>,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    attn_norm: Norm,
    q: Lin,
    k: Lin,
    v: Lin,
    o: Lin,
    mlp_norm: Norm,
    fc1: Lin,
    fc2: Lin,
}

#[derive(Clone, Debug)]
struct Layout {
    stem: ConvNorm,
    blocks: Vec<Block>,
    mem_proj: Lin,
    segment: usize,
    mem_norm: Norm,
    q_lift: Lin,
    q_content: Lin,
    layers: Vec<DecoderLayer>,
    head_norm: Norm,
    head1: Lin,
    head2: Lin,
}

#[derive(Clone, Copy, Debug)]
enum Init {
    FanIn(usize),
    TruncNormal,
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

#[derive(Default)]
struct Builder {
    specs: Vec<Spec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        self.specs.push(Spec { name, shape: shape.to_vec(), init });
        self.specs.len() - 1
    }

    fn norm(&mut self, prefix: &str, c: usize) -> Norm {
        Norm {
            g: self.add(format!("{prefix}.gamma"), &[c], Init::Ones),
            b: self.add(format!("{prefix}.beta"), &[c], Init::Zeros),
        }
    }

    fn linear(&mut self, prefix: &str, i: usize, o: usize, bias: bool, init: Init) -> Lin {
        let w = self.add(format!("{prefix}.weight"), &[i, o], init);
        let b = bias.then(|| self.add(format!("{prefix}.bias"), &[o], Init::Zeros));
        Lin { w, b }
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize, stride: usize) -> ConvNorm {
        let w = self.add(format!("{prefix}.weight"), &[cout, cin, k, k, k], Init::FanIn(cin * k * k * k));
        let norm = self.norm(&format!("{prefix}.norm"), cout);
        ConvNorm { w, norm, stride, pad: k / 2 }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<Spec>) {
    let mut b = Builder::default();
    let c = cfg.channels;
    let widths = [c / 4, c / 2, c];
    let strides = [2, 2, 1];
    let stem = b.conv("encoder.stem", 1, widths[0], 3, 2);
    let mut blocks = Vec::new();
    let mut cin = widths[0];
    for (s, (&w, &st)) in widths.iter().zip(&strides).enumerate() {
        for i in 0..cfg.encoder_blocks[s] {
            let stride = if i == 0 { st } else { 1 };
            let p = format!("encoder.stage{}.block{i}", s + 1);
            let c1 = b.conv(&format!("{p}.conv1"), cin, w, 3, stride);
            let c2 = b.conv(&format!("{p}.conv2"), w, w, 3, 1);
            let down = (stride != 1 || cin != w).then(|| b.conv(&format!("{p}.down"), cin, w, 1, stride));
            blocks.push(Block { c1, c2, down });
            cin = w;
        }
    }
    let d = cfg.tf_dim;
    let tn = Init::TruncNormal;
    let mem_proj = b.linear("memory.proj", c, d, true, tn);
    let segment = b.add("memory.segment".into(), &[2, d], tn);
    let mem_norm = b.norm("memory.norm", d);
    let q_lift = b.linear("query.lift", d, d, true, tn);
    let q_content = b.linear("query.content", c, d, false, tn);
    let layers = (0..cfg.tf_layers)
        .map(|l| {
            let p = format!("decoder.{l}");
            DecoderLayer {
                attn_norm: b.norm(&format!("{p}.attn_norm"), d),
                q: b.linear(&format!("{p}.attn.q"), d, d, true, tn),
                k: b.linear(&format!("{p}.attn.k"), d, d, true, tn),
                v: b.linear(&format!("{p}.attn.v"), d, d, true, tn),
                o: b.linear(&format!("{p}.attn.out"), d, d, true, tn),
                mlp_norm: b.norm(&format!("{p}.mlp_norm"), d),
                fc1: b.linear(&format!("{p}.mlp.fc1"), d, cfg.mlp_hidden, true, tn),
                fc2: b.linear(&format!("{p}.mlp.fc2"), cfg.mlp_hidden, d, true, tn),
            }
        })
        .collect();
    let head_norm = b.norm("head.norm", d);
    let head1 = b.linear("head.fc1", d + 3, cfg.mlp_hidden, true, tn);
    let head2 = b.linear("head.fc2", cfg.mlp_hidden, 3, true, Init::Zeros);
    let layout =
        Layout { stem, blocks, mem_proj, segment, mem_norm, q_lift, q_content, layers, head_norm, head1, head2 };
    (layout, b.specs)
}

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Parameters bound to a tape, in [`QuizModel::params`] order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// The trainable registration model.
#[derive(Clone, Debug)]
pub struct QuizModel<T: Real = f32> {
    config: ModelConfig,
    layout: Layout,
    params: Vec<Param<T>>,
}

fn init_tensor<T: Real>(shape: &[usize], init: Init, rng: &mut Pcg64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data: Vec<T> = match init {
        Init::Zeros => vec![T::zero(); n],
        Init::Ones => vec![T::one(); n],
        Init::FanIn(f) => {
            let bound = 1.0 / (f as f64).sqrt();
            let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            (0..n).map(|_| T::of(u.sample(rng))).collect()
        }
        Init::TruncNormal => (0..n)
            .map(|_| loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    break T::of(z * INIT_STD);
                }
            })
            .collect(),
    };
    Tensor::new(shape, data).expect("sizes agree")
}

impl<T: Real> QuizModel<T> {
    /// Freshly initialized weights, reproducible from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        let mut rng = Pcg64::seed_from_u64(seed);
        let params = specs
            .into_iter()
            .map(|s| Param { value: init_tensor(&s.shape, s.init, &mut rng), name: s.name })
            .collect();
        Ok(Self { config, layout, params })
    }

    /// Rebuilds a model from stored tensors, checking every name and shape.
    pub fn from_params(config: ModelConfig, params: Vec<Param<T>>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        if specs.len() != params.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.name != p.name || s.shape != p.value.shape() {
                return Err(Error::InvalidConfig(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.value.shape(),
                    s.name,
                    s.shape
                )));
            }
            if p.value.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {}", p.name)));
            }
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Converts every weight to another precision.
    pub fn cast<U: Real>(&self) -> QuizModel<U> {
        QuizModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.map(|v| U::of(v.to_f64_lossy())) })
                .collect(),
        }
    }

    /// Places all parameters on the tape.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound { vars: self.params.iter().map(|p| g.param(p.value.clone())).collect() }
    }

    fn conv_norm(&self, g: &mut Graph<T>, b: &Bound, x: Var, c: &ConvNorm, relu: bool) -> Var {
        let v = &b.vars;
        let y = g.conv3d(x, v[c.w], c.stride, c.pad);
        let y = g.instance_norm(y, v[c.norm.g], v[c.norm.b]);
        if relu {
            g.relu(y)
        } else {
            y
        }
    }

    fn linear(&self, g: &mut Graph<T>, b: &Bound, x: Var, l: &Lin) -> Var {
        g.linear(x, b.vars[l.w], l.b.map(|i| b.vars[i]))
    }

    fn norm(&self, g: &mut Graph<T>, b: &Bound, x: Var, n: &Norm) -> Var {
        g.layer_norm(x, b.vars[n.g], b.vars[n.b])
    }

    /// Encodes one `[1, s, s, s]` volume into `[c, s/8, s/8, s/8]`.
    pub fn encode_single(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Var {
        let mut h = self.conv_norm(g, b, x, &self.layout.stem, true);
        for blk in &self.layout.blocks {
            let y = self.conv_norm(g, b, h, &blk.c1, true);
            let y = self.conv_norm(g, b, y, &blk.c2, false);
            let skip = match &blk.down {
                Some(d) => self.conv_norm(g, b, h, d, false),
                None => h,
            };
            let s = g.add(y, skip);
            h = g.relu(s);
        }
        h
    }

    /// Shared-weight encoding of both inputs merged along the last axis.
    pub fn encode_graph(&self, g: &mut Graph<T>, b: &Bound, reference: Var, search: Var) -> Result<Var> {
        let (rs, ss) = (g.shape(reference).to_vec(), g.shape(search).to_vec());
        check_input_shape(&rs)?;
        if rs != ss {
            return Err(Error::ShapeMismatch(format!("reference {rs:?} vs search {ss:?}")));
        }
        let fr = self.encode_single(g, b, reference);
        let fs = self.encode_single(g, b, search);
        Ok(g.concat_last(fr, fs))
    }

    /// Memory tokens `[l, tf_dim]` from the flattened merged map `tokens [l, c]`.
    fn memory(&self, g: &mut Graph<T>, b: &Bound, tokens: Var, [d, h, w]: [usize; 3]) -> Var {
        let half = w / 2;
        let side = d * FEATURE_STRIDE;
        let dim = self.config.tf_dim;
        let proj = self.linear(g, b, tokens, &self.layout.mem_proj);
        let mut pe = Vec::with_capacity(d * h * w * dim);
        let mut ids = Vec::with_capacity(d * h * w);
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let local = [x % half, y, z].map(|c| (c * FEATURE_STRIDE) as f64 / (side - 1) as f64);
                    pe.extend(positional_encoding(local, dim).into_iter().map(T::of));
                    ids.push(x / half);
                }
            }
        }
        let pe = g.constant(Tensor::new(&[d * h * w, dim], pe).expect("sizes agree"));
        let m = g.add(proj, pe);
        let m = g.add_embedding(m, b.vars[self.layout.segment], ids);
        self.norm(g, b, m, &self.layout.mem_norm)
    }

    /// Predicted displacements `[n, 3]` in voxels for reference-frame queries.
    pub fn quiz_graph(&self, g: &mut Graph<T>, b: &Bound, fm: Var, q: &[Point3]) -> Result<Var> {
        check_queries(q)?;
        let [c, d, h, w] = dims4(g.shape(fm));
        if c != self.config.channels {
            return Err(Error::ShapeMismatch(format!("feature map has {c} channels, model expects {}", self.config.channels)));
        }
        let side = d * FEATURE_STRIDE;
        let dim = self.config.tf_dim;
        let tokens = g.transpose(fm);
        let mem = self.memory(g, b, tokens, [d, h, w]);

        let pe: Vec<T> = q
            .iter()
            .flat_map(|p| positional_encoding(p.map(|v| v / (side - 1) as f64), dim).into_iter().map(T::of))
            .collect();
        let pe = g.constant(Tensor::new(&[q.len(), dim], pe).expect("sizes agree"));
        let lifted = self.linear(g, b, pe, &self.layout.q_lift);
        let cells: Vec<Point3> = q.iter().map(|p| p.map(|v| v / FEATURE_STRIDE as f64)).collect();
        let feats = g.sample_features(fm, SampleRegion { x0: 0, width: w / 2 }, &cells);
        let content = self.linear(g, b, feats, &self.layout.q_content);
        let mut x = g.add(lifted, content);
        let sim = self.correlation(g, feats, tokens);
        let beta = T::of(self.config.corr_temperature);
        let l = g.shape(sim)[1];
        let on_search: Vec<bool> = (0..l).map(|i| i % w >= w / 2).collect();
        let prior = (self.config.corr_temperature > 0.0)
            .then(|| g.scale_cols(sim, on_search.iter().map(|&s| if s { beta } else { T::zero() }).collect()));
        let matched = self.matched_offsets(g, sim, &on_search, [d, h, w], q);

        for layer in &self.layout.layers {
            let h = self.norm(g, b, x, &layer.attn_norm);
            let qq = self.linear(g, b, h, &layer.q);
            let kk = self.linear(g, b, mem, &layer.k);
            let vv = self.linear(g, b, mem, &layer.v);
            let a = g.attention_biased(qq, kk, vv, prior, self.config.tf_heads);
            let a = self.linear(g, b, a, &layer.o);
            x = g.add(x, a);
            let h = self.norm(g, b, x, &layer.mlp_norm);
            let h = self.linear(g, b, h, &layer.fc1);
            let h = g.relu(h);
            let h = self.linear(g, b, h, &layer.fc2);
            x = g.add(x, h);
        }
        let h = self.norm(g, b, x, &self.layout.head_norm);
        let h = g.concat_last(h, matched);
        let h = self.linear(g, b, h, &self.layout.head1);
        let h = g.relu(h);
        let out = self.linear(g, b, h, &self.layout.head2);
        Ok(g.scale(out, T::of(self.config.output_scale())))
    }

    /// Cosine similarity `[n, l]` between each query's sampled features and every token.
    fn correlation(&self, g: &mut Graph<T>, feats: Var, tokens: Var) -> Var {
        let fq = g.normalize_rows(feats);
        let fm = g.normalize_rows(tokens);
        let fm = g.transpose(fm);
        g.linear(fq, fm, None)
    }

    /// Soft-argmax over search-half cells of the scaled correlation, minus
    /// the query: a direct displacement estimate `[n, 3]` in voxels.
    fn matched_offsets(&self, g: &mut Graph<T>, sim: Var, on_search: &[bool], [d, h, w]: [usize; 3], q: &[Point3]) -> Var {
        let n = q.len();
        let l = on_search.len();
        let beta = T::of(self.config.corr_temperature);
        let scaled = g.scale_cols(sim, on_search.iter().map(|&s| if s { beta } else { T::zero() }).collect());
        let mask: Vec<T> = (0..n)
            .flat_map(|_| on_search.iter().map(|&s| if s { T::zero() } else { T::of(-1e4) }))
            .collect();
        let mask = g.constant(Tensor::new(&[n, l], mask).expect("sizes agree"));
        let logits = g.add(scaled, mask);
        let half = w / 2;
        let mut pos = Vec::with_capacity(l * 3);
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    pos.extend([x % half, y, z].map(|c| T::of((c * FEATURE_STRIDE) as f64)));
                }
            }
        }
        let zq = g.constant(Tensor::zeros(&[n, 3]));
        let zk = g.constant(Tensor::zeros(&[l, 3]));
        let pos = g.constant(Tensor::new(&[l, 3], pos).expect("sizes agree"));
        let expected = g.attention_biased(zq, zk, pos, Some(logits), 1);
        let minus_q = g.constant(Tensor::new(&[n, 3], q.iter().flat_map(|p| p.map(|v| T::of(-v))).collect()).expect("sizes agree"));
        g.add(expected, minus_q)
    }

    /// Runs the encoder without recording gradients.
    pub fn encode(&self, reference: &Volume, search: &Volume) -> Result<FeatureMap> {
        let mut g = Graph::<T>::inference();
        let b = self.bind(&mut g);
        let r = g.constant(volume_tensor(reference));
        let s = g.constant(volume_tensor(search));
        let fm = self.encode_graph(&mut g, &b, r, s)?;
        let t = g.value(fm);
        let out = FeatureMap::new(t.map(|v| v.to_f64_lossy() as f32), None)?;
        if out.tensor.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder output".into()));
        }
        Ok(out)
    }

    /// Displacements for `q` (reference voxel coordinates, `(x, y, z)`).
    pub fn quiz(&self, fm: &FeatureMap, q: &[Point3]) -> Result<PointDisplacements> {
        let mut g = Graph::<T>::inference();
        let b = self.bind(&mut g);
        let f = g.constant(fm.tensor.map(|v| T::of(v as f64)));
        let out = self.quiz_graph(&mut g, &b, f, q)?;
        displacements(g.value(out))
    }

    /// Encoder and quizzer in one pass.
    pub fn predict(&self, reference: &Volume, search: &Volume, q: &[Point3]) -> Result<PointDisplacements> {
        check_queries(q)?;
        let mut g = Graph::<T>::inference();
        let b = self.bind(&mut g);
        let r = g.constant(volume_tensor(reference));
        let s = g.constant(volume_tensor(search));
        let fm = self.encode_graph(&mut g, &b, r, s)?;
        let out = self.quiz_graph(&mut g, &b, fm, q)?;
        displacements(g.value(out))
    }
}

fn dims4(s: &[usize]) -> [usize; 4] {
    [s[0], s[1], s[2], s[3]]
}

fn check_input_shape(s: &[usize]) -> Result<()> {
    let ok = s.len() == 4
        && s[0] == 1
        && s[1] == s[2]
        && s[2] == s[3]
        && s[1] >= FEATURE_STRIDE
        && s[1] % FEATURE_STRIDE == 0;
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!("encoder input {s:?} must be a 1-channel cube with side divisible by 8")))
    }
}

fn check_queries(q: &[Point3]) -> Result<()> {
    if q.is_empty() {
        return Err(Error::InvalidArgument("empty query set".into()));
    }
    if q.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("query coordinates".into()));
    }
    Ok(())
}

fn displacements<T: Real>(t: &Tensor<T>) -> Result<PointDisplacements> {
    let d = t.data();
    let pts = d.chunks(3).map(|c| [c[0].to_f64_lossy(), c[1].to_f64_lossy(), c[2].to_f64_lossy()]).collect();
    PointDisplacements::new(pts)
}

/// A volume as a `[1, d, h, w]` tensor.
pub fn volume_tensor<T: Real>(v: &Volume) -> Tensor<T> {
    let [d, h, w] = v.dims();
    Tensor::new(&[1, d, h, w], v.data().iter().map(|&x| T::of(x as f64)).collect()).expect("sizes agree")
}

/// Component-wise mean of the per-point displacements.
pub fn reduce_mean_displacement(d: &PointDisplacements) -> Result<Point3> {
    d.mean().ok_or_else(|| Error::InvalidArgument("no displacements to average".into()))
}

/// Moves the search volume back by the mean displacement `t`: the output at
/// `v` samples the search volume at `v + t`.
pub fn position_reset(search: &Volume, t: Point3) -> Result<Volume> {
    warp_translate(search, [-t[0], -t[1], -t[2]])
}
