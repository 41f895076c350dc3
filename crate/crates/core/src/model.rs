//! Encoder / bottleneck / decoder network shared by the discriminator and
//! the generator, with learned skip projections and group-wise freezing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Tape tags marking which part of the network recorded a node.
pub mod tags {
    pub const INPUT: u32 = 0;
    pub const ENCODER: u32 = 1;
    pub const BOTTLENECK1: u32 = 2;
    pub const BOTTLENECK2: u32 = 3;
    pub const DECODER: u32 = 4;
    pub const SKIP: u32 = 5;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    /// Base filter count `n`.
    pub base_filters: usize,
    /// Bottleneck size `N_b`.
    pub latent_dim: usize,
    /// Input height and width.
    pub resolution: usize,
    /// Number of one-hot label channels appended to the input.
    pub label_channels: usize,
    /// Decoder stages (1 to 5, counted from the bottleneck) whose input
    /// receives a projected encoder feature map of the same resolution.
    pub skip_stages: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            base_filters: 16,
            latent_dim: 16,
            resolution: 32,
            label_channels: 0,
            skip_stages: vec![2, 3],
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || !self.resolution.is_multiple_of(32) {
            return Err(Error::InvalidArgument(format!(
                "resolution {} is not a positive multiple of 32",
                self.resolution
            )));
        }
        if self.base_filters == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidArgument(
                "base filters and latent size must be at least 1".into(),
            ));
        }
        let mut seen = [false; 6];
        for &s in &self.skip_stages {
            if !(1..=5).contains(&s) || std::mem::replace(&mut seen[s], true) {
                return Err(Error::InvalidArgument(format!(
                    "skip stage {s} is out of range 1..=5 or repeated"
                )));
            }
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        3 + self.label_channels
    }

    /// Spatial size at the bottleneck.
    pub fn coarse(&self) -> usize {
        self.resolution / 32
    }

    /// Encoder level feeding decoder stage `s`, and its channel count.
    fn skip_source(&self, stage: usize) -> (usize, usize) {
        let level = 6 - stage;
        (level, (level + 1) * self.base_filters)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Encoder,
    Bottleneck1,
    Bottleneck2,
    Decoder,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Encoder,
        ParamGroup::Bottleneck1,
        ParamGroup::Bottleneck2,
        ParamGroup::Decoder,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Bottleneck1 => "bottleneck1",
            ParamGroup::Bottleneck2 => "bottleneck2",
            ParamGroup::Decoder => "decoder",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LayerKind {
    Conv { c_in: usize, c_out: usize, k: usize },
    Fc { d_in: usize, d_out: usize },
}

#[derive(Clone, Debug)]
struct LayerSpec {
    name: String,
    group: ParamGroup,
    kind: LayerKind,
}

impl LayerSpec {
    fn shapes(&self) -> [Vec<usize>; 2] {
        match self.kind {
            LayerKind::Conv { c_in, c_out, k } => [vec![c_out, c_in, k, k], vec![c_out]],
            LayerKind::Fc { d_in, d_out } => [vec![d_out, d_in], vec![d_out]],
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv { c_in, k, .. } => c_in * k * k,
            LayerKind::Fc { d_in, .. } => d_in,
        }
    }
}

/// Layers in parameter order: encoder, bottlenecks, decoder blocks, head,
/// skip projections.
fn layer_specs(config: &NetConfig) -> Vec<LayerSpec> {
    let n = config.base_filters;
    let mut specs = Vec::new();
    let conv = |specs: &mut Vec<LayerSpec>, name: String, group, c_in, c_out, k| {
        specs.push(LayerSpec {
            name,
            group,
            kind: LayerKind::Conv { c_in, c_out, k },
        })
    };
    conv(&mut specs, "enc.in".into(), ParamGroup::Encoder, config.input_channels(), n, 3);
    for level in 1..=6 {
        let (c_in, c_out) = (level * n, (level + 1).min(6) * n);
        conv(&mut specs, format!("enc.block{level}.a"), ParamGroup::Encoder, c_in, c_out, 3);
        conv(&mut specs, format!("enc.block{level}.b"), ParamGroup::Encoder, c_out, c_out, 3);
    }
    let coarse = config.coarse() * config.coarse();
    specs.push(LayerSpec {
        name: "bottleneck1".into(),
        group: ParamGroup::Bottleneck1,
        kind: LayerKind::Fc {
            d_in: coarse * 6 * n,
            d_out: config.latent_dim,
        },
    });
    specs.push(LayerSpec {
        name: "bottleneck2".into(),
        group: ParamGroup::Bottleneck2,
        kind: LayerKind::Fc {
            d_in: config.latent_dim,
            d_out: coarse * n,
        },
    });
    for stage in 1..=6 {
        conv(&mut specs, format!("dec.block{stage}.a"), ParamGroup::Decoder, n, n, 3);
        conv(&mut specs, format!("dec.block{stage}.b"), ParamGroup::Decoder, n, n, 3);
    }
    conv(&mut specs, "dec.head".into(), ParamGroup::Decoder, n, 3, 3);
    for &stage in &config.skip_stages {
        let (_, channels) = config.skip_source(stage);
        conv(&mut specs, format!("skip.stage{stage}"), ParamGroup::Decoder, channels, n, 1);
    }
    specs
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<T>,
}

/// All network tensors, partitioned into four groups with freeze flags.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<T> {
    pub config: NetConfig,
    pub params: Vec<Param<T>>,
    frozen: [bool; 4],
}

/// Nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub output: Var,
    /// `[N, N_b]` bottleneck vectors.
    pub latent: Var,
    /// Encoder feature maps feeding the skip projections, in `skip_stages` order.
    pub skip_features: Vec<Var>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

impl<T: Scalar> NetParams<T> {
    /// Zero biases. 3×3 convolutions that keep or widen the channel count
    /// start as an identity on their centre tap plus uniform noise in
    /// `±sqrt(0.15 / fan_in)`, so the deep unnormalized stacks begin close
    /// to a shallow map. Every other weight is uniform in `±sqrt(1 / fan_in)`.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for spec in layer_specs(config) {
            let [wshape, bshape] = spec.shapes();
            let dirac = match spec.kind {
                LayerKind::Conv { c_in, c_out, k } if k == 3 && c_out >= c_in => Some(c_in),
                _ => None,
            };
            let gain = if dirac.is_some() { 0.15 } else { 1.0 };
            let bound = (gain / spec.fan_in() as f64).sqrt();
            let count: usize = wshape.iter().product();
            let mut data: Vec<f64> = (0..count).map(|_| rng.random_range(-bound..bound)).collect();
            if let Some(c_in) = dirac {
                for o in 0..wshape[0] {
                    data[((o * c_in + o % c_in) * 3 + 1) * 3 + 1] += 1.0;
                }
            }
            let data = data.into_iter().map(T::from_f64).collect();
            params.push(Param {
                name: format!("{}.weight", spec.name),
                group: spec.group,
                value: Tensor::new(wshape, data)?,
            });
            params.push(Param {
                name: format!("{}.bias", spec.name),
                group: spec.group,
                value: Tensor::zeros(&bshape),
            });
        }
        Ok(NetParams {
            config: config.clone(),
            params,
            frozen: [false; 4],
        })
    }

    /// Rebuilds parameters from stored tensors, checking names and shapes
    /// against the architecture implied by `config`.
    pub fn from_tensors(config: &NetConfig, tensors: Vec<Tensor<T>>, frozen: [bool; 4]) -> Result<Self> {
        let mut params = Self::init_shapes_only(config)?;
        if tensors.len() != params.params.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                params.params.len(),
                tensors.len()
            )));
        }
        for (p, t) in params.params.iter_mut().zip(tensors) {
            if t.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "{} should be {:?}, got {:?}",
                    p.name,
                    p.value.shape(),
                    t.shape()
                )));
            }
            t.ensure_finite(&p.name)?;
            p.value = t;
        }
        params.frozen = frozen;
        Ok(params)
    }

    fn init_shapes_only(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        for spec in layer_specs(config) {
            let [wshape, bshape] = spec.shapes();
            params.push(Param {
                name: format!("{}.weight", spec.name),
                group: spec.group,
                value: Tensor::zeros(&wshape),
            });
            params.push(Param {
                name: format!("{}.bias", spec.name),
                group: spec.group,
                value: Tensor::zeros(&bshape),
            });
        }
        Ok(NetParams {
            config: config.clone(),
            params,
            frozen: [false; 4],
        })
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn shapes(&self) -> Vec<&[usize]> {
        self.params.iter().map(|p| p.value.shape()).collect()
    }

    pub fn freeze(&mut self, group: ParamGroup) {
        self.frozen[group.index()] = true;
    }

    pub fn unfreeze(&mut self, group: ParamGroup) {
        self.frozen[group.index()] = false;
    }

    /// Freezes the decoder group, which includes the head and skip projections.
    pub fn freeze_decoder(&mut self) {
        self.freeze(ParamGroup::Decoder);
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.frozen[group.index()]
    }

    pub fn frozen_groups(&self) -> [bool; 4] {
        self.frozen
    }

    /// Per-parameter freeze flags, in parameter order.
    pub fn frozen_mask(&self) -> Vec<bool> {
        self.params.iter().map(|p| self.is_frozen(p.group)).collect()
    }

    /// Deep copy used to seed the generator from the discriminator.
    pub fn clone_generator(&self) -> Self {
        self.clone()
    }

    /// FNV-1a hash over the names and value bits of one group.
    pub fn checksum(&self, group: ParamGroup) -> u64 {
        self.checksum_where(|p| p.group == group)
    }

    pub fn checksum_all(&self) -> u64 {
        self.checksum_where(|_| true)
    }

    fn checksum_where(&self, keep: impl Fn(&Param<T>) -> bool) -> u64 {
        let mut h = FNV_OFFSET;
        for p in self.params.iter().filter(|p| keep(p)) {
            h = fnv1a(h, p.name.as_bytes());
            for v in p.value.data() {
                h = fnv1a(h, &v.to_f64().unwrap_or(f64::NAN).to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn cast<U: Scalar>(&self) -> NetParams<U> {
        NetParams {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group,
                    value: p.value.cast(),
                })
                .collect(),
            frozen: self.frozen,
        }
    }

    pub fn values_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.params.iter_mut().map(|p| &mut p.value).collect()
    }

    /// Records every parameter as a leaf. With `trainable`, parameters of
    /// unfrozen groups require gradients; otherwise all are constants.
    pub fn register(&self, g: &mut Graph<T>, trainable: bool) -> Result<Vec<Var>> {
        self.params
            .iter()
            .map(|p| {
                g.set_tag(match p.group {
                    ParamGroup::Encoder => tags::ENCODER,
                    ParamGroup::Bottleneck1 => tags::BOTTLENECK1,
                    ParamGroup::Bottleneck2 => tags::BOTTLENECK2,
                    ParamGroup::Decoder if p.name.starts_with("skip.") => tags::SKIP,
                    ParamGroup::Decoder => tags::DECODER,
                });
                g.leaf(p.value.clone(), trainable && !self.is_frozen(p.group))
            })
            .collect()
    }

    fn layer_index(&self, name: &str) -> usize {
        let weight = format!("{name}.weight");
        self.params
            .iter()
            .position(|p| p.name == weight)
            .unwrap_or_else(|| panic!("layer {name} is part of every architecture"))
    }

    fn conv(&self, g: &mut Graph<T>, vars: &[Var], name: &str, x: Var) -> Result<Var> {
        let i = self.layer_index(name);
        g.conv2d(x, vars[i], vars[i + 1])
    }

    fn conv_elu(&self, g: &mut Graph<T>, vars: &[Var], name: &str, x: Var) -> Result<Var> {
        let y = self.conv(g, vars, name, x)?;
        g.elu(y)
    }

    fn check_vars(&self, vars: &[Var]) -> Result<()> {
        if vars.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter nodes, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        Ok(())
    }

    /// Encoder and first bottleneck. Returns the `[N, N_b]` latent and the
    /// encoder features used by the skip projections.
    pub fn encode(&self, g: &mut Graph<T>, vars: &[Var], input: Var) -> Result<(Var, Vec<Var>)> {
        self.check_vars(vars)?;
        let c = &self.config;
        let shape = g.value(input).shape().to_vec();
        if shape.len() != 4 || shape[1] != c.input_channels() || shape[2] != c.resolution || shape[3] != c.resolution {
            return Err(Error::Shape(format!(
                "network expects [N, {}, {r}, {r}] input, got {shape:?}",
                c.input_channels(),
                r = c.resolution
            )));
        }
        let n = shape[0];
        g.set_tag(tags::ENCODER);
        let mut x = self.conv_elu(g, vars, "enc.in", input)?;
        let mut levels = Vec::with_capacity(5);
        for level in 1..=5 {
            x = self.conv_elu(g, vars, &format!("enc.block{level}.a"), x)?;
            x = self.conv_elu(g, vars, &format!("enc.block{level}.b"), x)?;
            x = g.avg_pool2(x)?;
            levels.push(x);
        }
        x = self.conv_elu(g, vars, "enc.block6.a", x)?;
        x = self.conv_elu(g, vars, "enc.block6.b", x)?;
        g.set_tag(tags::BOTTLENECK1);
        let flat = g.reshape(x, &[n, c.coarse() * c.coarse() * 6 * c.base_filters])?;
        let i = self.layer_index("bottleneck1");
        let latent = g.fully_connected(flat, vars[i], vars[i + 1])?;
        let skips = c
            .skip_stages
            .iter()
            .map(|&s| levels[c.skip_source(s).0 - 1])
            .collect();
        Ok((latent, skips))
    }

    /// Second bottleneck and decoder. Without `skip_features` the skip
    /// projections receive all-zero feature maps.
    pub fn decode(&self, g: &mut Graph<T>, vars: &[Var], latent: Var, skip_features: Option<&[Var]>) -> Result<Var> {
        self.check_vars(vars)?;
        let c = &self.config;
        let n = match g.value(latent).shape() {
            [n, d] if *d == c.latent_dim => *n,
            s => {
                return Err(Error::Shape(format!(
                    "latent must be [N, {}], got {s:?}",
                    c.latent_dim
                )))
            }
        };
        if let Some(s) = skip_features {
            if s.len() != c.skip_stages.len() {
                return Err(Error::Shape(format!(
                    "{} skip features for {} skip stages",
                    s.len(),
                    c.skip_stages.len()
                )));
            }
        }
        g.set_tag(tags::BOTTLENECK2);
        let i = self.layer_index("bottleneck2");
        let fc = g.fully_connected(latent, vars[i], vars[i + 1])?;
        let mut x = g.reshape(fc, &[n, c.base_filters, c.coarse(), c.coarse()])?;
        for stage in 1..=6 {
            if let Some(k) = c.skip_stages.iter().position(|&s| s == stage) {
                g.set_tag(tags::SKIP);
                let feature = match skip_features {
                    Some(f) => f[k],
                    None => {
                        let (level, channels) = c.skip_source(stage);
                        let side = c.resolution >> level;
                        g.constant(Tensor::zeros(&[n, channels, side, side]))?
                    }
                };
                let projected = self.conv(g, vars, &format!("skip.stage{stage}"), feature)?;
                x = g.add(x, projected)?;
            }
            g.set_tag(tags::DECODER);
            x = self.conv_elu(g, vars, &format!("dec.block{stage}.a"), x)?;
            x = self.conv_elu(g, vars, &format!("dec.block{stage}.b"), x)?;
            if stage < 6 {
                x = g.upsample_nearest2(x)?;
            }
        }
        let head = self.conv(g, vars, "dec.head", x)?;
        g.tanh(head)
    }

    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], input: Var) -> Result<Forward> {
        let (latent, skip_features) = self.encode(g, vars, input)?;
        let output = self.decode(g, vars, latent, Some(&skip_features))?;
        Ok(Forward {
            output,
            latent,
            skip_features,
        })
    }

    /// Reconstruction of a `[N, C, H, W]` batch without recording gradients.
    pub fn reconstruct(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, false)?;
        g.set_tag(tags::INPUT);
        let x = g.constant(input.clone())?;
        let out = self.forward(&mut g, &vars, x)?.output;
        Ok(g.value(out).clone())
    }

    /// `[N, N_b]` bottleneck vectors for a batch.
    pub fn encode_batch(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, false)?;
        g.set_tag(tags::INPUT);
        let x = g.constant(input.clone())?;
        let (latent, _) = self.encode(&mut g, &vars, x)?;
        Ok(g.value(latent).clone())
    }

    /// Decoder-only output for `[N, N_b]` latents, with zeroed skip inputs.
    pub fn decode_batch(&self, latent: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, false)?;
        g.set_tag(tags::INPUT);
        let z = g.constant(latent.clone())?;
        let out = self.decode(&mut g, &vars, z, None)?;
        Ok(g.value(out).clone())
    }
}
