//! Discriminator pre-training and the adversarial loop.
//!
//! The discriminator `D` is an autoencoder scoring a map `v` by
//! `𝓛(v) = mean |v − D(v)|`. Per batch, `D` first minimizes
//! `L_D = 𝓛(y) − λ_adv·𝓛(G(x))` with `G` held constant, then `G` minimizes
//! `L_G = 𝓛(G(x)) + λ_rec·mean |G(x) − y|` with `D` held constant.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamConfig, AdamState, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::UvMap;
use crate::model::{tags, NetConfig, NetParams, ParamGroup};

/// How the learning rate shrinks every `decay_every` epochs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DecayMode {
    /// `base · decay^k`.
    #[default]
    Multiplicative,
    /// `base · (1 − k·(1 − decay))`, floored at zero.
    Additive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda_adv: f64,
    pub lambda_rec: f64,
    pub lr: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub decay_mode: DecayMode,
    pub pretrain_batch: usize,
    pub pretrain_epochs: usize,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_adv: 1e-3,
            lambda_rec: 1.0,
            lr: 5e-5,
            decay: 0.95,
            decay_every: 30,
            decay_mode: DecayMode::Multiplicative,
            pretrain_batch: 32,
            pretrain_epochs: 300,
            batch: 16,
            epochs: 300,
            seed: 0,
            checkpoint_every: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_adv < 0.0 || self.lambda_rec < 0.0 {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        if self.batch == 0 || self.pretrain_batch == 0 {
            return Err(Error::InvalidArgument("batch sizes must be at least 1".into()));
        }
        if self.decay_every == 0 {
            return Err(Error::InvalidArgument("decay interval must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::InvalidArgument(
                "learning rate must be positive and decay within [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let k = (epoch.max(1) - 1) / config.decay_every.max(1);
    match config.decay_mode {
        DecayMode::Multiplicative => config.lr * config.decay.powi(k as i32),
        DecayMode::Additive => config.lr * (1.0 - k as f64 * (1.0 - config.decay)).max(0.0),
    }
}

/// Position channels followed by one constant plane per label entry.
pub fn condition_input(x: &UvMap, label: &[f32]) -> Result<Tensor<f32>> {
    if x.channels != 3 {
        return Err(Error::Shape(format!("expected a 3-channel map, got {}", x.channels)));
    }
    check_one_hot(label)?;
    let plane = x.height * x.width;
    let mut data = x.to_f32();
    for &l in label {
        data.extend(std::iter::repeat_n(l, plane));
    }
    Tensor::new(vec![3 + label.len(), x.height, x.width], data)
}

fn check_one_hot(label: &[f32]) -> Result<()> {
    if label.is_empty() {
        return Ok(());
    }
    let ones = label.iter().filter(|&&v| v == 1.0).count();
    let zeros = label.iter().filter(|&&v| v == 0.0).count();
    if ones != 1 || ones + zeros != label.len() {
        return Err(Error::InvalidArgument(format!("label {label:?} is not one-hot")));
    }
    Ok(())
}

pub fn one_hot(index: usize, len: usize) -> Vec<f32> {
    let mut v = vec![0.0; len];
    if index < len {
        v[index] = 1.0;
    }
    v
}

/// Input map `x`, target map `y` and an optional label index.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    /// `[3, H, W]`.
    pub x: Tensor<f32>,
    /// `[3, H, W]`.
    pub y: Tensor<f32>,
    pub label: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    pub samples: Vec<PairedSample>,
    pub label_count: usize,
    pub resolution: usize,
}

impl PairedDataset {
    pub fn new(samples: Vec<PairedSample>, label_count: usize) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("dataset has no samples".into()))?;
        let resolution = first.x.shape().get(1).copied().unwrap_or(0);
        let expect = [3, resolution, resolution];
        for (i, s) in samples.iter().enumerate() {
            if s.x.shape() != expect || s.y.shape() != expect {
                return Err(Error::Shape(format!(
                    "sample {i} maps are {:?}/{:?}, expected {expect:?}",
                    s.x.shape(),
                    s.y.shape()
                )));
            }
            match (s.label, label_count) {
                (None, 0) => {}
                (Some(l), n) if l < n => {}
                (l, n) => {
                    return Err(Error::InvalidArgument(format!(
                        "sample {i} has label {l:?} but the dataset has {n} labels"
                    )))
                }
            }
        }
        Ok(PairedDataset {
            samples,
            label_count,
            resolution,
        })
    }

    /// Auto-encoding dataset (`y = x`).
    pub fn from_maps(maps: &[UvMap], labels: Option<(&[usize], usize)>) -> Result<Self> {
        let samples = maps
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let t = Tensor::new(vec![3, m.height, m.width], m.to_f32())?;
                Ok(PairedSample {
                    x: t.clone(),
                    y: t,
                    label: labels.map(|(l, _)| l[i]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, labels.map_or(0, |(_, n)| n))
    }

    /// Translation dataset from aligned input/target lists.
    pub fn from_pairs(inputs: &[UvMap], targets: &[UvMap], labels: Option<(&[usize], usize)>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let samples = inputs
            .iter()
            .zip(targets)
            .enumerate()
            .map(|(i, (x, y))| {
                Ok(PairedSample {
                    x: Tensor::new(vec![3, x.height, x.width], x.to_f32())?,
                    y: Tensor::new(vec![3, y.height, y.width], y.to_f32())?,
                    label: labels.map(|(l, _)| l[i]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, labels.map_or(0, |(_, n)| n))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            indices.iter().map(|&i| self.samples[i].clone()).collect(),
            self.label_count,
        )
    }

    /// Seeded split; the first `ceil(train_fraction · N)` shuffled samples train.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        let (train, test) = split_indices(self.len(), train_fraction, seed);
        Ok((self.subset(&train)?, self.subset(&test)?))
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        Batch::gather(self, indices)
    }
}

/// Train/test index split used throughout the pipeline.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((train_fraction * n as f64).ceil() as usize).min(n);
    let mut train = idx[..cut].to_vec();
    let mut test = idx[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Stacked tensors for one mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, 3, H, W]`.
    pub x: Tensor<f32>,
    /// `[B, 3, H, W]`.
    pub y: Tensor<f32>,
    /// `[B, L, H, W]` constant label planes, absent when `L = 0`.
    pub labels: Option<Tensor<f32>>,
}

impl Batch {
    fn gather(data: &PairedDataset, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let xs: Vec<&Tensor<f32>> = indices.iter().map(|&i| &data.samples[i].x).collect();
        let ys: Vec<&Tensor<f32>> = indices.iter().map(|&i| &data.samples[i].y).collect();
        let labels = if data.label_count == 0 {
            None
        } else {
            let h = data.resolution;
            let planes: Vec<Tensor<f32>> = indices
                .iter()
                .map(|&i| {
                    let l = one_hot(data.samples[i].label.unwrap_or(usize::MAX), data.label_count);
                    let body = l.iter().flat_map(|&v| std::iter::repeat_n(v, h * h)).collect();
                    Tensor::new(vec![data.label_count, h, h], body)
                })
                .collect::<Result<_>>()?;
            Some(Tensor::stack(&planes.iter().collect::<Vec<_>>())?)
        };
        Ok(Batch {
            x: Tensor::stack(&xs)?,
            y: Tensor::stack(&ys)?,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Appends the label planes (if any) to a map already on the tape.
fn conditioned(g: &mut Graph<f32>, map: Var, labels: Option<Var>) -> Result<Var> {
    match labels {
        Some(l) => g.concat_channels(map, l),
        None => Ok(map),
    }
}

fn gather_grads<'a>(grads: &'a crate::autodiff::Gradients<f32>, vars: &[Var]) -> Vec<Option<&'a Tensor<f32>>> {
    vars.iter().map(|&v| grads.get(v)).collect()
}

fn nan_guard(e: Error, what: &str) -> Error {
    if e.is_numerical() {
        Error::Numerical(format!("{what}: {e}"))
    } else {
        e
    }
}

/// Mean of `|D(y) − y|` for the batch, as an autoencoder update on `D`.
pub fn autoencoder_step(d: &mut NetParams<f32>, adam: &mut AdamState<f32>, batch: &Batch, lr: f64) -> Result<f64> {
    let mut g = Graph::new();
    let vars = d.register(&mut g, true)?;
    g.set_tag(tags::INPUT);
    let y = g.constant(batch.y.clone())?;
    let labels = batch.labels.clone().map(|l| g.constant(l)).transpose()?;
    let input = conditioned(&mut g, y, labels)?;
    let out = d.forward(&mut g, &vars, input)?.output;
    let loss = g.l1_mean(out, y)?;
    let value = g.value(loss).item() as f64;
    let grads = g.backward(loss)?;
    let mask = d.frozen_mask();
    adam.update(&mut d.values_mut(), &gather_grads(&grads, &vars), &mask, lr)?;
    Ok(value)
}

/// Everything the straight-line loss oracle and the isolation checks need
/// from one adversarial step.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub l_d: f64,
    pub l_g: f64,
    pub l_rec: f64,
    /// `𝓛(y)` and `𝓛(G(x))` as seen by the discriminator update.
    pub d_real: f64,
    pub d_fake: f64,
    /// Forward outputs of the discriminator update: `y`, `D(y)`, `G(x)`, `D(G(x))`.
    pub d_step_outputs: [Tensor<f32>; 4],
    /// Forward outputs of the generator update: `G(x)`, `D(G(x))` with the updated `D`.
    pub g_step_outputs: [Tensor<f32>; 2],
    /// Generator parameters that received a gradient during the D update.
    pub d_step_generator_grads: usize,
    /// Discriminator parameters that received a gradient during the G update.
    pub g_step_discriminator_grads: usize,
}

/// One D update followed by one G update on the same batch.
pub fn adversarial_step(
    batch: &Batch,
    d: &mut NetParams<f32>,
    g_net: &mut NetParams<f32>,
    adam_d: &mut AdamState<f32>,
    adam_g: &mut AdamState<f32>,
    config: &TrainConfig,
    lr: f64,
) -> Result<StepRecord> {
    if d.config != g_net.config {
        return Err(Error::InvalidArgument("D and G must share one architecture".into()));
    }

    // Discriminator update: G's parameters are constants on this tape.
    let mut tape = Graph::new();
    let dv = d.register(&mut tape, true)?;
    let gv = g_net.register(&mut tape, false)?;
    tape.set_tag(tags::INPUT);
    let x = tape.constant(batch.x.clone())?;
    let y = tape.constant(batch.y.clone())?;
    let labels = batch.labels.clone().map(|l| tape.constant(l)).transpose()?;
    let gx_in = conditioned(&mut tape, x, labels)?;
    let gx = g_net.forward(&mut tape, &gv, gx_in)?.output;
    let y_in = conditioned(&mut tape, y, labels)?;
    let dy = d.forward(&mut tape, &dv, y_in)?.output;
    let fake_in = conditioned(&mut tape, gx, labels)?;
    let dgx = d.forward(&mut tape, &dv, fake_in)?.output;
    let real = tape.l1_mean(dy, y)?;
    let fake = tape.l1_mean(dgx, gx)?;
    let scaled = tape.scale(fake, config.lambda_adv)?;
    let l_d = tape.sub(real, scaled)?;
    let grads = tape.backward(l_d)?;
    let d_step_generator_grads = gv.iter().filter(|&&v| grads.get(v).is_some()).count();
    let d_mask = d.frozen_mask();
    adam_d.update(&mut d.values_mut(), &gather_grads(&grads, &dv), &d_mask, lr)?;
    let d_step_outputs = [
        tape.value(y).clone(),
        tape.value(dy).clone(),
        tape.value(gx).clone(),
        tape.value(dgx).clone(),
    ];
    let (l_d_value, d_real, d_fake) = (
        tape.value(l_d).item() as f64,
        tape.value(real).item() as f64,
        tape.value(fake).item() as f64,
    );
    drop(grads);
    drop(tape);

    // Generator update: the refreshed D is a constant function here.
    let mut tape = Graph::new();
    let dv = d.register(&mut tape, false)?;
    let gv = g_net.register(&mut tape, true)?;
    tape.set_tag(tags::INPUT);
    let x = tape.constant(batch.x.clone())?;
    let y = tape.constant(batch.y.clone())?;
    let labels = batch.labels.clone().map(|l| tape.constant(l)).transpose()?;
    let gx_in = conditioned(&mut tape, x, labels)?;
    let gx = g_net.forward(&mut tape, &gv, gx_in)?.output;
    let fake_in = conditioned(&mut tape, gx, labels)?;
    let dgx = d.forward(&mut tape, &dv, fake_in)?.output;
    let adv = tape.l1_mean(dgx, gx)?;
    let rec = tape.l1_mean(gx, y)?;
    let rec_scaled = tape.scale(rec, config.lambda_rec)?;
    let l_g = tape.add(adv, rec_scaled)?;
    let grads = tape.backward(l_g)?;
    let g_step_discriminator_grads = dv.iter().filter(|&&v| grads.get(v).is_some()).count();
    let g_mask = g_net.frozen_mask();
    adam_g.update(&mut g_net.values_mut(), &gather_grads(&grads, &gv), &g_mask, lr)?;

    Ok(StepRecord {
        l_d: l_d_value,
        l_g: tape.value(l_g).item() as f64,
        l_rec: tape.value(rec).item() as f64,
        d_real,
        d_fake,
        d_step_outputs,
        g_step_outputs: [tape.value(gx).clone(), tape.value(dgx).clone()],
        d_step_generator_grads,
        g_step_discriminator_grads,
    })
}

/// Shuffled batch order for a 1-based epoch; depends only on seed and epoch.
pub fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mixed = seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mixed));
    order.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

/// Discriminator pre-training state; `epoch` counts completed epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainState {
    pub d: NetParams<f32>,
    pub adam: AdamState<f32>,
    pub epoch: usize,
    pub history: Vec<f64>,
}

impl PretrainState {
    pub fn new(net: &NetConfig, config: &TrainConfig) -> Result<Self> {
        let d = NetParams::init(net, config.seed)?;
        let adam = AdamState::new(d.shapes(), config.adam);
        Ok(PretrainState {
            d,
            adam,
            epoch: 0,
            history: Vec::new(),
        })
    }
}

/// Runs pre-training epochs until `config.pretrain_epochs`, calling
/// `on_epoch` after each one.
pub fn run_pretraining(
    state: &mut PretrainState,
    data: &PairedDataset,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&PretrainState) -> Result<()>,
) -> Result<()> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("pre-training needs at least one sample".into()));
    }
    while state.epoch < config.pretrain_epochs {
        let epoch = state.epoch + 1;
        let lr = lr_at(epoch, config);
        let mut total = 0.0;
        let mut count = 0usize;
        for idx in epoch_batches(data.len(), config.pretrain_batch, config.seed, epoch) {
            let batch = data.batch(&idx)?;
            let loss = autoencoder_step(&mut state.d, &mut state.adam, &batch, lr)
                .map_err(|e| nan_guard(e, &format!("pre-training epoch {epoch}")))?;
            total += loss * idx.len() as f64;
            count += idx.len();
        }
        state.history.push(total / count as f64);
        state.epoch = epoch;
        on_epoch(state)?;
    }
    Ok(())
}

/// Trains `D` as an autoencoder on the real targets.
pub fn pretrain_discriminator(data: &PairedDataset, net: &NetConfig, config: &TrainConfig) -> Result<(NetParams<f32>, Vec<f64>)> {
    let mut state = PretrainState::new(net, config)?;
    run_pretraining(&mut state, data, config, &mut |_| Ok(()))?;
    Ok((state.d, state.history))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLosses {
    pub epoch: usize,
    pub l_d: f64,
    pub l_g: f64,
    pub l_rec: f64,
}

/// Adversarial phase state; `epoch` counts completed adversarial epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialState {
    pub d: NetParams<f32>,
    pub g: NetParams<f32>,
    pub adam_d: AdamState<f32>,
    pub adam_g: AdamState<f32>,
    pub epoch: usize,
    pub history: Vec<EpochLosses>,
}

impl AdversarialState {
    /// Clones `G` from the pre-trained `D`, freezes both decoders and
    /// starts fresh optimizer moments for the new phase.
    pub fn from_pretrained(d: NetParams<f32>, config: &TrainConfig) -> Self {
        let mut d = d;
        let mut g = d.clone_generator();
        d.freeze_decoder();
        g.freeze_decoder();
        AdversarialState {
            adam_d: AdamState::new(d.shapes(), config.adam),
            adam_g: AdamState::new(g.shapes(), config.adam),
            d,
            g,
            epoch: 0,
            history: Vec::new(),
        }
    }
}

pub fn run_adversarial(
    state: &mut AdversarialState,
    data: &PairedDataset,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&AdversarialState) -> Result<()>,
) -> Result<()> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("adversarial training needs at least one sample".into()));
    }
    // Offset the shuffle stream so the two phases do not replay one order.
    let seed = config.seed.wrapping_add(0x5eed);
    while state.epoch < config.epochs {
        let epoch = state.epoch + 1;
        let lr = lr_at(epoch, config);
        let mut sums = [0.0f64; 3];
        let mut count = 0usize;
        for idx in epoch_batches(data.len(), config.batch, seed, epoch) {
            let batch = data.batch(&idx)?;
            let rec = adversarial_step(
                &batch,
                &mut state.d,
                &mut state.g,
                &mut state.adam_d,
                &mut state.adam_g,
                config,
                lr,
            )
            .map_err(|e| nan_guard(e, &format!("adversarial epoch {epoch}")))?;
            let w = idx.len() as f64;
            sums[0] += rec.l_d * w;
            sums[1] += rec.l_g * w;
            sums[2] += rec.l_rec * w;
            count += idx.len();
        }
        let n = count as f64;
        let losses = EpochLosses {
            epoch,
            l_d: sums[0] / n,
            l_g: sums[1] / n,
            l_rec: sums[2] / n,
        };
        if ![losses.l_d, losses.l_g, losses.l_rec].iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite loss in adversarial epoch {epoch}")));
        }
        state.history.push(losses);
        state.epoch = epoch;
        on_epoch(state)?;
    }
    Ok(())
}

/// Result of the full procedure.
#[derive(Clone, Debug)]
pub struct TrainedPair {
    pub d: NetParams<f32>,
    pub g: NetParams<f32>,
    pub pretrained: NetParams<f32>,
    pub pretrain_history: Vec<f64>,
    pub history: Vec<EpochLosses>,
}

/// Pre-train `D`, clone `G ← D`, freeze both decoders, run the adversarial epochs.
pub fn train_3dfacegan(data: &PairedDataset, net: &NetConfig, config: &TrainConfig) -> Result<TrainedPair> {
    let (pretrained, pretrain_history) = pretrain_discriminator(data, net, config)?;
    let mut state = AdversarialState::from_pretrained(pretrained.clone(), config);
    run_adversarial(&mut state, data, config, &mut |_| Ok(()))?;
    Ok(TrainedPair {
        d: state.d,
        g: state.g,
        pretrained,
        pretrain_history,
        history: state.history,
    })
}

/// Network inputs in batches of `batch`: `x` (or `y` with `use_targets`)
/// followed by the label planes when the dataset is labelled.
pub fn apply_inputs(data: &PairedDataset, use_targets: bool, batch: usize) -> Result<Vec<Tensor<f32>>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    idx.chunks(batch.max(1))
        .map(|chunk| {
            let b = data.batch(chunk)?;
            let maps = if use_targets { b.y } else { b.x };
            match &b.labels {
                Some(l) => concat_channels(&maps, l),
                None => Ok(maps),
            }
        })
        .collect()
}

/// Runs a network over every sample, returning `[3, H, W]` outputs.
pub fn apply_network(net: &NetParams<f32>, data: &PairedDataset, use_targets: bool, batch: usize) -> Result<Vec<Tensor<f32>>> {
    let mut out = Vec::with_capacity(data.len());
    for input in apply_inputs(data, use_targets, batch)? {
        out.extend(net.reconstruct(&input)?.unstack());
    }
    Ok(out)
}

fn concat_channels(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone())?, g.constant(b.clone())?);
    let c = g.concat_channels(va, vb)?;
    Ok(g.value(c).clone())
}

/// Mean over samples of `mean |net(input) − y|`. `use_targets` feeds `y`
/// (auto-encoding) instead of `x`.
pub fn reconstruction_l1(net: &NetParams<f32>, data: &PairedDataset, use_targets: bool) -> Result<f64> {
    let outs = apply_network(net, data, use_targets, 16)?;
    let total: f64 = outs
        .iter()
        .zip(&data.samples)
        .map(|(o, s)| {
            o.data()
                .iter()
                .zip(s.y.data())
                .map(|(a, b)| (a - b).abs() as f64)
                .sum::<f64>()
                / o.len() as f64
        })
        .sum();
    Ok(total / data.len().max(1) as f64)
}

/// Decoder-group and whole-network checksums of both nets.
pub fn decoder_checksums(state: &AdversarialState) -> (u64, u64) {
    (state.d.checksum(ParamGroup::Decoder), state.g.checksum(ParamGroup::Decoder))
}
