//! On-disk formats: checkpoints, position maps, layouts, latent Gaussians,
//! key=value configs, scale records and CSV/JSON reports.
//!
//! Binary files start with a four-byte magic and a little-endian `u32`
//! version; every number after that is little-endian too.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Tensor};
use crate::error::{Error, Result};
use crate::eval::{CedReport, SpecificityReport};
use crate::generation::LatentGaussian;
use crate::geometry::{RasterCache, UvLayout, UvMap};
use crate::model::{NetConfig, NetParams};
use crate::training::{DecayMode, EpochLosses, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"3DFG";
pub const UVMAP_MAGIC: &[u8; 4] = b"UVF1";
pub const LAYOUT_MAGIC: &[u8; 4] = b"UVL1";
pub const GAUSSIAN_MAGIC: &[u8; 4] = b"LGS1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn header(magic: &[u8; 4]) -> Self {
        let mut w = Writer::default();
        w.buf.extend_from_slice(magic);
        w.u32(FORMAT_VERSION);
        w
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u32(v as u32);
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor<f32>) {
        self.len(t.rank());
        for &d in t.shape() {
            self.len(d);
        }
        for &v in t.data() {
            self.f32(v);
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn open(data: &'a [u8], path: &'a Path, magic: &[u8; 4]) -> Result<Self> {
        let mut r = Reader { data, pos: 0, path };
        let found = r.take(4)?;
        if found != magic {
            return Err(r.err(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(found)
            )));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(r.err(format!("unsupported version {version}, expected {FORMAT_VERSION}")));
        }
        Ok(r)
    }
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::format(self.path, reason)
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.array()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    /// A count, rejected when it could not possibly fit in the remaining bytes.
    fn len(&mut self, min_item_bytes: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item_bytes) > self.data.len() - self.pos {
            return Err(self.err(format!("count {n} exceeds the remaining payload")));
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.err("string is not UTF-8"))
    }
    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let rank = self.len(4)?;
        let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| self.err("tensor too large"))?;
        if count.saturating_mul(4) > self.data.len() - self.pos {
            return Err(self.err("tensor payload is truncated"));
        }
        let data = (0..count).map(|_| self.f32()).collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data)
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(self.err(format!("{} trailing bytes", self.data.len() - self.pos)));
        }
        Ok(())
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temporary file so readers never see partial data.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Training phase a checkpoint belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Adversarial,
}

/// Network parameters plus what is needed to resume training bitwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: NetParams<f32>,
    pub adam: Option<AdamState<f32>>,
    pub seed: u64,
    /// Completed epochs of `phase`.
    pub epoch: u64,
    pub phase: Phase,
    /// Per-epoch loss rows recorded so far.
    pub history: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(net: NetParams<f32>) -> Self {
        Checkpoint {
            net,
            adam: None,
            seed: 0,
            epoch: 0,
            phase: Phase::Pretrain,
            history: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::header(CHECKPOINT_MAGIC);
        let c = &self.net.config;
        for v in [c.base_filters, c.latent_dim, c.resolution, c.label_channels] {
            w.len(v);
        }
        w.len(c.skip_stages.len());
        for &s in &c.skip_stages {
            w.len(s);
        }
        for f in self.net.frozen_groups() {
            w.u8(f as u8);
        }
        w.len(self.net.params.len());
        for p in &self.net.params {
            w.str(&p.name);
            w.tensor(&p.value);
        }
        match &self.adam {
            None => w.u8(0),
            Some(a) => {
                w.u8(1);
                w.f64(a.config.beta1);
                w.f64(a.config.beta2);
                w.f64(a.config.eps);
                w.u64(a.step);
                for t in a.m.iter().chain(&a.v) {
                    w.tensor(t);
                }
            }
        }
        w.u64(self.seed);
        w.u64(self.epoch);
        w.u8(match self.phase {
            Phase::Pretrain => 0,
            Phase::Adversarial => 1,
        });
        w.len(self.history.len());
        for row in &self.history {
            w.len(row.len());
            for &v in row {
                w.f64(v);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::open(bytes, path, CHECKPOINT_MAGIC)?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let n_skip = r.len(4)?;
        let skip_stages = (0..n_skip).map(|_| r.u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
        let config = NetConfig {
            base_filters: dims[0],
            latent_dim: dims[1],
            resolution: dims[2],
            label_channels: dims[3],
            skip_stages,
        };
        let mut frozen = [false; 4];
        for f in &mut frozen {
            *f = match r.u8()? {
                0 => false,
                1 => true,
                b => return Err(r.err(format!("bad freeze flag {b}"))),
            };
        }
        let count = r.len(8)?;
        let mut names = Vec::with_capacity(count);
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            names.push(r.str()?);
            tensors.push(r.tensor()?);
        }
        let net = NetParams::from_tensors(&config, tensors, frozen).map_err(|e| r.err(e.to_string()))?;
        if let Some((p, n)) = net.params.iter().zip(&names).find(|(p, n)| &p.name != *n) {
            return Err(r.err(format!("parameter {n} stored where {} was expected", p.name)));
        }
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let config = AdamConfig {
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let step = r.u64()?;
                let mut read = |_| -> Result<Vec<Tensor<f32>>> {
                    net.params
                        .iter()
                        .map(|p| {
                            let t = r.tensor()?;
                            if t.shape() != p.value.shape() {
                                return Err(r.err(format!("optimizer moment for {} has the wrong shape", p.name)));
                            }
                            Ok(t)
                        })
                        .collect()
                };
                let m = read(0)?;
                let v = read(1)?;
                Some(AdamState { config, step, m, v })
            }
            b => return Err(r.err(format!("bad optimizer flag {b}"))),
        };
        let seed = r.u64()?;
        let epoch = r.u64()?;
        let phase = match r.u8()? {
            0 => Phase::Pretrain,
            1 => Phase::Adversarial,
            b => return Err(r.err(format!("bad phase {b}"))),
        };
        let rows = r.len(4)?;
        let mut history = Vec::with_capacity(rows);
        for _ in 0..rows {
            let n = r.len(8)?;
            history.push((0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        }
        r.finish()?;
        Ok(Checkpoint {
            net,
            adam,
            seed,
            epoch,
            phase,
            history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?, path)
    }
}

/// `UVF1` payload: dimensions, a validity bitset (LSB first, row-major)
/// and the values as 32-bit floats, channel-major.
pub fn uvmap_to_bytes(map: &UvMap) -> Vec<u8> {
    let mut w = Writer::header(UVMAP_MAGIC);
    w.len(map.height);
    w.len(map.width);
    w.len(map.channels);
    let mut bits = vec![0u8; map.valid.len().div_ceil(8)];
    for (i, _) in map.valid.iter().enumerate().filter(|(_, v)| **v) {
        bits[i / 8] |= 1 << (i % 8);
    }
    w.buf.extend_from_slice(&bits);
    for &v in &map.data {
        w.f32(v as f32);
    }
    w.buf
}

pub fn uvmap_from_bytes(bytes: &[u8], path: &Path) -> Result<UvMap> {
    let mut r = Reader::open(bytes, path, UVMAP_MAGIC)?;
    let (h, w, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let pixels = h.checked_mul(w).ok_or_else(|| r.err("map too large"))?;
    let bits = r.take(pixels.div_ceil(8))?;
    let valid = (0..pixels).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
    let expected = pixels.checked_mul(c).and_then(|n| n.checked_mul(4)).ok_or_else(|| r.err("map too large"))?;
    if r.data.len() - r.pos != expected {
        return Err(r.err(format!(
            "payload has {} bytes, expected H·W·C·4 = {expected}",
            r.data.len() - r.pos
        )));
    }
    let data = (0..pixels * c).map(|_| r.f32().map(|v| v as f64)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    UvMap::new(h, w, c, data, valid)
}

pub fn save_uvmap(path: &Path, map: &UvMap) -> Result<()> {
    write_atomic(path, &uvmap_to_bytes(map))
}

pub fn load_uvmap(path: &Path) -> Result<UvMap> {
    uvmap_from_bytes(&read_bytes(path)?, path)
}

pub fn layout_to_bytes(layout: &UvLayout) -> Vec<u8> {
    let mut w = Writer::header(LAYOUT_MAGIC);
    w.len(layout.uv.len());
    for p in &layout.uv {
        w.f64(p[0]);
        w.f64(p[1]);
    }
    w.len(layout.faces.len());
    for f in &layout.faces {
        for &i in f {
            w.len(i);
        }
    }
    w.len(layout.landmarks.len());
    for (name, &i) in &layout.landmarks {
        w.str(name);
        w.len(i);
    }
    match layout.raster() {
        None => w.u8(0),
        Some(r) => {
            w.u8(1);
            w.len(r.height);
            w.len(r.width);
            for (t, b) in r.triangle.iter().zip(&r.barycentric) {
                w.i64(t.map_or(-1, |t| t as i64));
                for &x in b {
                    w.f64(x);
                }
            }
        }
    }
    w.buf
}

pub fn layout_from_bytes(bytes: &[u8], path: &Path) -> Result<UvLayout> {
    let mut r = Reader::open(bytes, path, LAYOUT_MAGIC)?;
    let n = r.len(16)?;
    let uv = (0..n).map(|_| Ok([r.f64()?, r.f64()?])).collect::<Result<Vec<_>>>()?;
    let nf = r.len(12)?;
    let faces = (0..nf)
        .map(|_| Ok([r.u32()? as usize, r.u32()? as usize, r.u32()? as usize]))
        .collect::<Result<Vec<_>>>()?;
    let nl = r.len(8)?;
    let mut landmarks = BTreeMap::new();
    for _ in 0..nl {
        let name = r.str()?;
        landmarks.insert(name, r.u32()? as usize);
    }
    let mut layout = UvLayout::new(uv, faces, landmarks).map_err(|e| r.err(e.to_string()))?;
    match r.u8()? {
        0 => {}
        1 => {
            let (h, w) = (r.u32()? as usize, r.u32()? as usize);
            let pixels = h.checked_mul(w).ok_or_else(|| r.err("raster too large"))?;
            if pixels.saturating_mul(32) != r.data.len() - r.pos {
                return Err(r.err("raster payload size does not match its resolution"));
            }
            let mut triangle = Vec::with_capacity(pixels);
            let mut barycentric = Vec::with_capacity(pixels);
            for _ in 0..pixels {
                let t = r.i64()?;
                triangle.push(if t < 0 { None } else { Some(t as u32) });
                barycentric.push([r.f64()?, r.f64()?, r.f64()?]);
            }
            layout
                .set_raster(RasterCache {
                    height: h,
                    width: w,
                    triangle,
                    barycentric,
                })
                .map_err(|e| r.err(e.to_string()))?;
        }
        b => return Err(r.err(format!("bad raster flag {b}"))),
    }
    r.finish()?;
    Ok(layout)
}

pub fn save_layout(path: &Path, layout: &UvLayout) -> Result<()> {
    write_atomic(path, &layout_to_bytes(layout))
}

pub fn load_layout(path: &Path) -> Result<UvLayout> {
    layout_from_bytes(&read_bytes(path)?, path)
}

/// `LGS1` payload: `N_b`, `N`, label (−1 for none), `μ`, then `A` column-major.
pub fn gaussian_to_bytes(g: &LatentGaussian) -> Vec<u8> {
    let mut w = Writer::header(GAUSSIAN_MAGIC);
    w.len(g.factor.nrows());
    w.len(g.factor.ncols());
    w.i64(g.label.map_or(-1, |l| l as i64));
    for &v in g.mean.iter().chain(g.factor.iter()) {
        w.f64(v);
    }
    w.buf
}

pub fn gaussian_from_bytes(bytes: &[u8], path: &Path) -> Result<LatentGaussian> {
    let mut r = Reader::open(bytes, path, GAUSSIAN_MAGIC)?;
    let (nb, n) = (r.u32()? as usize, r.u32()? as usize);
    let label = r.i64()?;
    let expected = nb.checked_mul(n + 1).and_then(|c| c.checked_mul(8)).ok_or_else(|| r.err("too large"))?;
    if r.data.len() - r.pos != expected {
        return Err(r.err("payload size does not match the header"));
    }
    let mean = DVector::from_iterator(nb, (0..nb).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
    let factor = DMatrix::from_vec(nb, n, (0..nb * n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
    r.finish()?;
    Ok(LatentGaussian {
        mean,
        factor,
        label: (label >= 0).then_some(label as usize),
    })
}

/// Several Gaussians (one per label) stored back to back in one file.
pub fn save_gaussians(path: &Path, gaussians: &[LatentGaussian]) -> Result<()> {
    let mut buf = Vec::new();
    for g in gaussians {
        let b = gaussian_to_bytes(g);
        buf.extend_from_slice(&(b.len() as u64).to_le_bytes());
        buf.extend_from_slice(&b);
    }
    write_atomic(path, &buf)
}

pub fn load_gaussians(path: &Path) -> Result<Vec<LatentGaussian>> {
    let bytes = read_bytes(path)?;
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes.len() - pos < 8 {
            return Err(Error::format(path, "truncated record length"));
        }
        let len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().expect("8 bytes")) as usize;
        pos += 8;
        if bytes.len() - pos < len {
            return Err(Error::format(path, "truncated Gaussian record"));
        }
        out.push(gaussian_from_bytes(&bytes[pos..pos + len], path)?);
        pos += len;
    }
    if out.is_empty() {
        return Err(Error::format(path, "no Gaussian records"));
    }
    Ok(out)
}

/// Network and training settings read from one key=value file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
}

fn parse_value<T: std::str::FromStr>(path: &Path, line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::format(path, format!("line {line}: cannot parse {key} = {value:?}")))
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment and unknown keys are errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let n = i + 1;
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::format(path, format!("line {n}: expected key = value")))?;
            let (net, t) = (&mut c.net, &mut c.train);
            match key {
                "base_filters" => net.base_filters = parse_value(path, n, key, value)?,
                "latent_dim" => net.latent_dim = parse_value(path, n, key, value)?,
                "resolution" => net.resolution = parse_value(path, n, key, value)?,
                "label_channels" => net.label_channels = parse_value(path, n, key, value)?,
                "skip_stages" => {
                    net.skip_stages = if value.is_empty() || value == "none" {
                        Vec::new()
                    } else {
                        value
                            .split(',')
                            .map(|s| parse_value(path, n, key, s.trim()))
                            .collect::<Result<Vec<_>>>()?
                    }
                }
                "lambda_adv" => t.lambda_adv = parse_value(path, n, key, value)?,
                "lambda_rec" => t.lambda_rec = parse_value(path, n, key, value)?,
                "lr" => t.lr = parse_value(path, n, key, value)?,
                "decay" => t.decay = parse_value(path, n, key, value)?,
                "decay_every" => t.decay_every = parse_value(path, n, key, value)?,
                "decay_mode" => {
                    t.decay_mode = match value {
                        "multiplicative" => DecayMode::Multiplicative,
                        "additive" => DecayMode::Additive,
                        _ => return Err(Error::format(path, format!("line {n}: unknown decay_mode {value:?}"))),
                    }
                }
                "pretrain_batch" => t.pretrain_batch = parse_value(path, n, key, value)?,
                "pretrain_epochs" => t.pretrain_epochs = parse_value(path, n, key, value)?,
                "batch" => t.batch = parse_value(path, n, key, value)?,
                "epochs" => t.epochs = parse_value(path, n, key, value)?,
                "seed" => t.seed = parse_value(path, n, key, value)?,
                "checkpoint_every" => t.checkpoint_every = parse_value(path, n, key, value)?,
                "adam_beta1" => t.adam.beta1 = parse_value(path, n, key, value)?,
                "adam_beta2" => t.adam.beta2 = parse_value(path, n, key, value)?,
                "adam_eps" => t.adam.eps = parse_value(path, n, key, value)?,
                _ => return Err(Error::format(path, format!("line {n}: unknown key {key:?}"))),
            }
        }
        c.net.validate().map_err(|e| Error::format(path, e.to_string()))?;
        c.train.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(c)
    }

    /// Canonical text form; floats use the shortest exact representation.
    pub fn to_text(&self) -> String {
        let (n, t) = (&self.net, &self.train);
        let skips = if n.skip_stages.is_empty() {
            "none".to_string()
        } else {
            n.skip_stages.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
        };
        let mode = match t.decay_mode {
            DecayMode::Multiplicative => "multiplicative",
            DecayMode::Additive => "additive",
        };
        let mut s = String::new();
        let _ = writeln!(s, "base_filters = {}", n.base_filters);
        let _ = writeln!(s, "latent_dim = {}", n.latent_dim);
        let _ = writeln!(s, "resolution = {}", n.resolution);
        let _ = writeln!(s, "label_channels = {}", n.label_channels);
        let _ = writeln!(s, "skip_stages = {skips}");
        let _ = writeln!(s, "lambda_adv = {:?}", t.lambda_adv);
        let _ = writeln!(s, "lambda_rec = {:?}", t.lambda_rec);
        let _ = writeln!(s, "lr = {:?}", t.lr);
        let _ = writeln!(s, "decay = {:?}", t.decay);
        let _ = writeln!(s, "decay_every = {}", t.decay_every);
        let _ = writeln!(s, "decay_mode = {mode}");
        let _ = writeln!(s, "pretrain_batch = {}", t.pretrain_batch);
        let _ = writeln!(s, "pretrain_epochs = {}", t.pretrain_epochs);
        let _ = writeln!(s, "batch = {}", t.batch);
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "checkpoint_every = {}", t.checkpoint_every);
        let _ = writeln!(s, "adam_beta1 = {:?}", t.adam.beta1);
        let _ = writeln!(s, "adam_beta2 = {:?}", t.adam.beta2);
        let _ = writeln!(s, "adam_eps = {:?}", t.adam.eps);
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

/// Preprocessing facts needed to map network outputs back to millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleRecord {
    /// Aligned coordinates were divided by this.
    pub factor: f64,
    pub resolution: usize,
    pub meshes: usize,
}

impl ScaleRecord {
    pub fn to_text(&self) -> String {
        format!(
            "factor = {:?}\nresolution = {}\nmeshes = {}\n",
            self.factor, self.resolution, self.meshes
        )
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut fields = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("line {}: expected key = value", i + 1)))?;
            fields.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        let get = |key: &str| {
            fields
                .get(key)
                .ok_or_else(|| Error::format(path, format!("missing {key}")))
        };
        let (l, f) = get("factor")?;
        let (lr, r) = get("resolution")?;
        let (lm, m) = get("meshes")?;
        Ok(ScaleRecord {
            factor: parse_value(path, *l, "factor", f)?,
            resolution: parse_value(path, *lr, "resolution", r)?,
            meshes: parse_value(path, *lm, "meshes", m)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }
}

pub fn pretrain_csv(history: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(s, "{},{:?}", i + 1, l);
    }
    s
}

pub fn adversarial_csv(history: &[EpochLosses]) -> String {
    let mut s = String::from("epoch,L_D,L_G,L_rec\n");
    for h in history {
        let _ = writeln!(s, "{},{:?},{:?},{:?}", h.epoch, h.l_d, h.l_g, h.l_rec);
    }
    s
}

/// Rows of an `epoch,L_D,L_G,L_rec` file.
pub fn parse_adversarial_csv(text: &str, path: &Path) -> Result<Vec<EpochLosses>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("epoch,L_D,L_G,L_rec") {
        return Err(Error::format(path, "missing epoch,L_D,L_G,L_rec header"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(Error::format(path, format!("line {}: expected 4 fields", i + 2)));
            }
            Ok(EpochLosses {
                epoch: parse_value(path, i + 2, "epoch", f[0])?,
                l_d: parse_value(path, i + 2, "L_D", f[1])?,
                l_g: parse_value(path, i + 2, "L_G", f[2])?,
                l_rec: parse_value(path, i + 2, "L_rec", f[3])?,
            })
        })
        .collect()
}

/// JSON summary of one metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub auc: Option<f64>,
    pub fr: Option<f64>,
    pub x_max: Option<f64>,
    pub threshold: Option<f64>,
    pub seed: u64,
    pub count: usize,
}

impl MetricSummary {
    pub fn from_errors(metric: &str, mean: f64, std: f64, count: usize, ced: Option<&CedReport>, seed: u64) -> Self {
        MetricSummary {
            metric: metric.to_string(),
            mean,
            std,
            auc: ced.map(|c| c.auc),
            fr: ced.map(|c| c.fr),
            x_max: ced.map(|c| c.x_max),
            threshold: ced.map(|c| c.threshold),
            seed,
            count,
        }
    }

    pub fn from_specificity(report: &SpecificityReport, seed: u64) -> Self {
        Self::from_errors("specificity", report.mean, report.std, report.distances.len(), None, seed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric summary serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(path, e.to_string()))
    }
}

pub fn ced_csv(report: &CedReport) -> String {
    let mut s = String::from("error,fraction\n");
    for (e, f) in &report.curve {
        let _ = writeln!(s, "{e:?},{f:?}");
    }
    s
}

/// One value per line under a single-column header.
pub fn values_csv(header: &str, values: &[f64]) -> String {
    let mut s = format!("{header}\n");
    for v in values {
        let _ = writeln!(s, "{v:?}");
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

/// One row of `labels.csv`: mesh file stem, subject id and optional label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRow {
    pub file: String,
    pub subject: usize,
    pub label: Option<usize>,
    pub name: String,
}

/// Per-mesh subject and label assignments, stored as `file,subject,label,name`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelTable {
    pub rows: Vec<LabelRow>,
}

impl LabelTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("file,subject,label,name\n");
        for r in &self.rows {
            let label = r.label.map(|l| l.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{label},{}", r.file, r.subject, r.name);
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "file,subject,label,name" => {}
            _ => return Err(Error::format(path, "expected header `file,subject,label,name`")),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let n = i + 1;
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 || f[0].is_empty() {
                return Err(Error::format(path, format!("line {n}: expected 4 fields")));
            }
            let label = if f[2].is_empty() {
                None
            } else {
                Some(parse_value(path, n, "label", f[2])?)
            };
            rows.push(LabelRow {
                file: f[0].to_string(),
                subject: parse_value(path, n, "subject", f[1])?,
                label,
                name: f[3].to_string(),
            });
        }
        let labelled = rows.iter().filter(|r| r.label.is_some()).count();
        if labelled != 0 && labelled != rows.len() {
            return Err(Error::format(path, "either every row or no row may carry a label"));
        }
        Ok(LabelTable { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv())
    }

    pub fn is_labelled(&self) -> bool {
        self.rows.first().is_some_and(|r| r.label.is_some())
    }

    /// Number of distinct labels, `max + 1`.
    pub fn label_count(&self) -> usize {
        self.rows.iter().filter_map(|r| r.label).max().map_or(0, |m| m + 1)
    }

    /// Label index for a name or a decimal index.
    pub fn resolve(&self, name: &str) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.label.is_some() && r.name == name)
            .and_then(|r| r.label)
            .or_else(|| name.parse().ok().filter(|&l| l < self.label_count()))
    }

    pub fn row(&self, file: &str) -> Option<&LabelRow> {
        self.rows.iter().find(|r| r.file == file)
    }
}
