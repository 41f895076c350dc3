//! Cylindrical UV layouts and conversion between meshes and UV position maps.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use super::mesh::{Mesh, Point};
use crate::error::{Error, Result};

/// Pixel coverage of a layout at one resolution: for every pixel, the
/// covering triangle (if any) and the barycentric weights of its center.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterCache {
    pub height: usize,
    pub width: usize,
    pub triangle: Vec<Option<u32>>,
    pub barycentric: Vec<[f64; 3]>,
}

/// Per-vertex (u, v) coordinates in `[0, 1]²` plus the template topology.
#[derive(Clone, Debug, PartialEq)]
pub struct UvLayout {
    pub uv: Vec<[f64; 2]>,
    pub faces: Vec<[usize; 3]>,
    pub landmarks: BTreeMap<String, usize>,
    raster: Option<RasterCache>,
}

impl UvLayout {
    pub fn new(
        uv: Vec<[f64; 2]>,
        faces: Vec<[usize; 3]>,
        landmarks: BTreeMap<String, usize>,
    ) -> Result<Self> {
        if let Some(i) = uv
            .iter()
            .position(|p| !p.iter().all(|c| (0.0..=1.0).contains(c)))
        {
            return Err(Error::InvalidArgument(format!(
                "uv of vertex {i} = {:?} is outside the unit square",
                uv[i]
            )));
        }
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= uv.len())) {
            return Err(Error::InvalidArgument(format!(
                "face {f:?} references a vertex beyond {}",
                uv.len()
            )));
        }
        let mut seen: HashMap<[u64; 2], usize> = HashMap::with_capacity(uv.len());
        let mut clashes = Vec::new();
        for (i, p) in uv.iter().enumerate() {
            if let Some(&j) = seen.get(&[p[0].to_bits(), p[1].to_bits()]) {
                clashes.push((j, i));
            } else {
                seen.insert([p[0].to_bits(), p[1].to_bits()], i);
            }
        }
        if !clashes.is_empty() {
            let list: Vec<String> = clashes.iter().map(|(a, b)| format!("{a}/{b}")).collect();
            return Err(Error::InvalidArgument(format!(
                "vertices share identical uv coordinates: {}",
                list.join(", ")
            )));
        }
        Ok(UvLayout {
            uv,
            faces,
            landmarks,
            raster: None,
        })
    }

    pub fn len(&self) -> usize {
        self.uv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uv.is_empty()
    }

    /// Stores the rasterization at `resolution` so later conversions reuse it.
    pub fn with_raster(mut self, resolution: usize) -> Result<Self> {
        self.raster = Some(self.compute_raster(resolution, resolution)?);
        Ok(self)
    }

    pub fn set_raster(&mut self, raster: RasterCache) -> Result<()> {
        if raster.triangle.len() != raster.height * raster.width
            || raster.barycentric.len() != raster.triangle.len()
        {
            return Err(Error::Shape("raster cache size does not match its resolution".into()));
        }
        if raster
            .triangle
            .iter()
            .flatten()
            .any(|&t| t as usize >= self.faces.len())
        {
            return Err(Error::InvalidArgument("raster cache references unknown faces".into()));
        }
        self.raster = Some(raster);
        Ok(())
    }

    pub fn raster(&self) -> Option<&RasterCache> {
        self.raster.as_ref()
    }

    /// The cached raster if it matches, otherwise a freshly computed one.
    pub fn raster_at(&self, height: usize, width: usize) -> Result<std::borrow::Cow<'_, RasterCache>> {
        match &self.raster {
            Some(r) if r.height == height && r.width == width => Ok(std::borrow::Cow::Borrowed(r)),
            _ => Ok(std::borrow::Cow::Owned(self.compute_raster(height, width)?)),
        }
    }

    /// Scan-converts every UV triangle. A pixel belongs to the first triangle
    /// (in face order) whose closed area contains its center.
    pub fn compute_raster(&self, height: usize, width: usize) -> Result<RasterCache> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("raster resolution must be positive".into()));
        }
        let mut triangle = vec![None; height * width];
        let mut barycentric = vec![[0.0; 3]; height * width];
        for (fi, f) in self.faces.iter().enumerate() {
            let [a, b, c] = f.map(|i| self.uv[i]);
            let us = [a[0], b[0], c[0]];
            let vs = [a[1], b[1], c[1]];
            let (c0, c1) = pixel_span(us, width);
            let (r0, r1) = pixel_span(vs, height);
            for r in r0..r1 {
                let pv = (r as f64 + 0.5) / height as f64;
                for col in c0..c1 {
                    let idx = r * width + col;
                    if triangle[idx].is_some() {
                        continue;
                    }
                    let pu = (col as f64 + 0.5) / width as f64;
                    if let Some(w) = barycentric_coords([pu, pv], a, b, c) {
                        triangle[idx] = Some(fi as u32);
                        barycentric[idx] = w;
                    }
                }
            }
        }
        Ok(RasterCache {
            height,
            width,
            triangle,
            barycentric,
        })
    }
}

/// Half-open range of pixel indices whose centers may fall inside `[min, max]`.
fn pixel_span(coords: [f64; 3], n: usize) -> (usize, usize) {
    let lo = coords.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = coords.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = ((lo * n as f64 - 0.5).floor().max(0.0)) as usize;
    let last = ((hi * n as f64 - 0.5).ceil() + 1.0).clamp(0.0, n as f64) as usize;
    (first.min(n), last)
}

/// Barycentric weights of `p` in triangle `abc`, or `None` when `p` lies
/// outside it or the triangle has no area.
pub fn barycentric_coords(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<[f64; 3]> {
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    if det == 0.0 {
        return None;
    }
    let wb = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
    let wc = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
    let wa = 1.0 - wb - wc;
    const SLACK: f64 = -1e-12;
    (wa >= SLACK && wb >= SLACK && wc >= SLACK).then_some([wa, wb, wc])
}

/// Raw cylindrical coordinates before the span rescale: the angle about the
/// y axis measured from -z, and height normalized to `[0, 1]`.
pub fn cylindrical_coordinates(vertices: &[Point]) -> Result<Vec<[f64; 2]>> {
    let (lo, hi) = vertices.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.y), hi.max(p.y))
    });
    if vertices.is_empty() || hi <= lo {
        return Err(Error::Degenerate("template has no vertical extent".into()));
    }
    Ok(vertices
        .iter()
        .map(|p| [(p.x.atan2(p.z) + PI) / (2.0 * PI), (p.y - lo) / (hi - lo)])
        .collect())
}

/// Cylindrical projection of a face-forward (+z), y-up template, with u
/// stretched to fill `[0, 1]`.
pub fn cylindrical_unwrap(template: &Mesh) -> Result<UvLayout> {
    let mut uv = cylindrical_coordinates(&template.vertices)?;
    let (lo, hi) = uv
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[0]), hi.max(p[0])));
    if hi <= lo {
        return Err(Error::Degenerate("template has no angular extent".into()));
    }
    for p in &mut uv {
        p[0] = ((p[0] - lo) / (hi - lo)).clamp(0.0, 1.0);
    }
    UvLayout::new(uv, template.faces.clone(), template.landmarks.clone())
}

/// Position map: `channels` planes of `height × width` values, row-major
/// within a plane; row `r` is centered at `v = (r + 0.5) / height`.
#[derive(Clone, Debug, PartialEq)]
pub struct UvMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
}

impl UvMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if data.len() != height * width * channels || valid.len() != height * width {
            return Err(Error::Shape(format!(
                "uv map {channels}x{height}x{width} given {} values and {} mask entries",
                data.len(),
                valid.len()
            )));
        }
        Ok(UvMap {
            height,
            width,
            channels,
            data,
            valid,
        })
    }

    pub fn constant(height: usize, width: usize, value: &[f64]) -> Self {
        let plane = height * width;
        let data = value.iter().flat_map(|&v| std::iter::repeat_n(v, plane)).collect();
        UvMap {
            height,
            width,
            channels: value.len(),
            data,
            valid: vec![true; plane],
        }
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub fn pixel(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, row, col)).collect()
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Values as single precision, channel-major.
    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    pub fn from_f32(height: usize, width: usize, channels: usize, data: &[f32]) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            data.iter().map(|&v| v as f64).collect(),
            vec![true; height * width],
        )
    }
}

/// Writes each covered pixel's barycentric blend of vertex positions and
/// marks it valid. Uncovered pixels stay invalid (zero) until filled.
pub fn rasterize_uv_unfilled(mesh: &Mesh, layout: &UvLayout, resolution: usize) -> Result<UvMap> {
    if mesh.len() != layout.len() || mesh.faces != layout.faces {
        return Err(Error::Shape(format!(
            "mesh ({} vertices) does not match the uv layout ({} vertices)",
            mesh.len(),
            layout.len()
        )));
    }
    let raster = layout.raster_at(resolution, resolution)?;
    let plane = resolution * resolution;
    let mut data = vec![0.0; 3 * plane];
    let mut valid = vec![false; plane];
    for (idx, tri) in raster.triangle.iter().enumerate() {
        let Some(t) = tri else { continue };
        let f = layout.faces[*t as usize];
        let w = raster.barycentric[idx];
        let p = w[0] * mesh.vertices[f[0]] + w[1] * mesh.vertices[f[1]] + w[2] * mesh.vertices[f[2]];
        for k in 0..3 {
            data[k * plane + idx] = p[k];
        }
        valid[idx] = true;
    }
    UvMap::new(resolution, resolution, 3, data, valid)
}

/// Rasterizes `mesh` into a `resolution²` position map and fills the gaps.
pub fn rasterize_uv(mesh: &Mesh, layout: &UvLayout, resolution: usize) -> Result<UvMap> {
    nearest_fill(&rasterize_uv_unfilled(mesh, layout, resolution)?)
}

/// Gives every invalid pixel the value of the nearest valid pixel center,
/// preferring the lowest row-major index among equally near candidates.
pub fn nearest_fill(map: &UvMap) -> Result<UvMap> {
    let (h, w) = (map.height, map.width);
    let sources: Vec<usize> = (0..h * w).filter(|&i| map.valid[i]).collect();
    if sources.is_empty() {
        return Err(Error::InvalidArgument("nearest fill on a map with no valid pixels".into()));
    }
    let mut out = map.clone();
    if sources.len() == h * w {
        return Ok(out);
    }
    let plane = h * w;
    for idx in 0..plane {
        if map.valid[idx] {
            continue;
        }
        let src = nearest_valid(map, &sources, idx / w, idx % w);
        for c in 0..map.channels {
            out.data[c * plane + idx] = map.data[c * plane + src];
        }
    }
    out.valid.iter_mut().for_each(|v| *v = true);
    Ok(out)
}

/// Exact nearest valid pixel by growing square rings; falls back to a scan
/// of the valid list once a ring would cost more than that scan.
fn nearest_valid(map: &UvMap, sources: &[usize], row: usize, col: usize) -> usize {
    let (h, w) = (map.height as i64, map.width as i64);
    let (r0, c0) = (row as i64, col as i64);
    let better = |cand: (i64, usize), best: Option<(i64, usize)>| match best {
        None => true,
        Some(b) => cand < b,
    };
    let mut best: Option<(i64, usize)> = None;
    let mut scanned = 0usize;
    let max_radius = h.max(w);
    for radius in 1..=max_radius {
        if let Some((d2, _)) = best {
            if radius * radius > d2 {
                break;
            }
        }
        let ring = 8 * radius as usize;
        scanned += ring;
        if scanned > 4 * sources.len() {
            return linear_nearest(sources, map.width, row, col);
        }
        for dr in -radius..=radius {
            let r = r0 + dr;
            if r < 0 || r >= h {
                continue;
            }
            let step = if dr.abs() == radius { 1 } else { 2 * radius };
            let mut dc = -radius;
            while dc <= radius {
                let c = c0 + dc;
                if c >= 0 && c < w {
                    let idx = (r * w + c) as usize;
                    if map.valid[idx] {
                        let cand = (dr * dr + dc * dc, idx);
                        if better(cand, best) {
                            best = Some(cand);
                        }
                    }
                }
                dc += step;
            }
        }
    }
    best.map(|b| b.1)
        .unwrap_or_else(|| linear_nearest(sources, map.width, row, col))
}

fn linear_nearest(sources: &[usize], width: usize, row: usize, col: usize) -> usize {
    let (r0, c0) = (row as i64, col as i64);
    // Sources are sorted, so keeping strict improvements keeps the lowest index.
    let mut best = (i64::MAX, usize::MAX);
    for &s in sources {
        let (dr, dc) = ((s / width) as i64 - r0, (s % width) as i64 - c0);
        let d2 = dr * dr + dc * dc;
        if d2 < best.0 {
            best = (d2, s);
        }
    }
    best.1
}

/// Bilinear sample of every channel at `(u, v)`, clamped at the borders.
pub fn sample_bilinear(map: &UvMap, u: f64, v: f64) -> Vec<f64> {
    let x = (u * map.width as f64 - 0.5).clamp(0.0, (map.width - 1) as f64);
    let y = (v * map.height as f64 - 0.5).clamp(0.0, (map.height - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(map.width - 1), (y0 + 1).min(map.height - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    (0..map.channels)
        .map(|c| {
            let top = map.get(c, y0, x0) * (1.0 - fx) + map.get(c, y0, x1) * fx;
            let bottom = map.get(c, y1, x0) * (1.0 - fx) + map.get(c, y1, x1) * fx;
            top * (1.0 - fy) + bottom * fy
        })
        .collect()
}

/// Reads a mesh back out of a filled position map by sampling each vertex's uv.
pub fn sample_mesh_from_uv(map: &UvMap, layout: &UvLayout) -> Result<Mesh> {
    if map.channels != 3 {
        return Err(Error::Shape(format!(
            "position map needs 3 channels, has {}",
            map.channels
        )));
    }
    let vertices = layout
        .uv
        .iter()
        .map(|uv| {
            let s = sample_bilinear(map, uv[0], uv[1]);
            Point::new(s[0], s[1], s[2])
        })
        .collect();
    Mesh::new(vertices, layout.faces.clone(), layout.landmarks.clone())
}
