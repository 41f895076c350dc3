use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

pub const NOSE_TIP: &str = "nose-tip";
pub const LEFT_EYE_OUTER: &str = "left-eye-outer";
pub const RIGHT_EYE_OUTER: &str = "right-eye-outer";

/// Triangle mesh with a fixed template topology and named landmark vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<[usize; 3]>,
    pub landmarks: BTreeMap<String, usize>,
}

impl Mesh {
    pub fn new(
        vertices: Vec<Point>,
        faces: Vec<[usize; 3]>,
        landmarks: BTreeMap<String, usize>,
    ) -> Result<Self> {
        let mesh = Mesh {
            vertices,
            faces,
            landmarks,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vertices.len();
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= v)) {
            return Err(Error::InvalidArgument(format!(
                "face {f:?} references a vertex beyond {v}"
            )));
        }
        if let Some((name, &i)) = self.landmarks.iter().find(|(_, &i)| i >= v) {
            return Err(Error::InvalidArgument(format!(
                "landmark {name} -> {i} is out of range for {v} vertices"
            )));
        }
        if let Some(i) = self.vertices.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("mesh vertex {i}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Same topology and landmarks, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Point>) -> Result<Mesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Shape(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(Mesh {
            vertices,
            faces: self.faces.clone(),
            landmarks: self.landmarks.clone(),
        })
    }

    pub fn same_topology(&self, other: &Mesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.faces == other.faces
    }

    pub fn landmark(&self, name: &str) -> Result<usize> {
        self.landmarks
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("mesh has no `{name}` landmark")))
    }

    pub fn landmark_point(&self, name: &str) -> Result<Point> {
        Ok(self.vertices[self.landmark(name)?])
    }

    pub fn centroid(&self) -> Point {
        let n = self.vertices.len().max(1) as f64;
        self.vertices.iter().sum::<Point>() / n
    }

    pub fn bbox(&self) -> (Point, Point) {
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for p in &self.vertices {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi - lo).norm()
    }

    /// Unit vertex normals: area-weighted sum of incident face normals.
    /// Vertices without incident faces get a zero normal.
    pub fn vertex_normals(&self) -> Vec<Point> {
        let mut normals = vec![Point::zeros(); self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = f.map(|i| self.vertices[i]);
            // Cross product length is twice the face area.
            let n = (b - a).cross(&(c - a));
            for &i in f {
                normals[i] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Mean Euclidean distance between corresponding vertices.
    pub fn mean_vertex_distance(&self, other: &Mesh) -> f64 {
        let n = self.vertices.len().max(1) as f64;
        self.vertices
            .iter()
            .zip(&other.vertices)
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>()
            / n
    }

    pub fn read_obj(path: &Path) -> Result<Mesh> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_obj(&text).map_err(|reason| Error::format(path, reason))
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }

    /// OBJ text with `v` and `f` lines (1-based indices). Coordinates use
    /// the shortest representation that parses back to the same bits.
    pub fn to_obj(&self) -> String {
        let mut out = String::with_capacity(self.vertices.len() * 40 + self.faces.len() * 20);
        for p in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
        }
        for f in &self.faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        out
    }
}

fn parse_obj(text: &str) -> std::result::Result<Mesh, String> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let coords: Vec<f64> = tok
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| format!("line {}: {e}", lineno + 1))?;
                if coords.len() != 3 {
                    return Err(format!("line {}: vertex needs 3 coordinates", lineno + 1));
                }
                vertices.push(Point::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tok
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first
                            .parse()
                            .map_err(|e| format!("line {}: {e}", lineno + 1))?;
                        let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                        usize::try_from(resolved)
                            .map_err(|_| format!("line {}: bad index {i}", lineno + 1))
                    })
                    .collect::<std::result::Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(format!("line {}: face needs 3 vertices", lineno + 1));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let mesh = Mesh {
        vertices,
        faces,
        landmarks: BTreeMap::new(),
    };
    mesh.validate().map_err(|e| e.to_string())?;
    Ok(mesh)
}

/// Reads a `name index` landmark sidecar (0-based vertex indices, `#` comments).
pub fn read_landmarks(path: &Path) -> Result<BTreeMap<String, usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let (Some(name), Some(idx), None) = (tok.next(), tok.next(), tok.next()) else {
            return Err(Error::format(
                path,
                format!("line {}: expected `name index`", lineno + 1),
            ));
        };
        let idx = idx
            .parse()
            .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
        map.insert(name.to_string(), idx);
    }
    Ok(map)
}

pub fn write_landmarks(path: &Path, landmarks: &BTreeMap<String, usize>) -> Result<()> {
    let mut out = String::new();
    for (name, idx) in landmarks {
        let _ = writeln!(out, "{name} {idx}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
