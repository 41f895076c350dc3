//! End-to-end steps shared by the command line and the test harnesses:
//! registration, alignment, normalization, rasterization and the
//! mesh-level wrappers around trained networks.

use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::eval::Reconstructor;
use crate::geometry::{
    cylindrical_unwrap, generalized_procrustes, nicp_fit, normalize_dataset, nose_distance_weights, rasterize_uv,
    sample_mesh_from_uv, GpaFrame, GpaOptions, Mesh, NicpOptions, UvLayout, UvMap,
};
use crate::model::NetParams;
use crate::training::one_hot;

#[derive(Clone, Debug)]
pub struct PreprocessOptions {
    pub resolution: usize,
    pub gpa: GpaOptions,
    pub nicp: NicpOptions,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            resolution: 32,
            gpa: GpaOptions::default(),
            nicp: NicpOptions::default(),
        }
    }
}

/// Aligned, normalized meshes with their position maps.
#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub meshes: Vec<Mesh>,
    pub maps: Vec<UvMap>,
    /// Template layout with the raster cached at the working resolution.
    pub layout: UvLayout,
    /// Aligned millimetre coordinates were divided by this.
    pub factor: f64,
}

/// Brings every scan into template correspondence, running NICP on those
/// whose vertex count differs from the template's.
pub fn register_to_template(scans: &[Mesh], template: &Mesh, options: &NicpOptions) -> Result<Vec<Mesh>> {
    let needs_fit = scans.iter().any(|s| !s.same_topology(template));
    let weights = if needs_fit {
        nose_distance_weights(template)?
    } else {
        Vec::new()
    };
    scans
        .par_iter()
        .map(|s| {
            if s.same_topology(template) {
                Ok(s.clone())
            } else {
                Ok(nicp_fit(template, &s.vertices, &weights, options)?.mesh)
            }
        })
        .collect()
}

/// Registration, alignment into the centred template frame, dataset-wide
/// scaling into `[-1, 1]` and rasterization.
pub fn preprocess(scans: &[Mesh], template: &Mesh, options: &PreprocessOptions) -> Result<Preprocessed> {
    if scans.is_empty() {
        return Err(Error::InvalidArgument("no meshes to preprocess".into()));
    }
    let registered = register_to_template(scans, template, &options.nicp)?;
    let centroid = template.centroid();
    let centred = template.with_vertices(template.vertices.iter().map(|p| p - centroid).collect())?;
    let gpa = generalized_procrustes(
        &registered,
        &GpaOptions {
            frame: GpaFrame::Reference(centred),
            ..options.gpa.clone()
        },
    )?;
    let (meshes, factor) = normalize_dataset(&gpa.aligned)?;
    let layout = cylindrical_unwrap(template)?.with_raster(options.resolution)?;
    let maps = rasterize_all(&meshes, &layout)?;
    Ok(Preprocessed {
        meshes,
        maps,
        layout,
        factor,
    })
}

pub fn rasterize_all(meshes: &[Mesh], layout: &UvLayout) -> Result<Vec<UvMap>> {
    let res = layout
        .raster()
        .map(|r| r.height)
        .ok_or_else(|| Error::InvalidArgument("layout has no cached raster".into()))?;
    meshes.par_iter().map(|m| rasterize_uv(m, layout, res)).collect()
}

pub fn maps_to_meshes(maps: &[UvMap], layout: &UvLayout) -> Result<Vec<Mesh>> {
    maps.par_iter().map(|m| sample_mesh_from_uv(m, layout)).collect()
}

/// Mesh → position map → mesh, the best any map-based model can return.
pub fn round_trip(meshes: &[Mesh], layout: &UvLayout) -> Result<Vec<Mesh>> {
    maps_to_meshes(&rasterize_all(meshes, layout)?, layout)
}

/// Network input tensor for one map and optional `(label, label_count)`.
pub fn network_input(map: &UvMap, label: Option<(usize, usize)>) -> Result<Tensor<f32>> {
    let l = label.map(|(i, n)| one_hot(i, n)).unwrap_or_default();
    crate::training::condition_input(map, &l)
}

/// Runs `net` over position maps, optionally with one label for all of them.
pub fn apply_to_maps(net: &NetParams<f32>, maps: &[UvMap], label: Option<(usize, usize)>) -> Result<Vec<UvMap>> {
    let res = net.config.resolution;
    let mut out = Vec::with_capacity(maps.len());
    for chunk in maps.chunks(16) {
        let inputs = chunk
            .iter()
            .map(|m| network_input(m, label))
            .collect::<Result<Vec<_>>>()?;
        let batch = Tensor::stack(&inputs.iter().collect::<Vec<_>>())?;
        for t in net.reconstruct(&batch)?.unstack() {
            out.push(UvMap::from_f32(res, res, 3, t.data())?);
        }
    }
    Ok(out)
}

/// A trained network seen as a mesh-to-mesh model through the UV layout.
pub struct NetworkModel<'a> {
    pub net: &'a NetParams<f32>,
    pub layout: &'a UvLayout,
    pub label: Option<(usize, usize)>,
}

impl Reconstructor for NetworkModel<'_> {
    fn reconstruct(&self, meshes: &[Mesh]) -> Result<Vec<Mesh>> {
        let maps = rasterize_all(meshes, self.layout)?;
        maps_to_meshes(&apply_to_maps(self.net, &maps, self.label)?, self.layout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{generalization_errors, IdentityModel};
    use crate::geometry::{RigidTransform, Similarity};
    use crate::synth::{synth_dataset, SynthConfig};
    use nalgebra::Vector3;

    fn data() -> Vec<Mesh> {
        synth_dataset(&SynthConfig {
            subjects: 6,
            modes: 3,
            grid: 21,
            ..SynthConfig::default()
        })
        .unwrap()
        .meshes
    }

    #[test]
    fn preprocessing_removes_pose_and_fits_unit_box() {
        let meshes = data();
        let template = crate::synth::synth_template(21).unwrap();
        let base = preprocess(&meshes, &template, &PreprocessOptions::default()).unwrap();
        let moved: Vec<Mesh> = meshes
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let r = RigidTransform::from_axis_angle(&Vector3::new(0.3, 1.0, 0.2), 0.1 * i as f64, Vector3::new(5.0, -3.0, i as f64));
                Similarity { scale: 1.0 + 0.1 * i as f64, ..r.as_similarity() }.apply_mesh(m).unwrap()
            })
            .collect();
        let again = preprocess(&moved, &template, &PreprocessOptions::default()).unwrap();
        assert!((base.factor - again.factor).abs() < 1e-9 * base.factor);
        for (a, b) in base.meshes.iter().zip(&again.meshes) {
            assert!(a.vertices.iter().zip(&b.vertices).all(|(p, q)| (p - q).norm() < 1e-9));
        }
        let max = base.meshes.iter().flat_map(|m| m.vertices.iter()).map(|p| p.amax()).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        assert_eq!(base.maps.len(), meshes.len());
        assert!(base.maps.iter().all(|m| m.height == 32 && m.all_valid()));
    }

    #[test]
    fn identity_model_through_round_trip_gives_zero_error() {
        let template = crate::synth::synth_template(21).unwrap();
        let pre = preprocess(&data(), &template, &PreprocessOptions::default()).unwrap();
        let errs = generalization_errors(&IdentityModel, &pre.meshes, 1.0).unwrap();
        assert_eq!(errs.mean(), 0.0);
        let rt = round_trip(&pre.meshes, &pre.layout).unwrap();
        let rt2 = round_trip(&rt, &pre.layout).unwrap();
        assert_eq!(rt.len(), pre.meshes.len());
        // A second round trip moves vertices much less than the first.
        let d1: f64 = pre.meshes.iter().zip(&rt).map(|(a, b)| a.mean_vertex_distance(b)).sum();
        let d2: f64 = rt.iter().zip(&rt2).map(|(a, b)| a.mean_vertex_distance(b)).sum();
        assert!(d2 < d1);
    }

    #[test]
    fn registration_passes_corresponding_meshes_through() {
        let meshes = data();
        let template = crate::synth::synth_template(21).unwrap();
        let out = register_to_template(&meshes, &template, &NicpOptions::default()).unwrap();
        assert_eq!(out, meshes);
    }
}
