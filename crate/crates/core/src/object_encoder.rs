//! Object features: view-shared point-cloud features plus per-view
//! positional encodings of the rotated box centers.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Point3, ViewSet};
use crate::graph::{concat, Var};
use crate::nn::{Init, LayerNorm, Linear};
use crate::params::{Bound, ParamGroup};
use crate::synth::{ObjectInstance, Scene, MIN_EXTENT};
use crate::tensor::Tensor;

/// Scalar summary of a box used next to its center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum BoxSizeKind {
    #[default]
    Diagonal,
    Volume,
    MaxExtent,
}

/// Box diagonal length (or the configured alternative). Every side must be
/// at least [`MIN_EXTENT`].
pub fn box_size(extent: Point3, kind: BoxSizeKind) -> Result<f64> {
    if extent.iter().any(|&e| e.is_nan() || e < MIN_EXTENT) {
        return Err(Error::Argument(alloc::format!(
            "box extent {extent:?} has a side below {MIN_EXTENT}"
        )));
    }
    Ok(match kind {
        BoxSizeKind::Diagonal => libm::sqrt(extent.iter().map(|e| e * e).sum()),
        BoxSizeKind::Volume => extent.iter().product(),
        BoxSizeKind::MaxExtent => extent.iter().copied().fold(0.0, f64::max),
    })
}

/// Per-point encoder input: color plus geometry relative to the box center
/// that does not change under rotations about the vertical axis
/// (horizontal radius, height offset, radial distance).
pub fn point_features(object: &ObjectInstance) -> Result<Tensor> {
    if object.points.is_empty() {
        return Err(Error::Argument("object has no points".into()));
    }
    let c = object.center;
    let mut data = Vec::with_capacity(object.points.len() * 6);
    for p in &object.points {
        let (dx, dy, dz) = (p[3] - c[0], p[4] - c[1], p[5] - c[2]);
        let rho2 = dx * dx + dy * dy;
        data.extend_from_slice(&[p[0], p[1], p[2], libm::sqrt(rho2), dz, libm::sqrt(rho2 + dz * dz)]);
    }
    Tensor::new(alloc::vec![object.points.len(), 6], data)
}

/// Shared per-point MLP, max-pool, post-pool MLP, then `LN(W_x ·)`.
#[derive(Debug, Clone)]
pub struct PointSetEncoder {
    pub point_mlp1: Linear,
    pub point_mlp2: Linear,
    pub post: Linear,
    pub project: Linear,
    pub norm: LayerNorm,
}

impl PointSetEncoder {
    pub(crate) fn new<R: Rng + ?Sized>(init: &mut Init<'_, R>, hidden: usize, pooled: usize, width: usize) -> Self {
        let g = ParamGroup::Base;
        Self {
            point_mlp1: Linear::new(init, "points.mlp1", 6, hidden, true, g),
            point_mlp2: Linear::new(init, "points.mlp2", hidden, hidden, true, g),
            post: Linear::new(init, "points.post", hidden, pooled, true, g),
            project: Linear::new(init, "points.project", pooled, width, false, g),
            norm: LayerNorm::new(init, "points.norm", width, g),
        }
    }

    /// `[P x 6]` point features to a `[1 x d]` object feature.
    pub fn encode_points<'g>(&self, p: &Bound<'g>, points: Var<'g>) -> Result<Var<'g>> {
        let h = self.point_mlp1.forward(p, points)?.relu();
        let h = self.point_mlp2.forward(p, h)?.relu();
        let pooled = h.max_axis(0)?;
        let width = pooled.shape()[0];
        let pooled = pooled.reshape(&[1, width])?;
        let h = self.post.forward(p, pooled)?.relu();
        self.norm.forward(p, self.project.forward(p, h)?)
    }
}

/// `PE(b, r) = LN(W_b [b, r])`
#[derive(Debug, Clone)]
pub struct PositionalEncoder {
    pub project: Linear,
    pub norm: LayerNorm,
}

impl PositionalEncoder {
    pub(crate) fn new<R: Rng + ?Sized>(init: &mut Init<'_, R>, width: usize) -> Self {
        let g = ParamGroup::Base;
        Self {
            project: Linear::new(init, "position.project", 4, width, false, g),
            norm: LayerNorm::new(init, "position.norm", width, g),
        }
    }

    /// Encodes `[M x 4]` rows of `(x, y, z, size)`.
    pub fn encode<'g>(&self, p: &Bound<'g>, boxes: Var<'g>) -> Result<Var<'g>> {
        self.norm.forward(p, self.project.forward(p, boxes)?)
    }
}

/// `[M x 4]` box descriptors from centers and sizes.
pub fn box_rows(centers: &[Point3], sizes: &[f64]) -> Tensor {
    let data = centers
        .iter()
        .zip(sizes)
        .flat_map(|(c, &r)| [c[0], c[1], c[2], r])
        .collect();
    Tensor::new(alloc::vec![centers.len(), 4], data).expect("four columns per box")
}

/// Output of [`encode_scene`].
pub struct MultiViewObjectFeatures<'g> {
    /// `[M x d]` point-cloud features, shared by all views.
    pub shared: Var<'g>,
    /// Per view, `[M x d]` positional encodings.
    pub positional: Vec<Var<'g>>,
    /// Per view, `[M x d]` object features `x + PE`.
    pub per_view: Vec<Var<'g>>,
    pub centers_per_view: Vec<Vec<Point3>>,
    /// Number of point-set encodings performed.
    pub point_encoder_calls: usize,
}

/// Point features once per object, then one positional encoding per view
/// of the rotated centers.
pub fn encode_scene<'g>(
    points: &PointSetEncoder,
    position: &PositionalEncoder,
    p: &Bound<'g>,
    scene: &Scene,
    views: &ViewSet,
    size_kind: BoxSizeKind,
) -> Result<MultiViewObjectFeatures<'g>> {
    if scene.is_empty() {
        return Err(Error::Argument("scene has no objects".into()));
    }
    let graph = p.graph();
    let mut rows = Vec::with_capacity(scene.len());
    for obj in &scene.objects {
        let pts = graph.constant(point_features(obj)?);
        rows.push(points.encode_points(p, pts)?);
    }
    let point_encoder_calls = rows.len();
    let shared = concat(&rows, 0)?;
    let sizes = scene
        .objects
        .iter()
        .map(|o| box_size(o.extent, size_kind))
        .collect::<Result<Vec<_>>>()?;
    let centers = scene.centers();
    let mut positional = Vec::with_capacity(views.len());
    let mut per_view = Vec::with_capacity(views.len());
    let mut centers_per_view = Vec::with_capacity(views.len());
    for rot in views.rotations() {
        let rotated: Vec<Point3> = centers.iter().map(|&c| rot.apply(c)).collect();
        let pe = position.encode(p, graph.constant(box_rows(&rotated, &sizes)))?;
        per_view.push(shared.add(pe)?);
        positional.push(pe);
        centers_per_view.push(rotated);
    }
    Ok(MultiViewObjectFeatures {
        shared,
        positional,
        per_view,
        centers_per_view,
        point_encoder_calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_size_rules() {
        assert_eq!(box_size([1.0, 2.0, 2.0], BoxSizeKind::Diagonal).unwrap(), 3.0);
        assert!(box_size([1.0, 0.0, 0.0], BoxSizeKind::Diagonal).is_err());
        assert!(box_size([3.0, 4.0, 0.0], BoxSizeKind::Diagonal).is_err());
        assert!(box_size([3.0, 4.0, 1e-9], BoxSizeKind::Diagonal).is_err());
        assert!(box_size([3.0, 4.0, f64::NAN], BoxSizeKind::Diagonal).is_err());
        assert_eq!(box_size([1.0, 2.0, 3.0], BoxSizeKind::Volume).unwrap(), 6.0);
        assert_eq!(box_size([1.0, 2.0, 3.0], BoxSizeKind::MaxExtent).unwrap(), 3.0);
    }

    #[test]
    fn point_features_ignore_horizontal_rotation() {
        let obj = ObjectInstance {
            category: 0,
            center: [1.0, 2.0, 0.5],
            extent: [1.0, 1.0, 1.0],
            color: [0.1, 0.2, 0.3],
            points: alloc::vec![[0.1, 0.2, 0.3, 1.25, 2.4, 0.1]],
        };
        let rotated = crate::synth::rotate_scene(
            &Scene {
                id: 0,
                objects: alloc::vec![obj.clone()],
            },
            core::f64::consts::FRAC_PI_2,
        );
        let a = point_features(&obj).unwrap();
        let b = point_features(&rotated.objects[0]).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }
}
