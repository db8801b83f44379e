//! Tabletop geometry: camera ring, box-shaped objects and analytic occlusion.
//!
//! Objects are upright boxes resting on a round table. A camera moves on a
//! horizontal ring around the table and always looks at the table center.
//! Silhouettes are the convex hulls of the eight projected box corners on the
//! camera's image plane, so containment and overlap tests are exact.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of camera stations on the ring.
pub const VIEWPOINT_COUNT: usize = 12;
/// Angular spacing between neighbouring stations.
pub const VIEWPOINT_STEP: f64 = PI / 6.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("object `{0}` has a non-positive dimension")]
    Degenerate(String),
    #[error("invalid scene geometry: {0}")]
    InvalidGeometry(&'static str),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        self * (1.0 / self.norm())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Relative size class. Ordered `Small < Medium < Large`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeCategory {
    Small,
    Medium,
    Large,
}

impl SizeCategory {
    pub const ALL: [SizeCategory; 3] = [SizeCategory::Large, SizeCategory::Medium, SizeCategory::Small];

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "large" => Some(Self::Large),
            "medium" => Some(Self::Medium),
            "small" => Some(Self::Small),
            _ => None,
        }
    }

    /// Height bounds in centimetres for the class, inclusive.
    pub fn height_bounds_cm(self) -> (f64, f64) {
        match self {
            Self::Large => (21.0, f64::INFINITY),
            Self::Medium => (5.0, 14.0),
            Self::Small => (0.0, 3.0),
        }
    }
}

impl fmt::Display for SizeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Large => "large",
            Self::Medium => "medium",
            Self::Small => "small",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    pub category: SizeCategory,
    pub width_cm: f64,
    pub depth_cm: f64,
    pub height_cm: f64,
}

impl ObjectSpec {
    pub fn new(
        name: impl Into<String>,
        category: SizeCategory,
        width_cm: f64,
        depth_cm: f64,
        height_cm: f64,
    ) -> Result<Self, GeometryError> {
        let spec = Self { name: name.into(), category, width_cm, depth_cm, height_cm };
        spec.check_dims()?;
        Ok(spec)
    }

    fn check_dims(&self) -> Result<(), GeometryError> {
        let dims = [self.width_cm, self.depth_cm, self.height_cm];
        if dims.iter().all(|d| d.is_finite() && *d > 0.0) {
            Ok(())
        } else {
            Err(GeometryError::Degenerate(self.name.clone()))
        }
    }

    /// True when the height is inside the bounds of the object's size class.
    pub fn height_matches_category(&self) -> bool {
        let (lo, hi) = self.category.height_bounds_cm();
        self.height_cm >= lo && self.height_cm <= hi
    }

    pub fn width(&self) -> f64 {
        self.width_cm / 100.0
    }
    pub fn depth(&self) -> f64 {
        self.depth_cm / 100.0
    }
    pub fn height(&self) -> f64 {
        self.height_cm / 100.0
    }
}

/// An object standing on the table. `center` is the middle of the footprint
/// on the table surface; `yaw` rotates the footprint about the vertical axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    /// Index of the object in its catalog.
    pub id: usize,
    pub spec: ObjectSpec,
    pub center: Point3,
    pub yaw: f64,
}

impl PlacedObject {
    /// Footprint corners (x, y) in counterclockwise order.
    pub fn footprint(&self) -> [(f64, f64); 4] {
        let (hw, hd) = (self.spec.width() / 2.0, self.spec.depth() / 2.0);
        let (s, c) = self.yaw.sin_cos();
        [(-hw, -hd), (hw, -hd), (hw, hd), (-hw, hd)]
            .map(|(lx, ly)| (self.center.x + c * lx - s * ly, self.center.y + s * lx + c * ly))
    }

    pub fn corners(&self) -> [Point3; 8] {
        let fp = self.footprint();
        let (z0, z1) = (self.center.z, self.center.z + self.spec.height());
        let mut out = [Point3::default(); 8];
        for (i, (x, y)) in fp.into_iter().enumerate() {
            out[i] = Point3::new(x, y, z0);
            out[i + 4] = Point3::new(x, y, z1);
        }
        out
    }

    /// Geometric centre of the box volume.
    pub fn centroid(&self) -> Point3 {
        Point3::new(self.center.x, self.center.y, self.center.z + self.spec.height() / 2.0)
    }

    /// Entry distance of the ray `origin + s * dir` into the box, if it hits.
    /// `dir` need not be normalized; the result is in units of `dir`.
    pub fn ray_entry(&self, origin: Point3, dir: Point3) -> Option<f64> {
        let (s, c) = self.yaw.sin_cos();
        // world -> box-local frame (rotation by -yaw about the footprint centre)
        let rel = origin - self.center;
        let o = [c * rel.x + s * rel.y, -s * rel.x + c * rel.y, rel.z];
        let d = [c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z];
        let lo = [-self.spec.width() / 2.0, -self.spec.depth() / 2.0, 0.0];
        let hi = [self.spec.width() / 2.0, self.spec.depth() / 2.0, self.spec.height()];
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in 0..3 {
            if d[k].abs() < 1e-15 {
                if o[k] < lo[k] || o[k] > hi[k] {
                    return None;
                }
                continue;
            }
            let (a, b) = ((lo[k] - o[k]) / d[k], (hi[k] - o[k]) / d[k]);
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        (t1 >= t0 && t1 > 0.0).then_some(t0.max(0.0))
    }
}

/// Fixed dimensions of the table and the camera ring (metres).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub table_radius: f64,
    pub table_height: f64,
    pub ring_radius: f64,
    pub ring_height: f64,
}

impl Default for SceneGeometry {
    fn default() -> Self {
        Self { table_radius: 0.5, table_height: 0.75, ring_radius: 1.2, ring_height: 1.1 }
    }
}

impl SceneGeometry {
    pub fn new(
        table_radius: f64,
        table_height: f64,
        ring_radius: f64,
        ring_height: f64,
    ) -> Result<Self, GeometryError> {
        if !(table_radius > 0.0 && ring_radius > table_radius) {
            return Err(GeometryError::InvalidGeometry("ring radius must exceed table radius"));
        }
        if !(ring_height > table_height) {
            return Err(GeometryError::InvalidGeometry("camera must be above the table"));
        }
        Ok(Self { table_radius, table_height, ring_radius, ring_height })
    }

    pub fn table_center(&self) -> Point3 {
        Point3::new(0.0, 0.0, self.table_height)
    }

    /// True when the whole footprint lies inside the table disc.
    pub fn footprint_on_table(&self, obj: &PlacedObject) -> bool {
        obj.footprint().iter().all(|(x, y)| x.hypot(*y) <= self.table_radius)
    }
}

/// Camera station on the ring. Index increases counterclockwise seen from above.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Viewpoint(u8);

impl Viewpoint {
    pub fn new(index: i64) -> Self {
        Self(index.rem_euclid(VIEWPOINT_COUNT as i64) as u8)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn azimuth(self) -> f64 {
        self.0 as f64 * VIEWPOINT_STEP
    }

    /// Clockwise step.
    pub fn left(self) -> Self {
        Self::new(self.0 as i64 - 1)
    }

    /// Counterclockwise step.
    pub fn right(self) -> Self {
        Self::new(self.0 as i64 + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub position: Point3,
    /// Unit vector from the camera towards the table centre.
    pub gaze: Point3,
}

impl CameraPose {
    fn frame(&self) -> (Point3, Point3, Point3) {
        let f = self.gaze;
        let r = f.cross(Point3::new(0.0, 0.0, 1.0)).normalized();
        let u = r.cross(f);
        (f, r, u)
    }

    /// Pinhole projection onto the image plane at unit focal distance.
    /// Returns `None` for points behind the camera.
    pub fn project(&self, p: Point3) -> Option<(f64, f64)> {
        let (f, r, u) = self.frame();
        let d = p - self.position;
        let depth = d.dot(f);
        (depth > 1e-9).then(|| (d.dot(r) / depth, d.dot(u) / depth))
    }

    /// Inverse of [`project`](Self::project): ray direction through an image point.
    pub fn ray_through(&self, q: (f64, f64)) -> Point3 {
        let (f, r, u) = self.frame();
        f + r * q.0 + u * q.1
    }

    /// Signed horizontal angle from the gaze to the ray towards `p`;
    /// positive means counterclockwise (to the camera's left).
    pub fn bearing(&self, p: Point3) -> f64 {
        let d = p - self.position;
        let (gx, gy) = (self.gaze.x, self.gaze.y);
        (gx * d.y - gy * d.x).atan2(gx * d.x + gy * d.y)
    }
}

pub fn camera_pose(viewpoint: Viewpoint, geom: &SceneGeometry) -> CameraPose {
    let (s, c) = viewpoint.azimuth().sin_cos();
    let position = Point3::new(geom.ring_radius * c, geom.ring_radius * s, geom.ring_height);
    let gaze = (geom.table_center() - position).normalized();
    CameraPose { position, gaze }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OcclusionLevel {
    NotOccluded,
    PartiallyOccluded,
    FullyOccluded,
}

type Poly = Vec<(f64, f64)>;

fn cross2(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counterclockwise convex hull (Andrew's monotone chain).
pub fn convex_hull(points: &[(f64, f64)]) -> Poly {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite projection"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Poly = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross2(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Poly = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross2(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

pub fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        / 2.0
}

fn polygon_centroid(poly: &[(f64, f64)]) -> (f64, f64) {
    let n = poly.len();
    let area = polygon_area(poly);
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let k = a.0 * b.1 - b.0 * a.1;
        cx += (a.0 + b.0) * k;
        cy += (a.1 + b.1) * k;
    }
    (cx / (6.0 * area), cy / (6.0 * area))
}

/// Point inside (or on the boundary of) a counterclockwise convex polygon.
fn inside_convex(poly: &[(f64, f64)], p: (f64, f64), tol: f64) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        cross2(a, b, p) >= -tol * len
    })
}

/// Sutherland-Hodgman clip of `subject` against the convex polygon `clip`.
fn clip_convex(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Poly {
    let mut out = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % n]);
        let input = std::mem::take(&mut out);
        let m = input.len();
        for j in 0..m {
            let (p, q) = (input[j], input[(j + 1) % m]);
            let (sp, sq) = (cross2(a, b, p), cross2(a, b, q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
    }
    out
}

/// Projected silhouette of an object as seen by `camera`.
pub fn silhouette(camera: &CameraPose, obj: &PlacedObject) -> Poly {
    let pts: Vec<_> = obj.corners().iter().filter_map(|c| camera.project(*c)).collect();
    convex_hull(&pts)
}

/// Silhouette area below which an overlap is treated as touching only.
const MIN_OVERLAP_AREA: f64 = 1e-12;

/// How much of `target` is hidden behind `occluder` when viewed from `camera`.
///
/// Assumes the two boxes are disjoint, so that one of them is in front of the
/// other along every sight line that crosses both.
pub fn occlusion_level(
    camera: &CameraPose,
    occluder: &PlacedObject,
    target: &PlacedObject,
) -> Result<OcclusionLevel, GeometryError> {
    occluder.spec.check_dims()?;
    target.spec.check_dims()?;
    let target_poly = silhouette(camera, target);
    let occluder_poly = silhouette(camera, occluder);
    if target_poly.len() < 3 || occluder_poly.len() < 3 {
        return Err(GeometryError::Degenerate(target.spec.name.clone()));
    }
    let overlap = clip_convex(&target_poly, &occluder_poly);
    if overlap.len() < 3 || polygon_area(&overlap) <= MIN_OVERLAP_AREA {
        return Ok(OcclusionLevel::NotOccluded);
    }
    let dir = camera.ray_through(polygon_centroid(&overlap));
    let occluder_nearer = match (occluder.ray_entry(camera.position, dir), target.ray_entry(camera.position, dir)) {
        (Some(to), Some(tt)) => to < tt,
        // grazing ray; fall back to centroid distances
        _ => (occluder.centroid() - camera.position).norm() < (target.centroid() - camera.position).norm(),
    };
    if !occluder_nearer {
        return Ok(OcclusionLevel::NotOccluded);
    }
    if target_poly.iter().all(|p| inside_convex(&occluder_poly, *p, 1e-12)) {
        Ok(OcclusionLevel::FullyOccluded)
    } else {
        Ok(OcclusionLevel::PartiallyOccluded)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VisibleObject<'a> {
    pub object: &'a PlacedObject,
    /// Angle subtended by the object height, `2 atan(h / 2d)`.
    pub apparent_height: f64,
    pub bearing: f64,
}

/// Objects not fully hidden behind another object, sorted by bearing.
pub fn visible_set<'a>(
    viewpoint: Viewpoint,
    objects: &'a [PlacedObject],
    geom: &SceneGeometry,
) -> Vec<VisibleObject<'a>> {
    let camera = camera_pose(viewpoint, geom);
    let mut out: Vec<VisibleObject<'a>> = objects
        .iter()
        .enumerate()
        .filter(|(i, target)| {
            !objects.iter().enumerate().any(|(j, occ)| {
                j != *i
                    && occlusion_level(&camera, occ, target)
                        .map(|l| l == OcclusionLevel::FullyOccluded)
                        .unwrap_or(false)
            })
        })
        .map(|(_, obj)| {
            let c = obj.centroid();
            let dist = (c - camera.position).norm();
            VisibleObject {
                object: obj,
                apparent_height: 2.0 * (obj.spec.height() / (2.0 * dist)).atan(),
                bearing: camera.bearing(c),
            }
        })
        .collect();
    out.sort_by(|a, b| a.bearing.total_cmp(&b.bearing));
    out
}

/// True when the two footprints are separated by at least `margin` metres
/// (separating-axis test on the two rectangles).
pub fn footprints_clear(a: &PlacedObject, b: &PlacedObject, margin: f64) -> bool {
    let (pa, pb) = (a.footprint(), b.footprint());
    let axes = [a.yaw, a.yaw + PI / 2.0, b.yaw, b.yaw + PI / 2.0];
    axes.iter().any(|ang| {
        let (s, c) = ang.sin_cos();
        let proj = |pts: &[(f64, f64); 4]| {
            pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, y)| {
                let v = c * x + s * y;
                (lo.min(v), hi.max(v))
            })
        };
        let ((alo, ahi), (blo, bhi)) = (proj(&pa), proj(&pb));
        alo > bhi + margin || blo > ahi + margin
    })
}

/// Ray-sampling reference for [`occlusion_level`].
///
/// Casts rays from the camera through the eight box corners of `target` and
/// through `n_rays` points drawn uniformly inside the box, and classifies by
/// the fraction of rays that meet the occluder before the target.
pub mod raycast {
    use super::*;
    use rand::Rng;

    pub fn occlusion_by_rays<R: Rng + ?Sized>(
        camera: &CameraPose,
        occluder: &PlacedObject,
        target: &PlacedObject,
        n_rays: usize,
        rng: &mut R,
    ) -> OcclusionLevel {
        // p lies in the target, and the boxes are disjoint, so anything met
        // before reaching p is in front of the target
        let blocked = |p: Point3| matches!(occluder.ray_entry(camera.position, p - camera.position), Some(s) if s < 1.0);
        let (hw, hd, h) = (target.spec.width() / 2.0, target.spec.depth() / 2.0, target.spec.height());
        let (s, c) = target.yaw.sin_cos();
        let corners = target.corners();
        let samples = (0..n_rays).map(|_| {
            let (lx, ly, lz) = (rng.gen_range(-hw..=hw), rng.gen_range(-hd..=hd), rng.gen_range(0.0..=h));
            Point3::new(
                target.center.x + c * lx - s * ly,
                target.center.y + s * lx + c * ly,
                target.center.z + lz,
            )
        });
        let (mut hit, mut total) = (0usize, 0usize);
        for p in corners.into_iter().chain(samples) {
            total += 1;
            if blocked(p) {
                hit += 1;
            }
        }
        match hit {
            0 => OcclusionLevel::NotOccluded,
            n if n == total => OcclusionLevel::FullyOccluded,
            _ => OcclusionLevel::PartiallyOccluded,
        }
    }
}
