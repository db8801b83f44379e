//! Independent oracles shared by the integration and acceptance tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;

use roep::geometry::{
    camera_pose, footprints_clear, occlusion_level, polygon_area, raycast, silhouette, CameraPose, OcclusionLevel,
    PlacedObject, Point3, SceneGeometry, Viewpoint,
};
use roep::nn::loss::{reinforce_loss, PolicyStep};
use roep::scenegen::Catalog;

pub fn place(catalog: &Catalog, id: usize, x: f64, y: f64, yaw: f64, geom: &SceneGeometry) -> PlacedObject {
    PlacedObject { id, spec: catalog.get(id).clone(), center: Point3::new(x, y, geom.table_height), yaw }
}

/// A random two-object scene seen from a random viewpoint. Half of the draws
/// put the second object roughly behind the first along the line of sight,
/// so that occluded and partly occluded cases are well represented.
pub fn random_configuration<R: Rng + ?Sized>(
    catalog: &Catalog,
    geom: &SceneGeometry,
    rng: &mut R,
) -> (CameraPose, PlacedObject, PlacedObject) {
    let ids: Vec<usize> = (0..catalog.len()).collect();
    loop {
        let pick: Vec<usize> = ids.choose_multiple(rng, 2).copied().collect();
        let cam = camera_pose(Viewpoint::new(rng.gen_range(0..12)), geom);
        let r = geom.table_radius;
        let xy = |rng: &mut R| {
            let (rad, th) = (r * rng.gen::<f64>().sqrt(), rng.gen_range(0.0..2.0 * PI));
            (rad * th.cos(), rad * th.sin())
        };
        let (ax, ay) = xy(rng);
        let (bx, by) = if rng.gen_bool(0.5) {
            xy(rng)
        } else {
            let dx = ax - cam.position.x;
            let dy = ay - cam.position.y;
            let len = (dx * dx + dy * dy).sqrt();
            let ahead = rng.gen_range(0.03..0.25);
            let side = rng.gen_range(-0.06..0.06);
            (ax + (dx * ahead - dy * side) / len, ay + (dy * ahead + dx * side) / len)
        };
        let a = place(catalog, pick[0], ax, ay, rng.gen_range(0.0..2.0 * PI), geom);
        let b = place(catalog, pick[1], bx, by, rng.gen_range(0.0..2.0 * PI), geom);
        if geom.footprint_on_table(&a) && geom.footprint_on_table(&b) && footprints_clear(&a, &b, 0.0) {
            return (cam, a, b);
        }
    }
}

pub const RAYS_PER_CHECK: usize = 10_000;
/// Angular band around silhouette boundaries inside which the two methods may
/// disagree. Image-plane distances at unit focal length are never smaller
/// than the angles they subtend, so comparing them to the band is safe.
pub const BOUNDARY_BAND_RAD: f64 = 1e-3;

type Poly = Vec<(f64, f64)>;

fn edge_side(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Largest distance from `p` outside the edges of a counterclockwise convex polygon.
fn outside_distance(poly: &[(f64, f64)], p: (f64, f64)) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            -edge_side(a, b, p) / (b.0 - a.0).hypot(b.1 - a.1)
        })
        .fold(f64::MIN, f64::max)
}

fn intersect(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Poly {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (sp, sq) = (edge_side(a, b, p), edge_side(a, b, q));
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

/// Whether a disagreement between the two levels is decided by less than
/// the boundary band.
fn within_band(cam: &CameraPose, occluder: &PlacedObject, target: &PlacedObject, a: OcclusionLevel, b: OcclusionLevel) -> bool {
    use OcclusionLevel::*;
    let tp = silhouette(cam, target);
    let op = silhouette(cam, occluder);
    match (a.min(b), a.max(b)) {
        (NotOccluded, PartiallyOccluded) => {
            let overlap = intersect(&tp, &op);
            if overlap.len() < 3 {
                return true;
            }
            let perimeter: f64 = (0..overlap.len())
                .map(|i| {
                    let (p, q) = (overlap[i], overlap[(i + 1) % overlap.len()]);
                    (q.0 - p.0).hypot(q.1 - p.1)
                })
                .sum();
            // inradius of a convex polygon is at most 2A/P
            2.0 * polygon_area(&overlap).abs() / perimeter <= BOUNDARY_BAND_RAD
        }
        (PartiallyOccluded, FullyOccluded) => {
            tp.iter().map(|p| outside_distance(&op, *p)).fold(f64::MIN, f64::max) <= BOUNDARY_BAND_RAD
        }
        _ => false,
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Agreement {
    /// Same level from both methods.
    pub exact: usize,
    /// Different levels, but decided inside the boundary band.
    pub boundary: usize,
    pub total: usize,
}

impl Agreement {
    pub fn accepted(&self) -> usize {
        self.exact + self.boundary
    }
}

/// Compares the silhouette predicate with the ray oracle on `n` configurations.
pub fn occlusion_agreement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Agreement {
    let catalog = Catalog::builtin();
    let geom = SceneGeometry::default();
    let mut out = Agreement { total: n, ..Agreement::default() };
    for _ in 0..n {
        let (cam, a, b) = random_configuration(&catalog, &geom, rng);
        let fast = occlusion_level(&cam, &a, &b).expect("valid configuration");
        let rays = raycast::occlusion_by_rays(&cam, &a, &b, RAYS_PER_CHECK, rng);
        if fast == rays {
            out.exact += 1;
        } else if within_band(&cam, &a, &b, fast, rays) {
            out.boundary += 1;
        }
    }
    out
}

/// Two-step decision problem with two actions per step. The second state is
/// the first action; the reward depends on both actions.
pub struct ToyMdp {
    /// First-step logits, then second-step logits for each first action.
    pub theta: [f64; 6],
    pub reward: [[f64; 2]; 2],
}

fn softmax2(z: &[f64]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let (a, b) = ((z[0] - m).exp(), (z[1] - m).exp());
    [a / (a + b), b / (a + b)]
}

impl ToyMdp {
    pub fn example() -> Self {
        Self { theta: [0.3, -0.2, 0.5, -0.4, -0.1, 0.6], reward: [[1.0, -0.5], [0.25, 1.5]] }
    }

    /// Exact expected return by enumerating all four trajectories.
    pub fn expected_return(&self, theta: &[f64]) -> f64 {
        let p0 = softmax2(&theta[0..2]);
        (0..2)
            .map(|a0| {
                let p1 = softmax2(&theta[2 + 2 * a0..4 + 2 * a0]);
                (0..2).map(|a1| p0[a0] * p1[a1] * self.reward[a0][a1]).sum::<f64>()
            })
            .sum()
    }

    pub fn exact_gradient_fd(&self, h: f64) -> [f64; 6] {
        let mut g = [0.0; 6];
        for (i, gi) in g.iter_mut().enumerate() {
            let (mut up, mut down) = (self.theta, self.theta);
            up[i] += h;
            down[i] -= h;
            *gi = (self.expected_return(&up) - self.expected_return(&down)) / (2.0 * h);
        }
        g
    }

    /// One sampled score-function estimate of the gradient of the expected
    /// return, taken from the library's REINFORCE loss (negated).
    pub fn sample_estimate<R: Rng + ?Sized>(&self, baseline: f64, rng: &mut R) -> [f64; 6] {
        let p0 = softmax2(&self.theta[0..2]);
        let a0 = usize::from(rng.gen::<f64>() >= p0[0]);
        let l1 = &self.theta[2 + 2 * a0..4 + 2 * a0];
        let p1 = softmax2(l1);
        let a1 = usize::from(rng.gen::<f64>() >= p1[0]);
        let ret = self.reward[a0][a1];
        let steps = [
            PolicyStep { logits: self.theta[0..2].to_vec(), action: a0 },
            PolicyStep { logits: l1.to_vec(), action: a1 },
        ];
        let (_, g) = reinforce_loss(&steps, &[ret, ret], &[baseline, baseline]).expect("lengths match");
        let mut out = [0.0; 6];
        out[0] = -g[0][0];
        out[1] = -g[0][1];
        out[2 + 2 * a0] = -g[1][0];
        out[3 + 2 * a0] = -g[1][1];
        out
    }
}

/// Largest `|mean - exact| / standard error` over the parameters.
pub fn toy_mdp_max_z<R: Rng + ?Sized>(n: usize, baseline: f64, rng: &mut R) -> f64 {
    let mdp = ToyMdp::example();
    let exact = mdp.exact_gradient_fd(1e-6);
    let mut sum = [0.0; 6];
    let mut sq = [0.0; 6];
    for _ in 0..n {
        let g = mdp.sample_estimate(baseline, rng);
        for i in 0..6 {
            sum[i] += g[i];
            sq[i] += g[i] * g[i];
        }
    }
    let nf = n as f64;
    (0..6)
        .map(|i| {
            let mean = sum[i] / nf;
            let var = (sq[i] / nf - mean * mean) * nf / (nf - 1.0);
            (mean - exact[i]).abs() / (var / nf).sqrt()
        })
        .fold(0.0, f64::max)
}
