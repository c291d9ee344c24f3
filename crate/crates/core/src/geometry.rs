//! Model geometries: the backgrounds carrying the reference Kahler form and
//! their discretizations.
//!
//! Three backgrounds are supported, all with complex dimension 1 grids (the
//! radial domain additionally models higher dimension through its 1-d radial
//! reduction):
//!
//! * `FlatTorus` — the unit square with opposite sides identified, reference
//!   form `dx ^ dy` (total volume 1), Euclidean distances.
//! * `FubiniStudySphere` — the round sphere normalized to total volume 1,
//!   i.e. radius `R = 1/(2 sqrt(pi))`, parametrized by colatitude/longitude.
//! * `RadialLogDomain` — a punctured disk chart described by the radial
//!   coordinate `t = log |z|^2` on `[t_min, t_max]`, `t_max < 0`.  Rotation
//!   invariant data only; the reference measure in `t` is `e^t dt dtheta`.
//!
//! Length calibration: a Kahler potential equal to `|z|^2` on a flat chart
//! must reproduce Euclidean distances.  All derived metric quantities in the
//! crate (conformal factors, radial eigenvalues) follow that normalization,
//! so no stray factors of sqrt(2) appear between potentials and lengths.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Background kind tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    FlatTorus,
    FubiniStudySphere,
    RadialLogDomain,
}

/// A model manifold together with the constants every estimate depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub kind: BackgroundKind,
    /// Complex dimension. Fixed to 1 for the torus and the sphere; the
    /// radial domain accepts any `n >= 1` through its radial reduction.
    pub n: u32,
    /// `A >= 0` such that `-A` bounds the bisectional curvature of the
    /// reference form from below. Zero for all three model backgrounds
    /// (flat charts, and the sphere curves positively).
    pub curvature_a: f64,
    /// Default hint for the smoothing monotonicity constant `K`. Scenarios
    /// certify the constant they actually use; this is only a fallback.
    pub demailly_k: f64,
    /// Radius below which exponential-map smoothing is well defined.
    pub injectivity_radius: f64,
}

/// Round-sphere radius for total volume 1: `4 pi R^2 = 1`.
pub const SPHERE_RADIUS: f64 = 0.28209479177387814; // 1 / (2 sqrt(pi))

impl Background {
    pub fn flat_torus() -> Self {
        Background {
            kind: BackgroundKind::FlatTorus,
            n: 1,
            curvature_a: 0.0,
            demailly_k: 0.0,
            injectivity_radius: 0.5,
        }
    }

    pub fn fubini_study_sphere() -> Self {
        Background {
            kind: BackgroundKind::FubiniStudySphere,
            n: 1,
            curvature_a: 0.0,
            demailly_k: 0.0,
            // Antipodal distance of the volume-1 round sphere.
            injectivity_radius: PI * SPHERE_RADIUS,
        }
    }

    pub fn radial_log_domain(n: u32, t_max: f64) -> Self {
        Background {
            kind: BackgroundKind::RadialLogDomain,
            n,
            curvature_a: 0.0,
            demailly_k: 0.0,
            // Smoothing radii must stay below the outer chart radius.
            injectivity_radius: 0.5 * (0.5 * t_max).exp(),
        }
    }

    /// Constant in the quasi-plurisubharmonicity normalization
    /// `u_delta = U_delta / (1 + A' c)`.
    pub fn a_prime(&self) -> f64 {
        self.curvature_a + 1.0
    }
}

/// A point in the chart coordinates of a background.
///
/// Torus: `(x, y)` with unit periods. Sphere: `(theta, phi)` colatitude and
/// longitude. Radial domain: `(r, theta)` polar coordinates of the disk
/// chart.
pub type Point = [f64; 2];

/// Geodesic distance between two points of the background.
pub fn background_distance(bg: &Background, x: Point, y: Point) -> f64 {
    match bg.kind {
        BackgroundKind::FlatTorus => {
            let dx = torus_delta(x[0], y[0]);
            let dy = torus_delta(x[1], y[1]);
            (dx * dx + dy * dy).sqrt()
        }
        BackgroundKind::FubiniStudySphere => {
            let a = sphere_unit_vector(x);
            let b = sphere_unit_vector(y);
            let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
            SPHERE_RADIUS * dot.acos()
        }
        BackgroundKind::RadialLogDomain => {
            // Euclidean distance in the disk chart.
            let ax = x[0] * x[1].cos();
            let ay = x[0] * x[1].sin();
            let bx = y[0] * y[1].cos();
            let by = y[0] * y[1].sin();
            ((ax - bx) * (ax - bx) + (ay - by) * (ay - by)).sqrt()
        }
    }
}

/// Exponential map at `z` applied to a tangent vector `zeta`.
///
/// The tangent vector is expressed in the orthonormal chart frame of the
/// point: axis-aligned on the torus, `(e_theta, e_phi)` on the sphere and
/// Cartesian disk coordinates on the radial domain.
pub fn exp_map(bg: &Background, z: Point, zeta: [f64; 2]) -> Result<Point> {
    let norm = (zeta[0] * zeta[0] + zeta[1] * zeta[1]).sqrt();
    if norm >= bg.injectivity_radius {
        return Err(Error::invalid(format!(
            "tangent vector length {norm:.3e} exceeds injectivity radius {:.3e}",
            bg.injectivity_radius
        )));
    }
    Ok(match bg.kind {
        BackgroundKind::FlatTorus => [wrap_unit(z[0] + zeta[0]), wrap_unit(z[1] + zeta[1])],
        BackgroundKind::FubiniStudySphere => {
            if norm == 0.0 {
                return Ok(z);
            }
            let p = sphere_unit_vector(z);
            let (st, ct) = z[0].sin_cos();
            let (sp, cp) = z[1].sin_cos();
            // Orthonormal frame (e_theta, e_phi) at the point.
            let e_theta = [ct * cp, ct * sp, -st];
            let e_phi = [-sp, cp, 0.0];
            let dir = [
                (zeta[0] * e_theta[0] + zeta[1] * e_phi[0]) / norm,
                (zeta[0] * e_theta[1] + zeta[1] * e_phi[1]) / norm,
                (zeta[0] * e_theta[2] + zeta[1] * e_phi[2]) / norm,
            ];
            let alpha = norm / SPHERE_RADIUS;
            let (sa, ca) = alpha.sin_cos();
            let q = [
                ca * p[0] + sa * dir[0],
                ca * p[1] + sa * dir[1],
                ca * p[2] + sa * dir[2],
            ];
            let theta = q[2].clamp(-1.0, 1.0).acos();
            let phi = q[1].atan2(q[0]);
            [theta, if phi < 0.0 { phi + 2.0 * PI } else { phi }]
        }
        BackgroundKind::RadialLogDomain => {
            let ax = z[0] * z[1].cos() + zeta[0];
            let ay = z[0] * z[1].sin() + zeta[1];
            [(ax * ax + ay * ay).sqrt(), ay.atan2(ax)]
        }
    })
}

fn wrap_unit(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

fn torus_delta(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 1.0;
    d.min(1.0 - d)
}

/// Unit 3-vector of a sphere chart point `(theta, phi)`.
fn sphere_unit_vector(p: Point) -> [f64; 3] {
    let (st, ct) = p[0].sin_cos();
    let (sp, cp) = p[1].sin_cos();
    [st * cp, st * sp, ct]
}

/// Density of the reference volume form against the chart coordinate
/// measure at a point.
///
/// Torus: constant 1 against `dx dy`. Sphere: `4 R^2 / (1 + |z|^2)^2`
/// against the stereographic chart measure, expressed here through the
/// colatitude (`|z| = tan(theta/2)`). Radial domain: `e^t` against
/// `dt dtheta`.
pub fn volume_density(bg: &Background, p: Point) -> f64 {
    match bg.kind {
        BackgroundKind::FlatTorus => 1.0,
        BackgroundKind::FubiniStudySphere => {
            let z2 = (p[0] / 2.0).tan().powi(2);
            4.0 * SPHERE_RADIUS * SPHERE_RADIUS / ((1.0 + z2) * (1.0 + z2))
        }
        BackgroundKind::RadialLogDomain => {
            // t = 2 log r; density of e^t dt dtheta at radius r.
            (2.0 * p[0].ln()).exp()
        }
    }
}

/// Discretization of a background.
///
/// Nodes are indexed linearly; `weight(i)` is the quadrature weight of node
/// `i` with respect to the reference volume form, so plain weighted sums
/// integrate fields over the manifold.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    /// `n x n` uniform grid on the unit torus, node `(ix, iy)` at
    /// `(ix/n, iy/n)`, row-major index `iy * n + ix`.
    Torus { background: Background, n_side: usize },
    /// Staggered colatitude/longitude grid. Rows at
    /// `theta_i = (i + 1/2) pi / n_theta`, columns at `phi_j = 2 pi j / n_phi`,
    /// index `i * n_phi + j`. Cell-exact weights, so they sum to the total
    /// volume to machine precision.
    Sphere {
        background: Background,
        n_theta: usize,
        n_phi: usize,
    },
    /// Uniform grid in `t = log |z|^2` over `[t_min, t_max]`, `t_max < 0`.
    /// Fields on this grid are radial profiles; weights include the full
    /// angular factor `2 pi`.
    Radial {
        background: Background,
        ts: Vec<f64>,
    },
}

impl Grid {
    pub fn torus(n_side: usize) -> Result<Self> {
        if n_side < 4 {
            return Err(Error::invalid("torus grid needs at least 4 nodes per side"));
        }
        Ok(Grid::Torus {
            background: Background::flat_torus(),
            n_side,
        })
    }

    pub fn sphere(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta < 4 || n_phi < 8 {
            return Err(Error::invalid("sphere grid too coarse"));
        }
        Ok(Grid::Sphere {
            background: Background::fubini_study_sphere(),
            n_theta,
            n_phi,
        })
    }

    pub fn radial(n: u32, t_min: f64, t_max: f64, count: usize) -> Result<Self> {
        if !(t_min < t_max && t_max < 0.0) {
            return Err(Error::invalid(format!(
                "radial grid needs t_min < t_max < 0, got [{t_min}, {t_max}]"
            )));
        }
        if count < 8 {
            return Err(Error::invalid("radial grid too coarse"));
        }
        let step = (t_max - t_min) / (count - 1) as f64;
        let ts: Vec<f64> = (0..count).map(|i| t_min + step * i as f64).collect();
        Ok(Grid::Radial {
            background: Background::radial_log_domain(n, t_max),
            ts,
        })
    }

    pub fn background(&self) -> &Background {
        match self {
            Grid::Torus { background, .. }
            | Grid::Sphere { background, .. }
            | Grid::Radial { background, .. } => background,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Grid::Torus { n_side, .. } => n_side * n_side,
            Grid::Sphere { n_theta, n_phi, .. } => n_theta * n_phi,
            Grid::Radial { ts, .. } => ts.len(),
        }
    }

    /// Chart coordinates of node `i`.
    pub fn position(&self, i: usize) -> Point {
        match self {
            Grid::Torus { n_side, .. } => {
                let h = 1.0 / *n_side as f64;
                [(i % n_side) as f64 * h, (i / n_side) as f64 * h]
            }
            Grid::Sphere { n_theta, n_phi, .. } => {
                let dt = PI / *n_theta as f64;
                let dp = 2.0 * PI / *n_phi as f64;
                [((i / n_phi) as f64 + 0.5) * dt, (i % n_phi) as f64 * dp]
            }
            Grid::Radial { ts, .. } => [(0.5 * ts[i]).exp(), 0.0],
        }
    }

    /// Quadrature weight of node `i` with respect to the reference volume.
    pub fn weight(&self, i: usize) -> f64 {
        match self {
            Grid::Torus { n_side, .. } => {
                let h = 1.0 / *n_side as f64;
                h * h
            }
            Grid::Sphere {
                n_theta, n_phi, ..
            } => {
                let dt = PI / *n_theta as f64;
                let dp = 2.0 * PI / *n_phi as f64;
                let row = i / n_phi;
                let r2 = SPHERE_RADIUS * SPHERE_RADIUS;
                r2 * ((row as f64 * dt).cos() - ((row + 1) as f64 * dt).cos()) * dp
            }
            Grid::Radial { ts, .. } => {
                let k = i;
                let left = if k == 0 { 0.0 } else { 0.5 * (ts[k] - ts[k - 1]) };
                let right = if k + 1 == ts.len() {
                    0.0
                } else {
                    0.5 * (ts[k + 1] - ts[k])
                };
                2.0 * PI * ts[k].exp() * (left + right)
            }
        }
    }

    /// Total reference volume: the exact value for the closed backgrounds,
    /// the quadrature sum for the radial chart domain.
    pub fn total_volume(&self) -> f64 {
        match self {
            Grid::Torus { .. } | Grid::Sphere { .. } => 1.0,
            Grid::Radial { .. } => (0..self.node_count()).map(|i| self.weight(i)).sum(),
        }
    }

    /// Representative spacing: chart spacing on the torus, mean great-circle
    /// row spacing on the sphere, minimal radial increment on the log grid.
    pub fn spacing(&self) -> f64 {
        match self {
            Grid::Torus { n_side, .. } => 1.0 / *n_side as f64,
            Grid::Sphere { n_theta, .. } => PI * SPHERE_RADIUS / *n_theta as f64,
            Grid::Radial { ts, .. } => {
                let mut h = f64::MAX;
                for w in ts.windows(2) {
                    let r0 = (0.5 * w[0]).exp();
                    let r1 = (0.5 * w[1]).exp();
                    h = h.min(r1 - r0);
                }
                h
            }
        }
    }

    pub fn t_values(&self) -> Option<&[f64]> {
        match self {
            Grid::Radial { ts, .. } => Some(ts),
            _ => None,
        }
    }

    pub fn descriptor(&self) -> GridDescriptor {
        match self {
            Grid::Torus { background, n_side } => GridDescriptor {
                kind: background.kind,
                n: background.n,
                resolution: vec![*n_side, *n_side],
                bounds: vec![0.0, 1.0],
            },
            Grid::Sphere {
                background,
                n_theta,
                n_phi,
            } => GridDescriptor {
                kind: background.kind,
                n: background.n,
                resolution: vec![*n_theta, *n_phi],
                bounds: vec![0.0, PI, 0.0, 2.0 * PI],
            },
            Grid::Radial { background, ts } => GridDescriptor {
                kind: background.kind,
                n: background.n,
                resolution: vec![ts.len()],
                bounds: vec![ts[0], ts[ts.len() - 1]],
            },
        }
    }

    pub fn from_descriptor(d: &GridDescriptor) -> Result<Self> {
        match d.kind {
            BackgroundKind::FlatTorus => Grid::torus(d.resolution[0]),
            BackgroundKind::FubiniStudySphere => Grid::sphere(d.resolution[0], d.resolution[1]),
            BackgroundKind::RadialLogDomain => {
                Grid::radial(d.n, d.bounds[0], d.bounds[1], d.resolution[0])
            }
        }
    }
}

/// Serializable grid description; enough to rebuild the grid bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDescriptor {
    pub kind: BackgroundKind,
    pub n: u32,
    pub resolution: Vec<usize>,
    pub bounds: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_distances() {
        let bg = Background::flat_torus();
        assert_eq!(background_distance(&bg, [0.0, 0.0], [0.5, 0.0]), 0.5);
        assert_eq!(background_distance(&bg, [0.3, 0.7], [0.3, 0.7]), 0.0);
        assert!((background_distance(&bg, [0.0, 0.0], [0.9, 0.0]) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn torus_exp_map_is_translation() {
        let bg = Background::flat_torus();
        let p = exp_map(&bg, [0.2, 0.3], [0.1, 0.0]).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-15 && (p[1] - 0.3).abs() < 1e-15);
        let q = exp_map(&bg, [0.2, 0.3], [0.0, 0.0]).unwrap();
        assert_eq!(q, [0.2, 0.3]);
        assert!(exp_map(&bg, [0.0, 0.0], [0.6, 0.0]).is_err());
    }

    #[test]
    fn sphere_exp_map_matches_great_circle_distance() {
        let bg = Background::fubini_study_sphere();
        let z = [1.1, 2.3];
        for &(a, b) in &[(0.05, 0.0), (0.0, 0.08), (0.03, -0.04), (-0.06, 0.02)] {
            let zeta = [a, b];
            let len = f64::hypot(a, b);
            let q = exp_map(&bg, z, zeta).unwrap();
            assert!(
                (background_distance(&bg, z, q) - len).abs() < 1e-10,
                "zeta {zeta:?}"
            );
        }
    }

    #[test]
    fn quadrature_weights_sum_to_volume() {
        for grid in [Grid::torus(32).unwrap(), Grid::sphere(24, 48).unwrap()] {
            let sum: f64 = (0..grid.node_count()).map(|i| grid.weight(i)).sum();
            assert!(
                (sum - grid.total_volume()).abs() / grid.total_volume() < 1e-8,
                "{sum} vs {}",
                grid.total_volume()
            );
        }
    }

    #[test]
    fn sphere_density_profile() {
        let bg = Background::fubini_study_sphere();
        let at_pole = volume_density(&bg, [1e-9, 0.0]);
        let far = volume_density(&bg, [PI - 1e-3, 0.0]);
        assert!(at_pole > far);
        assert!((at_pole - 4.0 * SPHERE_RADIUS * SPHERE_RADIUS).abs() < 1e-12);
    }

    #[test]
    fn radial_weights_match_polar_quadrature() {
        // 2 pi e^t dt against the 2-d polar measure 2 r dr dtheta of
        // i dz ^ dzbar: integrate r^2 = e^t both ways.
        let grid = Grid::radial(1, -8.0, -0.2, 16001).unwrap();
        let ts = grid.t_values().unwrap();
        let num: f64 = (0..grid.node_count())
            .map(|i| grid.weight(i) * ts[i].exp())
            .sum();
        let exact = PI * ((2.0f64 * -0.2).exp() - (2.0f64 * -8.0).exp());
        assert!((num - exact).abs() / exact < 1e-6, "{num} vs {exact}");
    }

    #[test]
    fn distance_axioms_on_sampled_triples() {
        let grids = [
            Grid::torus(16).unwrap(),
            Grid::sphere(12, 24).unwrap(),
            Grid::radial(1, -6.0, -0.5, 64).unwrap(),
        ];
        for grid in &grids {
            let bg = grid.background();
            let nc = grid.node_count();
            let pick = |k: usize| grid.position((k * 7919) % nc);
            for k in 0..40 {
                let (a, b, c) = (pick(k), pick(k + 13), pick(k + 29));
                let dab = background_distance(bg, a, b);
                let dba = background_distance(bg, b, a);
                assert!((dab - dba).abs() < 1e-12);
                let dac = background_distance(bg, a, c);
                let dcb = background_distance(bg, c, b);
                assert!(dab <= dac + dcb + 1e-9);
            }
            let p = grid.position(nc / 2);
            assert_eq!(background_distance(bg, p, p), 0.0);
        }
    }

    #[test]
    fn descriptor_round_trip() {
        for grid in [
            Grid::torus(16).unwrap(),
            Grid::sphere(12, 24).unwrap(),
            Grid::radial(2, -9.0, -1.0, 33).unwrap(),
        ] {
            let d = grid.descriptor();
            let text = serde_json::to_string(&d).unwrap();
            let back: GridDescriptor = serde_json::from_str(&text).unwrap();
            assert_eq!(Grid::from_descriptor(&back).unwrap(), grid);
        }
    }
}
