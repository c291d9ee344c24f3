//! Smoothing of potentials over geodesic balls, the monotonicity constant
//! certification, the Kiselman-Legendre transform and the closeness and
//! quasi-plurisubharmonicity checks attached to them.
//!
//! The smoothing weight is a radial profile in `|zeta|^2 / t^2`, constant on
//! `[0, 3/4]`, smoothly cut off at 1, normalized so the discrete weights of
//! every node sum to one exactly (so constants are preserved to rounding and
//! the operator is monotone).  On the torus the smoothing is an exact
//! circular convolution evaluated spectrally; on the radial grid it is a
//! two-dimensional disk quadrature collapsed to angular averages; on the
//! sphere it is a direct geodesic-ball quadrature.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;
use crate::field::{self, laplacian, ScalarField};
use crate::geometry::{background_distance, Grid, SPHERE_RADIUS};

// ---------------------------------------------------------------------------
// Kernel profile.
// ---------------------------------------------------------------------------

/// Radial smoothing profile with its one-dimensional mass and moment.
#[derive(Debug, Clone)]
pub struct SmoothingKernel {
    mass_1d: f64,
    moment_1d: f64,
}

impl SmoothingKernel {
    /// The standard profile: 1 on `[0, 3/4]`, `exp(1 - 1/(1 - y^2))` with
    /// `y = 4x - 3` on `(3/4, 1)`, zero beyond.
    pub fn standard() -> Self {
        let n = 4096;
        let h = 1.0 / n as f64;
        let mut mass = 0.0;
        let mut moment = 0.0;
        // Composite Simpson over [0, 1].
        for i in 0..=n {
            let x = i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let p = profile_raw(x);
            mass += w * p;
            moment += w * x * p;
        }
        SmoothingKernel {
            mass_1d: mass * h / 3.0,
            moment_1d: moment * h / 3.0,
        }
    }

    /// Unnormalized profile value at `x = |zeta|^2 / t^2`.
    pub fn profile(&self, x: f64) -> f64 {
        profile_raw(x)
    }

    /// Mass of the induced two-dimensional unit-radius kernel before
    /// normalization, `pi * int_0^1 profile`.
    pub fn mass_2d_unit(&self) -> f64 {
        std::f64::consts::PI * self.mass_1d
    }

    /// Coefficient `m2` in the flat expansion
    /// `rho_t u - u = m2 t^2` for the calibrated potential `|z|^2`
    /// (equivalently `int k_1(|w|) |w|^2 dw` of the unit-mass kernel).
    pub fn potential_gap_coefficient(&self) -> f64 {
        self.moment_1d / self.mass_1d
    }
}

fn profile_raw(x: f64) -> f64 {
    if x <= 0.75 {
        1.0
    } else if x >= 1.0 {
        0.0
    } else {
        let y = 4.0 * x - 3.0;
        (1.0 - 1.0 / (1.0 - y * y)).exp()
    }
}

/// Log-uniform grid of smoothing radii ending exactly at `delta`.
pub fn log_t_grid(t_floor: f64, delta: f64, count: usize) -> Result<Vec<f64>> {
    if !(t_floor > 0.0 && t_floor < delta) {
        return Err(Error::invalid(format!(
            "need 0 < t_floor < delta, got {t_floor:.3e}, {delta:.3e}"
        )));
    }
    if count < 2 {
        return Err(Error::invalid("radius grid needs at least 2 points"));
    }
    let la = t_floor.ln();
    let lb = delta.ln();
    let mut ts: Vec<f64> = (0..count)
        .map(|i| (la + (lb - la) * i as f64 / (count - 1) as f64).exp())
        .collect();
    *ts.last_mut().unwrap() = delta;
    Ok(ts)
}

// ---------------------------------------------------------------------------
// Smoothing engines.
// ---------------------------------------------------------------------------

/// Precomputed smoothing engine for one field; evaluates `rho_t u` for any
/// radius up to the construction bound.
pub enum Smoother {
    Torus {
        grid: Arc<Grid>,
        n: usize,
        u_hat: Vec<Complex64>,
        kernel: SmoothingKernel,
        t_max: f64,
    },
    Radial {
        grid: Arc<Grid>,
        /// Angular averages `S[i][q]` of `u` over circles of radius
        /// `rho_grid[q]` centered at node `i`, row-major `i * q_len + q`.
        s_table: Vec<f64>,
        rho_grid: Vec<f64>,
        kernel: SmoothingKernel,
        t_min: f64,
        t_max: f64,
    },
    Sphere {
        grid: Arc<Grid>,
        u: Vec<f64>,
        kernel: SmoothingKernel,
        t_max: f64,
    },
}

/// Angular quadrature points for the radial disk averages.
const RADIAL_ANGULAR_POINTS: usize = 64;
/// Radii per unit log for the shared radial quadrature grid.
const RADIAL_RHO_POINTS: usize = 192;

impl Smoother {
    /// Build an engine able to evaluate `rho_t u` for `t` in
    /// `[t_min_request, t_max_request]`.
    pub fn new(
        u: &ScalarField,
        kernel: &SmoothingKernel,
        t_min_request: f64,
        t_max_request: f64,
    ) -> Result<Self> {
        let grid = u.grid().clone();
        let bg = grid.background();
        if !(t_max_request > 0.0) || t_max_request >= bg.injectivity_radius {
            return Err(Error::invalid(format!(
                "smoothing radius {t_max_request:.3e} outside (0, {:.3e})",
                bg.injectivity_radius
            )));
        }
        if !(t_min_request > 0.0 && t_min_request <= t_max_request) {
            return Err(Error::invalid("empty smoothing radius range"));
        }
        Ok(match &*grid {
            Grid::Torus { n_side, .. } => Smoother::Torus {
                n: *n_side,
                u_hat: fft::forward_real(u.values(), *n_side),
                grid,
                kernel: kernel.clone(),
                t_max: t_max_request,
            },
            Grid::Radial { ts, .. } => {
                let rho_min = t_min_request / 24.0;
                let decades = (t_max_request / rho_min).ln();
                let q_len =
                    ((decades * RADIAL_RHO_POINTS as f64 / std::f64::consts::LN_10).ceil() as usize)
                        .max(48);
                let rho_grid: Vec<f64> = (0..q_len)
                    .map(|q| rho_min * (decades * q as f64 / (q_len - 1) as f64).exp())
                    .collect();
                let s_table = radial_angular_table(ts, u.values(), &rho_grid);
                Smoother::Radial {
                    grid,
                    s_table,
                    rho_grid,
                    kernel: kernel.clone(),
                    t_min: t_min_request,
                    t_max: t_max_request,
                }
            }
            Grid::Sphere { .. } => Smoother::Sphere {
                u: u.values().to_vec(),
                grid,
                kernel: kernel.clone(),
                t_max: t_max_request,
            },
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        match self {
            Smoother::Torus { grid, .. }
            | Smoother::Radial { grid, .. }
            | Smoother::Sphere { grid, .. } => grid,
        }
    }

    /// Evaluate the smoothing at radius `t`.
    pub fn smooth(&self, t: f64) -> Result<ScalarField> {
        match self {
            Smoother::Torus {
                grid,
                n,
                u_hat,
                kernel,
                t_max,
            } => {
                if !(t > 0.0 && t <= *t_max) {
                    return Err(Error::invalid(format!("radius {t:.3e} out of range")));
                }
                let image = torus_kernel_image(*n, t, kernel)?;
                let k_hat = fft::forward_real(&image, *n);
                let vals = fft::convolve(u_hat, &k_hat, *n);
                ScalarField::new(grid.clone(), vals)
            }
            Smoother::Radial {
                grid,
                s_table,
                rho_grid,
                kernel,
                t_min,
                t_max,
            } => {
                if !(t >= 0.999 * t_min && t <= 1.0001 * t_max) {
                    return Err(Error::invalid(format!("radius {t:.3e} out of range")));
                }
                let q_len = rho_grid.len();
                // Quadrature weights for this radius: profile * rho^2 d(log rho),
                // normalized to unit mass.
                let mut w = vec![0.0; q_len];
                let lstep = (rho_grid[q_len - 1] / rho_grid[0]).ln() / (q_len - 1) as f64;
                let mut total = 0.0;
                for q in 0..q_len {
                    let rho = rho_grid[q];
                    if rho < t {
                        w[q] = kernel.profile(rho * rho / (t * t)) * rho * rho * lstep;
                        total += w[q];
                    }
                }
                if total <= 0.0 {
                    return Err(Error::numerical(format!(
                        "smoothing radius {t:.3e} below the quadrature resolution"
                    )));
                }
                let nodes = grid.node_count();
                let vals: Vec<f64> = (0..nodes)
                    .into_par_iter()
                    .map(|i| {
                        let row = &s_table[i * q_len..(i + 1) * q_len];
                        let mut acc = 0.0;
                        for q in 0..q_len {
                            if w[q] > 0.0 {
                                acc += w[q] * row[q];
                            }
                        }
                        acc / total
                    })
                    .collect();
                ScalarField::new(grid.clone(), vals)
            }
            Smoother::Sphere {
                grid,
                u,
                kernel,
                t_max,
            } => {
                if !(t > 0.0 && t <= *t_max) {
                    return Err(Error::invalid(format!("radius {t:.3e} out of range")));
                }
                sphere_ball_average(grid, u, kernel, t)
            }
        }
    }
}

/// Discrete kernel weights on the torus, wrapped and normalized to total
/// mass one.
fn torus_kernel_image(n: usize, t: f64, kernel: &SmoothingKernel) -> Result<Vec<f64>> {
    let h = 1.0 / n as f64;
    let reach = (t / h).ceil() as usize;
    if 2 * reach + 1 > n {
        return Err(Error::invalid("smoothing radius exceeds half the torus"));
    }
    let mut image = vec![0.0; n * n];
    let mut total = 0.0;
    for dy in -(reach as isize)..=(reach as isize) {
        let y = dy as f64 * h;
        for dx in -(reach as isize)..=(reach as isize) {
            let x = dx as f64 * h;
            let val = kernel.profile((x * x + y * y) / (t * t));
            if val > 0.0 {
                let ix = dx.rem_euclid(n as isize) as usize;
                let iy = dy.rem_euclid(n as isize) as usize;
                image[iy * n + ix] = val;
                total += val;
            }
        }
    }
    if total <= 0.0 {
        return Err(Error::numerical(format!(
            "smoothing radius {t:.3e} below the grid resolution"
        )));
    }
    let inv = 1.0 / total;
    for v in image.iter_mut() {
        *v *= inv;
    }
    Ok(image)
}

/// Angular averages of a radial profile over circles of the given radii
/// around every node.
fn radial_angular_table(ts: &[f64], u: &[f64], rho_grid: &[f64]) -> Vec<f64> {
    let m = ts.len();
    let h = ts[1] - ts[0];
    let q_len = rho_grid.len();
    let eval = |t_query: f64| -> f64 { cubic_interp(ts, u, h, t_query) };
    (0..m)
        .into_par_iter()
        .flat_map_iter(|i| {
            let r_i = (0.5 * ts[i]).exp();
            let mut row = Vec::with_capacity(q_len);
            for &rho in rho_grid {
                let mut acc = 0.0;
                for j in 0..RADIAL_ANGULAR_POINTS {
                    let theta = (j as f64 + 0.5) * std::f64::consts::PI
                        / RADIAL_ANGULAR_POINTS as f64;
                    let d2 = r_i * r_i + rho * rho + 2.0 * r_i * rho * theta.cos();
                    let val = if d2 <= 0.0 {
                        u[0]
                    } else {
                        eval(d2.ln())
                    };
                    acc += val;
                }
                row.push(acc / RADIAL_ANGULAR_POINTS as f64);
            }
            row
        })
        .collect()
}

/// Cubic interpolation of a profile on its uniform `t`-grid; constant below
/// the puncture, linear continuation beyond the outer edge.
fn cubic_interp(ts: &[f64], u: &[f64], h: f64, t: f64) -> f64 {
    let m = ts.len();
    if t <= ts[0] {
        return u[0];
    }
    if t >= ts[m - 1] {
        let slope = (u[m - 1] - u[m - 2]) / h;
        return u[m - 1] + slope * (t - ts[m - 1]);
    }
    let pos = (t - ts[0]) / h;
    let j = (pos.floor() as usize).min(m - 2);
    let s = pos - j as f64;
    if j == 0 || j + 2 >= m {
        return u[j] * (1.0 - s) + u[j + 1] * s;
    }
    let (p0, p1, p2, p3) = (u[j - 1], u[j], u[j + 1], u[j + 2]);
    let a = -0.5 * p0 + 1.5 * p1 - 1.5 * p2 + 0.5 * p3;
    let b = p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3;
    let c = 0.5 * (p2 - p0);
    ((a * s + b) * s + c) * s + p1
}

/// Direct geodesic-ball average on the sphere grid.
fn sphere_ball_average(
    grid: &Arc<Grid>,
    u: &[f64],
    kernel: &SmoothingKernel,
    t: f64,
) -> Result<ScalarField> {
    let (nt, np) = match &**grid {
        Grid::Sphere { n_theta, n_phi, .. } => (*n_theta, *n_phi),
        _ => unreachable!(),
    };
    let bg = grid.background();
    let dtheta = std::f64::consts::PI / nt as f64;
    let row_reach = ((t / SPHERE_RADIUS) / dtheta).ceil() as usize + 1;
    let positions: Vec<[f64; 2]> = (0..grid.node_count()).map(|i| grid.position(i)).collect();
    let weights: Vec<f64> = (0..grid.node_count()).map(|i| grid.weight(i)).collect();
    let vals: Vec<f64> = (0..grid.node_count())
        .into_par_iter()
        .map(|i| {
            let row = i / np;
            let lo = row.saturating_sub(row_reach);
            let hi = (row + row_reach).min(nt - 1);
            let mut acc = 0.0;
            let mut mass = 0.0;
            for rr in lo..=hi {
                for cc in 0..np {
                    let j = rr * np + cc;
                    let d = background_distance(bg, positions[i], positions[j]);
                    if d < t {
                        let w = kernel.profile(d * d / (t * t)) * weights[j];
                        acc += w * u[j];
                        mass += w;
                    }
                }
            }
            if mass > 0.0 {
                acc / mass
            } else {
                u[i]
            }
        })
        .collect();
    ScalarField::new(grid.clone(), vals)
}

/// One-shot smoothing of a field over geodesic balls of radius `delta`.
pub fn demailly_smooth(
    u: &ScalarField,
    delta: f64,
    kernel: &SmoothingKernel,
) -> Result<ScalarField> {
    let smoother = Smoother::new(u, kernel, delta, delta)?;
    smoother.smooth(delta)
}

// ---------------------------------------------------------------------------
// Monotonicity constant and the Kiselman-Legendre transform.
// ---------------------------------------------------------------------------

/// Certified monotonicity constant: the smallest `K >= 0` making
/// `t -> rho_t u + K t^2` nondecreasing along the radius grid at every
/// node, including the `t -> 0` endpoint (where the smoothing tends to the
/// field itself).
pub fn estimate_k(u: &ScalarField, smoother: &Smoother, t_grid: &[f64]) -> Result<f64> {
    const K_CAP: f64 = 1e6;
    let mut k_needed: f64 = 0.0;
    let mut prev: Option<(f64, ScalarField)> = None;
    for &t in t_grid {
        let cur = smoother.smooth(t)?;
        // Endpoint pair (0, t): rho_0 u = u exactly.
        for (a, b) in u.values().iter().zip(cur.values()) {
            let drop = a - b;
            if drop > 0.0 {
                k_needed = k_needed.max(drop / (t * t));
            }
        }
        if let Some((tp, prev_f)) = &prev {
            let denom = t * t - tp * tp;
            for (a, b) in prev_f.values().iter().zip(cur.values()) {
                let drop = a - b;
                if drop > 0.0 {
                    k_needed = k_needed.max(drop / denom);
                }
            }
        }
        prev = Some((t, cur));
    }
    if k_needed > K_CAP {
        return Err(Error::numerical(format!(
            "no monotonicity constant below {K_CAP:.1e} certifies this field (needed {k_needed:.3e}); \
             the discretization does not resolve the smoothing radii"
        )));
    }
    Ok(k_needed)
}

/// Result of the Kiselman-Legendre transform at penalty `c` and radius
/// `delta`.
#[derive(Debug, Clone)]
pub struct KiselmanResult {
    /// The transform `U_delta`: per-node infimum of
    /// `rho_t u + K t^2 - c log(t/delta) - K delta^2` over the radius grid.
    pub u_delta_raw: ScalarField,
    /// Minimizing radius per node.
    pub argmin_t: Vec<f64>,
    pub c: f64,
    pub delta: f64,
    pub k_const: f64,
    pub a_prime: f64,
    /// `U_delta / (1 + A' c)`, the quasi-plurisubharmonic normalization.
    pub u_delta: ScalarField,
}

/// Evaluate the Kiselman-Legendre transform over a log-spaced radius grid
/// whose last entry must be `delta` itself.
pub fn kiselman_legendre(
    u: &ScalarField,
    smoother: &Smoother,
    c: f64,
    delta: f64,
    k_const: f64,
    t_grid: &[f64],
) -> Result<KiselmanResult> {
    if t_grid.is_empty() {
        return Err(Error::invalid("empty radius grid"));
    }
    if c < 0.0 || k_const < 0.0 {
        return Err(Error::invalid("penalty and monotonicity constant must be >= 0"));
    }
    let last = *t_grid.last().unwrap();
    if (last - delta).abs() > 1e-12 * delta {
        return Err(Error::invalid("radius grid must end exactly at delta"));
    }
    let n = u.len();
    let mut best = vec![f64::INFINITY; n];
    let mut argmin = vec![0.0; n];
    for &t in t_grid {
        let smoothed = smoother.smooth(t)?;
        let penalty = k_const * t * t - c * (t / delta).ln() - k_const * delta * delta;
        for i in 0..n {
            let v = smoothed.values()[i] + penalty;
            if v < best[i] {
                best[i] = v;
                argmin[i] = t;
            }
        }
    }
    let a_prime = u.grid().background().a_prime();
    let u_delta_raw = ScalarField::new(u.grid().clone(), best)?.with_tag("U_delta");
    let u_delta = u_delta_raw
        .map(|v| v / (1.0 + a_prime * c))?
        .with_tag("u_delta");
    Ok(KiselmanResult {
        u_delta_raw,
        argmin_t: argmin,
        c,
        delta,
        k_const,
        a_prime,
        u_delta,
    })
}

/// Most negative eigenvalue of the transformed form relative to the
/// reference form: `min(1 + laplacian f)` in dimension 1.
pub fn psh_defect(f: &ScalarField) -> Result<f64> {
    Ok(field::inf(&laplacian(f)?) + 1.0)
}

/// Closeness table `delta -> int |rho_delta u - u|` with a log-log slope.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ClosenessTable {
    pub deltas: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
}

pub fn check_l1_closeness(
    u: &ScalarField,
    deltas: &[f64],
    kernel: &SmoothingKernel,
) -> Result<ClosenessTable> {
    if deltas.len() < 3 {
        return Err(Error::invalid("need at least 3 radii for a slope fit"));
    }
    let mut sorted = deltas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let smoother = Smoother::new(u, kernel, sorted[0], sorted[sorted.len() - 1])?;
    let grid = u.grid();
    let mut values = Vec::with_capacity(sorted.len());
    for &d in &sorted {
        let s = smoother.smooth(d)?;
        let l1: f64 = s
            .values()
            .iter()
            .zip(u.values())
            .enumerate()
            .map(|(i, (a, b))| (a - b).abs() * grid.weight(i))
            .sum();
        values.push(l1);
    }
    let pts: Vec<(f64, f64)> = sorted
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&d, &v)| (d.ln(), v.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::numerical(
            "fewer than 3 nonzero closeness values; slope fit refused",
        ));
    }
    let slope = least_squares_slope(&pts);
    Ok(ClosenessTable {
        deltas: sorted,
        values,
        slope,
    })
}

/// Slope of the least-squares line through `(x, y)` pairs.
pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn torus_grid(n: usize) -> Arc<Grid> {
        Arc::new(Grid::torus(n).unwrap())
    }

    /// Independent 2-d quadrature of the normalized kernel against a test
    /// function, on the unit-radius scale.
    fn kernel_quadrature(kernel: &SmoothingKernel, f: impl Fn(f64, f64) -> f64) -> f64 {
        let m = 801;
        let h = 2.0 / (m - 1) as f64;
        let mut acc = 0.0;
        for iy in 0..m {
            let y = -1.0 + iy as f64 * h;
            let wy = if iy == 0 || iy == m - 1 { 0.5 } else { 1.0 };
            for ix in 0..m {
                let x = -1.0 + ix as f64 * h;
                let wx = if ix == 0 || ix == m - 1 { 0.5 } else { 1.0 };
                acc += wx * wy * kernel.profile(x * x + y * y) * f(x, y);
            }
        }
        acc * h * h / kernel.mass_2d_unit()
    }

    #[test]
    fn kernel_mass_and_moment() {
        let kernel = SmoothingKernel::standard();
        // Unit mass under its own normalization.
        let mass = kernel_quadrature(&kernel, |_, _| 1.0);
        assert!((mass - 1.0).abs() < 1e-5, "mass {mass}");
        let m2 = kernel_quadrature(&kernel, |x, y| x * x + y * y);
        assert!(
            (m2 - kernel.potential_gap_coefficient()).abs() < 1e-5,
            "{m2} vs {}",
            kernel.potential_gap_coefficient()
        );
        // The profile is constant on [0,3/4] and vanishes at 1.
        assert_eq!(kernel.profile(0.2), kernel.profile(0.74));
        assert_eq!(kernel.profile(1.0), 0.0);
        assert!(kernel.profile(0.9) > 0.0 && kernel.profile(0.9) < 1.0);
    }

    #[test]
    fn smoothing_preserves_constants_everywhere() {
        let kernel = SmoothingKernel::standard();
        for grid in [
            torus_grid(64),
            Arc::new(Grid::sphere(16, 32).unwrap()),
            Arc::new(Grid::radial(1, -10.0, -1.0, 512).unwrap()),
        ] {
            let delta = 0.25 * grid.background().injectivity_radius;
            let u = ScalarField::constant(grid, 2.75);
            let s = demailly_smooth(&u, delta, &kernel).unwrap();
            for &v in s.values() {
                assert!((v - 2.75).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn torus_attenuation_matches_kernel_quadrature() {
        let kernel = SmoothingKernel::standard();
        let grid = torus_grid(256);
        let u = ScalarField::from_fn(grid, |p| (2.0 * PI * p[0]).sin()).unwrap();
        for delta in [0.05, 0.1] {
            // Convolving sin(2 pi x) attenuates it by the kernel cosine
            // transform at frequency 2 pi delta.
            let expect = kernel_quadrature(&kernel, |x, _| (2.0 * PI * delta * x).cos());
            let s = demailly_smooth(&u, delta, &kernel).unwrap();
            let measured = s.values()[64] / (2.0 * PI * (64.0 / 256.0)).sin();
            assert!(
                (measured - expect).abs() < 0.01,
                "delta {delta}: {measured} vs {expect}"
            );
            assert!(expect < 1.0 && expect > 0.8);
        }
    }

    #[test]
    fn flat_potential_gap_is_second_moment() {
        let kernel = SmoothingKernel::standard();
        let m2 = kernel.potential_gap_coefficient();
        // Torus: squared distance to the center is the calibrated |z|^2
        // potential near the center.
        let grid = torus_grid(256);
        let u = ScalarField::from_fn(grid.clone(), |p| {
            let dx = (p[0] - 0.5).abs().min(1.0 - (p[0] - 0.5).abs());
            let dy = (p[1] - 0.5).abs().min(1.0 - (p[1] - 0.5).abs());
            dx * dx + dy * dy
        })
        .unwrap();
        let delta = 0.08;
        let s = demailly_smooth(&u, delta, &kernel).unwrap();
        let center = 128 * 256 + 128;
        let gap = s.values()[center] - u.values()[center];
        let expect = m2 * delta * delta;
        assert!(
            (gap - expect).abs() / expect < 0.02,
            "torus gap {gap} vs {expect}"
        );

        // Radial grid: the profile e^t is |z|^2.
        let rgrid = Arc::new(Grid::radial(1, -9.0, -0.3, 4096).unwrap());
        let ts = rgrid.t_values().unwrap().to_vec();
        let ur = ScalarField::new(rgrid.clone(), ts.iter().map(|&t| t.exp()).collect()).unwrap();
        let delta_r = 0.05;
        let sr = demailly_smooth(&ur, delta_r, &kernel).unwrap();
        // Probe an interior node with radius well above delta.
        let i = ts.iter().position(|&t| t > 2.0 * (0.35f64).ln()).unwrap();
        let gap_r = sr.values()[i] - ur.values()[i];
        let expect_r = m2 * delta_r * delta_r;
        assert!(
            (gap_r - expect_r).abs() / expect_r < 0.02,
            "radial gap {gap_r} vs {expect_r}"
        );
    }

    #[test]
    fn smoothing_is_monotone_and_linear() {
        let kernel = SmoothingKernel::standard();
        let grid = torus_grid(64);
        let u = ScalarField::from_fn(grid.clone(), |p| (2.0 * PI * p[0]).sin()).unwrap();
        let v = ScalarField::from_fn(grid.clone(), |p| {
            (2.0 * PI * p[0]).sin() + 0.3 * (1.0 + (4.0 * PI * p[1]).cos())
        })
        .unwrap();
        let su = demailly_smooth(&u, 0.07, &kernel).unwrap();
        let sv = demailly_smooth(&v, 0.07, &kernel).unwrap();
        for (a, b) in su.values().iter().zip(sv.values()) {
            assert!(a <= b + 1e-12);
        }
        // Linearity: rho(u + 2v) = rho(u) + 2 rho(v).
        let combo = ScalarField::new(
            grid,
            u.values()
                .iter()
                .zip(v.values())
                .map(|(a, b)| a + 2.0 * b)
                .collect(),
        )
        .unwrap();
        let sc = demailly_smooth(&combo, 0.07, &kernel).unwrap();
        for i in 0..sc.len() {
            let expect = su.values()[i] + 2.0 * sv.values()[i];
            assert!((sc.values()[i] - expect).abs() < 1e-11);
        }
    }

    #[test]
    fn monotonicity_constant_certifies_and_scales() {
        let kernel = SmoothingKernel::standard();
        let grid = torus_grid(128);
        // Genuinely plurisubharmonic local model: squared distance bump.
        let psh = ScalarField::from_fn(grid.clone(), |p| {
            let dx = (p[0] - 0.5).abs().min(1.0 - (p[0] - 0.5).abs());
            let dy = (p[1] - 0.5).abs().min(1.0 - (p[1] - 0.5).abs());
            dx * dx + dy * dy
        })
        .unwrap();
        let t_grid = log_t_grid(0.05, 0.12, 16).unwrap();
        let sm = Smoother::new(&psh, &kernel, 0.05, 0.12).unwrap();
        let k0 = estimate_k(&psh, &sm, &t_grid).unwrap();
        assert!(k0 < 1e-4, "flat psh model needs K = {k0}");

        // Reference-form-psh but not psh: a solved potential with negative
        // coordinate Laplacian somewhere.
        let raw = ScalarField::from_fn(grid.clone(), |p| {
            1.0 + 0.8 * (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).sin()
        })
        .unwrap();
        let (e_f, _) = field::normalize_density(&raw).unwrap();
        let problem =
            crate::solver::MAProblem::new(grid, e_f, 2.0, "wavy").unwrap();
        let sol = crate::solver::solve_n1(&problem).unwrap();
        let sm1 = Smoother::new(&sol.u, &kernel, 0.05, 0.12).unwrap();
        let k1 = estimate_k(&sol.u, &sm1, &t_grid).unwrap();
        assert!(k1 > 1e-6, "expected a positive constant, got {k1}");
        // A-posteriori certificate: monotone along the grid with k1.
        let mut prev: Option<(f64, ScalarField)> = None;
        for &t in &t_grid {
            let cur = sm1.smooth(t).unwrap();
            for (a, b) in sol.u.values().iter().zip(cur.values()) {
                assert!(b + k1 * t * t >= a - 1e-10);
            }
            if let Some((tp, pf)) = &prev {
                for (a, b) in pf.values().iter().zip(cur.values()) {
                    assert!(b + k1 * t * t >= a + k1 * tp * tp - 1e-10);
                }
            }
            prev = Some((t, cur));
        }
        // Doubling the field at most doubles the certified constant.
        let doubled = sol.u.map(|v| 2.0 * v).unwrap();
        let sm2 = Smoother::new(&doubled, &kernel, 0.05, 0.12).unwrap();
        let k2 = estimate_k(&doubled, &sm2, &t_grid).unwrap();
        assert!(k2 <= 2.0 * k1 + 1e-9, "k2 {k2} vs 2 k1 {}", 2.0 * k1);
    }

    #[test]
    fn kiselman_endpoints_and_sandwich() {
        let kernel = SmoothingKernel::standard();
        let grid = torus_grid(128);
        let raw = ScalarField::from_fn(grid.clone(), |p| {
            1.0 + 0.6 * (2.0 * PI * p[0]).sin() + 0.3 * (2.0 * PI * p[1]).cos()
        })
        .unwrap();
        let (e_f, _) = field::normalize_density(&raw).unwrap();
        let problem = crate::solver::MAProblem::new(grid, e_f, 2.0, "test").unwrap();
        let sol = crate::solver::solve_n1(&problem).unwrap();
        let u = &sol.u;
        let delta = 0.1;
        let t_grid = log_t_grid(delta / 64.0, delta, 96).unwrap();
        let sm = Smoother::new(u, &kernel, t_grid[0], delta).unwrap();
        let k = estimate_k(u, &sm, &t_grid).unwrap();
        let rho_delta = sm.smooth(delta).unwrap();

        // c = 0: the penalty vanishes, the certified monotone family takes
        // its infimum at the smallest radius, so U sits at u - K delta^2 up
        // to the radius-grid resolution.
        let res0 = kiselman_legendre(u, &sm, 0.0, delta, k, &t_grid).unwrap();
        let gap_floor = sm.smooth(t_grid[0]).unwrap();
        for i in 0..u.len() {
            let lower = u.values()[i] - k * delta * delta;
            assert!(res0.u_delta_raw.values()[i] >= lower - 1e-10);
            let resolution =
                gap_floor.values()[i] - u.values()[i] + k * t_grid[0] * t_grid[0];
            assert!(res0.u_delta_raw.values()[i] <= lower + resolution.max(0.0) + 1e-10);
        }

        // Large c: the penalty dominates, the minimizer clamps at delta and
        // U equals the delta-smoothing exactly.
        let family_osc = 2.0 * field::oscillation(u) + k * delta * delta;
        let c_max = family_osc / (delta / t_grid[0]).ln() + 1.0;
        let res_big = kiselman_legendre(u, &sm, c_max, delta, k, &t_grid).unwrap();
        for i in 0..u.len() {
            assert_eq!(res_big.argmin_t[i], delta);
            assert!((res_big.u_delta_raw.values()[i] - rho_delta.values()[i]).abs() < 1e-12);
        }

        // Sandwich and normalization for a moderate penalty.
        let res = kiselman_legendre(u, &sm, 0.02, delta, k, &t_grid).unwrap();
        let a_prime = u.grid().background().a_prime();
        for i in 0..u.len() {
            let v = res.u_delta_raw.values()[i];
            assert!(v <= rho_delta.values()[i] + 1e-10);
            assert!(v >= u.values()[i] - k * delta * delta - 1e-10);
            assert!(res.argmin_t[i] > 0.0 && res.argmin_t[i] <= delta);
            assert!(
                (res.u_delta.values()[i] - v / (1.0 + a_prime * 0.02)).abs() < 1e-14
            );
        }

        // The transform does not decrease in c (the log penalty is
        // nonnegative for t <= delta).
        let res_lo = kiselman_legendre(u, &sm, 0.01, delta, k, &t_grid).unwrap();
        let res_hi = kiselman_legendre(u, &sm, 0.03, delta, k, &t_grid).unwrap();
        for i in 0..u.len() {
            assert!(res_lo.u_delta_raw.values()[i] <= res_hi.u_delta_raw.values()[i] + 1e-12);
        }
    }

    #[test]
    fn kiselman_constant_field_closed_form() {
        let kernel = SmoothingKernel::standard();
        let grid = torus_grid(64);
        let kappa = 3.7;
        let u = ScalarField::constant(grid, kappa);
        let delta = 0.1;
        let t_grid = log_t_grid(delta / 256.0, delta, 512).unwrap();
        let sm = Smoother::new(&u, &kernel, t_grid[0], delta).unwrap();
        let k = 2.0; // arbitrary positive constant, passed explicitly
        let c = 0.004; // interior minimizer: t* = sqrt(c / 2K) = 0.0316 < delta
        let res = kiselman_legendre(&u, &sm, c, delta, k, &t_grid).unwrap();
        let t_star = (c / (2.0 * k)).sqrt();
        let closed =
            kappa + k * t_star * t_star - c * (t_star / delta).ln() - k * delta * delta;
        for i in 0..u.len() {
            assert!((res.u_delta_raw.values()[i] - closed).abs() < 1e-6);
            assert!((res.argmin_t[i] - t_star).abs() / t_star < 0.02);
        }
    }

    #[test]
    fn defect_of_scaled_flat_potential() {
        // f = -0.5 (calibrated |z|^2 potential) on the radial grid:
        // 1 + laplacian = 1 - 0.5 exactly.
        let grid = Arc::new(Grid::radial(1, -8.0, -0.5, 1024).unwrap());
        let ts = grid.t_values().unwrap().to_vec();
        let f = ScalarField::new(grid, ts.iter().map(|&t| -0.5 * t.exp()).collect()).unwrap();
        let defect = psh_defect(&f).unwrap();
        assert!((defect - 0.5).abs() < 1e-6, "defect {defect}");
    }

    #[test]
    fn closeness_table_trivial_and_refusal() {
        let kernel = SmoothingKernel::standard();
        let grid = torus_grid(64);
        let c = ScalarField::constant(grid.clone(), 5.0);
        assert!(check_l1_closeness(&c, &[0.05, 0.08, 0.12], &kernel).is_err());
        let u = ScalarField::from_fn(grid, |p| (2.0 * PI * p[0]).sin()).unwrap();
        assert!(check_l1_closeness(&u, &[0.05, 0.1], &kernel).is_err());
        let table = check_l1_closeness(&u, &[0.04, 0.06, 0.09, 0.13], &kernel).unwrap();
        assert!(table.slope > 1.7, "slope {}", table.slope);
        for w in table.values.windows(2) {
            assert!(w[1] > w[0]);
        }
    }
}
