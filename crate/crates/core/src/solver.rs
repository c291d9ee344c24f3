//! Solvers for the dimension-1 equation `1 + laplacian(u) = e^F` on closed
//! grids, the radial reduction for rotation-invariant problems in any
//! dimension, and the auxiliary level-set solves used by the comparison
//! argument.
//!
//! The torus path inverts the discrete five-point operator through its
//! Fourier symbol, so the discrete residual is at rounding level.  The
//! sphere path runs Jacobi-preconditioned conjugate gradients on the
//! finite-volume operator.  The radial path reduces the determinant
//! equation `(f')^{n-1} f'' = G` to two cumulative integrations through
//! `w = (f')^n`, `w' = n G`.

use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;
use crate::field::{self, laplacian, ScalarField};
use crate::geometry::Grid;

/// Right-hand side data for the closed-background equation.
#[derive(Debug, Clone)]
pub struct MAProblem {
    grid: Arc<Grid>,
    e_f: ScalarField,
    /// Integrability exponent the scenario reports its norm at.
    pub p: f64,
    pub label: String,
    enforce_positive: bool,
}

impl MAProblem {
    /// A compatibility-normalized, strictly positive density.
    pub fn new(grid: Arc<Grid>, e_f: ScalarField, p: f64, label: impl Into<String>) -> Result<Self> {
        let min = field::inf(&e_f);
        if min <= 0.0 {
            return Err(Error::invalid(format!(
                "density must be positive everywhere (min {min:.3e})"
            )));
        }
        let problem = MAProblem {
            grid,
            e_f,
            p,
            label: label.into(),
            enforce_positive: true,
        };
        problem.check_compatibility()?;
        Ok(problem)
    }

    /// Manufactured right-hand side for order studies. Compatibility is
    /// still required, but the density may change sign; positivity of the
    /// solved metric is reported, not enforced.
    pub fn manufactured(
        grid: Arc<Grid>,
        rhs: ScalarField,
        p: f64,
        label: impl Into<String>,
    ) -> Result<Self> {
        let problem = MAProblem {
            grid,
            e_f: rhs,
            p,
            label: label.into(),
            enforce_positive: false,
        };
        problem.check_compatibility()?;
        Ok(problem)
    }

    fn check_compatibility(&self) -> Result<()> {
        let vol = self.grid.total_volume();
        let mass = self.e_f.integrate();
        if (mass - vol).abs() > 1e-10 * vol.max(1.0) {
            return Err(Error::invalid(format!(
                "density violates the compatibility normalization: integral {mass:.12e}, volume {vol:.12e}"
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn density(&self) -> &ScalarField {
        &self.e_f
    }
}

/// Solved potential with its verification record.
#[derive(Debug, Clone)]
pub struct MASolution {
    pub u: ScalarField,
    /// Sup-norm of the discrete equation mismatch.
    pub residual_sup: f64,
    /// `min(1 + laplacian u)`; positive iff the solved form is a metric.
    pub positivity_margin: f64,
    /// Constant added after the zero-mean solve to reach `inf u = 1`.
    pub normalization_shift: f64,
}

/// Solve the dimension-1 equation on a closed grid.
pub fn solve_n1(problem: &MAProblem) -> Result<MASolution> {
    let grid = problem.grid.clone();
    let rhs: Vec<f64> = problem.e_f.values().iter().map(|&v| v - 1.0).collect();
    let mut u = match &*grid {
        Grid::Torus { n_side, .. } => solve_torus(&rhs, *n_side),
        Grid::Sphere { .. } => solve_sphere(&grid, &rhs)?,
        Grid::Radial { .. } => {
            return Err(Error::invalid(
                "radial problems go through solve_radial, not the grid solver",
            ))
        }
    };
    let min = u.iter().cloned().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - min;
    for v in u.iter_mut() {
        *v += shift;
    }
    let u = ScalarField::new(grid, u)?.with_tag("u");
    let lap = laplacian(&u)?;
    let mut residual_sup: f64 = 0.0;
    let mut margin = f64::INFINITY;
    for (i, &l) in lap.values().iter().enumerate() {
        residual_sup = residual_sup.max((1.0 + l - problem.e_f.values()[i]).abs());
        margin = margin.min(1.0 + l);
    }
    if problem.enforce_positive && margin <= 0.0 {
        return Err(Error::numerical(format!(
            "solved form lost positivity (margin {margin:.3e})"
        )));
    }
    Ok(MASolution {
        u,
        residual_sup,
        positivity_margin: margin,
        normalization_shift: shift,
    })
}

/// Spectral inversion of the discrete five-point operator on the torus.
fn solve_torus(rhs: &[f64], n: usize) -> Vec<f64> {
    let mean = rhs.iter().sum::<f64>() / rhs.len() as f64;
    let centered: Vec<f64> = rhs.iter().map(|&v| v - mean).collect();
    let mut hat = fft::forward_real(&centered, n);
    let n2 = (n * n) as f64;
    let tau = 2.0 * std::f64::consts::PI / n as f64;
    // Symbol of the discrete density operator (half the coordinate
    // Laplacian): -N^2 [(1 - cos(2 pi k1 / N)) + (1 - cos(2 pi k2 / N))].
    for k2 in 0..n {
        let c2 = 1.0 - (tau * k2 as f64).cos();
        for k1 in 0..n {
            let idx = k2 * n + k1;
            if k1 == 0 && k2 == 0 {
                hat[idx] = Complex64::new(0.0, 0.0);
                continue;
            }
            let sym = -n2 * ((1.0 - (tau * k1 as f64).cos()) + c2);
            hat[idx] /= sym;
        }
    }
    fft::inverse_to_real(hat, n)
}

/// Weighted-inner-product conjugate gradients with Jacobi preconditioning
/// for the finite-volume operator on the sphere.
fn solve_sphere(grid: &Arc<Grid>, rhs: &[f64]) -> Result<Vec<f64>> {
    let nc = grid.node_count();
    let weights: Vec<f64> = (0..nc).map(|i| grid.weight(i)).collect();
    let vol: f64 = weights.iter().sum();
    let wdot = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(&weights)
            .map(|((x, y), w)| x * y * w)
            .sum()
    };
    // Solve (-Delta_lab) u = -b so the operator is positive semidefinite.
    let apply = |x: &ScalarField| -> Result<Vec<f64>> {
        Ok(laplacian(x)?.values().iter().map(|v| -v).collect())
    };
    let mean = wdot(rhs, &vec![1.0; nc]) / vol;
    let b: Vec<f64> = rhs.iter().map(|&v| -(v - mean)).collect();
    // Exact stencil diagonal of -Delta_lab for the Jacobi preconditioner.
    let mut diag = vec![0.0; nc];
    {
        let (nt, np) = match &**grid {
            Grid::Sphere { n_theta, n_phi, .. } => (*n_theta, *n_phi),
            _ => unreachable!(),
        };
        let dt = std::f64::consts::PI / nt as f64;
        let dp = 2.0 * std::f64::consts::PI / np as f64;
        let r2 = crate::geometry::SPHERE_RADIUS * crate::geometry::SPHERE_RADIUS;
        for i in 0..nt {
            let mut kappa = 2.0 * dt / (((i as f64 + 0.5) * dt).sin() * dp);
            if i > 0 {
                kappa += (i as f64 * dt).sin() * dp / dt;
            }
            if i + 1 < nt {
                kappa += ((i + 1) as f64 * dt).sin() * dp / dt;
            }
            let w = grid.weight(i * np);
            for j in 0..np {
                diag[i * np + j] = 0.5 * r2 * kappa / w;
            }
        }
    }
    let mut x = vec![0.0; nc];
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(v, d)| v / d).collect();
    let mut p = z.clone();
    let mut rz = wdot(&r, &z);
    let b_scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-30);
    let tol = 1e-12 * b_scale;
    let max_iter = 40 * ((nc as f64).sqrt() as usize + 1);
    for _ in 0..max_iter {
        let r_inf = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if r_inf <= tol {
            break;
        }
        let pf = ScalarField::new(grid.clone(), p.clone())?;
        let ap = apply(&pf)?;
        let alpha = rz / wdot(&p, &ap);
        for i in 0..nc {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..nc {
            z[i] = r[i] / diag[i];
        }
        let rz_new = wdot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..nc {
            p[i] = z[i] + beta * p[i];
        }
    }
    let r_inf = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if r_inf > 1e4 * tol {
        return Err(Error::numerical(format!(
            "sphere solve stalled at residual {r_inf:.3e}"
        )));
    }
    // Remove the (weighted) mean so downstream normalization is clean.
    let xm = wdot(&x, &vec![1.0; nc]) / vol;
    Ok(x.into_iter().map(|v| v - xm).collect())
}

/// Sup-norm of the discrete equation mismatch of a candidate potential.
pub fn residual(problem: &MAProblem, u: &ScalarField) -> Result<f64> {
    let lap = laplacian(u)?;
    Ok(lap
        .values()
        .iter()
        .zip(problem.e_f.values())
        .map(|(l, e)| (1.0 + l - e).abs())
        .fold(0.0, f64::max))
}

/// Boundedness report for a solved problem.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LinftyReport {
    pub sup_u: f64,
    pub inf_u: f64,
    pub p: f64,
    pub orlicz_norm: f64,
}

pub fn verify_linfty(problem: &MAProblem, solution: &MASolution) -> Result<LinftyReport> {
    Ok(LinftyReport {
        sup_u: field::sup_norm(&solution.u),
        inf_u: field::inf(&solution.u),
        p: problem.p,
        orlicz_norm: field::orlicz_norm(problem.density(), problem.p)?,
    })
}

// ---------------------------------------------------------------------------
// Radial reduction.
// ---------------------------------------------------------------------------

/// Rotation-invariant potential on a radial grid: values and first
/// derivative of `f(t)`, `t = log |z|^2`.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub grid: Arc<Grid>,
    pub f: Vec<f64>,
    pub f_prime: Vec<f64>,
}

impl RadialProfile {
    pub fn field(&self) -> Result<ScalarField> {
        ScalarField::new(self.grid.clone(), self.f.clone())
    }

    /// Monge-Ampere profile `(f')^{n-1} f''` recovered from the stored
    /// derivative by centered differences.
    pub fn ma_profile(&self, n: u32) -> Vec<f64> {
        let ts = self.grid.t_values().unwrap();
        let h = ts[1] - ts[0];
        let m = ts.len();
        let fpp = |i: usize| -> f64 {
            if i == 0 {
                (-3.0 * self.f_prime[0] + 4.0 * self.f_prime[1] - self.f_prime[2]) / (2.0 * h)
            } else if i == m - 1 {
                (3.0 * self.f_prime[m - 1] - 4.0 * self.f_prime[m - 2] + self.f_prime[m - 3])
                    / (2.0 * h)
            } else {
                (self.f_prime[i + 1] - self.f_prime[i - 1]) / (2.0 * h)
            }
        };
        (0..m)
            .map(|i| self.f_prime[i].powi(n as i32 - 1) * fpp(i))
            .collect()
    }
}

/// Solve `(f')^{n-1} f'' = G` on the radial grid with initial data at
/// `t_min`, through `w = (f')^n` and `w' = n G`.
pub fn solve_radial(
    grid: &Arc<Grid>,
    n: u32,
    g: &[f64],
    f_prime_at_tmin: f64,
    f_at_tmin: f64,
) -> Result<RadialProfile> {
    let ts = grid
        .t_values()
        .ok_or_else(|| Error::invalid("solve_radial needs a radial grid"))?;
    if g.len() != ts.len() {
        return Err(Error::invalid("profile length mismatch"));
    }
    if f_prime_at_tmin <= 0.0 {
        return Err(Error::invalid("initial radial derivative must be positive"));
    }
    if let Some(i) = g.iter().position(|&v| v < 0.0) {
        return Err(Error::invalid(format!(
            "negative Monge-Ampere profile at t = {:.6} (node {i})",
            ts[i]
        )));
    }
    let nf = n as f64;
    let wp: Vec<f64> = g.iter().map(|&v| nf * v).collect();
    let mut w = cumulative_simpson(ts, &wp);
    for v in w.iter_mut() {
        *v += f_prime_at_tmin.powi(n as i32);
    }
    if let Some(i) = w.iter().position(|&v| v <= 0.0) {
        return Err(Error::numerical(format!(
            "radial solve lost plurisubharmonicity at t = {:.6} (node {i})",
            ts[i]
        )));
    }
    let f_prime: Vec<f64> = w.iter().map(|&v| v.powf(1.0 / nf)).collect();
    let mut f = cumulative_simpson(ts, &f_prime);
    for v in f.iter_mut() {
        *v += f_at_tmin;
    }
    Ok(RadialProfile {
        grid: grid.clone(),
        f,
        f_prime,
    })
}

/// Cumulative integral on a uniform grid, fourth order. Even indices use
/// composite Simpson panels; odd indices use the cubic half-panel rule.
fn cumulative_simpson(ts: &[f64], g: &[f64]) -> Vec<f64> {
    let m = ts.len();
    let h = ts[1] - ts[0];
    let mut out = vec![0.0; m];
    let mut i = 2;
    while i < m {
        out[i] = out[i - 2] + h * (g[i - 2] + 4.0 * g[i - 1] + g[i]) / 3.0;
        i += 2;
    }
    let mut i = 1;
    while i < m {
        out[i] = if i + 1 < m {
            out[i - 1] + h * (5.0 * g[i - 1] + 8.0 * g[i] - g[i + 1]) / 12.0
        } else {
            out[i - 1] + h * (-g[i - 2] + 8.0 * g[i - 1] + 5.0 * g[i]) / 12.0
        };
        i += 2;
    }
    out
}

// ---------------------------------------------------------------------------
// Auxiliary level-set solves.
// ---------------------------------------------------------------------------

/// Smooth positive relaxation of `x -> max(x, 0)`, decreasing in `k`.
pub fn tau_k(x: f64, k: f64) -> f64 {
    0.5 * (x + (x * x + 1.0 / (k * k)).sqrt())
}

/// Result of one auxiliary solve at level `s` and smoothing index `k`.
#[derive(Debug, Clone)]
pub struct AuxiliarySolve {
    pub s: f64,
    pub k: f64,
    /// Relaxation width `1/k`.
    pub tau_scale: f64,
    /// Normalized potential with `sup psi = 0`; `None` when the effective
    /// level set carries no mass.
    pub psi: Option<ScalarField>,
    pub a_sk: f64,
    pub epsilon: f64,
    pub lambda: f64,
}

impl AuxiliarySolve {
    pub fn is_empty(&self) -> bool {
        self.psi.is_none()
    }
}

/// Solve the auxiliary equation whose right-hand side concentrates on the
/// sublevel set at height `s`, normalized by its own mass `A_{s,k}`.
pub fn solve_auxiliary(
    problem: &MAProblem,
    u: &ScalarField,
    u_delta: &ScalarField,
    s: f64,
    k: f64,
    r: f64,
    delta: f64,
) -> Result<AuxiliarySolve> {
    if !(k > 0.0) || !(r > 0.0) || !(delta > 0.0) || s < 0.0 {
        return Err(Error::invalid("auxiliary solve needs k, r, delta > 0 and s >= 0"));
    }
    let grid = problem.grid();
    let e_f = problem.density().values();
    let n = u.len();
    let mut weighted = vec![0.0; n];
    let mut a_sk = 0.0;
    for i in 0..n {
        let gap = -u.values()[i] + (1.0 - r) * u_delta.values()[i] - 2.0 * delta - s;
        let t = tau_k(gap, k);
        weighted[i] = t * e_f[i];
        a_sk += weighted[i] * grid.weight(i);
    }
    let epsilon = std::f64::consts::SQRT_2 * a_sk.sqrt();
    let lambda = 0.5 * a_sk / (r * r);
    if a_sk < 1e-14 {
        return Ok(AuxiliarySolve {
            s,
            k,
            tau_scale: 1.0 / k,
            psi: None,
            a_sk,
            epsilon,
            lambda,
        });
    }
    let rhs = ScalarField::new(grid.clone(), weighted.iter().map(|&v| v / a_sk).collect())?;
    let aux_problem = MAProblem::new(grid.clone(), rhs, problem.p, "auxiliary")?;
    let solved = solve_n1(&aux_problem)?;
    // Renormalize from inf = 1 to sup = 0.
    let sup = field::sup_norm(&solved.u);
    let psi = solved.u.map(|v| v - sup)?.with_tag("psi");
    Ok(AuxiliarySolve {
        s,
        k,
        tau_scale: 1.0 / k,
        psi: Some(psi),
        a_sk,
        epsilon,
        lambda,
    })
}
