//! Scalar fields over grids and the calculus used by the estimates: the
//! Laplacian trace relative to the reference form, the `L^1(log L)^p`
//! integrability norm, `L^q` norms and compatibility normalization.
//!
//! Conventions. `laplacian` returns the density of `i ddbar f` against the
//! reference form, so the dimension-1 equation reads
//! `1 + laplacian(u) = e^F` pointwise.  On the unit torus this equals half
//! the coordinate Laplacian; on the sphere it is half the Laplace-Beltrami
//! operator (finite-volume form, exactly self-adjoint); on the radial grid
//! it is `f''(t) e^{-t}` acting on `t`-profiles.

use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{Grid, Point};

/// Function values on the nodes of a grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
    tag: Option<String>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::invalid(format!(
                "field has {} values for a grid with {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "non-finite field value at node {i}"
            )));
        }
        Ok(ScalarField {
            grid,
            values,
            tag: None,
        })
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Self {
        let n = grid.node_count();
        ScalarField {
            grid,
            values: vec![value; n],
            tag: None,
        }
    }

    /// Evaluate a chart function on every node.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(Point) -> f64) -> Result<Self> {
        let values: Vec<f64> = (0..grid.node_count()).map(|i| f(grid.position(i))).collect();
        ScalarField::new(grid, values)
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn tag(&self) -> Option<&str> {
        self.tag.as_deref()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        ScalarField::new(
            self.grid.clone(),
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// Weighted integral against the reference volume form.
    pub fn integrate(&self) -> f64 {
        let grid = &*self.grid;
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| v * grid.weight(i))
            .sum()
    }
}

pub fn sup_norm(f: &ScalarField) -> f64 {
    f.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

pub fn inf(f: &ScalarField) -> f64 {
    f.values().iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn oscillation(f: &ScalarField) -> f64 {
    sup_norm(f) - inf(f)
}

/// Density of `i ddbar f` against the reference form; see the module notes
/// for the per-grid meaning.
pub fn laplacian(f: &ScalarField) -> Result<ScalarField> {
    let grid = f.grid().clone();
    let v = f.values();
    let out = match &*grid {
        Grid::Torus { n_side, .. } => {
            let n = *n_side;
            if n < 3 {
                return Err(Error::invalid("stencil needs at least 3 nodes per side"));
            }
            let inv_h2 = (n * n) as f64;
            let mut out = vec![0.0; n * n];
            for iy in 0..n {
                let up = if iy == 0 { n - 1 } else { iy - 1 } * n;
                let down = if iy == n - 1 { 0 } else { iy + 1 } * n;
                let row = iy * n;
                for ix in 0..n {
                    let left = row + if ix == 0 { n - 1 } else { ix - 1 };
                    let right = row + if ix == n - 1 { 0 } else { ix + 1 };
                    let c = v[row + ix];
                    out[row + ix] =
                        0.5 * inv_h2 * (v[left] + v[right] + v[up + ix] + v[down + ix] - 4.0 * c);
                }
            }
            out
        }
        Grid::Sphere { .. } => sphere_flux_sums(&grid, v)?
            .into_iter()
            .enumerate()
            .map(|(i, flux)| 0.5 * flux / grid.weight(i))
            .collect(),
        Grid::Radial { ts, .. } => {
            let m = ts.len();
            if m < 3 {
                return Err(Error::invalid("stencil needs at least 3 radial nodes"));
            }
            let h = ts[1] - ts[0];
            let mut out = vec![0.0; m];
            for i in 0..m {
                let fpp = if i == 0 {
                    v[0] - 2.0 * v[1] + v[2]
                } else if i == m - 1 {
                    v[m - 3] - 2.0 * v[m - 2] + v[m - 1]
                } else {
                    v[i - 1] - 2.0 * v[i] + v[i + 1]
                } / (h * h);
                out[i] = fpp * (-ts[i]).exp();
            }
            out
        }
    };
    ScalarField::new(grid, out).map(|g| g.with_tag("laplacian"))
}

/// Finite-volume flux sums `sum_j k_ij (f_j - f_i)` of the Laplace-Beltrami
/// operator on the staggered sphere grid. Symmetric by construction.
fn sphere_flux_sums(grid: &Grid, v: &[f64]) -> Result<Vec<f64>> {
    let (nt, np) = match grid {
        Grid::Sphere { n_theta, n_phi, .. } => (*n_theta, *n_phi),
        _ => unreachable!(),
    };
    let dt = std::f64::consts::PI / nt as f64;
    let dp = 2.0 * std::f64::consts::PI / np as f64;
    let mut flux = vec![0.0; nt * np];
    // Colatitude interfaces between rows i and i+1.
    for i in 0..nt - 1 {
        let kappa = ((i + 1) as f64 * dt).sin() * dp / dt;
        for j in 0..np {
            let a = i * np + j;
            let b = (i + 1) * np + j;
            let d = kappa * (v[b] - v[a]);
            flux[a] += d;
            flux[b] -= d;
        }
    }
    // Longitude interfaces within each row (periodic).
    for i in 0..nt {
        let sin_c = ((i as f64 + 0.5) * dt).sin();
        let kappa = dt / (sin_c * dp);
        for j in 0..np {
            let a = i * np + j;
            let b = i * np + (j + 1) % np;
            let d = kappa * (v[b] - v[a]);
            flux[a] += d;
            flux[b] -= d;
        }
    }
    // The R^2 of the cell area cancels against the interface length over
    // the normal distance, both proportional to R.
    let r2 = crate::geometry::SPHERE_RADIUS * crate::geometry::SPHERE_RADIUS;
    Ok(flux.into_iter().map(|f| f * r2).collect())
}

/// `int e^F |F|^p` against the reference volume, the integrability norm of
/// the right-hand side. `F` is recovered as `log` of the stored density.
pub fn orlicz_norm(e_f: &ScalarField, p: f64) -> Result<f64> {
    if p <= 0.0 {
        return Err(Error::invalid("orlicz exponent must be positive"));
    }
    let grid = &**e_f.grid();
    let mut total = 0.0;
    for (i, &d) in e_f.values().iter().enumerate() {
        if d <= 0.0 {
            return Err(Error::invalid(format!(
                "density must be positive, found {d:.3e} at node {i} ({:?})",
                grid.position(i)
            )));
        }
        let f = d.ln();
        // |F|^p is zero exactly where the density crosses 1.
        let w = if f == 0.0 { 0.0 } else { f.abs().powf(p) };
        total += d * w * grid.weight(i);
    }
    Ok(total)
}

/// `L^q` norm of the density against the reference volume.
pub fn lq_norm(e_f: &ScalarField, q: f64) -> Result<f64> {
    if q < 1.0 {
        return Err(Error::invalid("lq exponent must be at least 1"));
    }
    let grid = &**e_f.grid();
    let mut total = 0.0;
    for (i, &d) in e_f.values().iter().enumerate() {
        if d < 0.0 {
            return Err(Error::invalid(format!(
                "density must be nonnegative, found {d:.3e} at node {i}"
            )));
        }
        total += d.powf(q) * grid.weight(i);
    }
    Ok(total.powf(1.0 / q))
}

/// Scale a positive density so its integral equals the total reference
/// volume. Returns the scaled field and the applied factor.
pub fn normalize_density(e_f: &ScalarField) -> Result<(ScalarField, f64)> {
    let raw = e_f.integrate();
    if raw <= 0.0 {
        return Err(Error::invalid("density integrates to a nonpositive value"));
    }
    let scale = e_f.grid().total_volume() / raw;
    let out = e_f.map(|v| v * scale)?;
    let check = out.integrate();
    let vol = e_f.grid().total_volume();
    debug_assert!((check - vol).abs() <= 1e-12 * vol.max(1.0));
    Ok((out, scale))
}

// ---------------------------------------------------------------------------
// Serialization: CSV (coordinates + value) and a compact binary layout.
// Binary header: magic "MALB", u16 version = 1, u8 grid kind (0 torus,
// 1 sphere, 2 radial), u8 reserved, two u32 dimensions, then the node
// values as row-major little-endian f64. Radial grids store the t-range
// as two f64 directly after the header.
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"MALB";

pub fn write_csv<W: Write>(f: &ScalarField, mut w: W) -> Result<()> {
    writeln!(w, "x,y,value")?;
    let grid = &**f.grid();
    for (i, v) in f.values().iter().enumerate() {
        let p = grid.position(i);
        writeln!(w, "{:.17e},{:.17e},{:.17e}", p[0], p[1], v)?;
    }
    Ok(())
}

pub fn write_binary<W: Write>(f: &ScalarField, mut w: W) -> Result<()> {
    let (kind, d0, d1, extra) = match &**f.grid() {
        Grid::Torus { n_side, .. } => (0u8, *n_side as u32, *n_side as u32, None),
        Grid::Sphere {
            n_theta, n_phi, ..
        } => (1u8, *n_theta as u32, *n_phi as u32, None),
        Grid::Radial { ts, background } => (
            2u8,
            ts.len() as u32,
            background.n,
            Some((ts[0], ts[ts.len() - 1])),
        ),
    };
    w.write_all(MAGIC)?;
    w.write_all(&1u16.to_le_bytes())?;
    w.write_all(&[kind, 0u8])?;
    w.write_all(&d0.to_le_bytes())?;
    w.write_all(&d1.to_le_bytes())?;
    if let Some((a, b)) = extra {
        w.write_all(&a.to_le_bytes())?;
        w.write_all(&b.to_le_bytes())?;
    }
    for v in f.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<ScalarField> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    if &head[0..4] != MAGIC {
        return Err(Error::invalid("bad field magic"));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != 1 {
        return Err(Error::invalid(format!("unsupported field version {version}")));
    }
    let kind = head[6];
    let d0 = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let d1 = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    let grid = match kind {
        0 => Grid::torus(d0)?,
        1 => Grid::sphere(d0, d1)?,
        2 => {
            let mut b = [0u8; 16];
            r.read_exact(&mut b)?;
            let t_min = f64::from_le_bytes(b[0..8].try_into().unwrap());
            let t_max = f64::from_le_bytes(b[8..16].try_into().unwrap());
            Grid::radial(d1 as u32, t_min, t_max, d0)?
        }
        _ => return Err(Error::invalid("unknown grid kind in field header")),
    };
    let n = grid.node_count();
    let mut values = vec![0.0; n];
    let mut buf = [0u8; 8];
    for v in values.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    ScalarField::new(Arc::new(grid), values)
}
