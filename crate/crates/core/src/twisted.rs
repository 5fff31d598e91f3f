//! Twisted convolution, Laguerre projection kernels and the twisted Laplacian on grids.
//!
//! The twist for block parameters `(b, r)` is
//! `E(x, y) = exp((i/2) sum_n b_n omega_std(x^(n), y^(n)))` with
//! `omega_std(x, y) = <J_std x, y>`, and the twisted convolution is
//! `(f x g)(y) = int f(z) g(y - z) E(y, z) dz`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::laguerre::{laguerre_poly, phi_radial};
use crate::lattice::{BlockParams, LatticePoint};

/// Projection normalization `(2 pi)^{-|r|_1}` making `f -> f x (c phi_k)` idempotent.
pub fn projection_constant(p: &BlockParams) -> f64 {
    (2.0 * PI).powi(-(p.total_r() as i32))
}

/// `(1/2) sum_n b_n omega_std(x^(n), y^(n))`.
pub fn twist_phase(p: &BlockParams, x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&b, &r), off) in p.b.iter().zip(&p.r).zip(p.block_offsets()) {
        for j in 0..r {
            acc += b * (x[off + j] * y[off + r + j] - x[off + r + j] * y[off + j]);
        }
    }
    0.5 * acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwistedKernel {
    pub c: f64,
    pub k: LatticePoint,
    pub params: BlockParams,
}

impl TwistedKernel {
    /// `c prod_n phi_{k_n}^{(b_n, r_n)}(z^(n))`.
    pub fn profile(&self, z: &[f64]) -> f64 {
        let mut acc = self.c;
        for (((&k, &b), &r), off) in self.k.k.iter().zip(&self.params.b).zip(&self.params.r).zip(self.params.block_offsets()) {
            let r2: f64 = z[off..off + 2 * r].iter().map(|v| v * v).sum();
            acc *= phi_radial(k, b, r, r2);
        }
        acc
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Complex64 {
        let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        Complex64::from_polar(self.profile(&z), twist_phase(&self.params, x, y))
    }

    /// `K(x, x) = c prod_n b_n^{r_n} binom(k_n + r_n - 1, k_n)`.
    pub fn diagonal(&self) -> f64 {
        self.c * crate::lattice::diagonal_weight(&self.k, &self.params)
    }
}

/// Kernel of the spectral projection onto the eigenvalue `lambda_k`.
pub fn projection_kernel(k: &LatticePoint, p: &BlockParams, c: f64) -> Result<TwistedKernel> {
    if p.r0 != 0 {
        return Err(Error::InvalidParameter("projection kernels need r0 = 0".into()));
    }
    if k.k.len() != p.n_blocks() {
        return Err(Error::DimensionMismatch { expected: p.n_blocks(), got: k.k.len() });
    }
    p.require_positive()?;
    Ok(TwistedKernel { c, k: k.clone(), params: p.clone() })
}

/// Twisted convolution of two grid functions sharing a grid that contains the origin.
pub fn twisted_convolution(f: &GridFunction, g: &GridFunction, p: &BlockParams) -> Result<GridFunction> {
    f.same_grid(g)?;
    if p.r0 != 0 {
        return Err(Error::InvalidParameter("twisted convolution needs r0 = 0".into()));
    }
    if f.grid.dim() != p.twisted_dim() {
        return Err(Error::DimensionMismatch { expected: p.twisted_dim(), got: f.grid.dim() });
    }
    let o = f
        .grid
        .origin_index()
        .ok_or_else(|| Error::GridMismatch("grid must contain the origin to evaluate g(y - z)".into()))?;
    if g.boundary_ratio() > 1e-10 {
        log::warn!("g does not decay at the grid boundary (ratio {:.3e})", g.boundary_ratio());
    }
    let shape = &f.grid.shape;
    let dshape: Vec<usize> = shape.iter().map(|n| 2 * n - 1).collect();
    let dlen: usize = dshape.iter().product();
    let mut kernel = vec![Complex64::new(0.0, 0.0); dlen];
    for (flat, slot) in kernel.iter_mut().enumerate() {
        let d = unflatten(flat, &dshape);
        let mut src = 0usize;
        let mut inside = true;
        for a in 0..d.len() {
            let idx = d[a] as i64 - (shape[a] as i64 - 1) + o[a] as i64;
            if idx < 0 || idx >= shape[a] as i64 {
                inside = false;
                break;
            }
            src = src * shape[a] + idx as usize;
        }
        if inside {
            *slot = g.data[src];
        }
    }
    convolve_on_difference_lattice(f, &p.twist_matrix(), &kernel)
}

/// Twisted convolution with a kernel given as a function of `y - z`.
///
/// `twist` is the skew matrix `J` whose phase `exp((i/2) <J y, z>)` multiplies the integrand.
pub fn twisted_convolve_fn(
    f: &GridFunction,
    twist: &DMatrix<f64>,
    kernel: impl Fn(&[f64]) -> Complex64 + Sync,
) -> Result<GridFunction> {
    let table: Vec<Complex64> = difference_points(&f.grid).par_iter().map(|z| kernel(z)).collect();
    twisted_convolve_table(f, twist, &table)
}

/// Points `y - z` of the difference lattice, shape `2 n_a - 1` per axis, row-major.
pub fn difference_points(grid: &Grid) -> Vec<Vec<f64>> {
    let dshape: Vec<usize> = grid.shape.iter().map(|n| 2 * n - 1).collect();
    let dlen: usize = dshape.iter().product();
    (0..dlen)
        .map(|flat| {
            unflatten(flat, &dshape)
                .iter()
                .enumerate()
                .map(|(a, &i)| (i as f64 - (grid.shape[a] as f64 - 1.0)) * grid.spacing[a])
                .collect()
        })
        .collect()
}

/// Twisted convolution with a kernel tabulated on [`difference_points`].
pub fn twisted_convolve_table(f: &GridFunction, twist: &DMatrix<f64>, table: &[Complex64]) -> Result<GridFunction> {
    let grid = &f.grid;
    if twist.nrows() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: twist.nrows() });
    }
    let dlen: usize = grid.shape.iter().map(|n| 2 * n - 1).product();
    if table.len() != dlen {
        return Err(Error::DimensionMismatch { expected: dlen, got: table.len() });
    }
    convolve_on_difference_lattice(f, twist, table)
}

/// Applies `f -> f x (c phi_k)` on a grid.
pub fn apply_projection(f: &GridFunction, k: &LatticePoint, p: &BlockParams, c: f64) -> Result<GridFunction> {
    let kern = projection_kernel(k, p, c)?;
    if f.grid.dim() != p.twisted_dim() {
        return Err(Error::DimensionMismatch { expected: p.twisted_dim(), got: f.grid.dim() });
    }
    if f.boundary_ratio() > 1e-10 {
        log::warn!("input does not decay at the grid boundary (ratio {:.3e})", f.boundary_ratio());
    }
    twisted_convolve_fn(f, &p.twist_matrix(), |z| Complex64::new(kern.profile(z), 0.0))
}

fn unflatten(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for a in (0..shape.len()).rev() {
        idx[a] = flat % shape[a];
        flat /= shape[a];
    }
    idx
}

/// `out(y) = dV sum_z f(z) G(y - z) exp((i/2) <J y, z>)`, with `G` tabulated on the
/// difference lattice of shape `(2 n_a - 1)`.
fn convolve_on_difference_lattice(f: &GridFunction, twist: &DMatrix<f64>, table: &[Complex64]) -> Result<GridFunction> {
    let grid = &f.grid;
    let dv = grid.cell_volume();
    let data = if grid.dim() == 2 {
        convolve_2d(f, twist[(1, 0)], table)
    } else {
        convolve_generic(f, twist, table)
    };
    Ok(GridFunction { grid: grid.clone(), data: data.into_iter().map(|v| v * dv).collect() })
}

/// Plane case: `<J y, z> = j (y1 z2 - y2 z1)` for `J = [[0, -j], [j, 0]]`.
fn convolve_2d(f: &GridFunction, j: f64, table: &[Complex64]) -> Vec<Complex64> {
    let grid = &f.grid;
    let (n1, n2) = (grid.shape[0], grid.shape[1]);
    let x1 = grid.axis(0);
    let x2 = grid.axis(1);
    let w2 = 2 * n2 - 1;
    // a[i1][j2] = exp(i j y1 z2 / 2), bm[i2][j1] = exp(-i j y2 z1 / 2)
    let a: Vec<Complex64> = (0..n1 * n2).map(|t| Complex64::from_polar(1.0, 0.5 * j * x1[t / n2] * x2[t % n2])).collect();
    let bm: Vec<Complex64> = (0..n2 * n1).map(|t| Complex64::from_polar(1.0, -0.5 * j * x2[t / n1] * x1[t % n1])).collect();
    (0..n1 * n2)
        .into_par_iter()
        .map(|out| {
            let (i1, i2) = (out / n2, out % n2);
            let arow = &a[i1 * n2..(i1 + 1) * n2];
            let mut acc = Complex64::new(0.0, 0.0);
            for j1 in 0..n1 {
                let frow = &f.data[j1 * n2..(j1 + 1) * n2];
                let trow = &table[(i1 + n1 - 1 - j1) * w2..(i1 + n1 - j1) * w2];
                let mut inner = Complex64::new(0.0, 0.0);
                for j2 in 0..n2 {
                    inner += frow[j2] * trow[i2 + n2 - 1 - j2] * arow[j2];
                }
                acc += inner * bm[i2 * n1 + j1];
            }
            acc
        })
        .collect()
}

fn convolve_generic(f: &GridFunction, twist: &DMatrix<f64>, table: &[Complex64]) -> Vec<Complex64> {
    let grid = &f.grid;
    let d = grid.dim();
    let n = grid.len();
    let dshape: Vec<usize> = grid.shape.iter().map(|s| 2 * s - 1).collect();
    let mut entries = Vec::new();
    for a in 0..d {
        for b in 0..d {
            if twist[(a, b)] != 0.0 {
                entries.push((a, b, 0.5 * twist[(a, b)]));
            }
        }
    }
    let idx: Vec<Vec<usize>> = (0..n).map(|i| grid.multi_index(i)).collect();
    let pts: Vec<Vec<f64>> = (0..n).map(|i| grid.point(i)).collect();
    (0..n)
        .into_par_iter()
        .map(|out| {
            let yi = &idx[out];
            let y = &pts[out];
            let mut acc = Complex64::new(0.0, 0.0);
            for src in 0..n {
                let v = f.data[src];
                if v == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let zi = &idx[src];
                let mut flat = 0;
                for a in 0..d {
                    flat = flat * dshape[a] + (yi[a] + grid.shape[a] - 1 - zi[a]);
                }
                let z = &pts[src];
                // <J y, z> = sum_{a,b} J_ab y_b z_a
                let phase: f64 = entries.iter().map(|&(a, b, w)| w * y[b] * z[a]).sum();
                acc += v * table[flat] * Complex64::from_polar(1.0, phase);
            }
            acc
        })
        .collect()
}

/// `-Delta + sum_n (b_n^2 |z^(n)|^2 / 4 - i b_n omega_std(z^(n), grad))` by central differences,
/// with zero values outside the grid.
pub fn apply_twisted_laplacian(f: &GridFunction, p: &BlockParams) -> Result<GridFunction> {
    if p.r0 != 0 {
        return Err(Error::InvalidParameter("twisted Laplacian on grids needs r0 = 0".into()));
    }
    let grid = &f.grid;
    if grid.dim() != p.twisted_dim() {
        return Err(Error::DimensionMismatch { expected: p.twisted_dim(), got: grid.dim() });
    }
    let hmax = grid.max_spacing();
    if hmax > 0.2 {
        return Err(Error::GridTooCoarse { h: hmax, limit: 0.2 });
    }
    let d = grid.dim();
    let mut strides = vec![1usize; d];
    for a in (0..d.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * grid.shape[a + 1];
    }
    // Vector field V(z) with -i V . grad: V = b (J_std z) per block.
    let offsets = p.block_offsets();
    let data = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let idx = grid.multi_index(i);
            let x = grid.point(i);
            let at = |a: usize, step: i64| -> Complex64 {
                let j = idx[a] as i64 + step;
                if j < 0 || j >= grid.shape[a] as i64 {
                    Complex64::new(0.0, 0.0)
                } else {
                    f.data[(i as i64 + step * strides[a] as i64) as usize]
                }
            };
            let center = f.data[i];
            let mut out = Complex64::new(0.0, 0.0);
            let mut grad = vec![Complex64::new(0.0, 0.0); d];
            for a in 0..d {
                let h = grid.spacing[a];
                let (fp, fm) = (at(a, 1), at(a, -1));
                out -= (fp - center * 2.0 + fm) / (h * h);
                grad[a] = (fp - fm) / (2.0 * h);
            }
            for ((&b, &r), &off) in p.b.iter().zip(&p.r).zip(&offsets) {
                let mut r2 = 0.0;
                let mut drift = Complex64::new(0.0, 0.0);
                for j in 0..r {
                    let (u, v) = (x[off + j], x[off + r + j]);
                    r2 += u * u + v * v;
                    // J_std z = (-v, u) on the pair (j, r + j)
                    drift += grad[off + j] * (-v) + grad[off + r + j] * u;
                }
                out += center * (0.25 * b * b * r2) - Complex64::new(0.0, b) * drift;
            }
            out
        })
        .collect();
    Ok(GridFunction { grid: grid.clone(), data })
}

/// Normalized Landau state on one symplectic plane `(u, v)`.
///
/// Eigenfunction of `-Delta + b^2 rho^2 / 4 - i b d_theta` with eigenvalue
/// `(2k + 1) b`; the angular number satisfies `m <= k`.
pub fn landau_state(k: u64, m: i64, b: f64, u: f64, v: f64) -> Complex64 {
    debug_assert!(m <= k as i64 && b > 0.0);
    let am = m.unsigned_abs();
    let nr = k - m.max(0) as u64;
    let rho2 = u * u + v * v;
    if am > 0 && rho2 == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let log_norm = 0.5
        * (b.ln() + am as f64 * (0.5 * b).ln() + ln_gamma(nr as f64 + 1.0)
            - (2.0 * PI).ln()
            - ln_gamma((nr + am) as f64 + 1.0));
    let s = 0.5 * b * rho2;
    let radial_log = if am > 0 { 0.5 * am as f64 * rho2.ln() } else { 0.0 };
    let mag = (log_norm + radial_log - 0.5 * s).exp() * laguerre_poly(nr, am as f64, s);
    Complex64::from_polar(mag, m as f64 * v.atan2(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::laguerre::phi;

    fn gauss(x: &[f64], s: f64, shift: f64) -> Complex64 {
        let r2: f64 = x.iter().enumerate().map(|(a, v)| (v - shift * (a as f64 + 1.0)).powi(2)).sum();
        Complex64::new((-r2 / (2.0 * s * s)).exp(), 0.0)
    }

    #[test]
    fn kernel_examples() {
        let p = BlockParams::plane(1.0);
        let c = projection_constant(&p);
        let kern = projection_kernel(&LatticePoint::new(vec![0]), &p, c).unwrap();
        let (x, y) = ([0.3, -1.1], [1.2, 0.4]);
        let want = Complex64::from_polar(c * (-(0.9f64.powi(2) + 1.5f64.powi(2)) / 4.0).exp(), 0.5 * (0.3 * 0.4 + 1.1 * 1.2));
        assert!((kern.eval(&x, &y) - want).norm() < 1e-15);
        assert!((kern.eval(&x, &y) - kern.eval(&y, &x).conj()).norm() < 1e-15);

        let q = BlockParams::new(vec![2.0, 0.5], vec![2, 1], 0).unwrap();
        let kern = projection_kernel(&LatticePoint::new(vec![3, 1]), &q, 0.7).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert!((kern.eval(&x, &x).re - kern.diagonal()).abs() < 1e-12);
        assert_eq!(kern.diagonal(), 0.7 * 4.0 * 4.0 * 0.5);
        assert!(projection_kernel(&LatticePoint::new(vec![0]), &BlockParams::new(vec![1.0], vec![1], 1).unwrap(), 1.0).is_err());
    }

    #[test]
    fn delta_convolution_is_identity() {
        let grid = Grid::centered(2, 41, 5.0);
        let f = GridFunction::from_fn(grid.clone(), |x| gauss(x, 1.0, 0.3));
        let o = grid.origin_index().unwrap();
        let mut delta = GridFunction::zeros(grid.clone());
        delta.data[o[0] * 41 + o[1]] = Complex64::new(1.0 / grid.cell_volume(), 0.0);
        let out = twisted_convolution(&f, &delta, &BlockParams::plane(1.3)).unwrap();
        assert!(out.relative_error(&f) < 1e-13);
    }

    #[test]
    fn zero_twist_is_ordinary_convolution() {
        // Two Gaussians of variance s^2 convolve to variance 2 s^2 with mass 2 pi s^2.
        let grid = Grid::centered(2, 61, 8.0);
        let f = GridFunction::from_fn(grid.clone(), |x| gauss(x, 1.0, 0.0));
        let out = twisted_convolution(&f, &f, &BlockParams::plane(0.0)).unwrap();
        let want = GridFunction::from_fn(grid, |x| gauss(x, 2f64.sqrt(), 0.0) * PI);
        assert!(out.relative_error(&want) < 1e-10);
    }

    #[test]
    fn ground_state_self_convolution() {
        // phi_0 x phi_0 = 2 pi phi_0, checked against a fine grid.
        let grid = Grid::centered(2, 81, 10.0);
        let p = BlockParams::plane(1.0);
        let phi0 = GridFunction::from_real_fn(grid, |x| phi(0, 1.0, 1, x).unwrap());
        let out = twisted_convolution(&phi0, &phi0, &p).unwrap();
        assert!(out.relative_error(&phi0.scale(Complex64::new(2.0 * PI, 0.0))) < 1e-10);
    }

    #[test]
    fn laplacian_eigenrelations() {
        let grid = Grid::centered(2, 321, 8.0);
        let p = BlockParams::plane(1.0);
        for (k, lam) in [(0u64, 1.0), (2, 5.0)] {
            let f = GridFunction::from_real_fn(grid.clone(), |x| phi(k, 1.0, 1, x).unwrap());
            let out = apply_twisted_laplacian(&f, &p).unwrap();
            let err = out.relative_error(&f.scale(Complex64::new(lam, 0.0)));
            assert!(err < 5e-3, "k={k}: {err}");
        }
        // b = 0: -Delta of exp(-|x|^2/2) is (2 - |x|^2) exp(-|x|^2/2).
        let f = GridFunction::from_fn(grid.clone(), |x| gauss(x, 1.0, 0.0));
        let want = GridFunction::from_fn(grid, |x| gauss(x, 1.0, 0.0) * (2.0 - x[0] * x[0] - x[1] * x[1]));
        let out = apply_twisted_laplacian(&f, &BlockParams::plane(0.0)).unwrap();
        assert!(out.relative_error(&want) < 5e-3);
        assert!(apply_twisted_laplacian(&GridFunction::zeros(Grid::centered(2, 11, 5.0)), &p).is_err());
    }

    #[test]
    fn landau_states_are_eigenfunctions() {
        let grid = Grid::centered(2, 321, 9.0);
        let b = 1.4;
        let p = BlockParams::plane(b);
        for (k, m) in [(0u64, 0i64), (2, -1), (3, 2), (1, -3)] {
            let f = GridFunction::from_fn(grid.clone(), |x| landau_state(k, m, b, x[0], x[1]));
            assert!((f.l2_norm() - 1.0).abs() < 1e-10, "norm of ({k},{m})");
            let out = apply_twisted_laplacian(&f, &p).unwrap();
            let lam = (2 * k + 1) as f64 * b;
            assert!(out.relative_error(&f.scale(Complex64::new(lam, 0.0))) < 5e-3);
        }
    }

    #[test]
    fn landau_sum_reproduces_projection_kernel() {
        let b = 0.8;
        let p = BlockParams::plane(b);
        for k in [0u64, 1, 3] {
            let kern = projection_kernel(&LatticePoint::new(vec![k]), &p, projection_constant(&p)).unwrap();
            for (x, y) in [([0.0, 0.0], [0.5, -0.3]), ([1.0, 0.2], [0.4, 0.9]), ([-0.7, 1.1], [0.3, -0.2])] {
                let s: Complex64 = (-60..=k as i64)
                    .map(|m| landau_state(k, m, b, x[0], x[1]) * landau_state(k, m, b, y[0], y[1]).conj())
                    .sum();
                assert!((s - kern.eval(&x, &y)).norm() < 1e-12, "k={k} x={x:?} y={y:?}: {s} vs {}", kern.eval(&x, &y));
            }
        }
    }

    #[test]
    fn projections_idempotent_and_orthogonal_on_64_grid() {
        // [-8, 8] leaves ~4e-6 of phi_5 outside the box; [-12, 12] is clean.
        let p = BlockParams::plane(1.0);
        let c = projection_constant(&p);
        {
            let grid = Grid::centered(2, 64, 12.0);
            let f = GridFunction::from_fn(grid, |x| gauss(x, 1.0, 0.2) * Complex64::new(1.0, 0.3 * x[0]));
            let proj: Vec<GridFunction> = (0..=5u64).map(|k| apply_projection(&f, &LatticePoint::new(vec![k]), &p, c).unwrap()).collect();
            let mut worst_idem: f64 = 0.0;
            let mut worst_orth: f64 = 0.0;
            for k in 0..=5u64 {
                let pk = &proj[k as usize];
                let twice = apply_projection(pk, &LatticePoint::new(vec![k]), &p, c).unwrap();
                worst_idem = worst_idem.max(twice.sub(pk).l2_norm() / f.l2_norm());
                for j in 0..=5u64 {
                    if j != k {
                        let cross = apply_projection(pk, &LatticePoint::new(vec![j]), &p, c).unwrap();
                        worst_orth = worst_orth.max(cross.l2_norm() / f.l2_norm());
                    }
                }
            }
            assert!(worst_idem <= 1e-6 && worst_orth <= 1e-6, "{worst_idem:e} {worst_orth:e}");
        }
    }
}
