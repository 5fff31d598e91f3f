//! Spectral clusters `1_[K, K+1)` of anisotropic twisted Laplacians and their
//! `L^p -> L^2` norms.
//!
//! The `L^1 -> L^2` norm is exact from the kernel diagonal. For `1 < p < 2` a
//! lower bound comes from an alternating power method on a grid, with the
//! cluster projection assembled from Landau states that fit inside the grid.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::lattice::{diagonal_weight, enumerate_lattice, BlockParams, LatticePoint};
use crate::twisted::{landau_state, projection_constant};

const MAX_ITERATIONS: usize = 500;
/// A Landau state is kept when its grid norm is within this of one.
const FIT_TOL: f64 = 1e-8;
/// Upper limit on stored basis entries (states times grid points).
const MAX_BASIS_ENTRIES: usize = 60_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    /// The window is `[k, k + 1)`.
    pub k: u64,
    pub params: BlockParams,
    pub c: f64,
}

impl ClusterSpec {
    pub fn new(k: u64, params: BlockParams) -> Result<Self> {
        params.require_positive()?;
        let c = projection_constant(&params);
        Ok(Self { k, params, c })
    }

    fn window(&self) -> (f64, f64) {
        (self.k as f64, self.k as f64 + 1.0)
    }
}

pub fn cluster_members(cs: &ClusterSpec) -> Result<Vec<LatticePoint>> {
    let (lo, hi) = cs.window();
    enumerate_lattice(&cs.params, lo, hi)
}

/// `sqrt(c sum_k prod_n b_n^{r_n} binom(k_n + r_n - 1, k_n))`, the square root of the kernel diagonal.
pub fn norm_1to2_exact(cs: &ClusterSpec) -> Result<f64> {
    let total: f64 = cluster_members(cs)?.iter().map(|k| diagonal_weight(k, &cs.params)).sum();
    Ok((cs.c * total).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub mu_norm: f64,
    pub unit_norm: f64,
    pub rescaled_norm: f64,
    pub ratio: f64,
    pub expected: f64,
    pub relative_error: f64,
    pub passes: bool,
}

/// Compares the cluster `[K s, (K+1) s)` of the `s`-scaled frequencies with `s^{d/4}` times the unit cluster.
pub fn scaling_identity_check(cs: &ClusterSpec, mu_norm: f64) -> Result<ScalingReport> {
    if !(mu_norm > 0.0) {
        return Err(Error::InvalidParameter("mu_norm must be positive".into()));
    }
    let unit = norm_1to2_exact(cs)?;
    let scaled = cs.params.scaled(mu_norm);
    let members = enumerate_lattice(&scaled, cs.k as f64 * mu_norm, (cs.k + 1) as f64 * mu_norm)?;
    let total: f64 = members.iter().map(|k| diagonal_weight(k, &scaled)).sum();
    let rescaled = (cs.c * total).sqrt();
    let expected = mu_norm.powf(cs.params.twisted_dim() as f64 / 4.0);
    let ratio = if unit == 0.0 { f64::NAN } else { rescaled / unit };
    let relative_error = if unit == 0.0 {
        rescaled
    } else {
        (ratio - expected).abs() / expected
    };
    Ok(ScalingReport {
        mu_norm,
        unit_norm: unit,
        rescaled_norm: rescaled,
        ratio,
        expected,
        relative_error,
        passes: relative_error <= 1e-12,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the least-squares line.
    pub residual: f64,
    pub k_min: u64,
    pub k_max: u64,
}

/// Least-squares slope of `log(norm)` against `log(K + 1)`, skipping empty clusters.
pub fn fit_exponent(series: &[(u64, f64)], k_min: u64) -> Result<ExponentFit> {
    let used: Vec<(u64, f64)> = series.iter().copied().filter(|&(k, v)| k >= k_min && v > 0.0).collect();
    if used.len() < 8 {
        return Err(Error::TooFewSamples { needed: 8, have: used.len() });
    }
    let xs: Vec<f64> = used.iter().map(|(k, _)| ((k + 1) as f64).ln()).collect();
    let ys: Vec<f64> = used.iter().map(|(_, v)| v.ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    let residual = (xs.iter().zip(&ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
    Ok(ExponentFit {
        slope,
        intercept,
        residual,
        k_min: used.first().unwrap().0,
        k_max: used.last().unwrap().0,
        xs,
        ys,
    })
}

pub(crate) fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// `d/2 (1/p - 1/2) - 1/2`.
pub fn theoretical_exponent(d: usize, p: f64) -> f64 {
    0.5 * d as f64 * (1.0 / p - 0.5) - 0.5
}

/// One symplectic plane: grid axes of its two coordinates and its frequency.
#[derive(Debug, Clone, Copy)]
struct Plane {
    u: usize,
    v: usize,
    b: f64,
}

fn planes_of(p: &BlockParams) -> Vec<Plane> {
    let mut out = Vec::new();
    for ((&b, &r), off) in p.b.iter().zip(&p.r).zip(p.block_offsets()) {
        for j in 0..r {
            out.push(Plane { u: off + j, v: off + r + j, b });
        }
    }
    out
}

/// Grid-orthonormal basis of the part of a cluster's range that the grid can hold.
#[derive(Debug, Clone)]
pub struct ClusterBasis {
    pub grid: Grid,
    /// Orthonormal under `sum conj(a) b dV`.
    pub vectors: Vec<Vec<Complex64>>,
    /// Landau states dropped because they leak out of the grid.
    pub dropped: usize,
}

impl ClusterBasis {
    pub fn build(cs: &ClusterSpec, grid: &Grid) -> Result<Self> {
        if cs.params.r0 != 0 {
            return Err(Error::InvalidParameter("grid clusters need r0 = 0".into()));
        }
        cs.params.require_positive()?;
        if grid.dim() != cs.params.twisted_dim() {
            return Err(Error::DimensionMismatch { expected: cs.params.twisted_dim(), got: grid.dim() });
        }
        let planes = planes_of(&cs.params);
        if planes.len() > 2 {
            return Err(Error::InvalidParameter(format!("grid clusters support at most two planes, got {}", planes.len())));
        }
        let plane_params = BlockParams { b: planes.iter().map(|p| p.b).collect(), r: vec![1; planes.len()], r0: 0 };
        let (lo, hi) = cs.window();
        let levels = enumerate_lattice(&plane_params, lo, hi)?;
        let dv = grid.cell_volume();
        let points: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.point(i)).collect();

        // For each plane and level, the angular numbers whose state fits in the grid.
        let fitting = |plane: &Plane, k: u64| -> Vec<(i64, Vec<Complex64>)> {
            let mut out = Vec::new();
            let mut m = k as i64;
            loop {
                let vals: Vec<Complex64> = points.iter().map(|x| landau_state(k, m, plane.b, x[plane.u], x[plane.v])).collect();
                let norm2 = plane_norm2(&vals, grid, plane);
                if (norm2 - 1.0).abs() <= FIT_TOL {
                    out.push((m, vals));
                } else if m <= 0 {
                    break;
                }
                m -= 1;
            }
            out
        };

        let mut raw: Vec<Vec<Complex64>> = Vec::new();
        let mut dropped = 0usize;
        for level in &levels {
            let per_plane: Vec<Vec<(i64, Vec<Complex64>)>> = planes.iter().zip(&level.k).map(|(pl, &k)| fitting(pl, k)).collect();
            if per_plane.iter().any(|v| v.is_empty()) {
                dropped += 1;
                continue;
            }
            let count: usize = per_plane.iter().map(|v| v.len()).product();
            if (raw.len() + count) * grid.len() > MAX_BASIS_ENTRIES {
                return Err(Error::InvalidParameter("cluster basis too large for this grid".into()));
            }
            match per_plane.len() {
                1 => raw.extend(per_plane[0].iter().map(|(_, v)| v.clone())),
                _ => {
                    for (_, a) in &per_plane[0] {
                        for (_, b) in &per_plane[1] {
                            raw.push(a.iter().zip(b).map(|(x, y)| x * y).collect());
                        }
                    }
                }
            }
        }

        let vectors = orthonormalize(raw, dv)?;
        Ok(Self { grid: grid.clone(), vectors, dropped })
    }

    pub fn rank(&self) -> usize {
        self.vectors.len()
    }

    /// Coefficients `<x, q_m>` for every basis vector.
    fn coefficients(&self, x: &[Complex64]) -> Vec<Complex64> {
        let dv = self.grid.cell_volume();
        self.vectors
            .iter()
            .map(|q| q.iter().zip(x).map(|(a, b)| a.conj() * b).sum::<Complex64>() * dv)
            .collect()
    }

    fn synthesize(&self, coef: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        for (q, c) in self.vectors.iter().zip(coef) {
            out.iter_mut().zip(q).for_each(|(o, v)| *o += v * c);
        }
        out
    }

    pub fn project(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.synthesize(&self.coefficients(x))
    }
}

/// Cholesky orthonormalization under `sum conj(a) b dV`; the Landau states are
/// already nearly orthonormal, so the Gram matrix is well conditioned.
fn orthonormalize(raw: Vec<Vec<Complex64>>, dv: f64) -> Result<Vec<Vec<Complex64>>> {
    let m = raw.len();
    if m == 0 {
        return Ok(raw);
    }
    let rows: Vec<Vec<Complex64>> = (0..m)
        .into_par_iter()
        .map(|i| (0..m).map(|j| if j < i { Complex64::new(0.0, 0.0) } else { raw[i].iter().zip(&raw[j]).map(|(a, b)| a.conj() * b).sum::<Complex64>() * dv }).collect())
        .collect();
    let gram = DMatrix::from_fn(m, m, |i, j| if j >= i { rows[i][j] } else { rows[j][i].conj() });
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("cluster states are numerically dependent on this grid".into()))?;
    // Q = V L^{-*}, with L^{-*} upper triangular.
    let linv_adj = chol.l().try_inverse().expect("Cholesky factor is invertible").adjoint();
    let n = raw[0].len();
    Ok((0..m)
        .into_par_iter()
        .map(|j| {
            let mut q = vec![Complex64::new(0.0, 0.0); n];
            for i in 0..=j {
                let c = linv_adj[(i, j)];
                q.iter_mut().zip(&raw[i]).for_each(|(o, v)| *o += v * c);
            }
            q
        })
        .collect())
}

/// Grid norm squared of a state that depends on one plane only: the other axes
/// contribute a constant factor, so only one representative slice is summed.
fn plane_norm2(vals: &[Complex64], grid: &Grid, plane: &Plane) -> f64 {
    let mut total = 0.0;
    let mut seen = 0usize;
    for (i, v) in vals.iter().enumerate() {
        let idx = grid.multi_index(i);
        if idx.iter().enumerate().all(|(a, &j)| a == plane.u || a == plane.v || j == 0) {
            total += v.norm_sqr();
            seen += 1;
        }
    }
    debug_assert_eq!(seen, grid.shape[plane.u] * grid.shape[plane.v]);
    total * grid.spacing[plane.u] * grid.spacing[plane.v]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    /// Best `||P x||_2 / ||x||_p` found.
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `None` for the origin bump, otherwise the restart index.
    pub best_start: Option<usize>,
    pub rank: usize,
}

/// Weighted `(sum |x|^p dV)^{1/p}`.
fn lp_norm(x: &[Complex64], p: f64, dv: f64) -> f64 {
    (x.iter().map(|v| v.norm().powf(p)).sum::<f64>() * dv).powf(1.0 / p)
}

/// Unit vector in weighted `l^p` that maximizes `Re <x, y>`.
fn dualize(y: &[Complex64], p: f64, dv: f64) -> Vec<Complex64> {
    if p == 1.0 {
        let (imax, _) = y.iter().enumerate().fold((0, -1.0), |acc, (i, v)| if v.norm() > acc.1 { (i, v.norm()) } else { acc });
        let mut x = vec![Complex64::new(0.0, 0.0); y.len()];
        let n = y[imax].norm();
        x[imax] = if n > 0.0 { y[imax] / n / dv } else { Complex64::new(1.0 / dv, 0.0) };
        return x;
    }
    let q = p / (p - 1.0);
    let x: Vec<Complex64> = y
        .iter()
        .map(|v| {
            let n = v.norm();
            if n == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                v / n * n.powf(q - 1.0)
            }
        })
        .collect();
    let s = lp_norm(&x, p, dv);
    x.into_iter().map(|v| v / s).collect()
}

/// Runs the alternating iteration from `x0`; returns (best value, iterations, converged).
fn power_iterate(basis: &ClusterBasis, p: f64, x0: Vec<Complex64>) -> (f64, usize, bool) {
    let dv = basis.grid.cell_volume();
    let s = lp_norm(&x0, p, dv);
    let mut x: Vec<Complex64> = x0.into_iter().map(|v| v / s).collect();
    let mut best = 0.0f64;
    for it in 1..=MAX_ITERATIONS {
        let coef = basis.coefficients(&x);
        let value = coef.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if it > 1 && value <= best * (1.0 + 1e-12) {
            return (best.max(value), it, true);
        }
        best = best.max(value);
        x = dualize(&basis.synthesize(&coef), p, dv);
    }
    (best, MAX_ITERATIONS, false)
}

/// Lower bound for `||1_[K,K+1)||_{p->2}` on `grid`: best of the origin bump and
/// `restarts` random starts, each stream derived from `(seed, K, restart)`.
pub fn norm_p_to_2_lower(cs: &ClusterSpec, p: f64, grid: &Grid, restarts: usize, seed: u64) -> Result<PowerResult> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("p = {p} outside [1, 2]")));
    }
    let basis = ClusterBasis::build(cs, grid)?;
    Ok(power_lower_bound(&basis, cs.k, p, restarts, seed))
}

pub fn power_lower_bound(basis: &ClusterBasis, k: u64, p: f64, restarts: usize, seed: u64) -> PowerResult {
    let rank = basis.rank();
    if rank == 0 {
        return PowerResult { value: 0.0, converged: true, iterations: 0, best_start: None, rank };
    }
    let grid = &basis.grid;
    let n = grid.len();
    let bump = {
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        let nearest = (0..n)
            .min_by(|&a, &b| {
                let na: f64 = grid.point(a).iter().map(|v| v * v).sum();
                let nb: f64 = grid.point(b).iter().map(|v| v * v).sum();
                na.partial_cmp(&nb).unwrap().then(a.cmp(&b))
            })
            .unwrap();
        x[nearest] = Complex64::new(1.0, 0.0);
        x
    };
    let mut starts: Vec<(Option<usize>, Vec<Complex64>)> = vec![(None, bump)];
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((k << 32) | r as u64);
        let x: Vec<Complex64> = (0..n)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            })
            .collect();
        starts.push((Some(r), x));
    }
    let runs: Vec<(Option<usize>, (f64, usize, bool))> = starts.into_par_iter().map(|(id, x)| (id, power_iterate(basis, p, x))).collect();
    let mut result = PowerResult { value: 0.0, converged: true, iterations: 0, best_start: None, rank };
    for (id, (value, iters, conv)) in runs {
        result.iterations = result.iterations.max(iters);
        result.converged &= conv;
        if value > result.value {
            result.value = value;
            result.best_start = id;
        }
    }
    result
}

/// A grid wide enough for the Landau states of `[K, K+1)` and fine enough for their oscillation.
pub fn cluster_grid(params: &BlockParams, k: u64) -> Grid {
    let bmin = params.b.iter().copied().fold(f64::INFINITY, f64::min);
    let half = (4.0 * (k as f64 + 1.0) / bmin).sqrt() + 10.0 / bmin.sqrt();
    let h = (0.25f64).min(1.2 / (k as f64 + 1.0).sqrt());
    let n = (2.0 * half / h).ceil() as usize + 1;
    Grid::centered(params.twisted_dim(), n, half)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterScanRow {
    #[serde(rename = "K")]
    pub k: u64,
    pub members: usize,
    pub norm_exact_1to2: f64,
    pub norm_lower_p: Option<f64>,
    pub p: f64,
    pub slope_so_far: Option<f64>,
}

/// Exact `L^1 -> L^2` norms for each `K`, plus power-method lower bounds when `lower` is set.
pub fn cluster_scan(params: &BlockParams, ks: &[u64], p: f64, lower: Option<(usize, u64)>) -> Result<Vec<ClusterScanRow>> {
    let mut rows: Vec<ClusterScanRow> = ks
        .par_iter()
        .map(|&k| {
            let cs = ClusterSpec::new(k, params.clone())?;
            let members = cluster_members(&cs)?.len();
            let exact = norm_1to2_exact(&cs)?;
            let norm_lower_p = match lower {
                Some((restarts, seed)) if members > 0 => Some(norm_p_to_2_lower(&cs, p, &cluster_grid(params, k), restarts, seed)?.value),
                Some(_) => Some(0.0),
                None => None,
            };
            Ok(ClusterScanRow { k, members, norm_exact_1to2: exact, norm_lower_p, p, slope_so_far: None })
        })
        .collect::<Result<_>>()?;
    let mut series = Vec::new();
    for row in rows.iter_mut() {
        series.push((row.k, row.norm_lower_p.unwrap_or(row.norm_exact_1to2)));
        row.slope_so_far = fit_exponent(&series, 0).ok().map(|f| f.slope);
    }
    Ok(rows)
}
