//! Spectral multipliers `F(L) chi(2^l U)`: Cowling–Sikora norms, kernel norms via the
//! Plancherel formula, the vanishing threshold in `l`, pointwise convolution kernels and
//! a grid realization of the joint functional calculus on the Heisenberg group.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::cluster::least_squares;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::group::GroupSpec;
use crate::laguerre::{laguerre_all, phi_radial};
use crate::lattice::{diagonal_weight, enumerate_lattice, eigenvalue, BlockParams};
use crate::quadrature::{composite_gauss, SphereRule};
use crate::symplectic::{decompose, DEFAULT_CLUSTER_TOL};
use crate::twisted::{difference_points, twisted_convolve_table};

/// Ceiling on lattice points per sphere node before a kernel-norm evaluation is refused.
const MAX_LATTICE: usize = 5_000_000;

/// A real function sampled on a uniform grid over `[a, b]`, read as piecewise linear
/// on the half-open interval `[a, b)` and zero elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledFunction {
    pub support: [f64; 2],
    pub samples: Vec<f64>,
}

impl SampledFunction {
    pub fn new(support: [f64; 2], samples: Vec<f64>) -> Result<Self> {
        let [a, b] = support;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidParameter(format!("support [{a}, {b}] must be a nonempty finite interval")));
        }
        if samples.len() < 2 {
            return Err(Error::TooFewSamples { needed: 2, have: samples.len() });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("samples must be finite".into()));
        }
        Ok(Self { support, samples })
    }

    pub fn from_fn(support: [f64; 2], n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = (support[1] - support[0]) / (n.max(2) - 1) as f64;
        Self::new(support, (0..n).map(|i| f(support[0] + i as f64 * h)).collect())
    }

    /// `1_{[a, b)}` with `n` samples.
    pub fn indicator(a: f64, b: f64, n: usize) -> Result<Self> {
        Self::from_fn([a, b], n, |_| 1.0)
    }

    /// `exp(1 - 1 / (1 - t^2))` on `t in (-1, 1)` mapped onto `(a, b)`, peak value 1.
    pub fn smooth_bump(a: f64, b: f64, n: usize) -> Result<Self> {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        Self::from_fn([a, b], n, |x| {
            let t = (x - mid) / half;
            if t.abs() >= 1.0 {
                0.0
            } else {
                (1.0 - 1.0 / (1.0 - t * t)).exp()
            }
        })
    }

    pub fn spacing(&self) -> f64 {
        (self.support[1] - self.support[0]) / (self.samples.len() - 1) as f64
    }

    pub fn knot(&self, i: usize) -> f64 {
        self.support[0] + i as f64 * self.spacing()
    }

    /// Value of the interpolant, zero outside `[a, b)`.
    pub fn eval(&self, x: f64) -> f64 {
        if x < self.support[0] || x >= self.support[1] {
            return 0.0;
        }
        self.interpolate(x)
    }

    /// Linear interpolation on the closed interval, so `interpolate(b)` is the left limit at `b`.
    fn interpolate(&self, x: f64) -> f64 {
        let n = self.samples.len();
        let t = ((x - self.support[0]) / self.spacing()).clamp(0.0, (n - 1) as f64);
        let i = (t.floor() as usize).min(n - 2);
        let w = t - i as f64;
        self.samples[i] * (1.0 - w) + self.samples[i + 1] * w
    }

    pub fn sup_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Exact `||F||_{L^2}` of the piecewise-linear interpolant.
    pub fn l2_norm(&self) -> f64 {
        let h = self.spacing();
        self.samples
            .windows(2)
            .map(|w| h * (w[0] * w[0] + w[0] * w[1] + w[1] * w[1]) / 3.0)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.samples.iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierPair {
    #[serde(rename = "F")]
    pub f: SampledFunction,
    pub chi: SampledFunction,
    pub ell: i32,
}

impl MultiplierPair {
    pub fn new(f: SampledFunction, chi: SampledFunction, ell: i32) -> Result<Self> {
        let mp = Self { f, chi, ell };
        mp.validate()?;
        Ok(mp)
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b] = self.f.support;
        if a < 0.0 || self.chi.support[0] < 0.0 {
            return Err(Error::InvalidParameter("supports must lie in [0, inf)".into()));
        }
        if self.f.spacing() > 1e-3 * (b - a) * (1.0 + 1e-9) {
            return Err(Error::SamplingTooCoarse(format!(
                "F spacing {} exceeds 1e-3 of its support diameter {}",
                self.f.spacing(),
                b - a
            )));
        }
        Ok(())
    }

    pub fn with_ell(&self, ell: i32) -> Self {
        Self { ell, ..self.clone() }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let mp: Self = serde_json::from_str(s)?;
        SampledFunction::new(mp.f.support, mp.f.samples.clone())?;
        SampledFunction::new(mp.chi.support, mp.chi.samples.clone())?;
        mp.validate()?;
        Ok(mp)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    fn chi_at(&self, rho: f64) -> f64 {
        self.chi.eval(2f64.powi(self.ell) * rho)
    }

    /// Radial range of `mu` on which `chi(2^l |mu|)` can be nonzero.
    fn rho_range(&self) -> (f64, f64) {
        let s = 2f64.powi(-self.ell);
        (s * self.chi.support[0], s * self.chi.support[1])
    }
}

/// `sigma_{r0}`: the Dirac mass at 0 for `r0 = 0`, else the push-forward of Lebesgue
/// measure on `R^{r0}` under `tau -> |tau|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlancherelMeasure {
    pub r0: usize,
}

impl PlancherelMeasure {
    /// `pi^{r0/2} / Gamma(r0/2) s^{r0/2 - 1}`; zero for `r0 = 0`.
    pub fn density(&self, s: f64) -> f64 {
        if self.r0 == 0 || s <= 0.0 {
            return 0.0;
        }
        let h = 0.5 * self.r0 as f64;
        PI.powf(h) / gamma(h) * s.powf(h - 1.0)
    }

    /// `int g d sigma_{r0}` over `[0, s_max]`, substituting `s = t^2` to remove the endpoint singularity.
    pub fn integrate(&self, g: impl Fn(f64) -> f64, s_max: f64, panels: usize) -> f64 {
        if self.r0 == 0 {
            return g(0.0);
        }
        let h = 0.5 * self.r0 as f64;
        let c = 2.0 * PI.powf(h) / gamma(h);
        let (ts, ws) = composite_gauss(0.0, s_max.sqrt(), panels, 8);
        ts.iter().zip(&ws).map(|(&t, &w)| w * c * t.powi(self.r0 as i32 - 1) * g(t * t)).sum()
    }

    /// `int |F(s + shift)|^2 d sigma_{r0}(s)`, exact for the piecewise-linear `F`.
    pub fn shifted_square(&self, f: &SampledFunction, shift: f64) -> f64 {
        if self.r0 == 0 {
            let v = f.eval(shift);
            return v * v;
        }
        let h = 0.5 * self.r0 as f64;
        let c = PI.powf(h) / gamma(h);
        let alpha = h - 1.0;
        let j = |v0: f64, v1: f64, p: f64| (v1.powf(alpha + 1.0 + p) - v0.powf(alpha + 1.0 + p)) / (alpha + 1.0 + p);
        let mut acc = 0.0;
        for i in 0..f.samples.len() - 1 {
            let (u0, u1) = (f.knot(i), f.knot(i + 1));
            if u1 <= shift {
                continue;
            }
            let beta = (f.samples[i + 1] - f.samples[i]) / (u1 - u0);
            let a = f.samples[i] + beta * (shift - u0);
            let (v0, v1) = ((u0 - shift).max(0.0), u1 - shift);
            acc += a * a * j(v0, v1, 0.0) + 2.0 * a * beta * j(v0, v1, 1.0) + beta * beta * j(v0, v1, 2.0);
        }
        c * acc
    }
}

/// `||F||_{M,2} = ((1/M) sum_K sup_{[(K-1)/M, K/M)} |F|^2)^{1/2}`.
///
/// Window suprema are exact for the piecewise-linear interpolant: the maximum over
/// interior knots and the two window ends.
pub fn cowling_sikora_norm(f: &SampledFunction, m: f64) -> Result<f64> {
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::InvalidParameter(format!("M must be positive, got {m}")));
    }
    let [a, b] = f.support;
    let h = f.spacing();
    let n = f.samples.len();
    let first = (a * m).floor() as i64;
    let last = (b * m).ceil() as i64;
    // Windows clipped by the support edge may hold fewer knots; the interpolant's
    // endpoint values still make their suprema exact.
    let per_window = 1.0 / (m * h);
    if per_window < 4.0 - 1e-9 {
        return Err(Error::SamplingTooCoarse(format!("windows of width 1/{m} hold {per_window:.2} samples, need at least 4")));
    }
    let mut total = 0.0;
    for w in first..last {
        let (lo, hi) = (w as f64 / m, (w + 1) as f64 / m);
        let (s, e) = (lo.max(a), hi.min(b));
        if s >= e {
            continue;
        }
        let i_lo = (((s - a) / h) - 1e-9).ceil().max(0.0) as usize;
        let i_hi = ((((e - a) / h) - 1e-9).ceil().max(0.0) as usize).min(n);
        let mut sup = f.interpolate(s).powi(2).max(f.interpolate(e).powi(2));
        for v in &f.samples[i_lo..i_hi.max(i_lo)] {
            sup = sup.max(v * v);
        }
        total += sup;
    }
    Ok((total / m).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub m: f64,
    pub l2_norm: f64,
    pub cs_norm: f64,
    pub slack: f64,
    pub holds: bool,
}

pub const SANDWICH_SLACK: f64 = 0.01;

/// Checks `||F||_2 <= ||F||_{M,2} (1 + slack)`.
pub fn norm_lower_sandwich_check(f: &SampledFunction, m: f64) -> Result<SandwichReport> {
    let cs_norm = cowling_sikora_norm(f, m)?;
    let l2_norm = f.l2_norm();
    Ok(SandwichReport { m, l2_norm, cs_norm, slack: SANDWICH_SLACK, holds: l2_norm <= cs_norm * (1.0 + SANDWICH_SLACK) })
}

/// Resolution of the radial, spectral and radical quadratures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    pub radial_panels: usize,
    pub radial_order: usize,
    /// Points of the table of `s -> int |F(s + .)|^2 d sigma` when `r0 > 0`.
    pub table_points: usize,
    /// Points per axis of the radical `tau` grid in [`conv_kernel_eval`].
    pub tau_points: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { radial_panels: 2048, radial_order: 4, table_points: 8192, tau_points: 512 }
    }
}

impl QuadConfig {
    pub fn doubled(&self) -> Self {
        Self {
            radial_panels: 2 * self.radial_panels,
            radial_order: self.radial_order,
            table_points: 2 * self.table_points,
            tau_points: 2 * self.tau_points,
        }
    }

    fn check(&self) -> Result<()> {
        if self.radial_panels * self.radial_order < 64 || self.table_points < 64 || self.tau_points < 16 {
            return Err(Error::SamplingTooCoarse(format!("quadrature {self:?} is below the minimum resolution")));
        }
        Ok(())
    }
}

/// Block parameters at each sphere node, checking that the signature `(r, r0)` is constant.
fn sphere_params(spec: &GroupSpec, rule: &SphereRule) -> Result<Vec<BlockParams>> {
    let params = rule
        .nodes
        .iter()
        .map(|w| decompose(spec, w, DEFAULT_CLUSTER_TOL).map(|d| d.block_params()))
        .collect::<Result<Vec<_>>>()?;
    let drift: Vec<usize> = params
        .iter()
        .enumerate()
        .filter(|(_, p)| p.r != params[0].r || p.r0 != params[0].r0)
        .map(|(i, _)| i)
        .collect();
    if !drift.is_empty() {
        return Err(Error::SignatureDrift { nodes: drift });
    }
    Ok(params)
}

/// Merges sphere nodes whose frequencies agree, summing their weights.
fn group_nodes(params: &[BlockParams], weights: &[f64]) -> Vec<(BlockParams, f64)> {
    let mut groups: Vec<(BlockParams, f64)> = Vec::new();
    for (p, &w) in params.iter().zip(weights) {
        let hit = groups
            .iter_mut()
            .find(|(q, _)| q.b.iter().zip(&p.b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs())));
        match hit {
            Some((_, acc)) => *acc += w,
            None => groups.push((p.clone(), w)),
        }
    }
    groups
}

/// `(lambda_k, prod b^r binom)` for all `lambda_k < hi`, sorted by eigenvalue.
fn weighted_spectrum(p: &BlockParams, hi: f64) -> Result<Vec<(f64, f64, Vec<u64>)>> {
    let pts = enumerate_lattice(p, 0.0, hi)?;
    if pts.len() > MAX_LATTICE {
        return Err(Error::InvalidParameter(format!("{} lattice points exceed the limit {MAX_LATTICE}", pts.len())));
    }
    let mut out: Vec<(f64, f64, Vec<u64>)> =
        pts.into_iter().map(|k| (eigenvalue(&k, p).expect("dims match"), diagonal_weight(&k, p), k.k)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.2.cmp(&b.2)));
    Ok(out)
}

/// Linear-interpolation table of `c -> int |F(s + c)|^2 d sigma_{r0}(s)` on `[0, max A]`.
struct ShiftTable {
    measure: PlancherelMeasure,
    step: f64,
    values: Vec<f64>,
}

impl ShiftTable {
    fn new(f: &SampledFunction, measure: PlancherelMeasure, points: usize) -> Self {
        let top = f.support[1];
        let step = top / (points - 1) as f64;
        let values = if measure.r0 == 0 {
            Vec::new()
        } else {
            (0..points).into_par_iter().map(|i| measure.shifted_square(f, i as f64 * step)).collect()
        };
        Self { measure, step, values }
    }

    fn eval(&self, f: &SampledFunction, c: f64) -> f64 {
        if self.measure.r0 == 0 {
            let v = f.eval(c);
            return v * v;
        }
        let t = c / self.step;
        if t >= (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let i = t.floor() as usize;
        let w = t - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

/// `||K_l||_2` for the convolution kernel of `F(L) chi(2^l U)`, by the Plancherel formula
/// in polar coordinates on the second layer.
pub fn plancherel_kernel_norm(spec: &GroupSpec, mp: &MultiplierPair, quad: &QuadConfig) -> Result<f64> {
    quad.check()?;
    let rule = SphereRule::default_for(spec.d2)?;
    let params = sphere_params(spec, &rule)?;
    if mp.f.is_zero() || mp.chi.is_zero() {
        return Ok(0.0);
    }
    let sig = &params[0];
    let total_r = sig.total_r();
    let measure = PlancherelMeasure { r0: sig.r0 };
    let table = ShiftTable::new(&mp.f, measure, quad.table_points);
    let (rho_lo, rho_hi) = mp.rho_range();
    let (rhos, rws) = composite_gauss(rho_lo, rho_hi, quad.radial_panels, quad.radial_order);
    let [a_lo, a_hi] = mp.f.support;
    let lower = if sig.r0 == 0 { a_lo } else { 0.0 };

    let mut total = 0.0;
    for (p, w_node) in group_nodes(&params, &rule.weights) {
        let spectrum = weighted_spectrum(&p, a_hi / rho_lo)?;
        let lams: Vec<f64> = spectrum.iter().map(|s| s.0).collect();
        let terms: Vec<f64> = rhos
            .par_iter()
            .zip(&rws)
            .map(|(&rho, &w)| {
                let chi = mp.chi_at(rho);
                if chi == 0.0 {
                    return 0.0;
                }
                let start = lams.partition_point(|&l| l * rho < lower);
                let end = lams.partition_point(|&l| l * rho < a_hi);
                let s: f64 = spectrum[start..end].iter().map(|(l, wk, _)| wk * table.eval(&mp.f, rho * l)).sum();
                w * chi * chi * rho.powi((total_r + spec.d2) as i32 - 1) * s
            })
            .collect();
        total += w_node * terms.iter().sum::<f64>();
    }
    let norm2 = (2.0 * PI).powi(total_r as i32 - (spec.d1 + spec.d2) as i32) * total;
    Ok(norm2.max(0.0).sqrt())
}

/// `m* = min_omega sum_n r_n b_n^omega` over the sphere nodes.
pub fn min_trace_frequency(spec: &GroupSpec, rule: &SphereRule) -> Result<f64> {
    let mut m = f64::INFINITY;
    for w in &rule.nodes {
        let d = decompose(spec, w, DEFAULT_CLUSTER_TOL)?;
        m = m.min(d.b.iter().zip(&d.r).map(|(b, &r)| b * r as f64).sum());
    }
    Ok(m)
}

/// Smallest `l0` such that `2^{-l} inf(chi) m* > max A` for every `l < -l0`.
pub fn ell0_threshold(spec: &GroupSpec, a: [f64; 2], chi_support: [f64; 2], rule: &SphereRule) -> Result<i32> {
    if !(a[0] >= 0.0 && a[0] < a[1] && chi_support[0] > 0.0 && chi_support[0] < chi_support[1]) {
        return Err(Error::InvalidParameter(format!("need A in [0, inf) and chi support in (0, inf), got {a:?}, {chi_support:?}")));
    }
    let m_star = min_trace_frequency(spec, rule)?;
    if m_star < 1e-10 {
        return Err(Error::InvalidParameter(format!("m* = {m_star:e}: the second layer is degenerate")));
    }
    let base = chi_support[0] * m_star;
    let vanishes = |l0: i32| 2f64.powi(l0 + 1) * base > a[1];
    let mut l0 = (a[1] / base).log2().floor() as i32;
    while !vanishes(l0) {
        l0 += 1;
    }
    while vanishes(l0 - 1) {
        l0 -= 1;
    }
    Ok(l0)
}

/// `(2 pi)^{-r0} int_{R^{r0}} exp(i <tau, x0>) F(|tau|^2 + lambda) d tau` tabulated in `lambda`.
struct RadicalTable {
    step: f64,
    values: Vec<Complex64>,
}

impl RadicalTable {
    fn build(f: &SampledFunction, r0: usize, x0: f64, tau_points: usize, lambda_points: usize) -> Self {
        let top = f.support[1];
        let step = top / (lambda_points - 1) as f64;
        let radius = top.sqrt();
        let (ts, ws) = composite_gauss(-radius, radius, tau_points.div_ceil(4), 4);
        let n = ts.len();
        let total = n.pow(r0 as u32);
        let norm = (2.0 * PI).powi(-(r0 as i32));
        let values = (0..lambda_points)
            .into_par_iter()
            .map(|i| {
                let lam = i as f64 * step;
                let mut acc = Complex64::new(0.0, 0.0);
                for flat in 0..total {
                    let (mut rest, mut t2, mut w) = (flat, 0.0, 1.0);
                    let mut first = 0.0;
                    for axis in 0..r0 {
                        let j = rest % n;
                        rest /= n;
                        t2 += ts[j] * ts[j];
                        w *= ws[j];
                        if axis == 0 {
                            first = ts[j];
                        }
                    }
                    let v = f.eval(t2 + lam);
                    if v != 0.0 {
                        acc += Complex64::from_polar(w * v, first * x0);
                    }
                }
                acc * norm
            })
            .collect();
        Self { step, values }
    }

    fn eval(&self, lam: f64) -> Complex64 {
        let t = lam / self.step;
        if t >= (self.values.len() - 1) as f64 {
            return Complex64::new(0.0, 0.0);
        }
        let i = t.floor() as usize;
        let w = t - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

/// Pointwise value `K(x, u)` of the convolution kernel of `F(L) chi(2^l U)`:
/// `(2 pi)^{-d2} int e^{i <mu, u>} chi(2^l |mu|) k^mu(x) d mu`, where `k^mu` is the
/// twisted convolution kernel of `F(L^mu)` on the first layer.
pub fn conv_kernel_eval(spec: &GroupSpec, mp: &MultiplierPair, x: &[f64], u: &[f64], quad: &QuadConfig) -> Result<Complex64> {
    quad.check()?;
    if x.len() != spec.d1 || u.len() != spec.d2 {
        return Err(Error::DimensionMismatch { expected: spec.d1 + spec.d2, got: x.len() + u.len() });
    }
    let rule = SphereRule::default_for(spec.d2)?;
    let params = sphere_params(spec, &rule)?;
    if mp.f.is_zero() || mp.chi.is_zero() {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let sig = params[0].clone();
    let (rho_lo, rho_hi) = mp.rho_range();
    let (rhos, rws) = composite_gauss(rho_lo, rho_hi, quad.radial_panels.div_ceil(8).max(16), quad.radial_order);
    let a_hi = mp.f.support[1];
    let xv = nalgebra::DVector::from_column_slice(x);
    let lambda_points = (quad.table_points / 16).max(256);

    let mut total = Complex64::new(0.0, 0.0);
    for (node, (omega, &w_node)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
        let dec = decompose(spec, omega, DEFAULT_CLUSTER_TOL)?;
        let p = &params[node];
        let radii2: Vec<f64> = dec.projections[1..].iter().map(|pn| (pn * &xv).norm_squared()).collect();
        let radical = if sig.r0 > 0 {
            let x0 = (&dec.projections[0] * &xv).norm();
            let fine = RadicalTable::build(&mp.f, sig.r0, x0, quad.tau_points, lambda_points);
            let coarse = RadicalTable::build(&mp.f, sig.r0, x0, quad.tau_points / 2, lambda_points);
            let peak = fine.values.iter().fold(0.0f64, |m, v| m.max(v.norm()));
            let gap = fine.values.iter().zip(&coarse.values).fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
            if gap > 1e-2 * peak {
                return Err(Error::SamplingTooCoarse(format!("radical grid: halving changes the table by {gap:e}")));
            }
            Some(fine)
        } else {
            None
        };
        let spectrum = weighted_spectrum(p, a_hi / rho_lo)?;
        let lams: Vec<f64> = spectrum.iter().map(|s| s.0).collect();
        let phase_dir: f64 = omega.iter().zip(u).map(|(a, b)| a * b).sum();
        let terms: Vec<Complex64> = rhos
            .par_iter()
            .zip(&rws)
            .map(|(&rho, &w)| {
                let chi = mp.chi_at(rho);
                if chi == 0.0 {
                    return Complex64::new(0.0, 0.0);
                }
                let end = lams.partition_point(|&l| l * rho < a_hi);
                let mut s = Complex64::new(0.0, 0.0);
                for (lam, _, k) in &spectrum[..end] {
                    let spectral = match &radical {
                        Some(t) => t.eval(rho * lam),
                        None => Complex64::new(mp.f.eval(rho * lam), 0.0),
                    };
                    if spectral == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    let mut prod = 1.0;
                    for (n, &kn) in k.iter().enumerate() {
                        prod *= phi_radial(kn, rho * p.b[n], p.r[n], radii2[n]);
                    }
                    s += spectral * prod;
                }
                let c = (2.0 * PI).powi(-(sig.total_r() as i32));
                s * (w * chi * rho.powi(spec.d2 as i32 - 1) * c) * Complex64::from_polar(1.0, rho * phase_dir)
            })
            .collect();
        total += terms.iter().sum::<Complex64>() * w_node;
    }
    Ok(total * (2.0 * PI).powi(-(spec.d2 as i32)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictionRow {
    pub ell: i32,
    pub kernel_l2_norm: f64,
    pub predicted_scale: f64,
    pub ratio: f64,
}

/// Kernel norms over a range of `l`, with the predicted scale `2^{-l d2 / 2} ||F||_2`.
pub fn restriction_scan(spec: &GroupSpec, mp: &MultiplierPair, ells: &[i32], quad: &QuadConfig) -> Result<Vec<RestrictionRow>> {
    let f2 = mp.f.l2_norm();
    ells.iter()
        .map(|&ell| {
            let norm = plancherel_kernel_norm(spec, &mp.with_ell(ell), quad)?;
            let predicted_scale = 2f64.powf(-0.5 * ell as f64 * spec.d2 as f64) * f2;
            let ratio = if predicted_scale > 0.0 { norm / predicted_scale } else { 0.0 };
            Ok(RestrictionRow { ell, kernel_l2_norm: norm, predicted_scale, ratio })
        })
        .collect()
}

/// Least-squares slope of `log2 ||K_l||^2` against `l`.
pub fn log2_slope(rows: &[RestrictionRow]) -> Result<f64> {
    let pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.kernel_l2_norm > 0.0).map(|r| (r.ell as f64, 2.0 * r.kernel_l2_norm.log2())).collect();
    if pts.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, have: pts.len() });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Ok(least_squares(&xs, &ys).0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpRatioRow {
    pub ell: i32,
    pub output_norm: f64,
    pub predicted_scale: f64,
    pub ratio: f64,
}

/// `||F(L) chi(2^l U) f||_2 / (2^{-l/2} ||F||_2 ||f||_1)` on the Heisenberg group `H_1`
/// for the Gaussian bump `f(x, u) = exp(-(|x|^2 + u^2) / (2 eps^2))`.
///
/// Uses the closed-form Laguerre coefficients of a radial Gaussian: with `b = |mu|`,
/// `a = 1 / (2 eps^2)` and `s = 2a/b + 1/2`, `||P_k g||^2 = (2 pi / b) (s-1)^{2k} / s^{2k+2}`.
pub fn bump_restriction_ratios(f: &SampledFunction, chi: &SampledFunction, ells: &[i32], eps: f64, quad: &QuadConfig) -> Result<Vec<BumpRatioRow>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("bump width must be positive, got {eps}")));
    }
    quad.check()?;
    let a = 0.5 / (eps * eps);
    let l1 = (PI / a) * (2.0 * PI).sqrt() * eps;
    let f2 = f.l2_norm();
    let a_hi = f.support[1];
    ells.iter()
        .map(|&ell| {
            let scale = 2f64.powi(-ell);
            let (lo, hi) = (scale * chi.support[0], scale * chi.support[1]);
            let (mus, ws) = composite_gauss(lo.max(1e-300), hi, quad.radial_panels, quad.radial_order);
            let terms: Vec<f64> = mus
                .par_iter()
                .zip(&ws)
                .map(|(&mu, &w)| {
                    let c = chi.eval(mu / scale);
                    if c == 0.0 {
                        return 0.0;
                    }
                    let hhat2 = 2.0 * PI * eps * eps * (-eps * eps * mu * mu).exp();
                    let s = 2.0 * a / mu + 0.5;
                    let log_q = (-1.0 / s).ln_1p();
                    let kmax = ((a_hi / mu - 1.0) / 2.0).ceil().max(0.0) as u64;
                    let mut acc = 0.0;
                    for k in 0..=kmax {
                        let fv = f.eval((2 * k + 1) as f64 * mu);
                        if fv != 0.0 {
                            acc += fv * fv * (2.0 * k as f64 * log_q).exp();
                        }
                    }
                    w * c * c * hhat2 * acc * (2.0 * PI / mu) / (s * s)
                })
                .collect();
            // Both signs of mu contribute equally; the 1/(2 pi) is the inverse Fourier normalization.
            let out2 = 2.0 * terms.iter().sum::<f64>() / (2.0 * PI);
            let output_norm = out2.sqrt();
            let predicted_scale = 2f64.powf(-0.5 * ell as f64) * f2 * l1;
            Ok(BumpRatioRow { ell, output_norm, predicted_scale, ratio: output_norm / predicted_scale })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct JointResult {
    pub output: GridFunction,
    pub output_norm: f64,
    /// `(sum_mu sum_k |F chi|^2 ||P_k f^mu||^2)^{1/2}` with the same discretization.
    pub plancherel_norm: f64,
    /// Fraction of `||f||^2` carried by the retained Landau levels.
    pub captured_mass: f64,
    pub truncated: bool,
}

pub const CAPTURE_THRESHOLD: f64 = 0.999;

/// `F(L) chi(2^l U) f` on `H_1`, for `f` sampled on a grid over `(x1, x2, u)`.
///
/// The `u`-axis is Fourier transformed; each frequency `mu` is handled by twisted
/// convolution with `sum_k F(lambda_k^mu) chi(2^l |mu|) c phi_k^{|mu|}` over the levels
/// with `lambda_k^mu <= band`. `mu = 0` uses the Euclidean multiplier `F(|xi|^2)`.
/// `band` defaults to half the squared Nyquist frequency of the `x` grid.
pub fn apply_joint_multiplier(spec: &GroupSpec, f: &GridFunction, mp: &MultiplierPair, band: Option<f64>) -> Result<JointResult> {
    if spec.d1 != 2 || spec.d2 != 1 {
        return Err(Error::InvalidParameter(format!("joint multiplier needs d1 = 2, d2 = 1; got {}, {}", spec.d1, spec.d2)));
    }
    let j1 = &spec.structure[0];
    let beta = j1[(1, 0)];
    if beta == 0.0 || (j1[(0, 1)] + beta).abs() > 1e-12 * beta.abs() {
        return Err(Error::InvalidParameter("structure matrix must be a nonzero multiple of J_std".into()));
    }
    let grid = &f.grid;
    if grid.dim() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: grid.dim() });
    }
    if grid.len() > 64 * 64 * 64 {
        return Err(Error::InvalidParameter(format!("grid of {} points exceeds 64^3", grid.len())));
    }
    let (n1, n2, nu) = (grid.shape[0], grid.shape[1], grid.shape[2]);
    let hx = grid.spacing[0].max(grid.spacing[1]);
    let band = band.unwrap_or(0.5 * (PI / hx).powi(2));
    let hu = grid.spacing[2];
    let plane = Grid::new(vec![n1, n2], grid.spacing[..2].to_vec(), grid.origin[..2].to_vec())?;
    let nx = n1 * n2;

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nu);
    let inv = planner.plan_fft_inverse(nu);
    let mut spectral = f.data.clone();
    for row in spectral.chunks_mut(nu) {
        fwd.process(row);
    }
    let slices: Vec<GridFunction> = (0..nu)
        .map(|j| GridFunction { grid: plane.clone(), data: (0..nx).map(|x| spectral[x * nu + j]).collect() })
        .collect();
    let masses: Vec<f64> = slices.iter().map(|g| g.l2_norm().powi(2)).collect();
    let peak = masses.iter().fold(0.0f64, |m, &v| m.max(v));

    let diff = difference_points(&plane);
    let c = 1.0 / (2.0 * PI);
    let mut out_spec = vec![Complex64::new(0.0, 0.0); f.data.len()];
    let (mut planch, mut captured) = (0.0, 0.0);
    for (j, g) in slices.iter().enumerate() {
        if masses[j] <= 1e-28 * peak || masses[j] == 0.0 {
            captured += masses[j];
            continue;
        }
        let jj = if j < nu.div_ceil(2) { j as f64 } else { j as f64 - nu as f64 };
        let mu = 2.0 * PI * jj / (nu as f64 * hu);
        let chi = mp.chi_at(mu.abs());
        let (out, pl, cap) = if mu == 0.0 {
            euclidean_slice(g, &mp.f, chi, band)
        } else {
            let b = (mu * beta).abs();
            let twist = DMatrix::from_row_slice(2, 2, &[0.0, -mu * beta, mu * beta, 0.0]);
            if band < b {
                (GridFunction::zeros(plane.clone()), 0.0, 0.0)
            } else {
                let kmax = ((band / b - 1.0) / 2.0).floor() as u64;
                let coef: Vec<f64> = (0..=kmax).map(|k| mp.f.eval((2 * k + 1) as f64 * b) * chi).collect();
                let tables: Vec<[Complex64; 3]> = diff
                    .par_iter()
                    .map(|z| {
                        let x = 0.5 * b * (z[0] * z[0] + z[1] * z[1]);
                        if x > 1400.0 {
                            return [Complex64::new(0.0, 0.0); 3];
                        }
                        let damp = c * b * (-0.5 * x).exp();
                        let ls = laguerre_all(kmax, 0.0, x);
                        let (mut t1, mut t2, mut t3) = (0.0, 0.0, 0.0);
                        for (l, a) in ls.iter().zip(&coef) {
                            t1 += a * l;
                            t2 += a * a * l;
                            t3 += l;
                        }
                        [t1, t2, t3].map(|t| Complex64::new(t * damp, 0.0))
                    })
                    .collect();
                let column = |i: usize| tables.iter().map(|t| t[i]).collect::<Vec<_>>();
                let out = if coef.iter().any(|&a| a != 0.0) {
                    twisted_convolve_table(g, &twist, &column(0))?
                } else {
                    GridFunction::zeros(plane.clone())
                };
                let pl = if coef.iter().any(|&a| a != 0.0) { twisted_convolve_table(g, &twist, &column(1))?.inner(g).re } else { 0.0 };
                let cap = twisted_convolve_table(g, &twist, &column(2))?.inner(g).re;
                (out, pl, cap)
            }
        };
        planch += pl;
        captured += cap;
        for (x, v) in out.data.iter().enumerate() {
            out_spec[x * nu + j] = *v;
        }
    }
    for row in out_spec.chunks_mut(nu) {
        inv.process(row);
        for v in row.iter_mut() {
            *v /= nu as f64;
        }
    }
    let output = GridFunction { grid: grid.clone(), data: out_spec };
    let total_mass: f64 = masses.iter().sum();
    let captured_mass = if total_mass > 0.0 { captured / total_mass } else { 1.0 };
    Ok(JointResult {
        output_norm: output.l2_norm(),
        output,
        plancherel_norm: (planch.max(0.0) * hu / nu as f64).sqrt(),
        captured_mass,
        truncated: captured_mass < CAPTURE_THRESHOLD,
    })
}

/// The `mu = 0` slice: `F(-Delta) chi(0)` by a 2D FFT, returning output, Plancherel
/// mass and captured mass below `band`.
fn euclidean_slice(g: &GridFunction, f: &SampledFunction, chi: f64, band: f64) -> (GridFunction, f64, f64) {
    let (n1, n2) = (g.grid.shape[0], g.grid.shape[1]);
    let mut planner = FftPlanner::<f64>::new();
    let (f1, f2) = (planner.plan_fft_forward(n1), planner.plan_fft_forward(n2));
    let (i1, i2) = (planner.plan_fft_inverse(n1), planner.plan_fft_inverse(n2));
    let mut data = g.data.clone();
    fft2(&mut data, n1, n2, |row| f2.process(row), |col| f1.process(col));
    let freq = |j: usize, n: usize, h: f64| {
        let jj = if j < n.div_ceil(2) { j as f64 } else { j as f64 - n as f64 };
        2.0 * PI * jj / (n as f64 * h)
    };
    let (mut pl, mut cap, mut all) = (0.0, 0.0, 0.0);
    for a in 0..n1 {
        for b in 0..n2 {
            let xi2 = freq(a, n1, g.grid.spacing[0]).powi(2) + freq(b, n2, g.grid.spacing[1]).powi(2);
            let v = &mut data[a * n2 + b];
            let m = if xi2 <= band { f.eval(xi2) * chi } else { 0.0 };
            let e = v.norm_sqr();
            all += e;
            if xi2 <= band {
                cap += e;
            }
            pl += m * m * e;
            *v *= m;
        }
    }
    fft2(&mut data, n1, n2, |row| i2.process(row), |col| i1.process(col));
    let norm = (n1 * n2) as f64;
    let out = GridFunction { grid: g.grid.clone(), data: data.into_iter().map(|v| v / norm).collect() };
    let mass = g.l2_norm().powi(2);
    let share = |x: f64| if all > 0.0 { mass * x / all } else { 0.0 };
    (out, share(pl), share(cap))
}

fn fft2(data: &mut [Complex64], n1: usize, n2: usize, rows: impl Fn(&mut [Complex64]), cols: impl Fn(&mut [Complex64])) {
    for row in data.chunks_mut(n2) {
        rows(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n1];
    for b in 0..n2 {
        for a in 0..n1 {
            col[a] = data[a * n2 + b];
        }
        cols(&mut col);
        for a in 0..n1 {
            data[a * n2 + b] = col[a];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn h1() -> GroupSpec {
        GroupSpec::preset("heisenberg:1").unwrap()
    }

    fn standard_pair(ell: i32) -> MultiplierPair {
        MultiplierPair::new(SampledFunction::indicator(1.0, 4.0, 3001).unwrap(), SampledFunction::smooth_bump(0.5, 2.0, 2001).unwrap(), ell)
            .unwrap()
    }

    #[test]
    fn cowling_sikora_examples() {
        let ind = SampledFunction::indicator(0.0, 1.0, 1001).unwrap();
        assert!((cowling_sikora_norm(&ind, 1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((cowling_sikora_norm(&ind, 2.0).unwrap() - 1.0).abs() < 1e-14);
        let ramp = SampledFunction::from_fn([0.0, 1.0], 1001, |x| x).unwrap();
        let expected = (0.5f64 * (0.25 + 1.0)).sqrt();
        assert!((cowling_sikora_norm(&ramp, 2.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn cowling_sikora_rejects_coarse_windows() {
        let f = SampledFunction::indicator(0.0, 1.0, 11).unwrap();
        assert!(matches!(cowling_sikora_norm(&f, 8.0), Err(Error::SamplingTooCoarse(_))));
        assert!(cowling_sikora_norm(&f, 0.0).is_err());
    }

    #[test]
    fn sandwich_examples() {
        let step = SampledFunction::from_fn([0.0, 2.0], 2001, |x| if x < 1.0 { 2.0 } else { 0.5 }).unwrap();
        let r = norm_lower_sandwich_check(&step, 1.0).unwrap();
        assert!(r.holds);
        assert!((r.l2_norm - r.cs_norm).abs() < 2e-2 * r.cs_norm, "{r:?}");
        let zero = SampledFunction::from_fn([1.0, 3.0], 2001, |_| 0.0).unwrap();
        let z = norm_lower_sandwich_check(&zero, 2.0).unwrap();
        assert_eq!((z.l2_norm, z.cs_norm), (0.0, 0.0));
    }

    #[test]
    fn sandwich_on_random_piecewise_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = rng.random_range(0.0..2.0);
            let b = a + rng.random_range(0.5..4.0);
            let knots: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let f = SampledFunction::from_fn([a, b], 4001, |x| {
                let t = (x - a) / (b - a) * 7.0;
                let i = (t.floor() as usize).min(6);
                knots[i] + (t - i as f64) * (knots[i + 1] - knots[i])
            })
            .unwrap();
            for m in [1.0, 2.0, 8.0] {
                assert!(norm_lower_sandwich_check(&f, m).unwrap().holds);
            }
        }
    }

    #[test]
    fn plancherel_measure_basics() {
        let dirac = PlancherelMeasure { r0: 0 };
        assert_eq!(dirac.integrate(|s| s + 3.0, 10.0, 8), 3.0);
        // int_{R^3} exp(-|tau|^2) = pi^{3/2}
        let m3 = PlancherelMeasure { r0: 3 };
        assert!((m3.integrate(|s| (-s).exp(), 60.0, 64) - PI.powf(1.5)).abs() < 1e-10);
        let m1 = PlancherelMeasure { r0: 1 };
        assert!(m1.density(0.25) > 0.0);
        let f = SampledFunction::from_fn([0.0, 4.0], 4001, |x| 1.0 - 0.25 * x).unwrap();
        let exact = m1.shifted_square(&f, 0.5);
        let quad = m1.integrate(|s| f.eval(s + 0.5).powi(2), 3.5, 4000);
        assert!((exact - quad).abs() < 1e-6 * exact, "{exact} {quad}");
    }

    #[test]
    fn kernel_norm_self_converges_on_h1() {
        let q = QuadConfig::default();
        let mp = standard_pair(0);
        let a = plancherel_kernel_norm(&h1(), &mp, &q).unwrap();
        let b = plancherel_kernel_norm(&h1(), &mp, &q.doubled()).unwrap();
        assert!(a > 0.0);
        assert!((a - b).abs() < 5e-3 * b, "{a} {b}");
    }

    #[test]
    fn kernel_norm_halves_per_level_on_h1() {
        let rows = restriction_scan(&h1(), &standard_pair(0), &(2..=8).collect::<Vec<_>>(), &QuadConfig::default()).unwrap();
        for w in rows.windows(2) {
            let ratio = w[1].kernel_l2_norm / w[0].kernel_l2_norm;
            assert!((ratio / 0.5f64.sqrt() - 1.0).abs() < 0.05, "{ratio}");
        }
        assert!((log2_slope(&rows).unwrap() + 1.0).abs() < 0.1);
    }

    #[test]
    fn kernel_norm_of_zero_multiplier() {
        let mut mp = standard_pair(0);
        mp.f.samples.iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(plancherel_kernel_norm(&h1(), &mp, &QuadConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn ell0_examples() {
        let r1 = SphereRule::default_for(1).unwrap();
        assert_eq!(ell0_threshold(&h1(), [1.0, 4.0], [0.5, 2.0], &r1).unwrap(), 3);
        assert_eq!(ell0_threshold(&h1(), [4.0, 16.0], [0.5, 2.0], &r1).unwrap(), 5);
        let free = GroupSpec::preset("free-n32").unwrap();
        let r3 = SphereRule::default_for(3).unwrap();
        assert!((min_trace_frequency(&free, &r3).unwrap() - 1.0).abs() < 1e-10);
        assert_eq!(ell0_threshold(&free, [1.0, 4.0], [0.5, 2.0], &r3).unwrap(), 3);
    }

    #[test]
    fn kernel_vanishes_below_threshold() {
        let q = QuadConfig::default();
        let top = plancherel_kernel_norm(&h1(), &standard_pair(0), &q).unwrap();
        let low = plancherel_kernel_norm(&h1(), &standard_pair(-4), &q).unwrap();
        assert!(low <= 1e-10 * top);
        let peak = conv_kernel_eval(&h1(), &standard_pair(0), &[0.0, 0.0], &[0.0], &q).unwrap().norm();
        let v = conv_kernel_eval(&h1(), &standard_pair(-4), &[0.1, 0.0], &[0.3], &q).unwrap().norm();
        assert!(v <= 1e-10 * peak);
    }

    #[test]
    fn conv_kernel_symmetry_and_positivity() {
        let q = QuadConfig::default();
        let mp = standard_pair(0);
        let k0 = conv_kernel_eval(&h1(), &mp, &[0.0, 0.0], &[0.0], &q).unwrap();
        assert!(k0.re > 0.0 && k0.im.abs() < 1e-12 * k0.re);
        for (x, u) in [([0.3, -0.2], 0.7), ([1.0, 0.5], -1.3), ([0.0, 2.0], 2.5)] {
            let a = conv_kernel_eval(&h1(), &mp, &x, &[u], &q).unwrap();
            let b = conv_kernel_eval(&h1(), &mp, &x, &[-u], &q).unwrap();
            assert!((a - b.conj()).norm() < 1e-12 * k0.re, "{a} {b}");
        }
    }

    #[test]
    fn conv_kernel_l2_matches_plancherel_in_u() {
        // int |K(0, u)|^2 du = (2 pi)^{-1} int |chi(|mu|) k^mu(0)|^2 d mu is a consistency
        // check of the (2 pi) powers: k^mu(0) = (2 pi)^{-1} sum_k F((2k+1)|mu|) |mu|.
        let q = QuadConfig::default();
        // Smooth F so that K(0, .) decays fast enough to truncate the u-integral.
        let mp = MultiplierPair::new(SampledFunction::smooth_bump(1.0, 4.0, 3001).unwrap(), SampledFunction::smooth_bump(0.5, 2.0, 2001).unwrap(), 0)
            .unwrap();
        let (us, ws) = composite_gauss(-60.0, 60.0, 480, 4);
        let lhs: f64 = us
            .iter()
            .zip(&ws)
            .map(|(&u, &w)| w * conv_kernel_eval(&h1(), &mp, &[0.0, 0.0], &[u], &q).unwrap().norm_sqr())
            .sum();
        let (ms, mw) = composite_gauss(0.5, 2.0, 2000, 4);
        let rhs: f64 = ms
            .iter()
            .zip(&mw)
            .map(|(&m, &w)| {
                let k: f64 = (0..20).map(|k| mp.f.eval((2 * k + 1) as f64 * m)).sum::<f64>() * m / (2.0 * PI);
                w * (mp.chi.eval(m) * k).powi(2)
            })
            .sum::<f64>()
            * 2.0
            / (2.0 * PI);
        assert!((lhs - rhs).abs() < 1e-3 * rhs, "{lhs} {rhs}");
    }

    #[test]
    fn free_group_kernel_norm_scales_with_d2() {
        let free = GroupSpec::preset("free-n32").unwrap();
        let rows = restriction_scan(&free, &standard_pair(0), &[2, 4, 6, 8], &QuadConfig::default()).unwrap();
        assert!((log2_slope(&rows).unwrap() + 3.0).abs() < 0.15);
        let v = conv_kernel_eval(&free, &standard_pair(0), &[0.2, 0.1, -0.3], &[0.1, 0.2, 0.3], &QuadConfig::default()).unwrap();
        let w = conv_kernel_eval(&free, &standard_pair(0), &[0.2, 0.1, -0.3], &[-0.1, -0.2, -0.3], &QuadConfig::default()).unwrap();
        assert!((v - w.conj()).norm() < 1e-10 * v.norm().max(1e-300));
    }

    #[test]
    fn bump_ratio_stays_in_band() {
        let rows = bump_restriction_ratios(
            &SampledFunction::indicator(1.0, 4.0, 3001).unwrap(),
            &SampledFunction::smooth_bump(0.5, 2.0, 2001).unwrap(),
            &(2..=6).collect::<Vec<_>>(),
            0.05,
            &QuadConfig::default(),
        )
        .unwrap();
        let lo = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        assert!(lo > 0.0 && hi / lo <= 2.0, "{rows:?}");
    }

    fn joint_grid() -> Grid {
        let n = 64;
        let hx = 16.0 / n as f64;
        let hu = 20.0 / n as f64;
        Grid::new(vec![n, n, n], vec![hx, hx, hu], vec![-8.0, -8.0, -10.0]).unwrap()
    }

    fn gaussian(grid: &Grid) -> GridFunction {
        GridFunction::from_real_fn(grid.clone(), |p| (-0.5 * (p[0] * p[0] + p[1] * p[1]) - 0.5 * p[2] * p[2]).exp())
    }

    #[test]
    fn joint_multiplier_identity_and_plancherel() {
        let grid = joint_grid();
        let f = gaussian(&grid);
        let one = MultiplierPair::new(
            SampledFunction::indicator(0.0, 1000.0, 1001).unwrap(),
            SampledFunction::indicator(0.0, 1000.0, 1001).unwrap(),
            0,
        )
        .unwrap();
        let id = apply_joint_multiplier(&h1(), &f, &one, None).unwrap();
        assert!(!id.truncated, "captured {}", id.captured_mass);
        assert!(id.output.relative_error(&f) <= 1e-2, "{}", id.output.relative_error(&f));

        let mp = MultiplierPair::new(SampledFunction::indicator(1.0, 9.0, 8001).unwrap(), SampledFunction::smooth_bump(0.5, 2.0, 2001).unwrap(), -1)
            .unwrap();
        let r = apply_joint_multiplier(&h1(), &f, &mp, None).unwrap();
        assert!(r.output_norm > 0.0);
        assert!((r.output_norm - r.plancherel_norm).abs() <= 1e-2 * r.plancherel_norm, "{} {}", r.output_norm, r.plancherel_norm);
        assert!(r.output_norm <= f.l2_norm() * 1.01);
    }

    #[test]
    fn joint_multiplier_disjoint_support_vanishes() {
        let grid = joint_grid();
        let f = gaussian(&grid);
        let mp = MultiplierPair::new(SampledFunction::indicator(500.0, 600.0, 1001).unwrap(), SampledFunction::indicator(0.0, 1.0, 101).unwrap(), 0)
            .unwrap();
        let r = apply_joint_multiplier(&h1(), &f, &mp, None).unwrap();
        assert!(r.output_norm <= 1e-10 * f.l2_norm());
    }

    #[test]
    fn multiplier_json_round_trip_and_validation() {
        let mp = standard_pair(2);
        let s = serde_json::to_string(&mp).unwrap();
        assert!(s.contains("\"F\""));
        assert_eq!(MultiplierPair::from_json_str(&s).unwrap(), mp);
        let coarse = MultiplierPair::new(SampledFunction::indicator(1.0, 4.0, 100).unwrap(), mp.chi.clone(), 0);
        assert!(matches!(coarse, Err(Error::SamplingTooCoarse(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn cs_norm_dominates_l2(a in 0.0f64..3.0, len in 0.5f64..4.0, m in 0.5f64..8.0, c0 in -2.0f64..2.0, c1 in -2.0f64..2.0, c2 in -2.0f64..2.0) {
            let f = SampledFunction::from_fn([a, a + len], 4001, |x| c0 + c1 * (x - a) + c2 * (x - a).powi(2)).unwrap();
            let r = norm_lower_sandwich_check(&f, m).unwrap();
            prop_assert!(r.holds, "{:?}", r);
        }

        #[test]
        fn contractive_when_bounded(scale in 0.1f64..1.0) {
            // Kernel norm is linear in the sup of F.
            let q = QuadConfig { radial_panels: 256, ..QuadConfig::default() };
            let mp = standard_pair(1);
            let mut scaled = mp.clone();
            scaled.f.samples.iter_mut().for_each(|v| *v *= scale);
            let a = plancherel_kernel_norm(&h1(), &mp, &q).unwrap();
            let b = plancherel_kernel_norm(&h1(), &scaled, &q).unwrap();
            prop_assert!((b - scale * a).abs() <= 1e-12 * a);
        }
    }
}
