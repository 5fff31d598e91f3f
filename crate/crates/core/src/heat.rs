//! Mehler heat kernels of anisotropic twisted Laplacians at complex time,
//! the dispersive sup-scan and the Fejer-type function pair.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::lattice::{enumerate_lattice, eigenvalue, BlockParams};
use crate::twisted::{projection_constant, projection_kernel, twisted_convolve_fn};

const POLE_GUARD: f64 = 1e-8;
const TAYLOR_SWITCH: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexTime {
    pub zeta: Complex64,
    /// Half-height `alpha` of the rectangle `0 < Re z <= 1, |Im z| <= alpha`, when checked.
    pub alpha: Option<f64>,
    pub in_rectangle: bool,
}

impl ComplexTime {
    pub fn new(zeta: Complex64) -> Result<Self> {
        if !(zeta.re > 0.0) || !zeta.im.is_finite() {
            return Err(Error::InvalidParameter(format!("complex time needs Re > 0, got {zeta}")));
        }
        Ok(Self { zeta, alpha: None, in_rectangle: false })
    }

    pub fn real(t: f64) -> Result<Self> {
        Self::new(Complex64::new(t, 0.0))
    }

    pub fn with_rectangle(zeta: Complex64, alpha: f64) -> Result<Self> {
        let mut z = Self::new(zeta)?;
        z.alpha = Some(alpha);
        z.in_rectangle = zeta.re <= 1.0 && zeta.im.abs() <= alpha;
        Ok(z)
    }
}

fn check_pole(z: Complex64) -> Result<()> {
    let k = (z.re / PI).round();
    if k != 0.0 && (z - Complex64::new(k * PI, 0.0)).norm() < POLE_GUARD {
        return Err(Error::PoleProximity { re: z.re, im: z.im });
    }
    Ok(())
}

/// `S(z) = z / sin z`.
pub fn s_fn(z: Complex64) -> Result<Complex64> {
    check_pole(z)?;
    if z.norm() < TAYLOR_SWITCH {
        let z2 = z * z;
        return Ok(1.0 + z2 * (1.0 / 6.0 + z2 * (7.0 / 360.0 + z2 * (31.0 / 15120.0))));
    }
    Ok(z / z.sin())
}

/// `T(z) = z / tan z`, written as `z cos z / sin z` so that `T(pi/2) = 0`.
pub fn t_fn(z: Complex64) -> Result<Complex64> {
    check_pole(z)?;
    if z.norm() < TAYLOR_SWITCH {
        let z2 = z * z;
        return Ok(1.0 - z2 * (1.0 / 3.0 + z2 * (1.0 / 45.0 + z2 * (2.0 / 945.0))));
    }
    Ok(z * z.cos() / z.sin())
}

/// `(4 pi z)^{-d1/2} exp(-|x0|^2 / 4z) prod_n S(i z b_n)^{r_n} exp(-T(i z b_n) |x^(n)|^2 / 4z)`.
pub fn heat_kernel(time: &ComplexTime, p: &BlockParams, x: &[f64]) -> Result<Complex64> {
    if x.len() != p.d1() {
        return Err(Error::DimensionMismatch { expected: p.d1(), got: x.len() });
    }
    let factors = block_factors(time.zeta, p)?;
    Ok(kernel_from_factors(time.zeta, p, &factors, x))
}

/// `(S(i z b_n)^{r_n}, T(i z b_n))` per block.
fn block_factors(zeta: Complex64, p: &BlockParams) -> Result<Vec<(Complex64, Complex64)>> {
    if !(zeta.re > 0.0) {
        return Err(Error::InvalidParameter(format!("complex time needs Re > 0, got {zeta}")));
    }
    p.b.iter()
        .zip(&p.r)
        .map(|(&b, &r)| {
            let w = Complex64::i() * zeta * b;
            Ok((s_fn(w)?.powu(r as u32), t_fn(w)?))
        })
        .collect()
}

fn kernel_from_factors(zeta: Complex64, p: &BlockParams, factors: &[(Complex64, Complex64)], x: &[f64]) -> Complex64 {
    let four_z = 4.0 * zeta;
    let mut acc = (PI * four_z).powf(-0.5 * p.d1() as f64);
    let x0: f64 = x[..p.r0].iter().map(|v| v * v).sum();
    let mut exponent = -x0 / four_z;
    for ((s, t), (&r, off)) in factors.iter().zip(p.r.iter().zip(p.block_offsets())) {
        let xn: f64 = x[off..off + 2 * r].iter().map(|v| v * v).sum();
        acc *= s;
        exponent -= t * xn / four_z;
    }
    acc * exponent.exp()
}

/// Twisted convolution of `f` with the heat kernel at complex time `time`.
pub fn heat_apply(f: &GridFunction, time: &ComplexTime, p: &BlockParams) -> Result<GridFunction> {
    if f.grid.dim() != p.d1() {
        return Err(Error::DimensionMismatch { expected: p.d1(), got: f.grid.dim() });
    }
    let factors = block_factors(time.zeta, p)?;
    let zeta = time.zeta;
    twisted_convolve_fn(f, &p.twist_matrix(), |z| kernel_from_factors(zeta, p, &factors, z))
}

/// `sum_{lambda_k <= lambda_max} exp(-t lambda_k) c prod_n phi_{k_n}(x^(n))`.
pub fn eigen_expansion(t: f64, p: &BlockParams, x: &[f64], lambda_max: f64) -> Result<f64> {
    let c = projection_constant(p);
    let mut acc = 0.0;
    for k in enumerate_lattice(p, 0.0, lambda_max + 1e-12)? {
        let kern = projection_kernel(&k, p, c)?;
        acc += (-t * eigenvalue(&k, p)?).exp() * kern.profile(x);
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatCheckRow {
    pub zeta_re: f64,
    pub zeta_im: f64,
    pub sup_value: f64,
    pub bound_value: f64,
}

/// Sup over grid points of `|p_t(x) - eigen_expansion(t, x)|`, one row per point.
pub fn mehler_vs_eigen(t: f64, p: &BlockParams, points: &[Vec<f64>], lambda_max: f64) -> Result<f64> {
    let time = ComplexTime::real(t)?;
    let diffs: Vec<f64> = points
        .par_iter()
        .map(|x| Ok((heat_kernel(&time, p, x)? - eigen_expansion(t, p, x, lambda_max)?).norm()))
        .collect::<Result<_>>()?;
    Ok(diffs.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersiveReport {
    pub alpha: f64,
    /// Largest `|p_z(0)| |z|^{d1/2}` over the samples.
    pub constant: f64,
    /// Every sample had `Re(T(i z b_n) / z) >= 0`, so the sup over `x` sits at the origin.
    pub sup_at_origin: bool,
    pub rows: Vec<HeatCheckRow>,
}

/// Samples `z` in the rectangle and reports `sup_x |p_z(x)| |z|^{d1/2}`.
pub fn dispersive_scan(p: &BlockParams, alpha: f64, n_samples: usize, seed: u64) -> Result<DispersiveReport> {
    let bmax = p.b.iter().copied().fold(0.0, f64::max);
    if !(alpha > 0.0) || (bmax > 0.0 && alpha * bmax >= PI) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} must lie in (0, pi / max b) = (0, {})", PI / bmax)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Complex64> = (0..n_samples)
        .map(|_| {
            let re = 1.0 - rng.random::<f64>();
            let im = alpha * (2.0 * rng.random::<f64>() - 1.0);
            Complex64::new(re, im)
        })
        .collect();
    let origin = vec![0.0; p.d1()];
    let mut rows = Vec::with_capacity(n_samples);
    let mut sup_at_origin = true;
    for zeta in samples {
        let factors = block_factors(zeta, p)?;
        for (_, t) in &factors {
            if (t / zeta).re < -1e-12 {
                sup_at_origin = false;
            }
        }
        let value = kernel_from_factors(zeta, p, &factors, &origin).norm() * zeta.norm().powf(0.5 * p.d1() as f64);
        rows.push(HeatCheckRow { zeta_re: zeta.re, zeta_im: zeta.im, sup_value: value, bound_value: 0.0 });
    }
    let constant = rows.iter().map(|r| r.sup_value).fold(0.0, f64::max);
    for r in rows.iter_mut() {
        r.bound_value = constant;
    }
    Ok(DispersiveReport { alpha, constant, sup_at_origin, rows })
}

/// `F_K(lambda) = (2/pi) (x - sin x) / x^3` with `x = lambda - K`.
pub fn fejer_pair(k: u64, lambda: f64) -> f64 {
    let x = lambda - k as f64;
    if x.abs() < 1e-3 {
        let x2 = x * x;
        return (2.0 / PI) * (1.0 / 6.0 - x2 * (1.0 / 120.0 - x2 * (1.0 / 5040.0 - x2 / 362_880.0)));
    }
    (2.0 / PI) * (x - x.sin()) / (x * x * x)
}

/// Max deviation of the numerical Fourier transform `int F_K(l) exp(-i l xi) dl` from
/// `(1 - |xi|)_+^2 exp(-i K xi)` over `xis`.
pub fn fejer_fourier_check(k: u64, xis: &[f64]) -> f64 {
    const HALF: f64 = 4000.0;
    const STEP: f64 = 0.05;
    let n = (2.0 * HALF / STEP).round() as usize;
    let kf = k as f64;
    xis.par_iter()
        .map(|&xi| {
            // Simpson on x in [-HALF, HALF], then the leading 1/x^2 tail in closed form.
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..=n {
                let x = -HALF + i as f64 * STEP;
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += Complex64::from_polar(w * fejer_pair(k, x + kf), -x * xi);
            }
            acc *= STEP / 3.0;
            let tail = if xi == 0.0 { 4.0 / (PI * HALF) } else { -(4.0 / PI) * (xi * HALF).sin() / (xi * HALF * HALF) };
            acc += tail;
            acc *= Complex64::from_polar(1.0, -kf * xi);
            let want = Complex64::from_polar((1.0 - xi.abs()).max(0.0).powi(2), -kf * xi);
            (acc - want).norm()
        })
        .reduce(|| 0.0, f64::max)
}
