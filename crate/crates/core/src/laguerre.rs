//! Laguerre polynomials, rescaled Laguerre functions and special Hermite functions.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::binomial;
use crate::quadrature::{gauss_hermite, hermite_functions};

/// `L_k^alpha(x)` by the three-term recurrence.
pub fn laguerre_poly(k: u64, alpha: f64, x: f64) -> f64 {
    if x == 0.0 && alpha.fract() == 0.0 && alpha >= 0.0 {
        return binomial(k + alpha as u64, k);
    }
    let mut prev = 1.0;
    if k == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for j in 2..=k {
        let jf = j as f64;
        let next = ((2.0 * jf - 1.0 + alpha - x) * cur - (jf - 1.0 + alpha) * prev) / jf;
        prev = cur;
        cur = next;
    }
    cur
}

/// `[L_0^alpha(x), ..., L_kmax^alpha(x)]`.
pub fn laguerre_all(kmax: u64, alpha: f64, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(kmax as usize + 1);
    out.push(1.0);
    if kmax == 0 {
        return out;
    }
    out.push(1.0 + alpha - x);
    for j in 2..=kmax {
        let jf = j as f64;
        let n = out.len();
        out.push(((2.0 * jf - 1.0 + alpha - x) * out[n - 1] - (jf - 1.0 + alpha) * out[n - 2]) / jf);
    }
    out
}

/// `phi_k^{(lambda, m)}` at squared radius `r2 = |z|^2`.
pub fn phi_radial(k: u64, lambda: f64, m: usize, r2: f64) -> f64 {
    let x = 0.5 * lambda * r2;
    lambda.powi(m as i32) * laguerre_poly(k, m as f64 - 1.0, x) * (-0.5 * x).exp()
}

/// `phi_k^{(lambda, m)}(z) = lambda^m L_k^{m-1}(lambda |z|^2 / 2) exp(-lambda |z|^2 / 4)` on `R^{2m}`.
pub fn phi(k: u64, lambda: f64, m: usize, z: &[f64]) -> Result<f64> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    if m == 0 || z.len() != 2 * m {
        return Err(Error::DimensionMismatch { expected: 2 * m, got: z.len() });
    }
    Ok(phi_radial(k, lambda, m, z.iter().map(|v| v * v).sum()))
}

/// Special Hermite function `Phi_{alpha,beta}^lambda(z)` on `R^{2m}`, `z = (a, b)`.
///
/// Each coordinate contributes
/// `exp(i lambda a_j b_j / 2) int exp(i sqrt(lambda) a_j t) h_{alpha_j}(t + sqrt(lambda) b_j) h_{beta_j}(t) dt`,
/// evaluated by Gauss-Hermite after completing the square in the Gaussian envelope.
pub fn special_hermite(alpha: &[usize], beta: &[usize], lambda: f64, z: &[f64]) -> Result<Complex64> {
    // Oscillation frequency sqrt(lambda) a_j needs roughly c^2/2 extra nodes.
    let m = alpha.len();
    let cmax = (0..m.min(z.len())).map(|j| lambda.max(0.0).sqrt() * z[j].abs()).fold(0.0, f64::max);
    let base = alpha.iter().sum::<usize>() + beta.iter().sum::<usize>() + 16;
    let order = (base + (0.6 * cmax * cmax).ceil() as usize).div_ceil(8) * 8;
    special_hermite_with_order(alpha, beta, lambda, z, order)
}

pub fn special_hermite_with_order(alpha: &[usize], beta: &[usize], lambda: f64, z: &[f64], order: usize) -> Result<Complex64> {
    let m = alpha.len();
    if beta.len() != m || z.len() != 2 * m {
        return Err(Error::DimensionMismatch { expected: 2 * m, got: z.len() });
    }
    if lambda <= 0.0 {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let needed = alpha.iter().sum::<usize>() + beta.iter().sum::<usize>() + 16;
    if order < needed {
        return Err(Error::InvalidParameter(format!("Gauss-Hermite order {order} below required {needed}")));
    }
    let rule = cached_gauss_hermite(order);
    let (nodes, weights) = (&rule.0, &rule.1);
    let sl = lambda.sqrt();
    let mut acc = Complex64::new((2.0 * PI).powf(-0.5 * m as f64) * lambda.powf(0.5 * m as f64), 0.0);
    for j in 0..m {
        let (a, b) = (z[j], z[m + j]);
        let s = sl * b;
        let c = sl * a;
        // t = u - s/2 turns exp(-(t+s)^2/2 - t^2/2) into exp(-u^2 - s^2/4).
        let mut integral = Complex64::new(0.0, 0.0);
        for (u, w) in nodes.iter().zip(weights.iter()) {
            let hp = hermite_functions(alpha[j], u + 0.5 * s);
            let hm = hermite_functions(beta[j], u - 0.5 * s);
            let poly = hp[alpha[j]] * hm[beta[j]] * (u * u).exp();
            integral += Complex64::from_polar(w * poly, c * (u - 0.5 * s));
        }
        acc *= integral * Complex64::from_polar(1.0, 0.5 * lambda * a * b);
    }
    Ok(acc)
}

fn cached_gauss_hermite(order: usize) -> std::sync::Arc<(Vec<f64>, Vec<f64>)> {
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex, OnceLock};
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().unwrap().get(&order) {
        return r.clone();
    }
    let rule = Arc::new(gauss_hermite(order));
    cache.lock().unwrap().insert(order, rule.clone());
    rule
}
