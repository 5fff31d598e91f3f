//! Gauss rules on the line and quadrature on spheres `S^{d-1}`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss-Legendre rule on `[a, b]` with `panels` equal panels of `order` nodes.
pub fn composite_gauss(a: f64, b: f64, panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * order);
    let mut weights = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(lo + 0.5 * h * (xi + 1.0));
            weights.push(0.5 * h * wi);
        }
    }
    (nodes, weights)
}

/// Normalized Hermite functions `h_0(t), ..., h_n(t)`, orthonormal in `L^2(R)`.
pub fn hermite_functions(n: usize, t: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(n + 1);
    h.push(PI.powf(-0.25) * (-0.5 * t * t).exp());
    if n >= 1 {
        h.push(2f64.sqrt() * t * h[0]);
    }
    for k in 1..n {
        let next = (2.0 / (k + 1) as f64).sqrt() * t * h[k] - (k as f64 / (k + 1) as f64).sqrt() * h[k - 1];
        h.push(next);
    }
    h
}

/// Gauss-Hermite nodes and weights for `int f(t) exp(-t^2) dt`.
///
/// Golub-Welsch for the starting nodes, then Newton polishing on the Hermite
/// functions; weights from the Christoffel sum, which stays well scaled.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Hermite needs at least one node");
    let jac = DMatrix::from_fn(n, n, |i, j| if i + 1 == j || j + 1 == i { (i.max(j) as f64 / 2.0).sqrt() } else { 0.0 });
    let eig = SymmetricEigen::new(jac);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..8 {
            let h = hermite_functions(n, *x);
            let deriv = (2.0 * n as f64).sqrt() * h[n - 1];
            if deriv == 0.0 {
                break;
            }
            let dx = h[n] / deriv;
            *x -= dx;
            if dx.abs() < 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        let h = hermite_functions(n - 1, *x);
        let s: f64 = h.iter().map(|v| v * v).sum();
        weights.push((-*x * *x).exp() / s);
    }
    (nodes, weights)
}

/// A quadrature rule on the unit sphere `S^{d-1}` of `R^d`, weights summing to its area.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub dim: usize,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    /// Two points for `d = 1`, 64-point trapezoid for `d = 2`, 86-point Lebedev for `d = 3`.
    pub fn default_for(dim: usize) -> Result<Self> {
        match dim {
            1 => Ok(Self { dim, nodes: vec![vec![1.0], vec![-1.0]], weights: vec![1.0, 1.0] }),
            2 => Ok(Self::circle(64)),
            3 => Ok(Self::lebedev86()),
            _ => Err(Error::InvalidParameter(format!("no sphere rule for dimension {dim}"))),
        }
    }

    pub fn circle(n: usize) -> Self {
        let nodes = (0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64;
                vec![t.cos(), t.sin()]
            })
            .collect();
        Self { dim: 2, nodes, weights: vec![2.0 * PI / n as f64; n] }
    }

    /// The 86-point Lebedev rule, exact for polynomials of degree 15.
    pub fn lebedev86() -> Self {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut push = |pts: Vec<[f64; 3]>, w: f64| {
            for p in pts {
                nodes.push(p.to_vec());
                weights.push(4.0 * PI * w);
            }
        };
        push(signed_perms([1.0, 0.0, 0.0]), 0.011_544_011_544_011_54);
        let s = 1.0 / 3f64.sqrt();
        push(signed_perms([s, s, s]), 0.011_943_909_085_856_28);
        for (a, w) in [(0.369_602_846_454_150_2_f64, 0.011_110_555_710_603_40), (0.694_354_006_602_666_4, 0.011_876_501_294_537_14)] {
            let m = (1.0 - 2.0 * a * a).sqrt();
            push(signed_perms([a, a, m]), w);
        }
        let p: f64 = 0.374_243_039_090_341_2;
        let q = (1.0 - p * p).sqrt();
        push(signed_perms([p, q, 0.0]), 0.011_812_303_746_904_48);
        Self { dim: 3, nodes, weights }
    }

    /// Gauss-Legendre in `cos(theta)` times a trapezoid in `phi`.
    pub fn product_s2(n_theta: usize, n_phi: usize) -> Self {
        let (x, w) = gauss_legendre(n_theta);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for (ct, wt) in x.iter().zip(&w) {
            let st = (1.0 - ct * ct).sqrt();
            for j in 0..n_phi {
                let ph = 2.0 * PI * j as f64 / n_phi as f64;
                nodes.push(vec![st * ph.cos(), st * ph.sin(), *ct]);
                weights.push(wt * 2.0 * PI / n_phi as f64);
            }
        }
        Self { dim: 3, nodes, weights }
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }
}

/// All distinct signed permutations of a point.
fn signed_perms(p: [f64; 3]) -> Vec<[f64; 3]> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out: Vec<[f64; 3]> = Vec::new();
    for perm in PERMS {
        for signs in 0..8 {
            let mut v = [0.0; 3];
            for i in 0..3 {
                let s = if signs >> i & 1 == 1 { -1.0 } else { 1.0 };
                v[i] = s * p[perm[i]];
            }
            if !out.iter().any(|u| u.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-14)) {
                out.push(v);
            }
        }
    }
    out
}
