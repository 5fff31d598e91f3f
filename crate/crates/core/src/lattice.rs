//! Block parameters of anisotropic twisted Laplacians and their eigenvalue lattice.
//!
//! Coordinates on `R^{d1}` are ordered as the radical `R^{r0}` first, then the
//! blocks `R^{2 r_n}` in the order of `b`. Inside a block of multiplicity `r`,
//! coordinate `j` pairs symplectically with coordinate `r + j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub b: Vec<f64>,
    pub r: Vec<usize>,
    pub r0: usize,
}

impl BlockParams {
    /// Frequencies may be zero (the Euclidean limit); use [`require_positive`]
    /// where the Laguerre structure needs `b_n > 0`.
    ///
    /// [`require_positive`]: BlockParams::require_positive
    pub fn new(b: Vec<f64>, r: Vec<usize>, r0: usize) -> Result<Self> {
        if b.len() != r.len() {
            return Err(Error::DimensionMismatch { expected: b.len(), got: r.len() });
        }
        if b.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidParameter(format!("frequencies must be finite and nonnegative: {b:?}")));
        }
        if r.contains(&0) {
            return Err(Error::InvalidParameter("multiplicities must be >= 1".into()));
        }
        Ok(Self { b, r, r0 })
    }

    /// One block of multiplicity one: the twisted Laplacian on `R^2`.
    pub fn plane(b: f64) -> Self {
        Self { b: vec![b], r: vec![1], r0: 0 }
    }

    pub fn n_blocks(&self) -> usize {
        self.b.len()
    }

    /// `|r|_1 = sum r_n`.
    pub fn total_r(&self) -> usize {
        self.r.iter().sum()
    }

    pub fn twisted_dim(&self) -> usize {
        2 * self.total_r()
    }

    pub fn d1(&self) -> usize {
        self.r0 + self.twisted_dim()
    }

    /// Start index of each block inside a point of `R^{d1}`.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut off = self.r0;
        self.r
            .iter()
            .map(|&r| {
                let o = off;
                off += 2 * r;
                o
            })
            .collect()
    }

    pub fn require_positive(&self) -> Result<()> {
        if self.b.iter().any(|&x| x <= 0.0) {
            return Err(Error::InvalidParameter(format!("frequencies must be positive: {:?}", self.b)));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { b: self.b.iter().map(|x| x * s).collect(), r: self.r.clone(), r0: self.r0 }
    }

    /// Skew matrix `diag(0_{r0}, b_1 J_std, ..., b_N J_std)` defining the twist.
    pub fn twist_matrix(&self) -> nalgebra::DMatrix<f64> {
        let mut j = nalgebra::DMatrix::zeros(self.d1(), self.d1());
        for ((&b, &r), off) in self.b.iter().zip(&self.r).zip(self.block_offsets()) {
            for i in 0..r {
                j[(off + i, off + r + i)] = -b;
                j[(off + r + i, off + i)] = b;
            }
        }
        j
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint {
    pub k: Vec<u64>,
}

impl LatticePoint {
    pub fn new(k: Vec<u64>) -> Self {
        Self { k }
    }
}

/// `lambda_k = sum_n (2 k_n + r_n) b_n`.
pub fn eigenvalue(k: &LatticePoint, p: &BlockParams) -> Result<f64> {
    if k.k.len() != p.n_blocks() {
        return Err(Error::DimensionMismatch { expected: p.n_blocks(), got: k.k.len() });
    }
    Ok(k.k.iter().zip(&p.b).zip(&p.r).map(|((&k, &b), &r)| (2 * k + r as u64) as f64 * b).sum())
}

/// All `k` with `lambda_k` in `[lo, hi)`, in lexicographic order.
pub fn enumerate_lattice(p: &BlockParams, lo: f64, hi: f64) -> Result<Vec<LatticePoint>> {
    if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || lo >= hi {
        return Err(Error::InvalidParameter(format!("window [{lo}, {hi}) must satisfy 0 <= lo < hi")));
    }
    p.require_positive()?;
    let base: f64 = p.b.iter().zip(&p.r).map(|(b, &r)| b * r as f64).sum();
    let mut out = Vec::new();
    let mut k = vec![0u64; p.n_blocks()];
    if p.n_blocks() == 0 {
        return Ok(out);
    }
    recurse(p, 0, base, lo, hi, &mut k, &mut out);
    Ok(out)
}

fn recurse(p: &BlockParams, n: usize, acc: f64, lo: f64, hi: f64, k: &mut Vec<u64>, out: &mut Vec<LatticePoint>) {
    if acc >= hi {
        return;
    }
    let step = 2.0 * p.b[n];
    let kmax = ((hi - acc) / step).floor() as u64;
    for kn in 0..=kmax {
        let val = acc + kn as f64 * step;
        if val >= hi {
            break;
        }
        k[n] = kn;
        if n + 1 == p.n_blocks() {
            // Recompute from scratch so the window test sees the same value as `eigenvalue`.
            let lam = eigenvalue(&LatticePoint { k: k.clone() }, p).expect("dims match");
            if lam >= lo && lam < hi {
                out.push(LatticePoint { k: k.clone() });
            }
        } else {
            recurse(p, n + 1, val, lo, hi, k, out);
        }
    }
    k[n] = 0;
}

/// `binom(n, k)` as a float, exact for the small arguments used here.
pub fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    if acc < 9.0e15 {
        acc.round()
    } else {
        acc
    }
}

/// Diagonal weight `prod_n b_n^{r_n} binom(k_n + r_n - 1, k_n)` of the projection kernel.
pub fn diagonal_weight(k: &LatticePoint, p: &BlockParams) -> f64 {
    k.k.iter()
        .zip(&p.b)
        .zip(&p.r)
        .map(|((&kn, &b), &r)| b.powi(r as i32) * binomial(kn + r as u64 - 1, kn))
        .product()
}
