//! Symplectic normal form of `J_mu`.
//!
//! For a covector `mu` the symmetric matrix `-J_mu^2` has eigenvalues `b_n^2`
//! (each of even multiplicity `2 r_n`) and a kernel of dimension `r0`. The
//! decomposition returns the spectral projections and an orthogonal `R` with
//! `R^T J_mu R = diag(0_{r0}, b_1 J_std, ..., b_N J_std)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{standard_symplectic, GroupSpec};
use crate::lattice::BlockParams;

pub const DEFAULT_CLUSTER_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResiduals {
    /// `||-J^2 - sum b_n^2 P_n||_F`
    pub spectral: f64,
    pub idempotency: f64,
    pub symmetry: f64,
    pub trace: f64,
    pub mutual_orthogonality: f64,
    pub completeness: f64,
    pub rotation_orthogonality: f64,
    pub commutation: f64,
    pub symplectic: f64,
}

impl DecompositionResiduals {
    pub fn max(&self) -> f64 {
        [
            self.spectral,
            self.idempotency,
            self.symmetry,
            self.trace,
            self.mutual_orthogonality,
            self.completeness,
            self.rotation_orthogonality,
            self.commutation,
            self.symplectic,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuDecomposition {
    pub mu: Vec<f64>,
    /// Distinct frequencies, strictly decreasing.
    pub b: Vec<f64>,
    pub r: Vec<usize>,
    pub r0: usize,
    /// `P_0` (radical) followed by `P_1, ..., P_N`.
    #[serde(skip)]
    pub projections: Vec<DMatrix<f64>>,
    #[serde(skip)]
    pub rotation: DMatrix<f64>,
    pub cluster_tol: f64,
    pub residuals: DecompositionResiduals,
}

impl MuDecomposition {
    pub fn block_params(&self) -> BlockParams {
        BlockParams { b: self.b.clone(), r: self.r.clone(), r0: self.r0 }
    }

    pub fn signature(&self) -> (usize, Vec<usize>, usize) {
        (self.b.len(), self.r.clone(), self.r0)
    }

    /// JSON with matrices included as row-major nested arrays.
    pub fn to_json_with_matrices(&self) -> serde_json::Value {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect() };
        let mut v = serde_json::to_value(self).expect("plain data serializes");
        v["projections"] = serde_json::to_value(self.projections.iter().map(rows).collect::<Vec<_>>()).unwrap();
        v["rotation"] = serde_json::to_value(rows(&self.rotation)).unwrap();
        v
    }
}

/// Symplectic decomposition of `J_mu` for one covector.
pub fn decompose(spec: &GroupSpec, mu: &[f64], cluster_tol: f64) -> Result<MuDecomposition> {
    if !(cluster_tol > 0.0) {
        return Err(Error::InvalidParameter("cluster_tol must be positive".into()));
    }
    let j = spec.j_of_mu(mu)?;
    if mu.iter().all(|&m| m == 0.0) {
        return Err(Error::ZeroCovector);
    }
    let d1 = spec.d1;
    let s = -(&j * &j);
    let s = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s.clone());
    let mut order: Vec<usize> = (0..d1).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap().then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let radical_cut = cluster_tol * cluster_tol;
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut radical: Vec<usize> = Vec::new();
    for (pos, &val) in sorted.iter().enumerate() {
        if val < radical_cut {
            radical.push(order[pos]);
            continue;
        }
        let new_group = match groups.last() {
            None => true,
            Some(_) => {
                let prev = sorted[pos - 1];
                (prev - val) / prev >= cluster_tol
            }
        };
        if new_group {
            groups.push(vec![order[pos]]);
        } else {
            groups.last_mut().unwrap().push(order[pos]);
        }
    }

    let mut b = Vec::new();
    let mut r = Vec::new();
    let mut block_bases: Vec<DMatrix<f64>> = Vec::new();
    let mut projections = Vec::new();
    for g in &groups {
        if g.len() % 2 == 1 {
            return Err(Error::OddCluster { dim: g.len(), spectrum: sorted.clone() });
        }
        let mean = g.iter().map(|&i| eig.eigenvalues[i]).sum::<f64>() / g.len() as f64;
        let bn = mean.sqrt();
        let rn = g.len() / 2;
        let q = DMatrix::from_fn(d1, g.len(), |row, col| eig.eigenvectors[(row, g[col])]);
        let pn = &q * q.transpose();
        let v = symplectic_basis(&j, &pn, bn, rn)?;
        b.push(bn);
        r.push(rn);
        block_bases.push(v);
        projections.push(pn);
    }

    let r0 = radical.len();
    let mut rad_vecs: Vec<DVector<f64>> = radical.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    for v in rad_vecs.iter_mut() {
        let (imax, _) = v.iter().enumerate().fold((0, 0.0), |acc, (i, x)| if x.abs() > acc.1 + 1e-12 { (i, x.abs()) } else { acc });
        if v[imax] < 0.0 {
            *v = -v.clone();
        }
    }
    rad_vecs.sort_by_key(|v| v.iter().enumerate().fold((0, 0.0), |acc, (i, x)| if x.abs() > acc.1 + 1e-12 { (i, x.abs()) } else { acc }).0);
    let mut p0 = DMatrix::zeros(d1, d1);
    for v in &rad_vecs {
        p0 += v * v.transpose();
    }

    let mut rotation = DMatrix::zeros(d1, d1);
    let mut col = 0;
    for v in &rad_vecs {
        rotation.set_column(col, v);
        col += 1;
    }
    for v in &block_bases {
        for c in 0..v.ncols() {
            rotation.set_column(col, &v.column(c));
            col += 1;
        }
    }

    let mut all_proj = vec![p0];
    all_proj.extend(projections);
    let mut dec = MuDecomposition {
        mu: mu.to_vec(),
        b,
        r,
        r0,
        projections: all_proj,
        rotation,
        cluster_tol,
        residuals: DecompositionResiduals::default(),
    };
    dec.residuals = residuals(&j, &dec);
    Ok(dec)
}

/// Orthonormal real basis `v_1..v_{2r}` of the block with `omega(v_a, v_b) = b omega_std(e_a, e_b)`.
fn symplectic_basis(j: &DMatrix<f64>, pn: &DMatrix<f64>, bn: f64, rn: usize) -> Result<DMatrix<f64>> {
    let d1 = j.nrows();
    let jc = j.map(|v| Complex64::new(v, 0.0));
    let pc = pn.map(|v| Complex64::new(v, 0.0));
    let plus = (&pc + &jc * &pc * Complex64::new(0.0, 1.0 / bn)) * Complex64::new(0.5, 0.0);

    // Pivoted Gram-Schmidt: the largest remaining column wins, lowest index on ties.
    let mut cols: Vec<DVector<Complex64>> = (0..d1).map(|c| plus.column(c).into_owned()).collect();
    let mut w: Vec<DVector<Complex64>> = Vec::with_capacity(rn);
    for _ in 0..rn {
        let mut best = 0;
        let mut best_norm = -1.0;
        for (c, v) in cols.iter().enumerate() {
            let n = v.norm();
            if n > best_norm {
                best = c;
                best_norm = n;
            }
        }
        if best_norm <= 1e-12 {
            return Err(Error::SymplecticNormalization { residual: f64::INFINITY });
        }
        let q = &cols[best] / Complex64::new(best_norm, 0.0);
        for v in cols.iter_mut() {
            let coef = q.dotc(v);
            *v -= &q * coef;
        }
        w.push(q);
    }

    let target = standard_symplectic(rn) * bn;
    let sqrt2 = 2f64.sqrt();
    let build = |swap: bool| -> DMatrix<f64> {
        let mut v = DMatrix::zeros(d1, 2 * rn);
        for (k, wk) in w.iter().enumerate() {
            let re = wk.map(|z| z.re * sqrt2);
            let im = wk.map(|z| z.im * sqrt2);
            let (first, second) = if swap { (im, re) } else { (re, im) };
            v.set_column(k, &first);
            v.set_column(rn + k, &second);
        }
        v
    };
    let tol = 1e-8 * (1.0 + bn);
    let mut last = f64::INFINITY;
    for swap in [false, true] {
        let v = build(swap);
        let res = (v.transpose() * j * &v - &target).norm();
        if res <= tol {
            return Ok(v);
        }
        last = last.min(res);
    }
    Err(Error::SymplecticNormalization { residual: last })
}

fn residuals(j: &DMatrix<f64>, dec: &MuDecomposition) -> DecompositionResiduals {
    let d1 = j.nrows();
    let id = DMatrix::<f64>::identity(d1, d1);
    let mut out = DecompositionResiduals::default();
    let mut sum_b2p = DMatrix::zeros(d1, d1);
    for (n, bn) in dec.b.iter().enumerate() {
        sum_b2p += &dec.projections[n + 1] * (bn * bn);
    }
    out.spectral = (-(j * j) - sum_b2p).norm();
    let mut total = DMatrix::zeros(d1, d1);
    for (n, p) in dec.projections.iter().enumerate() {
        out.idempotency = out.idempotency.max((p * p - p).norm());
        out.symmetry = out.symmetry.max((p - p.transpose()).norm());
        let want = if n == 0 { dec.r0 } else { 2 * dec.r[n - 1] } as f64;
        out.trace = out.trace.max((p.trace() - want).abs());
        for q in dec.projections.iter().skip(n + 1) {
            out.mutual_orthogonality = out.mutual_orthogonality.max((p * q).norm());
        }
        total += p;
    }
    out.completeness = (total - &id).norm();
    let rot = &dec.rotation;
    out.rotation_orthogonality = (rot.transpose() * rot - &id).norm();
    let bp = dec.block_params();
    let mut start = 0;
    let widths: Vec<usize> = std::iter::once(dec.r0).chain(dec.r.iter().map(|r| 2 * r)).collect();
    for (n, &w) in widths.iter().enumerate() {
        let mut coord = DMatrix::zeros(d1, d1);
        for i in start..start + w {
            coord[(i, i)] = 1.0;
        }
        out.commutation = out.commutation.max((&dec.projections[n] * rot - rot * coord).norm());
        start += w;
    }
    out.symplectic = (rot.transpose() * j * rot - bp.twist_matrix()).norm();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    pub s: f64,
    pub signature_match: bool,
    /// Max relative deviation of `b^{s mu}` from `s b^mu`.
    pub b_residual: f64,
    /// Max `||P_n^{s mu} - P_n^mu||_F`.
    pub projection_residual: f64,
    pub passes: bool,
}

pub fn check_homogeneity(spec: &GroupSpec, mu: &[f64], s: f64) -> Result<HomogeneityReport> {
    if !(s > 0.0) {
        return Err(Error::InvalidParameter("scale s must be positive".into()));
    }
    let a = decompose(spec, mu, DEFAULT_CLUSTER_TOL)?;
    let scaled: Vec<f64> = mu.iter().map(|m| m * s).collect();
    let bdec = decompose(spec, &scaled, DEFAULT_CLUSTER_TOL)?;
    if a.signature() != bdec.signature() {
        return Ok(HomogeneityReport {
            s,
            signature_match: false,
            b_residual: f64::NAN,
            projection_residual: f64::NAN,
            passes: false,
        });
    }
    let b_residual = a.b.iter().zip(&bdec.b).map(|(x, y)| (y - s * x).abs() / (s * x)).fold(0.0, f64::max);
    let projection_residual = a.projections.iter().zip(&bdec.projections).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
    Ok(HomogeneityReport {
        s,
        signature_match: true,
        b_residual,
        projection_residual,
        passes: b_residual <= 1e-8 && projection_residual <= 1e-8,
    })
}

/// Sample points and stencil step for [`conjugation_residual`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StencilGrid {
    /// Finite-difference step.
    pub h: f64,
    /// Sample points per axis.
    pub n: usize,
    /// Samples cover `[-half_width, half_width]` on every axis.
    pub half_width: f64,
}

impl StencilGrid {
    pub fn points(&self, dim: usize) -> Vec<Vec<f64>> {
        let axis: Vec<f64> = if self.n == 1 {
            vec![0.0]
        } else {
            (0..self.n).map(|i| -self.half_width + 2.0 * self.half_width * i as f64 / (self.n - 1) as f64).collect()
        };
        let total = self.n.pow(dim as u32);
        (0..total)
            .map(|mut flat| {
                let mut p = vec![0.0; dim];
                for a in (0..dim).rev() {
                    p[a] = axis[flat % self.n];
                    flat /= self.n;
                }
                p
            })
            .collect()
    }
}

/// Relative L2 gap between `L^mu` applied to `phi(R^T x)` and `Delta^{(b,r)} phi` at `R^T x`,
/// both by second-order central differences.
pub fn conjugation_residual(spec: &GroupSpec, mu: &[f64], grid: &StencilGrid) -> Result<f64> {
    if grid.h > 0.5 {
        return Err(Error::GridTooCoarse { h: grid.h, limit: 0.5 });
    }
    if !(grid.h > 0.0) || grid.n == 0 {
        return Err(Error::InvalidParameter("stencil grid needs h > 0 and n >= 1".into()));
    }
    let dec = decompose(spec, mu, DEFAULT_CLUSTER_TOL)?;
    let j = spec.j_of_mu(mu)?;
    let d1 = spec.d1;
    let rot = dec.rotation.clone();
    let bp = dec.block_params();
    let twist = bp.twist_matrix();
    let coeffs: Vec<Complex64> = (0..d1).map(|a| Complex64::new(0.3, 0.2) * ((a + 1) as f64 / d1 as f64)).collect();
    let test = |y: &[f64]| -> Complex64 {
        let r2: f64 = y.iter().map(|v| v * v).sum();
        let lin: Complex64 = coeffs.iter().zip(y).map(|(c, v)| c * v).sum();
        (lin + 1.0) * (-0.5 * r2).exp()
    };
    let rotated = |x: &[f64]| -> Complex64 {
        let y = rot.transpose() * DVector::from_column_slice(x);
        test(y.as_slice())
    };
    let h = grid.h;
    let mut num = 0.0;
    let mut den = 0.0;
    for x in grid.points(d1) {
        let lhs = magnetic_fd(&rotated, &j, &x, h);
        let y = (rot.transpose() * DVector::from_column_slice(&x)).as_slice().to_vec();
        let rhs = magnetic_fd(&test, &twist, &y, h);
        num += (lhs - rhs).norm_sqr();
        den += rhs.norm_sqr();
    }
    Ok((num / den).sqrt())
}

/// `(-Delta + |J x|^2 / 4 - i (J x) . grad) f` at `x` by central differences.
fn magnetic_fd(f: &dyn Fn(&[f64]) -> Complex64, j: &DMatrix<f64>, x: &[f64], h: f64) -> Complex64 {
    let d = x.len();
    let jx = j * DVector::from_column_slice(x);
    let center = f(x);
    let mut out = center * (0.25 * jx.norm_squared());
    let mut xp = x.to_vec();
    for a in 0..d {
        xp[a] = x[a] + h;
        let fp = f(&xp);
        xp[a] = x[a] - h;
        let fm = f(&xp);
        xp[a] = x[a];
        out -= (fp - center * 2.0 + fm) / (h * h);
        out -= Complex64::new(0.0, jx[a]) * (fp - fm) / (2.0 * h);
    }
    out
}
