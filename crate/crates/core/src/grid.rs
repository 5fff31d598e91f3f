//! Uniform tensor grids and complex-valued grid functions.
//!
//! Data is stored row-major (last axis fastest). On disk a grid function is a
//! flat little-endian array of `(re, im)` f64 pairs next to a JSON sidecar
//! holding shape, spacing and origin.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    pub origin: Vec<f64>,
}

impl Grid {
    pub fn new(shape: Vec<usize>, spacing: Vec<f64>, origin: Vec<f64>) -> Result<Self> {
        if shape.len() != spacing.len() || shape.len() != origin.len() || shape.is_empty() {
            return Err(Error::GridMismatch("shape, spacing and origin lengths differ".into()));
        }
        if shape.contains(&0) || spacing.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::GridMismatch("empty axis or nonpositive spacing".into()));
        }
        Ok(Self { shape, spacing, origin })
    }

    /// `n` points per axis covering `[-half_width, half_width]` inclusive.
    pub fn centered(dim: usize, n: usize, half_width: f64) -> Self {
        assert!(n >= 2 && half_width > 0.0);
        let h = 2.0 * half_width / (n - 1) as f64;
        Self { shape: vec![n; dim], spacing: vec![h; dim], origin: vec![-half_width; dim] }
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trapezoid cell volume.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn axis(&self, a: usize) -> Vec<f64> {
        (0..self.shape[a]).map(|i| self.origin[a] + i as f64 * self.spacing[a]).collect()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.shape[a];
            flat /= self.shape[a];
        }
        idx
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.origin[a] + i as f64 * self.spacing[a])
            .collect()
    }

    /// Index of the grid point at the origin, when the origin lies on the grid.
    pub fn origin_index(&self) -> Option<Vec<usize>> {
        self.origin
            .iter()
            .zip(&self.spacing)
            .zip(&self.shape)
            .map(|((o, h), &n)| {
                let i = (-o / h).round();
                let ok = (o + i * h).abs() < 1e-9 * h && i >= 0.0 && (i as usize) < n;
                ok.then_some(i as usize)
            })
            .collect()
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(0.0, f64::max)
    }

    fn is_boundary(&self, flat: usize) -> bool {
        self.multi_index(flat).iter().zip(&self.shape).any(|(&i, &n)| i == 0 || i + 1 == n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub data: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    shape: Vec<usize>,
    spacing: Vec<f64>,
    origin: Vec<f64>,
    dtype: String,
    layout: String,
}

impl GridFunction {
    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        Self { grid, data: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let data = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self { grid, data }
    }

    pub fn from_real_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        Self::from_fn(grid, |x| Complex64::new(f(x), 0.0))
    }

    pub fn l2_norm(&self) -> f64 {
        (self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    /// `sum f conj(g) dV`.
    pub fn inner(&self, other: &GridFunction) -> Complex64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b.conj()).sum::<Complex64>() * self.grid.cell_volume()
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        GridFunction { grid: self.grid.clone(), data }
    }

    pub fn scale(&self, s: Complex64) -> GridFunction {
        GridFunction { grid: self.grid.clone(), data: self.data.iter().map(|v| v * s).collect() }
    }

    /// `||self - other|| / ||other||`.
    pub fn relative_error(&self, reference: &GridFunction) -> f64 {
        let denom = reference.l2_norm();
        let num = self.sub(reference).l2_norm();
        if denom == 0.0 {
            num
        } else {
            num / denom
        }
    }

    /// Largest modulus on the outer shell, relative to the overall maximum.
    pub fn boundary_ratio(&self) -> f64 {
        let peak = self.data.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let edge = (0..self.data.len())
            .filter(|&i| self.grid.is_boundary(i))
            .map(|i| self.data[i].norm())
            .fold(0.0, f64::max);
        edge / peak
    }

    pub fn same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid.shape, other.grid.shape)));
        }
        Ok(())
    }

    /// Writes `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<()> {
        let (bin, json) = paths(stem.as_ref());
        let mut w = BufWriter::new(File::create(bin)?);
        for v in &self.data {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        w.flush()?;
        let side = Sidecar {
            shape: self.grid.shape.clone(),
            spacing: self.grid.spacing.clone(),
            origin: self.grid.origin.clone(),
            dtype: "complex128-le".into(),
            layout: "row-major".into(),
        };
        std::fs::write(json, serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<Self> {
        let (bin, json) = paths(stem.as_ref());
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(json)?)?;
        if side.dtype != "complex128-le" {
            return Err(Error::GridMismatch(format!("unsupported dtype {}", side.dtype)));
        }
        let grid = Grid::new(side.shape, side.spacing, side.origin)?;
        let mut bytes = Vec::new();
        BufReader::new(File::open(bin)?).read_to_end(&mut bytes)?;
        if bytes.len() != grid.len() * 16 {
            return Err(Error::GridMismatch(format!("expected {} bytes, found {}", grid.len() * 16, bytes.len())));
        }
        let data = bytes
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect();
        Ok(Self { grid, data })
    }
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}
