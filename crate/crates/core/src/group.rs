//! Two-step stratified groups described by their structure matrices.
//!
//! A group is encoded by `d2` skew-symmetric `d1 x d1` matrices `J^(k)`; for a
//! covector `mu` on the second layer, `J_mu = sum_k mu_k J^(k)` and the bracket
//! pairing is `omega_mu(x, x') = <J_mu x, x'>`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rational = Ratio<i64>;

const SKEW_TOL: f64 = 1e-12;
const CLASSIFY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct GroupSpec {
    pub label: String,
    pub d1: usize,
    pub d2: usize,
    pub structure: Vec<DMatrix<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    label: String,
    d1: usize,
    d2: usize,
    structure: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<RawSpec> for GroupSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let mats = raw
            .structure
            .iter()
            .map(|rows| {
                if rows.len() != raw.d1 || rows.iter().any(|r| r.len() != raw.d1) {
                    return Err(Error::DimensionMismatch { expected: raw.d1, got: rows.len() });
                }
                Ok(DMatrix::from_fn(raw.d1, raw.d1, |i, j| rows[i][j]))
            })
            .collect::<Result<Vec<_>>>()?;
        GroupSpec::new(raw.label, raw.d1, raw.d2, mats)
    }
}

impl From<GroupSpec> for RawSpec {
    fn from(spec: GroupSpec) -> Self {
        let structure = spec
            .structure
            .iter()
            .map(|m| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
            .collect();
        RawSpec { label: spec.label, d1: spec.d1, d2: spec.d2, structure }
    }
}

impl GroupSpec {
    /// Builds a spec, checking only shapes. Use [`validate`] for the algebraic invariants.
    pub fn new(label: impl Into<String>, d1: usize, d2: usize, structure: Vec<DMatrix<f64>>) -> Result<Self> {
        if d1 == 0 || d2 == 0 {
            return Err(Error::InvalidParameter("d1 and d2 must be positive".into()));
        }
        if structure.len() != d2 {
            return Err(Error::DimensionMismatch { expected: d2, got: structure.len() });
        }
        for m in &structure {
            if m.nrows() != d1 || m.ncols() != d1 {
                return Err(Error::DimensionMismatch { expected: d1, got: m.nrows().max(m.ncols()) });
            }
        }
        Ok(Self { label: label.into(), d1, d2, structure })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// Resolves a preset name such as `heisenberg:1` or `metivier-aniso:1,3`.
    pub fn preset(name: &str) -> Result<Self> {
        Preset::parse(name)?.build()
    }

    /// True when the spec coincides with the preset its label names.
    pub fn is_preset(&self) -> bool {
        Preset::parse(&self.label)
            .and_then(|p| p.build())
            .map(|p| p.d1 == self.d1 && p.d2 == self.d2 && p.structure == self.structure)
            .unwrap_or(false)
    }

    pub fn j_of_mu(&self, mu: &[f64]) -> Result<DMatrix<f64>> {
        if mu.len() != self.d2 {
            return Err(Error::DimensionMismatch { expected: self.d2, got: mu.len() });
        }
        let mut j = DMatrix::zeros(self.d1, self.d1);
        for (m, &c) in self.structure.iter().zip(mu) {
            j += m * c;
        }
        Ok(j)
    }

    /// `omega_mu(x, y) = <J_mu x, y>`.
    pub fn omega(&self, mu: &[f64], x: &[f64], y: &[f64]) -> Result<f64> {
        let j = self.j_of_mu(mu)?;
        if x.len() != self.d1 || y.len() != self.d1 {
            return Err(Error::DimensionMismatch { expected: self.d1, got: x.len().max(y.len()) });
        }
        let jx = &j * DVector::from_column_slice(x);
        Ok(jx.iter().zip(y).map(|(a, b)| a * b).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    Heisenberg(usize),
    HTypeQuaternion,
    MetivierAniso(f64, f64),
    FreeN32,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        let (head, arg) = match name.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (name.trim(), None),
        };
        let bad = || Error::Config(format!("unknown preset '{name}'"));
        match (head, arg) {
            ("heisenberg", None) => Ok(Preset::Heisenberg(1)),
            ("heisenberg", Some(a)) => {
                let m: usize = a.parse().map_err(|_| bad())?;
                if m == 0 {
                    return Err(bad());
                }
                Ok(Preset::Heisenberg(m))
            }
            ("htype-quaternion", None) => Ok(Preset::HTypeQuaternion),
            ("metivier-aniso", Some(a)) => {
                let (b1, b2) = a.split_once(',').ok_or_else(bad)?;
                let b1: f64 = b1.trim().parse().map_err(|_| bad())?;
                let b2: f64 = b2.trim().parse().map_err(|_| bad())?;
                if !(b1 > 0.0 && b2 > 0.0) {
                    return Err(bad());
                }
                Ok(Preset::MetivierAniso(b1, b2))
            }
            ("metivier-aniso", None) => Ok(Preset::MetivierAniso(1.0, 3.0)),
            ("free-n32", None) => Ok(Preset::FreeN32),
            _ => Err(bad()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Preset::Heisenberg(m) => format!("heisenberg:{m}"),
            Preset::HTypeQuaternion => "htype-quaternion".into(),
            Preset::MetivierAniso(b1, b2) => format!("metivier-aniso:{b1},{b2}"),
            Preset::FreeN32 => "free-n32".into(),
        }
    }

    pub fn build(&self) -> Result<GroupSpec> {
        let label = self.name();
        match *self {
            Preset::Heisenberg(m) => GroupSpec::new(label, 2 * m, 1, vec![standard_symplectic(m)]),
            Preset::HTypeQuaternion => {
                // Left multiplication by i, j, k on H = span(1, i, j, k).
                let li = [(1, 0, 1.0), (0, 1, -1.0), (3, 2, 1.0), (2, 3, -1.0)];
                let lj = [(2, 0, 1.0), (3, 1, -1.0), (0, 2, -1.0), (1, 3, 1.0)];
                let lk = [(3, 0, 1.0), (2, 1, 1.0), (1, 2, -1.0), (0, 3, -1.0)];
                let mats = [li, lj, lk]
                    .iter()
                    .map(|entries| {
                        let mut m = DMatrix::zeros(4, 4);
                        for &(r, c, v) in entries {
                            m[(r, c)] = v;
                        }
                        m
                    })
                    .collect();
                GroupSpec::new(label, 4, 3, mats)
            }
            Preset::MetivierAniso(b1, b2) => {
                let mut m = DMatrix::zeros(4, 4);
                m[(0, 1)] = -b1;
                m[(1, 0)] = b1;
                m[(2, 3)] = -b2;
                m[(3, 2)] = b2;
                GroupSpec::new(label, 4, 1, vec![m])
            }
            Preset::FreeN32 => {
                // J_mu x = mu x x, so <J_mu x, x'> = det(mu, x, x').
                let mats = (0..3)
                    .map(|k| {
                        let mut e = [0.0; 3];
                        e[k] = 1.0;
                        cross_matrix(&e)
                    })
                    .collect();
                GroupSpec::new(label, 3, 3, mats)
            }
        }
    }
}

/// `[[0, -I], [I, 0]]` on `R^{2m}`.
pub fn standard_symplectic(m: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        j[(i, m + i)] = -1.0;
        j[(m + i, i)] = 1.0;
    }
    j
}

fn cross_matrix(v: &[f64; 3]) -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub max_skew_residual: f64,
    pub stacking_rank: usize,
    pub passes: bool,
    pub failures: Vec<String>,
}

pub fn validate(spec: &GroupSpec) -> ValidationReport {
    let mut failures = Vec::new();
    let mut max_skew_residual: f64 = 0.0;
    for (k, m) in spec.structure.iter().enumerate() {
        let res = (m + m.transpose()).amax();
        max_skew_residual = max_skew_residual.max(res);
        if res > SKEW_TOL {
            failures.push(format!("J^({}) is not skew-symmetric (residual {res:e})", k + 1));
        }
    }
    let d1sq = spec.d1 * spec.d1;
    let stack = DMatrix::from_fn(spec.d2, d1sq, |k, idx| spec.structure[k][(idx / spec.d1, idx % spec.d1)]);
    let sv = stack.singular_values();
    let smax = sv.max();
    let stacking_rank = if smax == 0.0 { 0 } else { sv.iter().filter(|&&s| s > 1e-10 * smax).count() };
    if stacking_rank != spec.d2 {
        failures.push(format!("structure matrices are dependent (rank {stacking_rank} < d2 = {})", spec.d2));
    }
    ValidationReport { max_skew_residual, stacking_rank, passes: failures.is_empty(), failures }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupKind {
    HeisenbergType,
    Metivier,
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupClass {
    pub kind: GroupKind,
    pub samples: Vec<Vec<f64>>,
    /// Largest `||J_mu^2 + I||_F` over the sampled unit covectors.
    pub max_htype_residual: f64,
    /// Smallest singular value of `J_mu` over the sampled unit covectors.
    pub min_singular_value: f64,
    /// Set when the verdict rests on sampling rather than a known preset.
    pub probabilistic: bool,
}

/// Draws `samples` unit covectors and tests the H-type and Metivier conditions.
pub fn classify(spec: &GroupSpec, samples: usize, seed: u64) -> GroupClass {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = DMatrix::<f64>::identity(spec.d1, spec.d1);
    let mut max_htype_residual: f64 = 0.0;
    let mut min_singular_value = f64::INFINITY;
    let mut drawn = Vec::with_capacity(samples.max(1));
    for _ in 0..samples.max(1) {
        let mu = random_unit(&mut rng, spec.d2);
        let j = spec.j_of_mu(&mu).expect("sample has length d2");
        max_htype_residual = max_htype_residual.max((&j * &j + &id).norm());
        min_singular_value = min_singular_value.min(j.singular_values().min());
        drawn.push(mu);
    }
    let kind = if max_htype_residual <= CLASSIFY_TOL {
        GroupKind::HeisenbergType
    } else if min_singular_value >= CLASSIFY_TOL {
        GroupKind::Metivier
    } else {
        GroupKind::General
    };
    GroupClass { kind, samples: drawn, max_htype_residual, min_singular_value, probabilistic: !spec.is_preset() }
}

pub(crate) fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `p_n = 2(n+1)/(n+3)`.
pub fn stein_tomas_exponent(n: u32) -> Result<Rational> {
    if n == 0 {
        return Err(Error::InvalidParameter("Stein-Tomas exponent needs n >= 1".into()));
    }
    let n = i64::from(n);
    Ok(Rational::new(2 * (n + 1), n + 3))
}

/// Solves `1/p = (1 - theta) + theta/p_min` for `theta`.
///
/// When `p_min = 1` the equation is degenerate and `theta = 0` is returned.
pub fn theta_interpolation(p: Rational, p_min: Rational) -> Result<Rational> {
    let one = Rational::from_integer(1);
    let two = Rational::from_integer(2);
    if p < one || p > p_min || p_min > two {
        return Err(Error::InvalidParameter(format!("need 1 <= p <= p_min <= 2, got p={p}, p_min={p_min}")));
    }
    if p_min == one {
        return Ok(Rational::from_integer(0));
    }
    Ok((one - p.recip()) / (one - p_min.recip()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(a: i64, b: i64) -> Rational {
        Rational::new(a, b)
    }

    #[test]
    fn heisenberg_j() {
        let h = GroupSpec::preset("heisenberg:1").unwrap();
        let j = h.j_of_mu(&[1.0]).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
        assert_eq!(h.j_of_mu(&[0.0]).unwrap(), DMatrix::zeros(2, 2));
        assert!(h.j_of_mu(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn free_n32_matches_determinant() {
        let g = GroupSpec::preset("free-n32").unwrap();
        let j = g.j_of_mu(&[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        // <J_mu x, x'> = det(mu, x, x') on basis pairs for a generic mu.
        let mu = [0.3, -1.2, 0.7];
        let det = |a: [f64; 3], b: [f64; 3], c: [f64; 3]| {
            a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0])
        };
        for i in 0..3 {
            for k in 0..3 {
                let mut x = [0.0; 3];
                let mut y = [0.0; 3];
                x[i] = 1.0;
                y[k] = 1.0;
                let w = g.omega(&mu, &x, &y).unwrap();
                assert!((w - det(mu, x, y)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn validation_examples() {
        let rep = validate(&GroupSpec::preset("heisenberg:1").unwrap());
        assert!(rep.passes);
        assert_eq!(rep.max_skew_residual, 0.0);

        let not_skew = GroupSpec::new("id", 2, 1, vec![DMatrix::identity(2, 2)]).unwrap();
        assert!(!validate(&not_skew).passes);

        let j = standard_symplectic(1);
        let dependent = GroupSpec::new("dep", 2, 2, vec![j.clone(), j * 2.0]).unwrap();
        let rep = validate(&dependent);
        assert!(!rep.passes);
        assert_eq!(rep.stacking_rank, 1);
    }

    #[test]
    fn presets_validate() {
        for name in ["heisenberg:1", "heisenberg:3", "htype-quaternion", "metivier-aniso:1,3", "free-n32"] {
            let spec = GroupSpec::preset(name).unwrap();
            assert!(validate(&spec).passes, "{name}");
            assert!(spec.is_preset());
        }
    }

    #[test]
    fn quaternion_is_htype() {
        let q = GroupSpec::preset("htype-quaternion").unwrap();
        let mu = [0.2, -0.5, 0.9];
        let n2: f64 = mu.iter().map(|x| x * x).sum();
        let j = q.j_of_mu(&mu).unwrap();
        let resid = (&j * &j + DMatrix::<f64>::identity(4, 4) * n2).amax();
        assert!(resid < 1e-14);
    }

    #[test]
    fn classification() {
        for seed in [0, 7, 12345] {
            let c = classify(&GroupSpec::preset("heisenberg:1").unwrap(), 16, seed);
            assert_eq!(c.kind, GroupKind::HeisenbergType);
            assert!(!c.probabilistic);
            assert_eq!(classify(&GroupSpec::preset("htype-quaternion").unwrap(), 16, seed).kind, GroupKind::HeisenbergType);
            assert_eq!(classify(&GroupSpec::preset("free-n32").unwrap(), 16, seed).kind, GroupKind::General);
            assert_eq!(classify(&GroupSpec::preset("metivier-aniso:1,3").unwrap(), 16, seed).kind, GroupKind::Metivier);
        }
        let custom = GroupSpec::new("custom", 2, 1, vec![standard_symplectic(1)]).unwrap();
        assert!(classify(&custom, 4, 1).probabilistic);
    }

    #[test]
    fn stein_tomas_values() {
        assert_eq!(stein_tomas_exponent(1).unwrap(), r(1, 1));
        assert_eq!(stein_tomas_exponent(2).unwrap(), r(6, 5));
        assert_eq!(stein_tomas_exponent(3).unwrap(), r(4, 3));
        assert!(stein_tomas_exponent(0).is_err());
    }

    #[test]
    fn theta_values() {
        assert_eq!(theta_interpolation(r(1, 1), r(6, 5)).unwrap(), r(0, 1));
        assert_eq!(theta_interpolation(r(6, 5), r(6, 5)).unwrap(), r(1, 1));
        assert_eq!(theta_interpolation(r(12, 11), r(6, 5)).unwrap(), r(1, 2));
        assert!(theta_interpolation(r(5, 4), r(6, 5)).is_err());
    }

    #[test]
    fn json_roundtrip_and_shape_errors() {
        let spec = GroupSpec::preset("metivier-aniso:1,3").unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(GroupSpec::from_json_str(&text).unwrap(), spec);
        let bad = r#"{"label":"x","d1":2,"d2":1,"structure":[[[0,1,2],[1,0,0]]]}"#;
        assert!(GroupSpec::from_json_str(bad).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn preset_strategy() -> impl Strategy<Value = GroupSpec> {
            prop_oneof![
                Just("heisenberg:2"),
                Just("htype-quaternion"),
                Just("metivier-aniso:1,3"),
                Just("free-n32")
            ]
            .prop_map(|n| GroupSpec::preset(n).unwrap())
        }

        proptest! {
            #[test]
            fn j_is_linear(spec in preset_strategy(), a in -3.0..3.0f64, b in -3.0..3.0f64,
                           mu in prop::collection::vec(-2.0..2.0f64, 3), nu in prop::collection::vec(-2.0..2.0f64, 3)) {
                let mu = &mu[..spec.d2];
                let nu = &nu[..spec.d2];
                let comb: Vec<f64> = mu.iter().zip(nu).map(|(x, y)| a * x + b * y).collect();
                let lhs = spec.j_of_mu(&comb).unwrap();
                let rhs = spec.j_of_mu(mu).unwrap() * a + spec.j_of_mu(nu).unwrap() * b;
                prop_assert!((lhs - rhs).amax() <= 1e-14);
            }

            #[test]
            fn j_is_skew(spec in preset_strategy(), mu in prop::collection::vec(-5.0..5.0f64, 3)) {
                let j = spec.j_of_mu(&mu[..spec.d2]).unwrap();
                prop_assert_eq!((&j + j.transpose()).amax(), 0.0);
            }
        }
    }
}
