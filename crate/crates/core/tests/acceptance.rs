//! Acceptance checks, one line per criterion. Run with `cargo test --test acceptance`.

use std::f64::consts::SQRT_2;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use twistlab_core::cluster::{cluster_scan, fit_exponent, scaling_identity_check, theoretical_exponent, ClusterSpec};
use twistlab_core::harness::{run, ExperimentConfig};
use twistlab_core::heat::{heat_apply, mehler_vs_eigen, ComplexTime};
use twistlab_core::laguerre::phi;
use twistlab_core::quadrature::SphereRule;
use twistlab_core::restriction::{
    apply_joint_multiplier, bump_restriction_ratios, cowling_sikora_norm, ell0_threshold, log2_slope, norm_lower_sandwich_check,
    plancherel_kernel_norm, restriction_scan, MultiplierPair, QuadConfig, SampledFunction,
};
use twistlab_core::symplectic::{decompose, DEFAULT_CLUSTER_TOL};
use twistlab_core::twisted::{apply_projection, apply_twisted_laplacian, projection_constant};
use twistlab_core::{BlockParams, Complex64, Grid, GridFunction, GroupSpec, LatticePoint};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn h1() -> GroupSpec {
    GroupSpec::preset("heisenberg:1").unwrap()
}

fn standard_pair(ell: i32) -> MultiplierPair {
    MultiplierPair::new(SampledFunction::indicator(1.0, 4.0, 3001).unwrap(), SampledFunction::smooth_bump(0.5, 2.0, 2001).unwrap(), ell).unwrap()
}

fn decomposition() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for name in ["heisenberg:1", "htype-quaternion", "metivier-aniso", "free-n32"] {
        let spec = GroupSpec::preset(name).unwrap();
        for _ in 0..100 {
            let mu = unit(&mut rng, spec.d2);
            match decompose(&spec, &mu, DEFAULT_CLUSTER_TOL) {
                Ok(d) => worst = worst.max(d.residuals.max()),
                Err(e) => return outcome(false, format!("{name} at {mu:?}: {e}")),
            }
        }
    }
    outcome(worst <= 1e-8, format!("max residual {worst:.2e} over 4 presets x 100 covectors"))
}

fn laguerre_projections() -> Outcome {
    let p = BlockParams::plane(1.0);
    let c = projection_constant(&p);
    let grid = Grid::centered(2, 64, 12.0);
    let f = GridFunction::from_fn(grid, |x| {
        Complex64::new(1.0 + 0.4 * x[0], -0.3 * x[1]) * (-((x[0] - 0.7).powi(2) + (x[1] + 0.2).powi(2)) / 3.0).exp()
    });
    let proj: Vec<GridFunction> = (0..=5u64).map(|k| apply_projection(&f, &LatticePoint::new(vec![k]), &p, c).unwrap()).collect();
    let mut idem: f64 = 0.0;
    let mut orth: f64 = 0.0;
    for (k, pk) in proj.iter().enumerate() {
        let again = apply_projection(pk, &LatticePoint::new(vec![k as u64]), &p, c).unwrap();
        idem = idem.max(again.relative_error(pk));
        for j in 0..=5u64 {
            if j as usize != k {
                let cross = apply_projection(pk, &LatticePoint::new(vec![j]), &p, c).unwrap();
                orth = orth.max(cross.l2_norm() / f.l2_norm());
            }
        }
    }
    let fine = Grid::centered(2, 321, 8.0);
    let mut fd: f64 = 0.0;
    for k in 0..=2u64 {
        let g = GridFunction::from_real_fn(fine.clone(), |x| phi(k, 1.0, 1, x).unwrap());
        let lam = (2 * k + 1) as f64;
        fd = fd.max(apply_twisted_laplacian(&g, &p).unwrap().relative_error(&g.scale(Complex64::new(lam, 0.0))));
    }
    outcome(
        idem <= 1e-6 && orth <= 1e-6 && fd <= 5e-3,
        format!("idempotency {idem:.2e}, orthogonality {orth:.2e}, eigenrelation {fd:.2e} at h = 0.05"),
    )
}

fn mehler() -> Outcome {
    let p = BlockParams::plane(1.0);
    let grid = Grid::centered(2, 64, 8.0);
    let pts: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.point(i)).collect();
    let sup = mehler_vs_eigen(0.5, &p, &pts, 40.0).unwrap();
    let f = GridFunction::from_fn(grid, |x| Complex64::new(1.0 + 0.5 * x[0], 0.3 * x[1]) * (-(x[0] * x[0] + 2.0 * x[1] * x[1]) / 3.0).exp());
    let t = |s: f64| ComplexTime::real(s).unwrap();
    let two = heat_apply(&heat_apply(&f, &t(0.2), &p).unwrap(), &t(0.3), &p).unwrap();
    let semigroup = two.relative_error(&heat_apply(&f, &t(0.5), &p).unwrap());
    outcome(sup <= 1e-8 && semigroup <= 1e-6, format!("Mehler vs eigen {sup:.2e}, semigroup {semigroup:.2e}"))
}

fn cluster_p1() -> Outcome {
    let plane = BlockParams::plane(1.0);
    let ks: Vec<u64> = (1..=401).collect();
    let rows = cluster_scan(&plane, &ks, 1.0, None).unwrap();
    let s1 = fit_exponent(&rows.iter().map(|r| (r.k, r.norm_exact_1to2)).collect::<Vec<_>>(), 0).unwrap().slope;
    let pair = BlockParams::new(vec![1.0, SQRT_2], vec![1, 1], 0).unwrap();
    let ks: Vec<u64> = (50..=400).collect();
    let rows = cluster_scan(&pair, &ks, 1.0, None).unwrap();
    let s2 = fit_exponent(&rows.iter().map(|r| (r.k, r.norm_exact_1to2)).collect::<Vec<_>>(), 0).unwrap().slope;
    outcome(
        (s1 - theoretical_exponent(2, 1.0)).abs() <= 0.05 && (s2 - theoretical_exponent(4, 1.0)).abs() <= 0.05,
        format!("slopes {s1:.4} (d1 = 2, want 0) and {s2:.4} (d1 = 4, want 0.5)"),
    )
}

fn cluster_envelope() -> Outcome {
    let p = 1.2;
    let theory = theoretical_exponent(2, p);
    let ks: Vec<u64> = (1..=61).step_by(2).collect();
    let rows = cluster_scan(&BlockParams::plane(1.0), &ks, p, Some((4, 42))).unwrap();
    let at = |k: u64| rows.iter().find(|r| r.k == k).and_then(|r| r.norm_lower_p).unwrap();
    let c = at(11) / 12f64.powf(theory);
    let (worst_k, worst) = rows
        .iter()
        .map(|r| (r.k, r.norm_lower_p.unwrap() / (c * ((r.k + 1) as f64).powf(theory))))
        .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    outcome(worst <= 1.05, format!("max lower bound / C (K+1)^(-1/6) = {worst:.4} at K = {worst_k}"))
}

fn rescaled_cluster() -> Outcome {
    let mut worst: f64 = 0.0;
    for (params, k) in [(BlockParams::plane(1.0), 7u64), (BlockParams::new(vec![1.0, SQRT_2], vec![1, 1], 0).unwrap(), 40)] {
        let cs = ClusterSpec::new(k, params).unwrap();
        for s in [0.25, 1.0, 4.0] {
            worst = worst.max(scaling_identity_check(&cs, s).unwrap().relative_error);
        }
    }
    outcome(worst <= 1e-12, format!("max relative error {worst:.2e}"))
}

fn plancherel_scaling() -> Outcome {
    let q = QuadConfig::default();
    let ells: Vec<i32> = (2..=8).collect();
    let h = log2_slope(&restriction_scan(&h1(), &standard_pair(0), &ells, &q).unwrap()).unwrap();
    let free = GroupSpec::preset("free-n32").unwrap();
    let f = log2_slope(&restriction_scan(&free, &standard_pair(0), &ells, &q).unwrap()).unwrap();
    let mut drift: f64 = 0.0;
    for spec in [h1(), free] {
        for ell in [0, 4] {
            let a = plancherel_kernel_norm(&spec, &standard_pair(ell), &q).unwrap();
            let b = plancherel_kernel_norm(&spec, &standard_pair(ell), &q.doubled()).unwrap();
            drift = drift.max((a - b).abs() / b);
        }
    }
    outcome(
        (h + 1.0).abs() <= 0.1 && (f + 3.0).abs() <= 0.15 && drift < 5e-3,
        format!("slopes {h:.4} (H1) and {f:.4} (free-n32), doubling change {drift:.2e}"),
    )
}

fn truncation_threshold() -> Outcome {
    let rule = SphereRule::default_for(1).unwrap();
    let l0 = ell0_threshold(&h1(), [1.0, 4.0], [0.5, 2.0], &rule).unwrap();
    let q = QuadConfig::default();
    let ratio = plancherel_kernel_norm(&h1(), &standard_pair(-4), &q).unwrap() / plancherel_kernel_norm(&h1(), &standard_pair(0), &q).unwrap();
    outcome(l0 == 3 && ratio <= 1e-10, format!("l0 = {l0}, norm ratio l = -4 vs 0 = {ratio:.2e}"))
}

fn joint_multiplier() -> Outcome {
    let n = 64;
    let grid = Grid::new(vec![n, n, n], vec![16.0 / n as f64, 16.0 / n as f64, 20.0 / n as f64], vec![-8.0, -8.0, -10.0]).unwrap();
    let f = GridFunction::from_real_fn(grid, |p| (-0.5 * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2])).exp());
    let one = MultiplierPair::new(
        SampledFunction::indicator(0.0, 1000.0, 1001).unwrap(),
        SampledFunction::indicator(0.0, 1000.0, 1001).unwrap(),
        0,
    )
    .unwrap();
    let id = apply_joint_multiplier(&h1(), &f, &one, None).unwrap();
    let id_err = id.output.relative_error(&f);
    let mp = MultiplierPair::new(SampledFunction::indicator(1.0, 9.0, 8001).unwrap(), SampledFunction::smooth_bump(0.5, 2.0, 2001).unwrap(), -1).unwrap();
    let r = apply_joint_multiplier(&h1(), &f, &mp, None).unwrap();
    let planch = (r.output_norm - r.plancherel_norm).abs() / r.plancherel_norm;
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
    outcome(
        id_err <= 1e-2 && !id.truncated && planch <= 1e-2 && hi / lo <= 2.0,
        format!("identity {id_err:.2e} (captured {:.5}), Plancherel {planch:.2e}, restriction band {:.3}", id.captured_mass, hi / lo),
    )
}

fn cowling_sikora() -> Outcome {
    let ind = SampledFunction::indicator(0.0, 1.0, 1001).unwrap();
    let ramp = SampledFunction::from_fn([0.0, 1.0], 1001, |x| x).unwrap();
    let examples = [
        (cowling_sikora_norm(&ind, 1.0).unwrap(), 1.0),
        (cowling_sikora_norm(&ind, 2.0).unwrap(), 1.0),
        (cowling_sikora_norm(&ramp, 2.0).unwrap(), (0.5f64 * 1.25).sqrt()),
    ];
    let example_err = examples.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    use rand::Rng;
    let mut holds = 0;
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
        if [1.0, 2.0, 8.0].iter().all(|&m| norm_lower_sandwich_check(&f, m).unwrap().holds) {
            holds += 1;
        }
    }
    outcome(example_err <= 1e-12 && holds == 100, format!("example error {example_err:.1e}, sandwich holds on {holds}/100"))
}

fn determinism() -> Outcome {
    let configs = [
        r#"{"group":"free-n32","experiment":"validate"}"#,
        r#"{"group":"metivier-aniso","experiment":"decompose","parameters":{"samples":50}}"#,
        r#"{"group":"htype-quaternion","experiment":"spectrum","parameters":{"lambda_max":30}}"#,
        r#"{"group":"heisenberg:1","experiment":"cluster-scan","parameters":{"p":1,"K_max":401}}"#,
        r#"{"group":"heisenberg:1","experiment":"cluster-scan","parameters":{"p":1.2,"K_max":21,"odd_only":true,"name":"envelope"}}"#,
        r#"{"group":"heisenberg:2","experiment":"heat-check","parameters":{"points":32}}"#,
        r#"{"group":"free-n32","experiment":"restriction-scan","parameters":{"ell_min":2,"ell_max":5}}"#,
        r#"{"group":"heisenberg:1","experiment":"report"}"#,
    ];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut mismatched = Vec::new();
    for json in configs {
        let mut names = Vec::new();
        for d in &dirs {
            let mut c = ExperimentConfig::from_json_str(json).unwrap();
            c.output = d.path().to_path_buf();
            if let Err(e) = run(&c) {
                return outcome(false, format!("{json}: {e}"));
            }
            names.push(c.name());
        }
        let read = |d: &Path| std::fs::read(d.join(format!("{}.csv", names[0]))).unwrap();
        if read(dirs[0].path()) != read(dirs[1].path()) {
            mismatched.push(names[0].clone());
        }
    }
    outcome(mismatched.is_empty(), format!("{} experiments rerun, CSV mismatches: {mismatched:?}", configs.len()))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 11] = [
        ("symplectic decomposition", Duration::from_secs(10), decomposition),
        ("Laguerre projections", Duration::from_secs(60), laguerre_projections),
        ("Mehler consistency", Duration::from_secs(60), mehler),
        ("cluster exponent p = 1", Duration::from_secs(10), cluster_p1),
        ("cluster envelope p = 6/5", Duration::from_secs(600), cluster_envelope),
        ("rescaled-cluster identity", Duration::from_secs(1), rescaled_cluster),
        ("Plancherel scaling", Duration::from_secs(300), plancherel_scaling),
        ("truncation threshold", Duration::from_secs(60), truncation_threshold),
        ("joint-multiplier chain", Duration::from_secs(600), joint_multiplier),
        ("Cowling-Sikora norms", Duration::from_secs(5), cowling_sikora),
        ("determinism", Duration::from_secs(600), determinism),
    ];
    let mut failures = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = check();
        let elapsed = start.elapsed();
        let ok = out.passed && elapsed <= *budget;
        if !ok {
            failures += 1;
        }
        println!(
            "{} {:>2} {name}: {} [{:.1}s / {}s]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            out.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{}/{} criteria pass", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
