//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails. Runs without the libtest harness so
//! the lines always reach the output.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use etagap_core::bounds::{lemma31_suite, yang_check, BoundKind, RowStatus};
use etagap_core::fields::{apply_operator_l, tensor_bounds, ScalarField};
use etagap_core::scenario::{
    builtin_names, run_scenario, Decimal, Overrides, ResolvedScenario, ScenarioConfig, ScenarioRun,
};
use etagap_core::spectral::validate_spectrum;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

struct Timed {
    run: ScenarioRun,
    resolved: ResolvedScenario,
    elapsed: Duration,
}

fn run_builtin(name: &str) -> Timed {
    let cfg = ScenarioConfig::builtin(name).unwrap();
    let start = Instant::now();
    let resolved = ResolvedScenario::new(&cfg, &Overrides::default()).unwrap();
    let run = run_scenario(&resolved).unwrap();
    Timed { run, resolved, elapsed: start.elapsed() }
}

fn max_rel_error(computed: &[f64], expected: &[f64]) -> f64 {
    computed.iter().zip(expected).map(|(c, e)| (c - e).abs() / e).fold(0.0, f64::max)
}

/// Sorted `Σ c_i p_i²` over positive integers, first `k`.
fn lattice_oracle(coeffs: &[f64], k: usize) -> Vec<f64> {
    let mut v = Vec::new();
    for p in 1..=k {
        for q in 1..=k {
            v.push(coeffs[0] * (p * p) as f64 + coeffs[1] * (q * q) as f64);
        }
    }
    v.sort_by(f64::total_cmp);
    v.truncate(k);
    v
}

fn gap_rows_pass(t: &Timed, kind: BoundKind, k_lo: usize, k_hi: usize) -> Result<(), String> {
    let g = t
        .run
        .report
        .gap_reports
        .iter()
        .find(|g| g.bound == kind)
        .ok_or(format!("no {kind} report"))?;
    for k in k_lo..=k_hi {
        let row = g.rows.iter().find(|r| r.k == k).ok_or(format!("{kind}: no row k={k}"))?;
        ensure(row.status == RowStatus::Pass, format!("{kind} row k={k} is {:?}", row.status))?;
    }
    Ok(())
}

fn criterion1(t: &Timed) -> Check {
    let lam = &t.run.spectrum.eigenvalues;
    let expected: Vec<f64> = (1..=10).map(|k| (k * k) as f64).collect();
    let err = max_rel_error(lam, &expected);
    ensure(lam.len() == 10 && err <= 1e-3, format!("max relative error {err:.3e}"))?;
    ensure(t.elapsed < Duration::from_secs(10), format!("runtime {:?}", t.elapsed))?;
    let g = t.run.report.gap_reports.iter().find(|g| g.bound == BoundKind::Cor1Iv).unwrap();
    let c = 4.0 * 5f64.sqrt() * lam[0];
    ensure((g.c - c).abs() <= 1e-12 * c, format!("C = {} vs 4√5·λ₁ = {c}", g.c))?;
    gap_rows_pass(t, BoundKind::Thm11, 2, 9)?;
    gap_rows_pass(t, BoundKind::Cor1Iv, 2, 9)?;
    Ok(format!("max rel err {err:.2e}, C = {:.6}, {:.2?}", g.c, t.elapsed))
}

fn criterion2(t: &Timed) -> Check {
    let lam = &t.run.spectrum.eigenvalues;
    let expected = lattice_oracle(&[1.0, 1.0], 12);
    let err = max_rel_error(lam, &expected);
    ensure(lam.len() == 12 && err <= 1e-2, format!("max relative error {err:.3e}"))?;
    gap_rows_pass(t, BoundKind::Thm11, 2, 10)?;
    let s = &t.run.spectrum;
    // expected sequence 2,5,5,8,10,10,13,13,17,17,18,20
    ensure(s.same_multiplet(2, 3), "λ₂, λ₃ (5,5) not grouped")?;
    ensure(s.same_multiplet(5, 6), "λ₅, λ₆ (10,10) not grouped")?;
    ensure(!s.same_multiplet(1, 2) && !s.same_multiplet(4, 5), "spurious multiplet")?;
    ensure(t.elapsed < Duration::from_secs(60), format!("runtime {:?}", t.elapsed))?;
    Ok(format!("max rel err {err:.2e}, {:.2?}", t.elapsed))
}

fn criterion3(t: &Timed) -> Check {
    let lam = &t.run.spectrum.eigenvalues;
    let expected = lattice_oracle(&[2.0, 3.0], 12);
    let err = max_rel_error(lam, &expected);
    ensure(err <= 1e-2, format!("max relative error {err:.3e}"))?;
    let (eps, delta) = tensor_bounds(&t.resolved.field, &t.resolved.domain).map_err(|e| e.to_string())?;
    ensure(eps == 2.0 && delta == 3.0, format!("tensor bounds ({eps}, {delta})"))?;
    let c = t.run.report.constants.as_ref().unwrap();
    ensure(c.sigma() == 4.0, format!("σ = {}", c.sigma()))?;
    let g = t.run.report.gap_reports.iter().find(|g| g.bound == BoundKind::Thm11).unwrap();
    ensure((g.exponent - 0.75).abs() < 1e-15, format!("exponent {}", g.exponent))?;
    gap_rows_pass(t, BoundKind::Thm11, 2, 10)?;
    Ok(format!("max rel err {err:.2e}, ε = {eps}, δ = {delta}, σ = 4"))
}

fn criterion4(t: &Timed) -> Check {
    let lam = &t.run.spectrum.eigenvalues;
    let expected: Vec<f64> = (1..=10).map(|k| (k * k) as f64 + 0.25).collect();
    let err = max_rel_error(lam, &expected);
    ensure(err <= 2e-3, format!("max relative error {err:.3e}"))?;
    let c0 = t.run.report.constants.as_ref().unwrap().c0;
    ensure((c0 + 0.25).abs() <= 1e-6, format!("C₀ = {c0}"))?;
    let y = t.run.report.yang.as_ref().ok_or("no yang report")?;
    for k in 1..=8 {
        let row = y.rows.iter().find(|r| r.k == k).ok_or(format!("no yang row {k}"))?;
        let kk = (k + 1) as f64;
        ensure((row.upsilon_k1 - kk * kk).abs() <= 1e-3 * kk * kk, format!("υ_{} = {}", k + 1, row.upsilon_k1))?;
        ensure(row.pass, format!("yang row {k} fails"))?;
    }
    Ok(format!("max rel err {err:.2e}, C₀ = {c0:.9}"))
}

fn criterion5() -> Check {
    let start = Instant::now();
    let suite = lemma31_suite(10_000, 31).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(suite.counterexamples.is_empty(), format!("{} counterexamples", suite.counterexamples.len()))?;
    ensure(suite.two_term_max_defect <= 1e-12, format!("two-term defect {:e}", suite.two_term_max_defect))?;
    ensure(elapsed < Duration::from_secs(5), format!("runtime {elapsed:?}"))?;
    Ok(format!("{} hypothesis-satisfying instances, {elapsed:.2?}", suite.hypothesis_satisfied))
}

fn criterion6(runs: &BTreeMap<&str, Timed>) -> Check {
    let mut rows = 0;
    for name in ["interval_laplacian", "square_laplacian", "anisotropic_square", "drift_interval", "hyperbolic_cy"] {
        let t = &runs[name];
        let consts = t.resolved.operator_constants().map_err(|e| e.to_string())?;
        let y = yang_check(&t.run.spectrum.eigenvalues, &consts).map_err(|e| e.to_string())?;
        ensure(y.passed(), format!("{name}: yang violation"))?;
        let first = &y.rows[0];
        let rhs = (1.0 + 4.0 * consts.delta / (consts.n as f64 * consts.epsilon)) * y.upsilon1;
        ensure(first.k == 1 && (first.rhs - rhs).abs() <= 1e-12 * rhs, format!("{name}: k=1 row"))?;
        rows += y.rows.len();
    }
    Ok(format!("{rows} rows over 5 spectra"))
}

fn criterion7(t: &Timed) -> Check {
    let rows = &t.run.report.cor32;
    let s = &t.run.spectrum;
    for f in ["x1", "x2"] {
        for k in 1..=8 {
            let valid = s.lambda(k + 1) < s.lambda(k + 2) && !s.same_multiplet(k + 1, k + 2);
            let row = rows.iter().find(|r| r.f == f && r.k == k && r.j == 1);
            match (valid, row) {
                (true, Some(r)) => {
                    ensure(r.holds_squared && r.holds_linear, format!("{f} k={k} violated"))?;
                    ensure(r.implication_ok && r.chain_ok, format!("{f} k={k} implication"))?;
                    ensure(r.margin_squared.is_finite() && r.margin_linear.is_finite(), "margins")?;
                }
                (true, None) => return Err(format!("{f} k={k} missing")),
                (false, _) => {}
            }
        }
    }
    Ok(format!("{} rows", rows.len()))
}

fn criterion8(t: &Timed) -> Check {
    let max_defect = t.run.report.validation.rayleigh_defects.iter().copied().fold(0.0, f64::max);
    ensure(max_defect < 1e-7, format!("Rayleigh defect {max_defect:e}"))?;
    let domain = &t.resolved.domain;
    let metric = domain.metric();
    let ln = ScalarField::Log { axis: 1, scale: 1.0 };
    let (mut grad_err, mut l_err) = (0.0f64, 0.0f64);
    for node in 0..domain.node_count() {
        let p = domain.node_coordinates(node);
        let g = ln.jet(&p).gradient;
        let norm = metric.covector_norm(&p, g.as_slice()).map_err(|e| e.to_string())?;
        grad_err = grad_err.max((norm - 1.0).abs());
        let l = apply_operator_l(&t.resolved.field, &t.resolved.drift, &metric, &ln, &p)
            .map_err(|e| e.to_string())?;
        l_err = l_err.max((l + 1.0).abs());
    }
    ensure(grad_err <= 1e-12, format!("|∇ ln x₂| error {grad_err:e}"))?;
    ensure(l_err <= 1e-10, format!("𝓛 ln x₂ error {l_err:e}"))?;
    let r = &t.run.report;
    ensure(r.bound_failures.is_empty(), format!("{:?}", r.bound_failures))?;
    for kind in [BoundKind::Thm12, BoundKind::Thm13] {
        let g = r.gap_reports.iter().find(|g| g.bound == kind).ok_or(format!("no {kind}"))?;
        ensure(g.count(RowStatus::Fail) == 0, format!("{kind} hard failure"))?;
    }
    let c = r.constants.as_ref().unwrap();
    let d = c.d.ok_or("d not computed")?;
    ensure(etagap_core::bounds::a_nt(2, c.epsilon, c.delta) == 1.0, "a(2,T) ≠ 1")?;
    Ok(format!("Rayleigh defect {max_defect:.1e}, d = {d:.6}, {:.2?}", t.elapsed))
}

fn criterion9(runs: &BTreeMap<&str, Timed>, dir: &Path) -> Check {
    // in-process: every bound of every gap scenario
    let mut kinds = 0;
    for (name, t) in runs {
        if t.run.report.gap_reports.is_empty() {
            continue;
        }
        let mut cfg = t.resolved.config.clone();
        cfg.bound_scale = Some(Decimal(1e-6));
        let small = Overrides { resolution: Some(vec![32]), ..Default::default() };
        let resolved = ResolvedScenario::new(&cfg, &small).map_err(|e| e.to_string())?;
        let run = run_scenario(&resolved).map_err(|e| e.to_string())?;
        for g in &run.report.gap_reports {
            ensure(g.count(RowStatus::Fail) > 0, format!("{name}/{}: no failure", g.bound))?;
            kinds += 1;
        }
    }
    // through the binary: exit code 1
    let mut cfg = ScenarioConfig::builtin("square_laplacian").unwrap();
    cfg.bound_scale = Some(Decimal(1e-6));
    let path = dir.join("negative.json");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_etagap"))
        .args(["verify", path.to_str().unwrap(), "--resolution", "32", "--checks", "gap", "--out"])
        .arg(dir.join("negative-out"))
        .env("RUST_LOG", "off")
        .status()
        .unwrap();
    ensure(status.code() == Some(1), format!("exit code {:?}", status.code()))?;
    // perturbed eigenvector
    let t = &runs["square_laplacian"];
    let mut spectrum = t.run.spectrum.clone();
    let u2 = spectrum.eigenvectors[1].clone();
    for (a, b) in spectrum.eigenvectors[0].iter_mut().zip(&u2) {
        *a += 1e-3 * b;
    }
    let v = validate_spectrum(&spectrum, &t.run.pair);
    ensure(!v.orthonormality_ok(), "perturbed eigenvector still orthonormal")?;
    Ok(format!("{kinds} scaled bounds fail, CLI exit 1, perturbed defect {:.1e}", v.orthonormality_defect))
}

fn criterion10(runs: &BTreeMap<&str, Timed>, dir: &Path) -> Check {
    for (name, t) in runs {
        let a = dir.join(format!("{name}-a"));
        let b = dir.join(format!("{name}-b"));
        t.run.report.write(&t.run.spectrum, &a).map_err(|e| e.to_string())?;
        let again = run_builtin(name);
        again.run.report.write(&again.run.spectrum, &b).map_err(|e| e.to_string())?;
        for entry in std::fs::read_dir(&a).unwrap() {
            let p = entry.unwrap().path();
            let q = b.join(p.file_name().unwrap());
            let same = std::fs::read(&p).ok() == std::fs::read(&q).ok();
            ensure(same, format!("{name}: {} differs", p.display()))?;
        }
    }
    Ok(format!("{} builtins", runs.len()))
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let runs: BTreeMap<&str, Timed> = builtin_names().into_iter().map(|n| (n, run_builtin(n))).collect();
    let results: Vec<(&str, Check)> = vec![
        ("interval oracle", criterion1(&runs["interval_laplacian"])),
        ("square oracle", criterion2(&runs["square_laplacian"])),
        ("anisotropic oracle", criterion3(&runs["anisotropic_square"])),
        ("drift oracle", criterion4(&runs["drift_interval"])),
        ("sequence inequality suite", criterion5()),
        ("yang on every spectrum", criterion6(&runs)),
        ("test-function gap verifier", criterion7(&runs["square_laplacian"])),
        ("hyperbolic scenario", criterion8(&runs["hyperbolic_cy"])),
        ("negative controls", criterion9(&runs, dir.path())),
        ("determinism", criterion10(&runs, dir.path())),
    ];
    let mut failed = Vec::new();
    for (i, (label, r)) in results.iter().enumerate() {
        match r {
            Ok(msg) => println!("PASS criterion {} ({label}): {msg}", i + 1),
            Err(msg) => {
                println!("FAIL criterion {} ({label}): {msg}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
