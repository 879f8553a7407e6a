//! Subcommand implementations behind the `etagap` binary.
//!
//! Each command returns a [`CommandOutcome`]; its exit code is the only
//! machine-readable contract. Data goes to files, human output to the log.

use std::fs;
use std::path::{Path, PathBuf};

use etagap_core::bounds::lemma31_suite;
use etagap_core::scenario::{
    builtin_names, run_scenario, run_spectrum, Check, Outcome, Overrides, ResolvedScenario,
    ScenarioConfig,
};
use etagap_core::Error;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub summary: Vec<String>,
}

impl CommandOutcome {
    fn new(exit_code: i32, summary: Vec<String>) -> Self {
        CommandOutcome { exit_code, summary }
    }

    fn from_error(context: &str, e: &Error) -> Self {
        Self::new(error_exit_code(e), vec![format!("{context}: {e}")])
    }
}

pub fn outcome_exit_code(o: Outcome) -> i32 {
    match o {
        Outcome::Pass => EXIT_PASS,
        Outcome::Fail => EXIT_FAIL,
        Outcome::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

/// Errors that stem from the input are usage errors; the rest are failures
/// of the computation itself.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Json(_)
        | Error::InvalidBounds(_)
        | Error::InvalidHalfPlane(_)
        | Error::EmptyDomain
        | Error::OutOfDomain(_)
        | Error::OriginInsideDomain(_)
        | Error::NotPositiveDefinite { .. }
        | Error::NotSymmetric(_)
        | Error::DimensionMismatch { .. }
        | Error::DimensionError { .. }
        | Error::InvalidInstance(_)
        | Error::HypothesisViolated(_) => EXIT_USAGE,
        _ => EXIT_FAIL,
    }
}

/// Where a command writes its files.
fn output_dir(cfg: &ScenarioConfig, out: Option<&Path>) -> PathBuf {
    match (out, &cfg.output) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => PathBuf::from("etagap-out").join(&cfg.name),
    }
}

fn resolve(config: &str, overrides: &Overrides) -> Result<ResolvedScenario, CommandOutcome> {
    let cfg = ScenarioConfig::load(config).map_err(|e| CommandOutcome::from_error(config, &e))?;
    ResolvedScenario::new(&cfg, overrides).map_err(|e| CommandOutcome::from_error(config, &e))
}

/// Assemble, solve and validate; writes `spectrum.csv`.
pub fn cmd_spectrum(config: &str, overrides: &Overrides, out: Option<&Path>) -> CommandOutcome {
    let resolved = match resolve(config, overrides) {
        Ok(r) => r,
        Err(o) => return o,
    };
    let (_, spectrum, validation) = match run_spectrum(&resolved) {
        Ok(r) => r,
        Err(e) => return CommandOutcome::from_error(config, &e),
    };
    let dir = output_dir(&resolved.config, out);
    let written = fs::create_dir_all(&dir).and_then(|_| {
        let mut buf = Vec::new();
        spectrum.write_csv(&mut buf)?;
        fs::write(dir.join("spectrum.csv"), buf)
    });
    if let Err(e) = written {
        return CommandOutcome::new(EXIT_FAIL, vec![format!("cannot write {}: {e}", dir.display())]);
    }
    let mut summary = vec![format!(
        "{}: {} eigenpairs on {} DOFs after {} iterations",
        resolved.config.name,
        spectrum.len(),
        resolved.domain.dof_count(),
        spectrum.iterations
    )];
    for (j, (l, g)) in spectrum.eigenvalues.iter().zip(&spectrum.multiplicity_groups).enumerate() {
        summary.push(format!("  λ_{} = {l:.10} (group {g})", j + 1));
    }
    summary.push(format!(
        "  validation: {} (rayleigh margin {:.3e}, orthonormality margin {:.3e})",
        if validation.passed() { "pass" } else { "FAIL" },
        validation.rayleigh_margin,
        validation.orthonormality_margin
    ));
    summary.push(format!("  wrote {}", dir.join("spectrum.csv").display()));
    let code = if validation.passed() { EXIT_PASS } else { EXIT_FAIL };
    CommandOutcome::new(code, summary)
}

/// Full pipeline. `checks` replaces the config's verification list when given.
pub fn cmd_verify(
    config: &str,
    checks: Option<Vec<Check>>,
    overrides: &Overrides,
    out: Option<&Path>,
) -> CommandOutcome {
    let mut overrides = overrides.clone();
    if checks.is_some() {
        overrides.checks = checks;
    }
    let resolved = match resolve(config, &overrides) {
        Ok(r) => r,
        Err(o) => return o,
    };
    let run = match run_scenario(&resolved) {
        Ok(r) => r,
        Err(e) => return CommandOutcome::from_error(config, &e),
    };
    let dir = output_dir(&resolved.config, out);
    if let Err(e) = run.report.write(&run.spectrum, &dir) {
        return CommandOutcome::new(EXIT_FAIL, vec![format!("cannot write {}: {e}", dir.display())]);
    }
    let mut summary = run.report.summary_lines();
    summary.push(format!("  wrote {}", dir.display()));
    CommandOutcome::new(outcome_exit_code(run.report.outcome), summary)
}

/// Seeded randomized check of the sequence inequality. Counterexamples are
/// written verbatim to `out` as JSON when given, and always to the summary.
pub fn cmd_lemma31(trials: usize, seed: u64, out: Option<&Path>) -> CommandOutcome {
    let suite = match lemma31_suite(trials, seed) {
        Ok(s) => s,
        Err(e) => return CommandOutcome::from_error("lemma31", &e),
    };
    let mut summary = vec![format!(
        "lemma31: {} trials (seed {}), {} satisfy the hypothesis, {} counterexamples, two-term defect {:.3e}",
        suite.trials,
        suite.seed,
        suite.hypothesis_satisfied,
        suite.counterexamples.len(),
        suite.two_term_max_defect
    )];
    for (inst, outcome) in &suite.counterexamples {
        summary.push(format!(
            "  counterexample {}",
            serde_json::json!({ "instance": inst, "outcome": outcome })
        ));
    }
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&suite).expect("suite serializes") + "\n";
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            let _ = fs::create_dir_all(parent);
        }
        if let Err(e) = fs::write(path, text) {
            return CommandOutcome::new(EXIT_FAIL, vec![format!("cannot write {}: {e}", path.display())]);
        }
        summary.push(format!("  wrote {}", path.display()));
    }
    let code = if suite.counterexamples.is_empty() { EXIT_PASS } else { EXIT_FAIL };
    CommandOutcome::new(code, summary)
}

/// Runs several scenarios (every builtin when `configs` is empty), each into
/// its own subdirectory of `out`. The exit code is the worst outcome.
pub fn cmd_report(configs: &[String], overrides: &Overrides, out: &Path) -> CommandOutcome {
    let sources: Vec<String> = if configs.is_empty() {
        builtin_names().iter().map(|n| format!("builtin:{n}")).collect()
    } else {
        configs.to_vec()
    };
    let mut summary = Vec::new();
    let mut worst = EXIT_PASS;
    let mut index = Vec::new();
    for source in &sources {
        let name = match ScenarioConfig::load(source) {
            Ok(c) => c.name,
            Err(e) => {
                let o = CommandOutcome::from_error(source, &e);
                worst = worst_code(worst, o.exit_code);
                summary.extend(o.summary);
                continue;
            }
        };
        let o = cmd_verify(source, None, overrides, Some(&out.join(&name)));
        index.push(serde_json::json!({ "scenario": name, "exit_code": o.exit_code }));
        worst = worst_code(worst, o.exit_code);
        summary.extend(o.summary);
    }
    let text = serde_json::to_string_pretty(&index).expect("index serializes") + "\n";
    if let Err(e) = fs::create_dir_all(out).and_then(|_| fs::write(out.join("index.json"), text)) {
        return CommandOutcome::new(EXIT_FAIL, vec![format!("cannot write {}: {e}", out.display())]);
    }
    CommandOutcome::new(worst, summary)
}

/// Usage errors dominate, then failures, then inconclusive results.
fn worst_code(a: i32, b: i32) -> i32 {
    let rank = |c: i32| match c {
        EXIT_USAGE => 3,
        EXIT_FAIL => 2,
        EXIT_INCONCLUSIVE => 1,
        _ => 0,
    };
    if rank(b) > rank(a) {
        b
    } else {
        a
    }
}

/// Parses `gap,yang` style check lists.
pub fn parse_checks(s: &str) -> Result<Vec<Check>, Error> {
    s.split(',').map(|c| c.trim().parse()).collect()
}

/// Parses `128` or `128x64` resolutions.
pub fn parse_resolution(s: &str) -> Result<Vec<usize>, String> {
    s.split(['x', ','])
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad resolution `{s}`")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worst_code_ordering() {
        assert_eq!(worst_code(EXIT_PASS, EXIT_INCONCLUSIVE), EXIT_INCONCLUSIVE);
        assert_eq!(worst_code(EXIT_INCONCLUSIVE, EXIT_FAIL), EXIT_FAIL);
        assert_eq!(worst_code(EXIT_USAGE, EXIT_FAIL), EXIT_USAGE);
    }

    #[test]
    fn parsing_helpers() {
        assert_eq!(parse_resolution("128x64").unwrap(), vec![128, 64]);
        assert_eq!(parse_resolution("32").unwrap(), vec![32]);
        assert!(parse_resolution("a").is_err());
        assert_eq!(parse_checks("gap, yang").unwrap(), vec![Check::Gap, Check::Yang]);
        assert!(parse_checks("gap,nope").is_err());
    }

    #[test]
    fn lemma31_zero_trials_is_usage_error() {
        assert_eq!(cmd_lemma31(0, 1, None).exit_code, EXIT_USAGE);
    }
}
