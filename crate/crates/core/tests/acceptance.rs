//! Acceptance criteria 1-9 at their stated tolerances.
//!
//! Run with `cargo test -p randhyp --test acceptance -- --nocapture` to see
//! one line per criterion.

use randhyp::scenarios::{self, ScenarioReport, ScenarioSpec};

const SEED: u64 = 42;

struct Outcome {
    id: usize,
    title: &'static str,
    passed: bool,
    summary: String,
}

fn run(spec: ScenarioSpec) -> Result<ScenarioReport, String> {
    scenarios::run(&spec, SEED).map_err(|e| e.to_string())
}

fn failed_checks(r: &ScenarioReport) -> String {
    let bad: Vec<String> = r
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} (value {:e}, threshold {:e})", c.name, c.value, c.threshold))
        .collect();
    if bad.is_empty() {
        format!("{} checks, {:.1} s", r.checks.len(), r.elapsed_seconds)
    } else {
        format!("failed: {}", bad.join("; "))
    }
}

fn judge(
    id: usize,
    title: &'static str,
    rep: &Result<ScenarioReport, String>,
    extra: impl Fn(&ScenarioReport) -> Option<String>,
) -> Outcome {
    match rep {
        Ok(r) => {
            let problem = extra(r);
            let checks_ok = r.checks.iter().all(|c| c.passed);
            Outcome {
                id,
                title,
                passed: checks_ok && problem.is_none(),
                summary: match problem {
                    Some(p) => format!("{p}; {}", failed_checks(r)),
                    None => failed_checks(r),
                },
            }
        }
        Err(e) => Outcome {
            id,
            title,
            passed: false,
            summary: format!("error: {e}"),
        },
    }
}

fn require(r: &ScenarioReport, names: &[&str]) -> Option<String> {
    let missing: Vec<&str> = names.iter().copied().filter(|n| r.check(n).is_none()).collect();
    (!missing.is_empty()).then(|| format!("missing checks {missing:?}"))
}

#[test]
fn acceptance_criteria() {
    let mut outcomes = Vec::new();
    let mut reports = Vec::new();

    let calibration = run(ScenarioSpec::Calibration(Default::default()));
    outcomes.push(judge(1, "deterministic calibration", &calibration, |r| {
        require(r, &["transport", "wave_sin_0", "wave_0_cos", "runtime"])
    }));
    reports.push(calibration);

    let gronwall = run(ScenarioSpec::Gronwall(Default::default()));
    outcomes.push(judge(2, "Gronwall property suite", &gronwall, |r| {
        let rows = r.table("bounds").map_or(0, |t| t.rows.len());
        (rows != 50).then(|| format!("{rows} problems instead of 50"))
    }));
    reports.push(gronwall);

    let ogawa = run(ScenarioSpec::Ogawa(Default::default()));
    outcomes.push(judge(3, "Ogawa transport", &ogawa, |r| {
        require(r, &["sigma_relative", "mc_mean", "heat_residual", "runtime"])
    }));
    reports.push(ogawa);

    let additive = run(ScenarioSpec::AdditiveNoiseWave(Default::default()));
    outcomes.push(judge(4, "additive-noise wave", &additive, |r| {
        let disjoint = r.checks.iter().filter(|c| c.detail.starts_with("disjoint")).count();
        let overlap = r.checks.iter().filter(|c| c.detail.starts_with("overlap")).count();
        require(r, &["variance", "runtime"]).or_else(|| {
            (disjoint < 1 || overlap < 3).then(|| format!("{overlap} overlapping and {disjoint} disjoint pairs"))
        })
    }));
    reports.push(additive);

    let geometric = run(ScenarioSpec::GeometricWave(Default::default()));
    outcomes.push(judge(5, "geometric wave", &geometric, |r| {
        let levels = r.table("brownian_foot_distance").map_or(0, |t| t.rows.len());
        require(r, &["brownian_decreasing", "brownian_final", "sine_foot", "runtime"])
            .or_else(|| (levels != 8).then(|| format!("{levels} ladder levels")))
    }));
    reports.push(geometric);

    let speed = run(ScenarioSpec::RandomSpeedWave(Default::default()));
    outcomes.push(judge(6, "random-speed consistency", &speed, |r| {
        let seeds = r.table("gaps").map_or(0, |t| t.rows.len());
        require(r, &["decreasing", "final_vs_discretization"])
            .or_else(|| (seeds != 10).then(|| format!("{seeds} seeds")))
    }));
    reports.push(speed);

    let classifier = run(ScenarioSpec::Classifier(Default::default()));
    outcomes.push(judge(7, "classifier conformance", &classifier, |r| {
        require(
            r,
            &[
                "power",
                "log",
                "constant",
                "tail_family_negligible",
                "tail_family_bounded",
                "spike_l1",
                "spike_pathwise",
            ],
        )
    }));
    reports.push(classifier);

    let mollifier = run(ScenarioSpec::Mollifier(Default::default()));
    outcomes.push(judge(8, "mollifier and embedding suite", &mollifier, |r| {
        require(r, &["mass", "moments", "commute", "cutoff", "polynomial"])
    }));
    reports.push(mollifier);

    let records: Vec<_> = reports.iter().flatten().flat_map(|r| r.interchange.iter()).collect();
    let violations = records.iter().filter(|r| !r.holds).count();
    let all_ran = reports.iter().all(|r| r.is_ok());
    outcomes.push(Outcome {
        id: 9,
        title: "norm interchange",
        passed: all_ran && !records.is_empty() && violations == 0,
        summary: format!("{} instances, {violations} violations", records.len()),
    });

    for o in &outcomes {
        println!(
            "criterion {}: {} - {}: {}",
            o.id,
            if o.passed { "PASS" } else { "FAIL" },
            o.title,
            o.summary
        );
    }
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
