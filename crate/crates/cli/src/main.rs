mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use randhyp::scenarios::{self, ScenarioReport, Table};
use serde::Serialize;

use config::{parse_config, RunConfig};

const EXIT_PASS: u8 = 0;
const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Run a randhyp scenario described by a TOML file.
#[derive(Parser, Debug)]
#[command(name = "randhyp", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(required_unless_present = "list_scenarios")]
    config: Option<PathBuf>,
    /// Overrides `output_dir` from the file.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides the master seed from the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    list_scenarios: bool,
    /// 0 silent, 1 summary, 2 full verdict.
    #[arg(long, default_value_t = 1)]
    verbosity: u8,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    scenario: &'a str,
    seed: u64,
    passed: bool,
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a ScenarioReport>,
}

fn write_table(dir: &Path, t: &Table) -> std::io::Result<()> {
    let mut buf = Vec::new();
    t.write_csv(&mut buf).map_err(std::io::Error::other)?;
    fs::write(dir.join(format!("{}.csv", t.name)), buf)
}

fn interchange_table(r: &ScenarioReport) -> Table {
    let mut t = Table::new("interchange", &["index", "p", "sup_of_norm", "norm_of_sup", "holds"]);
    for (i, rec) in r.interchange.iter().enumerate() {
        t.push(vec![
            i as f64,
            rec.p as f64,
            rec.sup_of_norm,
            rec.norm_of_sup,
            if rec.holds { 1.0 } else { 0.0 },
        ]);
    }
    t
}

fn write_outputs(
    dir: &Path,
    cfg: &RunConfig,
    raw: &str,
    outcome: &Result<ScenarioReport, String>,
) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), raw)?;
    fs::write(dir.join("config.resolved.toml"), cfg.resolved_toml())?;
    let name = cfg.scenario.name();
    let (file, verdict) = match outcome {
        Ok(r) => {
            for t in &r.tables {
                write_table(dir, t)?;
            }
            if !r.interchange.is_empty() {
                write_table(dir, &interchange_table(r))?;
            }
            (
                ReportFile {
                    scenario: name,
                    seed: cfg.seed,
                    passed: r.passed(),
                    error: None,
                    report: Some(r),
                },
                r.verdict_text(),
            )
        }
        Err(e) => (
            ReportFile {
                scenario: name,
                seed: cfg.seed,
                passed: false,
                error: Some(e.clone()),
                report: None,
            },
            format!("scenario: {name}\nseed: {}\nresult: ERROR\nerror: {e}\n", cfg.seed),
        ),
    };
    let json = serde_json::to_string_pretty(&file).map_err(std::io::Error::other)?;
    fs::write(dir.join("report.json"), json + "\n")?;
    fs::write(dir.join("verdict.txt"), verdict)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list_scenarios {
        for (name, about) in scenarios::SCENARIOS {
            println!("{name:<22} {about}");
        }
        return ExitCode::from(EXIT_PASS);
    }
    let path = cli.config.expect("clap enforces the config argument");
    let raw = match fs::read_to_string(&path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let mut cfg = match parse_config(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = cli.output_dir {
        cfg.output_dir = d;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = Some(j);
    }
    if let Some(j) = cfg.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }

    let outcome = scenarios::run(&cfg.scenario, cfg.seed).map_err(|e| e.to_string());
    if let Err(e) = write_outputs(&cfg.output_dir, &cfg, &raw, &outcome) {
        eprintln!("error: writing {}: {e}", cfg.output_dir.display());
        return ExitCode::from(EXIT_RUNTIME);
    }
    match outcome {
        Ok(r) => {
            if cli.verbosity >= 2 {
                print!("{}", r.verdict_text());
            } else if cli.verbosity == 1 {
                let failed: Vec<&str> = r.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                println!(
                    "{}: {} ({} checks, {:.2} s){}",
                    r.scenario,
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.checks.len(),
                    r.elapsed_seconds,
                    if failed.is_empty() {
                        String::new()
                    } else {
                        format!("; failed: {}", failed.join(", "))
                    }
                );
            }
            ExitCode::from(if r.passed() { EXIT_PASS } else { EXIT_CHECK_FAILED })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
