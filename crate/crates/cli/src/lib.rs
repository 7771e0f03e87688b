//! Library side of the `fastattn` command-line tool.
//!
//! [`run`] executes a parsed command and returns the rendered report; the
//! binary only decides where it goes and which exit code to use.

pub mod args;
pub mod bench;
pub mod commands;
pub mod error;
pub mod render;
pub mod verify;

use fastattn::flops::ModuleShape;
use fastattn::streaming::StreamManifest;
use serde::Serialize;

use args::{Cli, Command, DtypeArg, Format, Suite};
pub use error::{exit, CliError, CliResult};
use verify::Check;

/// Rendered report plus whether a verification step failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: String,
    pub failed: bool,
}

impl Outcome {
    fn ok(report: String) -> Self {
        Self { report, failed: false }
    }

    pub fn exit_code(&self) -> i32 {
        if self.failed {
            exit::VERIFICATION_FAILED
        } else {
            exit::OK
        }
    }
}

fn double_only(cli: &Cli, what: &str) -> CliResult<()> {
    if cli.dtype == DtypeArg::F32 {
        return Err(error::usage(format!("{what} runs in double precision only; use --dtype f64")));
    }
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<Outcome> {
    match &cli.command {
        Command::Verify(a) => {
            double_only(cli, "verify")?;
            if let Some(dir) = &a.emit_fixture {
                verify::emit_fixture(dir, cli.seed, a.broken)?;
                let kind = if a.broken { "broken" } else { "healthy" };
                return Ok(Outcome::ok(format!("wrote {kind} fixture to {}\n", dir.display())));
            }
            let suite = a.suite.or(if a.fixture.is_some() { None } else { Some(Suite::All) });
            let mut checks = match suite {
                Some(s) => verify::run_suite(s, cli.seed)?,
                None => Vec::new(),
            };
            if let Some(dir) = &a.fixture {
                checks.extend(verify::fixture(dir)?);
            }
            Ok(render_verify(&checks, cli.seed, cli.format))
        }
        Command::Bench(a) => {
            let grid = bench::BenchGrid {
                n: a.n.clone(),
                channels: a.channels.clone(),
                cprime: a.cprime.clone(),
                t: a.t.clone(),
                variants: a.variants.clone(),
                repeats: a.repeats,
                budget_bytes: a.budget_bytes,
                seed: cli.seed,
            };
            let report = match cli.dtype {
                DtypeArg::F32 => bench::run_bench::<f32>(&grid)?,
                DtypeArg::F64 => bench::run_bench::<f64>(&grid)?,
            };
            Ok(Outcome::ok(match cli.format {
                Format::Text => report.text(),
                Format::Csv => render::csv_rows(&report.records),
                Format::Json => render::json(&report),
            }))
        }
        Command::Flops(a) => match (a.channels, a.height, a.width) {
            (Some(c), Some(h), Some(w)) => {
                let r = commands::module_report(ModuleShape::new(c, h, w, a.cprime))?;
                Ok(Outcome::ok(commands::render_module(&r, cli.format)))
            }
            _ => Ok(Outcome::ok(commands::render_table1(&commands::table1_report(), cli.format))),
        },
        Command::Stream(a) => {
            double_only(cli, "stream")?;
            if let Some(dir) = &a.generate {
                let manifest = StreamManifest {
                    n: a.n,
                    c_prime: a.cprime,
                    channels: a.channels,
                    t: a.t,
                    frames: a.frames,
                };
                commands::generate_stream(dir, manifest, cli.seed)?;
                return Ok(Outcome::ok(format!("wrote {} frames to {}\n", a.frames, dir.display())));
            }
            let path = a.manifest.as_deref().expect("clap requires --manifest without --generate");
            let r = commands::run_stream_report(path, a.window, a.check)?;
            Ok(Outcome {
                report: commands::render_stream(&r, cli.format),
                failed: !r.passed(),
            })
        }
        Command::Placement(a) => {
            double_only(cli, "placement")?;
            let r = commands::placement_report(a.height, a.width, a.op.into(), a.repeats, cli.seed)?;
            Ok(Outcome::ok(commands::render_placement(&r, cli.format)))
        }
    }
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    seed: u64,
    passed: usize,
    failed: usize,
    checks: &'a [Check],
}

pub fn render_verify(checks: &[Check], seed: u64, format: Format) -> Outcome {
    let failed = checks.iter().filter(|c| !c.passed).count();
    let passed = checks.len() - failed;
    let report = match format {
        Format::Json => render::json(&VerifyReport {
            seed,
            passed,
            failed,
            checks,
        }),
        Format::Csv => render::csv_rows(checks),
        Format::Text => {
            let mut out = String::new();
            for c in checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                out.push_str(&format!("{status}  {}/{}  {}\n", c.suite, c.check, c.detail));
            }
            out.push_str(&format!("seed {seed}: {passed} passed, {failed} failed\n"));
            out
        }
    };
    Outcome {
        report,
        failed: failed > 0,
    }
}
