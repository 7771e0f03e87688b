//! `flops`, `stream` and `placement` reports.

use std::path::Path;
use std::time::Instant;

use fastattn::flops::{
    flops_fast_attention_module, flops_self_attention_module, table1, table1_rows, FlopsReport, ModuleShape,
    Table1Row, MAC_CONVENTION,
};
use fastattn::streaming::{check_stream, FrameCache, StreamFixture, StreamManifest};
use fastattn::toynet::{build_network, placement_study, NetConfig, ReductionOp, Resolutions};
use fastattn::flops::CostKind;
use serde::Serialize;

use crate::args::Format;
use crate::error::CliResult;
use crate::render::{csv_rows, json, table};

#[derive(Debug, Serialize)]
pub struct Table1Report {
    pub convention: &'static str,
    pub height: usize,
    pub width: usize,
    pub attention_channels: usize,
    pub rows: Vec<Table1Row>,
}

pub fn table1_report() -> Table1Report {
    Table1Report {
        convention: MAC_CONVENTION,
        height: table1::HEIGHT,
        width: table1::WIDTH,
        attention_channels: fastattn::flops::DEFAULT_ATTENTION_CHANNELS,
        rows: table1_rows(),
    }
}

pub fn render_table1(r: &Table1Report, format: Format) -> String {
    match format {
        Format::Json => json(r),
        Format::Csv => csv_rows(&r.rows),
        Format::Text => {
            let rows: Vec<Vec<String>> = r
                .rows
                .iter()
                .map(|x| {
                    vec![
                        x.channels.to_string(),
                        format!("{:.2}", x.self_attention_gflops),
                        format!("{}", x.self_attention_published),
                        format!("{:+.2}%", 100.0 * x.self_attention_deviation),
                        format!("{:.3}", x.fast_attention_gflops),
                        format!("{}", x.fast_attention_published),
                        format!("{:+.2}%", 100.0 * x.fast_attention_deviation),
                        format!("{:.4}", x.ratio),
                    ]
                })
                .collect();
            let mut out = format!(
                "GFLOPs with Cx{}x{} input, c'={}, {}\n",
                r.height, r.width, r.attention_channels, r.convention
            );
            out.push_str(&table(
                &["C", "self", "self_pub", "self_dev", "fast", "fast_pub", "fast_dev", "fast/self"],
                &rows,
            ));
            out
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ModuleReport {
    pub convention: &'static str,
    pub shape: ModuleShape,
    pub self_attention: FlopsReport,
    pub fast_attention: FlopsReport,
    pub ratio: f64,
}

#[derive(Serialize)]
struct ComponentRow<'a> {
    module: &'a str,
    label: &'a str,
    kind: CostKind,
    flops: u64,
}

pub fn module_report(shape: ModuleShape) -> CliResult<ModuleReport> {
    let slow = flops_self_attention_module(shape)?;
    let fast = flops_fast_attention_module(shape)?;
    let ratio = fast.total() as f64 / slow.total() as f64;
    Ok(ModuleReport {
        convention: MAC_CONVENTION,
        shape,
        self_attention: slow,
        fast_attention: fast,
        ratio,
    })
}

pub fn render_module(r: &ModuleReport, format: Format) -> String {
    let modules = [("self", &r.self_attention), ("fast", &r.fast_attention)];
    match format {
        Format::Json => json(r),
        Format::Csv => {
            let rows: Vec<ComponentRow> = modules
                .iter()
                .flat_map(|(m, rep)| {
                    rep.components.iter().map(move |c| ComponentRow {
                        module: m,
                        label: &c.label,
                        kind: c.kind,
                        flops: c.flops,
                    })
                })
                .collect();
            csv_rows(&rows)
        }
        Format::Text => {
            let s = r.shape;
            let mut out = format!(
                "C={} H={} W={} c'={}, {}\n",
                s.channels, s.height, s.width, s.attention_channels, r.convention
            );
            let mut rows = Vec::new();
            for (m, rep) in modules {
                for c in &rep.components {
                    rows.push(vec![m.to_string(), c.label.clone(), c.flops.to_string()]);
                }
                rows.push(vec![m.to_string(), "total".into(), rep.total().to_string()]);
            }
            out.push_str(&table(&["module", "component", "flops"], &rows));
            out.push_str(&format!("fast/self ratio {:.5}\n", r.ratio));
            out
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameRow {
    pub frame: usize,
    pub latency_s: f64,
    pub core_macs: u64,
    pub context_adds: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StreamReport {
    pub manifest: StreamManifest,
    pub window: usize,
    pub frames: Vec<FrameRow>,
    pub max_deviation: Option<f64>,
    pub tolerance: f64,
}

pub const STREAM_CHECK_TOLERANCE: f64 = 1e-12;

impl StreamReport {
    pub fn passed(&self) -> bool {
        self.max_deviation.map_or(true, |d| d <= self.tolerance)
    }
}

pub fn generate_stream(dir: &Path, manifest: StreamManifest, seed: u64) -> CliResult<()> {
    StreamFixture::generate(manifest, seed)?.save(dir)?;
    Ok(())
}

pub fn run_stream_report(manifest_path: &Path, window: Option<usize>, check: bool) -> CliResult<StreamReport> {
    let fixture = StreamFixture::load(manifest_path)?;
    let m = fixture.manifest;
    let window = window.unwrap_or(m.t);
    let mut cache = FrameCache::new(window, m.c_prime, m.channels, m.n)?;
    let mut frames = Vec::with_capacity(fixture.frames.len());
    for (i, f) in fixture.frames.iter().enumerate() {
        let start = Instant::now();
        cache.push_frame(&f.key, &f.value)?;
        std::hint::black_box(cache.attend(&f.query)?);
        let latency_s = start.elapsed().as_secs_f64();
        let cost = cache.per_frame_cost();
        frames.push(FrameRow {
            frame: i,
            latency_s,
            core_macs: cost.total_of(CostKind::AttentionCore),
            context_adds: cost.total_of(CostKind::Addition),
        });
    }
    let max_deviation = if check { Some(check_stream(&fixture, window)?) } else { None };
    Ok(StreamReport {
        manifest: m,
        window,
        frames,
        max_deviation,
        tolerance: STREAM_CHECK_TOLERANCE,
    })
}

pub fn render_stream(r: &StreamReport, format: Format) -> String {
    match format {
        Format::Json => json(r),
        Format::Csv => csv_rows(&r.frames),
        Format::Text => {
            let m = r.manifest;
            let mut out = format!(
                "n={} c'={} C={} frames={} window={}\n",
                m.n, m.c_prime, m.channels, m.frames, r.window
            );
            let rows: Vec<Vec<String>> = r
                .frames
                .iter()
                .map(|f| {
                    vec![
                        f.frame.to_string(),
                        format!("{:.6}", f.latency_s),
                        f.core_macs.to_string(),
                        f.context_adds.to_string(),
                    ]
                })
                .collect();
            out.push_str(&table(&["frame", "latency_s", "core_macs", "context_adds"], &rows));
            if let Some(d) = r.max_deviation {
                let status = if r.passed() { "PASS" } else { "FAIL" };
                out.push_str(&format!(
                    "{status} max deviation from batch evaluation {d:.3e} (tol {:.0e})\n",
                    r.tolerance
                ));
            }
            out
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PlacementReportRow {
    pub placement: &'static str,
    pub flops: u64,
    pub gflops: f64,
    pub wall_time_s: f64,
    pub stage_resolutions: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlacementReport {
    pub op: ReductionOp,
    pub height: usize,
    pub width: usize,
    pub rows: Vec<PlacementReportRow>,
}

fn describe(r: &Resolutions) -> String {
    r.stages
        .iter()
        .map(|(h, w)| format!("{h}x{w}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn placement_report(height: usize, width: usize, op: ReductionOp, repeats: usize, seed: u64) -> CliResult<PlacementReport> {
    let base = NetConfig::default().with_input(height, width).with_reduction(NetConfig::default().reduction_stage, op);
    let study = placement_study(&base, seed, repeats)?;
    let rows = study
        .into_iter()
        .map(|row| -> CliResult<PlacementReportRow> {
            let net = build_network(&base.clone().with_reduction(row.placement, op), seed)?;
            Ok(PlacementReportRow {
                placement: row.placement.name(),
                flops: row.flops,
                gflops: row.flops as f64 / 1e9,
                wall_time_s: row.wall_time_s,
                stage_resolutions: describe(net.resolutions()),
            })
        })
        .collect::<CliResult<_>>()?;
    Ok(PlacementReport { op, height, width, rows })
}

pub fn render_placement(r: &PlacementReport, format: Format) -> String {
    match format {
        Format::Json => json(r),
        Format::Csv => csv_rows(&r.rows),
        Format::Text => {
            let mut out = format!("input {}x{}, reduction op {}\n", r.height, r.width, r.op.name());
            let rows: Vec<Vec<String>> = r
                .rows
                .iter()
                .map(|x| {
                    vec![
                        x.placement.to_string(),
                        x.flops.to_string(),
                        format!("{:.4}", x.gflops),
                        format!("{:.6}", x.wall_time_s),
                        x.stage_resolutions.clone(),
                    ]
                })
                .collect();
            out.push_str(&table(&["placement", "flops", "gflops", "wall_time_s", "res1..res4"], &rows));
            out
        }
    }
}
