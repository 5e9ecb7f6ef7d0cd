//! `vln-cache` command line: episode runs, ablation modes, sweeps and report comparison.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime invariant violation,
//! 1 anything else (I/O, mismatched reports).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use vln_cache::config::{Mode, RunConfig};
use vln_cache::pipeline::{self, AggregateReport, OutputFormat, SweepAxis};
use vln_cache::simulator::PRESETS;
use vln_cache::Error;

#[derive(Parser)]
#[command(name = "vln-cache", version, about = "View-aligned, semantics-gated KV token caching on synthetic navigation episodes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a configuration and write per-seed CSV/JSON plus an aggregate.
    Run(RunArgs),
    /// Cartesian sweep over config keys, e.g. `--param gates.tau_vis=0.75,0.85,0.95`.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// `dotted.key=v1,v2,...`; repeat for more axes.
        #[arg(long = "param", required = true)]
        params: Vec<String>,
    },
    /// Per-step divergence between two per-seed JSON reports.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write the divergence table as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in scene presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// full, no_cache, no_remap, no_semantic_gate or no_visual_gate.
    #[arg(long)]
    mode: Option<String>,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// csv, json or both.
    #[arg(long, default_value = "both")]
    format: String,
}

impl RunArgs {
    fn resolve(&self) -> Result<(RunConfig, OutputFormat)> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(mode) = &self.mode {
            cfg.mode = Mode::parse(mode)?;
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        cfg.validate()?;
        Ok((cfg, OutputFormat::parse(&self.format)?))
    }
}

fn print_aggregate(label: &str, agg: &AggregateReport) {
    let o = &agg.overall;
    println!(
        "{label}: seeds {:?}  delta_r {:.4}  r_pos {:.4}  r_align {:.4}  d_sem {:.4}  reuse {:.4}  bypass {:.3}  flops saved/step {:.4e}",
        agg.seeds, o.delta_r, o.r_pos, o.r_align, o.d_sem, o.reuse_ratio, o.bypass_rate, agg.mean_flops_saved_per_step
    );
    for (phase, m) in &agg.per_phase {
        println!("  {phase:<12} steps {:>4}  delta_r {:.4}  d_sem {:.4}  reuse {:.4}", m.steps, m.delta_r, m.d_sem, m.reuse_ratio);
    }
    if let Some(s) = agg.reuse_site_similarity {
        println!("  reuse-site similarity {s:.4}");
    }
}

fn print_costs(agg: &AggregateReport) {
    let c = &agg.costs;
    println!(
        "selection overhead: {:.4e} ops (k^2 charged at D), {:.4e} ops (k^2 at unit cost); footprint {} bytes/frame (f32)",
        c.selection_overhead, c.selection_overhead_literal, c.footprint_bytes_f32
    );
    let r = &agg.reference;
    println!(
        "reference dims (L=28, M=196, D=3584, d_kv=512): flops saved at rho 0.31 {:.4e}, overhead ratio {:.4}%, K/V+feature footprint {} bytes (bf16)",
        c.reference_dims_flops_saved,
        100.0 * c.reference_dims_overhead_ratio,
        c.reference_dims_footprint_bf16
    );
    println!(
        "reference figures (not reproduced): reuse gap {}, reuse ratio {}, {:.3e} FLOPs/step, {:.1} MB/frame, bypass {}, {} -> {} ms",
        r.mean_reuse_gap,
        r.reuse_ratio,
        r.flops_saved_per_step,
        r.footprint_bytes_per_frame / 1e6,
        r.encoder_bypass_rate,
        r.latency_baseline_ms,
        r.latency_cached_ms
    );
}

fn run_one(cfg: &RunConfig, out: &Path, format: OutputFormat, tag: &str) -> Result<AggregateReport> {
    let reports = pipeline::run(cfg)?;
    let paths = pipeline::write_reports(&reports, out, format, tag)?;
    for p in &paths {
        println!("wrote {}", p.display());
    }
    Ok(pipeline::aggregate(&reports)?)
}

fn sanitize(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let (cfg, format) = args.resolve()?;
            let agg = run_one(&cfg, &args.out, format, cfg.mode.name())?;
            print_aggregate(cfg.mode.name(), &agg);
            print_costs(&agg);
        }
        Command::Sweep { run, params } => {
            let (cfg, format) = run.resolve()?;
            let axes = params.iter().map(|p| SweepAxis::parse(p)).collect::<std::result::Result<Vec<_>, _>>()?;
            let points = pipeline::sweep_configs(&cfg, &axes)?;
            let mut summary = Vec::with_capacity(points.len());
            for (label, point) in &points {
                let dir = run.out.join(sanitize(label));
                let agg = run_one(point, &dir, format, point.mode.name())?;
                print_aggregate(label, &agg);
                summary.push(serde_json::json!({ "point": label, "aggregate": agg }));
            }
            let path = run.out.join("sweep.json");
            let mut text = serde_json::to_string_pretty(&summary)?;
            text.push('\n');
            pipeline::write_atomic(&path, text.as_bytes())?;
            println!("wrote {}", path.display());
        }
        Command::Compare { a, b, out } => {
            let (ra, rb) = (pipeline::read_report(&a)?, pipeline::read_report(&b)?);
            let d = pipeline::compare(&ra, &rb)?;
            println!("step  max|action gap|  reuse delta ({} - {})", d.mode_a, d.mode_b);
            for (t, (g, r)) in d.action_gap.iter().zip(&d.reuse_delta).enumerate() {
                println!("{t:>4}  {g:>15.6e}  {r:>+.4}");
            }
            println!("max action gap {:.6e}, mean reuse delta {:+.4}", d.max_action_gap, d.mean_reuse_delta);
            if let Some(path) = out {
                let mut text = serde_json::to_string_pretty(&d)?;
                text.push('\n');
                pipeline::write_atomic(&path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Presets => {
            for (name, about) in PRESETS {
                println!("{name:<12} {about}");
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_config() => 2,
        Some(Error::Comparison(_) | Error::Snapshot(_)) | None => 1,
        Some(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            let kind = match code {
                2 => "configuration error",
                3 => "invariant violation",
                _ => "error",
            };
            eprintln!("vln-cache: {kind}: {err:#}");
            ExitCode::from(code)
        }
    }
}
