//! Per-step caching pipeline, multi-seed runs, report files and report comparison.
//!
//! Each step: render → frame gate → remap → gates → fuse → budget → splice →
//! forward → cache update → metrics.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::{self, reference, EpisodeReport, MetricMeans, StepMetrics};
use crate::cache::{budget_capacity, enforce_budget, KvCacheState, WritePolicy};
use crate::config::{CameraConfig, RelevanceSource, RunConfig};
use crate::error::{Error, Result};
use crate::gating::{aligned_similarity, cosine_slices, frame_gate, pooled, semantic_gate, visual_gate, ReuseMasks};
use crate::geometry::{PoseSE3, RemapResult, Remapper};
use crate::semantics::{focus_shift, relevance_from_attention, top_k_set};
use crate::simulator::{self, Scene, SceneSpec, TrajectorySpec};
use crate::toy_model::{init_weights, CachePlan, ModelSpec, WeightSet};

/// Everything that must agree for two reports to be comparable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub camera: CameraConfig,
    pub model: ModelSpec,
    pub eta: f64,
    pub feature_frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    #[serde(flatten)]
    pub metrics: StepMetrics,
    pub action_scores: Vec<f64>,
    /// Budget of every layer at this step.
    pub rho: Vec<f64>,
    /// Mean cosine between the true current feature and the cached feature
    /// actually reused, over all (layer, token) reuse sites of the step.
    pub reuse_site_similarity: Option<f64>,
}

/// In-memory detail of one step, not serialized.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub remap: Vec<RemapResult>,
    pub m_vis: Vec<bool>,
    pub m_sem: Vec<bool>,
    pub fused: Vec<bool>,
    pub layer_masks: Vec<Vec<bool>>,
    pub relevance: Vec<f64>,
    /// Aligned similarity the gates saw, per token.
    pub similarity: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub selection_overhead: f64,
    pub selection_overhead_literal: f64,
    pub footprint_bytes_f32: u64,
    pub reference_dims_flops_saved: f64,
    pub reference_dims_overhead_ratio: f64,
    pub reference_dims_footprint_bf16: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFigures {
    pub mean_reuse_gap: f64,
    pub reuse_ratio: f64,
    pub flops_saved_per_step: f64,
    pub footprint_bytes_per_frame: f64,
    pub encoder_bypass_rate: f64,
    pub latency_baseline_ms: f64,
    pub latency_cached_ms: f64,
}

impl Default for ReferenceFigures {
    fn default() -> Self {
        Self {
            mean_reuse_gap: reference::MEAN_REUSE_GAP,
            reuse_ratio: reference::REUSE_RATIO,
            flops_saved_per_step: reference::FLOPS_SAVED_PER_STEP,
            footprint_bytes_per_frame: reference::FOOTPRINT_BYTES_PER_FRAME,
            encoder_bypass_rate: reference::ENCODER_BYPASS_RATE,
            latency_baseline_ms: reference::LATENCY_BASELINE_MS,
            latency_cached_ms: reference::LATENCY_CACHED_MS,
        }
    }
}

/// One seed's run, as written to `<mode>_seed<N>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub mode: String,
    pub config: RunConfig,
    pub provenance: Provenance,
    pub steps: Vec<StepRecord>,
    pub summary: EpisodeReport,
    /// Token-weighted over the whole episode; `None` if nothing was reused.
    pub reuse_site_similarity: Option<f64>,
    pub costs: CostSummary,
    pub reference: ReferenceFigures,
    #[serde(skip)]
    pub trace: Vec<StepTrace>,
}

impl SeedReport {
    pub fn csv(&self) -> String {
        let rows: Vec<StepMetrics> = self.steps.iter().map(|s| s.metrics.clone()).collect();
        accounting::to_csv(&rows)
    }
}

fn cost_summary(cfg: &RunConfig) -> CostSummary {
    let (m, d, dkv, l, lq) = (cfg.tokens(), cfg.model.feature_dim, cfg.model.kv_dim, cfg.model.layers, cfg.model.lang_tokens);
    let r = (reference::LAYERS, reference::TOKENS, reference::FEATURE_DIM, reference::KV_DIM);
    let saved = accounting::flop_savings(reference::REUSE_RATIO, r.0, r.1, r.2, r.3);
    CostSummary {
        selection_overhead: accounting::selection_overhead(m, d, cfg.k_window, lq),
        selection_overhead_literal: accounting::selection_overhead_literal(m, d, cfg.k_window, lq),
        footprint_bytes_f32: accounting::memory_footprint(l, m, dkv, d, 4),
        reference_dims_flops_saved: saved,
        reference_dims_overhead_ratio: accounting::selection_overhead(r.1, r.2, cfg.k_window, reference::LANG_TOKENS) / saved,
        reference_dims_footprint_bf16: accounting::memory_footprint(r.0, r.1, r.3, r.2, 2),
    }
}

fn identity_remap(m: usize) -> Vec<RemapResult> {
    (0..m).map(RemapResult::Aligned).collect()
}

fn row_cos(a: &ArrayView2<'_, f64>, i: usize, b: &ArrayView2<'_, f64>, j: usize, eps: f64) -> f64 {
    let (x, y) = (a.row(i), b.row(j));
    cosine_slices(x.as_slice().expect("row-major"), y.as_slice().expect("row-major"), eps)
}

/// Run a single seed of `cfg`.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedReport> {
    cfg.validate()?;
    let (scene_spec, traj) = cfg.scenario(seed)?;
    let k = cfg.camera.intrinsics()?;
    let scene = Scene::build(&scene_spec, seed, cfg.model.feature_dim, cfg.feature_frequency)?;
    let observations = simulator::run_episode(&scene, &traj, &k, cfg.eta)?;
    let weights = init_weights(&cfg.model)?;
    let (steps, trace) = run_observations(cfg, &weights, &observations, &traj)?;
    let rows: Vec<StepMetrics> = steps.iter().map(|s| s.metrics.clone()).collect();
    let summary = accounting::aggregate_episode(&rows)?;
    let (sum, n) = steps.iter().zip(&trace).fold((0.0, 0usize), |(s, n), (r, t)| {
        let sites: usize = t.layer_masks.iter().map(|m| m.iter().filter(|&&b| b).count()).sum();
        (s + r.reuse_site_similarity.unwrap_or(0.0) * sites as f64, n + sites)
    });
    Ok(SeedReport {
        mode: cfg.mode.name().into(),
        config: RunConfig { seeds: vec![seed], ..cfg.clone() },
        provenance: Provenance {
            seed,
            scene: scene_spec,
            trajectory: traj,
            camera: cfg.camera,
            model: cfg.model,
            eta: cfg.eta,
            feature_frequency: cfg.feature_frequency,
        },
        steps,
        summary,
        reuse_site_similarity: (n > 0).then(|| sum / n as f64),
        costs: cost_summary(cfg),
        reference: ReferenceFigures::default(),
        trace,
    })
}

/// The pipeline over pre-rendered observations.
pub fn run_observations(
    cfg: &RunConfig,
    weights: &WeightSet,
    observations: &[simulator::Observation],
    traj: &TrajectorySpec,
) -> Result<(Vec<StepRecord>, Vec<StepTrace>)> {
    let sw = cfg.switches();
    let k = cfg.camera.intrinsics()?;
    let eps = cfg.gates.epsilon;
    let remapper = Remapper::new(k, cfg.k_window, eps);
    let m = k.grid().len();
    let layers = cfg.model.layers;
    let focus_k = cfg.focus_k();

    let mut cache: Option<KvCacheState> = None;
    let mut prev_rendered: Option<(Array2<f64>, PoseSE3)> = None;
    // Pose of the frame whose features (and token order) the cache holds.
    let mut cache_pose: Option<PoseSE3> = None;
    let mut prev_relevance: Option<Vec<f64>> = None;
    // Budgets use the previous step's entropy; zero before the first step.
    let mut prev_entropy = vec![0.0; layers];
    let mut records = Vec::with_capacity(observations.len());
    let mut traces = Vec::with_capacity(observations.len());

    for (t, obs) in observations.iter().enumerate() {
        let phase = traj.phases[obs.phase].kind.name().to_string();
        let rendered = obs.features.view();

        // Analysis metrics always compare rendered frames through the geometric remap.
        let (gap, true_remap) = match &prev_rendered {
            Some((pf, ppose)) => {
                let rel = PoseSE3::relative(ppose, &obs.pose);
                let remap = remapper.remap_all(&obs.depth, &rel, rendered, pf.view());
                (Some(accounting::reuse_gap(rendered, pf.view(), &remap, eps)?), Some(remap))
            }
            None => (None, None),
        };

        let bypass = match &cache {
            Some(c) if sw.cache && cfg.frame_gate => {
                frame_gate(&pooled(rendered), &pooled(c.feature_cache.view()), cfg.gates.tau_frame, eps)?
            }
            _ => false,
        };
        let features: Array2<f64> = match (&cache, bypass) {
            (Some(c), true) => c.feature_cache.clone(),
            _ => obs.features.clone(),
        };

        let relevance = match cfg.relevance_source {
            RelevanceSource::Oracle => obs.oracle_relevance.clone(),
            RelevanceSource::Attention => {
                let probe = weights.forward_step(features.view(), None, None, eps)?;
                relevance_from_attention(probe.vision_attention(m).view(), eps)?
            }
        };

        let (masks, layer_masks, rho, similarity) = match (&cache, sw.cache) {
            (Some(c), true) => {
                let cached = c.feature_cache.view();
                let remap = if bypass || !sw.remap {
                    identity_remap(m)
                } else {
                    let cpose = cache_pose.expect("cache implies a cached pose");
                    match &true_remap {
                        Some(r) if prev_rendered.as_ref().is_some_and(|(pf, _)| *pf == c.feature_cache) => r.clone(),
                        _ => remapper.remap_all(&obs.depth, &PoseSE3::relative(&cpose, &obs.pose), features.view(), cached),
                    }
                };
                let similarity = aligned_similarity(features.view(), cached, &remap, eps)?;
                let m_vis = if sw.visual_gate {
                    visual_gate(features.view(), cached, &remap, cfg.gates.tau_vis, eps)?
                } else {
                    remap.iter().map(|r| r.is_in_view()).collect()
                };
                let m_sem = if sw.semantic_gate {
                    let prev = prev_relevance.as_deref().unwrap_or(&relevance);
                    semantic_gate(&relevance, prev, cfg.gates.tau_abs, cfg.gates.tau_delta)?
                } else {
                    vec![false; m]
                };
                let masks = ReuseMasks::new(m_vis, m_sem, remap)?;
                let scores: Vec<f64> = similarity.iter().map(|s| s.unwrap_or(f64::NEG_INFINITY)).collect();
                let rho: Vec<f64> = prev_entropy.iter().map(|&h| cfg.budget.budget(h)).collect();
                let layer_masks: Vec<Vec<bool>> = rho.iter().map(|&r| enforce_budget(&masks.m, &scores, r)).collect();
                (masks, layer_masks, rho, similarity)
            }
            _ => {
                let masks = ReuseMasks::refresh_all(identity_remap(m));
                let rho: Vec<f64> = prev_entropy.iter().map(|&h| cfg.budget.budget(h)).collect();
                (masks, vec![vec![false; m]; layers], rho, vec![None; m])
            }
        };
        check_budget_law(t, &layer_masks, &rho, cfg, m)?;

        let out = match &cache {
            Some(c) if sw.cache => {
                let plan = CachePlan { masks: &layer_masks, remap: &masks.remap };
                weights.forward_step(features.view(), Some(plan), Some(c), eps)?
            }
            _ => weights.forward_step(features.view(), None, None, eps)?,
        };

        let reused: Vec<usize> = layer_masks.iter().map(|mk| mk.iter().filter(|&&b| b).count()).collect();
        let reuse_site_similarity = match &cache {
            Some(c) if reused.iter().any(|&n| n > 0) => {
                let cached = c.feature_cache.view();
                let mut sum = 0.0;
                for mk in &layer_masks {
                    for (i, _) in mk.iter().enumerate().filter(|(_, &b)| b) {
                        let j = masks.remap[i].index().ok_or(Error::MaskRemapInconsistency(i))?;
                        sum += row_cos(&rendered, i, &cached, j, eps);
                    }
                }
                Some(sum / reused.iter().sum::<usize>() as f64)
            }
            _ => None,
        };

        cache = Some(match cache.take() {
            None => KvCacheState::new(out.kv.clone(), features.clone(), 0)?,
            Some(c) => c.update(&out.kv, features.view(), t as u64, WritePolicy::RefreshedOnly { masks: &layer_masks, remap: &masks.remap })?,
        });

        let reuse_ratio = reused.iter().sum::<usize>() as f64 / (layers * m) as f64;
        let d_sem = match &prev_relevance {
            Some(p) => focus_shift(&top_k_set(&relevance, focus_k), &top_k_set(p, focus_k)),
            None => 0.0,
        };
        let (r_pos, r_align) = gap.map_or((0.0, 0.0), |g| (g.r_pos_mean, g.r_align_mean));
        let metrics = StepMetrics {
            step: t,
            phase,
            r_pos,
            r_align,
            delta_r: r_align - r_pos,
            d_sem,
            reuse_ratio,
            flops_saved: accounting::flop_savings(reuse_ratio, layers, m, cfg.model.feature_dim, cfg.model.kv_dim),
            bypass,
            has_previous: t > 0,
        };
        metrics.check()?;
        records.push(StepRecord { metrics, action_scores: out.action_scores.clone(), rho, reuse_site_similarity });
        traces.push(StepTrace {
            remap: masks.remap.clone(),
            m_vis: masks.m_vis.clone(),
            m_sem: masks.m_sem.clone(),
            fused: masks.m.clone(),
            layer_masks,
            relevance: relevance.clone(),
            similarity,
        });

        prev_entropy = out.entropy.clone();
        prev_relevance = Some(relevance);
        if !bypass {
            cache_pose = Some(obs.pose);
        }
        prev_rendered = Some((obs.features.clone(), obs.pose));
    }
    Ok((records, traces))
}

fn check_budget_law(step: usize, masks: &[Vec<bool>], rho: &[f64], cfg: &RunConfig, m: usize) -> Result<()> {
    for (l, (mask, &r)) in masks.iter().zip(rho).enumerate() {
        if !(cfg.budget.rho_min..=cfg.budget.rho_max).contains(&r) {
            return Err(Error::Invariant(format!("budget law: step {step} layer {l} rho {r} outside [rho_min, rho_max]")));
        }
        let count = mask.iter().filter(|&&b| b).count();
        if count > budget_capacity(r, m) {
            return Err(Error::Invariant(format!(
                "budget law: step {step} layer {l} reuses {count} tokens, cap {}",
                budget_capacity(r, m)
            )));
        }
    }
    Ok(())
}

/// Every seed of `cfg`, in seed order. Seeds run in parallel.
pub fn run(cfg: &RunConfig) -> Result<Vec<SeedReport>> {
    cfg.validate()?;
    cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub mode: String,
    pub seeds: Vec<u64>,
    pub overall: MetricMeans,
    pub per_phase: BTreeMap<String, MetricMeans>,
    pub mean_flops_saved_per_step: f64,
    pub reuse_site_similarity: Option<f64>,
    pub costs: CostSummary,
    pub reference: ReferenceFigures,
}

/// Seed-averaged means (each seed weighted equally).
pub fn aggregate(reports: &[SeedReport]) -> Result<AggregateReport> {
    let first = reports.first().ok_or(Error::EmptyEpisode)?;
    let n = reports.len() as f64;
    let mean_of = |ms: Vec<&MetricMeans>| {
        let k = ms.len().max(1) as f64;
        MetricMeans {
            steps: ms.iter().map(|m| m.steps).sum(),
            r_pos: ms.iter().map(|m| m.r_pos).sum::<f64>() / k,
            r_align: ms.iter().map(|m| m.r_align).sum::<f64>() / k,
            delta_r: ms.iter().map(|m| m.delta_r).sum::<f64>() / k,
            d_sem: ms.iter().map(|m| m.d_sem).sum::<f64>() / k,
            reuse_ratio: ms.iter().map(|m| m.reuse_ratio).sum::<f64>() / k,
            bypass_rate: ms.iter().map(|m| m.bypass_rate).sum::<f64>() / k,
        }
    };
    let mut phases: Vec<&String> = reports.iter().flat_map(|r| r.summary.per_phase.keys()).collect();
    phases.sort();
    phases.dedup();
    let per_phase = phases
        .into_iter()
        .map(|p| (p.clone(), mean_of(reports.iter().filter_map(|r| r.summary.per_phase.get(p)).collect())))
        .collect();
    let sims: Vec<f64> = reports.iter().filter_map(|r| r.reuse_site_similarity).collect();
    Ok(AggregateReport {
        mode: first.mode.clone(),
        seeds: reports.iter().map(|r| r.provenance.seed).collect(),
        overall: mean_of(reports.iter().map(|r| &r.summary.overall).collect()),
        per_phase,
        mean_flops_saved_per_step: reports
            .iter()
            .map(|r| r.summary.total_flops_saved / r.steps.len() as f64)
            .sum::<f64>()
            / n,
        reuse_site_similarity: (!sims.is_empty()).then(|| sims.iter().sum::<f64>() / sims.len() as f64),
        costs: first.costs,
        reference: first.reference,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!("unknown format '{other}' (expected csv, json or both)"))),
        }
    }
}

/// Write to a sibling temporary file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let io = |e: std::io::Error| Error::Snapshot(format!("{}: {e}", path.display()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v).map_err(|e| Error::Snapshot(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

/// Per-seed files in parallel, then the aggregate. Returns the paths written.
pub fn write_reports(reports: &[SeedReport], out_dir: &Path, format: OutputFormat, tag: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::Snapshot(format!("{}: {e}", out_dir.display())))?;
    let per_seed: Vec<Vec<PathBuf>> = reports
        .par_iter()
        .map(|r| {
            let stem = format!("{tag}_seed{}", r.provenance.seed);
            let mut written = Vec::new();
            if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
                let p = out_dir.join(format!("{stem}.csv"));
                write_atomic(&p, r.csv().as_bytes())?;
                written.push(p);
            }
            if matches!(format, OutputFormat::Json | OutputFormat::Both) {
                let p = out_dir.join(format!("{stem}.json"));
                write_atomic(&p, &to_json(r)?)?;
                written.push(p);
            }
            Ok(written)
        })
        .collect::<Result<_>>()?;
    let mut paths: Vec<PathBuf> = per_seed.into_iter().flatten().collect();
    let agg = out_dir.join(format!("{tag}_aggregate.json"));
    write_atomic(&agg, &to_json(&aggregate(reports)?)?)?;
    paths.push(agg);
    Ok(paths)
}

pub fn read_report(path: &Path) -> Result<SeedReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::Comparison(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Comparison(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub mode_a: String,
    pub mode_b: String,
    /// Max-abs action-score gap at every step.
    pub action_gap: Vec<f64>,
    pub max_action_gap: f64,
    /// Per-step reuse ratio of `a` minus that of `b`.
    pub reuse_delta: Vec<f64>,
    pub mean_reuse_delta: f64,
}

pub fn compare(a: &SeedReport, b: &SeedReport) -> Result<Divergence> {
    if a.provenance != b.provenance {
        let what = if a.provenance.seed != b.provenance.seed {
            format!("seeds differ ({} vs {})", a.provenance.seed, b.provenance.seed)
        } else {
            "scene, trajectory, camera, model or rendering settings differ".to_string()
        };
        return Err(Error::Comparison(what));
    }
    if a.steps.len() != b.steps.len() {
        return Err(Error::Comparison(format!("step counts differ ({} vs {})", a.steps.len(), b.steps.len())));
    }
    let action_gap: Vec<f64> = a
        .steps
        .iter()
        .zip(&b.steps)
        .map(|(x, y)| crate::toy_model::max_abs_gap(&x.action_scores, &y.action_scores))
        .collect();
    let reuse_delta: Vec<f64> = a.steps.iter().zip(&b.steps).map(|(x, y)| x.metrics.reuse_ratio - y.metrics.reuse_ratio).collect();
    Ok(Divergence {
        mode_a: a.mode.clone(),
        mode_b: b.mode.clone(),
        max_action_gap: action_gap.iter().copied().fold(0.0, f64::max),
        mean_reuse_delta: reuse_delta.iter().sum::<f64>() / reuse_delta.len().max(1) as f64,
        action_gap,
        reuse_delta,
    })
}

/// One sweep axis: a dotted config key and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub path: String,
    pub values: Vec<serde_json::Value>,
}

impl SweepAxis {
    /// Parse `key=v1,v2,...`. Values are JSON literals; bare words become strings.
    pub fn parse(spec: &str) -> Result<SweepAxis> {
        let (path, list) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("sweep parameter '{spec}' must look like key=v1,v2")))?;
        let values: Vec<serde_json::Value> = list
            .split(',')
            .filter(|v| !v.trim().is_empty())
            .map(|v| serde_json::from_str(v.trim()).unwrap_or_else(|_| serde_json::Value::String(v.trim().to_string())))
            .collect();
        if path.trim().is_empty() || values.is_empty() {
            return Err(Error::Config(format!("sweep parameter '{spec}' needs a key and at least one value")));
        }
        Ok(SweepAxis { path: path.trim().to_string(), values })
    }
}

/// Cartesian product of the axes applied to `base`, each point labelled `key=value,...`.
pub fn sweep_configs(base: &RunConfig, axes: &[SweepAxis]) -> Result<Vec<(String, RunConfig)>> {
    let mut points: Vec<(String, RunConfig)> = vec![(String::new(), base.clone())];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for (label, cfg) in &points {
            for v in &axis.values {
                let cfg = cfg.with_override(&axis.path, v.clone())?;
                let value = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                let piece = format!("{}={value}", axis.path);
                let label = if label.is_empty() { piece } else { format!("{label},{piece}") };
                next.push((label, cfg));
            }
        }
        points = next;
    }
    Ok(points)
}
