//! Run configuration: a single JSON document with defaults for every key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cache::BudgetConfig;
use crate::error::{Error, Result};
use crate::gating::GateConfig;
use crate::geometry::Intrinsics;
use crate::semantics::default_focus_k;
use crate::simulator::{self, SceneSpec, TrajectorySpec};
use crate::toy_model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Full,
    NoCache,
    NoRemap,
    NoSemanticGate,
    NoVisualGate,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Full, Mode::NoCache, Mode::NoRemap, Mode::NoSemanticGate, Mode::NoVisualGate];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoCache => "no_cache",
            Mode::NoRemap => "no_remap",
            Mode::NoSemanticGate => "no_semantic_gate",
            Mode::NoVisualGate => "no_visual_gate",
        }
    }

    pub fn parse(name: &str) -> Result<Mode> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown mode '{name}' (expected one of full, no_cache, no_remap, no_semantic_gate, no_visual_gate)")))
    }

    pub fn switches(self) -> Switches {
        let full = Switches { cache: true, remap: true, semantic_gate: true, visual_gate: true };
        match self {
            Mode::Full => full,
            Mode::NoCache => Switches { cache: false, ..full },
            Mode::NoRemap => Switches { remap: false, ..full },
            Mode::NoSemanticGate => Switches { semantic_gate: false, ..full },
            Mode::NoVisualGate => Switches { visual_gate: false, ..full },
        }
    }
}

/// Pipeline stages an ablation can turn off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Switches {
    /// Off: every token and every frame is recomputed (the exact oracle).
    pub cache: bool,
    /// Off: token `i` is matched to previous token `i`.
    pub remap: bool,
    pub semantic_gate: bool,
    /// Off: every in-view token passes the visual gate.
    pub visual_gate: bool,
}

impl Switches {
    pub fn differences(&self, other: &Switches) -> usize {
        [
            self.cache != other.cache,
            self.remap != other.remap,
            self.semantic_gate != other.semantic_gate,
            self.visual_gate != other.visual_gate,
        ]
        .into_iter()
        .filter(|&d| d)
        .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceSource {
    /// Ground-truth task relevance from the simulator's phase schedule.
    #[default]
    Oracle,
    /// Column means of the model's language-to-vision attention.
    Attention,
}

/// A preset name or a full inline scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneSource {
    Preset(String),
    Inline(SceneSpec),
}

impl Default for SceneSource {
    fn default() -> Self {
        SceneSource::Preset("corridor".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width: u32,
    pub height: u32,
    pub patch: u32,
    pub hfov_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { width: 128, height: 128, patch: 16, hfov_deg: 90.0 }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::from_hfov(self.width, self.height, self.patch, self.hfov_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneSource,
    /// Required with an inline scene; overrides the preset's trajectory otherwise.
    pub trajectory: Option<TrajectorySpec>,
    pub camera: CameraConfig,
    pub model: ModelSpec,
    pub gates: GateConfig,
    pub budget: BudgetConfig,
    /// Focus-set size; ten percent of the tokens (rounded up) when absent.
    pub focus_k: Option<usize>,
    pub relevance_source: RelevanceSource,
    pub k_window: usize,
    pub eta: f64,
    /// Spatial frequency (radians per metre) of the synthetic surface features.
    pub feature_frequency: f64,
    pub seeds: Vec<u64>,
    pub mode: Mode,
    /// Whole-frame encoder bypass; only active while caching is enabled.
    pub frame_gate: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneSource::default(),
            trajectory: None,
            camera: CameraConfig::default(),
            model: ModelSpec::default(),
            gates: GateConfig::default(),
            budget: BudgetConfig::default(),
            focus_k: None,
            relevance_source: RelevanceSource::Oracle,
            k_window: 3,
            eta: 0.02,
            feature_frequency: 1.5,
            seeds: (0..5).collect(),
            mode: Mode::Full,
            frame_gate: true,
        }
    }
}

impl RunConfig {
    pub fn from_preset(name: &str) -> Self {
        Self { scene: SceneSource::Preset(name.into()), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.gates.validate()?;
        self.budget.validate()?;
        self.model.validate()?;
        let k = self.camera.intrinsics()?;
        if self.k_window == 0 {
            return Err(Error::Config("k_window must be >= 1".into()));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta = {} must be non-negative", self.eta)));
        }
        if !(self.feature_frequency > 0.0 && self.feature_frequency.is_finite()) {
            return Err(Error::Config(format!("feature_frequency = {} must be positive", self.feature_frequency)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if self.focus_k == Some(0) {
            return Err(Error::Config("focus_k must be >= 1".into()));
        }
        if let Some(fk) = self.focus_k {
            let m = k.grid().len();
            if fk > m {
                return Err(Error::Config(format!("focus_k = {fk} exceeds the {m} tokens per frame")));
            }
        }
        match (&self.scene, &self.trajectory) {
            (SceneSource::Preset(name), _) => {
                if !simulator::PRESETS.iter().any(|(p, _)| p == name) {
                    return Err(Error::Config(format!("scene: unknown preset '{name}'")));
                }
            }
            (SceneSource::Inline(_), None) => {
                return Err(Error::Config("trajectory is required with an inline scene".into()));
            }
            (SceneSource::Inline(_), Some(_)) => {}
        }
        if let Some(t) = &self.trajectory {
            t.validate()?;
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        (self.camera.width / self.camera.patch.max(1)) as usize * (self.camera.height / self.camera.patch.max(1)) as usize
    }

    pub fn focus_k(&self) -> usize {
        self.focus_k.unwrap_or_else(|| default_focus_k(self.tokens()))
    }

    /// Scene and trajectory for one seed.
    pub fn scenario(&self, seed: u64) -> Result<(SceneSpec, TrajectorySpec)> {
        match &self.scene {
            SceneSource::Preset(name) => {
                let (scene, traj) = simulator::preset(name, seed)?;
                Ok((scene, self.trajectory.clone().unwrap_or(traj)))
            }
            SceneSource::Inline(scene) => {
                let traj = self.trajectory.clone().ok_or_else(|| Error::Config("trajectory is required with an inline scene".into()))?;
                Ok((scene.clone(), traj))
            }
        }
    }

    pub fn switches(&self) -> Switches {
        self.mode.switches()
    }

    /// Parse and validate. Errors carry the line and column of the offending key.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        cfg.validate().map_err(|e| locate(text, e))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Copy with the value at a dotted key path replaced, e.g. `gates.tau_vis`.
    pub fn with_override(&self, path: &str, value: serde_json::Value) -> Result<RunConfig> {
        let mut doc = serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut node = &mut doc;
        let parts: Vec<&str> = path.split('.').collect();
        for (depth, part) in parts.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("{path}: '{}' is not an object", parts[..depth].join("."))))?;
            if depth + 1 == parts.len() {
                obj.insert(part.to_string(), value.clone());
                break;
            }
            node = obj.entry(part.to_string()).or_insert_with(|| serde_json::Value::Object(Default::default()));
            if node.is_null() {
                *node = serde_json::Value::Object(Default::default());
            }
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Config(format!("{path}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Prefix a validation message with the line and column where its key appears.
fn locate(text: &str, err: Error) -> Error {
    let Error::Config(msg) = &err else {
        return match err {
            Error::InvalidIntrinsics(m) => locate(text, Error::Config(format!("camera: {m}"))),
            other => other,
        };
    };
    let key = msg
        .split(|c: char| c.is_whitespace() || c == ':' || c == '=' || c == '\'')
        .find(|w| !w.is_empty())
        .unwrap_or("")
        .rsplit('.')
        .next()
        .unwrap_or("")
        .split('[')
        .next()
        .unwrap_or("");
    let needle = format!("\"{key}\"");
    if key.is_empty() {
        return err;
    }
    match text.find(&needle) {
        Some(offset) => {
            let before = &text[..offset];
            let line = before.matches('\n').count() + 1;
            let column = offset - before.rfind('\n').map_or(0, |p| p + 1) + 1;
            Error::Config(format!("line {line}, column {column}: {msg}"))
        }
        None => err,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c.gates.tau_vis, 0.85);
        assert_eq!(c.gates.tau_abs, 0.70);
        assert_eq!(c.gates.tau_delta, 0.30);
        assert_eq!(c.gates.tau_frame, 0.95);
        assert_eq!(c.gates.epsilon, 1e-6);
        assert_eq!(c.k_window, 3);
        assert_eq!(c.budget.rho_max, 0.90);
        assert_eq!(c.budget.rho_min, 0.0);
        assert_eq!(c.budget.alpha, 0.5);
        assert_eq!(c.eta, 0.02);
        assert_eq!(c.tokens(), 64);
        assert_eq!(c.focus_k(), 7);
        assert_eq!(c.seeds.len(), 5);
        assert_eq!(c.mode, Mode::Full);
    }

    #[test]
    fn entropy_range_maps_into_budget_band() {
        let b = BudgetConfig::default();
        assert!((b.budget(0.0) - 0.9).abs() < 1e-12);
        assert!((b.budget(1.0) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn every_ablation_differs_from_full_by_one_switch() {
        let full = Mode::Full.switches();
        for m in Mode::ALL.into_iter().skip(1) {
            assert_eq!(m.switches().differences(&full), 1, "{}", m.name());
        }
        // and the ablations are pairwise distinct
        for a in Mode::ALL {
            for b in Mode::ALL {
                assert_eq!(a == b, a.switches() == b.switches());
            }
        }
    }

    #[test]
    fn modes_round_trip_by_name() {
        for m in Mode::ALL {
            assert_eq!(Mode::parse(m.name()).unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert!(Mode::parse("no_gates").is_err());
    }

    #[test]
    fn syntax_errors_are_line_referenced() {
        let err = RunConfig::from_json("{\n  \"eta\": 0.1,\n  \"gates\": { \"tau_vis\": }\n}").unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json("{\n \"gates\": {\"tau_viz\": 0.9}\n}").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn range_errors_are_line_referenced() {
        let err = RunConfig::from_json("{\n  \"seeds\": [1],\n  \"gates\": {\n    \"tau_abs\": 1.5\n  }\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4") && msg.contains("tau_abs"), "{msg}");
        let err = RunConfig::from_json("{\"budget\": {\"rho_min\": 0.95}}").unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn unknown_preset_and_missing_trajectory() {
        let err = RunConfig::from_json("{\"scene\": \"attic\"}").unwrap_err();
        assert!(err.to_string().contains("attic"));
        let inline = r#"{"scene": {"room": {"min": [-1, -1, -1], "max": [1, 1, 1]}}}"#;
        assert!(RunConfig::from_json(inline).unwrap_err().to_string().contains("trajectory"));
    }

    #[test]
    fn overrides_follow_dotted_paths() {
        let c = RunConfig::default();
        let d = c.with_override("gates.tau_vis", serde_json::json!(0.95)).unwrap();
        assert_eq!(d.gates.tau_vis, 0.95);
        let e = c.with_override("mode", serde_json::json!("no_remap")).unwrap();
        assert_eq!(e.mode, Mode::NoRemap);
        assert!(c.with_override("gates.tau_vis", serde_json::json!(3.0)).is_err());
        assert!(c.with_override("gates.bogus", serde_json::json!(1)).is_err());
    }

    #[test]
    fn serialized_config_parses_back() {
        let c = RunConfig { focus_k: Some(5), seeds: vec![3, 9], ..RunConfig::from_preset("turn-heavy") };
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }
}
