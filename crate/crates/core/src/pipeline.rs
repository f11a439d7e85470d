//! Declarative batch configuration and the staged runner behind `orgapipe run`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{AdapterClient, AdapterEndpoint};
use crate::detection::{ClassicalDetector, Detector, FilterConfig, NmsConfig, TilingConfig};
use crate::geometry::Rect;
use crate::imaging::{load_stack, ImageStack, LayoutHint, SignalChannel};
use crate::ml::CvConfig;
use crate::segmentation::{ClassicalSegmenter, SegmentConfig, Segmenter};
use crate::store::{
    export_csv, export_json, export_npy, Cache, CacheLookup, DetectReport, FeatureReport, SegmentReport, Session,
    TrackReport,
};
use crate::tracking::TrackingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Detect,
    Filter,
    Track,
    Segment,
    Features,
    Export,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Detect, Stage::Filter, Stage::Track, Stage::Segment, Stage::Features, Stage::Export];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Detect => "detect",
            Stage::Filter => "filter",
            Stage::Track => "track",
            Stage::Segment => "segment",
            Stage::Features => "features",
            Stage::Export => "export",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?} (expected one of detect, filter, track, segment, features, export)"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    #[default]
    Classical,
}

/// `"classical"` or an adapter endpoint table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Backend {
    Builtin(Builtin),
    Adapter(AdapterEndpoint),
}

impl Default for Backend {
    fn default() -> Self {
        Backend::Builtin(Builtin::Classical)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<LayoutHint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionStage {
    pub backend: Backend,
    pub tiling: TilingConfig,
    pub nms: NmsConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roi: Option<Rect>,
}

impl Default for DetectionStage {
    fn default() -> Self {
        Self { backend: Backend::default(), tiling: TilingConfig::default(), nms: NmsConfig::default(), roi: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingStage {
    pub enabled: bool,
    pub search_radius: f64,
    pub memory: usize,
    pub fill_gaps: bool,
}

impl Default for TrackingStage {
    fn default() -> Self {
        let d = TrackingConfig::default();
        Self { enabled: true, search_radius: d.search_radius, memory: d.memory, fill_gaps: d.fill_gaps }
    }
}

impl TrackingStage {
    pub fn config(&self) -> TrackingConfig {
        TrackingConfig { search_radius: self.search_radius, memory: self.memory, fill_gaps: self.fill_gaps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationStage {
    pub enabled: bool,
    pub backend: Backend,
    pub padding_fraction: f64,
    pub simplify_tolerance: f64,
}

impl Default for SegmentationStage {
    fn default() -> Self {
        let d = SegmentConfig::default();
        Self {
            enabled: true,
            backend: Backend::default(),
            padding_fraction: d.padding_fraction,
            simplify_tolerance: d.simplify_tolerance,
        }
    }
}

impl SegmentationStage {
    pub fn config(&self) -> SegmentConfig {
        SegmentConfig { padding_fraction: self.padding_fraction, simplify_tolerance: self.simplify_tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureStage {
    pub enabled: bool,
}

impl Default for FeatureStage {
    fn default() -> Self {
        Self { enabled: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
    Npy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub formats: Vec<ExportFormat>,
    pub include_hidden: bool,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self { dir: None, formats: vec![ExportFormat::Csv, ExportFormat::Json, ExportFormat::Npy], include_hidden: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    #[serde(default)]
    pub channels: Vec<ChannelConfig>,
    #[serde(default)]
    pub detection: DetectionStage,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub tracking: TrackingStage,
    #[serde(default)]
    pub segmentation: SegmentationStage,
    #[serde(default)]
    pub features: FeatureStage,
    #[serde(default)]
    pub export: ExportConfig,
    #[serde(default)]
    pub cv: CvConfig,
    /// Seeds cross-validation folds and model initialisation.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
}

impl PipelineError {
    fn stage(stage: Stage, e: impl fmt::Display) -> Self {
        PipelineError::Stage { stage, message: e.to_string() }
    }

    /// 2 for configuration problems, 1 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            PipelineError::Config(m) => serde_json::json!({"error": {"kind": "config", "message": m}}),
            PipelineError::Stage { stage, message } => {
                serde_json::json!({"error": {"kind": "stage", "stage": stage, "message": message}})
            }
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a config file; relative paths are resolved against its directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input.path);
        for c in &mut self.channels {
            fix(&mut c.path);
        }
        if let Some(d) = &mut self.export.dir {
            fix(d);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| Err(PipelineError::Config(m));
        if self.input.path.as_os_str().is_empty() {
            return err("input.path is empty".into());
        }
        if self.input.pixel_scale.is_some_and(|s| !(s.is_finite() && s > 0.0)) {
            return err("input.pixel_scale must be positive".into());
        }
        let mut names = BTreeSet::new();
        for c in &self.channels {
            if c.name.is_empty() || c.name == crate::segmentation::PRIMARY_CHANNEL || !names.insert(&c.name) {
                return err(format!("invalid or duplicate channel name {:?}", c.name));
            }
        }
        self.detection.tiling.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.detection.nms.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.filter.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        for b in [&self.detection.backend, &self.segmentation.backend] {
            if let Backend::Adapter(ep) = b {
                ep.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
            }
        }
        if let Backend::Adapter(ep) = &self.detection.backend {
            if !ep.capabilities.detect {
                return err("detection endpoint does not declare the detect capability".into());
            }
        }
        if let Backend::Adapter(ep) = &self.segmentation.backend {
            if !ep.capabilities.segment {
                return err("segmentation endpoint does not declare the segment capability".into());
            }
        }
        Ok(())
    }

    /// Cross-validation settings with the top-level seed applied.
    pub fn cv_config(&self) -> CvConfig {
        CvConfig { seed: self.seed, ..self.cv }
    }

    /// Checks that every referenced input exists.
    pub fn check_files(&self) -> Result<(), PipelineError> {
        for p in std::iter::once(&self.input.path).chain(self.channels.iter().map(|c| &c.path)) {
            if !p.is_file() {
                return Err(PipelineError::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn load_inputs(&self) -> Result<(ImageStack, Vec<SignalChannel>), PipelineError> {
        self.check_files()?;
        let stack = load_stack(&self.input.path, self.input.layout)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", self.input.path.display())))?
            .with_pixel_scale(self.input.pixel_scale);
        let mut channels = Vec::new();
        for c in &self.channels {
            let s = load_stack(&c.path, self.input.layout)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", c.path.display())))?;
            let ch = SignalChannel::new(&c.name, s, &stack)
                .map_err(|e| PipelineError::Config(format!("channel {}: {e}", c.name)))?;
            channels.push(ch);
        }
        Ok((stack, channels))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stages to run; `None` runs all enabled stages.
    pub stages: Option<BTreeSet<Stage>>,
    /// Overrides `export.dir`.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunReport {
    pub image_hash: String,
    pub stages: Vec<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detect: Option<DetectReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visible_after_filter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub track: Option<TrackReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment: Option<SegmentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureReport>,
    pub dropped_boxes: u64,
    pub outputs: Vec<PathBuf>,
    pub session_path: PathBuf,
}

/// Live model backends for one run. A detector and segmenter configured with
/// the same endpoint share one connection.
pub struct Backends {
    detector: Arc<dyn Detector>,
    segmenter: Arc<dyn Segmenter>,
    clients: Vec<Arc<AdapterClient>>,
}

impl Backends {
    pub fn classical() -> Self {
        Self { detector: Arc::new(ClassicalDetector), segmenter: Arc::new(ClassicalSegmenter), clients: Vec::new() }
    }

    pub fn from_parts(detector: Arc<dyn Detector>, segmenter: Arc<dyn Segmenter>) -> Self {
        Self { detector, segmenter, clients: Vec::new() }
    }

    pub fn connect(detection: &Backend, segmentation: &Backend) -> Result<Self, PipelineError> {
        let mut out = Self::classical();
        let mut det_client = None;
        if let Backend::Adapter(ep) = detection {
            let c = Arc::new(AdapterClient::connect(ep).map_err(|e| PipelineError::stage(Stage::Detect, e))?);
            out.detector = c.clone();
            out.clients.push(c.clone());
            det_client = Some((ep, c));
        }
        if let Backend::Adapter(ep) = segmentation {
            let c = match det_client {
                Some((dep, c)) if dep.transport == ep.transport && dep.command == ep.command && dep.url == ep.url => {
                    Arc::new(AdapterClient::connect_shared(&c, ep))
                }
                _ => {
                    let c = Arc::new(AdapterClient::connect(ep).map_err(|e| PipelineError::stage(Stage::Segment, e))?);
                    out.clients.push(c.clone());
                    c
                }
            };
            out.segmenter = c;
        }
        Ok(out)
    }

    pub fn detector(&self) -> &dyn Detector {
        self.detector.as_ref()
    }

    pub fn segmenter(&self) -> &dyn Segmenter {
        self.segmenter.as_ref()
    }

    pub fn dropped_boxes(&self) -> u64 {
        self.clients.iter().map(|c| c.dropped_boxes()).sum()
    }
}

/// Runs the configured stages in order, caching the session after each one.
/// Without the detect stage the session is resumed from the cache.
pub fn run(config: &PipelineConfig, opts: &RunOptions, cache: &Cache) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let (stack, channels) = config.load_inputs()?;
    let backends = Backends::connect(&config.detection.backend, &config.segmentation.backend)?;
    run_with(config, opts, cache, &stack, &channels, &backends)
}

pub fn run_with(
    config: &PipelineConfig,
    opts: &RunOptions,
    cache: &Cache,
    stack: &ImageStack,
    channels: &[SignalChannel],
    backends: &Backends,
) -> Result<RunReport, PipelineError> {
    let selected = |s: Stage| opts.stages.as_ref().is_none_or(|set| set.contains(&s));
    let enabled = |s: Stage| match s {
        Stage::Track => config.tracking.enabled,
        Stage::Segment => config.segmentation.enabled,
        Stage::Features => config.features.enabled,
        _ => true,
    };
    let stages: Vec<Stage> = Stage::ALL.into_iter().filter(|s| selected(*s) && enabled(*s)).collect();
    let out_dir = opts.out_dir.clone().or_else(|| config.export.dir.clone());
    if stages.contains(&Stage::Export) && out_dir.is_none() {
        return Err(PipelineError::Config("export needs an output directory (--out or export.dir)".into()));
    }

    let hash = stack.content_hash();
    let mut session = if stages.contains(&Stage::Detect) {
        Session::new(stack, channels)
    } else {
        let first = stages.first().copied().unwrap_or(Stage::Export);
        match cache.lookup(&hash) {
            CacheLookup::Hit(s) => s,
            CacheLookup::Miss => {
                return Err(PipelineError::stage(first, "no cached session for this image; run the detect stage first"))
            }
            CacheLookup::Corrupt(m) => return Err(PipelineError::stage(first, format!("cached session unusable: {m}"))),
        }
    };
    let mut report = RunReport { image_hash: hash.to_hex(), ..Default::default() };

    for stage in stages {
        let fail = |e: &dyn fmt::Display| PipelineError::stage(stage, e);
        match stage {
            Stage::Detect => {
                session.set_roi(config.detection.roi).map_err(|e| fail(&e))?;
                let r = session
                    .detect(stack, backends.detector(), &config.detection.tiling, &config.detection.nms, None)
                    .map_err(|e| fail(&e))?;
                for (frame, e) in &r.tile_errors {
                    log::warn!("frame {frame} tile {} at {:?}: {}", e.tile_index, e.origin, e.message);
                }
                report.detect = Some(r);
            }
            Stage::Filter => {
                report.visible_after_filter = Some(session.apply_filter(config.filter).map_err(|e| fail(&e))?);
            }
            Stage::Track => report.track = Some(session.track(&config.tracking.config()).map_err(|e| fail(&e))?),
            Stage::Segment => {
                let r = session
                    .segment(stack, channels, backends.segmenter(), &config.segmentation.config())
                    .map_err(|e| fail(&e))?;
                report.segment = Some(r);
            }
            Stage::Features => report.features = Some(session.compute_features(stack, channels).map_err(|e| fail(&e))?),
            Stage::Export => {
                let dir = out_dir.as_deref().expect("checked above");
                report.outputs = export(&session, &config.export, dir).map_err(|e| fail(&e))?;
            }
        }
        report.stages.push(stage);
        report.session_path = cache.save(&session).map_err(|e| fail(&e))?;
    }
    if report.stages.is_empty() {
        report.session_path = cache.save(&session).map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    report.dropped_boxes = backends.dropped_boxes();
    Ok(report)
}

/// Writes `detections.csv`, `session.json` and one `masks_frame<NNN>.npy`
/// label image per frame.
pub fn export(session: &Session, cfg: &ExportConfig, dir: &Path) -> Result<Vec<PathBuf>, crate::store::StoreError> {
    std::fs::create_dir_all(dir)?;
    let formats: BTreeSet<ExportFormat> = cfg.formats.iter().copied().collect();
    let mut written = Vec::new();
    for f in formats {
        match f {
            ExportFormat::Csv => {
                let p = dir.join("detections.csv");
                std::fs::write(&p, export_csv(session, cfg.include_hidden))?;
                written.push(p);
            }
            ExportFormat::Json => {
                let p = dir.join("session.json");
                std::fs::write(&p, export_json(session, None)?)?;
                written.push(p);
            }
            ExportFormat::Npy => {
                for frame in 0..session.image.frames {
                    let p = dir.join(format!("masks_frame{frame:03}.npy"));
                    std::fs::write(&p, export_npy(session, frame)?)?;
                    written.push(p);
                }
            }
        }
    }
    Ok(written)
}
