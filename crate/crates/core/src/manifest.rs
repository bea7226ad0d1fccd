//! Deployment documents: model manifests, codelets and function specs.
//!
//! All three files share one TOML-based document format. A deployment archive
//! is a tar file with exactly three entries named `manifest`, `codelet` and
//! `functions`; the bundle parses as a whole or is rejected as a whole.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ModelId = String;
pub type FunctionId = String;
pub type SensorId = String;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("invalid value for `{field}`: {reason}")]
    InvalidValue { field: String, reason: String },
    #[error("archive entry `{0}` is missing")]
    MissingEntry(String),
    #[error("archive error: {0}")]
    Archive(String),
}

impl ManifestError {
    fn invalid(field: &str, reason: impl Into<String>) -> Self {
        ManifestError::InvalidValue {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Audio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColourSpace {
    Rgb,
    Yuv,
    Gray,
}

impl ColourSpace {
    pub fn channels(self) -> usize {
        match self {
            ColourSpace::Rgb | ColourSpace::Yuv => 3,
            ColourSpace::Gray => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BitDepth {
    #[serde(rename = "8")]
    B8,
    #[serde(rename = "16")]
    B16,
    #[serde(rename = "32")]
    B32,
}

impl BitDepth {
    pub fn bits(self) -> u32 {
        match self {
            BitDepth::B8 => 8,
            BitDepth::B16 => 16,
            BitDepth::B32 => 32,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            8 => Some(BitDepth::B8),
            16 => Some(BitDepth::B16),
            32 => Some(BitDepth::B32),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessorKind {
    Cpu,
    Gpu,
    Tpu,
}

impl ProcessorKind {
    pub fn name(self) -> &'static str {
        match self {
            ProcessorKind::Cpu => "cpu",
            ProcessorKind::Gpu => "gpu",
            ProcessorKind::Tpu => "tpu",
        }
    }
}

impl std::fmt::Display for ProcessorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Required vision input format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionSpec {
    pub width_px: u32,
    pub height_px: u32,
    pub colour_space: ColourSpace,
    pub rate_hz: f64,
}

/// Required audio input format. `rate_hz` is windows per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioSpec {
    pub sample_rate_hz: u32,
    pub bit_depth: BitDepth,
    pub window_s: f64,
    pub rate_hz: f64,
}

/// A model's input requirement: exactly one of vision/audio, matching the modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InputSpec {
    Vision(VisionSpec),
    Audio(AudioSpec),
}

impl InputSpec {
    pub fn modality(&self) -> Modality {
        match self {
            InputSpec::Vision(_) => Modality::Vision,
            InputSpec::Audio(_) => Modality::Audio,
        }
    }

    pub fn rate_hz(&self) -> f64 {
        match self {
            InputSpec::Vision(v) => v.rate_hz,
            InputSpec::Audio(a) => a.rate_hz,
        }
    }
}

/// Declarative description of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub model_id: ModelId,
    pub task: String,
    pub input: InputSpec,
    /// Informational; selects a synthetic executor profile.
    pub framework_tag: String,
    /// Processor variants in manifest order; no duplicate kinds.
    pub processor_variants: Vec<(ProcessorKind, String)>,
    pub feature_pipeline_id: Option<String>,
    pub latency_requirement_ms: u64,
    pub max_rate_hz: f64,
}

impl ModelManifest {
    pub fn supports(&self, kind: ProcessorKind) -> bool {
        self.processor_variants.iter().any(|(k, _)| *k == kind)
    }
}

/// A reference to an output source inside a function spec.
///
/// Serialized as a prefixed string: `model:<id>`, `function:<id>`, `sensor:<id>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceRef {
    Model(ModelId),
    Function(FunctionId),
    Sensor(SensorId),
}

impl SourceRef {
    pub fn parse(s: &str) -> Result<Self, ManifestError> {
        match s.split_once(':') {
            Some(("model", id)) if !id.is_empty() => Ok(SourceRef::Model(id.to_string())),
            Some(("function", id)) if !id.is_empty() => Ok(SourceRef::Function(id.to_string())),
            Some(("sensor", id)) if !id.is_empty() => Ok(SourceRef::Sensor(id.to_string())),
            _ => Err(ManifestError::invalid(
                "inputs",
                format!("`{s}` is not of the form model:<id>, function:<id> or sensor:<id>"),
            )),
        }
    }

    pub fn id(&self) -> &str {
        match self {
            SourceRef::Model(id) | SourceRef::Function(id) | SourceRef::Sensor(id) => id,
        }
    }
}

impl std::fmt::Display for SourceRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SourceRef::Model(id) => write!(f, "model:{id}"),
            SourceRef::Function(id) => write!(f, "function:{id}"),
            SourceRef::Sensor(id) => write!(f, "sensor:{id}"),
        }
    }
}

impl Serialize for SourceRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SourceRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        SourceRef::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Declaration of one post-processing function and its input dependencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub function_id: FunctionId,
    pub inputs: Vec<SourceRef>,
    pub output_type: String,
}

/// A codelet entry: the name of a registered builtin behavior plus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeletEntry {
    pub behavior: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

/// The three deployment documents, parsed and structurally valid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeploymentBundle {
    pub manifests: Vec<ModelManifest>,
    pub codelet: BTreeMap<FunctionId, CodeletEntry>,
    pub functions: Vec<FunctionSpec>,
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

// Raw mirror structs keep every field optional so that missing/invalid fields
// are reported by name instead of as opaque serde errors.

#[derive(Deserialize)]
struct RawManifestFile {
    #[serde(default)]
    model: Vec<RawModel>,
}

#[derive(Deserialize)]
struct RawModel {
    id: Option<String>,
    task: Option<String>,
    framework: Option<String>,
    latency_requirement_ms: Option<i64>,
    max_rate_hz: Option<f64>,
    feature_pipeline: Option<String>,
    input: Option<RawInput>,
    #[serde(default)]
    variant: Vec<RawVariant>,
}

#[derive(Deserialize)]
struct RawInput {
    modality: Option<String>,
    width_px: Option<i64>,
    height_px: Option<i64>,
    colour_space: Option<String>,
    sample_rate_hz: Option<i64>,
    bit_depth: Option<i64>,
    window_s: Option<f64>,
    rate_hz: Option<f64>,
}

#[derive(Deserialize)]
struct RawVariant {
    processor: Option<String>,
    weights: Option<String>,
}

fn require<T>(value: Option<T>, field: &str) -> Result<T, ManifestError> {
    value.ok_or_else(|| ManifestError::MissingField(field.to_string()))
}

fn positive_u32(value: i64, field: &str) -> Result<u32, ManifestError> {
    if value <= 0 {
        return Err(ManifestError::invalid(field, "must be positive"));
    }
    u32::try_from(value).map_err(|_| ManifestError::invalid(field, "out of range"))
}

fn positive_f64(value: f64, field: &str) -> Result<f64, ManifestError> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(ManifestError::invalid(field, "must be a positive number"));
    }
    Ok(value)
}

fn parse_colour(s: &str, field: &str) -> Result<ColourSpace, ManifestError> {
    match s.to_ascii_lowercase().as_str() {
        "rgb" => Ok(ColourSpace::Rgb),
        "yuv" => Ok(ColourSpace::Yuv),
        "gray" | "grey" => Ok(ColourSpace::Gray),
        other => Err(ManifestError::invalid(
            field,
            format!("unknown colour space `{other}`"),
        )),
    }
}

fn parse_processor(s: &str, field: &str) -> Result<ProcessorKind, ManifestError> {
    match s.to_ascii_lowercase().as_str() {
        "cpu" => Ok(ProcessorKind::Cpu),
        "gpu" => Ok(ProcessorKind::Gpu),
        "tpu" => Ok(ProcessorKind::Tpu),
        other => Err(ManifestError::invalid(
            field,
            format!("unknown processor `{other}`"),
        )),
    }
}

fn parse_input(raw: RawInput) -> Result<InputSpec, ManifestError> {
    let modality = require(raw.modality, "input.modality")?;
    match modality.to_ascii_lowercase().as_str() {
        "vision" => {
            let width = positive_u32(require(raw.width_px, "input.width_px")?, "input.width_px")?;
            let height = positive_u32(
                require(raw.height_px, "input.height_px")?,
                "input.height_px",
            )?;
            // Defaults: colour_space falls back to RGB.
            let colour = match raw.colour_space {
                Some(s) => parse_colour(&s, "input.colour_space")?,
                None => ColourSpace::Rgb,
            };
            let rate = positive_f64(require(raw.rate_hz, "input.rate_hz")?, "input.rate_hz")?;
            if raw.sample_rate_hz.is_some() || raw.window_s.is_some() {
                return Err(ManifestError::invalid(
                    "input",
                    "vision input must not carry audio fields",
                ));
            }
            Ok(InputSpec::Vision(VisionSpec {
                width_px: width,
                height_px: height,
                colour_space: colour,
                rate_hz: rate,
            }))
        }
        "audio" => {
            let sample_rate = positive_u32(
                require(raw.sample_rate_hz, "input.sample_rate_hz")?,
                "input.sample_rate_hz",
            )?;
            // Defaults: bit_depth falls back to 16.
            let depth = match raw.bit_depth {
                Some(bits) => BitDepth::from_bits(bits as u32).ok_or_else(|| {
                    ManifestError::invalid("input.bit_depth", "must be one of 8, 16, 32")
                })?,
                None => BitDepth::B16,
            };
            let window = positive_f64(require(raw.window_s, "input.window_s")?, "input.window_s")?;
            let rate = positive_f64(require(raw.rate_hz, "input.rate_hz")?, "input.rate_hz")?;
            if raw.width_px.is_some() || raw.height_px.is_some() || raw.colour_space.is_some() {
                return Err(ManifestError::invalid(
                    "input",
                    "audio input must not carry vision fields",
                ));
            }
            Ok(InputSpec::Audio(AudioSpec {
                sample_rate_hz: sample_rate,
                bit_depth: depth,
                window_s: window,
                rate_hz: rate,
            }))
        }
        other => Err(ManifestError::invalid(
            "input.modality",
            format!("unknown modality `{other}`"),
        )),
    }
}

fn build_model(raw: RawModel) -> Result<ModelManifest, ManifestError> {
    let model_id = require(raw.id, "id")?;
    if model_id.is_empty() {
        return Err(ManifestError::invalid("id", "must be nonempty"));
    }
    let task = require(raw.task, "task")?;
    let framework_tag = require(raw.framework, "framework")?;
    let latency = require(raw.latency_requirement_ms, "latency_requirement_ms")?;
    if latency <= 0 {
        return Err(ManifestError::invalid(
            "latency_requirement_ms",
            "must be positive",
        ));
    }
    let max_rate = positive_f64(require(raw.max_rate_hz, "max_rate_hz")?, "max_rate_hz")?;
    let input = parse_input(require(raw.input, "input")?)?;
    if raw.variant.is_empty() {
        return Err(ManifestError::MissingField("variant".to_string()));
    }
    let mut variants = Vec::new();
    let mut seen = BTreeSet::new();
    for v in raw.variant {
        let kind = parse_processor(&require(v.processor, "variant.processor")?, "variant.processor")?;
        if !seen.insert(kind) {
            return Err(ManifestError::invalid(
                "variant.processor",
                format!("duplicate processor kind `{kind}`"),
            ));
        }
        variants.push((kind, v.weights.unwrap_or_default()));
    }
    Ok(ModelManifest {
        model_id,
        task,
        input,
        framework_tag,
        processor_variants: variants,
        feature_pipeline_id: raw.feature_pipeline,
        latency_requirement_ms: latency as u64,
        max_rate_hz: max_rate,
    })
}

/// Parse a manifest document containing exactly one model description.
pub fn parse_manifest(text: &str) -> Result<ModelManifest, ManifestError> {
    let mut models = parse_manifest_file(text)?;
    match models.len() {
        1 => Ok(models.remove(0)),
        0 => Err(ManifestError::MissingField("model".to_string())),
        n => Err(ManifestError::invalid(
            "model",
            format!("expected one model description, found {n}"),
        )),
    }
}

/// Parse a manifest file listing any number of model descriptions.
pub fn parse_manifest_file(text: &str) -> Result<Vec<ModelManifest>, ManifestError> {
    let raw: RawManifestFile =
        toml::from_str(text).map_err(|e| ManifestError::MalformedDocument(e.to_string()))?;
    raw.model.into_iter().map(build_model).collect()
}

/// Parse a codelet file: one table per function id with `behavior` and `params`.
pub fn parse_codelet_file(text: &str) -> Result<BTreeMap<FunctionId, CodeletEntry>, ManifestError> {
    #[derive(Deserialize)]
    struct RawCodelet {
        behavior: Option<String>,
        #[serde(default)]
        params: BTreeMap<String, String>,
    }
    let raw: BTreeMap<String, RawCodelet> =
        toml::from_str(text).map_err(|e| ManifestError::MalformedDocument(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (id, entry) in raw {
        let behavior = entry
            .behavior
            .ok_or_else(|| ManifestError::MissingField(format!("{id}.behavior")))?;
        out.insert(
            id,
            CodeletEntry {
                behavior,
                params: entry.params,
            },
        );
    }
    Ok(out)
}

/// Parse a functions file: a list of `[[function]]` entries.
pub fn parse_functions_file(text: &str) -> Result<Vec<FunctionSpec>, ManifestError> {
    #[derive(Deserialize)]
    struct RawFunctionsFile {
        #[serde(default)]
        function: Vec<RawFunction>,
    }
    #[derive(Deserialize)]
    struct RawFunction {
        id: Option<String>,
        inputs: Option<Vec<String>>,
        output_type: Option<String>,
    }
    let raw: RawFunctionsFile =
        toml::from_str(text).map_err(|e| ManifestError::MalformedDocument(e.to_string()))?;
    let mut out = Vec::new();
    for f in raw.function {
        let function_id = require(f.id, "function.id")?;
        let inputs = require(f.inputs, "function.inputs")?;
        if inputs.is_empty() {
            return Err(ManifestError::invalid("function.inputs", "must be nonempty"));
        }
        let inputs = inputs
            .iter()
            .map(|s| SourceRef::parse(s))
            .collect::<Result<Vec<_>, _>>()?;
        let output_type = require(f.output_type, "function.output_type")?;
        out.push(FunctionSpec {
            function_id,
            inputs,
            output_type,
        });
    }
    Ok(out)
}

/// Parse a deployment archive (tar) containing exactly the entries
/// `manifest`, `codelet` and `functions`.
pub fn parse_bundle<R: Read>(reader: R) -> Result<DeploymentBundle, ManifestError> {
    let mut archive = tar::Archive::new(reader);
    let mut entries: BTreeMap<String, String> = BTreeMap::new();
    let iter = archive
        .entries()
        .map_err(|e| ManifestError::Archive(e.to_string()))?;
    for entry in iter {
        let mut entry = entry.map_err(|e| ManifestError::Archive(e.to_string()))?;
        let name = entry
            .path()
            .map_err(|e| ManifestError::Archive(e.to_string()))?
            .to_string_lossy()
            .trim_end_matches('/')
            .to_string();
        let mut text = String::new();
        entry
            .read_to_string(&mut text)
            .map_err(|e| ManifestError::Archive(e.to_string()))?;
        entries.insert(name, text);
    }
    let manifest_text = entries
        .get("manifest")
        .ok_or_else(|| ManifestError::MissingEntry("manifest".to_string()))?;
    let codelet_text = entries
        .get("codelet")
        .ok_or_else(|| ManifestError::MissingEntry("codelet".to_string()))?;
    let functions_text = entries
        .get("functions")
        .ok_or_else(|| ManifestError::MissingEntry("functions".to_string()))?;
    Ok(DeploymentBundle {
        manifests: parse_manifest_file(manifest_text)?,
        codelet: parse_codelet_file(codelet_text)?,
        functions: parse_functions_file(functions_text)?,
    })
}

/// Serialize a bundle back into the three-entry tar form. Used by tests and
/// the golden round-trip checks.
pub fn write_bundle(bundle: &DeploymentBundle) -> Vec<u8> {
    let mut builder = tar::Builder::new(Vec::new());
    let mut add = |name: &str, text: &str| {
        let mut header = tar::Header::new_gnu();
        header.set_size(text.len() as u64);
        header.set_mode(0o644);
        header.set_cksum();
        builder
            .append_data(&mut header, name, text.as_bytes())
            .expect("in-memory tar write");
    };
    add("manifest", &serialize_manifests(&bundle.manifests));
    add("codelet", &serialize_codelet(&bundle.codelet));
    add("functions", &serialize_functions(&bundle.functions));
    builder.into_inner().expect("in-memory tar finish")
}

pub fn serialize_manifests(manifests: &[ModelManifest]) -> String {
    let mut out = String::new();
    for m in manifests {
        out.push_str("[[model]]\n");
        out.push_str(&format!("id = {:?}\n", m.model_id));
        out.push_str(&format!("task = {:?}\n", m.task));
        out.push_str(&format!("framework = {:?}\n", m.framework_tag));
        out.push_str(&format!(
            "latency_requirement_ms = {}\n",
            m.latency_requirement_ms
        ));
        out.push_str(&format!("max_rate_hz = {:?}\n", m.max_rate_hz));
        if let Some(p) = &m.feature_pipeline_id {
            out.push_str(&format!("feature_pipeline = {p:?}\n"));
        }
        match &m.input {
            InputSpec::Vision(v) => {
                out.push_str("[model.input]\n");
                out.push_str("modality = \"vision\"\n");
                out.push_str(&format!("width_px = {}\n", v.width_px));
                out.push_str(&format!("height_px = {}\n", v.height_px));
                out.push_str(&format!(
                    "colour_space = \"{}\"\n",
                    match v.colour_space {
                        ColourSpace::Rgb => "rgb",
                        ColourSpace::Yuv => "yuv",
                        ColourSpace::Gray => "gray",
                    }
                ));
                out.push_str(&format!("rate_hz = {:?}\n", v.rate_hz));
            }
            InputSpec::Audio(a) => {
                out.push_str("[model.input]\n");
                out.push_str("modality = \"audio\"\n");
                out.push_str(&format!("sample_rate_hz = {}\n", a.sample_rate_hz));
                out.push_str(&format!("bit_depth = {}\n", a.bit_depth.bits()));
                out.push_str(&format!("window_s = {:?}\n", a.window_s));
                out.push_str(&format!("rate_hz = {:?}\n", a.rate_hz));
            }
        }
        for (kind, weights) in &m.processor_variants {
            out.push_str("[[model.variant]]\n");
            out.push_str(&format!("processor = \"{kind}\"\n"));
            out.push_str(&format!("weights = {weights:?}\n"));
        }
        out.push('\n');
    }
    out
}

pub fn serialize_codelet(codelet: &BTreeMap<FunctionId, CodeletEntry>) -> String {
    let mut out = String::new();
    for (id, entry) in codelet {
        out.push_str(&format!("[{id}]\n"));
        out.push_str(&format!("behavior = {:?}\n", entry.behavior));
        if !entry.params.is_empty() {
            out.push_str(&format!("[{id}.params]\n"));
            for (k, v) in &entry.params {
                out.push_str(&format!("{k} = {v:?}\n"));
            }
        }
        out.push('\n');
    }
    out
}

pub fn serialize_functions(functions: &[FunctionSpec]) -> String {
    let mut out = String::new();
    for f in functions {
        out.push_str("[[function]]\n");
        out.push_str(&format!("id = {:?}\n", f.function_id));
        let inputs: Vec<String> = f.inputs.iter().map(|r| format!("{r:?}", r = r.to_string())).collect();
        out.push_str(&format!("inputs = [{}]\n", inputs.join(", ")));
        out.push_str(&format!("output_type = {:?}\n", f.output_type));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Bundle validation
// ---------------------------------------------------------------------------

/// Ids already present in the running system, visible to cross-references.
#[derive(Debug, Clone, Default)]
pub struct DeployedIds {
    pub models: BTreeSet<ModelId>,
    pub functions: BTreeSet<FunctionId>,
    pub sensors: BTreeSet<SensorId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum BundleError {
    DuplicateModelId(ModelId),
    DuplicateFunctionId(FunctionId),
    UnresolvedRef(String),
    CyclicFunctions(Vec<FunctionId>),
    MissingCodelet(FunctionId),
    UnknownBehavior { function: FunctionId, behavior: String },
}

impl std::fmt::Display for BundleError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BundleError::DuplicateModelId(id) => write!(f, "duplicate model id `{id}`"),
            BundleError::DuplicateFunctionId(id) => write!(f, "duplicate function id `{id}`"),
            BundleError::UnresolvedRef(id) => write!(f, "unresolved reference `{id}`"),
            BundleError::CyclicFunctions(ids) => {
                write!(f, "cyclic function dependencies: {}", ids.join(", "))
            }
            BundleError::MissingCodelet(id) => write!(f, "function `{id}` has no codelet entry"),
            BundleError::UnknownBehavior { function, behavior } => {
                write!(f, "function `{function}` names unknown behavior `{behavior}`")
            }
        }
    }
}

/// Result of checking a bundle against type invariants and the deployed system.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<BundleError>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Builtin codelet behaviors known to the function coordinator.
pub const BUILTIN_BEHAVIORS: &[&str] = &["count_label", "annotate_boxes"];

/// Pure structural validation: id uniqueness, reference resolution against the
/// bundle plus already-deployed ids, acyclicity of the function graph, and
/// codelet coverage. Same inputs always produce the same report.
pub fn validate_bundle(bundle: &DeploymentBundle, deployed: &DeployedIds) -> ValidationReport {
    let mut errors = Vec::new();

    let mut model_ids = BTreeSet::new();
    for m in &bundle.manifests {
        if deployed.models.contains(&m.model_id) || !model_ids.insert(m.model_id.clone()) {
            errors.push(BundleError::DuplicateModelId(m.model_id.clone()));
        }
    }

    let mut function_ids = BTreeSet::new();
    for f in &bundle.functions {
        if deployed.functions.contains(&f.function_id)
            || !function_ids.insert(f.function_id.clone())
        {
            errors.push(BundleError::DuplicateFunctionId(f.function_id.clone()));
        }
    }

    for f in &bundle.functions {
        match bundle.codelet.get(&f.function_id) {
            None => errors.push(BundleError::MissingCodelet(f.function_id.clone())),
            Some(entry) if !BUILTIN_BEHAVIORS.contains(&entry.behavior.as_str()) => {
                errors.push(BundleError::UnknownBehavior {
                    function: f.function_id.clone(),
                    behavior: entry.behavior.clone(),
                })
            }
            Some(_) => {}
        }
        for input in &f.inputs {
            let resolvable = match input {
                SourceRef::Model(id) => model_ids.contains(id) || deployed.models.contains(id),
                SourceRef::Function(id) => {
                    function_ids.contains(id) || deployed.functions.contains(id)
                }
                SourceRef::Sensor(id) => deployed.sensors.contains(id),
            };
            if !resolvable {
                errors.push(BundleError::UnresolvedRef(input.to_string()));
            }
        }
    }

    if let Some(cycle) = find_function_cycle(&bundle.functions) {
        errors.push(BundleError::CyclicFunctions(cycle));
    }

    ValidationReport { errors }
}

/// Kahn's algorithm over function-to-function edges; returns the ids left in
/// the cycle, sorted, when a topological order does not exist.
fn find_function_cycle(functions: &[FunctionSpec]) -> Option<Vec<FunctionId>> {
    let ids: BTreeSet<&str> = functions.iter().map(|f| f.function_id.as_str()).collect();
    let mut indegree: BTreeMap<&str, usize> = ids.iter().map(|id| (*id, 0)).collect();
    let mut edges: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for f in functions {
        for input in &f.inputs {
            if let SourceRef::Function(dep) = input {
                if ids.contains(dep.as_str()) {
                    edges
                        .entry(dep.as_str())
                        .or_default()
                        .push(f.function_id.as_str());
                    *indegree.get_mut(f.function_id.as_str()).unwrap() += 1;
                }
            }
        }
    }
    let mut queue: Vec<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut remaining = indegree.len();
    while let Some(id) = queue.pop() {
        remaining -= 1;
        for next in edges.get(id).into_iter().flatten() {
            let d = indegree.get_mut(next).unwrap();
            *d -= 1;
            if *d == 0 {
                queue.push(next);
            }
        }
        indegree.remove(id);
    }
    if remaining == 0 {
        None
    } else {
        Some(indegree.keys().map(|s| s.to_string()).collect())
    }
}
