//! On-disk formats.
//!
//! Binary files share one container layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic ("SSFC" feature cache, "SSCK" checkpoint)
//! 4       2     format version (currently 1)
//! 6       2     reserved, zero
//! 8       4     metadata length M
//! 12      4     section count N
//! 16      4     CRC-32 of the metadata bytes
//! 20      M     metadata, UTF-8 JSON
//! then N sections:
//!         2     name length L
//!         L     name, UTF-8
//!         1     element type (1 = f32, 2 = u16)
//!         4     rows
//!         4     cols
//!         8     payload length P in bytes (rows * cols * element size)
//!         P     payload, row-major
//!         4     CRC-32 of the payload
//! ```
//!
//! Text formats: configuration is TOML, manifests, factor files and reports are JSON,
//! logs and evaluation tables are CSV. Every file is written to a temporary sibling and
//! renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use speechsplit_core::featureio::{PitchContour, QuantizedPitch};
use speechsplit_core::network::{ModelConfig, PitchMini, SpeechSplit};
use speechsplit_core::nn::{AdamState, ParamStore};
use speechsplit_core::probes::ProbeThresholds;
use speechsplit_core::rng::child_rng;
use speechsplit_core::tensor::Matrix;
use speechsplit_core::trainer::{TrainConfig, TrainState};

use crate::error::{AppError, AppResult};

pub const FEATURE_MAGIC: [u8; 4] = *b"SSFC";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SSCK";
pub const FORMAT_VERSION: u16 = 1;
pub const CONFIG_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

/// Write `bytes` to `path` atomically (temporary file in the same directory, then rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> AppResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| AppError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| AppError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| AppError::io(path, e))?;
    tmp.persist(path).map_err(|e| AppError::io(path, e.error))?;
    Ok(())
}

fn read_file(path: &Path) -> AppResult<Vec<u8>> {
    fs::read(path).map_err(|e| AppError::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Matrix<f32>),
    U16 { rows: usize, cols: usize, data: Vec<u16> },
}

impl Payload {
    fn dtype(&self) -> u8 {
        match self {
            Payload::F32(_) => 1,
            Payload::U16 { .. } => 2,
        }
    }

    fn shape(&self) -> (usize, usize) {
        match self {
            Payload::F32(m) => m.shape(),
            Payload::U16 { rows, cols, .. } => (*rows, *cols),
        }
    }

    fn bytes(&self) -> Vec<u8> {
        match self {
            Payload::F32(m) => m.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect(),
            Payload::U16 { data, .. } => data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }
}

/// A parsed container: JSON metadata plus named sections in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    pub metadata: serde_json::Value,
    pub sections: Vec<(String, Payload)>,
}

impl Container {
    pub fn new(magic: [u8; 4], metadata: serde_json::Value) -> Self {
        Self { magic, metadata, sections: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, payload: Payload) {
        self.sections.push((name.into(), payload));
    }

    pub fn section(&self, name: &str) -> Option<&Payload> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.metadata).expect("metadata serializes");
        let mut out = Vec::with_capacity(64 + meta.len());
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&meta).to_le_bytes());
        out.extend_from_slice(&meta);
        for (name, p) in &self.sections {
            let (rows, cols) = p.shape();
            let bytes = p.bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(p.dtype());
            out.extend_from_slice(&(rows as u32).to_le_bytes());
            out.extend_from_slice(&(cols as u32).to_le_bytes());
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&bytes);
            out.extend_from_slice(&crc32fast::hash(&bytes).to_le_bytes());
        }
        out
    }

    pub fn write(&self, path: &Path) -> AppResult<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn read(path: &Path, magic: [u8; 4]) -> AppResult<Self> {
        Self::from_bytes(&read_file(path)?, path, magic)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path, magic: [u8; 4]) -> AppResult<Self> {
        let mut r = Cursor { bytes, pos: 0, path };
        let found = r.take(4, "magic")?;
        if found != magic {
            return Err(r.corrupt(0, format!("expected magic {:?}, found {:?}", String::from_utf8_lossy(&magic), String::from_utf8_lossy(found))));
        }
        let version = r.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(AppError::Version {
                path: path.into(),
                format: String::from_utf8_lossy(&magic).into_owned(),
                found: version,
                supported: FORMAT_VERSION,
                hint: "regenerate the file with this build or read it with a matching release".into(),
            });
        }
        r.u16("reserved")?;
        let meta_len = r.u32("metadata length")? as usize;
        let n_sections = r.u32("section count")?;
        let meta_crc = r.u32("metadata checksum")?;
        let meta_at = r.pos as u64;
        let meta = r.take(meta_len, "metadata")?;
        if crc32fast::hash(meta) != meta_crc {
            return Err(r.corrupt(meta_at, "metadata checksum mismatch".into()));
        }
        let metadata = serde_json::from_slice(meta).map_err(|e| r.corrupt(meta_at, format!("metadata is not JSON: {e}")))?;
        let mut sections = Vec::with_capacity(n_sections as usize);
        for _ in 0..n_sections {
            let name_len = r.u16("section name length")? as usize;
            let name = String::from_utf8(r.take(name_len, "section name")?.to_vec())
                .map_err(|_| r.corrupt(r.pos as u64, "section name is not UTF-8".into()))?;
            let dtype = r.take(1, "element type")?[0];
            let rows = r.u32("rows")? as usize;
            let cols = r.u32("cols")? as usize;
            let len = r.u64("payload length")? as usize;
            let size = match dtype {
                1 => 4,
                2 => 2,
                other => return Err(r.corrupt(r.pos as u64, format!("unknown element type {other} in section {name}"))),
            };
            if rows.checked_mul(cols).and_then(|n| n.checked_mul(size)) != Some(len) {
                return Err(r.corrupt(r.pos as u64, format!("section {name}: {rows}x{cols} does not match {len} payload bytes")));
            }
            let at = r.pos as u64;
            let data = r.take(len, &format!("payload of section {name}"))?;
            let crc = r.u32(&format!("checksum of section {name}"))?;
            if crc32fast::hash(data) != crc {
                return Err(r.corrupt(at, format!("checksum mismatch in section {name}")));
            }
            let payload = if dtype == 1 {
                let v = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                Payload::F32(Matrix::from_vec(rows, cols, v))
            } else {
                Payload::U16 { rows, cols, data: data.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect() }
            };
            sections.push((name, payload));
        }
        if r.pos != bytes.len() {
            return Err(r.corrupt(r.pos as u64, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { magic, metadata, sections })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn corrupt(&self, offset: u64, what: String) -> AppError {
        AppError::Corrupt { path: self.path.into(), offset, what }
    }

    fn take(&mut self, n: usize, what: &str) -> AppResult<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt(
                self.pos as u64,
                format!("truncated while reading {what}: need {n} bytes, {} remain (checksum cannot be verified)", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> AppResult<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> AppResult<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> AppResult<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Features of one utterance as cached on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub id: String,
    pub speaker: String,
    pub speaker_index: usize,
    pub mel: Matrix<f32>,
    pub pitch: QuantizedPitch,
    /// Raw f0 in Hz, when extracted from audio.
    pub f0: Option<PitchContour>,
}

#[derive(Serialize, Deserialize)]
struct FeatureMeta {
    id: String,
    speaker: String,
    speaker_index: usize,
    frames: usize,
}

impl FeatureFile {
    pub fn to_container(&self) -> Container {
        let meta = FeatureMeta { id: self.id.clone(), speaker: self.speaker.clone(), speaker_index: self.speaker_index, frames: self.mel.rows() };
        let mut c = Container::new(FEATURE_MAGIC, serde_json::to_value(meta).unwrap());
        c.push("mel", Payload::F32(self.mel.clone()));
        c.push("pitch", Payload::U16 { rows: self.pitch.len(), cols: 1, data: self.pitch.bins().to_vec() });
        if let Some(f0) = &self.f0 {
            c.push("f0", Payload::F32(Matrix::from_vec(f0.len(), 1, f0.values().to_vec())));
        }
        c
    }

    pub fn write(&self, path: &Path) -> AppResult<()> {
        self.to_container().write(path)
    }

    pub fn read(path: &Path) -> AppResult<Self> {
        let c = Container::read(path, FEATURE_MAGIC)?;
        let bad = |what: &str| AppError::data(format!("{}: {what}", path.display()));
        let meta: FeatureMeta = serde_json::from_value(c.metadata.clone()).map_err(|e| bad(&format!("bad metadata: {e}")))?;
        let mel = match c.section("mel") {
            Some(Payload::F32(m)) => m.clone(),
            _ => return Err(bad("missing f32 section 'mel'")),
        };
        let pitch = match c.section("pitch") {
            Some(Payload::U16 { data, .. }) => QuantizedPitch::from_bins(data.clone())?,
            _ => return Err(bad("missing u16 section 'pitch'")),
        };
        let f0 = match c.section("f0") {
            Some(Payload::F32(m)) => Some(PitchContour::new(m.as_slice().to_vec())?),
            _ => None,
        };
        if mel.rows() != pitch.len() || mel.rows() != meta.frames {
            return Err(bad("frame counts of mel, pitch and metadata disagree"));
        }
        Ok(Self { id: meta.id, speaker: meta.speaker, speaker_index: meta.speaker_index, mel, pitch, f0 })
    }
}

/// Which model family a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Main,
    PitchMini,
    ContentAutoencoder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub step: u64,
    /// Speaker names in label order.
    pub speakers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(CHECKPOINT_MAGIC, serde_json::to_value(&self.meta).unwrap());
        let names = self.state.params.names();
        for (name, t) in self.state.params.iter() {
            c.push(format!("param/{name}"), Payload::F32(t.clone()));
        }
        for (name, t) in names.iter().zip(&self.state.adam.m) {
            c.push(format!("adam.m/{name}"), Payload::F32(t.clone()));
        }
        for (name, t) in names.iter().zip(&self.state.adam.v) {
            c.push(format!("adam.v/{name}"), Payload::F32(t.clone()));
        }
        c
    }

    pub fn write(&self, path: &Path) -> AppResult<()> {
        self.to_container().write(path)
    }

    /// Read a checkpoint and fill a freshly built parameter store of the recorded
    /// configuration, checking every name and shape.
    pub fn read(path: &Path) -> AppResult<Self> {
        let c = Container::read(path, CHECKPOINT_MAGIC)?;
        let bad = |what: String| AppError::data(format!("{}: {what}", path.display()));
        let meta: CheckpointMeta = serde_json::from_value(c.metadata.clone()).map_err(|e| bad(format!("bad metadata: {e}")))?;
        let mut params = blank_params(meta.kind, &meta.model)?;
        let sections: BTreeMap<&str, &Payload> = c.sections.iter().map(|(n, p)| (n.as_str(), p)).collect();
        let get = |prefix: &str, name: &str| -> AppResult<Matrix<f32>> {
            match sections.get(format!("{prefix}/{name}").as_str()) {
                Some(Payload::F32(m)) => Ok(m.clone()),
                _ => Err(bad(format!("missing section {prefix}/{name}"))),
            }
        };
        let names = params.names().to_vec();
        for name in &names {
            params.assign(name, get("param", name)?).map_err(bad)?;
        }
        let mut adam = AdamState::new(&params);
        adam.step = meta.step;
        for (i, name) in names.iter().enumerate() {
            for (prefix, slot) in [("adam.m", &mut adam.m[i]), ("adam.v", &mut adam.v[i])] {
                let m = get(prefix, name)?;
                if m.shape() != slot.shape() {
                    return Err(bad(format!("{prefix}/{name} has shape {:?}, expected {:?}", m.shape(), slot.shape())));
                }
                *slot = m;
            }
        }
        if sections.len() != 3 * names.len() {
            return Err(bad(format!("{} sections, expected {}", sections.len(), 3 * names.len())));
        }
        Ok(Self { meta, state: TrainState { params, adam } })
    }
}

/// Parameter store with the layout of `kind` under `config` (values are placeholders).
pub fn blank_params(kind: ModelKind, config: &ModelConfig) -> AppResult<ParamStore<f32>> {
    let mut rng = child_rng(0, "layout");
    Ok(match kind {
        ModelKind::Main | ModelKind::ContentAutoencoder => SpeechSplit::new::<f32>(config.clone(), &mut rng)?.1,
        ModelKind::PitchMini => PitchMini::new::<f32>(config.clone(), &mut rng)?.1,
    })
}

/// Settings of one run, stored as TOML and snapshotted into every run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub probe: ProbeThresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { format_version: CONFIG_VERSION, model: ModelConfig::desk(8), train: TrainConfig::desk(), probe: ProbeThresholds::default() }
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> AppResult<Self> {
        let base = Self::default();
        Ok(match name {
            "desk" => base,
            "full" => Self { model: ModelConfig::default(), train: TrainConfig::default(), ..base },
            "wide-rhythm" => Self { model: ModelConfig::desk(8).with_rhythm_dim(32), ..base },
            "tiny" => Self {
                model: ModelConfig { n_mels: 80, pitch_bins: 257, ..ModelConfig::tiny(8) },
                train: TrainConfig { total_steps: 20, batch_size: 2, crop_len: 32, checkpoint_every: 10, ..TrainConfig::desk() },
                ..base
            },
            other => return Err(AppError::Usage(format!("unknown preset '{other}' (desk, full, wide-rhythm, tiny)"))),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str, path: &Path) -> AppResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| AppError::data(format!("{}: {}", path.display(), e.message())))?;
        if cfg.format_version != CONFIG_VERSION {
            return Err(AppError::Version {
                path: path.into(),
                format: "config".into(),
                found: cfg.format_version as u16,
                supported: CONFIG_VERSION as u16,
                hint: "regenerate it with `speechsplit init-config`".into(),
            });
        }
        cfg.model.validate()?;
        cfg.train.validate(cfg.model.frame_factor())?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> AppResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn write(&self, path: &Path) -> AppResult<()> {
        atomic_write(path, self.to_toml().as_bytes())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    atomic_write(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> AppResult<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| AppError::data(format!("{}: {e}", path.display())))
}

/// Serialize rows to CSV (with header) and write atomically.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> AppResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
    }
    let bytes = w.into_inner().map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
    atomic_write(path, &bytes)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> AppResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| AppError::data(format!("{}: {e}", path.display())))).collect()
}

/// Entry of a corpus manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub speaker_index: usize,
    pub split: speechsplit_core::synthgen::Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub source: String,
    pub target: String,
}

/// Index of a corpus directory: `manifest.json` next to `features/<id>.ssfc` files and,
/// for synthetic corpora, `factors/<id>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub speakers: Vec<String>,
    pub utterances: Vec<ManifestEntry>,
    #[serde(default)]
    pub pairs: Vec<PairRecord>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub bank: Option<speechsplit_core::synthgen::SpeakerBank>,
}

impl Manifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn feature_path(dir: &Path, id: &str) -> PathBuf {
        dir.join("features").join(format!("{id}.ssfc"))
    }

    pub fn factors_path(dir: &Path, id: &str) -> PathBuf {
        dir.join("factors").join(format!("{id}.json"))
    }

    pub fn read(dir: &Path) -> AppResult<Self> {
        let m: Self = read_json(&Self::path(dir))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(AppError::Version {
                path: Self::path(dir),
                format: "manifest".into(),
                found: m.format_version as u16,
                supported: MANIFEST_VERSION as u16,
                hint: "regenerate the corpus".into(),
            });
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> AppResult<()> {
        write_json(&Self::path(dir), self)
    }
}
