//! PNG codecs and the on-disk scene format.
//!
//! A scene directory holds `manifest.json` next to one PNG per layer
//! channel: 8-bit RGB for colors, 16-bit grayscale for alphas, footprints
//! and depth. The manifest records the stack as first built plus an edit
//! log. Loading replays the log, which makes export and re-import
//! bit-exact even though the edited alphas are not on the 16-bit grid.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edit::{apply_op, render, CroppedPlane, EditOp, Position, Transform2D};
use crate::error::{Error, Result};
use crate::model::{
    plane_mean_depth, validate_stack, AlphaMatte, DepthMap, FootprintMask, Image, Plane, PlaneId, PlaneKind, Rect,
    SceneStack,
};
use crate::sgmp::{PlaneDepths, PlaneMasks};
use crate::synth::{generate_scene, scene_seeds, split_of, Cutout, Split, SynthConfig, SyntheticScene};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCENE_FORMAT: &str = "mpstack-scene/1";
pub const SGMP_FORMAT: &str = "mpstack-sgmp/1";
pub const DATASET_FORMAT: &str = "mpstack-dataset/1";
pub const DATASET_INDEX_FILE: &str = "index.json";

pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn quantize_u16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16
}

/// The image as it reads back from an 8-bit PNG.
pub fn quantize_image(image: &Image) -> Image {
    let pixels = image
        .pixels()
        .iter()
        .map(|p| p.map(|c| quantize_u8(c) as f32 / 255.0))
        .collect();
    Image::from_vec_unchecked(image.width(), image.height(), pixels)
}

/// The matte as it reads back from a 16-bit PNG.
pub fn quantize_alpha(alpha: &AlphaMatte) -> AlphaMatte {
    let values = alpha
        .values()
        .iter()
        .map(|&a| quantize_u16(a) as f32 / 65535.0)
        .collect();
    AlphaMatte::from_raw(alpha.width(), alpha.height(), values)
}

pub fn quantize_crop(crop: &CroppedPlane) -> CroppedPlane {
    CroppedPlane {
        id: crop.id,
        rect: crop.rect,
        color: quantize_image(&crop.color),
        alpha: quantize_alpha(&crop.alpha),
    }
}

/// Alpha-sum tolerance for a stack whose alphas went through 16-bit files.
pub fn quantized_alpha_tolerance(planes: usize) -> f64 {
    planes as f64 * 0.5 / 65535.0 + 1e-6
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

fn encode(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    encoder.set_compression(png::Compression::Fast);
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(data).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(out)
}

fn encode_gray16(width: usize, height: usize, samples: impl Iterator<Item = u16>) -> Result<Vec<u8>> {
    let data: Vec<u8> = samples.flat_map(u16::to_be_bytes).collect();
    encode(width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &data)
}

pub fn encode_color_png(image: &Image) -> Result<Vec<u8>> {
    let data: Vec<u8> = image.pixels().iter().flat_map(|p| p.map(quantize_u8)).collect();
    encode(
        image.width(),
        image.height(),
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        &data,
    )
}

pub fn encode_alpha_png(alpha: &AlphaMatte) -> Result<Vec<u8>> {
    encode_gray16(
        alpha.width(),
        alpha.height(),
        alpha.values().iter().map(|&a| quantize_u16(a)),
    )
}

pub fn encode_footprint_png(mask: &FootprintMask) -> Result<Vec<u8>> {
    encode_gray16(
        mask.width(),
        mask.height(),
        mask.bits().iter().map(|&b| if b { u16::MAX } else { 0 }),
    )
}

/// Samples after palette and low-bit expansion, scaled so `max` is full.
struct RawPng {
    width: usize,
    height: usize,
    channels: usize,
    max: f32,
    samples: Vec<u16>,
}

impl RawPng {
    fn decode(bytes: &[u8]) -> Result<RawPng> {
        let mut decoder = png::Decoder::new(Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND);
        let mut reader = decoder.read_info().map_err(png_err)?;
        let size = reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(png_err)?;
        buf.truncate(info.buffer_size());
        let (samples, max) = match info.bit_depth {
            png::BitDepth::Sixteen => (
                buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect(),
                65535.0,
            ),
            _ => (buf.iter().map(|&b| b as u16).collect(), 255.0),
        };
        Ok(RawPng {
            width: info.width as usize,
            height: info.height as usize,
            channels: info.color_type.samples(),
            max,
            samples,
        })
    }

    fn channel(&self, c: usize) -> impl Iterator<Item = f32> + '_ {
        self.samples
            .chunks_exact(self.channels)
            .map(move |px| px[c] as f32 / self.max)
    }

    fn color(&self) -> Image {
        let pixels = self
            .samples
            .chunks_exact(self.channels)
            .map(|px| {
                let f = |c: usize| px[c] as f32 / self.max;
                if self.channels >= 3 {
                    [f(0), f(1), f(2)]
                } else {
                    [f(0); 3]
                }
            })
            .collect();
        Image::from_vec_unchecked(self.width, self.height, pixels)
    }

    fn alpha_channel(&self) -> Option<usize> {
        match self.channels {
            2 => Some(1),
            4 => Some(3),
            _ => None,
        }
    }

    fn gray(&self) -> Result<Vec<f32>> {
        if self.channels > 2 {
            return Err(png_err(format!(
                "expected a grayscale image, found {} channels",
                self.channels
            )));
        }
        Ok(self.channel(0).collect())
    }
}

pub fn decode_color_png(bytes: &[u8]) -> Result<Image> {
    Ok(RawPng::decode(bytes)?.color())
}

pub fn decode_alpha_png(bytes: &[u8]) -> Result<AlphaMatte> {
    let raw = RawPng::decode(bytes)?;
    AlphaMatte::new(raw.width, raw.height, raw.gray()?)
}

pub fn decode_footprint_png(bytes: &[u8]) -> Result<FootprintMask> {
    let raw = RawPng::decode(bytes)?;
    let bits = raw.gray()?.into_iter().map(|v| v > 0.0).collect();
    FootprintMask::new(raw.width, raw.height, bits)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Png(m) => Error::Png(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub fn read_color(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    decode_color_png(&read_bytes(path)?).map_err(|e| in_file(path, e))
}

pub fn read_alpha(path: impl AsRef<Path>) -> Result<AlphaMatte> {
    let path = path.as_ref();
    decode_alpha_png(&read_bytes(path)?).map_err(|e| in_file(path, e))
}

pub fn read_footprint(path: impl AsRef<Path>) -> Result<FootprintMask> {
    let path = path.as_ref();
    decode_footprint_png(&read_bytes(path)?).map_err(|e| in_file(path, e))
}

pub fn write_color(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    write_bytes(path.as_ref(), &encode_color_png(image)?)
}

pub fn write_alpha(path: impl AsRef<Path>, alpha: &AlphaMatte) -> Result<()> {
    write_bytes(path.as_ref(), &encode_alpha_png(alpha)?)
}

pub fn write_footprint(path: impl AsRef<Path>, mask: &FootprintMask) -> Result<()> {
    write_bytes(path.as_ref(), &encode_footprint_png(mask)?)
}

/// Value range used to dequantize a 16-bit depth PNG.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min: f32,
    pub max: f32,
}

/// Writes depth linearly mapped from `[min, max]` to `[0, 65535]`.
pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<DepthRange> {
    let range = DepthRange {
        min: depth.min(),
        max: depth.max(),
    };
    let span = (range.max - range.min) as f64;
    let samples = depth.values().iter().map(|&d| {
        if span > 0.0 {
            ((d - range.min) as f64 / span * 65535.0).round() as u16
        } else {
            0
        }
    });
    write_bytes(path.as_ref(), &encode_gray16(depth.width(), depth.height(), samples)?)?;
    Ok(range)
}

pub fn read_depth(path: impl AsRef<Path>, range: DepthRange) -> Result<DepthMap> {
    let path = path.as_ref();
    let raw = RawPng::decode(&read_bytes(path)?).map_err(|e| in_file(path, e))?;
    let span = (range.max - range.min) as f64;
    let values = raw
        .gray()
        .map_err(|e| in_file(path, e))?
        .into_iter()
        .map(|v| (range.min as f64 + v as f64 * span) as f32)
        .collect();
    DepthMap::new(raw.width, raw.height, values)
}

/// Reads an RGBA (or gray+alpha) PNG. Images without an alpha channel are
/// treated as fully opaque.
pub fn read_cutout(path: impl AsRef<Path>) -> Result<Cutout> {
    let path = path.as_ref();
    let raw = RawPng::decode(&read_bytes(path)?).map_err(|e| in_file(path, e))?;
    let alpha = match raw.alpha_channel() {
        Some(c) => raw.channel(c).collect(),
        None => vec![1.0; raw.width * raw.height],
    };
    let name = path
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    Cutout::new(name, raw.color(), AlphaMatte::new(raw.width, raw.height, alpha)?)
}

/// PNG files directly inside `dir`, sorted by name.
pub fn png_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn read_cutout_dir(dir: impl AsRef<Path>) -> Result<Vec<Cutout>> {
    png_files(dir)?.iter().map(read_cutout).collect()
}

pub fn read_color_dir(dir: impl AsRef<Path>) -> Result<Vec<Image>> {
    png_files(dir)?.iter().map(read_color).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundEntry {
    pub id: PlaneId,
    pub color: String,
    pub alpha: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub id: PlaneId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_index: Option<usize>,
    pub color: String,
    /// Visible alpha.
    pub alpha: String,
    pub footprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_alpha: Option<String>,
    /// Mean depth; computed from `depth_map` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

/// Overlay positions `p` and `q` exchanged; `swapped` is the resulting composite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReorderEntry {
    pub p: usize,
    pub q: usize,
    pub swapped: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMapEntry {
    pub file: String,
    pub min: f32,
    pub max: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LogEntry {
    Remove {
        plane: PlaneId,
    },
    Reorder {
        p: PlaneId,
        q: PlaneId,
    },
    DragWithin {
        plane: PlaneId,
        #[serde(default)]
        position: Position,
        #[serde(default)]
        transform: Transform2D,
    },
    DragAcross {
        source_plane: PlaneId,
        rect: Rect,
        color: String,
        alpha: String,
        #[serde(default)]
        position: Position,
        #[serde(default)]
        transform: Transform2D,
    },
}

/// Files for the stack after the edit log; written for inspection and
/// ignored on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub render: String,
    pub planes: Vec<SnapshotPlane>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotPlane {
    pub id: PlaneId,
    pub kind: PlaneKind,
    pub color: String,
    pub alpha: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub format: String,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub background: BackgroundEntry,
    /// Front to back.
    pub layers: Vec<LayerEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composite: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reorder: Option<ReorderEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_map: Option<DepthMapEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edit_log: Vec<LogEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<Snapshot>,
}

impl SceneManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_manifest(dir: &Path, manifest: &SceneManifest) -> Result<()> {
    let mut json = manifest.to_json()?;
    json.push('\n');
    write_bytes(&dir.join(MANIFEST_FILE), json.as_bytes())
}

fn write_planes(stack: &SceneStack, dir: &Path, prefix: &str) -> Result<(BackgroundEntry, Vec<LayerEntry>)> {
    let mut layers = Vec::new();
    let mut background = None;
    for plane in stack.planes() {
        let id = plane.id();
        let color = format!("{prefix}{id}_color.png");
        let alpha = format!("{prefix}{id}_alpha.png");
        write_color(dir.join(&color), plane.color())?;
        write_alpha(dir.join(&alpha), plane.alpha())?;
        if plane.is_background() {
            background = Some(BackgroundEntry { id, color, alpha });
            continue;
        }
        let footprint = format!("{prefix}{id}_footprint.png");
        write_footprint(dir.join(&footprint), plane.footprint())?;
        layers.push(LayerEntry {
            id,
            z_index: None,
            color,
            alpha,
            footprint,
            full_alpha: None,
            depth: Some(plane.mean_depth()),
            source: None,
        });
    }
    Ok((background.expect("stack has a background"), layers))
}

/// Writes a synthesized scene. The same scene always yields the same bytes.
pub fn write_synthetic_scene(scene: &SyntheticScene, dir: impl AsRef<Path>) -> Result<SceneManifest> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let (background, mut layers) = write_planes(&scene.stack, dir, "layer_")?;
    for entry in &mut layers {
        let z = entry.id.0 as usize;
        let full = format!("layer_{z}_full_alpha.png");
        write_alpha(dir.join(&full), &scene.layers[scene.order[z]].full_alpha)?;
        entry.z_index = Some(z);
        entry.full_alpha = Some(full);
        entry.source = Some(scene.layers[scene.order[z]].source.clone());
    }
    write_color(dir.join("composite.png"), &scene.composite)?;
    let reorder = match &scene.reorder {
        Some(r) => {
            write_color(dir.join("swapped.png"), &r.swapped)?;
            Some(ReorderEntry {
                p: r.p,
                q: r.q,
                swapped: "swapped.png".into(),
            })
        }
        None => None,
    };
    let range = write_depth(dir.join("depth.png"), &scene.depth_map)?;
    let manifest = SceneManifest {
        format: SCENE_FORMAT.into(),
        width: scene.stack.width(),
        height: scene.stack.height(),
        seed: Some(scene.seed),
        background,
        layers,
        composite: Some("composite.png".into()),
        reorder,
        depth_map: Some(DepthMapEntry {
            file: "depth.png".into(),
            min: range.min,
            max: range.max,
        }),
        edit_log: Vec::new(),
        snapshot: None,
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

fn write_log(dir: &Path, ops: &[EditOp]) -> Result<Vec<LogEntry>> {
    ops.iter()
        .enumerate()
        .map(|(n, op)| {
            Ok(match op {
                EditOp::Remove { plane } => LogEntry::Remove { plane: *plane },
                EditOp::Reorder { p, q } => LogEntry::Reorder { p: *p, q: *q },
                EditOp::DragWithin {
                    plane,
                    position,
                    transform,
                } => LogEntry::DragWithin {
                    plane: *plane,
                    position: *position,
                    transform: *transform,
                },
                EditOp::DragAcross {
                    source,
                    position,
                    transform,
                } => {
                    let color = format!("log_{n}_color.png");
                    let alpha = format!("log_{n}_alpha.png");
                    write_color(dir.join(&color), &source.color)?;
                    write_alpha(dir.join(&alpha), &source.alpha)?;
                    LogEntry::DragAcross {
                        source_plane: source.id,
                        rect: source.rect,
                        color,
                        alpha,
                        position: *position,
                        transform: *transform,
                    }
                }
            })
        })
        .collect()
}

/// Writes `base` and `log`, plus a snapshot of `current` when given.
/// DragAcross crops must already be quantized (see [`quantize_crop`]) for
/// the re-imported log to replay bit-exactly.
pub fn export_scene(
    base: &SceneStack,
    log: &[EditOp],
    current: Option<&SceneStack>,
    seed: Option<u64>,
    dir: impl AsRef<Path>,
) -> Result<SceneManifest> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let (background, layers) = write_planes(base, dir, "plane_")?;
    let edit_log = write_log(dir, log)?;
    let snapshot = match current {
        Some(stack) => {
            let sub = dir.join("current");
            create_dir(&sub)?;
            write_color(sub.join("render.png"), &render(stack))?;
            let mut planes = Vec::new();
            for plane in stack.planes() {
                let id = plane.id();
                let color = format!("current/plane_{id}_color.png");
                let alpha = format!("current/plane_{id}_alpha.png");
                write_color(dir.join(&color), plane.color())?;
                write_alpha(dir.join(&alpha), plane.alpha())?;
                planes.push(SnapshotPlane {
                    id,
                    kind: plane.kind(),
                    color,
                    alpha,
                    depth: plane.mean_depth().is_finite().then_some(plane.mean_depth()),
                });
            }
            Some(Snapshot {
                render: "current/render.png".into(),
                planes,
            })
        }
        None => None,
    };
    let manifest = SceneManifest {
        format: SCENE_FORMAT.into(),
        width: base.width(),
        height: base.height(),
        seed,
        background,
        layers,
        composite: None,
        reorder: None,
        depth_map: None,
        edit_log,
        snapshot,
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct LoadedScene {
    pub dir: PathBuf,
    pub manifest: SceneManifest,
    /// Stack as built from the layer files.
    pub base: SceneStack,
    pub log: Vec<EditOp>,
    /// `base` with the log replayed.
    pub current: SceneStack,
}

impl LoadedScene {
    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }
}

fn manifest_path(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        let dir = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        (dir, path.to_path_buf())
    }
}

struct Loader<'a> {
    dir: &'a Path,
    dims: (usize, usize),
}

impl Loader<'_> {
    fn file(&self, field: &str, name: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if !path.is_file() {
            return Err(Error::load(field, format!("missing file {}", path.display())));
        }
        Ok(path)
    }

    fn check_dims(&self, field: &str, dims: (usize, usize)) -> Result<()> {
        if dims != self.dims {
            return Err(Error::load(
                field,
                format!("is {}x{}, expected {}x{}", dims.0, dims.1, self.dims.0, self.dims.1),
            ));
        }
        Ok(())
    }

    fn color(&self, field: &str, name: &str) -> Result<Image> {
        let image = read_color(self.file(field, name)?).map_err(|e| Error::load(field, e.to_string()))?;
        self.check_dims(field, image.dims())?;
        Ok(image)
    }

    fn alpha(&self, field: &str, name: &str) -> Result<AlphaMatte> {
        let alpha = read_alpha(self.file(field, name)?).map_err(|e| Error::load(field, e.to_string()))?;
        self.check_dims(field, alpha.dims())?;
        Ok(alpha)
    }

    fn footprint(&self, field: &str, name: &str) -> Result<FootprintMask> {
        let mask = read_footprint(self.file(field, name)?).map_err(|e| Error::load(field, e.to_string()))?;
        self.check_dims(field, mask.dims())?;
        Ok(mask)
    }
}

fn parse_manifest(text: &str) -> Result<SceneManifest> {
    let manifest: SceneManifest = serde_json::from_str(text).map_err(|e| Error::load("manifest", e.to_string()))?;
    if manifest.format != SCENE_FORMAT {
        return Err(Error::load(
            "format",
            format!("expected \"{SCENE_FORMAT}\", found \"{}\"", manifest.format),
        ));
    }
    if manifest.width == 0 || manifest.height == 0 {
        return Err(Error::load("width", "scene dimensions must be positive"));
    }
    Ok(manifest)
}

/// Loads a scene from its directory or its manifest file, then replays the
/// edit log. Errors name the offending manifest field.
pub fn load_scene(path: impl AsRef<Path>) -> Result<LoadedScene> {
    let (dir, file) = manifest_path(path.as_ref());
    let text = fs::read_to_string(&file).map_err(|e| Error::load("manifest", format!("{}: {e}", file.display())))?;
    let manifest = parse_manifest(&text)?;
    let loader = Loader {
        dir: &dir,
        dims: (manifest.width, manifest.height),
    };

    let depth_map = match &manifest.depth_map {
        Some(entry) => {
            let path = loader.file("depth_map.file", &entry.file)?;
            let range = DepthRange {
                min: entry.min,
                max: entry.max,
            };
            let map = read_depth(path, range).map_err(|e| Error::load("depth_map", e.to_string()))?;
            loader.check_dims("depth_map.file", map.dims())?;
            Some(map)
        }
        None => None,
    };

    let mut planes = Vec::with_capacity(manifest.layers.len() + 1);
    for (i, entry) in manifest.layers.iter().enumerate() {
        let field = |name: &str| format!("layers[{i}].{name}");
        let color = loader.color(&field("color"), &entry.color)?;
        let alpha = loader.alpha(&field("alpha"), &entry.alpha)?;
        let footprint = loader.footprint(&field("footprint"), &entry.footprint)?;
        let depth = match (entry.depth, &depth_map) {
            (Some(d), _) => d,
            (None, Some(map)) => {
                plane_mean_depth(&alpha, map, false).map_err(|e| Error::load(field("depth"), e.to_string()))?
            }
            (None, None) => return Err(Error::load(field("depth"), "absent and the manifest has no depth_map")),
        };
        planes.push(
            Plane::instance(entry.id, color, alpha, footprint, depth)
                .map_err(|e| Error::load(format!("layers[{i}]"), e.to_string()))?,
        );
    }
    let bg = &manifest.background;
    planes.push(
        Plane::background(
            bg.id,
            loader.color("background.color", &bg.color)?,
            loader.alpha("background.alpha", &bg.alpha)?,
        )
        .map_err(|e| Error::load("background", e.to_string()))?,
    );
    let base = SceneStack::from_unsorted(planes).map_err(|e| Error::load("layers", e.to_string()))?;
    let report = validate_stack(&base, quantized_alpha_tolerance(base.len()));
    if !report.passed() {
        return Err(Error::load(
            "layers",
            format!(
                "stack failed validation: {} range violations, {} footprint violations, max alpha-sum deviation {:.3e}",
                report.alpha_range_violations, report.footprint_violations, report.max_alpha_sum_deviation
            ),
        ));
    }

    let mut log = Vec::with_capacity(manifest.edit_log.len());
    let mut current = base.clone();
    for (n, entry) in manifest.edit_log.iter().enumerate() {
        let field = format!("edit_log[{n}]");
        let op = match entry {
            LogEntry::Remove { plane } => EditOp::Remove { plane: *plane },
            LogEntry::Reorder { p, q } => EditOp::Reorder { p: *p, q: *q },
            LogEntry::DragWithin {
                plane,
                position,
                transform,
            } => EditOp::DragWithin {
                plane: *plane,
                position: *position,
                transform: *transform,
            },
            LogEntry::DragAcross {
                source_plane,
                rect,
                color,
                alpha,
                position,
                transform,
            } => {
                let crop_loader = Loader {
                    dir: &dir,
                    dims: (rect.width(), rect.height()),
                };
                EditOp::DragAcross {
                    source: Arc::new(CroppedPlane {
                        id: *source_plane,
                        rect: *rect,
                        color: crop_loader.color(&format!("{field}.color"), color)?,
                        alpha: crop_loader.alpha(&format!("{field}.alpha"), alpha)?,
                    }),
                    position: *position,
                    transform: *transform,
                }
            }
        };
        current = apply_op(&current, &op)
            .map_err(|e| Error::load(&field, e.to_string()))?
            .stack;
        log.push(op);
    }

    Ok(LoadedScene {
        dir,
        manifest,
        base,
        log,
        current,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub split: Split,
    pub seed: u64,
    /// Scene directory relative to the dataset root.
    pub dir: String,
    pub instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format: String,
    pub seed: u64,
    pub config: SynthConfig,
    pub scenes: Vec<DatasetEntry>,
}

/// Generates `count` scenes in parallel, one seed stream per scene, into
/// `train/`, `val/` and `test/` under `out` at a 3:1:1 ratio.
pub fn write_dataset(
    cutouts: &[Cutout],
    backgrounds: &[Image],
    config: &SynthConfig,
    seed: u64,
    count: usize,
    out: impl AsRef<Path>,
) -> Result<DatasetIndex> {
    let out = out.as_ref();
    create_dir(out)?;
    let seeds = scene_seeds(seed, count);
    let scenes = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &scene_seed)| {
            let split = split_of(i, count);
            let name = format!("scene_{i:05}");
            let folder = match split {
                Split::Train => "train",
                Split::Val => "val",
                Split::Test => "test",
            };
            let dir = format!("{folder}/{name}");
            let scene = generate_scene(cutouts, backgrounds, config, scene_seed)?;
            write_synthetic_scene(&scene, out.join(&dir))?;
            Ok(DatasetEntry {
                name,
                split,
                seed: scene_seed,
                dir,
                instances: scene.layers.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let index = DatasetIndex {
        format: DATASET_FORMAT.into(),
        seed,
        config: config.clone(),
        scenes,
    };
    let mut json = serde_json::to_string_pretty(&index)?;
    json.push('\n');
    write_bytes(&out.join(DATASET_INDEX_FILE), json.as_bytes())?;
    Ok(index)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgmpManifest {
    pub format: String,
    pub width: usize,
    pub height: usize,
    pub tau: f64,
    pub depth_range: DepthRange,
    pub initial: Vec<f64>,
    pub refined: Vec<f64>,
    /// Quantization objective before and after each refinement step.
    pub objective_trace: Vec<f64>,
    /// Front to back.
    pub masks: Vec<String>,
}

/// Writes one 16-bit mask PNG per plane and a manifest listing the depths.
pub fn write_sgmp(
    dir: impl AsRef<Path>,
    depth: &DepthMap,
    depths: &PlaneDepths,
    masks: &PlaneMasks,
    tau: f64,
    objective_trace: &[f64],
) -> Result<SgmpManifest> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let (w, h) = masks.dims();
    let mut files = Vec::with_capacity(masks.count());
    for k in 0..masks.count() {
        let name = format!("mask_{k:02}.png");
        let samples = masks.mask(k).iter().map(|&m| quantize_u16(m as f32));
        write_bytes(&dir.join(&name), &encode_gray16(w, h, samples)?)?;
        files.push(name);
    }
    let manifest = SgmpManifest {
        format: SGMP_FORMAT.into(),
        width: w,
        height: h,
        tau,
        depth_range: DepthRange {
            min: depth.min(),
            max: depth.max(),
        },
        initial: depths.initial().to_vec(),
        refined: depths.refined().to_vec(),
        objective_trace: objective_trace.to_vec(),
        masks: files,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_bytes(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}
