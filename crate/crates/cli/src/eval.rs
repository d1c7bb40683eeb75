//! Directory-level matting evaluation.
//!
//! `pred` and `gt` hold one sub-directory per image (or are themselves a
//! single image). An image directory is either a scene (its instance
//! planes' visible alphas are the mattes, front to back) or a folder of
//! matte PNGs sorted by name. `image.png` is excluded from the mattes; when
//! both sides have one, editing metrics are reported for the pair.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use mpstack::io::{load_scene, png_files, read_alpha, read_color, MANIFEST_FILE};
use mpstack::metrics::{editing_metrics, evaluate_image, EvalConfig, EvalReport, ImageReport};
use mpstack::{AlphaMatte, Error, Image, Result};

pub const IMAGE_FILE: &str = "image.png";

#[derive(Clone, Debug, Default)]
pub struct ImageEntry {
    pub mattes: Vec<AlphaMatte>,
    pub image: Option<Image>,
}

fn is_image_dir(dir: &Path) -> Result<bool> {
    Ok(dir.join(MANIFEST_FILE).is_file() || !png_files(dir)?.is_empty())
}

/// Reads one image directory. A missing directory reads as no mattes.
pub fn read_entry(dir: &Path) -> Result<ImageEntry> {
    if !dir.is_dir() {
        return Ok(ImageEntry::default());
    }
    let image = match dir.join(IMAGE_FILE) {
        p if p.is_file() => Some(read_color(&p)?),
        _ => None,
    };
    if dir.join(MANIFEST_FILE).is_file() {
        let scene = load_scene(dir)?;
        let mattes = scene
            .current
            .planes()
            .iter()
            .filter(|p| !p.is_background())
            .map(|p| p.alpha().clone())
            .collect();
        return Ok(ImageEntry { mattes, image });
    }
    let mattes = png_files(dir)?
        .iter()
        .filter(|p| p.file_name().is_none_or(|n| n != IMAGE_FILE))
        .map(read_alpha)
        .collect::<Result<_>>()?;
    Ok(ImageEntry { mattes, image })
}

/// Image names under `gt`: its sub-directories, or `"."` when `gt` is
/// itself an image directory.
pub fn image_names(gt: &Path) -> Result<Vec<String>> {
    if is_image_dir(gt)? {
        return Ok(vec![".".into()]);
    }
    let mut names: Vec<String> = std::fs::read_dir(gt)
        .map_err(|e| Error::io(gt, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    Ok(names)
}

fn evaluate_one(name: &str, pred: &Path, gt: &Path, config: &EvalConfig) -> Result<ImageReport> {
    let (p, g) = (pred.join(name), gt.join(name));
    let gt_entry = read_entry(&g)?;
    let pred_entry = read_entry(&p)?;
    let mut report = evaluate_image(name, &pred_entry.mattes, &gt_entry.mattes, config)?;
    if let (Some(pi), Some(gi)) = (&pred_entry.image, &gt_entry.image) {
        report.editing = Some(editing_metrics(pi, gi)?);
    }
    Ok(report)
}

/// Evaluates every image under `gt` against the same name under `pred`.
pub fn evaluate_dirs(pred: &Path, gt: &Path, config: &EvalConfig) -> Result<EvalReport> {
    if !gt.is_dir() {
        return Err(Error::load("gt", format!("{} is not a directory", gt.display())));
    }
    let names = image_names(gt)?;
    let images = names
        .par_iter()
        .map(|name| evaluate_one(name, pred, gt, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new(*config, images))
}

/// Writes the report as pretty JSON.
pub fn write_report(report: &EvalReport, path: &Path) -> Result<PathBuf> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}
