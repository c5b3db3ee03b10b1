//! PNG images, binary masks and on-disk datasets.
//!
//! A dataset directory holds `images/<id>.png` and `masks/<id>.png`. An
//! optional `manifest.txt` lists ids one per line (`#` starts a comment);
//! without it every image with a matching mask is used, sorted by id.

use std::fs;
use std::path::{Path, PathBuf};

use wrinkle_core::{Image, Mask, Sample};

use crate::error::{CliError, CliResult};

pub fn load_image(path: &Path) -> CliResult<Image> {
    let img = image::open(path)
        .map_err(|e| CliError::runtime(format!("cannot read image {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Image::from_rgb8(h as usize, w as usize, img.as_raw())?)
}

pub fn save_image(path: &Path, x: &Image) -> CliResult<()> {
    ensure_parent(path)?;
    image::save_buffer(
        path,
        &x.to_rgb8(),
        x.width() as u32,
        x.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

/// Any pixel with luma above 127 is on.
pub fn load_mask(path: &Path) -> CliResult<Mask> {
    let img = image::open(path)
        .map_err(|e| CliError::runtime(format!("cannot read mask {}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Mask::from_gray8(h as usize, w as usize, img.as_raw())?)
}

pub fn save_mask(path: &Path, m: &Mask) -> CliResult<()> {
    ensure_parent(path)?;
    image::save_buffer(
        path,
        &m.to_gray8(),
        m.width() as u32,
        m.height() as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    Ok(())
}

fn dataset_ids(dir: &Path) -> CliResult<Vec<String>> {
    let manifest = dir.join("manifest.txt");
    if manifest.is_file() {
        let text = fs::read_to_string(&manifest)
            .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", manifest.display())))?;
        return Ok(text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect());
    }
    let images = dir.join("images");
    let entries = fs::read_dir(&images)
        .map_err(|e| CliError::config(format!("cannot list {}: {e}", images.display())))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::runtime(e.to_string()))?.path();
        if path.extension().is_some_and(|e| e == "png")
            && dir.join("masks").join(path.file_name().unwrap()).is_file()
        {
            ids.push(path.file_stem().unwrap().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Load every sample of a dataset directory. A missing directory is a
/// configuration error that names the path.
pub fn load_dataset(dir: &Path) -> CliResult<Vec<Sample>> {
    if !dir.is_dir() {
        return Err(CliError::config(format!(
            "dataset directory {} does not exist",
            dir.display()
        )));
    }
    let ids = dataset_ids(dir)?;
    if ids.is_empty() {
        return Err(CliError::config(format!(
            "dataset {} contains no samples",
            dir.display()
        )));
    }
    ids.into_iter()
        .map(|id| {
            let image = load_image(&sample_path(dir, "images", &id))?;
            let mask = load_mask(&sample_path(dir, "masks", &id))?;
            Ok(Sample::new(id, image, mask)?)
        })
        .collect()
}

pub fn save_dataset(dir: &Path, samples: &[Sample]) -> CliResult<()> {
    let mut manifest = String::new();
    for s in samples {
        save_image(&sample_path(dir, "images", &s.id), &s.image)?;
        save_mask(&sample_path(dir, "masks", &s.id), &s.wrinkle_mask)?;
        manifest.push_str(&s.id);
        manifest.push('\n');
    }
    write_text(&dir.join("manifest.txt"), &manifest)
}

fn sample_path(dir: &Path, kind: &str, id: &str) -> PathBuf {
    dir.join(kind).join(format!("{id}.png"))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    ensure_parent(path)?;
    fs::write(path, text)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}
