//! Uniform temporal frame sampling.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use ndarray::Array4;

use crate::dataset::ManifestEntry;
use crate::encoder::vision::CHANNELS;
use crate::error::{Error, Result};

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// `floor(i·N/T)` for `i in 0..T`: evenly spaced over `[0, N)`, repeating
/// indices when fewer than `T` frames exist.
pub fn frame_indices(available: usize, count: usize) -> Vec<usize> {
    assert!(available > 0, "no frames to sample from");
    (0..count).map(|i| i * available / count).collect()
}

/// Image files in `dir`, sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Decodes one frame into `[3 × size × size]`, values mapped to [-1, 1]
/// through mean 0.5 / std 0.5 per channel.
pub fn load_frame(path: &Path, size: usize) -> Result<ndarray::Array3<f64>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut rgb = img.to_rgb8();
    if rgb.width() as usize != size || rgb.height() as usize != size {
        rgb = image::imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle);
    }
    Ok(ndarray::Array3::from_shape_fn((CHANNELS, size, size), |(c, y, x)| {
        let v = rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0;
        (v - 0.5) / 0.5
    }))
}

/// `count` frames at uniformly spaced positions, `[T × 3 × size × size]`.
pub fn sample_frames(entry: &ManifestEntry, count: usize, size: usize) -> Result<Array4<f64>> {
    let files = list_frames(&entry.frames_dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!(
            "{}: no frame images in {}",
            entry.id,
            entry.frames_dir.display()
        )));
    }
    let mut out = Array4::zeros((count, CHANNELS, size, size));
    let mut cached: Option<(usize, ndarray::Array3<f64>)> = None;
    for (t, idx) in frame_indices(files.len(), count).into_iter().enumerate() {
        let frame = match &cached {
            Some((i, f)) if *i == idx => f.clone(),
            _ => load_frame(&files[idx], size)?,
        };
        out.index_axis_mut(ndarray::Axis(0), t).assign(&frame);
        cached = Some((idx, frame));
    }
    Ok(out)
}
