//! On-disk formats: PNG images and label maps, the `HZS1` score-map
//! container, and overlay rendering.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{HaznError, Result};
use crate::grid::{AbsBox, Grid2D, LabelMap, PixelRect, ScoreMap};

/// Magic prefix of the binary score-map container.
pub const HZS1_MAGIC: &[u8; 4] = b"HZS1";

/// Overlay colors, indexed by class id: background, head, torso, upper arms,
/// lower arms, upper legs, lower legs.
pub const PALETTE: [[u8; 3]; 7] = [
    [0, 0, 0],
    [220, 20, 60],
    [255, 140, 0],
    [255, 215, 0],
    [50, 205, 50],
    [30, 144, 255],
    [148, 0, 211],
];

/// Writes `bytes` to a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| HaznError::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| HaznError::invalid(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp: PathBuf = match dir {
        Some(d) => d.join(tmp_name),
        None => PathBuf::from(tmp_name),
    };
    {
        let mut f = fs::File::create(&tmp).map_err(|e| HaznError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| HaznError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| HaznError::io(path, e))
}

fn encode_png<P, C>(img: &ImageBuffer<P, C>, path: &Path) -> Result<Vec<u8>>
where
    P: image::Pixel<Subpixel = u8> + image::PixelWithColorType,
    C: std::ops::Deref<Target = [u8]>,
{
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|source| HaznError::Image {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(buf.into_inner())
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads an 8-bit PNG as reals in `[0, 1]`: one channel for grayscale, three
/// for anything else (alpha is dropped).
pub fn read_image(path: &Path) -> Result<Grid2D> {
    let img = image::open(path).map_err(|source| HaznError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().channel_count() <= 2 {
        let g = img.to_luma8();
        let values = g.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        Grid2D::new(w, h, 1, values)
    } else {
        let rgb = img.to_rgb8();
        let values = rgb.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        Grid2D::new(w, h, 3, values)
    }
}

/// Replicates a single-channel image to three channels; three-channel input
/// is returned unchanged.
pub fn ensure_rgb(g: Grid2D) -> Result<Grid2D> {
    match g.channels() {
        3 => Ok(g),
        1 => Grid2D::from_fn(g.width(), g.height(), 3, |x, y, _| g.get(x, y, 0)),
        c => Err(HaznError::invalid(format!(
            "expected a 1- or 3-channel image, got {c} channels"
        ))),
    }
}

pub fn encode_image_png(g: &Grid2D) -> Result<Vec<u8>> {
    let (w, h) = (g.width() as u32, g.height() as u32);
    match g.channels() {
        1 => {
            let raw = g.values().iter().map(|&v| to_u8(v)).collect();
            let img = GrayImage::from_raw(w, h, raw).expect("buffer size matches");
            encode_png(&img, Path::new("<memory>"))
        }
        3 => {
            let raw = g.values().iter().map(|&v| to_u8(v)).collect();
            let img = RgbImage::from_raw(w, h, raw).expect("buffer size matches");
            encode_png(&img, Path::new("<memory>"))
        }
        c => Err(HaznError::invalid(format!(
            "PNG export supports 1 or 3 channels, got {c}"
        ))),
    }
}

pub fn write_image(path: &Path, g: &Grid2D) -> Result<()> {
    write_atomic(path, &encode_image_png(g)?)
}

pub fn encode_label_png(l: &LabelMap) -> Result<Vec<u8>> {
    let img: GrayImage =
        ImageBuffer::from_raw(l.width() as u32, l.height() as u32, l.labels().to_vec()).expect("buffer size matches");
    encode_png(&img, Path::new("<memory>"))
}

pub fn write_labels(path: &Path, l: &LabelMap) -> Result<()> {
    write_atomic(path, &encode_label_png(l)?)
}

/// Reads an 8-bit single-channel PNG whose pixel values are class ids.
pub fn read_labels(path: &Path, num_classes: usize) -> Result<LabelMap> {
    let img = image::open(path).map_err(|source| HaznError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    if img.color().channel_count() != 1 {
        return Err(HaznError::format(
            "label map",
            format!("{} is not single-channel", path.display()),
        ));
    }
    let g = img.to_luma8();
    LabelMap::new(g.width() as usize, g.height() as usize, num_classes, g.into_raw())
}

/// Binary mask PNG: 0 outside, 255 inside.
pub fn write_mask(path: &Path, mask: &Grid2D) -> Result<()> {
    let raw = mask.values().iter().map(|&v| if v > 0.5 { 255u8 } else { 0 }).collect();
    let img: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, raw).expect("buffer size matches");
    write_atomic(path, &encode_png(&img, path)?)
}

pub fn read_mask(path: &Path) -> Result<Grid2D> {
    let img = image::open(path).map_err(|source| HaznError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let g = img.to_luma8();
    let values = g.as_raw().iter().map(|&v| if v >= 128 { 1.0 } else { 0.0 }).collect();
    Grid2D::new(g.width() as usize, g.height() as usize, 1, values)
}

/// Serializes a score map: magic, u32 LE width/height/channels, then f32 LE
/// values row-major with channels interleaved.
pub fn encode_hzs1(s: &ScoreMap) -> Vec<u8> {
    let g = s.grid();
    let mut out = Vec::with_capacity(16 + g.values().len() * 4);
    out.extend_from_slice(HZS1_MAGIC);
    for d in [g.width(), g.height(), g.channels()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in g.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_hzs1(bytes: &[u8]) -> Result<ScoreMap> {
    if bytes.len() < 16 || &bytes[..4] != HZS1_MAGIC {
        return Err(HaznError::format("score map", "missing HZS1 header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (w, h, c) = (dim(0), dim(1), dim(2));
    let n = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| HaznError::format("score map", "dimensions overflow"))?;
    let body = &bytes[16..];
    if body.len() != n * 4 {
        return Err(HaznError::format(
            "score map",
            format!("expected {} payload bytes, found {}", n * 4, body.len()),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(ScoreMap::unnormalized(Grid2D::new(w, h, c, values)?))
}

pub fn write_hzs1(path: &Path, s: &ScoreMap) -> Result<()> {
    write_atomic(path, &encode_hzs1(s))
}

pub fn read_hzs1(path: &Path) -> Result<ScoreMap> {
    let bytes = fs::read(path).map_err(|e| HaznError::io(path, e))?;
    decode_hzs1(&bytes)
}

/// Blends the class palette over the image and outlines the given boxes.
pub fn render_overlay(img: &Grid2D, labels: &LabelMap, boxes: &[AbsBox]) -> Result<Grid2D> {
    if img.width() != labels.width() || img.height() != labels.height() {
        return Err(HaznError::invalid("overlay image and labels differ in size"));
    }
    let img = ensure_rgb(img.clone())?;
    let mut out = Grid2D::from_fn(img.width(), img.height(), 3, |x, y, c| {
        let l = labels.get(x, y) as usize;
        let base = img.get(x, y, c);
        if l == 0 {
            base * 0.6
        } else {
            let p = PALETTE[l % PALETTE.len()][c] as f64 / 255.0;
            0.4 * base + 0.6 * p
        }
    })?;
    for b in boxes {
        let Some(b) = b.clamp_to(img.width(), img.height()) else {
            continue;
        };
        let r = PixelRect::covering(&b);
        let (x0, y0) = (r.x0 as usize, r.y0 as usize);
        let (x1, y1) = (r.x1 as usize - 1, r.y1 as usize - 1);
        for x in x0..=x1 {
            for y in [y0, y1] {
                out.pixel_mut(x, y).copy_from_slice(&[1.0, 1.0, 1.0]);
            }
        }
        for y in y0..=y1 {
            for x in [x0, x1] {
                out.pixel_mut(x, y).copy_from_slice(&[1.0, 1.0, 1.0]);
            }
        }
    }
    Ok(out)
}
