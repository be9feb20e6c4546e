//! Bit-exact dataset I/O: images, flow fields, scalar fields, manifests.
//!
//! Formats:
//! - **Flow**: 16-bit three-channel PNG, component = `round(value·64 + 2¹⁵)`,
//!   third channel 0/1 validity.  Values beyond ±512 px saturate (the
//!   writer reports how many components did).  Decoding a file and
//!   re-encoding it reproduces the stored samples exactly.
//! - **Scalar fields**: grayscale PFM (`Pf`, dims, scale line whose sign
//!   gives endianness, rows bottom-up, 32-bit floats).  Invalid cells are
//!   stored as NaN.
//! - **Images**: 8/16-bit PNG or PNM, mapped to `[0, 1]`.
//! - **Manifests**: line-delimited JSON records pointing at per-pair files;
//!   loading resolves paths against the manifest's directory and verifies
//!   they exist.
//!
//! Readers are reentrant.  Writers assume exclusive access to their output
//! path; concurrent writes to one file are the caller's race to lose.

use crate::error::{Error, Result};
use crate::field::{Image, MaskField, ScalarField2D, VectorField2D};
use crate::synth::CameraIntrinsics;
use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Largest flow magnitude the 16-bit encoding can hold, in pixels.
pub const FLOW_SATURATION_PX: f32 = 512.0;

const FLOW_OFFSET: f32 = 32768.0;
const FLOW_SCALE: f32 = 64.0;

/// Writes a flow field as a 16-bit RGB PNG (u, v, validity).  Returns the
/// number of flow components on valid cells that saturated the encoding
/// range; a nonzero count means the file lost magnitude information.
pub fn write_flow_kitti(path: impl AsRef<Path>, flow: &VectorField2D) -> Result<usize> {
    let path = path.as_ref();
    let (w, h) = (flow.width(), flow.height());
    let mut raw = Vec::with_capacity(w * h * 3);
    let mut saturated = 0usize;
    for y in 0..h {
        for x in 0..w {
            let f = flow.get(x, y);
            let valid = flow.is_valid(x, y);
            for component in f {
                let stored = (component * FLOW_SCALE + FLOW_OFFSET).round();
                if valid && !(0.0..=65535.0).contains(&stored) {
                    saturated += 1;
                }
                raw.push(stored.clamp(0.0, 65535.0) as u16);
            }
            raw.push(u16::from(valid));
        }
    }
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer sized to dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(saturated)
}

/// Reads a flow field from a 16-bit RGB PNG written by [`write_flow_kitti`]
/// (or any file following the same convention).
pub fn read_flow_kitti(path: impl AsRef<Path>) -> Result<VectorField2D> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let buf = match img {
        DynamicImage::ImageRgb16(buf) => buf,
        other => {
            return Err(Error::format(
                path,
                format!(
                    "flow files must be 16-bit 3-channel PNG, got {:?}",
                    other.color()
                ),
            ))
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let raw = buf.as_raw();
    let mut flow = VectorField2D::new(w, h, [0.0, 0.0])?;
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * 3;
            let u = (raw[i] as f32 - FLOW_OFFSET) / FLOW_SCALE;
            let v = (raw[i + 1] as f32 - FLOW_OFFSET) / FLOW_SCALE;
            flow.set(x, y, [u, v]);
            flow.set_valid(x, y, raw[i + 2] != 0);
        }
    }
    Ok(flow)
}

/// Writes a scalar field as a grayscale PFM (little-endian, rows bottom-up).
/// Invalid cells are stored as NaN.
pub fn write_pfm(path: impl AsRef<Path>, field: &ScalarField2D) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (field.width(), field.height());
    let mut out = Vec::with_capacity(32 + w * h * 4);
    write!(out, "Pf\n{w} {h}\n-1.0\n").expect("writing to a vector cannot fail");
    for y in (0..h).rev() {
        for x in 0..w {
            let v = if field.is_valid(x, y) {
                field.get(x, y)
            } else {
                f32::NAN
            };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a grayscale PFM; NaN samples become invalid cells (value 0).
/// The scale line's sign selects endianness; its magnitude is ignored.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<ScalarField2D> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;

    let mut pos = 0usize;
    let mut token = |what: &str| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, format!("missing {what} in header")));
        }
        String::from_utf8(bytes[start..pos].to_vec())
            .map_err(|_| Error::format(path, format!("non-ASCII {what} in header")))
    };

    let magic = token("magic")?;
    if magic == "PF" {
        return Err(Error::format(path, "color PFM not supported, expected grayscale 'Pf'"));
    }
    if magic != "Pf" {
        return Err(Error::format(path, format!("bad magic {magic:?}, expected 'Pf'")));
    }
    let w: usize = token("width")?
        .parse()
        .map_err(|_| Error::format(path, "unparsable width"))?;
    let h: usize = token("height")?
        .parse()
        .map_err(|_| Error::format(path, "unparsable height"))?;
    let scale: f64 = token("scale")?
        .parse()
        .map_err(|_| Error::format(path, "unparsable scale"))?;
    if scale == 0.0 {
        return Err(Error::format(path, "scale must be nonzero"));
    }
    // Exactly one whitespace byte separates the header from the samples.
    let data_start = pos + 1;
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    if data_start + need > bytes.len() {
        return Err(Error::format(
            path,
            format!(
                "file holds {} data bytes, dimensions {w}x{h} need {need}",
                bytes.len().saturating_sub(data_start)
            ),
        ));
    }

    let little_endian = scale < 0.0;
    let mut field = ScalarField2D::new(w, h, 0.0)?;
    for (row, y) in (0..h).rev().enumerate() {
        for x in 0..w {
            let i = data_start + (row * w + x) * 4;
            let raw: [u8; 4] = bytes[i..i + 4].try_into().expect("bounds checked above");
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            if v.is_nan() {
                field.set_valid(x, y, false);
            } else {
                field.set(x, y, v);
            }
        }
    }
    Ok(field)
}

/// Loads an 8- or 16-bit PNG or PNM image into `[0, 1]` values, keeping its
/// natural channel count (alpha, when present, is dropped).
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let build = |channels: usize, data: Vec<f32>| -> Result<Image> {
        Image::from_data(w, h, channels, data)
    };
    match img {
        DynamicImage::ImageLuma8(b) => {
            build(1, b.as_raw().iter().map(|&v| v as f32 / 255.0).collect())
        }
        DynamicImage::ImageLumaA8(b) => build(
            1,
            b.as_raw()
                .chunks_exact(2)
                .map(|p| p[0] as f32 / 255.0)
                .collect(),
        ),
        DynamicImage::ImageRgb8(b) => {
            build(3, b.as_raw().iter().map(|&v| v as f32 / 255.0).collect())
        }
        DynamicImage::ImageRgba8(b) => build(
            3,
            b.as_raw()
                .chunks_exact(4)
                .flat_map(|p| p[..3].iter().map(|&v| v as f32 / 255.0))
                .collect(),
        ),
        DynamicImage::ImageLuma16(b) => {
            build(1, b.as_raw().iter().map(|&v| v as f32 / 65535.0).collect())
        }
        DynamicImage::ImageRgb16(b) => {
            build(3, b.as_raw().iter().map(|&v| v as f32 / 65535.0).collect())
        }
        DynamicImage::ImageRgba16(b) => build(
            3,
            b.as_raw()
                .chunks_exact(4)
                .flat_map(|p| p[..3].iter().map(|&v| v as f32 / 65535.0))
                .collect(),
        ),
        other => Err(Error::format(
            path,
            format!("unsupported pixel format {:?}", other.color()),
        )),
    }
}

/// Writes an image as an 8-bit PNG (grayscale or RGB by channel count).
pub fn write_image_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let quantize = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    let result = match img.channels() {
        1 => {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w, h, img.data().iter().map(|&v| quantize(v)).collect())
                    .expect("buffer sized to dimensions");
            buf.save_with_format(path, image::ImageFormat::Png)
        }
        _ => {
            let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w, h, img.data().iter().map(|&v| quantize(v)).collect())
                    .expect("buffer sized to dimensions");
            buf.save_with_format(path, image::ImageFormat::Png)
        }
    };
    result.map_err(|e| Error::format(path, e.to_string()))
}

/// Expands a grayscale image to three identical channels; RGB input is
/// returned unchanged.
pub fn gray_to_rgb(img: &Image) -> Image {
    if img.channels() == 3 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let mut data = Vec::with_capacity(w * h * 3);
    for &v in img.data() {
        data.extend_from_slice(&[v, v, v]);
    }
    Image::from_data(w, h, 3, data).expect("same dimensions, three channels")
}

/// Reads an image as a boolean mask: any pixel with a first-channel value
/// above one half is set.
pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskField> {
    let img = load_image(&path)?;
    let (w, h) = (img.width(), img.height());
    let mut mask = MaskField::new(w, h, false)?;
    for y in 0..h {
        for x in 0..w {
            mask.set(x, y, img.get(x, y, 0) > 0.5);
        }
    }
    Ok(mask)
}

/// One dataset entry: a frame pair plus optional labels, mask, and camera.
/// Paths are interpreted relative to the manifest file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub frame_q: PathBuf,
    pub frame_r: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_gt: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_gt: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<CameraIntrinsics>,
}

/// A list of dataset records, stored as line-delimited JSON.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    /// Loads a manifest, resolving every path against the manifest's
    /// directory and verifying the referenced files exist.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut record: ManifestRecord = serde_json::from_str(line).map_err(|e| {
                Error::format(path, format!("line {}: {e}", lineno + 1))
            })?;
            resolve_path(base, &mut record.frame_q);
            resolve_path(base, &mut record.frame_r);
            for opt in [&mut record.flow_gt, &mut record.tau_gt, &mut record.mask] {
                if let Some(p) = opt {
                    resolve_path(base, p);
                }
            }
            for p in record.referenced_paths() {
                if !p.exists() {
                    return Err(Error::format(
                        path,
                        format!("line {}: referenced file {} does not exist", lineno + 1, p.display()),
                    ));
                }
            }
            records.push(record);
        }
        Ok(DatasetManifest { records })
    }

    /// Writes the manifest as one JSON record per line.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for record in &self.records {
            out.push_str(
                &serde_json::to_string(record)
                    .map_err(|e| Error::format(path, e.to_string()))?,
            );
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn resolve_path(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        let joined = base.join(p.as_path());
        *p = joined;
    }
}

impl ManifestRecord {
    /// All file paths this record points at.
    pub fn referenced_paths(&self) -> Vec<&Path> {
        let mut paths = vec![self.frame_q.as_path(), self.frame_r.as_path()];
        for opt in [&self.flow_gt, &self.tau_gt, &self.mask] {
            if let Some(p) = opt {
                paths.push(p.as_path());
            }
        }
        paths
    }
}
