//! Frontal orthographic silhouette rendering and model-input preparation.

use std::path::Path;

use image::GrayImage;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TriMesh;

pub const INPUT_SIZE: usize = 224;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shading {
    /// Every body pixel gets `foreground_level`.
    Silhouette,
    /// Nearer surfaces (larger Z) are brighter.
    Depth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub image_width_px: u32,
    pub image_height_px: u32,
    pub px_per_cm: f64,
    /// Image row (from the top, continuous coordinates) onto which y = 0 projects.
    pub baseline_row_px: f64,
    pub background_level: u8,
    pub foreground_level: u8,
    pub shading: Shading,
    /// Depth shading maps z in [-range, +range] cm onto the foreground ramp.
    pub depth_range_cm: f64,
    /// Darkest foreground level used by depth shading.
    pub depth_floor_level: u8,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            image_width_px: 256,
            image_height_px: 256,
            px_per_cm: 1.1,
            baseline_row_px: 248.0,
            background_level: 0,
            foreground_level: 255,
            shading: Shading::Depth,
            depth_range_cm: 30.0,
            depth_floor_level: 96,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_width_px == 0 || self.image_height_px == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if !(self.px_per_cm.is_finite() && self.px_per_cm > 0.0) {
            return Err(Error::Config(format!("px_per_cm must be positive, got {}", self.px_per_cm)));
        }
        if self.shading == Shading::Depth && !(self.depth_range_cm > 0.0) {
            return Err(Error::Config("depth_range_cm must be positive".into()));
        }
        Ok(())
    }

    /// World (x, y) to continuous image coordinates (column, row).
    fn project(&self, x: f64, y: f64) -> (f64, f64) {
        (
            0.5 * self.image_width_px as f64 + x * self.px_per_cm,
            self.baseline_row_px - y * self.px_per_cm,
        )
    }

    fn shade(&self, z: f64) -> u8 {
        match self.shading {
            Shading::Silhouette => self.foreground_level,
            Shading::Depth => {
                let t = ((z + self.depth_range_cm) / (2.0 * self.depth_range_cm)).clamp(0.0, 1.0);
                let lo = self.depth_floor_level as f64;
                let hi = self.foreground_level as f64;
                (lo + (hi - lo) * t).round() as u8
            }
        }
    }
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Shared edges are traversed in opposite directions by their two (positively
/// oriented) triangles; exactly one of them owns pixel centres on the edge.
fn owns_edge(a: (f64, f64), b: (f64, f64)) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

/// Orthographic projection onto the XY plane, viewed from +Z.
///
/// Pixel centres are tested against each triangle with a top-left fill rule;
/// the nearest surface (largest z) wins.
pub fn render_silhouette(mesh: &TriMesh, cfg: &RenderConfig) -> Result<GrayImage> {
    cfg.validate()?;
    if mesh.is_empty() {
        return Err(Error::InvalidInput("empty mesh".into()));
    }
    let (w, h) = (cfg.image_width_px as usize, cfg.image_height_px as usize);
    let projected: Vec<(f64, f64)> = mesh.vertices.iter().map(|v| cfg.project(v[0], v[1])).collect();
    for &(c, r) in &projected {
        if !(c >= 0.0 && c <= w as f64 && r >= 0.0 && r <= h as f64) {
            return Err(Error::OutOfFrame(format!(
                "vertex projects to ({c:.1}, {r:.1}) outside {w}x{h}"
            )));
        }
    }

    let mut depth = vec![f64::NEG_INFINITY; w * h];
    for f in &mesh.faces {
        let idx = [f[0] as usize, f[1] as usize, f[2] as usize];
        let mut p = idx.map(|i| projected[i]);
        let mut z = idx.map(|i| mesh.vertices[i][2]);
        let mut area = edge(p[0], p[1], p[2]);
        if area == 0.0 {
            continue;
        }
        if area < 0.0 {
            p.swap(1, 2);
            z.swap(1, 2);
            area = -area;
        }
        let min_c = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min);
        let max_c = p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max);
        let min_r = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
        let max_r = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
        let c0 = (min_c - 0.5).ceil().max(0.0) as usize;
        let c1 = ((max_c - 0.5).floor() as i64).min(w as i64 - 1);
        let r0 = (min_r - 0.5).ceil().max(0.0) as usize;
        let r1 = ((max_r - 0.5).floor() as i64).min(h as i64 - 1);
        if c1 < c0 as i64 || r1 < r0 as i64 {
            continue;
        }
        let owns = [owns_edge(p[1], p[2]), owns_edge(p[2], p[0]), owns_edge(p[0], p[1])];
        for r in r0..=r1 as usize {
            for c in c0..=c1 as usize {
                let q = (c as f64 + 0.5, r as f64 + 0.5);
                let wts = [edge(p[1], p[2], q), edge(p[2], p[0], q), edge(p[0], p[1], q)];
                let inside = wts
                    .iter()
                    .zip(owns)
                    .all(|(&wt, own)| wt > 0.0 || (wt == 0.0 && own));
                if !inside {
                    continue;
                }
                let zq = (wts[0] * z[0] + wts[1] * z[1] + wts[2] * z[2]) / area;
                let slot = &mut depth[r * w + c];
                if zq > *slot {
                    *slot = zq;
                }
            }
        }
    }

    let pixels: Vec<u8> = depth
        .iter()
        .map(|&d| if d.is_finite() { cfg.shade(d) } else { cfg.background_level })
        .collect();
    Ok(GrayImage::from_raw(w as u32, h as u32, pixels).expect("buffer matches dimensions"))
}

/// Number of pixels that differ from the background.
pub fn foreground_count(image: &GrayImage, background: u8) -> usize {
    image.pixels().filter(|p| p.0[0] != background).count()
}

/// Rows spanned by foreground pixels, `(first, last)` inclusive.
pub fn foreground_rows(image: &GrayImage, background: u8) -> Option<(u32, u32)> {
    let rows: Vec<u32> = (0..image.height())
        .filter(|&r| (0..image.width()).any(|c| image.get_pixel(c, r).0[0] != background))
        .collect();
    Some((*rows.first()?, *rows.last()?))
}

pub fn save_png(image: &GrayImage, path: &Path) -> Result<()> {
    image
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::io(path, std::io::Error::other(other.to_string())),
        })
}

pub fn encode_png(image: &GrayImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    image
        .write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::Decode(e.to_string()))?;
    Ok(buf.into_inner())
}

pub fn decode_gray(bytes: &[u8]) -> Result<GrayImage> {
    image::load_from_memory(bytes)
        .map(|img| img.to_luma8())
        .map_err(|e| Error::Decode(e.to_string()))
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_gray(&bytes).map_err(|e| Error::Decode(format!("{}: {e}", path.display())))
}

/// Per-channel normalisation applied after scaling pixels to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    pub const IMAGENET: Normalization = Normalization {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    pub const IDENTITY: Normalization = Normalization {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config(format!("invalid normalisation {self:?}")));
        }
        Ok(())
    }
}

impl Default for Normalization {
    fn default() -> Self {
        Self::IMAGENET
    }
}

/// A normalised `224 × 224 × 3` (height, width, channel) network input.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput(Array3<f32>);

impl ModelInput {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        if data.shape() != [INPUT_SIZE, INPUT_SIZE, 3] {
            return Err(Error::InvalidInput(format!(
                "model input must be {INPUT_SIZE}x{INPUT_SIZE}x3, got {:?}",
                data.shape()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite model input".into()));
        }
        Ok(Self(data))
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.0
    }

    pub fn into_inner(self) -> Array3<f32> {
        self.0
    }
}

/// Bilinear resampling with half-pixel centres; the identity when sizes match.
pub fn resize_bilinear(src: &GrayImage, width: u32, height: u32) -> Vec<f64> {
    let (sw, sh) = (src.width() as usize, src.height() as usize);
    let (dw, dh) = (width as usize, height as usize);
    let raw = src.as_raw();
    let coord = |d: usize, s: usize, n: usize| -> (usize, usize, f64) {
        let x = ((d as f64 + 0.5) * s as f64 / n as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let x0 = x.floor() as usize;
        (x0, (x0 + 1).min(s - 1), x - x0 as f64)
    };
    let cols: Vec<_> = (0..dw).map(|c| coord(c, sw, dw)).collect();
    let mut out = Vec::with_capacity(dw * dh);
    for r in 0..dh {
        let (y0, y1, fy) = coord(r, sh, dh);
        for &(x0, x1, fx) in &cols {
            let at = |y: usize, x: usize| raw[y * sw + x] as f64;
            let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
            let bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

/// Replicates a grayscale image to three channels, resizes it to 224 × 224 and
/// applies `(value / 255 - mean) / std` per channel.
pub fn to_model_input(image: &GrayImage, norm: &Normalization) -> Result<ModelInput> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::InvalidInput("empty image".into()));
    }
    norm.validate()?;
    let n = INPUT_SIZE as u32;
    let resized = resize_bilinear(image, n, n);
    let mut data = Array3::<f32>::zeros((INPUT_SIZE, INPUT_SIZE, 3));
    for (i, v) in resized.iter().enumerate() {
        let (r, c) = (i / INPUT_SIZE, i % INPUT_SIZE);
        for ch in 0..3 {
            data[[r, c, ch]] = ((v / 255.0 - norm.mean[ch]) / norm.std[ch]) as f32;
        }
    }
    ModelInput::new(data)
}
