//! Box representations, coordinate conversions, letterboxing and overlap metrics.
//!
//! Corner-form boxes are half-open real intervals in the pixel frame of their
//! image (origin top-left), so `area = (x2 - x1) * (y2 - y1)`. Normalized boxes
//! are center-form fractions of the image width and height.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boxes with a smaller area (px²) are rejected everywhere.
pub const MIN_AREA: f64 = 1e-8;

/// Slack allowed when checking that a box lies inside its image.
pub const BOUNDS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn max_side(&self) -> u32 {
        self.width.max(self.height)
    }
}

/// Pixel corner-form box `(x1, y1, x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct BoxXyxy {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxXyxy {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    /// Builds a corner-form box from `(x, y, width, height)`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::InvalidBox(format!(
                "width and height must be positive, got w={w} h={h}"
            )));
        }
        Self::new(x, y, x + w, y + h)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { x1, y1, x2, y2 } = *self;
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite coordinate in {self:?}"
            )));
        }
        if !(x1 < x2 && y1 < y2) {
            return Err(Error::InvalidBox(format!(
                "corners out of order in {self:?}"
            )));
        }
        if self.area() < MIN_AREA {
            return Err(Error::InvalidBox(format!(
                "area below {MIN_AREA} in {self:?}"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, other: &BoxXyxy) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub fn within(&self, size: ImageSize) -> bool {
        let t = BOUNDS_TOLERANCE;
        self.x1 >= -t
            && self.y1 >= -t
            && self.x2 <= size.width as f64 + t
            && self.y2 <= size.height as f64 + t
    }

    /// Clamps each coordinate to the image frame. Returns the clamped box and
    /// whether any coordinate moved; `None` if nothing of the box remains.
    pub fn clamp_to(&self, size: ImageSize) -> Option<(BoxXyxy, bool)> {
        let (w, h) = (size.width as f64, size.height as f64);
        let c = BoxXyxy {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
        };
        let moved = c != *self;
        c.validate().ok().map(|_| (c, moved))
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl From<BoxXyxy> for [f64; 4] {
    fn from(b: BoxXyxy) -> Self {
        b.to_array()
    }
}

impl TryFrom<[f64; 4]> for BoxXyxy {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoxXyxy::new(v[0], v[1], v[2], v[3])
    }
}

/// Center-form box in fractions of the image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxNorm {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxNorm {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.cx, self.cy, self.w, self.h]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0 && *v <= 1.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidBox(format!(
                "normalized box outside (0, 1]: {self:?}"
            )))
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    /// Corner form in unit coordinates, without validation (used by the loss).
    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }
}

fn overlap_terms(a: &BoxXyxy, b: &BoxXyxy) -> Result<(f64, f64)> {
    a.validate()?;
    b.validate()?;
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    Ok((inter, union))
}

/// Intersection over union of two valid boxes.
pub fn iou(a: &BoxXyxy, b: &BoxXyxy) -> Result<f64> {
    let (inter, union) = overlap_terms(a, b)?;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Generalized IoU: IoU minus the empty fraction of the smallest enclosing box.
pub fn giou(a: &BoxXyxy, b: &BoxXyxy) -> Result<f64> {
    let (inter, union) = overlap_terms(a, b)?;
    let ew = a.x2.max(b.x2) - a.x1.min(b.x1);
    let eh = a.y2.max(b.y2) - a.y1.min(b.y1);
    let enclosing = ew * eh;
    let iou = (inter / union).clamp(0.0, 1.0);
    Ok(iou - (enclosing - union) / enclosing)
}

/// Converts a pixel box to normalized center form. Coordinates overshooting
/// the image by at most [`BOUNDS_TOLERANCE`] are clamped.
pub fn to_norm(b: &BoxXyxy, size: ImageSize) -> Result<BoxNorm> {
    b.validate()?;
    if !b.within(size) {
        return Err(Error::InvalidBox(format!(
            "{b:?} lies outside a {}x{} image",
            size.width, size.height
        )));
    }
    let (w, h) = (size.width as f64, size.height as f64);
    let x1 = b.x1.clamp(0.0, w);
    let y1 = b.y1.clamp(0.0, h);
    let x2 = b.x2.clamp(0.0, w);
    let y2 = b.y2.clamp(0.0, h);
    BoxNorm::new(
        (x1 + x2) / 2.0 / w,
        (y1 + y2) / 2.0 / h,
        (x2 - x1) / w,
        (y2 - y1) / h,
    )
}

/// Converts a normalized box back to pixels. The result may extend past the
/// image when the normalized box does; callers clamp where needed.
pub fn to_xyxy(b: &BoxNorm, size: ImageSize) -> Result<BoxXyxy> {
    b.validate()?;
    let (w, h) = (size.width as f64, size.height as f64);
    BoxXyxy::new(
        (b.cx - b.w / 2.0) * w,
        (b.cy - b.h / 2.0) * h,
        (b.cx + b.w / 2.0) * w,
        (b.cy + b.h / 2.0) * h,
    )
}

/// Aspect-preserving resize into a square canvas, padded at the bottom/right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Letterbox {
    pub scale: f64,
    /// Padding to the right of the content, in target pixels.
    pub pad_x: f64,
    /// Padding below the content, in target pixels.
    pub pad_y: f64,
    pub source: ImageSize,
    pub target: u32,
}

pub fn letterbox(source: ImageSize, target: u32) -> Result<Letterbox> {
    if source.width == 0 || source.height == 0 || target == 0 {
        return Err(Error::InvalidInput(format!(
            "letterbox needs positive sizes, got {}x{} -> {target}",
            source.width, source.height
        )));
    }
    let scale = target as f64 / source.max_side() as f64;
    let (t, m) = (target as f64, source.max_side() as f64);
    Ok(Letterbox {
        scale,
        pad_x: (m - source.width as f64) * t / m,
        pad_y: (m - source.height as f64) * t / m,
        source,
        target,
    })
}

impl Letterbox {
    /// Content size in target pixels, rounded to whole pixels for resampling.
    pub fn content_size(&self) -> ImageSize {
        let w = ((self.source.width as f64 * self.scale).round() as u32).clamp(1, self.target);
        let h = ((self.source.height as f64 * self.scale).round() as u32).clamp(1, self.target);
        ImageSize {
            width: w,
            height: h,
        }
    }

    pub fn target_size(&self) -> ImageSize {
        ImageSize {
            width: self.target,
            height: self.target,
        }
    }

    pub fn apply(&self, b: &BoxXyxy) -> Result<BoxXyxy> {
        let s = self.scale;
        BoxXyxy::new(b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s)
    }

    pub fn invert(&self, b: &BoxXyxy) -> Result<BoxXyxy> {
        // Divide by the exact rational scale to keep round trips tight.
        let m = self.source.max_side() as f64;
        let t = self.target as f64;
        let f = |v: f64| v * m / t;
        BoxXyxy::new(f(b.x1), f(b.y1), f(b.x2), f(b.y2))
    }
}

/// A predicted box mapped back to source pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Corners before clamping; may reach into the padding.
    pub raw: [f64; 4],
    /// Corners clamped to the source image; may have zero area.
    pub clamped: [f64; 4],
    pub was_clamped: bool,
}

impl Projection {
    /// The clamped box, or `None` if clamping left no area.
    pub fn clamped_box(&self) -> Option<BoxXyxy> {
        let [x1, y1, x2, y2] = self.clamped;
        BoxXyxy::new(x1, y1, x2, y2).ok()
    }

    /// IoU of the clamped box with `truth`; zero if nothing of the
    /// prediction remains inside the image.
    pub fn iou_with(&self, truth: &BoxXyxy) -> Result<f64> {
        match self.clamped_box() {
            Some(b) => iou(&b, truth),
            None => Ok(0.0),
        }
    }
}

impl Letterbox {
    /// Maps a normalized prediction in the letterboxed frame to source
    /// pixels and clamps it to the image. Never fails.
    pub fn project(&self, pred: &BoxNorm) -> Projection {
        let t = self.target as f64;
        let m = self.source.max_side() as f64;
        let raw = pred.corners().map(|c| c * t * m / t);
        let (w, h) = (self.source.width as f64, self.source.height as f64);
        let clamped = [
            raw[0].clamp(0.0, w),
            raw[1].clamp(0.0, h),
            raw[2].clamp(0.0, w),
            raw[3].clamp(0.0, h),
        ];
        Projection {
            raw,
            clamped,
            was_clamped: clamped != raw,
        }
    }
}
