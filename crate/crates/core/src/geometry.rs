//! Bounding boxes in the (center, log area-ratio, log aspect-ratio)
//! parameterization, plus IOU and normalized offset distance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate bounding box: {0}")]
    DegenerateBox(String),
    #[error("invalid scene dimensions {width} x {height}")]
    InvalidDims { width: f64, height: f64 },
}

/// Image extent in abstract units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneDims {
    width: f64,
    height: f64,
}

impl SceneDims {
    pub fn new(width: f64, height: f64) -> Result<Self, GeometryError> {
        if width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0 {
            Ok(Self { width, height })
        } else {
            Err(GeometryError::InvalidDims { width, height })
        }
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, GeometryError> {
        Self::new(self.width * factor, self.height * factor)
    }
}

/// Box size as `(log area-ratio, log aspect-ratio)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSize {
    pub log_area_ratio: f64,
    pub log_aspect_ratio: f64,
}

impl BoxSize {
    pub fn new(log_area_ratio: f64, log_aspect_ratio: f64) -> Self {
        Self {
            log_area_ratio,
            log_aspect_ratio,
        }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.log_area_ratio, self.log_aspect_ratio]
    }
}

/// Axis-aligned box. The center is in normalized image coordinates and may
/// lie outside `[0, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BoundingBox {
    center: [f64; 2],
    size: BoxSize,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    cx: f64,
    cy: f64,
    log_area_ratio: f64,
    log_aspect_ratio: f64,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = GeometryError;

    fn try_from(r: RawBox) -> Result<Self, Self::Error> {
        BoundingBox::new([r.cx, r.cy], BoxSize::new(r.log_area_ratio, r.log_aspect_ratio))
    }
}

impl From<BoundingBox> for RawBox {
    fn from(b: BoundingBox) -> Self {
        RawBox {
            cx: b.center[0],
            cy: b.center[1],
            log_area_ratio: b.size.log_area_ratio,
            log_aspect_ratio: b.size.log_aspect_ratio,
        }
    }
}

/// Corner form `(x_min, y_min, x_max, y_max)` in scene units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Corners {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &Corners) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &Corners) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }
}

impl BoundingBox {
    pub fn new(center: [f64; 2], size: BoxSize) -> Result<Self, GeometryError> {
        if !center.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::DegenerateBox(format!(
                "non-finite center {center:?}"
            )));
        }
        let area = size.log_area_ratio.exp();
        let aspect = size.log_aspect_ratio.exp();
        let w = (area * aspect).sqrt();
        let h = (area / aspect).sqrt();
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(GeometryError::DegenerateBox(format!(
                "size {size:?} does not reconstruct to a positive finite extent"
            )));
        }
        Ok(Self { center, size })
    }

    pub fn center(&self) -> [f64; 2] {
        self.center
    }

    pub fn size(&self) -> BoxSize {
        self.size
    }

    pub fn with_center(&self, center: [f64; 2]) -> Result<Self, GeometryError> {
        Self::new(center, self.size)
    }

    pub fn with_size(&self, size: BoxSize) -> Result<Self, GeometryError> {
        Self::new(self.center, size)
    }

    /// Whether the center lies inside the closed unit square.
    pub fn center_in_image(&self) -> bool {
        self.center.iter().all(|c| (0.0..=1.0).contains(c))
    }

    /// Width and height in scene units.
    pub fn extent(&self, dims: SceneDims) -> (f64, f64) {
        let area = self.size.log_area_ratio.exp() * dims.area();
        let aspect = self.size.log_aspect_ratio.exp();
        ((area * aspect).sqrt(), (area / aspect).sqrt())
    }

    pub fn to_corner_form(&self, dims: SceneDims) -> Corners {
        let (w, h) = self.extent(dims);
        let cx = self.center[0] * dims.width();
        let cy = self.center[1] * dims.height();
        Corners::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn from_corner_form(corners: Corners, dims: SceneDims) -> Result<Self, GeometryError> {
        let w = corners.width();
        let h = corners.height();
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(GeometryError::DegenerateBox(format!(
                "corner form {corners:?} has non-positive extent"
            )));
        }
        let cx = 0.5 * (corners.x_min + corners.x_max) / dims.width();
        let cy = 0.5 * (corners.y_min + corners.y_max) / dims.height();
        let size = BoxSize::new((w * h / dims.area()).ln(), (w / h).ln());
        Self::new([cx, cy], size)
    }
}

/// Intersection over union in scene units.
pub fn iou(a: &BoundingBox, b: &BoundingBox, dims: SceneDims) -> f64 {
    if a == b {
        return 1.0;
    }
    a.to_corner_form(dims).iou(&b.to_corner_form(dims))
}

/// Center distance divided by the square root of the image area.
pub fn normalized_offset(a: &BoundingBox, b: &BoundingBox, dims: SceneDims) -> f64 {
    let dx = (a.center[0] - b.center[0]) * dims.width();
    let dy = (a.center[1] - b.center[1]) * dims.height();
    dx.hypot(dy) / dims.area().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextObject {
    pub label: String,
    pub bbox: BoundingBox,
}

/// A synthetic image: dimensions, ground-truth target and labeled context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub dims: SceneDims,
    pub target: BoundingBox,
    pub context: Vec<ContextObject>,
}

impl Scene {
    pub fn context_labels(&self) -> Vec<&str> {
        self.context.iter().map(|c| c.label.as_str()).collect()
    }

    pub fn iou_with_target(&self, proposal: &BoundingBox) -> f64 {
        iou(proposal, &self.target, self.dims)
    }

    pub fn offset_to_target(&self, proposal: &BoundingBox) -> f64 {
        normalized_offset(proposal, &self.target, self.dims)
    }
}
