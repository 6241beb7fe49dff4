//! The 17 chest-radiograph location labels, their canonical boxes on a
//! frontal frame, binary masks and box overlap.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::Plane;

/// Tolerance for unit-square containment and mirror checks.
const GEOM_EPS: f64 = 1e-9;

/// Patient side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Right,
    Left,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Right => Side::Left,
            Side::Left => Side::Right,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Right => "right",
            Side::Left => "left",
        }
    }
}

macro_rules! location_labels {
    ($($variant:ident => $name:literal, $side:expr, $mirror:ident;)*) => {
        /// Anatomical location modifiers used to describe where a finding
        /// sits on a frontal chest radiograph.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum LocationLabel {
            $(#[serde(rename = $name)] $variant,)*
        }

        impl LocationLabel {
            pub const ALL: [LocationLabel; 17] = [$(LocationLabel::$variant,)*];

            pub fn name(self) -> &'static str {
                match self { $(LocationLabel::$variant => $name,)* }
            }

            pub fn side(self) -> Option<Side> {
                match self { $(LocationLabel::$variant => $side,)* }
            }

            /// The same structure on the other side; midline labels map to
            /// themselves.
            pub fn mirror(self) -> LocationLabel {
                match self { $(LocationLabel::$variant => LocationLabel::$mirror,)* }
            }
        }
    };
}

location_labels! {
    RightUpperLungZone => "right upper lung zone", Some(Side::Right), LeftUpperLungZone;
    RightMidLungZone => "right mid lung zone", Some(Side::Right), LeftMidLungZone;
    RightHilarStructures => "right hilar structures", Some(Side::Right), LeftHilarStructures;
    LeftUpperLungZone => "left upper lung zone", Some(Side::Left), RightUpperLungZone;
    LeftMidLungZone => "left mid lung zone", Some(Side::Left), RightMidLungZone;
    RightHemidiaphragm => "right hemidiaphragm", Some(Side::Right), LeftHemidiaphragm;
    RightLowerLungZone => "right lower lung zone", Some(Side::Right), LeftLowerLungZone;
    LeftHemidiaphragm => "left hemidiaphragm", Some(Side::Left), RightHemidiaphragm;
    LeftLowerLungZone => "left lower lung zone", Some(Side::Left), RightLowerLungZone;
    LeftHilarStructures => "left hilar structures", Some(Side::Left), RightHilarStructures;
    RightCardiophrenicAngle => "right cardiophrenic angle", Some(Side::Right), LeftCardiophrenicAngle;
    RightCardiacSilhouette => "right cardiac silhouette", Some(Side::Right), LeftCardiacSilhouette;
    LeftCardiophrenicAngle => "left cardiophrenic angle", Some(Side::Left), RightCardiophrenicAngle;
    LeftCardiacSilhouette => "left cardiac silhouette", Some(Side::Left), RightCardiacSilhouette;
    LeftCostophrenicAngle => "left costophrenic angle", Some(Side::Left), RightCostophrenicAngle;
    RightCostophrenicAngle => "right costophrenic angle", Some(Side::Right), LeftCostophrenicAngle;
    UpperMediastinum => "upper mediastinum", None, UpperMediastinum;
}

impl LocationLabel {
    pub fn from_name(name: &str) -> Result<LocationLabel> {
        let wanted = name.trim();
        LocationLabel::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| Error::UnknownLocation(String::from(wanted)))
    }

    /// The label for `side`, mirroring if needed. Midline labels are
    /// unchanged.
    pub fn on_side(self, side: Side) -> LocationLabel {
        match self.side() {
            Some(s) if s != side => self.mirror(),
            _ => self,
        }
    }

    /// Lowercase words of the label name.
    pub fn words(self) -> impl Iterator<Item = &'static str> {
        self.name().split(' ')
    }
}

impl core::fmt::Display for LocationLabel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Axis-aligned box in the unit square: top-left `(x, y)`, extent `(w, h)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct NormalizedBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl TryFrom<[f64; 4]> for NormalizedBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        NormalizedBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<NormalizedBox> for [f64; 4] {
    fn from(b: NormalizedBox) -> Self {
        b.to_array()
    }
}

impl NormalizedBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let finite = [x, y, w, h].iter().all(|v| v.is_finite());
        let ok = finite
            && x >= 0.0
            && y >= 0.0
            && w > 0.0
            && h > 0.0
            && x + w <= 1.0 + GEOM_EPS
            && y + h <= 1.0 + GEOM_EPS;
        if !ok {
            return Err(invalid!("invalid normalized box ({x}, {y}, {w}, {h})"));
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds from corner coordinates `[x0, x1) × [y0, y1)`.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// The whole unit square.
    pub fn unit() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            w: 1.0,
            h: 1.0,
        }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }

    /// True when `other` lies inside `self` (up to rounding).
    pub fn contains_box(&self, other: &NormalizedBox) -> bool {
        other.x >= self.x - GEOM_EPS
            && other.y >= self.y - GEOM_EPS
            && other.right() <= self.right() + GEOM_EPS
            && other.bottom() <= self.bottom() + GEOM_EPS
    }

    pub fn intersection_area(&self, other: &NormalizedBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Reflection about the vertical line `x = 0.5`.
    pub fn mirror_x(&self) -> NormalizedBox {
        NormalizedBox {
            x: (1.0 - self.x - self.w).max(0.0),
            ..*self
        }
    }

    /// Grows each side by `fraction` of the box's own width/height, clipped
    /// to the unit square.
    pub fn dilate(&self, fraction: f64) -> NormalizedBox {
        let dx = self.w * fraction;
        let dy = self.h * fraction;
        let x0 = (self.x - dx).max(0.0);
        let y0 = (self.y - dy).max(0.0);
        let x1 = (self.right() + dx).min(1.0);
        let y1 = (self.bottom() + dy).min(1.0);
        NormalizedBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    /// Smallest box covering both.
    pub fn cover(&self, other: &NormalizedBox) -> NormalizedBox {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = self.right().max(other.right());
        let y1 = self.bottom().max(other.bottom());
        NormalizedBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &NormalizedBox, b: &NormalizedBox) -> f64 {
    // Areas from corners, like the intersection, so iou(a, a) is exactly 1.
    let corner_area = |r: &NormalizedBox| (r.right() - r.x) * (r.bottom() - r.y);
    let inter = a.intersection_area(b);
    let union = corner_area(a) + corner_area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Arithmetic mean of per-pair IOU over `(predicted, truth)` pairs.
pub fn mean_iou(pairs: &[(NormalizedBox, NormalizedBox)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("mean_iou pairs"));
    }
    Ok(pairs.iter().map(|(p, t)| iou(p, t)).sum::<f64>() / pairs.len() as f64)
}

/// Binary raster, values 0.0 or 1.0.
pub type Mask = Plane;

/// Pixel is 1 iff its centre lies inside `b` (half-open on the far edges).
pub fn rasterize_mask(b: &NormalizedBox, height: usize, width: usize) -> Mask {
    let mut m = Mask::zeros(height, width);
    for row in 0..height {
        let cy = (row as f64 + 0.5) / height as f64;
        for col in 0..width {
            let cx = (col as f64 + 0.5) / width as f64;
            if b.contains_point(cx, cy) {
                m.data[row * width + col] = 1.0;
            }
        }
    }
    m
}

/// Location label → box table on a canonical frontal frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atlas {
    /// When true, the patient's right side is drawn on the image's left
    /// half (standard frontal presentation).
    pub patient_right_on_image_left: bool,
    boxes: BTreeMap<LocationLabel, NormalizedBox>,
}

impl Atlas {
    /// Validates the mirror invariant for every left/right pair present and
    /// that sided zones fall on the half implied by the convention flag.
    pub fn new(
        boxes: BTreeMap<LocationLabel, NormalizedBox>,
        patient_right_on_image_left: bool,
    ) -> Result<Self> {
        for (&label, b) in &boxes {
            let (cx, _) = b.center();
            if let Some(side) = label.side() {
                let on_image_left = cx < 0.5;
                let expected_left = (side == Side::Right) == patient_right_on_image_left;
                if on_image_left != expected_left {
                    return Err(invalid!(
                        "atlas box for `{}` is on the wrong half for the laterality convention",
                        label
                    ));
                }
            }
            if let Some(m) = boxes.get(&label.mirror()) {
                let r = b.mirror_x();
                let same = [r.x - m.x, r.y - m.y, r.w - m.w, r.h - m.h]
                    .iter()
                    .all(|d| d.abs() <= 1e-9);
                if !same {
                    return Err(invalid!(
                        "atlas boxes for `{}` and `{}` are not mirror images about x = 0.5",
                        label,
                        label.mirror()
                    ));
                }
            }
        }
        Ok(Self {
            patient_right_on_image_left,
            boxes,
        })
    }

    pub fn zone_box(&self, label: LocationLabel) -> Result<NormalizedBox> {
        self.boxes
            .get(&label)
            .copied()
            .ok_or_else(|| Error::UnknownLocation(format!("{label} (not in atlas)")))
    }

    /// Smallest box covering every member's zone box.
    pub fn union_box(&self, labels: &[LocationLabel]) -> Result<NormalizedBox> {
        let mut it = labels.iter();
        let first = it.next().ok_or(Error::Empty("union_box labels"))?;
        let mut acc = self.zone_box(*first)?;
        for &l in it {
            acc = acc.cover(&self.zone_box(l)?);
        }
        Ok(acc)
    }

    pub fn labels(&self) -> impl Iterator<Item = LocationLabel> + '_ {
        self.boxes.keys().copied()
    }

    pub fn entries(&self) -> &BTreeMap<LocationLabel, NormalizedBox> {
        &self.boxes
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}
