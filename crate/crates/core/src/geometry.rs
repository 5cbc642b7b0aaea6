//! Bounding-box arithmetic on normalized image coordinates.
//!
//! Boxes live in `[0, 1]²` with `x1 < x2` and `y1 < y2`. Overlap uses open
//! intervals, so boxes that only share an edge or a corner have IoU 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Heights below this are treated as zero when forming the aspect ratio.
pub const ASPECT_EPS: f64 = f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let coords = [x1, y1, x2, y2];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("non-finite box coordinate in {coords:?}")));
        }
        if coords.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(Error::invalid(format!("box {coords:?} leaves the unit square")));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(Error::invalid(format!("degenerate box {coords:?}")));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Normalizes a pixel-space box by the image size.
    pub fn from_pixels(b: [f64; 4], width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::invalid(format!("image size {width}x{height} must be positive")));
        }
        let [x1, y1, x2, y2] = b;
        if !(0.0 <= x1 && x1 < x2 && x2 <= width && 0.0 <= y1 && y1 < y2 && y2 <= height) {
            return Err(Error::invalid(format!("pixel box {b:?} is degenerate or outside a {width}x{height} image")));
        }
        Self::new(x1 / width, y1 / height, x2 / width, y2 / height)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
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

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Explicit 7-dim spatial feature of a proposal: corners, center and
/// width/height ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialDescriptor {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub cx: f64,
    pub cy: f64,
    pub aspect: f64,
}

impl SpatialDescriptor {
    pub const DIM: usize = 7;

    pub fn to_array(&self) -> [f64; 7] {
        [self.x1, self.y1, self.x2, self.y2, self.cx, self.cy, self.aspect]
    }
}

pub fn spatial_descriptor(b: &BoundingBox) -> Result<SpatialDescriptor> {
    let h = (b.y1 - b.y2).abs();
    if h < ASPECT_EPS {
        return Err(Error::invalid(format!("box height {h} too small for an aspect ratio")));
    }
    Ok(SpatialDescriptor {
        x1: b.x1,
        y1: b.y1,
        x2: b.x2,
        y2: b.y2,
        cx: (b.x1 + b.x2) / 2.0,
        cy: (b.y1 + b.y2) / 2.0,
        aspect: (b.x1 - b.x2).abs() / h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    /// Area oracle: count cell centers of a fine grid covered by a region.
    fn raster_area(pred: impl Fn(f64, f64) -> bool, n: usize) -> f64 {
        let step = 1.0 / n as f64;
        let mut hits = 0usize;
        for i in 0..n {
            for j in 0..n {
                let x = (i as f64 + 0.5) * step;
                let y = (j as f64 + 0.5) * step;
                if pred(x, y) {
                    hits += 1;
                }
            }
        }
        hits as f64 * step * step
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = bb(0.1, 0.2, 0.4, 0.9);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&bb(0.0, 0.0, 0.1, 0.1), &bb(0.5, 0.5, 0.6, 0.6)), 0.0);
    }

    #[test]
    fn iou_partial_overlap_matches_raster_oracle() {
        let a = bb(0.0, 0.0, 0.2, 0.2);
        let b = bb(0.1, 0.1, 0.3, 0.3);
        let inside = |r: &BoundingBox, x: f64, y: f64| x > r.x1 && x < r.x2 && y > r.y1 && y < r.y2;
        let inter = raster_area(|x, y| inside(&a, x, y) && inside(&b, x, y), 2000);
        let union = raster_area(|x, y| inside(&a, x, y) || inside(&b, x, y), 2000);
        assert_relative_eq!(inter, 0.01, epsilon = 1e-9);
        assert_relative_eq!(union, 0.07, epsilon = 1e-9);
        assert_relative_eq!(iou(&a, &b), inter / union, epsilon = 1e-12);
        assert_relative_eq!(iou(&a, &b), 1.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn touching_edges_do_not_overlap() {
        assert_eq!(iou(&bb(0.0, 0.0, 0.5, 0.5), &bb(0.5, 0.0, 1.0, 0.5)), 0.0);
        assert_eq!(iou(&bb(0.0, 0.0, 0.5, 0.5), &bb(0.5, 0.5, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BoundingBox::new(0.2, 0.2, 0.2, 0.4).is_err());
        assert!(BoundingBox::new(0.2, 0.4, 0.3, 0.4).is_err());
        assert!(BoundingBox::new(0.3, 0.2, 0.2, 0.4).is_err());
        assert!(BoundingBox::new(-0.1, 0.2, 0.2, 0.4).is_err());
        assert!(BoundingBox::new(0.1, 0.2, f64::NAN, 0.4).is_err());
    }

    #[test]
    fn pixel_normalization() {
        let b = BoundingBox::from_pixels([10.0, 10.0, 110.0, 110.0], 200.0, 200.0).unwrap();
        assert_eq!(b.as_array(), [0.05, 0.05, 0.55, 0.55]);
        assert!(BoundingBox::from_pixels([10.0, 10.0, 210.0, 110.0], 200.0, 200.0).is_err());
    }

    #[test]
    fn descriptor_examples() {
        let d = spatial_descriptor(&bb(0.2, 0.1, 0.6, 0.5)).unwrap().to_array();
        let want = [0.2, 0.1, 0.6, 0.5, 0.4, 0.3, 1.0];
        for (g, w) in d.iter().zip(want) {
            assert_relative_eq!(*g, w, epsilon = 1e-15);
        }
        let d = spatial_descriptor(&bb(0.0, 0.0, 1.0, 1.0)).unwrap().to_array();
        assert_eq!(d, [0.0, 0.0, 1.0, 1.0, 0.5, 0.5, 1.0]);
        let d = spatial_descriptor(&bb(0.1, 0.1, 0.5, 0.3)).unwrap().to_array();
        let want = [0.1, 0.1, 0.5, 0.3, 0.3, 0.2, 2.0];
        for (g, w) in d.iter().zip(want) {
            assert_relative_eq!(*g, w, epsilon = 1e-15);
        }
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..0.45f64, 0.0..0.45f64, 0.01..0.5f64, 0.01..0.5f64).prop_map(|(x, y, w, h)| bb(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        // Dyadic coordinates keep the shifted arithmetic exact.
        #[test]
        fn iou_translation_invariant(
            c in proptest::collection::vec(0u32..64, 4),
            w in proptest::collection::vec(1u32..64, 2),
            s in proptest::collection::vec(0u32..128, 2),
        ) {
            let q = |v: u32| v as f64 / 256.0;
            let a = bb(q(c[0]), q(c[1]), q(c[0] + w[0]), q(c[1] + w[1]));
            let b = bb(q(c[2]), q(c[3]), q(c[2] + w[1]), q(c[3] + w[0]));
            let (dx, dy) = (q(s[0]), q(s[1]));
            let shift = |r: &BoundingBox| bb(r.x1 + dx, r.y1 + dy, r.x2 + dx, r.y2 + dy);
            prop_assert_eq!(iou(&a, &b), iou(&shift(&a), &shift(&b)));
        }

        #[test]
        fn descriptor_center_is_midpoint(b in arb_box()) {
            let d = spatial_descriptor(&b).unwrap();
            prop_assert_eq!(d.cx, (b.x1() + b.x2()) / 2.0);
            prop_assert_eq!(d.cy, (b.y1() + b.y2()) / 2.0);
            prop_assert!(d.aspect > 0.0);
        }
    }
}
