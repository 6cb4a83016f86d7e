//! Axis-aligned boxes in continuous pixel coordinates and the
//! center/log-size box parameterization used for regression targets.
//!
//! Coordinates follow image convention (x right, y down). Areas carry no
//! `+1` pixel term: a box `(0, 0, 10, 10)` has area 100.

use crate::error::{Error, Result};

/// Corner-form box `(x1, y1)`–`(x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Box of size `w`×`h` centered on `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn area(&self) -> f64 {
        area(self)
    }

    /// True when the box has strictly positive, finite width and height.
    pub fn is_proper(&self) -> bool {
        let w = self.width();
        let h = self.height();
        w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0
    }

    pub fn scale(&self, sx: f64, sy: f64) -> Self {
        Self::new(self.x1 * sx, self.y1 * sy, self.x2 * sx, self.y2 * sy)
    }
}

/// Regression parameters of a box relative to an anchor: center shifts in
/// units of anchor size and log-ratios of the sizes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoxDelta {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxDelta {
    pub const fn new(tx: f64, ty: f64, tw: f64, th: f64) -> Self {
        Self { tx, ty, tw, th }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Area of `b`, zero for degenerate boxes.
pub fn area(b: &BBox) -> f64 {
    let w = b.x2 - b.x1;
    let h = b.y2 - b.y1;
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

/// Intersection over union. Defined as 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    let inter = if iw <= 0.0 || ih <= 0.0 { 0.0 } else { iw * ih };
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// `out[i][j] = iou(rows[i], cols[j])`.
pub fn iou_matrix(rows: &[BBox], cols: &[BBox]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| cols.iter().map(|c| iou(r, c)).collect())
        .collect()
}

fn require_proper(b: &BBox, what: &str) -> Result<()> {
    if b.is_proper() {
        Ok(())
    } else {
        Err(Error::InvalidBox(format!("{what} {b:?} has no positive area")))
    }
}

/// Parameterize `gt` relative to `anchor`.
pub fn encode(anchor: &BBox, gt: &BBox) -> Result<BoxDelta> {
    require_proper(anchor, "anchor")?;
    require_proper(gt, "ground truth")?;
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let (gx, gy) = gt.center();
    Ok(BoxDelta {
        tx: (gx - ax) / aw,
        ty: (gy - ay) / ah,
        tw: (gt.width() / aw).ln(),
        th: (gt.height() / ah).ln(),
    })
}

/// Inverse of [`encode`].
pub fn decode(anchor: &BBox, d: &BoxDelta) -> Result<BBox> {
    require_proper(anchor, "anchor")?;
    if !d.is_finite() {
        return Err(Error::InvalidDelta(format!("{d:?} is not finite")));
    }
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    Ok(BBox::from_center(
        ax + d.tx * aw,
        ay + d.ty * ah,
        aw * d.tw.exp(),
        ah * d.th.exp(),
    ))
}

/// Clamp every coordinate into `[0, w] x [0, h]`.
pub fn clip_to_image(b: &BBox, w: f64, h: f64) -> BBox {
    BBox {
        x1: b.x1.clamp(0.0, w),
        y1: b.y1.clamp(0.0, h),
        x2: b.x2.clamp(0.0, w),
        y2: b.y2.clamp(0.0, h),
    }
}

/// Closed containment test; boxes touching the border count as inside.
pub fn inside_image(b: &BBox, w: f64, h: f64) -> bool {
    b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= w && b.y2 <= h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn area_examples() {
        assert_eq!(area(&BBox::new(0.0, 0.0, 10.0, 10.0)), 100.0);
        assert_eq!(area(&BBox::new(5.0, 5.0, 5.0, 9.0)), 0.0);
        assert_eq!(area(&BBox::new(0.0, 0.0, 32.0, 64.0)), 2048.0);
        assert_eq!(area(&BBox::new(3.0, 0.0, 1.0, 4.0)), 0.0);
    }

    #[test]
    fn iou_examples() {
        let b = BBox::new(3.0, 4.0, 9.0, 12.0);
        assert_eq!(iou(&b, &b), 1.0);
        assert_eq!(
            iou(&BBox::new(0.0, 0.0, 1.0, 1.0), &BBox::new(5.0, 5.0, 6.0, 6.0)),
            0.0
        );
        let v = iou(&BBox::new(0.0, 0.0, 10.0, 10.0), &BBox::new(5.0, 0.0, 15.0, 10.0));
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_zero_union() {
        let z = BBox::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&z, &z), 0.0);
    }

    #[test]
    fn iou_matrix_shapes() {
        let b = BBox::new(0.0, 0.0, 4.0, 4.0);
        assert_eq!(iou_matrix(&[b], &[b]), vec![vec![1.0]]);
        let m = iou_matrix(&[b, b], &[]);
        assert_eq!(m.len(), 2);
        assert!(m.iter().all(|r| r.is_empty()));
    }

    #[test]
    fn encode_examples() {
        let a = BBox::from_center(16.0, 16.0, 32.0, 32.0);
        assert_eq!(encode(&a, &a).unwrap(), BoxDelta::default());
        let gt = BBox::from_center(24.0, 16.0, 64.0, 32.0);
        let d = encode(&a, &gt).unwrap();
        assert!((d.tx - 0.25).abs() < 1e-15);
        assert_eq!(d.ty, 0.0);
        assert!((d.tw - 2f64.ln()).abs() < 1e-15);
        assert_eq!(d.th, 0.0);
    }

    #[test]
    fn encode_rejects_degenerate() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let flat = BBox::new(0.0, 0.0, 10.0, 0.0);
        assert!(matches!(encode(&flat, &a), Err(Error::InvalidBox(_))));
        assert!(matches!(encode(&a, &flat), Err(Error::InvalidBox(_))));
    }

    #[test]
    fn decode_examples() {
        let a = BBox::from_center(16.0, 16.0, 32.0, 32.0);
        assert_eq!(decode(&a, &BoxDelta::default()).unwrap(), a);
        let b = decode(&a, &BoxDelta::new(0.25, 0.0, 2f64.ln(), 0.0)).unwrap();
        let (cx, cy) = b.center();
        assert!((cx - 24.0).abs() < 1e-12 && (cy - 16.0).abs() < 1e-12);
        assert!((b.width() - 64.0).abs() < 1e-12 && (b.height() - 32.0).abs() < 1e-12);
        let bad = BoxDelta::new(f64::NAN, 0.0, 0.0, 0.0);
        assert!(matches!(decode(&a, &bad), Err(Error::InvalidDelta(_))));
    }

    #[test]
    fn clip_and_inside() {
        let inner = BBox::new(10.0, 10.0, 20.0, 20.0);
        assert_eq!(clip_to_image(&inner, 640.0, 480.0), inner);
        assert_eq!(
            clip_to_image(&BBox::new(-5.0, -5.0, 10.0, 10.0), 640.0, 480.0),
            BBox::new(0.0, 0.0, 10.0, 10.0)
        );
        let gone = clip_to_image(&BBox::new(700.0, 10.0, 720.0, 30.0), 640.0, 480.0);
        assert_eq!(area(&gone), 0.0);

        assert!(inside_image(&BBox::new(0.0, 0.0, 32.0, 32.0), 640.0, 480.0));
        assert!(!inside_image(&BBox::new(624.0, 0.0, 656.0, 32.0), 640.0, 480.0));
        assert!(inside_image(&BBox::new(608.0, 448.0, 640.0, 480.0), 640.0, 480.0));
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-100.0..700.0f64, -100.0..500.0f64, 0.5..300.0f64, 0.5..300.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn encode_decode_round_trip(a in arb_box(), g in arb_box()) {
            let d = encode(&a, &g).unwrap();
            let back = decode(&a, &d).unwrap();
            prop_assert!(close(back.x1, g.x1, 1e-9));
            prop_assert!(close(back.y1, g.y1, 1e-9));
            prop_assert!(close(back.x2, g.x2, 1e-9));
            prop_assert!(close(back.y2, g.y2, 1e-9));
        }

        #[test]
        fn decode_encode_round_trip(
            a in arb_box(),
            tx in -1.0..1.0f64, ty in -1.0..1.0f64, tw in -4.0..4.0f64, th in -4.0..4.0f64,
        ) {
            let d = BoxDelta::new(tx, ty, tw, th);
            let back = encode(&a, &decode(&a, &d).unwrap()).unwrap();
            for (x, y) in back.to_array().into_iter().zip(d.to_array()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn clip_idempotent(b in arb_box()) {
            let once = clip_to_image(&b, 640.0, 480.0);
            prop_assert_eq!(clip_to_image(&once, 640.0, 480.0), once);
        }

        #[test]
        fn iou_matrix_matches_scalar(
            rows in proptest::collection::vec(arb_box(), 0..6),
            cols in proptest::collection::vec(arb_box(), 0..6),
        ) {
            let m = iou_matrix(&rows, &cols);
            prop_assert_eq!(m.len(), rows.len());
            for (i, r) in rows.iter().enumerate() {
                for (j, c) in cols.iter().enumerate() {
                    prop_assert_eq!(m[i][j], iou(r, c));
                }
            }
        }
    }
}
