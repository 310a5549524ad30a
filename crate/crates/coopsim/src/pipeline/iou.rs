use super::DetBox;

type Pt = (f64, f64);

/// Counter-clockwise corners of a rotated box.
fn corners(b: &DetBox) -> [Pt; 4] {
    let (s, c) = b.yaw.sin_cos();
    let (hl, hw) = (b.length / 2.0, b.width / 2.0);
    let rot = |x: f64, y: f64| (b.cx + c * x - s * y, b.cy + s * x + c * y);
    [rot(hl, hw), rot(-hl, hw), rot(-hl, -hw), rot(hl, -hw)]
}

/// Signed area via the shoelace formula (positive for CCW).
fn polygon_area(pts: &[Pt]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..pts.len() {
        let (x1, y1) = pts[i];
        let (x2, y2) = pts[(i + 1) % pts.len()];
        acc += x1 * y2 - x2 * y1;
    }
    acc / 2.0
}

/// Clip a polygon against the half-plane left of the directed edge a -> b.
fn clip_edge(subject: &[Pt], a: Pt, b: Pt) -> Vec<Pt> {
    let inside = |p: Pt| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= 0.0;
    let intersect = |p: Pt, q: Pt| -> Pt {
        let (dx, dy) = (q.0 - p.0, q.1 - p.1);
        let (ex, ey) = (b.0 - a.0, b.1 - a.1);
        let denom = ex * dy - ey * dx;
        // Parallel edges only arise at grazing contact; the midpoint is a
        // stable choice there.
        if denom.abs() < 1e-12 {
            return ((p.0 + q.0) / 2.0, (p.1 + q.1) / 2.0);
        }
        let t = (ey * (p.0 - a.0) - ex * (p.1 - a.1)) / denom;
        (p.0 + t * dx, p.1 + t * dy)
    };

    let mut out = Vec::with_capacity(subject.len() + 2);
    for i in 0..subject.len() {
        let cur = subject[i];
        let prev = subject[(i + subject.len() - 1) % subject.len()];
        match (inside(prev), inside(cur)) {
            (true, true) => out.push(cur),
            (true, false) => out.push(intersect(prev, cur)),
            (false, true) => {
                out.push(intersect(prev, cur));
                out.push(cur);
            }
            (false, false) => {}
        }
    }
    out
}

/// Area of the intersection of two rotated boxes (convex polygon clipping).
pub fn intersection_area(a: &DetBox, b: &DetBox) -> f64 {
    let clip = corners(b);
    let mut poly: Vec<Pt> = corners(a).to_vec();
    for i in 0..4 {
        if poly.is_empty() {
            break;
        }
        poly = clip_edge(&poly, clip[i], clip[(i + 1) % 4]);
    }
    polygon_area(&poly).abs()
}

/// Rotated intersection-over-union; symmetric, in [0, 1], and 0 for
/// degenerate (zero-area) boxes.
pub fn rotated_iou(a: &DetBox, b: &DetBox) -> f64 {
    let area_a = a.area();
    let area_b = b.area();
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let inter = intersection_area(a, b);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxy(cx: f64, cy: f64, w: f64, l: f64, yaw: f64) -> DetBox {
        DetBox { cx, cy, width: w, length: l, yaw, score: 1.0 }
    }

    #[test]
    fn identical_boxes_have_iou_one() {
        let b = boxy(1.0, -2.0, 2.0, 4.5, 0.7);
        assert!((rotated_iou(&b, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_boxes_have_iou_zero() {
        let a = boxy(0.0, 0.0, 1.0, 1.0, 0.0);
        let b = boxy(10.0, 0.0, 1.0, 1.0, 0.8);
        assert_eq!(rotated_iou(&a, &b), 0.0);
    }

    #[test]
    fn unit_squares_offset_half() {
        let a = boxy(0.0, 0.0, 1.0, 1.0, 0.0);
        let b = boxy(0.5, 0.0, 1.0, 1.0, 0.0);
        // Intersection 0.5, union 1.5.
        assert!((rotated_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_box_gives_zero() {
        let a = boxy(0.0, 0.0, 0.0, 1.0, 0.0);
        let b = boxy(0.0, 0.0, 1.0, 1.0, 0.0);
        assert_eq!(rotated_iou(&a, &b), 0.0);
    }

    #[test]
    fn concentric_rotated_square_octagon_area() {
        // Unit square vs the same square rotated 45 degrees: the
        // intersection is a regular octagon of area 2*(sqrt(2)-1).
        let a = boxy(0.0, 0.0, 1.0, 1.0, 0.0);
        let b = boxy(0.0, 0.0, 1.0, 1.0, std::f64::consts::FRAC_PI_4);
        let inter = intersection_area(&a, &b);
        let known = 2.0 * (2.0f64.sqrt() - 1.0);
        assert!((inter - known).abs() < 1e-9, "inter {inter} vs {known}");
    }

    #[test]
    fn symmetry_within_1e9() {
        let mut rng = crate::rng::SimRng::new(31);
        for _ in 0..200 {
            let a = boxy(
                rng.range_f64(-3.0, 3.0),
                rng.range_f64(-3.0, 3.0),
                rng.range_f64(0.5, 3.0),
                rng.range_f64(0.5, 5.0),
                rng.range_f64(-3.1, 3.1),
            );
            let b = boxy(
                rng.range_f64(-3.0, 3.0),
                rng.range_f64(-3.0, 3.0),
                rng.range_f64(0.5, 3.0),
                rng.range_f64(0.5, 5.0),
                rng.range_f64(-3.1, 3.1),
            );
            let ab = rotated_iou(&a, &b);
            let ba = rotated_iou(&b, &a);
            assert!((ab - ba).abs() < 1e-9, "asymmetry {ab} vs {ba}");
            assert!((0.0..=1.0).contains(&ab));
        }
    }
}
