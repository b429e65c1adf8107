//! Planar geometry used by run summaries.

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull in counter-clockwise order (monotone chain). Collinear
/// points on the boundary are dropped; degenerate inputs give one or two
/// vertices.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Distance from `p` to the segment `[a, b]`.
pub fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let s = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    (p[0] - a[0] - s * dx).hypot(p[1] - a[1] - s * dy)
}

/// Euclidean distance from `p` to the convex hull of `points`; zero inside.
pub fn hull_distance(p: [f64; 2], points: &[[f64; 2]]) -> f64 {
    let hull = convex_hull(points);
    match hull.len() {
        0 => f64::INFINITY,
        1 => (p[0] - hull[0][0]).hypot(p[1] - hull[0][1]),
        2 => segment_distance(p, hull[0], hull[1]),
        k => {
            let inside = (0..k).all(|i| cross(hull[i], hull[(i + 1) % k], p) >= 0.0);
            if inside {
                return 0.0;
            }
            (0..k)
                .map(|i| segment_distance(p, hull[i], hull[(i + 1) % k]))
                .fold(f64::INFINITY, f64::min)
        }
    }
}

/// Largest distance from any point to the centroid.
pub fn spread(points: &[Vec<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let dim = points[0].len();
    let c: Vec<f64> = (0..dim)
        .map(|k| points.iter().map(|p| p[k]).sum::<f64>() / points.len() as f64)
        .collect();
    points
        .iter()
        .map(|p| p.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Inside some triangle of input points, or else the nearest point lies
    /// on a segment between two input points.
    fn brute_hull_distance(p: [f64; 2], pts: &[[f64; 2]]) -> f64 {
        let n = pts.len();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let (a, b, c) = (pts[i], pts[j], pts[k]);
                    let area = cross(a, b, c);
                    if area.abs() < 1e-12 {
                        continue;
                    }
                    let l1 = cross(p, b, c) / area;
                    let l2 = cross(a, p, c) / area;
                    let l3 = 1.0 - l1 - l2;
                    if l1 >= 0.0 && l2 >= 0.0 && l3 >= 0.0 {
                        return 0.0;
                    }
                }
            }
        }
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                best = best.min(segment_distance(p, pts[i], pts[j]));
            }
        }
        best
    }

    #[test]
    fn unit_square() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        assert_eq!(convex_hull(&sq).len(), 4);
        assert_eq!(hull_distance([0.5, 0.2], &sq), 0.0);
        assert_eq!(hull_distance([2.0, 0.5], &sq), 1.0);
        assert!((hull_distance([2.0, 2.0], &sq) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_hulls() {
        assert_eq!(hull_distance([3.0, 4.0], &[[0.0, 0.0]]), 5.0);
        assert_eq!(hull_distance([1.0, 1.0], &[[0.0, 0.0], [2.0, 0.0], [1.0, 0.0]]), 1.0);
    }

    #[test]
    fn spread_of_a_pair() {
        assert_eq!(spread(&[vec![0.0, 0.0], vec![2.0, 0.0]]), 1.0);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            pts in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..8),
            p in (-8.0..8.0f64, -8.0..8.0f64),
        ) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let p = [p.0, p.1];
            let a = hull_distance(p, &pts);
            let b = brute_hull_distance(p, &pts);
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
