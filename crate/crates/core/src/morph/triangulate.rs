use spade::{DelaunayTriangulation, Point2, Triangulation as _};

use crate::image::Point;
use crate::{Error, Result};

/// Triangles as counter-clockwise index triples into a point list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triangulation {
    pub triangles: Vec<[usize; 3]>,
}

impl Triangulation {
    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, points: &[Point], k: usize) -> [Point; 3] {
        self.triangles[k].map(|i| points[i])
    }

    /// Total unsigned area of all triangles.
    pub fn area(&self, points: &[Point]) -> f64 {
        (0..self.len())
            .map(|k| signed_area(self.corners(points, k)).abs())
            .sum()
    }
}

pub fn signed_area([a, b, c]: [Point; 3]) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

/// The eight fixed border points (corners and edge midpoints) of a
/// `width x height` pixel grid.
pub fn border_points(width: usize, height: usize) -> [Point; 8] {
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    [
        Point::new(0.0, 0.0),
        Point::new(w, 0.0),
        Point::new(w, h),
        Point::new(0.0, h),
        Point::new(0.5 * w, 0.0),
        Point::new(w, 0.5 * h),
        Point::new(0.5 * w, h),
        Point::new(0.0, 0.5 * h),
    ]
}

/// Delaunay triangulation of `points`.
///
/// Triangles are listed in a canonical order (each triple rotated to start at
/// its smallest index, then sorted), so the result depends only on the input.
pub fn triangulate(points: &[Point]) -> Result<Triangulation> {
    if points.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    for (i, p) in points.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::DegenerateGeometry(format!("point {i} is not finite")));
        }
        if let Some(j) = points[..i].iter().position(|q| q.distance(*p) < 1e-9) {
            return Err(Error::DegenerateGeometry(format!("points {j} and {i} coincide")));
        }
    }
    let origin = points[0];
    let far = points
        .iter()
        .max_by(|a, b| a.distance(origin).total_cmp(&b.distance(origin)))
        .copied()
        .expect("non-empty");
    let spread = far.distance(origin);
    let collinear = points
        .iter()
        .all(|&p| signed_area([origin, far, p]).abs() <= 1e-12 * spread * spread);
    if collinear {
        return Err(Error::DegenerateGeometry("all points are collinear".into()));
    }

    let mut dt: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    for (i, p) in points.iter().enumerate() {
        let handle = dt
            .insert(Point2::new(p.x, p.y))
            .map_err(|e| Error::DegenerateGeometry(format!("point {i}: {e:?}")))?;
        if handle.index() != i {
            return Err(Error::DegenerateGeometry(format!("point {i} merged with another")));
        }
    }
    let mut triangles: Vec<[usize; 3]> = dt
        .inner_faces()
        .map(|f| {
            let v = f.vertices().map(|h| h.fix().index());
            let r = (0..3).min_by_key(|&k| v[k]).expect("three vertices");
            [v[r], v[(r + 1) % 3], v[(r + 2) % 3]]
        })
        .collect();
    triangles.sort_unstable();
    for t in &triangles {
        if signed_area(t.map(|i| points[i])).abs() < 1e-12 {
            return Err(Error::DegenerateGeometry(format!("zero-area triangle {t:?}")));
        }
    }
    Ok(Triangulation { triangles })
}
