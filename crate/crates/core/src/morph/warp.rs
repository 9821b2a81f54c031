use super::triangulate::{signed_area, Triangulation};
use crate::image::{GrayImage, Point};
use crate::{Error, Result};

/// `p -> (m0 x + m1 y + m2, m3 x + m4 y + m5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    m: [f64; 6],
}

impl AffineMap {
    /// The unique affine map taking `src[k]` to `dst[k]` for k = 0, 1, 2.
    pub fn from_triangles(src: [Point; 3], dst: [Point; 3]) -> Result<Self> {
        check_triangle(src)?;
        let (s0, s1, s2) = (src[0], src[1], src[2]);
        let (a, b) = (s1.x - s0.x, s2.x - s0.x);
        let (c, d) = (s1.y - s0.y, s2.y - s0.y);
        let det = a * d - b * c;
        // Inverse of the source edge matrix.
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        let (e, f) = (dst[1].x - dst[0].x, dst[2].x - dst[0].x);
        let (g, h) = (dst[1].y - dst[0].y, dst[2].y - dst[0].y);
        let m0 = e * ia + f * ic;
        let m1 = e * ib + f * id;
        let m3 = g * ia + h * ic;
        let m4 = g * ib + h * id;
        let m2 = dst[0].x - m0 * s0.x - m1 * s0.y;
        let m5 = dst[0].y - m3 * s0.x - m4 * s0.y;
        Ok(AffineMap {
            m: [m0, m1, m2, m3, m4, m5],
        })
    }

    pub fn apply(&self, p: Point) -> Point {
        let m = &self.m;
        Point::new(m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5])
    }
}

fn check_triangle(tri: [Point; 3]) -> Result<()> {
    let scale = tri.iter().flat_map(|p| [p.x.abs(), p.y.abs()]).fold(1.0, f64::max);
    if signed_area(tri).abs() <= 1e-12 * scale * scale {
        return Err(Error::DegenerateGeometry(format!("degenerate triangle {tri:?}")));
    }
    Ok(())
}

/// Destination image plus per-pixel bookkeeping for a piecewise warp.
#[derive(Debug, Clone)]
pub struct WarpAccumulator {
    pub image: GrayImage,
    /// Number of times each pixel was written (0 or 1).
    pub writes: Vec<u32>,
    /// Number of triangles whose closed region contains each pixel centre.
    pub claims: Vec<u32>,
}

impl WarpAccumulator {
    pub fn new(width: usize, height: usize) -> Self {
        WarpAccumulator {
            image: GrayImage::new(width, height),
            writes: vec![0; width * height],
            claims: vec![0; width * height],
        }
    }

    pub fn unwritten(&self) -> usize {
        self.writes.iter().filter(|&&w| w == 0).count()
    }
}

/// Warps the part of `src` under `src_tri` onto `dst_tri`.
///
/// Every destination pixel centre inside the closed triangle `dst_tri` is
/// inverse-mapped into `src` and bilinearly sampled. Pixels that an earlier
/// triangle already wrote are left alone, so warping triangles in index order
/// assigns shared-edge pixels to the lowest-index triangle. Returns the number
/// of pixels written.
pub fn warp_affine_triangle(
    src: &GrayImage,
    src_tri: [Point; 3],
    dst_tri: [Point; 3],
    acc: &mut WarpAccumulator,
) -> Result<usize> {
    check_triangle(src_tri)?;
    check_triangle(dst_tri)?;
    let inverse = AffineMap::from_triangles(dst_tri, src_tri)?;
    let (w, h) = (acc.image.width(), acc.image.height());
    let min_x = dst_tri.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let max_x = dst_tri.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = dst_tri.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_y = dst_tri.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let x0 = (min_x - 1e-9).ceil().max(0.0) as usize;
    let y0 = (min_y - 1e-9).ceil().max(0.0) as usize;
    let x1 = ((max_x + 1e-9).floor().min((w - 1) as f64)).max(-1.0);
    let y1 = ((max_y + 1e-9).floor().min((h - 1) as f64)).max(-1.0);
    if x1 < 0.0 || y1 < 0.0 {
        return Ok(0);
    }
    let (x1, y1) = (x1 as usize, y1 as usize);
    let area = signed_area(dst_tri);
    let mut written = 0;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = Point::new(x as f64, y as f64);
            if !inside(dst_tri, area, p) {
                continue;
            }
            let idx = y * w + x;
            acc.claims[idx] += 1;
            if acc.writes[idx] == 0 {
                let q = inverse.apply(p);
                acc.image.set(x, y, src.sample_bilinear(q.x, q.y));
                acc.writes[idx] = 1;
                written += 1;
            }
        }
    }
    Ok(written)
}

fn inside([a, b, c]: [Point; 3], area: f64, p: Point) -> bool {
    let l0 = signed_area([p, b, c]) / area;
    let l1 = signed_area([a, p, c]) / area;
    let l2 = signed_area([a, b, p]) / area;
    const TOL: f64 = -1e-9;
    l0 >= TOL && l1 >= TOL && l2 >= TOL
}

/// Piecewise-affine warp of `src` from geometry `src_pts` onto `dst_pts`.
pub fn warp_image(
    src: &GrayImage,
    src_pts: &[Point],
    dst_pts: &[Point],
    triangulation: &Triangulation,
) -> Result<WarpAccumulator> {
    if src_pts.len() != dst_pts.len() {
        return Err(Error::Topology(src_pts.len(), dst_pts.len()));
    }
    let mut acc = WarpAccumulator::new(src.width(), src.height());
    for k in 0..triangulation.len() {
        warp_affine_triangle(
            src,
            triangulation.corners(src_pts, k),
            triangulation.corners(dst_pts, k),
            &mut acc,
        )?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> GrayImage {
        let data = (0..w * h)
            .map(|i| ((i % w) as f64 * 0.03 + (i / w) as f64 * 0.02) % 1.0)
            .collect();
        GrayImage::from_vec(w, h, data).unwrap()
    }

    #[test]
    fn affine_reproduces_its_anchor_points() {
        let src = [Point::new(1.0, 2.0), Point::new(7.5, 3.0), Point::new(2.0, 9.0)];
        let dst = [Point::new(0.3, 0.1), Point::new(5.0, 6.0), Point::new(-2.0, 4.0)];
        let m = AffineMap::from_triangles(src, dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            let q = m.apply(*s);
            assert!((q.x - d.x).abs() < 1e-12 && (q.y - d.y).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_warp_copies_region() {
        let src = ramp(20, 20);
        let tri = [Point::new(2.0, 2.0), Point::new(17.0, 3.0), Point::new(5.0, 16.0)];
        let mut acc = WarpAccumulator::new(20, 20);
        let n = warp_affine_triangle(&src, tri, tri, &mut acc).unwrap();
        assert!(n > 0);
        for y in 0..20 {
            for x in 0..20 {
                if acc.writes[y * 20 + x] == 1 {
                    assert!((acc.image.get(x, y) - src.get(x, y)).abs() <= 1e-12);
                } else {
                    assert_eq!(acc.image.get(x, y), 0.0);
                }
            }
        }
    }

    #[test]
    fn translated_triangle_shifts_pixels() {
        let src = ramp(24, 24);
        let s = [Point::new(2.0, 2.0), Point::new(12.0, 2.0), Point::new(2.0, 14.0)];
        let d = s.map(|p| Point::new(p.x + 5.0, p.y));
        let mut acc = WarpAccumulator::new(24, 24);
        warp_affine_triangle(&src, s, d, &mut acc).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                if acc.writes[y * 24 + x] == 1 {
                    assert!((acc.image.get(x, y) - src.get(x - 5, y)).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn degenerate_triangles_rejected() {
        let src = ramp(8, 8);
        let ok = [Point::new(0.0, 0.0), Point::new(5.0, 0.0), Point::new(0.0, 5.0)];
        let flat = [Point::new(0.0, 0.0), Point::new(2.0, 2.0), Point::new(4.0, 4.0)];
        let mut acc = WarpAccumulator::new(8, 8);
        assert!(matches!(
            warp_affine_triangle(&src, ok, flat, &mut acc),
            Err(Error::DegenerateGeometry(_))
        ));
        assert!(warp_affine_triangle(&src, flat, ok, &mut acc).is_err());
    }
}
