use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::{Error, Result};

pub type Point = [f64; 2];

/// Horizontal mean of the three waist joints; the vertical axis (z) is ignored.
pub fn geometry_center(lw: Vec3, mw: Vec3, rw: Vec3) -> Point {
    [(lw[0] + mw[0] + rw[0]) / 3.0, (lw[1] + mw[1] + rw[1]) / 3.0]
}

/// Looks the waist joints up by name.
pub fn geometry_center_named(names: &[String], coords: &[Vec3]) -> Result<Point> {
    let get = |n: &str| {
        names
            .iter()
            .position(|x| x == n)
            .map(|i| coords[i])
            .ok_or_else(|| Error::contract(format!("joint {n} is missing")))
    };
    Ok(geometry_center(get("LW")?, get("MW")?, get("RW")?))
}

/// Subtracts the mean centre of the round.
pub fn normalize_trace(centers: &[Point]) -> Result<Vec<Point>> {
    if centers.is_empty() {
        return Err(Error::contract("cannot normalize an empty round"));
    }
    let n = centers.len() as f64;
    let mx = centers.iter().map(|c| c[0]).sum::<f64>() / n;
    let my = centers.iter().map(|c| c[1]).sum::<f64>() / n;
    Ok(centers.iter().map(|c| [c[0] - mx, c[1] - my]).collect())
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Absolute shoelace area.
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n).map(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        a[0] * b[1] - b[0] * a[1]
    })
    .sum();
    0.5 * twice.abs()
}

/// Counter-clockwise hull without collinear vertices, starting at the
/// lowest-x (then lowest-y) point.
pub fn convex_hull(points: &[Point]) -> Result<Vec<Point>> {
    let mut p: Vec<Point> = points.to_vec();
    if p.iter().any(|q| !q[0].is_finite() || !q[1].is_finite()) {
        return Err(Error::DegenerateGeometry("non-finite point".into()));
    }
    p.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    p.dedup();
    if p.len() < 3 {
        return Err(Error::DegenerateGeometry(format!("{} distinct points cannot enclose an area", p.len())));
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        return Err(Error::DegenerateGeometry("all points are collinear".into()));
    }
    Ok(hull)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BoundaryMode {
    Convex,
    /// `shrink` in `[0, 1]`; 0 gives the convex hull, larger values dig deeper.
    Concave { shrink: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Boundary {
    pub vertices: Vec<Point>,
    pub area: f64,
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn seg_dist(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let l2 = dx * dx + dy * dy;
    let t = if l2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / l2).clamp(0.0, 1.0) };
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Inside or on the boundary of triangle `abc`.
fn in_closed_triangle(p: Point, a: Point, b: Point, c: Point) -> bool {
    let (x, y, z) = (cross(a, b, p), cross(b, c, p), cross(c, a, p));
    (x >= 0.0 && y >= 0.0 && z >= 0.0) || (x <= 0.0 && y <= 0.0 && z <= 0.0)
}

/// Concave hull by digging: starting from the convex hull, an edge `(a, b)` is
/// replaced by `(a, p), (p, b)` through its nearest interior point `p` while
/// `|ab| · shrink > min(|ap|, |pb|)` and the polygon stays simple with every
/// point still enclosed.
pub fn concave_hull(points: &[Point], shrink: f64) -> Result<Vec<Point>> {
    if !(0.0..=1.0).contains(&shrink) {
        return Err(Error::contract(format!("shrink {shrink} outside [0, 1]")));
    }
    let mut poly = convex_hull(points)?;
    if shrink == 0.0 {
        return Ok(poly);
    }
    let mut rest: Vec<Point> = points.to_vec();
    rest.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    rest.dedup();
    // points lying on hull edges become vertices so that every edge can be dug
    let mut full = Vec::with_capacity(poly.len());
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        full.push(a);
        let mut on: Vec<Point> =
            rest.iter().copied().filter(|&p| p != a && p != b && cross(a, b, p) == 0.0 && seg_dist(p, a, b) == 0.0).collect();
        on.sort_by(|p, q| dist(a, *p).partial_cmp(&dist(a, *q)).expect("finite"));
        full.extend(on);
    }
    poly = full;
    rest.retain(|p| !poly.contains(p));
    let mut changed = true;
    while changed {
        changed = false;
        let mut i = 0;
        while i < poly.len() {
            let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
            let edge = dist(a, b);
            let best = rest
                .iter()
                .enumerate()
                .filter(|(_, &p)| cross(a, b, p) > 0.0)
                .map(|(k, &p)| (k, seg_dist(p, a, b)))
                .min_by(|x, y| x.1.partial_cmp(&y.1).expect("finite").then(x.0.cmp(&y.0)));
            if let Some((k, _)) = best {
                let p = rest[k];
                let n = poly.len();
                let simple = (0..n).all(|e| {
                    let (c, d) = (poly[e], poly[(e + 1) % n]);
                    e == i || (!segments_cross(a, p, c, d) && !segments_cross(p, b, c, d))
                });
                let empty = rest.iter().all(|&q| q == p || !in_closed_triangle(q, a, p, b));
                if edge * shrink > dist(a, p).min(dist(p, b)) && simple && empty {
                    poly.insert(i + 1, p);
                    rest.swap_remove(k);
                    changed = true;
                    continue;
                }
            }
            i += 1;
        }
    }
    Ok(poly)
}

pub fn workspace_boundary(centers: &[Point], mode: BoundaryMode) -> Result<Boundary> {
    let vertices = match mode {
        BoundaryMode::Convex => convex_hull(centers)?,
        BoundaryMode::Concave { shrink } => concave_hull(centers, shrink)?,
    };
    let area = polygon_area(&vertices);
    Ok(Boundary { vertices, area })
}

/// Even-odd rule; points exactly on an edge may fall either way.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

pub const MIN_JACCARD_RESOLUTION: usize = 256;

/// Cell grid over the joint bounding box of two polygons.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterGrid {
    pub min: Point,
    pub max: Point,
    pub resolution: usize,
}

impl RasterGrid {
    pub fn covering(a: &[Point], b: &[Point], resolution: usize) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in a.iter().chain(b) {
            for k in 0..2 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        RasterGrid { min, max, resolution }
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Point {
        let n = self.resolution as f64;
        [
            self.min[0] + (ix as f64 + 0.5) * (self.max[0] - self.min[0]) / n,
            self.min[1] + (iy as f64 + 0.5) * (self.max[1] - self.min[1]) / n,
        ]
    }

    /// Membership of both polygons per cell, row-major from the minimum corner.
    pub fn rasterize(&self, a: &[Point], b: &[Point]) -> Vec<(bool, bool)> {
        let r = self.resolution;
        let mut out = Vec::with_capacity(r * r);
        for iy in 0..r {
            for ix in 0..r {
                let c = self.cell_center(ix, iy);
                out.push((point_in_polygon(c, a), point_in_polygon(c, b)));
            }
        }
        out
    }
}

/// Rasterized intersection over union of two simple polygons.
pub fn jaccard(a: &[Point], b: &[Point], resolution: usize) -> Result<f64> {
    if resolution < MIN_JACCARD_RESOLUTION {
        return Err(Error::contract(format!("Jaccard resolution {resolution} is below {MIN_JACCARD_RESOLUTION}")));
    }
    if a.len() < 3 || b.len() < 3 {
        return Err(Error::DegenerateGeometry("Jaccard needs polygons with at least 3 vertices".into()));
    }
    let grid = RasterGrid::covering(a, b, resolution);
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in grid.rasterize(a, b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        log::warn!("Jaccard of two empty regions is defined as 0");
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}
