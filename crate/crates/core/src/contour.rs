//! Marching squares on the periodic grid.
//!
//! Every cell contributes segments between crossing points on its edges; since
//! each crossing edge is shared by exactly two cells the segments chain into
//! closed loops. Loops are returned in unwrapped coordinates so that a curve
//! winding around the torus keeps its true length.

use std::collections::HashMap;

use serde::Serialize;

use crate::grid::TorusGrid;

#[derive(Debug, Clone, Serialize)]
pub struct Polyline {
    /// Unwrapped vertex coordinates; reduce mod 1 for plotting on the torus.
    pub points: Vec<[f64; 2]>,
    pub length: f64,
}

impl Polyline {
    pub fn centroid(&self) -> [f64; 2] {
        let k = self.points.len().max(1) as f64;
        let (sx, sy) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
        [sx / k, sy / k]
    }

    /// Mean distance of the vertices to the centroid and the largest relative deviation from it.
    pub fn radial_spread(&self) -> (f64, f64) {
        let c = self.centroid();
        let radii: Vec<f64> = self
            .points
            .iter()
            .map(|p| (p[0] - c[0]).hypot(p[1] - c[1]))
            .collect();
        let mean = radii.iter().sum::<f64>() / radii.len().max(1) as f64;
        let dev = radii
            .iter()
            .map(|r| (r - mean).abs() / mean)
            .fold(0.0, f64::max);
        (mean, dev)
    }

    /// Area enclosed by the loop (shoelace); only meaningful for contractible loops.
    pub fn enclosed_area(&self) -> f64 {
        let n = self.points.len();
        let mut s = 0.0;
        for k in 0..n {
            let p = self.points[k];
            let q = self.points[(k + 1) % n];
            s += p[0] * q[1] - q[0] * p[1];
        }
        0.5 * s.abs()
    }
}

const CAP: f64 = 1e30;

/// Level curves `field = level` of a periodic grid function.
///
/// Nodes with `field > level` count as inside. Infinite values are treated as
/// very large finite ones.
pub fn periodic_contours(grid: &TorusGrid, field: &[f64], level: f64) -> Vec<Polyline> {
    let n = grid.n();
    let val = |i: usize, j: usize| field[grid.idx(i % n, j % n)].clamp(-CAP, CAP);
    let inside = |i: usize, j: usize| val(i, j) > level;
    // crossing fraction along the edge from (i, j) in direction `dir` (0 = +x, 1 = +y)
    let frac = |i: usize, j: usize, dir: usize| {
        let a = val(i, j);
        let b = if dir == 0 { val(i + 1, j) } else { val(i, j + 1) };
        if a == b {
            0.5
        } else {
            ((level - a) / (b - a)).clamp(0.0, 1.0)
        }
    };

    // segment = (edge id a, point a, edge id b, point b) in cell-local unwrapped coordinates
    let mut segments: Vec<(usize, [f64; 2], usize, [f64; 2])> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let corners = [
                inside(i, j),
                inside(i + 1, j),
                inside(i + 1, j + 1),
                inside(i, j + 1),
            ];
            let case = corners
                .iter()
                .enumerate()
                .fold(0usize, |acc, (b, &c)| acc | ((c as usize) << b));
            if case == 0 || case == 15 {
                continue;
            }
            let (fi, fj) = (i as f64, j as f64);
            // local edges: 0 bottom (y = j), 1 right (x = i+1), 2 top (y = j+1), 3 left (x = i)
            let edge = |e: usize| -> (usize, [f64; 2]) {
                match e {
                    0 => (2 * grid.idx(i, j), [fi + frac(i, j, 0), fj]),
                    1 => (2 * grid.idx((i + 1) % n, j) + 1, [fi + 1.0, fj + frac(i + 1, j, 1)]),
                    2 => (2 * grid.idx(i, (j + 1) % n), [fi + frac(i, j + 1, 0), fj + 1.0]),
                    _ => (2 * grid.idx(i, j) + 1, [fi, fj + frac(i, j, 1)]),
                }
            };
            let pairs: &[(usize, usize)] = match case {
                1 | 14 => &[(0, 3)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(1, 3)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(2, 3)],
                5 | 10 => {
                    let center = 0.25 * (val(i, j) + val(i + 1, j) + val(i + 1, j + 1) + val(i, j + 1));
                    let center_in = center > level;
                    // separate the corners that are not connected through the center
                    if (case == 5) == center_in {
                        &[(0, 1), (2, 3)]
                    } else {
                        &[(0, 3), (1, 2)]
                    }
                }
                _ => unreachable!(),
            };
            for &(a, b) in pairs {
                let (ea, pa) = edge(a);
                let (eb, pb) = edge(b);
                segments.push((ea, pa, eb, pb));
            }
        }
    }

    let mut by_edge: HashMap<usize, Vec<usize>> = HashMap::new();
    for (s, seg) in segments.iter().enumerate() {
        by_edge.entry(seg.0).or_default().push(s);
        by_edge.entry(seg.2).or_default().push(s);
    }

    let h = grid.h();
    let mut used = vec![false; segments.len()];
    let mut loops = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (e0, p0, mut cur_edge, p1) = segments[start];
        let mut pos = [p0[0] * h, p0[1] * h];
        let mut points = vec![pos];
        let mut length = 0.0;
        let step = |pos: &mut [f64; 2], a: [f64; 2], b: [f64; 2]| {
            let d = [(b[0] - a[0]) * h, (b[1] - a[1]) * h];
            pos[0] += d[0];
            pos[1] += d[1];
            d[0].hypot(d[1])
        };
        length += step(&mut pos, p0, p1);
        while cur_edge != e0 {
            points.push(pos);
            let next = by_edge[&cur_edge].iter().copied().find(|&s| !used[s]);
            let Some(s) = next else { break };
            used[s] = true;
            let (ea, pa, eb, pb) = segments[s];
            if ea == cur_edge {
                length += step(&mut pos, pa, pb);
                cur_edge = eb;
            } else {
                length += step(&mut pos, pb, pa);
                cur_edge = ea;
            }
        }
        loops.push(Polyline { points, length });
    }
    loops
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn circle_level_set() {
        let g = TorusGrid::new(64).unwrap();
        let r = 0.2;
        let f = g.from_fn(|x, y| r - (x - 0.5).hypot(y - 0.5));
        let loops = periodic_contours(&g, f.values(), 0.0);
        assert_eq!(loops.len(), 1);
        let l = &loops[0];
        assert!((l.length - 2.0 * PI * r).abs() < 0.01 * 2.0 * PI * r);
        let (mean, dev) = l.radial_spread();
        assert!((mean - r).abs() < 2e-3 && dev < 0.02);
        assert!((l.enclosed_area() - PI * r * r).abs() < 0.01 * PI * r * r);
    }

    #[test]
    fn wrapping_circle_keeps_its_length() {
        let g = TorusGrid::new(64).unwrap();
        let r = 0.15;
        // centered on the corner, so the disc is split across all four sides
        let f = g.from_fn(|x, y| {
            let dx = x.min(1.0 - x);
            let dy = y.min(1.0 - y);
            r - dx.hypot(dy)
        });
        let loops = periodic_contours(&g, f.values(), 0.0);
        assert_eq!(loops.len(), 1);
        assert!((loops[0].length - 2.0 * PI * r).abs() < 0.01 * 2.0 * PI * r);
    }

    #[test]
    fn strip_gives_two_winding_loops() {
        let g = TorusGrid::new(32).unwrap();
        let f = g.from_fn(|x, _| (2.0 * PI * x).cos());
        let loops = periodic_contours(&g, f.values(), 0.0);
        assert_eq!(loops.len(), 2);
        for l in &loops {
            assert!((l.length - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trivial_fields_have_no_contours() {
        let g = TorusGrid::new(16).unwrap();
        assert!(periodic_contours(&g, g.constant(1.0).values(), 0.0).is_empty());
        assert!(periodic_contours(&g, g.constant(-1.0).values(), 0.0).is_empty());
    }
}
