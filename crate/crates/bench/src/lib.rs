//! Fixtures shared by the benchmarks in `benches/`.

use curvewarn::geo::LocalFrame;
use curvewarn::matching::{EdgeSpec, GpsFix, GpsTrace, Node, RoadGraph};
use curvewarn::{RoadProfile, RoadSample};

/// Flat road of `length` meters with a constant curve of radius `radius`
/// starting at `start`, on a 1 m grid.
pub fn curve_road(length: f64, start: f64, radius: f64) -> RoadProfile {
    RoadProfile::from_fn(0.0, 1.0, length as usize + 1, |s| RoadSample {
        kappa: if s < start { 0.0 } else { ((s - start) / 30.0).min(1.0) / radius },
        sigma: 0.0,
        width: 3.5,
        u_limit: 25.0,
    })
    .expect("valid profile")
}

/// Square grid of two-way streets, `n x n` nodes `spacing` meters apart.
pub fn grid(n: usize, spacing: f64) -> RoadGraph {
    let frame = LocalFrame::new(47.0, 8.0);
    let id = |i: usize, j: usize| format!("{i}_{j}");
    let nodes = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            let (lat, lon) = frame.unproject(i as f64 * spacing, j as f64 * spacing);
            Node { id: id(i, j), lat, lon }
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for (a, b) in [((i + 1, j), (i, j)), ((i, j + 1), (i, j))] {
                if a.0 < n && a.1 < n {
                    edges.push(EdgeSpec::straight(format!("{}>{}", id(b.0, b.1), id(a.0, a.1)), id(b.0, b.1), id(a.0, a.1)));
                    edges.push(EdgeSpec::straight(format!("{}>{}", id(a.0, a.1), id(b.0, b.1)), id(a.0, a.1), id(b.0, b.1)));
                }
            }
        }
    }
    RoadGraph::new(nodes, edges).expect("valid grid")
}

/// Fixes every 15 m along the first row of [`grid`], offset 4 m north.
pub fn row_trace(fixes: usize) -> GpsTrace {
    let frame = LocalFrame::new(47.0, 8.0);
    let fixes = (0..fixes)
        .map(|k| {
            let (lat, lon) = frame.unproject(4.0, 5.0 + 15.0 * k as f64);
            GpsFix { t: k as f64, lat, lon }
        })
        .collect();
    GpsTrace::new(fixes).expect("ordered trace")
}
