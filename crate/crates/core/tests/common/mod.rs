//! Shared fixtures and independent oracles for the integration suites.
#![allow(dead_code)]

use curvewarn::geo::LocalFrame;
use curvewarn::matching::{self, Candidate, EdgeSpec, GpsFix, GpsTrace, MatchParams, Node, RoadGraph, Router};
use curvewarn::{RoadProfile, RoadSample};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const WIDTH: f64 = 3.5;

/// Curvature that ramps linearly to `kappa` over `ramp` meters from `start`,
/// holds for `hold` meters and ramps back to zero.
pub fn bump(s: f64, start: f64, ramp: f64, hold: f64, kappa: f64) -> f64 {
    let x = s - start;
    if x <= 0.0 || x >= 2.0 * ramp + hold {
        0.0
    } else if x < ramp {
        kappa * x / ramp
    } else if x <= ramp + hold {
        kappa
    } else {
        kappa * (2.0 * ramp + hold - x) / ramp
    }
}

pub fn sample(kappa: f64, sigma: f64, u_limit: f64) -> RoadSample {
    RoadSample {
        kappa,
        sigma,
        width: WIDTH,
        u_limit,
    }
}

pub fn straight(length: f64, sigma: f64, u_limit: f64) -> RoadProfile {
    RoadProfile::uniform(length, sample(0.0, sigma, u_limit)).unwrap()
}

/// Road of `length` meters on a 1 m grid with curvature and slope from closures.
pub fn road(length: f64, u_limit: f64, kappa: impl Fn(f64) -> f64, sigma: impl Fn(f64) -> f64) -> RoadProfile {
    RoadProfile::from_fn(0.0, 1.0, length as usize + 1, |s| sample(kappa(s), sigma(s), u_limit)).unwrap()
}

/// One curve of radius `1/kappa`.
pub fn single_curve(length: f64, u_limit: f64, start: f64, kappa: f64, sigma: f64) -> RoadProfile {
    road(length, u_limit, |s| bump(s, start, 30.0, 100.0, kappa), |_| sigma)
}

/// Left-right S-curve of radius 40 m starting at `start`.
pub fn s_curve(length: f64, u_limit: f64, start: f64, sigma: f64) -> RoadProfile {
    let k = 1.0 / 40.0;
    road(
        length,
        u_limit,
        move |s| bump(s, start, 20.0, 40.0, k) - bump(s, start + 80.0, 20.0, 40.0, k),
        move |_| sigma,
    )
}

/// Forward-backward speed profile on the grid `s0 + k ds`, `k = 0..=steps+1`.
///
/// Speed is capped by the speed limit and by steady cornering at the lateral
/// limit; the longitudinal acceleration available at speed `v` is what the
/// friction ellipse leaves after the lateral demand `v^2 kappa`.
pub fn speed_oracle(profile: &RoadProfile, s0: f64, ds: f64, steps: usize, v0: f64, ax_max: f64, ay_max: f64) -> Vec<f64> {
    let m = steps + 2;
    let roads: Vec<RoadSample> = (0..m).map(|k| profile.query(s0 + k as f64 * ds).unwrap()).collect();
    let cap: Vec<f64> = roads
        .iter()
        .map(|r| {
            let corner = if r.kappa.abs() > 0.0 {
                (ay_max / r.kappa.abs()).sqrt()
            } else {
                f64::INFINITY
            };
            r.u_limit.min(corner)
        })
        .collect();
    let accel = |v: f64, r: &RoadSample| {
        let lat = v * v * r.kappa.abs() / ay_max;
        ax_max * (1.0 - lat * lat).max(0.0).sqrt()
    };
    let mut fwd = vec![0.0; m];
    fwd[0] = v0;
    for k in 0..m - 1 {
        let v = fwd[k].min(cap[k]);
        let next = (v * v + 2.0 * accel(v, &roads[k]) * ds).sqrt();
        fwd[k + 1] = next.min(cap[k + 1]);
    }
    let mut bwd = vec![0.0; m];
    bwd[m - 1] = cap[m - 1];
    for k in (0..m - 1).rev() {
        let v = bwd[k + 1];
        let prev = (v * v + 2.0 * accel(v, &roads[k + 1]) * ds).sqrt();
        bwd[k] = prev.min(cap[k]);
    }
    fwd.iter().zip(&bwd).map(|(a, b)| a.min(*b)).collect()
}

/// Exhaustive maximizer of the HMM joint log-probability, using the
/// matcher's emission and transition terms. Returns the chosen candidate of
/// every fix and the score.
pub fn brute_force_match(trace: &GpsTrace, graph: &RoadGraph, params: &MatchParams) -> (Vec<Candidate>, f64) {
    let fixes = trace.fixes();
    let cands: Vec<Vec<Candidate>> = fixes.iter().map(|f| matching::candidates(f, graph, params.radius)).collect();
    assert!(cands.iter().all(|c| !c.is_empty()), "oracle instances need candidates everywhere");
    let router = Router::new(graph, params.backtrack());
    let mut best: (Vec<usize>, f64) = (Vec::new(), f64::NEG_INFINITY);
    let mut idx = vec![0usize; fixes.len()];
    loop {
        let mut score = 0.0;
        for (t, &i) in idx.iter().enumerate() {
            score += matching::emission_logprob(cands[t][i].distance, params.sigma_gps);
            if t > 0 {
                let (a, b) = (&fixes[t - 1], &fixes[t]);
                let gc = curvewarn::geo::haversine(a.lat, a.lon, b.lat, b.lon);
                let route = router.route_distance(&cands[t - 1][idx[t - 1]], &cands[t][i]);
                score += matching::transition_logprob(route, gc, params.beta);
            }
        }
        if score > best.1 {
            best = (idx.clone(), score);
        }
        // odometer increment
        let mut t = fixes.len();
        loop {
            if t == 0 {
                let chosen = best.0.iter().enumerate().map(|(t, &i)| cands[t][i]).collect();
                return (chosen, best.1);
            }
            t -= 1;
            idx[t] += 1;
            if idx[t] < cands[t].len() {
                break;
            }
            idx[t] = 0;
        }
    }
}

pub fn origin() -> LocalFrame {
    LocalFrame::new(47.0, 8.0)
}

pub fn fix_at(frame: &LocalFrame, t: f64, x: f64, y: f64) -> GpsFix {
    let (lat, lon) = frame.unproject(x, y);
    GpsFix { t, lat, lon }
}

/// Square grid of `n x n` nodes `spacing` apart with two-way streets.
pub fn grid_graph(n: usize, spacing: f64) -> RoadGraph {
    let frame = origin();
    let id = |i: usize, j: usize| format!("{i}_{j}");
    let mut nodes = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let (lat, lon) = frame.unproject(i as f64 * spacing, j as f64 * spacing);
            nodes.push(Node { id: id(i, j), lat, lon });
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i + 1 < n {
                edges.push(EdgeSpec::straight(format!("{}>{}", id(i, j), id(i + 1, j)), id(i, j), id(i + 1, j)));
                edges.push(EdgeSpec::straight(format!("{}>{}", id(i + 1, j), id(i, j)), id(i + 1, j), id(i, j)));
            }
            if j + 1 < n {
                edges.push(EdgeSpec::straight(format!("{}>{}", id(i, j), id(i, j + 1)), id(i, j), id(i, j + 1)));
                edges.push(EdgeSpec::straight(format!("{}>{}", id(i, j + 1), id(i, j)), id(i, j + 1), id(i, j)));
            }
        }
    }
    RoadGraph::new(nodes, edges).unwrap()
}

/// A random drive over the grid: the true edge index of every fix and the noisy trace.
pub fn random_drive<R: Rng>(graph: &RoadGraph, n: usize, spacing: f64, fixes: usize, step: f64, noise: f64, rng: &mut R) -> (Vec<usize>, GpsTrace) {
    let frame = origin();
    let normal = Normal::new(0.0, noise).unwrap();
    let edge_id = |a: (usize, usize), b: (usize, usize)| format!("{}_{}>{}_{}", a.0, a.1, b.0, b.1);
    let mut at = (rng.random_range(0..n), rng.random_range(0..n));
    let mut prev: Option<(usize, usize)> = None;
    let mut truth = Vec::with_capacity(fixes);
    let mut trace = Vec::with_capacity(fixes);
    let mut along = 0.0;
    let mut edge: Option<((usize, usize), (usize, usize))> = None;
    let mut t = 0.0;
    while trace.len() < fixes {
        let (from, to) = match edge {
            Some(e) if along < spacing => e,
            _ => {
                along = if edge.is_some() { along - spacing } else { rng.random_range(0.0..spacing) };
                if let Some((_, to)) = edge {
                    prev = Some(at);
                    at = to;
                }
                // no U-turns
                let mut options: Vec<(usize, usize)> = Vec::new();
                let (i, j) = at;
                if i + 1 < n {
                    options.push((i + 1, j));
                }
                if i > 0 {
                    options.push((i - 1, j));
                }
                if j + 1 < n {
                    options.push((i, j + 1));
                }
                if j > 0 {
                    options.push((i, j - 1));
                }
                options.retain(|o| Some(*o) != prev);
                let next = options[rng.random_range(0..options.len())];
                edge = Some((at, next));
                (at, next)
            }
        };
        let f = along / spacing;
        let x = (from.0 as f64 + f * (to.0 as f64 - from.0 as f64)) * spacing;
        let y = (from.1 as f64 + f * (to.1 as f64 - from.1 as f64)) * spacing;
        truth.push(graph.edge_by_id(&edge_id(from, to)).unwrap());
        trace.push(fix_at(&frame, t, x + normal.sample(rng), y + normal.sample(rng)));
        t += 1.0;
        along += step;
    }
    (truth, GpsTrace::new(trace).unwrap())
}
