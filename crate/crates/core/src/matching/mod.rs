//! GPS map matching with a hidden Markov model.
//!
//! Hidden states are positions on road edges near each fix. A fix is emitted
//! with Gaussian noise around its true position, and consecutive positions
//! are linked by a route whose length should agree with the straight-line
//! distance between the fixes. The Viterbi recursion picks the most likely
//! sequence of positions.

pub mod graph;

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::geo;
pub use graph::{graph_from_json, load_graph, Edge, EdgeSpec, Node, ProfileLink, Projection, RoadGraph};

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error("no road within {radius} m of fix {fix}")]
    NoCandidates { fix: usize, radius: f64 },
    #[error("no fix of the trace could be matched")]
    NoPath,
    #[error("edge {0} has no road profile link")]
    MissingProfileLink(String),
    #[error("invalid road graph: {0}")]
    InvalidGraph(String),
    #[error("invalid GPS trace: {0}")]
    InvalidTrace(String),
    #[error("invalid matcher parameters: {0}")]
    InvalidParams(&'static str),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
}

/// Fixes with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct GpsTrace {
    fixes: Vec<GpsFix>,
}

impl GpsTrace {
    pub fn new(fixes: Vec<GpsFix>) -> Result<Self, MatchError> {
        if fixes.is_empty() {
            return Err(MatchError::InvalidTrace("trace has no fixes".into()));
        }
        if let Some(i) = fixes.windows(2).position(|w| !(w[1].t > w[0].t)) {
            return Err(MatchError::InvalidTrace(format!(
                "timestamps not strictly increasing at fix {}",
                i + 1
            )));
        }
        Ok(Self { fixes })
    }

    pub fn fixes(&self) -> &[GpsFix] {
        &self.fixes
    }

    pub fn len(&self) -> usize {
        self.fixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixes.is_empty()
    }
}

/// Reads a `t,lat,lon` CSV trace.
pub fn load_trace(path: impl AsRef<Path>) -> Result<GpsTrace, MatchError> {
    let path = path.as_ref();
    let parse = |e: csv::Error| MatchError::Parse(format!("{}: {e}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(parse)?;
    let fixes = reader.deserialize().collect::<Result<Vec<GpsFix>, _>>().map_err(parse)?;
    GpsTrace::new(fixes)
}

/// Backward motion along an edge still read as noise, in GPS sigmas.
pub const BACKTRACK_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchParams {
    /// GPS noise standard deviation [m].
    pub sigma_gps: f64,
    /// Scale of the route/straight-line disagreement [m].
    pub beta: f64,
    /// Search radius for candidate positions [m].
    pub radius: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            sigma_gps: 4.07,
            beta: 20.0,
            radius: 50.0,
        }
    }
}

impl MatchParams {
    /// Same-edge backward tolerance handed to the [`Router`].
    pub fn backtrack(&self) -> f64 {
        BACKTRACK_SIGMAS * self.sigma_gps
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        if !(self.sigma_gps > 0.0) {
            return Err(MatchError::InvalidParams("sigma_gps must be positive"));
        }
        if !(self.beta > 0.0) {
            return Err(MatchError::InvalidParams("beta must be positive"));
        }
        if !(self.radius > 0.0) {
            return Err(MatchError::InvalidParams("radius must be positive"));
        }
        Ok(())
    }
}

/// A possible road position for one fix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub edge: usize,
    /// Distance along the edge [m].
    pub offset: f64,
    /// Distance from the fix [m].
    pub distance: f64,
}

/// Closest position on every edge within `radius` of the fix, nearest first.
pub fn candidates(fix: &GpsFix, graph: &RoadGraph, radius: f64) -> Vec<Candidate> {
    let p = graph.frame().project(fix.lat, fix.lon);
    let mut found: Vec<Candidate> = (0..graph.edges().len())
        .filter_map(|edge| {
            let pr = graph.project(edge, p);
            (pr.distance <= radius).then_some(Candidate {
                edge,
                offset: pr.offset,
                distance: pr.distance,
            })
        })
        .collect();
    found.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.edge.cmp(&b.edge)));
    found
}

/// Like [`candidates`] but an empty result is an error.
pub fn candidates_for(fix_index: usize, fix: &GpsFix, graph: &RoadGraph, radius: f64) -> Result<Vec<Candidate>, MatchError> {
    let found = candidates(fix, graph, radius);
    if found.is_empty() {
        Err(MatchError::NoCandidates { fix: fix_index, radius })
    } else {
        Ok(found)
    }
}

/// Log-density of a zero-mean Gaussian at `distance`.
pub fn emission_logprob(distance: f64, sigma_gps: f64) -> f64 {
    let z = distance / sigma_gps;
    -0.5 * z * z - (sigma_gps * (2.0 * std::f64::consts::PI).sqrt()).ln()
}

/// Log-density of an exponential on the route/straight-line disagreement;
/// an unreachable position gives negative infinity.
pub fn transition_logprob(route_distance: Option<f64>, great_circle: f64, beta: f64) -> f64 {
    match route_distance {
        Some(d) => -(d - great_circle).abs() / beta - beta.ln(),
        None => f64::NEG_INFINITY,
    }
}

/// Route distances between candidates, caching one shortest-path tree per
/// source node.
pub struct Router<'g> {
    graph: &'g RoadGraph,
    backtrack: f64,
    trees: RefCell<HashMap<usize, HashMap<usize, f64>>>,
}

impl<'g> Router<'g> {
    /// Backward moves along one edge of up to `backtrack` meters count as
    /// position noise.
    pub fn new(graph: &'g RoadGraph, backtrack: f64) -> Self {
        Self {
            graph,
            backtrack,
            trees: RefCell::new(HashMap::new()),
        }
    }

    fn node_distance(&self, from: usize, to: usize) -> Option<f64> {
        if from == to {
            return Some(0.0);
        }
        let mut trees = self.trees.borrow_mut();
        let tree = trees.entry(from).or_insert_with(|| self.graph.distances_from(from));
        tree.get(&to).copied()
    }

    /// Driving distance from `a` to `b` in the direction of travel.
    ///
    /// A short step backwards along one edge costs its length, as noise would.
    /// A longer one means leaving the edge at its end and coming back around,
    /// which is what tells the two directions of a street apart.
    pub fn route_distance(&self, a: &Candidate, b: &Candidate) -> Option<f64> {
        if a.edge == b.edge && b.offset >= a.offset - self.backtrack {
            return Some((b.offset - a.offset).abs());
        }
        let (ea, eb) = (self.graph.edge(a.edge), self.graph.edge(b.edge));
        let between = self.node_distance(ea.to, eb.from)?;
        Some(ea.length - a.offset + between + b.offset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedFix {
    /// Index of the fix in the trace.
    pub fix_index: usize,
    pub edge: usize,
    pub offset: f64,
    pub distance: f64,
    pub emission_logprob: f64,
    /// Position of `edge` in [`MatchedPath::route`].
    pub route_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPath {
    pub matches: Vec<MatchedFix>,
    /// Connected edge sequence through every matched edge.
    pub route: Vec<usize>,
    /// Fixes left unmatched (no candidates or unreachable).
    pub dropped: Vec<usize>,
    pub log_likelihood: f64,
}

struct Stage {
    fix_index: usize,
    cands: Vec<Candidate>,
    score: Vec<f64>,
    back: Vec<usize>,
}

/// Most likely sequence of road positions for a trace.
pub fn viterbi_match(trace: &GpsTrace, graph: &RoadGraph, params: &MatchParams) -> Result<MatchedPath, MatchError> {
    params.validate()?;
    let router = Router::new(graph, params.backtrack());
    let fixes = trace.fixes();
    let mut stages: Vec<Stage> = Vec::new();
    let mut dropped = Vec::new();

    for (i, fix) in fixes.iter().enumerate() {
        let cands = candidates(fix, graph, params.radius);
        if cands.is_empty() {
            warn!("fix {i}: no road within {} m, dropped", params.radius);
            dropped.push(i);
            continue;
        }
        let emission: Vec<f64> = cands.iter().map(|c| emission_logprob(c.distance, params.sigma_gps)).collect();
        let Some(prev) = stages.last() else {
            stages.push(Stage {
                fix_index: i,
                back: vec![0; cands.len()],
                score: emission,
                cands,
            });
            continue;
        };
        let pf = &fixes[prev.fix_index];
        let gc = geo::haversine(pf.lat, pf.lon, fix.lat, fix.lon);
        let mut score = vec![f64::NEG_INFINITY; cands.len()];
        let mut back = vec![0; cands.len()];
        for (j, cj) in cands.iter().enumerate() {
            for (k, ck) in prev.cands.iter().enumerate() {
                if prev.score[k] == f64::NEG_INFINITY {
                    continue;
                }
                let t = transition_logprob(router.route_distance(ck, cj), gc, params.beta);
                let v = prev.score[k] + t;
                // strict comparison keeps the earliest candidate on ties
                if v > score[j] {
                    score[j] = v;
                    back[j] = k;
                }
            }
            score[j] += emission[j];
        }
        if score.iter().all(|s| *s == f64::NEG_INFINITY) {
            warn!("fix {i}: no candidate reachable from fix {}, dropped", prev.fix_index);
            dropped.push(i);
            continue;
        }
        stages.push(Stage {
            fix_index: i,
            cands,
            score,
            back,
        });
    }

    let last = stages.last().ok_or(MatchError::NoPath)?;
    let (mut pick, log_likelihood) = last
        .score
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let mut chosen = vec![0; stages.len()];
    for (t, stage) in stages.iter().enumerate().rev() {
        chosen[t] = pick;
        pick = stage.back[pick];
    }

    let mut route: Vec<usize> = Vec::new();
    let mut matches = Vec::with_capacity(stages.len());
    for (stage, &c) in stages.iter().zip(&chosen) {
        let cand = stage.cands[c];
        match route.last() {
            None => route.push(cand.edge),
            Some(&e) if e == cand.edge => {}
            Some(&e) => {
                let link = graph
                    .shortest_path(graph.edge(e).to, graph.edge(cand.edge).from)
                    .ok_or(MatchError::NoPath)?;
                route.extend(link);
                route.push(cand.edge);
            }
        }
        matches.push(MatchedFix {
            fix_index: stage.fix_index,
            edge: cand.edge,
            offset: cand.offset,
            distance: cand.distance,
            emission_logprob: emission_logprob(cand.distance, params.sigma_gps),
            route_index: route.len() - 1,
        });
    }
    Ok(MatchedPath {
        matches,
        route,
        dropped,
        log_likelihood,
    })
}

/// Arc length of every matched fix on the road profile linked to the first
/// route edge.
pub fn matched_arclength(path: &MatchedPath, graph: &RoadGraph) -> Result<Vec<f64>, MatchError> {
    let first = *path.route.first().ok_or(MatchError::NoPath)?;
    let link = graph
        .edge(first)
        .profile
        .as_ref()
        .ok_or_else(|| MatchError::MissingProfileLink(graph.edge(first).id.clone()))?;
    let mut start_of = Vec::with_capacity(path.route.len());
    let mut acc = link.s_start;
    for &e in &path.route {
        start_of.push(acc);
        acc += graph.edge(e).length;
    }
    Ok(path.matches.iter().map(|m| start_of[m.route_index] + m.offset).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two parallel one-way east-bound roads 40 m apart.
    fn frame() -> geo::LocalFrame {
        geo::LocalFrame::new(47.0, 8.0)
    }

    fn parallel() -> RoadGraph {
        let frame = frame();
        let node = |id: &str, x: f64, y: f64| {
            let (lat, lon) = frame.unproject(x, y);
            Node { id: id.into(), lat, lon }
        };
        RoadGraph::new(
            vec![
                node("a0", 0.0, 0.0),
                node("a1", 100.0, 0.0),
                node("b0", 0.0, 40.0),
                node("b1", 100.0, 40.0),
            ],
            vec![EdgeSpec::straight("a", "a0", "a1"), EdgeSpec::straight("b", "b0", "b1")],
        )
        .unwrap()
    }

    fn fix_at(_g: &RoadGraph, t: f64, x: f64, y: f64) -> GpsFix {
        let (lat, lon) = frame().unproject(x, y);
        GpsFix { t, lat, lon }
    }

    #[test]
    fn backward_moves_beyond_tolerance_loop_around() {
        let frame = frame();
        let node = |id: &str, x: f64| {
            let (lat, lon) = frame.unproject(x, 0.0);
            Node { id: id.into(), lat, lon }
        };
        let g = RoadGraph::new(
            vec![node("p", 0.0), node("q", 100.0)],
            vec![EdgeSpec::straight("pq", "p", "q"), EdgeSpec::straight("qp", "q", "p")],
        )
        .unwrap();
        let router = Router::new(&g, 10.0);
        let at = |offset| Candidate { edge: 0, offset, distance: 0.0 };
        assert_eq!(router.route_distance(&at(50.0), &at(45.0)), Some(5.0));
        // out to q, back along qp to p, and in again
        let d = router.route_distance(&at(50.0), &at(30.0)).unwrap();
        assert!((d - 180.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn candidate_on_edge() {
        let g = parallel();
        let c = candidates(&fix_at(&g, 0.0, 30.0, 0.0), &g, 50.0);
        assert_eq!(c[0].edge, 0);
        assert!(c[0].distance < 1e-6);
    }

    #[test]
    fn equidistant_candidates() {
        let g = parallel();
        let c = candidates(&fix_at(&g, 0.0, 30.0, 20.0), &g, 50.0);
        assert_eq!(c.len(), 2);
        assert!((c[0].distance - c[1].distance).abs() < 1e-6);
    }

    #[test]
    fn far_fix_has_no_candidates() {
        let g = parallel();
        let fix = fix_at(&g, 0.0, 30.0, 240.0);
        assert!(matches!(candidates_for(0, &fix, &g, 50.0), Err(MatchError::NoCandidates { .. })));
    }

    #[test]
    fn emission_shape() {
        let mode = emission_logprob(0.0, 4.07);
        assert!((mode - emission_logprob(4.07, 4.07) - 0.5).abs() < 1e-12);
        let p1 = mode - emission_logprob(3.0, 4.07);
        let p2 = mode - emission_logprob(6.0, 4.07);
        assert!((p2 - 4.0 * p1).abs() < 1e-12);
    }

    #[test]
    fn transition_detour_penalty() {
        let base = transition_logprob(Some(100.0), 100.0, 50.0);
        let detour = transition_logprob(Some(200.0), 100.0, 50.0);
        assert!((base - detour - 2.0).abs() < 1e-12);
        assert_eq!(transition_logprob(None, 10.0, 50.0), f64::NEG_INFINITY);
    }

    #[test]
    fn noiseless_trace_stays_on_edge() {
        let g = parallel();
        let trace = GpsTrace::new((0..5).map(|i| fix_at(&g, i as f64, 10.0 + 20.0 * i as f64, 0.0)).collect()).unwrap();
        let path = viterbi_match(&trace, &g, &MatchParams::default()).unwrap();
        assert!(path.matches.iter().all(|m| m.edge == 0));
        assert_eq!(path.route, vec![0]);
    }

    #[test]
    fn single_fix_takes_nearest() {
        let g = parallel();
        let trace = GpsTrace::new(vec![fix_at(&g, 0.0, 50.0, 30.0)]).unwrap();
        let path = viterbi_match(&trace, &g, &MatchParams::default()).unwrap();
        assert_eq!(path.matches[0].edge, 1);
    }

    #[test]
    fn far_fixes_dropped_and_empty_fails() {
        let g = parallel();
        let trace = GpsTrace::new(vec![fix_at(&g, 0.0, 50.0, 0.0), fix_at(&g, 1.0, 50.0, 500.0)]).unwrap();
        let path = viterbi_match(&trace, &g, &MatchParams::default()).unwrap();
        assert_eq!(path.dropped, vec![1]);
        let trace = GpsTrace::new(vec![fix_at(&g, 0.0, 50.0, 500.0)]).unwrap();
        assert!(matches!(viterbi_match(&trace, &g, &MatchParams::default()), Err(MatchError::NoPath)));
    }

    #[test]
    fn trace_timestamps_checked() {
        let f = GpsFix { t: 1.0, lat: 0.0, lon: 0.0 };
        assert!(GpsTrace::new(vec![f, f]).is_err());
        assert!(GpsTrace::new(vec![]).is_err());
    }

    #[test]
    fn arclength_needs_link() {
        let g = parallel();
        let trace = GpsTrace::new(vec![fix_at(&g, 0.0, 50.0, 0.0)]).unwrap();
        let path = viterbi_match(&trace, &g, &MatchParams::default()).unwrap();
        assert!(matches!(matched_arclength(&path, &g), Err(MatchError::MissingProfileLink(_))));
    }
}
