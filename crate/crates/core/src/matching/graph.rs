//! Directed road graph with edge geometry and shortest-path routing.

use std::collections::HashMap;
use std::path::Path;

use petgraph::algo::{astar, dijkstra};
use petgraph::graph::{DiGraph, NodeIndex};
use serde::Deserialize;

use super::MatchError;
use crate::geo::{self, LocalFrame};

/// Where an edge starts on a road profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileLink {
    pub profile: String,
    /// Arc length of the edge's first point on the profile [m].
    pub s_start: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    pub from: usize,
    pub to: usize,
    /// `(lat, lon)` points from `from` to `to`.
    pub polyline: Vec<[f64; 2]>,
    /// Polyline length [m].
    pub length: f64,
    pub profile: Option<ProfileLink>,
}

/// Road network. Edges are one-way; a two-way road is two edges.
#[derive(Debug, Clone)]
pub struct RoadGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    frame: LocalFrame,
    /// Projected edge geometry and cumulative length at each point.
    shapes: Vec<Vec<[f64; 2]>>,
    cumulative: Vec<Vec<f64>>,
    graph: DiGraph<usize, usize>,
    edge_index: HashMap<String, usize>,
}

/// Closest point of an edge to a location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Distance along the edge [m].
    pub offset: f64,
    /// Distance from the location [m].
    pub distance: f64,
}

impl RoadGraph {
    /// Builds a graph; edges without a polyline run straight between their nodes.
    pub fn new(nodes: Vec<Node>, edges: Vec<EdgeSpec>) -> Result<Self, MatchError> {
        let mut node_index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if node_index.insert(n.id.clone(), i).is_some() {
                return Err(MatchError::InvalidGraph(format!("duplicate node id {}", n.id)));
            }
        }
        let frame = LocalFrame::centered_on(nodes.iter().map(|n| (n.lat, n.lon)));
        let mut graph = DiGraph::new();
        for i in 0..nodes.len() {
            graph.add_node(i);
        }
        let mut built = Vec::with_capacity(edges.len());
        let mut shapes = Vec::with_capacity(edges.len());
        let mut cumulative = Vec::with_capacity(edges.len());
        let mut edge_index = HashMap::new();
        for spec in edges {
            let lookup = |id: &str| {
                node_index
                    .get(id)
                    .copied()
                    .ok_or_else(|| MatchError::InvalidGraph(format!("edge {} references unknown node {id}", spec.id)))
            };
            let (from, to) = (lookup(&spec.from)?, lookup(&spec.to)?);
            let polyline = if spec.polyline.is_empty() {
                vec![[nodes[from].lat, nodes[from].lon], [nodes[to].lat, nodes[to].lon]]
            } else {
                spec.polyline.clone()
            };
            if polyline.len() < 2 {
                return Err(MatchError::InvalidGraph(format!("edge {} needs at least two points", spec.id)));
            }
            let shape: Vec<[f64; 2]> = polyline.iter().map(|p| frame.project(p[0], p[1])).collect();
            let mut cum = Vec::with_capacity(shape.len());
            let mut acc = 0.0;
            cum.push(0.0);
            for w in shape.windows(2) {
                acc += geo::distance(w[0], w[1]);
                cum.push(acc);
            }
            if !(acc > 0.0) {
                return Err(MatchError::InvalidGraph(format!("edge {} has zero length", spec.id)));
            }
            if let Some(declared) = spec.length {
                if (declared - acc).abs() > 1e-3 * acc {
                    return Err(MatchError::InvalidGraph(format!(
                        "edge {} declares length {declared} m but its polyline is {acc:.3} m",
                        spec.id
                    )));
                }
            }
            let idx = built.len();
            if edge_index.insert(spec.id.clone(), idx).is_some() {
                return Err(MatchError::InvalidGraph(format!("duplicate edge id {}", spec.id)));
            }
            graph.add_edge(NodeIndex::new(from), NodeIndex::new(to), idx);
            built.push(Edge {
                id: spec.id,
                from,
                to,
                polyline,
                length: acc,
                profile: spec.profile,
            });
            shapes.push(shape);
            cumulative.push(cum);
        }
        if built.is_empty() {
            return Err(MatchError::InvalidGraph("graph has no edges".into()));
        }
        Ok(Self {
            nodes,
            edges: built,
            frame,
            shapes,
            cumulative,
            graph,
            edge_index,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, idx: usize) -> &Edge {
        &self.edges[idx]
    }

    pub fn edge_by_id(&self, id: &str) -> Option<usize> {
        self.edge_index.get(id).copied()
    }

    pub fn frame(&self) -> &LocalFrame {
        &self.frame
    }

    /// Closest point on edge `idx` to the projected location `p`.
    pub fn project(&self, idx: usize, p: [f64; 2]) -> Projection {
        let shape = &self.shapes[idx];
        let cum = &self.cumulative[idx];
        let mut best = Projection {
            offset: 0.0,
            distance: f64::INFINITY,
        };
        for (i, w) in shape.windows(2).enumerate() {
            let (t, d) = geo::project_on_segment(p, w[0], w[1]);
            if d < best.distance {
                best = Projection {
                    offset: cum[i] + t * (cum[i + 1] - cum[i]),
                    distance: d,
                };
            }
        }
        best
    }

    /// Projected position at `offset` along edge `idx`.
    pub fn point_at(&self, idx: usize, offset: f64) -> [f64; 2] {
        let (shape, cum) = (&self.shapes[idx], &self.cumulative[idx]);
        let i = segment_at(cum, offset);
        let t = ((offset - cum[i]) / (cum[i + 1] - cum[i])).clamp(0.0, 1.0);
        [
            shape[i][0] + t * (shape[i + 1][0] - shape[i][0]),
            shape[i][1] + t * (shape[i + 1][1] - shape[i][1]),
        ]
    }

    /// Travel direction at `offset`, counter-clockwise from east [rad].
    pub fn heading_at(&self, idx: usize, offset: f64) -> f64 {
        let (shape, cum) = (&self.shapes[idx], &self.cumulative[idx]);
        let i = segment_at(cum, offset);
        (shape[i + 1][1] - shape[i][1]).atan2(shape[i + 1][0] - shape[i][0])
    }

    /// Shortest distances from node `source` to every reachable node.
    pub fn distances_from(&self, source: usize) -> HashMap<usize, f64> {
        dijkstra(&self.graph, NodeIndex::new(source), None, |e| self.edges[*e.weight()].length)
            .into_iter()
            .map(|(n, d)| (n.index(), d))
            .collect()
    }

    /// Edge sequence of a shortest path between two nodes.
    pub fn shortest_path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        if from == to {
            return Some(Vec::new());
        }
        let (_, nodes) = astar(
            &self.graph,
            NodeIndex::new(from),
            |n| n.index() == to,
            |e| self.edges[*e.weight()].length,
            |_| 0.0,
        )?;
        let mut route = Vec::with_capacity(nodes.len().saturating_sub(1));
        for w in nodes.windows(2) {
            let edge = self
                .graph
                .edges_connecting(w[0], w[1])
                .map(|e| *e.weight())
                .min_by(|&a, &b| self.edges[a].length.total_cmp(&self.edges[b].length).then(a.cmp(&b)))?;
            route.push(edge);
        }
        Some(route)
    }
}

fn segment_at(cum: &[f64], offset: f64) -> usize {
    let last = cum.len() - 2;
    cum.partition_point(|&c| c <= offset).saturating_sub(1).min(last)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawId {
    Int(i64),
    Text(String),
}

impl From<RawId> for String {
    fn from(id: RawId) -> String {
        match id {
            RawId::Int(i) => i.to_string(),
            RawId::Text(s) => s,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawLink {
    Id(RawId),
    Full { id: RawId, s_start: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: RawId,
    lat: f64,
    lon: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    id: RawId,
    from: RawId,
    to: RawId,
    #[serde(default)]
    polyline: Vec<Vec<f64>>,
    #[serde(default)]
    length: Option<f64>,
    #[serde(default)]
    profile: Option<RawLink>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    nodes: Vec<RawNode>,
    edges: Vec<RawEdge>,
}

/// Edge as given to [`RoadGraph::new`], referencing nodes by id.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub polyline: Vec<[f64; 2]>,
    pub length: Option<f64>,
    pub profile: Option<ProfileLink>,
}

impl EdgeSpec {
    pub fn straight(id: impl Into<String>, from: impl Into<String>, to: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            polyline: Vec::new(),
            length: None,
            profile: None,
        }
    }
}

pub fn graph_from_json(text: &str) -> Result<RoadGraph, MatchError> {
    let raw: RawGraph = serde_json::from_str(text).map_err(|e| MatchError::Parse(e.to_string()))?;
    let nodes = raw
        .nodes
        .into_iter()
        .map(|n| Node {
            id: n.id.into(),
            lat: n.lat,
            lon: n.lon,
        })
        .collect();
    let edges = raw
        .edges
        .into_iter()
        .map(|e| {
            let id: String = e.id.into();
            let polyline = e
                .polyline
                .iter()
                .map(|p| match p.as_slice() {
                    [lat, lon] | [lat, lon, _] => Ok([*lat, *lon]),
                    _ => Err(MatchError::Parse(format!("edge {id}: polyline points must be [lat, lon]"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let profile = e.profile.map(|l| match l {
                RawLink::Id(id) => ProfileLink {
                    profile: id.into(),
                    s_start: 0.0,
                },
                RawLink::Full { id, s_start } => ProfileLink {
                    profile: id.into(),
                    s_start,
                },
            });
            Ok(EdgeSpec {
                id,
                from: e.from.into(),
                to: e.to.into(),
                polyline,
                length: e.length,
                profile,
            })
        })
        .collect::<Result<Vec<_>, MatchError>>()?;
    RoadGraph::new(nodes, edges)
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<RoadGraph, MatchError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MatchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    graph_from_json(&text)
}
