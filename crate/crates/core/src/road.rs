//! Arc-length indexed road attributes.
//!
//! A [`RoadProfile`] stores curvature, slope, lane width and speed limit on a
//! strictly increasing arc-length grid and interpolates linearly between
//! knots.
//!
//! Sign conventions used throughout the crate:
//!
//! * `kappa > 0` is a left-hand curve. The lateral offset `n` is measured from
//!   the lane divider into the rider's own lane, positive toward the center of
//!   a left curve, so the lane is `0 <= n <= width`.
//! * **`sigma > 0` is a descending road.** The slope enters the longitudinal
//!   dynamics as `+ g * sigma * cos(alpha)`, so a positive slope accelerates
//!   the vehicle. Profiles derived from elevation data store
//!   `sigma = -d(elevation)/ds`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geo::{distance, LocalFrame};

#[derive(Debug, thiserror::Error)]
pub enum RoadError {
    #[error("arc length {s} outside profile range [{start}, {end}]")]
    OutOfRange { s: f64, start: f64, end: f64 },
    #[error("degenerate polyline: {0}")]
    DegeneratePolyline(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl RoadError {
    fn parse(err: serde_json::Error) -> Self {
        RoadError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        RoadError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Road attributes at one arc-length position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadSample {
    /// Curvature [1/m], positive for left curves.
    pub kappa: f64,
    /// Small-angle slope [rad], positive when descending.
    pub sigma: f64,
    /// Lane width [m].
    pub width: f64,
    /// Speed limit [m/s].
    pub u_limit: f64,
}

impl RoadSample {
    pub fn validate(&self) -> Result<(), RoadError> {
        let finite = [self.kappa, self.sigma, self.width, self.u_limit]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(RoadError::InvariantViolation(format!(
                "non-finite road sample {self:?}"
            )));
        }
        if self.width <= 0.0 {
            return Err(RoadError::InvariantViolation(format!(
                "lane width {} must be positive",
                self.width
            )));
        }
        if self.u_limit <= 0.0 {
            return Err(RoadError::InvariantViolation(format!(
                "speed limit {} must be positive",
                self.u_limit
            )));
        }
        if self.kappa.abs() * self.width >= 1.0 {
            return Err(RoadError::InvariantViolation(format!(
                "|kappa| = {} reaches the center of curvature inside a {} m lane",
                self.kappa.abs(),
                self.width
            )));
        }
        Ok(())
    }
}

/// Road attributes on an arc-length grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadProfile {
    s_grid: Vec<f64>,
    samples: Vec<RoadSample>,
}

impl RoadProfile {
    pub fn new(s_grid: Vec<f64>, samples: Vec<RoadSample>) -> Result<Self, RoadError> {
        if s_grid.len() < 2 {
            return Err(RoadError::InvariantViolation(format!(
                "profile needs at least 2 knots, got {}",
                s_grid.len()
            )));
        }
        if s_grid.len() != samples.len() {
            return Err(RoadError::InvariantViolation(format!(
                "{} knots but {} samples",
                s_grid.len(),
                samples.len()
            )));
        }
        if s_grid.iter().any(|s| !s.is_finite()) {
            return Err(RoadError::InvariantViolation("non-finite knot".into()));
        }
        if let Some(i) = s_grid.windows(2).position(|w| w[1] <= w[0]) {
            return Err(RoadError::InvariantViolation(format!(
                "s grid not strictly increasing at index {}: {} -> {}",
                i + 1,
                s_grid[i],
                s_grid[i + 1]
            )));
        }
        for (i, sample) in samples.iter().enumerate() {
            sample.validate().map_err(|e| match e {
                RoadError::InvariantViolation(m) => {
                    RoadError::InvariantViolation(format!("knot {i}: {m}"))
                }
                other => other,
            })?;
        }
        Ok(Self { s_grid, samples })
    }

    /// Samples `f` on a uniform grid of `count` knots starting at `start`.
    pub fn from_fn(
        start: f64,
        spacing: f64,
        count: usize,
        f: impl Fn(f64) -> RoadSample,
    ) -> Result<Self, RoadError> {
        let s_grid: Vec<f64> = (0..count).map(|i| start + spacing * i as f64).collect();
        let samples = s_grid.iter().map(|&s| f(s)).collect();
        Self::new(s_grid, samples)
    }

    /// Constant road attributes over `[0, length]`.
    pub fn uniform(length: f64, sample: RoadSample) -> Result<Self, RoadError> {
        Self::new(vec![0.0, length], vec![sample, sample])
    }

    pub fn s_grid(&self) -> &[f64] {
        &self.s_grid
    }

    pub fn samples(&self) -> &[RoadSample] {
        &self.samples
    }

    pub fn start(&self) -> f64 {
        self.s_grid[0]
    }

    pub fn end(&self) -> f64 {
        self.s_grid[self.s_grid.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.s_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_grid.is_empty()
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.start() && s <= self.end()
    }

    /// Linear interpolation of every field; exact at knots.
    pub fn query(&self, s: f64) -> Result<RoadSample, RoadError> {
        if !(s >= self.start() && s <= self.end()) {
            return Err(RoadError::OutOfRange {
                s,
                start: self.start(),
                end: self.end(),
            });
        }
        let last = self.s_grid.len() - 1;
        if s == self.s_grid[last] {
            return Ok(self.samples[last]);
        }
        // index of the last knot <= s
        let i = self.s_grid.partition_point(|&k| k <= s) - 1;
        let (s0, s1) = (self.s_grid[i], self.s_grid[i + 1]);
        let t = (s - s0) / (s1 - s0);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let lerp = |x: f64, y: f64| x + t * (y - x);
        Ok(RoadSample {
            kappa: lerp(a.kappa, b.kappa),
            sigma: lerp(a.sigma, b.sigma),
            width: lerp(a.width, b.width),
            u_limit: lerp(a.u_limit, b.u_limit),
        })
    }

    /// Same geometry with the slope removed everywhere.
    pub fn without_slope(&self) -> RoadProfile {
        RoadProfile {
            s_grid: self.s_grid.clone(),
            samples: self
                .samples
                .iter()
                .map(|s| RoadSample { sigma: 0.0, ..*s })
                .collect(),
        }
    }

    pub fn has_slope(&self) -> bool {
        self.samples.iter().any(|s| s.sigma != 0.0)
    }
}

/// One polyline vertex: latitude and longitude in degrees, elevation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    pub ele: f64,
}

impl From<[f64; 3]> for GeoPoint {
    fn from(v: [f64; 3]) -> Self {
        GeoPoint {
            lat: v[0],
            lon: v[1],
            ele: v[2],
        }
    }
}

impl From<GeoPoint> for [f64; 3] {
    fn from(p: GeoPoint) -> Self {
        [p.lat, p.lon, p.ele]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoPolyline {
    points: Vec<GeoPoint>,
}

impl GeoPolyline {
    pub fn new(points: Vec<GeoPoint>) -> Result<Self, RoadError> {
        if points.len() < 3 {
            return Err(RoadError::DegeneratePolyline(format!(
                "need at least 3 points, got {}",
                points.len()
            )));
        }
        if let Some(i) = points.windows(2).position(|w| w[0] == w[1]) {
            return Err(RoadError::DegeneratePolyline(format!(
                "points {i} and {} are identical",
                i + 1
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    pub fn reversed(&self) -> GeoPolyline {
        let mut points = self.points.clone();
        points.reverse();
        GeoPolyline { points }
    }
}

/// Attributes the polyline source does not carry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolylineDefaults {
    pub width: f64,
    pub u_limit: f64,
}

impl Default for PolylineDefaults {
    fn default() -> Self {
        // 80 km/h rural road
        Self {
            width: 3.5,
            u_limit: 22.2,
        }
    }
}

/// Centered moving-average window, in knots, applied to derived curvature and slope.
pub const SMOOTHING_WINDOW: usize = 5;

/// Relative cross-product magnitude below which a point triple counts as collinear.
const COLLINEAR_TOL: f64 = 1e-12;

/// Derives a uniform-knot profile from a geographic polyline.
///
/// Curvature comes from the signed circumcircle of consecutive point triples
/// and slope from finite-differenced elevation; both are resampled onto knots
/// `0, h, 2h, ...` and smoothed with a [`SMOOTHING_WINDOW`]-knot centered
/// moving average (indices clamped at the ends).
pub fn profile_from_polyline(
    line: &GeoPolyline,
    knot_spacing: f64,
    defaults: PolylineDefaults,
) -> Result<RoadProfile, RoadError> {
    if !(knot_spacing > 0.0) {
        return Err(RoadError::InvariantViolation(format!(
            "knot spacing {knot_spacing} must be positive"
        )));
    }
    let pts = line.points();
    let frame = LocalFrame::centered_on(pts.iter().map(|p| (p.lat, p.lon)));
    let xy: Vec<[f64; 2]> = pts.iter().map(|p| frame.project(p.lat, p.lon)).collect();

    let mut arc = Vec::with_capacity(xy.len());
    arc.push(0.0);
    for w in xy.windows(2) {
        let step = distance(w[0], w[1]);
        if step <= 0.0 {
            return Err(RoadError::DegeneratePolyline(
                "zero-length segment after projection".into(),
            ));
        }
        arc.push(arc.last().unwrap() + step);
    }
    let total = *arc.last().unwrap();

    let n = xy.len();
    let mut kappa = vec![0.0; n];
    for i in 1..n - 1 {
        kappa[i] = circumcircle_curvature(xy[i - 1], xy[i], xy[i + 1]);
    }
    kappa[0] = kappa[1];
    kappa[n - 1] = kappa[n - 2];

    let mut sigma = vec![0.0; n];
    for i in 0..n {
        let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
        sigma[i] = -(pts[b].ele - pts[a].ele) / (arc[b] - arc[a]);
    }

    let knot_count = (total / knot_spacing + 1e-9).floor() as usize + 1;
    if knot_count < 2 {
        return Err(RoadError::DegeneratePolyline(format!(
            "polyline length {total:.3} m shorter than knot spacing {knot_spacing} m"
        )));
    }
    let s_grid: Vec<f64> = (0..knot_count).map(|k| k as f64 * knot_spacing).collect();
    let kappa_knots = smooth(&resample(&arc, &kappa, &s_grid));
    let sigma_knots = smooth(&resample(&arc, &sigma, &s_grid));

    let samples = kappa_knots
        .iter()
        .zip(&sigma_knots)
        .map(|(&kappa, &sigma)| RoadSample {
            kappa,
            sigma,
            width: defaults.width,
            u_limit: defaults.u_limit,
        })
        .collect();
    RoadProfile::new(s_grid, samples)
}

/// Signed curvature of the circle through three points; positive for a left turn.
fn circumcircle_curvature(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let (ab, bc, ac) = (distance(a, b), distance(b, c), distance(a, c));
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    if cross.abs() <= COLLINEAR_TOL * ab * ac {
        return 0.0;
    }
    2.0 * cross / (ab * bc * ac)
}

fn resample(arc: &[f64], values: &[f64], knots: &[f64]) -> Vec<f64> {
    knots
        .iter()
        .map(|&s| {
            let j = arc.partition_point(|&a| a <= s).clamp(1, arc.len() - 1);
            let (s0, s1) = (arc[j - 1], arc[j]);
            let t = ((s - s0) / (s1 - s0)).clamp(0.0, 1.0);
            values[j - 1] + t * (values[j] - values[j - 1])
        })
        .collect()
}

fn smooth(values: &[f64]) -> Vec<f64> {
    let half = (SMOOTHING_WINDOW / 2) as isize;
    let last = values.len() as isize - 1;
    (0..values.len() as isize)
        .map(|i| {
            let sum: f64 = (-half..=half)
                .map(|o| values[(i + o).clamp(0, last) as usize])
                .sum();
            sum / SMOOTHING_WINDOW as f64
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    s: Vec<f64>,
    kappa: Vec<f64>,
    sigma: Vec<f64>,
    width: Vec<f64>,
    u_limit: Vec<f64>,
}

pub fn profile_from_json(text: &str) -> Result<RoadProfile, RoadError> {
    let file: ProfileFile = serde_json::from_str(text).map_err(RoadError::parse)?;
    let len = file.s.len();
    for (name, column) in [
        ("kappa", &file.kappa),
        ("sigma", &file.sigma),
        ("width", &file.width),
        ("u_limit", &file.u_limit),
    ] {
        if column.len() != len {
            return Err(RoadError::Parse {
                line: 0,
                column: 0,
                message: format!("field `{name}` has {} entries, `s` has {len}", column.len()),
            });
        }
    }
    let samples = (0..len)
        .map(|i| RoadSample {
            kappa: file.kappa[i],
            sigma: file.sigma[i],
            width: file.width[i],
            u_limit: file.u_limit[i],
        })
        .collect();
    RoadProfile::new(file.s, samples)
}

pub fn profile_to_json(profile: &RoadProfile) -> String {
    let file = ProfileFile {
        s: profile.s_grid.clone(),
        kappa: profile.samples.iter().map(|s| s.kappa).collect(),
        sigma: profile.samples.iter().map(|s| s.sigma).collect(),
        width: profile.samples.iter().map(|s| s.width).collect(),
        u_limit: profile.samples.iter().map(|s| s.u_limit).collect(),
    };
    serde_json::to_string_pretty(&file).expect("profile serializes")
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<RoadProfile, RoadError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| RoadError::io(path, e))?;
    profile_from_json(&text)
}

pub fn save_profile(profile: &RoadProfile, path: impl AsRef<Path>) -> Result<(), RoadError> {
    let path = path.as_ref();
    fs::write(path, profile_to_json(profile)).map_err(|e| RoadError::io(path, e))
}

pub fn load_polyline(path: impl AsRef<Path>) -> Result<GeoPolyline, RoadError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| RoadError::io(path, e))?;
    let points: Vec<GeoPoint> = serde_json::from_str(&text).map_err(RoadError::parse)?;
    GeoPolyline::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(kappa: f64, sigma: f64) -> RoadSample {
        RoadSample {
            kappa,
            sigma,
            width: 3.5,
            u_limit: 22.2,
        }
    }

    #[test]
    fn constant_profile_query() {
        let p = RoadProfile::uniform(100.0, sample(0.02, 0.0)).unwrap();
        for s in [0.0, 13.7, 50.0, 100.0] {
            assert_eq!(p.query(s).unwrap().kappa, 0.02);
        }
    }

    #[test]
    fn linear_slope_interpolation() {
        let p = RoadProfile::new(vec![0.0, 10.0], vec![sample(0.0, 0.0), sample(0.0, 0.1)]).unwrap();
        assert!((p.query(5.0).unwrap().sigma - 0.05).abs() < 1e-15);
    }

    #[test]
    fn query_exact_at_knots() {
        let p = RoadProfile::new(
            vec![0.0, 3.3, 7.1],
            vec![sample(0.01, 0.02), sample(-0.013, 0.07), sample(0.003, -0.01)],
        )
        .unwrap();
        for (s, expected) in p.s_grid().iter().zip(p.samples()) {
            assert_eq!(&p.query(*s).unwrap(), expected);
        }
    }

    #[test]
    fn query_out_of_range() {
        let p = RoadProfile::uniform(10.0, sample(0.0, 0.0)).unwrap();
        assert!(matches!(p.query(-0.1), Err(RoadError::OutOfRange { .. })));
        assert!(matches!(p.query(10.01), Err(RoadError::OutOfRange { .. })));
        assert!(matches!(p.query(f64::NAN), Err(RoadError::OutOfRange { .. })));
    }

    #[test]
    fn invariants_rejected() {
        assert!(RoadProfile::new(vec![0.0], vec![sample(0.0, 0.0)]).is_err());
        assert!(RoadProfile::new(vec![0.0, 0.0], vec![sample(0.0, 0.0); 2]).is_err());
        let bad_width = RoadSample { width: 0.0, ..sample(0.0, 0.0) };
        assert!(RoadProfile::new(vec![0.0, 1.0], vec![bad_width; 2]).is_err());
        let tight = sample(0.3, 0.0);
        assert!(RoadProfile::new(vec![0.0, 1.0], vec![tight; 2]).is_err());
    }

    #[test]
    fn polyline_needs_three_points() {
        let p = GeoPoint { lat: 47.0, lon: 8.0, ele: 0.0 };
        let q = GeoPoint { lat: 47.001, lon: 8.0, ele: 0.0 };
        assert!(matches!(
            GeoPolyline::new(vec![p, q]),
            Err(RoadError::DegeneratePolyline(_))
        ));
        assert!(GeoPolyline::new(vec![p, p, q]).is_err());
    }

    #[test]
    fn curvature_sign_left_turn_positive() {
        let k = circumcircle_curvature([0.0, 0.0], [1.0, 0.0], [2.0, 1.0]);
        assert!(k > 0.0);
        let k = circumcircle_curvature([0.0, 0.0], [1.0, 0.0], [2.0, -1.0]);
        assert!(k < 0.0);
        assert_eq!(circumcircle_curvature([0.0, 0.0], [1.0, 0.0], [2.0, 0.0]), 0.0);
    }

    #[test]
    fn json_reports_missing_column() {
        let text = r#"{"s":[0,1],"kappa":[0,0],"sigma":[0,0],"width":[3,3]}"#;
        match profile_from_json(text) {
            Err(RoadError::Parse { message, .. }) => assert!(message.contains("u_limit")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn json_rejects_decreasing_grid() {
        let text = r#"{"s":[0,2,1],"kappa":[0,0,0],"sigma":[0,0,0],"width":[3,3,3],"u_limit":[20,20,20]}"#;
        assert!(matches!(
            profile_from_json(text),
            Err(RoadError::InvariantViolation(_))
        ));
    }

    #[test]
    fn smoothing_clamps_ends() {
        let out = smooth(&[1.0, 1.0, 1.0, 6.0]);
        assert_eq!(out[0], 1.0);
        assert!((out[3] - (1.0 + 1.0 + 6.0 * 3.0) / 5.0).abs() < 1e-15);
    }
}
