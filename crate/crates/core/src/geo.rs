//! Small geodesy helpers shared by the road ingestion and the map matcher.

/// Mean earth radius [m].
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Great-circle distance between two WGS84 points given in degrees.
pub fn haversine(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().asin()
}

/// Local equirectangular projection about a reference point.
///
/// `x` points east and `y` points north, both in meters. Accurate to well
/// below a meter over the few-kilometer extents handled here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    lat0: f64,
    lon0: f64,
    cos_lat0: f64,
}

impl LocalFrame {
    pub fn new(lat0_deg: f64, lon0_deg: f64) -> Self {
        Self {
            lat0: lat0_deg.to_radians(),
            lon0: lon0_deg.to_radians(),
            cos_lat0: lat0_deg.to_radians().cos(),
        }
    }

    /// Frame centered on the mean of the given `(lat, lon)` points.
    pub fn centered_on<I: IntoIterator<Item = (f64, f64)>>(points: I) -> Self {
        let (mut sum_lat, mut sum_lon, mut count) = (0.0, 0.0, 0usize);
        for (lat, lon) in points {
            sum_lat += lat;
            sum_lon += lon;
            count += 1;
        }
        let count = count.max(1) as f64;
        Self::new(sum_lat / count, sum_lon / count)
    }

    pub fn project(&self, lat_deg: f64, lon_deg: f64) -> [f64; 2] {
        let x = EARTH_RADIUS_M * (lon_deg.to_radians() - self.lon0) * self.cos_lat0;
        let y = EARTH_RADIUS_M * (lat_deg.to_radians() - self.lat0);
        [x, y]
    }

    pub fn unproject(&self, x: f64, y: f64) -> (f64, f64) {
        let lat = self.lat0 + y / EARTH_RADIUS_M;
        let lon = self.lon0 + x / (EARTH_RADIUS_M * self.cos_lat0);
        (lat.to_degrees(), lon.to_degrees())
    }
}

/// Closest point on segment `a`-`b` to `p`; returns the parameter in `[0, 1]`
/// and the distance.
pub(crate) fn project_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    (t, ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
}

pub(crate) fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}
