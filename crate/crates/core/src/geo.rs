//! Spherical-earth geodesy: great-circle distance, speed, bearing and their
//! rates of change.
//!
//! Bearings are computed in degrees and only converted to gradians when a
//! feature is emitted. The bearing-rate wrap is done in degree space and then
//! mapped onto `[-200, 200]` gradians.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Kilometres per international nautical mile.
pub const KM_PER_NMI: f64 = 1.852;

/// Beyond this magnitude the cosine-law argument is ill-conditioned and the
/// haversine form is used instead.
const COS_LAW_LIMIT: f64 = 1.0 - 1e-9;

/// A position in geographic degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Validates latitude and wraps longitude into `[-180, 180]`.
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::InvalidPoint(format!(
                "non-finite coordinate ({lat}, {lon})"
            )));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidPoint(format!(
                "latitude {lat} outside [-90, 90]"
            )));
        }
        Ok(Self {
            lat,
            lon: wrap_lon(lon),
        })
    }

    pub fn lat_rad(&self) -> f64 {
        self.lat.to_radians()
    }

    pub fn lon_rad(&self) -> f64 {
        self.lon.to_radians()
    }
}

fn wrap_lon(lon: f64) -> f64 {
    if (-180.0..=180.0).contains(&lon) {
        return lon;
    }
    let w = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 && lon > 0.0 {
        180.0
    } else {
        w
    }
}

/// Speed, acceleration, bearing and bearing rate attached to a track point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Kinematics {
    /// Speed over ground in knots.
    pub v: f64,
    /// Acceleration in knots per hour.
    pub dv: f64,
    /// Bearing in gradians, `[0, 400)`.
    pub theta: f64,
    /// Bearing change in gradians, `[-200, 200]`.
    pub dtheta: f64,
}

/// Great-circle distance in kilometres on a sphere of radius 6371 km.
///
/// Uses the spherical law of cosines, falling back to the haversine form
/// near coincident and antipodal pairs where `acos` loses precision.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat_rad(), b.lat_rad());
    let dlon = (b.lon - a.lon).to_radians();
    let c = phi1.sin() * phi2.sin() + phi1.cos() * phi2.cos() * dlon.cos();
    let angle = if c.abs() > COS_LAW_LIMIT {
        let dphi = phi2 - phi1;
        let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlon / 2.0).sin().powi(2);
        2.0 * h.sqrt().min(1.0).asin()
    } else {
        c.clamp(-1.0, 1.0).acos()
    };
    EARTH_RADIUS_KM * angle
}

/// Initial great-circle bearing from `a` to `b` in degrees, `[0, 360)`.
pub fn bearing_deg(a: GeoPoint, b: GeoPoint) -> Result<f64> {
    if a.lat == b.lat && a.lon == b.lon {
        return Err(Error::UndefinedBearing);
    }
    let (phi1, phi2) = (a.lat_rad(), b.lat_rad());
    let dlon = (b.lon - a.lon).to_radians();
    let y = dlon.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlon.cos();
    Ok(normalize_deg(y.atan2(x).to_degrees()))
}

fn normalize_deg(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

/// Degrees to gradians, wrapped to `[0, 400)`.
pub fn to_gradian(deg: f64) -> f64 {
    let g = (deg * 400.0 / 360.0).rem_euclid(400.0);
    if g >= 400.0 {
        0.0
    } else {
        g
    }
}

/// Gradians to degrees, wrapped to `[0, 360)`.
pub fn from_gradian(grad: f64) -> f64 {
    normalize_deg(grad * 360.0 / 400.0)
}

/// Average speed in knots over an interval of `dt_hours`.
pub fn speed_knots(a: GeoPoint, b: GeoPoint, dt_hours: f64) -> Result<f64> {
    if dt_hours <= 0.0 || !dt_hours.is_finite() {
        return Err(Error::NonPositiveInterval(dt_hours));
    }
    Ok(haversine_km(a, b) / KM_PER_NMI / dt_hours)
}

/// `theta2 - theta1` in degrees, wrapped by ±360 into `[-180, 180]`.
pub fn delta_bearing(theta1: f64, theta2: f64) -> f64 {
    let mut d = theta2 - theta1;
    while d > 180.0 {
        d -= 360.0;
    }
    while d < -180.0 {
        d += 360.0;
    }
    d
}

/// Degree-space bearing change expressed in gradians.
pub fn delta_bearing_gradian(theta1_deg: f64, theta2_deg: f64) -> f64 {
    delta_bearing(theta1_deg, theta2_deg) * 400.0 / 360.0
}

/// Point reached by travelling `dist_km` from `p` on initial bearing `bearing`
/// (degrees).
pub fn destination(p: GeoPoint, bearing: f64, dist_km: f64) -> GeoPoint {
    let delta = dist_km / EARTH_RADIUS_KM;
    let theta = bearing.to_radians();
    let (phi1, lam1) = (p.lat_rad(), p.lon_rad());
    let phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos()).asin();
    let lam2 = lam1
        + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * phi2.sin());
    GeoPoint {
        lat: phi2.to_degrees(),
        lon: wrap_lon(lam2.to_degrees()),
    }
}

/// Kinematics for a time-ordered sequence of `(unix seconds, position)`.
///
/// Point `i > 0` takes the speed and bearing of the segment arriving at it;
/// point 0 copies point 1. A zero-length segment keeps the previous bearing.
/// Acceleration is the speed change divided by the interval in hours and the
/// bearing rate is the wrapped bearing change.
pub fn kinematics(points: &[(i64, GeoPoint)]) -> Result<Vec<Kinematics>> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints {
            need: 2,
            got: points.len(),
        });
    }
    let n = points.len();
    let mut speed = vec![0.0; n];
    let mut bearing = vec![0.0; n];
    let mut dt = vec![0.0; n];
    let mut have_bearing = false;
    for i in 1..n {
        let (t0, p0) = points[i - 1];
        let (t1, p1) = points[i];
        let hours = (t1 - t0) as f64 / 3600.0;
        dt[i] = hours;
        speed[i] = speed_knots(p0, p1, hours)?;
        match bearing_deg(p0, p1) {
            Ok(b) => {
                bearing[i] = b;
                if !have_bearing {
                    // back-fill leading stationary points with the first real bearing
                    for slot in bearing.iter_mut().take(i) {
                        *slot = b;
                    }
                    have_bearing = true;
                }
            }
            Err(_) => bearing[i] = bearing[i - 1],
        }
    }
    speed[0] = speed[1];
    bearing[0] = bearing[1];

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (dv, dtheta) = if i == 0 {
            (0.0, 0.0)
        } else {
            (
                (speed[i] - speed[i - 1]) / dt[i],
                delta_bearing_gradian(bearing[i - 1], bearing[i]),
            )
        };
        out.push(Kinematics {
            v: speed[i],
            dv,
            theta: to_gradian(bearing[i]),
            dtheta,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    // Independent haversine oracle written directly from the textbook formula.
    fn oracle_km(a: GeoPoint, b: GeoPoint) -> f64 {
        let dlat = (b.lat - a.lat).to_radians();
        let dlon = (b.lon - a.lon).to_radians();
        let h = (dlat / 2.0).sin().powi(2)
            + a.lat.to_radians().cos() * b.lat.to_radians().cos() * (dlon / 2.0).sin().powi(2);
        2.0 * 6371.0 * h.sqrt().atan2((1.0 - h).sqrt())
    }

    #[test]
    fn distance_examples() {
        assert_eq!(haversine_km(p(45.0, -60.0), p(45.0, -60.0)), 0.0);
        // 6371 * pi / 180
        let one_degree = 6371.0 * std::f64::consts::PI / 180.0;
        assert!((one_degree - 111.1949).abs() < 1e-3);
        assert!((haversine_km(p(0.0, 0.0), p(0.0, 1.0)) - one_degree).abs() < 1e-9);
        let half = std::f64::consts::PI * 6371.0;
        assert!((haversine_km(p(0.0, 0.0), p(0.0, 180.0)) - half).abs() < 0.1);
        assert!((half - 20015.1).abs() < 0.1);
    }

    #[test]
    fn near_coincident_uses_stable_branch() {
        let a = p(47.0, -60.0);
        let b = p(47.0 + 1e-7, -60.0);
        let d = haversine_km(a, b);
        assert!(d > 0.0);
        assert!((d - oracle_km(a, b)).abs() / oracle_km(a, b) < 1e-6);
    }

    #[test]
    fn bearing_examples() {
        assert_eq!(bearing_deg(p(0.0, 0.0), p(1.0, 0.0)).unwrap(), 0.0);
        assert!((bearing_deg(p(0.0, 0.0), p(0.0, 1.0)).unwrap() - 90.0).abs() < 1e-12);
        // hand evaluation of atan2(sin dλ cos φ2, cos φ1 sin φ2 − sin φ1 cos φ2 cos dλ)
        let (f1, f2, dl) = (45f64.to_radians(), 46f64.to_radians(), 1f64.to_radians());
        let expect = (dl.sin() * f2.cos())
            .atan2(f1.cos() * f2.sin() - f1.sin() * f2.cos() * dl.cos())
            .to_degrees();
        let got = bearing_deg(p(45.0, -60.0), p(46.0, -59.0)).unwrap();
        assert!((got - expect).abs() < 1e-6);
        assert!((got - 34.9).abs() < 0.5);
        assert!(matches!(
            bearing_deg(p(1.0, 1.0), p(1.0, 1.0)),
            Err(Error::UndefinedBearing)
        ));
    }

    #[test]
    fn gradian_conversion() {
        assert_eq!(to_gradian(0.0), 0.0);
        assert!((to_gradian(90.0) - 100.0).abs() < 1e-12);
        assert!((to_gradian(359.0) - 398.888_888_888_888_9).abs() < 1e-9);
        assert!((to_gradian(-90.0) - 300.0).abs() < 1e-12);
        assert!((from_gradian(to_gradian(123.456)) - 123.456).abs() < 1e-12);
    }

    #[test]
    fn speed_examples() {
        let a = p(0.0, 0.0);
        let b = p(0.0, 1.0);
        assert_eq!(speed_knots(a, a, 1.0).unwrap(), 0.0);
        let s = speed_knots(a, b, 1.0).unwrap();
        assert!((s - 60.04).abs() < 0.01);
        assert!((speed_knots(a, b, 0.5).unwrap() - 2.0 * s).abs() < 1e-9);
        assert!(matches!(
            speed_knots(a, b, 0.0),
            Err(Error::NonPositiveInterval(_))
        ));
        assert!(speed_knots(a, b, -1.0).is_err());
    }

    #[test]
    fn delta_bearing_examples() {
        assert_eq!(delta_bearing(10.0, 10.0), 0.0);
        assert_eq!(delta_bearing(350.0, 10.0), 20.0);
        assert_eq!(delta_bearing(10.0, 350.0), -20.0);
        assert!((delta_bearing_gradian(350.0, 10.0) - 200.0 / 9.0).abs() < 1e-12);
        assert_eq!(delta_bearing_gradian(0.0, 180.0), 200.0);
    }

    #[test]
    fn point_validation() {
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert_eq!(GeoPoint::new(0.0, 190.0).unwrap().lon, -170.0);
        assert_eq!(GeoPoint::new(0.0, 180.0).unwrap().lon, 180.0);
        assert_eq!(GeoPoint::new(0.0, 540.0).unwrap().lon, 180.0);
    }

    #[test]
    fn destination_inverts_distance_and_bearing() {
        let a = p(47.5, -61.0);
        let b = destination(a, 37.0, 120.0);
        assert!((haversine_km(a, b) - 120.0).abs() < 1e-9);
        assert!((bearing_deg(a, b).unwrap() - 37.0).abs() < 1e-9);
    }

    #[test]
    fn kinematics_of_east_track() {
        let pts: Vec<_> = (0..4).map(|i| (i * 600, p(0.0, i as f64 * 0.05))).collect();
        let k = kinematics(&pts).unwrap();
        for row in &k {
            assert!((row.theta - 100.0).abs() < 1e-9);
            assert!(row.dtheta.abs() < 1e-9);
            assert!(row.dv.abs() < 1e-6);
        }
        let expect = haversine_km(pts[0].1, pts[1].1) / KM_PER_NMI * 6.0;
        assert!((k[2].v - expect).abs() < 1e-9);
        assert!(kinematics(&pts[..1]).is_err());
    }

    #[test]
    fn kinematics_stationary_keeps_bearing() {
        let pts = vec![
            (0, p(0.0, 0.0)),
            (600, p(0.0, 0.0)),
            (1200, p(0.0, 0.1)),
            (1800, p(0.0, 0.1)),
        ];
        let k = kinematics(&pts).unwrap();
        assert!(k.iter().all(|r| (r.theta - 100.0).abs() < 1e-9));
        assert_eq!(k[1].v, 0.0);
    }
}
