//! Geodesic primitives against the unit-vector oracle in `common`.

mod common;

use common::{geodesy_check, oracle_bearing, oracle_km, random_pairs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voyagecast::geo::{
    bearing_deg, haversine_km, speed_knots, to_gradian, EARTH_RADIUS_KM, KM_PER_NMI,
};
use voyagecast::GeoPoint;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

#[test]
fn distance_matches_vector_oracle() {
    for (a, b) in random_pairs(1000, 1) {
        let (got, want) = (haversine_km(a, b), oracle_km(a, b));
        assert!(rel(got, want) < 1e-6, "{a:?} {b:?}: {got} vs {want}");
        assert_eq!(got, haversine_km(b, a));
    }
}

#[test]
fn bearing_matches_tangent_oracle() {
    for (a, b) in random_pairs(1000, 2) {
        let got = bearing_deg(a, b).unwrap();
        let want = oracle_bearing(a, b);
        let diff = (got - want + 180.0).rem_euclid(360.0) - 180.0;
        assert!(
            diff.abs() <= 1e-6 * want.max(1.0),
            "{a:?} {b:?}: {got} vs {want}"
        );
        assert!((0.0..360.0).contains(&got));
    }
}

#[test]
fn speed_matches_distance_over_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (a, b) in random_pairs(1000, 3) {
        let dt: f64 = rng.random_range(0.05..24.0);
        let want = oracle_km(a, b) / KM_PER_NMI / dt;
        assert!(rel(speed_knots(a, b, dt).unwrap(), want) < 1e-6);
    }
}

#[test]
fn analytic_examples() {
    let o = GeoPoint { lat: 0.0, lon: 0.0 };
    let east = GeoPoint { lat: 0.0, lon: 1.0 };
    let arc = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
    assert!((haversine_km(o, east) - arc).abs() < 1e-9);
    assert!(
        (haversine_km(
            o,
            GeoPoint {
                lat: 0.0,
                lon: 180.0
            }
        ) - std::f64::consts::PI * EARTH_RADIUS_KM)
            .abs()
            < 1e-6
    );
    assert!((speed_knots(o, east, 1.0).unwrap() - arc / 1.852).abs() < 1e-9);
    assert!((to_gradian(359.0) - 359.0 * 400.0 / 360.0).abs() < 1e-12);
    assert!(bearing_deg(o, o).is_err());
    assert!(speed_knots(o, east, 0.0).is_err());
}

#[test]
fn combined_check_over_thousand_pairs() {
    geodesy_check(1000, 4).unwrap();
}
