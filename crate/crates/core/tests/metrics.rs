mod common;

#[test]
fn hand_computed_fixtures() {
    common::metric_fixtures().unwrap();
}

#[test]
fn identical_tracks_score_perfectly() {
    use voyagecast::eval::error_report;
    use voyagecast::GeoPoint;
    let pts: Vec<GeoPoint> = (0..10)
        .map(|i| GeoPoint {
            lat: 47.0 + 0.1 * i as f64,
            lon: -60.0,
        })
        .collect();
    let scaled: Vec<[f64; 2]> = pts.iter().map(|p| [p.lat, p.lon]).collect();
    let r = error_report(&pts, &pts, &scaled, &scaled).unwrap();
    assert_eq!(
        (
            r.mean_km,
            r.errors_km.iter().copied().fold(0.0, f64::max),
            r.r2,
            r.mae,
            r.mse
        ),
        (0.0, 0.0, 1.0, 0.0, 0.0)
    );
}
