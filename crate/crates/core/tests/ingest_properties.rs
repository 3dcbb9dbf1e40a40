//! Curation invariants over random message streams.

mod common;

use common::*;
use proptest::prelude::*;
use voyagecast::features::{
    windows_for_tracks, FeatureSet, Normalizer, NormalizerCaps, INPUT_ROWS, TARGET_ROWS,
};
use voyagecast::grid::{BBox, HexGrid};
use voyagecast::ingest::{
    augment_reverse, clean, curate, segment, split_on_turn, stratify_and_split, CleanConfig,
    CurationConfig,
};
use voyagecast::GeoPoint;

fn grid() -> HexGrid {
    HexGrid::build(BBox::new(46.0, -66.0, 50.0, -58.0).unwrap(), 0.3).unwrap()
}

fn ports() -> Vec<GeoPoint> {
    vec![
        GeoPoint {
            lat: 48.0,
            lon: -62.0,
        },
        GeoPoint {
            lat: 47.2,
            lon: -60.1,
        },
        GeoPoint {
            lat: 49.1,
            lon: -64.4,
        },
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn segmentation_respects_gaps(seed in any::<u64>(), vessels in 1usize..6) {
        let msgs = random_messages(seed, vessels);
        let raw = segment(&msgs, 8.0, 50.0);
        prop_assert_eq!(check_segmentation(&msgs, &raw, 8.0, 50.0), Ok(()));
    }

    #[test]
    fn cleaned_tracks_avoid_ports_and_are_regular(seed in any::<u64>()) {
        let msgs = random_messages(seed, 6);
        let raw = segment(&msgs, 8.0, 50.0);
        let cfg = CleanConfig { min_pattern_count: 0, port_radius_km: 5.0, ..CleanConfig::default() };
        let (tracks, _) = clean(&raw, &ports(), &grid(), &cfg);
        prop_assert_eq!(check_port_scrub(&tracks, &ports(), 5.0), Ok(()));
        prop_assert_eq!(check_spacing(&tracks), Ok(()));
        for t in &tracks {
            prop_assert_eq!(check_turn_split(t, &split_on_turn(t, 45.0), 45.0), Ok(()));
            prop_assert_eq!(check_reversal(t), Ok(()));
        }
        let doubled = augment_reverse(&tracks).unwrap();
        prop_assert_eq!(doubled.len(), 2 * tracks.len());
    }
}

#[test]
fn curated_fork_world_satisfies_every_invariant() {
    let f = fork(5, Some(80));
    let all: Vec<_> = f
        .splits
        .train
        .iter()
        .chain(&f.splits.val)
        .chain(&f.splits.test)
        .cloned()
        .collect();
    check_spacing(&all).unwrap();
    check_port_scrub(&all, &f.world.port_points(), 1.0).unwrap();
    for t in &all {
        assert!(
            t.points.iter().skip(1).all(|p| p.kin.dtheta.abs() <= 45.0),
            "track {} turns too sharply",
            t.track_id
        );
    }
    check_split(&all, &f.splits, 0.2).unwrap();
    let again = stratify_and_split(&all, 0.2, 0.2, 5).unwrap();
    assert_eq!(again.test.len(), f.splits.test.len());
}

#[test]
fn curation_keeps_reversed_pairs() {
    let f = fork(6, Some(30));
    let (tracks, report) = curate(
        &f.corpus.messages,
        &f.world.port_points(),
        &f.grid,
        &CurationConfig::default(),
    )
    .unwrap();
    assert_eq!(report.after_reverse, 2 * report.clean.kept);
    let reversed = tracks.iter().filter(|t| t.reversed).count();
    assert!(reversed > 0 && reversed < tracks.len());
}

#[test]
fn windows_are_nineteen_in_seventy_two_out() {
    let f = fork(7, Some(30));
    let norm = Normalizer::fit(
        FeatureSet::Standard,
        &f.grid.bbox(),
        &NormalizerCaps::default(),
    )
    .unwrap();
    let labels = vec![(None, None); f.splits.train.len()];
    let samples = windows_for_tracks(&f.splits.train, None, &labels, &norm).unwrap();
    assert!(!samples.is_empty());
    check_windows(&samples, norm.arity(), &f.splits.train).unwrap();
    assert_eq!((INPUT_ROWS, TARGET_ROWS), (19, 72));
}

#[test]
fn random_streams_exercise_every_rule() {
    let (mut tracks, mut raws, mut msgs, mut pieces) = (0, 0, 0, 0);
    for seed in 0..20 {
        let m = random_messages(seed, 6);
        let raw = segment(&m, 8.0, 50.0);
        let cfg = CleanConfig {
            min_pattern_count: 0,
            port_radius_km: 5.0,
            ..CleanConfig::default()
        };
        let (t, _) = clean(&raw, &ports(), &grid(), &cfg);
        msgs += m.len();
        raws += raw.len();
        tracks += t.len();
        pieces += t
            .iter()
            .map(|t| split_on_turn(t, 45.0).len())
            .sum::<usize>();
    }
    // 6 vessels per seed, so extra raw tracks come from gap splits
    assert!(raws > 20 * 6, "{raws} raw tracks from {msgs} messages");
    assert!(tracks > 20, "{tracks} cleaned tracks");
    assert!(pieces > tracks, "no turn splits ({pieces} pieces)");
}
