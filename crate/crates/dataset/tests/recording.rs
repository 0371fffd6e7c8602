use std::fs;

use osha_core::LaneChangeCommand;
use osha_dataset::features::{frame_features, FRAME_FEATURES, HISTORY_LEN};
use osha_dataset::process::{FUTURE_OFFSETS, TAIL_TRIM};
use osha_dataset::{compute_stats, preprocess, record_episode, EpisodeSpec, ProcessedDataset, RawEpisode, RASTER_BYTES};
use osha_sim::TrackId;

fn spec(seed: u64, steps: u32, rasters: bool) -> EpisodeSpec {
    let mut s = EpisodeSpec::new(TrackId::Training, 15.0, seed);
    s.steps = steps;
    s.rasters = rasters;
    s
}

#[test]
fn full_episode_gives_ten_thousand_records_deterministically() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    let sa = record_episode(&spec(7, 20_000, false), &a).unwrap();
    record_episode(&spec(7, 20_000, false), &b).unwrap();
    assert_eq!(sa.manifest.collision_step, None);
    assert_eq!(sa.manifest.records, 10_000);
    for f in ["records.bin", "events.log", "transitions.log", "manifest.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let raw = RawEpisode::load(&a).unwrap();
    assert_eq!(raw.records.len(), 10_000);
    assert!(raw.records.iter().enumerate().all(|(i, r)| r.step as usize == 2 * i));
    assert!(raw.records.iter().all(|r| r.ego.command == r.command));
    assert!(!raw.records.iter().any(|r| r.command == LaneChangeCommand::Transition));

    let ds = preprocess(root.path()).unwrap();
    let stats = compute_stats(&ds);
    assert_eq!(stats.processed.samples, 2 * (10_000 - TAIL_TRIM) as u64);
    assert_eq!(stats.raw.left + stats.raw.right, stats.raw.commands);
    assert!(stats.processed.commands >= stats.raw.commands);
    assert!(stats.raw.v_min >= 0.0 && stats.raw.v_max <= osha_core::units::MAX_EGO_SPEED + 1e-9, "{stats:?}");
}

#[test]
fn processed_file_round_trips_byte_for_byte() {
    let root = tempfile::tempdir().unwrap();
    for seed in 0..2 {
        record_episode(&spec(seed, 600, true), &root.path().join(format!("ep{seed:03}"))).unwrap();
    }
    let ds = preprocess(root.path()).unwrap();
    assert!(ds.has_rasters);
    assert_eq!(ds.sample_count(), 2 * (300 - TAIL_TRIM));
    for ep in &ds.episodes {
        assert_eq!(ep.rasters.len(), ep.records.len() * RASTER_BYTES);
    }
    let p1 = root.path().join("one.bin");
    let p2 = root.path().join("two.bin");
    ds.write(&p1).unwrap();
    let back = ProcessedDataset::read(&p1).unwrap();
    assert_eq!(back, ds);
    back.write(&p2).unwrap();
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    assert_eq!(preprocess(root.path()).unwrap().encode(), ds.encode());

    let mut bytes = fs::read(&p1).unwrap();
    bytes.push(0);
    assert!(ProcessedDataset::decode(&bytes).is_err());
    assert!(ProcessedDataset::decode(&bytes[..bytes.len() - 10]).is_err());

    let s = ds.sample(osha_dataset::SampleRef { episode: 1, anchor: 150 });
    assert_eq!(s.history.len(), HISTORY_LEN);
    assert_eq!(s.history[HISTORY_LEN - 1], frame_features(&ds.episodes[1].records[150]));
    assert_eq!(s.raster.unwrap().len(), RASTER_BYTES);
    assert_eq!(s.history[0].len(), FRAME_FEATURES);
}

#[test]
fn futures_repeat_later_current_velocities() {
    let root = tempfile::tempdir().unwrap();
    record_episode(&spec(3, 4000, false), &root.path().join("ep")).unwrap();
    let ds = preprocess(root.path()).unwrap();
    let ep = &ds.episodes[0];
    for (t, f) in ep.futures.iter().enumerate() {
        for (k, &o) in FUTURE_OFFSETS.iter().enumerate() {
            assert_eq!(f.velocities[k], ep.records[t + o].ego.v);
            assert_eq!(f.commands[k], ep.labels[t + o]);
        }
    }
}

#[test]
fn invalid_episodes_are_dropped_and_counted() {
    let root = tempfile::tempdir().unwrap();
    record_episode(&spec(1, 400, false), &root.path().join("good")).unwrap();
    record_episode(&spec(2, 200, false), &root.path().join("short")).unwrap();
    let bad = root.path().join("broken");
    record_episode(&spec(3, 400, false), &bad).unwrap();
    fs::write(bad.join("records.bin"), b"junk").unwrap();
    let ds = preprocess(root.path()).unwrap();
    let stats = compute_stats(&ds);
    assert_eq!(stats.raw.episodes, 3);
    assert_eq!(stats.processed.episodes, 1);
    assert_eq!(stats.dropped.get("invalid"), Some(&1));
    assert_eq!(stats.dropped.get("too_short"), Some(&1));
    let json = serde_json::to_string(&stats).unwrap();
    assert_eq!(serde_json::from_str::<osha_dataset::DatasetStats>(&json).unwrap(), stats);
}
