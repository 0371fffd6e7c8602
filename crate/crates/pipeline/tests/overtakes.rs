use osha_control::{Drive, Expert, TaInput};
use osha_pipeline::{OvertakeConfig, OvertakeTracker};
use osha_sim::{AgentSpawn, Behavior, EgoSpawn, TrackId, World};

fn slow(s: f64, lane: usize, v: f64) -> AgentSpawn {
    AgentSpawn { s, lane, v, length: 4.5, behavior: Behavior::Normal, speed_cap: Some(v) }
}

fn drive(world: World, steps: usize, mut policy: impl FnMut(&Drive) -> TaInput) -> OvertakeTracker {
    let mut d = Drive::new(world);
    let mut t = OvertakeTracker::new(OvertakeConfig::default());
    for _ in 0..steps {
        let (ego, objs) = d.observe();
        let input = policy(&d);
        d.step(input, &ego, &objs);
        t.update(&d.world);
    }
    t
}

#[test]
fn two_slow_leads_are_both_overtaken_by_the_expert() {
    let world = World::scripted(
        TrackId::Straightaway,
        EgoSpawn { s: 100.0, lane: 0, v: 20.0 },
        &[slow(180.0, 0, 12.0), slow(900.0, 0, 12.0)],
    );
    let mut expert = Expert::default();
    let t = drive(world, 6000, |d| {
        let (ego, objs) = d.observe();
        expert.step(d.step_count(), &ego, &objs, d.ta.state)
    });
    assert_eq!((t.overtakes, t.encounters), (2, 2));
    assert_eq!(t.ratio(), Some(1.0));
}

#[test]
fn empty_road_has_no_ratio() {
    let world = World::scripted(TrackId::Straightaway, EgoSpawn { s: 0.0, lane: 0, v: 20.0 }, &[]);
    let t = drive(world, 2000, |d| TaInput::keep(d.observe().0.speed_limit));
    assert_eq!(t.encounters, 0);
    assert_eq!(t.ratio(), None);
}

#[test]
fn staying_behind_a_slow_lead_scores_zero() {
    let world = World::scripted(TrackId::Straightaway, EgoSpawn { s: 100.0, lane: 0, v: 20.0 }, &[slow(180.0, 0, 12.0)]);
    let t = drive(world, 4000, |d| TaInput::keep(d.observe().0.speed_limit));
    assert_eq!(t.encounters, 1);
    assert_eq!(t.ratio(), Some(0.0));
}

#[test]
fn a_lead_at_the_limit_is_not_an_encounter() {
    let limit = 80.0 / 3.6;
    let world = World::scripted(TrackId::Straightaway, EgoSpawn { s: 100.0, lane: 0, v: limit }, &[slow(140.0, 0, limit)]);
    let t = drive(world, 2000, |d| TaInput::keep(d.observe().0.speed_limit));
    assert_eq!(t.encounters, 0);
}
