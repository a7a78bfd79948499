use mavarena_core::runner::{run_mission, LogEvent};
use mavarena_core::scenario::{MissionKind, ScenarioConfig};

#[test]
fn dbg_landing_trace() {
    let mut config = ScenarioConfig::default();
    config.mission = MissionKind::Landing;
    config.duration = 120.0;
    config.envelope = mavarena_core::plan::FlightEnvelope { v_max: 8.0, a_max: 6.0 };
    config.tracker.n_particles = 600;
    config.agents.start_positions = vec![[30.0, 25.0, 0.0]];
    let (outcome, log) = run_mission(&config, 7);
    println!("outcome: {:?}", outcome.landing);
    let mut shown = 0;
    for r in &log.records {
        match &r.event {
            LogEvent::StateTransition { from, to, reason } => {
                println!("t={:7.2} {} -> {} ({})", r.t, from, to, reason);
            }
            LogEvent::Clearance { d_i, d_ii, clear, .. } if shown < 25 => {
                println!("t={:7.2}   clearance d_i={d_i:.2} d_ii={d_ii:.2} clear={clear}", r.t);
                shown += 1;
            }
            _ => {}
        }
    }
    // altitude trace around first LAND
    let first_land = log.records.iter().find(|r| matches!(&r.event, LogEvent::StateTransition{to,..} if to=="LAND")).map(|r| r.t);
    println!("first land at {:?}", first_land);
    let plans: usize = log.records.iter().filter(|r| matches!(r.event, LogEvent::PlanAdopted{..})).count();
    println!("plans adopted: {plans}");
}
