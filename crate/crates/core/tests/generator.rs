use cpad::scenario::{AgentState, Vec2, LIDAR_RAYS};
use cpad::sim::{generate_indexed, raycast_sensors, GenConfig};
use proptest::prelude::*;
use rayon::prelude::*;

#[test]
fn anomalous_share_near_quarter() {
    let cfg = GenConfig {
        seed: 2024,
        ..GenConfig::default()
    };
    let (anomalous, total) = (0..1500)
        .into_par_iter()
        .map(|i| {
            let s = generate_indexed(&cfg, i).unwrap().scenario;
            let a = s.agents.iter().filter(|a| a.label.as_ref().unwrap().is_anomalous).count();
            (a, s.agents.len())
        })
        .reduce(|| (0, 0), |x, y| (x.0 + y.0, x.1 + y.1));
    let share = anomalous as f64 / total as f64;
    assert!((share - 0.25).abs() <= 0.03, "share {share}");
}

#[test]
fn parallel_generation_matches_sequential() {
    let cfg = GenConfig::default();
    let seq: Vec<_> = (0..8).map(|i| generate_indexed(&cfg, i).unwrap().scenario).collect();
    let par: Vec<_> = (0..8).into_par_iter().map(|i| generate_indexed(&cfg, i).unwrap().scenario).collect();
    assert_eq!(seq, par);
}

fn mirrored(s: &AgentState) -> AgentState {
    AgentState::new(
        Vec2::new(s.position.x, -s.position.y),
        Vec2::new(s.heading.x, -s.heading.y),
        s.speed(),
    )
}

fn scene() -> impl Strategy<Value = Vec<AgentState>> {
    prop::collection::vec((-30.0f64..30.0, -8.0f64..8.0, -0.6f64..0.6, 0.0f64..20.0), 2..6).prop_map(|v| {
        v.into_iter()
            .map(|(x, y, a, sp)| AgentState::new(Vec2::new(x, y), Vec2::from_angle(a), sp))
            .collect()
    })
}

proptest! {
    #[test]
    fn mirrored_scene_mirrors_lidar(agents in scene()) {
        let lanes: Vec<Vec<Vec2>> = (-2..=2)
            .map(|k| vec![Vec2::new(-1e3, k as f64 * 3.5), Vec2::new(1e3, k as f64 * 3.5)])
            .collect();
        let flipped: Vec<AgentState> = agents.iter().map(mirrored).collect();
        let a = raycast_sensors(&lanes, &agents, 0, 50.0);
        let b = raycast_sensors(&lanes, &flipped, 0, 50.0);
        for i in 0..LIDAR_RAYS {
            let j = (LIDAR_RAYS - i) % LIDAR_RAYS;
            prop_assert!((a.lidar[i] - b.lidar[j]).abs() <= 1e-9, "ray {}: {} vs {}", i, a.lidar[i], b.lidar[j]);
        }
    }
}
