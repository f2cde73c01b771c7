//! Two-lane straight track with constant-speed obstacle vehicles and a
//! scripted lane-keep-and-overtake ego controller driven by ego-centered
//! occupancy and on-road grids.
//!
//! Ego state is `[x, y, v, theta]`; the recorded trace appends five obstacle
//! position slots `(obs_i_x, obs_i_y)` so the per-step state has a fixed 14
//! dims regardless of how many obstacles are live. Unused slots hold a far
//! sentinel position that can never influence collision robustness.

use super::{Episode, OodScenario};
use crate::trace::Trace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const MAX_OBSTACLES: usize = 5;
/// Far-away filler for unused obstacle slots.
pub const SENTINEL: (f64, f64) = (1.0e4, 1.0e4);
/// Safety clearance between vehicle centers.
pub const SAFETY_MARGIN: f64 = 5.4;
pub const GRID_CELLS: usize = 13;
pub const GRID_STEP: f64 = 3.0;
pub const GRID_EXTENT: f64 = 18.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RacetrackWorld {
    pub lane_width: f64,
    pub wheelbase: f64,
    pub max_steer: f64,
    pub dt: f64,
    pub max_steps: usize,
}

impl Default for RacetrackWorld {
    fn default() -> Self {
        Self {
            lane_width: 5.0,
            wheelbase: 2.5,
            max_steer: 0.5,
            dt: 0.1,
            max_steps: 300,
        }
    }
}

impl RacetrackWorld {
    /// Center of the right (default) or left (overtaking) lane.
    pub fn lane_center(&self, left: bool) -> f64 {
        if left {
            self.lane_width / 2.0
        } else {
            -self.lane_width / 2.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub x: f64,
    pub y: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RacetrackState {
    pub ego: [f64; 4],
    pub obstacles: Vec<Obstacle>,
}

impl RacetrackState {
    /// Fixed-width state row: ego plus all obstacle slots.
    pub fn row(&self) -> Vec<f64> {
        let mut r = self.ego.to_vec();
        for i in 0..MAX_OBSTACLES {
            match self.obstacles.get(i) {
                Some(o) => {
                    r.push(o.x);
                    r.push(o.y);
                }
                None => {
                    r.push(SENTINEL.0);
                    r.push(SENTINEL.1);
                }
            }
        }
        r
    }

    pub fn min_obstacle_distance(&self) -> f64 {
        self.obstacles
            .iter()
            .map(|o| (self.ego[0] - o.x).hypot(self.ego[1] - o.y))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Ego-centered occupancy grid: cell set iff a live obstacle falls in it.
pub fn occupancy_grid(state: &RacetrackState) -> [[bool; GRID_CELLS]; GRID_CELLS] {
    let mut grid = [[false; GRID_CELLS]; GRID_CELLS];
    for o in &state.obstacles {
        let dx = o.x - state.ego[0];
        let dy = o.y - state.ego[1];
        if dx.abs() >= GRID_EXTENT || dy.abs() >= GRID_EXTENT {
            continue;
        }
        let col = ((dx + GRID_EXTENT) / GRID_STEP) as usize;
        let row = ((dy + GRID_EXTENT) / GRID_STEP) as usize;
        grid[row][col] = true;
    }
    grid
}

/// Ego-centered drivable-area grid: cell set iff its center lies on the road.
pub fn on_road_grid(state: &RacetrackState, world: &RacetrackWorld) -> [[bool; GRID_CELLS]; GRID_CELLS] {
    let mut grid = [[false; GRID_CELLS]; GRID_CELLS];
    for (r, row) in grid.iter_mut().enumerate() {
        let y = state.ego[1] + (r as f64 * GRID_STEP - GRID_EXTENT + GRID_STEP / 2.0);
        let on = y.abs() <= world.lane_width;
        for cell in row.iter_mut() {
            *cell = on;
        }
    }
    grid
}

fn bicycle_step(ego: &[f64; 4], steering: f64, world: &RacetrackWorld) -> [f64; 4] {
    let [x, y, v, theta] = *ego;
    let steer = steering.clamp(-world.max_steer, world.max_steer);
    [
        x + v * theta.cos() * world.dt,
        y + v * theta.sin() * world.dt,
        v,
        super::hallway::wrap_angle(theta + v / world.wheelbase * steer.tan() * world.dt),
    ]
}

/// Advances ego and obstacles by one step.
pub fn racetrack_step(state: &RacetrackState, steering: f64, world: &RacetrackWorld) -> RacetrackState {
    let ego = bicycle_step(&state.ego, steering, world);
    let obstacles = state
        .obstacles
        .iter()
        .map(|o| Obstacle {
            x: o.x + o.speed * world.dt,
            ..*o
        })
        .collect();
    RacetrackState { ego, obstacles }
}

/// Grid-driven lane choice and heading control: keep the right lane, swing
/// left when the occupancy grid shows a blocked cell ahead in the current
/// lane, come back once the right lane is clear alongside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvertakePolicy {
    pub k_lane: f64,
    pub k_heading: f64,
    pub max_heading: f64,
}

impl OvertakePolicy {
    pub fn tuned() -> Self {
        Self {
            k_lane: 0.25,
            k_heading: 2.0,
            max_heading: 0.35,
        }
    }

    fn lane_blocked(grid: &[[bool; GRID_CELLS]; GRID_CELLS], lane_dy: f64, ego_y: f64, ahead_cols: std::ops::Range<usize>) -> bool {
        // rows covering the lane band (lane center +- half width = 2.5)
        let lane_world = lane_dy - ego_y; // lane center relative to ego
        for row in 0..GRID_CELLS {
            let cell_dy = row as f64 * GRID_STEP - GRID_EXTENT + GRID_STEP / 2.0;
            if (cell_dy - lane_world).abs() > 2.5 + GRID_STEP / 2.0 {
                continue;
            }
            for col in ahead_cols.clone() {
                if grid[row][col] {
                    return true;
                }
            }
        }
        false
    }

    pub fn steering(&self, state: &RacetrackState, world: &RacetrackWorld) -> f64 {
        let grid = occupancy_grid(state);
        let ego_y = state.ego[1];
        let right = world.lane_center(false);
        let left = world.lane_center(true);
        // columns strictly ahead of ego, out to the grid edge (3..18 m)
        let ahead = 7..GRID_CELLS;
        // columns alongside and slightly behind, for merging back (-6..+6 m)
        let beside = 4..11;
        let in_left_lane = ego_y > 0.0;
        let target = if in_left_lane {
            if Self::lane_blocked(&grid, right, ego_y, beside.clone())
                || Self::lane_blocked(&grid, right, ego_y, ahead.clone())
            {
                left
            } else {
                right
            }
        } else if Self::lane_blocked(&grid, right, ego_y, ahead) {
            left
        } else {
            right
        };
        let theta_des = (self.k_lane * (target - ego_y)).clamp(-self.max_heading, self.max_heading);
        self.k_heading * (theta_des - state.ego[3])
    }
}

/// Seeded rollout with `n` obstacles (1 unless the scenario raises it).
/// Obstacles spawn ahead of the ego at staggered gaps in random lanes;
/// speeds are sorted ascending with distance so obstacles never collide with
/// one another. Terminates at the first step the ego comes within the safety
/// margin of any obstacle.
pub fn simulate(world: &RacetrackWorld, scenario: &OodScenario, seed: u64) -> Result<Episode, String> {
    let n = match scenario {
        OodScenario::None => 1,
        OodScenario::ExtraObstacles { n } => {
            if !(1..=MAX_OBSTACLES).contains(n) {
                return Err(format!("obstacle count {n} out of range 1..={MAX_OBSTACLES}"));
            }
            *n
        }
        other => return Err(format!("scenario {other:?} is not a racetrack scenario")),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ego_speed = rng.gen_range(5.0..=9.0);
    let mut xs = Vec::with_capacity(n);
    let mut x = rng.gen_range(20.0..=40.0);
    for _ in 0..n {
        xs.push(x);
        x += rng.gen_range(25.0..=45.0);
    }
    let mut speeds: Vec<f64> = (0..n).map(|_| rng.gen_range(3.5..=7.5)).collect();
    speeds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let obstacles: Vec<Obstacle> = xs
        .iter()
        .zip(&speeds)
        .map(|(&x, &speed)| Obstacle {
            x,
            y: world.lane_center(rng.gen_bool(0.5)),
            speed,
        })
        .collect();
    let mut state = RacetrackState {
        ego: [0.0, world.lane_center(false), ego_speed, 0.0],
        obstacles,
    };
    let policy = OvertakePolicy::tuned();

    let mut rows = Vec::with_capacity(world.max_steps);
    let mut violation_time = None;
    for t in 0..world.max_steps {
        rows.push(state.row());
        if state.min_obstacle_distance() <= SAFETY_MARGIN {
            violation_time = Some(t);
            break;
        }
        let steering = policy.steering(&state, world);
        state = racetrack_step(&state, steering, world);
    }
    let mut labels: Vec<String> = ["x", "y", "v", "theta"].map(String::from).to_vec();
    for i in 1..=MAX_OBSTACLES {
        labels.push(format!("obs_{i}_x"));
        labels.push(format!("obs_{i}_y"));
    }
    let trace = Trace::new(rows, world.dt).unwrap().with_labels(labels);
    Ok(Episode {
        trace,
        violation_time,
        scenario: *scenario,
        seed,
        observations: Vec::new(),
    })
}

/// Violation rate over `n` seeded episodes.
pub fn violation_rate(world: &RacetrackWorld, scenario: &OodScenario, n: u64, seed0: u64) -> f64 {
    let mut v = 0;
    for s in 0..n {
        if simulate(world, scenario, seed0 + s).expect("valid scenario").violating() {
            v += 1;
        }
    }
    v as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_obstacles_reduces_to_ego_kinematics() {
        let world = RacetrackWorld::default();
        let state = RacetrackState {
            ego: [0.0, -2.5, 6.0, 0.0],
            obstacles: vec![],
        };
        let next = racetrack_step(&state, 0.1, &world);
        assert_eq!(next.ego, bicycle_step(&state.ego, 0.1, &world));
        assert!(next.obstacles.is_empty());
    }

    #[test]
    fn closing_gap_decreases_monotonically() {
        let world = RacetrackWorld::default();
        let mut state = RacetrackState {
            ego: [0.0, -2.5, 8.0, 0.0],
            obstacles: vec![Obstacle { x: 60.0, y: -2.5, speed: 4.0 }],
        };
        let mut prev_gap = state.obstacles[0].x - state.ego[0];
        for _ in 0..30 {
            state = racetrack_step(&state, 0.0, &world);
            let gap = state.obstacles[0].x - state.ego[0];
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
    }

    #[test]
    fn occupancy_grid_marks_obstacle_cell() {
        let state = RacetrackState {
            ego: [100.0, -2.5, 6.0, 0.0],
            obstacles: vec![
                Obstacle { x: 110.0, y: 2.5, speed: 5.0 }, // dx=10, dy=5
                Obstacle { x: 200.0, y: -2.5, speed: 5.0 }, // off-grid
            ],
        };
        let grid = occupancy_grid(&state);
        let col = ((10.0 + GRID_EXTENT) / GRID_STEP) as usize;
        let row = ((5.0 + GRID_EXTENT) / GRID_STEP) as usize;
        assert!(grid[row][col]);
        assert_eq!(
            grid.iter().flatten().filter(|&&c| c).count(),
            1,
            "off-grid obstacle must not appear"
        );
    }

    #[test]
    fn on_road_grid_is_a_band() {
        let world = RacetrackWorld::default();
        let state = RacetrackState {
            ego: [0.0, -2.5, 6.0, 0.0],
            obstacles: vec![],
        };
        let grid = on_road_grid(&state, &world);
        assert_eq!(grid.len(), GRID_CELLS);
        // row centered on the ego (dy = 1.5) is on-road; top row (dy = 16.5) is not
        assert!(grid[6][0]);
        assert!(!grid[12][0]);
    }

    #[test]
    fn row_has_fixed_width_with_sentinels() {
        let state = RacetrackState {
            ego: [0.0, -2.5, 6.0, 0.0],
            obstacles: vec![Obstacle { x: 30.0, y: -2.5, speed: 5.0 }],
        };
        let row = state.row();
        assert_eq!(row.len(), 4 + 2 * MAX_OBSTACLES);
        assert_eq!(row[4], 30.0);
        assert_eq!(row[6], SENTINEL.0);
        assert_eq!(row[13], SENTINEL.1);
    }

    #[test]
    fn deterministic_and_both_outcome_classes_present() {
        let world = RacetrackWorld::default();
        let a = simulate(&world, &OodScenario::ExtraObstacles { n: 5 }, 9).unwrap();
        let b = simulate(&world, &OodScenario::ExtraObstacles { n: 5 }, 9).unwrap();
        assert_eq!(a, b);

        for n in [1usize, 5] {
            let rate = violation_rate(&world, &OodScenario::ExtraObstacles { n }, 50, 0);
            assert!(rate > 0.0 && rate < 1.0, "n={n}: rate {rate}");
        }
    }

    #[test]
    fn more_obstacles_raise_the_violation_rate() {
        let world = RacetrackWorld::default();
        let r1 = violation_rate(&world, &OodScenario::None, 60, 10);
        let r5 = violation_rate(&world, &OodScenario::ExtraObstacles { n: 5 }, 60, 10);
        assert!(r5 > r1, "r1={r1} r5={r5}");
    }

    #[test]
    fn rejects_bad_scenarios() {
        let world = RacetrackWorld::default();
        assert!(simulate(&world, &OodScenario::ExtraObstacles { n: 9 }, 0).is_err());
        assert!(simulate(&world, &OodScenario::DropRays { k: 3 }, 0).is_err());
    }
}
