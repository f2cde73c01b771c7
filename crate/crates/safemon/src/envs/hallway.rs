//! Square-hallway car with a 21-ray LIDAR and a scripted wall-following
//! controller, plus the LIDAR corruption scenarios (dropped rays, additive
//! uniform noise).
//!
//! The corridor is the gap between two concentric axis-aligned squares
//! (outer side 20 m, inner side 17 m, so the corridor is 1.5 m wide). The
//! car is a kinematic bicycle at constant speed that follows the inner wall
//! counterclockwise.

use super::{Episode, OodScenario};
use crate::monitor::Segment;
use crate::trace::Trace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const NUM_RAYS: usize = 21;
pub const RAY_SPAN_DEG: f64 = 270.0;
pub const LIDAR_RANGE: f64 = 5.0;
/// Safety clearance from walls.
pub const SAFETY_MARGIN: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallwayWorld {
    pub outer_half: f64,
    pub inner_half: f64,
    pub wheelbase: f64,
    pub speed: f64,
    pub max_steer: f64,
    pub dt: f64,
    pub max_steps: usize,
}

impl Default for HallwayWorld {
    fn default() -> Self {
        Self {
            outer_half: 10.0,
            inner_half: 8.5,
            wheelbase: 0.32,
            speed: 2.0,
            max_steer: 0.4,
            dt: 0.1,
            max_steps: 200,
        }
    }
}

impl HallwayWorld {
    /// The eight wall segments: outer square and inner square.
    pub fn walls(&self) -> Vec<Segment> {
        let square = |h: f64| {
            vec![
                Segment::new(-h, -h, h, -h),
                Segment::new(h, -h, h, h),
                Segment::new(h, h, -h, h),
                Segment::new(-h, h, -h, -h),
            ]
        };
        let mut w = square(self.outer_half);
        w.extend(square(self.inner_half));
        w
    }

    /// Whether a point lies strictly inside the corridor.
    pub fn inside(&self, p: (f64, f64)) -> bool {
        let m = p.0.abs().max(p.1.abs());
        self.inner_half < m && m < self.outer_half
    }

    /// Distance from a point to the nearest wall.
    pub fn wall_distance(&self, p: (f64, f64)) -> f64 {
        self.walls()
            .iter()
            .map(|s| s.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HallwayError {
    #[error("car at ({0}, {1}) is outside the corridor")]
    OutsideWorld(f64, f64),
    #[error("scenario {0:?} is not a LIDAR scenario")]
    ScenarioMismatch(OodScenario),
}

/// Angle of ray `i` relative to the car heading, radians. Rays sweep the
/// span low-to-high, so index 0 points to -135 degrees and the middle ray
/// straight ahead.
pub fn ray_angle(i: usize) -> f64 {
    let step = RAY_SPAN_DEG / (NUM_RAYS - 1) as f64;
    (-RAY_SPAN_DEG / 2.0 + step * i as f64).to_radians()
}

fn ray_segment_distance(origin: (f64, f64), dir: (f64, f64), seg: &Segment) -> Option<f64> {
    // origin + t*dir = a + u*(b-a), t >= 0, u in [0, 1]
    let (ax, ay) = seg.a;
    let (ex, ey) = (seg.b.0 - ax, seg.b.1 - ay);
    let det = dir.0 * (-ey) - dir.1 * (-ex);
    if det.abs() < 1e-15 {
        return None;
    }
    let (rx, ry) = (ax - origin.0, ay - origin.1);
    let t = (rx * (-ey) - ry * (-ex)) / det;
    let u = (dir.0 * ry - dir.1 * rx) / det;
    if t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u) {
        Some(t)
    } else {
        None
    }
}

/// Exact per-ray distances to the nearest wall, clipped to the sensor range.
pub fn lidar_scan(state: &[f64; 4], world: &HallwayWorld) -> Result<Vec<f64>, HallwayError> {
    let p = (state[0], state[1]);
    if !world.inside(p) {
        return Err(HallwayError::OutsideWorld(p.0, p.1));
    }
    let walls = world.walls();
    let mut scan = Vec::with_capacity(NUM_RAYS);
    for i in 0..NUM_RAYS {
        let a = state[3] + ray_angle(i);
        let dir = (a.cos(), a.sin());
        let mut best = f64::INFINITY;
        for seg in &walls {
            if let Some(t) = ray_segment_distance(p, dir, seg) {
                best = best.min(t);
            }
        }
        scan.push(best.min(LIDAR_RANGE));
    }
    Ok(scan)
}

/// Evenly spaced (centered) ray indices zeroed by the drop-rays scenario.
pub fn dropped_indices(k: usize) -> Vec<usize> {
    (0..k).map(|j| (2 * j + 1) * NUM_RAYS / (2 * k)).collect()
}

/// Applies a LIDAR corruption scenario to a scan.
pub fn apply_ood(
    scan: &[f64],
    scenario: &OodScenario,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, HallwayError> {
    match scenario {
        OodScenario::DropRays { k } => {
            let mut out = scan.to_vec();
            for i in dropped_indices(*k) {
                out[i] = 0.0;
            }
            Ok(out)
        }
        OodScenario::LidarNoise { b } => Ok(scan
            .iter()
            .map(|&r| {
                let noisy = r + if *b > 0.0 { rng.gen_range(0.0..=*b) } else { 0.0 };
                noisy.clamp(0.0, LIDAR_RANGE)
            })
            .collect()),
        other => Err(HallwayError::ScenarioMismatch(*other)),
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    } else if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    }
    a
}

/// Kinematic bicycle update at constant speed.
pub fn car_step(state: &[f64; 4], steering: f64, world: &HallwayWorld) -> [f64; 4] {
    let [x, y, v, theta] = *state;
    let steer = steering.clamp(-world.max_steer, world.max_steer);
    let nx = x + v * theta.cos() * world.dt;
    let ny = y + v * theta.sin() * world.dt;
    let ntheta = wrap_angle(theta + v / world.wheelbase * steer.tan() * world.dt);
    [nx, ny, world.speed, ntheta]
}

/// Scripted left-wall follower operating purely on the (possibly corrupted)
/// scan. Estimates the left wall's angle and distance from two left-side
/// rays, regulates toward the corridor center, and steers hard left when the
/// forward ray gets short (corner ahead).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallFollower {
    pub desired_distance: f64,
    pub kp: f64,
    pub lookahead: f64,
    pub front_brake_distance: f64,
    /// Low-pass weight on the new command; 1 disables smoothing.
    pub smoothing: f64,
    /// Cap on the wall-regulation term; corner evasion is exempt.
    pub max_correction: f64,
}

impl WallFollower {
    pub fn tuned() -> Self {
        Self {
            desired_distance: 0.75,
            kp: 1.0,
            lookahead: 1.0,
            front_brake_distance: 1.6,
            smoothing: 0.5,
            max_correction: 0.06,
        }
    }

    /// A reading at (or beyond) either end of the sensor range carries no
    /// geometry: zero means a dropped return, max range means no return.
    fn valid(r: f64) -> bool {
        r > 0.05 && r < LIDAR_RANGE - 1e-9
    }

    /// Raw two-ray wall-angle statistic for a parallel wall; rays 14 and 17
    /// are not at exactly 45/90 degrees, so a parallel pose reads a nonzero
    /// constant that must be subtracted out.
    fn parallel_bias() -> f64 {
        let (pa, pb) = (ray_angle(14), ray_angle(17));
        let delta = pb - pa;
        (delta.cos() / pa.sin() - 1.0 / pb.sin()).atan2(delta.sin() / pa.sin())
    }

    /// Raw steering command; `prev` is held when the wall rays carry no
    /// usable geometry.
    pub fn steering(&self, scan: &[f64], prev: f64) -> f64 {
        // rays at +94.5 (near-perpendicular to the left wall) and +54 degrees
        let b = scan[17];
        let a = scan[14];
        let mut steer = if Self::valid(a) && Self::valid(b) {
            let theta_ab = ray_angle(17) - ray_angle(14);
            let alpha = (a * theta_ab.cos() - b).atan2(a * theta_ab.sin());
            // heading relative to the wall, positive = nose toward the wall
            let heading = Self::parallel_bias() - alpha;
            // perpendicular distance to the wall, projected one lookahead ahead
            let dist = b * (ray_angle(17) + heading).sin();
            let projected = dist - self.lookahead * heading.sin();
            (self.kp * (projected - self.desired_distance))
                .clamp(-self.max_correction, self.max_correction)
        } else if Self::valid(b) {
            // fallback: distance from the near-perpendicular ray alone,
            // parallel pose assumed
            let dist = b * ray_angle(17).sin();
            (self.kp * (dist - self.desired_distance))
                .clamp(-self.max_correction, self.max_correction)
        } else {
            prev
        };
        if Self::valid(scan[10]) && scan[10] < self.front_brake_distance {
            // corner ahead: turn left, away from the outer wall
            steer = 0.4;
        }
        steer
    }
}

/// Seeded rollout: scan, corrupt, steer, step, until wall contact (distance
/// within the safety margin) or the step cap.
pub fn simulate(
    world: &HallwayWorld,
    controller: &WallFollower,
    scenario: &OodScenario,
    seed: u64,
) -> Result<Episode, HallwayError> {
    if !matches!(scenario, OodScenario::None) && !scenario.is_lidar_kind() {
        return Err(HallwayError::ScenarioMismatch(*scenario));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // start in the bottom corridor heading +x (counterclockwise)
    let mut state: [f64; 4] = [
        rng.gen_range(-8.0..=0.0),
        -(world.inner_half + world.outer_half) / 2.0 + rng.gen_range(-0.3..=0.3),
        world.speed,
        rng.gen_range(-0.15..=0.15),
    ];
    let mut rows = Vec::with_capacity(world.max_steps);
    let mut observations = Vec::with_capacity(world.max_steps);
    let mut violation_time = None;
    let mut command = 0.0;
    for t in 0..world.max_steps {
        rows.push(state.to_vec());
        if world.wall_distance((state[0], state[1])) <= SAFETY_MARGIN {
            violation_time = Some(t);
            break;
        }
        let scan = lidar_scan(&state, world)?;
        let corrupted = match scenario {
            OodScenario::None => scan,
            s => apply_ood(&scan, s, &mut rng)?,
        };
        let raw = controller.steering(&corrupted, command);
        command += controller.smoothing * (raw - command);
        observations.push(corrupted);
        state = car_step(&state, command, world);
        if !world.inside((state[0], state[1])) {
            // wall was crossed within one step; land the car on the contact
            // boundary so the violation is recorded rather than lost
            rows.push(state.to_vec());
            violation_time = Some(t + 1);
            break;
        }
    }
    let trace = Trace::new(rows, world.dt)
        .unwrap()
        .with_labels(["x", "y", "v", "theta"].map(String::from).to_vec());
    Ok(Episode {
        trace,
        violation_time,
        scenario: *scenario,
        seed,
        observations,
    })
}

/// Violation rate over `n` seeded episodes.
pub fn violation_rate(
    world: &HallwayWorld,
    controller: &WallFollower,
    scenario: &OodScenario,
    n: u64,
    seed0: u64,
) -> f64 {
    let mut violations = 0;
    for s in 0..n {
        if simulate(world, controller, scenario, seed0 + s)
            .expect("valid scenario")
            .violating()
        {
            violations += 1;
        }
    }
    violations as f64 / n as f64
}
