//! World simulation: the odometry motion model, position and auxiliary
//! measurements, and the scripted cooperative-transportation scenario.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::SimError;

/// Planar pose with the heading wrapped to `(−π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = theta % two_pi;
    if t <= -std::f64::consts::PI {
        t += two_pi;
    } else if t > std::f64::consts::PI {
        t -= two_pi;
    }
    t
}

/// Odometry controls: rotate by `alpha`, translate by `r`, rotate by `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub alpha: f64,
    pub r: f64,
    pub beta: f64,
}

/// One step of the odometry motion model.
pub fn motion_step(prev: Pose, u: ControlInput, w: &[f64; 3]) -> Pose {
    Pose::new(
        prev.x + u.r * (prev.theta + u.alpha).cos() + w[0],
        prev.y + u.r * (prev.theta + u.alpha).sin() + w[1],
        prev.theta + u.alpha + u.beta + w[2],
    )
}

/// Noisy position measurement of a pose.
pub fn position_measurement(pose: Pose, v: &[f64; 2]) -> [f64; 2] {
    [pose.x + v[0], pose.y + v[1]]
}

/// Noiseless auxiliary measurement over the cooperating robots: for each
/// consecutive pair, the inter-robot distance and relative orientation.
pub fn auxiliary_measurement(poses: &[Pose]) -> DVector<f64> {
    assert!(poses.len() >= 2, "auxiliary measurement needs at least two robots");
    let mut out = DVector::zeros(2 * (poses.len() - 1));
    for i in 1..poses.len() {
        let a = poses[i - 1];
        let b = poses[i];
        out[2 * (i - 1)] = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
        out[2 * (i - 1) + 1] = b.theta - a.theta;
    }
    out
}

/// Scenario configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub robot_count: usize,
    /// Number of time steps `K`.
    pub steps: usize,
    /// Cooperation window `[k_start, k_end]`, 1-based inclusive. The object
    /// is picked up at `k_start − 1` and carried through `k_end`.
    pub window: (usize, usize),
    /// Indices of the cooperating robots (consecutive pairing order).
    pub cooperating: Vec<usize>,
    /// Grip-point spacing of the transported object between consecutive
    /// cooperating robots (metres).
    pub object_spacing: f64,
    /// Process noise variances `(x, y, θ)`.
    pub sigma_w: [f64; 3],
    /// Measurement noise variances `(x, y)`.
    pub sigma_v: [f64; 2],
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            robot_count: 3,
            steps: 40,
            window: (11, 30),
            cooperating: vec![0, 1, 2],
            object_spacing: 1.2,
            sigma_w: [0.01, 0.01, 0.0004],
            sigma_v: [0.04, 0.04],
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.robot_count == 0 || self.steps == 0 {
            return Err(SimError::Config("need at least one robot and one step".into()));
        }
        let (a, b) = self.window;
        if !self.window_empty() {
            if a < 1 || a > b || b > self.steps {
                return Err(SimError::Config(format!(
                    "window [{a}, {b}] outside 1..={}",
                    self.steps
                )));
            }
            if self.cooperating.len() < 2 {
                return Err(SimError::Config(
                    "cooperation window needs at least two robots".into(),
                ));
            }
        }
        for &i in &self.cooperating {
            if i >= self.robot_count {
                return Err(SimError::Config(format!("cooperating robot {i} out of range")));
            }
        }
        if self.sigma_w.iter().any(|&v| v < 0.0) || self.sigma_v.iter().any(|&v| v < 0.0) {
            return Err(SimError::Config("noise variances must be non-negative".into()));
        }
        if self.object_spacing < 0.1 {
            return Err(SimError::Config(
                "object spacing below the 0.1 m minimum robot separation".into(),
            ));
        }
        Ok(())
    }

    pub fn window_empty(&self) -> bool {
        self.window.0 > self.window.1
    }

    fn in_window(&self, k: usize) -> bool {
        !self.window_empty() && k >= self.window.0 && k <= self.window.1
    }

    /// Auxiliary targets of the carried object: distances `object_spacing`
    /// and zero relative orientation per consecutive pair.
    pub fn object_geometry(&self) -> DVector<f64> {
        let pairs = self.cooperating.len().saturating_sub(1);
        let mut g = DVector::zeros(2 * pairs);
        for p in 0..pairs {
            g[2 * p] = self.object_spacing;
        }
        g
    }
}

/// Ground truth and measurements from one simulated run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub config: WorldConfig,
    /// `poses[k][i]` is robot `i` after step `k`; index 0 is the initial pose.
    pub poses: Vec<Vec<Pose>>,
    /// `controls[k-1][i]` drives robot `i` through step `k`.
    pub controls: Vec<Vec<ControlInput>>,
    /// Noisy position measurements, `2 * robot_count` per step.
    pub position_measurements: Vec<DVector<f64>>,
    /// Auxiliary rows for window steps (`None` outside the window).
    pub auxiliary_measurements: Vec<Option<DVector<f64>>>,
}

fn sample_normal(rng: &mut ChaCha12Rng) -> f64 {
    // Box–Muller; deterministic for a fixed stream.
    loop {
        let u1: f64 = rng.random();
        if u1 > f64::MIN_POSITIVE {
            let u2: f64 = rng.random();
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

/// Scripted controls for the approach/transport/release phases.
///
/// Before pickup the robots converge with distinct curvatures; at the pickup
/// step the cooperating robots dock onto the object grip points; during the
/// window the whole formation translates rigidly; afterwards the robots
/// fan out again.
pub fn simulate(config: &WorldConfig) -> Result<SimulationRecord, SimError> {
    config.validate()?;
    let n = config.robot_count;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);

    // Start poses: spread across y, heading along +x, converging later.
    let mut poses: Vec<Vec<Pose>> = Vec::with_capacity(config.steps + 1);
    poses.push(
        (0..n)
            .map(|i| Pose::new(0.0, 2.0 * i as f64, 0.0))
            .collect(),
    );

    let mut controls = Vec::with_capacity(config.steps);
    let mut position_measurements = Vec::with_capacity(config.steps);
    let mut auxiliary_measurements = Vec::with_capacity(config.steps);

    let sw = [
        config.sigma_w[0].sqrt(),
        config.sigma_w[1].sqrt(),
        config.sigma_w[2].sqrt(),
    ];
    let sv = [config.sigma_v[0].sqrt(), config.sigma_v[1].sqrt()];
    let pickup_step = if config.window_empty() { usize::MAX } else { config.window.0 - 1 };

    for k in 1..=config.steps {
        let prev = poses.last().unwrap().clone();
        let mut next = Vec::with_capacity(n);
        let mut us = Vec::with_capacity(n);

        if config.in_window(k) {
            // Rigid transport (the docking step `k_start` lands exactly on
            // the grip formation; later window steps translate it).
            let dir = 0.12 * ((k as f64) * 0.25).sin();
            let step_len = 0.4;
            let centroid_y: f64 = config
                .cooperating
                .iter()
                .map(|&i| prev[i].y)
                .sum::<f64>()
                / config.cooperating.len() as f64;
            let centroid_x: f64 = config
                .cooperating
                .iter()
                .map(|&i| prev[i].x)
                .sum::<f64>()
                / config.cooperating.len() as f64;
            // Shared rigid-body noise: the grip constrains relative motion.
            let w_shared = [
                sw[0] * sample_normal(&mut rng),
                sw[1] * sample_normal(&mut rng),
                sw[2] * sample_normal(&mut rng),
            ];
            for (slot, &i) in config.cooperating.iter().enumerate() {
                let target = if k == config.window.0 {
                    // Dock: grip point for this robot, one step ahead of the
                    // formation centroid.
                    let offset = (slot as f64
                        - (config.cooperating.len() as f64 - 1.0) / 2.0)
                        * config.object_spacing;
                    Pose::new(
                        centroid_x + step_len * dir.cos(),
                        centroid_y + offset + step_len * dir.sin(),
                        0.0,
                    )
                } else {
                    Pose::new(
                        prev[i].x + step_len * dir.cos(),
                        prev[i].y + step_len * dir.sin(),
                        prev[i].theta,
                    )
                };
                // Controls that reach the target exactly from prev[i].
                let dx = target.x - prev[i].x;
                let dy = target.y - prev[i].y;
                let alpha = wrap_angle(dy.atan2(dx) - prev[i].theta);
                let r = (dx * dx + dy * dy).sqrt();
                let beta = wrap_angle(target.theta - prev[i].theta - alpha);
                let u = ControlInput { alpha, r, beta };
                us.push((i, u));
                // Apply the shared noise rigidly: equal world-frame offsets
                // keep distances and relative orientations bit-identical.
                next.push((
                    i,
                    Pose::new(
                        target.x + w_shared[0],
                        target.y + w_shared[1],
                        target.theta + w_shared[2],
                    ),
                ));
            }
            // Non-cooperating robots keep wandering independently.
            for i in 0..n {
                if config.cooperating.contains(&i) {
                    continue;
                }
                let u = independent_control(k, i);
                let w = [
                    sw[0] * sample_normal(&mut rng),
                    sw[1] * sample_normal(&mut rng),
                    sw[2] * sample_normal(&mut rng),
                ];
                us.push((i, u));
                next.push((i, motion_step(prev[i], u, &w)));
            }
        } else {
            for i in 0..n {
                let u = if k <= pickup_step {
                    approach_control(k, i, n)
                } else {
                    independent_control(k, i)
                };
                let w = [
                    sw[0] * sample_normal(&mut rng),
                    sw[1] * sample_normal(&mut rng),
                    sw[2] * sample_normal(&mut rng),
                ];
                us.push((i, u));
                next.push((i, motion_step(prev[i], u, &w)));
            }
        }

        us.sort_by_key(|(i, _)| *i);
        next.sort_by_key(|(i, _)| *i);
        let next: Vec<Pose> = next.into_iter().map(|(_, p)| p).collect();
        controls.push(us.into_iter().map(|(_, u)| u).collect::<Vec<_>>());

        let mut z = DVector::zeros(2 * n);
        for i in 0..n {
            let v = [sv[0] * sample_normal(&mut rng), sv[1] * sample_normal(&mut rng)];
            let m = position_measurement(next[i], &v);
            z[2 * i] = m[0];
            z[2 * i + 1] = m[1];
        }
        position_measurements.push(z);

        if config.in_window(k) {
            let coop_poses: Vec<Pose> = config.cooperating.iter().map(|&i| next[i]).collect();
            auxiliary_measurements.push(Some(auxiliary_measurement(&coop_poses)));
        } else {
            auxiliary_measurements.push(None);
        }

        poses.push(next);
    }

    Ok(SimulationRecord {
        config: config.clone(),
        poses,
        controls,
        position_measurements,
        auxiliary_measurements,
    })
}

/// Converging approach: distinct forward speeds and curvature per robot, with
/// a pull towards the formation centre line.
fn approach_control(k: usize, robot: usize, count: usize) -> ControlInput {
    let spread = robot as f64 - (count as f64 - 1.0) / 2.0;
    let alpha = -0.10 * spread + 0.05 * ((k as f64) * 0.6 + robot as f64).sin();
    ControlInput {
        alpha,
        r: 0.30 + 0.08 * robot as f64,
        beta: -alpha + 0.04 * spread,
    }
}

/// Post-release wandering: the robots fan out with distinct headings.
fn independent_control(k: usize, robot: usize) -> ControlInput {
    let fan = 0.12 * (robot as f64 - 1.0);
    ControlInput {
        alpha: fan + 0.05 * ((k as f64) * 0.4).cos(),
        r: 0.35 + 0.05 * robot as f64,
        beta: -0.5 * fan,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn motion_step_axis_cases() {
        let p = motion_step(
            Pose::new(2.0, 1.0, 0.0),
            ControlInput { alpha: 0.0, r: 1.0, beta: 0.0 },
            &[0.0; 3],
        );
        assert_abs_diff_eq!(p.x, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.theta, 0.0, epsilon = 1e-12);

        let p = motion_step(
            Pose::new(0.0, 0.0, 0.0),
            ControlInput { alpha: std::f64::consts::FRAC_PI_2, r: 1.0, beta: 0.0 },
            &[0.0; 3],
        );
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.theta, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn motion_step_matches_scalar_recomputation() {
        // Independent re-evaluation of the odometry equations.
        let prev = Pose::new(0.7, -1.2, 0.4);
        let u = ControlInput { alpha: -0.3, r: 1.7, beta: 0.2 };
        let w = [0.05, -0.02, 0.01];
        let p = motion_step(prev, u, &w);
        assert_abs_diff_eq!(p.x, 0.7 + 1.7 * f64::cos(0.4 - 0.3) + 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, -1.2 + 1.7 * f64::sin(0.4 - 0.3) - 0.02, epsilon = 1e-12);
        assert_abs_diff_eq!(p.theta, 0.4 - 0.3 + 0.2 + 0.01, epsilon = 1e-12);
    }

    #[test]
    fn heading_wraps_into_interval() {
        let p = motion_step(
            Pose::new(0.0, 0.0, 3.0),
            ControlInput { alpha: 0.5, r: 0.0, beta: 0.5 },
            &[0.0; 3],
        );
        assert!(p.theta <= std::f64::consts::PI && p.theta > -std::f64::consts::PI);
        assert_abs_diff_eq!(p.theta, 4.0 - 2.0 * std::f64::consts::PI, epsilon = 1e-12);
    }

    #[test]
    fn position_measurement_examples() {
        let m = position_measurement(Pose::new(1.0, 2.0, 0.3), &[0.0, 0.0]);
        assert_eq!(m, [1.0, 2.0]);
        let m = position_measurement(Pose::new(1.0, 2.0, 0.3), &[0.1, -0.1]);
        assert_abs_diff_eq!(m[0], 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(m[1], 1.9, epsilon = 1e-12);
    }

    #[test]
    fn measurement_noise_has_configured_covariance() {
        // Monte-Carlo check of the sampled noise against Σ_v.
        let config = WorldConfig { steps: 1, ..WorldConfig::default() };
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 100_000;
        let mut sum = [0.0f64; 2];
        let mut sumsq = [0.0f64; 2];
        for _ in 0..n {
            let v = [
                config.sigma_v[0].sqrt() * sample_normal(&mut rng),
                config.sigma_v[1].sqrt() * sample_normal(&mut rng),
            ];
            sum[0] += v[0];
            sum[1] += v[1];
            sumsq[0] += v[0] * v[0];
            sumsq[1] += v[1] * v[1];
        }
        for d in 0..2 {
            let mean = sum[d] / n as f64;
            let var = sumsq[d] / n as f64 - mean * mean;
            // 3 standard errors of the variance estimate.
            let se = config.sigma_v[d] * (2.0f64 / n as f64).sqrt();
            assert!((var - config.sigma_v[d]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn auxiliary_measurement_examples() {
        let z = auxiliary_measurement(&[
            Pose::new(0.0, 0.0, 0.0),
            Pose::new(3.0, 4.0, std::f64::consts::FRAC_PI_2),
        ]);
        assert_abs_diff_eq!(z[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1], std::f64::consts::FRAC_PI_2, epsilon = 1e-12);

        let z = auxiliary_measurement(&[Pose::new(1.0, 1.0, 0.2), Pose::new(1.0, 1.0, 0.2)]);
        assert_abs_diff_eq!(z[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1], 0.0, epsilon = 1e-12);

        let z = auxiliary_measurement(&[
            Pose::new(0.0, 0.0, 0.1),
            Pose::new(1.0, 0.0, 0.3),
            Pose::new(1.0, 2.0, -0.1),
        ]);
        assert_eq!(z.len(), 4);
        assert_abs_diff_eq!(z[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(z[2], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[3], -0.4, epsilon = 1e-12);
    }

    #[test]
    fn simulation_is_deterministic() {
        let config = WorldConfig::default();
        let a = simulate(&config).unwrap();
        let b = simulate(&config).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn noiseless_straight_line_is_exact_polyline() {
        let config = WorldConfig {
            robot_count: 1,
            steps: 5,
            window: (1, 0), // empty window
            cooperating: vec![],
            sigma_w: [0.0; 3],
            sigma_v: [0.0; 2],
            ..WorldConfig::default()
        };
        let rec = simulate(&config).unwrap();
        for k in 1..=5 {
            let prev = rec.poses[k - 1][0];
            let u = rec.controls[k - 1][0];
            let expect = motion_step(prev, u, &[0.0; 3]);
            assert_abs_diff_eq!(rec.poses[k][0].x, expect.x, epsilon = 1e-12);
            assert_abs_diff_eq!(rec.poses[k][0].y, expect.y, epsilon = 1e-12);
        }
    }

    #[test]
    fn default_config_has_twenty_auxiliary_steps() {
        let rec = simulate(&WorldConfig::default()).unwrap();
        let count = rec.auxiliary_measurements.iter().filter(|a| a.is_some()).count();
        assert_eq!(count, 20);
    }

    #[test]
    fn rigid_body_geometry_constant_over_window() {
        let config = WorldConfig::default();
        let rec = simulate(&config).unwrap();
        let mut values = Vec::new();
        for k in config.window.0..=config.window.1 {
            let coop: Vec<Pose> = config.cooperating.iter().map(|&i| rec.poses[k][i]).collect();
            values.push(auxiliary_measurement(&coop));
        }
        for v in &values[1..] {
            assert!((v - &values[0]).abs().max() < 1e-12);
        }
        // The window geometry equals the object geometry.
        assert!((&values[0] - &config.object_geometry()).abs().max() < 1e-12);
    }

    #[test]
    fn pre_pickup_geometry_differs_from_object() {
        // The approach phase must not already satisfy the grip geometry,
        // otherwise pickup-time hypotheses are indistinguishable.
        let config = WorldConfig::default();
        let rec = simulate(&config).unwrap();
        let before = config.window.0 - 1;
        let coop: Vec<Pose> = config.cooperating.iter().map(|&i| rec.poses[before][i]).collect();
        let aux = auxiliary_measurement(&coop);
        let gap = (&aux - &config.object_geometry()).abs().max();
        assert!(gap > 0.2, "pre-pickup geometry too close to object: {gap}");
    }
}
