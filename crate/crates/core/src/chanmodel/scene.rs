use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{MeasurementGrid, PathParams, StaticPathParams, SPEED_OF_LIGHT};
use crate::error::{Error, Result};

/// Amplitude reference: a LoS path at this distance has unit gain.
const REFERENCE_DISTANCE: f64 = 10.0;

/// Doppler shift seen by a receiver moving at `speed` along `heading` for a
/// path leaving in direction `path_angle`.
pub fn doppler_from_motion(speed: f64, heading: f64, path_angle: f64, carrier: f64) -> f64 {
    carrier / SPEED_OF_LIGHT * speed * (heading - path_angle).cos()
}

/// Ground truth for one measurement position.
///
/// The base station sits at the origin with its array along the x axis, so
/// `phi` is `x / r` of the arrival direction. Gains include the `f_c·τ`
/// phase for `carrier_frequency`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub location: [f64; 2],
    pub carrier_frequency: f64,
    /// First entry is the LoS path.
    pub paths: Vec<StaticPathParams>,
    /// World-frame direction of each path at the moving terminal, radians.
    pub departure_angles: Vec<f64>,
    /// Meters per second.
    pub speed: f64,
    /// Radians.
    pub heading: f64,
}

impl Scene {
    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths.is_empty() {
            return Err(Error::invalid("scene has no paths"));
        }
        if self.paths.len() != self.departure_angles.len() {
            return Err(Error::dim("one departure angle per path is required"));
        }
        let los = self.paths[0].tau;
        if self.paths.iter().any(|p| p.tau < los) {
            return Err(Error::invalid("LoS path must have the smallest delay"));
        }
        Ok(())
    }

    /// Static parameters as seen on `grid`'s band.
    pub fn static_paths_on(&self, grid: &MeasurementGrid) -> Vec<StaticPathParams> {
        let shift = grid.carrier_frequency - self.carrier_frequency;
        self.paths
            .iter()
            .map(|p| StaticPathParams {
                alpha: p.alpha * Complex64::from_polar(1.0, -2.0 * PI * shift * p.tau),
                ..*p
            })
            .collect()
    }

    /// Time-varying parameters on `grid`'s band at this scene's speed.
    pub fn paths_on(&self, grid: &MeasurementGrid) -> Vec<PathParams> {
        self.paths_on_at_speed(grid, self.speed)
    }

    pub fn paths_on_at_speed(&self, grid: &MeasurementGrid, speed: f64) -> Vec<PathParams> {
        self.static_paths_on(grid)
            .into_iter()
            .zip(&self.departure_angles)
            .map(|(p, &ang)| {
                p.with_doppler(doppler_from_motion(
                    speed,
                    self.heading,
                    ang,
                    grid.carrier_frequency,
                ))
            })
            .collect()
    }

    pub fn with_speed(&self, speed: f64) -> Self {
        Self {
            speed,
            ..self.clone()
        }
    }
}

/// Parameters of the random scene generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Inclusive range of path counts.
    pub num_paths: [usize; 2],
    /// LoS distance range, meters.
    pub distance: [f64; 2],
    /// Extra delay of NLoS paths over LoS, seconds.
    pub excess_delay: [f64; 2],
    /// NLoS power relative to LoS, dB.
    pub nlos_gain_db: [f64; 2],
    pub max_abs_phi: f64,
    /// Speed range, m/s.
    pub speed: [f64; 2],
    /// Fixed heading; uniform when unset.
    pub heading: Option<f64>,
    pub carrier_frequency: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_paths: [4, 4],
            distance: [10.0, 60.0],
            excess_delay: [30e-9, 600e-9],
            nlos_gain_db: [-10.0, -3.0],
            max_abs_phi: 0.9,
            speed: [60.0 / 3.6, 60.0 / 3.6],
            heading: None,
            carrier_frequency: 60e9,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.num_paths;
        if lo == 0 || hi < lo {
            return Err(Error::invalid(format!("path count range {lo}..={hi} is infeasible")));
        }
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(self.distance) || self.distance[0] <= 0.0 {
            return Err(Error::invalid("distance range must be positive and ordered"));
        }
        if !ordered(self.excess_delay) || self.excess_delay[0] <= 0.0 {
            return Err(Error::invalid("excess delay range must be positive and ordered"));
        }
        if !ordered(self.nlos_gain_db) || !ordered(self.speed) || self.speed[0] < 0.0 {
            return Err(Error::invalid("gain and speed ranges must be ordered"));
        }
        if !(self.max_abs_phi > 0.0 && self.max_abs_phi <= 1.0) {
            return Err(Error::invalid("max_abs_phi must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Largest Doppler magnitude this configuration can produce.
    pub fn doppler_max(&self) -> f64 {
        self.carrier_frequency / SPEED_OF_LIGHT * self.speed[1]
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Draws a random scene: LoS at a random bearing and distance plus NLoS
/// paths with larger delay and lower gain.
pub fn generate_scene<R: Rng + ?Sized>(rng: &mut R, config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let num_paths = rng.random_range(config.num_paths[0]..=config.num_paths[1]);
    let max_angle = config.max_abs_phi.asin();
    let distance = uniform(rng, config.distance);
    let bearing = rng.random_range(-max_angle..=max_angle);
    let location = [distance * bearing.sin(), distance * bearing.cos()];
    let fc = config.carrier_frequency;

    let los_tau = distance / SPEED_OF_LIGHT;
    let los_amp = REFERENCE_DISTANCE / distance;
    let mut paths = vec![StaticPathParams {
        alpha: Complex64::from_polar(los_amp, -2.0 * PI * fc * los_tau),
        tau: los_tau,
        phi: bearing.sin(),
    }];
    let mut departure_angles = vec![(-location[1]).atan2(-location[0])];
    for _ in 1..num_paths {
        let tau = los_tau + uniform(rng, config.excess_delay);
        let gain_db = uniform(rng, config.nlos_gain_db);
        let amp = los_amp * 10f64.powf(gain_db / 20.0);
        let phase = rng.random_range(-PI..PI);
        paths.push(StaticPathParams {
            alpha: Complex64::from_polar(amp, phase - 2.0 * PI * fc * tau),
            tau,
            phi: rng.random_range(-config.max_abs_phi..=config.max_abs_phi),
        });
        departure_angles.push(rng.random_range(-PI..PI));
    }
    let speed = uniform(rng, config.speed);
    let heading = match config.heading {
        Some(h) => h,
        None => rng.random_range(-PI..PI),
    };
    let scene = Scene {
        location,
        carrier_frequency: fc,
        paths,
        departure_angles,
        speed,
        heading,
    };
    scene.validate()?;
    Ok(scene)
}

/// A fixed propagation environment: point scatterers around a base station
/// at the origin. Scenes derived from it vary smoothly with location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub scatterers: Vec<[f64; 2]>,
    /// Power loss at each reflection, dB (negative).
    pub reflection_gain_db: f64,
    pub carrier_frequency: f64,
}

impl Environment {
    /// Random scatterers in front of the array within `extent` meters.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        num_scatterers: usize,
        extent: f64,
        reflection_gain_db: f64,
        carrier_frequency: f64,
    ) -> Self {
        let scatterers = (0..num_scatterers)
            .map(|_| [rng.random_range(-extent..extent), rng.random_range(0.2 * extent..extent)])
            .collect();
        Self {
            scatterers,
            reflection_gain_db,
            carrier_frequency,
        }
    }

    /// Deterministic scene at `location` (y > 0) with one path per scatterer.
    pub fn scene_at(&self, location: [f64; 2], speed: f64, heading: f64) -> Result<Scene> {
        let [x, y] = location;
        let d = x.hypot(y);
        if !(y > 0.0) || !d.is_finite() {
            return Err(Error::invalid("locations must lie in front of the array (y > 0)"));
        }
        let fc = self.carrier_frequency;
        let los_tau = d / SPEED_OF_LIGHT;
        let mut paths = vec![StaticPathParams {
            alpha: Complex64::from_polar(REFERENCE_DISTANCE / d, -2.0 * PI * fc * los_tau),
            tau: los_tau,
            phi: x / d,
        }];
        let mut departure_angles = vec![(-y).atan2(-x)];
        let refl = 10f64.powf(self.reflection_gain_db / 20.0);
        for s in &self.scatterers {
            let d1 = (s[0] - x).hypot(s[1] - y);
            let d2 = s[0].hypot(s[1]);
            let length = d1 + d2;
            let tau = length / SPEED_OF_LIGHT;
            paths.push(StaticPathParams {
                alpha: Complex64::from_polar(
                    refl * REFERENCE_DISTANCE / length,
                    PI - 2.0 * PI * fc * tau,
                ),
                tau,
                phi: s[0] / d2,
            });
            departure_angles.push((s[1] - y).atan2(s[0] - x));
        }
        let scene = Scene {
            location,
            carrier_frequency: fc,
            paths,
            departure_angles,
            speed,
            heading,
        };
        scene.validate()?;
        Ok(scene)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn doppler_examples() {
        assert_eq!(doppler_from_motion(0.0, 0.3, 1.1, 60e9), 0.0);
        let v = 60.0 / 3.6;
        let fd = doppler_from_motion(v, 0.7, 0.7, 60e9);
        assert!((fd - 60e9 / SPEED_OF_LIGHT * v).abs() < 1e-9);
        // (60e9 / 3e8) * 16.667 = 3333.3 with the rounded speed of light.
        assert!((fd / 3333.3 - 1.0).abs() < 1e-3, "{fd}");
        assert!(doppler_from_motion(v, PI / 2.0, 0.0, 60e9).abs() < 1e-9);
    }

    #[test]
    fn single_los_scene_geometry() {
        let cfg = SceneConfig {
            num_paths: [1, 1],
            distance: [30.0, 30.0],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = generate_scene(&mut rng, &cfg).unwrap();
        assert_eq!(s.num_paths(), 1);
        assert!((s.paths[0].tau - 100.07e-9).abs() < 0.01e-9);
        let r = s.location[0].hypot(s.location[1]);
        assert!((r - 30.0).abs() < 1e-9);
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SceneConfig::default();
        let a = generate_scene(&mut ChaCha8Rng::seed_from_u64(1), &cfg).unwrap();
        let b = generate_scene(&mut ChaCha8Rng::seed_from_u64(1), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_config_rejected() {
        let cfg = SceneConfig {
            num_paths: [0, 0],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(generate_scene(&mut rng, &cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn random_scenes_respect_invariants() {
        let cfg = SceneConfig {
            num_paths: [3, 5],
            ..Default::default()
        };
        let grid = MeasurementGrid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let s = generate_scene(&mut rng, &cfg).unwrap();
            assert!((3..=5).contains(&s.num_paths()));
            let los = s.paths[0].tau;
            for p in s.paths_on(&grid) {
                p.validate(&grid, cfg.doppler_max() * (1.0 + 1e-9)).unwrap();
                assert!(p.tau >= los);
            }
            for p in &s.paths[1..] {
                assert!(p.alpha.norm() < s.paths[0].alpha.norm());
            }
        }
    }

    #[test]
    fn bands_differ_only_by_delay_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = generate_scene(&mut rng, &SceneConfig::default()).unwrap();
        let g = MeasurementGrid::default();
        let h = g.adjacent_band();
        let pn = s.static_paths_on(&g);
        let pm = s.static_paths_on(&h);
        for (a, b) in pn.iter().zip(&pm) {
            assert_eq!(a.tau, b.tau);
            assert!((a.alpha.norm() - b.alpha.norm()).abs() < 1e-12);
            let expect = a.alpha
                * Complex64::from_polar(1.0, -2.0 * PI * (h.carrier_frequency - g.carrier_frequency) * a.tau);
            assert!((expect - b.alpha).norm() < 1e-9);
        }
    }

    #[test]
    fn environment_scenes_are_deterministic_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let env = Environment::random(&mut rng, 3, 40.0, -6.0, 60e9);
        let a = env.scene_at([3.0, 20.0], 1.0, 0.0).unwrap();
        let b = env.scene_at([3.0, 20.0], 1.0, 0.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_paths(), 4);
        assert!(env.scene_at([3.0, -1.0], 1.0, 0.0).is_err());
    }
}
