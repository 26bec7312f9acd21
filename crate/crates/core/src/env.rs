//! Wall-navigation toy environment.
//!
//! A point agent moves in the unit square. A vertical wall at `x = wall_x`
//! blocks motion except through a gap `[gap_center - gap_half_width,
//! gap_center + gap_half_width]`. Observations are small grayscale images.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::RngScheme;
use crate::store::{Model, Role, TensorKind, TensorRecord};

/// Distance from the wall at which a blocked move stops.
pub const WALL_STOP: f64 = 1e-3;

pub type Vec2 = [f64; 2];

pub fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WallEnvConfig {
    pub wall_x: f64,
    pub gap_center: f64,
    pub gap_half_width: f64,
    pub max_step: f64,
    pub image_side: usize,
    pub success_radius: f64,
}

impl Default for WallEnvConfig {
    fn default() -> Self {
        Self {
            wall_x: 0.5,
            gap_center: 0.5,
            gap_half_width: 0.1,
            max_step: 0.125,
            image_side: 16,
            success_radius: 0.1,
        }
    }
}

impl WallEnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.wall_x > 0.0 && self.wall_x < 1.0) {
            return Err(invalid("wall_x must lie in (0, 1)"));
        }
        if !(self.gap_center > 0.0 && self.gap_center < 1.0) {
            return Err(invalid("gap_center must lie in (0, 1)"));
        }
        let (lo, hi) = self.gap();
        if !(self.gap_half_width >= 0.0 && lo >= 0.0 && hi <= 1.0) {
            return Err(invalid("gap interval must lie within [0, 1]"));
        }
        if self.max_step.is_nan() || self.max_step <= 0.0 {
            return Err(invalid("max_step must be positive"));
        }
        if self.success_radius.is_nan() || self.success_radius <= 0.0 {
            return Err(invalid("success_radius must be positive"));
        }
        if self.image_side < 2 {
            return Err(invalid("image_side must be at least 2"));
        }
        Ok(())
    }

    pub fn gap(&self) -> (f64, f64) {
        (
            self.gap_center - self.gap_half_width,
            self.gap_center + self.gap_half_width,
        )
    }

    pub fn obs_dim(&self) -> usize {
        self.image_side * self.image_side
    }

    fn left_of_wall(&self, x: f64) -> bool {
        x < self.wall_x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub pos: Vec2,
}

impl EnvState {
    pub fn new(x: f64, y: f64) -> Self {
        Self {
            pos: [x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)],
        }
    }
}

/// Advances the agent by one clamped action, stopping at the wall if the
/// straight-line move would cross it outside the gap.
pub fn step(state: EnvState, action: Vec2, cfg: &WallEnvConfig) -> EnvState {
    let a = action.map(|v| {
        if v.is_nan() {
            0.0
        } else {
            v.clamp(-cfg.max_step, cfg.max_step)
        }
    });
    let [x0, y0] = state.pos;
    let x1 = (x0 + a[0]).clamp(0.0, 1.0);
    let y1 = (y0 + a[1]).clamp(0.0, 1.0);
    let from_left = cfg.left_of_wall(x0);
    if from_left == cfg.left_of_wall(x1) {
        return EnvState { pos: [x1, y1] };
    }
    let t = (cfg.wall_x - x0) / (x1 - x0);
    let y_cross = y0 + t * (y1 - y0);
    let (lo, hi) = cfg.gap();
    if (lo..=hi).contains(&y_cross) {
        EnvState { pos: [x1, y1] }
    } else {
        let x_stop = if from_left {
            cfg.wall_x - WALL_STOP
        } else {
            cfg.wall_x + WALL_STOP
        };
        EnvState {
            pos: [x_stop, y_cross.clamp(0.0, 1.0)],
        }
    }
}

fn pixel_index(v: f64, side: usize) -> usize {
    ((v * side as f64).floor().max(0.0) as usize).min(side - 1)
}

/// Renders the scene as a row-major `side x side` image in [0, 1].
pub fn render(state: &EnvState, cfg: &WallEnvConfig) -> Vec<f32> {
    let side = cfg.image_side;
    let mut img = vec![0.0f32; side * side];
    let wall_col = pixel_index(cfg.wall_x, side);
    let (lo, hi) = cfg.gap();
    for row in 0..side {
        let center = (row as f64 + 0.5) / side as f64;
        if !(lo..=hi).contains(&center) {
            img[row * side + wall_col] = 0.5;
        }
    }
    let row = pixel_index(state.pos[1], side);
    let col = pixel_index(state.pos[0], side);
    img[row * side + col] = 1.0;
    img
}

/// Start/goal pair for one paired evaluation unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub seed: u64,
    pub episode_id: u64,
    pub start: EnvState,
    pub goal: EnvState,
    pub initial_goal_distance: f64,
}

/// Episode specs for one seed. Depends only on `(scheme, seed, cfg)`.
pub fn sample_episode_specs(
    seed: u64,
    n_episodes: usize,
    cfg: &WallEnvConfig,
    scheme: &RngScheme,
) -> Vec<EpisodeSpec> {
    let mut rng = scheme.stream("episode-specs", &[seed]);
    let left = |rng: &mut crate::rng::Stream| rng.random::<f64>() * cfg.wall_x;
    // 1 - u lies in (0, 1], so the right side never touches the wall itself.
    let right = |rng: &mut crate::rng::Stream| {
        cfg.wall_x + (1.0 - rng.random::<f64>()) * (1.0 - cfg.wall_x)
    };
    (0..n_episodes)
        .map(|i| {
            let start_left = rng.random::<bool>();
            let (sx, gx) = if start_left {
                let s = left(&mut rng);
                (s, right(&mut rng))
            } else {
                let s = right(&mut rng);
                (s, left(&mut rng))
            };
            let start = EnvState {
                pos: [sx, rng.random::<f64>()],
            };
            let goal = EnvState {
                pos: [gx, rng.random::<f64>()],
            };
            EpisodeSpec {
                seed,
                episode_id: i as u64,
                start,
                goal,
                initial_goal_distance: dist(start.pos, goal.pos),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f32>,
    pub action: Vec2,
    pub next_obs: Vec<f32>,
    pub state: Vec2,
    pub next_state: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub image_side: usize,
    pub transitions: Vec<Transition>,
}

pub const DATASET_MANIFEST: &str = "dataset.json";
pub const DATASET_BLOB: &str = "dataset.bin";

/// Random-policy rollouts from uniform starts.
pub fn gen_dataset(
    n_traj: usize,
    traj_len: usize,
    seed: u64,
    cfg: &WallEnvConfig,
    scheme: &RngScheme,
) -> Result<Dataset> {
    if n_traj == 0 || traj_len == 0 {
        return Err(invalid("n_traj and traj_len must be at least 1"));
    }
    cfg.validate()?;
    let mut transitions = Vec::with_capacity(n_traj * traj_len);
    for traj in 0..n_traj {
        let mut rng = scheme.stream("dataset", &[seed, traj as u64]);
        let mut state = EnvState::new(rng.random(), rng.random());
        let mut obs = render(&state, cfg);
        for _ in 0..traj_len {
            let action = [
                rng.random_range(-cfg.max_step..=cfg.max_step),
                rng.random_range(-cfg.max_step..=cfg.max_step),
            ];
            let next = step(state, action, cfg);
            let next_obs = render(&next, cfg);
            transitions.push(Transition {
                obs,
                action,
                next_obs: next_obs.clone(),
                state: state.pos,
                next_state: next.pos,
            });
            state = next;
            obs = next_obs;
        }
    }
    Ok(Dataset {
        image_side: cfg.image_side,
        transitions,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Packs the dataset into the tensor-bundle format (f32 storage).
    pub fn to_model(&self) -> Model {
        let n = self.len();
        let d = self.image_side * self.image_side;
        let tensor = |name: &str, idx: u32, width: usize, data: Vec<f32>| TensorRecord {
            name: name.into(),
            role: Role::Other,
            layer_index: idx,
            kind: TensorKind::NonLinearParam,
            shape: vec![n, width],
            data,
        };
        let pair = |f: &dyn Fn(&Transition) -> Vec2| -> Vec<f32> {
            self.transitions
                .iter()
                .flat_map(|t| f(t).map(|v| v as f32))
                .collect()
        };
        let mut model = Model::new(vec![
            tensor(
                "obs",
                0,
                d,
                self.transitions
                    .iter()
                    .flat_map(|t| t.obs.iter().copied())
                    .collect(),
            ),
            tensor("action", 1, 2, pair(&|t| t.action)),
            tensor(
                "next_obs",
                2,
                d,
                self.transitions
                    .iter()
                    .flat_map(|t| t.next_obs.iter().copied())
                    .collect(),
            ),
            tensor("state", 3, 2, pair(&|t| t.state)),
            tensor("next_state", 4, 2, pair(&|t| t.next_state)),
        ]);
        model.extras = serde_json::json!({ "content": "dataset", "image_side": self.image_side });
        model
    }

    pub fn from_model(model: &Model) -> Result<Self> {
        let side = model
            .extras
            .get("image_side")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| invalid("dataset bundle missing extras.image_side"))?
            as usize;
        let get = |name: &str, width: usize| -> Result<&TensorRecord> {
            let t = model
                .tensor(name)
                .ok_or_else(|| invalid(format!("dataset bundle missing tensor `{name}`")))?;
            if t.shape.len() != 2 || t.shape[1] != width {
                return Err(invalid(format!(
                    "dataset tensor `{name}` has shape {:?}",
                    t.shape
                )));
            }
            Ok(t)
        };
        let d = side * side;
        let obs = get("obs", d)?;
        let n = obs.shape[0];
        let parts = [
            get("action", 2)?,
            get("next_obs", d)?,
            get("state", 2)?,
            get("next_state", 2)?,
        ];
        if parts.iter().any(|t| t.shape[0] != n) {
            return Err(invalid("dataset tensors disagree on transition count"));
        }
        let [action, next_obs, state, next_state] = parts;
        let v2 =
            |t: &TensorRecord, i: usize| [f64::from(t.data[2 * i]), f64::from(t.data[2 * i + 1])];
        let transitions = (0..n)
            .map(|i| Transition {
                obs: obs.data[i * d..(i + 1) * d].to_vec(),
                action: v2(action, i),
                next_obs: next_obs.data[i * d..(i + 1) * d].to_vec(),
                state: v2(state, i),
                next_state: v2(next_state, i),
            })
            .collect();
        Ok(Self {
            image_side: side,
            transitions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> WallEnvConfig {
        WallEnvConfig::default()
    }

    #[test]
    fn zero_action_is_identity() {
        let s = EnvState::new(0.3, 0.7);
        assert_eq!(step(s, [0.0, 0.0], &cfg()), s);
    }

    #[test]
    fn wall_blocks_outside_gap() {
        let s = step(EnvState::new(0.45, 0.9), [0.1, 0.0], &cfg());
        assert!((s.pos[0] - 0.499).abs() < 1e-12);
        assert_eq!(s.pos[1], 0.9);
        let back = step(EnvState::new(0.55, 0.1), [-0.1, 0.0], &cfg());
        assert!((back.pos[0] - 0.501).abs() < 1e-12);
    }

    #[test]
    fn gap_lets_agent_through() {
        let s = step(EnvState::new(0.45, 0.5), [0.1, 0.0], &cfg());
        assert!((s.pos[0] - 0.55).abs() < 1e-12);
        assert_eq!(s.pos[1], 0.5);
    }

    #[test]
    fn diagonal_crossing_uses_interpolated_height() {
        // Crosses x = 0.5 at y = 0.35 (outside the gap) even though it ends at 0.45 (inside).
        let s = step(EnvState::new(0.45, 0.3), [0.1, 0.1], &cfg());
        assert!((s.pos[0] - 0.499).abs() < 1e-12);
        assert!((s.pos[1] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn actions_and_positions_are_clamped() {
        let s = step(EnvState::new(0.1, 0.95), [-1.0, 1.0], &cfg());
        assert_eq!(s.pos[0], 0.0);
        assert_eq!(s.pos[1], 1.0);
    }

    #[test]
    fn render_places_agent_and_wall() {
        let c = cfg();
        let img = render(&EnvState::new(0.25, 0.25), &c);
        assert_eq!(img[4 * 16 + 4], 1.0);
        assert_eq!(img[8], 0.5);
        // Rows 6..=9 have centers inside [0.4, 0.6].
        for r in 6..=9 {
            assert_eq!(img[r * 16 + 8], 0.0);
        }
        assert_eq!(img[5 * 16 + 8], 0.5);
        assert_eq!(img[10 * 16 + 8], 0.5);
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(img, render(&EnvState::new(0.25, 0.25), &c));
        assert_ne!(img, render(&EnvState::new(0.25 + 1.0 / 16.0, 0.25), &c));
        // Agent on the wall column overwrites the wall.
        let on_wall = render(&EnvState::new(0.5, 0.0), &c);
        assert_eq!(on_wall[8], 1.0);
        let corner = render(&EnvState::new(1.0, 1.0), &c);
        assert_eq!(corner[255], 1.0);
    }

    #[test]
    fn episode_specs_are_seed_keyed() {
        let c = cfg();
        let scheme = RngScheme::new(0);
        let a = sample_episode_specs(0, 10, &c, &scheme);
        assert_eq!(a, sample_episode_specs(0, 10, &c, &scheme));
        assert_ne!(a, sample_episode_specs(1, 10, &c, &scheme));
        for (i, s) in a.iter().enumerate() {
            assert_eq!(s.episode_id, i as u64);
            assert_ne!(s.start.pos[0] < c.wall_x, s.goal.pos[0] < c.wall_x);
            assert_eq!(s.initial_goal_distance, dist(s.start.pos, s.goal.pos));
        }
        // A longer list extends the shorter one.
        assert_eq!(&sample_episode_specs(0, 15, &c, &scheme)[..10], &a[..]);
    }

    #[test]
    fn dataset_counts_and_replay() {
        let c = cfg();
        let ds = gen_dataset(2, 3, 5, &c, &RngScheme::new(1)).unwrap();
        assert_eq!(ds.len(), 6);
        for t in &ds.transitions {
            assert!(t
                .obs
                .iter()
                .chain(&t.next_obs)
                .all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(
                step(EnvState { pos: t.state }, t.action, &c).pos,
                t.next_state
            );
            assert_eq!(render(&EnvState { pos: t.next_state }, &c), t.next_obs);
        }
        assert!(gen_dataset(0, 3, 5, &c, &RngScheme::new(1)).is_err());
    }

    #[test]
    fn dataset_bundle_round_trip() {
        let c = cfg();
        let ds = gen_dataset(3, 4, 5, &c, &RngScheme::new(1)).unwrap();
        let back = Dataset::from_model(&ds.to_model()).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.transitions.iter().zip(&back.transitions) {
            assert_eq!(a.obs, b.obs);
            assert_eq!(a.next_obs, b.next_obs);
            assert!((a.state[0] - b.state[0]).abs() < 1e-6);
            assert!((a.action[1] - b.action[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let bad = WallEnvConfig {
            gap_center: 0.95,
            ..cfg()
        };
        assert!(bad.validate().is_err());
        let bad = WallEnvConfig {
            max_step: 0.0,
            ..cfg()
        };
        assert!(bad.validate().is_err());
    }
}
