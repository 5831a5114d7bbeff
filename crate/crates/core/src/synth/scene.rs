use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Rotation};

/// Category vocabulary. Index `c` is category id `c`.
pub const CATEGORIES: [&str; 20] = [
    "chair", "table", "sofa", "bed", "lamp", "desk", "cabinet", "shelf", "door", "window",
    "pillow", "plant", "monitor", "box", "stool", "dresser", "sink", "toilet", "bin", "piano",
];

/// Smallest allowed box side, in meters.
pub const MIN_EXTENT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SceneConfig {
    pub num_categories: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub points_per_object: usize,
    /// Per-axis lower bound of box extents (meters).
    pub extent_min: [f64; 3],
    /// Per-axis upper bound of box extents (meters).
    pub extent_max: [f64; 3],
    /// The floor spans `[-h, h]` on both horizontal axes.
    pub room_half_size: f64,
    /// Probability that a new object reuses a category already in the scene.
    pub repeat_prob: f64,
    /// Standard deviation of per-point color noise.
    pub color_noise: f64,
    pub max_retries: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_categories: CATEGORIES.len(),
            min_objects: 6,
            max_objects: 10,
            points_per_object: 128,
            extent_min: [0.3, 0.3, 0.3],
            extent_max: [1.0, 1.0, 1.5],
            room_half_size: 3.0,
            repeat_prob: 0.45,
            color_noise: 0.05,
            max_retries: 100,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(m.into()));
        if self.num_categories < 2 || self.num_categories > CATEGORIES.len() {
            return bad("num_categories must be in 2..=20");
        }
        if self.min_objects < 2 || self.min_objects > self.max_objects || self.max_objects > 12 {
            return bad("object count range must satisfy 2 <= min <= max <= 12");
        }
        if self.points_per_object == 0 {
            return bad("points_per_object must be positive");
        }
        for a in 0..3 {
            if self.extent_min[a] < MIN_EXTENT || self.extent_max[a] < self.extent_min[a] {
                return bad("extent range must satisfy 1e-3 <= min <= max");
            }
        }
        if self.room_half_size <= self.extent_max[0].max(self.extent_max[1]) {
            return bad("room too small for the largest box");
        }
        if !(0.0..=1.0).contains(&self.repeat_prob) || self.color_noise < 0.0 {
            return bad("repeat_prob must be in [0, 1] and color_noise nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub category: usize,
    pub center: Point3,
    pub extent: Point3,
    pub color: [f64; 3],
    /// RGB-XYZ samples.
    pub points: Vec<[f64; 6]>,
}

impl ObjectInstance {
    pub fn contains(&self, p: Point3, tol: f64) -> bool {
        (0..3).all(|a| libm::fabs(p[a] - self.center[a]) <= self.extent[a] / 2.0 + tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: u64,
    pub objects: Vec<ObjectInstance>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn centers(&self) -> Vec<Point3> {
        self.objects.iter().map(|o| o.center).collect()
    }

    /// Number of objects sharing `category`.
    pub fn category_count(&self, category: usize) -> usize {
        self.objects.iter().filter(|o| o.category == category).count()
    }

    /// True when no two boxes overlap: for every pair some axis separates them.
    pub fn boxes_disjoint(&self) -> bool {
        let objs = &self.objects;
        (0..objs.len()).all(|i| (i + 1..objs.len()).all(|j| separated(&objs[i], &objs[j])))
    }
}

fn separated(a: &ObjectInstance, b: &ObjectInstance) -> bool {
    (0..3).any(|k| libm::fabs(a.center[k] - b.center[k]) >= (a.extent[k] + b.extent[k]) / 2.0)
}

/// Mean color of a category: evenly spaced hues at fixed saturation and value.
pub fn category_color(category: usize, num_categories: usize) -> [f64; 3] {
    let h = category as f64 / num_categories as f64 * 6.0;
    let (s, v) = (0.75, 0.85);
    let c = v * s;
    let x = c * (1.0 - libm::fabs(h % 2.0 - 1.0));
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Samples one scene by rejection: boxes are placed one at a time and a
/// placement that overlaps an earlier box is redrawn.
pub fn generate_scene<R: Rng + ?Sized>(rng: &mut R, id: u64, config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let noise = Normal::new(0.0, config.color_noise.max(0.0)).map_err(|e| Error::Argument(alloc::format!("{e}")))?;
    for _ in 0..config.max_retries {
        let m = rng.random_range(config.min_objects..=config.max_objects);
        let mut objects: Vec<ObjectInstance> = Vec::with_capacity(m);
        let mut failed = false;
        for _ in 0..m {
            let category = if !objects.is_empty() && rng.random::<f64>() < config.repeat_prob {
                objects[rng.random_range(0..objects.len())].category
            } else {
                rng.random_range(0..config.num_categories)
            };
            let extent: Point3 = core::array::from_fn(|a| {
                let (lo, hi) = (config.extent_min[a], config.extent_max[a]);
                if hi > lo { rng.random_range(lo..hi) } else { lo }
            });
            let mut placed = None;
            for _ in 0..config.max_retries {
                let cx = rng.random_range(-config.room_half_size + extent[0] / 2.0..config.room_half_size - extent[0] / 2.0);
                let cy = rng.random_range(-config.room_half_size + extent[1] / 2.0..config.room_half_size - extent[1] / 2.0);
                let candidate = ObjectInstance {
                    category,
                    center: [cx, cy, extent[2] / 2.0],
                    extent,
                    color: category_color(category, config.num_categories),
                    points: Vec::new(),
                };
                if objects.iter().all(|o| separated(o, &candidate)) {
                    placed = Some(candidate);
                    break;
                }
            }
            match placed {
                Some(obj) => objects.push(obj),
                None => {
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            continue;
        }
        for obj in &mut objects {
            obj.points = (0..config.points_per_object)
                .map(|_| {
                    let mut p = [0.0; 6];
                    for a in 0..3 {
                        p[a] = (obj.color[a] + noise.sample(rng)).clamp(0.0, 1.0);
                    }
                    for a in 0..3 {
                        let half = obj.extent[a] / 2.0;
                        p[3 + a] = obj.center[a] + rng.random_range(-half..=half);
                    }
                    p
                })
                .collect();
        }
        return Ok(Scene { id, objects });
    }
    Err(Error::Generation(alloc::format!(
        "could not place non-overlapping boxes after {} attempts",
        config.max_retries
    )))
}

/// Rotates every box center and point about the world z-axis. Extents are
/// intrinsic box sizes and stay as they are.
pub fn rotate_scene(scene: &Scene, theta: f64) -> Scene {
    let r = Rotation::about_z(theta);
    let objects = scene
        .objects
        .iter()
        .map(|o| ObjectInstance {
            center: r.apply(o.center),
            points: o
                .points
                .iter()
                .map(|p| {
                    let q = r.apply([p[3], p[4], p[5]]);
                    [p[0], p[1], p[2], q[0], q[1], q[2]]
                })
                .collect(),
            ..o.clone()
        })
        .collect();
    Scene {
        id: scene.id,
        objects,
    }
}
