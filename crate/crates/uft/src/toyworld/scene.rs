//! Parametric moving-shape scenes: the analytic source every modality grid is
//! rendered from, with exact ground truth retained for oracle evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::Rng;

/// Maximum object speed in pixels per frame; fixes the flow encoding's
/// affine map. Motion stays sub-patch per frame at patch width 4.
pub const V_MAX: f64 = 2.0;

/// Object classes carry a stable appearance: a base RGB color and a base
/// depth band, both jittered per scene. Class is what segmentation predicts,
/// so it must be inferable from appearance alone.
pub const CLASS_BASE_COLORS: [[f32; 3]; 4] = [
    [0.85, 0.15, 0.15],
    [0.15, 0.80, 0.20],
    [0.20, 0.30, 0.90],
    [0.90, 0.85, 0.15],
];

/// Base depth per class; bands are separated by more than twice the jitter,
/// so z-ordering between distinct classes is always strict.
pub const CLASS_BASE_Z: [f64; 4] = [0.45, 0.60, 0.75, 0.90];

pub const COLOR_JITTER: f64 = 0.06;
pub const Z_JITTER: f64 = 0.04;

pub const BACKGROUND_DEPTH: f64 = 1.0;
pub const BACKGROUND_GRAY: f32 = 0.1;

const MAX_OBJECTS: usize = 4;
const RETRY_CAP: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Disk,
    Rectangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    /// Exactly one object per scene (stage-1 curriculum data).
    Easy,
    /// One to four objects.
    Standard,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// Half-extent in pixels (disk radius / rectangle half-side).
    pub half_size: f64,
    /// Depth in (0, 1]; strictly distinct within a scene.
    pub z: f64,
    pub color: [f32; 3],
    /// Initial center (h, w) in pixels.
    pub p0: (f64, f64),
    /// Velocity (dh, dw) in pixels per frame.
    pub vel: (f64, f64),
    /// Class in 1..=4, distinct per scene; 0 is reserved for background.
    pub class_id: u8,
}

impl ObjectSpec {
    pub fn center_at(&self, frame: usize) -> (f64, f64) {
        (
            self.p0.0 + frame as f64 * self.vel.0,
            self.p0.1 + frame as f64 * self.vel.1,
        )
    }

    pub fn contains(&self, frame: usize, h: usize, w: usize) -> bool {
        let (ch, cw) = self.center_at(frame);
        let dh = h as f64 - ch;
        let dw = w as f64 - cw;
        match self.shape {
            Shape::Disk => dh * dh + dw * dw <= self.half_size * self.half_size,
            Shape::Rectangle => dh.abs() <= self.half_size && dw.abs() <= self.half_size,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<ObjectSpec>,
    pub background_depth: f64,
    /// (T, H, W) — frames, height, width in pixels.
    pub extent: (usize, usize, usize),
}

impl SceneSpec {
    /// Frontmost object covering the pixel, by strict smallest-z occlusion.
    pub fn owner_at(&self, frame: usize, h: usize, w: usize) -> Option<&ObjectSpec> {
        self.objects
            .iter()
            .filter(|o| o.contains(frame, h, w))
            .min_by(|a, b| a.z.partial_cmp(&b.z).unwrap())
    }

    pub fn object_of_class(&self, class_id: u8) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.class_id == class_id)
    }

    pub fn validate(&self) -> Result<()> {
        let (t, h, w) = self.extent;
        if self.objects.is_empty() || self.objects.len() > MAX_OBJECTS {
            return Err(Error::invalid(
                "scene",
                format!("object count {} outside 1..={}", self.objects.len(), MAX_OBJECTS),
            ));
        }
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                if a.z == b.z {
                    return Err(Error::invalid("scene", "duplicate z values"));
                }
                if a.class_id == b.class_id {
                    return Err(Error::invalid("scene", "duplicate class ids"));
                }
            }
            for f in 0..t {
                let (ch, cw) = a.center_at(f);
                if ch < 0.0 || ch >= h as f64 || cw < 0.0 || cw >= w as f64 {
                    return Err(Error::invalid(
                        "scene",
                        format!("object {} center out of bounds at frame {}", i, f),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Templated scene description over a 12-word vocabulary:
/// one two three four object objects moving left right up down still.
pub fn caption_for(scene: &SceneSpec) -> String {
    let count = scene.objects.len();
    let count_word = ["one", "two", "three", "four"][count - 1];
    let noun = if count == 1 { "object" } else { "objects" };
    let (mut mh, mut mw) = (0.0, 0.0);
    for o in &scene.objects {
        mh += o.vel.0;
        mw += o.vel.1;
    }
    mh /= count as f64;
    mw /= count as f64;
    let dir = if mh.abs().max(mw.abs()) < 0.25 {
        "still"
    } else if mw.abs() >= mh.abs() {
        if mw > 0.0 {
            "right"
        } else {
            "left"
        }
    } else if mh > 0.0 {
        "down"
    } else {
        "up"
    };
    format!("{count_word} {noun} moving {dir}")
}

/// Random scene under the invariants. Rejection-samples each trajectory until
/// the object's center stays in-bounds for every frame; a bounded retry cap
/// turns pathological extents into an error instead of a hang.
pub fn generate_scene(
    rng: &mut Rng,
    difficulty: Difficulty,
    extent: (usize, usize, usize),
) -> Result<SceneSpec> {
    let (t, h, w) = extent;
    let count = match difficulty {
        Difficulty::Easy => 1,
        Difficulty::Standard => 1 + rng.below(MAX_OBJECTS),
    };
    let mut classes: Vec<u8> = vec![1, 2, 3, 4];
    rng.shuffle(&mut classes);
    classes.truncate(count);

    let min_side = h.min(w) as f64;
    let mut objects = Vec::with_capacity(count);
    for &class_id in &classes {
        let shape = if rng.uniform() < 0.5 {
            Shape::Disk
        } else {
            Shape::Rectangle
        };
        let half_size = rng.uniform_in(0.12, 0.27) * min_side;
        let z = CLASS_BASE_Z[class_id as usize - 1] + rng.uniform_in(-Z_JITTER, Z_JITTER);
        let base = CLASS_BASE_COLORS[class_id as usize - 1];
        let mut color = [0.0f32; 3];
        for (c, &b) in color.iter_mut().zip(&base) {
            *c = (b as f64 + rng.uniform_in(-COLOR_JITTER, COLOR_JITTER)).clamp(0.0, 1.0) as f32;
        }

        let mut placed = false;
        for _ in 0..RETRY_CAP {
            let p0 = (rng.uniform_in(1.0, h as f64 - 2.0), rng.uniform_in(1.0, w as f64 - 2.0));
            let vel = (rng.uniform_in(-V_MAX, V_MAX), rng.uniform_in(-V_MAX, V_MAX));
            let in_bounds = (0..t).all(|f| {
                let ch = p0.0 + f as f64 * vel.0;
                let cw = p0.1 + f as f64 * vel.1;
                ch >= 0.0 && ch < h as f64 && cw >= 0.0 && cw < w as f64
            });
            if in_bounds {
                objects.push(ObjectSpec {
                    shape,
                    half_size,
                    z,
                    color,
                    p0,
                    vel,
                    class_id,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::invalid(
                "scene",
                format!(
                    "trajectory rejection cap exceeded for extent {:?} (rng seed {})",
                    extent,
                    rng.seed()
                ),
            ));
        }
    }

    let scene = SceneSpec {
        objects,
        background_depth: BACKGROUND_DEPTH,
        extent,
    };
    scene.validate()?;
    Ok(scene)
}
