//! Synthetic two-domain dataset with analytic depth.
//!
//! Domain A holds filled circles over a vertical gradient background;
//! domain B holds filled squares with a distinct palette. The gradient is
//! always darker at the top, which anchors the canonical orientation the
//! rotation task relies on. Depth is a normalized nearness proxy: shapes
//! sit strictly nearer (larger value) than the background, bigger shapes
//! nearer than smaller ones, and nearer shapes occlude.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{split_indices, DomainData, UnpairedDataset};
use crate::error::Result;
use crate::nets::Domain;

const BACKGROUND_DEPTH: f32 = 0.1;
const SHAPE_DEPTH_MIN: f32 = 0.4;
const SHAPE_DEPTH_MAX: f32 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub per_domain: usize,
    pub image_size: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    pub split_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            per_domain: 200,
            image_size: 64,
            shapes_min: 1,
            shapes_max: 3,
            split_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Circle,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub cx: f32,
    pub cy: f32,
    pub radius: f32,
    pub color: [f32; 3],
    /// Nearness in (0, 1]; larger is closer to the camera.
    pub depth: f32,
}

/// Full parameterization of one image; rendering is a pure function of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub size: usize,
    pub top_color: [f32; 3],
    pub bottom_color: [f32; 3],
    pub shapes: Vec<Shape>,
}

fn domain_palette(domain: Domain, rng: &mut ChaCha8Rng) -> ([f32; 3], [f32; 3], [f32; 3]) {
    // (top, bottom, shape) base colors, jittered per image.
    let j = |rng: &mut ChaCha8Rng| rng.random::<f32>() * 0.1 - 0.05;
    match domain {
        Domain::A => (
            [-0.85 + j(rng), -0.75 + j(rng), -0.25 + j(rng)],
            [0.15 + j(rng), 0.45 + j(rng), 0.85 + j(rng)],
            [
                0.7 + rng.random::<f32>() * 0.25,
                -0.4 + rng.random::<f32>() * 0.5,
                -0.6 + rng.random::<f32>() * 0.3,
            ],
        ),
        Domain::B => (
            [-0.35 + j(rng), -0.8 + j(rng), -0.45 + j(rng)],
            [0.75 + j(rng), 0.65 + j(rng), 0.05 + j(rng)],
            [
                -0.6 + rng.random::<f32>() * 0.3,
                0.55 + rng.random::<f32>() * 0.35,
                0.5 + rng.random::<f32>() * 0.4,
            ],
        ),
    }
}

fn sample_scene(cfg: &SynthConfig, domain: Domain, rng: &mut ChaCha8Rng) -> Scene {
    let (top_color, bottom_color, base) = domain_palette(domain, rng);
    let n_shapes = rng.random_range(cfg.shapes_min..=cfg.shapes_max);
    let size = cfg.image_size as f32;
    let max_radius = size * 0.28;
    let min_radius = size * 0.10;
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let radius = min_radius + rng.random::<f32>() * (max_radius - min_radius);
        let cx = radius + rng.random::<f32>() * (size - 2.0 * radius);
        let cy = radius + rng.random::<f32>() * (size - 2.0 * radius);
        let tint = rng.random::<f32>() * 0.2 - 0.1;
        let color = [
            (base[0] + tint).clamp(-1.0, 1.0),
            (base[1] + tint).clamp(-1.0, 1.0),
            (base[2] + tint).clamp(-1.0, 1.0),
        ];
        // Bigger shapes read as nearer; exact by construction.
        let depth = SHAPE_DEPTH_MIN
            + (SHAPE_DEPTH_MAX - SHAPE_DEPTH_MIN) * (radius - min_radius)
                / (max_radius - min_radius);
        let kind = match domain {
            Domain::A => ShapeKind::Circle,
            Domain::B => ShapeKind::Square,
        };
        shapes.push(Shape {
            kind,
            cx,
            cy,
            radius,
            color,
            depth,
        });
    }
    Scene {
        size: cfg.image_size,
        top_color,
        bottom_color,
        shapes,
    }
}

/// Renders the image and its analytic depth map. Depth lies in [0, 1]
/// with shape pixels strictly above the background level.
pub fn render_scene(scene: &Scene) -> (Array3<f32>, Array2<f32>) {
    let s = scene.size;
    let mut img = Array3::<f32>::zeros((3, s, s));
    let mut depth = Array2::<f32>::from_elem((s, s), BACKGROUND_DEPTH);
    for r in 0..s {
        let t = r as f32 / (s.max(2) - 1) as f32;
        for c in 0..s {
            for ch in 0..3 {
                img[[ch, r, c]] =
                    scene.top_color[ch] * (1.0 - t) + scene.bottom_color[ch] * t;
            }
        }
        for c in 0..s {
            // Nearest shape covering this pixel wins.
            let mut best: Option<&Shape> = None;
            for shape in &scene.shapes {
                let dx = c as f32 + 0.5 - shape.cx;
                let dy = r as f32 + 0.5 - shape.cy;
                let inside = match shape.kind {
                    ShapeKind::Circle => dx * dx + dy * dy <= shape.radius * shape.radius,
                    ShapeKind::Square => {
                        dx.abs() <= shape.radius && dy.abs() <= shape.radius
                    }
                };
                if inside && best.is_none_or(|b| shape.depth > b.depth) {
                    best = Some(shape);
                }
            }
            if let Some(shape) = best {
                for ch in 0..3 {
                    img[[ch, r, c]] = shape.color[ch];
                }
                depth[[r, c]] = shape.depth;
            }
        }
    }
    (img, depth)
}

/// Deterministic per-domain scene lists for a configuration.
pub fn synth_scenes(cfg: &SynthConfig) -> (Vec<Scene>, Vec<Scene>) {
    let mut rng_a = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(2).wrapping_add(1));
    let mut rng_b = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(2).wrapping_add(2));
    let a = (0..cfg.per_domain)
        .map(|_| sample_scene(cfg, Domain::A, &mut rng_a))
        .collect();
    let b = (0..cfg.per_domain)
        .map(|_| sample_scene(cfg, Domain::B, &mut rng_b))
        .collect();
    (a, b)
}

/// Renders a full unpaired dataset with analytic depth labels.
pub fn synth_generate(cfg: &SynthConfig) -> Result<UnpairedDataset> {
    let (scenes_a, scenes_b) = synth_scenes(cfg);
    let build = |scenes: &[Scene], tag: &str, split_seed: u64| -> Result<DomainData> {
        let mut images = Vec::with_capacity(scenes.len());
        let mut depths = Vec::with_capacity(scenes.len());
        let mut stems = Vec::with_capacity(scenes.len());
        for (i, scene) in scenes.iter().enumerate() {
            let (img, depth) = render_scene(scene);
            images.push(img);
            depths.push(depth);
            stems.push(format!("{tag}_{i:05}"));
        }
        let val = split_indices(images.len(), cfg.split_fraction, split_seed)?;
        Ok(DomainData::from_images(images, Some(depths), stems, &val))
    };
    let a = build(&scenes_a, "synth_a", cfg.seed.wrapping_add(101))?;
    let b = build(&scenes_b, "synth_b", cfg.seed.wrapping_add(202))?;
    Ok(UnpairedDataset {
        a,
        b,
        image_size: cfg.image_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            seed: 5,
            per_domain: 6,
            image_size: 32,
            ..SynthConfig::default()
        };
        let d1 = synth_generate(&cfg).unwrap();
        let d2 = synth_generate(&cfg).unwrap();
        assert_eq!(d1.a.train.len(), d2.a.train.len());
        for (x, y) in d1.a.train.iter().zip(d2.a.train.iter()) {
            assert_eq!(x, y);
        }
        for (x, y) in d1.b.val.iter().zip(d2.b.val.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn depth_bounds_and_shape_over_background() {
        let cfg = SynthConfig {
            seed: 9,
            per_domain: 4,
            image_size: 32,
            ..SynthConfig::default()
        };
        let (scenes, _) = synth_scenes(&cfg);
        for scene in &scenes {
            let (_, depth) = render_scene(scene);
            for &v in depth.iter() {
                assert!((0.0..=1.0).contains(&v));
                assert!(v == BACKGROUND_DEPTH || v > BACKGROUND_DEPTH);
            }
            // Some pixel must be covered by a shape.
            assert!(depth.iter().any(|&v| v > BACKGROUND_DEPTH));
        }
    }

    #[test]
    fn background_only_scene_has_constant_depth() {
        let scene = Scene {
            size: 16,
            top_color: [-0.5, -0.5, -0.5],
            bottom_color: [0.5, 0.5, 0.5],
            shapes: vec![],
        };
        let (_, depth) = render_scene(&scene);
        assert!(depth.iter().all(|&v| v == BACKGROUND_DEPTH));
    }

    #[test]
    fn rerendering_stored_scenes_reproduces_dataset_depth() {
        let cfg = SynthConfig {
            seed: 11,
            per_domain: 5,
            image_size: 24,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&cfg).unwrap();
        let (scenes_a, _) = synth_scenes(&cfg);
        // Validation indices are a seeded subset; recompute them to line
        // the stored data up against fresh renders.
        let val = split_indices(cfg.per_domain, cfg.split_fraction, cfg.seed.wrapping_add(101))
            .unwrap();
        let mut ti = 0usize;
        let mut vi = 0usize;
        for (i, scene) in scenes_a.iter().enumerate() {
            let (img, depth) = render_scene(scene);
            if val.contains(&i) {
                assert_eq!(ds.a.val[vi], img);
                assert_eq!(ds.a.val_depth[vi].as_ref().unwrap(), &depth);
                vi += 1;
            } else {
                assert_eq!(ds.a.train[ti], img);
                assert_eq!(ds.a.train_depth[ti].as_ref().unwrap(), &depth);
                ti += 1;
            }
        }
    }

    #[test]
    fn pixel_values_stay_in_range() {
        let cfg = SynthConfig {
            seed: 13,
            per_domain: 4,
            image_size: 32,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&cfg).unwrap();
        for img in ds.a.train.iter().chain(ds.b.train.iter()) {
            for &v in img.iter() {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }
}
