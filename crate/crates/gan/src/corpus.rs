//! Procedural "garment glyph" corpus: a labelled stand-in for a fashion image
//! dataset. Each class is a distinct silhouette drawn with random colour,
//! optional stripes, and position and scale jitter.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::GanError;

pub const GARMENT_CLASSES: [&str; 8] = [
    "tshirt", "trousers", "dress", "skirt", "sneaker", "handbag", "hat", "coat",
];

pub const MANIFEST_FILE: &str = "labels.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub classes: usize,
    pub per_class: usize,
    pub image_size: u32,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            per_class: 250,
            image_size: 64,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusItem {
    /// Path relative to the corpus directory.
    pub file: String,
    pub label: usize,
    pub class_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub config: CorpusConfig,
    pub items: Vec<CorpusItem>,
}

/// Shape primitive in unit coordinates (x right, y down).
enum Prim {
    Poly(&'static [(f32, f32)]),
    /// Ellipse, optionally only the half above its centre.
    Ellipse { cx: f32, cy: f32, rx: f32, ry: f32, upper: bool },
    /// Elliptical ring above its centre (bag handles).
    Arch { cx: f32, cy: f32, r_out: f32, r_in: f32 },
}

impl Prim {
    fn contains(&self, x: f32, y: f32) -> bool {
        match *self {
            Prim::Poly(pts) => {
                let mut inside = false;
                let mut j = pts.len() - 1;
                for i in 0..pts.len() {
                    let (xi, yi) = pts[i];
                    let (xj, yj) = pts[j];
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
            Prim::Ellipse { cx, cy, rx, ry, upper } => {
                let dx = (x - cx) / rx;
                let dy = (y - cy) / ry;
                dx * dx + dy * dy <= 1.0 && (!upper || y <= cy)
            }
            Prim::Arch { cx, cy, r_out, r_in } => {
                let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                y <= cy && d <= r_out && d >= r_in
            }
        }
    }
}

fn silhouette(class: usize) -> Vec<Prim> {
    use Prim::*;
    match class % GARMENT_CLASSES.len() {
        0 => vec![
            Poly(&[(0.32, 0.22), (0.68, 0.22), (0.68, 0.85), (0.32, 0.85)]),
            Poly(&[(0.32, 0.22), (0.14, 0.38), (0.22, 0.47), (0.32, 0.38)]),
            Poly(&[(0.68, 0.22), (0.86, 0.38), (0.78, 0.47), (0.68, 0.38)]),
        ],
        1 => vec![
            Poly(&[(0.32, 0.12), (0.68, 0.12), (0.68, 0.3), (0.32, 0.3)]),
            Poly(&[(0.32, 0.3), (0.5, 0.3), (0.46, 0.92), (0.31, 0.92)]),
            Poly(&[(0.5, 0.3), (0.68, 0.3), (0.69, 0.92), (0.54, 0.92)]),
        ],
        2 => vec![
            Poly(&[(0.4, 0.14), (0.6, 0.14), (0.62, 0.42), (0.38, 0.42)]),
            Poly(&[(0.38, 0.42), (0.62, 0.42), (0.8, 0.9), (0.2, 0.9)]),
        ],
        3 => vec![Poly(&[(0.36, 0.34), (0.64, 0.34), (0.78, 0.74), (0.22, 0.74)])],
        4 => vec![
            Poly(&[(0.12, 0.62), (0.88, 0.62), (0.88, 0.72), (0.12, 0.72)]),
            Poly(&[(0.12, 0.62), (0.14, 0.4), (0.4, 0.38), (0.58, 0.52), (0.88, 0.56), (0.88, 0.62)]),
        ],
        5 => vec![
            Poly(&[(0.24, 0.45), (0.76, 0.45), (0.8, 0.82), (0.2, 0.82)]),
            Arch { cx: 0.5, cy: 0.46, r_out: 0.17, r_in: 0.11 },
        ],
        6 => vec![
            Ellipse { cx: 0.5, cy: 0.62, rx: 0.38, ry: 0.08, upper: false },
            Ellipse { cx: 0.5, cy: 0.62, rx: 0.2, ry: 0.26, upper: true },
        ],
        _ => vec![
            Poly(&[(0.34, 0.14), (0.66, 0.14), (0.7, 0.94), (0.3, 0.94)]),
            Poly(&[(0.34, 0.14), (0.18, 0.28), (0.2, 0.8), (0.3, 0.8), (0.34, 0.36)]),
            Poly(&[(0.66, 0.14), (0.82, 0.28), (0.8, 0.8), (0.7, 0.8), (0.66, 0.36)]),
        ],
    }
}

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as i32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Renders one glyph of `class` with jitter drawn from `rng`.
pub fn render_glyph<R: Rng + ?Sized>(class: usize, size: u32, rng: &mut R) -> RgbImage {
    let prims = silhouette(class);
    let scale: f32 = rng.random_range(0.7..1.05);
    let dx: f32 = rng.random_range(-0.16..0.16);
    let dy: f32 = rng.random_range(-0.12..0.12);
    let bg = {
        let v: f32 = rng.random_range(0.78..1.0);
        let tint: f32 = rng.random_range(-0.05..0.05);
        [v, v - tint.abs(), v + tint].map(|c| c.clamp(0.0, 1.0))
    };
    let fg = hsv(
        rng.random_range(0.0..1.0),
        rng.random_range(0.35..0.95),
        rng.random_range(0.25..0.85),
    );
    let stripes = rng.random_bool(0.3).then(|| {
        let period: f32 = rng.random_range(0.06..0.14);
        let alt = fg.map(|c| (c * 0.55 + 0.35).min(1.0));
        (period, alt)
    });
    RgbImage::from_fn(size, size, |px, py| {
        let (u, v) = ((px as f32 + 0.5) / size as f32, (py as f32 + 0.5) / size as f32);
        let x = (u - 0.5 - dx) / scale + 0.5;
        let y = (v - 0.5 - dy) / scale + 0.5;
        let inside = prims.iter().any(|p| p.contains(x, y));
        let base = if inside {
            match stripes {
                Some((period, alt)) if ((y / period) as i32) % 2 == 1 => alt,
                _ => fg,
            }
        } else {
            bg
        };
        Rgb(base.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// Writes `<class>/<index>.png` files and a `labels.json` manifest.
pub fn generate_corpus(cfg: &CorpusConfig, out_dir: impl AsRef<Path>) -> Result<CorpusManifest, GanError> {
    if cfg.classes == 0 || cfg.classes > GARMENT_CLASSES.len() {
        return Err(GanError::Config(format!(
            "classes must be in 1..={}",
            GARMENT_CLASSES.len()
        )));
    }
    let out_dir = out_dir.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut items = Vec::with_capacity(cfg.classes * cfg.per_class);
    for (label, name) in GARMENT_CLASSES.iter().enumerate().take(cfg.classes) {
        fs::create_dir_all(out_dir.join(name))?;
        for i in 0..cfg.per_class {
            let img = render_glyph(label, cfg.image_size, &mut rng);
            let file = format!("{name}/{i:04}.png");
            img.save(out_dir.join(&file))
                .map_err(|e| GanError::Io(std::io::Error::other(e)))?;
            items.push(CorpusItem {
                file,
                label,
                class_name: name.to_string(),
            });
        }
    }
    let manifest = CorpusManifest { config: *cfg, items };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| GanError::Format(e.to_string()))?;
    fs::write(out_dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<CorpusManifest, GanError> {
    let bytes = fs::read(dir.as_ref().join(MANIFEST_FILE))?;
    serde_json::from_slice(&bytes).map_err(|e| GanError::Format(e.to_string()))
}

/// Absolute path of an item.
pub fn item_path(dir: impl AsRef<Path>, item: &CorpusItem) -> PathBuf {
    dir.as_ref().join(&item.file)
}
