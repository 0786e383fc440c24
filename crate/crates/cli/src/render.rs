//! Static PPM panels: per outer iteration, the K conditional samples
//! followed by the decoded predictions.

use std::fs;
use std::path::Path;

use annoconsist::{InstanceLabeling, InstancePrediction, PixelMask, SceneRecord};
use anyhow::Result;

const GAP: usize = 2;

const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
];

fn class_color(c: usize) -> [u8; 3] {
    PALETTE[(c - 1) % PALETTE.len()]
}

pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgb: vec![255; width * height * 3],
        }
    }

    fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.rgb[i..i + 3].copy_from_slice(&c);
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }
}

/// Dimmed image with masks blended in their class color.
fn panel(scene: &SceneRecord, masks: &[(usize, &PixelMask)]) -> Vec<[u8; 3]> {
    let (w, h) = (scene.width(), scene.height());
    let mut px: Vec<[f32; 3]> = (0..w * h)
        .map(|i| scene.image.pixel(i % w, i / w).map(|v| 0.35 * v))
        .collect();
    for &(c, m) in masks {
        let col = class_color(c).map(|v| v as f32 / 255.0);
        for (x, y) in m.pixels() {
            let p = &mut px[y * w + x];
            for k in 0..3 {
                p[k] = 0.4 * p[k] + 0.6 * col[k];
            }
        }
        for (x, y) in m.inner_contour().pixels() {
            px[y * w + x] = col;
        }
    }
    px.into_iter().map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)).collect()
}

fn sample_masks<'a>(scene: &'a SceneRecord, y: &InstanceLabeling) -> Vec<(usize, &'a PixelMask)> {
    y.selected().filter_map(|(u, c)| scene.pool.get(u).map(|m| (c, m))).collect()
}

fn pred_masks(preds: &[InstancePrediction]) -> Vec<(usize, &PixelMask)> {
    preds.iter().map(|p| (p.class_id, &p.mask)).collect()
}

/// Rows are outer iterations; the first row holds the image and the ground
/// truth. Each later row is `K` sample panels then the decoded predictions.
pub fn compose(scene: &SceneRecord, rows: &[(Vec<InstanceLabeling>, Vec<InstancePrediction>)]) -> Canvas {
    let (w, h) = (scene.width(), scene.height());
    let cols = rows.iter().map(|r| r.0.len() + 1).max().unwrap_or(0).max(2);
    let mut canvas = Canvas::new(cols * (w + GAP) - GAP, (rows.len() + 1) * (h + GAP) - GAP);
    let mut blit = |row: usize, col: usize, px: Vec<[u8; 3]>| {
        let (ox, oy) = (col * (w + GAP), row * (h + GAP));
        for (i, c) in px.into_iter().enumerate() {
            canvas.put(ox + i % w, oy + i / w, c);
        }
    };
    let raw: Vec<[u8; 3]> = (0..w * h)
        .map(|i| scene.image.pixel(i % w, i / w).map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    blit(0, 0, raw);
    let gt: Vec<(usize, &PixelMask)> = scene.gt.iter().map(|g| (g.class_id, &g.mask)).collect();
    blit(0, 1, panel(scene, &gt));
    for (r, (samples, preds)) in rows.iter().enumerate() {
        for (k, y) in samples.iter().enumerate() {
            blit(r + 1, k, panel(scene, &sample_masks(scene, y)));
        }
        blit(r + 1, samples.len(), panel(scene, &pred_masks(preds)));
    }
    canvas
}

pub fn write_ppm(canvas: &Canvas, path: &Path) -> Result<()> {
    fs::write(path, canvas.to_ppm())?;
    Ok(())
}
