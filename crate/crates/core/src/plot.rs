//! Static PNG figures: scene classes, observed past (blue), ground truth
//! (green), predictions (red) and optional heatmap overlays.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::sampling::ProbabilityMap;
use crate::scene::Scene;

pub const PAST: Rgb<u8> = Rgb([40, 90, 230]);
pub const TRUTH: Rgb<u8> = Rgb([30, 170, 60]);
pub const PREDICTION: Rgb<u8> = Rgb([220, 30, 30]);
const HEAT: [f64; 3] = [255.0, 220.0, 0.0];

fn class_color(c: u8) -> Rgb<u8> {
    match c {
        0 => Rgb([200, 200, 200]),
        1 => Rgb([150, 190, 120]),
        2 => Rgb([110, 100, 100]),
        3 => Rgb([60, 120, 60]),
        4 => Rgb([80, 80, 90]),
        k => {
            let v = 60 + (k as u16 * 37 % 160) as u8;
            Rgb([v, v, v])
        }
    }
}

/// Everything drawn on top of the scene, in model-resolution pixels.
#[derive(Clone, Copy, Debug, Default)]
pub struct Layers<'a> {
    pub past: &'a [Point],
    pub truth: &'a [Point],
    pub predictions: &'a [Vec<Point>],
    pub heatmap: Option<&'a ProbabilityMap>,
}

/// Renders at the scene's original resolution.
pub fn render(scene: &Scene, layers: &Layers) -> Result<RgbImage> {
    let (ow, oh) = (scene.original_width, scene.original_height);
    let f = scene.downsample_factor;
    let cell = |x: u32, y: u32| {
        let c = ((x as f64 / f) as usize).min(scene.width - 1);
        let r = ((y as f64 / f) as usize).min(scene.height - 1);
        r * scene.width + c
    };
    let mut img = RgbImage::from_fn(ow as u32, oh as u32, |x, y| class_color(scene.semantic[cell(x, y)]));
    if let Some(map) = layers.heatmap {
        if (map.height(), map.width()) != (scene.height, scene.width) {
            return Err(Error::shape(
                "plot overlay",
                &[map.height(), map.width()],
                &[scene.height, scene.width],
            ));
        }
        let max = map.max();
        if max > 0.0 {
            for (x, y, px) in img.enumerate_pixels_mut() {
                let a = 0.85 * map.data()[cell(x, y)] / max;
                for k in 0..3 {
                    px.0[k] = (px.0[k] as f64 * (1.0 - a) + HEAT[k] * a).round() as u8;
                }
            }
        }
    }
    let up = |p: &Point| Point::new(p.x * f, p.y * f);
    for pred in layers.predictions {
        polyline(&mut img, &pred.iter().map(up).collect::<Vec<_>>(), PREDICTION);
    }
    polyline(&mut img, &layers.truth.iter().map(up).collect::<Vec<_>>(), TRUTH);
    polyline(&mut img, &layers.past.iter().map(up).collect::<Vec<_>>(), PAST);
    Ok(img)
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Bresenham segments between consecutive points.
fn polyline(img: &mut RgbImage, pts: &[Point], c: Rgb<u8>) {
    let r: Vec<(i64, i64)> = pts.iter().map(|p| (p.x.round() as i64, p.y.round() as i64)).collect();
    if let [only] = r.as_slice() {
        put(img, only.0, only.1, c);
    }
    for w in r.windows(2) {
        let ((mut x0, mut y0), (x1, y1)) = (w[0], w[1]);
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            put(img, x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
