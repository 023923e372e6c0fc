//! Seeded synthetic fixtures: textured images, noise, and shifted copies.
//! Used by the test suites, the benchmarks and `gradcheck` in the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::raster::{DepthMap, RgbImage};

/// Piecewise-constant texture of overlapping rectangles and discs on a
/// gradient background, rich in corners and local contrast.
pub fn textured_rgb(width: usize, height: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0u8; width * height * 3];
    let base: [f64; 3] = [rng.random_range(40.0..120.0), rng.random_range(40.0..120.0), rng.random_range(40.0..120.0)];
    for y in 0..height {
        for x in 0..width {
            let g = 60.0 * (x as f64 / width as f64) + 40.0 * (y as f64 / height as f64);
            for c in 0..3 {
                data[(y * width + x) * 3 + c] = (base[c] + g).min(255.0) as u8;
            }
        }
    }
    let area = (width * height) as f64;
    let shapes = ((area / 900.0) as usize).clamp(20, 2000);
    let max_side = (width.min(height) / 6).max(6);
    for _ in 0..shapes {
        let color: [u8; 3] = [rng.random(), rng.random(), rng.random()];
        let sw = rng.random_range(4..=max_side);
        let sh = rng.random_range(4..=max_side);
        let x0 = rng.random_range(0..width);
        let y0 = rng.random_range(0..height);
        let disc = rng.random_bool(0.3);
        let (cx, cy) = (x0 as f64 + sw as f64 / 2.0, y0 as f64 + sh as f64 / 2.0);
        let r2 = (sw.min(sh) as f64 / 2.0).powi(2);
        for y in y0..(y0 + sh).min(height) {
            for x in x0..(x0 + sw).min(width) {
                if disc && (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2) > r2 {
                    continue;
                }
                data[(y * width + x) * 3..(y * width + x) * 3 + 3].copy_from_slice(&color);
            }
        }
    }
    RgbImage::new(width, height, data).expect("dimensions are positive")
}

/// Independent uniform noise per channel.
pub fn noise_rgb(width: usize, height: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height * 3).map(|_| rng.random()).collect();
    RgbImage::new(width, height, data).expect("dimensions are positive")
}

/// Content moved by `(dx, dy)` whole pixels; exposed border replicates the
/// nearest source pixel.
pub fn shifted_rgb(img: &RgbImage, dx: isize, dy: isize) -> RgbImage {
    let (w, h) = img.dims();
    RgbImage::from_fn(w, h, |x, y| {
        let sx = (x as isize - dx).clamp(0, w as isize - 1) as usize;
        let sy = (y as isize - dy).clamp(0, h as isize - 1) as usize;
        img.pixel(sx, sy)
    })
    .expect("dimensions are positive")
}

/// `img` with every pixel for which `replace(x, y)` holds swapped for noise.
pub fn corrupted_rgb(
    img: &RgbImage,
    seed: u64,
    replace: impl Fn(usize, usize) -> bool,
) -> RgbImage {
    let noise = noise_rgb(img.width(), img.height(), seed);
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        if replace(x, y) {
            noise.pixel(x, y)
        } else {
            img.pixel(x, y)
        }
    })
    .expect("dimensions are positive")
}

/// Smooth positive depth (a tilted plane plus bumps), all pixels valid.
pub fn smooth_depth(width: usize, height: usize, seed: u64) -> DepthMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b, c): (f64, f64, f64) = (
        rng.random_range(2.0..4.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let (fx, fy): (f64, f64) = (rng.random_range(1.0..4.0), rng.random_range(1.0..4.0));
    let values = (0..width * height)
        .map(|i| {
            let (x, y) = ((i % width) as f64 / width as f64, (i / width) as f64 / height as f64);
            a + 0.5 * b * x + 0.5 * c * y + 0.2 * (fx * x * 6.0).sin() * (fy * y * 6.0).cos()
        })
        .collect();
    DepthMap::from_values(width, height, values).expect("dimensions are positive")
}
