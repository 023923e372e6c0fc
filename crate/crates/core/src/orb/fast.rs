use crate::raster::GrayImage;

/// Bresenham circle of radius 3, clockwise from twelve o'clock.
const CIRCLE: [(isize, isize); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];
const ARC: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastCorner {
    pub x: usize,
    pub y: usize,
    /// Sum of absolute differences beyond the threshold along the
    /// dominant side of the circle.
    pub score: f64,
}

fn has_arc(flags: u32) -> bool {
    // Duplicate the 16 flags so wrap-around arcs are contiguous.
    let doubled = flags | (flags << 16);
    let mut run = 0;
    for i in 0..32 {
        if doubled >> i & 1 == 1 {
            run += 1;
            if run >= ARC {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

fn corner_score(img: &GrayImage, x: usize, y: usize, threshold: f64) -> Option<f64> {
    let p = img.get(x, y);
    let mut bright = 0u32;
    let mut dark = 0u32;
    let mut bright_sum = 0.0;
    let mut dark_sum = 0.0;
    for (i, (dx, dy)) in CIRCLE.iter().enumerate() {
        let v = img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
        if v > p + threshold {
            bright |= 1 << i;
            bright_sum += v - p - threshold;
        } else if v < p - threshold {
            dark |= 1 << i;
            dark_sum += p - v - threshold;
        }
    }
    // A 9-arc always contains at least two of the four compass points.
    let compass = 0b0001_0001_0001_0001u32;
    let b_ok = (bright & compass).count_ones() >= 2 && has_arc(bright);
    let d_ok = (dark & compass).count_ones() >= 2 && has_arc(dark);
    match (b_ok, d_ok) {
        (false, false) => None,
        _ => Some(bright_sum.max(dark_sum)),
    }
}

/// FAST-9 corners at least `margin` pixels from the border (`margin >= 3`),
/// after 3x3 non-maximum suppression on the corner score. Returned in raster
/// order.
pub fn fast_corners(img: &GrayImage, threshold: f64, margin: usize) -> Vec<FastCorner> {
    let margin = margin.max(3);
    let (w, h) = img.dims();
    if w <= 2 * margin || h <= 2 * margin {
        return Vec::new();
    }
    let mut scores = vec![0.0f64; w * h];
    for y in margin..h - margin {
        for x in margin..w - margin {
            if let Some(s) = corner_score(img, x, y, threshold) {
                // Scores are strictly positive for corners; 0 marks "none".
                scores[y * w + x] = s.max(f64::MIN_POSITIVE);
            }
        }
    }
    let mut out = Vec::new();
    for y in margin..h - margin {
        for x in margin..w - margin {
            let s = scores[y * w + x];
            if s == 0.0 {
                continue;
            }
            let i = y * w + x;
            let mut keep = true;
            'nb: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let j = ((y as isize + dy) as usize) * w + (x as isize + dx) as usize;
                    let n = scores[j];
                    // Equal scores: the earlier pixel in raster order wins.
                    if n > s || (n == s && j < i) {
                        keep = false;
                        break 'nb;
                    }
                }
            }
            if keep {
                out.push(FastCorner { x, y, score: s });
            }
        }
    }
    out
}
