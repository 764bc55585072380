use image::{Rgb, RgbImage};

const WIDTH: u32 = 480;
const HEIGHT: u32 = 320;
const MARGIN: u32 = 32;
const COLORS: [[u8; 3]; 4] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189]];

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (x0 + t * (x1 - x0)).round() as i64;
        let y = (y0 + t * (y1 - y0)).round() as i64;
        for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x + dx, y + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
}

/// Draws each series of `(x, y)` points as a polyline over shared axes.
pub fn line_plot(series: &[&[(f64, f64)]]) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let axis = Rgb([0, 0, 0]);
    let (left, right) = (MARGIN as f64, (WIDTH - MARGIN) as f64);
    let (top, bottom) = (MARGIN as f64, (HEIGHT - MARGIN) as f64);
    line(&mut img, (left, bottom), (right, bottom), axis);
    line(&mut img, (left, top), (left, bottom), axis);
    let points = series.iter().flat_map(|s| s.iter());
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in points {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if x_lo > x_hi {
        return img;
    }
    let pad = ((y_hi - y_lo) * 0.1).max(1e-3);
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);
    let x_span = (x_hi - x_lo).max(1e-9);
    let to_px = |(x, y): (f64, f64)| {
        (
            left + (x - x_lo) / x_span * (right - left),
            bottom - (y - y_lo) / (y_hi - y_lo) * (bottom - top),
        )
    };
    for (k, s) in series.iter().enumerate() {
        let color = Rgb(COLORS[k % COLORS.len()]);
        for w in s.windows(2) {
            line(&mut img, to_px(w[0]), to_px(w[1]), color);
        }
        for &p in s.iter() {
            let (x, y) = to_px(p);
            for d in -2..=2 {
                line(&mut img, (x - 2.0, y + d as f64), (x + 2.0, y + d as f64), color);
            }
        }
    }
    img
}
