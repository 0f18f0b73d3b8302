//! Small raster toolkit: colormap, bilinear upsampling, blending, markers and
//! a trend-plot renderer.

use image::{Rgb, RgbImage};

use crate::stats::TrendFit;

// Inferno-like control points, luminance non-decreasing.
const LUT: [(f64, [u8; 3]); 9] = [
    (0.0, [0, 0, 4]),
    (0.125, [31, 12, 72]),
    (0.25, [85, 15, 109]),
    (0.375, [136, 34, 106]),
    (0.5, [186, 54, 85]),
    (0.625, [227, 89, 51]),
    (0.75, [249, 140, 10]),
    (0.875, [249, 201, 50]),
    (1.0, [252, 255, 164]),
];

/// Maps `v` in [0, 1] onto the colormap. Out-of-range values are clamped.
pub fn colormap(v: f64) -> Rgb<u8> {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let k = LUT.iter().position(|(t, _)| *t >= v).unwrap_or(LUT.len() - 1).max(1);
    let (t0, c0) = LUT[k - 1];
    let (t1, c1) = LUT[k];
    let f = (v - t0) / (t1 - t0);
    Rgb(std::array::from_fn(|i| {
        (c0[i] as f64 + f * (c1[i] as f64 - c0[i] as f64)).round() as u8
    }))
}

pub fn luminance(c: Rgb<u8>) -> f64 {
    0.2126 * c[0] as f64 + 0.7152 * c[1] as f64 + 0.0722 * c[2] as f64
}

/// Resamples a row-major `rows × cols` grid to `width × height`, sampling at
/// pixel centers with edge clamping.
pub fn upsample_bilinear(grid: &[f64], rows: usize, cols: usize, width: u32, height: u32) -> Vec<f64> {
    assert_eq!(grid.len(), rows * cols, "grid size mismatch");
    let axis = |p: u32, n: usize, size: u32| -> (usize, usize, f64) {
        let g = ((p as f64 + 0.5) * n as f64 / size as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = g.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, g - i0 as f64)
    };
    let xs: Vec<_> = (0..width).map(|c| axis(c, cols, width)).collect();
    let mut out = Vec::with_capacity(width as usize * height as usize);
    for r in 0..height {
        let (r0, r1, fy) = axis(r, rows, height);
        for &(c0, c1, fx) in &xs {
            let top = grid[r0 * cols + c0] * (1.0 - fx) + grid[r0 * cols + c1] * fx;
            let bottom = grid[r1 * cols + c0] * (1.0 - fx) + grid[r1 * cols + c1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Alpha-blends the colormapped field over the image.
pub fn blend_heat(image: &RgbImage, field: &[f64], alpha: f64) -> RgbImage {
    assert_eq!(field.len(), (image.width() * image.height()) as usize, "field size mismatch");
    let mut out = image.clone();
    for (px, &v) in out.pixels_mut().zip(field) {
        let heat = colormap(v);
        for i in 0..3 {
            px[i] = ((1.0 - alpha) * px[i] as f64 + alpha * heat[i] as f64).round() as u8;
        }
    }
    out
}

/// Filled disk centred at (`cx`, `cy`) in pixel units.
pub fn fill_circle(image: &mut RgbImage, cx: f64, cy: f64, radius: f64, color: Rgb<u8>) {
    let (w, h) = image.dimensions();
    let r2 = radius * radius;
    let y0 = (cy - radius).floor().max(0.0) as u32;
    let y1 = ((cy + radius).ceil().max(0.0) as u32).min(h);
    let x0 = (cx - radius).floor().max(0.0) as u32;
    let x1 = ((cx + radius).ceil().max(0.0) as u32).min(w);
    for y in y0..y1 {
        for x in x0..x1 {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if dx * dx + dy * dy <= r2 {
                image.put_pixel(x, y, color);
            }
        }
    }
}

fn line(image: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        if x >= 0.0 && y >= 0.0 && (x as u32) < image.width() && (y as u32) < image.height() {
            image.put_pixel(x as u32, y as u32, color);
        }
    }
}

const SERIES_COLORS: [[u8; 3]; 4] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189]];

/// One plotted series: observed points plus its fit.
pub struct PlotSeries<'a> {
    pub points: &'a [(f64, f64)],
    pub fit: &'a TrendFit,
}

/// Renders observed points, fitted lines and shaded confidence bands.
pub fn plot_trends(series: &[PlotSeries<'_>], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (xmin, xmax) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !xmin.is_finite() || xmax <= xmin {
        return img;
    }
    let samples: Vec<Vec<_>> = series.iter().map(|s| s.fit.band_samples(xmin, xmax, width as usize)).collect();
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for (s, band) in series.iter().zip(&samples) {
        for p in s.points {
            ymin = ymin.min(p.1);
            ymax = ymax.max(p.1);
        }
        for b in band {
            ymin = ymin.min(b.lower);
            ymax = ymax.max(b.upper);
        }
    }
    if ymax <= ymin {
        ymax = ymin + 1.0;
    }
    let pad = 0.08;
    let (pw, ph) = (width as f64, height as f64);
    let to_px = |x: f64, y: f64| {
        (
            pw * (pad + (1.0 - 2.0 * pad) * (x - xmin) / (xmax - xmin)),
            ph * (1.0 - pad - (1.0 - 2.0 * pad) * (y - ymin) / (ymax - ymin)),
        )
    };
    let axis = Rgb([60, 60, 60]);
    let (ox, oy) = (pw * pad, ph * (1.0 - pad));
    line(&mut img, (ox, oy), (pw * (1.0 - pad), oy), axis);
    line(&mut img, (ox, oy), (ox, ph * pad), axis);
    for (k, (s, band)) in series.iter().zip(&samples).enumerate() {
        let c = SERIES_COLORS[k % SERIES_COLORS.len()];
        let shade = Rgb(std::array::from_fn(|i| (255.0 - 0.25 * (255.0 - c[i] as f64)).round() as u8));
        for b in band {
            let (x, y_hi) = to_px(b.x, b.upper);
            let (_, y_lo) = to_px(b.x, b.lower);
            line(&mut img, (x, y_hi), (x, y_lo), shade);
        }
        for pair in band.windows(2) {
            line(&mut img, to_px(pair[0].x, pair[0].fit), to_px(pair[1].x, pair[1].fit), Rgb(c));
        }
        for p in s.points {
            let (x, y) = to_px(p.0, p.1);
            fill_circle(&mut img, x, y, 3.5, Rgb(c));
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_luminance_is_monotone() {
        let mut last = -1.0;
        for i in 0..=1000 {
            let l = luminance(colormap(i as f64 / 1000.0));
            assert!(l >= last - 0.5, "step {i}: {l} < {last}");
            last = l;
        }
        assert_eq!(colormap(0.0), Rgb([0, 0, 4]));
        assert_eq!(colormap(1.0), Rgb([252, 255, 164]));
    }

    #[test]
    fn upsample_constant_and_identity() {
        let g = vec![0.3; 6];
        assert!(upsample_bilinear(&g, 2, 3, 17, 9).iter().all(|v| (v - 0.3).abs() < 1e-12));
        let g: Vec<f64> = (0..12).map(|v| v as f64).collect();
        assert_eq!(upsample_bilinear(&g, 3, 4, 4, 3), g);
    }

    #[test]
    fn circle_covers_center() {
        let mut img = RgbImage::new(20, 20);
        fill_circle(&mut img, 10.0, 10.0, 3.0, Rgb([255, 0, 0]));
        assert_eq!(img.get_pixel(10, 10), &Rgb([255, 0, 0]));
        assert_eq!(img.get_pixel(0, 0), &Rgb([0, 0, 0]));
        assert_eq!(img.pixels().filter(|p| p[0] == 255).count(), 32);
    }
}
