//! Minimal PNG line charts: axes, numeric tick labels (5x7 bitmap digits),
//! and colored polylines. Series-to-color mapping goes in a JSON sidecar.

use identikit_core::raster::Rgb8Image;

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

// 5x7 glyphs for "0123456789.-", one row per byte, low 5 bits used.
const GLYPHS: [(char, [u8; 7]); 12] = [
    ('0', [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E]),
    ('1', [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E]),
    ('2', [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F]),
    ('3', [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E]),
    ('4', [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02]),
    ('5', [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E]),
    ('6', [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E]),
    ('7', [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08]),
    ('8', [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E]),
    ('9', [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C]),
    ('.', [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C]),
    ('-', [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00]),
];

fn glyph(c: char) -> Option<&'static [u8; 7]> {
    GLYPHS.iter().find(|(g, _)| *g == c).map(|(_, rows)| rows)
}

pub struct Chart {
    img: Rgb8Image,
    x0: usize,
    y0: usize,
    plot_w: usize,
    plot_h: usize,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

pub const SERIES_COLORS: [[u8; 3]; 6] = [
    [205, 60, 60],
    [50, 110, 200],
    [50, 160, 80],
    [190, 140, 30],
    [140, 70, 180],
    [60, 60, 60],
];

impl Chart {
    pub fn new(w: usize, h: usize, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        let mut img = Rgb8Image::new(h, w);
        img.data.fill(255);
        let (x0, y0) = (46, 12);
        let plot_w = w - x0 - 14;
        let plot_h = h - y0 - 26;
        let mut chart = Chart {
            img,
            x0,
            y0,
            plot_w,
            plot_h,
            x_range: pad_range(x_range),
            y_range: pad_range(y_range),
        };
        chart.draw_frame();
        chart
    }

    fn to_px(&self, x: f64, y: f64) -> (i64, i64) {
        let fx = (x - self.x_range.0) / (self.x_range.1 - self.x_range.0);
        let fy = (y - self.y_range.0) / (self.y_range.1 - self.y_range.0);
        (
            self.x0 as i64 + (fx * self.plot_w as f64).round() as i64,
            (self.y0 + self.plot_h) as i64 - (fy * self.plot_h as f64).round() as i64,
        )
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.img.w && (y as usize) < self.img.h {
            for (c, &v) in color.iter().enumerate() {
                self.img.set(y as usize, x as usize, c, v);
            }
        }
    }

    fn line(&mut self, a: (i64, i64), b: (i64, i64), color: [u8; 3]) {
        let (mut x, mut y) = a;
        let dx = (b.0 - a.0).abs();
        let dy = -(b.1 - a.1).abs();
        let sx = if a.0 < b.0 { 1 } else { -1 };
        let sy = if a.1 < b.1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.put(x, y, color);
            if x == b.0 && y == b.1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn text(&mut self, x: i64, y: i64, s: &str, color: [u8; 3]) {
        let mut cx = x;
        for ch in s.chars() {
            if let Some(rows) = glyph(ch) {
                for (ry, bits) in rows.iter().enumerate() {
                    for rx in 0..GLYPH_W {
                        if bits & (1 << (GLYPH_W - 1 - rx)) != 0 {
                            self.put(cx + rx as i64, y + ry as i64, color);
                        }
                    }
                }
            }
            cx += GLYPH_W as i64 + 1;
        }
    }

    fn draw_frame(&mut self) {
        let black = [30, 30, 30];
        let bl = (self.x0 as i64, (self.y0 + self.plot_h) as i64);
        let br = ((self.x0 + self.plot_w) as i64, (self.y0 + self.plot_h) as i64);
        let tl = (self.x0 as i64, self.y0 as i64);
        self.line(bl, br, black);
        self.line(tl, bl, black);
        for k in 0..=4 {
            let xv = self.x_range.0 + (self.x_range.1 - self.x_range.0) * k as f64 / 4.0;
            let yv = self.y_range.0 + (self.y_range.1 - self.y_range.0) * k as f64 / 4.0;
            let (px, _) = self.to_px(xv, self.y_range.0);
            let (_, py) = self.to_px(self.x_range.0, yv);
            self.line((px, bl.1), (px, bl.1 + 3), black);
            self.line((self.x0 as i64 - 3, py), (self.x0 as i64, py), black);
            self.text(px - 12, bl.1 + 6, &format_tick(xv), black);
            self.text(6, py - 3, &format_tick(yv), black);
        }
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], color: [u8; 3]) {
        for pair in points.windows(2) {
            let a = self.to_px(pair[0].0, pair[0].1);
            let b = self.to_px(pair[1].0, pair[1].1);
            self.line(a, b, color);
        }
        for &(x, y) in points {
            let (px, py) = self.to_px(x, y);
            for dx in -1..=1i64 {
                for dy in -1..=1i64 {
                    self.put(px + dx, py + dy, color);
                }
            }
        }
    }

    pub fn save(&self, path: &std::path::Path) -> identikit_core::Result<()> {
        self.img.save_png(path)
    }
}

fn pad_range((lo, hi): (f64, f64)) -> (f64, f64) {
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = (hi - lo) * 0.06;
        (lo - pad, hi + pad)
    }
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

/// Bounds helper for polyline data.
pub fn data_range(series: &[Vec<(f64, f64)>]) -> ((f64, f64), (f64, f64)) {
    let mut xr = (f64::INFINITY, f64::NEG_INFINITY);
    let mut yr = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in s {
            xr = (xr.0.min(x), xr.1.max(x));
            yr = (yr.0.min(y), yr.1.max(y));
        }
    }
    if !xr.0.is_finite() {
        xr = (0.0, 1.0);
    }
    if !yr.0.is_finite() {
        yr = (0.0, 1.0);
    }
    (xr, yr)
}
