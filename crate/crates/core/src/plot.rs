//! Minimal line-plot rendering: SVG (text-native) and PNG (rasterised with a
//! small embedded bitmap font). Covers what the report emitter needs — line
//! series with optional error bars, axes with round-number ticks, a legend —
//! without pulling a charting stack into the build.

use std::path::Path;

use image::{Rgb, RgbImage};

#[path = "plot_font.rs"]
mod font;

const WIDTH: u32 = 800;
const HEIGHT: u32 = 560;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 56.0;

const PALETTE: [(u8, u8, u8); 6] = [
    (31, 119, 180),
    (255, 127, 14),
    (44, 160, 44),
    (214, 39, 40),
    (148, 103, 189),
    (140, 86, 75),
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    /// (x, y) pairs in data coordinates.
    pub points: Vec<(f64, f64)>,
    /// Optional symmetric error bar per point.
    pub err: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_series(series: &[Series]) -> Self {
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for s in series {
            for (k, &(x, y)) in s.points.iter().enumerate() {
                let e = s.err.as_ref().map_or(0.0, |e| e[k]);
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y - e);
                y_max = y_max.max(y + e);
            }
        }
        if !x_min.is_finite() {
            (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
        }
        if (x_max - x_min).abs() < 1e-12 {
            x_min -= 0.5;
            x_max += 0.5;
        }
        if (y_max - y_min).abs() < 1e-12 {
            y_min -= 0.5;
            y_max += 0.5;
        }
        let pad_x = (x_max - x_min) * 0.05;
        let pad_y = (y_max - y_min) * 0.08;
        Self { x_min: x_min - pad_x, x_max: x_max + pad_x, y_min: y_min - pad_y, y_max: y_max + pad_y }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x_min) / (self.x_max - self.x_min)
            * (WIDTH as f64 - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT as f64 - MARGIN_BOTTOM
            - (y - self.y_min) / (self.y_max - self.y_min)
                * (HEIGHT as f64 - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

/// Round-number ticks covering [min, max].
fn ticks(min: f64, max: f64, target: usize) -> Vec<f64> {
    let span = max - min;
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        mag
    } else if norm < 3.5 {
        2.0 * mag
    } else if norm < 7.5 {
        5.0 * mag
    } else {
        10.0 * mag
    };
    let first = (min / step).ceil() * step;
    let mut out = Vec::new();
    let mut v = first;
    while v <= max + step * 1e-9 {
        // Snap tiny float debris to zero so labels stay clean.
        out.push(if v.abs() < step * 1e-9 { 0.0 } else { v });
        v += step;
    }
    out
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 10000.0 || a < 0.001 {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl LinePlot {
    pub fn to_svg(&self) -> String {
        let frame = Frame::from_series(&self.series);
        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
        ));
        svg.push_str(&format!(
            "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
        ));
        let plot_right = WIDTH as f64 - MARGIN_RIGHT;
        let plot_bottom = HEIGHT as f64 - MARGIN_BOTTOM;
        svg.push_str(&format!(
            "<rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
            plot_right - MARGIN_LEFT,
            plot_bottom - MARGIN_TOP
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
            (MARGIN_LEFT + plot_right) / 2.0,
            xml_escape(&self.title)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
            (MARGIN_LEFT + plot_right) / 2.0,
            HEIGHT as f64 - 14.0,
            xml_escape(&self.x_label)
        ));
        svg.push_str(&format!(
            "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 {})\">{}</text>\n",
            (MARGIN_TOP + plot_bottom) / 2.0,
            (MARGIN_TOP + plot_bottom) / 2.0,
            xml_escape(&self.y_label)
        ));
        for tx in ticks(frame.x_min, frame.x_max, 6) {
            let px = frame.px(tx);
            svg.push_str(&format!(
                "<line x1=\"{px}\" y1=\"{plot_bottom}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>\n",
                plot_bottom + 5.0
            ));
            svg.push_str(&format!(
                "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
                plot_bottom + 18.0,
                tick_label(tx)
            ));
        }
        for ty in ticks(frame.y_min, frame.y_max, 6) {
            let py = frame.py(ty);
            svg.push_str(&format!(
                "<line x1=\"{}\" y1=\"{py}\" x2=\"{MARGIN_LEFT}\" y2=\"{py}\" stroke=\"black\"/>\n",
                MARGIN_LEFT - 5.0
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
                MARGIN_LEFT - 8.0,
                py + 4.0,
                tick_label(ty)
            ));
        }
        for (si, s) in self.series.iter().enumerate() {
            let (r, g, b) = PALETTE[si % PALETTE.len()];
            let color = format!("rgb({r},{g},{b})");
            if let Some(err) = &s.err {
                for (k, &(x, y)) in s.points.iter().enumerate() {
                    let px = frame.px(x);
                    let (y0, y1) = (frame.py(y - err[k]), frame.py(y + err[k]));
                    svg.push_str(&format!(
                        "<line x1=\"{px}\" y1=\"{y0}\" x2=\"{px}\" y2=\"{y1}\" stroke=\"{color}\" stroke-opacity=\"0.5\"/>\n"
                    ));
                }
            }
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{},{}", frame.px(x), frame.py(y)))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                pts.join(" ")
            ));
            for &(x, y) in &s.points {
                svg.push_str(&format!(
                    "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"{color}\"/>\n",
                    frame.px(x),
                    frame.py(y)
                ));
            }
            let ly = MARGIN_TOP + 16.0 + 18.0 * si as f64;
            svg.push_str(&format!(
                "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                plot_right + 10.0,
                plot_right + 30.0
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
                plot_right + 35.0,
                ly + 4.0,
                xml_escape(&s.label)
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }

    pub fn save_svg(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_svg())
    }

    pub fn to_png_image(&self) -> RgbImage {
        let frame = Frame::from_series(&self.series);
        let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
        let black = Rgb([0, 0, 0]);
        let plot_right = WIDTH as f64 - MARGIN_RIGHT;
        let plot_bottom = HEIGHT as f64 - MARGIN_BOTTOM;

        draw_rect(&mut img, MARGIN_LEFT, MARGIN_TOP, plot_right, plot_bottom, black);
        let title_w = text_width(&self.title);
        draw_text(
            &mut img,
            ((MARGIN_LEFT + plot_right) / 2.0 - title_w as f64 / 2.0) as i32,
            12,
            &self.title,
            black,
        );
        let xl_w = text_width(&self.x_label);
        draw_text(
            &mut img,
            ((MARGIN_LEFT + plot_right) / 2.0 - xl_w as f64 / 2.0) as i32,
            HEIGHT as i32 - 20,
            &self.x_label,
            black,
        );
        draw_text_vertical(
            &mut img,
            6,
            ((MARGIN_TOP + plot_bottom) / 2.0 + text_width(&self.y_label) as f64 / 2.0) as i32,
            &self.y_label,
            black,
        );

        for tx in ticks(frame.x_min, frame.x_max, 6) {
            let px = frame.px(tx);
            draw_line(&mut img, px, plot_bottom, px, plot_bottom + 5.0, black);
            let label = tick_label(tx);
            draw_text(
                &mut img,
                (px - text_width(&label) as f64 / 2.0) as i32,
                plot_bottom as i32 + 8,
                &label,
                black,
            );
        }
        for ty in ticks(frame.y_min, frame.y_max, 6) {
            let py = frame.py(ty);
            draw_line(&mut img, MARGIN_LEFT - 5.0, py, MARGIN_LEFT, py, black);
            let label = tick_label(ty);
            draw_text(
                &mut img,
                (MARGIN_LEFT - 8.0 - text_width(&label) as f64) as i32,
                py as i32 - 6,
                &label,
                black,
            );
        }

        for (si, s) in self.series.iter().enumerate() {
            let (r, g, b) = PALETTE[si % PALETTE.len()];
            let color = Rgb([r, g, b]);
            if let Some(err) = &s.err {
                for (k, &(x, y)) in s.points.iter().enumerate() {
                    let px = frame.px(x);
                    draw_line(&mut img, px, frame.py(y - err[k]), px, frame.py(y + err[k]), color);
                }
            }
            for pair in s.points.windows(2) {
                draw_line(
                    &mut img,
                    frame.px(pair[0].0),
                    frame.py(pair[0].1),
                    frame.px(pair[1].0),
                    frame.py(pair[1].1),
                    color,
                );
            }
            for &(x, y) in &s.points {
                draw_marker(&mut img, frame.px(x), frame.py(y), color);
            }
            let ly = MARGIN_TOP + 10.0 + 18.0 * si as f64;
            draw_line(&mut img, plot_right + 10.0, ly, plot_right + 30.0, ly, color);
            draw_text(&mut img, (plot_right + 35.0) as i32, ly as i32 - 6, &s.label, black);
        }
        img
    }

    pub fn save_png(&self, path: &Path) -> Result<(), image::ImageError> {
        self.to_png_image().save(path)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn put(img: &mut RgbImage, x: i32, y: i32, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_line(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, c: Rgb<u8>) {
    let (mut x0, mut y0) = (x0.round() as i32, y0.round() as i32);
    let (x1, y1) = (x1.round() as i32, y1.round() as i32);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
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

fn draw_rect(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, c: Rgb<u8>) {
    draw_line(img, x0, y0, x1, y0, c);
    draw_line(img, x1, y0, x1, y1, c);
    draw_line(img, x1, y1, x0, y1, c);
    draw_line(img, x0, y1, x0, y0, c);
}

fn draw_marker(img: &mut RgbImage, x: f64, y: f64, c: Rgb<u8>) {
    let (x, y) = (x.round() as i32, y.round() as i32);
    for dy in -1..=1 {
        for dx in -1..=1 {
            put(img, x + dx, y + dy, c);
        }
    }
}

fn glyph(ch: char) -> Option<usize> {
    let code = ch as u32;
    if (32..=126).contains(&code) {
        Some((code - 32) as usize)
    } else {
        None
    }
}

pub fn text_width(s: &str) -> u32 {
    s.chars()
        .map(|ch| glyph(ch).map_or(6, |g| font::ADVANCE[g] as u32))
        .sum()
}

fn draw_text(img: &mut RgbImage, x: i32, y: i32, s: &str, c: Rgb<u8>) {
    let mut cx = x;
    for ch in s.chars() {
        let Some(g) = glyph(ch) else {
            cx += 6;
            continue;
        };
        for (row, bits) in font::GLYPHS[g].iter().enumerate() {
            for col in 0..10 {
                if bits & (1 << col) != 0 {
                    put(img, cx + col as i32, y + row as i32, c);
                }
            }
        }
        cx += font::ADVANCE[g] as i32;
    }
}

fn draw_text_vertical(img: &mut RgbImage, x: i32, y: i32, s: &str, c: Rgb<u8>) {
    // Rotated 90 degrees counter-clockwise, reading bottom-to-top.
    let mut cy = y;
    for ch in s.chars() {
        let Some(g) = glyph(ch) else {
            cy -= 6;
            continue;
        };
        for (row, bits) in font::GLYPHS[g].iter().enumerate() {
            for col in 0..10 {
                if bits & (1 << col) != 0 {
                    put(img, x + row as i32, cy - col as i32, c);
                }
            }
        }
        cy -= font::ADVANCE[g] as i32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> LinePlot {
        LinePlot {
            title: "demo".into(),
            x_label: "past frames".into(),
            y_label: "error (mm)".into(),
            series: vec![
                Series {
                    label: "a".into(),
                    points: vec![(0.0, 3.0), (4.0, 2.0), (8.0, 1.5)],
                    err: Some(vec![0.5, 0.4, 0.3]),
                },
                Series { label: "b".into(), points: vec![(0.0, 4.0), (8.0, 3.5)], err: None },
            ],
        }
    }

    #[test]
    fn svg_contains_series_and_labels() {
        let svg = demo().to_svg();
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("past frames"));
        assert!(svg.contains("error (mm)"));
    }

    #[test]
    fn png_renders_nonzero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        demo().save_png(&path).unwrap();
        let meta = std::fs::metadata(&path).unwrap();
        assert!(meta.len() > 1000, "png is {} bytes", meta.len());
    }

    #[test]
    fn ticks_are_round() {
        let t = ticks(0.0, 10.0, 6);
        assert!(t.contains(&0.0) && t.contains(&10.0));
        for pair in t.windows(2) {
            assert!((pair[1] - pair[0] - 2.0).abs() < 1e-9);
        }
    }
}
