//! Rendering for 2D runs: an SVG raster of realized regions with the
//! classification graph and findings drawn on top, CSV exports of the raster
//! and of per-vertex sample clouds, and PGM output for extracted points.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::exec::run_tasks;
use crate::net::SdNetwork;
use crate::pattern::pattern_number;
use crate::verify::{ClassificationGraph, FindingKind, VerificationReport};

/// Side length of the drawing area in pixels.
const CANVAS: f64 = 720.0;

const CLASS_HUES: [u32; 10] = [210, 25, 130, 55, 285, 0, 170, 330, 95, 250];

/// SVG rendering plus the raster it was built from, one CSV row per cell.
#[derive(Debug)]
pub struct RegionPlot {
    pub svg: String,
    pub csv: String,
}

fn cell_fill(class: usize, number: u64) -> String {
    let hue = CLASS_HUES[class % CLASS_HUES.len()];
    let lightness = 42 + 7 * (number % 4);
    format!("hsl({hue},62%,{lightness}%)")
}

/// Rasterizes the realized (class, pattern) map over the input bounds at
/// `resolution` x `resolution` cells and overlays the report's graph: edges
/// between limiting-ball centers, vertex markers, and one orange square per
/// finding outlining its L-inf ball (dashed for protruding regions).
///
/// Refuses non-2D inputs. The CSV carries the raw grid as
/// `x0,x1,class,key` rows, cell centers in row-major order.
pub fn emit_region_svg(
    net: &SdNetwork,
    report: &VerificationReport,
    resolution: usize,
) -> Result<RegionPlot> {
    let bounds = &net.input_bounds;
    if bounds.dim() != 2 {
        return Err(Error::Unsupported(format!(
            "region rendering needs 2 input dimensions, model has {}",
            bounds.dim()
        )));
    }
    assert!(resolution >= 2, "resolution must be at least 2");
    let (lo0, hi0) = (bounds.lower[0], bounds.upper[0]);
    let (lo1, hi1) = (bounds.lower[1], bounds.upper[1]);
    let (span0, span1) = (hi0 - lo0, hi1 - lo1);
    let step0 = span0 / resolution as f64;
    let step1 = span1 / resolution as f64;
    let px = |x: f64| (x - lo0) / span0 * CANVAS;
    let py = |y: f64| (hi1 - y) / span1 * CANVAS;

    // Row-major realized grid; row r spans y in [lo1 + r*step1, lo1 + (r+1)*step1).
    let grid: Vec<Vec<(usize, u64, f64, f64)>> = run_tasks(resolution, |r| {
        let y = lo1 + (r as f64 + 0.5) * step1;
        (0..resolution)
            .map(|c| {
                let x = lo0 + (c as f64 + 0.5) * step0;
                let (class, pattern) = net.realized(&[x, y]);
                let number = pattern_number(&pattern, &net.group_count)
                    .expect("pattern universe fits u64 for any trainable net");
                (class, number.0, x, y)
            })
            .collect()
    });

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{c}" height="{c}" viewBox="0 0 {c} {c}">"#,
        c = CANVAS
    )
    .unwrap();
    writeln!(
        svg,
        "<desc>region map; version={}; seed={}; R={}; r={}; resolution={}</desc>",
        report.version,
        report.seed,
        report.params.radius_threshold,
        report.params.ratio_threshold,
        resolution
    )
    .unwrap();

    // Raster, run-length merged within each row.
    writeln!(svg, r#"<g stroke="none">"#).unwrap();
    for (r, row) in grid.iter().enumerate() {
        let y_top = CANVAS - (r + 1) as f64 * CANVAS / resolution as f64;
        let height = CANVAS / resolution as f64;
        let mut c0 = 0;
        for c in 1..=resolution {
            if c < resolution && (row[c].0, row[c].1) == (row[c0].0, row[c0].1) {
                continue;
            }
            let x_left = c0 as f64 * CANVAS / resolution as f64;
            let width = (c - c0) as f64 * CANVAS / resolution as f64;
            writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                x_left,
                y_top,
                width,
                height,
                cell_fill(row[c0].0, row[c0].1)
            )
            .unwrap();
            c0 = c;
        }
    }
    writeln!(svg, "</g>").unwrap();

    // Graph edges between limiting-ball centers; vertices without a ball
    // (thin regions) stay undrawn.
    let center = |v: usize| report.vertices[v].ball.as_ref().map(|b| (b.center[0], b.center[1]));
    writeln!(svg, r##"<g stroke="#111" stroke-width="1.6" opacity="0.85">"##).unwrap();
    for &(i, j) in &report.edges {
        if let (Some(a), Some(b)) = (center(i), center(j)) {
            writeln!(
                svg,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
                px(a.0),
                py(a.1),
                px(b.0),
                py(b.1)
            )
            .unwrap();
        }
    }
    writeln!(svg, "</g>").unwrap();
    writeln!(svg, r##"<g fill="#111" stroke="#fff" stroke-width="0.8">"##).unwrap();
    for v in 0..report.vertices.len() {
        if let Some((x, y)) = center(v) {
            writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3.2"/>"#, px(x), py(y)).unwrap();
        }
    }
    writeln!(svg, "</g>").unwrap();

    // One highlight square per finding, outlining its L-inf ball.
    writeln!(svg, r##"<g fill="none" stroke="#ff8c00" stroke-width="3">"##).unwrap();
    for finding in &report.findings {
        let ball = &finding.ball;
        let (cx, cy, rad) = (ball.center[0], ball.center[1], ball.radius);
        let dash = match finding.kind {
            FindingKind::Protruding => r#" stroke-dasharray="7 4""#,
            FindingKind::SmallIsolated => "",
        };
        writeln!(
            svg,
            r#"<rect class="finding" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"{}/>"#,
            px(cx - rad),
            py(cy + rad),
            px(cx + rad) - px(cx - rad),
            py(cy - rad) - py(cy + rad),
            dash
        )
        .unwrap();
    }
    writeln!(svg, "</g>").unwrap();
    writeln!(svg, "</svg>").unwrap();

    let mut csv = String::from("x0,x1,class,key\n");
    for row in &grid {
        for &(class, number, x, y) in row {
            writeln!(csv, "{x},{y},{class},{number}").unwrap();
        }
    }
    Ok(RegionPlot { svg, csv })
}

/// CSV of every accepted sample, tagged by vertex and class:
/// `vertex,class,x0,..,x{d-1}`.
pub fn sample_clouds_csv(graph: &ClassificationGraph) -> String {
    let dim = graph.vertices.first().map_or(0, |r| r.bounding_box.dim());
    let mut csv = String::from("vertex,class");
    for d in 0..dim {
        write!(csv, ",x{d}").unwrap();
    }
    csv.push('\n');
    for (v, (region, stats)) in graph.vertices.iter().zip(&graph.stats).enumerate() {
        for point in &stats.accepted {
            write!(csv, "{v},{}", region.class).unwrap();
            for coord in point {
                write!(csv, ",{coord}").unwrap();
            }
            csv.push('\n');
        }
    }
    csv
}

/// CSV point list, `x0,..,x{d-1}` per row. The header is emitted even when
/// the list is empty.
pub fn points_csv(dim: usize, points: &[Vec<f64>]) -> String {
    let mut csv = String::new();
    for d in 0..dim {
        if d > 0 {
            csv.push(',');
        }
        write!(csv, "x{d}").unwrap();
    }
    csv.push('\n');
    for point in points {
        debug_assert_eq!(point.len(), dim);
        for (d, coord) in point.iter().enumerate() {
            if d > 0 {
                csv.push(',');
            }
            write!(csv, "{coord}").unwrap();
        }
        csv.push('\n');
    }
    csv
}

/// Binary PGM (P5), one byte per pixel, values clamped from [0, 1].
pub fn write_pgm(path: &Path, pixels: &[f64], width: usize, height: usize) -> Result<()> {
    assert_eq!(pixels.len(), width * height);
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Tiles square images into one near-square montage with 1px white gaps.
/// Returns the montage pixels and its (width, height).
pub fn image_grid(points: &[Vec<f64>], side: usize) -> (Vec<f64>, usize, usize) {
    if points.is_empty() {
        return (Vec::new(), 0, 0);
    }
    let cols = (points.len() as f64).sqrt().ceil() as usize;
    let rows = points.len().div_ceil(cols);
    let width = cols * side + (cols - 1);
    let height = rows * side + (rows - 1);
    let mut pixels = vec![1.0; width * height];
    for (k, point) in points.iter().enumerate() {
        assert_eq!(point.len(), side * side);
        let (row, col) = (k / cols, k % cols);
        let (y0, x0) = (row * (side + 1), col * (side + 1));
        for y in 0..side {
            for x in 0..side {
                pixels[(y0 + y) * width + x0 + x] = point[y * side + x];
            }
        }
    }
    (pixels, width, height)
}
