//! Category-grid SVGs of sweep results: x = intensity, y = duration.

use std::fmt::Write;

use sewer_ccmpc::scenarios::{CellOutcome, SweepGrid};
use sewer_ccmpc::simulator::fmt_num;

const CELL_W: f64 = 22.0;
const CELL_H: f64 = 26.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 56.0;
const RIGHT: f64 = 20.0;

struct Frame {
    width: f64,
    height: f64,
    cols: usize,
    rows: usize,
}

impl Frame {
    fn new(grid: &SweepGrid) -> Self {
        let cols = grid.intensities.len();
        let rows = grid.durations.len();
        Self {
            width: LEFT + cols as f64 * CELL_W + RIGHT,
            height: TOP + rows as f64 * CELL_H + BOTTOM,
            cols,
            rows,
        }
    }

    /// Top-left corner of a cell; the shortest duration is the bottom row.
    fn origin(&self, row: usize, col: usize) -> (f64, f64) {
        (LEFT + col as f64 * CELL_W, TOP + (self.rows - 1 - row) as f64 * CELL_H)
    }
}

fn header(frame: &Frame, title: &str, manifest: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="10">"#,
        w = fmt_num(frame.width),
        h = fmt_num(frame.height)
    );
    let _ = writeln!(s, "<!-- manifest_sha256={manifest} -->");
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-size="13">{}</text>"#,
        fmt_num(LEFT),
        escape(title)
    );
    s
}

fn axes(s: &mut String, frame: &Frame, grid: &SweepGrid) {
    let step = (frame.cols / 12).max(1);
    let y_axis = TOP + frame.rows as f64 * CELL_H;
    for (col, &i) in grid.intensities.iter().enumerate() {
        if col % step != step - 1 && col != 0 {
            continue;
        }
        let x = LEFT + (col as f64 + 0.5) * CELL_W;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            fmt_num(x),
            fmt_num(y_axis + 14.0),
            fmt_num(i)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">rain intensity (um/s)</text>"#,
        fmt_num(LEFT + frame.cols as f64 * CELL_W / 2.0),
        fmt_num(y_axis + 32.0)
    );
    for (row, &d) in grid.durations.iter().enumerate() {
        let (_, y) = frame.origin(row, 0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{} h</text>"#,
            fmt_num(LEFT - 6.0),
            fmt_num(y + CELL_H / 2.0 + 3.5),
            fmt_num(d / 3600.0)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">duration</text>"#,
        fmt_num(TOP + frame.rows as f64 * CELL_H / 2.0),
        fmt_num(TOP + frame.rows as f64 * CELL_H / 2.0)
    );
}

fn locate(grid: &SweepGrid, cell: &CellOutcome) -> Option<(usize, usize)> {
    let row = grid.durations.iter().position(|&d| d == cell.duration)?;
    let col = grid.intensities.iter().position(|&i| i == cell.intensity)?;
    Some((row, col))
}

/// Red (none feasible) to green (all feasible).
fn ramp(frac: f64) -> String {
    let lerp = |a: f64, b: f64| (a + (b - a) * frac).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(215.0, 26.0), lerp(48.0, 152.0), lerp(39.0, 80.0))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Cells colored by the number of feasible realizations.
pub fn feasibility_heatmap(grid: &SweepGrid, cells: &[CellOutcome], title: &str, manifest: &str) -> String {
    let frame = Frame::new(grid);
    let mut s = header(&frame, title, manifest);
    for c in cells {
        let Some((row, col)) = locate(grid, c) else { continue };
        let (x, y) = frame.origin(row, col);
        let total = c.records.len().max(1);
        let feasible = c.feasible_count();
        let _ = writeln!(
            s,
            r#"<rect class="cell" x="{}" y="{}" width="{}" height="{}" fill="{}" stroke="white"><title>{} h, {} um/s: {}/{} feasible</title></rect>"#,
            fmt_num(x),
            fmt_num(y),
            fmt_num(CELL_W),
            fmt_num(CELL_H),
            ramp(feasible as f64 / total as f64),
            fmt_num(c.duration / 3600.0),
            fmt_num(c.intensity),
            feasible,
            total
        );
    }
    axes(&mut s, &frame, grid);
    s.push_str("</svg>\n");
    s
}

/// Cells with at least one false-positive overflow marked, annotated with
/// their count; every other cell is a light background.
pub fn false_positive_overlay(grid: &SweepGrid, cells: &[CellOutcome], title: &str, manifest: &str) -> String {
    let frame = Frame::new(grid);
    let mut s = header(&frame, title, manifest);
    for c in cells {
        let Some((row, col)) = locate(grid, c) else { continue };
        let (x, y) = frame.origin(row, col);
        let fill = if c.all_feasible() { "#e8f1e8" } else { "#eeeeee" };
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}" stroke="white"/>"#,
            fmt_num(x),
            fmt_num(y),
            fmt_num(CELL_W),
            fmt_num(CELL_H)
        );
        let fp = c.false_positive_count();
        if fp > 0 {
            let _ = writeln!(
                s,
                r##"<rect class="fp" x="{}" y="{}" width="{}" height="{}" fill="#f46d43"/><text x="{}" y="{}" text-anchor="middle" fill="white">{fp}</text>"##,
                fmt_num(x + 2.0),
                fmt_num(y + 2.0),
                fmt_num(CELL_W - 4.0),
                fmt_num(CELL_H - 4.0),
                fmt_num(x + CELL_W / 2.0),
                fmt_num(y + CELL_H / 2.0 + 3.5)
            );
        }
    }
    axes(&mut s, &frame, grid);
    s.push_str("</svg>\n");
    s
}
