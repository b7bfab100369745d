//! Static figures: reconstruction grids and ranking bands.
//!
//! Colour ramps:
//!
//! * original tier: `#c0392b` for 1, `#bdbdbd` for 0;
//! * reconstruction tier: linear from white (0) to `#c0392b` (1);
//! * error tier (`x − x̃`): linear from blue `#0000ff` (−1) through white (0)
//!   to red `#ff0000` (+1), so the red minus blue channel grows with the
//!   error; `|err| < 1e-6` is drawn exactly white;
//! * padding cells: `#303030`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{ndcg, RankingReport};

pub const ONE_COLOR: &str = "#c0392b";
pub const ZERO_COLOR: &str = "#bdbdbd";
pub const PAD_COLOR: &str = "#303030";
/// Errors smaller than this are drawn at the ramp midpoint.
pub const ERROR_FLOOR: f64 = 1e-6;

const CELL: usize = 12;
const MARGIN: usize = 20;
const BAND_WIDTH: usize = 1000;
const BAND_HEIGHT: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
}

impl GridLayout {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    /// The most square exact factorisation of `m` when its long side is at
    /// most three times the short side; otherwise the near-square layout
    /// with the least padding.
    pub fn for_attributes(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::shape("GridLayout", "0 attributes", "at least one cell"));
        }
        let acceptable = |r: usize, c: usize| c <= 3 * r;
        let exact = (1..=m.isqrt()).rev().find(|r| m % r == 0).map(|r| (r, m / r));
        if let Some((r, c)) = exact.filter(|&(r, c)| acceptable(r, c)) {
            return Ok(Self::new(r, c));
        }
        let (r, c) = (1..=m.isqrt() + 1)
            .map(|r| (r, m.div_ceil(r)))
            .filter(|&(r, c)| r <= c && acceptable(r, c))
            .min_by_key(|&(r, c)| (r * c - m, c - r))
            .unwrap_or((1, m));
        Ok(Self::new(r, c))
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn padding(&self, m: usize) -> usize {
        self.cells().saturating_sub(m)
    }

    fn check(&self, m: usize) -> Result<()> {
        if m > self.cells() {
            return Err(Error::shape(
                "reconstruction grid",
                format!("{m} values"),
                format!("{}×{} layout", self.rows, self.cols),
            ));
        }
        Ok(())
    }
}

fn hex(rgb: (u8, u8, u8)) -> String {
    format!("#{:02x}{:02x}{:02x}", rgb.0, rgb.1, rgb.2)
}

fn lerp(a: u8, b: u8, t: f64) -> u8 {
    (f64::from(a) + (f64::from(b) - f64::from(a)) * t).round() as u8
}

pub fn binary_color(v: f64) -> &'static str {
    if v >= 0.5 {
        ONE_COLOR
    } else {
        ZERO_COLOR
    }
}

pub fn reconstruction_rgb(v: f64) -> (u8, u8, u8) {
    let t = v.clamp(0.0, 1.0);
    (lerp(255, 0xc0, t), lerp(255, 0x39, t), lerp(255, 0x2b, t))
}

pub fn error_rgb(err: f64) -> (u8, u8, u8) {
    if err.abs() < ERROR_FLOOR {
        return (255, 255, 255);
    }
    let e = err.clamp(-1.0, 1.0);
    if e < 0.0 {
        let t = -e;
        (lerp(255, 0, t), lerp(255, 0, t), 255)
    } else {
        (255, lerp(255, 0, e), lerp(255, 0, e))
    }
}

fn check_pair(x: &[f64], x_rec: &[f64]) -> Result<()> {
    if x.len() != x_rec.len() {
        return Err(Error::shape(
            "reconstruction grid",
            format!("{} originals", x.len()),
            format!("{} reconstructions", x_rec.len()),
        ));
    }
    Ok(())
}

/// Three stacked grids: original, reconstruction and error.
pub fn reconstruction_grid_svg(x: &[f64], x_rec: &[f64], layout: GridLayout) -> Result<String> {
    check_pair(x, x_rec)?;
    layout.check(x.len())?;
    let tier_h = layout.rows * CELL;
    let width = layout.cols * CELL + 2 * MARGIN;
    let height = 3 * (tier_h + MARGIN) + MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let tiers = ["original", "reconstructed", "error"];
    for (t, name) in tiers.iter().enumerate() {
        let top = MARGIN + t * (tier_h + MARGIN);
        let _ = writeln!(
            svg,
            r#"<g class="tier" id="{name}"><text x="{MARGIN}" y="{}" font-size="11">{name}</text>"#,
            top - 4
        );
        for cell in 0..layout.cells() {
            let (r, c) = (cell / layout.cols, cell % layout.cols);
            let (px, py) = (MARGIN + c * CELL, top + r * CELL);
            let (class, fill) = if cell >= x.len() {
                ("pad", PAD_COLOR.to_owned())
            } else {
                let fill = match t {
                    0 => binary_color(x[cell]).to_owned(),
                    1 => hex(reconstruction_rgb(x_rec[cell])),
                    _ => hex(error_rgb(x[cell] - x_rec[cell])),
                };
                ("cell", fill)
            };
            let _ = writeln!(
                svg,
                r#"<rect class="{class}" x="{px}" y="{py}" width="{CELL}" height="{CELL}" fill="{fill}"/>"#
            );
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Plain (P2) graymap of the three tiers separated by one white row.
/// Original: 1 → 20, 0 → 200. Reconstruction: `200 − 180·x̃`.
/// Error: `128 + 120·err`. Padding: 255.
pub fn reconstruction_grid_pgm(x: &[f64], x_rec: &[f64], layout: GridLayout) -> Result<String> {
    check_pair(x, x_rec)?;
    layout.check(x.len())?;
    let height = 3 * layout.rows + 2;
    let mut out = format!("P2\n{} {}\n255\n", layout.cols, height);
    for t in 0..3 {
        if t > 0 {
            let sep = vec!["255"; layout.cols].join(" ");
            let _ = writeln!(out, "{sep}");
        }
        for r in 0..layout.rows {
            let line: Vec<String> = (0..layout.cols)
                .map(|c| {
                    let cell = r * layout.cols + c;
                    if cell >= x.len() {
                        return 255.to_string();
                    }
                    let v = match t {
                        0 if x[cell] >= 0.5 => 20.0,
                        0 => 200.0,
                        1 => 200.0 - 180.0 * x_rec[cell].clamp(0.0, 1.0),
                        _ => {
                            let e = x[cell] - x_rec[cell];
                            if e.abs() < ERROR_FLOOR {
                                128.0
                            } else {
                                128.0 + 120.0 * e.clamp(-1.0, 1.0)
                            }
                        }
                    };
                    (v.round() as u8).to_string()
                })
                .collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    Ok(out)
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(format!("cannot write {}", path.display()), e))
}

/// Writes the SVG to `path` and the graymap next to it with a `.pgm`
/// extension.
pub fn render_reconstruction_grid(
    x: &[f64],
    x_rec: &[f64],
    layout: GridLayout,
    path: &Path,
) -> Result<()> {
    write_file(path, &reconstruction_grid_svg(x, x_rec, layout)?)?;
    write_file(&path.with_extension("pgm"), &reconstruction_grid_pgm(x, x_rec, layout)?)
}

/// Horizontal position and width of the bar for `rank` on a band showing
/// ranks `first..=last`. Bars are `max(1, width/count)` wide.
pub fn bar_geometry(rank: usize, first: usize, last: usize, width: f64) -> (f64, f64) {
    let count = (last - first + 1) as f64;
    let bar = (width / count).max(1.0);
    let span = (last - first).max(1) as f64;
    let x = (rank - first) as f64 / span * (width - bar);
    (x, bar)
}

/// Two bands: the full ranking `1..=N` and a zoom over
/// `[min anomaly rank, max anomaly rank]`.
pub fn ranking_band_svg(ranking: &RankingReport, label: &str) -> Result<String> {
    let metrics = ndcg(ranking)?;
    let ranks = &metrics.anomaly_ranks;
    let n = ranking.len();
    let (lo, hi) = (ranks[0], ranks[ranks.len() - 1]);
    let width = BAND_WIDTH as f64;
    let total_w = BAND_WIDTH + 2 * MARGIN;
    let total_h = 2 * (BAND_HEIGHT + 2 * MARGIN) + MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{total_h}" viewBox="0 0 {total_w} {total_h}">"#
    );
    let title = if label.is_empty() {
        format!("nDCG = {:.4}", metrics.ndcg)
    } else {
        format!("{} nDCG = {:.4}", escape(label), metrics.ndcg)
    };
    let _ = writeln!(svg, "<title>{title}</title>");
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="{}" font-size="13">{title} (N = {n}, k = {})</text>"#,
        MARGIN - 5,
        ranks.len()
    );
    let bands = [("full", 1, n), ("zoom", lo, hi)];
    for (b, &(name, first, last)) in bands.iter().enumerate() {
        let top = MARGIN + b * (BAND_HEIGHT + 2 * MARGIN) + MARGIN / 2;
        let _ = writeln!(
            svg,
            r#"<g class="band" id="{name}" data-first="{first}" data-last="{last}">"#
        );
        let _ = writeln!(
            svg,
            r##"<rect class="background" x="{MARGIN}" y="{top}" width="{BAND_WIDTH}" height="{BAND_HEIGHT}" fill="#eeeeee"/>"##
        );
        for &rank in ranks {
            let (x, bar) = bar_geometry(rank, first, last, width);
            let _ = writeln!(
                svg,
                r#"<rect class="anomaly" data-rank="{rank}" x="{:.3}" y="{top}" width="{:.3}" height="{BAND_HEIGHT}" fill="{ONE_COLOR}"/>"#,
                MARGIN as f64 + x,
                bar
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{MARGIN}" y="{}" font-size="10">{first}</text><text x="{}" y="{}" font-size="10" text-anchor="end">{last}</text>"#,
            top + BAND_HEIGHT + 12,
            MARGIN + BAND_WIDTH,
            top + BAND_HEIGHT + 12
        );
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn render_ranking_band(ranking: &RankingReport, label: &str, path: &Path) -> Result<()> {
    write_file(path, &ranking_band_svg(ranking, label)?)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts() {
        assert_eq!(GridLayout::for_attributes(299).unwrap(), GridLayout::new(13, 23));
        assert_eq!(GridLayout::for_attributes(299).unwrap().padding(299), 0);
        assert_eq!(GridLayout::for_attributes(30).unwrap(), GridLayout::new(5, 6));
        assert_eq!(GridLayout::for_attributes(7).unwrap(), GridLayout::new(2, 4));
        assert_eq!(GridLayout::for_attributes(1).unwrap(), GridLayout::new(1, 1));
        // 296 = 8 × 37 is too elongated; 11 × 27 leaves one padding cell.
        assert_eq!(GridLayout::for_attributes(296).unwrap(), GridLayout::new(11, 27));
        assert!(GridLayout::for_attributes(0).is_err());
        for m in 1..400 {
            let l = GridLayout::for_attributes(m).unwrap();
            assert!(l.cells() >= m && l.rows <= l.cols && l.cols <= 3 * l.rows.max(1), "{m}");
        }
    }

    #[test]
    fn layout_too_small() {
        let err = reconstruction_grid_svg(&[0.0; 5], &[0.0; 5], GridLayout::new(2, 2)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn perfect_reconstruction_is_white_error_tier() {
        let x = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let svg = reconstruction_grid_svg(&x, &x, GridLayout::new(2, 3)).unwrap();
        let error_tier = svg.split(r#"id="error""#).nth(1).unwrap();
        assert_eq!(error_tier.matches("#ffffff").count(), 6);
        let pgm = reconstruction_grid_pgm(&x, &x, GridLayout::new(2, 3)).unwrap();
        let last: Vec<&str> = pgm.lines().rev().take(2).collect();
        assert!(last.iter().all(|l| l.split(' ').all(|v| v == "128")));
    }

    #[test]
    fn padding_cells_are_marked_and_carry_no_data() {
        let x = [1.0; 5];
        let svg = reconstruction_grid_svg(&x, &[0.5; 5], GridLayout::new(2, 3)).unwrap();
        assert_eq!(svg.matches(r#"class="pad""#).count(), 3);
        assert_eq!(svg.matches(r#"class="cell""#).count(), 15);
        let pgm = reconstruction_grid_pgm(&x, &[0.5; 5], GridLayout::new(2, 3)).unwrap();
        let rows: Vec<&str> = pgm.lines().skip(3).collect();
        assert_eq!(rows.len(), 8);
        assert!(rows[1].ends_with(" 255"));
    }

    #[test]
    fn error_ramp_is_monotone() {
        let key = |e: f64| {
            let (r, _, b) = error_rgb(e);
            i32::from(r) - i32::from(b)
        };
        let mut prev = key(-1.0);
        for i in 1..=200 {
            let e = -1.0 + f64::from(i) * 0.01;
            let k = key(e);
            assert!(k >= prev, "{e}");
            prev = k;
        }
        assert_eq!(error_rgb(5e-7), (255, 255, 255));
        assert_eq!(error_rgb(-1.0), (0, 0, 255));
        assert_eq!(error_rgb(1.0), (255, 0, 0));
        assert_eq!(hex(reconstruction_rgb(1.0)), ONE_COLOR);
    }

    fn anomaly_xs(svg: &str, band: &str) -> Vec<f64> {
        let part = svg.split(&format!(r#"id="{band}""#)).nth(1).unwrap();
        let part = part.split("</g>").next().unwrap();
        part.split(r#"class="anomaly""#)
            .skip(1)
            .map(|s| {
                let x = s.split(r#"x=""#).nth(1).unwrap();
                x[..x.find('"').unwrap()].parse::<f64>().unwrap() - MARGIN as f64
            })
            .collect()
    }

    #[test]
    fn top_ranked_anomalies_start_at_left_edge() {
        let mut rel = vec![true; 3];
        rel.extend(vec![false; 97]);
        let svg = ranking_band_svg(&RankingReport::from_relevance(&rel), "AE").unwrap();
        assert!(svg.contains("nDCG = 1.0000"));
        let full = anomaly_xs(&svg, "full");
        assert_eq!(full.len(), 3);
        assert_eq!(full[0], 0.0);
        assert!(full[2] < 30.0);
        assert_eq!(anomaly_xs(&svg, "zoom")[0], 0.0);
    }

    #[test]
    fn single_last_anomaly_sits_at_right_edge() {
        let mut rel = vec![false; 9];
        rel.push(true);
        let svg = ranking_band_svg(&RankingReport::from_relevance(&rel), "").unwrap();
        let (x, bar) = bar_geometry(10, 1, 10, BAND_WIDTH as f64);
        assert_eq!(x + bar, BAND_WIDTH as f64);
        assert_eq!(anomaly_xs(&svg, "full"), vec![x]);
        assert!(svg.contains(r#"data-first="10" data-last="10""#));
    }

    #[test]
    fn band_needs_anomalies() {
        assert!(ranking_band_svg(&RankingReport::from_relevance(&[false; 4]), "").is_err());
    }

    #[test]
    fn wide_rankings_use_one_pixel_bars() {
        let (_, bar) = bar_geometry(5, 1, 272_376, 1000.0);
        assert_eq!(bar, 1.0);
        let (x, _) = bar_geometry(1138, 1, 272_376, 1000.0);
        assert!(x > 4.0 && x < 4.2);
    }
}
