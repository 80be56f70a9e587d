//! Vector rendering of a laid-out table and a small deterministic rasterizer.
//!
//! The document is a flat list of primitives whose coordinates come from the
//! region map; SVG text is produced from it directly and the rasterizer paints
//! the same primitives with an embedded 8x8 bitmap face, so neither output
//! depends on system fonts.

use std::fmt::Write as _;
use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use thiserror::Error;

use crate::layout::{BBox, LabelType, LayoutMetrics, RegionMap};
use crate::table::{HeaderPath, TableSpec};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("scale must be a positive integer, got {0}")]
    ScaleInvalid(u32),
    #[error("raster of {0}x{1} px is too large")]
    TooLarge(u64, u64),
    #[error("png encoding failed: {0}")]
    Encode(#[from] image::ImageError),
}

const WHITE: [u8; 3] = [255, 255, 255];
const BLACK: [u8; 3] = [0, 0, 0];
const HEADER_FILL: [u8; 3] = [232, 236, 242];
const STUB_FILL: [u8; 3] = [214, 220, 229];
const TEXT_INSET: i64 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Element {
    Rect { bbox: BBox, fill: [u8; 3], stroke: i64 },
    /// Text anchored at `x`, baseline `y`, clipped to `clip`.
    Text { clip: BBox, x: i64, y: i64, size: i64, content: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageDocument {
    pub width: i64,
    pub height: i64,
    pub title: Option<String>,
    pub elements: Vec<Element>,
}

/// Builds the vector document for `spec` from its layout.
///
/// The title, when present, becomes the SVG `<title>` and is written into the
/// stub corner; the canvas size always equals the layout size.
pub fn render_image(spec: &TableSpec, layout: &RegionMap, metrics: &LayoutMetrics) -> ImageDocument {
    let mut elements = vec![Element::Rect {
        bbox: BBox::new_unchecked(0, 0, layout.image_w, layout.image_h),
        fill: WHITE,
        stroke: 0,
    }];
    let stub = BBox::new_unchecked(
        0,
        0,
        metrics.stub_w * spec.row_tree.depth() as i64,
        metrics.head_h * spec.col_tree.depth() as i64,
    );
    elements.push(Element::Rect { bbox: stub, fill: STUB_FILL, stroke: metrics.border });
    if let Some(title) = &spec.title {
        elements.push(text_in(stub, title.trim(), metrics));
    }
    for region in layout.regions() {
        let content = match (&region.label, &region.grid) {
            (LabelType::ColHead | LabelType::RowHead, crate::layout::GridRef::Header { path }) => {
                Some(header_text(path))
            }
            (LabelType::Cell, crate::layout::GridRef::Cell { row, col }) => {
                spec.cell(*row, *col).map(|c| c.raw.trim().to_string())
            }
            // Data strips overlap the cells; they carry no paint of their own.
            _ => None,
        };
        let Some(content) = content else { continue };
        let fill = if region.label == LabelType::Cell { WHITE } else { HEADER_FILL };
        elements.push(Element::Rect { bbox: region.bbox, fill, stroke: metrics.border });
        if !content.is_empty() {
            elements.push(text_in(region.bbox, &content, metrics));
        }
    }
    ImageDocument { width: layout.image_w, height: layout.image_h, title: spec.title.clone(), elements }
}

fn header_text(path: &HeaderPath) -> String {
    path.last().unwrap_or_default().to_string()
}

fn text_in(bbox: BBox, content: &str, m: &LayoutMetrics) -> Element {
    // Vertically centred baseline: cap height is taken as 0.7 em.
    let cap = (m.font_size * 7 + 5) / 10;
    let y = bbox.y1 + (bbox.height() + cap) / 2;
    Element::Text { clip: bbox, x: bbox.x1 + TEXT_INSET, y, size: m.font_size, content: content.to_string() }
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && c != '\t' && c != '\n' && c != '\r' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

fn hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

impl ImageDocument {
    /// SVG 1.1 serialization; self-contained and byte-stable.
    pub fn to_svg(&self) -> String {
        let mut s = String::new();
        s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">",
            w = self.width,
            h = self.height
        );
        if let Some(t) = &self.title {
            let _ = writeln!(s, "<title>{}</title>", escape(t));
        }
        for el in &self.elements {
            match el {
                Element::Rect { bbox, fill, stroke } => {
                    let _ = write!(
                        s,
                        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"",
                        bbox.x1,
                        bbox.y1,
                        bbox.width(),
                        bbox.height(),
                        hex(*fill)
                    );
                    if *stroke > 0 {
                        let _ = write!(s, " stroke=\"{}\" stroke-width=\"{}\"", hex(BLACK), stroke);
                    }
                    s.push_str("/>\n");
                }
                Element::Text { clip, x, y, size, content } => {
                    // A nested viewport clips its content to the region.
                    let _ = writeln!(
                        s,
                        "<svg x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" overflow=\"hidden\"><text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"{}\" fill=\"{}\">{}</text></svg>",
                        clip.x1,
                        clip.y1,
                        clip.width(),
                        clip.height(),
                        x - clip.x1,
                        y - clip.y1,
                        size,
                        hex(BLACK),
                        escape(content)
                    );
                }
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Paints the document at an integer scale factor.
pub fn rasterize(doc: &ImageDocument, scale: u32) -> Result<RgbImage, RenderError> {
    if scale == 0 {
        return Err(RenderError::ScaleInvalid(scale));
    }
    let s = i64::from(scale);
    let (w, h) = (doc.width * s, doc.height * s);
    if w <= 0 || h <= 0 || w * h > 200_000_000 {
        return Err(RenderError::TooLarge(w.max(0) as u64, h.max(0) as u64));
    }
    let mut img = RgbImage::from_pixel(w as u32, h as u32, Rgb(WHITE));
    for el in &doc.elements {
        match el {
            Element::Rect { bbox, fill, stroke } => {
                let b = scaled(bbox, s);
                fill_rect(&mut img, b.x1, b.y1, b.x2, b.y2, *fill);
                if *stroke > 0 {
                    let t = stroke * s;
                    fill_rect(&mut img, b.x1, b.y1, b.x2, b.y1 + t, BLACK);
                    fill_rect(&mut img, b.x1, b.y2 - t, b.x2, b.y2, BLACK);
                    fill_rect(&mut img, b.x1, b.y1, b.x1 + t, b.y2, BLACK);
                    fill_rect(&mut img, b.x2 - t, b.y1, b.x2, b.y2, BLACK);
                }
            }
            Element::Text { clip, x, y, size, content } => {
                draw_text(&mut img, &scaled(clip, s), x * s, y * s, size * s, content);
            }
        }
    }
    Ok(img)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, RenderError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

fn scaled(b: &BBox, s: i64) -> BBox {
    BBox::new_unchecked(b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s)
}

fn fill_rect(img: &mut RgbImage, x1: i64, y1: i64, x2: i64, y2: i64, color: [u8; 3]) {
    let (w, h) = (i64::from(img.width()), i64::from(img.height()));
    for y in y1.max(0)..y2.min(h) {
        for x in x1.max(0)..x2.min(w) {
            img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }
}

fn draw_text(img: &mut RgbImage, clip: &BBox, x: i64, baseline: i64, size: i64, content: &str) {
    use font8x8::UnicodeFonts;
    // Each glyph cell is 8x8 font units; one unit is `unit` pixels.
    let unit = (size / 8).max(1);
    let advance = 8 * unit;
    let top = baseline - 7 * unit;
    let (w, h) = (i64::from(img.width()), i64::from(img.height()));
    for (i, ch) in content.chars().enumerate() {
        let gx = x + i as i64 * advance;
        if gx >= clip.x2 {
            break;
        }
        let glyph = font8x8::BASIC_FONTS.get(ch).or_else(|| font8x8::BASIC_FONTS.get('?')).unwrap_or([0; 8]);
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits & (1 << col) == 0 {
                    continue;
                }
                let px = gx + col * unit;
                let py = top + row as i64 * unit;
                for dy in 0..unit {
                    for dx in 0..unit {
                        let (xx, yy) = (px + dx, py + dy);
                        if xx >= clip.x1 && xx < clip.x2 && yy >= clip.y1 && yy < clip.y2 && xx < w && yy < h && xx >= 0 && yy >= 0 {
                            img.put_pixel(xx as u32, yy as u32, Rgb(BLACK));
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::fixture_a;
    use crate::layout::compute_layout;

    fn doc() -> ImageDocument {
        let spec = fixture_a();
        let m = LayoutMetrics::default();
        let map = compute_layout(&spec, &m).unwrap();
        render_image(&spec, &map, &m)
    }

    #[test]
    fn declares_layout_dimensions() {
        let svg = doc().to_svg();
        assert!(svg.contains("width=\"640\" height=\"160\""), "{svg}");
        assert!(svg.contains(">Revenue</text>"));
    }

    #[test]
    fn untitled_table_has_no_title() {
        let svg = doc().to_svg();
        assert!(!svg.contains("<title>"));
        let mut spec = fixture_a();
        spec.title = Some("Quarterly <results>".into());
        let m = LayoutMetrics::default();
        let map = compute_layout(&spec, &m).unwrap();
        let svg = render_image(&spec, &map, &m).to_svg();
        assert!(svg.contains("<title>Quarterly &lt;results&gt;</title>"));
    }

    #[test]
    fn render_is_byte_stable() {
        assert_eq!(doc().to_svg(), doc().to_svg());
        let a = encode_png(&rasterize(&doc(), 1).unwrap()).unwrap();
        let b = encode_png(&rasterize(&doc(), 1).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn raster_dimensions_scale() {
        let img = rasterize(&doc(), 2).unwrap();
        assert_eq!(img.dimensions(), (1280, 320));
        let img = rasterize(&doc(), 1).unwrap();
        assert_eq!(img.dimensions(), (640, 160));
        assert!(matches!(rasterize(&doc(), 0), Err(RenderError::ScaleInvalid(0))));
    }

    #[test]
    fn grid_lines_land_on_region_edges() {
        let img = rasterize(&doc(), 2).unwrap();
        // Left edge of cell (160,80,280,120) at scale 2 is x = 320.
        assert_eq!(img.get_pixel(320, 200).0, BLACK);
        // Interior of the same cell, away from text, stays white.
        assert_eq!(img.get_pixel(540, 236).0, WHITE);
    }

    #[test]
    fn long_text_is_clipped_to_region() {
        let mut spec = fixture_a();
        spec.cells[0][0] = crate::table::CellValue::new("a".repeat(200));
        spec.cells[0][1] = crate::table::CellValue::new("");
        let m = LayoutMetrics::default();
        let map = compute_layout(&spec, &m).unwrap();
        let d = render_image(&spec, &map, &m);
        assert_eq!((d.width, d.height), (640, 160));
        let img = rasterize(&d, 1).unwrap();
        // The neighbouring cell interior must stay clean.
        for x in 290..390 {
            assert_eq!(img.get_pixel(x, 100).0, WHITE, "x={x}");
        }
    }
}
