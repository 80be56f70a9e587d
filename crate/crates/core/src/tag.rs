//! Semantic tags: the selection language that names rows, columns, cells and
//! header nodes by label path.
//!
//! ```text
//! tag     := kind ":" body
//! kind    := "row" | "col" | "cell" | "colhead" | "rowhead"
//! body    := path                      (row, col, colhead, rowhead)
//!          | path "@" path             (cell: column path "@" row path)
//! path    := segment (">" segment)*
//! segment := bare | '"' ( char | '""' )* '"'
//! ```
//!
//! Bare segments are trimmed and may not contain `>`, `@`, `:` or `"`; quoted
//! segments are taken verbatim with `""` standing for a literal quote. Paths
//! are checked against a table only at resolution time.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::HeaderPath;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SemanticTag {
    RowExtract(HeaderPath),
    ColExtract(HeaderPath),
    /// Column path first, matching the `col@row` surface order.
    CellIntersect { col: HeaderPath, row: HeaderPath },
    ColHeadRef(HeaderPath),
    RowHeadRef(HeaderPath),
}

impl SemanticTag {
    pub fn kind_name(&self) -> &'static str {
        match self {
            SemanticTag::RowExtract(_) => "row",
            SemanticTag::ColExtract(_) => "col",
            SemanticTag::CellIntersect { .. } => "cell",
            SemanticTag::ColHeadRef(_) => "colhead",
            SemanticTag::RowHeadRef(_) => "rowhead",
        }
    }

    pub fn col_path(&self) -> Option<&HeaderPath> {
        match self {
            SemanticTag::ColExtract(p) | SemanticTag::ColHeadRef(p) => Some(p),
            SemanticTag::CellIntersect { col, .. } => Some(col),
            _ => None,
        }
    }

    pub fn row_path(&self) -> Option<&HeaderPath> {
        match self {
            SemanticTag::RowExtract(p) | SemanticTag::RowHeadRef(p) => Some(p),
            SemanticTag::CellIntersect { row, .. } => Some(row),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("tag parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { offset, message: message.into() })
}

pub fn parse_tag(text: &str) -> Result<SemanticTag, ParseError> {
    let Some(colon) = text.find(':') else {
        return err(text.len(), "expected ':' after tag kind");
    };
    let kind = text[..colon].trim();
    let body_start = colon + 1;
    let mut p = PathParser { text, pos: body_start };
    let tag = match kind {
        "row" => SemanticTag::RowExtract(p.path(false)?),
        "col" => SemanticTag::ColExtract(p.path(false)?),
        "colhead" => SemanticTag::ColHeadRef(p.path(false)?),
        "rowhead" => SemanticTag::RowHeadRef(p.path(false)?),
        "cell" => {
            let col = p.path(true)?;
            if !p.eat(b'@') {
                return err(p.pos, "cell tag needs '@' between column and row paths");
            }
            let row = p.path(false)?;
            SemanticTag::CellIntersect { col, row }
        }
        other => {
            let offset = text.find(other).unwrap_or(0);
            return err(offset, format!("unknown tag kind {other:?}"));
        }
    };
    if p.pos != text.len() {
        return err(p.pos, "unexpected trailing input");
    }
    Ok(tag)
}

struct PathParser<'a> {
    text: &'a str,
    pos: usize,
}

impl PathParser<'_> {
    fn peek(&self) -> Option<u8> {
        self.text.as_bytes().get(self.pos).copied()
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn skip_ws(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    /// Parses `segment (">" segment)*`, stopping before '@' when `before_at`.
    fn path(&mut self, before_at: bool) -> Result<HeaderPath, ParseError> {
        let mut segments = vec![self.segment(before_at)?];
        while self.eat(b'>') {
            segments.push(self.segment(before_at)?);
        }
        Ok(HeaderPath(segments))
    }

    fn segment(&mut self, before_at: bool) -> Result<String, ParseError> {
        let start = self.pos;
        self.skip_ws();
        if self.peek() == Some(b'"') {
            return self.quoted(before_at);
        }
        let bytes = self.text.as_bytes();
        let mut end = self.pos;
        while end < bytes.len() {
            match bytes[end] {
                b'>' => break,
                b'@' if before_at => break,
                b'@' => return err(end, "'@' is only allowed once, between the paths of a cell tag"),
                b':' => return err(end, "':' must be quoted inside a segment"),
                b'"' => return err(end, "quote inside a bare segment"),
                _ => end += 1,
            }
        }
        let seg = self.text[self.pos..end].trim();
        if seg.is_empty() {
            return err(start, "empty path segment");
        }
        self.pos = end;
        Ok(seg.to_string())
    }

    fn quoted(&mut self, before_at: bool) -> Result<String, ParseError> {
        let open = self.pos;
        self.pos += 1;
        let mut out = String::new();
        loop {
            let rest = &self.text[self.pos..];
            let Some(q) = rest.find('"') else {
                return err(open, "unbalanced quote");
            };
            out.push_str(&rest[..q]);
            self.pos += q + 1;
            if self.peek() == Some(b'"') {
                out.push('"');
                self.pos += 1;
            } else {
                break;
            }
        }
        if out.is_empty() {
            return err(open, "empty path segment");
        }
        self.skip_ws();
        match self.peek() {
            None | Some(b'>') => {}
            Some(b'@') if before_at => {}
            Some(_) => return err(self.pos, "expected '>' or end of path after quoted segment"),
        }
        Ok(out)
    }
}

fn needs_quoting(seg: &str) -> bool {
    seg.is_empty()
        || seg.contains(['>', '@', ':', '"'])
        || seg.starts_with(char::is_whitespace)
        || seg.ends_with(char::is_whitespace)
}

fn write_segment(out: &mut String, seg: &str) {
    if needs_quoting(seg) {
        out.push('"');
        out.push_str(&seg.replace('"', "\"\""));
        out.push('"');
    } else {
        out.push_str(seg);
    }
}

fn write_path(out: &mut String, path: &HeaderPath) {
    for (i, seg) in path.segments().iter().enumerate() {
        if i > 0 {
            out.push('>');
        }
        write_segment(out, seg);
    }
}

/// Canonical text form; quotes only segments that need it.
pub fn format_tag(tag: &SemanticTag) -> String {
    let mut out = String::from(tag.kind_name());
    out.push(':');
    match tag {
        SemanticTag::CellIntersect { col, row } => {
            write_path(&mut out, col);
            out.push('@');
            write_path(&mut out, row);
        }
        SemanticTag::RowExtract(p)
        | SemanticTag::ColExtract(p)
        | SemanticTag::ColHeadRef(p)
        | SemanticTag::RowHeadRef(p) => write_path(&mut out, p),
    }
    out
}

impl fmt::Display for SemanticTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_tag(self))
    }
}

impl FromStr for SemanticTag {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_tag(s)
    }
}

impl Serialize for SemanticTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_tag(self))
    }
}

impl<'de> Deserialize<'de> for SemanticTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_tag(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(segs: &[&str]) -> HeaderPath {
        HeaderPath::new(segs.iter().copied())
    }

    #[test]
    fn parses_examples() {
        assert_eq!(
            parse_tag("cell:Revenue>Q1@2020").unwrap(),
            SemanticTag::CellIntersect { col: p(&["Revenue", "Q1"]), row: p(&["2020"]) }
        );
        assert_eq!(parse_tag("row:2021").unwrap(), SemanticTag::RowExtract(p(&["2021"])));
        assert_eq!(parse_tag("colhead: Revenue > Q1 ").unwrap(), SemanticTag::ColHeadRef(p(&["Revenue", "Q1"])));
        assert_eq!(
            parse_tag(r#"rowhead:"a ""b"" c">x"#).unwrap(),
            SemanticTag::RowHeadRef(p(&["a \"b\" c", "x"]))
        );
    }

    #[test]
    fn formats_examples() {
        let t = SemanticTag::CellIntersect { col: p(&["Revenue", "Q1"]), row: p(&["2020"]) };
        assert_eq!(format_tag(&t), "cell:Revenue>Q1@2020");
        assert_eq!(format_tag(&SemanticTag::ColHeadRef(p(&["A>B"]))), "colhead:\"A>B\"");
        assert_eq!(format_tag(&SemanticTag::RowExtract(p(&["2020"]))), "row:2020");
        assert_eq!(format_tag(&SemanticTag::RowExtract(p(&[" x"]))), "row:\" x\"");
    }

    #[test]
    fn errors_carry_offsets() {
        let cases: &[(&str, usize)] = &[
            ("cell:Revenue>Q1", 15),
            ("blob:x", 0),
            ("row", 3),
            ("row:a>>b", 6),
            ("row:", 4),
            ("row:\"abc", 4),
            ("row:a@b", 5),
            ("col:a:b", 5),
            ("cell:a@b@c", 8),
            ("colhead:\"a\"b", 11),
            ("cell:\"\"@x", 5),
        ];
        for (input, offset) in cases {
            let e = parse_tag(input).unwrap_err();
            assert_eq!(e.offset, *offset, "{input}: {e}");
            assert!(e.offset <= input.len());
        }
    }

    fn segment() -> impl Strategy<Value = String> {
        prop_oneof![
            "[A-Za-z0-9 ]{0,6}[A-Za-z0-9][A-Za-z0-9 ]{0,6}",
            "[ -~]{1,10}",
            "[>@:\" a-z]{1,6}",
            "\\PC{1,5}",
        ]
    }

    fn path() -> impl Strategy<Value = HeaderPath> {
        prop::collection::vec(segment(), 1..4).prop_map(HeaderPath)
    }

    pub(crate) fn tag() -> impl Strategy<Value = SemanticTag> {
        prop_oneof![
            path().prop_map(SemanticTag::RowExtract),
            path().prop_map(SemanticTag::ColExtract),
            path().prop_map(SemanticTag::ColHeadRef),
            path().prop_map(SemanticTag::RowHeadRef),
            (path(), path()).prop_map(|(col, row)| SemanticTag::CellIntersect { col, row }),
        ]
    }

    proptest! {
        #[test]
        fn parse_format_round_trip(t in tag()) {
            let text = format_tag(&t);
            prop_assert_eq!(parse_tag(&text).unwrap(), t);
        }

        #[test]
        fn parsing_is_total(s in "\\PC{0,40}") {
            match parse_tag(&s) {
                Ok(t) => { parse_tag(&format_tag(&t)).unwrap(); }
                Err(e) => prop_assert!(e.offset <= s.len()),
            }
        }
    }
}
