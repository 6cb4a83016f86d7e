//! One record per line:
//!
//! ```text
//! "img/a.ppm": (10, 20, 50, 80), (60.5, 20, 90, 61);
//! "img/b.ppm": ;
//! ```
//!
//! Boxes are `x1, y1, x2, y2`. Detection files use the same layout with a
//! fifth number per box, the score.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::postprocess::Detection;

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub path: String,
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub path: String,
    pub detections: Vec<Detection>,
}

pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>> {
    parse_records(text, 4)?
        .into_iter()
        .map(|(line, path, tuples)| {
            let boxes = tuples
                .into_iter()
                .map(|t| checked_box(line, [t[0], t[1], t[2], t[3]]))
                .collect::<Result<_>>()?;
            Ok(AnnotationRecord { path, boxes })
        })
        .collect()
}

pub fn parse_detections(text: &str) -> Result<Vec<DetectionRecord>> {
    parse_records(text, 5)?
        .into_iter()
        .map(|(line, path, tuples)| {
            let detections = tuples
                .into_iter()
                .map(|t| {
                    let bbox = checked_box(line, [t[0], t[1], t[2], t[3]])?;
                    if !(0.0..=1.0).contains(&t[4]) {
                        return Err(Error::Parse { line, msg: format!("score {} outside [0, 1]", t[4]) });
                    }
                    Ok(Detection { bbox, score: t[4] })
                })
                .collect::<Result<_>>()?;
            Ok(DetectionRecord { path, detections })
        })
        .collect()
}

pub fn format_annotations(records: &[AnnotationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let tuples: Vec<Vec<f64>> = r.boxes.iter().map(|b| vec![b.x1, b.y1, b.x2, b.y2]).collect();
        write_record(&mut out, &r.path, &tuples);
    }
    out
}

pub fn format_detections(records: &[DetectionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let tuples: Vec<Vec<f64>> = r
            .detections
            .iter()
            .map(|d| vec![d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2, d.score])
            .collect();
        write_record(&mut out, &r.path, &tuples);
    }
    out
}

fn write_record(out: &mut String, path: &str, tuples: &[Vec<f64>]) {
    let _ = write!(out, "\"{path}\": ");
    for (i, t) in tuples.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push('(');
        for (j, v) in t.iter().enumerate() {
            if j > 0 {
                out.push_str(", ");
            }
            // `{}` on f64 prints the shortest string that parses back exactly
            let _ = write!(out, "{v}");
        }
        out.push(')');
    }
    out.push_str(";\n");
}

fn checked_box(line: usize, v: [f64; 4]) -> Result<BBox> {
    let b = BBox::new(v[0], v[1], v[2], v[3]);
    if b.x2 <= b.x1 || b.y2 <= b.y1 {
        return Err(Error::InvalidBox(format!("line {line}: {b:?} has x2 <= x1 or y2 <= y1")));
    }
    Ok(b)
}

type RawRecord = (usize, String, Vec<Vec<f64>>);

fn parse_records(text: &str, arity: usize) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut c = Cursor { rest: raw.trim(), line };
        let (path, tuples) = c.record(arity)?;
        out.push((line, path, tuples));
    }
    Ok(out)
}

struct Cursor<'a> {
    rest: &'a str,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse { line: self.line, msg: msg.into() })
    }

    fn skip_ws(&mut self) {
        self.rest = self.rest.trim_start();
    }

    fn expect(&mut self, ch: char) -> Result<()> {
        self.skip_ws();
        match self.rest.strip_prefix(ch) {
            Some(r) => {
                self.rest = r;
                Ok(())
            }
            None => self.fail(format!("expected '{ch}' at \"{}\"", preview(self.rest))),
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.rest.chars().next()
    }

    fn record(&mut self, arity: usize) -> Result<(String, Vec<Vec<f64>>)> {
        self.expect('"')?;
        let Some(end) = self.rest.find('"') else {
            return self.fail("unterminated path");
        };
        let path = self.rest[..end].to_string();
        if path.is_empty() {
            return self.fail("empty path");
        }
        self.rest = &self.rest[end + 1..];
        self.expect(':')?;

        let mut tuples = Vec::new();
        if self.peek() != Some(';') {
            loop {
                tuples.push(self.tuple(arity)?);
                match self.peek() {
                    Some(',') => self.expect(',')?,
                    _ => break,
                }
            }
        }
        self.expect(';')?;
        self.skip_ws();
        if !self.rest.is_empty() {
            return self.fail(format!("trailing text \"{}\"", preview(self.rest)));
        }
        Ok((path, tuples))
    }

    fn tuple(&mut self, arity: usize) -> Result<Vec<f64>> {
        self.expect('(')?;
        let mut v = Vec::with_capacity(arity);
        for i in 0..arity {
            if i > 0 {
                self.expect(',')?;
            }
            v.push(self.number()?);
        }
        self.expect(')')?;
        Ok(v)
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let len = self
            .rest
            .find(|c: char| !(c.is_ascii_digit() || matches!(c, '+' | '-' | '.' | 'e' | 'E')))
            .unwrap_or(self.rest.len());
        let tok = &self.rest[..len];
        match tok.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                self.rest = &self.rest[len..];
                Ok(v)
            }
            _ => self.fail(format!("expected a number at \"{}\"", preview(self.rest))),
        }
    }
}

fn preview(s: &str) -> &str {
    match s.char_indices().nth(16) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grammar_examples() {
        let r = parse_annotations("\"img/a.ppm\": (10.0, 20.0, 50.0, 80.0);").unwrap();
        assert_eq!(r, vec![AnnotationRecord {
            path: "img/a.ppm".into(),
            boxes: vec![BBox::new(10.0, 20.0, 50.0, 80.0)],
        }]);

        let r = parse_annotations("\"img/b.ppm\": ;\n\n\"c.ppm\": (1,2,3,4), (5, 6, 7, 8);\n").unwrap();
        assert_eq!(r.len(), 2);
        assert!(r[0].boxes.is_empty());
        assert_eq!(r[1].boxes.len(), 2);

        assert!(matches!(
            parse_annotations("\"img/c.ppm\": (5,5,4,9);"),
            Err(Error::InvalidBox(_))
        ));
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let text = "\"a.ppm\": (1, 2, 3, 4);\n\"b.ppm\": (1, 2, 3);\n";
        match parse_annotations(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        for bad in [
            "a.ppm: (1,2,3,4);",
            "\"a.ppm\" (1,2,3,4);",
            "\"a.ppm\": (1,2,3,4)",
            "\"a.ppm\": (1,2,3,4); junk",
            "\"a.ppm\": (1,2,x,4);",
            "\"a.ppm\": (1,2,inf,4);",
            "\"\": ;",
        ] {
            assert!(matches!(parse_annotations(bad), Err(Error::Parse { line: 1, .. })), "{bad}");
        }
    }

    #[test]
    fn detections_carry_scores() {
        let r = parse_detections("\"a.ppm\": (1, 2, 3, 4, 0.75);").unwrap();
        assert_eq!(r[0].detections[0].score, 0.75);
        assert!(parse_detections("\"a.ppm\": (1, 2, 3, 4);").is_err());
        assert!(parse_detections("\"a.ppm\": (1, 2, 3, 4, 1.5);").is_err());
    }

    fn arb_record() -> impl Strategy<Value = AnnotationRecord> {
        (
            "[a-z0-9_/]{1,12}\\.ppm",
            proptest::collection::vec((-1e4..1e4f64, -1e4..1e4f64, 1e-3..1e3f64, 1e-3..1e3f64), 0..5),
        )
            .prop_map(|(path, b)| AnnotationRecord {
                path,
                boxes: b.into_iter().map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h)).collect(),
            })
            .prop_filter("proper boxes", |r| r.boxes.iter().all(|b| b.x2 > b.x1 && b.y2 > b.y1))
    }

    proptest! {
        #[test]
        fn annotation_round_trip(records in proptest::collection::vec(arb_record(), 0..6)) {
            let text = format_annotations(&records);
            prop_assert_eq!(parse_annotations(&text).unwrap(), records);
        }

        #[test]
        fn detection_round_trip(x in 0.0..600.0f64, w in 0.5..40.0f64, s in 0.0..=1.0f64) {
            let rec = vec![DetectionRecord {
                path: "x.ppm".into(),
                detections: vec![Detection { bbox: BBox::new(x, x / 2.0, x + w, x / 2.0 + w), score: s }],
            }];
            prop_assert_eq!(parse_detections(&format_detections(&rec)).unwrap(), rec);
        }
    }
}
