//! Detections file: one record per line,
//! `image_id;x1;y1;x2;y2;class_id;score` (dot decimal).

use crate::bbox::{BBox, Detection};
use crate::error::{DetectError, Result};

pub fn parse_detections(text: &str, source: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(';').collect();
        if fields.len() != 7 {
            return Err(DetectError::MalformedLine {
                file: source.into(),
                line: line_no,
                reason: format!("expected 7 ';'-separated fields, got {}", fields.len()),
            });
        }
        let parse_f64 = |field: &str, what: &str| -> Result<f64> {
            field.trim().parse().map_err(|_| DetectError::MalformedLine {
                file: source.into(),
                line: line_no,
                reason: format!("{what} '{field}' is not a number"),
            })
        };
        let x1 = parse_f64(fields[1], "x1")?;
        let y1 = parse_f64(fields[2], "y1")?;
        let x2 = parse_f64(fields[3], "x2")?;
        let y2 = parse_f64(fields[4], "y2")?;
        let class_id: u32 =
            fields[5]
                .trim()
                .parse()
                .map_err(|_| DetectError::MalformedLine {
                    file: source.into(),
                    line: line_no,
                    reason: format!("class_id '{}' is not a non-negative integer", fields[5]),
                })?;
        let score = parse_f64(fields[6], "score")?;
        let bbox = BBox::new(x1, y1, x2, y2).map_err(|e| DetectError::MalformedLine {
            file: source.into(),
            line: line_no,
            reason: e.to_string(),
        })?;
        out.push(Detection::new(fields[0], bbox, class_id, score).map_err(|e| {
            DetectError::MalformedLine {
                file: source.into(),
                line: line_no,
                reason: e.to_string(),
            }
        })?);
    }
    Ok(out)
}

pub fn serialize_detections(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        out.push_str(&format!(
            "{};{};{};{};{};{};{}\n",
            d.image_id, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2, d.class_id, d.score
        ));
    }
    out
}
