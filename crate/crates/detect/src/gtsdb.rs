//! GTSDB ground-truth ingestion: the semicolon `gt.txt` format, split
//! statistics against the published counts, and the superclass grouping.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::bbox::{BBox, Detection, GroundTruthBox};
use crate::error::{DetectError, Result};

pub const NUM_CLASSES: usize = 43;

/// One parsed annotation line: `NAME;left;top;right;bottom;classId`.
#[derive(Debug, Clone, PartialEq)]
pub struct GtRecord {
    pub filename: String,
    pub bbox: BBox,
    pub class_id: u32,
}

impl GtRecord {
    pub fn to_ground_truth(&self) -> GroundTruthBox {
        GroundTruthBox {
            image_id: self.filename.clone(),
            bbox: self.bbox,
            class_id: self.class_id,
        }
    }
}

/// Parses `gt.txt` content. Blank lines are skipped; order is preserved.
/// `source` names the input in error messages.
pub fn parse_gt(text: &str, source: &str) -> Result<Vec<GtRecord>> {
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(';').collect();
        if fields.len() != 6 {
            return Err(DetectError::MalformedLine {
                file: source.into(),
                line: line_no,
                reason: format!("expected 6 ';'-separated fields, got {}", fields.len()),
            });
        }
        let parse_int = |field: &str, what: &str| -> Result<i64> {
            field.trim().parse().map_err(|_| DetectError::MalformedLine {
                file: source.into(),
                line: line_no,
                reason: format!("{what} '{field}' is not an integer"),
            })
        };
        let left = parse_int(fields[1], "left")?;
        let top = parse_int(fields[2], "top")?;
        let right = parse_int(fields[3], "right")?;
        let bottom = parse_int(fields[4], "bottom")?;
        let class_id = parse_int(fields[5], "classId")?;
        if !(0..NUM_CLASSES as i64).contains(&class_id) {
            return Err(DetectError::ClassOutOfRange {
                file: source.into(),
                line: line_no,
                class_id,
            });
        }
        if right <= left || bottom <= top {
            return Err(DetectError::DegenerateBox {
                file: source.into(),
                line: line_no,
                reason: format!("left {left}, top {top}, right {right}, bottom {bottom}"),
            });
        }
        records.push(GtRecord {
            filename: fields[0].to_string(),
            bbox: BBox::new(left as f64, top as f64, right as f64, bottom as f64)?,
            class_id: class_id as u32,
        });
    }
    Ok(records)
}

/// Writes records back in the `gt.txt` format. Coordinates were integers on
/// ingest, so `parse_gt(serialize_gt(r)) == r`.
pub fn serialize_gt(records: &[GtRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{};{};{};{};{};{}\n",
            r.filename, r.bbox.x1 as i64, r.bbox.y1 as i64, r.bbox.x2 as i64, r.bbox.y2 as i64,
            r.class_id
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    All,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            other => Err(format!("unknown split '{other}' (train|test|all)")),
        }
    }
}

/// Decides which filenames belong to the train split. The numbered
/// first-600 convention is only a fallback; a manifest always overrides.
#[derive(Debug, Clone)]
pub enum SplitRule {
    /// Filenames whose numeric stem is below `n` are train (official GTSDB
    /// convention with n = 600).
    FirstN(usize),
    /// Explicit membership list for the train split.
    Manifest { train: HashSet<String> },
}

impl SplitRule {
    pub fn official_default() -> Self {
        SplitRule::FirstN(600)
    }

    /// One filename per line; lines name the train split.
    pub fn from_manifest(text: &str) -> Self {
        SplitRule::Manifest {
            train: text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        }
    }

    pub fn is_train(&self, filename: &str) -> bool {
        match self {
            SplitRule::FirstN(n) => filename
                .split('.')
                .next()
                .and_then(|stem| stem.parse::<usize>().ok())
                .is_some_and(|idx| idx < *n),
            SplitRule::Manifest { train } => train.contains(filename),
        }
    }

    pub fn selects(&self, split: Split, filename: &str) -> bool {
        match split {
            Split::All => true,
            Split::Train => self.is_train(filename),
            Split::Test => !self.is_train(filename),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitStats {
    /// Distinct annotated filenames. Images without signs never appear in
    /// gt.txt, so this undercounts total images; reported as such.
    pub n_images_with_signs: usize,
    pub n_signs: usize,
    pub per_class: Vec<usize>,
}

pub fn split_stats(records: &[GtRecord], split: Split, rule: &SplitRule) -> SplitStats {
    let mut filenames = HashSet::new();
    let mut per_class = vec![0usize; NUM_CLASSES];
    let mut n_signs = 0;
    for r in records {
        if !rule.selects(split, &r.filename) {
            continue;
        }
        filenames.insert(r.filename.as_str());
        per_class[r.class_id as usize] += 1;
        n_signs += 1;
    }
    SplitStats {
        n_images_with_signs: filenames.len(),
        n_signs,
        per_class,
    }
}

/// Published counts: 900 images / 1,206 signs overall, 631 images (856
/// signs) train, 323 images (370 signs) test. Mismatches are warnings, not
/// failures: the published split differs from the official 600/300 one and
/// its file list is not recoverable.
pub fn paper_count_warnings(stats: &SplitStats, split: Split) -> Vec<String> {
    let (exp_images, exp_signs) = match split {
        Split::All => (900usize, 1206usize),
        Split::Train => (631, 856),
        Split::Test => (323, 370),
    };
    let mut warnings = Vec::new();
    if stats.n_signs != exp_signs {
        warnings.push(format!(
            "sign count {} differs from the published {exp_signs} for this split",
            stats.n_signs
        ));
    }
    if stats.n_images_with_signs != exp_images {
        warnings.push(format!(
            "{} annotated images vs {exp_images} published total images \
             (images without signs are invisible to gt.txt)",
            stats.n_images_with_signs
        ));
    }
    warnings
}

/// The four sign superclasses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Superclass {
    Danger,
    Prohibitory,
    Mandatory,
    Other,
}

impl Superclass {
    pub fn as_class_id(self) -> u32 {
        match self {
            Superclass::Danger => 0,
            Superclass::Prohibitory => 1,
            Superclass::Mandatory => 2,
            Superclass::Other => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Superclass::Danger => "danger",
            Superclass::Prohibitory => "prohibitory",
            Superclass::Mandatory => "mandatory",
            Superclass::Other => "other",
        }
    }
}

/// Total map from the 43 fine classes to the four superclasses.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperclassMap {
    table: [Superclass; NUM_CLASSES],
}

impl SuperclassMap {
    /// Membership lists from the official GTSDB documentation (external
    /// provenance; ships as an editable JSON file too).
    pub fn official_default() -> Self {
        use Superclass::*;
        let mut table = [Other; NUM_CLASSES];
        for id in [0, 1, 2, 3, 4, 5, 7, 8, 9, 10, 15, 16] {
            table[id] = Prohibitory;
        }
        for id in [11, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30, 31] {
            table[id] = Danger;
        }
        for id in [33, 34, 35, 36, 37, 38, 39, 40] {
            table[id] = Mandatory;
        }
        // 6, 12, 13, 14, 17, 32, 41, 42 stay Other.
        Self { table }
    }

    /// JSON object keyed by class id ("0".."42"); must be total.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, Superclass> =
            serde_json::from_str(text).map_err(|e| DetectError::SuperclassMap {
                reason: format!("parse error: {e}"),
            })?;
        let mut table = [None; NUM_CLASSES];
        for (key, superclass) in raw {
            let id: usize = key.parse().map_err(|_| DetectError::SuperclassMap {
                reason: format!("key '{key}' is not a class id"),
            })?;
            if id >= NUM_CLASSES {
                return Err(DetectError::SuperclassMap {
                    reason: format!("class id {id} out of range 0..=42"),
                });
            }
            table[id] = Some(superclass);
        }
        let mut out = [Superclass::Other; NUM_CLASSES];
        for (id, entry) in table.iter().enumerate() {
            out[id] = entry.ok_or_else(|| DetectError::SuperclassMap {
                reason: format!("class id {id} missing; the map must cover 0..=42"),
            })?;
        }
        Ok(Self { table: out })
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<String, Superclass> = self
            .table
            .iter()
            .enumerate()
            .map(|(id, &s)| (format!("{id:02}"), s))
            .collect();
        serde_json::to_string_pretty(&map).expect("map serializes")
    }

    pub fn superclass_of(&self, class_id: u32) -> Result<Superclass> {
        self.table
            .get(class_id as usize)
            .copied()
            .ok_or_else(|| DetectError::SuperclassMap {
                reason: format!("class id {class_id} out of range 0..=42"),
            })
    }

    /// Rewrites detection class ids into superclass ids.
    pub fn relabel_detections(&self, dets: &[Detection]) -> Result<Vec<Detection>> {
        dets.iter()
            .map(|d| {
                Ok(Detection {
                    class_id: self.superclass_of(d.class_id)?.as_class_id(),
                    ..d.clone()
                })
            })
            .collect()
    }

    pub fn relabel_ground_truth(&self, gts: &[GroundTruthBox]) -> Result<Vec<GroundTruthBox>> {
        gts.iter()
            .map(|g| {
                Ok(GroundTruthBox {
                    class_id: self.superclass_of(g.class_id)?.as_class_id(),
                    ..g.clone()
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_official_line_format() {
        let records = parse_gt("00000.ppm;774;411;815;446;11\n", "gt.txt").unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert_eq!(r.filename, "00000.ppm");
        assert_eq!(r.class_id, 11);
        assert_eq!(
            (r.bbox.x1, r.bbox.y1, r.bbox.x2, r.bbox.y2),
            (774.0, 411.0, 815.0, 446.0)
        );
    }

    #[test]
    fn empty_input_gives_empty_list() {
        assert!(parse_gt("", "gt.txt").unwrap().is_empty());
        assert!(parse_gt("\n\n", "gt.txt").unwrap().is_empty());
    }

    #[test]
    fn degenerate_box_is_rejected_with_line_number() {
        let err = parse_gt("ok.ppm;0;0;5;5;1\na.ppm;10;10;5;20;0\n", "gt.txt").unwrap_err();
        match err {
            DetectError::DegenerateBox { line, .. } => assert_eq!(line, 2),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn class_range_is_checked() {
        let err = parse_gt("a.ppm;0;0;5;5;43\n", "gt.txt").unwrap_err();
        assert!(matches!(err, DetectError::ClassOutOfRange { class_id: 43, .. }));
    }

    #[test]
    fn malformed_lines_name_the_problem() {
        let err = parse_gt("a.ppm;1;2;3\n", "gt.txt").unwrap_err();
        assert!(matches!(err, DetectError::MalformedLine { line: 1, .. }));
        let err = parse_gt("a.ppm;x;2;3;4;5\n", "gt.txt").unwrap_err();
        assert!(matches!(err, DetectError::MalformedLine { .. }));
    }

    #[test]
    fn stats_count_images_and_signs() {
        let text = "00000.ppm;0;0;5;5;1\n00000.ppm;10;10;15;15;2\n00700.ppm;0;0;5;5;1\n";
        let records = parse_gt(text, "gt.txt").unwrap();
        let rule = SplitRule::official_default();
        let all = split_stats(&records, Split::All, &rule);
        assert_eq!(all.n_images_with_signs, 2);
        assert_eq!(all.n_signs, 3);
        assert_eq!(all.per_class[1], 2);

        let train = split_stats(&records, Split::Train, &rule);
        assert_eq!((train.n_images_with_signs, train.n_signs), (1, 2));
        let test = split_stats(&records, Split::Test, &rule);
        assert_eq!((test.n_images_with_signs, test.n_signs), (1, 1));
    }

    #[test]
    fn manifest_overrides_numbering() {
        let rule = SplitRule::from_manifest("00700.ppm\n");
        assert!(rule.is_train("00700.ppm"));
        assert!(!rule.is_train("00000.ppm"));
    }

    #[test]
    fn default_map_is_total_and_roundtrips() {
        let map = SuperclassMap::official_default();
        for id in 0..NUM_CLASSES as u32 {
            map.superclass_of(id).unwrap();
        }
        let back = SuperclassMap::from_json(&map.to_json()).unwrap();
        assert_eq!(map, back);
        assert_eq!(map.superclass_of(11).unwrap(), Superclass::Danger);
        assert_eq!(map.superclass_of(0).unwrap(), Superclass::Prohibitory);
        assert_eq!(map.superclass_of(35).unwrap(), Superclass::Mandatory);
        assert_eq!(map.superclass_of(12).unwrap(), Superclass::Other);
    }

    #[test]
    fn partial_map_is_rejected() {
        let err = SuperclassMap::from_json(r#"{"0": "danger"}"#).unwrap_err();
        assert!(matches!(err, DetectError::SuperclassMap { .. }));
    }
}
