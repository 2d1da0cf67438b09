//! ODGT annotation files and the line-delimited prediction format.
//!
//! Both formats hold one JSON object per line, one line per image. Boxes are
//! `[x, y, w, h]` on disk and corner form in memory, converted with
//! `x2 = x + w` and `y2 = y + h` (no `+1`). Blank lines and lines starting
//! with `#` are skipped, which is where writers put their config header.
//!
//! Ground truth:
//!
//! ```text
//! {"ID": "img01", "gtboxes": [{"tag": "person", "fbox": [x, y, w, h], "vbox": [x, y, w, h], "extra": {"ignore": 0}}]}
//! ```
//!
//! Predictions:
//!
//! ```text
//! {"ID": "img01", "dtboxes": [{"fbox": [x, y, w, h], "vbox": [x, y, w, h], "score": 0.93}]}
//! ```
//!
//! Head boxes (`hbox`) are skipped. Unknown fields of prediction lines and
//! prediction boxes are carried through a read/write cycle unchanged.
//! Coordinates and scores are written with 9 significant digits.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::assignment::GroundTruthEntry;
use crate::geometry::{BBox, PairedBox};
use crate::suppression::Detection;

pub const PERSON_TAG: &str = "person";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate image id {id:?}")]
    DuplicateImage { line: usize, id: String },
}

impl IngestError {
    fn parse(line: usize, message: impl Into<String>) -> Self {
        IngestError::Parse {
            line,
            message: message.into(),
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        IngestError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1-based line of the failure, when there is one.
    pub fn line(&self) -> Option<usize> {
        match self {
            IngestError::Parse { line, .. } | IngestError::DuplicateImage { line, .. } => Some(*line),
            IngestError::Io { .. } => None,
        }
    }
}

/// One image's annotations and/or detections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageRecord {
    pub image_id: String,
    pub gts: Vec<GroundTruthEntry>,
    /// Tag of each ground truth, aligned with `gts`.
    pub gt_tags: Vec<String>,
    pub dets: Vec<Detection>,
    /// Unknown fields of each detection box, aligned with `dets`.
    pub det_extra: Vec<Map<String, Value>>,
    /// Unknown top-level fields.
    pub extra: Map<String, Value>,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            ..Self::default()
        }
    }

    pub fn with_gts(mut self, gts: Vec<GroundTruthEntry>) -> Self {
        self.gt_tags = vec![PERSON_TAG.to_string(); gts.len()];
        self.gts = gts;
        self
    }

    pub fn with_dets(mut self, dets: Vec<Detection>) -> Self {
        self.det_extra = vec![Map::new(); dets.len()];
        self.dets = dets;
        self
    }

    /// Ground truths with every box not tagged `person` marked ignored.
    pub fn person_gts(&self) -> Vec<GroundTruthEntry> {
        self.gts
            .iter()
            .enumerate()
            .map(|(k, g)| GroundTruthEntry {
                ignore: g.ignore || self.gt_tags.get(k).is_some_and(|t| t != PERSON_TAG),
                ..*g
            })
            .collect()
    }

    /// Replaces the detections, keeping each survivor's extra fields by id.
    pub fn replace_dets(&mut self, dets: Vec<Detection>) {
        let mut by_id: BTreeMap<u64, Map<String, Value>> = self
            .dets
            .iter()
            .zip(std::mem::take(&mut self.det_extra))
            .map(|(d, e)| (d.id, e))
            .collect();
        self.det_extra = dets
            .iter()
            .map(|d| by_id.remove(&d.id).unwrap_or_default())
            .collect();
        self.dets = dets;
    }
}

#[derive(Deserialize)]
struct RawGtBox {
    tag: Option<String>,
    fbox: Option<Vec<f64>>,
    vbox: Option<Vec<f64>>,
    #[serde(default)]
    extra: Map<String, Value>,
}

#[derive(Deserialize)]
struct RawGtLine {
    #[serde(rename = "ID")]
    id: String,
    #[serde(default)]
    gtboxes: Vec<RawGtBox>,
    #[serde(flatten)]
    rest: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct RawDtBox {
    fbox: Vec<f64>,
    vbox: Vec<f64>,
    score: f64,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct RawDtLine {
    #[serde(rename = "ID")]
    id: String,
    dtboxes: Vec<RawDtBox>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

fn xywh_box(v: &[f64], line: usize, what: &str) -> Result<BBox, IngestError> {
    let [x, y, w, h] = v else {
        return Err(IngestError::parse(line, format!("{what} must have 4 numbers, got {}", v.len())));
    };
    if *w < 0.0 || *h < 0.0 {
        return Err(IngestError::parse(line, format!("{what} has negative size {w}x{h}")));
    }
    BBox::from_xywh(*x, *y, *w, *h).map_err(|e| IngestError::parse(line, format!("{what}: {e}")))
}

fn is_ignore(extra: &Map<String, Value>) -> bool {
    match extra.get("ignore") {
        Some(Value::Bool(b)) => *b,
        Some(Value::Number(n)) => n.as_f64().is_some_and(|v| v != 0.0),
        _ => false,
    }
}

/// Reads lines as bytes so invalid UTF-8 becomes a located error.
struct Lines<R> {
    reader: R,
    line: usize,
    buf: Vec<u8>,
}

impl<R: BufRead> Lines<R> {
    fn new(reader: R) -> Self {
        Self {
            reader,
            line: 0,
            buf: Vec::new(),
        }
    }

    /// Next non-blank, non-comment line with its 1-based number.
    fn next_line(&mut self) -> Option<Result<(usize, String), IngestError>> {
        loop {
            self.buf.clear();
            self.line += 1;
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(IngestError::parse(self.line, e.to_string()))),
            }
            let text = match std::str::from_utf8(&self.buf) {
                Ok(t) => t.trim(),
                Err(e) => return Some(Err(IngestError::parse(self.line, format!("invalid UTF-8: {e}")))),
            };
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            return Some(Ok((self.line, text.to_string())));
        }
    }
}

fn parse_gt_line(line: usize, text: &str) -> Result<ImageRecord, IngestError> {
    let raw: RawGtLine = serde_json::from_str(text).map_err(|e| IngestError::parse(line, e.to_string()))?;
    if raw.id.is_empty() {
        return Err(IngestError::parse(line, "empty image ID"));
    }
    let mut record = ImageRecord::new(raw.id);
    record.extra = raw.rest;
    for (k, b) in raw.gtboxes.into_iter().enumerate() {
        let fbox = b
            .fbox
            .ok_or_else(|| IngestError::parse(line, format!("gtboxes[{k}] has no fbox")))?;
        let full = xywh_box(&fbox, line, "fbox")?;
        let (visible, visible_missing) = match b.vbox {
            Some(v) => (xywh_box(&v, line, "vbox")?, false),
            None => (full, true),
        };
        let mut entry = GroundTruthEntry::new(k as u64, PairedBox::new(full, visible));
        entry.ignore = is_ignore(&b.extra);
        entry.visible_missing = visible_missing;
        record.gts.push(entry);
        record.gt_tags.push(b.tag.unwrap_or_else(|| PERSON_TAG.to_string()));
    }
    Ok(record)
}

fn parse_dt_line(line: usize, text: &str) -> Result<ImageRecord, IngestError> {
    let raw: RawDtLine = serde_json::from_str(text).map_err(|e| IngestError::parse(line, e.to_string()))?;
    if raw.id.is_empty() {
        return Err(IngestError::parse(line, "empty image ID"));
    }
    let mut record = ImageRecord::new(raw.id);
    record.extra = raw.extra;
    for (k, b) in raw.dtboxes.into_iter().enumerate() {
        if !(0.0..=1.0).contains(&b.score) {
            return Err(IngestError::parse(
                line,
                format!("dtboxes[{k}] score {} outside [0, 1]", b.score),
            ));
        }
        let pair = PairedBox::new(xywh_box(&b.fbox, line, "fbox")?, xywh_box(&b.vbox, line, "vbox")?);
        record.dets.push(Detection::new(k as u64, pair, b.score));
        record.det_extra.push(b.extra);
    }
    Ok(record)
}

/// Streaming reader over records; rejects repeated image ids.
pub struct RecordReader<R> {
    lines: Lines<R>,
    seen: HashSet<String>,
    parse: fn(usize, &str) -> Result<ImageRecord, IngestError>,
}

impl<R: BufRead> RecordReader<R> {
    pub fn odgt(reader: R) -> Self {
        Self {
            lines: Lines::new(reader),
            seen: HashSet::new(),
            parse: parse_gt_line,
        }
    }

    pub fn predictions(reader: R) -> Self {
        Self {
            lines: Lines::new(reader),
            seen: HashSet::new(),
            parse: parse_dt_line,
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<ImageRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        let (line, text) = match self.lines.next_line()? {
            Ok(v) => v,
            Err(e) => return Some(Err(e)),
        };
        let record = match (self.parse)(line, &text) {
            Ok(r) => r,
            Err(e) => return Some(Err(e)),
        };
        if !self.seen.insert(record.image_id.clone()) {
            return Some(Err(IngestError::DuplicateImage {
                line,
                id: record.image_id,
            }));
        }
        Some(Ok(record))
    }
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| IngestError::io(path, e))
}

pub fn read_odgt_from<R: BufRead>(reader: R) -> Result<Vec<ImageRecord>, IngestError> {
    RecordReader::odgt(reader).collect()
}

pub fn read_odgt(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>, IngestError> {
    read_odgt_from(open(path.as_ref())?)
}

pub fn read_predictions_from<R: BufRead>(reader: R) -> Result<Vec<ImageRecord>, IngestError> {
    RecordReader::predictions(reader).collect()
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>, IngestError> {
    read_predictions_from(open(path.as_ref())?)
}

/// Rounds to 9 significant digits.
fn sig9(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

fn xywh(b: &BBox) -> Vec<f64> {
    b.to_xywh().iter().map(|&v| sig9(v)).collect()
}

fn write_header<W: Write>(out: &mut W, header: Option<&str>) -> io::Result<()> {
    if let Some(h) = header {
        for line in h.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    Ok(())
}

/// Writes ground truth records. `header` lines are emitted as `#` comments.
pub fn write_odgt_to<W: Write>(mut out: W, records: &[ImageRecord], header: Option<&str>) -> io::Result<()> {
    write_header(&mut out, header)?;
    for r in records {
        let boxes: Vec<Value> = r
            .gts
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let mut obj = Map::new();
                let tag = r.gt_tags.get(k).map_or(PERSON_TAG, String::as_str);
                obj.insert("tag".into(), Value::from(tag));
                obj.insert("fbox".into(), Value::from(xywh(&g.pair.full)));
                if !g.visible_missing {
                    obj.insert("vbox".into(), Value::from(xywh(&g.pair.visible)));
                }
                let mut extra = Map::new();
                extra.insert("ignore".into(), Value::from(u8::from(g.ignore)));
                obj.insert("extra".into(), Value::Object(extra));
                Value::Object(obj)
            })
            .collect();
        let mut line = Map::new();
        line.insert("ID".into(), Value::from(r.image_id.clone()));
        line.insert("gtboxes".into(), Value::from(boxes));
        for (k, v) in &r.extra {
            line.entry(k.clone()).or_insert_with(|| v.clone());
        }
        serde_json::to_writer(&mut out, &Value::Object(line))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_odgt(path: impl AsRef<Path>, records: &[ImageRecord], header: Option<&str>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    write_odgt_to(BufWriter::new(file), records, header).map_err(|e| IngestError::io(path, e))
}

/// Writes prediction records with stable field order: `ID`, `dtboxes`, then
/// preserved fields; each box `fbox`, `vbox`, `score`, then preserved fields.
pub fn write_predictions_to<W: Write>(
    mut out: W,
    records: &[ImageRecord],
    header: Option<&str>,
) -> io::Result<()> {
    write_header(&mut out, header)?;
    for r in records {
        let dtboxes = r
            .dets
            .iter()
            .enumerate()
            .map(|(k, d)| RawDtBox {
                fbox: xywh(&d.pair.full),
                vbox: xywh(&d.pair.visible),
                score: sig9(d.score),
                extra: r.det_extra.get(k).cloned().unwrap_or_default(),
            })
            .collect();
        let line = RawDtLine {
            id: r.image_id.clone(),
            dtboxes,
            extra: r.extra.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_predictions(
    path: impl AsRef<Path>,
    records: &[ImageRecord],
    header: Option<&str>,
) -> Result<(), IngestError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    write_predictions_to(BufWriter::new(file), records, header).map_err(|e| IngestError::io(path, e))
}

/// Tags other than `person` with their counts.
pub fn unknown_tags(records: &[ImageRecord]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for tag in records.iter().flat_map(|r| r.gt_tags.iter()) {
        if tag != PERSON_TAG {
            *counts.entry(tag.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// Ground truths whose visible box leaks outside the full box.
pub fn inconsistent_annotations(records: &[ImageRecord]) -> Vec<(String, u64)> {
    records
        .iter()
        .flat_map(|r| {
            r.gts
                .iter()
                .filter(|g| !g.looks_consistent())
                .map(move |g| (r.image_id.clone(), g.id))
        })
        .collect()
}
