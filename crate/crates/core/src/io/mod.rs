//! File formats, streaming ingestion and the command-line driver.
//!
//! * calibration: JSON array of `{"camera_id", "homography": [9 values, row-major, image to ground]}`
//! * detections: JSON Lines, one [`DetectionRecord`] per line, sorted by frame
//! * tracks: MOT-style `cam_<id>.txt`, `ground.txt` and `events.jsonl` in one directory

mod cli;
mod tracks;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TrackerConfig;
use crate::geometry::{project_to_ground, BBox, CameraCalibration, Homography};
use crate::model::{norm, normalize, Detection};
use crate::tracker::{FrameResult, Tracker, TrackerError};

pub use cli::cli_main;
pub use tracks::{
    read_track_dir, results_to_trajectories, write_dataset, write_ground_truth, TrackWriter,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {error}")]
    File { path: String, error: std::io::Error },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown camera_id `{camera}`")]
    UnknownCamera { line: usize, camera: String },
    #[error("line {line}: embedding has {got} values, earlier records have {expected}")]
    Dimension { line: usize, expected: usize, got: usize },
    #[error("calibration: {0}")]
    Calibration(String),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
}

pub(crate) fn file_error(path: &Path, error: std::io::Error) -> IoError {
    IoError::File { path: path.display().to_string(), error }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub camera_id: String,
    pub frame: i64,
    /// `[l, t, w, h]` in pixels.
    pub bbox: [f64; 4],
    pub confidence: f64,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub camera_id: String,
    /// Image to ground, row-major.
    pub homography: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size: Option<[f64; 2]>,
    /// Ground polygon covered by the image.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fov: Vec<[f64; 2]>,
}

impl CalibrationRecord {
    pub fn from_calibration(c: &CameraCalibration) -> Self {
        CalibrationRecord {
            camera_id: c.camera_id.clone(),
            homography: c.homography.to_row_major().to_vec(),
            image_size: None,
            fov: Vec::new(),
        }
    }
}

/// Camera order is the order of the array.
pub fn parse_calibrations(text: &str) -> Result<Vec<CameraCalibration>, IoError> {
    let records: Vec<CalibrationRecord> =
        serde_json::from_str(text).map_err(|e| IoError::Calibration(e.to_string()))?;
    if records.is_empty() {
        return Err(IoError::Calibration("no cameras".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.camera_id.clone()) {
            return Err(IoError::Calibration(format!("duplicate camera_id `{}`", r.camera_id)));
        }
        let h = Homography::from_row_major(&r.homography)
            .map_err(|e| IoError::Calibration(format!("camera `{}`: {e}", r.camera_id)))?;
        let cal = CameraCalibration::new(r.camera_id.clone(), h)
            .map_err(|e| IoError::Calibration(format!("camera `{}`: {e}", r.camera_id)))?;
        out.push(cal);
    }
    Ok(out)
}

pub fn read_calibrations(path: &Path) -> Result<Vec<CameraCalibration>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| file_error(path, e))?;
    parse_calibrations(&text)
}

pub fn write_calibrations(path: &Path, records: &[CalibrationRecord]) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(records).expect("calibration serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| file_error(path, e))
}

/// All detections of one frame, with dense camera indices.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordBatch {
    pub frame: i64,
    pub records: Vec<(usize, DetectionRecord)>,
}

type RawLines = Box<dyn Iterator<Item = (usize, Result<String, IoError>)>>;

enum Source {
    Lines(RawLines),
    Memory(std::vec::IntoIter<(usize, DetectionRecord)>),
}

impl Source {
    fn next_record(&mut self) -> Option<Result<(usize, DetectionRecord), IoError>> {
        match self {
            Source::Memory(it) => it.next().map(Ok),
            Source::Lines(lines) => loop {
                let (line, text) = lines.next()?;
                let text = match text {
                    Ok(t) => t,
                    Err(e) => return Some(Err(e)),
                };
                if text.trim().is_empty() {
                    continue;
                }
                return Some(parse_record(line, &text).map(|r| (line, r)));
            },
        }
    }
}

fn parse_record(line: usize, text: &str) -> Result<DetectionRecord, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Malformed { line, message: e.to_string() })
}

/// Frame-ordered iterator of detection batches.
pub struct DetectionStream {
    source: Source,
    cameras: BTreeMap<String, usize>,
    dim: Option<usize>,
    pending: Option<(usize, DetectionRecord)>,
    off_unit: usize,
    failed: bool,
}

impl DetectionStream {
    fn new(source: Source, calibrations: &[CameraCalibration]) -> Self {
        DetectionStream {
            source,
            cameras: calibrations
                .iter()
                .enumerate()
                .map(|(i, c)| (c.camera_id.clone(), i))
                .collect(),
            dim: None,
            pending: None,
            off_unit: 0,
            failed: false,
        }
    }

    /// Batches from in-memory records (sorted stably by frame first).
    pub fn from_records(mut records: Vec<DetectionRecord>, calibrations: &[CameraCalibration]) -> Self {
        records.sort_by_key(|r| r.frame);
        let numbered: Vec<_> = records.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect();
        Self::new(Source::Memory(numbered.into_iter()), calibrations)
    }

    fn check(&mut self, line: usize, mut r: DetectionRecord) -> Result<(usize, DetectionRecord), IoError> {
        let camera = *self.cameras.get(&r.camera_id).ok_or_else(|| IoError::UnknownCamera {
            line,
            camera: r.camera_id.clone(),
        })?;
        let expected = *self.dim.get_or_insert(r.embedding.len());
        if r.embedding.len() != expected {
            return Err(IoError::Dimension { line, expected, got: r.embedding.len() });
        }
        if !r.bbox.iter().all(|v| v.is_finite()) || BBox::new(r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3]).is_err() {
            return Err(IoError::Malformed { line, message: format!("invalid bbox {:?}", r.bbox) });
        }
        if !r.confidence.is_finite() || !r.embedding.iter().all(|v| v.is_finite()) {
            return Err(IoError::Malformed { line, message: "non-finite value".into() });
        }
        if (norm(&r.embedding) - 1.0).abs() > 1e-3 {
            if self.off_unit == 0 {
                warn!("line {line}: embedding is not unit length, renormalizing");
            }
            self.off_unit += 1;
        }
        normalize(&mut r.embedding);
        Ok((camera, r))
    }

    /// Records renormalized so far.
    pub fn renormalized(&self) -> usize {
        self.off_unit
    }
}

impl Iterator for DetectionStream {
    type Item = Result<RecordBatch, IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let mut batch: Option<RecordBatch> = None;
        loop {
            let next = match self.pending.take() {
                Some(p) => Some(Ok(p)),
                None => self.source.next_record(),
            };
            let (line, rec) = match next {
                None => return batch.map(Ok),
                Some(Err(e)) => {
                    self.failed = true;
                    return Some(Err(e));
                }
                Some(Ok(x)) => x,
            };
            if let Some(b) = &batch {
                if rec.frame != b.frame {
                    self.pending = Some((line, rec));
                    return batch.map(Ok);
                }
            }
            match self.check(line, rec) {
                Ok((camera, rec)) => batch
                    .get_or_insert_with(|| RecordBatch { frame: rec.frame, records: Vec::new() })
                    .records
                    .push((camera, rec)),
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

fn numbered_lines(path: &Path) -> Result<RawLines, IoError> {
    let file = File::open(path).map_err(|e| file_error(path, e))?;
    let owned = path.to_path_buf();
    Ok(Box::new(
        BufReader::new(file)
            .lines()
            .enumerate()
            .map(move |(i, l)| (i + 1, l.map_err(|e| file_error(&owned, e)))),
    ))
}

/// Open a JSON-Lines detection file. A sorted file is streamed; an unsorted
/// one is loaded and sorted in memory with a warning.
pub fn read_detections(path: &Path, calibrations: &[CameraCalibration]) -> Result<DetectionStream, IoError> {
    #[derive(Deserialize)]
    struct FrameOnly {
        frame: i64,
    }
    let mut last = i64::MIN;
    let mut sorted = true;
    for (line, text) in numbered_lines(path)? {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let f: FrameOnly =
            serde_json::from_str(&text).map_err(|e| IoError::Malformed { line, message: e.to_string() })?;
        if f.frame < last {
            sorted = false;
        }
        last = last.max(f.frame);
    }
    if sorted {
        return Ok(DetectionStream::new(Source::Lines(numbered_lines(path)?), calibrations));
    }
    warn!("{}: records are not sorted by frame, sorting in memory", path.display());
    let mut all = Vec::new();
    for (line, text) in numbered_lines(path)? {
        let text = text?;
        if !text.trim().is_empty() {
            all.push((line, parse_record(line, &text)?));
        }
    }
    all.sort_by_key(|(_, r)| r.frame);
    Ok(DetectionStream::new(Source::Memory(all.into_iter()), calibrations))
}

/// Project a batch to the ground. Boxes whose anchor does not reach the
/// ground plane are dropped with a warning.
pub fn to_detections(batch: &RecordBatch, calibrations: &[CameraCalibration], alpha_proj: f64) -> Vec<Detection> {
    let mut out = Vec::with_capacity(batch.records.len());
    for (camera, r) in &batch.records {
        let bbox = BBox { l: r.bbox[0], t: r.bbox[1], w: r.bbox[2], h: r.bbox[3] };
        match project_to_ground(&bbox, &calibrations[*camera], alpha_proj) {
            Ok(pos_bev) => out.push(Detection {
                camera: *camera,
                frame: r.frame,
                bbox,
                confidence: r.confidence,
                feat: r.embedding.clone(),
                pos_bev,
            }),
            Err(e) => warn!("frame {} camera {}: dropping detection: {e}", r.frame, r.camera_id),
        }
    }
    out
}

/// Run the tracker over a batch stream, stepping empty frames across gaps.
pub fn track_stream<I, F>(
    batches: I,
    calibrations: &[CameraCalibration],
    config: TrackerConfig,
    mut sink: F,
) -> Result<(), IoError>
where
    I: IntoIterator<Item = Result<RecordBatch, IoError>>,
    F: FnMut(FrameResult) -> Result<(), IoError>,
{
    let alpha = config.alpha_proj;
    let mut tracker = Tracker::new(config, calibrations.len());
    for batch in batches {
        let batch = batch?;
        if let Some(mut f) = tracker.frame() {
            while f < batch.frame {
                sink(tracker.step(f, &[])?)?;
                f += 1;
            }
        }
        let dets = to_detections(&batch, calibrations, alpha);
        sink(tracker.step(batch.frame, &dets)?)?;
    }
    Ok(())
}

/// In-memory convenience over [`track_stream`].
pub fn track_records(
    records: &[DetectionRecord],
    calibrations: &[CameraCalibration],
    config: TrackerConfig,
) -> Result<Vec<FrameResult>, IoError> {
    let mut out = Vec::new();
    let stream = DetectionStream::from_records(records.to_vec(), calibrations);
    track_stream(stream, calibrations, config, |r| {
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn cals() -> Vec<CameraCalibration> {
        ["a", "b"]
            .iter()
            .map(|id| CameraCalibration::new(*id, Homography::IDENTITY).unwrap())
            .collect()
    }

    fn line(cam: &str, frame: i64) -> String {
        format!(r#"{{"camera_id":"{cam}","frame":{frame},"bbox":[0,0,10,10],"confidence":0.9,"embedding":[1,0]}}"#)
    }

    fn file(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn empty_file_no_batches() {
        let f = file(&[]);
        assert_eq!(read_detections(f.path(), &cals()).unwrap().count(), 0);
    }

    #[test]
    fn groups_by_frame() {
        let f = file(&[line("a", 1), line("b", 1), line("a", 2)]);
        let batches: Vec<_> = read_detections(f.path(), &cals()).unwrap().map(Result::unwrap).collect();
        assert_eq!(batches.iter().map(|b| b.records.len()).collect::<Vec<_>>(), [2, 1]);
        assert_eq!(batches[0].records[1].0, 1);
    }

    #[test]
    fn unsorted_input_is_sorted() {
        let f = file(&[line("a", 3), line("b", 1), line("a", 1)]);
        let batches: Vec<_> = read_detections(f.path(), &cals()).unwrap().map(Result::unwrap).collect();
        assert_eq!(batches.iter().map(|b| b.frame).collect::<Vec<_>>(), [1, 3]);
        assert_eq!(batches[0].records[0].1.camera_id, "b");
    }

    #[test]
    fn unknown_camera_named() {
        let f = file(&[line("a", 1), line("zz", 1)]);
        let err = read_detections(f.path(), &cals()).unwrap().find_map(Result::err).unwrap();
        assert!(err.to_string().contains("`zz`") && err.to_string().contains("line 2"));
    }

    #[test]
    fn malformed_line_numbered() {
        let f = file(&[line("a", 1), "{not json".into()]);
        let err = read_detections(f.path(), &cals()).err().unwrap();
        assert!(matches!(err, IoError::Malformed { line: 2, .. }));
    }

    #[test]
    fn embedding_dimension_checked_and_renormalized() {
        let odd = r#"{"camera_id":"a","frame":1,"bbox":[0,0,10,10],"confidence":1,"embedding":[1,0,0]}"#;
        let f = file(&[line("a", 1), odd.into()]);
        let err = read_detections(f.path(), &cals()).unwrap().find_map(Result::err).unwrap();
        assert!(matches!(err, IoError::Dimension { line: 2, expected: 2, got: 3 }));

        let long = r#"{"camera_id":"a","frame":1,"bbox":[0,0,10,10],"confidence":1,"embedding":[3,4]}"#;
        let f = file(&[long.into()]);
        let mut s = read_detections(f.path(), &cals()).unwrap();
        let b = s.next().unwrap().unwrap();
        assert_eq!(b.records[0].1.embedding, vec![0.6, 0.8]);
        assert_eq!(s.renormalized(), 1);
    }

    #[test]
    fn calibration_order_and_errors() {
        let text = r#"[{"camera_id":"x","homography":[1,0,0,0,1,0,0,0,1]},{"camera_id":"y","homography":[2,0,0,0,2,0,0,0,1]}]"#;
        let c = parse_calibrations(text).unwrap();
        assert_eq!(c.iter().map(|c| c.camera_id.as_str()).collect::<Vec<_>>(), ["x", "y"]);
        assert!(parse_calibrations(r#"[{"camera_id":"x","homography":[0,0,0,0,0,0,0,0,0]}]"#).is_err());
        assert!(parse_calibrations(r#"[{"camera_id":"x","homography":[1,0,0]}]"#).is_err());
        assert!(parse_calibrations("[]").is_err());
    }

    #[test]
    fn gaps_are_stepped() {
        let recs: Vec<DetectionRecord> = [1, 4]
            .iter()
            .map(|&f| serde_json::from_str(&line("a", f)).unwrap())
            .collect();
        let results = track_records(&recs, &cals(), TrackerConfig::default()).unwrap();
        assert_eq!(results.iter().map(|r| r.frame).collect::<Vec<_>>(), [1, 2, 3, 4]);
        assert_eq!(results[3].outputs[0].identity, results[0].outputs[0].identity);
    }
}
