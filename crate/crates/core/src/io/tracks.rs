//! Track output files, ground-truth files and simulated dataset layout.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;

use super::{file_error, write_calibrations, CalibrationRecord, IoError};
use crate::geometry::{BBox, GroundPoint};
use crate::metrics::{Position, TrajectorySet, View};
use crate::simulator::Scenario;
use crate::tracker::FrameResult;

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(|e| file_error(path, e))
}

fn cam_file(dir: &Path, camera_id: &str) -> std::path::PathBuf {
    dir.join(format!("cam_{camera_id}.txt"))
}

/// Writes `cam_<id>.txt`, `ground.txt` and `events.jsonl` frame by frame.
pub struct TrackWriter {
    dir: std::path::PathBuf,
    cams: Vec<BufWriter<File>>,
    ground: BufWriter<File>,
    events: BufWriter<File>,
}

impl TrackWriter {
    pub fn create(dir: &Path, camera_ids: &[String]) -> Result<Self, IoError> {
        fs::create_dir_all(dir).map_err(|e| file_error(dir, e))?;
        Ok(TrackWriter {
            dir: dir.to_path_buf(),
            cams: camera_ids
                .iter()
                .map(|id| create(&cam_file(dir, id)))
                .collect::<Result<_, _>>()?,
            ground: create(&dir.join("ground.txt"))?,
            events: create(&dir.join("events.jsonl"))?,
        })
    }

    pub fn write(&mut self, r: &FrameResult) -> Result<(), IoError> {
        let f = r.frame;
        let err = |e| file_error(&self.dir, e);
        for o in &r.outputs {
            let (x, y) = (o.bev.x, o.bev.y);
            for b in &o.boxes {
                let bb = b.bbox;
                writeln!(
                    self.cams[b.camera],
                    "{f},{},{:.3},{:.3},{:.3},{:.3},{:.4},{x:.4},{y:.4},-1",
                    o.identity, bb.l, bb.t, bb.w, bb.h, b.confidence
                )
                .map_err(err)?;
            }
            writeln!(self.ground, "{f},{},{x:.4},{y:.4}", o.identity).map_err(err)?;
        }
        for id in &r.born {
            writeln!(self.events, r#"{{"born":{id},"frame":{f}}}"#).map_err(err)?;
        }
        for (retired, pivot) in &r.merged {
            writeln!(self.events, r#"{{"merged":[{retired},{pivot}],"frame":{f}}}"#).map_err(err)?;
        }
        for id in &r.lost {
            writeln!(self.events, r#"{{"lost":{id},"frame":{f}}}"#).map_err(err)?;
        }
        for id in &r.killed {
            writeln!(self.events, r#"{{"killed":{id},"frame":{f}}}"#).map_err(err)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), IoError> {
        let dir = self.dir.clone();
        for w in self.cams.iter_mut().chain([&mut self.ground, &mut self.events]) {
            w.flush().map_err(|e| file_error(&dir, e))?;
        }
        Ok(())
    }
}

/// The evaluation view of tracker output, without going through files.
pub fn results_to_trajectories(results: &[FrameResult], camera_ids: &[String]) -> TrajectorySet {
    let mut set = TrajectorySet::new();
    for r in results {
        for o in &r.outputs {
            for b in &o.boxes {
                set.insert(o.identity, r.frame, View::Camera(camera_ids[b.camera].clone()), Position::Box(b.bbox));
            }
            set.insert(o.identity, r.frame, View::Ground, Position::Point(o.bev));
        }
    }
    set
}

fn fields(path: &Path, line: usize, text: &str, min: usize) -> Result<Vec<f64>, IoError> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    match vals {
        Ok(v) if v.len() >= min && v.iter().all(|x| x.is_finite()) => Ok(v),
        _ => Err(IoError::Malformed {
            line,
            message: format!("{}: expected at least {min} numeric fields", path.display()),
        }),
    }
}

fn as_id(path: &Path, line: usize, v: f64) -> Result<u64, IoError> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as u64)
    } else {
        Err(IoError::Malformed { line, message: format!("{}: bad identity {v}", path.display()) })
    }
}

/// Read a directory of `cam_<id>.txt` and `ground.txt` files (tracker output
/// or ground truth) into trajectories. Missing files contribute nothing.
pub fn read_track_dir(dir: &Path) -> Result<TrajectorySet, IoError> {
    let mut set = TrajectorySet::new();
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| file_error(dir, e))?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .collect();
    names.sort();
    let mut duplicates = 0usize;
    for name in &names {
        let view = if name == "ground.txt" {
            View::Ground
        } else if let Some(id) = name.strip_prefix("cam_").and_then(|s| s.strip_suffix(".txt")) {
            View::Camera(id.to_string())
        } else {
            continue;
        };
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| file_error(&path, e))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ln = i + 1;
            let (frame, id, pos) = match view {
                View::Ground => {
                    let v = fields(&path, ln, line, 4)?;
                    (v[0], as_id(&path, ln, v[1])?, Position::Point(GroundPoint::new(v[2], v[3])))
                }
                View::Camera(_) => {
                    let v = fields(&path, ln, line, 6)?;
                    let b = BBox::new(v[2], v[3], v[4], v[5]).map_err(|e| IoError::Malformed {
                        line: ln,
                        message: format!("{}: {e}", path.display()),
                    })?;
                    (v[0], as_id(&path, ln, v[1])?, Position::Box(b))
                }
            };
            if !set.insert(id, frame as i64, view.clone(), pos) {
                duplicates += 1;
            }
        }
    }
    if duplicates > 0 {
        warn!("{}: ignored {duplicates} duplicate (frame, identity) entries", dir.display());
    }
    Ok(set)
}

/// `cam_<id>.txt` with `frame,id,l,t,w,h,1,x,y,-1` and `ground.txt` with `frame,id,x,y`.
pub fn write_ground_truth(dir: &Path, scenario: &Scenario) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| file_error(dir, e))?;
    for (m, cam) in scenario.cameras.iter().enumerate() {
        let path = cam_file(dir, &cam.camera_id);
        let mut w = create(&path)?;
        for it in scenario.image_truth.iter().filter(|t| t.camera == m) {
            let b = it.bbox;
            writeln!(
                w,
                "{},{},{:.3},{:.3},{:.3},{:.3},1,{:.4},{:.4},-1",
                it.frame, it.identity, b.l, b.t, b.w, b.h, it.ground.x, it.ground.y
            )
            .map_err(|e| file_error(&path, e))?;
        }
        w.flush().map_err(|e| file_error(&path, e))?;
    }
    let path = dir.join("ground.txt");
    let mut w = create(&path)?;
    for (frame, view, id, pos) in scenario.gt.entries() {
        if let (View::Ground, Position::Point(p)) = (view, pos) {
            writeln!(w, "{frame},{id},{:.4},{:.4}", p.x, p.y).map_err(|e| file_error(&path, e))?;
        }
    }
    w.flush().map_err(|e| file_error(&path, e))
}

/// `scenario.json`, `calibration.json`, `detections.jsonl` and `gt/`.
pub fn write_dataset(dir: &Path, scenario: &Scenario) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| file_error(dir, e))?;
    let spec_path = dir.join("scenario.json");
    let mut spec = serde_json::to_string_pretty(&scenario.spec).expect("spec serializes");
    spec.push('\n');
    fs::write(&spec_path, spec).map_err(|e| file_error(&spec_path, e))?;

    let records: Vec<CalibrationRecord> = scenario
        .calibrations
        .iter()
        .zip(&scenario.cameras)
        .map(|(c, cam)| CalibrationRecord {
            image_size: Some([cam.width, cam.height]),
            fov: cam.fov.iter().map(|p| [p.x, p.y]).collect(),
            ..CalibrationRecord::from_calibration(c)
        })
        .collect();
    write_calibrations(&dir.join("calibration.json"), &records)?;

    let det_path = dir.join("detections.jsonl");
    let mut w = create(&det_path)?;
    for d in &scenario.detections {
        let line = serde_json::to_string(d).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| file_error(&det_path, e))?;
    }
    w.flush().map_err(|e| file_error(&det_path, e))?;
    write_ground_truth(&dir.join("gt"), scenario)
}
