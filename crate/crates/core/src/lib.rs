//! Online multi-target multi-camera tracking by spatial-temporal multicuts.
//!
//! Every frame, fresh detections from all cameras and the live tracks are
//! placed in one weighted graph. A minimum-cost multicut of that graph
//! clusters detections across views and attaches them to tracks in a single
//! step. Tracks are represented by one aggregated cross-camera superbox.

pub mod assign;
pub mod config;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod model;
pub mod multicut;
pub mod simulator;
pub mod tracker;
pub mod weights;

pub use config::TrackerConfig;
pub use geometry::{BBox, CameraCalibration, Delta, GroundPoint, Homography};
pub use model::{Detection, SuperBox, Track, TrackState};
pub use tracker::{FrameResult, Tracker};
