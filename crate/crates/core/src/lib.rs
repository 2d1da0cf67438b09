//! Paired full/visible box post-processing for crowded pedestrian detection.
//!
//! * [`geometry`]: boxes, IoU/IoF, attention masks.
//! * [`suppression`]: greedy, visible-region, soft and adaptive NMS.
//! * [`assignment`]: paired anchor and proposal labelling, anchor grids.
//! * [`metrics`]: matching, AP, log-average miss rate.
//! * [`synthcrowd`]: occluded crowd scenes, noisy detector, perfect-detector survival.
//! * [`ingest`]: ODGT ground truth and line-delimited predictions.

pub mod assignment;
pub mod geometry;
pub mod ingest;
pub mod metrics;
pub mod suppression;
pub mod synthcrowd;

pub use assignment::{AssignmentConfig, GroundTruthEntry, Label};
pub use geometry::{iof, iou, BBox, BoxSelector, PairedBox};
pub use ingest::ImageRecord;
pub use metrics::{EvalConfig, EvalReport, ImageSample};
pub use suppression::{Detection, NmsConfig, NmsMethod, SuppressionResult, TieBreak};
