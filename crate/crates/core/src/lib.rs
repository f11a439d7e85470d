//! orgapipe-core: a headless organoid image-analysis engine.
//!
//! The pipeline stages map onto modules:
//!
//! 1. **imaging** – image/timelapse loading, hashing, raster utilities.
//! 2. **detection** – tiled multi-scale detection, NMS, ROI restriction, filtering.
//! 3. **tracking** – frame-to-frame linking with search radius and memory, gap filling.
//! 4. **segmentation** – bbox-prompted instance masks stored as polygon contours.
//! 5. **features** – geometric, intensity and moment-derived features; ruler lengths.
//! 6. **annotations** – text, number, classes, object and ruler annotations.
//! 7. **ml** – KNN, random forest, AdaBoost, MLP and linear SVC behind one interface.
//! 8. **store** – detection-ID-indexed session state, cache, JSON/CSV/NPY exports.
//! 9. **adapter** – wire protocol client for external detection/segmentation models.
//! 10. **pipeline** – declarative configuration and staged batch execution.

pub mod adapter;
pub mod annotations;
pub mod detection;
pub mod features;
mod fsutil;
pub mod geometry;
pub mod imaging;
pub mod ml;
pub mod pipeline;
pub mod segmentation;
pub mod store;
pub mod synthetic;
pub mod tracking;

pub use geometry::{Point, Rect};
pub use imaging::{Frame, ImageStack, SignalChannel};
pub use detection::{DetectionId, DetectionRecord, Provenance};
pub use segmentation::PolygonMask;
pub use store::Session;
