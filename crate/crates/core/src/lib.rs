//! Long-term internal migration and daily mobility analytics built from
//! anonymized device-to-antenna event logs.
//!
//! The crate is organised as a staged pipeline:
//!
//! - [`ingest`] streams XDR logs and loads the reference tables,
//! - [`home`] infers weekly night-time home comunas per device,
//! - [`migration`] classifies region-level relocations and derives the
//!   origin–destination analytics,
//! - [`mobility`] builds daily mobility indices and quarantine strata,
//! - [`stats`] holds the correlation, regression and test kernel,
//! - [`synth`] generates synthetic worlds with ground truth,
//! - [`pipeline`] wires the stages into file-based commands.

pub mod error;
pub mod geo;
pub mod home;
pub mod ingest;
pub mod migration;
pub mod mobility;
pub mod mode;
pub mod model;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod transport;
pub mod window;

pub use error::{Error, Result};
pub use geo::haversine_km;
pub use mode::mode_with_tiebreak;
pub use model::{
    Antenna, AntennaId, ComunaId, ComunaProfile, ComunaTable, DeviceId, RegionId, XdrEvent,
    METROPOLITAN_REGION,
};
pub use window::StudyWindow;
