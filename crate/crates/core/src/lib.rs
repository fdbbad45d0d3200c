//! Data-driven linear reduced-order models of second-order mechanical
//! systems: structure-preserving Lagrangian operator inference, dynamic mode
//! decomposition with control, and ERA/OKID system identification, plus a
//! synthetic full-order model to generate snapshot data.

pub mod dmdc;
pub mod era_okid;
pub mod error;
pub mod linalg;
pub mod lopinf;
pub mod metrics;
pub mod pod;
pub mod romsim;
pub mod synth_fom;
pub mod tdiff;

pub use error::{Result, RomError};
pub use synth_fom::SnapshotSet;
