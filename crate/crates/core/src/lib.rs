pub mod acquisition;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod gp;
pub mod harness;
pub mod library;
pub mod metrics;
pub mod objectives;
pub mod pbp;
pub mod pool;
pub mod rf;
pub mod seed;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use gp::{GpPosterior, PoolPredictor, SqExpKernel};
pub use library::{load_library, LibraryFormat};
pub use pool::{CandidatePool, FeatureMatrix, Library, ObjectiveSense, ObservationSet, PoolView};
