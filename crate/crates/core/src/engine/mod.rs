//! Campaign loops and batch proposal.

pub mod campaign;
pub mod config;
pub mod model;
pub mod parallel_ei;
pub mod pdts;
pub mod snapshot;
pub mod trace;

pub use campaign::{run_campaign, sequential_ts_step, Campaign, CampaignError};
pub use config::{CampaignConfig, MetricSpec, Method, PbpConfig, RfgpConfig, SurrogateKind};
pub use parallel_ei::{parallel_ei_propose, parallel_ei_propose_dense};
pub use pdts::{dedup_merge, pdts_propose};
pub use snapshot::{PosteriorPayload, PosteriorSnapshot, PreparedSnapshot};
pub use trace::{read_jsonl, BatchProposal, CampaignTrace, IterationRecord, Provenance};
