use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("address {addr} out of range (address space {space})")]
    AddressOutOfRange { addr: u64, space: u64 },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("stash overflow: occupancy {occupancy} exceeds capacity {capacity}")]
    StashOverflow { occupancy: usize, capacity: usize },

    #[error("background eviction livelock: occupancy {occupancy} stayed at or above threshold {threshold} after {attempts} evictions")]
    EvictionLivelock {
        occupancy: usize,
        threshold: usize,
        attempts: usize,
    },

    #[error("invalid granularity: 2^{g} exceeds L_max")]
    InvalidGranularity { g: u32 },

    #[error("no pending decision point at or after tick {0}")]
    ScheduleExhausted(u64),

    #[error("policy chose config {chosen} outside the allowed set {allowed:?}")]
    ContractViolation { chosen: u32, allowed: Vec<u32> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
