use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong across the simulator and the analyzer.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {reason}")]
    IdxFormat { path: String, reason: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("partition: {0}")]
    Partition(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("non-finite {what} in {context}; run aborted")]
    NonFinite { what: &'static str, context: String },

    #[error("config: {0}")]
    Config(String),

    /// The time budget K·tau·alpha + K·beta <= t_sum cannot hold even at
    /// tau = 1.
    #[error(
        "infeasible budget: K*tau*alpha + K*beta = {min_spend} at the minimum tau=1 \
         exceeds t_sum = {t_sum} (K={k}, alpha={alpha}, beta={beta})"
    )]
    InfeasibleBudget { k: u32, alpha: f64, beta: f64, min_spend: f64, t_sum: f64 },

    /// gamma(K) = (t_sum - K*beta)/alpha must be positive for the bound to
    /// be defined at all.
    #[error("infeasible K={k}: gamma = (t_sum - K*beta)/alpha = {gamma} is not positive")]
    InfeasibleK { k: u32, gamma: f64 },

    #[error("client {client} already uploaded this round")]
    DuplicateUpload { client: u32 },

    #[error("client {client} payload of {len} bytes exceeds the pool limit of {max}")]
    OversizedPayload { client: u32, len: usize, max: usize },

    #[error("cache pool entry for client {client} failed its integrity checksum")]
    ChecksumMismatch { client: u32 },

    #[error("cache pool has no entry for client {client}")]
    MissingUpload { client: u32 },

    #[error("round {round}: block rejected by majority vote ({accepts} of {votes} accepted)")]
    MajorityRejected { round: u32, accepts: usize, votes: usize },

    #[error("ledger: {0}")]
    LedgerFormat(String),

    #[error("block {index} fails verification: {reason}")]
    ChainFault { index: u64, reason: String },

    #[error("nonce space exhausted at difficulty {difficulty}")]
    NonceExhausted { difficulty: u32 },

    #[error("bound: {0}")]
    BoundDomain(String),

    #[error("no feasible K yields a valid bound: {0}")]
    NoValidK(String),

    #[error("estimate: {0}")]
    Estimate(String),
}
