//! Backoff language models: estimation, queries and ARPA I/O.

mod arpa;
mod estimate;
mod model;

pub use arpa::{read_arpa, read_arpa_with_vocab, write_arpa};
pub use estimate::{
    estimate_good_turing, good_turing_count, katz_discounts, GoodTuringConfig,
    DEFAULT_DISCOUNT_CUTOFF,
};
pub use model::{backoff_weight, BackoffLm, BackoffStats, NgramEntry, LEFTOVER_EPS, LOG10_FLOOR};
