//! A concurrent application cache whose eviction policy lives inside its
//! hash table.
//!
//! Each bucket of the table is a Harris-style non-blocking sorted list and
//! carries a small CLOCK counter. Lookups set the counter of the bucket they
//! hit; under memory pressure a shared hand sweeps the bucket array,
//! decrementing counters and evicting buckets whose counter has reached zero.
//! Removed memory is handed to an epoch-based collector that only advances
//! epochs when the cache actually needs the memory back. The table grows by
//! incremental, cooperative migration instead of a stop-the-world rehash.
//!
//! The main entry point is [`Cache`].

pub mod cache;
pub mod hash;
pub mod item;
pub mod list;
pub mod poison;
pub mod reclaim;
pub mod table;
pub mod time;

pub use cache::{Cache, CacheConfig, CacheError, EvictionListener, Hit, Stats};
pub use hash::{bucket_of, hash};
pub use item::Item;
pub use time::{Clock, ManualClock, MonotonicClock};

/// Fixed per-item overhead charged against the memory budget.
pub const ITEM_OVERHEAD: u64 = 64;

/// Longest key accepted by the cache.
pub const MAX_KEY_LEN: usize = 250;
