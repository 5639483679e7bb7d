//! Immutable cached values.

use std::sync::atomic::AtomicU64;

use crate::poison::{self, Poison};
use crate::ITEM_OVERHEAD;

/// A cached value together with its key and client metadata.
///
/// Items never change once built; a `set` on an existing key swaps in a new
/// item and retires the old one.
#[derive(Debug)]
pub struct Item {
    magic: AtomicU64,
    flags: u32,
    key_len: u32,
    expiry: u64,
    charged: u64,
    // key bytes followed by value bytes
    data: Box<[u8]>,
}

impl Item {
    pub fn new(key: &[u8], flags: u32, expiry: u64, value: &[u8]) -> Self {
        let mut data = Vec::with_capacity(key.len() + value.len());
        data.extend_from_slice(key);
        data.extend_from_slice(value);
        Item {
            magic: AtomicU64::new(poison::LIVE),
            flags,
            key_len: key.len() as u32,
            expiry,
            charged: Self::charge_for(key.len(), value.len()),
            data: data.into_boxed_slice(),
        }
    }

    /// Budget charge of an item with the given key and value lengths.
    pub const fn charge_for(key_len: usize, value_len: usize) -> u64 {
        ITEM_OVERHEAD + key_len as u64 + value_len as u64
    }

    pub fn key(&self) -> &[u8] {
        &self.data[..self.key_len as usize]
    }

    pub fn value(&self) -> &[u8] {
        &self.data[self.key_len as usize..]
    }

    pub fn flags(&self) -> u32 {
        self.flags
    }

    /// Absolute expiry in cache-clock seconds; 0 means never.
    pub fn expiry(&self) -> u64 {
        self.expiry
    }

    pub fn is_expired(&self, now: u64) -> bool {
        self.expiry != 0 && self.expiry <= now
    }

    pub fn charged_bytes(&self) -> u64 {
        self.charged
    }

    pub(crate) fn check_canary(&self) {
        poison::check(&self.magic);
    }
}

impl Poison for Item {
    fn header(&self) -> Option<&AtomicU64> {
        Some(&self.magic)
    }
}
