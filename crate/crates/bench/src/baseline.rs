//! The comparison system: the same cache, one operation at a time.

use std::sync::Mutex;

use fleec_core::{Cache, CacheConfig, CacheError, Hit, Item, Stats};

/// A [`Cache`] behind one global mutex. Single-threaded it behaves exactly
/// like the cache it wraps; under load every operation serializes.
pub struct BaselineCache {
    inner: Mutex<Cache>,
}

impl BaselineCache {
    pub fn new(config: CacheConfig) -> Result<Self, CacheError> {
        Ok(BaselineCache {
            inner: Mutex::new(Cache::new(config)?),
        })
    }

    pub fn get(&self, key: &[u8]) -> Option<Hit> {
        self.inner.lock().unwrap().get(key)
    }

    pub fn get_with<R>(&self, key: &[u8], f: impl FnOnce(&Item) -> R) -> Option<R> {
        self.inner.lock().unwrap().get_with(key, f)
    }

    pub fn set(&self, key: &[u8], flags: u32, expiry: u64, value: &[u8]) -> Result<(), CacheError> {
        self.inner.lock().unwrap().set(key, flags, expiry, value)
    }

    pub fn delete(&self, key: &[u8]) -> bool {
        self.inner.lock().unwrap().delete(key)
    }

    pub fn stats(&self) -> Stats {
        self.inner.lock().unwrap().stats()
    }
}
