use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

pub const PAGE_SIZE: u64 = 4096;

/// Counters describing how much of a store has been brought into memory.
///
/// `bytes_materialized_total` counts file pages touched by reads, in bytes,
/// once per read. `bytes_live` tracks the feature buffers handed out by
/// budgeted streams that are still alive; `bytes_live_peak` is its high-water
/// mark since the last [`AccessAccounting::reset_peak`].
#[derive(Debug, Default)]
pub struct AccessAccounting {
    bytes_materialized_total: AtomicU64,
    bytes_live: AtomicU64,
    bytes_live_peak: AtomicU64,
    files_mapped: AtomicU64,
    mask_reads: Mutex<Vec<String>>,
    feature_reads: Mutex<BTreeSet<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AccessStats {
    pub bytes_materialized_total: u64,
    pub bytes_live: u64,
    pub bytes_live_peak: u64,
    pub files_mapped: u64,
}

pub fn pages_spanned(offset: u64, len: u64) -> u64 {
    if len == 0 {
        return 0;
    }
    (offset + len - 1) / PAGE_SIZE - offset / PAGE_SIZE + 1
}

impl AccessAccounting {
    pub fn stats(&self) -> AccessStats {
        AccessStats {
            bytes_materialized_total: self.bytes_materialized_total.load(Ordering::Relaxed),
            bytes_live: self.bytes_live.load(Ordering::Relaxed),
            bytes_live_peak: self.bytes_live_peak.load(Ordering::Relaxed),
            files_mapped: self.files_mapped.load(Ordering::Relaxed),
        }
    }

    pub fn reset_peak(&self) {
        let live = self.bytes_live.load(Ordering::Relaxed);
        self.bytes_live_peak.store(live, Ordering::Relaxed);
    }

    pub(crate) fn record_read(&self, offset: u64, len: u64) {
        self.bytes_materialized_total
            .fetch_add(pages_spanned(offset, len) * PAGE_SIZE, Ordering::Relaxed);
    }

    pub(crate) fn record_map(&self) {
        self.files_mapped.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn record_mask_read(&self, image_id: &str) {
        self.mask_reads.lock().unwrap().push(image_id.to_string());
    }

    pub(crate) fn record_feature_read(&self, image_id: &str) {
        let mut reads = self.feature_reads.lock().unwrap();
        if !reads.contains(image_id) {
            reads.insert(image_id.to_string());
        }
    }

    /// Image ids whose masks were read, in read order.
    pub fn mask_reads(&self) -> Vec<String> {
        self.mask_reads.lock().unwrap().clone()
    }

    /// Image ids whose features were read at least once.
    pub fn feature_reads(&self) -> BTreeSet<String> {
        self.feature_reads.lock().unwrap().clone()
    }

    pub fn clear_logs(&self) {
        self.mask_reads.lock().unwrap().clear();
        self.feature_reads.lock().unwrap().clear();
    }
}

/// Holds `bytes` of the live counter until dropped.
#[derive(Debug)]
pub struct LiveBytes {
    accounting: Arc<AccessAccounting>,
    bytes: u64,
}

impl LiveBytes {
    pub(crate) fn acquire(accounting: &Arc<AccessAccounting>, bytes: u64) -> Self {
        let live = accounting.bytes_live.fetch_add(bytes, Ordering::Relaxed) + bytes;
        accounting
            .bytes_live_peak
            .fetch_max(live, Ordering::Relaxed);
        Self {
            accounting: Arc::clone(accounting),
            bytes,
        }
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }
}

impl Drop for LiveBytes {
    fn drop(&mut self) {
        self.accounting
            .bytes_live
            .fetch_sub(self.bytes, Ordering::Relaxed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn page_spans() {
        assert_eq!(pages_spanned(0, 0), 0);
        assert_eq!(pages_spanned(64, 8), 1);
        assert_eq!(pages_spanned(4090, 8), 2);
        assert_eq!(pages_spanned(4096, 4096), 1);
    }

    #[test]
    fn live_bytes_track_peak() {
        let acct = Arc::new(AccessAccounting::default());
        let a = LiveBytes::acquire(&acct, 100);
        let b = LiveBytes::acquire(&acct, 50);
        drop(a);
        let _c = LiveBytes::acquire(&acct, 20);
        let s = acct.stats();
        assert_eq!(s.bytes_live, 70);
        assert_eq!(s.bytes_live_peak, 150);
        drop(b);
        acct.reset_peak();
        assert_eq!(acct.stats().bytes_live_peak, 20);
    }
}
