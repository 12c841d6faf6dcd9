//! Element-count bookkeeping for the transient volumes a pipeline holds.

use std::collections::BTreeMap;

/// Tracks live and peak volume element counts by name.
///
/// Pipelines call [`alloc`](Self::alloc) when a volume is materialized and
/// [`free`](Self::free) when it is dropped, so the peak is a property of the
/// dataflow rather than of the allocator.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VolumeAccounting {
    live: BTreeMap<String, usize>,
    sizes: BTreeMap<String, usize>,
    live_total: usize,
    peak: usize,
}

impl VolumeAccounting {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a live volume of `elems` elements under `name`.
    pub fn alloc(&mut self, name: &str, elems: usize) {
        if let Some(old) = self.live.insert(name.to_string(), elems) {
            self.live_total -= old;
        }
        self.sizes.insert(name.to_string(), elems);
        self.live_total += elems;
        self.peak = self.peak.max(self.live_total);
    }

    /// Releases `name`; freeing an unknown name is a no-op.
    pub fn free(&mut self, name: &str) {
        if let Some(n) = self.live.remove(name) {
            self.live_total -= n;
        }
    }

    pub fn live(&self) -> usize {
        self.live_total
    }

    pub fn peak(&self) -> usize {
        self.peak
    }

    /// Element count of the last volume registered under `name`.
    pub fn size_of(&self, name: &str) -> Option<usize> {
        self.sizes.get(name).copied()
    }

    /// Every volume ever registered with its element count, by name.
    pub fn sizes(&self) -> &BTreeMap<String, usize> {
        &self.sizes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_tracks_overlap() {
        let mut a = VolumeAccounting::new();
        a.alloc("x", 10);
        a.alloc("y", 5);
        a.free("x");
        a.alloc("z", 7);
        assert_eq!(a.live(), 12);
        assert_eq!(a.peak(), 15);
        a.free("missing");
        assert_eq!(a.size_of("x"), Some(10));
        a.alloc("y", 1);
        assert_eq!(a.live(), 8);
    }
}
