//! Indexed binary heap with a position map: O(1) peek, O(log n) keyed rewrite.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    Min,
    Max,
}

/// Heap over dense indices `0..n`. Equal keys are ordered by lower index.
#[derive(Clone, Debug)]
pub struct IndexedHeap<K> {
    orientation: Orientation,
    keys: Vec<K>,
    heap: Vec<usize>,
    pos: Vec<usize>,
}

impl<K: PartialOrd + Copy> IndexedHeap<K> {
    /// Builds a heap where index `i` carries `keys[i]`.
    pub fn heapify(keys: Vec<K>, orientation: Orientation) -> Self {
        let n = keys.len();
        let mut h = IndexedHeap {
            orientation,
            keys,
            heap: (0..n).collect(),
            pos: (0..n).collect(),
        };
        for i in (0..n / 2).rev() {
            h.sift_down(i);
        }
        h.debug_check();
        h
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    /// Extreme `(key, index)`.
    #[inline]
    pub fn peek(&self) -> Option<(K, usize)> {
        self.heap.first().map(|&i| (self.keys[i], i))
    }

    #[inline]
    pub fn key(&self, index: usize) -> K {
        self.keys[index]
    }

    /// Replaces the key of `index` and restores heap order.
    pub fn rewrite(&mut self, key: K, index: usize) -> Result<()> {
        if index >= self.keys.len() {
            return Err(Error::Domain(format!("heap has no index {index}")));
        }
        self.set(index, key);
        Ok(())
    }

    /// Like [`rewrite`](Self::rewrite) for indices known to exist.
    #[inline]
    pub(crate) fn set(&mut self, index: usize, key: K) {
        self.keys[index] = key;
        let slot = self.pos[index];
        if slot > 0 && self.before(index, self.heap[(slot - 1) / 2]) {
            self.sift_up(slot);
        } else {
            self.sift_down(slot);
        }
        self.debug_check();
    }

    /// Whether index `a` belongs above index `b`.
    #[inline]
    fn before(&self, a: usize, b: usize) -> bool {
        let (ka, kb) = (&self.keys[a], &self.keys[b]);
        let strictly = match self.orientation {
            Orientation::Min => ka < kb,
            Orientation::Max => ka > kb,
        };
        strictly || (ka == kb && a < b)
    }

    fn swap_slots(&mut self, i: usize, j: usize) {
        self.heap.swap(i, j);
        self.pos[self.heap[i]] = i;
        self.pos[self.heap[j]] = j;
    }

    fn sift_up(&mut self, mut slot: usize) {
        while slot > 0 {
            let parent = (slot - 1) / 2;
            if self.before(self.heap[slot], self.heap[parent]) {
                self.swap_slots(slot, parent);
                slot = parent;
            } else {
                break;
            }
        }
    }

    fn sift_down(&mut self, mut slot: usize) {
        let n = self.heap.len();
        loop {
            let (l, r) = (2 * slot + 1, 2 * slot + 2);
            let mut best = slot;
            if l < n && self.before(self.heap[l], self.heap[best]) {
                best = l;
            }
            if r < n && self.before(self.heap[r], self.heap[best]) {
                best = r;
            }
            if best == slot {
                break;
            }
            self.swap_slots(slot, best);
            slot = best;
        }
    }

    #[inline]
    fn debug_check(&self) {
        #[cfg(test)]
        self.check_consistency();
    }

    /// Panics if the position map or heap order is broken.
    pub fn check_consistency(&self) {
        for (slot, &i) in self.heap.iter().enumerate() {
            assert_eq!(self.pos[i], slot, "position map out of sync at index {i}");
            if slot > 0 {
                let parent = self.heap[(slot - 1) / 2];
                assert!(!self.before(i, parent), "heap order broken at slot {slot}");
            }
        }
    }
}
