//! Per-miner transaction pool.
//!
//! The pool is a composite of two indexes over one slab of slots:
//!
//! * a fixed-size chained hashtable keyed by `mix(tx_id, salt)`, used for
//!   direct access (insert/remove by id) and for random access, and
//! * an intrusive red-black tree ordered by `(fee, tx_id)`, used for sorted
//!   access (lowest-fee eviction and highest-fee block building).
//!
//! Every slot is linked into both indexes at once, so the two always hold
//! the same set of transactions. Slot `0` is the shared nil sentinel for
//! hash chains and the tree.

mod tree;

use std::mem::size_of;

use rand::Rng;

use crate::model::{Fee, RandomAccessVariant, Transaction, TxId};

pub(crate) const NIL: u32 = 0;
const RED_BIT: u32 = 1 << 31;

/// Salt used by every miner under [`RandomAccessVariant::EqualKey`].
pub const EQUAL_KEY_SALT: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MempoolError {
    #[error("transaction {0} is already in the mempool")]
    Duplicate(TxId),
    #[error("mempool is full ({0} transactions)")]
    Full(usize),
    #[error("requested {requested} transactions but the mempool holds {available}")]
    NotEnough { requested: usize, available: usize },
    #[error("mempool is empty")]
    Empty,
    #[error("every transaction in the mempool is excluded")]
    Exhausted,
}

#[derive(Debug, Clone, Copy, Default)]
struct Slot {
    tx_id: TxId,
    fee: Fee,
    /// Next slot in the hash chain, or the next free slot.
    next: u32,
    left: u32,
    right: u32,
    /// Tree parent in the low 31 bits, red flag in the top bit.
    parent_color: u32,
}

impl Slot {
    fn key(&self) -> (Fee, TxId) {
        (self.fee, self.tx_id)
    }
}

/// Murmur3 64-bit finalizer.
#[inline]
fn mix64(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^= x >> 33;
    x
}

#[derive(Debug, Clone)]
pub struct Mempool {
    capacity: usize,
    salt: u64,
    mask: usize,
    buckets: Vec<u32>,
    slots: Vec<Slot>,
    free_head: u32,
    root: u32,
    /// Cached tree minimum, so a full pool rejects low offers in O(1).
    min: u32,
    len: usize,
}

impl Mempool {
    /// Creates an empty pool. The hashtable gets the next power of two
    /// at or above `2 * capacity` buckets, so the load factor stays ≤ 0.5.
    pub fn new(capacity: usize, salt: u64) -> Self {
        assert!(capacity < (RED_BIT - 1) as usize, "capacity too large");
        let bucket_count = (2 * capacity).max(1).next_power_of_two();
        let mut slots = Vec::with_capacity(capacity + 1);
        slots.push(Slot::default());
        Self {
            capacity,
            salt,
            mask: bucket_count - 1,
            buckets: vec![NIL; bucket_count],
            slots,
            free_head: NIL,
            root: NIL,
            min: NIL,
            len: 0,
        }
    }

    /// Pool for a miner under `variant`: `EqualKey` discards the miner salt.
    pub fn for_variant(capacity: usize, variant: RandomAccessVariant, miner_salt: u64) -> Self {
        let salt = match variant {
            RandomAccessVariant::EqualKey => EQUAL_KEY_SALT,
            RandomAccessVariant::Probe | RandomAccessVariant::Begin => miner_salt,
        };
        Self::new(capacity, salt)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len >= self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn salt(&self) -> u64 {
        self.salt
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    /// Bucket that `tx_id` hashes to in this pool.
    #[inline]
    pub fn bucket_of(&self, tx_id: TxId) -> usize {
        (mix64(tx_id ^ self.salt) as usize) & self.mask
    }

    fn find(&self, tx_id: TxId) -> u32 {
        let mut cur = self.buckets[self.bucket_of(tx_id)];
        while cur != NIL {
            let slot = &self.slots[cur as usize];
            if slot.tx_id == tx_id {
                return cur;
            }
            cur = slot.next;
        }
        NIL
    }

    pub fn contains(&self, tx_id: TxId) -> bool {
        self.find(tx_id) != NIL
    }

    pub fn get(&self, tx_id: TxId) -> Option<Transaction> {
        match self.find(tx_id) {
            NIL => None,
            idx => Some(self.tx_at(idx)),
        }
    }

    #[inline]
    fn tx_at(&self, idx: u32) -> Transaction {
        let slot = &self.slots[idx as usize];
        Transaction::new(slot.tx_id, slot.fee)
    }

    fn alloc(&mut self, tx: Transaction) -> u32 {
        let slot = Slot {
            tx_id: tx.tx_id,
            fee: tx.fee,
            ..Slot::default()
        };
        if self.free_head != NIL {
            let idx = self.free_head;
            self.free_head = self.slots[idx as usize].next;
            self.slots[idx as usize] = slot;
            idx
        } else {
            self.slots.push(slot);
            (self.slots.len() - 1) as u32
        }
    }

    fn release(&mut self, idx: u32) {
        self.slots[idx as usize] = Slot {
            next: self.free_head,
            ..Slot::default()
        };
        self.free_head = idx;
    }

    /// Inserts a transaction. The caller makes room first; inserting into a
    /// full pool or reusing an id is an error.
    pub fn insert(&mut self, tx: Transaction) -> Result<(), MempoolError> {
        if self.len >= self.capacity {
            return Err(MempoolError::Full(self.capacity));
        }
        let bucket = self.bucket_of(tx.tx_id);
        let mut cur = self.buckets[bucket];
        while cur != NIL {
            if self.slots[cur as usize].tx_id == tx.tx_id {
                return Err(MempoolError::Duplicate(tx.tx_id));
            }
            cur = self.slots[cur as usize].next;
        }
        let idx = self.alloc(tx);
        self.slots[idx as usize].next = self.buckets[bucket];
        self.buckets[bucket] = idx;
        self.tree_insert(idx);
        self.len += 1;
        Ok(())
    }

    /// Inserts `tx` keeping only the `capacity` best transactions by
    /// `(fee, tx_id)`. When the pool is full, either the current lowest
    /// entry is evicted or, if `tx` itself ranks below it, `tx` is dropped.
    /// Returns whether `tx` was stored.
    pub fn offer(&mut self, tx: Transaction) -> Result<bool, MempoolError> {
        if self.capacity == 0 {
            return Ok(false);
        }
        if self.len >= self.capacity {
            let lowest = self.min;
            if (tx.fee, tx.tx_id) < self.slots[lowest as usize].key() {
                return Ok(false);
            }
            if self.contains(tx.tx_id) {
                return Err(MempoolError::Duplicate(tx.tx_id));
            }
            self.remove_slot(lowest);
        }
        self.insert(tx)?;
        Ok(true)
    }

    /// Removes a transaction by id. Absent ids are a normal occurrence
    /// (already mined, evicted, or never seen) and return `false`.
    pub fn remove(&mut self, tx_id: TxId) -> bool {
        let bucket = self.bucket_of(tx_id);
        let mut prev = NIL;
        let mut cur = self.buckets[bucket];
        while cur != NIL {
            let next = self.slots[cur as usize].next;
            if self.slots[cur as usize].tx_id == tx_id {
                if prev == NIL {
                    self.buckets[bucket] = next;
                } else {
                    self.slots[prev as usize].next = next;
                }
                self.tree_delete(cur);
                self.release(cur);
                self.len -= 1;
                return true;
            }
            prev = cur;
            cur = next;
        }
        false
    }

    fn remove_slot(&mut self, idx: u32) {
        let tx_id = self.slots[idx as usize].tx_id;
        let removed = self.remove(tx_id);
        debug_assert!(removed);
    }

    /// Removes the `k` lowest transactions by `(fee, tx_id)`.
    pub fn evict_lowest(&mut self, k: usize) -> Result<(), MempoolError> {
        if k > self.len {
            return Err(MempoolError::NotEnough {
                requested: k,
                available: self.len,
            });
        }
        for _ in 0..k {
            self.remove_slot(self.min);
        }
        Ok(())
    }

    /// The `k` highest transactions by `(fee, tx_id)`, highest first. The
    /// pool is left unchanged.
    pub fn take_top_fee(&self, k: usize) -> Result<Vec<Transaction>, MempoolError> {
        if k > self.len {
            return Err(MempoolError::NotEnough {
                requested: k,
                available: self.len,
            });
        }
        Ok(self.iter_descending().take(k).collect())
    }

    pub fn lowest(&self) -> Option<Transaction> {
        (self.root != NIL).then(|| self.tx_at(self.min))
    }

    pub fn highest(&self) -> Option<Transaction> {
        (self.root != NIL).then(|| self.tx_at(self.tree_maximum(self.root)))
    }

    /// Transactions in ascending `(fee, tx_id)` order.
    pub fn iter_ascending(&self) -> impl Iterator<Item = Transaction> + '_ {
        let mut cur = if self.root == NIL { NIL } else { self.tree_minimum(self.root) };
        std::iter::from_fn(move || {
            if cur == NIL {
                return None;
            }
            let tx = self.tx_at(cur);
            cur = self.tree_successor(cur);
            Some(tx)
        })
    }

    /// Transactions in descending `(fee, tx_id)` order.
    pub fn iter_descending(&self) -> impl Iterator<Item = Transaction> + '_ {
        let mut cur = if self.root == NIL { NIL } else { self.tree_maximum(self.root) };
        std::iter::from_fn(move || {
            if cur == NIL {
                return None;
            }
            let tx = self.tx_at(cur);
            cur = self.tree_predecessor(cur);
            Some(tx)
        })
    }

    /// Picks one transaction at random through the hashtable.
    pub fn select_random<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        variant: RandomAccessVariant,
    ) -> Result<Transaction, MempoolError> {
        self.select_random_excluding(rng, variant, |_| false)
    }

    /// Like [`select_random`](Self::select_random), but transactions for
    /// which `excluded` returns true are treated as absent. Block building
    /// uses this to avoid picking the same transaction twice.
    ///
    /// `Probe` starts at a uniformly random bucket and checks buckets above
    /// and below alternately (above first), wrapping around the table ends.
    /// `Begin` and `EqualKey` scan upward from bucket zero. Within the found
    /// bucket one eligible chain entry is chosen uniformly.
    pub fn select_random_excluding<R, F>(
        &self,
        rng: &mut R,
        variant: RandomAccessVariant,
        excluded: F,
    ) -> Result<Transaction, MempoolError>
    where
        R: Rng + ?Sized,
        F: Fn(TxId) -> bool,
    {
        if self.len == 0 {
            return Err(MempoolError::Empty);
        }
        let m = self.buckets.len();
        match variant {
            RandomAccessVariant::Probe => {
                let start = rng.random_range(0..m);
                if let Some(tx) = self.pick_in_bucket(start, rng, &excluded) {
                    return Ok(tx);
                }
                for d in 1..=m / 2 {
                    let above = (start + d) & self.mask;
                    if let Some(tx) = self.pick_in_bucket(above, rng, &excluded) {
                        return Ok(tx);
                    }
                    let below = (start + m - d) & self.mask;
                    if let Some(tx) = self.pick_in_bucket(below, rng, &excluded) {
                        return Ok(tx);
                    }
                }
            }
            RandomAccessVariant::Begin | RandomAccessVariant::EqualKey => {
                for bucket in 0..m {
                    if let Some(tx) = self.pick_in_bucket(bucket, rng, &excluded) {
                        return Ok(tx);
                    }
                }
            }
        }
        Err(MempoolError::Exhausted)
    }

    #[inline]
    fn pick_in_bucket<R, F>(&self, bucket: usize, rng: &mut R, excluded: &F) -> Option<Transaction>
    where
        R: Rng + ?Sized,
        F: Fn(TxId) -> bool,
    {
        let head = self.buckets[bucket];
        if head == NIL {
            return None;
        }
        let chain = || {
            let mut cur = head;
            std::iter::from_fn(move || {
                if cur == NIL {
                    return None;
                }
                let slot = &self.slots[cur as usize];
                cur = slot.next;
                Some(slot)
            })
            .filter(|slot| !excluded(slot.tx_id))
        };
        let eligible = chain().count();
        let pick = match eligible {
            0 => return None,
            1 => 0,
            n => rng.random_range(0..n),
        };
        chain()
            .nth(pick)
            .map(|slot| Transaction::new(slot.tx_id, slot.fee))
    }

    /// Number of transactions in each bucket, indexed by bucket.
    pub fn bucket_loads(&self) -> Vec<usize> {
        self.buckets
            .iter()
            .map(|&head| {
                let mut n = 0;
                let mut cur = head;
                while cur != NIL {
                    n += 1;
                    cur = self.slots[cur as usize].next;
                }
                n
            })
            .collect()
    }

    /// Bytes reserved on the heap by this pool.
    pub fn heap_bytes(&self) -> usize {
        self.buckets.capacity() * size_of::<u32>() + self.slots.capacity() * size_of::<Slot>()
    }

    /// Checks the mirror invariant (hashtable and tree hold the same
    /// transactions), hash placement, tree ordering and red-black shape.
    pub fn audit(&self) -> Result<(), String> {
        let mut in_table = 0usize;
        for (bucket, &head) in self.buckets.iter().enumerate() {
            let mut cur = head;
            while cur != NIL {
                let slot = &self.slots[cur as usize];
                if self.bucket_of(slot.tx_id) != bucket {
                    return Err(format!("tx {} chained in wrong bucket {bucket}", slot.tx_id));
                }
                in_table += 1;
                if in_table > self.len {
                    return Err("hash chains hold more entries than len".into());
                }
                cur = slot.next;
            }
        }
        if in_table != self.len {
            return Err(format!("hashtable holds {in_table}, len is {}", self.len));
        }
        if self.len > self.capacity {
            return Err(format!("len {} exceeds capacity {}", self.len, self.capacity));
        }
        let in_tree = self.tree_audit()?;
        if in_tree != self.len {
            return Err(format!("tree holds {in_tree}, len is {}", self.len));
        }
        let first = if self.root == NIL { NIL } else { self.tree_minimum(self.root) };
        if first != self.min {
            return Err(format!("cached minimum is slot {}, tree minimum is slot {first}", self.min));
        }
        let mut previous: Option<(Fee, TxId)> = None;
        let mut cur = first;
        while cur != NIL {
            let key = self.slots[cur as usize].key();
            if previous.is_some_and(|p| p >= key) {
                return Err(format!("tree order broken at {key:?}"));
            }
            if self.find(key.1) != cur {
                return Err(format!("tx {} in tree but not in hashtable", key.1));
            }
            previous = Some(key);
            cur = self.tree_successor(cur);
        }
        Ok(())
    }
}
