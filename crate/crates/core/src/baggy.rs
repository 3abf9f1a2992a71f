//! Segments with baggy bounds.
//!
//! Segments live in one growable byte store managed by a binary buddy
//! allocator, so every segment occupies a power-of-two slot aligned to its
//! size. Handles are 64-bit words holding an address and the slot's log2
//! size. Only handle arithmetic is checked: a handle may wander up to half
//! a slot outside its slot (it is then *marked* and unusable until it comes
//! back), and straying farther traps. Loads and stores check only the mark
//! and the extent of the whole store. There is no temporal safety and no
//! handle integrity: stored handles are plain bytes.

use std::collections::{BTreeMap, BTreeSet};

use crate::bytecode::ValueType;
use crate::interp::{SegmentBackend, Value};
use crate::segmem::Handle;
use crate::trap::Trap;

pub const MIN_ORDER: u32 = 4;
const ADDR_MASK: u64 = (1 << 48) - 1;
const MARK: u64 = 1 << 63;

/// Packed handle: address in bits 0–47, log2 slot size in bits 48–53,
/// out-of-bounds marker in bit 63.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BaggyHandle(pub u64);

impl BaggyHandle {
    pub fn new(addr: u64, order: u32, marked: bool) -> BaggyHandle {
        BaggyHandle((addr & ADDR_MASK) | ((order as u64 & 0x3f) << 48) | if marked { MARK } else { 0 })
    }

    pub fn addr(self) -> u64 {
        self.0 & ADDR_MASK
    }

    pub fn order(self) -> u32 {
        ((self.0 >> 48) & 0x3f) as u32
    }

    pub fn slot_size(self) -> u64 {
        1 << self.order()
    }

    pub fn marked(self) -> bool {
        self.0 & MARK != 0
    }

    /// Base of the slot the handle belongs to. A marked handle lies within
    /// half a slot of its own slot, which pins the slot down uniquely.
    pub fn slot_base(self) -> u64 {
        let size = self.slot_size();
        let addr = self.addr();
        let r = addr % size;
        if !self.marked() {
            addr - r
        } else if r >= size / 2 {
            addr - r + size
        } else {
            addr - r - size
        }
    }

    /// Moves the address by `delta`, re-marking as needed.
    pub fn add(self, delta: i64) -> Result<BaggyHandle, Trap> {
        let size = self.slot_size() as i64;
        let base = self.slot_base() as i64;
        let to = self.addr() as i64 + delta;
        if to < 0 {
            return Err(Trap::Stray);
        }
        let marked = if (base..base + size).contains(&to) {
            false
        } else if (base - size / 2..base + size + size / 2).contains(&to) {
            true
        } else {
            return Err(Trap::Stray);
        };
        Ok(BaggyHandle::new(to as u64, self.order(), marked))
    }

    /// The uniform handle representation used by the interpreter.
    pub fn to_view(self) -> Handle {
        let base = self.slot_base();
        Handle {
            base: base as u32,
            offset: (self.addr() as i64 - base as i64) as i32,
            bound: self.slot_size() as u32,
            valid: !self.marked(),
            id: 0,
        }
    }

    /// Inverse of [`BaggyHandle::to_view`]. Views that no baggy handle
    /// produces come back marked, so they cannot be used.
    pub fn from_view(h: Handle) -> BaggyHandle {
        let bound_ok = h.bound.is_power_of_two() && h.bound >= 1 << MIN_ORDER;
        let order = if bound_ok { h.bound.trailing_zeros() } else { MIN_ORDER };
        let addr = (h.base as i64 + h.offset as i64).max(0) as u64;
        BaggyHandle::new(addr, order, !h.valid || !bound_ok)
    }
}

#[derive(Debug, Clone)]
pub struct BaggyMemory {
    store: Vec<u8>,
    cap: u64,
    /// Free slot bases per order.
    free: Vec<BTreeSet<u64>>,
    /// Allocated slot base ↦ order.
    allocated: BTreeMap<u64, u32>,
}

fn order_for(n: u64) -> u32 {
    n.max(1 << MIN_ORDER).next_power_of_two().trailing_zeros()
}

impl BaggyMemory {
    /// A store of `initial` bytes (rounded up to a power of two, at least one
    /// minimum slot) that may double up to `cap` bytes.
    pub fn new(initial: u64, cap: u64) -> BaggyMemory {
        let len = initial.max(1 << MIN_ORDER).next_power_of_two();
        let mut m = BaggyMemory {
            store: vec![0; len as usize],
            cap: cap.max(len),
            free: vec![BTreeSet::new(); 49],
            allocated: BTreeMap::new(),
        };
        m.free[len.trailing_zeros() as usize].insert(0);
        m
    }

    pub fn store_len(&self) -> u64 {
        self.store.len() as u64
    }

    pub fn free_lists(&self) -> &[BTreeSet<u64>] {
        &self.free
    }

    pub fn allocated(&self) -> &BTreeMap<u64, u32> {
        &self.allocated
    }

    fn grow(&mut self) -> bool {
        let len = self.store_len();
        if len * 2 > self.cap {
            return false;
        }
        self.store.resize(len as usize * 2, 0);
        // The new upper half is the buddy of the whole old store.
        let order = len.trailing_zeros() as usize;
        if self.free[order].remove(&0) {
            self.free[order + 1].insert(0);
        } else {
            self.free[order].insert(len);
        }
        true
    }

    pub fn alloc(&mut self, n: u64) -> Result<BaggyHandle, Trap> {
        let want = order_for(n);
        loop {
            let found = (want as usize..self.free.len()).find(|&k| !self.free[k].is_empty());
            if let Some(mut k) = found {
                let base = self.free[k].pop_first().expect("nonempty");
                while k > want as usize {
                    k -= 1;
                    self.free[k].insert(base + (1 << k));
                }
                self.allocated.insert(base, want);
                self.store[base as usize..(base + (1 << want)) as usize].fill(0);
                return Ok(BaggyHandle::new(base, want, false));
            }
            if !self.grow() {
                return Err(Trap::OutOfMemory);
            }
        }
    }

    pub fn free(&mut self, h: BaggyHandle) -> Result<(), Trap> {
        if h.marked() {
            return Err(Trap::Marked);
        }
        let base = h.addr();
        if self.allocated.get(&base) != Some(&h.order()) {
            return Err(Trap::BadFree);
        }
        self.allocated.remove(&base);
        let top = self.store_len().trailing_zeros();
        let (mut base, mut k) = (base, h.order());
        while k < top {
            let buddy = base ^ (1 << k);
            if !self.free[k as usize].remove(&buddy) {
                break;
            }
            base = base.min(buddy);
            k += 1;
        }
        self.free[k as usize].insert(base);
        Ok(())
    }

    fn range(&self, h: BaggyHandle, size: u64) -> Result<std::ops::Range<usize>, Trap> {
        if h.marked() {
            return Err(Trap::Marked);
        }
        let a = h.addr();
        if a + size > self.store_len() {
            return Err(Trap::BackingBounds);
        }
        Ok(a as usize..(a + size) as usize)
    }

    pub fn read(&self, h: BaggyHandle, size: u64) -> Result<&[u8], Trap> {
        let r = self.range(h, size)?;
        Ok(&self.store[r])
    }

    pub fn write(&mut self, h: BaggyHandle, bytes: &[u8]) -> Result<(), Trap> {
        let r = self.range(h, bytes.len() as u64)?;
        self.store[r].copy_from_slice(bytes);
        Ok(())
    }
}

/// Width of a handle stored in baggy memory.
pub const STORED_HANDLE_SIZE: u64 = 8;

impl SegmentBackend for BaggyMemory {
    fn new_segment(&mut self, size: u32) -> Result<Handle, Trap> {
        self.alloc(size as u64).map(BaggyHandle::to_view)
    }

    fn free_segment(&mut self, h: Handle) -> Result<(), Trap> {
        self.free(BaggyHandle::from_view(h))
    }

    fn load(&mut self, h: Handle, ty: ValueType) -> Result<Value, Trap> {
        let b = BaggyHandle::from_view(h);
        if ty == ValueType::Handle {
            let raw = self.read(b, STORED_HANDLE_SIZE)?;
            let word = u64::from_le_bytes(raw.try_into().expect("8 bytes"));
            return Ok(Value::Handle(BaggyHandle(word).to_view()));
        }
        Ok(Value::from_le_bytes(ty, self.read(b, ty.size() as u64)?))
    }

    fn store(&mut self, h: Handle, v: Value) -> Result<(), Trap> {
        let b = BaggyHandle::from_view(h);
        let bytes = match v {
            Value::Handle(x) => BaggyHandle::from_view(x).0.to_le_bytes().to_vec(),
            _ => v.to_le_bytes(),
        };
        self.write(b, &bytes)
    }

    fn handle_add(&mut self, h: Handle, delta: i32) -> Result<Handle, Trap> {
        BaggyHandle::from_view(h)
            .add(delta as i64)
            .map(BaggyHandle::to_view)
    }

    /// Slot metadata cannot shrink, so slicing only moves the address.
    fn slice(&mut self, h: Handle, o1: i32, _o2: i32) -> Result<Handle, Trap> {
        self.handle_add(h, o1)
    }

    fn dump(&self) -> Vec<u8> {
        self.store.clone()
    }
}
