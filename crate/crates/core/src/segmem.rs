//! Tagged segment memory with a never-reusing id allocator.
//!
//! Every byte carries a tag saying whether it was written as part of a
//! handle. A handle read back from memory is valid only if all sixteen of
//! its bytes still carry the handle tag, so overwriting any byte of a stored
//! handle with data invalidates it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bytecode::ValueType;
use crate::interp::{SegmentBackend, Value};
use crate::trap::Trap;

/// Size in bytes of a handle in segment memory.
pub const HANDLE_SIZE: u32 = 16;
/// Segment bases are aligned to this many bytes.
pub const SEGMENT_ALIGN: u32 = 16;
const MAX_ID: u32 = (1 << 31) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Handle {
    pub base: u32,
    pub offset: i32,
    pub bound: u32,
    pub valid: bool,
    pub id: u32,
}

impl Handle {
    /// The invalid all-zero handle that handle locals start as.
    pub const NULL: Handle = Handle {
        base: 0,
        offset: 0,
        bound: 0,
        valid: false,
        id: 0,
    };

    pub fn new(base: u32, offset: i32, bound: u32, valid: bool, id: u32) -> Handle {
        Handle {
            base,
            offset,
            bound,
            valid,
            id,
        }
    }

    /// The address the handle points at, if it is non-negative.
    pub fn address(&self) -> Option<u32> {
        u32::try_from(self.base as i64 + self.offset as i64).ok()
    }

    pub fn add(self, delta: i32) -> Handle {
        Handle {
            offset: self.offset.wrapping_add(delta),
            ..self
        }
    }

    /// Narrows the window to `[o1, bound - o2)`. Invalid handles slice to
    /// invalid handles without trapping since they can never be used.
    pub fn slice(self, o1: i32, o2: i32) -> Result<Handle, Trap> {
        if !self.valid {
            return Ok(Handle {
                base: self.base.wrapping_add(o1 as u32),
                bound: self.bound.wrapping_sub(o2 as u32),
                ..self
            });
        }
        let n = self.bound as i64;
        let (o1, o2) = (o1 as i64, o2 as i64);
        if !(0 <= o1 && o1 < n && o1 <= o2 && o2 <= n) {
            return Err(Trap::Slice);
        }
        Ok(Handle {
            base: self.base + o1 as u32,
            bound: self.bound - o2 as u32,
            ..self
        })
    }
}

impl std::fmt::Display for Handle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "<{}, {}, {}, {}, {}>",
            self.base, self.offset, self.bound, self.valid, self.id
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Tag {
    #[default]
    Data,
    Handle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TaggedByte {
    pub value: u8,
    pub tag: Tag,
}

impl TaggedByte {
    pub fn data(value: u8) -> TaggedByte {
        TaggedByte {
            value,
            tag: Tag::Data,
        }
    }
}

/// Little-endian field layout: base, offset, bound, then id with the valid
/// flag in the top bit.
pub fn pack_handle(h: Handle) -> [u8; 16] {
    let mut out = [0u8; 16];
    out[0..4].copy_from_slice(&h.base.to_le_bytes());
    out[4..8].copy_from_slice(&h.offset.to_le_bytes());
    out[8..12].copy_from_slice(&h.bound.to_le_bytes());
    let last = (h.id & MAX_ID) | ((h.valid as u32) << 31);
    out[12..16].copy_from_slice(&last.to_le_bytes());
    out
}

/// Decodes sixteen tagged bytes; the result is valid only if every tag is
/// [`Tag::Handle`] and the encoded valid bit is set.
pub fn unpack_handle(bytes: &[TaggedByte]) -> Handle {
    assert_eq!(bytes.len(), HANDLE_SIZE as usize, "handle needs 16 bytes");
    let word = |i: usize| {
        u32::from_le_bytes([
            bytes[i].value,
            bytes[i + 1].value,
            bytes[i + 2].value,
            bytes[i + 3].value,
        ])
    };
    let tags_ok = bytes.iter().all(|b| b.tag == Tag::Handle);
    let last = word(12);
    Handle {
        base: word(0),
        offset: word(4) as i32,
        bound: word(8),
        valid: tags_ok && last >> 31 == 1,
        id: last & MAX_ID,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocatorState {
    /// Disjoint `(start, len)` ranges sorted by start, never adjacent.
    free: Vec<(u32, u32)>,
    allocated: BTreeMap<u32, (u32, u32)>,
    next_id: u32,
}

impl AllocatorState {
    pub fn new(size: u32) -> AllocatorState {
        AllocatorState {
            free: if size > 0 { vec![(0, size)] } else { vec![] },
            allocated: BTreeMap::new(),
            next_id: 0,
        }
    }

    pub fn free_ranges(&self) -> &[(u32, u32)] {
        &self.free
    }

    /// Live segments as id ↦ (base, size).
    pub fn allocated(&self) -> &BTreeMap<u32, (u32, u32)> {
        &self.allocated
    }

    pub fn next_id(&self) -> u32 {
        self.next_id
    }

    /// First fit at the lowest 16-aligned address.
    fn alloc(&mut self, n: u32) -> Result<(u32, u32), Trap> {
        if self.next_id > MAX_ID {
            return Err(Trap::OutOfMemory);
        }
        let fit = self.free.iter().enumerate().find_map(|(k, &(s, l))| {
            let a = s.checked_next_multiple_of(SEGMENT_ALIGN)?;
            (a as u64 + n as u64 <= s as u64 + l as u64).then_some((k, a))
        });
        let base = match (fit, n) {
            (Some((k, a)), _) => {
                if n > 0 {
                    let (s, l) = self.free.remove(k);
                    let end = s + l;
                    let mut pieces = vec![];
                    if a > s {
                        pieces.push((s, a - s));
                    }
                    if a + n < end {
                        pieces.push((a + n, end - a - n));
                    }
                    for (j, p) in pieces.into_iter().enumerate() {
                        self.free.insert(k + j, p);
                    }
                }
                a
            }
            (None, 0) => 0,
            (None, _) => return Err(Trap::OutOfMemory),
        };
        let id = self.next_id;
        self.next_id += 1;
        self.allocated.insert(id, (base, n));
        Ok((base, id))
    }

    fn release(&mut self, id: u32) -> (u32, u32) {
        let (base, n) = self.allocated.remove(&id).expect("checked by caller");
        if n == 0 {
            return (base, n);
        }
        let k = self.free.partition_point(|&(s, _)| s < base);
        self.free.insert(k, (base, n));
        if k + 1 < self.free.len() && base + n == self.free[k + 1].0 {
            self.free[k].1 += self.free[k + 1].1;
            self.free.remove(k + 1);
        }
        if k > 0 && self.free[k - 1].0 + self.free[k - 1].1 == base {
            self.free[k - 1].1 += self.free[k].1;
            self.free.remove(k);
        }
        (base, n)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMemory {
    bytes: Vec<TaggedByte>,
    alloc: AllocatorState,
}

impl SegmentMemory {
    pub fn new(size: u32) -> SegmentMemory {
        SegmentMemory {
            bytes: vec![TaggedByte::default(); size as usize],
            alloc: AllocatorState::new(size),
        }
    }

    pub fn size(&self) -> u32 {
        self.bytes.len() as u32
    }

    pub fn allocator(&self) -> &AllocatorState {
        &self.alloc
    }

    pub fn bytes(&self) -> &[TaggedByte] {
        &self.bytes
    }

    pub fn alloc(&mut self, n: u32) -> Result<Handle, Trap> {
        let (base, id) = self.alloc.alloc(n)?;
        debug_assert!(self.bytes[base as usize..(base + n) as usize]
            .iter()
            .all(|b| *b == TaggedByte::default()));
        Ok(Handle::new(base, 0, n, true, id))
    }

    pub fn free(&mut self, h: Handle) -> Result<(), Trap> {
        if !h.valid {
            return Err(Trap::Integrity);
        }
        let Some(&(base, _)) = self.alloc.allocated.get(&h.id) else {
            return Err(Trap::Temporal);
        };
        if h.offset != 0 || h.base != base {
            return Err(Trap::Spatial);
        }
        let (base, n) = self.alloc.release(h.id);
        self.bytes[base as usize..(base + n) as usize].fill(TaggedByte::default());
        Ok(())
    }

    /// Validates an access of `size` bytes and returns its start address.
    fn check(&self, h: Handle, size: u32) -> Result<usize, Trap> {
        if !h.valid {
            return Err(Trap::Integrity);
        }
        let Some(&(seg_base, seg_len)) = self.alloc.allocated.get(&h.id) else {
            return Err(Trap::Temporal);
        };
        if h.offset < 0 || h.offset as u64 + size as u64 > h.bound as u64 {
            return Err(Trap::Spatial);
        }
        let a = h.base as u64 + h.offset as u64;
        // Valid handles cannot escape their segment; this guards the claim.
        if a < seg_base as u64 || a + size as u64 > seg_base as u64 + seg_len as u64 {
            return Err(Trap::Spatial);
        }
        Ok(a as usize)
    }

    pub fn read_bytes(&self, h: Handle, size: u32) -> Result<&[TaggedByte], Trap> {
        let a = self.check(h, size)?;
        Ok(&self.bytes[a..a + size as usize])
    }

    pub fn write_bytes(&mut self, h: Handle, payload: &[TaggedByte]) -> Result<(), Trap> {
        let a = self.check(h, payload.len() as u32)?;
        self.bytes[a..a + payload.len()].copy_from_slice(payload);
        Ok(())
    }
}

fn require_aligned(h: Handle) -> Result<(), Trap> {
    match h.address() {
        Some(a) if a % HANDLE_SIZE == 0 => Ok(()),
        _ => Err(Trap::Integrity),
    }
}

impl SegmentBackend for SegmentMemory {
    fn new_segment(&mut self, size: u32) -> Result<Handle, Trap> {
        self.alloc(size)
    }

    fn free_segment(&mut self, h: Handle) -> Result<(), Trap> {
        self.free(h)
    }

    fn load(&mut self, h: Handle, ty: ValueType) -> Result<Value, Trap> {
        let bytes = self.read_bytes(h, ty.size())?;
        if ty == ValueType::Handle {
            require_aligned(h)?;
            return Ok(Value::Handle(unpack_handle(bytes)));
        }
        let raw: Vec<u8> = bytes.iter().map(|b| b.value).collect();
        Ok(Value::from_le_bytes(ty, &raw))
    }

    fn store(&mut self, h: Handle, v: Value) -> Result<(), Trap> {
        let payload: Vec<TaggedByte> = match v {
            Value::Handle(x) => {
                self.check(h, HANDLE_SIZE)?;
                require_aligned(h)?;
                pack_handle(x)
                    .iter()
                    .map(|&value| TaggedByte {
                        value,
                        tag: Tag::Handle,
                    })
                    .collect()
            }
            _ => v.to_le_bytes().into_iter().map(TaggedByte::data).collect(),
        };
        self.write_bytes(h, &payload)
    }

    fn handle_add(&mut self, h: Handle, delta: i32) -> Result<Handle, Trap> {
        Ok(h.add(delta))
    }

    fn slice(&mut self, h: Handle, o1: i32, o2: i32) -> Result<Handle, Trap> {
        h.slice(o1, o2)
    }

    fn dump(&self) -> Vec<u8> {
        self.bytes.iter().map(|b| b.value).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    #[test]
    fn first_allocation_is_at_zero() {
        let mut m = SegmentMemory::new(64);
        assert_eq!(m.alloc(8).unwrap(), Handle::new(0, 0, 8, true, 0));
    }

    #[test]
    fn reuse_keeps_base_but_not_id() {
        let mut m = SegmentMemory::new(64);
        let a = m.alloc(8).unwrap();
        let b = m.alloc(8).unwrap();
        assert_eq!(b.base, 16);
        m.free(a).unwrap();
        let c = m.alloc(8).unwrap();
        assert_eq!((c.base, c.id), (0, 2));
    }

    #[test]
    fn free_restores_whole_memory() {
        let mut m = SegmentMemory::new(64);
        let a = m.alloc(8).unwrap();
        m.free(a).unwrap();
        assert_eq!(m.allocator().free_ranges(), &[(0, 64)]);
        assert!(m.allocator().allocated().is_empty());
        assert_eq!(m.free(a), Err(Trap::Temporal));
        assert_eq!(m.free(Handle { valid: false, ..a }), Err(Trap::Integrity));
    }

    #[test]
    fn access_checks() {
        let mut m = SegmentMemory::new(64);
        let h = m.alloc(8).unwrap();
        assert_eq!(m.read_bytes(h, 4).unwrap(), &[TaggedByte::default(); 4]);
        assert_eq!(m.read_bytes(h.add(5), 4), Err(Trap::Spatial));
        assert_eq!(m.read_bytes(h.add(4), 4).map(|b| b.len()), Ok(4));
        assert_eq!(m.read_bytes(h.add(-1), 1), Err(Trap::Spatial));
        let z = m.alloc(0).unwrap();
        assert_eq!(m.read_bytes(z, 1), Err(Trap::Spatial));
        m.free(h).unwrap();
        assert_eq!(m.read_bytes(h, 4), Err(Trap::Temporal));
    }

    #[test]
    fn pack_layout() {
        let h = Handle::new(0, 0, 8, true, 0);
        let mut expected = [0u8; 16];
        expected[8] = 8;
        expected[15] = 0x80;
        assert_eq!(pack_handle(h), expected);
        let tagged: Vec<_> = expected
            .iter()
            .map(|&value| TaggedByte {
                value,
                tag: Tag::Handle,
            })
            .collect();
        assert_eq!(unpack_handle(&tagged), h);
        let mut broken = tagged.clone();
        broken[3].tag = Tag::Data;
        assert!(!unpack_handle(&broken).valid);
        assert!(!unpack_handle(&[TaggedByte::default(); 16]).valid);
    }

    #[test]
    fn data_write_invalidates_stored_handle() {
        let mut m = SegmentMemory::new(128);
        let h = m.alloc(32).unwrap();
        m.store(h, Value::Handle(h)).unwrap();
        assert_eq!(m.load(h, ValueType::Handle), Ok(Value::Handle(h)));
        m.store(h, Value::I32(0)).unwrap();
        let Ok(Value::Handle(back)) = m.load(h, ValueType::Handle) else {
            panic!()
        };
        assert!(!back.valid);
        assert_eq!(m.load(back, ValueType::I32), Err(Trap::Integrity));
        assert_eq!(m.load(h.add(24), ValueType::Handle), Err(Trap::Spatial));
        let big = m.alloc(48).unwrap();
        assert_eq!(m.load(big.add(8), ValueType::Handle), Err(Trap::Integrity));
    }

    #[test]
    fn slice_rules() {
        let h = Handle::new(100, 0, 64, true, 7);
        assert_eq!(h.slice(8, 16), Ok(Handle::new(108, 0, 48, true, 7)));
        assert_eq!(h.slice(64, 64), Err(Trap::Slice));
        assert_eq!(h.slice(8, 4), Err(Trap::Slice));
        assert_eq!(h.slice(-1, 0), Err(Trap::Slice));
        assert!(!Handle::NULL.slice(4, 0).unwrap().valid);
    }

    /// Reference model: each id owns a byte vector and a liveness flag.
    #[derive(Default)]
    struct Oracle {
        segs: HashMap<u32, (u32, Vec<u8>, bool)>,
    }

    impl Oracle {
        fn check(&self, h: Handle, size: u32) -> Result<(), Trap> {
            if !h.valid {
                return Err(Trap::Integrity);
            }
            match self.segs.get(&h.id) {
                Some((_, _, true)) => {}
                _ => return Err(Trap::Temporal),
            }
            if h.offset < 0 || h.offset as u64 + size as u64 > h.bound as u64 {
                return Err(Trap::Spatial);
            }
            Ok(())
        }
    }

    #[derive(Debug, Clone)]
    enum Op {
        Alloc(u32),
        Free(usize),
        Read(usize, i32, u32),
        Write(usize, i32, Vec<u8>),
        Corrupt(usize),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0u32..48).prop_map(Op::Alloc),
            any::<usize>().prop_map(Op::Free),
            (any::<usize>(), -4i32..48, 0u32..12).prop_map(|(i, o, n)| Op::Read(i, o, n)),
            (any::<usize>(), -4i32..48, prop::collection::vec(any::<u8>(), 0..12))
                .prop_map(|(i, o, b)| Op::Write(i, o, b)),
            any::<usize>().prop_map(Op::Corrupt),
        ]
    }

    /// Runs `ops` against both models, returning false on any disagreement.
    fn agree(ops: &[Op]) -> bool {
        let mut m = SegmentMemory::new(256);
        let mut o = Oracle::default();
        let mut handles: Vec<Handle> = vec![Handle::NULL];
        for op in ops {
            let pick = |i: usize| handles[i % handles.len()];
            match op {
                Op::Alloc(n) => match m.alloc(*n) {
                    Ok(h) => {
                        if o.segs.contains_key(&h.id) || h.id as usize != o.segs.len() {
                            return false;
                        }
                        o.segs.insert(h.id, (h.bound, vec![0; *n as usize], true));
                        handles.push(h);
                    }
                    Err(Trap::OutOfMemory) => {}
                    Err(_) => return false,
                },
                Op::Free(i) => {
                    let h = pick(*i);
                    let expect = if !h.valid {
                        Err(Trap::Integrity)
                    } else if !matches!(o.segs.get(&h.id), Some((_, _, true))) {
                        Err(Trap::Temporal)
                    } else if h.offset != 0 {
                        Err(Trap::Spatial)
                    } else {
                        Ok(())
                    };
                    if m.free(h) != expect {
                        return false;
                    }
                    if expect.is_ok() {
                        o.segs.get_mut(&h.id).unwrap().2 = false;
                    }
                }
                Op::Read(i, off, n) => {
                    let h = pick(*i).add(*off);
                    let got = m.read_bytes(h, *n).map(|b| b.iter().map(|t| t.value).collect());
                    let want = o.check(h, *n).map(|()| {
                        let s = h.offset as usize;
                        o.segs[&h.id].1[s..s + *n as usize].to_vec()
                    });
                    if got != want {
                        return false;
                    }
                }
                Op::Write(i, off, bytes) => {
                    let h = pick(*i).add(*off);
                    let payload: Vec<_> = bytes.iter().map(|&b| TaggedByte::data(b)).collect();
                    let got = m.write_bytes(h, &payload);
                    let want = o.check(h, bytes.len() as u32);
                    if got != want {
                        return false;
                    }
                    if want.is_ok() {
                        let s = h.offset as usize;
                        o.segs.get_mut(&h.id).unwrap().1[s..s + bytes.len()]
                            .copy_from_slice(bytes);
                    }
                }
                Op::Corrupt(i) => {
                    let h = pick(*i);
                    handles.push(Handle { valid: false, ..h });
                }
            }
        }
        true
    }

    fn random_ops(rng: &mut impl rand::Rng, len: usize) -> Vec<Op> {
        (0..len)
            .map(|_| match rng.gen_range(0..5) {
                0 => Op::Alloc(rng.gen_range(0..48)),
                1 => Op::Free(rng.gen()),
                2 => Op::Read(rng.gen(), rng.gen_range(-4..48), rng.gen_range(0..12)),
                3 => Op::Write(
                    rng.gen(),
                    rng.gen_range(-4..48),
                    (0..rng.gen_range(0..12)).map(|_| rng.gen()).collect(),
                ),
                _ => Op::Corrupt(rng.gen()),
            })
            .collect()
    }

    proptest! {
        #[test]
        fn matches_map_oracle(ops in prop::collection::vec(op(), 0..60)) {
            prop_assert!(agree(&ops));
        }

        #[test]
        fn alloc_then_free_restores_partition(
            sizes in prop::collection::vec(0u32..40, 0..6),
            n in 0u32..64,
        ) {
            let mut m = SegmentMemory::new(512);
            let mut live = vec![];
            for (k, s) in sizes.iter().enumerate() {
                let h = m.alloc(*s).unwrap();
                if k % 2 == 0 { m.free(h).unwrap() } else { live.push(h) }
            }
            let before = m.allocator().free_ranges().to_vec();
            if let Ok(h) = m.alloc(n) {
                m.free(h).unwrap();
                prop_assert_eq!(m.allocator().free_ranges(), &before[..]);
            }
        }

        #[test]
        fn pack_round_trip(base: u32, offset: i32, bound: u32, valid: bool, id in 0u32..(1 << 31)) {
            let h = Handle::new(base, offset, bound, valid, id);
            let tagged: Vec<_> = pack_handle(h)
                .iter()
                .map(|&value| TaggedByte { value, tag: Tag::Handle })
                .collect();
            prop_assert_eq!(unpack_handle(&tagged), h);
        }
    }

    #[test]
    fn oracle_agrees_on_seeded_sequences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let ops = random_ops(&mut rng, 40);
            assert!(agree(&ops), "{ops:?}");
        }
    }
}
