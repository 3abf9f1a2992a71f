//! Direct use of the tagged segment memory.

use mswasm::segmem::SegmentMemory;

fn main() {
    let mut mem = SegmentMemory::new(256);
    let a = mem.alloc(32).unwrap();
    let b = mem.alloc(16).unwrap();
    println!("a = {a:?}\nb = {b:?}");
    println!("read past a: {:?}", mem.read_bytes(a.add(30), 4).map(|_| ()));
    println!("narrowed: {:?}", a.slice(8, 24));
    mem.free(a).unwrap();
    println!("read after free: {:?}", mem.read_bytes(a, 4).map(|_| ()));
    let c = mem.alloc(32).unwrap();
    println!("reallocated at base {} with fresh id {} (old id {})", c.base, c.id, a.id);
    println!("old handle still refused: {:?}", mem.read_bytes(a, 4).map(|_| ()));
    let _ = b;
}
