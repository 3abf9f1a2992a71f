//! Feed abstract events to the shadow-memory monitor.

use mswasm::monitor::{check_trace, AbsEvent};

fn main() {
    let alloc = AbsEvent::Alloc { a: 0, c: 1, phi: vec![0, 0, 1, 1] };
    let safe = vec![
        alloc.clone(),
        AbsEvent::Write { a: 1, c: 1, s: 0 },
        AbsEvent::Read { a: 2, c: 1, s: 1 },
        AbsEvent::Free { a: 0, c: 1 },
    ];
    println!("safe trace: {:?}", check_trace(&safe));

    let cases = [
        ("read after free", AbsEvent::Read { a: 0, c: 1, s: 0 }),
        ("wrong color", AbsEvent::Read { a: 9, c: 1, s: 0 }),
        ("double free", AbsEvent::Free { a: 0, c: 1 }),
        ("color reuse", alloc),
    ];
    for (what, e) in cases {
        let mut t = safe.clone();
        t.push(e);
        println!("{what}: {:?}", check_trace(&t).unwrap_err());
    }
}
