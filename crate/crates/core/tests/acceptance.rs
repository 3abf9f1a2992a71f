//! End-to-end acceptance checks, one line of output per check.

use std::collections::{HashMap, HashSet};
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use mswasm::compiler::{compile_src, CompileOptions};
use mswasm::conformance::campaign::{fuzz_attackers, fuzz_modules};
use mswasm::conformance::gen::{gen_module_seeded, GenConfig};
use mswasm::conformance::srcgen::{gen_safe_src, gen_src_seeded, SrcGenConfig};
use mswasm::conformance::{diff_run, enforce_check, DiffConfig, Relation};
use mswasm::fixtures::{self, TRIM_CAPACITY, USER_ID, USER_NAME_CELLS};
use mswasm::interp::{run, trace_to_jsonl, Backend, Event, RunConfig, RunResult, SegmentBackend};
use mswasm::minic::eval::src_trace_to_jsonl;
use mswasm::minic::{load_src, src_run, SrcConfig, SrcVerdict};
use mswasm::monitor::{AbsEvent, ShadowMemory, ViolationKind};
use mswasm::segmem::SegmentMemory;
use mswasm::tracerel::check_mswasm_ms;
use mswasm::{parse_module, typecheck_module, Handle, Instr, ModuleDef, Outcome, Trap, Value, ValueType};

fn run_module(m: &ModuleDef, backend: Backend) -> RunResult {
    let wt = typecheck_module(m).expect("module typechecks");
    run(
        wt,
        &RunConfig {
            backend,
            ..RunConfig::default()
        },
    )
    .expect("module is whole")
}

fn compiled(src: &str) -> ModuleDef {
    compile_src(src, &CompileOptions::default()).expect("source compiles").1
}

fn bytecode(src: &str) -> ModuleDef {
    parse_module(src).expect("sample parses")
}

fn traps(t: &[Event]) -> usize {
    t.iter().filter(|e| matches!(e, Event::Trap)).count()
}

fn trim_overflow() {
    let ok = run_module(&compiled(&fixtures::trim_uc(TRIM_CAPACITY)), Backend::Tagged);
    assert_eq!(ok.outcome, Outcome::Returned(vec![Value::I32(TRIM_CAPACITY as i32)]));
    assert_eq!(traps(&ok.trace), 0);
    assert!(check_mswasm_ms(&ok.trace).is_safe());

    let bad = run_module(&compiled(&fixtures::trim_uc(TRIM_CAPACITY + 1)), Backend::Tagged);
    assert_eq!(bad.outcome, Outcome::Trapped(Trap::Spatial));
    assert_eq!(traps(&bad.trace), 1);
    assert_eq!(bad.trace.last(), Some(&Event::Trap));
    // The output buffer is the last segment allocated.
    let out = bad
        .trace
        .iter()
        .rev()
        .find_map(|e| match e {
            Event::SAlloc(h) => Some(h.id),
            _ => None,
        })
        .unwrap();
    let writes = bad
        .trace
        .iter()
        .filter(|e| matches!(e, Event::Write(ValueType::I32, h) if h.id == out))
        .count();
    assert_eq!(writes, TRIM_CAPACITY as usize, "trap lands on write number 1025");
}

fn field_overflow_keeps_id() {
    let ok = run_module(&compiled(&fixtures::user_uc(USER_NAME_CELLS)), Backend::Tagged);
    assert_eq!(ok.outcome, Outcome::Returned(vec![Value::I32(USER_ID)]));

    let r = run_module(&compiled(&fixtures::user_uc(USER_NAME_CELLS + 1)), Backend::Tagged);
    assert_eq!(r.outcome, Outcome::Trapped(Trap::Spatial));
    assert_eq!(traps(&r.trace), 1);
    let user = r
        .trace
        .iter()
        .find_map(|e| match e {
            Event::SAlloc(h) if h.bound == USER_NAME_CELLS * 4 + 4 => Some(*h),
            _ => None,
        })
        .expect("user record allocated");
    let name_writes = r
        .trace
        .iter()
        .filter(|e| matches!(e, Event::Write(ValueType::I32, h) if h.id == user.id && h.bound == USER_NAME_CELLS * 4))
        .count();
    assert_eq!(name_writes, USER_NAME_CELLS as usize);
    let id_at = (user.base + USER_NAME_CELLS * 4) as usize;
    assert_eq!(&r.dump[id_at..id_at + 4], &USER_ID.to_le_bytes());
    let name: Vec<u8> = (0..USER_NAME_CELLS as i32)
        .flat_map(|i| (65 + i).to_le_bytes())
        .collect();
    assert_eq!(&r.dump[user.base as usize..id_at], &name[..]);
}

fn whole_modules_are_safe() {
    let cfg = GenConfig::default();
    for seed in 0..50 {
        let m = gen_module_seeded(seed, &cfg);
        assert!(m.funcs.len() <= cfg.max_funcs);
        assert!(m.funcs.iter().all(|f| Instr::count(&f.body) <= cfg.max_instrs));
    }
    let r = fuzz_modules(1000, 0xacce, None);
    assert_eq!(r.cases, 1000);
    assert!(r.ok(), "{:?}", r.failures);
    assert!(r.outcomes.trapped > 0 && r.outcomes.returned > 0);
}

fn attacked_victims_are_safe() {
    let r = fuzz_attackers(200, 5, 0xacce, None);
    assert_eq!(r.cases, 1000);
    assert!(r.ok(), "{:?}", r.failures);
}

fn safe_corpus(n: usize) -> Vec<String> {
    let cfg = SrcGenConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5afe);
    (0..n).map(|_| gen_safe_src(&mut rng, &cfg)).collect()
}

fn safe_programs_are_preserved() {
    let corpus = safe_corpus(200);
    let mut events = 0;
    for src in &corpus {
        let m = load_src(src).unwrap();
        let r = diff_run(&m, &DiffConfig::default());
        assert_eq!(r.src_ms, SrcVerdict::Safe);
        assert_eq!(r.relation, Relation::Related, "{src}");
        assert!(r.tgt_ms.is_safe() && r.tgt_typed_ms.is_safe(), "{src}");
        events += r.tgt_trace.len();
    }
    assert!(events > 1000);
}

fn unsafe_programs_trap_at_first_violation() {
    assert!(fixtures::UNSAFE_UC.len() >= 12);
    for (name, src) in fixtures::UNSAFE_UC {
        let m = load_src(src).unwrap();
        let r = diff_run(&m, &DiffConfig::default());
        let k = r.src_ms.first_violation().unwrap_or_else(|| panic!("{name} is unsafe"));
        assert_eq!(r.relation, Relation::Related, "{name}");
        assert_eq!(r.tgt_trace.len(), k + 1, "{name}");
        assert_eq!(r.tgt_trace[k], Event::Trap, "{name}");
        assert_eq!(traps(&r.tgt_trace), 1, "{name}");
        assert!(matches!(r.tgt_outcome, Outcome::Trapped(_)), "{name}");
    }
}

fn compiled_code_is_always_safe() {
    let mut corpus = safe_corpus(200);
    corpus.extend(fixtures::UNSAFE_UC.iter().map(|(_, s)| s.to_string()));
    let cfg = SrcGenConfig::default();
    corpus.extend((0..500).map(|i| gen_src_seeded(1_000 + i, &cfg).0));
    let unsafe_ones = corpus
        .par_iter()
        .map(|src| {
            let m = load_src(src).unwrap();
            let v = enforce_check(&m, &DiffConfig::default()).expect("compiled code runs");
            assert!(v.is_safe(), "{src}");
            let r = src_run(&m, &SrcConfig::default());
            !mswasm::minic::src_ms(&m, &r.trace).is_safe_verdict()
        })
        .filter(|&u| u)
        .count();
    assert!(unsafe_ones >= 200, "corpus mixes safe and unsafe programs");
}

trait IsSafe {
    fn is_safe_verdict(&self) -> bool;
}

impl IsSafe for SrcVerdict {
    fn is_safe_verdict(&self) -> bool {
        *self == SrcVerdict::Safe
    }
}

/// Verdict of a trace computed straight from the history: every question
/// about a cell is answered by scanning earlier events for the latest
/// allocation that covers it and any free of that allocation's color.
fn brute_force(t: &[AbsEvent]) -> Result<(), (ViolationKind, usize)> {
    for (i, e) in t.iter().enumerate() {
        let before = &t[..i];
        let allocs = || {
            before.iter().filter_map(|e| match e {
                AbsEvent::Alloc { a, c, phi } => Some((*a, *c, phi)),
                _ => None,
            })
        };
        let freed = |c: u32| before.iter().any(|e| matches!(e, AbsEvent::Free { c: c2, .. } if *c2 == c));
        let owner = |x: u64| {
            allocs()
                .filter(|(a, _, phi)| *a <= x && x < a + phi.len() as u64)
                .last()
        };
        let verdict = match e {
            AbsEvent::Read { a, c, s } | AbsEvent::Write { a, c, s } => match owner(*a) {
                None => Err(ViolationKind::TemporalUnmapped),
                Some((_, c2, _)) if freed(c2) => Err(ViolationKind::TemporalFreed),
                Some((_, c2, _)) if c2 != *c => Err(ViolationKind::SpatialColor),
                Some((a2, _, phi)) if phi[(a - a2) as usize] != *s => Err(ViolationKind::Shade),
                Some(_) => Ok(()),
            },
            AbsEvent::Alloc { a, c, phi } => {
                if allocs().any(|(_, c2, _)| c2 == *c) {
                    Err(ViolationKind::ColorReuse)
                } else if (*a..a + phi.len() as u64)
                    .any(|x| owner(x).is_some_and(|(_, c2, _)| !freed(c2)))
                {
                    Err(ViolationKind::AllocOverlap)
                } else {
                    Ok(())
                }
            }
            AbsEvent::Free { a, c } => match allocs().find(|(_, c2, _)| c2 == c) {
                Some((a2, _, _)) if a2 != *a => Err(ViolationKind::InvalidFree),
                None => Err(ViolationKind::InvalidFree),
                Some(_) if freed(*c) => Err(ViolationKind::DoubleFree),
                Some(_) => Ok(()),
            },
        };
        verdict.map_err(|k| (k, i))?;
    }
    Ok(())
}

fn alphabet() -> Vec<AbsEvent> {
    let mut v = Vec::new();
    for a in 0..4u64 {
        for c in 0..2 {
            for s0 in 0..2 {
                v.push(AbsEvent::Alloc { a, c, phi: vec![s0] });
                for s1 in 0..2 {
                    v.push(AbsEvent::Alloc { a, c, phi: vec![s0, s1] });
                }
            }
            for s in 0..2 {
                v.push(AbsEvent::Read { a, c, s });
                v.push(AbsEvent::Write { a, c, s });
            }
            v.push(AbsEvent::Free { a, c });
        }
    }
    v
}

/// Every trace of up to five events over the alphabet. Extensions of a
/// rejected trace are rejected at the same event by both checkers, since
/// each stops at its first violation, so the search only extends accepted
/// prefixes; those extensions are still compared once.
fn monitor_matches_brute_force() {
    let sigma = alphabet();
    assert_eq!(sigma.len(), 88);
    fn dfs(sigma: &[AbsEvent], trace: &mut Vec<AbsEvent>, m: &ShadowMemory, checked: &mut u64) {
        for e in sigma {
            trace.push(e.clone());
            let mut next = m.clone();
            let mine = next.step(e).map_err(|k| (k, trace.len() - 1));
            *checked += 1;
            assert_eq!(mine, brute_force(trace), "{trace:?}");
            if mine.is_ok() && trace.len() < 5 {
                dfs(sigma, trace, &next, checked);
            }
            trace.pop();
        }
    }
    let first: Vec<u64> = sigma
        .par_iter()
        .map(|e| {
            let mut checked = 0;
            let mut t = vec![e.clone()];
            let mut m = ShadowMemory::new();
            let mine = m.step(e).map_err(|k| (k, 0));
            assert_eq!(mine, brute_force(&t));
            if mine.is_ok() {
                dfs(&sigma, &mut t, &m, &mut checked);
            }
            checked + 1
        })
        .collect();
    let total: u64 = first.iter().sum();
    assert!(total > 1_000_000, "checked {total} traces");
}

/// What the map-based model keeps for each byte.
#[derive(Clone, Copy, PartialEq, Debug)]
enum Byte {
    Data(u8),
    /// Byte `k` of a stored handle.
    Part(Handle, u8),
}

fn encode(h: Handle) -> [u8; 16] {
    let mut out = [0u8; 16];
    out[0..4].copy_from_slice(&h.base.to_le_bytes());
    out[4..8].copy_from_slice(&h.offset.to_le_bytes());
    out[8..12].copy_from_slice(&h.bound.to_le_bytes());
    out[12..16].copy_from_slice(&(h.id | (h.valid as u32) << 31).to_le_bytes());
    out
}

#[derive(Default)]
struct MapModel {
    live: HashMap<u32, (u32, u32)>,
    ids: HashSet<u32>,
    mem: HashMap<u64, Byte>,
}

impl MapModel {
    fn byte(&self, x: u64) -> Byte {
        self.mem.get(&x).copied().unwrap_or(Byte::Data(0))
    }

    fn raw(&self, x: u64) -> u8 {
        match self.byte(x) {
            Byte::Data(b) => b,
            Byte::Part(h, k) => encode(h)[k as usize],
        }
    }

    fn access(&self, h: Handle, size: u32) -> Result<u64, Trap> {
        if !h.valid {
            return Err(Trap::Integrity);
        }
        if !self.live.contains_key(&h.id) {
            return Err(Trap::Temporal);
        }
        if h.offset < 0 || h.offset as i64 + size as i64 > h.bound as i64 {
            return Err(Trap::Spatial);
        }
        Ok(h.base as u64 + h.offset as u64)
    }

    fn alloc(&mut self, n: u32, got: Result<Handle, Trap>) -> Result<Handle, Trap> {
        let h = got.expect("memory is large enough");
        assert!(h.valid && h.offset == 0 && h.bound == n && h.base % 16 == 0);
        assert!(self.ids.insert(h.id), "ids are never reused");
        for &(b, m) in self.live.values() {
            assert!(n == 0 || m == 0 || h.base + n <= b || b + m <= h.base, "segments overlap");
        }
        for x in h.base..h.base + n {
            assert_eq!(self.byte(x as u64), Byte::Data(0), "fresh segments are zeroed");
        }
        self.live.insert(h.id, (h.base, n));
        Ok(h)
    }

    fn free(&mut self, h: Handle) -> Result<(), Trap> {
        if !h.valid {
            return Err(Trap::Integrity);
        }
        let Some(&(base, n)) = self.live.get(&h.id) else {
            return Err(Trap::Temporal);
        };
        if h.offset != 0 || h.base != base {
            return Err(Trap::Spatial);
        }
        self.live.remove(&h.id);
        for x in base..base + n {
            self.mem.remove(&(x as u64));
        }
        Ok(())
    }

    fn load(&self, h: Handle, ty: ValueType) -> Result<Value, Trap> {
        let a = self.access(h, ty.size())?;
        let bytes: Vec<u8> = (a..a + ty.size() as u64).map(|x| self.raw(x)).collect();
        Ok(match ty {
            ValueType::I32 => Value::I32(i32::from_le_bytes(bytes.try_into().unwrap())),
            ValueType::I64 => Value::I64(i64::from_le_bytes(bytes.try_into().unwrap())),
            ValueType::Handle => {
                if a % 16 != 0 {
                    return Err(Trap::Integrity);
                }
                let whole = match self.byte(a) {
                    Byte::Part(h0, 0) => {
                        (1..16).all(|k| self.byte(a + k) == Byte::Part(h0, k as u8)).then_some(h0)
                    }
                    _ => None,
                };
                match whole {
                    Some(h0) => Value::Handle(h0),
                    None => {
                        let w = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
                        Value::Handle(Handle::new(w(0), w(4) as i32, w(8), false, w(12) & !(1 << 31)))
                    }
                }
            }
            _ => unreachable!(),
        })
    }

    fn store(&mut self, h: Handle, v: Value) -> Result<(), Trap> {
        let a = self.access(h, v.ty().size())?;
        match v {
            Value::Handle(x) => {
                if a % 16 != 0 {
                    return Err(Trap::Integrity);
                }
                for k in 0..16u8 {
                    self.mem.insert(a + k as u64, Byte::Part(x, k));
                }
            }
            Value::I32(n) => {
                for (k, b) in n.to_le_bytes().into_iter().enumerate() {
                    self.mem.insert(a + k as u64, Byte::Data(b));
                }
            }
            Value::I64(n) => {
                for (k, b) in n.to_le_bytes().into_iter().enumerate() {
                    self.mem.insert(a + k as u64, Byte::Data(b));
                }
            }
            _ => unreachable!(),
        }
        Ok(())
    }

    fn slice(h: Handle, o1: i32, o2: i32) -> Result<Handle, Trap> {
        if !h.valid {
            return Ok(Handle {
                base: h.base.wrapping_add(o1 as u32),
                bound: h.bound.wrapping_sub(o2 as u32),
                ..h
            });
        }
        let n = h.bound as i64;
        if o1 < 0 || o1 as i64 >= n || o1 > o2 || o2 as i64 > n {
            return Err(Trap::Slice);
        }
        Ok(Handle {
            base: h.base + o1 as u32,
            bound: h.bound - o2 as u32,
            ..h
        })
    }
}

fn pick(rng: &mut impl Rng, pool: &[Handle]) -> Handle {
    pool[rng.gen_range(0..pool.len())]
}

fn backend_matches_map_model() {
    let outcomes: Vec<(usize, usize)> = (0..10_000u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut real = SegmentMemory::new(1 << 16);
            let mut model = MapModel::default();
            let mut pool = vec![Handle::NULL];
            let (mut ok, mut trapped) = (0, 0);
            for _ in 0..rng.gen_range(1..40) {
                let tys = [ValueType::I32, ValueType::I64, ValueType::Handle];
                let ty = tys[rng.gen_range(0..3)];
                let step: Result<Option<Value>, Trap> = match rng.gen_range(0..10) {
                    0 | 1 => {
                        let n = [0, 1, 4, 8, 16, 24, 32, 48, 64][rng.gen_range(0..9)];
                        let got = real.new_segment(n);
                        let h = model.alloc(n, got)?;
                        pool.push(h);
                        Ok(Some(Value::Handle(h)))
                    }
                    2 => {
                        let h = pick(&mut rng, &pool);
                        let want = model.free(h);
                        assert_eq!(real.free_segment(h), want);
                        want.map(|_| None)
                    }
                    3 | 4 => {
                        let h = pick(&mut rng, &pool);
                        let v = match ty {
                            ValueType::I32 => Value::I32(rng.gen()),
                            ValueType::I64 => Value::I64(rng.gen()),
                            _ => Value::Handle(pick(&mut rng, &pool)),
                        };
                        let want = model.store(h, v);
                        assert_eq!(real.store(h, v), want);
                        want.map(|_| None)
                    }
                    5 | 6 => {
                        let h = pick(&mut rng, &pool);
                        let want = model.load(h, ty);
                        assert_eq!(real.load(h, ty), want);
                        if let Ok(Value::Handle(x)) = want {
                            pool.push(x);
                        }
                        want.map(Some)
                    }
                    7 | 8 => {
                        let h = pick(&mut rng, &pool);
                        let d = [-16, -4, -1, 1, 4, 8, 12, 16, 32, i32::MIN, i32::MAX][rng.gen_range(0..11)];
                        let got = real.handle_add(h, d).unwrap();
                        assert_eq!(got, Handle { offset: h.offset.wrapping_add(d), ..h });
                        pool.push(got);
                        Ok(Some(Value::Handle(got)))
                    }
                    _ => {
                        let h = pick(&mut rng, &pool);
                        let o1 = rng.gen_range(-2..20);
                        let o2 = rng.gen_range(-2..40);
                        let want = MapModel::slice(h, o1, o2);
                        assert_eq!(real.slice(h, o1, o2), want);
                        if let Ok(x) = want {
                            pool.push(x);
                        }
                        want.map(|x| Some(Value::Handle(x)))
                    }
                };
                match step {
                    Ok(_) => ok += 1,
                    Err(_) => trapped += 1,
                }
            }
            Ok::<_, Trap>((ok, trapped))
        })
        .map(|r| r.expect("no unexpected allocation failure"))
        .collect();
    let ok: usize = outcomes.iter().map(|o| o.0).sum();
    let trapped: usize = outcomes.iter().map(|o| o.1).sum();
    assert!(ok > 10_000 && trapped > 10_000, "{ok} ok, {trapped} trapped");
}

fn baggy_differences() {
    let trim = compiled(&fixtures::trim_uc(TRIM_CAPACITY + 1));
    assert!(matches!(run_module(&trim, Backend::Baggy).outcome, Outcome::Trapped(_)));
    let clean = compiled(&fixtures::trim_uc(TRIM_CAPACITY));
    assert_eq!(
        run_module(&clean, Backend::Baggy).outcome,
        Outcome::Returned(vec![Value::I32(TRIM_CAPACITY as i32)])
    );

    let uaf = bytecode(fixtures::UAF_MSWAT);
    assert_eq!(run_module(&uaf, Backend::Tagged).outcome, Outcome::Trapped(Trap::Temporal));
    assert_eq!(run_module(&uaf, Backend::Baggy).outcome, Outcome::Returned(vec![Value::I32(7)]));

    let slack = bytecode(fixtures::SLACK_MSWAT);
    for b in [Backend::Tagged, Backend::Baggy] {
        assert_eq!(run_module(&slack, b).outcome, Outcome::Returned(vec![Value::I32(0)]));
    }
    let stray = bytecode(fixtures::STRAY_MSWAT);
    assert_eq!(run_module(&stray, Backend::Baggy).outcome, Outcome::Trapped(Trap::Stray));
    assert_eq!(run_module(&stray, Backend::Tagged).outcome, Outcome::Returned(vec![Value::I32(0)]));
}

/// JSON-lines traces of every sample: source traces for programs in the
/// C subset, then the traces of their compiled code and of the bytecode
/// samples on both backends.
fn all_traces() -> Vec<String> {
    let mut jobs: Vec<Box<dyn Fn() -> String + Sync>> = Vec::new();
    for (_, src) in fixtures::all_uc() {
        let s = src.clone();
        jobs.push(Box::new(move || {
            let m = load_src(&s).unwrap();
            src_trace_to_jsonl(&src_run(&m, &SrcConfig::default()).trace)
        }));
        for b in [Backend::Tagged, Backend::Baggy] {
            let s = src.clone();
            jobs.push(Box::new(move || trace_to_jsonl(&run_module(&compiled(&s), b).trace)));
        }
    }
    for (_, src) in fixtures::MSWAT {
        for b in [Backend::Tagged, Backend::Baggy] {
            jobs.push(Box::new(move || trace_to_jsonl(&run_module(&bytecode(src), b).trace)));
        }
    }
    jobs.par_iter().map(|j| j()).collect()
}

fn traces_are_deterministic() {
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let reference = pool(1).install(all_traces);
    assert!(reference.iter().filter(|t| t.lines().count() > 10).count() > 10);
    for _ in 0..2 {
        assert_eq!(pool(1).install(all_traces), reference);
    }
    for _ in 0..3 {
        assert_eq!(pool(8).install(all_traces), reference);
    }
}

fn main() {
    type Check = (&'static str, fn(), Duration);
    let checks: [Check; 11] = [
        ("token copy runs clean at capacity and traps once past it", trim_overflow, Duration::from_secs(1)),
        ("field overflow traps before the adjacent id changes", field_overflow_keeps_id, Duration::from_secs(1)),
        ("1000 random whole modules produce safe traces", whole_modules_are_safe, Duration::from_secs(60)),
        ("1000 victim/attacker links produce safe traces", attacked_victims_are_safe, Duration::from_secs(120)),
        ("200 safe source programs compile to related safe runs", safe_programs_are_preserved, Duration::from_secs(120)),
        ("unsafe source programs trap exactly at their first violation", unsafe_programs_trap_at_first_violation, Duration::from_secs(10)),
        ("compiled code of every corpus program has a safe trace", compiled_code_is_always_safe, Duration::from_secs(120)),
        ("monitor agrees with a brute-force checker on all short traces", monitor_matches_brute_force, Duration::from_secs(60)),
        ("tagged backend agrees with a map-based model on 10000 sequences", backend_matches_map_model, Duration::from_secs(60)),
        ("baggy backend keeps bounds but loses temporal safety", baggy_differences, Duration::from_secs(1)),
        ("sample traces are identical across runs and thread counts", traces_are_deterministic, Duration::from_secs(60)),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut out = std::io::stdout().lock();
    for (k, (name, check, limit)) in checks.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let took = start.elapsed();
        let verdict = match &result {
            Ok(()) if took <= *limit => "PASS".to_string(),
            Ok(()) => format!("FAIL (over the {limit:?} limit)"),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                format!("FAIL ({})", msg.lines().next().unwrap_or(""))
            }
        };
        if !verdict.starts_with("PASS") {
            failed += 1;
        }
        writeln!(out, "acceptance {:>2} {verdict:<4} {took:>10.2?}  {name}", k + 1).unwrap();
    }
    writeln!(out, "acceptance: {} of {} passed", checks.len() - failed, checks.len()).unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}
