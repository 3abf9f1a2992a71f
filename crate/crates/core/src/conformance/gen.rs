//! Random well-typed bytecode modules.
//!
//! Bodies are built over a simulated operand stack so every choice is
//! well-typed by construction. Calls only go to higher-numbered functions,
//! so generated programs always terminate. With `attack` set, generation
//! leans on the operations most likely to break a weak memory model:
//! extreme `handle.add` offsets, slices at the edges, overwriting stored
//! handles with integers and reloading them, and repeated frees.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bytecode::{BinOp, FuncDef, FuncType, Instr, ModuleDef, ValueType};

const TYPES: [ValueType; 3] = [ValueType::I32, ValueType::I64, ValueType::Handle];

#[derive(Debug, Clone, Copy)]
pub struct GenConfig {
    /// Instructions per function, counting those inside `if` arms.
    pub max_instrs: usize,
    pub max_funcs: usize,
    pub heap_size: u32,
    pub segment_size: u32,
    pub attack: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_instrs: 40,
            max_funcs: 4,
            heap_size: 64,
            segment_size: 4096,
            attack: false,
        }
    }
}

fn interesting_i32(rng: &mut impl Rng) -> i32 {
    const EDGES: [i32; 14] = [
        0,
        1,
        2,
        4,
        8,
        15,
        16,
        17,
        32,
        -1,
        -16,
        i32::MIN,
        i32::MAX,
        i32::MAX - 15,
    ];
    if rng.gen_bool(0.6) {
        *EDGES.choose(rng).unwrap()
    } else {
        rng.gen_range(-8..72)
    }
}

fn segment_size(rng: &mut impl Rng) -> i32 {
    if rng.gen_bool(0.8) {
        *[16, 32, 48, 64].choose(rng).unwrap()
    } else {
        *[0, 1, 4, 8, 17, 24].choose(rng).unwrap()
    }
}

/// Handle offsets: mostly small and aligned, sometimes anything.
fn offset(rng: &mut impl Rng) -> i32 {
    if rng.gen_bool(0.8) {
        *[0, 4, 8, 12, 16, -4, -8].choose(rng).unwrap()
    } else {
        interesting_i32(rng)
    }
}

struct BodyGen<'a, R> {
    rng: &'a mut R,
    locals: &'a [ValueType],
    callees: &'a [(u32, FuncType)],
    attack: bool,
    /// Handle local holding the function's own segment.
    home: u32,
    heap: u32,
    used: usize,
    budget: usize,
}

impl<R: Rng> BodyGen<'_, R> {
    fn local_of(&mut self, t: ValueType) -> u32 {
        if t == ValueType::Handle && self.rng.gen_bool(0.7) {
            return self.home;
        }
        let slots: Vec<u32> = (0..self.locals.len() as u32)
            .filter(|&i| self.locals[i as usize] == t)
            .collect();
        *slots.choose(self.rng).expect("a local of every type")
    }

    /// One instruction producing a value of type `t` from nothing.
    fn produce(&mut self, t: ValueType) -> Instr {
        match t {
            ValueType::I32 if self.rng.gen_bool(0.5) => Instr::i32(interesting_i32(self.rng)),
            ValueType::I64 if self.rng.gen_bool(0.5) => {
                Instr::i64(interesting_i32(self.rng) as i64 * 0x1_0001)
            }
            _ => Instr::Get(self.local_of(t)),
        }
    }

    fn room(&self, cost: usize, stack: usize, target: usize) -> bool {
        self.used + cost + stack + 1 + target <= self.budget
    }

    /// A sequence that starts on an empty stack and leaves `target`.
    fn seq(&mut self, target: &[ValueType]) -> Vec<Instr> {
        let mut out = Vec::new();
        let mut stack: Vec<ValueType> = Vec::new();
        let mut steps = 0;
        while self.room(1, stack.len(), target.len()) && steps < 64 {
            steps += 1;
            if self.rng.gen_bool(0.002) {
                out.push(Instr::Trap);
                self.used += 1;
                return out;
            }
            self.step(&mut out, &mut stack, target.len());
            if self.rng.gen_bool(0.03) && stack.ends_with(target) {
                break;
            }
        }
        if stack != target {
            while let Some(t) = stack.pop() {
                let slot = self.local_of(t);
                out.push(Instr::Set(slot));
                self.used += 1;
            }
            for &t in target {
                out.push(self.produce(t));
                self.used += 1;
            }
        }
        out
    }

    fn emit(&mut self, out: &mut Vec<Instr>, instrs: impl IntoIterator<Item = Instr>) {
        for i in instrs {
            self.used += Instr::count(std::slice::from_ref(&i));
            out.push(i);
        }
    }

    fn step(&mut self, out: &mut Vec<Instr>, stack: &mut Vec<ValueType>, reserve: usize) {
        use Instr as I;
        let top = stack.last().copied();
        let below = if stack.len() >= 2 {
            Some(stack[stack.len() - 2])
        } else {
            None
        };
        let h = self.home;
        let choice = self.rng.gen_range(0..if self.attack { 40 } else { 33 });
        let fits = |g: &Self, cost: usize, net: isize| {
            g.room(cost, (stack.len() as isize + net).max(0) as usize, reserve)
        };
        match choice {
            0..=4 => {
                let t = *TYPES.choose(self.rng).unwrap();
                let i = self.produce(t);
                self.emit(out, [i]);
                stack.push(t);
            }
            5 | 6 if top.is_some() => {
                let t = stack.pop().unwrap();
                let slot = self.local_of(t);
                self.emit(out, [I::Set(slot)]);
            }
            7..=9 if fits(self, 2, 0) => match (below, top) {
                (Some(a), Some(b)) if a == b && a.is_int() => {
                    let ops: Vec<BinOp> =
                        BinOp::ALL.iter().copied().filter(|o| o.applies_to(a)).collect();
                    let op = *ops.choose(self.rng).unwrap();
                    self.emit(out, [I::BinOp(a, op)]);
                    stack.pop();
                    stack.pop();
                    stack.push(op.result_type(a));
                }
                _ => {
                    let n = segment_size(self.rng);
                    self.emit(out, [I::i32(n), I::NewSegment]);
                    stack.push(ValueType::Handle);
                }
            },
            10 if top == Some(ValueType::I32) => {
                self.emit(out, [I::NewSegment]);
                stack.pop();
                stack.push(ValueType::Handle);
            }
            11 | 12 if top == Some(ValueType::Handle) && fits(self, 2, 0) => {
                let k = offset(self.rng);
                self.emit(out, [I::i32(k), I::HandleAdd]);
            }
            13 if top == Some(ValueType::Handle) && fits(self, 3, 0) => {
                let (a, b) = if self.rng.gen_bool(0.8) {
                    let a = *[0, 4, 8].choose(self.rng).unwrap();
                    (a, a + *[4, 8, 16].choose(self.rng).unwrap())
                } else {
                    (offset(self.rng), offset(self.rng))
                };
                self.emit(out, [I::i32(a), I::i32(b), I::Slice]);
            }
            14..=17 if top == Some(ValueType::Handle) => {
                let t = *TYPES.choose(self.rng).unwrap();
                self.emit(out, [I::SegLoad(t)]);
                stack.pop();
                stack.push(t);
            }
            18 | 19 if top == Some(ValueType::Handle) && fits(self, 2, -1) => {
                let t = *TYPES.choose(self.rng).unwrap();
                let v = self.produce(t);
                self.emit(out, [v, I::SegStore(t)]);
                stack.pop();
            }
            20 | 21 if below == Some(ValueType::Handle) && top.is_some() => {
                let t = top.unwrap();
                self.emit(out, [I::SegStore(t)]);
                stack.pop();
                stack.pop();
            }
            22 if top == Some(ValueType::Handle) && self.rng.gen_bool(0.4) => {
                self.emit(out, [I::SegFree]);
                stack.pop();
            }
            23 if top == Some(ValueType::I32) => {
                let t = *[ValueType::I32, ValueType::I64].choose(self.rng).unwrap();
                self.emit(out, [I::Load(t)]);
                stack.pop();
                stack.push(t);
            }
            24 if fits(self, 2, 1) => {
                let a = self.rng.gen_range(0..self.heap.saturating_sub(8).max(1)) as i32;
                self.emit(out, [I::i32(a), I::Load(ValueType::I32)]);
                stack.push(ValueType::I32);
            }
            25 if top.is_some_and(|t| t.is_int()) && below == Some(ValueType::I32) => {
                let t = top.unwrap();
                self.emit(out, [I::Store(t)]);
                stack.pop();
                stack.pop();
            }
            26..=29 if !self.callees.is_empty() => {
                let (f, ty) = self.callees.choose(self.rng).unwrap().clone();
                if !fits(self, 1 + ty.params.len(), ty.results.len() as isize) {
                    return;
                }
                if !stack.ends_with(&ty.params) {
                    let args: Vec<Instr> = ty.params.iter().map(|&t| self.produce(t)).collect();
                    self.emit(out, args);
                    stack.extend(&ty.params);
                }
                self.emit(out, [I::Call(f)]);
                stack.truncate(stack.len() - ty.params.len());
                stack.extend(&ty.results);
            }
            30..=32 if top == Some(ValueType::I32) && fits(self, 5, 0) => {
                let arm: Vec<ValueType> = match self.rng.gen_range(0..3) {
                    0 => vec![],
                    1 => vec![ValueType::I32],
                    _ => vec![ValueType::Handle],
                };
                let saved = self.budget;
                let left = saved.saturating_sub(self.used + stack.len() + reserve + 1);
                self.used += 1;
                self.budget = self.used + left / 2;
                let t = self.seq(&arm);
                self.budget = (self.used + left / 2).min(saved);
                let e = self.seq(&arm);
                self.budget = saved;
                out.push(I::If(t, e));
                stack.pop();
                stack.extend(arm);
            }
            // Store a handle, overwrite part of it with an integer, reload.
            33 if fits(self, 8, 1) => {
                let k = interesting_i32(self.rng);
                let at = *[0, 4, 8, 12].choose(self.rng).unwrap();
                self.emit(
                    out,
                    [
                        I::Get(h),
                        I::Get(h),
                        I::SegStore(ValueType::Handle),
                        I::Get(h),
                        I::i32(at),
                        I::HandleAdd,
                        I::i32(k),
                        I::SegStore(ValueType::I32),
                        I::Get(h),
                        I::SegLoad(ValueType::Handle),
                    ],
                );
                stack.push(ValueType::Handle);
            }
            34 if fits(self, 4, 0) && self.rng.gen_bool(0.3) => {
                self.emit(out, [I::Get(h), I::SegFree, I::Get(h), I::SegFree]);
            }
            35 if fits(self, 3, 1) => {
                let k = *[i32::MAX, i32::MIN, -1, 1 << 20, -(1 << 20)].choose(self.rng).unwrap();
                self.emit(out, [I::Get(h), I::i32(k), I::HandleAdd]);
                stack.push(ValueType::Handle);
            }
            36 if fits(self, 4, 1) => {
                let n = segment_size(self.rng);
                let edge = *[0, n, n - 1, n + 1, 16].choose(self.rng).unwrap();
                self.emit(out, [I::Get(h), I::i32(edge), I::i32(n), I::Slice]);
                stack.push(ValueType::Handle);
            }
            37 if fits(self, 4, 1) && self.rng.gen_bool(0.3) => {
                self.emit(out, [I::Get(h), I::SegFree, I::Get(h), I::SegLoad(ValueType::I32)]);
                stack.push(ValueType::I32);
            }
            38 if fits(self, 3, 0) => {
                let n = segment_size(self.rng);
                self.emit(out, [I::i32(n), I::NewSegment, I::Set(h)]);
            }
            // Store a handle and read its bytes back as integers.
            39 if fits(self, 6, 1) => {
                self.emit(
                    out,
                    [
                        I::Get(h),
                        I::Get(h),
                        I::SegStore(ValueType::Handle),
                        I::Get(h),
                        I::SegLoad(ValueType::I64),
                    ],
                );
                stack.push(ValueType::I64);
            }
            _ => {}
        }
    }
}

fn random_type(rng: &mut impl Rng) -> FuncType {
    let params = (0..rng.gen_range(0..=2))
        .map(|_| *TYPES.choose(rng).unwrap())
        .collect();
    let results = (0..rng.gen_range(0..=1))
        .map(|_| *TYPES.choose(rng).unwrap())
        .collect();
    FuncType::new(params, results)
}

fn gen_func(
    rng: &mut impl Rng,
    ty: FuncType,
    callees: &[(u32, FuncType)],
    cfg: &GenConfig,
) -> FuncDef {
    let mut locals = TYPES.to_vec();
    for _ in 0..rng.gen_range(0..3) {
        locals.push(*TYPES.choose(rng).unwrap());
    }
    let all: Vec<ValueType> = ty.params.iter().chain(&locals).copied().collect();
    let mut g = BodyGen {
        rng,
        locals: &all,
        callees,
        attack: cfg.attack,
        home: 0,
        heap: cfg.heap_size,
        used: 0,
        budget: cfg.max_instrs,
    };
    // The head allocates into a handle local so later abuse has a target.
    let h = ty.params.len() as u32 + 2;
    g.home = h;
    let n = *[16, 32, 64].choose(g.rng).unwrap();
    let mut body = vec![Instr::i32(n), Instr::NewSegment, Instr::Set(h)];
    // Attackers mostly go after handles they are given.
    if let Some(p) = ty.params.iter().position(|&t| t == ValueType::Handle) {
        if cfg.attack && g.rng.gen_bool(0.7) {
            g.home = p as u32;
        }
    }
    g.used = 3;
    body.extend(g.seq(&ty.results));
    FuncDef { ty, locals, body }
}

/// Functions `first..first + types.len()`, each calling only `imports` and
/// later functions.
fn gen_funcs(
    rng: &mut impl Rng,
    imports: &[FuncType],
    types: &[FuncType],
    first: u32,
    cfg: &GenConfig,
) -> Vec<FuncDef> {
    (0..types.len())
        .map(|i| {
            let mut callees: Vec<(u32, FuncType)> = imports
                .iter()
                .enumerate()
                .map(|(k, t)| (k as u32, t.clone()))
                .collect();
            callees.extend(
                (i + 1..types.len()).map(|j| (first + j as u32, types[j].clone())),
            );
            gen_func(rng, types[i].clone(), &callees, cfg)
        })
        .collect()
}

fn func_types(rng: &mut impl Rng, n: usize, entry_results: bool) -> Vec<FuncType> {
    let mut types = vec![FuncType::new(
        vec![],
        if entry_results && rng.gen_bool(0.5) {
            vec![ValueType::I32]
        } else {
            vec![]
        },
    )];
    types.extend((1..n).map(|_| random_type(rng)));
    types
}

/// A whole module with at most `cfg.max_funcs` functions.
pub fn gen_module(rng: &mut impl Rng, cfg: &GenConfig) -> ModuleDef {
    let n = rng.gen_range(1..=cfg.max_funcs);
    let types = func_types(rng, n, true);
    ModuleDef {
        funcs: gen_funcs(rng, &[], &types, 0, cfg),
        imports: vec![],
        heap_size: cfg.heap_size,
        segment_size: cfg.segment_size,
    }
}

pub fn gen_module_seeded(seed: u64, cfg: &GenConfig) -> ModuleDef {
    gen_module(&mut ChaCha8Rng::seed_from_u64(seed), cfg)
}

/// Import signatures that carry handles across the boundary.
fn victim_imports(rng: &mut impl Rng) -> Vec<FuncType> {
    let h = ValueType::Handle;
    let pool = [
        FuncType::new(vec![h], vec![h]),
        FuncType::new(vec![h], vec![]),
        FuncType::new(vec![], vec![h]),
        FuncType::new(vec![h, ValueType::I32], vec![ValueType::I32]),
        FuncType::new(vec![h, h], vec![h]),
    ];
    let n = rng.gen_range(1..=2);
    (0..n).map(|_| pool.choose(rng).unwrap().clone()).collect()
}

/// A module with imports whose code hands its own segments to them.
pub fn gen_victim(rng: &mut impl Rng, cfg: &GenConfig) -> ModuleDef {
    let imports = victim_imports(rng);
    let n = rng.gen_range(1..=cfg.max_funcs);
    let types = func_types(rng, n, true);
    let victim_cfg = GenConfig {
        attack: false,
        ..*cfg
    };
    let mut funcs = gen_funcs(rng, &imports, &types, imports.len() as u32, &victim_cfg);
    // Make sure the entry reaches every import at least once, right after
    // its head allocation so the generated tail still ends with the result.
    let entry = &mut funcs[0];
    let Instr::Set(h) = entry.body[2] else {
        unreachable!("entry head stores its segment")
    };
    // Results land in a fresh local so the entry's own segment survives.
    let received = entry.num_locals() as u32;
    entry.locals.push(ValueType::Handle);
    let slot = |t: ValueType| match t {
        ValueType::Handle => received,
        ValueType::I32 => entry.ty.params.len() as u32,
        _ => entry.ty.params.len() as u32 + 1,
    };
    let mut prefix = Vec::new();
    for (k, ty) in imports.iter().enumerate() {
        for p in &ty.params {
            prefix.push(match p {
                ValueType::Handle => Instr::Get(h),
                _ => Instr::i32(k as i32 * 4),
            });
        }
        prefix.push(Instr::Call(k as u32));
        for &r in ty.results.iter().rev() {
            prefix.push(Instr::Set(slot(r)));
        }
        if ty.results == [ValueType::Handle] {
            prefix.extend([
                Instr::Get(received),
                Instr::SegLoad(ValueType::I32),
                Instr::Set(slot(ValueType::I32)),
            ]);
        }
    }
    entry.body.splice(3..3, prefix);
    ModuleDef {
        funcs,
        imports,
        heap_size: cfg.heap_size,
        segment_size: cfg.segment_size,
    }
}

pub fn gen_victim_seeded(seed: u64, cfg: &GenConfig) -> ModuleDef {
    gen_victim(&mut ChaCha8Rng::seed_from_u64(seed), cfg)
}

/// A whole context for `m`: function 0 is the context's own entry and
/// function `k + 1` implements import `k`.
pub fn fuzz_attacker(m: &ModuleDef, seed: u64) -> ModuleDef {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a77a_c4e5);
    let cfg = GenConfig {
        attack: true,
        ..GenConfig::default()
    };
    let mut types = vec![FuncType::new(vec![], vec![])];
    types.extend(m.imports.iter().cloned());
    let extra = rng.gen_range(0..=1);
    types.extend((0..extra).map(|_| random_type(&mut rng)));
    ModuleDef {
        funcs: gen_funcs(&mut rng, &[], &types, 0, &cfg),
        imports: vec![],
        heap_size: cfg.heap_size,
        segment_size: cfg.segment_size,
    }
}
