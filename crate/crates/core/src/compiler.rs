//! Compiling the C subset to handle-based bytecode.
//!
//! Every pointer becomes a handle and every heap access a segment access.
//! Field lookup slices the struct handle down to the field, so an overflow
//! out of one field traps before it reaches the next. Generated code never
//! touches linear memory.
//!
//! Each compiled function keeps its parameter and variables in the first
//! local slots, followed by three scratch slots: an `i32` and a `handle`
//! for discarded values, and a `handle` that is never written and so always
//! holds the invalid null handle.

use crate::bytecode::{BinOp, FuncDef, FuncType, Instr, ModuleDef, ValueType};
use crate::minic::ast::{CheckedModule, SrcOp, SrcType, TExpr, TFunction, TKind, WordType};
use crate::minic::{load_src, SrcError};
use crate::monitor::Shade;
use crate::segmem::HANDLE_SIZE;

pub const DEFAULT_SEGMENT_SIZE: u32 = 1 << 16;

/// Byte sizes, alignments, and field offsets of source types.
#[derive(Debug, Clone, Copy)]
pub struct Layout<'m> {
    m: &'m CheckedModule,
}

impl<'m> Layout<'m> {
    pub fn new(m: &'m CheckedModule) -> Layout<'m> {
        Layout { m }
    }

    pub fn module(&self) -> &'m CheckedModule {
        self.m
    }

    pub fn sizeof_ty(&self, t: &SrcType) -> u32 {
        match t {
            SrcType::Int => 4,
            SrcType::Ptr(_) => HANDLE_SIZE as u32,
        }
    }

    pub fn align_ty(&self, t: &SrcType) -> u32 {
        self.sizeof_ty(t)
    }

    pub fn sizeof(&self, w: &WordType) -> u32 {
        match w {
            WordType::Scalar(t) => self.sizeof_ty(t),
            WordType::Array(n, t) => n * self.sizeof_ty(t),
            WordType::Struct(s) => {
                let def = self.m.struct_def(s);
                let last = def.fields.len() - 1;
                let end = self.field_offset(s, last) + self.sizeof(&def.fields[last].1);
                end.next_multiple_of(self.align(w))
            }
        }
    }

    pub fn align(&self, w: &WordType) -> u32 {
        match w {
            WordType::Scalar(t) | WordType::Array(_, t) => self.align_ty(t),
            WordType::Struct(s) => self
                .m
                .struct_def(s)
                .fields
                .iter()
                .map(|(_, fw)| self.align(fw))
                .max()
                .unwrap_or(1),
        }
    }

    /// Byte offset of field `k` of struct `s`.
    pub fn field_offset(&self, s: &str, k: usize) -> u32 {
        let fields = &self.m.struct_def(s).fields;
        let mut off = 0u32;
        for (i, (_, w)) in fields.iter().enumerate() {
            off = off.next_multiple_of(self.align(w));
            if i == k {
                return off;
            }
            off += self.sizeof(w);
        }
        unreachable!("field index {k} out of range for `{s}`")
    }

    /// Slice operands `(o1, o2)` for field `k`: bytes skipped at the front
    /// and bytes removed from the bound.
    pub fn field_slice(&self, s: &str, k: usize) -> (u32, u32) {
        let o1 = self.field_offset(s, k);
        let szf = self.sizeof(&self.m.struct_def(s).fields[k].1);
        (o1, self.sizeof(&WordType::Struct(s.to_string())) - szf)
    }

    /// Byte offset of cell `i` counted from the start of an object of type
    /// `w`, continuing periodically past either end.
    pub fn cell_to_byte(&self, w: &WordType, i: i64) -> i64 {
        let cells = self.m.cells(w) as i64;
        let whole = i.div_euclid(cells) * self.sizeof(w) as i64;
        whole + self.cell_within(w, i.rem_euclid(cells) as u32) as i64
    }

    fn cell_within(&self, w: &WordType, r: u32) -> u32 {
        match w {
            WordType::Scalar(_) => 0,
            WordType::Array(_, t) => r * self.sizeof_ty(t),
            WordType::Struct(s) => {
                let fields = &self.m.struct_def(s).fields;
                let mut first = 0;
                for (k, (_, fw)) in fields.iter().enumerate() {
                    let c = self.m.cells(fw);
                    if r < first + c {
                        return self.field_offset(s, k) + self.cell_within(fw, r - first);
                    }
                    first += c;
                }
                unreachable!("cell {r} past the end of `{s}`")
            }
        }
    }

    /// Shade of each byte of one object of type `w`: field `k` gets shade
    /// `k`, padding gets a shade no field uses.
    pub fn byte_shading(&self, w: &WordType) -> Vec<Shade> {
        let size = self.sizeof(w) as usize;
        match w {
            WordType::Struct(s) => {
                let fields = &self.m.struct_def(s).fields;
                let mut phi = vec![fields.len() as Shade; size];
                for (k, (_, fw)) in fields.iter().enumerate() {
                    let o = self.field_offset(s, k) as usize;
                    let n = self.sizeof(fw) as usize;
                    phi[o..o + n].fill(k as Shade);
                }
                phi
            }
            _ => vec![0; size],
        }
    }
}

pub fn value_type(t: &SrcType) -> ValueType {
    match t {
        SrcType::Int => ValueType::I32,
        SrcType::Ptr(_) => ValueType::Handle,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompileOptions {
    pub segment_size: u32,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            segment_size: DEFAULT_SEGMENT_SIZE,
        }
    }
}

/// Local slots of one compiled function past its own variables.
#[derive(Debug, Clone, Copy)]
pub struct Scratch {
    pub i32_slot: u32,
    pub handle_slot: u32,
    pub null_slot: u32,
    /// Number of imports, for call index translation.
    pub imports: u32,
}

impl Scratch {
    pub fn for_function(f: &TFunction, imports: u32) -> Scratch {
        let n = 1 + f.vars.len() as u32;
        Scratch {
            i32_slot: n,
            handle_slot: n + 1,
            null_slot: n + 2,
            imports,
        }
    }

    fn drop_value(&self, t: &SrcType) -> Instr {
        match t {
            SrcType::Int => Instr::Set(self.i32_slot),
            SrcType::Ptr(_) => Instr::Set(self.handle_slot),
        }
    }

    fn coerce(&self, out: &mut Vec<Instr>) {
        out.push(Instr::Set(self.i32_slot));
        out.push(Instr::Get(self.null_slot));
    }

    /// Target index of source function `f`; the entry function sits
    /// between the imports and the compiled functions.
    pub fn target_func(&self, f: u32) -> u32 {
        if f < self.imports {
            f
        } else {
            f + 1
        }
    }
}

fn binop(op: SrcOp) -> BinOp {
    match op {
        SrcOp::Add => BinOp::Add,
        SrcOp::Sub => BinOp::Sub,
        SrcOp::Mul => BinOp::Mul,
        SrcOp::Div => BinOp::Div,
        SrcOp::Eq => BinOp::Eq,
        SrcOp::Lt => BinOp::Lt,
    }
}

pub fn compile_expr(l: &Layout<'_>, sc: &Scratch, e: &TExpr) -> Vec<Instr> {
    let mut out = Vec::new();
    emit(l, sc, e, &mut out);
    out
}

fn emit(l: &Layout<'_>, sc: &Scratch, e: &TExpr, out: &mut Vec<Instr>) {
    use Instr as I;
    match &e.kind {
        TKind::Int(n) => out.push(I::i32(*n)),
        TKind::Var(i) => out.push(I::Get(*i)),
        TKind::Seq(a, b) => {
            emit(l, sc, a, out);
            out.push(sc.drop_value(&a.ty));
            emit(l, sc, b, out);
        }
        TKind::Bin(op, a, b) => {
            emit(l, sc, a, out);
            emit(l, sc, b, out);
            out.push(I::BinOp(ValueType::I32, binop(*op)));
        }
        TKind::PtrArith {
            sub,
            ptr,
            n,
            pointee,
        } => {
            emit(l, sc, ptr, out);
            if *sub {
                out.push(I::i32(0));
                emit(l, sc, n, out);
                out.push(I::BinOp(ValueType::I32, BinOp::Sub));
            } else {
                emit(l, sc, n, out);
            }
            out.push(I::i32(l.sizeof(pointee) as i32));
            out.push(I::BinOp(ValueType::I32, BinOp::Mul));
            out.push(I::HandleAdd);
        }
        TKind::Assign(i, v) => {
            emit(l, sc, v, out);
            out.push(I::Set(*i));
            out.push(I::i32(0));
        }
        TKind::Call {
            func,
            arg,
            bind,
            coerce,
            body,
        } => {
            emit(l, sc, arg, out);
            out.push(I::Call(sc.target_func(*func)));
            if *coerce {
                sc.coerce(out);
            }
            out.push(I::Set(*bind));
            emit(l, sc, body, out);
        }
        TKind::Deref(p) => {
            emit(l, sc, p, out);
            out.push(I::SegLoad(value_type(&e.ty)));
        }
        TKind::Write(p, v) => {
            emit(l, sc, p, out);
            emit(l, sc, v, out);
            out.push(I::SegStore(value_type(&v.ty)));
            out.push(I::i32(0));
        }
        TKind::If(c, t, f) => {
            emit(l, sc, c, out);
            out.push(I::If(compile_expr(l, sc, t), compile_expr(l, sc, f)));
        }
        TKind::Field { ptr, strukt, field } => {
            emit(l, sc, ptr, out);
            let (o1, o2) = l.field_slice(strukt, *field);
            out.push(I::i32(o1 as i32));
            out.push(I::i32(o2 as i32));
            out.push(I::Slice);
        }
        TKind::MallocArray(t, n) => {
            emit(l, sc, n, out);
            out.push(I::i32(l.sizeof_ty(t) as i32));
            out.push(I::BinOp(ValueType::I32, BinOp::Mul));
            out.push(I::NewSegment);
        }
        TKind::MallocSingle(w) => {
            out.push(I::i32(l.sizeof(w) as i32));
            out.push(I::NewSegment);
        }
        TKind::Free(p) => {
            emit(l, sc, p, out);
            out.push(I::SegFree);
            out.push(I::i32(0));
        }
        TKind::CoerceIntToPtr(v) => {
            emit(l, sc, v, out);
            sc.coerce(out);
        }
    }
}

fn compile_function(l: &Layout<'_>, f: &TFunction, imports: u32) -> FuncDef {
    let sc = Scratch::for_function(f, imports);
    let mut locals: Vec<ValueType> = f.vars.iter().map(value_type).collect();
    locals.extend([ValueType::I32, ValueType::Handle, ValueType::Handle]);
    FuncDef {
        ty: FuncType::new(vec![value_type(&f.param)], vec![value_type(&f.result)]),
        locals,
        body: compile_expr(l, &sc, &f.body),
    }
}

/// Compiles a checked module. Function 0 of the output is an entry that
/// calls `main` with a zero argument; source function `k` becomes
/// function `k + 1`.
pub fn compile_module(m: &CheckedModule, opts: &CompileOptions) -> ModuleDef {
    let l = Layout::new(m);
    let imports = m.imports.len() as u32;
    let main = &m.funcs[m.main];
    let arg = match main.param {
        SrcType::Int => Instr::i32(0),
        SrcType::Ptr(_) => Instr::Get(0),
    };
    let entry = FuncDef {
        ty: FuncType::new(vec![], vec![value_type(&main.result)]),
        locals: vec![ValueType::Handle],
        body: vec![arg, Instr::Call(imports + 1 + m.main as u32)],
    };
    let mut funcs = vec![entry];
    funcs.extend(m.funcs.iter().map(|f| compile_function(&l, f, imports)));
    ModuleDef {
        funcs,
        imports: m
            .imports
            .iter()
            .map(|i| FuncType::new(vec![value_type(&i.param)], vec![value_type(&i.result)]))
            .collect(),
        heap_size: m.heap,
        segment_size: opts.segment_size,
    }
}

/// Parses, checks, and compiles source text.
pub fn compile_src(text: &str, opts: &CompileOptions) -> Result<(CheckedModule, ModuleDef), SrcError> {
    let m = load_src(text)?;
    let out = compile_module(&m, opts);
    Ok((m, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::print_instrs;
    use crate::interp::{run, Outcome, RunConfig, Value};
    use crate::typecheck::typecheck_module;

    const DECLS: &str = "struct User { name: [int; 32], id: int }
        struct Node { v: int, next: ptr struct Node, w: int }";

    fn module(body: &str) -> CheckedModule {
        load_src(&format!(
            "module {{ {DECLS}
              fn main(x: int) -> int {{ var (p: ptr int, u: ptr struct User, r: int); {body} }}
              fn dbl(y: int) -> int {{ y * 2 }} }}"
        ))
        .unwrap()
    }

    /// Text of `main`'s body instructions.
    fn body_text(body: &str) -> String {
        let m = module(body);
        let out = compile_module(&m, &CompileOptions::default());
        let mut s = String::new();
        print_instrs(&mut s, &out.funcs[1 + m.main].body, 0);
        s.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn layout_sizes() {
        let m = module("0");
        let l = Layout::new(&m);
        let user = WordType::Struct("User".into());
        let node = WordType::Struct("Node".into());
        assert_eq!(l.sizeof(&user), 132);
        assert_eq!(l.field_slice("User", 0), (0, 4));
        assert_eq!(l.field_slice("User", 1), (128, 128));
        assert_eq!(l.sizeof(&node), 48);
        assert_eq!(l.field_offset("Node", 1), 16);
        assert_eq!(l.field_offset("Node", 2), 32);
        assert_eq!(l.field_slice("Node", 2), (32, 44));
        assert_eq!(l.cell_to_byte(&node, 1), 16);
        assert_eq!(l.cell_to_byte(&node, 4), 64);
        assert_eq!(l.cell_to_byte(&node, -1), -16);
        assert_eq!(l.cell_to_byte(&user, 33), 132);
        let phi = l.byte_shading(&node);
        assert_eq!((phi[0], phi[4], phi[16], phi[32], phi[36]), (0, 3, 1, 2, 3));
    }

    #[test]
    fn pointer_arithmetic() {
        assert_eq!(
            body_text("p = malloc<int>(4); *(p + 2)"),
            "i32.const 4 i32.const 4 i32.mul new_segment set 1 i32.const 0 set 4 \
             get 1 i32.const 2 i32.const 4 i32.mul handle.add i32.segload"
        );
        assert_eq!(
            body_text("*(p - x)"),
            "get 1 i32.const 0 get 0 i32.sub i32.const 4 i32.mul handle.add i32.segload"
        );
    }

    #[test]
    fn allocation() {
        assert_eq!(
            body_text("p = malloc<int>(10); 0"),
            "i32.const 10 i32.const 4 i32.mul new_segment set 1 i32.const 0 set 4 i32.const 0"
        );
        assert_eq!(
            body_text("u = malloc(struct User); 0"),
            "i32.const 132 new_segment set 2 i32.const 0 set 4 i32.const 0"
        );
    }

    #[test]
    fn field_lookup_slices() {
        assert_eq!(
            body_text("*u.name"),
            "get 2 i32.const 0 i32.const 4 slice i32.segload"
        );
        assert_eq!(
            body_text("u.id := 7"),
            "get 2 i32.const 128 i32.const 128 slice i32.const 7 i32.segstore i32.const 0"
        );
    }

    #[test]
    fn remaining_constructs() {
        assert_eq!(body_text("*p"), "get 1 i32.segload");
        assert_eq!(body_text("free(p)"), "get 1 segfree i32.const 0");
        assert_eq!(body_text("x < 2 == 1"), "get 0 i32.const 2 i32.lt_s i32.const 1 i32.eq");
        assert_eq!(
            body_text("if x { 1 } else { 2 }"),
            "get 0 if (then i32.const 1) (else i32.const 2)"
        );
        assert_eq!(
            body_text("let r = dbl(x) in r"),
            "get 0 call 2 set 3 get 3"
        );
        assert_eq!(
            body_text("p = 5; 0"),
            "i32.const 5 set 4 get 6 set 1 i32.const 0 set 4 i32.const 0"
        );
        assert_eq!(body_text("free(9)"), "i32.const 9 set 4 get 6 segfree i32.const 0");
    }

    #[test]
    fn module_shape_and_typing() {
        let m = module("let r = dbl(x) in r");
        let out = compile_module(&m, &CompileOptions::default());
        assert_eq!(out.funcs.len(), 3);
        assert_eq!(out.funcs[0].body, vec![Instr::i32(0), Instr::Call(1)]);
        assert_eq!(out.segment_size, DEFAULT_SEGMENT_SIZE);
        let wt = typecheck_module(&out).unwrap();
        let r = run(wt, &RunConfig::default()).unwrap();
        assert_eq!(r.outcome, Outcome::Returned(vec![Value::I32(0)]));
    }

    #[test]
    fn imports_keep_their_indices() {
        let m = load_src(
            "module { import fn ext(x: ptr int) -> int;
              fn main(x: int) -> int { var (r: int); let r = ext(x) in r } }",
        )
        .unwrap();
        let out = compile_module(&m, &CompileOptions::default());
        assert_eq!(out.imports, vec![FuncType::new(vec![ValueType::Handle], vec![ValueType::I32])]);
        assert_eq!(out.funcs[0].body[1], Instr::Call(2));
        assert!(out.funcs[1].body.contains(&Instr::Call(0)));
        typecheck_module(&out).unwrap();
    }

    #[test]
    fn compiled_struct_program_runs() {
        let m = module("u = malloc(struct User); (u.name + 31) := 5; u.id := 9; *(u.name + 31) + *u.id");
        let out = compile_module(&m, &CompileOptions::default());
        let r = run(typecheck_module(&out).unwrap(), &RunConfig::default()).unwrap();
        assert_eq!(r.outcome, Outcome::Returned(vec![Value::I32(14)]));
    }
}
