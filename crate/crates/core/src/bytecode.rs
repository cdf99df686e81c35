//! Bytecode image: data model, instruction set and the `.lpx` byte format.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "MLPX" | u16 version
//! u32 n | n x const        (tag u8: 0 atom, 1 int, 2 real, 3 string, 4 functor)
//! u32 n | n x template     (u16 reg_base, node)
//! u32 n | n x extern       (lib, symbol, pred, u16 arity, u8 regcl)
//! u32 n | n x predicate    (name, u16 arity, u32 code offset)
//! u32 n | n x instruction  (u8 opcode, operands)
//! ```
//!
//! Strings are `u32 length + UTF-8 bytes`. Register and index operands are
//! u16, labels and code offsets u32. See `docs/bytecode.md` for the full
//! table of opcodes.

use std::fmt;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"MLPX";
pub const FORMAT_VERSION: u16 = 1;
/// Size of the argument register file, A1..A64.
pub const NUM_REGISTERS: u16 = 64;

/// 1-based argument register index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(pub u16);

impl Reg {
    pub fn slot(self) -> usize {
        usize::from(self.0) - 1
    }

    fn is_valid(self) -> bool {
        (1..=NUM_REGISTERS).contains(&self.0)
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}", self.0)
    }
}

/// Extern-call operand before loading: index into the image's extern table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExternIndex(pub u16);

/// Extern-call operand after loading: index into the resolved-handle array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HandleIndex(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IntrinsicId {
    Solve = 0,
    Not = 1,
    Eval = 2,
    Lt = 3,
    Gt = 4,
    Le = 5,
    Ge = 6,
    EqNum = 7,
}

impl IntrinsicId {
    pub const ALL: [IntrinsicId; 8] = [
        IntrinsicId::Solve,
        IntrinsicId::Not,
        IntrinsicId::Eval,
        IntrinsicId::Lt,
        IntrinsicId::Gt,
        IntrinsicId::Le,
        IntrinsicId::Ge,
        IntrinsicId::EqNum,
    ];

    pub fn from_u16(v: u16) -> Option<Self> {
        Self::ALL.get(usize::from(v)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            IntrinsicId::Solve => "solve",
            IntrinsicId::Not => "not",
            IntrinsicId::Eval => "eval",
            IntrinsicId::Lt => "lt",
            IntrinsicId::Gt => "gt",
            IntrinsicId::Le => "le",
            IntrinsicId::Ge => "ge",
            IntrinsicId::EqNum => "eq_num",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            IntrinsicId::Solve | IntrinsicId::Not => 1,
            _ => 2,
        }
    }

    /// Source-level predicate names bound to each intrinsic.
    pub fn from_source_name(name: &str, arity: usize) -> Option<Self> {
        let id = match name {
            "solve" => IntrinsicId::Solve,
            "not" => IntrinsicId::Not,
            "is" | "eval" => IntrinsicId::Eval,
            "<" => IntrinsicId::Lt,
            ">" => IntrinsicId::Gt,
            "=<" => IntrinsicId::Le,
            ">=" => IntrinsicId::Ge,
            "=:=" => IntrinsicId::EqNum,
            _ => return None,
        };
        (id.arity() == arity).then_some(id)
    }

    pub fn is_source_name(name: &str) -> bool {
        matches!(
            name,
            "solve" | "not" | "is" | "eval" | "<" | ">" | "=<" | ">=" | "=:="
        )
    }
}

#[derive(Debug, Clone)]
pub enum Const {
    Atom(String),
    Int(i64),
    Real(f64),
    Str(String),
    /// Functor of a compound, or a predicate reference (arity may be 0).
    Functor(String, u16),
}

impl PartialEq for Const {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Const::Atom(a), Const::Atom(b)) => a == b,
            (Const::Int(a), Const::Int(b)) => a == b,
            (Const::Real(a), Const::Real(b)) => a.to_bits() == b.to_bits(),
            (Const::Str(a), Const::Str(b)) => a == b,
            (Const::Functor(a, n), Const::Functor(b, m)) => a == b && n == m,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TemplateNode {
    /// Clause variable `index`; `first` marks its first occurrence in the clause.
    Slot { index: u16, first: bool },
    /// Constant-pool reference (atom, int, real or string).
    Const(u32),
    /// Compound; `functor` references a `Const::Functor` of matching arity.
    Cmp {
        functor: u32,
        args: Vec<TemplateNode>,
    },
}

impl TemplateNode {
    pub fn for_each_const_mut(&mut self, f: &mut impl FnMut(&mut u32)) {
        match self {
            TemplateNode::Slot { .. } => {}
            TemplateNode::Const(c) => f(c),
            TemplateNode::Cmp { functor, args } => {
                f(functor);
                for a in args {
                    a.for_each_const_mut(f);
                }
            }
        }
    }
}

/// Term shape whose variable leaves are clause slots. Slot `k` lives in
/// register `reg_base + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TermTemplate {
    pub reg_base: u16,
    pub root: TemplateNode,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExternEntry {
    pub lib_name: String,
    pub entry_symbol: String,
    pub pred_name: String,
    pub arity: u16,
    pub regcl: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredEntry {
    pub name: String,
    pub arity: u16,
    pub offset: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction<X = ExternIndex> {
    Allocate(u16),
    Deallocate,
    /// Operand is a constant-pool index of a `Const::Functor` naming the callee.
    Call(u16),
    Execute(u16),
    Proceed,
    TryMeElse(u32),
    RetryMeElse(u32),
    TrustMe,
    Fail,
    GetTemplate(u16, Reg),
    PutTemplate(u16, Reg),
    /// Copy the first register into the second.
    MoveReg(Reg, Reg),
    StoreEnv(Reg, u16),
    LoadEnv(u16, Reg),
    Intrinsic(IntrinsicId),
    CallExtern(X),
    ExecuteExtern(X),
    Halt,
}

impl<X> Instruction<X> {
    pub fn map_extern<Y>(self, f: impl FnOnce(X) -> Y) -> Instruction<Y> {
        use Instruction::*;
        match self {
            Allocate(n) => Allocate(n),
            Deallocate => Deallocate,
            Call(p) => Call(p),
            Execute(p) => Execute(p),
            Proceed => Proceed,
            TryMeElse(l) => TryMeElse(l),
            RetryMeElse(l) => RetryMeElse(l),
            TrustMe => TrustMe,
            Fail => Fail,
            GetTemplate(t, r) => GetTemplate(t, r),
            PutTemplate(t, r) => PutTemplate(t, r),
            MoveReg(a, b) => MoveReg(a, b),
            StoreEnv(r, s) => StoreEnv(r, s),
            LoadEnv(s, r) => LoadEnv(s, r),
            Intrinsic(i) => Intrinsic(i),
            CallExtern(x) => CallExtern(f(x)),
            ExecuteExtern(x) => ExecuteExtern(f(x)),
            Halt => Halt,
        }
    }

    pub fn label(&self) -> Option<u32> {
        match self {
            Instruction::TryMeElse(l) | Instruction::RetryMeElse(l) => Some(*l),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BytecodeImage {
    pub version: u16,
    pub consts: Vec<Const>,
    pub templates: Vec<TermTemplate>,
    pub externs: Vec<ExternEntry>,
    pub preds: Vec<PredEntry>,
    pub code: Vec<Instruction>,
}

impl Default for BytecodeImage {
    fn default() -> Self {
        BytecodeImage {
            version: FORMAT_VERSION,
            consts: Vec::new(),
            templates: Vec::new(),
            externs: Vec::new(),
            preds: Vec::new(),
            code: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic: not an .lpx image")]
    BadMagic,
    #[error("unsupported image version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u16),
    #[error("truncated {0} segment")]
    Truncated(&'static str),
    #[error("unknown tag {tag} in {segment} segment")]
    BadTag { segment: &'static str, tag: u8 },
    #[error("invalid UTF-8 in {0} segment")]
    InvalidUtf8(&'static str),
    #[error("{0} trailing bytes after the code segment")]
    TrailingBytes(usize),
    #[error("invalid image: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> FormatError {
    FormatError::Invalid(msg.into())
}

// ---- writer ----

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn count(&mut self, n: usize) {
        self.u32(n as u32);
    }

    fn node(&mut self, n: &TemplateNode) {
        match n {
            TemplateNode::Slot { index, first } => {
                self.u8(0);
                self.u16(*index);
                self.u8(u8::from(*first));
            }
            TemplateNode::Const(c) => {
                self.u8(1);
                self.u32(*c);
            }
            TemplateNode::Cmp { functor, args } => {
                self.u8(2);
                self.u32(*functor);
                self.u16(args.len() as u16);
                for a in args {
                    self.node(a);
                }
            }
        }
    }

    fn instruction(&mut self, i: &Instruction) {
        use Instruction::*;
        match *i {
            Allocate(n) => {
                self.u8(0);
                self.u16(n);
            }
            Deallocate => self.u8(1),
            Call(p) => {
                self.u8(2);
                self.u16(p);
            }
            Execute(p) => {
                self.u8(3);
                self.u16(p);
            }
            Proceed => self.u8(4),
            TryMeElse(l) => {
                self.u8(5);
                self.u32(l);
            }
            RetryMeElse(l) => {
                self.u8(6);
                self.u32(l);
            }
            TrustMe => self.u8(7),
            Fail => self.u8(8),
            GetTemplate(t, r) => {
                self.u8(9);
                self.u16(t);
                self.u16(r.0);
            }
            PutTemplate(t, r) => {
                self.u8(10);
                self.u16(t);
                self.u16(r.0);
            }
            MoveReg(a, b) => {
                self.u8(11);
                self.u16(a.0);
                self.u16(b.0);
            }
            StoreEnv(r, s) => {
                self.u8(12);
                self.u16(r.0);
                self.u16(s);
            }
            LoadEnv(s, r) => {
                self.u8(13);
                self.u16(s);
                self.u16(r.0);
            }
            Intrinsic(id) => {
                self.u8(14);
                self.u16(id as u16);
            }
            CallExtern(x) => {
                self.u8(15);
                self.u16(x.0);
            }
            ExecuteExtern(x) => {
                self.u8(16);
                self.u16(x.0);
            }
            Halt => self.u8(17),
        }
    }
}

// ---- reader ----

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
    segment: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.at < n {
            return Err(FormatError::Truncated(self.segment));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, FormatError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_bits(u64::from_le_bytes(
            self.take(8)?.try_into().unwrap(),
        )))
    }
    fn str(&mut self) -> Result<String, FormatError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| FormatError::InvalidUtf8(self.segment))
    }

    /// Reads a segment entry count, bounded by the bytes that remain so a
    /// corrupted count cannot trigger a huge allocation.
    fn count(&mut self, min_entry: usize) -> Result<usize, FormatError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_entry) > self.buf.len() - self.at {
            return Err(FormatError::Truncated(self.segment));
        }
        Ok(n)
    }

    fn bad_tag(&self, tag: u8) -> FormatError {
        FormatError::BadTag {
            segment: self.segment,
            tag,
        }
    }

    fn node(&mut self, depth: usize) -> Result<TemplateNode, FormatError> {
        if depth > 10_000 {
            return Err(invalid("template nesting too deep"));
        }
        match self.u8()? {
            0 => {
                let index = self.u16()?;
                let first = match self.u8()? {
                    0 => false,
                    1 => true,
                    t => return Err(self.bad_tag(t)),
                };
                Ok(TemplateNode::Slot { index, first })
            }
            1 => Ok(TemplateNode::Const(self.u32()?)),
            2 => {
                let functor = self.u32()?;
                let n = usize::from(self.u16()?);
                let mut args = Vec::with_capacity(n.min(self.buf.len() - self.at));
                for _ in 0..n {
                    args.push(self.node(depth + 1)?);
                }
                Ok(TemplateNode::Cmp { functor, args })
            }
            t => Err(self.bad_tag(t)),
        }
    }

    fn reg(&mut self) -> Result<Reg, FormatError> {
        Ok(Reg(self.u16()?))
    }

    fn instruction(&mut self) -> Result<Instruction, FormatError> {
        use Instruction::*;
        Ok(match self.u8()? {
            0 => Allocate(self.u16()?),
            1 => Deallocate,
            2 => Call(self.u16()?),
            3 => Execute(self.u16()?),
            4 => Proceed,
            5 => TryMeElse(self.u32()?),
            6 => RetryMeElse(self.u32()?),
            7 => TrustMe,
            8 => Fail,
            9 => GetTemplate(self.u16()?, self.reg()?),
            10 => PutTemplate(self.u16()?, self.reg()?),
            11 => MoveReg(self.reg()?, self.reg()?),
            12 => StoreEnv(self.reg()?, self.u16()?),
            13 => LoadEnv(self.u16()?, self.reg()?),
            14 => {
                let id = self.u16()?;
                Intrinsic(
                    IntrinsicId::from_u16(id)
                        .ok_or_else(|| invalid(format!("unknown intrinsic id {id}")))?,
                )
            }
            15 => CallExtern(ExternIndex(self.u16()?)),
            16 => ExecuteExtern(ExternIndex(self.u16()?)),
            17 => Halt,
            t => return Err(self.bad_tag(t)),
        })
    }
}

impl BytecodeImage {
    /// Deterministic `.lpx` encoding.
    pub fn serialize(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(&MAGIC);
        w.u16(self.version);

        w.count(self.consts.len());
        for c in &self.consts {
            match c {
                Const::Atom(s) => {
                    w.u8(0);
                    w.str(s);
                }
                Const::Int(v) => {
                    w.u8(1);
                    w.i64(*v);
                }
                Const::Real(v) => {
                    w.u8(2);
                    w.f64(*v);
                }
                Const::Str(s) => {
                    w.u8(3);
                    w.str(s);
                }
                Const::Functor(s, n) => {
                    w.u8(4);
                    w.str(s);
                    w.u16(*n);
                }
            }
        }

        w.count(self.templates.len());
        for t in &self.templates {
            w.u16(t.reg_base);
            w.node(&t.root);
        }

        w.count(self.externs.len());
        for e in &self.externs {
            w.str(&e.lib_name);
            w.str(&e.entry_symbol);
            w.str(&e.pred_name);
            w.u16(e.arity);
            w.u8(u8::from(e.regcl));
        }

        w.count(self.preds.len());
        for p in &self.preds {
            w.str(&p.name);
            w.u16(p.arity);
            w.u32(p.offset);
        }

        w.count(self.code.len());
        for i in &self.code {
            w.instruction(i);
        }
        w.0
    }

    /// Decodes and fully validates an image.
    pub fn deserialize(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let mut r = Reader {
            buf: bytes,
            at: 4,
            segment: "header",
        };
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }

        r.segment = "const_pool";
        let n = r.count(5)?;
        let mut consts = Vec::with_capacity(n);
        for _ in 0..n {
            consts.push(match r.u8()? {
                0 => Const::Atom(r.str()?),
                1 => Const::Int(r.i64()?),
                2 => Const::Real(r.f64()?),
                3 => Const::Str(r.str()?),
                4 => {
                    let s = r.str()?;
                    Const::Functor(s, r.u16()?)
                }
                t => return Err(r.bad_tag(t)),
            });
        }

        r.segment = "template_pool";
        let n = r.count(5)?;
        let mut templates = Vec::with_capacity(n);
        for _ in 0..n {
            let reg_base = r.u16()?;
            templates.push(TermTemplate {
                reg_base,
                root: r.node(0)?,
            });
        }

        r.segment = "extern_table";
        let n = r.count(15)?;
        let mut externs = Vec::with_capacity(n);
        for _ in 0..n {
            let lib_name = r.str()?;
            let entry_symbol = r.str()?;
            let pred_name = r.str()?;
            let arity = r.u16()?;
            let regcl = match r.u8()? {
                0 => false,
                1 => true,
                t => return Err(r.bad_tag(t)),
            };
            externs.push(ExternEntry {
                lib_name,
                entry_symbol,
                pred_name,
                arity,
                regcl,
            });
        }

        r.segment = "predicate_table";
        let n = r.count(10)?;
        let mut preds = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.str()?;
            let arity = r.u16()?;
            preds.push(PredEntry {
                name,
                arity,
                offset: r.u32()?,
            });
        }

        r.segment = "code";
        let n = r.count(1)?;
        let mut code = Vec::with_capacity(n);
        for _ in 0..n {
            code.push(r.instruction()?);
        }
        if r.at != bytes.len() {
            return Err(FormatError::TrailingBytes(bytes.len() - r.at));
        }

        let img = BytecodeImage {
            version,
            consts,
            templates,
            externs,
            preds,
            code,
        };
        img.validate()?;
        Ok(img)
    }

    /// Checks every operand against the segment it references.
    pub fn validate(&self) -> Result<(), FormatError> {
        let nconst = self.consts.len();
        let is_functor = |c: u32, arity: Option<usize>| -> bool {
            matches!(self.consts.get(c as usize),
                Some(Const::Functor(_, n)) if arity.is_none_or(|a| usize::from(*n) == a))
        };

        for (ti, t) in self.templates.iter().enumerate() {
            if t.reg_base == 0 {
                return Err(invalid(format!("template t{ti} has register base 0")));
            }
            let mut stack = vec![&t.root];
            while let Some(node) = stack.pop() {
                match node {
                    TemplateNode::Slot { index, .. } => {
                        if u32::from(t.reg_base) + u32::from(*index) > u32::from(NUM_REGISTERS) {
                            return Err(invalid(format!(
                                "template t{ti} slot {index} lies outside the register file"
                            )));
                        }
                    }
                    TemplateNode::Const(c) => match self.consts.get(*c as usize) {
                        None => {
                            return Err(invalid(format!(
                                "template t{ti} references constant {c} of {nconst}"
                            )))
                        }
                        Some(Const::Functor(..)) => {
                            return Err(invalid(format!(
                                "template t{ti} uses functor {c} as a leaf"
                            )))
                        }
                        Some(_) => {}
                    },
                    TemplateNode::Cmp { functor, args } => {
                        if args.is_empty() || !is_functor(*functor, Some(args.len())) {
                            return Err(invalid(format!(
                                "template t{ti} compound references bad functor {functor}"
                            )));
                        }
                        stack.extend(args.iter());
                    }
                }
            }
        }

        for (i, e) in self.externs.iter().enumerate() {
            if e.entry_symbol.is_empty() || e.pred_name.is_empty() || e.lib_name.is_empty() {
                return Err(invalid(format!("extern entry {i} has an empty name")));
            }
        }

        let ncode = self.code.len();
        for (i, p) in self.preds.iter().enumerate() {
            if p.offset as usize >= ncode {
                return Err(invalid(format!(
                    "predicate {}/{} starts at {} past the end of code",
                    p.name, p.arity, p.offset
                )));
            }
            if self.preds[..i]
                .iter()
                .any(|q| q.name == p.name && q.arity == p.arity)
            {
                return Err(invalid(format!(
                    "predicate {}/{} defined twice",
                    p.name, p.arity
                )));
            }
        }

        for (pc, ins) in self.code.iter().enumerate() {
            let bad = |what: String| Err(invalid(format!("instruction {pc}: {what}")));
            use Instruction::*;
            match *ins {
                Call(p) | Execute(p) if !is_functor(u32::from(p), None) => {
                    return bad(format!("predicate reference {p} is not a functor constant"))
                }
                TryMeElse(l) | RetryMeElse(l) if l as usize >= ncode => {
                    return bad(format!("label {l} out of range"))
                }
                GetTemplate(t, r) | PutTemplate(t, r) => {
                    if usize::from(t) >= self.templates.len() {
                        return bad(format!("template t{t} out of range"));
                    }
                    if !r.is_valid() {
                        return bad(format!("register {} out of range", r.0));
                    }
                }
                MoveReg(a, b) if !a.is_valid() || !b.is_valid() => {
                    return bad("register out of range".into())
                }
                StoreEnv(r, _) | LoadEnv(_, r) if !r.is_valid() => {
                    return bad(format!("register {} out of range", r.0))
                }
                CallExtern(x) | ExecuteExtern(x) if usize::from(x.0) >= self.externs.len() => {
                    return bad(format!(
                        "extern index {} out of range for extern table of {}",
                        x.0,
                        self.externs.len()
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn functor(&self, index: u16) -> Option<(&str, u16)> {
        match self.consts.get(usize::from(index)) {
            Some(Const::Functor(n, a)) => Some((n, *a)),
            _ => None,
        }
    }

    pub fn format_instruction(&self, ins: &Instruction) -> String {
        use Instruction::*;
        let pred = |p: u16| match self.functor(p) {
            Some((n, a)) => format!("{n}/{a}"),
            None => format!("c{p}"),
        };
        let ext = |x: ExternIndex| match self.externs.get(usize::from(x.0)) {
            Some(e) => format!(
                "{} ; {}/{} @ {}:{}",
                x.0, e.pred_name, e.arity, e.lib_name, e.entry_symbol
            ),
            None => x.0.to_string(),
        };
        match *ins {
            Allocate(n) => format!("allocate {n}"),
            Deallocate => "deallocate".into(),
            Call(p) => format!("call {}", pred(p)),
            Execute(p) => format!("execute {}", pred(p)),
            Proceed => "proceed".into(),
            TryMeElse(l) => format!("try_me_else {l}"),
            RetryMeElse(l) => format!("retry_me_else {l}"),
            TrustMe => "trust_me".into(),
            Fail => "fail".into(),
            GetTemplate(t, r) => format!("get_template t{t}, {r}"),
            PutTemplate(t, r) => format!("put_template t{t}, {r}"),
            MoveReg(a, b) => format!("move_reg {a}, {b}"),
            StoreEnv(r, s) => format!("store_env {r}, Y{s}"),
            LoadEnv(s, r) => format!("load_env Y{s}, {r}"),
            Intrinsic(id) => format!("intrinsic {}", id.name()),
            CallExtern(x) => format!("call_extern {}", ext(x)),
            ExecuteExtern(x) => format!("execute_extern {}", ext(x)),
            Halt => "halt".into(),
        }
    }

    pub fn format_template(&self, index: usize) -> String {
        let t = &self.templates[index];
        let mut out = String::new();
        self.format_node(t, &t.root, &mut out);
        out
    }

    fn format_node(&self, t: &TermTemplate, n: &TemplateNode, out: &mut String) {
        match n {
            TemplateNode::Slot { index, first } => {
                out.push_str(&format!(
                    "{}S{index}@A{}",
                    if *first { "^" } else { "" },
                    t.reg_base + index
                ));
            }
            TemplateNode::Const(c) => out.push_str(&match &self.consts[*c as usize] {
                Const::Atom(a) => a.clone(),
                Const::Int(i) => i.to_string(),
                Const::Real(r) => crate::terms::format_real(*r),
                Const::Str(s) => crate::terms::quote_str(s),
                Const::Functor(f, a) => format!("{f}/{a}"),
            }),
            TemplateNode::Cmp { functor, args } => {
                let name = match &self.consts[*functor as usize] {
                    Const::Functor(f, _) => f.as_str(),
                    _ => "?",
                };
                out.push_str(name);
                out.push('(');
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    self.format_node(t, a, out);
                }
                out.push(')');
            }
        }
    }
}

/// One instruction per line, prefixed by its code offset; predicate entry
/// points get a `name/arity:` label line.
pub fn disassemble(img: &BytecodeImage) -> String {
    let mut out = String::new();
    for (pc, ins) in img.code.iter().enumerate() {
        for p in img.preds.iter().filter(|p| p.offset as usize == pc) {
            out.push_str(&format!("{}/{}:\n", p.name, p.arity));
        }
        out.push_str(&format!("{pc:>6}  {}\n", img.format_instruction(ins)));
    }
    out
}
