//! Term store, trail and first-order unification.
//!
//! Every machine value lives in a [`Store`] as a [`Cell`] addressed by a
//! [`TermId`]. Variables are cells that are either unbound or bound to another
//! cell; binding never overwrites anything else, so register contents stay
//! stable while the heap evolves. Every binding is recorded on the [`Trail`]
//! and can be undone by returning to a [`TrailMark`].

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Interned symbol (atom or functor name).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sym(u32);

impl Sym {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Default)]
pub struct Interner {
    names: Vec<Arc<str>>,
    index: HashMap<Arc<str>, Sym>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> Sym {
        if let Some(&sym) = self.index.get(name) {
            return sym;
        }
        let sym = Sym(self.names.len() as u32);
        let name: Arc<str> = Arc::from(name);
        self.names.push(name.clone());
        self.index.insert(name, sym);
        sym
    }

    pub fn lookup(&self, name: &str) -> Option<Sym> {
        self.index.get(name).copied()
    }

    pub fn name(&self, sym: Sym) -> &str {
        &self.names[sym.index()]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Address of a cell in a [`Store`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TermId(u32);

impl TermId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TermId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "_G{}", self.0)
    }
}

#[derive(Debug, Clone)]
pub enum Cell {
    /// `None` when unbound.
    Var(Option<TermId>),
    Int(i64),
    Real(f64),
    Str(Arc<str>),
    Atom(Sym),
    /// Arity is `args.len()`, always at least one.
    Cmp {
        functor: Sym,
        args: Box<[TermId]>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TrailError {
    #[error("stale trail mark: the trail was already undone past it")]
    StaleMark,
}

/// Opaque position on the trail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrailMark {
    len: usize,
    // Serial of the entry just below the mark, so a mark whose prefix was
    // undone and refilled is detected as stale.
    serial: u64,
}

impl TrailMark {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trail {
    entries: Vec<(TermId, u64)>,
    next_serial: u64,
}

impl Trail {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn mark(&self) -> TrailMark {
        TrailMark {
            len: self.entries.len(),
            serial: self.entries.last().map_or(0, |&(_, s)| s),
        }
    }

    fn is_live(&self, mark: TrailMark) -> bool {
        if mark.len == 0 {
            return true;
        }
        mark.len <= self.entries.len() && self.entries[mark.len - 1].1 == mark.serial
    }

    fn push(&mut self, var: TermId) {
        self.next_serial += 1;
        self.entries.push((var, self.next_serial));
    }
}

/// Heap of term cells plus the trail and symbol table that go with them.
#[derive(Debug, Clone, Default)]
pub struct Store {
    cells: Vec<Cell>,
    trail: Trail,
    pub symbols: Interner,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_symbols(symbols: Interner) -> Self {
        Store {
            cells: Vec::new(),
            trail: Trail::default(),
            symbols,
        }
    }

    fn push(&mut self, cell: Cell) -> TermId {
        let id = TermId(self.cells.len() as u32);
        self.cells.push(cell);
        id
    }

    pub fn new_var(&mut self) -> TermId {
        self.push(Cell::Var(None))
    }

    pub fn int(&mut self, v: i64) -> TermId {
        self.push(Cell::Int(v))
    }

    pub fn real(&mut self, v: f64) -> TermId {
        self.push(Cell::Real(v))
    }

    pub fn string(&mut self, s: &str) -> TermId {
        self.push(Cell::Str(Arc::from(s)))
    }

    pub fn shared_string(&mut self, s: Arc<str>) -> TermId {
        self.push(Cell::Str(s))
    }

    pub fn atom(&mut self, name: &str) -> TermId {
        let sym = self.symbols.intern(name);
        self.push(Cell::Atom(sym))
    }

    pub fn atom_sym(&mut self, sym: Sym) -> TermId {
        self.push(Cell::Atom(sym))
    }

    /// Builds `functor(args..)`; an empty argument list yields an atom.
    pub fn compound(&mut self, functor: &str, args: Vec<TermId>) -> TermId {
        let sym = self.symbols.intern(functor);
        self.compound_sym(sym, args)
    }

    pub fn compound_sym(&mut self, functor: Sym, args: Vec<TermId>) -> TermId {
        if args.is_empty() {
            self.push(Cell::Atom(functor))
        } else {
            self.push(Cell::Cmp {
                functor,
                args: args.into_boxed_slice(),
            })
        }
    }

    pub fn cell(&self, t: TermId) -> &Cell {
        &self.cells[t.index()]
    }

    pub fn heap_top(&self) -> usize {
        self.cells.len()
    }

    /// Drops every cell at or above `top`. Callers must have undone the
    /// trail past any binding of those cells first.
    pub fn truncate(&mut self, top: usize) {
        self.cells.truncate(top);
    }

    pub fn trail(&self) -> &Trail {
        &self.trail
    }

    pub fn deref(&self, mut t: TermId) -> TermId {
        while let Cell::Var(Some(next)) = self.cells[t.index()] {
            t = next;
        }
        t
    }

    pub fn is_unbound(&self, t: TermId) -> bool {
        matches!(self.cells[self.deref(t).index()], Cell::Var(None))
    }

    pub fn trail_mark(&self) -> TrailMark {
        self.trail.mark()
    }

    pub fn trail_undo(&mut self, mark: TrailMark) -> Result<(), TrailError> {
        if !self.trail.is_live(mark) {
            return Err(TrailError::StaleMark);
        }
        self.undo_to(mark.len);
        Ok(())
    }

    pub(crate) fn undo_to(&mut self, len: usize) {
        while self.trail.entries.len() > len {
            let (var, _) = self.trail.entries.pop().expect("non-empty trail");
            self.cells[var.index()] = Cell::Var(None);
        }
    }

    fn bind(&mut self, var: TermId, value: TermId) {
        debug_assert!(matches!(self.cells[var.index()], Cell::Var(None)));
        self.cells[var.index()] = Cell::Var(Some(value));
        self.trail.push(var);
    }

    /// True when the unbound variable `var` occurs in `t`.
    pub fn occurs(&self, var: TermId, t: TermId) -> bool {
        let mut stack = vec![t];
        while let Some(t) = stack.pop() {
            let t = self.deref(t);
            if t == var {
                return true;
            }
            if let Cell::Cmp { args, .. } = &self.cells[t.index()] {
                stack.extend(args.iter().copied());
            }
        }
        false
    }

    /// Unifies `a` and `b` with occurs check. On failure every binding made
    /// during the attempt has already been undone.
    pub fn unify(&mut self, a: TermId, b: TermId) -> bool {
        let start = self.trail.entries.len();
        let mut pending = vec![(a, b)];
        while let Some((x, y)) = pending.pop() {
            let x = self.deref(x);
            let y = self.deref(y);
            if x == y {
                continue;
            }
            let ok = match (&self.cells[x.index()], &self.cells[y.index()]) {
                (Cell::Var(None), Cell::Var(None)) => {
                    // younger variable points at the older one
                    let (young, old) = if x > y { (x, y) } else { (y, x) };
                    self.bind(young, old);
                    true
                }
                (Cell::Var(None), _) => self.bind_checked(x, y),
                (_, Cell::Var(None)) => self.bind_checked(y, x),
                (Cell::Int(p), Cell::Int(q)) => p == q,
                (Cell::Real(p), Cell::Real(q)) => p.to_bits() == q.to_bits(),
                (Cell::Str(p), Cell::Str(q)) => p == q,
                (Cell::Atom(p), Cell::Atom(q)) => p == q,
                (
                    Cell::Cmp {
                        functor: f,
                        args: xs,
                    },
                    Cell::Cmp {
                        functor: g,
                        args: ys,
                    },
                ) if f == g && xs.len() == ys.len() => {
                    pending.extend(xs.iter().copied().zip(ys.iter().copied()));
                    true
                }
                _ => false,
            };
            if !ok {
                self.undo_to(start);
                return false;
            }
        }
        true
    }

    fn bind_checked(&mut self, var: TermId, value: TermId) -> bool {
        if self.occurs(var, value) {
            return false;
        }
        self.bind(var, value);
        true
    }

    /// Reads a term back into an owned tree, following bindings.
    pub fn read(&self, t: TermId) -> Value {
        let t = self.deref(t);
        match &self.cells[t.index()] {
            Cell::Var(_) => Value::Var(t.index()),
            Cell::Int(v) => Value::Int(*v),
            Cell::Real(v) => Value::Real(*v),
            Cell::Str(s) => Value::Str(s.to_string()),
            Cell::Atom(a) => Value::Atom(self.symbols.name(*a).to_string()),
            Cell::Cmp { functor, args } => Value::Compound(
                self.symbols.name(*functor).to_string(),
                args.iter().map(|&a| self.read(a)).collect(),
            ),
        }
    }

    /// Builds a term from a tree. Equal `Value::Var` indices share a variable.
    pub fn build(&mut self, v: &Value) -> TermId {
        let mut vars = HashMap::new();
        self.build_with(v, &mut vars)
    }

    pub fn build_with(&mut self, v: &Value, vars: &mut HashMap<usize, TermId>) -> TermId {
        match v {
            Value::Var(n) => {
                if let Some(&t) = vars.get(n) {
                    t
                } else {
                    let t = self.new_var();
                    vars.insert(*n, t);
                    t
                }
            }
            Value::Int(i) => self.int(*i),
            Value::Real(r) => self.real(*r),
            Value::Str(s) => self.string(s),
            Value::Atom(a) => self.atom(a),
            Value::Compound(f, args) => {
                let args = args.iter().map(|a| self.build_with(a, vars)).collect();
                self.compound(f, args)
            }
        }
    }

    /// Number of unbound variables among the given terms' reachable cells.
    pub fn unbound_vars(&self, roots: &[TermId]) -> Vec<TermId> {
        let mut out = Vec::new();
        let mut stack: Vec<TermId> = roots.to_vec();
        while let Some(t) = stack.pop() {
            let t = self.deref(t);
            match &self.cells[t.index()] {
                Cell::Var(None) => {
                    if !out.contains(&t) {
                        out.push(t);
                    }
                }
                Cell::Cmp { args, .. } => stack.extend(args.iter().copied()),
                _ => {}
            }
        }
        out.sort();
        out
    }
}

/// Owned, store-independent view of a term.
#[derive(Debug, Clone)]
pub enum Value {
    Var(usize),
    Int(i64),
    Real(f64),
    Str(String),
    Atom(String),
    Compound(String, Vec<Value>),
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Var(a), Value::Var(b)) => a == b,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Real(a), Value::Real(b)) => a.to_bits() == b.to_bits(),
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::Atom(a), Value::Atom(b)) => a == b,
            (Value::Compound(f, xs), Value::Compound(g, ys)) => f == g && xs == ys,
            _ => false,
        }
    }
}

impl Value {
    /// Renames variables to 0, 1, .. in first-occurrence order so answers
    /// from different stores can be compared.
    pub fn canonical(&self) -> Value {
        fn go(v: &Value, map: &mut HashMap<usize, usize>) -> Value {
            match v {
                Value::Var(n) => {
                    let next = map.len();
                    Value::Var(*map.entry(*n).or_insert(next))
                }
                Value::Compound(f, args) => {
                    Value::Compound(f.clone(), args.iter().map(|a| go(a, map)).collect())
                }
                other => other.clone(),
            }
        }
        go(self, &mut HashMap::new())
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Value::Var(_) => false,
            Value::Compound(_, args) => args.iter().all(Value::is_ground),
            _ => true,
        }
    }
}

pub(crate) fn is_plain_atom(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => chars.all(|c| c.is_ascii_alphanumeric() || c == '_'),
        _ => !name.is_empty() && name.chars().all(|c| "+-*/\\<>=:&?@^~".contains(c)),
    }
}

pub(crate) fn quote_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

pub(crate) fn format_real(v: f64) -> String {
    // Debug keeps a decimal point ("1.0") and round-trips exactly.
    format!("{v:?}")
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Var(n) => write!(f, "_G{n}"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Real(v) => f.write_str(&format_real(*v)),
            Value::Str(s) => f.write_str(&quote_str(s)),
            Value::Atom(a) if is_plain_atom(a) => f.write_str(a),
            Value::Atom(a) => write!(f, "'{a}'"),
            Value::Compound(name, args) => {
                if is_plain_atom(name) {
                    write!(f, "{name}(")?;
                } else {
                    write!(f, "'{name}'(")?;
                }
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}
