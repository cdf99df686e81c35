//! Module compiler: symbol table construction, call checking, register
//! planning and template-based code generation.
//!
//! Each clause compiles to
//!
//! ```text
//! [allocate n]
//! get_template / move_reg      for every head argument
//! put_template / move_reg      for the arguments of each goal, then
//!   [store_env ..]             permanent variables not yet saved
//!   call | call_extern | intrinsic
//!   [load_env ..]              after calls that may clobber registers
//! [deallocate] execute | execute_extern | proceed
//! ```
//!
//! Clause variable `k` lives in register `reg_base + k`, above every
//! argument register the clause touches. A variable that must survive a
//! goal which may clobber registers (a user predicate, an intrinsic or an
//! extern flagged `regcl`) also gets an environment slot. Variables that only
//! cross non-`regcl` extern calls stay in their registers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::bytecode::{
    BytecodeImage, Const, ExternEntry, ExternIndex, Instruction, IntrinsicId, PredEntry, Reg,
    TemplateNode, TermTemplate, NUM_REGISTERS,
};
use crate::frontend::{BaseType, Clause, Goal, ModuleAst, Pos, SignatureAst, Term, TypeExpr};

/// Name of the synthetic predicate a query compiles into.
pub const QUERY_PRED: &str = "$query";

type PredKey = (String, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub pos: Pos,
    pub message: String,
}

impl Diagnostic {
    pub fn new(pos: Pos, message: impl Into<String>) -> Self {
        Diagnostic {
            pos,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: error: {}", self.pos, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))]
pub struct CompileError(pub Vec<Diagnostic>);

impl CompileError {
    fn one(pos: Pos, message: impl Into<String>) -> Self {
        CompileError(vec![Diagnostic::new(pos, message)])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CompileOptions {
    /// Save every variable live across any call, including non-`regcl`
    /// externs, in the environment.
    pub conservative_regs: bool,
}

/// What an accumulating module can see of an accumulated one.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleInterface {
    pub name: String,
    pub preds: Vec<(String, usize, Option<TypeExpr>)>,
}

impl ModuleInterface {
    pub fn of(m: &ModuleAst) -> Self {
        let mut preds: Vec<(String, usize, Option<TypeExpr>)> = Vec::new();
        for d in &m.local_sig {
            if !preds.iter().any(|(n, _, _)| n == &d.name) {
                preds.push((d.name.clone(), d.ty.arity(), Some(d.ty.clone())));
            }
        }
        for c in &m.clauses {
            let (name, arity) = (&c.head.name, c.head.arity());
            if !preds
                .iter()
                .any(|(n, a, t)| n == name && (t.is_some() || *a == arity))
            {
                preds.push((name.clone(), arity, None));
            }
        }
        ModuleInterface {
            name: m.module_name.clone(),
            preds,
        }
    }
}

/// Signatures and module interfaces visible to the compiler.
#[derive(Debug, Clone, Default)]
pub struct CompileEnv {
    pub signatures: BTreeMap<String, SignatureAst>,
    pub modules: BTreeMap<String, ModuleInterface>,
}

impl CompileEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_signature(mut self, sig: SignatureAst) -> Self {
        self.signatures.insert(sig.sig_name.clone(), sig);
        self
    }

    pub fn with_module(mut self, m: ModuleInterface) -> Self {
        self.modules.insert(m.name.clone(), m);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SymbolKind {
    Local,
    Accumulated(String),
    Extern(ExternIndex),
    Intrinsic(IntrinsicId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolTableEntry {
    pub name: String,
    pub arity: usize,
    /// `None` for local predicates defined without a type declaration.
    pub ty: Option<TypeExpr>,
    pub kind: SymbolKind,
    pub regcl: bool,
}

/// How a goal's callee treats the register file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalleeClass {
    User,
    Intrinsic(IntrinsicId),
    Extern { regcl: bool },
}

impl CalleeClass {
    pub fn may_clobber(self, conservative: bool) -> bool {
        match self {
            CalleeClass::User | CalleeClass::Intrinsic(_) => true,
            CalleeClass::Extern { regcl } => regcl || conservative,
        }
    }
}

/// Register and environment assignment for one clause.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterPlan {
    /// Clause variables in slot order (first occurrence order).
    pub vars: Vec<String>,
    /// Register holding slot 0; slot `k` is in `reg_base + k`.
    pub reg_base: u16,
    /// Environment slot for each variable that must survive a clobbering call.
    pub env_slots: Vec<Option<u16>>,
    /// Variables live across each goal, by slot.
    pub live_across: Vec<BTreeSet<usize>>,
    pub needs_env: bool,
}

impl RegisterPlan {
    pub fn home(&self, slot: usize) -> Reg {
        Reg(self.reg_base + slot as u16)
    }

    pub fn slot_of(&self, var: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == var)
    }

    pub fn env_size(&self) -> u16 {
        self.env_slots.iter().flatten().count() as u16
    }
}

fn goal_vars(g: &Goal) -> Vec<String> {
    let mut out = Vec::new();
    for a in &g.args {
        a.vars(&mut out);
    }
    out
}

/// Decides where every clause variable lives.
///
/// `callees[j]` classifies body goal `j`.
pub fn allocate_registers(
    clause: &Clause,
    callees: &[CalleeClass],
    conservative: bool,
) -> Result<RegisterPlan, Diagnostic> {
    assert_eq!(callees.len(), clause.body.len());
    let mut vars = goal_vars(&clause.head);
    for g in &clause.body {
        for v in goal_vars(g) {
            if !vars.contains(&v) {
                vars.push(v);
            }
        }
    }
    let max_arity = clause
        .body
        .iter()
        .map(Goal::arity)
        .chain([clause.head.arity()])
        .max()
        .unwrap_or(0);
    let needed = max_arity + vars.len();
    if needed > usize::from(NUM_REGISTERS) {
        return Err(Diagnostic::new(
            clause.pos,
            format!("clause needs {needed} registers but only {NUM_REGISTERS} exist"),
        ));
    }
    let slot = |v: &String| vars.iter().position(|w| w == v).unwrap();

    let n = clause.body.len();
    let mut defined: BTreeSet<usize> = goal_vars(&clause.head).iter().map(slot).collect();
    let mut live_across = Vec::with_capacity(n);
    for j in 0..n {
        defined.extend(goal_vars(&clause.body[j]).iter().map(slot));
        let later: BTreeSet<usize> = clause.body[j + 1..]
            .iter()
            .flat_map(goal_vars)
            .map(|v| slot(&v))
            .collect();
        live_across.push(
            defined
                .intersection(&later)
                .copied()
                .collect::<BTreeSet<_>>(),
        );
    }

    let mut permanent = BTreeSet::new();
    for j in 0..n.saturating_sub(1) {
        if callees[j].may_clobber(conservative) {
            permanent.extend(live_across[j].iter().copied());
        }
    }
    let mut env_slots = vec![None; vars.len()];
    for (i, s) in permanent.iter().enumerate() {
        env_slots[*s] = Some(i as u16);
    }

    let non_last_user = callees[..n.saturating_sub(1)].contains(&CalleeClass::User);
    let has_solve = callees.contains(&CalleeClass::Intrinsic(IntrinsicId::Solve));
    Ok(RegisterPlan {
        vars,
        reg_base: max_arity as u16 + 1,
        env_slots,
        live_across,
        needs_env: !permanent.is_empty() || non_last_user || has_solve,
    })
}

fn infer_type(arg: &Term, vars: &HashMap<String, TypeExpr>) -> Option<TypeExpr> {
    match arg {
        Term::Int(_) => Some(TypeExpr::Base(BaseType::Int)),
        Term::Real(_) => Some(TypeExpr::Base(BaseType::Real)),
        Term::Str(_) => Some(TypeExpr::Base(BaseType::Str)),
        Term::Var(v) => vars.get(v).cloned(),
        Term::Atom(_) | Term::Cmp(..) => None,
    }
}

/// Checks a goal against its callee's declared type, extending the clause's
/// variable typing on success.
pub fn check_call(
    goal: &Goal,
    entry: &SymbolTableEntry,
    var_types: &mut HashMap<String, TypeExpr>,
) -> Result<(), Diagnostic> {
    if goal.arity() != entry.arity {
        return Err(Diagnostic::new(
            goal.pos,
            format!(
                "'{}' expects {} arguments but is given {}",
                entry.name,
                entry.arity,
                goal.arity()
            ),
        ));
    }
    let Some(ty) = &entry.ty else { return Ok(()) };
    for (i, (arg, expected)) in goal.args.iter().zip(ty.domains()).enumerate() {
        match infer_type(arg, var_types) {
            Some(found) if &found != expected => {
                return Err(Diagnostic::new(
                    goal.pos,
                    format!(
                        "argument {} of '{}' has type {found} but {expected} is expected",
                        i + 1,
                        entry.name
                    ),
                ));
            }
            Some(_) => {}
            None => {
                if let Term::Var(v) = arg {
                    var_types.insert(v.clone(), expected.clone());
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum ConstKey {
    Atom(String),
    Int(i64),
    Real(u64),
    Str(String),
    Functor(String, u16),
}

/// Accumulates pools and code for one image.
#[derive(Debug, Default)]
struct Emitter {
    consts: Vec<Const>,
    const_index: HashMap<ConstKey, u32>,
    templates: Vec<TermTemplate>,
    code: Vec<Instruction>,
}

impl Emitter {
    fn constant(&mut self, c: Const) -> u32 {
        let key = match &c {
            Const::Atom(s) => ConstKey::Atom(s.clone()),
            Const::Int(v) => ConstKey::Int(*v),
            Const::Real(v) => ConstKey::Real(v.to_bits()),
            Const::Str(s) => ConstKey::Str(s.clone()),
            Const::Functor(s, n) => ConstKey::Functor(s.clone(), *n),
        };
        if let Some(&i) = self.const_index.get(&key) {
            return i;
        }
        let i = self.consts.len() as u32;
        self.consts.push(c);
        self.const_index.insert(key, i);
        i
    }

    fn pred_ref(&mut self, name: &str, arity: usize, pos: Pos) -> Result<u16, Diagnostic> {
        let i = self.constant(Const::Functor(name.to_string(), arity as u16));
        u16::try_from(i).map_err(|_| Diagnostic::new(pos, "constant pool exceeds 65535 entries"))
    }

    fn node(&mut self, t: &Term, plan: &RegisterPlan, seen: &mut BTreeSet<usize>) -> TemplateNode {
        match t {
            Term::Var(v) => {
                let index = plan.slot_of(v).expect("variable has a slot");
                TemplateNode::Slot {
                    index: index as u16,
                    first: seen.insert(index),
                }
            }
            Term::Int(i) => TemplateNode::Const(self.constant(Const::Int(*i))),
            Term::Real(r) => TemplateNode::Const(self.constant(Const::Real(*r))),
            Term::Str(s) => TemplateNode::Const(self.constant(Const::Str(s.clone()))),
            Term::Atom(a) => TemplateNode::Const(self.constant(Const::Atom(a.clone()))),
            Term::Cmp(f, args) => {
                let functor = self.constant(Const::Functor(f.clone(), args.len() as u16));
                TemplateNode::Cmp {
                    functor,
                    args: args.iter().map(|a| self.node(a, plan, seen)).collect(),
                }
            }
        }
    }

    fn template(
        &mut self,
        t: &Term,
        plan: &RegisterPlan,
        seen: &mut BTreeSet<usize>,
        pos: Pos,
    ) -> Result<u16, Diagnostic> {
        let root = self.node(t, plan, seen);
        let i = self.templates.len();
        self.templates.push(TermTemplate {
            reg_base: plan.reg_base,
            root,
        });
        u16::try_from(i).map_err(|_| Diagnostic::new(pos, "template pool exceeds 65535 entries"))
    }

    fn emit(&mut self, i: Instruction) {
        self.code.push(i);
    }
}

/// Callee of a goal as resolved for code generation.
#[derive(Debug, Clone)]
enum Callee {
    User,
    Extern { index: ExternIndex, regcl: bool },
    Intrinsic(IntrinsicId),
}

impl Callee {
    fn class(&self) -> CalleeClass {
        match self {
            Callee::User => CalleeClass::User,
            Callee::Extern { regcl, .. } => CalleeClass::Extern { regcl: *regcl },
            Callee::Intrinsic(id) => CalleeClass::Intrinsic(*id),
        }
    }
}

fn compile_clause(
    em: &mut Emitter,
    clause: &Clause,
    callees: &[Callee],
    opts: CompileOptions,
) -> Result<(), Diagnostic> {
    let classes: Vec<CalleeClass> = callees.iter().map(Callee::class).collect();
    let plan = allocate_registers(clause, &classes, opts.conservative_regs)?;
    let mut seen = BTreeSet::new();

    if plan.needs_env {
        em.emit(Instruction::Allocate(plan.env_size()));
    }
    for (i, arg) in clause.head.args.iter().enumerate() {
        let reg = Reg(i as u16 + 1);
        match arg {
            Term::Var(v) if seen.insert(plan.slot_of(v).unwrap()) => {
                em.emit(Instruction::MoveReg(
                    reg,
                    plan.home(plan.slot_of(v).unwrap()),
                ));
            }
            _ => {
                let t = em.template(arg, &plan, &mut seen, clause.head.pos)?;
                em.emit(Instruction::GetTemplate(t, reg));
            }
        }
    }

    let mut stored = BTreeSet::new();
    let last = clause.body.len().checked_sub(1);
    for (j, goal) in clause.body.iter().enumerate() {
        for (i, arg) in goal.args.iter().enumerate() {
            let reg = Reg(i as u16 + 1);
            match arg {
                Term::Var(v) if seen.contains(&plan.slot_of(v).unwrap()) => {
                    em.emit(Instruction::MoveReg(
                        plan.home(plan.slot_of(v).unwrap()),
                        reg,
                    ));
                }
                _ => {
                    let t = em.template(arg, &plan, &mut seen, goal.pos)?;
                    em.emit(Instruction::PutTemplate(t, reg));
                }
            }
        }
        let is_last = Some(j) == last;
        let saves = !is_last && classes[j].may_clobber(opts.conservative_regs);
        if saves {
            for &s in &plan.live_across[j] {
                if stored.insert(s) {
                    em.emit(Instruction::StoreEnv(
                        plan.home(s),
                        plan.env_slots[s].unwrap(),
                    ));
                }
            }
        }
        match (&callees[j], is_last) {
            (Callee::User, false) => {
                let p = em.pred_ref(&goal.name, goal.arity(), goal.pos)?;
                em.emit(Instruction::Call(p));
            }
            (Callee::User, true) => {
                let p = em.pred_ref(&goal.name, goal.arity(), goal.pos)?;
                if plan.needs_env {
                    em.emit(Instruction::Deallocate);
                }
                em.emit(Instruction::Execute(p));
            }
            (Callee::Extern { index, .. }, false) => em.emit(Instruction::CallExtern(*index)),
            (Callee::Extern { index, .. }, true) => {
                if plan.needs_env {
                    em.emit(Instruction::Deallocate);
                }
                em.emit(Instruction::ExecuteExtern(*index));
            }
            (Callee::Intrinsic(id), false) => em.emit(Instruction::Intrinsic(*id)),
            (Callee::Intrinsic(id), true) => {
                em.emit(Instruction::Intrinsic(*id));
                if plan.needs_env {
                    em.emit(Instruction::Deallocate);
                }
                em.emit(Instruction::Proceed);
            }
        }
        if saves {
            for &s in &plan.live_across[j] {
                em.emit(Instruction::LoadEnv(
                    plan.env_slots[s].unwrap(),
                    plan.home(s),
                ));
            }
        }
    }
    if clause.body.is_empty() {
        if plan.needs_env {
            em.emit(Instruction::Deallocate);
        }
        em.emit(Instruction::Proceed);
    }
    Ok(())
}

/// Emits the clauses of one predicate with its try/retry/trust chain.
fn compile_predicate(
    em: &mut Emitter,
    clauses: &[(&Clause, Vec<Callee>)],
    opts: CompileOptions,
) -> Result<u32, Diagnostic> {
    let entry = em.code.len() as u32;
    let mut pending_label: Option<usize> = None;
    for (k, (clause, callees)) in clauses.iter().enumerate() {
        if let Some(at) = pending_label.take() {
            let here = em.code.len() as u32;
            match &mut em.code[at] {
                Instruction::TryMeElse(l) | Instruction::RetryMeElse(l) => *l = here,
                _ => unreachable!(),
            }
        }
        if clauses.len() > 1 {
            let instr = if k == 0 {
                Instruction::TryMeElse(0)
            } else if k + 1 < clauses.len() {
                Instruction::RetryMeElse(0)
            } else {
                Instruction::TrustMe
            };
            if k + 1 < clauses.len() {
                pending_label = Some(em.code.len());
            }
            em.emit(instr);
        }
        compile_clause(em, clause, callees, opts)?;
    }
    Ok(entry)
}

struct SymbolTable {
    externs: Vec<ExternEntry>,
    by_name: BTreeMap<String, SymbolTableEntry>,
    untyped: BTreeMap<(String, usize), SymbolTableEntry>,
}

impl SymbolTable {
    fn lookup(&self, goal: &Goal) -> Result<&SymbolTableEntry, Diagnostic> {
        if let Some(e) = self.by_name.get(&goal.name) {
            return Ok(e);
        }
        self.untyped
            .get(&(goal.name.clone(), goal.arity()))
            .ok_or_else(|| {
                Diagnostic::new(
                    goal.pos,
                    format!("undeclared predicate {}/{}", goal.name, goal.arity()),
                )
            })
    }
}

fn intrinsic_entry(name: &str) -> SymbolTableEntry {
    let id = IntrinsicId::ALL
        .into_iter()
        .find(|id| IntrinsicId::from_source_name(name, id.arity()) == Some(*id))
        .expect("intrinsic name");
    SymbolTableEntry {
        name: name.to_string(),
        arity: id.arity(),
        ty: None,
        kind: SymbolKind::Intrinsic(id),
        regcl: false,
    }
}

fn build_symbols(m: &ModuleAst, env: &CompileEnv, errs: &mut Vec<Diagnostic>) -> SymbolTable {
    let mut st = SymbolTable {
        externs: Vec::new(),
        by_name: BTreeMap::new(),
        untyped: BTreeMap::new(),
    };
    // extern name -> signature that declared it
    let mut extern_origin: BTreeMap<String, String> = BTreeMap::new();

    for acc in &m.accum_externs {
        let Some(sig) = env.signatures.get(&acc.name) else {
            errs.push(Diagnostic::new(
                acc.pos,
                format!("no signature named '{}' for accum_extern", acc.name),
            ));
            continue;
        };
        for d in &sig.externs {
            let entry = ExternEntry {
                lib_name: sig.lib_name.clone(),
                entry_symbol: d.c_name.clone(),
                pred_name: d.lp_name.clone(),
                arity: d.ty.arity() as u16,
                regcl: sig.regcl.contains(&d.lp_name),
            };
            if IntrinsicId::is_source_name(&d.lp_name) {
                errs.push(Diagnostic::new(
                    acc.pos,
                    format!(
                        "signature '{}' redefines intrinsic predicate '{}'",
                        sig.sig_name, d.lp_name
                    ),
                ));
                continue;
            }
            if let Some(prev) = st.by_name.get(&d.lp_name) {
                let same = match prev.kind {
                    SymbolKind::Extern(x) => {
                        st.externs[usize::from(x.0)] == entry && prev.ty.as_ref() == Some(&d.ty)
                    }
                    _ => false,
                };
                if !same {
                    errs.push(Diagnostic::new(
                        acc.pos,
                        format!(
                            "conflicting extern declarations of '{}' in signatures '{}' and '{}'",
                            d.lp_name, extern_origin[&d.lp_name], sig.sig_name
                        ),
                    ));
                }
                continue;
            }
            let index = ExternIndex(st.externs.len() as u16);
            st.by_name.insert(
                d.lp_name.clone(),
                SymbolTableEntry {
                    name: d.lp_name.clone(),
                    arity: d.ty.arity(),
                    ty: Some(d.ty.clone()),
                    kind: SymbolKind::Extern(index),
                    regcl: entry.regcl,
                },
            );
            extern_origin.insert(d.lp_name.clone(), sig.sig_name.clone());
            st.externs.push(entry);
        }
    }

    for acc in &m.accumulates {
        let Some(iface) = env.modules.get(&acc.name) else {
            errs.push(Diagnostic::new(
                acc.pos,
                format!("no module named '{}' to accumulate", acc.name),
            ));
            continue;
        };
        for (name, arity, ty) in &iface.preds {
            if let Some(sig) = extern_origin.get(name) {
                errs.push(Diagnostic::new(
                    acc.pos,
                    format!(
                        "predicate '{name}' is declared both by module '{}' and by extern signature '{sig}'",
                        iface.name
                    ),
                ));
                continue;
            }
            let entry = SymbolTableEntry {
                name: name.clone(),
                arity: *arity,
                ty: ty.clone(),
                kind: SymbolKind::Accumulated(iface.name.clone()),
                regcl: false,
            };
            if ty.is_some() {
                st.by_name.entry(name.clone()).or_insert(entry);
            } else {
                st.untyped.entry((name.clone(), *arity)).or_insert(entry);
            }
        }
    }

    let redefinition = |name: &str, st: &SymbolTable, pos: Pos| -> Option<Diagnostic> {
        if IntrinsicId::is_source_name(name) {
            return Some(Diagnostic::new(
                pos,
                format!("redefinition of intrinsic predicate '{name}'"),
            ));
        }
        match st.by_name.get(name).map(|e| &e.kind) {
            Some(SymbolKind::Extern(_)) => Some(Diagnostic::new(
                pos,
                format!("redefinition of extern predicate '{name}'"),
            )),
            _ => None,
        }
    };

    for d in &m.local_sig {
        if let Some(e) = redefinition(&d.name, &st, d.pos) {
            errs.push(e);
            continue;
        }
        if !d.ty.is_predicate() {
            errs.push(Diagnostic::new(
                d.pos,
                format!("type '{}' of '{}' is not a predicate type", d.ty, d.name),
            ));
            continue;
        }
        if let Some(prev) = st.by_name.get(&d.name) {
            let msg = match &prev.kind {
                SymbolKind::Accumulated(k) => {
                    format!("'{}' is already declared by module '{k}'", d.name)
                }
                _ => format!("duplicate type declaration for '{}'", d.name),
            };
            errs.push(Diagnostic::new(d.pos, msg));
            continue;
        }
        st.by_name.insert(
            d.name.clone(),
            SymbolTableEntry {
                name: d.name.clone(),
                arity: d.ty.arity(),
                ty: Some(d.ty.clone()),
                kind: SymbolKind::Local,
                regcl: false,
            },
        );
    }

    for c in &m.clauses {
        let (name, arity) = (&c.head.name, c.head.arity());
        if let Some(e) = redefinition(name, &st, c.head.pos) {
            errs.push(e);
            continue;
        }
        if let Some(SymbolTableEntry {
            kind: SymbolKind::Accumulated(k),
            ..
        }) = st
            .by_name
            .get(name)
            .or_else(|| st.untyped.get(&(name.clone(), arity)))
        {
            errs.push(Diagnostic::new(
                c.head.pos,
                format!("{name}/{arity} is defined in accumulated module '{k}'"),
            ));
            continue;
        }
        if st.by_name.contains_key(name) {
            continue;
        }
        st.untyped
            .entry((name.clone(), arity))
            .or_insert_with(|| SymbolTableEntry {
                name: name.clone(),
                arity,
                ty: None,
                kind: SymbolKind::Local,
                regcl: false,
            });
    }
    st
}

/// Compiles one module into a bytecode image.
///
/// The extern table lists every predicate declared by the module's
/// `accum_extern` signatures, in declaration order; identical declarations
/// reached through two signatures share one entry.
pub fn compile_module(
    m: &ModuleAst,
    env: &CompileEnv,
    opts: CompileOptions,
) -> Result<BytecodeImage, CompileError> {
    let mut errs = Vec::new();
    let st = build_symbols(m, env, &mut errs);

    // group clauses by predicate in first-appearance order
    let mut order: Vec<(String, usize)> = Vec::new();
    let mut groups: BTreeMap<PredKey, Vec<(&Clause, Vec<Callee>)>> = BTreeMap::new();

    for clause in &m.clauses {
        let key = (clause.head.name.clone(), clause.head.arity());
        let mut var_types = HashMap::new();
        let mut ok = true;

        match st.lookup(&clause.head) {
            Ok(entry) => match entry.kind {
                SymbolKind::Local => {
                    if let Err(d) = check_call(&clause.head, entry, &mut var_types) {
                        errs.push(d);
                        ok = false;
                    }
                }
                // already reported as a redefinition
                _ => ok = false,
            },
            Err(_) => ok = false,
        }

        let mut callees = Vec::with_capacity(clause.body.len());
        for goal in &clause.body {
            if let Some(entry) =
                IntrinsicId::is_source_name(&goal.name).then(|| intrinsic_entry(&goal.name))
            {
                match check_call(goal, &entry, &mut var_types) {
                    Ok(()) => {
                        let SymbolKind::Intrinsic(id) = entry.kind else {
                            unreachable!()
                        };
                        callees.push(Callee::Intrinsic(id));
                    }
                    Err(d) => {
                        errs.push(d);
                        ok = false;
                    }
                }
                continue;
            }
            match st
                .lookup(goal)
                .and_then(|e| check_call(goal, e, &mut var_types).map(|_| e))
            {
                Ok(entry) => callees.push(match entry.kind {
                    SymbolKind::Extern(index) => Callee::Extern {
                        index,
                        regcl: entry.regcl,
                    },
                    _ => Callee::User,
                }),
                Err(d) => {
                    errs.push(d);
                    ok = false;
                }
            }
        }
        if ok {
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push((clause, callees));
        }
    }

    if !errs.is_empty() {
        return Err(CompileError(errs));
    }

    let mut em = Emitter::default();
    let mut preds = Vec::new();
    for key in &order {
        let offset =
            compile_predicate(&mut em, &groups[key], opts).map_err(|d| CompileError(vec![d]))?;
        preds.push(PredEntry {
            name: key.0.clone(),
            arity: key.1 as u16,
            offset,
        });
    }
    if em.code.len() > u32::MAX as usize {
        return Err(CompileError::one(Pos::default(), "code segment too large"));
    }

    let img = BytecodeImage {
        consts: em.consts,
        templates: em.templates,
        externs: st.externs,
        preds,
        code: em.code,
        ..Default::default()
    };
    debug_assert!(img.validate().is_ok(), "{:?}", img.validate());
    Ok(img)
}

/// What a query may call, as seen by the query compiler.
pub trait QueryScope {
    /// Handle index, arity and `regcl` flag of an extern predicate.
    fn extern_pred(&self, name: &str) -> Option<(u16, usize, bool)>;
}

/// A query compiled against a loaded program.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledQuery {
    pub consts: Vec<Const>,
    pub templates: Vec<TermTemplate>,
    /// Extern operands here are already handle indices.
    pub code: Vec<Instruction>,
    /// Named query variables, in the order they are passed to the query clause.
    pub vars: Vec<String>,
}

/// Compiles a goal conjunction into a clause of the synthetic query predicate
/// whose arguments are the query's named variables. Calls to unknown
/// predicates compile to ordinary calls and fail at run time.
pub fn compile_query(
    goals: &[Goal],
    scope: &dyn QueryScope,
) -> Result<CompiledQuery, CompileError> {
    let mut vars = Vec::new();
    for g in goals {
        for v in goal_vars(g) {
            if !v.starts_with("_#") && !vars.contains(&v) {
                vars.push(v);
            }
        }
    }
    let pos = goals.first().map(|g| g.pos).unwrap_or_default();
    let clause = Clause {
        head: Goal {
            name: QUERY_PRED.to_string(),
            args: vars.iter().map(|v| Term::Var(v.clone())).collect(),
            pos,
        },
        body: goals.to_vec(),
        pos,
    };
    let mut callees = Vec::new();
    let mut errs = Vec::new();
    for g in goals {
        if IntrinsicId::is_source_name(&g.name) {
            match IntrinsicId::from_source_name(&g.name, g.arity()) {
                Some(id) => callees.push(Callee::Intrinsic(id)),
                None => errs.push(Diagnostic::new(
                    g.pos,
                    format!(
                        "'{}' expects {} arguments but is given {}",
                        g.name,
                        intrinsic_entry(&g.name).arity,
                        g.arity()
                    ),
                )),
            }
        } else if let Some((h, arity, regcl)) = scope.extern_pred(&g.name) {
            if arity != g.arity() {
                errs.push(Diagnostic::new(
                    g.pos,
                    format!(
                        "'{}' expects {arity} arguments but is given {}",
                        g.name,
                        g.arity()
                    ),
                ));
            }
            callees.push(Callee::Extern {
                index: ExternIndex(h),
                regcl,
            });
        } else {
            callees.push(Callee::User);
        }
    }
    if !errs.is_empty() {
        return Err(CompileError(errs));
    }
    let mut em = Emitter::default();
    compile_clause(&mut em, &clause, &callees, CompileOptions::default())
        .map_err(|d| CompileError(vec![d]))?;
    Ok(CompiledQuery {
        consts: em.consts,
        templates: em.templates,
        code: em.code,
        vars,
    })
}
