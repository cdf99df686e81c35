//! The abstract machine.
//!
//! Clause code runs over 64 argument registers, a stack of environment
//! frames and a stack of choice points. A query is compiled into its own
//! small code segment placed after the program's code, so program and query
//! share one address space. Address [`HALT_ADDR`] ends a proof.

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::rc::Rc;
use std::sync::{Arc, Mutex, PoisonError};

use thiserror::Error;

use crate::bytecode::{
    Const, HandleIndex, Instruction, IntrinsicId, TemplateNode, TermTemplate, NUM_REGISTERS,
};
use crate::compiler::{compile_query, CompileError};
use crate::frontend::{parse_query, Goal, ParseError};
use crate::hostapi::{with_context, HostContext, HostFault, Registers};
use crate::loader::{Callable, LoadedProgram};
use crate::terms::{Cell, Store, Sym, TermId, TrailMark, Value};

pub const HALT_ADDR: u32 = u32::MAX;

/// Native plugins are assumed non-reentrant, so native extern calls are
/// serialized across the whole process.
static EXTERN_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, Clone, Copy, Default)]
pub struct MachineOptions {
    /// Instruction budget per query (`None` for unlimited).
    pub max_steps: Option<u64>,
    /// Compare the whole register file around every call to an extern not
    /// flagged `regcl`.
    pub check_preservation: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stats {
    pub steps: u64,
    pub extern_calls: u64,
    /// Largest value of live environment frames plus choice points seen.
    pub max_control_depth: usize,
    pub preservation_checks: u64,
    /// Extern predicates that changed registers despite not being `regcl`.
    pub preservation_violations: Vec<String>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("query: {0}")]
    Parse(#[from] ParseError),
    #[error("query: {0}")]
    Compile(#[from] CompileError),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("instantiation error: {0}")]
    Instantiation(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("extern {pred} faulted: {message}")]
    ExternFault { pred: String, message: String },
    #[error("step budget exhausted")]
    BudgetExhausted,
    #[error("no query to run")]
    NoQuery,
    #[error("malformed code at {pc}: {message}")]
    Internal { pc: u32, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub bindings: Vec<(String, Value)>,
}

impl Answer {
    pub fn get(&self, var: &str) -> Option<&Value> {
        self.bindings.iter().find(|(v, _)| v == var).map(|(_, t)| t)
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.bindings.is_empty() {
            return f.write_str("yes");
        }
        for (i, (name, value)) in self.bindings.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{name} = {value}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Success(Answer),
    Failure,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
enum PConst {
    Int(i64),
    Real(f64),
    Str(Arc<str>),
    Atom(Sym),
    Functor(Sym, u16),
}

/// Constants and templates of one code segment, with symbols interned.
#[derive(Debug)]
struct Pool {
    consts: Vec<PConst>,
    targets: Vec<Option<u32>>,
    templates: Vec<TermTemplate>,
}

impl Pool {
    fn new(
        store: &mut Store,
        consts: &[Const],
        targets: Vec<Option<u32>>,
        templates: Vec<TermTemplate>,
    ) -> Self {
        let consts = consts
            .iter()
            .map(|c| match c {
                Const::Int(v) => PConst::Int(*v),
                Const::Real(v) => PConst::Real(*v),
                Const::Str(s) => PConst::Str(Arc::from(s.as_str())),
                Const::Atom(a) => PConst::Atom(store.symbols.intern(a)),
                Const::Functor(f, n) => PConst::Functor(store.symbols.intern(f), *n),
            })
            .collect();
        Pool {
            consts,
            targets,
            templates,
        }
    }
}

#[derive(Debug, Clone)]
struct Frame {
    prev_e: Option<usize>,
    cp: u32,
    slots: Vec<Option<TermId>>,
}

#[derive(Debug, Clone)]
struct Choice {
    args: Vec<Option<TermId>>,
    e: Option<usize>,
    cp: u32,
    trail: TrailMark,
    heap: usize,
    alt: u32,
    env_top: usize,
}

enum Interrupt {
    Budget,
    Error(RunError),
}

impl From<RunError> for Interrupt {
    fn from(e: RunError) -> Self {
        Interrupt::Error(e)
    }
}

enum LoopEnd {
    Halted,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum QueryState {
    None,
    Fresh,
    Answered,
    Done,
}

#[derive(Debug, Clone, Copy)]
enum Num {
    Int(i64),
    Real(f64),
}

impl Num {
    fn as_f64(self) -> f64 {
        match self {
            Num::Int(i) => i as f64,
            Num::Real(r) => r,
        }
    }
}

const MAX_EVAL_DEPTH: usize = 10_000;

pub struct Machine<'p> {
    prog: &'p LoadedProgram,
    pools: [Rc<Pool>; 2],
    query_code: Vec<Instruction<HandleIndex>>,
    query_vars: Vec<(String, TermId)>,
    store: Store,
    regs: Registers,
    envs: Vec<Frame>,
    e: Option<usize>,
    cp: u32,
    pc: u32,
    nargs: usize,
    choices: Vec<Choice>,
    opts: MachineOptions,
    stats: Stats,
    faults: Vec<HostFault>,
    state: QueryState,
    steps_at_query: u64,
}

type Step = Result<bool, Interrupt>;

impl<'p> Machine<'p> {
    pub fn new(prog: &'p LoadedProgram, opts: MachineOptions) -> Self {
        let mut store = Store::new();
        let prog_pool = Pool::new(
            &mut store,
            &prog.consts,
            prog.call_targets.clone(),
            prog.templates.clone(),
        );
        let empty = Pool::new(&mut store, &[], Vec::new(), Vec::new());
        Machine {
            prog,
            pools: [Rc::new(prog_pool), Rc::new(empty)],
            query_code: Vec::new(),
            query_vars: Vec::new(),
            store,
            regs: [None; NUM_REGISTERS as usize],
            envs: Vec::new(),
            e: None,
            cp: HALT_ADDR,
            pc: HALT_ADDR,
            nargs: 0,
            choices: Vec::new(),
            opts,
            stats: Stats::default(),
            faults: Vec::new(),
            state: QueryState::None,
            steps_at_query: 0,
        }
    }

    pub fn stats(&self) -> &Stats {
        &self.stats
    }

    /// Host API faults recorded so far. Each one also failed its call.
    pub fn faults(&self) -> &[HostFault] {
        &self.faults
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    /// Live environment frames plus choice points.
    pub fn control_depth(&self) -> usize {
        self.env_top() + self.choices.len()
    }

    /// Copy of registers A1..An.
    pub fn snapshot_registers(&self, n: usize) -> Vec<Option<TermId>> {
        self.regs[..n.min(self.regs.len())].to_vec()
    }

    /// Current bindings of the query variables.
    pub fn query_bindings(&self) -> Vec<(String, Value)> {
        self.query_vars
            .iter()
            .map(|(n, t)| (n.clone(), self.store.read(*t)))
            .collect()
    }

    pub fn set_query_text(&mut self, query: &str) -> Result<(), RunError> {
        let goals = parse_query(query)?;
        self.set_query(&goals)
    }

    /// Compiles a query against the program and resets the machine for it.
    pub fn set_query(&mut self, goals: &[Goal]) -> Result<(), RunError> {
        let q = compile_query(goals, self.prog)?;
        self.store.undo_to(0);
        self.store.truncate(0);
        let targets = self.prog.targets_for(&q.consts);
        self.pools[1] = Rc::new(Pool::new(&mut self.store, &q.consts, targets, q.templates));
        self.query_code = q
            .code
            .into_iter()
            .map(|i| i.map_extern(|x| HandleIndex(x.0)))
            .collect();
        self.regs = [None; NUM_REGISTERS as usize];
        self.query_vars.clear();
        for (i, name) in q.vars.into_iter().enumerate() {
            let v = self.store.new_var();
            self.regs[i] = Some(v);
            self.query_vars.push((name, v));
        }
        self.nargs = self.query_vars.len();
        self.envs.clear();
        self.choices.clear();
        self.e = None;
        self.cp = HALT_ADDR;
        self.pc = self.prog.code.len() as u32;
        self.state = QueryState::Fresh;
        self.steps_at_query = self.stats.steps;
        Ok(())
    }

    /// Finds the next answer, resuming the search after the previous one.
    pub fn next_answer(&mut self) -> Result<Outcome, RunError> {
        match self.state {
            QueryState::None => return Err(RunError::NoQuery),
            QueryState::Done => return Ok(Outcome::Failure),
            QueryState::Answered => {
                if !self.backtrack(0) {
                    self.finish();
                    return Ok(Outcome::Failure);
                }
            }
            QueryState::Fresh => {}
        }
        self.state = QueryState::Answered;
        match self.run_loop(0) {
            Ok(LoopEnd::Halted) => Ok(Outcome::Success(Answer {
                bindings: self.query_bindings(),
            })),
            Ok(LoopEnd::Failed) => {
                self.finish();
                Ok(Outcome::Failure)
            }
            Err(Interrupt::Budget) => {
                self.finish();
                Ok(Outcome::BudgetExhausted)
            }
            Err(Interrupt::Error(e)) => {
                self.finish();
                Err(e)
            }
        }
    }

    fn finish(&mut self) {
        self.state = QueryState::Done;
        self.choices.clear();
        self.store.undo_to(0);
    }

    fn env_top(&self) -> usize {
        let e = self.e.map_or(0, |e| e + 1);
        e.max(self.choices.last().map_or(0, |c| c.env_top))
    }

    fn note_depth(&mut self) {
        let d = self.control_depth();
        if d > self.stats.max_control_depth {
            self.stats.max_control_depth = d;
        }
    }

    fn backtrack(&mut self, barrier: usize) -> bool {
        if self.choices.len() <= barrier {
            return false;
        }
        let c = self.choices.last().expect("choice point");
        let n = c.args.len();
        self.regs[..n].copy_from_slice(&c.args);
        self.e = c.e;
        self.cp = c.cp;
        self.pc = c.alt;
        self.nargs = n;
        let (trail, heap) = (c.trail, c.heap);
        self.store
            .trail_undo(trail)
            .expect("choice point trail marks are live");
        self.store.truncate(heap);
        true
    }

    fn internal(&self, message: impl Into<String>) -> Interrupt {
        Interrupt::Error(RunError::Internal {
            pc: self.pc,
            message: message.into(),
        })
    }

    fn fetch(&self, pc: u32) -> Option<(Instruction<HandleIndex>, usize)> {
        let plen = self.prog.code.len();
        let pc = pc as usize;
        if pc < plen {
            Some((self.prog.code[pc], 0))
        } else {
            self.query_code.get(pc - plen).map(|i| (*i, 1))
        }
    }

    fn run_loop(&mut self, barrier: usize) -> Result<LoopEnd, Interrupt> {
        loop {
            if self.pc == HALT_ADDR {
                return Ok(LoopEnd::Halted);
            }
            if let Some(max) = self.opts.max_steps {
                if self.stats.steps - self.steps_at_query >= max {
                    return Err(Interrupt::Budget);
                }
            }
            self.stats.steps += 1;
            let Some((ins, pool)) = self.fetch(self.pc) else {
                return Err(self.internal("jump outside the code segment"));
            };
            if !self.step(ins, pool)? && !self.backtrack(barrier) {
                return Ok(LoopEnd::Failed);
            }
        }
    }

    fn reg(&self, r: u16) -> Result<TermId, Interrupt> {
        self.regs
            .get(usize::from(r).wrapping_sub(1))
            .copied()
            .flatten()
            .ok_or_else(|| self.internal(format!("read of empty register A{r}")))
    }

    fn frame(&mut self) -> Result<&mut Frame, Interrupt> {
        match self.e {
            Some(e) => Ok(&mut self.envs[e]),
            None => Err(Interrupt::Error(RunError::Internal {
                pc: self.pc,
                message: "environment access without a frame".into(),
            })),
        }
    }

    fn step(&mut self, ins: Instruction<HandleIndex>, pool: usize) -> Step {
        use Instruction::*;
        let next = self.pc + 1;
        match ins {
            Allocate(n) => {
                let top = self.env_top();
                self.envs.truncate(top);
                self.envs.push(Frame {
                    prev_e: self.e,
                    cp: self.cp,
                    slots: vec![None; usize::from(n)],
                });
                self.e = Some(top);
                self.note_depth();
                self.pc = next;
            }
            Deallocate => {
                let f = self.frame()?;
                let (cp, prev) = (f.cp, f.prev_e);
                self.cp = cp;
                self.e = prev;
                self.pc = next;
            }
            Call(p) | Execute(p) => {
                let p = usize::from(p);
                let Some(PConst::Functor(_, arity)) = self.pools[pool].consts.get(p) else {
                    return Err(self.internal("call operand is not a functor"));
                };
                let arity = usize::from(*arity);
                let Some(target) = self.pools[pool].targets[p] else {
                    return Ok(false);
                };
                if matches!(ins, Call(_)) {
                    self.cp = next;
                }
                self.nargs = arity;
                self.pc = target;
                self.note_depth();
            }
            Proceed => self.pc = self.cp,
            TryMeElse(alt) => {
                self.choices.push(Choice {
                    args: self.regs[..self.nargs].to_vec(),
                    e: self.e,
                    cp: self.cp,
                    trail: self.store.trail_mark(),
                    heap: self.store.heap_top(),
                    alt,
                    env_top: self.env_top(),
                });
                self.note_depth();
                self.pc = next;
            }
            RetryMeElse(alt) => {
                match self.choices.last_mut() {
                    Some(c) => c.alt = alt,
                    None => return Err(self.internal("retry_me_else without a choice point")),
                }
                self.pc = next;
            }
            TrustMe => {
                self.choices.pop();
                self.pc = next;
            }
            Fail => return Ok(false),
            GetTemplate(t, r) => {
                let pool = self.pools[pool].clone();
                let tmpl = &pool.templates[usize::from(t)];
                let term = self.reg(r.0)?;
                if !self.match_node(&pool, &tmpl.root, tmpl.reg_base, term)? {
                    return Ok(false);
                }
                self.pc = next;
            }
            PutTemplate(t, r) => {
                let pool = self.pools[pool].clone();
                let tmpl = &pool.templates[usize::from(t)];
                let term = self.build_node(&pool, &tmpl.root, tmpl.reg_base)?;
                self.regs[r.slot()] = Some(term);
                self.pc = next;
            }
            MoveReg(src, dst) => {
                self.regs[dst.slot()] = self.regs[src.slot()];
                self.pc = next;
            }
            StoreEnv(r, y) => {
                let v = self.regs[r.slot()];
                let f = self.frame()?;
                f.slots[usize::from(y)] = v;
                self.pc = next;
            }
            LoadEnv(y, r) => {
                let v = self.frame()?.slots[usize::from(y)];
                self.regs[r.slot()] = v;
                self.pc = next;
            }
            Intrinsic(id) => return self.intrinsic(id, next),
            CallExtern(h) => {
                if !self.call_extern(h)? {
                    return Ok(false);
                }
                self.pc = next;
            }
            ExecuteExtern(h) => {
                if !self.call_extern(h)? {
                    return Ok(false);
                }
                self.pc = self.cp;
            }
            Halt => self.pc = HALT_ADDR,
        }
        Ok(true)
    }

    fn home(&self, base: u16, index: u16) -> usize {
        usize::from(base + index) - 1
    }

    fn build_const(&mut self, pool: &Pool, c: u32) -> Result<TermId, Interrupt> {
        Ok(match pool.consts.get(c as usize) {
            Some(PConst::Int(v)) => self.store.int(*v),
            Some(PConst::Real(v)) => self.store.real(*v),
            Some(PConst::Str(s)) => self.store.shared_string(s.clone()),
            Some(PConst::Atom(a)) => self.store.atom_sym(*a),
            Some(PConst::Functor(f, 0)) => self.store.atom_sym(*f),
            _ => return Err(self.internal("bad constant reference in template")),
        })
    }

    fn build_node(
        &mut self,
        pool: &Pool,
        node: &TemplateNode,
        base: u16,
    ) -> Result<TermId, Interrupt> {
        Ok(match node {
            TemplateNode::Slot { index, first } => {
                let slot = self.home(base, *index);
                match self.regs[slot] {
                    Some(t) if !first => t,
                    _ => {
                        let v = self.store.new_var();
                        self.regs[slot] = Some(v);
                        v
                    }
                }
            }
            TemplateNode::Const(c) => self.build_const(pool, *c)?,
            TemplateNode::Cmp { functor, args } => {
                let Some(PConst::Functor(f, _)) = pool.consts.get(*functor as usize) else {
                    return Err(self.internal("bad functor reference in template"));
                };
                let f = *f;
                let mut built = Vec::with_capacity(args.len());
                for a in args {
                    built.push(self.build_node(pool, a, base)?);
                }
                self.store.compound_sym(f, built)
            }
        })
    }

    /// Unifies `term` with a template without building the parts that
    /// already match.
    fn match_node(
        &mut self,
        pool: &Pool,
        node: &TemplateNode,
        base: u16,
        term: TermId,
    ) -> Result<bool, Interrupt> {
        match node {
            TemplateNode::Slot { index, first: true } => {
                let slot = self.home(base, *index);
                self.regs[slot] = Some(term);
                Ok(true)
            }
            TemplateNode::Slot {
                index,
                first: false,
            } => {
                let slot = self.home(base, *index);
                let Some(held) = self.regs[slot] else {
                    return Err(self.internal("template slot read before it was set"));
                };
                Ok(self.store.unify(held, term))
            }
            TemplateNode::Const(c) => {
                let d = self.store.deref(term);
                let matched = match (self.store.cell(d), pool.consts.get(*c as usize)) {
                    (Cell::Var(None), _) => {
                        let v = self.build_const(pool, *c)?;
                        return Ok(self.store.unify(d, v));
                    }
                    (Cell::Int(a), Some(PConst::Int(b))) => a == b,
                    (Cell::Real(a), Some(PConst::Real(b))) => a.to_bits() == b.to_bits(),
                    (Cell::Str(a), Some(PConst::Str(b))) => a == b,
                    (Cell::Atom(a), Some(PConst::Atom(b))) => a == b,
                    _ => false,
                };
                Ok(matched)
            }
            TemplateNode::Cmp { functor, args } => {
                let d = self.store.deref(term);
                let sub = match self.store.cell(d) {
                    Cell::Var(None) => None,
                    Cell::Cmp {
                        functor: f,
                        args: a,
                    } => match pool.consts.get(*functor as usize) {
                        Some(PConst::Functor(g, n)) if g == f && usize::from(*n) == a.len() => {
                            Some(a.clone())
                        }
                        _ => return Ok(false),
                    },
                    _ => return Ok(false),
                };
                match sub {
                    None => {
                        let built = self.build_node(pool, node, base)?;
                        Ok(self.store.unify(d, built))
                    }
                    Some(sub) => {
                        for (n, t) in args.iter().zip(sub.iter()) {
                            if !self.match_node(pool, n, base, *t)? {
                                return Ok(false);
                            }
                        }
                        Ok(true)
                    }
                }
            }
        }
    }

    fn call_extern(&mut self, h: HandleIndex) -> Result<bool, Interrupt> {
        let prog = self.prog;
        let Some(handle) = prog.handles.0.get(usize::from(h.0)) else {
            return Err(self.internal("extern handle out of range"));
        };
        let check = self.opts.check_preservation && !handle.regcl;
        let before = check.then_some(self.regs);
        let mut ctx = HostContext::new(&mut self.store, &mut self.regs, &handle.pred_name);
        let result = match &handle.callable {
            Callable::Host(f) => catch_unwind(AssertUnwindSafe(|| f(&mut ctx))),
            Callable::Native { entry, .. } => {
                let _guard = EXTERN_LOCK.lock().unwrap_or_else(PoisonError::into_inner);
                let entry = *entry;
                with_context(&mut ctx, || catch_unwind(|| unsafe { entry() }))
            }
        };
        let failed = ctx.failed();
        let faults = ctx.into_faults();
        self.faults.extend(faults);
        self.stats.extern_calls += 1;
        if let Err(payload) = result {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            return Err(Interrupt::Error(RunError::ExternFault {
                pred: format!("{}/{}", handle.pred_name, handle.arity),
                message,
            }));
        }
        if let Some(before) = before {
            self.stats.preservation_checks += 1;
            if before != self.regs {
                self.stats
                    .preservation_violations
                    .push(format!("{}/{}", handle.pred_name, handle.arity));
            }
        }
        Ok(!failed)
    }

    fn arg(&self, i: u16) -> Result<TermId, Interrupt> {
        self.reg(i)
    }

    /// Runs an intrinsic whose arguments are in A1..; on success control
    /// continues at `cont`.
    fn intrinsic(&mut self, id: IntrinsicId, cont: u32) -> Step {
        match id {
            IntrinsicId::Solve => {
                let g = self.arg(1)?;
                self.meta_call(g, cont)
            }
            IntrinsicId::Not => {
                let g = self.arg(1)?;
                self.negation(g, cont)
            }
            IntrinsicId::Eval => {
                let (out, expr) = (self.arg(1)?, self.arg(2)?);
                let v = match self.eval(expr, 0)? {
                    Num::Int(i) => self.store.int(i),
                    Num::Real(r) => self.store.real(r),
                };
                if !self.store.unify(out, v) {
                    return Ok(false);
                }
                self.pc = cont;
                Ok(true)
            }
            IntrinsicId::Lt
            | IntrinsicId::Gt
            | IntrinsicId::Le
            | IntrinsicId::Ge
            | IntrinsicId::EqNum => {
                let (a, b) = (self.arg(1)?, self.arg(2)?);
                let (a, b) = (self.eval(a, 0)?, self.eval(b, 0)?);
                if !compare(id, a, b) {
                    return Ok(false);
                }
                self.pc = cont;
                Ok(true)
            }
        }
    }

    fn eval(&self, t: TermId, depth: usize) -> Result<Num, Interrupt> {
        if depth > MAX_EVAL_DEPTH {
            return Err(RunError::Eval("expression nested too deeply".into()).into());
        }
        let t = self.store.deref(t);
        match self.store.cell(t) {
            Cell::Int(i) => Ok(Num::Int(*i)),
            Cell::Real(r) => Ok(Num::Real(*r)),
            Cell::Var(_) => {
                Err(RunError::Eval("unbound variable in arithmetic expression".into()).into())
            }
            Cell::Cmp { functor, args } if args.len() == 2 => {
                let op = self.store.symbols.name(*functor);
                if !matches!(op, "+" | "-" | "*" | "/") {
                    return Err(
                        RunError::Eval(format!("'{op}'/2 is not an arithmetic operator")).into(),
                    );
                }
                let a = self.eval(args[0], depth + 1)?;
                let b = self.eval(args[1], depth + 1)?;
                apply(op, a, b).map_err(|m| RunError::Eval(m).into())
            }
            _ => Err(RunError::Eval(format!(
                "{} is not an arithmetic expression",
                self.store.read(t)
            ))
            .into()),
        }
    }

    /// Calls the goal term `g` as if it appeared in the clause body.
    fn meta_call(&mut self, g: TermId, cont: u32) -> Step {
        let g = self.store.deref(g);
        let (name, args): (Sym, Vec<TermId>) = match self.store.cell(g) {
            Cell::Var(_) => {
                return Err(RunError::Instantiation("solve/not of an unbound goal".into()).into())
            }
            Cell::Atom(a) => (*a, Vec::new()),
            Cell::Cmp { functor, args } => (*functor, args.to_vec()),
            _ => {
                return Err(
                    RunError::Type(format!("{} is not callable", self.store.read(g))).into(),
                );
            }
        };
        if args.len() > self.regs.len() {
            return Err(RunError::Type("goal has more arguments than registers".into()).into());
        }
        for (i, a) in args.iter().enumerate() {
            self.regs[i] = Some(*a);
        }
        let n = args.len();
        self.nargs = n;
        let name = self.store.symbols.name(name).to_string();
        if let Some(id) = IntrinsicId::from_source_name(&name, n) {
            return self.intrinsic(id, cont);
        }
        if let Some(h) = self.prog.extern_handle(&name) {
            if self.prog.handles.get(h).arity == n {
                if !self.call_extern(h)? {
                    return Ok(false);
                }
                self.pc = cont;
                return Ok(true);
            }
        }
        match self.prog.pred_offset(&name, n) {
            Some(target) => {
                self.cp = cont;
                self.pc = target;
                self.note_depth();
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Negation as failure: proves `g` in a nested search and undoes
    /// everything it did.
    fn negation(&mut self, g: TermId, cont: u32) -> Step {
        let saved_regs = self.regs;
        let (e, cp, nargs) = (self.e, self.cp, self.nargs);
        let mark = self.store.trail_mark();
        let heap = self.store.heap_top();
        let barrier = self.choices.len();

        self.cp = HALT_ADDR;
        let result = match self.meta_call(g, HALT_ADDR) {
            Ok(true) => self
                .run_loop(barrier)
                .map(|end| matches!(end, LoopEnd::Halted)),
            Ok(false) => Ok(false),
            Err(i) => Err(i),
        };
        self.choices.truncate(barrier);
        self.store
            .trail_undo(mark)
            .expect("negation trail mark is live");
        self.store.truncate(heap);
        self.regs = saved_regs;
        self.e = e;
        self.cp = cp;
        self.nargs = nargs;
        if result? {
            return Ok(false);
        }
        self.pc = cont;
        Ok(true)
    }
}

fn apply(op: &str, a: Num, b: Num) -> Result<Num, String> {
    let overflow = || format!("integer overflow in {op}");
    match (a, b) {
        (Num::Int(x), Num::Int(y)) => {
            let r = match op {
                "+" => x.checked_add(y),
                "-" => x.checked_sub(y),
                "*" => x.checked_mul(y),
                _ => {
                    if y == 0 {
                        return Err("integer division by zero".into());
                    }
                    x.checked_div(y)
                }
            };
            r.map(Num::Int).ok_or_else(overflow)
        }
        _ => {
            let (x, y) = (a.as_f64(), b.as_f64());
            Ok(Num::Real(match op {
                "+" => x + y,
                "-" => x - y,
                "*" => x * y,
                _ => x / y,
            }))
        }
    }
}

fn compare(id: IntrinsicId, a: Num, b: Num) -> bool {
    use std::cmp::Ordering::*;
    let ord = match (a, b) {
        (Num::Int(x), Num::Int(y)) => Some(x.cmp(&y)),
        _ => a.as_f64().partial_cmp(&b.as_f64()),
    };
    let Some(ord) = ord else { return false };
    match id {
        IntrinsicId::Lt => ord == Less,
        IntrinsicId::Gt => ord == Greater,
        IntrinsicId::Le => ord != Greater,
        IntrinsicId::Ge => ord != Less,
        _ => ord == Equal,
    }
}

/// First answer to `query`.
pub fn run(prog: &LoadedProgram, query: &str, opts: MachineOptions) -> Result<Outcome, RunError> {
    let mut m = Machine::new(prog, opts);
    m.set_query_text(query)?;
    m.next_answer()
}

/// Every answer to `query`, in order. Exhausting the budget is an error.
pub fn all_answers(
    prog: &LoadedProgram,
    query: &str,
    opts: MachineOptions,
) -> Result<Vec<Answer>, RunError> {
    let mut m = Machine::new(prog, opts);
    m.set_query_text(query)?;
    let mut out = Vec::new();
    loop {
        match m.next_answer()? {
            Outcome::Success(a) => out.push(a),
            Outcome::Failure => return Ok(out),
            Outcome::BudgetExhausted => return Err(RunError::BudgetExhausted),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::{compile_module, CompileEnv, CompileOptions};
    use crate::frontend::{parse_module, parse_signature};
    use crate::hostapi::{host_signature_text, HOST_TEST};
    use crate::loader::load;

    fn program(src: &str) -> LoadedProgram {
        let env = CompileEnv::new()
            .with_signature(parse_signature(&host_signature_text(HOST_TEST).unwrap()).unwrap());
        let img =
            compile_module(&parse_module(src).unwrap(), &env, CompileOptions::default()).unwrap();
        load(&img, &[]).unwrap()
    }

    fn answers(prog: &LoadedProgram, q: &str) -> Vec<String> {
        all_answers(prog, q, MachineOptions::default())
            .unwrap()
            .iter()
            .map(ToString::to_string)
            .collect()
    }

    #[test]
    fn facts_enumerate_in_order() {
        let p = program("p 1. p 2.");
        assert_eq!(answers(&p, "p X"), ["X = 1", "X = 2"]);
        assert_eq!(answers(&p, "p 2"), ["yes"]);
        assert!(answers(&p, "p 3").is_empty());
    }

    #[test]
    fn empty_program_fails() {
        let p = load(&Default::default(), &[]).unwrap();
        assert_eq!(
            run(&p, "p X", MachineOptions::default()).unwrap(),
            Outcome::Failure
        );
    }

    #[test]
    fn conjunction_and_structures() {
        let p = program(
            "module m. accum_extern host_test.\n\
             app nil L L.\n\
             app (cons H T) L (cons H R) :- app T L R.\n\
             pair X Y (f X Y).\n",
        );
        assert_eq!(
            answers(&p, "app X Y (cons 1 (cons 2 nil))"),
            [
                "X = nil\nY = cons(1, cons(2, nil))",
                "X = cons(1, nil)\nY = cons(2, nil)",
                "X = cons(1, cons(2, nil))\nY = nil"
            ]
        );
        assert_eq!(answers(&p, "pair 1 Y Z"), ["Y = _G0\nZ = f(1, _G0)"]);
    }

    #[test]
    fn externs_and_failure() {
        let p = program(
            "module m. accum_extern host_test.\n\
             q X :- sin X Y, cos Y Z, echo_real Z X2, r X2.\n\
             r _.\n\
             t 1. t 2.\n\
             s X :- t X, pos X, always_fail X.\n\
             s 9.\n",
        );
        assert_eq!(
            run(&p, "echo 7 X", MachineOptions::default())
                .unwrap()
                .to_string_answer(),
            "X = 7"
        );
        assert_eq!(answers(&p, "s X"), ["X = 9"]);
        assert_eq!(answers(&p, "fail_then_return 1 X"), Vec::<String>::new());
        let a = all_answers(&p, "cos 0.0 Z", MachineOptions::default()).unwrap();
        assert_eq!(a[0].get("Z"), Some(&Value::Real(1.0)));
    }

    #[test]
    fn arithmetic_and_comparison() {
        let p = program("double X Y :- is Y (*(X, 2)).");
        assert_eq!(answers(&p, "double 21 Y"), ["Y = 42"]);
        assert_eq!(answers(&p, "is X (+(3, 4))"), ["X = 7"]);
        assert_eq!(answers(&p, "is X (*(2.5, 4))"), ["X = 10.0"]);
        assert_eq!(answers(&p, "is X (/(7, 2))"), ["X = 3"]);
        assert_eq!(answers(&p, "is X (/(-7, 2))"), ["X = -3"]);
        assert_eq!(answers(&p, "< 1 2"), ["yes"]);
        assert_eq!(answers(&p, ">= 2.0 2"), ["yes"]);
        assert_eq!(answers(&p, "=:= 2.0 2"), ["yes"]);
        assert!(answers(&p, "> 1 2").is_empty());
        assert!(matches!(
            run(&p, "< X 1", MachineOptions::default()),
            Err(RunError::Eval(_))
        ));
        assert!(matches!(
            run(&p, "is X (/(1, 0))", MachineOptions::default()),
            Err(RunError::Eval(_))
        ));
        assert!(matches!(
            run(&p, "is X (foo 1 2)", MachineOptions::default()),
            Err(RunError::Eval(_))
        ));
    }

    #[test]
    fn negation_and_meta_call() {
        let p = program("p 1. p 2. q X :- solve (p X). r X :- not (p X).");
        assert_eq!(answers(&p, "not (p 99)"), ["yes"]);
        assert!(answers(&p, "not (p 1)").is_empty());
        assert_eq!(answers(&p, "q X"), ["X = 1", "X = 2"]);
        assert_eq!(answers(&p, "solve (p X)"), answers(&p, "p X"));
        assert_eq!(answers(&p, "r 5"), ["yes"]);
        assert_eq!(answers(&p, "not (p X)"), Vec::<String>::new());
        assert_eq!(answers(&p, "solve (is X (+(1, 1)))"), ["X = 2"]);
        assert!(matches!(
            run(&p, "solve X", MachineOptions::default()),
            Err(RunError::Instantiation(_))
        ));
        assert!(matches!(
            run(&p, "solve 3", MachineOptions::default()),
            Err(RunError::Type(_))
        ));
    }

    #[test]
    fn bindings_undone_after_exhaustion() {
        let p = program("module m. accum_extern host_test. p 1. p 2.");
        let mut m = Machine::new(&p, MachineOptions::default());
        m.set_query_text("echo 3 Y, p X").unwrap();
        while let Outcome::Success(_) = m.next_answer().unwrap() {}
        assert!(m
            .query_bindings()
            .iter()
            .all(|(_, v)| matches!(v, Value::Var(_))));
    }

    #[test]
    fn budget() {
        let p = program("loop :- loop.");
        let opts = MachineOptions {
            max_steps: Some(1000),
            ..Default::default()
        };
        assert_eq!(run(&p, "loop", opts).unwrap(), Outcome::BudgetExhausted);
    }

    #[test]
    fn faults() {
        let p = program("module m. accum_extern host_test.");
        let mut m = Machine::new(&p, MachineOptions::default());
        m.set_query_text("echo_real 1 X").unwrap();
        assert_eq!(m.next_answer().unwrap(), Outcome::Failure);
        assert_eq!(m.faults().len(), 1);
        let err = run(&p, "explode 1", MachineOptions::default()).unwrap_err();
        assert!(err.to_string().contains("deliberate"), "{err}");
    }

    impl Outcome {
        fn to_string_answer(&self) -> String {
            match self {
                Outcome::Success(a) => a.to_string(),
                other => format!("{other:?}"),
            }
        }
    }
}
