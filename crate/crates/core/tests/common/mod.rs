//! Generators and helpers shared by the integration tests.
#![allow(dead_code)]

use std::fmt::Write as _;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

use mlp_core::bytecode::{
    BytecodeImage, Const, ExternEntry, ExternIndex, Instruction, IntrinsicId, PredEntry, Reg,
    TemplateNode, TermTemplate, NUM_REGISTERS,
};
use mlp_core::compiler::{compile_module, CompileEnv, CompileOptions, ModuleInterface};
use mlp_core::frontend::{parse_module, parse_query, parse_signature, Goal, Pos, Term};
use mlp_core::hostapi::{host_signature_text, HOST_INTRINSICS, HOST_TEST};
use mlp_core::loader::{load, LoadedProgram};
use mlp_core::terms::Value;
use mlp_core::vm::{Machine, MachineOptions, Outcome};

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

/// Environment with both in-process signatures available.
pub fn host_env() -> CompileEnv {
    let mut env = CompileEnv::new();
    for lib in [HOST_TEST, HOST_INTRINSICS] {
        let sig = parse_signature(&host_signature_text(lib).unwrap()).unwrap();
        env.signatures.insert(sig.sig_name.clone(), sig);
    }
    env
}

pub fn compile_with(src: &str, env: &CompileEnv, opts: CompileOptions) -> BytecodeImage {
    let ast = parse_module(src).unwrap_or_else(|e| panic!("{e}\n{src}"));
    compile_module(&ast, env, opts).unwrap_or_else(|e| panic!("{e}\n{src}"))
}

pub fn compile_src(src: &str) -> BytecodeImage {
    compile_with(src, &host_env(), CompileOptions::default())
}

pub fn load_img(img: &BytecodeImage) -> LoadedProgram {
    load(img, &[]).unwrap()
}

pub fn program(src: &str) -> LoadedProgram {
    load_img(&compile_src(src))
}

/// Every answer to a query, rendered comparably across programs: bindings
/// with variables renamed in first-occurrence order, and a final line saying
/// how the search ended.
pub fn outcomes(prog: &LoadedProgram, goals: &[Goal], max_steps: u64, limit: usize) -> Vec<String> {
    let mut m = Machine::new(
        prog,
        MachineOptions {
            max_steps: Some(max_steps),
            ..Default::default()
        },
    );
    if let Err(e) = m.set_query(goals) {
        return vec![format!("error: {e}")];
    }
    let mut out = Vec::new();
    loop {
        if out.len() == limit {
            out.push("limit".to_string());
            break;
        }
        match m.next_answer() {
            Ok(Outcome::Success(a)) => {
                let names: Vec<&str> = a.bindings.iter().map(|(n, _)| n.as_str()).collect();
                let tuple = Value::Compound(
                    "ans".into(),
                    a.bindings.iter().map(|(_, v)| v.clone()).collect(),
                )
                .canonical();
                out.push(format!("{} {tuple}", names.join(",")));
            }
            Ok(Outcome::Failure) => {
                out.push("no more".to_string());
                break;
            }
            Ok(Outcome::BudgetExhausted) => {
                out.push("budget".to_string());
                break;
            }
            Err(e) => {
                out.push(format!("error: {e}"));
                break;
            }
        }
    }
    out
}

pub fn query(text: &str) -> Vec<Goal> {
    parse_query(text).unwrap()
}

pub fn goal(name: &str, args: Vec<Term>) -> Goal {
    Goal {
        name: name.to_string(),
        args,
        pos: Pos::default(),
    }
}

// ---- random images ----

fn name(rng: &mut StdRng) -> String {
    let pool = [
        "a",
        "b",
        "foo",
        "bar_1",
        "x",
        "cons",
        "nil",
        "'q'",
        "long_name_here",
    ];
    pool.choose(rng).unwrap().to_string()
}

fn const_leaf(rng: &mut StdRng) -> Const {
    match rng.gen_range(0..4) {
        0 => Const::Atom(name(rng)),
        1 => Const::Int(rng.gen()),
        2 => Const::Real(f64::from_bits(rng.gen())),
        _ => Const::Str(
            (0..rng.gen_range(0..8))
                .map(|_| rng.gen::<char>())
                .collect(),
        ),
    }
}

fn template_node(
    rng: &mut StdRng,
    consts: &mut Vec<Const>,
    depth: u32,
    max_slot: u16,
) -> TemplateNode {
    match rng.gen_range(0..if depth == 0 { 2 } else { 3 }) {
        0 => TemplateNode::Slot {
            index: rng.gen_range(0..=max_slot),
            first: rng.gen(),
        },
        1 => {
            consts.push(const_leaf(rng));
            TemplateNode::Const(consts.len() as u32 - 1)
        }
        _ => {
            let n = rng.gen_range(1..4);
            consts.push(Const::Functor(name(rng), n));
            let functor = consts.len() as u32 - 1;
            let args = (0..n)
                .map(|_| template_node(rng, consts, depth - 1, max_slot))
                .collect();
            TemplateNode::Cmp { functor, args }
        }
    }
}

fn reg(rng: &mut StdRng) -> Reg {
    Reg(rng.gen_range(1..=NUM_REGISTERS))
}

/// A random image that passes validation.
pub fn random_image(rng: &mut StdRng) -> BytecodeImage {
    let mut consts: Vec<Const> = (0..rng.gen_range(0..6)).map(|_| const_leaf(rng)).collect();
    consts.push(Const::Functor(name(rng), rng.gen_range(0..4)));
    let mut templates = Vec::new();
    for _ in 0..rng.gen_range(1..6) {
        let reg_base = rng.gen_range(1..=8u16);
        let max_slot = NUM_REGISTERS - reg_base;
        let root = template_node(rng, &mut consts, 3, max_slot);
        templates.push(TermTemplate { reg_base, root });
    }
    let externs: Vec<ExternEntry> = (0..rng.gen_range(0..4))
        .map(|_| ExternEntry {
            lib_name: ["math", "host:test", "pairs"]
                .choose(rng)
                .unwrap()
                .to_string(),
            entry_symbol: format!("{}_wrapper", name(rng)),
            pred_name: name(rng),
            arity: rng.gen_range(0..5),
            regcl: rng.gen(),
        })
        .collect();
    let functors: Vec<u16> = consts
        .iter()
        .enumerate()
        .filter(|(_, c)| matches!(c, Const::Functor(..)))
        .map(|(i, _)| i as u16)
        .collect();
    let ncode = rng.gen_range(1..40u32);
    let code = (0..ncode)
        .map(|_| {
            use Instruction::*;
            let t = rng.gen_range(0..templates.len() as u16);
            match rng.gen_range(0..18) {
                0 => Allocate(rng.gen()),
                1 => Deallocate,
                2 => Call(*functors.choose(rng).unwrap()),
                3 => Execute(*functors.choose(rng).unwrap()),
                4 => Proceed,
                5 => TryMeElse(rng.gen_range(0..ncode)),
                6 => RetryMeElse(rng.gen_range(0..ncode)),
                7 => TrustMe,
                8 => Fail,
                9 => GetTemplate(t, reg(rng)),
                10 => PutTemplate(t, reg(rng)),
                11 => MoveReg(reg(rng), reg(rng)),
                12 => StoreEnv(reg(rng), rng.gen()),
                13 => LoadEnv(rng.gen(), reg(rng)),
                14 => Intrinsic(*IntrinsicId::ALL.choose(rng).unwrap()),
                15 if !externs.is_empty() => {
                    CallExtern(ExternIndex(rng.gen_range(0..externs.len() as u16)))
                }
                16 if !externs.is_empty() => {
                    ExecuteExtern(ExternIndex(rng.gen_range(0..externs.len() as u16)))
                }
                _ => Halt,
            }
        })
        .collect();
    let mut preds: Vec<PredEntry> = Vec::new();
    for _ in 0..rng.gen_range(0..5) {
        let p = PredEntry {
            name: name(rng),
            arity: rng.gen_range(0..4),
            offset: rng.gen_range(0..ncode),
        };
        if !preds.iter().any(|q| q.name == p.name && q.arity == p.arity) {
            preds.push(p);
        }
    }
    let img = BytecodeImage {
        consts,
        templates,
        externs,
        preds,
        code,
        ..Default::default()
    };
    img.validate().expect("generator produced an invalid image");
    img
}

// ---- random programs ----

/// Options for the random program generator.
#[derive(Debug, Clone, Copy)]
pub struct ProgramShape {
    pub preds: usize,
    /// Allow comparison intrinsics, which may raise instantiation errors.
    pub comparisons: bool,
    /// Allow `not` and `solve` in clause bodies.
    pub meta: bool,
    /// Allow calls to host:test externs.
    pub externs: bool,
}

impl Default for ProgramShape {
    fn default() -> Self {
        ProgramShape {
            preds: 6,
            comparisons: true,
            meta: true,
            externs: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PredDef {
    pub name: String,
    pub arity: usize,
    pub clauses: Vec<String>,
}

/// Non-recursive predicates: `p<i>` only calls `p<j>` with `j < i`, so every
/// query terminates.
#[derive(Debug, Clone)]
pub struct RandomProgram {
    pub preds: Vec<PredDef>,
}

const VARS: [&str; 4] = ["X", "Y", "Z", "W"];

fn rand_term(rng: &mut StdRng, depth: u32) -> String {
    match rng.gen_range(0..if depth == 0 { 7 } else { 8 }) {
        0..=2 => VARS.choose(rng).unwrap().to_string(),
        3 | 4 => rng.gen_range(0..4).to_string(),
        5 => "a".to_string(),
        6 => "b".to_string(),
        _ => format!(
            "(f {} {})",
            rand_term(rng, depth - 1),
            rand_term(rng, depth - 1)
        ),
    }
}

fn rand_args(rng: &mut StdRng, n: usize) -> String {
    (0..n).map(|_| format!(" {}", rand_term(rng, 1))).collect()
}

fn rand_expr(rng: &mut StdRng) -> String {
    match rng.gen_range(0..3) {
        0 => VARS.choose(rng).unwrap().to_string(),
        1 => rng.gen_range(0..4).to_string(),
        _ => format!("+({}, {})", VARS.choose(rng).unwrap(), rng.gen_range(0..3)),
    }
}

impl RandomProgram {
    pub fn generate(rng: &mut StdRng, shape: ProgramShape) -> Self {
        let mut preds: Vec<PredDef> = Vec::new();
        for i in 0..shape.preds {
            let name = format!("p{i}");
            let arity = rng.gen_range(1..=3);
            let mut clauses = Vec::new();
            for _ in 0..rng.gen_range(1..=3) {
                let head = format!("{name}{}", rand_args(rng, arity));
                let mut body = Vec::new();
                for _ in 0..rng.gen_range(0..=3) {
                    let callee = (!preds.is_empty()).then(|| &preds[rng.gen_range(0..preds.len())]);
                    let g = match (rng.gen_range(0..10), callee) {
                        (0..=4, Some(c)) => format!("{}{}", c.name, rand_args(rng, c.arity)),
                        (5, Some(c)) if shape.meta => {
                            format!("not ({}{})", c.name, rand_args(rng, c.arity))
                        }
                        (6, Some(c)) if shape.meta => {
                            format!("solve ({}{})", c.name, rand_args(rng, c.arity))
                        }
                        (7, _) if shape.externs => format!(
                            "{} {} {}",
                            ["inc", "dec", "echo", "clobber_inc"].choose(rng).unwrap(),
                            VARS.choose(rng).unwrap(),
                            VARS.choose(rng).unwrap()
                        ),
                        (8, _) if shape.comparisons => format!(
                            "{} {} {}",
                            ["<", ">", "=<", ">=", "=:="].choose(rng).unwrap(),
                            rand_expr(rng),
                            rand_expr(rng)
                        ),
                        (9, _) if shape.comparisons => {
                            format!("is {} ({})", VARS.choose(rng).unwrap(), rand_expr(rng))
                        }
                        _ => continue,
                    };
                    body.push(g);
                }
                clauses.push(if body.is_empty() {
                    format!("{head}.")
                } else {
                    format!("{head} :- {}.", body.join(", "))
                });
            }
            preds.push(PredDef {
                name,
                arity,
                clauses,
            });
        }
        RandomProgram { preds }
    }

    fn clauses_text(&self, which: &[usize]) -> String {
        let mut out = String::new();
        for &i in which {
            for c in &self.preds[i].clauses {
                let _ = writeln!(out, "{c}");
            }
        }
        out
    }

    /// The whole program as one module.
    pub fn monolithic(&self) -> String {
        let all: Vec<usize> = (0..self.preds.len()).collect();
        format!(
            "module whole.\naccum_extern host_test.\n{}",
            self.clauses_text(&all)
        )
    }

    /// Assigns every predicate to one of `parts` modules at random and
    /// returns `(module name, source)` pairs. Each module accumulates all
    /// the others.
    pub fn partition(&self, rng: &mut StdRng, parts: usize) -> Vec<(String, String)> {
        let mut owner: Vec<usize> = (0..self.preds.len()).map(|i| i % parts).collect();
        owner.shuffle(rng);
        (0..parts)
            .map(|k| {
                let name = format!("part{k}");
                let mine: Vec<usize> = (0..self.preds.len()).filter(|&i| owner[i] == k).collect();
                let others: Vec<String> = (0..parts)
                    .filter(|&j| j != k)
                    .map(|j| format!("part{j}"))
                    .collect();
                let src = format!(
                    "module {name}.\naccum_extern host_test.\naccumulate {}.\n{}",
                    others.join(", "),
                    self.clauses_text(&mine)
                );
                (name, src)
            })
            .collect()
    }

    pub fn random_query(&self, rng: &mut StdRng) -> Vec<Goal> {
        let p = &self.preds[rng.gen_range(0..self.preds.len())];
        let args: String = (0..p.arity)
            .map(|i| match rng.gen_range(0..3) {
                0 => format!(" Q{i}"),
                _ => format!(" {}", rand_term(rng, 1).replace(['X', 'Y', 'Z', 'W'], "V")),
            })
            .collect();
        query(&format!("{}{args}", p.name))
    }
}

/// Compiles each part against interfaces of the others.
pub fn compile_parts(parts: &[(String, String)], opts: CompileOptions) -> Vec<BytecodeImage> {
    let asts: Vec<_> = parts
        .iter()
        .map(|(_, s)| parse_module(s).unwrap())
        .collect();
    let mut env = host_env();
    for a in &asts {
        env.modules
            .insert(a.module_name.clone(), ModuleInterface::of(a));
    }
    asts.iter()
        .map(|a| compile_module(a, &env, opts).unwrap_or_else(|e| panic!("{e}")))
        .collect()
}

// ---- arithmetic oracle ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Num {
    Int(i64),
    Real(f64),
}

/// Random arithmetic expression over `+ - * /` and its value computed
/// independently: integers in i128 with an explicit range check, reals in
/// f64 after promotion.
pub fn random_expr(rng: &mut StdRng, depth: u32) -> (Term, Result<Num, ()>) {
    if depth == 0 || rng.gen_bool(0.3) {
        return match rng.gen_range(0..10) {
            0..=4 => {
                let v = rng.gen_range(-50..=50);
                (Term::Int(v), Ok(Num::Int(v)))
            }
            5 => {
                let v = if rng.gen() {
                    i64::MAX - rng.gen_range(0..3)
                } else {
                    i64::MIN + rng.gen_range(0..3)
                };
                (Term::Int(v), Ok(Num::Int(v)))
            }
            6 => {
                let v = rng.gen_range(-3_000_000_000i64..3_000_000_000);
                (Term::Int(v), Ok(Num::Int(v)))
            }
            7 | 8 => {
                let v = rng.gen_range(-1000.0..1000.0);
                (Term::Real(v), Ok(Num::Real(v)))
            }
            _ => {
                let v = f64::from(rng.gen_range(-64..64)) / 8.0;
                (Term::Real(v), Ok(Num::Real(v)))
            }
        };
    }
    let op = *["+", "-", "*", "/"].choose(rng).unwrap();
    let (ta, a) = random_expr(rng, depth - 1);
    let (tb, b) = random_expr(rng, depth - 1);
    let value = match (a, b) {
        (Ok(a), Ok(b)) => oracle_apply(op, a, b),
        _ => Err(()),
    };
    (Term::Cmp(op.to_string(), vec![ta, tb]), value)
}

fn oracle_apply(op: &str, a: Num, b: Num) -> Result<Num, ()> {
    match (a, b) {
        (Num::Int(x), Num::Int(y)) => {
            let (x, y) = (i128::from(x), i128::from(y));
            let r = match op {
                "+" => x + y,
                "-" => x - y,
                "*" => x * y,
                _ if y == 0 => return Err(()),
                _ => x / y,
            };
            i64::try_from(r).map(Num::Int).map_err(|_| ())
        }
        _ => {
            let f = |n: Num| match n {
                Num::Int(i) => i as f64,
                Num::Real(r) => r,
            };
            let (x, y) = (f(a), f(b));
            Ok(Num::Real(match op {
                "+" => x + y,
                "-" => x - y,
                "*" => x * y,
                _ => x / y,
            }))
        }
    }
}

/// Distance in units in the last place between two finite doubles of the
/// same sign; infinities and NaNs only match themselves.
pub fn ulps(a: f64, b: f64) -> u64 {
    if a.is_nan() || b.is_nan() {
        return if a.is_nan() && b.is_nan() {
            0
        } else {
            u64::MAX
        };
    }
    if a == b {
        return 0;
    }
    if a.is_sign_negative() != b.is_sign_negative() {
        return u64::MAX;
    }
    a.to_bits().abs_diff(b.to_bits())
}

// ---- random terms ----

pub fn random_value(rng: &mut StdRng, depth: u32, nvars: usize) -> Value {
    match rng.gen_range(0..if depth == 0 { 6 } else { 9 }) {
        0 | 1 => Value::Var(rng.gen_range(0..nvars)),
        2 => Value::Int(rng.gen_range(-2..3)),
        3 => Value::Atom(["a", "b"].choose(rng).unwrap().to_string()),
        4 => Value::Real([0.5, -1.0, 2.25].choose(rng).copied().unwrap()),
        5 => Value::Str(["", "s"].choose(rng).unwrap().to_string()),
        _ => {
            let (f, n) = *[("f", 1), ("g", 2), ("g", 3), ("h", 2)]
                .choose(rng)
                .unwrap();
            Value::Compound(
                f.to_string(),
                (0..n)
                    .map(|_| random_value(rng, depth - 1, nvars))
                    .collect(),
            )
        }
    }
}
