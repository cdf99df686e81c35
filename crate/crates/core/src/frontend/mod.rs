//! Source languages: module files (`.mod`), extern signature files (`.sig`)
//! and stub generator specifications (`.spec`), plus the shared type
//! expression language.
//!
//! The parsers are name-resolution free. They check only what can be checked
//! from a single file; cross-file checks belong to the compiler.

mod lexer;
mod parser;

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

pub use parser::{parse_module, parse_query, parse_signature, parse_spec};

/// 1-based source position. Positions never take part in AST equality.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl Pos {
    pub fn new(line: u32, col: u32) -> Self {
        Pos { line, col }
    }
}

impl PartialEq for Pos {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{pos}: {message}")]
pub struct ParseError {
    pub pos: Pos,
    pub message: String,
}

impl ParseError {
    pub fn new(pos: Pos, message: impl Into<String>) -> Self {
        ParseError {
            pos,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseType {
    Int,
    Real,
    Str,
    /// The proposition type.
    O,
}

impl BaseType {
    pub fn name(self) -> &'static str {
        match self {
            BaseType::Int => "int",
            BaseType::Real => "real",
            BaseType::Str => "string",
            BaseType::O => "o",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "int" => BaseType::Int,
            "real" => BaseType::Real,
            "string" => BaseType::Str,
            "o" => BaseType::O,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TypeExpr {
    Base(BaseType),
    Kind(String, Vec<TypeExpr>),
    Arrow(Box<TypeExpr>, Box<TypeExpr>),
}

impl TypeExpr {
    pub fn arrow(domain: TypeExpr, codomain: TypeExpr) -> Self {
        TypeExpr::Arrow(Box::new(domain), Box::new(codomain))
    }

    /// `T1 -> .. -> Tn -> result` from a list of domains.
    pub fn function(domains: impl IntoIterator<Item = TypeExpr>, result: TypeExpr) -> Self {
        let domains: Vec<_> = domains.into_iter().collect();
        domains
            .into_iter()
            .rev()
            .fold(result, |acc, d| TypeExpr::arrow(d, acc))
    }

    pub fn domains(&self) -> Vec<&TypeExpr> {
        let mut out = Vec::new();
        let mut t = self;
        while let TypeExpr::Arrow(d, c) = t {
            out.push(d.as_ref());
            t = c;
        }
        out
    }

    pub fn codomain(&self) -> &TypeExpr {
        let mut t = self;
        while let TypeExpr::Arrow(_, c) = t {
            t = c;
        }
        t
    }

    pub fn is_predicate(&self) -> bool {
        matches!(self.codomain(), TypeExpr::Base(BaseType::O))
    }

    pub fn arity(&self) -> usize {
        self.domains().len()
    }

    pub fn as_base(&self) -> Option<BaseType> {
        match self {
            TypeExpr::Base(b) => Some(*b),
            _ => None,
        }
    }

    fn is_atomic(&self) -> bool {
        match self {
            TypeExpr::Base(_) => true,
            TypeExpr::Kind(_, args) => args.is_empty(),
            TypeExpr::Arrow(..) => false,
        }
    }
}

/// Renders a type in source syntax; the output re-parses to the same type.
pub fn format_type(t: &TypeExpr) -> String {
    t.to_string()
}

impl fmt::Display for TypeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeExpr::Base(b) => f.write_str(b.name()),
            TypeExpr::Kind(name, args) => {
                f.write_str(name)?;
                for a in args {
                    if a.is_atomic() {
                        write!(f, " {a}")?;
                    } else {
                        write!(f, " ({a})")?;
                    }
                }
                Ok(())
            }
            TypeExpr::Arrow(d, c) => {
                if matches!(**d, TypeExpr::Arrow(..)) {
                    write!(f, "({d}) -> {c}")
                } else {
                    write!(f, "{d} -> {c}")
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternDecl {
    pub lp_name: String,
    pub c_name: String,
    pub ty: TypeExpr,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignatureAst {
    pub sig_name: String,
    pub lib_name: String,
    pub externs: Vec<ExternDecl>,
    pub regcl: BTreeSet<String>,
}

impl SignatureAst {
    pub fn get(&self, lp_name: &str) -> Option<&ExternDecl> {
        self.externs.iter().find(|e| e.lp_name == lp_name)
    }
}

impl fmt::Display for SignatureAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sig {}.", self.sig_name)?;
        writeln!(f, "#lib {}.", self.lib_name)?;
        writeln!(f)?;
        for e in &self.externs {
            writeln!(f, "extern type {} {} {}.", e.lp_name, e.c_name, e.ty)?;
        }
        if !self.regcl.is_empty() {
            writeln!(f)?;
            let names: Vec<&str> = self.regcl.iter().map(String::as_str).collect();
            writeln!(f, "regcl {}.", names.join(", "))?;
        }
        Ok(())
    }
}

/// Source-level term.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Var(String),
    Int(i64),
    Real(f64),
    Str(String),
    Atom(String),
    Cmp(String, Vec<Term>),
}

impl Term {
    pub fn vars(&self, out: &mut Vec<String>) {
        match self {
            Term::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Term::Cmp(_, args) => args.iter().for_each(|a| a.vars(out)),
            _ => {}
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use crate::terms::{format_real, is_plain_atom, quote_str};
        let name = |n: &str| {
            if is_plain_atom(n) {
                n.to_string()
            } else {
                format!("'{n}'")
            }
        };
        match self {
            Term::Var(v) => f.write_str(v),
            Term::Int(i) => write!(f, "{i}"),
            Term::Real(r) => f.write_str(&format_real(*r)),
            Term::Str(s) => f.write_str(&quote_str(s)),
            Term::Atom(a) => f.write_str(&name(a)),
            Term::Cmp(n, args) => {
                write!(f, "{}(", name(n))?;
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

/// A predicate application: head or body goal.
#[derive(Debug, Clone, PartialEq)]
pub struct Goal {
    pub name: String,
    pub args: Vec<Term>,
    pub pos: Pos,
}

impl Goal {
    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn as_term(&self) -> Term {
        if self.args.is_empty() {
            Term::Atom(self.name.clone())
        } else {
            Term::Cmp(self.name.clone(), self.args.clone())
        }
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_term())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub head: Goal,
    pub body: Vec<Goal>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Named {
    pub name: String,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeDecl {
    pub name: String,
    pub ty: TypeExpr,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModuleAst {
    pub module_name: String,
    pub accumulates: Vec<Named>,
    pub accum_externs: Vec<Named>,
    pub local_sig: Vec<TypeDecl>,
    pub clauses: Vec<Clause>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KindDecl {
    pub name: String,
    pub arity: usize,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtorDecl {
    pub name: String,
    pub ty: TypeExpr,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NativeField {
    pub c_type: String,
    pub name: String,
}

/// Correspondence between a kind instance and a native record.
#[derive(Debug, Clone, PartialEq)]
pub struct NativeMap {
    pub kind: TypeExpr,
    pub record: String,
    pub fields: Vec<NativeField>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredSpec {
    pub lp_name: String,
    pub entry_base: String,
    pub ty: TypeExpr,
    pub regcl: bool,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecAst {
    pub spec_name: String,
    pub lib_name: String,
    pub kinds: Vec<KindDecl>,
    pub constructors: Vec<CtorDecl>,
    pub native_maps: Vec<NativeMap>,
    pub preds: Vec<PredSpec>,
}

impl SpecAst {
    pub fn native_map(&self, kind: &str) -> Option<&NativeMap> {
        self.native_maps
            .iter()
            .find(|m| matches!(&m.kind, TypeExpr::Kind(k, _) if k == kind))
    }

    /// Constructors whose result type is an instance of `kind`.
    pub fn constructors_of(&self, kind: &str) -> Vec<&CtorDecl> {
        self.constructors
            .iter()
            .filter(|c| matches!(c.ty.codomain(), TypeExpr::Kind(k, _) if k == kind))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real() -> TypeExpr {
        TypeExpr::Base(BaseType::Real)
    }

    #[test]
    fn format_examples() {
        let t = TypeExpr::function([real(), real()], TypeExpr::Base(BaseType::O));
        assert_eq!(format_type(&t), "real -> real -> o");
        assert_eq!(format_type(&TypeExpr::Base(BaseType::Int)), "int");
        let pair = TypeExpr::Kind(
            "pair".into(),
            vec![TypeExpr::Base(BaseType::Int), TypeExpr::Base(BaseType::Int)],
        );
        assert_eq!(format_type(&pair), "pair int int");
    }

    #[test]
    fn format_parenthesizes_nested() {
        let inner = TypeExpr::arrow(real(), real());
        let t = TypeExpr::arrow(inner.clone(), real());
        assert_eq!(t.to_string(), "(real -> real) -> real");
        let k = TypeExpr::Kind(
            "list".into(),
            vec![TypeExpr::Kind("pair".into(), vec![real(), real()])],
        );
        assert_eq!(k.to_string(), "list (pair real real)");
    }

    #[test]
    fn domains_and_codomain() {
        let t = TypeExpr::function([real(), real()], TypeExpr::Base(BaseType::O));
        assert_eq!(t.arity(), 2);
        assert!(t.is_predicate());
        assert!(!TypeExpr::arrow(real(), real()).is_predicate());
    }
}
