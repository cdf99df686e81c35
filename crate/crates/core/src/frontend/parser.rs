use std::collections::BTreeSet;

use super::lexer::{tokenize, Tok, Token};
use super::*;

const BASE_NAMES: [&str; 4] = ["int", "real", "string", "o"];

struct Parser {
    toks: Vec<Token>,
    at: usize,
    anon: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn new(src: &str) -> PResult<Self> {
        Ok(Parser {
            toks: tokenize(src)?,
            at: 0,
            anon: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn peek_nth(&self, n: usize) -> &Tok {
        let i = (self.at + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    /// True when the current token starts exactly where the previous ended.
    fn adjacent(&self) -> bool {
        self.at > 0 && self.toks[self.at - 1].end == self.toks[self.at].start
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Name(n) if n == kw)
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> PResult<()> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.unexpected(what))
        }
    }

    fn unexpected(&self, what: &str) -> ParseError {
        let found = match self.peek() {
            Tok::Eof => "end of input".to_string(),
            t => describe(t),
        };
        ParseError::new(self.pos(), format!("expected {what}, found {found}"))
    }

    fn name(&mut self, what: &str) -> PResult<(String, Pos)> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Name(n) | Tok::Quoted(n) => {
                self.bump();
                Ok((n, pos))
            }
            _ => Err(self.unexpected(what)),
        }
    }

    /// Identifier that may start with an uppercase letter (native symbols).
    fn symbol_name(&mut self, what: &str) -> PResult<String> {
        match self.peek().clone() {
            Tok::Name(n) | Tok::Quoted(n) | Tok::Var(n) => {
                self.bump();
                Ok(n)
            }
            _ => Err(self.unexpected(what)),
        }
    }

    /// Library names may carry a namespace prefix, as in `host:test`.
    fn lib_name(&mut self) -> PResult<String> {
        let (mut name, _) = self.name("a library name")?;
        if matches!(self.peek(), Tok::Sym(s) if s == ":") && self.adjacent() {
            self.bump();
            if !self.adjacent() {
                return Err(self.unexpected("a library name after ':'"));
            }
            let (rest, _) = self.name("a library name after ':'")?;
            name = format!("{name}:{rest}");
        }
        Ok(name)
    }

    fn name_list(&mut self, what: &str) -> PResult<Vec<Named>> {
        let mut out = Vec::new();
        loop {
            let (name, pos) = self.name(what)?;
            out.push(Named { name, pos });
            if !self.eat(&Tok::Comma) {
                return Ok(out);
            }
        }
    }

    fn end(&mut self) -> PResult<()> {
        self.expect(&Tok::End, "'.'")
    }

    // ---- types ----

    fn type_expr(&mut self) -> PResult<TypeExpr> {
        let lhs = self.type_app()?;
        if self.eat(&Tok::Arrow) {
            Ok(TypeExpr::arrow(lhs, self.type_expr()?))
        } else {
            Ok(lhs)
        }
    }

    fn type_app(&mut self) -> PResult<TypeExpr> {
        match self.peek().clone() {
            Tok::Name(head) => {
                let pos = self.pos();
                self.bump();
                let mut args = Vec::new();
                while matches!(self.peek(), Tok::Name(_) | Tok::LParen | Tok::Var(_)) {
                    args.push(self.type_simple()?);
                }
                make_type(head, args, pos)
            }
            _ => self.type_simple(),
        }
    }

    fn type_simple(&mut self) -> PResult<TypeExpr> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Name(n) => {
                self.bump();
                make_type(n, Vec::new(), pos)
            }
            Tok::LParen => {
                self.bump();
                let t = self.type_expr()?;
                self.expect(&Tok::RParen, "')'")?;
                Ok(t)
            }
            Tok::Var(v) => Err(ParseError::new(
                pos,
                format!("type variable '{v}' is not supported; types are monomorphic"),
            )),
            _ => Err(self.unexpected("a type")),
        }
    }

    // ---- terms ----

    fn fresh_anon(&mut self) -> String {
        self.anon += 1;
        format!("_#{}", self.anon)
    }

    fn starts_primary(&self) -> bool {
        matches!(
            self.peek(),
            Tok::Name(_)
                | Tok::Quoted(_)
                | Tok::Var(_)
                | Tok::Int(_)
                | Tok::Real(_)
                | Tok::Str(_)
                | Tok::Sym(_)
                | Tok::LParen
        )
    }

    /// `f a b` application or a lone primary.
    fn application(&mut self) -> PResult<Term> {
        let head = self.primary()?;
        if let Term::Atom(name) = &head {
            let mut args = Vec::new();
            while self.starts_primary() {
                args.push(self.primary()?);
            }
            if !args.is_empty() {
                return Ok(Term::Cmp(name.clone(), args));
            }
        }
        Ok(head)
    }

    fn primary(&mut self) -> PResult<Term> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Var(v) => {
                self.bump();
                if v == "_" {
                    Ok(Term::Var(self.fresh_anon()))
                } else {
                    Ok(Term::Var(v))
                }
            }
            Tok::Int(i) => {
                self.bump();
                Ok(Term::Int(i))
            }
            Tok::Real(r) => {
                self.bump();
                Ok(Term::Real(r))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Term::Str(s))
            }
            Tok::Sym(s) if s == "-" && matches!(self.peek_nth(1), Tok::Int(_) | Tok::Real(_)) => {
                self.bump();
                if !self.adjacent() {
                    return Ok(Term::Atom(s));
                }
                match self.bump().tok {
                    Tok::Int(i) => Ok(Term::Int(-i)),
                    Tok::Real(r) => Ok(Term::Real(-r)),
                    _ => unreachable!(),
                }
            }
            Tok::Name(n) | Tok::Quoted(n) | Tok::Sym(n) => {
                self.bump();
                if self.peek() == &Tok::LParen && self.adjacent() {
                    self.bump();
                    let mut args = vec![self.application()?];
                    while self.eat(&Tok::Comma) {
                        args.push(self.application()?);
                    }
                    self.expect(&Tok::RParen, "',' or ')'")?;
                    Ok(Term::Cmp(n, args))
                } else {
                    Ok(Term::Atom(n))
                }
            }
            Tok::LParen => {
                self.bump();
                let t = self.application()?;
                self.expect(&Tok::RParen, "')'")?;
                Ok(t)
            }
            _ => Err(ParseError::new(
                pos,
                format!("expected a term, found {}", describe(self.peek())),
            )),
        }
    }

    fn goal(&mut self) -> PResult<Goal> {
        let pos = self.pos();
        match self.application()? {
            Term::Atom(name) => Ok(Goal {
                name,
                args: Vec::new(),
                pos,
            }),
            Term::Cmp(name, args) => Ok(Goal { name, args, pos }),
            Term::Var(v) => Err(ParseError::new(
                pos,
                format!("variable '{v}' used as a goal; wrap it in solve"),
            )),
            other => Err(ParseError::new(pos, format!("'{other}' is not callable"))),
        }
    }

    fn goals(&mut self) -> PResult<Vec<Goal>> {
        let mut out = vec![self.goal()?];
        while self.eat(&Tok::Comma) {
            out.push(self.goal()?);
        }
        Ok(out)
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Name(n) => format!("'{n}'"),
        Tok::Quoted(n) => format!("'{n}'"),
        Tok::Var(v) => format!("variable '{v}'"),
        Tok::Int(i) => format!("'{i}'"),
        Tok::Real(r) => format!("'{r}'"),
        Tok::Str(_) => "string literal".into(),
        Tok::Sym(s) => format!("'{s}'"),
        Tok::LParen => "'('".into(),
        Tok::RParen => "')'".into(),
        Tok::LBrace => "'{'".into(),
        Tok::RBrace => "'}'".into(),
        Tok::Comma => "','".into(),
        Tok::Semi => "';'".into(),
        Tok::Hash => "'#'".into(),
        Tok::End => "'.'".into(),
        Tok::Neck => "':-'".into(),
        Tok::Arrow => "'->'".into(),
        Tok::Eof => "end of input".into(),
    }
}

fn make_type(head: String, args: Vec<TypeExpr>, pos: Pos) -> PResult<TypeExpr> {
    match BaseType::from_name(&head) {
        Some(b) if args.is_empty() => Ok(TypeExpr::Base(b)),
        Some(_) => Err(ParseError::new(
            pos,
            format!("base type '{head}' does not take arguments"),
        )),
        None => Ok(TypeExpr::Kind(head, args)),
    }
}

/// Directive keyword: `kw` or `#kw`.
fn directive(p: &mut Parser, keywords: &[&str]) -> Option<(String, Pos)> {
    let pos = p.pos();
    let hashed = p.peek() == &Tok::Hash;
    let kw_tok = if hashed { p.peek_nth(1) } else { p.peek() };
    let Tok::Name(kw) = kw_tok else { return None };
    if !keywords.contains(&kw.as_str()) {
        return None;
    }
    let kw = kw.clone();
    if hashed {
        p.bump();
    }
    p.bump();
    Some((kw, pos))
}

/// Parses an extern signature file.
///
/// Both directive spellings are accepted: `sig math.` / `#sig math`,
/// `#lib math.` / `lib math`, `regcl a, b.` / `#regcl a`. The trailing
/// period is optional on directives and required on `extern type` lines.
pub fn parse_signature(source: &str) -> Result<SignatureAst, ParseError> {
    let mut p = Parser::new(source)?;
    let mut sig_name: Option<String> = None;
    let mut lib_name: Option<String> = None;
    let mut externs: Vec<ExternDecl> = Vec::new();
    let mut regcl: Vec<Named> = Vec::new();

    while p.peek() != &Tok::Eof {
        let Some((kw, pos)) = directive(&mut p, &["sig", "lib", "regcl", "extern"]) else {
            return Err(p.unexpected("'sig', '#lib', 'extern type' or 'regcl'"));
        };
        match kw.as_str() {
            "sig" => {
                if sig_name.is_some() {
                    return Err(ParseError::new(pos, "duplicate sig declaration"));
                }
                sig_name = Some(p.name("a signature name")?.0);
                p.eat(&Tok::End);
            }
            "lib" => {
                if lib_name.is_some() {
                    return Err(ParseError::new(pos, "duplicate #lib declaration"));
                }
                lib_name = Some(p.lib_name()?);
                p.eat(&Tok::End);
            }
            "regcl" => {
                regcl.extend(p.name_list("a predicate name")?);
                p.eat(&Tok::End);
            }
            _ => {
                if !p.at_keyword("type") {
                    return Err(p.unexpected("'type' after 'extern'"));
                }
                p.bump();
                let (lp_name, lp_pos) = p.name("a predicate name")?;
                let c_name = p.symbol_name("an entry symbol")?;
                let ty_pos = p.pos();
                let ty = p.type_expr()?;
                p.end()?;
                if externs.iter().any(|e| e.lp_name == lp_name) {
                    return Err(ParseError::new(
                        lp_pos,
                        format!("duplicate extern predicate '{lp_name}'"),
                    ));
                }
                if !ty.is_predicate() {
                    return Err(ParseError::new(
                        ty_pos,
                        format!(
                            "type '{ty}' of '{lp_name}' is not a predicate type (must end in o)"
                        ),
                    ));
                }
                externs.push(ExternDecl {
                    lp_name,
                    c_name,
                    ty,
                    pos: lp_pos,
                });
            }
        }
    }

    let start = Pos::new(1, 1);
    let sig_name = sig_name.ok_or_else(|| ParseError::new(start, "missing sig declaration"))?;
    let lib_name = lib_name.ok_or_else(|| ParseError::new(start, "missing #lib declaration"))?;
    let mut set = BTreeSet::new();
    for r in regcl {
        if !externs.iter().any(|e| e.lp_name == r.name) {
            return Err(ParseError::new(
                r.pos,
                format!(
                    "regcl names '{}', which is not declared in this signature",
                    r.name
                ),
            ));
        }
        set.insert(r.name);
    }
    Ok(SignatureAst {
        sig_name,
        lib_name,
        externs,
        regcl: set,
    })
}

/// Parses a module file. Predicate references are not resolved here.
pub fn parse_module(source: &str) -> Result<ModuleAst, ParseError> {
    let mut p = Parser::new(source)?;
    let mut m = ModuleAst::default();
    let mut named = false;

    while p.peek() != &Tok::Eof {
        let next_is_name = matches!(p.peek_nth(1), Tok::Name(_) | Tok::Quoted(_));
        if p.at_keyword("module") && next_is_name && p.peek_nth(2) == &Tok::End {
            let pos = p.pos();
            p.bump();
            if named {
                return Err(ParseError::new(pos, "duplicate module declaration"));
            }
            m.module_name = p.name("a module name")?.0;
            named = true;
            p.end()?;
        } else if p.at_keyword("accumulate") && next_is_name {
            p.bump();
            m.accumulates.extend(p.name_list("a module name")?);
            p.end()?;
        } else if p.at_keyword("accum_extern") && next_is_name {
            p.bump();
            m.accum_externs.extend(p.name_list("a signature name")?);
            p.end()?;
        } else if p.at_keyword("type") && next_is_name {
            p.bump();
            let (name, pos) = p.name("a predicate name")?;
            let ty = p.type_expr()?;
            p.end()?;
            m.local_sig.push(TypeDecl { name, ty, pos });
        } else {
            let pos = p.pos();
            let head = p.goal()?;
            let body = if p.eat(&Tok::Neck) {
                p.goals()?
            } else {
                Vec::new()
            };
            p.end()?;
            m.clauses.push(Clause { head, body, pos });
        }
    }
    Ok(m)
}

/// Parses a query: a goal conjunction with an optional final period.
pub fn parse_query(source: &str) -> Result<Vec<Goal>, ParseError> {
    let mut p = Parser::new(source)?;
    let goals = p.goals()?;
    p.eat(&Tok::End);
    if p.peek() != &Tok::Eof {
        return Err(p.unexpected("',' or end of query"));
    }
    Ok(goals)
}

/// Parses a stub generator specification.
///
/// ```text
/// spec pairs.
/// lib pairs.
/// kind pair type -> type -> type.       % or: kind pair 2.
/// type pr int -> int -> pair int int.
/// map pair int int = struct pair { int x; int y; }.
/// pred mk mk int -> int -> pair int int -> o.
/// regcl mk.
/// ```
pub fn parse_spec(source: &str) -> Result<SpecAst, ParseError> {
    let mut p = Parser::new(source)?;
    let mut spec_name = None;
    let mut lib_name = None;
    let mut kinds: Vec<KindDecl> = Vec::new();
    let mut constructors: Vec<CtorDecl> = Vec::new();
    let mut native_maps: Vec<NativeMap> = Vec::new();
    let mut preds: Vec<PredSpec> = Vec::new();
    let mut regcl: Vec<Named> = Vec::new();

    while p.peek() != &Tok::Eof {
        let Some((kw, pos)) = directive(
            &mut p,
            &["spec", "lib", "kind", "type", "map", "pred", "regcl"],
        ) else {
            return Err(p.unexpected("a spec directive"));
        };
        match kw.as_str() {
            "spec" => {
                if spec_name.is_some() {
                    return Err(ParseError::new(pos, "duplicate spec declaration"));
                }
                spec_name = Some(p.name("a spec name")?.0);
                p.eat(&Tok::End);
            }
            "lib" => {
                if lib_name.is_some() {
                    return Err(ParseError::new(pos, "duplicate lib declaration"));
                }
                lib_name = Some(p.lib_name()?);
                p.eat(&Tok::End);
            }
            "kind" => {
                let (name, npos) = p.name("a kind name")?;
                let arity = if let Tok::Int(n) = *p.peek() {
                    p.bump();
                    usize::try_from(n).map_err(|_| ParseError::new(npos, "negative kind arity"))?
                } else {
                    let t = p.type_expr()?;
                    let is_type = |t: &TypeExpr| matches!(t, TypeExpr::Kind(k, a) if k == "type" && a.is_empty());
                    if !is_type(t.codomain()) || !t.domains().into_iter().all(is_type) {
                        return Err(ParseError::new(
                            npos,
                            "kind arity must be written as an integer or as type -> .. -> type",
                        ));
                    }
                    t.arity()
                };
                p.end()?;
                if BASE_NAMES.contains(&name.as_str()) || kinds.iter().any(|k| k.name == name) {
                    return Err(ParseError::new(
                        npos,
                        format!("kind '{name}' already declared"),
                    ));
                }
                kinds.push(KindDecl {
                    name,
                    arity,
                    pos: npos,
                });
            }
            "type" => {
                let (name, npos) = p.name("a constructor name")?;
                let ty = p.type_expr()?;
                p.end()?;
                if constructors.iter().any(|c| c.name == name) {
                    return Err(ParseError::new(
                        npos,
                        format!("constructor '{name}' already declared"),
                    ));
                }
                constructors.push(CtorDecl {
                    name,
                    ty,
                    pos: npos,
                });
            }
            "map" => {
                let kind = p.type_app()?;
                if !matches!(p.peek(), Tok::Sym(s) if s == "=") {
                    return Err(p.unexpected("'='"));
                }
                p.bump();
                if !p.at_keyword("struct") {
                    return Err(p.unexpected("'struct'"));
                }
                p.bump();
                let record = p.symbol_name("a record name")?;
                p.expect(&Tok::LBrace, "'{'")?;
                let mut fields = Vec::new();
                while p.peek() != &Tok::RBrace {
                    let mut words = vec![p.symbol_name("a field type")?];
                    while p.peek() != &Tok::Semi {
                        words.push(p.symbol_name("a field name or ';'")?);
                    }
                    p.bump();
                    if words.len() < 2 {
                        return Err(ParseError::new(
                            p.pos(),
                            "record field needs a type and a name",
                        ));
                    }
                    let name = words.pop().unwrap();
                    fields.push(NativeField {
                        c_type: words.join(" "),
                        name,
                    });
                }
                p.bump();
                p.end()?;
                native_maps.push(NativeMap {
                    kind,
                    record,
                    fields,
                    pos,
                });
            }
            "pred" => {
                let (lp_name, npos) = p.name("a predicate name")?;
                let entry_base = p.symbol_name("a native function name")?;
                let ty_pos = p.pos();
                let ty = p.type_expr()?;
                p.end()?;
                if !ty.is_predicate() {
                    return Err(ParseError::new(
                        ty_pos,
                        format!(
                            "type '{ty}' of '{lp_name}' is not a predicate type (must end in o)"
                        ),
                    ));
                }
                if preds.iter().any(|q| q.lp_name == lp_name) {
                    return Err(ParseError::new(
                        npos,
                        format!("duplicate predicate '{lp_name}'"),
                    ));
                }
                preds.push(PredSpec {
                    lp_name,
                    entry_base,
                    ty,
                    regcl: false,
                    pos: npos,
                });
            }
            _ => {
                regcl.extend(p.name_list("a predicate name")?);
                p.eat(&Tok::End);
            }
        }
    }

    let start = Pos::new(1, 1);
    let spec = SpecAst {
        spec_name: spec_name.ok_or_else(|| ParseError::new(start, "missing spec declaration"))?,
        lib_name: lib_name.ok_or_else(|| ParseError::new(start, "missing lib declaration"))?,
        kinds,
        constructors,
        native_maps,
        preds: {
            for r in &regcl {
                if !preds.iter().any(|q| q.lp_name == r.name) {
                    return Err(ParseError::new(
                        r.pos,
                        format!(
                            "regcl names '{}', which is not a declared predicate",
                            r.name
                        ),
                    ));
                }
            }
            for q in &mut preds {
                q.regcl = regcl.iter().any(|r| r.name == q.lp_name);
            }
            preds
        },
    };
    validate_spec(&spec)?;
    Ok(spec)
}

fn validate_spec(spec: &SpecAst) -> Result<(), ParseError> {
    let check_kind_use = |t: &TypeExpr, pos: Pos| -> Result<(), ParseError> {
        let TypeExpr::Kind(name, args) = t else {
            return Ok(());
        };
        let Some(decl) = spec.kinds.iter().find(|k| &k.name == name) else {
            return Err(ParseError::new(pos, format!("unknown kind '{name}'")));
        };
        if decl.arity != args.len() {
            return Err(ParseError::new(
                pos,
                format!(
                    "kind '{name}' takes {} arguments, given {}",
                    decl.arity,
                    args.len()
                ),
            ));
        }
        Ok(())
    };

    for c in &spec.constructors {
        for d in c.ty.domains() {
            check_kind_use(d, c.pos)?;
        }
        match c.ty.codomain() {
            t @ TypeExpr::Kind(..) => check_kind_use(t, c.pos)?,
            t => {
                return Err(ParseError::new(
                    c.pos,
                    format!(
                        "constructor '{}' must build a declared kind, not '{t}'",
                        c.name
                    ),
                ))
            }
        }
    }

    for m in &spec.native_maps {
        check_kind_use(&m.kind, m.pos)?;
        let TypeExpr::Kind(kind, _) = &m.kind else {
            return Err(ParseError::new(
                m.pos,
                format!("'{}' is not a kind instance", m.kind),
            ));
        };
        let ctors = spec.constructors_of(kind);
        match ctors.as_slice() {
            [] => {
                return Err(ParseError::new(
                    m.pos,
                    format!("mapped kind '{kind}' has no constructor"),
                ))
            }
            [ctor] => {
                if ctor.ty.codomain() != &m.kind {
                    return Err(ParseError::new(
                        m.pos,
                        format!("map is for '{}' but constructor '{}' builds '{}'", m.kind, ctor.name, ctor.ty.codomain()),
                    ));
                }
                if ctor.ty.arity() != m.fields.len() {
                    return Err(ParseError::new(
                        m.pos,
                        format!(
                            "record '{}' has {} fields but constructor '{}' has {} arguments",
                            m.record,
                            m.fields.len(),
                            ctor.name,
                            ctor.ty.arity()
                        ),
                    ));
                }
            }
            _ => {
                return Err(ParseError::new(
                    m.pos,
                    format!(
                        "kind '{kind}' has {} constructors; only single-constructor kinds can be mapped",
                        ctors.len()
                    ),
                ))
            }
        }
    }

    for q in &spec.preds {
        for d in q.ty.domains() {
            match d {
                TypeExpr::Base(BaseType::O) => return Err(ParseError::new(
                    q.pos,
                    format!(
                        "predicate '{}' takes a goal argument; only data can cross the boundary",
                        q.lp_name
                    ),
                )),
                TypeExpr::Base(_) => {}
                TypeExpr::Kind(name, _) => {
                    check_kind_use(d, q.pos)?;
                    if spec.native_map(name).is_none() {
                        return Err(ParseError::new(
                            q.pos,
                            format!("kind '{name}' used by '{}' has no native map", q.lp_name),
                        ));
                    }
                }
                TypeExpr::Arrow(..) => {
                    return Err(ParseError::new(
                        q.pos,
                        format!("predicate '{}' takes a function-typed argument", q.lp_name),
                    ))
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real_pred() -> TypeExpr {
        TypeExpr::function(
            [
                TypeExpr::Base(BaseType::Real),
                TypeExpr::Base(BaseType::Real),
            ],
            TypeExpr::Base(BaseType::O),
        )
    }

    #[test]
    fn keyword_signature() {
        let sig = parse_signature(
            "sig math. #lib math. extern type sin sin_wrapper real -> real -> o. regcl sin.",
        )
        .unwrap();
        assert_eq!(sig.sig_name, "math");
        assert_eq!(sig.lib_name, "math");
        assert_eq!(sig.externs.len(), 1);
        assert_eq!(sig.externs[0].lp_name, "sin");
        assert_eq!(sig.externs[0].c_name, "sin_wrapper");
        assert_eq!(sig.externs[0].ty, real_pred());
        assert_eq!(sig.regcl, BTreeSet::from(["sin".to_string()]));
    }

    #[test]
    fn hash_directive_signature() {
        let src = "#sig math\n#lib math\n\nextern type sin sin_wrapper real -> real -> o.\n\
                   extern type cos cos_wrapper real -> real -> o.\n\
                   extern type tan tan_wrapper real -> real -> o.\n#regcl sin\n";
        let sig = parse_signature(src).unwrap();
        assert_eq!(sig.externs.len(), 3);
        assert_eq!(sig.regcl.len(), 1);
        // the formatter emits the keyword form, which parses back equal
        assert_eq!(parse_signature(&sig.to_string()).unwrap(), sig);
    }

    #[test]
    fn regcl_is_optional() {
        let sig = parse_signature("sig m. #lib m. extern type p p_w int -> o.").unwrap();
        assert!(sig.regcl.is_empty());
    }

    #[test]
    fn host_library_names() {
        let sig =
            parse_signature("sig t. #lib host:test. extern type echo echo_int int -> int -> o.")
                .unwrap();
        assert_eq!(sig.lib_name, "host:test");
    }

    #[test]
    fn signature_errors() {
        let e = parse_signature("sig m. #lib m. extern type p q int -> int.").unwrap_err();
        assert!(e.message.contains("not a predicate type"), "{e}");
        let e =
            parse_signature("sig m. #lib m. extern type p q o. extern type p r o.").unwrap_err();
        assert!(e.message.contains("duplicate"), "{e}");
        let e = parse_signature("sig m. #lib m. extern type p q o. regcl z.").unwrap_err();
        assert!(e.message.contains("regcl"), "{e}");
        let e = parse_signature("sig m.\n#lib m.\nextern type p q o\n").unwrap_err();
        assert_eq!(e.pos.line, 4);
    }

    #[test]
    fn module_with_extern_accumulation() {
        let m =
            parse_module("module m. accum_extern math. twice X Y :- sin X Z, sin Z Y.").unwrap();
        assert_eq!(m.module_name, "m");
        assert_eq!(m.accum_externs[0].name, "math");
        assert_eq!(m.clauses.len(), 1);
        let c = &m.clauses[0];
        assert_eq!(c.head.name, "twice");
        assert_eq!(
            c.head.args,
            vec![Term::Var("X".into()), Term::Var("Y".into())]
        );
        assert_eq!(c.body.len(), 2);
        assert_eq!(c.body[1].name, "sin");
        assert_eq!(
            c.body[1].args,
            vec![Term::Var("Z".into()), Term::Var("Y".into())]
        );
    }

    #[test]
    fn empty_and_accumulate() {
        let m = parse_module("module m.").unwrap();
        assert!(m.clauses.is_empty());
        let m = parse_module("accumulate k.").unwrap();
        assert_eq!(m.accumulates[0].name, "k");
    }

    #[test]
    fn prolog_style_terms() {
        let m = parse_module("p(f(a, X), -3, 2.5, \"s\"). q :- p(_, _, _, _), not (p 1 2 3 4).")
            .unwrap();
        let head = &m.clauses[0].head;
        assert_eq!(
            head.args,
            vec![
                Term::Cmp(
                    "f".into(),
                    vec![Term::Atom("a".into()), Term::Var("X".into())]
                ),
                Term::Int(-3),
                Term::Real(2.5),
                Term::Str("s".into())
            ]
        );
        let body = &m.clauses[1].body;
        assert_eq!(body[0].args[0], Term::Var("_#1".into()));
        assert_eq!(body[0].args[1], Term::Var("_#2".into()));
        assert_eq!(body[1].name, "not");
        assert!(matches!(&body[1].args[0], Term::Cmp(n, a) if n == "p" && a.len() == 4));
    }

    #[test]
    fn symbolic_predicates() {
        let q = parse_query("is X +(3, 4), < X 10, =<(1, X)").unwrap();
        assert_eq!(q.len(), 3);
        assert_eq!(q[0].name, "is");
        assert_eq!(q[1].name, "<");
        assert_eq!(q[2].name, "=<");
    }

    #[test]
    fn local_types() {
        let m = parse_module("type p int -> o. p 1.").unwrap();
        assert_eq!(m.local_sig[0].name, "p");
        assert_eq!(m.local_sig[0].ty.arity(), 1);
    }

    #[test]
    fn variable_goal_rejected() {
        assert!(parse_module("p :- G.").is_err());
    }

    #[test]
    fn pair_spec() {
        let src = "spec pairs.\nlib pairs.\nkind pair type -> type -> type.\n\
                   type pr int -> int -> pair int int.\n\
                   map pair int int = struct pair { int x; int y; }.\n\
                   pred mk mk int -> int -> pair int int -> o.\n";
        let s = parse_spec(src).unwrap();
        assert_eq!(s.kinds[0].arity, 2);
        assert_eq!(
            s.constructors[0].ty.to_string(),
            "int -> int -> pair int int"
        );
        assert_eq!(s.native_maps[0].fields.len(), 2);
        assert_eq!(s.native_maps[0].fields[1].name, "y");
        assert_eq!(s.preds[0].ty.arity(), 3);
    }

    #[test]
    fn spec_without_kinds() {
        let s = parse_spec("spec m. lib m. pred sin sin real -> real -> o. regcl sin.").unwrap();
        assert!(s.kinds.is_empty());
        assert!(s.preds[0].regcl);
    }

    #[test]
    fn spec_rejects_multi_constructor_map() {
        let src = "spec s. lib s. kind shape 0. type circle shape. type square shape.\n\
                   map shape = struct shape { int tag; }.";
        let e = parse_spec(src).unwrap_err();
        assert!(e.message.contains("single-constructor"), "{e}");
    }

    #[test]
    fn spec_rejects_unmapped_kind() {
        let src = "spec s. lib s. kind pair 2. type pr int -> int -> pair int int.\n\
                   pred mk mk int -> pair int int -> o.";
        let e = parse_spec(src).unwrap_err();
        assert!(e.message.contains("no native map"), "{e}");
    }
}
