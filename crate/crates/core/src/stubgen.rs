//! Generates a signature file and C wrapper source from a stub spec.
//!
//! Native function convention: the last predicate argument is the result and
//! the others are inputs, so `pred mk mk int -> int -> pair int int -> o`
//! wraps `struct pair mk(int64_t, int64_t)`. A one-argument predicate wraps a
//! function returning nonzero on success, and a nullary one a function taking
//! no arguments.
//!
//! Mapped kinds travel as native records whose fields follow constructor
//! argument order. Only int fields are supported.

use std::fmt::Write as _;

use thiserror::Error;

use crate::frontend::{BaseType, NativeField, PredSpec, SpecAst, TypeExpr};
use crate::hostapi::API_VERSION;
use crate::terms::Value;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StubgenError {
    #[error("argument {position} of {pred} has type {ty}, which has no native mapping")]
    Unmappable {
        pred: String,
        position: usize,
        ty: String,
    },
    #[error("kind {kind}: {message}")]
    UnsupportedKind { kind: String, message: String },
    #[error("cannot unmarshal {term}: {message}")]
    Unmarshal { term: String, message: String },
}

fn header_line(spec: &SpecAst) -> String {
    format!(
        "Generated by mlp stubgen {TOOL_VERSION} from spec '{}'. Do not edit.",
        spec.spec_name
    )
}

/// Signature file declaring every predicate of the spec.
pub fn generate_signature(spec: &SpecAst) -> String {
    let mut out = format!("% {}\n", header_line(spec));
    let _ = writeln!(out, "#sig {}", spec.spec_name);
    let _ = writeln!(out, "#lib {}", spec.lib_name);
    if !spec.preds.is_empty() {
        out.push('\n');
    }
    for p in &spec.preds {
        let _ = writeln!(
            out,
            "extern type {} {} {}.",
            p.lp_name,
            entry_symbol(p),
            p.ty
        );
    }
    let regcl: Vec<&str> = spec
        .preds
        .iter()
        .filter(|p| p.regcl)
        .map(|p| p.lp_name.as_str())
        .collect();
    if !regcl.is_empty() {
        let _ = write!(out, "\n#regcl {}\n", regcl.join(", "));
    }
    out
}

pub fn entry_symbol(p: &PredSpec) -> String {
    format!("{}_wrapper", p.entry_base)
}

/// How a mapped kind crosses the boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarshalPlan {
    pub kind: String,
    pub ctor: String,
    pub record: String,
    pub fields: Vec<NativeField>,
}

impl MarshalPlan {
    pub fn for_kind(spec: &SpecAst, kind: &str) -> Result<Self, StubgenError> {
        let unsupported = |message: String| StubgenError::UnsupportedKind {
            kind: kind.to_string(),
            message,
        };
        let map = spec
            .native_map(kind)
            .ok_or_else(|| unsupported("no native map declared".into()))?;
        let ctors = spec.constructors_of(kind);
        let [ctor] = ctors.as_slice() else {
            return Err(unsupported(format!(
                "expected one constructor, found {}",
                ctors.len()
            )));
        };
        let domains = ctor.ty.domains();
        if domains.len() != map.fields.len() {
            return Err(unsupported(format!(
                "constructor {} has {} arguments but the record has {} fields",
                ctor.name,
                domains.len(),
                map.fields.len()
            )));
        }
        if let Some(d) = domains.iter().find(|d| d.as_base() != Some(BaseType::Int)) {
            return Err(unsupported(format!(
                "constructor {} has a {d} argument; only int fields are supported",
                ctor.name
            )));
        }
        Ok(MarshalPlan {
            kind: kind.to_string(),
            ctor: ctor.name.clone(),
            record: map.record.clone(),
            fields: map.fields.clone(),
        })
    }

    /// Field values of a ground constructor term.
    pub fn unmarshal(&self, term: &Value) -> Result<Vec<i64>, StubgenError> {
        let err = |message: &str| StubgenError::Unmarshal {
            term: term.to_string(),
            message: message.to_string(),
        };
        match term {
            Value::Compound(f, args) if *f == self.ctor && args.len() == self.fields.len() => args
                .iter()
                .map(|a| match a {
                    Value::Int(v) => Ok(*v),
                    Value::Var(_) => Err(err("argument is unbound")),
                    _ => Err(err("argument is not an int")),
                })
                .collect(),
            Value::Var(_) => Err(err("term is unbound")),
            _ => Err(err(&format!(
                "expected {}/{}",
                self.ctor,
                self.fields.len()
            ))),
        }
    }

    /// The constructor term for a record's field values.
    pub fn marshal(&self, fields: &[i64]) -> Value {
        assert_eq!(fields.len(), self.fields.len(), "field count");
        Value::Compound(
            self.ctor.clone(),
            fields.iter().map(|v| Value::Int(*v)).collect(),
        )
    }

    fn unmarshal_fn(&self) -> String {
        format!("mlp_unmarshal_{}", self.kind)
    }

    fn marshal_fn(&self) -> String {
        format!("mlp_marshal_{}", self.kind)
    }
}

/// Native-side handling of one argument type.
enum Native {
    Int,
    Real,
    Str,
    Record(MarshalPlan),
}

impl Native {
    fn of(
        spec: &SpecAst,
        pred: &PredSpec,
        position: usize,
        ty: &TypeExpr,
    ) -> Result<Self, StubgenError> {
        let unmappable = || StubgenError::Unmappable {
            pred: pred.lp_name.clone(),
            position,
            ty: ty.to_string(),
        };
        match ty {
            TypeExpr::Base(BaseType::Int) => Ok(Native::Int),
            TypeExpr::Base(BaseType::Real) => Ok(Native::Real),
            TypeExpr::Base(BaseType::Str) => Ok(Native::Str),
            TypeExpr::Kind(k, _) if spec.native_map(k).is_none() => Err(unmappable()),
            TypeExpr::Kind(k, _) => MarshalPlan::for_kind(spec, k).map(Native::Record),
            _ => Err(unmappable()),
        }
    }

    fn c_in(&self) -> String {
        match self {
            Native::Int => "int64_t".into(),
            Native::Real => "double".into(),
            Native::Str => "const char *".into(),
            Native::Record(p) => format!("struct {}", p.record),
        }
    }

    fn c_out(&self) -> String {
        self.c_in()
    }
}

struct Shape {
    inputs: Vec<Native>,
    output: Option<Native>,
}

fn shape(spec: &SpecAst, pred: &PredSpec) -> Result<Shape, StubgenError> {
    let mut args = pred
        .ty
        .domains()
        .into_iter()
        .enumerate()
        .map(|(i, t)| Native::of(spec, pred, i + 1, t))
        .collect::<Result<Vec<_>, _>>()?;
    let output = if args.len() >= 2 { args.pop() } else { None };
    Ok(Shape {
        inputs: args,
        output,
    })
}

fn prototype(pred: &PredSpec, s: &Shape) -> String {
    let ret = match &s.output {
        Some(o) => o.c_out(),
        None => "int".into(),
    };
    let params = if s.inputs.is_empty() {
        "void".to_string()
    } else {
        s.inputs
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let t = n.c_in();
                if t.ends_with('*') {
                    format!("{t}a{}", i + 1)
                } else {
                    format!("{t} a{}", i + 1)
                }
            })
            .collect::<Vec<_>>()
            .join(", ")
    };
    let sep = if ret.ends_with('*') { "" } else { " " };
    format!("{ret}{sep}{}({params})", pred.entry_base)
}

/// Kinds used by the spec's predicates, in first-use order.
fn used_plans(spec: &SpecAst) -> Result<Vec<MarshalPlan>, StubgenError> {
    let mut plans: Vec<MarshalPlan> = Vec::new();
    for p in &spec.preds {
        for n in shape(spec, p).map(|s| s.inputs.into_iter().chain(s.output))? {
            if let Native::Record(plan) = n {
                if !plans.iter().any(|q| q.kind == plan.kind) {
                    plans.push(plan);
                }
            }
        }
    }
    Ok(plans)
}

/// C source with one wrapper per predicate plus the plugin entry points.
pub fn generate_wrappers(spec: &SpecAst) -> Result<String, StubgenError> {
    let shapes = spec
        .preds
        .iter()
        .map(|p| shape(spec, p))
        .collect::<Result<Vec<_>, _>>()?;
    let plans = used_plans(spec)?;
    let uses_strings = shapes.iter().any(|s| {
        s.inputs
            .iter()
            .chain(&s.output)
            .any(|n| matches!(n, Native::Str))
    });

    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "/* {} */", header_line(spec));
    let _ = writeln!(w);
    if uses_strings {
        let _ = writeln!(w, "#include <stdlib.h>");
        let _ = writeln!(w, "#include <string.h>");
    }
    let _ = writeln!(w, "#include \"mlp_plugin.h\"");
    let _ = writeln!(w);
    let _ = writeln!(w, "#if MLP_API_VERSION != {API_VERSION}");
    let _ = writeln!(w, "#error \"generated for host API version {API_VERSION}\"");
    let _ = writeln!(w, "#endif");
    let _ = writeln!(w);
    let _ = writeln!(w, "static const MlpHostCallTable *mlp;");
    let _ = writeln!(w);
    let _ = writeln!(
        w,
        "MLP_EXPORT const uint32_t mlp_abi_version = MLP_API_VERSION;"
    );
    let _ = writeln!(w);
    let _ = writeln!(w, "MLP_EXPORT void mlp_init(const MlpHostCallTable *table)");
    let _ = writeln!(w, "{{");
    let _ = writeln!(w, "    mlp = table;");
    let _ = writeln!(w, "}}");

    for plan in &plans {
        let _ = writeln!(w);
        let _ = writeln!(w, "struct {} {{", plan.record);
        for f in &plan.fields {
            let _ = writeln!(w, "    {} {};", f.c_type, f.name);
        }
        let _ = writeln!(w, "}};");
        let _ = writeln!(w);
        let _ = writeln!(
            w,
            "static struct {} {}(int i)",
            plan.record,
            plan.unmarshal_fn()
        );
        let _ = writeln!(w, "{{");
        let _ = writeln!(w, "    struct {} v;", plan.record);
        for (k, f) in plan.fields.iter().enumerate() {
            let _ = writeln!(
                w,
                "    v.{} = ({})mlp->get_ctor_arg_int(i, {});",
                f.name,
                f.c_type,
                k + 1
            );
        }
        let _ = writeln!(w, "    return v;");
        let _ = writeln!(w, "}}");
        let _ = writeln!(w);
        let _ = writeln!(
            w,
            "static void {}(int i, struct {} v)",
            plan.marshal_fn(),
            plan.record
        );
        let _ = writeln!(w, "{{");
        let _ = writeln!(
            w,
            "    mlp->return_ctor(i, \"{}\", {});",
            plan.ctor,
            plan.fields.len()
        );
        for (k, f) in plan.fields.iter().enumerate() {
            let _ = writeln!(
                w,
                "    mlp->set_ctor_arg_int({}, (int64_t)v.{});",
                k + 1,
                f.name
            );
        }
        let _ = writeln!(w, "}}");
    }

    if !spec.preds.is_empty() {
        let _ = writeln!(w);
        let _ = writeln!(w, "/* Implemented by the library author. */");
        for (p, s) in spec.preds.iter().zip(&shapes) {
            let _ = writeln!(w, "{};", prototype(p, s));
        }
    }

    for (p, s) in spec.preds.iter().zip(&shapes) {
        let _ = writeln!(w);
        let _ = writeln!(w, "MLP_EXPORT void {}(void)", entry_symbol(p));
        let _ = writeln!(w, "{{");
        let mut frees = Vec::new();
        for (k, n) in s.inputs.iter().enumerate() {
            let i = k + 1;
            match n {
                Native::Int => {
                    let _ = writeln!(w, "    int64_t a{i} = mlp->get_int({i});");
                }
                Native::Real => {
                    let _ = writeln!(w, "    double a{i} = mlp->get_real({i});");
                }
                Native::Str => {
                    let _ = writeln!(w, "    size_t a{i}_len = mlp->get_string_len({i});");
                    let _ = writeln!(w, "    char *a{i} = malloc(a{i}_len + 1);");
                    let _ = writeln!(w, "    if (a{i} == NULL) {{");
                    for f in &frees {
                        let _ = writeln!(w, "        free({f});");
                    }
                    let _ = writeln!(w, "        mlp->fail();");
                    let _ = writeln!(w, "        return;");
                    let _ = writeln!(w, "    }}");
                    let _ = writeln!(w, "    a{i}[mlp->get_string({i}, a{i}, a{i}_len)] = '\\0';");
                    frees.push(format!("a{i}"));
                }
                Native::Record(plan) => {
                    let _ = writeln!(
                        w,
                        "    struct {} a{i} = {}({i});",
                        plan.record,
                        plan.unmarshal_fn()
                    );
                }
            }
        }
        let args = (1..=s.inputs.len())
            .map(|i| format!("a{i}"))
            .collect::<Vec<_>>()
            .join(", ");
        let call = format!("{}({args})", p.entry_base);
        let out_reg = s.inputs.len() + 1;
        match &s.output {
            None => {
                let _ = writeln!(w, "    if (!{call})");
                let _ = writeln!(w, "        mlp->fail();");
            }
            Some(Native::Int) => {
                let _ = writeln!(w, "    int64_t ret = {call};");
                let _ = writeln!(w, "    mlp->return_int({out_reg}, ret);");
            }
            Some(Native::Real) => {
                let _ = writeln!(w, "    double ret = {call};");
                let _ = writeln!(w, "    mlp->return_real({out_reg}, ret);");
            }
            Some(Native::Str) => {
                let _ = writeln!(w, "    const char *ret = {call};");
                let _ = writeln!(w, "    if (ret == NULL)");
                let _ = writeln!(w, "        mlp->fail();");
                let _ = writeln!(w, "    else");
                let _ = writeln!(
                    w,
                    "        mlp->return_string({out_reg}, ret, strlen(ret));"
                );
            }
            Some(Native::Record(plan)) => {
                let _ = writeln!(w, "    struct {} ret = {call};", plan.record);
                let _ = writeln!(w, "    {}({out_reg}, ret);", plan.marshal_fn());
            }
        }
        for f in frees.iter().rev() {
            let _ = writeln!(w, "    free({f});");
        }
        let _ = writeln!(w, "}}");
    }
    Ok(out)
}

/// Entry symbols a built plugin must export.
pub fn required_symbols(spec: &SpecAst) -> Vec<String> {
    let mut out = vec!["mlp_abi_version".to_string(), "mlp_init".to_string()];
    out.extend(spec.preds.iter().map(entry_symbol));
    out
}

/// Plain-text build instructions listing the symbols involved.
pub fn generate_build_note(spec: &SpecAst) -> Result<String, StubgenError> {
    let mut out = format!("{}\n\n", header_line(spec));
    let lib = &spec.lib_name;
    let _ = writeln!(
        out,
        "Library: {lib} (lib{lib}.so, lib{lib}.dylib or {lib}.dll)"
    );
    let _ = writeln!(out, "Host API version: {API_VERSION}");
    let _ = writeln!(out);
    let _ = writeln!(out, "Native functions to implement:");
    for p in &spec.preds {
        let s = shape(spec, p)?;
        let _ = writeln!(out, "  {};", prototype(p, &s));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Exported symbols:");
    for s in required_symbols(spec) {
        let _ = writeln!(out, "  {s}");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Build on Linux:");
    let _ = writeln!(
        out,
        "  cc -shared -fPIC -I<path to include> {}_wrappers.c <your sources> -o lib{lib}.so",
        spec.spec_name
    );
    Ok(out)
}
