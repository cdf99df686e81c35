//! Combines bytecode images into one.
//!
//! Segments are concatenated in input order. Operands in code copied from
//! image `k` are shifted by the combined size of the matching segment in
//! images `0..k`. Extern entries that match exactly are merged into the first
//! occurrence so a library symbol is resolved once however many modules
//! declare it.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::bytecode::{BytecodeImage, ExternEntry, ExternIndex, FormatError, Instruction};

/// An image plus the name used for it in diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct LinkUnit<'a> {
    pub name: &'a str,
    pub image: &'a BytecodeImage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkDiagnostic {
    #[error("no images to link")]
    Empty,
    #[error("predicate {name}/{arity} is defined in both {first} and {second}")]
    DuplicatePredicate {
        name: String,
        arity: u16,
        first: String,
        second: String,
    },
    #[error(
        "conflicting extern declarations of {name}/{arity}: {first_decl} in {first}, {second_decl} in {second}"
    )]
    ConflictingExtern {
        name: String,
        arity: u16,
        first: String,
        first_decl: String,
        second: String,
        second_decl: String,
    },
    #[error("{unit}: {source}")]
    InvalidInput { unit: String, source: FormatError },
    #[error("linked image exceeds a segment limit: {0}")]
    TooLarge(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))]
pub struct LinkError(pub Vec<LinkDiagnostic>);

fn describe(e: &ExternEntry) -> String {
    format!(
        "{}:{}{}",
        e.lib_name,
        e.entry_symbol,
        if e.regcl { " regcl" } else { "" }
    )
}

/// Default names `image 0`, `image 1`, ... for unnamed inputs.
fn units(images: &[BytecodeImage]) -> (Vec<String>, Vec<&BytecodeImage>) {
    (
        (0..images.len()).map(|i| format!("image {i}")).collect(),
        images.iter().collect(),
    )
}

/// Every error [`link_units`] would report, without building an image.
pub fn check_units(inputs: &[LinkUnit<'_>]) -> Vec<LinkDiagnostic> {
    let mut out = Vec::new();
    if inputs.is_empty() {
        out.push(LinkDiagnostic::Empty);
        return out;
    }
    for u in inputs {
        if let Err(source) = u.image.validate() {
            out.push(LinkDiagnostic::InvalidInput {
                unit: u.name.to_string(),
                source,
            });
        }
    }
    let mut preds: BTreeMap<(&str, u16), &str> = BTreeMap::new();
    let mut externs: BTreeMap<(&str, u16), (&ExternEntry, &str)> = BTreeMap::new();
    for u in inputs {
        for p in &u.image.preds {
            if let Some(first) = preds.get(&(p.name.as_str(), p.arity)) {
                out.push(LinkDiagnostic::DuplicatePredicate {
                    name: p.name.clone(),
                    arity: p.arity,
                    first: first.to_string(),
                    second: u.name.to_string(),
                });
            } else {
                preds.insert((p.name.as_str(), p.arity), u.name);
            }
        }
        for e in &u.image.externs {
            match externs.get(&(e.pred_name.as_str(), e.arity)) {
                Some((prev, first)) if *prev != e => {
                    out.push(LinkDiagnostic::ConflictingExtern {
                        name: e.pred_name.clone(),
                        arity: e.arity,
                        first: first.to_string(),
                        first_decl: describe(prev),
                        second: u.name.to_string(),
                        second_decl: describe(e),
                    });
                }
                Some(_) => {}
                None => {
                    externs.insert((e.pred_name.as_str(), e.arity), (e, u.name));
                }
            }
        }
    }
    out
}

/// Every error [`link`] would report, without building an image.
pub fn link_check(images: &[BytecodeImage]) -> Vec<LinkDiagnostic> {
    let (names, imgs) = units(images);
    let inputs: Vec<LinkUnit> = names
        .iter()
        .zip(imgs)
        .map(|(name, image)| LinkUnit { name, image })
        .collect();
    check_units(&inputs)
}

pub fn link(images: &[BytecodeImage]) -> Result<BytecodeImage, LinkError> {
    let (names, imgs) = units(images);
    let inputs: Vec<LinkUnit> = names
        .iter()
        .zip(imgs)
        .map(|(name, image)| LinkUnit { name, image })
        .collect();
    link_units(&inputs)
}

pub fn link_units(inputs: &[LinkUnit<'_>]) -> Result<BytecodeImage, LinkError> {
    let diags = check_units(inputs);
    if !diags.is_empty() {
        return Err(LinkError(diags));
    }
    let too_large = |what: &str| LinkError(vec![LinkDiagnostic::TooLarge(what.to_string())]);

    let mut out = BytecodeImage::default();
    for u in inputs {
        let img = u.image;
        let const_base = u32::try_from(out.consts.len()).map_err(|_| too_large("constants"))?;
        let tmpl_base = u16::try_from(out.templates.len()).map_err(|_| too_large("templates"))?;
        let code_base = u32::try_from(out.code.len()).map_err(|_| too_large("code"))?;
        let shift_const16 = |c: u16| -> Result<u16, LinkError> {
            u16::try_from(u32::from(c) + const_base).map_err(|_| too_large("constants"))
        };
        let shift_tmpl = |t: u16| -> Result<u16, LinkError> {
            t.checked_add(tmpl_base)
                .ok_or_else(|| too_large("templates"))
        };

        // extern remap: merged into an earlier identical entry or appended
        let mut remap = Vec::with_capacity(img.externs.len());
        for e in &img.externs {
            let idx = match out.externs.iter().position(|x| x == e) {
                Some(i) => i,
                None => {
                    out.externs.push(e.clone());
                    out.externs.len() - 1
                }
            };
            remap.push(ExternIndex(
                u16::try_from(idx).map_err(|_| too_large("externs"))?,
            ));
        }

        out.consts.extend(img.consts.iter().cloned());
        for t in &img.templates {
            let mut t = t.clone();
            t.root.for_each_const_mut(&mut |c| *c += const_base);
            out.templates.push(t);
        }
        for p in &img.preds {
            let mut p = p.clone();
            p.offset += code_base;
            out.preds.push(p);
        }
        for ins in &img.code {
            use Instruction::*;
            let moved = match *ins {
                Call(p) => Call(shift_const16(p)?),
                Execute(p) => Execute(shift_const16(p)?),
                TryMeElse(l) => TryMeElse(l + code_base),
                RetryMeElse(l) => RetryMeElse(l + code_base),
                GetTemplate(t, r) => GetTemplate(shift_tmpl(t)?, r),
                PutTemplate(t, r) => PutTemplate(shift_tmpl(t)?, r),
                CallExtern(x) => CallExtern(remap[usize::from(x.0)]),
                ExecuteExtern(x) => ExecuteExtern(remap[usize::from(x.0)]),
                other => other,
            };
            out.code.push(moved);
        }
    }
    out.validate().map_err(|source| {
        LinkError(vec![LinkDiagnostic::InvalidInput {
            unit: "linked image".to_string(),
            source,
        }])
    })?;
    Ok(out)
}
