//! Turns a linked image into a runnable program.
//!
//! Every extern entry is resolved exactly once, here, and extern call
//! operands become indices into the resulting handle array. `host:` library
//! names resolve to in-process callables without touching the platform
//! loader. Any failure aborts the whole load.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use libloading::Library;
use thiserror::Error;

use crate::bytecode::{
    BytecodeImage, Const, ExternEntry, FormatError, HandleIndex, Instruction, PredEntry,
    TermTemplate,
};
use crate::compiler::QueryScope;
use crate::hostapi::{self, HostCallTable, HostFn, API_VERSION, HOST_CALL_TABLE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Platform {
    Linux,
    MacOs,
    Windows,
}

impl Platform {
    pub fn current() -> Self {
        if cfg!(target_os = "windows") {
            Platform::Windows
        } else if cfg!(target_os = "macos") {
            Platform::MacOs
        } else {
            Platform::Linux
        }
    }
}

/// Shared object file name for a logical library name, or `None` for the
/// in-process `host:` namespaces.
pub fn library_filename(lib_name: &str, platform: Platform) -> Option<String> {
    if lib_name.starts_with("host:") {
        return None;
    }
    Some(match platform {
        Platform::Linux => format!("lib{lib_name}.so"),
        Platform::MacOs => format!("lib{lib_name}.dylib"),
        Platform::Windows => format!("{lib_name}.dll"),
    })
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("library '{lib}' needed by {pred} not found (searched: {})", display_paths(.searched))]
    LibraryNotFound {
        lib: String,
        pred: String,
        searched: Vec<PathBuf>,
    },
    #[error("cannot open library '{lib}' at {} needed by {pred}: {reason}", .path.display())]
    OpenFailed {
        lib: String,
        pred: String,
        path: PathBuf,
        reason: String,
    },
    #[error("library '{lib}' at {} is not a plugin: missing {missing}", .path.display())]
    NotAPlugin {
        lib: String,
        path: PathBuf,
        missing: &'static str,
    },
    #[error(
        "library '{lib}' was built for host API version {found}, this host provides {expected}"
    )]
    AbiMismatch {
        lib: String,
        found: u32,
        expected: u32,
    },
    #[error("symbol '{symbol}' not found in library '{lib}' (needed by {pred})")]
    SymbolNotFound {
        lib: String,
        symbol: String,
        pred: String,
    },
    #[error("unknown host namespace '{lib}' (needed by {pred})")]
    UnknownHostLibrary { lib: String, pred: String },
    #[error("invalid image: {0}")]
    Invalid(#[from] FormatError),
}

fn display_paths(paths: &[PathBuf]) -> String {
    if paths.is_empty() {
        return "nothing".to_string();
    }
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Clone)]
pub enum Callable {
    Host(HostFn),
    Native {
        entry: unsafe extern "C" fn(),
        _lib: Arc<Library>,
    },
}

impl fmt::Debug for Callable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Callable::Host(_) => f.write_str("Host"),
            Callable::Native { entry, .. } => write!(f, "Native({:p})", *entry as *const ()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Handle {
    pub callable: Callable,
    pub pred_name: String,
    pub arity: usize,
    pub regcl: bool,
    pub lib_name: String,
    pub entry_symbol: String,
}

/// Callable handles, index-aligned with the image's extern table.
#[derive(Debug, Clone, Default)]
pub struct ResolvedHandles(pub Vec<Handle>);

impl ResolvedHandles {
    pub fn get(&self, h: HandleIndex) -> &Handle {
        &self.0[usize::from(h.0)]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadEvent {
    Open { lib: String, path: Option<PathBuf> },
    Resolve { lib: String, symbol: String },
}

/// Opened libraries plus counters and a trace of what the loader did.
#[derive(Debug, Default)]
pub struct LibraryRegistry {
    search_paths: Vec<PathBuf>,
    libs: BTreeMap<String, (Arc<Library>, PathBuf)>,
    pub trace: Vec<LoadEvent>,
}

impl LibraryRegistry {
    pub fn new(search_paths: impl IntoIterator<Item = impl Into<PathBuf>>) -> Self {
        LibraryRegistry {
            search_paths: search_paths.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn resolutions(&self) -> usize {
        self.trace
            .iter()
            .filter(|e| matches!(e, LoadEvent::Resolve { .. }))
            .count()
    }

    pub fn opens(&self) -> usize {
        self.trace
            .iter()
            .filter(|e| matches!(e, LoadEvent::Open { .. }))
            .count()
    }

    /// Candidate paths for a library: the search paths in order, then the
    /// working directory.
    pub fn candidates(&self, lib_name: &str) -> Vec<PathBuf> {
        let Some(file) = library_filename(lib_name, Platform::current()) else {
            return Vec::new();
        };
        let mut dirs = self.search_paths.clone();
        dirs.push(std::env::current_dir().unwrap_or_else(|_| PathBuf::from(".")));
        dirs.into_iter().map(|d| d.join(&file)).collect()
    }

    fn open(&mut self, lib_name: &str, pred: &str) -> Result<Arc<Library>, LoadError> {
        if let Some((lib, _)) = self.libs.get(lib_name) {
            return Ok(lib.clone());
        }
        let candidates = self.candidates(lib_name);
        let Some(path) = candidates.iter().find(|p| p.is_file()).cloned() else {
            return Err(LoadError::LibraryNotFound {
                lib: lib_name.to_string(),
                pred: pred.to_string(),
                searched: candidates,
            });
        };
        let lib = unsafe { Library::new(&path) }.map_err(|e| LoadError::OpenFailed {
            lib: lib_name.to_string(),
            pred: pred.to_string(),
            path: path.clone(),
            reason: e.to_string(),
        })?;
        check_plugin(&lib, lib_name, &path)?;
        self.trace.push(LoadEvent::Open {
            lib: lib_name.to_string(),
            path: Some(path.clone()),
        });
        let lib = Arc::new(lib);
        self.libs.insert(lib_name.to_string(), (lib.clone(), path));
        Ok(lib)
    }

    fn resolve(&mut self, e: &ExternEntry) -> Result<Callable, LoadError> {
        let callable = if e.lib_name.starts_with("host:") {
            if !self
                .trace
                .iter()
                .any(|ev| matches!(ev, LoadEvent::Open { lib, .. } if *lib == e.lib_name))
            {
                if hostapi::host_namespace(&e.lib_name).is_none() {
                    return Err(LoadError::UnknownHostLibrary {
                        lib: e.lib_name.clone(),
                        pred: pred_label(e),
                    });
                }
                self.trace.push(LoadEvent::Open {
                    lib: e.lib_name.clone(),
                    path: None,
                });
            }
            Callable::Host(
                resolve_host(&e.lib_name, &e.entry_symbol).map_err(|err| match err {
                    LoadError::SymbolNotFound { lib, symbol, .. } => LoadError::SymbolNotFound {
                        lib,
                        symbol,
                        pred: pred_label(e),
                    },
                    other => other,
                })?,
            )
        } else {
            let lib = self.open(&e.lib_name, &pred_label(e))?;
            let entry = unsafe { lib.get::<unsafe extern "C" fn()>(e.entry_symbol.as_bytes()) }
                .map(|s| *s)
                .map_err(|_| LoadError::SymbolNotFound {
                    lib: e.lib_name.clone(),
                    symbol: e.entry_symbol.clone(),
                    pred: pred_label(e),
                })?;
            Callable::Native { entry, _lib: lib }
        };
        self.trace.push(LoadEvent::Resolve {
            lib: e.lib_name.clone(),
            symbol: e.entry_symbol.clone(),
        });
        Ok(callable)
    }
}

fn pred_label(e: &ExternEntry) -> String {
    format!("{}/{}", e.pred_name, e.arity)
}

/// Checks the version gate and hands the plugin its call table.
fn check_plugin(lib: &Library, lib_name: &str, path: &Path) -> Result<(), LoadError> {
    let not_plugin = |missing| LoadError::NotAPlugin {
        lib: lib_name.to_string(),
        path: path.to_path_buf(),
        missing,
    };
    let version = unsafe { lib.get::<*const u32>(b"mlp_abi_version") }
        .map_err(|_| not_plugin("mlp_abi_version"))?;
    let found = unsafe { **version };
    if found != API_VERSION {
        return Err(LoadError::AbiMismatch {
            lib: lib_name.to_string(),
            found,
            expected: API_VERSION,
        });
    }
    let init = unsafe { lib.get::<unsafe extern "C" fn(*const HostCallTable)>(b"mlp_init") }
        .map_err(|_| not_plugin("mlp_init"))?;
    unsafe { init(&HOST_CALL_TABLE) };
    Ok(())
}

/// Looks up an in-process callable.
pub fn resolve_host(lib_name: &str, symbol: &str) -> Result<HostFn, LoadError> {
    let preds = hostapi::host_namespace(lib_name).ok_or_else(|| LoadError::UnknownHostLibrary {
        lib: lib_name.to_string(),
        pred: symbol.to_string(),
    })?;
    preds
        .iter()
        .find(|p| p.symbol == symbol)
        .map(|p| p.func)
        .ok_or_else(|| LoadError::SymbolNotFound {
            lib: lib_name.to_string(),
            symbol: symbol.to_string(),
            pred: symbol.to_string(),
        })
}

/// A program ready for the machine.
#[derive(Debug, Clone)]
pub struct LoadedProgram {
    pub consts: Vec<Const>,
    pub templates: Vec<TermTemplate>,
    pub preds: Vec<PredEntry>,
    pub code: Vec<Instruction<HandleIndex>>,
    pub handles: ResolvedHandles,
    /// For each constant naming a defined predicate, that predicate's entry.
    pub call_targets: Vec<Option<u32>>,
    /// Symbol resolutions performed while loading.
    pub resolutions: usize,
    pred_index: HashMap<(String, usize), u32>,
    extern_index: HashMap<String, HandleIndex>,
}

impl LoadedProgram {
    /// Entry offset of a defined predicate.
    pub fn pred_offset(&self, name: &str, arity: usize) -> Option<u32> {
        self.pred_index.get(&(name.to_string(), arity)).copied()
    }

    pub fn extern_handle(&self, name: &str) -> Option<HandleIndex> {
        self.extern_index.get(name).copied()
    }

    /// Entry offsets for a constant pool, by functor.
    pub fn targets_for(&self, consts: &[Const]) -> Vec<Option<u32>> {
        consts
            .iter()
            .map(|c| match c {
                Const::Functor(name, arity) => self.pred_offset(name, usize::from(*arity)),
                _ => None,
            })
            .collect()
    }
}

impl QueryScope for LoadedProgram {
    fn extern_pred(&self, name: &str) -> Option<(u16, usize, bool)> {
        let h = self.extern_handle(name)?;
        let handle = self.handles.get(h);
        Some((h.0, handle.arity, handle.regcl))
    }
}

pub fn load(img: &BytecodeImage, search_paths: &[PathBuf]) -> Result<LoadedProgram, LoadError> {
    load_with(img, &mut LibraryRegistry::new(search_paths.iter().cloned()))
}

pub fn load_with(
    img: &BytecodeImage,
    registry: &mut LibraryRegistry,
) -> Result<LoadedProgram, LoadError> {
    img.validate()?;
    let before = registry.resolutions();
    let mut handles = Vec::with_capacity(img.externs.len());
    for e in &img.externs {
        handles.push(Handle {
            callable: registry.resolve(e)?,
            pred_name: e.pred_name.clone(),
            arity: usize::from(e.arity),
            regcl: e.regcl,
            lib_name: e.lib_name.clone(),
            entry_symbol: e.entry_symbol.clone(),
        });
    }
    let code = img
        .code
        .iter()
        .map(|i| i.map_extern(|x| HandleIndex(x.0)))
        .collect();
    let pred_index: HashMap<(String, usize), u32> = img
        .preds
        .iter()
        .map(|p| ((p.name.clone(), usize::from(p.arity)), p.offset))
        .collect();
    let extern_index = img
        .externs
        .iter()
        .enumerate()
        .map(|(i, e)| (e.pred_name.clone(), HandleIndex(i as u16)))
        .collect();
    let mut prog = LoadedProgram {
        consts: img.consts.clone(),
        templates: img.templates.clone(),
        preds: img.preds.clone(),
        code,
        handles: ResolvedHandles(handles),
        call_targets: Vec::new(),
        resolutions: registry.resolutions() - before,
        pred_index,
        extern_index,
    };
    prog.call_targets = prog.targets_for(&prog.consts);
    Ok(prog)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(lib: &str, sym: &str) -> ExternEntry {
        ExternEntry {
            lib_name: lib.into(),
            entry_symbol: sym.into(),
            pred_name: "p".into(),
            arity: 2,
            regcl: false,
        }
    }

    #[test]
    fn filenames() {
        assert_eq!(
            library_filename("math", Platform::Linux).unwrap(),
            "libmath.so"
        );
        assert_eq!(
            library_filename("math", Platform::MacOs).unwrap(),
            "libmath.dylib"
        );
        assert_eq!(
            library_filename("math", Platform::Windows).unwrap(),
            "math.dll"
        );
        assert_eq!(library_filename("host:test", Platform::Linux), None);
    }

    #[test]
    fn empty_image_loads() {
        let prog = load(&BytecodeImage::default(), &[]).unwrap();
        assert!(prog.handles.is_empty());
        assert_eq!(prog.resolutions, 0);
    }

    #[test]
    fn host_resolution() {
        assert!(resolve_host("host:test", "echo_int").is_ok());
        assert!(matches!(
            resolve_host("host:test", "missing"),
            Err(LoadError::SymbolNotFound { .. })
        ));
        let img = BytecodeImage {
            externs: vec![entry("host:test", "echo_int")],
            ..Default::default()
        };
        let mut reg = LibraryRegistry::default();
        let prog = load_with(&img, &mut reg).unwrap();
        assert_eq!(prog.resolutions, 1);
        assert_eq!(reg.opens(), 1);
    }

    #[test]
    fn missing_library_and_symbol() {
        let dir = tempfile::tempdir().unwrap();
        let img = BytecodeImage {
            externs: vec![entry("no_such_lib_xyz", "f")],
            ..Default::default()
        };
        match load(&img, &[dir.path().to_path_buf()]) {
            Err(e @ LoadError::LibraryNotFound { .. }) => {
                let msg = e.to_string();
                assert!(
                    msg.contains("no_such_lib_xyz") && msg.contains("p/2"),
                    "{msg}"
                );
                assert!(msg.contains(&dir.path().display().to_string()), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        let img = BytecodeImage {
            externs: vec![entry("host:test", "no_such")],
            ..Default::default()
        };
        let err = load(&img, &[]).unwrap_err();
        assert!(
            matches!(&err, LoadError::SymbolNotFound { symbol, pred, .. } if symbol == "no_such" && pred == "p/2")
        );
        let img = BytecodeImage {
            externs: vec![entry("host:bogus", "f")],
            ..Default::default()
        };
        assert!(matches!(
            load(&img, &[]),
            Err(LoadError::UnknownHostLibrary { .. })
        ));
    }

    #[test]
    fn non_plugin_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir
            .path()
            .join(library_filename("junk", Platform::current()).unwrap());
        std::fs::write(&file, b"not a shared object").unwrap();
        let img = BytecodeImage {
            externs: vec![entry("junk", "f")],
            ..Default::default()
        };
        assert!(matches!(
            load(&img, &[dir.path().to_path_buf()]),
            Err(LoadError::OpenFailed { .. })
        ));
    }
}
