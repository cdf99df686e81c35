//! Functions foreign predicates use to exchange data with the machine.
//!
//! A [`HostContext`] exists only for the duration of one extern invocation.
//! In-process callables receive it directly. Native plugins reach it through
//! the C [`HostCallTable`] handed to their `mlp_init`, whose entries forward
//! to the context installed for the current thread.
//!
//! Registers are 1-based. `get_*` never change machine state. `return_*`
//! unify a freshly built value with the register's current term, and set the
//! failure flag when that unification fails. Reading a register of the wrong
//! type is a fault: the flag is set and a diagnostic recorded. Once the flag
//! is set every further call is a no-op returning zero.

use std::cell::Cell as StdCell;
use std::ffi::{c_char, c_void, CStr};
use std::fmt;
use std::ptr;

use crate::bytecode::NUM_REGISTERS;
use crate::terms::{Cell, Store, TermId};

/// Version of the call table layout. Version 2 added the constructor slots.
pub const API_VERSION: u32 = 2;

pub type Registers = [Option<TermId>; NUM_REGISTERS as usize];

/// A host API misuse detected during an extern invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostFault {
    pub pred: String,
    pub register: Option<usize>,
    pub message: String,
}

impl fmt::Display for HostFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.register {
            Some(r) => write!(
                f,
                "host API fault in {} (register A{r}): {}",
                self.pred, self.message
            ),
            None => write!(f, "host API fault in {}: {}", self.pred, self.message),
        }
    }
}

/// View of the machine handed to an extern predicate.
pub struct HostContext<'m> {
    store: &'m mut Store,
    regs: &'m mut Registers,
    pred: &'m str,
    failed: bool,
    faults: Vec<HostFault>,
    /// Argument cells of the compound most recently built by `return_ctor`.
    pending_ctor: Option<Vec<TermId>>,
}

enum Read<T> {
    Ok(T),
    Fault(String),
}

impl<'m> HostContext<'m> {
    pub fn new(store: &'m mut Store, regs: &'m mut Registers, pred: &'m str) -> Self {
        HostContext {
            store,
            regs,
            pred,
            failed: false,
            faults: Vec::new(),
            pending_ctor: None,
        }
    }

    pub fn pred_name(&self) -> &str {
        self.pred
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    pub fn faults(&self) -> &[HostFault] {
        &self.faults
    }

    pub fn into_faults(self) -> Vec<HostFault> {
        self.faults
    }

    fn fault(&mut self, register: Option<usize>, message: impl Into<String>) {
        self.failed = true;
        self.faults.push(HostFault {
            pred: self.pred.to_string(),
            register,
            message: message.into(),
        });
    }

    fn slot(&self, i: i64) -> Option<usize> {
        (1..=i64::from(NUM_REGISTERS))
            .contains(&i)
            .then(|| (i - 1) as usize)
    }

    fn read<T>(&mut self, i: i64, f: impl FnOnce(&Store, TermId) -> Read<T>) -> Option<T> {
        if self.failed {
            return None;
        }
        let Some(slot) = self.slot(i) else {
            self.fault(
                None,
                format!("register index {i} out of range 1..{NUM_REGISTERS}"),
            );
            return None;
        };
        let result = match self.regs[slot] {
            Some(t) => f(self.store, self.store.deref(t)),
            None => Read::Fault("register is unbound".to_string()),
        };
        match result {
            Read::Ok(v) => Some(v),
            Read::Fault(msg) => {
                self.fault(Some(slot + 1), msg);
                None
            }
        }
    }

    fn kind_of(store: &Store, t: TermId) -> &'static str {
        match store.cell(t) {
            Cell::Var(_) => "unbound",
            Cell::Int(_) => "an int",
            Cell::Real(_) => "a real",
            Cell::Str(_) => "a string",
            Cell::Atom(_) => "an atom",
            Cell::Cmp { .. } => "a compound term",
        }
    }

    fn expect<T>(
        store: &Store,
        t: TermId,
        want: &str,
        f: impl FnOnce(&Cell) -> Option<T>,
    ) -> Read<T> {
        match f(store.cell(t)) {
            Some(v) => Read::Ok(v),
            None if store.is_unbound(t) => {
                Read::Fault(format!("expected {want}, register is unbound"))
            }
            None => Read::Fault(format!(
                "expected {want}, found {}",
                Self::kind_of(store, t)
            )),
        }
    }

    pub fn get_int(&mut self, i: i64) -> i64 {
        self.read(i, |s, t| {
            Self::expect(s, t, "an int", |c| match c {
                Cell::Int(v) => Some(*v),
                _ => None,
            })
        })
        .unwrap_or(0)
    }

    pub fn get_real(&mut self, i: i64) -> f64 {
        self.read(i, |s, t| {
            Self::expect(s, t, "a real", |c| match c {
                Cell::Real(v) => Some(*v),
                _ => None,
            })
        })
        .unwrap_or(0.0)
    }

    /// Length in bytes of the string in register `i`.
    pub fn get_string_len(&mut self, i: i64) -> usize {
        self.get_str(i).map_or(0, |s| s.len())
    }

    /// Copies up to `buf.len()` bytes of the string in register `i` and
    /// returns how many were copied. No terminator is written.
    pub fn get_string(&mut self, i: i64, buf: &mut [u8]) -> usize {
        match self.get_str(i) {
            Some(s) => {
                let n = s.len().min(buf.len());
                buf[..n].copy_from_slice(&s.as_bytes()[..n]);
                n
            }
            None => 0,
        }
    }

    pub fn get_str(&mut self, i: i64) -> Option<std::sync::Arc<str>> {
        self.read(i, |s, t| {
            Self::expect(s, t, "a string", |c| match c {
                Cell::Str(v) => Some(v.clone()),
                _ => None,
            })
        })
    }

    /// Argument `k` (1-based) of the compound in register `i`, which must be an int.
    pub fn get_ctor_arg_int(&mut self, i: i64, k: i64) -> i64 {
        self.read(i, |s, t| match s.cell(t) {
            Cell::Cmp { args, .. } => {
                if k < 1 || k as usize > args.len() {
                    return Read::Fault(format!("constructor has no argument {k}"));
                }
                let a = s.deref(args[k as usize - 1]);
                Self::expect(s, a, &format!("an int in argument {k}"), |c| match c {
                    Cell::Int(v) => Some(*v),
                    _ => None,
                })
            }
            _ if s.is_unbound(t) => {
                Read::Fault("expected a compound term, register is unbound".into())
            }
            _ => Read::Fault(format!(
                "expected a compound term, found {}",
                Self::kind_of(s, t)
            )),
        })
        .unwrap_or(0)
    }

    fn unify_into(&mut self, i: i64, value: TermId) {
        let Some(slot) = self.slot(i) else {
            self.fault(
                None,
                format!("register index {i} out of range 1..{NUM_REGISTERS}"),
            );
            return;
        };
        let target = match self.regs[slot] {
            Some(t) => t,
            None => {
                let v = self.store.new_var();
                self.regs[slot] = Some(v);
                v
            }
        };
        if !self.store.unify(target, value) {
            self.failed = true;
        }
    }

    pub fn return_int(&mut self, i: i64, v: i64) {
        if !self.failed {
            let t = self.store.int(v);
            self.unify_into(i, t);
        }
    }

    pub fn return_real(&mut self, i: i64, v: f64) {
        if !self.failed {
            let t = self.store.real(v);
            self.unify_into(i, t);
        }
    }

    pub fn return_string(&mut self, i: i64, bytes: &[u8]) {
        if self.failed {
            return;
        }
        match std::str::from_utf8(bytes) {
            Ok(s) => {
                let t = self.store.string(s);
                self.unify_into(i, t);
            }
            Err(_) => self.fault(
                self.slot(i).map(|s| s + 1),
                "returned string is not valid UTF-8",
            ),
        }
    }

    /// Unifies register `i` with `name(_, .., _)`. The arguments are then
    /// filled in with [`set_ctor_arg_int`](Self::set_ctor_arg_int).
    pub fn return_ctor(&mut self, i: i64, name: &str, arity: i64) {
        if self.failed {
            return;
        }
        if !(0..=i64::from(u16::MAX)).contains(&arity) {
            self.fault(None, format!("invalid constructor arity {arity}"));
            return;
        }
        let args: Vec<TermId> = (0..arity).map(|_| self.store.new_var()).collect();
        let t = self.store.compound(name, args.clone());
        self.pending_ctor = Some(args);
        self.unify_into(i, t);
    }

    /// Unifies argument `k` (1-based) of the last `return_ctor` term with `v`.
    pub fn set_ctor_arg_int(&mut self, k: i64, v: i64) {
        if self.failed {
            return;
        }
        let Some(arg) = self
            .pending_ctor
            .as_ref()
            .and_then(|args| {
                usize::try_from(k)
                    .ok()
                    .filter(|&k| k >= 1)
                    .and_then(|k| args.get(k - 1))
            })
            .copied()
        else {
            self.fault(
                None,
                format!("set_ctor_arg_int({k}) without a matching return_ctor"),
            );
            return;
        };
        let t = self.store.int(v);
        if !self.store.unify(arg, t) {
            self.failed = true;
        }
    }

    pub fn fail(&mut self) {
        self.failed = true;
    }

    /// Overwrites registers `from..=64` with fresh integers. Only test
    /// callables flagged `regcl` may use this.
    pub fn clobber_registers(&mut self, from: usize) {
        for slot in from.max(1) - 1..self.regs.len() {
            let junk = self.store.int(-(slot as i64) - 1000);
            self.regs[slot] = Some(junk);
        }
    }
}

/// Call table passed to a plugin's `mlp_init`. The layout matches
/// `include/mlp_plugin.h`.
#[repr(C)]
pub struct HostCallTable {
    pub api_version: u32,
    pub get_int: extern "C" fn(i32) -> i64,
    pub get_real: extern "C" fn(i32) -> f64,
    pub get_string_len: extern "C" fn(i32) -> usize,
    pub get_string: extern "C" fn(i32, *mut c_char, usize) -> usize,
    pub return_int: extern "C" fn(i32, i64),
    pub return_real: extern "C" fn(i32, f64),
    pub return_string: extern "C" fn(i32, *const c_char, usize),
    pub fail: extern "C" fn(),
    pub get_ctor_arg_int: extern "C" fn(i32, i32) -> i64,
    pub return_ctor: extern "C" fn(i32, *const c_char, i32),
    pub set_ctor_arg_int: extern "C" fn(i32, i64),
}

thread_local! {
    static CURRENT: StdCell<*mut c_void> = const { StdCell::new(ptr::null_mut()) };
}

/// Runs `f` with `ctx` reachable from the C call table on this thread.
pub fn with_context<R>(ctx: &mut HostContext<'_>, f: impl FnOnce() -> R) -> R {
    struct Restore(*mut c_void);
    impl Drop for Restore {
        fn drop(&mut self) {
            CURRENT.with(|c| c.set(self.0));
        }
    }
    let prev = CURRENT.with(|c| c.replace(ctx as *mut HostContext<'_> as *mut c_void));
    let _restore = Restore(prev);
    f()
}

/// Calls outside an invocation do nothing and return zero.
fn current<R: Default>(f: impl FnOnce(&mut HostContext<'_>) -> R) -> R {
    let p = CURRENT.with(StdCell::get) as *mut HostContext<'static>;
    if p.is_null() {
        return R::default();
    }
    // The pointer was installed by `with_context`, which outlives the call.
    let ctx = unsafe { &mut *p };
    std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| f(ctx))).unwrap_or_default()
}

extern "C" fn c_get_int(i: i32) -> i64 {
    current(|c| c.get_int(i64::from(i)))
}

extern "C" fn c_get_real(i: i32) -> f64 {
    current(|c| c.get_real(i64::from(i)))
}

extern "C" fn c_get_string_len(i: i32) -> usize {
    current(|c| c.get_string_len(i64::from(i)))
}

extern "C" fn c_get_string(i: i32, buf: *mut c_char, cap: usize) -> usize {
    current(|c| {
        if buf.is_null() {
            return 0;
        }
        let out = unsafe { std::slice::from_raw_parts_mut(buf as *mut u8, cap) };
        c.get_string(i64::from(i), out)
    })
}

extern "C" fn c_return_int(i: i32, v: i64) {
    current(|c| c.return_int(i64::from(i), v))
}

extern "C" fn c_return_real(i: i32, v: f64) {
    current(|c| c.return_real(i64::from(i), v))
}

extern "C" fn c_return_string(i: i32, bytes: *const c_char, len: usize) {
    current(|c| {
        let s: &[u8] = if bytes.is_null() {
            &[]
        } else {
            unsafe { std::slice::from_raw_parts(bytes as *const u8, len) }
        };
        c.return_string(i64::from(i), s)
    })
}

extern "C" fn c_fail() {
    current(|c| c.fail())
}

extern "C" fn c_get_ctor_arg_int(i: i32, k: i32) -> i64 {
    current(|c| c.get_ctor_arg_int(i64::from(i), i64::from(k)))
}

extern "C" fn c_return_ctor(i: i32, name: *const c_char, arity: i32) {
    current(|c| {
        if name.is_null() {
            c.fault(None, "return_ctor with a null name");
            return;
        }
        match unsafe { CStr::from_ptr(name) }.to_str() {
            Ok(n) => c.return_ctor(i64::from(i), n, i64::from(arity)),
            Err(_) => c.fault(None, "constructor name is not valid UTF-8"),
        }
    })
}

extern "C" fn c_set_ctor_arg_int(k: i32, v: i64) {
    current(|c| c.set_ctor_arg_int(i64::from(k), v))
}

pub static HOST_CALL_TABLE: HostCallTable = HostCallTable {
    api_version: API_VERSION,
    get_int: c_get_int,
    get_real: c_get_real,
    get_string_len: c_get_string_len,
    get_string: c_get_string,
    return_int: c_return_int,
    return_real: c_return_real,
    return_string: c_return_string,
    fail: c_fail,
    get_ctor_arg_int: c_get_ctor_arg_int,
    return_ctor: c_return_ctor,
    set_ctor_arg_int: c_set_ctor_arg_int,
};

pub type HostFn = fn(&mut HostContext<'_>);

/// An in-process callable in a `host:` namespace.
#[derive(Clone, Copy)]
pub struct HostPredicate {
    pub symbol: &'static str,
    pub lp_name: &'static str,
    pub ty: &'static str,
    pub regcl: bool,
    pub func: HostFn,
}

impl fmt::Debug for HostPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HostPredicate")
            .field("symbol", &self.symbol)
            .field("lp_name", &self.lp_name)
            .field("ty", &self.ty)
            .field("regcl", &self.regcl)
            .finish()
    }
}

pub const HOST_TEST: &str = "host:test";
pub const HOST_INTRINSICS: &str = "host:intrinsics";

const fn pred(
    symbol: &'static str,
    lp_name: &'static str,
    ty: &'static str,
    func: HostFn,
) -> HostPredicate {
    HostPredicate {
        symbol,
        lp_name,
        ty,
        regcl: false,
        func,
    }
}

static TEST_PREDICATES: &[HostPredicate] = &[
    pred("echo_int", "echo", "int -> int -> o", |c| {
        let v = c.get_int(1);
        c.return_int(2, v)
    }),
    pred("echo_real", "echo_real", "real -> real -> o", |c| {
        let v = c.get_real(1);
        c.return_real(2, v)
    }),
    pred("echo_string", "echo_string", "string -> string -> o", |c| {
        let mut buf = vec![0u8; c.get_string_len(1)];
        let n = c.get_string(1, &mut buf);
        c.return_string(2, &buf[..n])
    }),
    pred("string_len", "string_len", "string -> int -> o", |c| {
        let n = c.get_string_len(1);
        c.return_int(2, n as i64)
    }),
    pred("sin_wrapper", "sin", "real -> real -> o", |c| {
        let a = c.get_real(1);
        c.return_real(2, a.sin())
    }),
    pred("cos_wrapper", "cos", "real -> real -> o", |c| {
        let a = c.get_real(1);
        c.return_real(2, a.cos())
    }),
    pred("tan_wrapper", "tan", "real -> real -> o", |c| {
        let a = c.get_real(1);
        c.return_real(2, a.tan())
    }),
    pred("inc_int", "inc", "int -> int -> o", |c| {
        let v = c.get_int(1);
        match v.checked_add(1) {
            Some(r) => c.return_int(2, r),
            None => c.fail(),
        }
    }),
    pred("dec_int", "dec", "int -> int -> o", |c| {
        let v = c.get_int(1);
        match v.checked_sub(1) {
            Some(r) => c.return_int(2, r),
            None => c.fail(),
        }
    }),
    pred("add_int", "add", "int -> int -> int -> o", |c| {
        let (a, b) = (c.get_int(1), c.get_int(2));
        match a.checked_add(b) {
            Some(r) => c.return_int(3, r),
            None => c.fail(),
        }
    }),
    pred("pos_int", "pos", "int -> o", |c| {
        if c.get_int(1) <= 0 {
            c.fail()
        }
    }),
    pred("nop", "nop", "o", |_| {}),
    pred("always_fail", "always_fail", "int -> o", |c| c.fail()),
    pred(
        "fail_then_return",
        "fail_then_return",
        "int -> int -> o",
        |c| {
            c.fail();
            c.fail();
            c.return_int(2, 5)
        },
    ),
    HostPredicate {
        symbol: "clobber_inc",
        lp_name: "clobber_inc",
        ty: "int -> int -> o",
        regcl: true,
        func: |c| {
            let v = c.get_int(1);
            c.return_int(2, v.wrapping_add(1));
            c.clobber_registers(3);
        },
    },
    pred("pr_mk", "pr_mk", "int -> int -> pair int int -> o", |c| {
        let (x, y) = (c.get_int(1), c.get_int(2));
        c.return_ctor(3, "pr", 2);
        c.set_ctor_arg_int(1, x);
        c.set_ctor_arg_int(2, y);
    }),
    pred(
        "pr_swap",
        "pr_swap",
        "pair int int -> pair int int -> o",
        |c| {
            let (x, y) = (c.get_ctor_arg_int(1, 1), c.get_ctor_arg_int(1, 2));
            c.return_ctor(2, "pr", 2);
            c.set_ctor_arg_int(1, y);
            c.set_ctor_arg_int(2, x);
        },
    ),
    pred("panic_wrapper", "explode", "int -> o", |_| {
        panic!("explode: deliberate fault")
    }),
];

static INTRINSIC_PREDICATES: &[HostPredicate] = &[
    pred("int_add", "int_add", "int -> int -> int -> o", |c| {
        let (a, b) = (c.get_int(1), c.get_int(2));
        match a.checked_add(b) {
            Some(r) => c.return_int(3, r),
            None => c.fail(),
        }
    }),
    pred("int_sub", "int_sub", "int -> int -> int -> o", |c| {
        let (a, b) = (c.get_int(1), c.get_int(2));
        match a.checked_sub(b) {
            Some(r) => c.return_int(3, r),
            None => c.fail(),
        }
    }),
    pred("int_mul", "int_mul", "int -> int -> int -> o", |c| {
        let (a, b) = (c.get_int(1), c.get_int(2));
        match a.checked_mul(b) {
            Some(r) => c.return_int(3, r),
            None => c.fail(),
        }
    }),
    pred("real_add", "real_add", "real -> real -> real -> o", |c| {
        let (a, b) = (c.get_real(1), c.get_real(2));
        c.return_real(3, a + b)
    }),
    pred("real_mul", "real_mul", "real -> real -> real -> o", |c| {
        let (a, b) = (c.get_real(1), c.get_real(2));
        c.return_real(3, a * b)
    }),
    pred("int_to_real", "int_to_real", "int -> real -> o", |c| {
        let a = c.get_int(1);
        c.return_real(2, a as f64)
    }),
];

/// Callables of an in-process namespace, or `None` if `lib` names none.
pub fn host_namespace(lib: &str) -> Option<&'static [HostPredicate]> {
    match lib {
        HOST_TEST => Some(TEST_PREDICATES),
        HOST_INTRINSICS => Some(INTRINSIC_PREDICATES),
        _ => None,
    }
}

/// Signature file text declaring every callable of a `host:` namespace.
pub fn host_signature_text(lib: &str) -> Option<String> {
    let preds = host_namespace(lib)?;
    let sig_name = lib.strip_prefix("host:").unwrap_or(lib);
    let mut out = format!("sig host_{sig_name}.\nlib {lib}.\n\n");
    for p in preds {
        out.push_str(&format!(
            "extern type {} {} {}.\n",
            p.lp_name, p.symbol, p.ty
        ));
    }
    let regcl: Vec<&str> = preds
        .iter()
        .filter(|p| p.regcl)
        .map(|p| p.lp_name)
        .collect();
    if !regcl.is_empty() {
        out.push_str(&format!("\nregcl {}.\n", regcl.join(", ")));
    }
    Some(out)
}
