//! A small logic programming toolchain with foreign predicates: a module
//! compiler, a linker, a loader that binds extern predicates to shared
//! library entry points, a register-based abstract machine, and a stub
//! generator for native wrappers.

pub mod bytecode;
pub mod compiler;
pub mod frontend;
pub mod hostapi;
pub mod linker;
pub mod loader;
pub mod stubgen;
pub mod terms;
pub mod vm;
