use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mlp_core::bytecode::{disassemble, BytecodeImage, MAGIC};
use mlp_core::compiler::{compile_module, CompileEnv, CompileOptions, ModuleInterface};
use mlp_core::frontend::{
    parse_module, parse_signature, parse_spec, ModuleAst, Named, SignatureAst,
};
use mlp_core::linker::{link_units, LinkUnit};
use mlp_core::vm::{Machine, MachineOptions, Outcome};
use mlp_core::{hostapi, loader, stubgen};

/// Compiler, linker and runner for mlp modules.
#[derive(Parser, Debug)]
#[command(name = "mlp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compile a module to an .lpx image
    Compile(CompileArgs),
    /// Link several images into one
    Link(LinkArgs),
    /// Load an image and answer a query
    Run(RunArgs),
    /// Dump the contents of an image
    Inspect(InspectArgs),
    /// Generate a signature file and C wrappers from a spec
    Stubgen(StubgenArgs),
}

#[derive(Args, Debug)]
struct CompileArgs {
    module: PathBuf,
    /// Directory searched for signature files and accumulated modules
    #[arg(long = "sig-path", value_name = "DIR")]
    sig_path: Vec<PathBuf>,
    /// Output file (default: the module path with an .lpx extension)
    #[arg(short, value_name = "FILE")]
    output: Option<PathBuf>,
    /// Keep variables live across every extern call in the environment
    #[arg(long)]
    conservative_regs: bool,
}

#[derive(Args, Debug)]
struct LinkArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(short, value_name = "FILE", required = true)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    program: PathBuf,
    /// Goal conjunction to answer (default: main)
    #[arg(short, value_name = "QUERY")]
    query: Option<String>,
    /// Directory searched for plugin libraries, before MLP_LIB_PATH and the
    /// working directory
    #[arg(long = "lib-path", value_name = "DIR")]
    lib_path: Vec<PathBuf>,
    /// Instruction budget for the query
    #[arg(long, value_name = "N")]
    max_steps: Option<u64>,
    /// Print every answer instead of the first
    #[arg(long)]
    all: bool,
    /// Report externs that change registers without being declared regcl
    #[arg(long)]
    check_regs: bool,
}

#[derive(Args, Debug)]
struct InspectArgs {
    file: PathBuf,
    #[arg(long)]
    externs: bool,
    #[arg(long)]
    code: bool,
    #[arg(long)]
    header: bool,
}

#[derive(Args, Debug)]
struct StubgenArgs {
    spec: PathBuf,
    #[arg(short, value_name = "DIR", required = true)]
    output: PathBuf,
}

/// Exit status 1 after diagnostics have already been printed.
#[derive(Debug)]
struct Reported;

impl std::fmt::Display for Reported {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("errors reported")
    }
}

impl std::error::Error for Reported {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Compile(a) => compile(a).map(|_| ExitCode::SUCCESS),
        Command::Link(a) => link(a).map(|_| ExitCode::SUCCESS),
        Command::Run(a) => run(a),
        Command::Inspect(a) => inspect(a).map(|_| ExitCode::SUCCESS),
        Command::Stubgen(a) => gen_stubs(a).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            if !e.is::<Reported>() {
                eprintln!("mlp: error: {e:#}");
            }
            ExitCode::from(1)
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_image(path: &Path) -> Result<BytecodeImage> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    BytecodeImage::deserialize(&bytes).with_context(|| format!("{}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn report(file: &Path, pos: impl std::fmt::Display, message: impl std::fmt::Display) {
    eprintln!("{}:{pos}: error: {message}", file.display());
}

fn find_file(dirs: &[PathBuf], file: &str) -> Option<PathBuf> {
    dirs.iter().map(|d| d.join(file)).find(|p| p.is_file())
}

fn search_dirs(module: &Path, sig_path: &[PathBuf]) -> Vec<PathBuf> {
    let mut dirs = sig_path.to_vec();
    let here = module
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    dirs.push(here);
    dirs
}

/// Signature for an `accum_extern` name: `<name>.sig` on the search path,
/// else the built-in text of an in-process namespace (`host_test` names
/// `host:test`).
fn load_signature(name: &Named, dirs: &[PathBuf], module: &Path) -> Result<SignatureAst> {
    let file = format!("{}.sig", name.name);
    let (origin, text) = match find_file(dirs, &file) {
        Some(path) => {
            let text = read_text(&path)?;
            (path, text)
        }
        None => {
            let builtin = name
                .name
                .strip_prefix("host_")
                .and_then(|ns| hostapi::host_signature_text(&format!("host:{ns}")));
            match builtin {
                Some(text) => (PathBuf::from(format!("<{}>", name.name)), text),
                None => {
                    let searched: Vec<String> =
                        dirs.iter().map(|d| d.display().to_string()).collect();
                    report(
                        module,
                        name.pos,
                        format!(
                            "no signature file {file} for accum_extern '{}' (searched: {})",
                            name.name,
                            searched.join(", ")
                        ),
                    );
                    return Err(Reported.into());
                }
            }
        }
    };
    parse_signature(&text).map_err(|e| {
        report(&origin, e.pos, &e.message);
        Reported.into()
    })
}

fn load_interface(name: &Named, dirs: &[PathBuf], module: &Path) -> Result<ModuleInterface> {
    let file = format!("{}.mod", name.name);
    let Some(path) = find_file(dirs, &file) else {
        report(
            module,
            name.pos,
            format!("no module file {file} for accumulate '{}'", name.name),
        );
        return Err(Reported.into());
    };
    let ast = parse_module(&read_text(&path)?).map_err(|e| {
        report(&path, e.pos, &e.message);
        anyhow::Error::from(Reported)
    })?;
    Ok(ModuleInterface::of(&ast))
}

fn compile(args: CompileArgs) -> Result<()> {
    let source = read_text(&args.module)?;
    let ast: ModuleAst = parse_module(&source).map_err(|e| {
        report(&args.module, e.pos, &e.message);
        anyhow::Error::from(Reported)
    })?;
    let dirs = search_dirs(&args.module, &args.sig_path);
    let mut env = CompileEnv::new();
    let mut failed = false;
    for name in &ast.accum_externs {
        match load_signature(name, &dirs, &args.module) {
            Ok(sig) => env.signatures.insert(name.name.clone(), sig),
            Err(e) if e.is::<Reported>() => {
                failed = true;
                continue;
            }
            Err(e) => return Err(e),
        };
    }
    for name in &ast.accumulates {
        match load_interface(name, &dirs, &args.module) {
            Ok(iface) => env.modules.insert(name.name.clone(), iface),
            Err(e) if e.is::<Reported>() => {
                failed = true;
                continue;
            }
            Err(e) => return Err(e),
        };
    }
    if failed {
        return Err(Reported.into());
    }
    let opts = CompileOptions {
        conservative_regs: args.conservative_regs,
    };
    let image = compile_module(&ast, &env, opts).map_err(|err| {
        for d in &err.0 {
            report(&args.module, d.pos, &d.message);
        }
        anyhow::Error::from(Reported)
    })?;
    let out = args
        .output
        .unwrap_or_else(|| args.module.with_extension("lpx"));
    write_file(&out, image.serialize())
}

fn link(args: LinkArgs) -> Result<()> {
    let images = args
        .inputs
        .iter()
        .map(|p| read_image(p))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = args
        .inputs
        .iter()
        .map(|p| p.display().to_string())
        .collect();
    let units: Vec<LinkUnit> = names
        .iter()
        .zip(&images)
        .map(|(name, image)| LinkUnit { name, image })
        .collect();
    let linked = link_units(&units).map_err(|err| {
        for d in &err.0 {
            eprintln!("mlp: link error: {d}");
        }
        anyhow::Error::from(Reported)
    })?;
    write_file(&args.output, linked.serialize())
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let image = read_image(&args.program)?;
    let mut lib_path = args.lib_path.clone();
    if let Some(extra) = std::env::var_os("MLP_LIB_PATH") {
        lib_path.extend(std::env::split_paths(&extra).filter(|p| !p.as_os_str().is_empty()));
    }
    if let Ok(cwd) = std::env::current_dir() {
        lib_path.push(cwd);
    }
    let prog = loader::load(&image, &lib_path).map_err(|e| anyhow::anyhow!("load failed: {e}"))?;
    let query = match args.query {
        Some(q) => q,
        None if prog.pred_offset("main", 0).is_some() => "main".to_string(),
        None => bail!(
            "no query given and {} defines no main/0",
            args.program.display()
        ),
    };
    let opts = MachineOptions {
        max_steps: args.max_steps,
        check_preservation: args.check_regs,
    };
    let mut machine = Machine::new(&prog, opts);
    machine.set_query_text(&query)?;
    let mut answers = 0usize;
    let mut status = Ok(());
    loop {
        match machine.next_answer() {
            Ok(Outcome::Success(answer)) => {
                if answers > 0 {
                    println!(";");
                }
                println!("{answer}");
                answers += 1;
                if !args.all {
                    break;
                }
            }
            Ok(Outcome::Failure) => break,
            Ok(Outcome::BudgetExhausted) => {
                status = Err(anyhow::anyhow!("step budget exhausted"));
                break;
            }
            Err(e) => {
                status = Err(e.into());
                break;
            }
        }
    }
    for f in machine.faults() {
        eprintln!("mlp: warning: {f}");
    }
    for pred in &machine.stats().preservation_violations {
        eprintln!(
            "mlp: warning: extern {pred} changed argument registers but is not declared regcl"
        );
    }
    status?;
    if answers == 0 {
        println!("no");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn header_text(image: &BytecodeImage, size: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "magic      {}", String::from_utf8_lossy(&MAGIC));
    let _ = writeln!(out, "version    {}", image.version);
    let _ = writeln!(out, "consts     {}", image.consts.len());
    let _ = writeln!(out, "templates  {}", image.templates.len());
    let _ = writeln!(out, "externs    {}", image.externs.len());
    let _ = writeln!(out, "preds      {}", image.preds.len());
    let _ = writeln!(out, "code       {}", image.code.len());
    let _ = writeln!(out, "size       {size} bytes");
    out
}

fn externs_text(image: &BytecodeImage) -> String {
    let rows: Vec<[String; 5]> = image
        .externs
        .iter()
        .map(|e| {
            [
                e.pred_name.clone(),
                e.arity.to_string(),
                e.lib_name.clone(),
                e.entry_symbol.clone(),
                if e.regcl { "yes" } else { "no" }.to_string(),
            ]
        })
        .collect();
    let head = ["pred", "arity", "lib", "symbol", "regcl"].map(String::from);
    let mut widths = head.clone().map(|h| h.len());
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for r in std::iter::once(&head).chain(&rows) {
        let cells: Vec<String> = r
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

fn inspect(args: InspectArgs) -> Result<()> {
    let bytes =
        fs::read(&args.file).with_context(|| format!("cannot read {}", args.file.display()))?;
    let image =
        BytecodeImage::deserialize(&bytes).with_context(|| format!("{}", args.file.display()))?;
    let all = !(args.header || args.externs || args.code);
    let mut sections = Vec::new();
    if all || args.header {
        sections.push(header_text(&image, bytes.len()));
    }
    if all || args.externs {
        sections.push(externs_text(&image));
    }
    if all || args.code {
        sections.push(disassemble(&image));
    }
    print!("{}", sections.join("\n"));
    Ok(())
}

fn gen_stubs(args: StubgenArgs) -> Result<()> {
    let spec = parse_spec(&read_text(&args.spec)?).map_err(|e| {
        report(&args.spec, e.pos, &e.message);
        anyhow::Error::from(Reported)
    })?;
    let wrappers =
        stubgen::generate_wrappers(&spec).with_context(|| args.spec.display().to_string())?;
    let note =
        stubgen::generate_build_note(&spec).with_context(|| args.spec.display().to_string())?;
    fs::create_dir_all(&args.output)
        .with_context(|| format!("cannot create {}", args.output.display()))?;
    let name = &spec.spec_name;
    write_file(
        &args.output.join(format!("{name}.sig")),
        stubgen::generate_signature(&spec),
    )?;
    write_file(&args.output.join(format!("{name}_wrappers.c")), wrappers)?;
    write_file(&args.output.join(format!("{name}_build.txt")), note)
}
