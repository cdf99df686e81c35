use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn mlp(args: &[&str]) -> Output {
    mlp_env(args, &[])
}

fn mlp_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mlp"));
    cmd.args(args).env_remove("MLP_LIB_PATH");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn compile(dir: &Path, name: &str, text: &str) -> PathBuf {
    let src = write(dir, &format!("{name}.mod"), text);
    let out = dir.join(format!("{name}.lpx"));
    let o = mlp(&["compile", s(&src), "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn compile_and_inspect_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trig.lpx");
    let sig_dir = fixture("");
    let o = mlp(&[
        "compile",
        s(&fixture("trig.mod")),
        "--sig-path",
        s(&sig_dir),
        "-o",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = mlp(&["inspect", s(&out), "--externs"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "{text}");
    assert!(text
        .lines()
        .next()
        .unwrap()
        .split_whitespace()
        .eq(["pred", "arity", "lib", "symbol", "regcl"]));
    assert!(
        rows[0]
            .split_whitespace()
            .eq(["sin", "2", "math", "sin_wrapper", "yes"]),
        "{text}"
    );
    assert!(
        rows[2]
            .split_whitespace()
            .eq(["tan", "2", "math", "tan_wrapper", "no"]),
        "{text}"
    );

    let o = mlp(&["inspect", s(&out), "--header"]);
    let text = stdout(&o);
    assert!(
        text.contains("magic      MLPX") && text.contains("version    1"),
        "{text}"
    );
    assert!(
        text.contains("externs    3") && text.contains("code       "),
        "{text}"
    );

    let o = mlp(&["inspect", s(&out), "--code"]);
    assert!(
        stdout(&o).contains("q/2:") && stdout(&o).contains("execute_extern 1"),
        "{}",
        stdout(&o)
    );

    let o = mlp(&["inspect", s(&out)]);
    assert!(
        stdout(&o).contains("magic")
            && stdout(&o).contains("sin_wrapper")
            && stdout(&o).contains("q/2:")
    );
}

#[test]
fn compile_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = mlp(&[
        "compile",
        s(&fixture("trig.mod")),
        "-o",
        s(&dir.path().join("x.lpx")),
    ]);
    // math.sig sits next to trig.mod, so move the module away from it
    assert_eq!(code(&o), 0);
    let moved = write(
        dir.path(),
        "trig.mod",
        &std::fs::read_to_string(fixture("trig.mod")).unwrap(),
    );
    let o = mlp(&["compile", s(&moved)]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(
        err.contains("trig.mod:2:") && err.contains("accum_extern 'math'"),
        "{err}"
    );

    let bad = write(dir.path(), "bad.mod", "module bad.\np X :- .\n");
    let o = mlp(&["compile", s(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).starts_with(&format!("{}:2:", s(&bad))),
        "{}",
        stderr(&o)
    );

    let undef = write(dir.path(), "undef.mod", "module u.\np X :- q X.\n");
    let o = mlp(&["compile", s(&undef)]);
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains(": error: ") && stderr(&o).contains("q/1"),
        "{}",
        stderr(&o)
    );

    let o = mlp(&["compile", s(&dir.path().join("missing.mod"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn compile_defaults_output_next_to_input() {
    let dir = tempfile::tempdir().unwrap();
    let src = write(dir.path(), "facts.mod", "module facts. p 1.");
    let o = mlp(&["compile", s(&src)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("facts.lpx").is_file());
}

#[test]
fn compile_finds_accumulated_modules() {
    let dir = tempfile::tempdir().unwrap();
    let o = mlp(&[
        "compile",
        s(&fixture("main.mod")),
        "-o",
        s(&dir.path().join("main.lpx")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = mlp(&[
        "compile",
        s(&fixture("lists.mod")),
        "-o",
        s(&dir.path().join("lists.lpx")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let prog = dir.path().join("prog.lpx");
    let o = mlp(&[
        "link",
        s(&dir.path().join("lists.lpx")),
        s(&dir.path().join("main.lpx")),
        "-o",
        s(&prog),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = mlp(&["run", s(&prog)]);
    assert_eq!((code(&o), stdout(&o).trim()), (0, "yes"));
}

#[test]
fn link_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let a = compile(dir.path(), "a", "module a. p 1.");
    let b = compile(dir.path(), "b", "module b. accumulate a. q X :- p X.");
    let out = dir.path().join("ab.lpx");
    let o = mlp(&["link", s(&a), s(&b), "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = mlp(&["run", s(&out), "-q", "q X"]);
    assert_eq!((code(&o), stdout(&o).trim()), (0, "X = 1"));

    let dup = compile(dir.path(), "dup", "module dup. p 2.");
    let o = mlp(&["link", s(&a), s(&dup), "-o", s(&dir.path().join("bad.lpx"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("p/1"), "{}", stderr(&o));

    let single = dir.path().join("single.lpx");
    let o = mlp(&["link", s(&a), "-o", s(&single)]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&single).unwrap(), std::fs::read(&a).unwrap());

    let junk = write(dir.path(), "junk.lpx", "junk");
    let o = mlp(&["link", s(&a), s(&junk), "-o", s(&dir.path().join("j.lpx"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn run_exit_codes_and_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h.lpx");
    let o = mlp(&["compile", s(&fixture("host_trig.mod")), "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = mlp(&["run", s(&out), "-q", "sin 0.0 X"]);
    assert_eq!((code(&o), stdout(&o).trim()), (0, "X = 0.0"));
    let o = mlp(&["run", s(&out), "-q", "q 0.0 Z"]);
    assert_eq!((code(&o), stdout(&o).trim()), (0, "Z = 1.0"));
    let o = mlp(&["run", s(&out), "-q", "twice 40 X, inc X Y"]);
    assert_eq!(stdout(&o).trim(), "X = 42\nY = 43");

    let facts = compile(dir.path(), "p", "module p. p 1. p 2. p 3.");
    let o = mlp(&["run", s(&facts), "-q", "p 99"]);
    assert_eq!((code(&o), stdout(&o).trim()), (2, "no"));
    let o = mlp(&["run", s(&facts), "-q", "p X"]);
    assert_eq!(stdout(&o).trim(), "X = 1");
    let o = mlp(&["run", s(&facts), "-q", "p X", "--all"]);
    assert_eq!(stdout(&o), "X = 1\n;\nX = 2\n;\nX = 3\n");
    let o = mlp(&["run", s(&facts), "-q", "p 1"]);
    assert_eq!((code(&o), stdout(&o).trim()), (0, "yes"));

    let o = mlp(&["run", s(&facts), "-q", "p ("]);
    assert_eq!(code(&o), 1);
    let o = mlp(&["run", s(&facts)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("main/0"), "{}", stderr(&o));

    let looping = compile(dir.path(), "l", "module l. loop :- loop.");
    let o = mlp(&["run", s(&looping), "-q", "loop", "--max-steps", "1000"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("budget"), "{}", stderr(&o));

    let main = compile(
        dir.path(),
        "m",
        "module m. main :- is X (*(6, 7)), =:= X 42.",
    );
    let o = mlp(&["run", s(&main)]);
    assert_eq!((code(&o), stdout(&o).trim()), (0, "yes"));
}

#[test]
fn run_reports_unresolvable_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trig.lpx");
    let sig_dir = fixture("");
    let o = mlp(&[
        "compile",
        s(&fixture("trig.mod")),
        "--sig-path",
        s(&sig_dir),
        "-o",
        s(&out),
    ]);
    assert_eq!(code(&o), 0);
    let o = mlp(&[
        "run",
        s(&out),
        "-q",
        "sin 0.0 X",
        "--lib-path",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("'math'") && err.contains("sin/2"), "{err}");
    assert!(err.contains(s(dir.path())), "{err}");

    let o = mlp_env(
        &["run", s(&out), "-q", "sin 0.0 X"],
        &[("MLP_LIB_PATH", "/opt/none:/opt/other")],
    );
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    let (none, other) = (
        err.find("/opt/none").unwrap(),
        err.find("/opt/other").unwrap(),
    );
    assert!(none < other, "{err}");
}

#[test]
fn inspect_rejects_corrupt_files() {
    let dir = tempfile::tempdir().unwrap();
    let good = compile(dir.path(), "g", "module g. p 1.");
    let mut bytes = std::fs::read(&good).unwrap();
    bytes.truncate(bytes.len() - 3);
    let bad = dir.path().join("bad.lpx");
    std::fs::write(&bad, bytes).unwrap();
    let o = mlp(&["inspect", s(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("truncated"), "{}", stderr(&o));
    let o = mlp(&["inspect", s(&dir.path().join("none.lpx"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn stubgen_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gen");
    let o = mlp(&["stubgen", s(&fixture("pairs.spec")), "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sig = std::fs::read_to_string(out.join("pairs.sig")).unwrap();
    assert!(sig.contains("extern type swap swap_wrapper"), "{sig}");
    let c = std::fs::read_to_string(out.join("pairs_wrappers.c")).unwrap();
    assert!(c.contains("MLP_EXPORT void swap_wrapper(void)"), "{c}");
    let note = std::fs::read_to_string(out.join("pairs_build.txt")).unwrap();
    assert!(
        note.contains("mk_wrapper") && note.contains("mlp_init"),
        "{note}"
    );

    let bad = write(dir.path(), "bad.spec", "spec b. lib b. pred f f pair -> o.");
    let o = mlp(&["stubgen", s(&bad), "-o", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("pair"), "{}", stderr(&o));
}

#[test]
fn native_plugin_via_environment_path() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !Command::new(&cc)
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success())
        || !cfg!(target_os = "linux")
    {
        eprintln!("skipping: needs a C compiler on Linux");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let o = mlp(&["stubgen", s(&fixture("pairs.spec")), "-o", s(dir.path())]);
    assert_eq!(code(&o), 0);
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../include");
    let status = Command::new(&cc)
        .args(["-shared", "-fPIC", "-I", s(&include)])
        .arg(dir.path().join("pairs_wrappers.c"))
        .arg(fixture("pairs_impl.c"))
        .arg("-o")
        .arg(dir.path().join("libpairs.so"))
        .status()
        .unwrap();
    assert!(status.success());
    let src = write(
        dir.path(),
        "u.mod",
        "module u. accum_extern pairs. t Q :- mk 1 2 P, swap P Q.",
    );
    let o = mlp(&["compile", s(&src)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lpx = dir.path().join("u.lpx");

    let o = mlp(&["run", s(&lpx), "-q", "t Q"]);
    assert_eq!(code(&o), 1, "library must not be found without a path");
    let o = Command::new(env!("CARGO_BIN_EXE_mlp"))
        .args(["run", "u.lpx", "-q", "t Q"])
        .current_dir(dir.path())
        .env_remove("MLP_LIB_PATH")
        .output()
        .unwrap();
    assert_eq!(
        (code(&o), stdout(&o).trim()),
        (0, "Q = pr(2, 1)"),
        "working directory is searched last"
    );
    let o = mlp_env(
        &["run", s(&lpx), "-q", "t Q"],
        &[("MLP_LIB_PATH", s(dir.path()))],
    );
    assert_eq!(
        (code(&o), stdout(&o).trim()),
        (0, "Q = pr(2, 1)"),
        "{}",
        stderr(&o)
    );
    let o = mlp(&["run", s(&lpx), "-q", "t Q", "--lib-path", s(dir.path())]);
    assert_eq!((code(&o), stdout(&o).trim()), (0, "Q = pr(2, 1)"));
}
