use std::io::Write;
use std::process::{Command, Output, Stdio};

use evm2rbr::asm::to_hex;
use evm2rbr::emit::parse_rbr;
use evm2rbr::oracle::fixtures::{corpus, sequential_loops, two_callers};

fn run(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_evm2rbr"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn rbr_prints_one_rule() {
    let o = run(&["rbr", "-"], "600560040160005500\n");
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.matches(" =>").count(), 1);
    assert!(text.contains("block_0(g0) => s0 = 5, s1 = 4, s0 = s1 + s0, s1 = 0, g0 = s0\n"));
    assert!(stderr(&o).is_empty());
}

#[test]
fn odd_hex_is_an_input_error() {
    let o = run(&["disasm", "-"], "0x0");
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).is_empty());
    assert!(stderr(&o).contains("odd number of hex digits"));
}

#[test]
fn missing_file_is_an_input_error() {
    let o = run(&["rbr", "/nonexistent/code.hex"], "");
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).is_empty());
}

#[test]
fn pipeline_errors_exit_2() {
    let o = run(&["rbr", "-"], "61ff");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("truncated PUSH"));
    let o = run(&["saco", "-"], "01");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stack underflow"));
    assert!(stdout(&o).is_empty());
}

#[test]
fn disasm_listing() {
    let o = run(&["disasm", "-"], "6003565b00");
    assert_eq!(stdout(&o), "0: PUSH1 0x3\n2: JUMP\n3: JUMPDEST\n4: STOP\n");
}

#[test]
fn cfg_summary_and_dot() {
    let (code, f_pc) = two_callers();
    let hex = to_hex(&code);
    let summary = stdout(&run(&["cfg", "-"], &hex));
    assert!(summary.contains(&format!("{f_pc}_c0 pc={f_pc}")), "{summary}");
    assert!(summary.contains(&format!("{f_pc}_c1 pc={f_pc}")));
    assert!(!summary.contains("unresolved"));
    let dot = stdout(&run(&["cfg", "-", "--dot"], &hex));
    assert!(dot.starts_with("digraph cfg {"));
    // With one clone allowed, the second context cannot be separated.
    let capped = run(&["cfg", "-", "--clone-cap", "1"], &hex);
    assert_eq!(capped.status.code(), Some(0));
    assert!(!stdout(&capped).contains(&format!("{f_pc}_c1")));
}

#[test]
fn rbr_and_saco_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let (_, code) = corpus().into_iter().find(|(n, _)| n == "bit_ops").unwrap();
    let input = dir.path().join("bit_ops.hex");
    std::fs::write(&input, to_hex(&code)).unwrap();
    let rbr = dir.path().join("out.rbr");
    let saco = dir.path().join("out.saco.rbr");
    let o = run(
        &["rbr", input.to_str().unwrap(), "--nops", "-o", rbr.to_str().unwrap()],
        "",
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).is_empty());
    let text = std::fs::read_to_string(&rbr).unwrap();
    assert!(text.contains("nop(CALLDATALOAD)"));
    assert!(text.contains("and("));
    parse_rbr(&text).unwrap();
    let o = run(&["saco", input.to_str().unwrap(), "-o", saco.to_str().unwrap()], "");
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&saco).unwrap();
    assert!(text.starts_with("-- saco\n"));
    assert!(!text.contains("and(") && !text.contains("nop("));
    parse_rbr(&text).unwrap();
}

#[test]
fn loops_report() {
    let o = run(&["loops", "-"], &to_hex(&sequential_loops(2)));
    let text = stdout(&o);
    assert!(text.starts_with("loops: 2\nloop 1: "), "{text}");
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn check_on_the_corpus() {
    for (name, code) in corpus().into_iter().take(12) {
        let o = run(&["check", "-", "--runs", "100", "--seed", "7"], &to_hex(&code));
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stdout(&o));
        assert!(stdout(&o).ends_with("divergences: 0/100\n"));
    }
}

#[test]
fn output_is_deterministic() {
    let hex = to_hex(&corpus().pop().unwrap().1);
    for args in [
        &["rbr", "-"][..],
        &["saco", "-"],
        &["cfg", "-", "--dot"],
        &["check", "-", "--seed", "3"],
    ] {
        assert_eq!(run(args, &hex).stdout, run(args, &hex).stdout, "{args:?}");
    }
}

#[test]
fn bad_usage_is_an_input_error() {
    let o = run(&["frobnicate"], "");
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).is_empty());
    assert_eq!(run(&["cfg", "-", "--clone-cap", "x"], "00").status.code(), Some(1));
    let help = run(&["--help"], "");
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("check"));
}

#[test]
fn check_exits_3_on_divergence() {
    // SHL is abstracted to a fresh value, so the stored result cannot match.
    let o = run(&["check", "-", "--runs", "4"], "600160021b60005500");
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.starts_with("case 0: g0 evm=4 rbr="), "{text}");
    assert!(text.ends_with("divergences: 4/4\n"));
}
