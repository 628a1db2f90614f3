//! Hand-assembled bytecode fixtures and the test corpus.

use super::gen::ProgramGenerator;
use crate::asm::{parse_hex, Assembler};
use crate::opcode::Opcode;

/// PUSH1 5, PUSH1 4, ADD, PUSH1 0, SSTORE, STOP.
pub const ADD_SSTORE: &str = "600560040160005500";

/// A function `f(x) = x + 1` called from two sites with different return
/// addresses. Returns the code and the PC of `f`.
pub fn two_callers() -> (Vec<u8>, usize) {
    let mut a = Assembler::new();
    let (f, r1, r2) = (a.label(), a.label(), a.label());
    a.push_label(r1).push(7).jump_to(f);
    a.place(r1).push(0).op(Opcode::SSTORE);
    a.push_label(r2).push(9).jump_to(f);
    a.place(r2).push(1).op(Opcode::SSTORE).op(Opcode::STOP);
    let f_pc = a.len();
    a.place(f).push(1).op(Opcode::ADD).op(Opcode::SWAP1).op(Opcode::JUMP);
    (a.finish(), f_pc)
}

/// `n` sequential counted loops; loop `j` runs `j % 4 + 1` times and stores
/// its counter in field `j`.
pub fn sequential_loops(n: usize) -> Vec<u8> {
    let mut a = Assembler::new();
    for j in 0..n as u64 {
        let (head, exit) = (a.label(), a.label());
        a.push(0).place(head);
        a.push(j % 4 + 1)
            .op(Opcode::DUP2)
            .op(Opcode::LT)
            .op(Opcode::ISZERO)
            .jumpi_to(exit);
        a.op(Opcode::DUP1).push(j).op(Opcode::SSTORE);
        a.push(1).op(Opcode::ADD).jump_to(head);
        a.place(exit).op(Opcode::POP);
    }
    a.push(1).push(0x80).op(Opcode::MSTORE).op(Opcode::STOP);
    a.finish()
}

/// Bit operations on calldata and environment values, stored to fields and memory.
pub fn bit_ops() -> Vec<u8> {
    let mut a = Assembler::new();
    a.push(4)
        .op(Opcode::CALLDATALOAD)
        .op(Opcode::CALLER)
        .op(Opcode::AND)
        .push(0)
        .op(Opcode::SSTORE);
    a.push(36)
        .op(Opcode::CALLDATALOAD)
        .op(Opcode::NOT)
        .push(0xff)
        .op(Opcode::XOR)
        .push(0x80)
        .op(Opcode::MSTORE);
    a.push(0x80)
        .op(Opcode::MLOAD)
        .op(Opcode::CALLVALUE)
        .op(Opcode::OR)
        .push(1)
        .op(Opcode::SSTORE);
    a.op(Opcode::STOP);
    a.finish()
}

/// A generated program of at least `min_len` bytes (and below 64 KiB).
pub fn large_program(min_len: usize, seed: u64) -> Vec<u8> {
    ProgramGenerator::new(seed).generate_min_len(min_len)
}

/// Named bytecode the acceptance suite runs over: the fixtures above plus
/// generated programs.
pub fn corpus() -> Vec<(String, Vec<u8>)> {
    let mut out = vec![
        ("add_sstore".to_string(), parse_hex(ADD_SSTORE).expect("valid hex")),
        ("jump".to_string(), parse_hex("6003565b00").expect("valid hex")),
        ("two_callers".to_string(), two_callers().0),
        ("bit_ops".to_string(), bit_ops()),
    ];
    for n in [0, 1, 2, 6] {
        out.push((format!("loops_{n}"), sequential_loops(n)));
    }
    let mut g = ProgramGenerator::new(0xc0ffee);
    for i in 0..40 {
        out.push((format!("generated_{i}"), g.generate()));
    }
    out
}
