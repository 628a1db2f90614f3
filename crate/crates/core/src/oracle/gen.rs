//! Random structured EVM programs for differential testing.
//!
//! Programs are built from straight-line stores, if/else with every guard
//! shape the translator knows (and both fallback shapes), counted loops and
//! internal functions called through pushed return addresses. Everything
//! they compare stays away from `fresh` values: no comparisons used as data,
//! no shifts, no hashing, no byte-granular memory writes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::diff::{case_inputs, translate};
use super::evm::{run_evm, DEFAULT_STEP_LIMIT};
use crate::asm::{Assembler, Label};
use crate::opcode::Opcode;

#[derive(Debug, Clone)]
pub struct GenConfig {
    /// Statements in the main body.
    pub statements: usize,
    /// Nesting depth of if/else and loops.
    pub max_depth: usize,
    /// Expression tree depth.
    pub expr_depth: usize,
    pub max_functions: usize,
    /// Call sites per function, at least two when the function exists.
    pub max_calls: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            statements: 6,
            max_depth: 2,
            expr_depth: 2,
            max_functions: 2,
            max_calls: 4,
        }
    }
}

const STORAGE_KEYS: u64 = 4;
const MEMORY_SLOTS: u64 = 3;
const MEMORY_BASE: u64 = 0x80;
const CALLDATA_WORDS: u64 = 4;

const LEAF_ENV: [Opcode; 8] = [
    Opcode::CALLER,
    Opcode::CALLVALUE,
    Opcode::NUMBER,
    Opcode::TIMESTAMP,
    Opcode(0x32), // ORIGIN
    Opcode::GASPRICE,
    Opcode::ADDRESS,
    Opcode::CALLDATASIZE,
];

const BINARY: [Opcode; 7] = [
    Opcode::ADD,
    Opcode::MUL,
    Opcode::DIV,
    Opcode::MOD,
    Opcode::AND,
    Opcode::OR,
    Opcode::XOR,
];

const COMPARE: [Opcode; 5] = [Opcode::GT, Opcode::LT, Opcode::EQ, Opcode::SGT, Opcode::SLT];

#[derive(Debug, Clone, Copy)]
enum FnBody {
    AddConst(u64),
    Square,
    StoreThenAdd(u64, u64),
}

#[derive(Debug, Clone, Copy)]
struct Function {
    label: Label,
    body: FnBody,
    calls: usize,
}

pub struct ProgramGenerator {
    rng: ChaCha8Rng,
    pub config: GenConfig,
}

struct Build {
    a: Assembler,
    functions: Vec<Function>,
}

impl ProgramGenerator {
    pub fn new(seed: u64) -> Self {
        Self::with_config(seed, GenConfig::default())
    }

    pub fn with_config(seed: u64, config: GenConfig) -> Self {
        ProgramGenerator {
            rng: ChaCha8Rng::seed_from_u64(seed),
            config,
        }
    }

    /// One program. It may leave the overflow-free regime on some inputs;
    /// see [`ProgramGenerator::generate_in_regime`].
    pub fn generate(&mut self) -> Vec<u8> {
        let n = self.rng.gen_range(1..=self.config.statements);
        self.build(|_, i| i < n)
    }

    /// A program of at least `min_len` bytes; it must stay below 64 KiB.
    pub fn generate_min_len(&mut self, min_len: usize) -> Vec<u8> {
        self.build(|a, _| a.len() < min_len)
    }

    fn build(&mut self, more: impl Fn(&Assembler, usize) -> bool) -> Vec<u8> {
        let mut b = Build {
            a: Assembler::new(),
            functions: Vec::new(),
        };
        let n_fns = self.rng.gen_range(0..=self.config.max_functions);
        for _ in 0..n_fns {
            let label = b.a.label();
            let body = match self.rng.gen_range(0..3) {
                0 => FnBody::AddConst(self.rng.gen_range(1..100)),
                1 => FnBody::Square,
                _ => FnBody::StoreThenAdd(self.rng.gen_range(0..STORAGE_KEYS), self.rng.gen_range(1..100)),
            };
            b.functions.push(Function { label, body, calls: 0 });
        }
        let mut i = 0;
        while more(&b.a, i) {
            self.statement(&mut b, 0);
            i += 1;
        }
        for f in 0..b.functions.len() {
            while b.functions[f].calls < 2 {
                self.call(&mut b, f);
            }
        }
        match self.rng.gen_range(0..4) {
            0 => {
                b.a.push(32).push(MEMORY_BASE).op(Opcode::RETURN);
            }
            1 => {
                b.a.push(0).push(0).op(Opcode::REVERT);
            }
            _ => {
                b.a.op(Opcode::STOP);
            }
        }
        for f in &b.functions {
            // Entered with [ret, x]; leaves [result] and jumps to ret.
            b.a.place(f.label);
            match f.body {
                FnBody::AddConst(c) => {
                    b.a.push(c).op(Opcode::ADD);
                }
                FnBody::Square => {
                    b.a.op(Opcode::DUP1).op(Opcode::MUL);
                }
                FnBody::StoreThenAdd(k, c) => {
                    b.a.op(Opcode::DUP1).push(k).op(Opcode::SSTORE).push(c).op(Opcode::ADD);
                }
            }
            b.a.op(Opcode::SWAP1).op(Opcode::JUMP);
        }
        b.a.finish()
    }

    /// Rejection-samples [`generate`](Self::generate) until the program stays
    /// in the overflow-free regime, without oracle errors, on every input
    /// `differential_check(code, n_cases, case_seed)` will use.
    pub fn generate_in_regime(&mut self, n_cases: usize, case_seed: u64) -> Vec<u8> {
        loop {
            let code = self.generate();
            if in_regime(&code, n_cases, case_seed) {
                return code;
            }
        }
    }

    fn leaf(&mut self, a: &mut Assembler) {
        match self.rng.gen_range(0..7) {
            0 | 1 => {
                let v = if self.rng.gen_bool(0.8) {
                    self.rng.gen_range(0..20)
                } else {
                    self.rng.gen_range(0..1000)
                };
                a.push(v);
            }
            2 => {
                a.push(4 + 32 * self.rng.gen_range(0..CALLDATA_WORDS))
                    .op(Opcode::CALLDATALOAD);
            }
            3 => {
                a.op(*LEAF_ENV.choose(&mut self.rng).expect("non-empty"));
            }
            4 => {
                a.push(self.rng.gen_range(0..STORAGE_KEYS)).op(Opcode::SLOAD);
            }
            5 => {
                a.push(MEMORY_BASE + 32 * self.rng.gen_range(0..MEMORY_SLOTS))
                    .op(Opcode::MLOAD);
            }
            _ => {
                a.op(Opcode::PC);
            }
        }
    }

    /// Pushes one value.
    fn expr(&mut self, a: &mut Assembler, depth: usize) {
        if depth == 0 || self.rng.gen_bool(0.35) {
            return self.leaf(a);
        }
        match self.rng.gen_range(0..10) {
            0..=5 => {
                self.expr(a, depth - 1);
                self.expr(a, depth - 1);
                a.op(*BINARY.choose(&mut self.rng).expect("non-empty"));
            }
            6 | 7 => {
                // x - x % (y + 1), never negative
                self.expr(a, depth - 1);
                a.push(1).op(Opcode::ADD);
                self.expr(a, depth - 1);
                a.ops(&[
                    Opcode::DUP1,
                    Opcode::SWAP2,
                    Opcode::SWAP1,
                    Opcode::MOD,
                    Opcode::SWAP1,
                    Opcode::SUB,
                ]);
            }
            8 => {
                a.push(self.rng.gen_range(0..4));
                self.expr(a, depth - 1);
                a.op(Opcode::EXP);
            }
            _ => {
                a.push(0xffff);
                self.expr(a, depth - 1);
                a.op(Opcode::NOT).op(Opcode::AND);
            }
        }
    }

    fn statement(&mut self, b: &mut Build, depth: usize) {
        let nested = depth < self.config.max_depth;
        let has_fns = !b.functions.is_empty();
        match self.rng.gen_range(0..10) {
            0..=2 => {
                self.expr(&mut b.a, self.config.expr_depth);
                b.a.push(self.rng.gen_range(0..STORAGE_KEYS)).op(Opcode::SSTORE);
            }
            3 | 4 => {
                self.expr(&mut b.a, self.config.expr_depth);
                b.a.push(MEMORY_BASE + 32 * self.rng.gen_range(0..MEMORY_SLOTS))
                    .op(Opcode::MSTORE);
            }
            5 | 6 if nested => self.if_else(b, depth),
            7 if nested => self.counted_loop(b, depth),
            8 | 9 if has_fns => {
                let f = self.rng.gen_range(0..b.functions.len());
                if b.functions[f].calls < self.config.max_calls {
                    self.call(b, f);
                }
            }
            _ => {
                self.expr(&mut b.a, self.config.expr_depth);
                b.a.push(self.rng.gen_range(0..STORAGE_KEYS)).op(Opcode::SSTORE);
            }
        }
    }

    fn block(&mut self, b: &mut Build, depth: usize) {
        for _ in 0..self.rng.gen_range(0..=2) {
            self.statement(b, depth);
        }
    }

    /// Pushes the condition and jumps to `target` when it holds.
    fn condition(&mut self, a: &mut Assembler, target: Label) {
        let d = self.config.expr_depth.min(1);
        match self.rng.gen_range(0..6) {
            0..=2 => {
                self.expr(a, d);
                self.expr(a, d);
                a.op(*COMPARE.choose(&mut self.rng).expect("non-empty"));
                for _ in 0..self.rng.gen_range(0..=2) {
                    a.op(Opcode::ISZERO);
                }
                a.jumpi_to(target);
            }
            3 => {
                self.expr(a, d);
                for _ in 0..self.rng.gen_range(1..=3) {
                    a.op(Opcode::ISZERO);
                }
                a.jumpi_to(target);
            }
            4 => {
                self.expr(a, d);
                a.jumpi_to(target);
            }
            _ => {
                a.push_label(target);
                self.expr(a, d);
                a.op(Opcode::SWAP1).op(Opcode::JUMPI);
            }
        }
    }

    fn if_else(&mut self, b: &mut Build, depth: usize) {
        let (then, end) = (b.a.label(), b.a.label());
        self.condition(&mut b.a, then);
        self.block(b, depth + 1);
        b.a.jump_to(end);
        b.a.place(then);
        self.block(b, depth + 1);
        b.a.place(end);
    }

    fn counted_loop(&mut self, b: &mut Build, depth: usize) {
        let (head, exit) = (b.a.label(), b.a.label());
        b.a.push(0).place(head);
        // bound, then the counter on top: i < bound
        if self.rng.gen_bool(0.5) {
            b.a.push(self.rng.gen_range(0..5));
        } else {
            b.a.push(5).push(4 + 32 * self.rng.gen_range(0..CALLDATA_WORDS));
            b.a.op(Opcode::CALLDATALOAD).op(Opcode::MOD);
        }
        b.a.op(Opcode::DUP2).op(Opcode::LT).op(Opcode::ISZERO).jumpi_to(exit);
        if self.rng.gen_bool(0.6) {
            b.a.op(Opcode::DUP1)
                .push(self.rng.gen_range(0..STORAGE_KEYS))
                .op(Opcode::SSTORE);
        }
        self.block(b, depth + 1);
        b.a.push(1).op(Opcode::ADD).jump_to(head);
        b.a.place(exit).op(Opcode::POP);
    }

    fn call(&mut self, b: &mut Build, f: usize) {
        let ret = b.a.label();
        b.a.push_label(ret);
        self.expr(&mut b.a, 1);
        let target = b.functions[f].label;
        b.a.jump_to(target);
        b.a.place(ret);
        b.a.push(self.rng.gen_range(0..STORAGE_KEYS)).op(Opcode::SSTORE);
        b.functions[f].calls += 1;
    }
}

/// Translation succeeds and the EVM stays in the overflow-free regime,
/// without errors, on every input of `differential_check(code, n_cases, seed)`.
pub fn in_regime(code: &[u8], n_cases: usize, seed: u64) -> bool {
    let Ok(program) = translate(code) else { return false };
    case_inputs(&program.layout, n_cases, seed)
        .iter()
        .all(|input| run_evm(code, input, DEFAULT_STEP_LIMIT).is_ok_and(|r| r.in_regime))
}
