//! Control-flow graph recovery.
//!
//! [`split_blocks`] cuts the instruction stream at leaders. [`resolve_cfg`]
//! then runs a constants-only abstract interpretation from the entry block to
//! resolve jump targets, splitting a block into per-context clones whenever
//! two predecessors reach it with different stack heights or with different
//! values in stack slots that later flow into a jump target.

mod dot;
mod resolve;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub use dot::emit_dot;
pub use resolve::{resolve_cfg, resolve_cfg_with, ResolveOptions, DEFAULT_CLONE_CAP};

use crate::asm::Instruction;
use crate::opcode::Opcode;
use crate::U256;

/// EVM stack limit.
pub const MAX_STACK: usize = 1024;

/// Block identifier: the start PC, plus a clone index when the block was
/// specialized to more than one calling context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId {
    pub pc: usize,
    pub clone: Option<usize>,
}

impl BlockId {
    pub fn new(pc: usize) -> Self {
        BlockId { pc, clone: None }
    }

    pub fn cloned(pc: usize, clone: usize) -> Self {
        BlockId { pc, clone: Some(clone) }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.clone {
            None => write!(f, "{}", self.pc),
            Some(c) => write!(f, "{}_c{}", self.pc, c),
        }
    }
}

impl FromStr for BlockId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        fn num(s: &str) -> Result<usize, ()> {
            if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
                return Err(());
            }
            s.parse().map_err(|_| ())
        }
        match s.split_once("_c") {
            Some((pc, c)) => Ok(BlockId::cloned(num(pc)?, num(c)?)),
            None => Ok(BlockId::new(num(s)?)),
        }
    }
}

/// Element of the jump-resolution lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AbstractValue {
    Concrete(U256),
    Unknown,
}

impl AbstractValue {
    pub fn concrete(&self) -> Option<U256> {
        match self {
            AbstractValue::Concrete(v) => Some(*v),
            AbstractValue::Unknown => None,
        }
    }

    pub fn join(self, other: AbstractValue) -> AbstractValue {
        if self == other {
            self
        } else {
            AbstractValue::Unknown
        }
    }
}

impl From<u64> for AbstractValue {
    fn from(v: u64) -> Self {
        AbstractValue::Concrete(U256::from(v))
    }
}

/// How a block leaves, as known before jump resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Jump,
    JumpI,
    /// Continues into the block starting at this PC.
    FallThrough(usize),
    Halt,
}

/// A block as produced by [`split_blocks`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub start_pc: usize,
    pub byte_size: usize,
    pub instrs: Vec<Instruction>,
    pub exit: Exit,
}

impl BasicBlock {
    pub fn starts_with_jumpdest(&self) -> bool {
        self.instrs.first().map(|i| i.opcode) == Some(Opcode::JUMPDEST)
    }

    pub fn end_pc(&self) -> usize {
        self.start_pc + self.byte_size
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Terminator {
    Jump(BlockId),
    JumpI { taken: BlockId, fallthrough: BlockId },
    FallThrough(BlockId),
    Halt,
}

impl Terminator {
    pub fn successors(&self) -> Vec<BlockId> {
        match self {
            Terminator::Jump(t) | Terminator::FallThrough(t) => vec![*t],
            Terminator::JumpI { taken, fallthrough } => vec![*taken, *fallthrough],
            Terminator::Halt => vec![],
        }
    }
}

/// A resolved block. Clones share `start_pc` and instructions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub id: BlockId,
    pub start_pc: usize,
    pub byte_size: usize,
    pub instrs: Vec<Instruction>,
    pub terminator: Terminator,
    pub entry_height: usize,
    /// Abstract stack on entry, bottom first. Empty for dead blocks.
    pub entry_stack: Vec<AbstractValue>,
    /// Reached by the abstract interpretation. Dead blocks are kept but not translated.
    pub live: bool,
}

impl Block {
    pub fn last_opcode(&self) -> Opcode {
        self.instrs.last().expect("blocks are non-empty").opcode
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnresolvedReason {
    UnknownTarget,
    NotJumpdest(U256),
    /// A conditional jump is the last instruction, so its fall-through leaves the code.
    FallthroughOutOfCode,
    CloneCapExceeded {
        target_pc: usize,
    },
    StackUnderflow {
        target_pc: usize,
    },
    StackOverflow {
        target_pc: usize,
    },
}

impl fmt::Display for UnresolvedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnresolvedReason::UnknownTarget => f.write_str("unknown jump target"),
            UnresolvedReason::NotJumpdest(v) => write!(f, "jump to non-JUMPDEST {v:#x}"),
            UnresolvedReason::FallthroughOutOfCode => f.write_str("fall-through past end of code"),
            UnresolvedReason::CloneCapExceeded { target_pc } => {
                write!(f, "clone cap exceeded for block {target_pc}")
            }
            UnresolvedReason::StackUnderflow { target_pc } => {
                write!(f, "stack underflow entering block {target_pc}")
            }
            UnresolvedReason::StackOverflow { target_pc } => {
                write!(f, "stack overflow entering block {target_pc}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unresolved {
    pub block: BlockId,
    pub reason: UnresolvedReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    pub blocks: BTreeMap<BlockId, Block>,
    pub entry: BlockId,
    pub unresolved: Vec<Unresolved>,
}

impl Cfg {
    pub fn live_blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.values().filter(|b| b.live)
    }

    pub fn block(&self, id: BlockId) -> Option<&Block> {
        self.blocks.get(&id)
    }

    /// Ids of all live copies of the block starting at `pc`.
    pub fn clones_of(&self, pc: usize) -> Vec<BlockId> {
        self.blocks
            .range(BlockId::new(pc)..BlockId::new(pc + 1))
            .filter(|(_, b)| b.live)
            .map(|(id, _)| *id)
            .collect()
    }

    /// Human-readable block summary, one line per block.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for b in self.blocks.values() {
            let term = match &b.terminator {
                Terminator::Jump(t) => format!("jump {t}"),
                Terminator::JumpI { taken, fallthrough } => format!("jumpi {taken} else {fallthrough}"),
                Terminator::FallThrough(t) => format!("fall {t}"),
                Terminator::Halt => "halt".to_string(),
            };
            let status = if b.live { "" } else { " dead" };
            out.push_str(&format!(
                "{} pc={} size={} height={} {}{}\n",
                b.id, b.start_pc, b.byte_size, b.entry_height, term, status
            ));
        }
        for u in &self.unresolved {
            out.push_str(&format!("unresolved {}: {}\n", u.block, u.reason));
        }
        out
    }
}

/// Splits an instruction stream into basic blocks.
///
/// Leaders are offset 0, every JUMPDEST, and every instruction following a
/// jump or halting opcode. Running off the end of the code is an implicit
/// STOP, and empty code is treated as a single STOP.
pub fn split_blocks(instrs: &[Instruction]) -> Vec<BasicBlock> {
    if instrs.is_empty() {
        return vec![BasicBlock {
            start_pc: 0,
            byte_size: 1,
            instrs: vec![Instruction::new(0, Opcode::STOP)],
            exit: Exit::Halt,
        }];
    }
    let mut blocks = Vec::new();
    let mut current: Vec<Instruction> = Vec::new();
    for ins in instrs {
        if ins.opcode == Opcode::JUMPDEST && !current.is_empty() {
            blocks.push(std::mem::take(&mut current));
        }
        current.push(ins.clone());
        if ins.opcode.ends_block() {
            blocks.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        blocks.push(current);
    }

    let code_end = instrs.last().map(|i| i.next_offset()).unwrap_or(0);
    blocks
        .into_iter()
        .map(|instrs| {
            let start_pc = instrs[0].offset;
            let end = instrs.last().unwrap().next_offset();
            let last = instrs.last().unwrap().opcode;
            let exit = match last {
                Opcode::JUMP => Exit::Jump,
                Opcode::JUMPI => Exit::JumpI,
                op if op.is_halting() => Exit::Halt,
                _ if end >= code_end => Exit::Halt,
                _ => Exit::FallThrough(end),
            };
            BasicBlock {
                start_pc,
                byte_size: end - start_pc,
                instrs,
                exit,
            }
        })
        .collect()
}

/// Stack fault raised by [`abstract_step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackFault {
    Underflow,
    Overflow,
}

/// Applies one instruction to an abstract stack (top is last).
///
/// PUSH yields constants, DUP/SWAP rearrange, and a fixed set of arithmetic
/// and bitwise opcodes fold two constants with 256-bit wrap-around. Anything
/// else produces `Unknown`.
pub fn abstract_step(stack: &mut Vec<AbstractValue>, ins: &Instruction) -> Result<(), StackFault> {
    use AbstractValue::{Concrete, Unknown};
    let op = ins.opcode;
    let (delta, alpha) = (op.delta(), op.alpha());
    if stack.len() < delta {
        return Err(StackFault::Underflow);
    }
    if stack.len() - delta + alpha > MAX_STACK {
        return Err(StackFault::Overflow);
    }
    if let Some(v) = ins.push_value() {
        stack.push(Concrete(v));
        return Ok(());
    }
    if let Some(n) = op.dup_depth() {
        let v = stack[stack.len() - n];
        stack.push(v);
        return Ok(());
    }
    if let Some(n) = op.swap_depth() {
        let top = stack.len() - 1;
        stack.swap(top, top - n);
        return Ok(());
    }
    if op == Opcode::PC {
        stack.push(Concrete(U256::from(ins.offset)));
        return Ok(());
    }
    let args: Vec<AbstractValue> = (0..delta).map(|_| stack.pop().unwrap()).collect();
    let folded = match (op, args.as_slice()) {
        (Opcode::NOT, [Concrete(a)]) => Some(!*a),
        (Opcode::ISZERO, [Concrete(a)]) => Some(U256::from(a.is_zero() as u8)),
        (_, [Concrete(a), Concrete(b)]) => fold_binary(op, *a, *b),
        _ => None,
    };
    match folded {
        Some(v) => stack.push(Concrete(v)),
        None => stack.extend(std::iter::repeat_n(Unknown, alpha)),
    }
    Ok(())
}

fn fold_binary(op: Opcode, a: U256, b: U256) -> Option<U256> {
    let bool_word = |c: bool| U256::from(c as u8);
    Some(match op {
        Opcode::ADD => a.wrapping_add(b),
        Opcode::SUB => a.wrapping_sub(b),
        Opcode::MUL => a.wrapping_mul(b),
        Opcode::DIV => a.checked_div(b).unwrap_or(U256::ZERO),
        Opcode::MOD => a.checked_rem(b).unwrap_or(U256::ZERO),
        Opcode::EXP => a.wrapping_pow(b),
        Opcode::AND => a & b,
        Opcode::OR => a | b,
        Opcode::XOR => a ^ b,
        Opcode::LT => bool_word(a < b),
        Opcode::GT => bool_word(a > b),
        Opcode::EQ => bool_word(a == b),
        Opcode::SHL => shift(b, a, |v, s| v << s),
        Opcode::SHR => shift(b, a, |v, s| v >> s),
        _ => return None,
    })
}

fn shift(value: U256, amount: U256, f: impl Fn(U256, usize) -> U256) -> U256 {
    if amount >= U256::from(256) {
        U256::ZERO
    } else {
        f(value, amount.to::<usize>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{disassemble, parse_hex};

    fn blocks(hex: &str) -> Vec<BasicBlock> {
        split_blocks(&disassemble(&parse_hex(hex).unwrap()).unwrap())
    }

    fn starts(bs: &[BasicBlock]) -> Vec<usize> {
        bs.iter().map(|b| b.start_pc).collect()
    }

    #[test]
    fn split_jump_fixture() {
        let bs = blocks("6003565b00");
        assert_eq!(starts(&bs), vec![0, 3]);
        assert_eq!(bs[0].exit, Exit::Jump);
        assert_eq!(bs[0].instrs.len(), 2);
        assert_eq!(bs[1].exit, Exit::Halt);
        assert_eq!(bs[1].byte_size, 2);
    }

    #[test]
    fn split_jumpi_fixture() {
        let bs = blocks("6001600657005b00");
        assert_eq!(starts(&bs), vec![0, 5, 6]);
        assert_eq!(bs[0].exit, Exit::JumpI);
        assert_eq!(bs[0].instrs.len(), 3);
        assert_eq!(bs[1].instrs.len(), 1);
    }

    #[test]
    fn split_single_stop() {
        let bs = blocks("00");
        assert_eq!(bs.len(), 1);
        assert_eq!(bs[0].exit, Exit::Halt);
    }

    #[test]
    fn split_fallthrough_into_jumpdest() {
        let bs = blocks("60015b5000");
        assert_eq!(starts(&bs), vec![0, 2]);
        assert_eq!(bs[0].exit, Exit::FallThrough(2));
    }

    #[test]
    fn running_off_the_end_halts() {
        let bs = blocks("6001");
        assert_eq!(bs[0].exit, Exit::Halt);
    }

    #[test]
    fn empty_code_is_stop() {
        let bs = split_blocks(&[]);
        assert_eq!(bs.len(), 1);
        assert_eq!(bs[0].instrs[0].opcode, Opcode::STOP);
    }

    #[test]
    fn block_id_text() {
        assert_eq!(BlockId::new(52).to_string(), "52");
        assert_eq!(BlockId::cloned(52, 1).to_string(), "52_c1");
        assert_eq!("52_c1".parse::<BlockId>(), Ok(BlockId::cloned(52, 1)));
        assert_eq!("7".parse::<BlockId>(), Ok(BlockId::new(7)));
        assert!("07".parse::<BlockId>().is_err());
        assert!("x".parse::<BlockId>().is_err());
    }

    #[test]
    fn abstract_folding_wraps() {
        let ins = disassemble(&parse_hex("600160000360020100").unwrap()).unwrap();
        let mut st = vec![];
        for i in &ins[..5] {
            abstract_step(&mut st, i).unwrap();
        }
        // (0 - 1) + 2 wraps to 1
        assert_eq!(st, vec![AbstractValue::from(1)]);
    }

    #[test]
    fn abstract_unknowns() {
        let ins = disassemble(&parse_hex("3360010100").unwrap()).unwrap();
        let mut st = vec![];
        for i in &ins[..3] {
            abstract_step(&mut st, i).unwrap();
        }
        assert_eq!(st, vec![AbstractValue::Unknown]);
        assert_eq!(
            abstract_step(&mut vec![], &Instruction::new(0, Opcode::ADD)),
            Err(StackFault::Underflow)
        );
    }
}
