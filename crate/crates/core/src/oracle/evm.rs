//! A concrete interpreter for the deterministic EVM subset.
//!
//! No gas metering. `GAS` and the other environment opcodes read fixed
//! values from [`EvmInput::env`]. Memory is byte addressed and capped at
//! [`MEMORY_LIMIT`] bytes; touching memory past the cap is an exceptional
//! halt, as running out of gas would be.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::asm::{disassemble, AsmError, Instruction};
use crate::cfg::MAX_STACK;
use crate::opcode::Opcode;
use crate::rbr::BlockchainVar;
use crate::U256;

pub const MEMORY_LIMIT: usize = 1 << 20;
pub const DEFAULT_STEP_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvmError {
    #[error("step limit of {0} exceeded")]
    StepLimitExceeded(usize),
    #[error("unsupported opcode {0}")]
    UnsupportedOpcode(&'static str),
    #[error(transparent)]
    Decode(#[from] AsmError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvmInput {
    pub calldata: Vec<u8>,
    pub env: BTreeMap<BlockchainVar, U256>,
    pub storage: BTreeMap<U256, U256>,
}

/// How execution ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvmStatus {
    Stopped,
    Returned,
    Reverted,
    /// INVALID, an unassigned opcode, a bad jump, a stack fault or the memory cap.
    Exceptional,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MachineState {
    pub stack: Vec<U256>,
    pub memory: Vec<u8>,
    /// Storage writes are kept on every status; nothing is rolled back.
    pub storage: BTreeMap<U256, U256>,
    pub calldata: Vec<u8>,
    pub env: BTreeMap<BlockchainVar, U256>,
    pub halted: bool,
    pub pc: usize,
}

impl MachineState {
    /// The 32-byte word at `addr`; unwritten bytes read as zero.
    pub fn memory_word(&self, addr: U256) -> U256 {
        let mut word = [0u8; 32];
        if let Ok(a) = usize::try_from(addr) {
            for (i, b) in word.iter_mut().enumerate() {
                *b = a.checked_add(i).and_then(|j| self.memory.get(j)).copied().unwrap_or(0);
            }
        }
        U256::from_be_bytes(word)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvmRun {
    pub state: MachineState,
    pub status: EvmStatus,
    /// Start PC of every basic block entered, in order.
    pub trace: Vec<usize>,
    pub steps: usize,
    /// Every ADD, SUB, MUL and EXP was exact and below 2^64, and every signed
    /// comparison saw operands below 2^64.
    pub in_regime: bool,
}

fn small(v: U256) -> bool {
    v.bit_len() <= 64
}

fn is_neg(v: U256) -> bool {
    v.bit(255)
}

fn abs(v: U256) -> U256 {
    if is_neg(v) {
        v.wrapping_neg()
    } else {
        v
    }
}

fn slt(a: U256, b: U256) -> bool {
    match (is_neg(a), is_neg(b)) {
        (true, false) => true,
        (false, true) => false,
        _ => a < b,
    }
}

fn shift_amount(s: U256) -> Option<usize> {
    (s < U256::from(256)).then(|| s.to::<usize>())
}

fn bool_word(b: bool) -> U256 {
    U256::from(b as u8)
}

struct Vm<'a> {
    code: &'a [u8],
    instrs: Vec<Instruction>,
    /// Instruction index at each byte offset that starts an instruction.
    at: Vec<Option<usize>>,
    st: MachineState,
    in_regime: bool,
}

enum Flow {
    Next,
    Jump(usize),
    Halt(EvmStatus),
}

impl Vm<'_> {
    fn pop(&mut self) -> Option<U256> {
        self.st.stack.pop()
    }

    fn push(&mut self, v: U256) -> Option<()> {
        (self.st.stack.len() < MAX_STACK).then(|| self.st.stack.push(v))
    }

    fn touch(&mut self, offset: U256, len: U256) -> Option<usize> {
        if len.is_zero() {
            return Some(0);
        }
        let end = offset.checked_add(len)?;
        let end = usize::try_from(end).ok().filter(|e| *e <= MEMORY_LIMIT)?;
        if end > self.st.memory.len() {
            self.st.memory.resize(end.div_ceil(32) * 32, 0);
        }
        Some(offset.to::<usize>())
    }

    fn copy_to_memory(&mut self, src: &[u8], dest: U256, from: U256, len: U256) -> Option<()> {
        let d = self.touch(dest, len)?;
        let n = len.to::<usize>();
        for i in 0..n {
            let byte = usize::try_from(from)
                .ok()
                .and_then(|f| f.checked_add(i))
                .and_then(|j| src.get(j))
                .copied()
                .unwrap_or(0);
            self.st.memory[d + i] = byte;
        }
        Some(())
    }

    fn arith(&mut self, value: U256, wrapped: bool) -> U256 {
        if wrapped || !small(value) {
            self.in_regime = false;
        }
        value
    }

    fn env(&self, b: BlockchainVar) -> U256 {
        self.st.env.get(&b).copied().unwrap_or(U256::ZERO)
    }

    /// Executes one instruction; `None` is an exceptional halt.
    fn step(&mut self, ins: &Instruction) -> Result<Option<Flow>, EvmError> {
        let op = ins.opcode;
        if self.st.stack.len() < op.delta() {
            return Ok(None);
        }
        macro_rules! pop {
            () => {
                self.pop().expect("depth checked")
            };
        }
        macro_rules! push {
            ($v:expr) => {{
                let v = $v;
                if self.push(v).is_none() {
                    return Ok(None);
                }
            }};
        }
        if let Some(v) = ins.push_value() {
            push!(v);
            return Ok(Some(Flow::Next));
        }
        if let Some(n) = op.dup_depth() {
            let v = self.st.stack[self.st.stack.len() - n];
            push!(v);
            return Ok(Some(Flow::Next));
        }
        if let Some(n) = op.swap_depth() {
            let len = self.st.stack.len();
            self.st.stack.swap(len - 1, len - 1 - n);
            return Ok(Some(Flow::Next));
        }
        if let Some(b) = BlockchainVar::of_opcode(op) {
            let v = if b == BlockchainVar::Calldatasize {
                U256::from(self.st.calldata.len())
            } else {
                self.env(b)
            };
            push!(v);
            return Ok(Some(Flow::Next));
        }
        match op {
            Opcode::STOP => return Ok(Some(Flow::Halt(EvmStatus::Stopped))),
            Opcode::ADD => {
                let (a, b) = (pop!(), pop!());
                let (v, o) = a.overflowing_add(b);
                push!(self.arith(v, o));
            }
            Opcode::MUL => {
                let (a, b) = (pop!(), pop!());
                let (v, o) = a.overflowing_mul(b);
                push!(self.arith(v, o));
            }
            Opcode::SUB => {
                let (a, b) = (pop!(), pop!());
                let (v, o) = a.overflowing_sub(b);
                push!(self.arith(v, o));
            }
            Opcode::DIV => {
                let (a, b) = (pop!(), pop!());
                push!(a.checked_div(b).unwrap_or_default());
            }
            Opcode::MOD => {
                let (a, b) = (pop!(), pop!());
                push!(a.checked_rem(b).unwrap_or_default());
            }
            Opcode::SDIV => {
                let (a, b) = (pop!(), pop!());
                let q = abs(a).checked_div(abs(b)).unwrap_or_default();
                push!(if is_neg(a) != is_neg(b) { q.wrapping_neg() } else { q });
            }
            Opcode::SMOD => {
                let (a, b) = (pop!(), pop!());
                let r = abs(a).checked_rem(abs(b)).unwrap_or_default();
                push!(if is_neg(a) { r.wrapping_neg() } else { r });
            }
            Opcode::ADDMOD => {
                let (a, b, n) = (pop!(), pop!(), pop!());
                push!(a.add_mod(b, n));
            }
            Opcode::MULMOD => {
                let (a, b, n) = (pop!(), pop!(), pop!());
                push!(a.mul_mod(b, n));
            }
            Opcode::EXP => {
                let (a, b) = (pop!(), pop!());
                let (v, o) = a.overflowing_pow(b);
                push!(self.arith(v, o));
            }
            Opcode::SIGNEXTEND => {
                let (b, x) = (pop!(), pop!());
                let v = match shift_amount(b).filter(|b| *b < 31) {
                    Some(b) => {
                        let bit = 8 * b + 7;
                        let mask = (U256::from(1) << (bit + 1)) - U256::from(1);
                        if x.bit(bit) {
                            x | !mask
                        } else {
                            x & mask
                        }
                    }
                    None => x,
                };
                push!(v);
            }
            Opcode::LT | Opcode::GT | Opcode::EQ => {
                let (a, b) = (pop!(), pop!());
                push!(bool_word(match op {
                    Opcode::LT => a < b,
                    Opcode::GT => a > b,
                    _ => a == b,
                }));
            }
            Opcode::SLT | Opcode::SGT => {
                let (a, b) = (pop!(), pop!());
                if !small(a) || !small(b) {
                    self.in_regime = false;
                }
                push!(bool_word(if op == Opcode::SLT { slt(a, b) } else { slt(b, a) }));
            }
            Opcode::ISZERO => {
                let a = pop!();
                push!(bool_word(a.is_zero()));
            }
            Opcode::AND => {
                let (a, b) = (pop!(), pop!());
                push!(a & b);
            }
            Opcode::OR => {
                let (a, b) = (pop!(), pop!());
                push!(a | b);
            }
            Opcode::XOR => {
                let (a, b) = (pop!(), pop!());
                push!(a ^ b);
            }
            Opcode::NOT => {
                let a = pop!();
                push!(!a);
            }
            Opcode::BYTE => {
                let (i, x) = (pop!(), pop!());
                let v = match shift_amount(i).filter(|i| *i < 32) {
                    Some(i) => U256::from(x.to_be_bytes::<32>()[i]),
                    None => U256::ZERO,
                };
                push!(v);
            }
            Opcode::SHL | Opcode::SHR => {
                let (s, x) = (pop!(), pop!());
                let v = match shift_amount(s) {
                    Some(s) if op == Opcode::SHL => x << s,
                    Some(s) => x >> s,
                    None => U256::ZERO,
                };
                push!(v);
            }
            Opcode::SAR => {
                let (s, x) = (pop!(), pop!());
                let v = match (shift_amount(s), is_neg(x)) {
                    (Some(s), false) => x >> s,
                    (Some(s), true) => !((!x) >> s),
                    (None, false) => U256::ZERO,
                    (None, true) => U256::MAX,
                };
                push!(v);
            }
            Opcode::CALLDATALOAD => {
                let off = pop!();
                let mut word = [0u8; 32];
                if let Ok(o) = usize::try_from(off) {
                    for (i, b) in word.iter_mut().enumerate() {
                        *b = o
                            .checked_add(i)
                            .and_then(|j| self.st.calldata.get(j))
                            .copied()
                            .unwrap_or(0);
                    }
                }
                push!(U256::from_be_bytes(word));
            }
            Opcode::CALLDATACOPY | Opcode::CODECOPY => {
                let (dest, from, len) = (pop!(), pop!(), pop!());
                let src = if op == Opcode::CODECOPY {
                    self.code.to_vec()
                } else {
                    self.st.calldata.clone()
                };
                if self.copy_to_memory(&src, dest, from, len).is_none() {
                    return Ok(None);
                }
            }
            Opcode::CODESIZE => push!(U256::from(self.code.len())),
            Opcode::POP => {
                pop!();
            }
            Opcode::MLOAD => {
                let a = pop!();
                let Some(_) = self.touch(a, U256::from(32)) else {
                    return Ok(None);
                };
                let v = self.st.memory_word(a);
                push!(v);
            }
            Opcode::MSTORE => {
                let (a, v) = (pop!(), pop!());
                let Some(a) = self.touch(a, U256::from(32)) else {
                    return Ok(None);
                };
                self.st.memory[a..a + 32].copy_from_slice(&v.to_be_bytes::<32>());
            }
            Opcode::MSTORE8 => {
                let (a, v) = (pop!(), pop!());
                let Some(a) = self.touch(a, U256::from(1)) else {
                    return Ok(None);
                };
                self.st.memory[a] = v.to_be_bytes::<32>()[31];
            }
            Opcode::SLOAD => {
                let k = pop!();
                let v = self.st.storage.get(&k).copied().unwrap_or_default();
                push!(v);
            }
            Opcode::SSTORE => {
                let (k, v) = (pop!(), pop!());
                self.st.storage.insert(k, v);
            }
            Opcode::JUMP => {
                let t = pop!();
                return Ok(self.jump_target(t).map(Flow::Jump));
            }
            Opcode::JUMPI => {
                let (t, c) = (pop!(), pop!());
                if c.is_zero() {
                    return Ok(Some(Flow::Next));
                }
                return Ok(self.jump_target(t).map(Flow::Jump));
            }
            Opcode::PC => push!(U256::from(ins.offset)),
            Opcode::MSIZE => push!(U256::from(self.st.memory.len())),
            Opcode::JUMPDEST => {}
            Opcode::RETURN | Opcode::REVERT => {
                let (a, n) = (pop!(), pop!());
                if self.touch(a, n).is_none() {
                    return Ok(None);
                }
                let status = if op == Opcode::RETURN {
                    EvmStatus::Returned
                } else {
                    EvmStatus::Reverted
                };
                return Ok(Some(Flow::Halt(status)));
            }
            _ if !op.is_assigned() || op == Opcode::INVALID => return Ok(None),
            _ => return Err(EvmError::UnsupportedOpcode(op.mnemonic())),
        }
        Ok(Some(Flow::Next))
    }

    fn jump_target(&self, t: U256) -> Option<usize> {
        let t = usize::try_from(t).ok()?;
        let i = (*self.at.get(t)?)?;
        (self.instrs[i].opcode == Opcode::JUMPDEST).then_some(i)
    }
}

/// Runs `code` until it halts. Running past the last instruction is a STOP.
pub fn run_evm(code: &[u8], input: &EvmInput, step_limit: usize) -> Result<EvmRun, EvmError> {
    run_evm_with(code, input, step_limit, &mut |_| {})
}

/// [`run_evm`], calling `on_block` with the state on entry to every block in the trace.
pub fn run_evm_with(
    code: &[u8],
    input: &EvmInput,
    step_limit: usize,
    on_block: &mut dyn FnMut(&MachineState),
) -> Result<EvmRun, EvmError> {
    let instrs = disassemble(code)?;
    let mut at = vec![None; code.len() + 1];
    for (i, ins) in instrs.iter().enumerate() {
        at[ins.offset] = Some(i);
    }
    let mut vm = Vm {
        code,
        instrs,
        at,
        st: MachineState {
            storage: input.storage.clone(),
            calldata: input.calldata.clone(),
            env: input.env.clone(),
            ..MachineState::default()
        },
        in_regime: true,
    };
    let mut trace = Vec::new();
    let mut i = 0;
    let mut steps = 0;
    let mut leader = true;
    let status = loop {
        let Some(ins) = vm.instrs.get(i).cloned() else {
            vm.st.pc = code.len();
            break EvmStatus::Stopped;
        };
        vm.st.pc = ins.offset;
        if leader || ins.opcode == Opcode::JUMPDEST {
            trace.push(ins.offset);
            on_block(&vm.st);
        }
        if steps == step_limit {
            return Err(EvmError::StepLimitExceeded(step_limit));
        }
        steps += 1;
        leader = ins.opcode.is_jump();
        match vm.step(&ins)? {
            Some(Flow::Next) => i += 1,
            // The JUMPDEST at the target records itself.
            Some(Flow::Jump(j)) => {
                i = j;
                leader = false;
            }
            Some(Flow::Halt(s)) => break s,
            None => break EvmStatus::Exceptional,
        }
    };
    vm.st.halted = true;
    Ok(EvmRun {
        state: vm.st,
        status,
        trace,
        steps,
        in_regime: vm.in_regime,
    })
}
