use std::fmt;

use thiserror::Error;

use super::{
    layout::build_layout, ArithOp, BitOp, BlockchainVar, Call, Expr, Guard, Operand, Program, Relation, Rule, RuleName,
    Statement, Var, VarLayout,
};
use crate::asm::Instruction;
use crate::cfg::{abstract_step, AbstractValue, Block, BlockId, Cfg, Terminator};
use crate::opcode::Opcode;
use crate::U256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranslateError {
    #[error("stack underflow in block {block} at offset {offset}")]
    StackUnderflow { block: BlockId, offset: usize },
    #[error("no guard pattern matches the condition of block {block}")]
    UnsupportedGuard { block: BlockId },
}

/// Non-fatal translation diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    /// The condition was encoded as a plain value compared against zero.
    UnsupportedGuard { block: BlockId },
    /// A memory write whose range is not constant; no local was havocked.
    UnknownMemoryWrite { block: BlockId, offset: usize },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::UnsupportedGuard { block } => {
                write!(f, "block {block}: unsupported guard pattern, using value guard")
            }
            Warning::UnknownMemoryWrite { block, offset } => {
                write!(f, "block {block}: memory write at offset {offset} has unknown range")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TranslateOptions {
    /// Precede each instruction's statements with `nop(MNEMONIC)`.
    pub nops: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Translation {
    pub program: Program,
    pub warnings: Vec<Warning>,
}

/// State threaded through [`tau`] while translating one block.
///
/// `m` is the index of the top stack variable; `-1` is the empty stack.
/// `stack` mirrors the abstract values of `s0..s<m>` and is what decides
/// whether a storage key, memory address or calldata offset is constant.
#[derive(Debug, Clone)]
pub struct TranslationState {
    pub block: BlockId,
    pub m: isize,
    pub fresh: usize,
    pub stack: Vec<AbstractValue>,
    pub nops: bool,
    pub warnings: Vec<Warning>,
}

impl TranslationState {
    pub fn new(block: &Block, nops: bool) -> Self {
        TranslationState {
            block: block.id,
            m: block.entry_height as isize - 1,
            fresh: 0,
            stack: block.entry_stack.clone(),
            nops,
            warnings: Vec::new(),
        }
    }

    /// A state over `height` stack slots whose values are all unknown.
    pub fn with_height(block: BlockId, height: usize) -> Self {
        TranslationState {
            block,
            m: height as isize - 1,
            fresh: 0,
            stack: vec![AbstractValue::Unknown; height],
            nops: false,
            warnings: Vec::new(),
        }
    }

    fn height(&self) -> usize {
        (self.m + 1) as usize
    }

    fn fresh(&mut self) -> Expr {
        let v = Var::Fresh(self.fresh);
        self.fresh += 1;
        Expr::Var(v)
    }

    fn underflow(&self, ins: &Instruction) -> TranslateError {
        TranslateError::StackUnderflow {
            block: self.block,
            offset: ins.offset,
        }
    }

    /// Abstract value `depth` slots below the top.
    fn peek(&self, depth: usize) -> Option<U256> {
        self.stack.iter().rev().nth(depth).and_then(|v| v.concrete())
    }

    fn pop(&mut self, n: usize) {
        self.m -= n as isize;
        let keep = self.stack.len().saturating_sub(n);
        self.stack.truncate(keep);
    }
}

fn s(i: isize) -> Var {
    debug_assert!(i >= 0, "negative stack index");
    Var::Stack(i as usize)
}

/// Translates one instruction, updating `state.m`.
pub fn tau(ins: &Instruction, st: &mut TranslationState, layout: &VarLayout) -> Result<Vec<Statement>, TranslateError> {
    let op = ins.opcode;
    let (delta, alpha) = (op.delta(), op.alpha());
    if st.height() < delta {
        return Err(st.underflow(ins));
    }
    let mut out = Vec::new();
    if st.nops {
        out.push(Statement::Nop(op.mnemonic()));
    }
    let m = st.m;
    let top = st.peek(0);

    if let Some(v) = ins.push_value() {
        out.push(Statement::assign(s(m + 1), Expr::Num(v)));
    } else if let Some(n) = op.dup_depth() {
        out.push(Statement::copy(s(m + 1), s(m + 1 - n as isize)));
    } else if let Some(n) = op.swap_depth() {
        let n = n as isize;
        out.push(Statement::copy(s(m + 1), s(m)));
        out.push(Statement::copy(s(m), s(m - n)));
        out.push(Statement::copy(s(m - n), s(m + 1)));
    } else if let Some(a) = ArithOp::of_opcode(op) {
        out.push(Statement::assign(s(m - 1), Expr::arith(a, s(m), s(m - 1))));
    } else if let Some(b) = BitOp::of_opcode(op) {
        out.push(Statement::assign(s(m - 1), Expr::bit(b, s(m), s(m - 1))));
    } else if let Some(b) = BlockchainVar::of_opcode(op) {
        out.push(Statement::copy(s(m + 1), Var::Chain(b)));
    } else {
        match op {
            Opcode::JUMPDEST | Opcode::POP => {}
            Opcode::NOT => out.push(Statement::assign(s(m), Expr::Not(Box::new(Expr::Var(s(m)))))),
            Opcode::PC => out.push(Statement::assign(s(m + 1), Expr::Num(U256::from(ins.offset)))),
            Opcode::SLOAD => match top.and_then(|k| layout.field(k)) {
                Some(v) => out.push(Statement::copy(s(m), Var::Field(v))),
                None => {
                    out.push(Statement::copy(Var::FieldKey, s(m)));
                    let f = st.fresh();
                    out.push(Statement::assign(s(m), f));
                }
            },
            Opcode::MLOAD => match top.and_then(|a| layout.lmap(a)) {
                Some(l) => out.push(Statement::copy(s(m), Var::Local(l))),
                None => {
                    out.push(Statement::copy(Var::LocalKey, s(m)));
                    let f = st.fresh();
                    out.push(Statement::assign(s(m), f));
                }
            },
            Opcode::SSTORE => match top.and_then(|k| layout.field(k)) {
                Some(v) => out.push(Statement::copy(Var::Field(v), s(m - 1))),
                None => {
                    out.push(Statement::copy(Var::FieldStore(1), s(m - 1)));
                    out.push(Statement::copy(Var::FieldStore(2), s(m)));
                }
            },
            Opcode::MSTORE => match top.and_then(|a| layout.lmap(a)) {
                Some(l) => out.push(Statement::copy(Var::Local(l), s(m - 1))),
                None => {
                    out.push(Statement::copy(Var::LocalStore(1), s(m - 1)));
                    out.push(Statement::copy(Var::LocalStore(2), s(m)));
                }
            },
            Opcode::CALLDATALOAD => match top.and_then(|o| layout.md_index(o)) {
                Some(i) => out.push(Statement::copy(s(m), Var::Calldata(i))),
                None => {
                    let f = st.fresh();
                    out.push(Statement::assign(s(m), f));
                }
            },
            _ => {
                havoc_written_locals(ins, st, layout, &mut out);
                let base = m - delta as isize;
                for j in 1..=alpha as isize {
                    let f = st.fresh();
                    out.push(Statement::assign(s(base + j), f));
                }
            }
        }
    }

    if abstract_step(&mut st.stack, ins).is_err() {
        // Past the stack limit; keep the mirror aligned with `m`.
        st.stack.truncate(st.stack.len().saturating_sub(delta));
        st.stack.extend(std::iter::repeat_n(AbstractValue::Unknown, alpha));
    }
    st.m += alpha as isize - delta as isize;
    Ok(out)
}

/// Stack depths of the (offset, size) operands of opcodes that write memory.
fn memory_write_operands(op: Opcode) -> Option<(usize, usize)> {
    match op {
        Opcode::CALLDATACOPY | Opcode::CODECOPY | Opcode::RETURNDATACOPY => Some((0, 2)),
        Opcode::EXTCODECOPY => Some((1, 3)),
        Opcode::CALL | Opcode::CALLCODE => Some((5, 6)),
        Opcode::DELEGATECALL | Opcode::STATICCALL => Some((4, 5)),
        _ => None,
    }
}

fn havoc_written_locals(ins: &Instruction, st: &mut TranslationState, layout: &VarLayout, out: &mut Vec<Statement>) {
    let range = if ins.opcode == Opcode::MSTORE8 {
        Some((st.peek(0), Some(U256::from(1))))
    } else {
        memory_write_operands(ins.opcode).map(|(o, n)| (st.peek(o), st.peek(n)))
    };
    let Some(range) = range else { return };
    let (Some(start), Some(len)) = range else {
        st.warnings.push(Warning::UnknownMemoryWrite {
            block: st.block,
            offset: ins.offset,
        });
        return;
    };
    if len.is_zero() {
        return;
    }
    let end = start.saturating_add(len);
    for (i, addr) in layout.locals.iter().enumerate() {
        if *addr < end && start < addr.saturating_add(U256::from(32)) {
            let f = st.fresh();
            out.push(Statement::assign(Var::Local(i), f));
        }
    }
}

fn comparison(op: Opcode) -> Option<Relation> {
    Some(match op {
        Opcode::GT | Opcode::SGT => Relation::Gt,
        Opcode::LT | Opcode::SLT => Relation::Lt,
        Opcode::EQ => Relation::Eq,
        _ => return None,
    })
}

/// Start of the guard window at the end of `before` (the instructions that
/// precede the target PUSH of a JUMPI): an optional comparison followed by
/// any number of ISZEROs, non-empty.
fn guard_window_start(before: &[Instruction]) -> Option<usize> {
    let k = before.iter().rev().take_while(|i| i.opcode == Opcode::ISZERO).count();
    let j = before.len() - k;
    if j >= 1 && comparison(before[j - 1].opcode).is_some() {
        Some(j - 1)
    } else if k >= 1 {
        Some(j)
    } else {
        None
    }
}

/// Guards for the taken and fall-through continuations of a conditional jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GuardPair {
    pub taken: Guard,
    pub fallthrough: Guard,
}

/// Translates a condition window into a guard pair, updating `state.m`.
///
/// Accepted windows are a comparison (GT, LT, EQ, SGT, SLT) or nothing,
/// followed by ISZEROs; each ISZERO swaps the two guards. A lone ISZERO chain
/// compares the top of the stack against zero.
pub fn tau_guard(window: &[Instruction], st: &mut TranslationState) -> Result<GuardPair, TranslateError> {
    let unsupported = || TranslateError::UnsupportedGuard { block: st.block };
    let k = window.iter().rev().take_while(|i| i.opcode == Opcode::ISZERO).count();
    let head = &window[..window.len() - k];
    let m = st.m;
    let (taken, consumed) = match head {
        [cmp] => {
            let rel = comparison(cmp.opcode).ok_or_else(unsupported)?;
            if m < 1 {
                return Err(st.underflow(cmp));
            }
            let g = Guard::new(rel, Operand::Var(s(m)), Operand::Var(s(m - 1)));
            (if k % 2 == 1 { g.negate() } else { g }, 2)
        }
        [] if k > 0 => {
            if m < 0 {
                return Err(st.underflow(&window[0]));
            }
            // One ISZERO is true when the operand is zero.
            let g = Guard::new(Relation::Eq, Operand::Var(s(m)), Operand::Num(U256::ZERO));
            (if k % 2 == 1 { g } else { g.negate() }, 1)
        }
        _ => return Err(unsupported()),
    };
    st.pop(consumed);
    Ok(GuardPair {
        taken,
        fallthrough: taken.negate(),
    })
}

fn tau_all(
    instrs: &[Instruction],
    st: &mut TranslationState,
    layout: &VarLayout,
    body: &mut Vec<Statement>,
) -> Result<(), TranslateError> {
    for ins in instrs {
        body.extend(tau(ins, st, layout)?);
    }
    Ok(())
}

fn nops(instrs: &[Instruction], st: &TranslationState, body: &mut Vec<Statement>) {
    if st.nops {
        body.extend(instrs.iter().map(|i| Statement::Nop(i.opcode.mnemonic())));
    }
}

/// Translates one live block into one rule, or three for a conditional jump.
pub fn translate_block(
    block: &Block,
    layout: &VarLayout,
    opts: TranslateOptions,
) -> Result<(Vec<Rule>, Vec<Warning>), TranslateError> {
    let mut st = TranslationState::new(block, opts.nops);
    let instrs = &block.instrs;
    let n = instrs.len();
    let name = RuleName::block(block.id);
    let mut body = Vec::new();
    let target_pushed = n >= 2 && instrs[n - 2].push_value().is_some();

    let rules = match &block.terminator {
        Terminator::Jump(target) => {
            let body_end = if target_pushed { n - 2 } else { n - 1 };
            tau_all(&instrs[..body_end], &mut st, layout, &mut body)?;
            if !target_pushed {
                // The target reached the stack earlier; it is consumed here.
                if st.m < 0 {
                    return Err(st.underflow(&instrs[n - 1]));
                }
                st.pop(1);
            }
            nops(&instrs[body_end..], &st, &mut body);
            vec![Rule {
                name,
                stack_params: block.entry_height,
                guard: None,
                body,
                call: Some(Call {
                    target: RuleName::block(*target),
                    stack_args: st.height(),
                }),
            }]
        }
        Terminator::JumpI { taken, fallthrough } => {
            let before = if target_pushed {
                &instrs[..n - 2]
            } else {
                &instrs[..n - 1]
            };
            let window_start = if target_pushed {
                guard_window_start(before)
            } else {
                None
            };
            let body_end = window_start.unwrap_or(before.len());
            tau_all(&before[..body_end], &mut st, layout, &mut body)?;
            let jump_params = st.height();

            let guards = match tau_guard(&before[body_end..], &mut st) {
                Ok(g) => g,
                Err(TranslateError::UnsupportedGuard { .. }) => {
                    st.warnings.push(Warning::UnsupportedGuard { block: block.id });
                    // Condition value is the top, or just below a target that was not pushed here.
                    let (depth, pops) = if target_pushed { (0, 1) } else { (1, 2) };
                    if st.m < depth {
                        return Err(st.underflow(&instrs[n - 1]));
                    }
                    let g = Guard::new(Relation::Neq, Operand::Var(s(st.m - depth)), Operand::Num(U256::ZERO));
                    st.pop(pops);
                    GuardPair {
                        taken: g,
                        fallthrough: g.negate(),
                    }
                }
                Err(e) => return Err(e),
            };
            nops(&instrs[body_end..], &st, &mut body);
            let jump = RuleName::jump(block.id);
            let args = st.height();
            let branch = |guard: Guard, to: BlockId| Rule {
                name: jump,
                stack_params: jump_params,
                guard: Some(guard),
                body: Vec::new(),
                call: Some(Call {
                    target: RuleName::block(to),
                    stack_args: args,
                }),
            };
            vec![
                Rule {
                    name,
                    stack_params: block.entry_height,
                    guard: None,
                    body,
                    call: Some(Call {
                        target: jump,
                        stack_args: jump_params,
                    }),
                },
                branch(guards.taken, *taken),
                branch(guards.fallthrough, *fallthrough),
            ]
        }
        Terminator::FallThrough(next) => {
            tau_all(instrs, &mut st, layout, &mut body)?;
            vec![Rule {
                name,
                stack_params: block.entry_height,
                guard: None,
                body,
                call: Some(Call {
                    target: RuleName::block(*next),
                    stack_args: st.height(),
                }),
            }]
        }
        Terminator::Halt => {
            tau_all(instrs, &mut st, layout, &mut body)?;
            vec![Rule {
                name,
                stack_params: block.entry_height,
                guard: None,
                body,
                call: None,
            }]
        }
    };
    Ok((rules, st.warnings))
}

/// Translates every live block, in ascending block-id order.
pub fn translate_cfg(cfg: &Cfg, opts: TranslateOptions) -> Result<Translation, TranslateError> {
    let layout = build_layout(cfg);
    let mut rules = Vec::new();
    let mut warnings = Vec::new();
    for block in cfg.live_blocks() {
        let (r, w) = translate_block(block, &layout, opts)?;
        rules.extend(r);
        warnings.extend(w);
    }
    Ok(Translation {
        program: Program { layout, rules },
        warnings,
    })
}
