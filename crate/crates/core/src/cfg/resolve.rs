use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use super::{
    abstract_step, AbstractValue, BasicBlock, Block, BlockId, Cfg, Exit, Terminator, Unresolved, UnresolvedReason,
    MAX_STACK,
};
use crate::opcode::Opcode;
use crate::U256;

pub const DEFAULT_CLONE_CAP: usize = 32;

/// Upper bound on relevance-refinement rounds; each round is a complete,
/// valid resolution, so hitting the bound only costs precision.
const MAX_ROUNDS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolveOptions {
    /// Maximum number of contexts (clones) per original block.
    pub clone_cap: usize,
}

impl Default for ResolveOptions {
    fn default() -> Self {
        ResolveOptions {
            clone_cap: DEFAULT_CLONE_CAP,
        }
    }
}

pub fn resolve_cfg(blocks: &[BasicBlock]) -> Cfg {
    resolve_cfg_with(blocks, ResolveOptions::default())
}

/// Resolves jump targets and clones blocks per calling context.
///
/// A context is a block entered at a given stack height with fixed abstract
/// values in its *relevant* slots: the entry depths whose values may reach a
/// jump target in the block itself or, through pass-through, in one of its
/// resolved successors. Other slots are joined. Relevance starts from each
/// block's own jump target and is propagated backwards over the resolved
/// edges; the interpretation is rerun until relevance stops growing.
pub fn resolve_cfg_with(blocks: &[BasicBlock], opts: ResolveOptions) -> Cfg {
    let transfers: Vec<Transfer> = blocks.iter().map(Transfer::of).collect();
    let index: HashMap<usize, usize> = blocks.iter().enumerate().map(|(i, b)| (b.start_pc, i)).collect();

    let mut relevant: Vec<BTreeSet<usize>> = transfers.iter().map(|t| t.target.iter().copied().collect()).collect();

    let mut pass = Pass::run(blocks, &transfers, &index, &relevant, opts);
    for _ in 0..MAX_ROUNDS {
        let grown = pass.propagate_relevance(&transfers, &mut relevant);
        if !grown {
            break;
        }
        pass = Pass::run(blocks, &transfers, &index, &relevant, opts);
    }
    pass.into_cfg(blocks)
}

/// Symbolic summary of a block: where each exit slot's value may come from.
///
/// The block is simulated on a stack pre-filled with `need` entry slots, each
/// tagged with its entry depth (0 = top). Slots carry the set of entry depths
/// their value may be computed from.
struct Transfer {
    /// Entry slots the block reads below its own pushes.
    need: usize,
    /// Highest height above entry reached inside the block.
    peak: usize,
    /// Origins of the jump target, for JUMP/JUMPI blocks.
    target: BTreeSet<usize>,
    /// Stack after the terminator's pops, bottom first.
    exit: Vec<BTreeSet<usize>>,
}

impl Transfer {
    fn of(block: &BasicBlock) -> Transfer {
        let mut need = 0usize;
        let mut peak = 0usize;
        let mut rel: isize = 0;
        for ins in &block.instrs {
            let (d, a) = (ins.opcode.delta() as isize, ins.opcode.alpha() as isize);
            if d > rel {
                need = need.max((d - rel) as usize);
            }
            rel += a - d;
            peak = peak.max((rel.max(0)) as usize);
        }

        let mut stack: Vec<BTreeSet<usize>> = (0..need).rev().map(|d| BTreeSet::from([d])).collect();
        let mut target = BTreeSet::new();
        for ins in &block.instrs {
            let op = ins.opcode;
            if op.is_jump() {
                target = stack.pop().unwrap();
                if op == Opcode::JUMPI {
                    stack.pop();
                }
                continue;
            }
            if let Some(n) = op.dup_depth() {
                let v = stack[stack.len() - n].clone();
                stack.push(v);
            } else if let Some(n) = op.swap_depth() {
                let top = stack.len() - 1;
                stack.swap(top, top - n);
            } else {
                let mut merged = BTreeSet::new();
                for _ in 0..op.delta() {
                    merged.extend(stack.pop().unwrap());
                }
                let result = if folds(op) { merged } else { BTreeSet::new() };
                for _ in 0..op.alpha() {
                    stack.push(result.clone());
                }
            }
        }
        Transfer {
            need,
            peak,
            target,
            exit: stack,
        }
    }

    /// Entry depths that may feed the value at `depth` below the exit top.
    fn exit_origins(&self, depth: usize) -> BTreeSet<usize> {
        let len = self.exit.len();
        if depth < len {
            self.exit[len - 1 - depth].clone()
        } else {
            BTreeSet::from([depth - len + self.need])
        }
    }
}

/// Opcodes whose result may be a constant computed from their operands.
fn folds(op: Opcode) -> bool {
    matches!(
        op,
        Opcode::ADD
            | Opcode::SUB
            | Opcode::MUL
            | Opcode::DIV
            | Opcode::MOD
            | Opcode::EXP
            | Opcode::AND
            | Opcode::OR
            | Opcode::XOR
            | Opcode::NOT
            | Opcode::ISZERO
            | Opcode::LT
            | Opcode::GT
            | Opcode::EQ
            | Opcode::SHL
            | Opcode::SHR
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ContextKey {
    block: usize,
    height: usize,
    pinned: Vec<AbstractValue>,
}

#[derive(Debug, Clone)]
enum CtxExit {
    Pending,
    Jump(usize),
    JumpI(usize, usize),
    Fall(usize),
    Halt,
    Failed(UnresolvedReason),
}

struct Context {
    block: usize,
    entry: Vec<AbstractValue>,
    exit: CtxExit,
}

struct Pass {
    contexts: Vec<Context>,
}

impl Pass {
    fn run(
        blocks: &[BasicBlock],
        transfers: &[Transfer],
        index: &HashMap<usize, usize>,
        relevant: &[BTreeSet<usize>],
        opts: ResolveOptions,
    ) -> Pass {
        let mut state = PassState {
            blocks,
            transfers,
            relevant,
            opts,
            contexts: Vec::new(),
            lookup: HashMap::new(),
            per_block: vec![0; blocks.len()],
            queue: VecDeque::new(),
            queued: Vec::new(),
        };
        let entry = index[&0];
        // The entry context is created unconditionally, even if the block underflows.
        state.create(entry, Vec::new());
        while let Some(c) = state.queue.pop_front() {
            state.queued[c] = false;
            state.process(c, index);
        }
        Pass {
            contexts: state.contexts,
        }
    }

    fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.contexts.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(c) = stack.pop() {
            for s in exit_targets(&self.contexts[c].exit) {
                if !seen[s] {
                    seen[s] = true;
                    stack.push(s);
                }
            }
        }
        seen
    }

    fn propagate_relevance(&self, transfers: &[Transfer], relevant: &mut [BTreeSet<usize>]) -> bool {
        let live = self.reachable();
        let mut grown = false;
        // Propagate to a fixpoint over the edges of this pass.
        loop {
            let mut changed = false;
            for (c, ctx) in self.contexts.iter().enumerate() {
                if !live[c] {
                    continue;
                }
                let height = ctx.entry.len();
                for s in exit_targets(&ctx.exit) {
                    let succ = self.contexts[s].block;
                    let wanted: Vec<usize> = relevant[succ].iter().copied().collect();
                    for d in wanted {
                        for origin in transfers[ctx.block].exit_origins(d) {
                            if origin < height && relevant[ctx.block].insert(origin) {
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
            grown = true;
        }
        grown
    }

    fn into_cfg(self, blocks: &[BasicBlock]) -> Cfg {
        let live = self.reachable();
        let mut by_block: Vec<Vec<usize>> = vec![Vec::new(); blocks.len()];
        for (c, ctx) in self.contexts.iter().enumerate() {
            if live[c] {
                by_block[ctx.block].push(c);
            }
        }
        let mut ids: HashMap<usize, BlockId> = HashMap::new();
        for (b, ctxs) in by_block.iter().enumerate() {
            let pc = blocks[b].start_pc;
            if ctxs.len() == 1 {
                ids.insert(ctxs[0], BlockId::new(pc));
            } else {
                for (n, c) in ctxs.iter().enumerate() {
                    ids.insert(*c, BlockId::cloned(pc, n));
                }
            }
        }

        let mut out = BTreeMap::new();
        let mut unresolved = Vec::new();
        for (b, ctxs) in by_block.iter().enumerate() {
            let bb = &blocks[b];
            if ctxs.is_empty() {
                let id = BlockId::new(bb.start_pc);
                out.insert(
                    id,
                    Block {
                        id,
                        start_pc: bb.start_pc,
                        byte_size: bb.byte_size,
                        instrs: bb.instrs.clone(),
                        terminator: Terminator::Halt,
                        entry_height: 0,
                        entry_stack: Vec::new(),
                        live: false,
                    },
                );
                continue;
            }
            for c in ctxs {
                let ctx = &self.contexts[*c];
                let id = ids[c];
                let terminator = match &ctx.exit {
                    CtxExit::Jump(t) => Terminator::Jump(ids[t]),
                    CtxExit::JumpI(t, f) => Terminator::JumpI {
                        taken: ids[t],
                        fallthrough: ids[f],
                    },
                    CtxExit::Fall(t) => Terminator::FallThrough(ids[t]),
                    CtxExit::Halt | CtxExit::Pending => Terminator::Halt,
                    CtxExit::Failed(reason) => {
                        unresolved.push(Unresolved {
                            block: id,
                            reason: reason.clone(),
                        });
                        Terminator::Halt
                    }
                };
                out.insert(
                    id,
                    Block {
                        id,
                        start_pc: bb.start_pc,
                        byte_size: bb.byte_size,
                        instrs: bb.instrs.clone(),
                        terminator,
                        entry_height: ctx.entry.len(),
                        entry_stack: ctx.entry.clone(),
                        live: true,
                    },
                );
            }
        }
        unresolved.sort_by_key(|u| u.block);
        Cfg {
            blocks: out,
            entry: ids[&0],
            unresolved,
        }
    }
}

fn exit_targets(exit: &CtxExit) -> Vec<usize> {
    match exit {
        CtxExit::Jump(t) | CtxExit::Fall(t) => vec![*t],
        CtxExit::JumpI(t, f) => vec![*t, *f],
        _ => vec![],
    }
}

struct PassState<'a> {
    blocks: &'a [BasicBlock],
    transfers: &'a [Transfer],
    relevant: &'a [BTreeSet<usize>],
    opts: ResolveOptions,
    contexts: Vec<Context>,
    lookup: HashMap<ContextKey, usize>,
    per_block: Vec<usize>,
    queue: VecDeque<usize>,
    queued: Vec<bool>,
}

impl PassState<'_> {
    fn key(&self, block: usize, stack: &[AbstractValue]) -> ContextKey {
        let h = stack.len();
        let pinned = self.relevant[block]
            .iter()
            .filter(|d| **d < h)
            .map(|d| stack[h - 1 - d])
            .collect();
        ContextKey {
            block,
            height: h,
            pinned,
        }
    }

    fn create(&mut self, block: usize, entry: Vec<AbstractValue>) -> usize {
        let key = self.key(block, &entry);
        let id = self.contexts.len();
        self.contexts.push(Context {
            block,
            entry,
            exit: CtxExit::Pending,
        });
        self.lookup.insert(key, id);
        self.per_block[block] += 1;
        self.queued.push(true);
        self.queue.push_back(id);
        id
    }

    /// Routes an abstract stack into `block`, creating or widening a context.
    fn deliver(&mut self, block: usize, stack: Vec<AbstractValue>) -> Result<usize, UnresolvedReason> {
        let t = &self.transfers[block];
        let target_pc = self.blocks[block].start_pc;
        if stack.len() < t.need {
            return Err(UnresolvedReason::StackUnderflow { target_pc });
        }
        if stack.len() + t.peak > MAX_STACK {
            return Err(UnresolvedReason::StackOverflow { target_pc });
        }
        let key = self.key(block, &stack);
        if let Some(&c) = self.lookup.get(&key) {
            let entry = &mut self.contexts[c].entry;
            let mut changed = false;
            for (slot, incoming) in entry.iter_mut().zip(stack) {
                let joined = slot.join(incoming);
                if joined != *slot {
                    *slot = joined;
                    changed = true;
                }
            }
            if changed && !self.queued[c] {
                self.queued[c] = true;
                self.queue.push_back(c);
            }
            return Ok(c);
        }
        if self.per_block[block] >= self.opts.clone_cap {
            return Err(UnresolvedReason::CloneCapExceeded { target_pc });
        }
        Ok(self.create(block, stack))
    }

    fn jump_target(&self, value: AbstractValue, index: &HashMap<usize, usize>) -> Result<usize, UnresolvedReason> {
        let v = value.concrete().ok_or(UnresolvedReason::UnknownTarget)?;
        let target = (v < U256::from(usize::MAX))
            .then(|| v.to::<usize>())
            .and_then(|pc| index.get(&pc).copied())
            .filter(|b| self.blocks[*b].starts_with_jumpdest());
        target.ok_or(UnresolvedReason::NotJumpdest(v))
    }

    fn process(&mut self, c: usize, index: &HashMap<usize, usize>) {
        let block = self.contexts[c].block;
        let bb = &self.blocks[block];
        let mut stack = self.contexts[c].entry.clone();
        let body = match bb.exit {
            Exit::Jump | Exit::JumpI => &bb.instrs[..bb.instrs.len() - 1],
            _ => &bb.instrs[..],
        };
        for ins in body {
            if abstract_step(&mut stack, ins).is_err() {
                // Only the entry context can get here; deliver() checks heights.
                self.contexts[c].exit = CtxExit::Failed(UnresolvedReason::StackUnderflow { target_pc: bb.start_pc });
                return;
            }
        }
        let exit = match bb.exit {
            Exit::Halt => CtxExit::Halt,
            Exit::FallThrough(next) => match self.deliver(index[&next], stack) {
                Ok(t) => CtxExit::Fall(t),
                Err(e) => CtxExit::Failed(e),
            },
            Exit::Jump => {
                let Some(target) = stack.pop() else {
                    self.contexts[c].exit =
                        CtxExit::Failed(UnresolvedReason::StackUnderflow { target_pc: bb.start_pc });
                    return;
                };
                match self.jump_target(target, index).and_then(|t| self.deliver(t, stack)) {
                    Ok(t) => CtxExit::Jump(t),
                    Err(e) => CtxExit::Failed(e),
                }
            }
            Exit::JumpI => {
                if stack.len() < 2 {
                    self.contexts[c].exit =
                        CtxExit::Failed(UnresolvedReason::StackUnderflow { target_pc: bb.start_pc });
                    return;
                }
                let target = stack.pop().unwrap();
                stack.pop();
                let fall = index.get(&bb.end_pc()).copied();
                let resolved = self.jump_target(target, index).and_then(|t| {
                    let f = fall.ok_or(UnresolvedReason::FallthroughOutOfCode)?;
                    Ok((t, f))
                });
                match resolved {
                    Ok((t, f)) => {
                        let taken = self.deliver(t, stack.clone());
                        let not_taken = self.deliver(f, stack);
                        match (taken, not_taken) {
                            (Ok(t), Ok(f)) => CtxExit::JumpI(t, f),
                            (Err(e), _) | (_, Err(e)) => CtxExit::Failed(e),
                        }
                    }
                    Err(e) => CtxExit::Failed(e),
                }
            }
        };
        self.contexts[c].exit = exit;
    }
}
