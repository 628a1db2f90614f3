use std::collections::BTreeSet;

use super::{BlockchainVar, Var};
use crate::cfg::{abstract_step, Cfg};
use crate::opcode::Opcode;
use crate::U256;

/// Constant storage keys above this are treated as unknown keys: threading
/// every field up to, say, a hashed slot number is not feasible.
pub const FIELD_INDEX_LIMIT: usize = 255;

/// Mapping from EVM state to the non-stack RBR variables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VarLayout {
    /// Number of field variables; `g0..g<fields-1>`.
    pub fields: usize,
    /// Memory address of each local, indexed by local number (the inverse of lmap).
    pub locals: Vec<U256>,
    /// Calldata offset of each `md` variable, ascending.
    pub calldata: Vec<U256>,
    /// Named blockchain variables, alphabetical.
    pub chain: Vec<BlockchainVar>,
}

impl VarLayout {
    /// Highest field index `k`, if any field is used.
    pub fn k(&self) -> Option<usize> {
        self.fields.checked_sub(1)
    }

    /// Local index for a constant memory address.
    pub fn lmap(&self, address: U256) -> Option<usize> {
        self.locals.iter().position(|a| *a == address)
    }

    pub fn md_index(&self, offset: U256) -> Option<usize> {
        self.calldata.binary_search(&offset).ok()
    }

    /// Field index for a constant storage key, when it is within the layout.
    pub fn field(&self, key: U256) -> Option<usize> {
        let k = field_index(key)?;
        (k < self.fields).then_some(k)
    }

    /// The shared parameter list every rule carries after its stack parameters.
    pub fn params(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend((0..self.fields).map(Var::Field));
        out.extend((0..self.locals.len()).map(Var::Local));
        out.extend((0..self.calldata.len()).map(Var::Calldata));
        out.extend(self.chain.iter().map(|b| Var::Chain(*b)));
        out
    }

    pub fn param_count(&self) -> usize {
        self.fields + self.locals.len() + self.calldata.len() + self.chain.len()
    }
}

pub(crate) fn field_index(key: U256) -> Option<usize> {
    (key <= U256::from(FIELD_INDEX_LIMIT)).then(|| key.to::<usize>())
}

/// Collects constant storage keys, constant memory addresses, constant
/// calldata offsets and blockchain-data opcodes over all live blocks.
///
/// Constants are those known to the same abstract interpretation that
/// resolved the CFG, started from each block's recorded entry stack.
pub fn build_layout(cfg: &Cfg) -> VarLayout {
    let mut max_field: Option<usize> = None;
    let mut locals: Vec<U256> = Vec::new();
    let mut calldata = BTreeSet::new();
    let mut chain = BTreeSet::new();

    for block in cfg.live_blocks() {
        let mut stack = block.entry_stack.clone();
        for ins in &block.instrs {
            let top = stack.last().and_then(|v| v.concrete());
            match ins.opcode {
                Opcode::SLOAD | Opcode::SSTORE => {
                    if let Some(k) = top.and_then(field_index) {
                        max_field = max_field.max(Some(k));
                    }
                }
                Opcode::MLOAD | Opcode::MSTORE => {
                    if let Some(a) = top {
                        if !locals.contains(&a) {
                            locals.push(a);
                        }
                    }
                }
                Opcode::CALLDATALOAD => {
                    if let Some(o) = top {
                        calldata.insert(o);
                    }
                }
                op => {
                    if let Some(b) = BlockchainVar::of_opcode(op) {
                        chain.insert(b);
                    }
                }
            }
            if abstract_step(&mut stack, ins).is_err() {
                break;
            }
        }
    }

    VarLayout {
        fields: max_field.map_or(0, |k| k + 1),
        locals,
        calldata: calldata.into_iter().collect(),
        chain: chain.into_iter().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{disassemble, Assembler};
    use crate::cfg::{resolve_cfg, split_blocks};

    fn layout(a: Assembler) -> VarLayout {
        build_layout(&resolve_cfg(&split_blocks(&disassemble(&a.finish()).unwrap())))
    }

    #[test]
    fn locals_in_first_seen_order() {
        let mut a = Assembler::new();
        a.push(1).push(0x60).op(Opcode::MSTORE);
        a.push(2).push(0x40).op(Opcode::MSTORE);
        a.push(0x60).op(Opcode::MLOAD).op(Opcode::STOP);
        let l = layout(a);
        assert_eq!(l.locals, vec![U256::from(0x60), U256::from(0x40)]);
        assert_eq!(l.lmap(U256::from(0x40)), Some(1));
    }

    #[test]
    fn mstore_example() {
        let mut a = Assembler::new();
        a.push(1).push(0x40).op(Opcode::MSTORE);
        a.push(2).push(0x60).op(Opcode::MSTORE).op(Opcode::STOP);
        let l = layout(a);
        assert_eq!(l.lmap(U256::from(0x40)), Some(0));
        assert_eq!(l.lmap(U256::from(0x60)), Some(1));
        assert_eq!(l.locals.len() - 1, 1);
    }

    #[test]
    fn highest_field_index() {
        let mut a = Assembler::new();
        a.push(9).push(2).op(Opcode::SSTORE).op(Opcode::STOP);
        let l = layout(a);
        assert_eq!(l.k(), Some(2));
        assert_eq!(l.params(), vec![Var::Field(0), Var::Field(1), Var::Field(2)]);
    }

    #[test]
    fn huge_keys_are_not_fields() {
        let mut a = Assembler::new();
        a.push(9).push_word(U256::MAX).op(Opcode::SSTORE).op(Opcode::STOP);
        assert_eq!(layout(a).fields, 0);
    }

    #[test]
    fn chain_vars_sorted() {
        let mut a = Assembler::new();
        a.op(Opcode::NUMBER).op(Opcode::GAS).op(Opcode::STOP);
        assert_eq!(layout(a).chain, vec![BlockchainVar::Gas, BlockchainVar::Number]);
    }

    #[test]
    fn calldata_sorted_by_offset() {
        let mut a = Assembler::new();
        a.push(36).op(Opcode::CALLDATALOAD).push(4).op(Opcode::CALLDATALOAD);
        a.op(Opcode::CALLER).op(Opcode::CALLDATALOAD).op(Opcode::STOP);
        let l = layout(a);
        assert_eq!(l.calldata, vec![U256::from(4), U256::from(36)]);
        assert_eq!(l.md_index(U256::from(36)), Some(1));
        assert_eq!(
            l.params(),
            vec![Var::Calldata(0), Var::Calldata(1), Var::Chain(BlockchainVar::Caller)]
        );
    }
}
