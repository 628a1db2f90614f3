//! The rule-based representation and the translation from a resolved CFG.
//!
//! A program is a list of rules. `block_<id>` rules carry the statements of
//! one CFG block and an optional continuation call; conditional jumps add a
//! pair of guarded `jump_<id>` rules whose guards are complementary.
//!
//! Every rule takes the same non-stack parameters, in this order: contract
//! fields `g0..gk`, memory locals `l0..lr`, calldata words `md0..mdq`, then
//! named blockchain quantities in alphabetical order. Stack parameters
//! `s0..sn` come first, with `s0` at the bottom.

mod layout;
mod translate;

use std::fmt;
use std::str::FromStr;

pub use layout::{build_layout, VarLayout, FIELD_INDEX_LIMIT};
pub use translate::{
    tau, tau_guard, translate_block, translate_cfg, GuardPair, TranslateError, TranslateOptions, Translation,
    TranslationState, Warning,
};

use crate::cfg::BlockId;
use crate::opcode::Opcode;
use crate::U256;

/// Blockchain quantities read by dedicated opcodes. Declaration order is
/// alphabetical, which is also the canonical parameter order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockchainVar {
    Address,
    Calldatasize,
    Caller,
    Callvalue,
    Coinbase,
    Difficulty,
    Gas,
    Gaslimit,
    Gasprice,
    Number,
    Origin,
    Timestamp,
}

impl BlockchainVar {
    pub const ALL: [BlockchainVar; 12] = [
        BlockchainVar::Address,
        BlockchainVar::Calldatasize,
        BlockchainVar::Caller,
        BlockchainVar::Callvalue,
        BlockchainVar::Coinbase,
        BlockchainVar::Difficulty,
        BlockchainVar::Gas,
        BlockchainVar::Gaslimit,
        BlockchainVar::Gasprice,
        BlockchainVar::Number,
        BlockchainVar::Origin,
        BlockchainVar::Timestamp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockchainVar::Address => "address",
            BlockchainVar::Caller => "caller",
            BlockchainVar::Calldatasize => "calldatasize",
            BlockchainVar::Callvalue => "callvalue",
            BlockchainVar::Coinbase => "coinbase",
            BlockchainVar::Difficulty => "difficulty",
            BlockchainVar::Gas => "gas",
            BlockchainVar::Gaslimit => "gaslimit",
            BlockchainVar::Gasprice => "gasprice",
            BlockchainVar::Number => "number",
            BlockchainVar::Origin => "origin",
            BlockchainVar::Timestamp => "timestamp",
        }
    }

    /// The variable read by `op`, if it is a blockchain-data opcode.
    pub fn of_opcode(op: Opcode) -> Option<BlockchainVar> {
        Some(match op {
            Opcode::ADDRESS => BlockchainVar::Address,
            Opcode::CALLER => BlockchainVar::Caller,
            Opcode::CALLDATASIZE => BlockchainVar::Calldatasize,
            Opcode::CALLVALUE => BlockchainVar::Callvalue,
            Opcode::COINBASE => BlockchainVar::Coinbase,
            Opcode::DIFFICULTY => BlockchainVar::Difficulty,
            Opcode::GAS => BlockchainVar::Gas,
            Opcode::GASLIMIT => BlockchainVar::Gaslimit,
            Opcode::GASPRICE => BlockchainVar::Gasprice,
            Opcode::NUMBER => BlockchainVar::Number,
            Opcode::ORIGIN => BlockchainVar::Origin,
            Opcode::TIMESTAMP => BlockchainVar::Timestamp,
            _ => return None,
        })
    }

    pub fn opcode(self) -> Opcode {
        match self {
            BlockchainVar::Address => Opcode::ADDRESS,
            BlockchainVar::Caller => Opcode::CALLER,
            BlockchainVar::Calldatasize => Opcode::CALLDATASIZE,
            BlockchainVar::Callvalue => Opcode::CALLVALUE,
            BlockchainVar::Coinbase => Opcode::COINBASE,
            BlockchainVar::Difficulty => Opcode::DIFFICULTY,
            BlockchainVar::Gas => Opcode::GAS,
            BlockchainVar::Gaslimit => Opcode::GASLIMIT,
            BlockchainVar::Gasprice => Opcode::GASPRICE,
            BlockchainVar::Number => Opcode::NUMBER,
            BlockchainVar::Origin => Opcode::ORIGIN,
            BlockchainVar::Timestamp => Opcode::TIMESTAMP,
        }
    }
}

/// An RBR variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    /// `s<i>`, stack slot `i` counted from the bottom.
    Stack(usize),
    /// `g<i>`, contract field `i`.
    Field(usize),
    /// `l<i>`, memory local `i`.
    Local(usize),
    /// `md<i>`, calldata word `i`.
    Calldata(usize),
    Chain(BlockchainVar),
    /// `gl`: the key of a field load with unknown key.
    FieldKey,
    /// `ll`: the address of a memory load with unknown address.
    LocalKey,
    /// `gs1` (value) and `gs2` (key) of a field store with unknown key.
    FieldStore(u8),
    /// `ls1` (value) and `ls2` (address) of a memory store with unknown address.
    LocalStore(u8),
    /// `fresh_<i>`, an unknown value.
    Fresh(usize),
}

impl Var {
    /// Rule-local scratch variables that are never passed across calls.
    pub fn is_rule_local(self) -> bool {
        matches!(
            self,
            Var::FieldKey | Var::LocalKey | Var::FieldStore(_) | Var::LocalStore(_) | Var::Fresh(_)
        )
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Stack(i) => write!(f, "s{i}"),
            Var::Field(i) => write!(f, "g{i}"),
            Var::Local(i) => write!(f, "l{i}"),
            Var::Calldata(i) => write!(f, "md{i}"),
            Var::Chain(b) => f.write_str(b.name()),
            Var::FieldKey => f.write_str("gl"),
            Var::LocalKey => f.write_str("ll"),
            Var::FieldStore(i) => write!(f, "gs{i}"),
            Var::LocalStore(i) => write!(f, "ls{i}"),
            Var::Fresh(i) => write!(f, "fresh_{i}"),
        }
    }
}

impl FromStr for Var {
    type Err = ();

    fn from_str(s: &str) -> Result<Var, ()> {
        fn index(s: &str) -> Option<usize> {
            if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
                return None;
            }
            s.parse().ok()
        }
        let var = match s {
            "gl" => Var::FieldKey,
            "ll" => Var::LocalKey,
            "gs1" => Var::FieldStore(1),
            "gs2" => Var::FieldStore(2),
            "ls1" => Var::LocalStore(1),
            "ls2" => Var::LocalStore(2),
            _ => {
                if let Some(b) = BlockchainVar::ALL.iter().find(|b| b.name() == s) {
                    Var::Chain(*b)
                } else if let Some(i) = s.strip_prefix("fresh_").and_then(index) {
                    Var::Fresh(i)
                } else if let Some(i) = s.strip_prefix("md").and_then(index) {
                    Var::Calldata(i)
                } else if let Some(i) = s.strip_prefix('s').and_then(index) {
                    Var::Stack(i)
                } else if let Some(i) = s.strip_prefix('g').and_then(index) {
                    Var::Field(i)
                } else if let Some(i) = s.strip_prefix('l').and_then(index) {
                    Var::Local(i)
                } else {
                    return Err(());
                }
            }
        };
        Ok(var)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Pow,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
            ArithOp::Mod => "%",
            ArithOp::Pow => "^",
        }
    }

    pub fn of_opcode(op: Opcode) -> Option<ArithOp> {
        Some(match op {
            Opcode::ADD => ArithOp::Add,
            Opcode::SUB => ArithOp::Sub,
            Opcode::MUL => ArithOp::Mul,
            Opcode::DIV => ArithOp::Div,
            Opcode::MOD => ArithOp::Mod,
            Opcode::EXP => ArithOp::Pow,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BitOp {
    And,
    Or,
    Xor,
}

impl BitOp {
    pub fn name(self) -> &'static str {
        match self {
            BitOp::And => "and",
            BitOp::Or => "or",
            BitOp::Xor => "xor",
        }
    }

    pub fn of_opcode(op: Opcode) -> Option<BitOp> {
        Some(match op {
            Opcode::AND => BitOp::And,
            Opcode::OR => BitOp::Or,
            Opcode::XOR => BitOp::Xor,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Num(U256),
    Var(Var),
    Arith(ArithOp, Box<Expr>, Box<Expr>),
    Bit(BitOp, Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

impl Expr {
    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn arith(op: ArithOp, a: Var, b: Var) -> Expr {
        Expr::Arith(op, Box::new(Expr::Var(a)), Box::new(Expr::Var(b)))
    }

    pub fn bit(op: BitOp, a: Var, b: Var) -> Expr {
        Expr::Bit(op, Box::new(Expr::Var(a)), Box::new(Expr::Var(b)))
    }

    pub fn has_bit_ops(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Var(_) => false,
            Expr::Arith(_, a, b) => a.has_bit_ops() || b.has_bit_ops(),
            Expr::Bit(..) | Expr::Not(_) => true,
        }
    }

    pub fn is_atom(&self) -> bool {
        matches!(self, Expr::Num(_) | Expr::Var(_))
    }

    /// Variables read, left to right.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<Var>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => out.push(*v),
            Expr::Arith(_, a, b) | Expr::Bit(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Not(a) => a.collect_vars(out),
        }
    }

    /// Applies `f` to every variable occurrence.
    pub fn map_vars(&mut self, f: &mut impl FnMut(&mut Var)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => f(v),
            Expr::Arith(_, a, b) | Expr::Bit(_, a, b) => {
                a.map_vars(f);
                b.map_vars(f);
            }
            Expr::Not(a) => a.map_vars(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Statement {
    Assign(Var, Expr),
    /// The original bytecode mnemonic, kept for downstream cost accounting.
    Nop(&'static str),
}

impl Statement {
    pub fn assign(target: Var, value: Expr) -> Statement {
        Statement::Assign(target, value)
    }

    pub fn copy(target: Var, source: Var) -> Statement {
        Statement::Assign(target, Expr::Var(source))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    Eq,
    Neq,
    Lt,
    Leq,
    Gt,
    Geq,
}

impl Relation {
    pub const ALL: [Relation; 6] = [
        Relation::Eq,
        Relation::Neq,
        Relation::Lt,
        Relation::Leq,
        Relation::Gt,
        Relation::Geq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::Eq => "eq",
            Relation::Neq => "neq",
            Relation::Lt => "lt",
            Relation::Leq => "leq",
            Relation::Gt => "gt",
            Relation::Geq => "geq",
        }
    }

    pub fn negate(self) -> Relation {
        match self {
            Relation::Eq => Relation::Neq,
            Relation::Neq => Relation::Eq,
            Relation::Lt => Relation::Geq,
            Relation::Geq => Relation::Lt,
            Relation::Gt => Relation::Leq,
            Relation::Leq => Relation::Gt,
        }
    }

    pub fn holds<T: Ord>(self, a: &T, b: &T) -> bool {
        match self {
            Relation::Eq => a == b,
            Relation::Neq => a != b,
            Relation::Lt => a < b,
            Relation::Leq => a <= b,
            Relation::Gt => a > b,
            Relation::Geq => a >= b,
        }
    }
}

/// Guard operand: a variable or a numeral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    Var(Var),
    Num(U256),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Var(v) => write!(f, "{v}"),
            Operand::Num(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Guard {
    pub relation: Relation,
    pub lhs: Operand,
    pub rhs: Operand,
}

impl Guard {
    pub fn new(relation: Relation, lhs: Operand, rhs: Operand) -> Guard {
        Guard { relation, lhs, rhs }
    }

    pub fn negate(self) -> Guard {
        Guard {
            relation: self.relation.negate(),
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleKind {
    Block,
    Jump,
}

/// `block_<id>` or `jump_<id>`. Orders by block id, block rules first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RuleName {
    pub id: BlockId,
    pub kind: RuleKind,
}

impl RuleName {
    pub fn block(id: BlockId) -> RuleName {
        RuleName {
            id,
            kind: RuleKind::Block,
        }
    }

    pub fn jump(id: BlockId) -> RuleName {
        RuleName {
            id,
            kind: RuleKind::Jump,
        }
    }
}

impl fmt::Display for RuleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            RuleKind::Block => write!(f, "block_{}", self.id),
            RuleKind::Jump => write!(f, "jump_{}", self.id),
        }
    }
}

impl FromStr for RuleName {
    type Err = ();

    fn from_str(s: &str) -> Result<RuleName, ()> {
        if let Some(id) = s.strip_prefix("block_") {
            Ok(RuleName::block(id.parse()?))
        } else if let Some(id) = s.strip_prefix("jump_") {
            Ok(RuleName::jump(id.parse()?))
        } else {
            Err(())
        }
    }
}

/// Continuation call, passing `s0..s<stack_args-1>` and the shared parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Call {
    pub target: RuleName,
    pub stack_args: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    pub name: RuleName,
    /// Number of stack parameters `s0..s<n>`.
    pub stack_params: usize,
    /// Present exactly on `jump_` rules.
    pub guard: Option<Guard>,
    pub body: Vec<Statement>,
    pub call: Option<Call>,
}

impl Rule {
    /// Highest `fresh_<i>` index assigned in the body, plus one.
    pub fn fresh_count(&self) -> usize {
        self.body
            .iter()
            .filter_map(|s| match s {
                Statement::Assign(Var::Fresh(i), _) => Some(i + 1),
                Statement::Assign(_, e) => e
                    .vars()
                    .iter()
                    .filter_map(|v| match v {
                        Var::Fresh(i) => Some(i + 1),
                        _ => None,
                    })
                    .max(),
                Statement::Nop(_) => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn without_nops(&self) -> Rule {
        Rule {
            body: self
                .body
                .iter()
                .filter(|s| !matches!(s, Statement::Nop(_)))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }
}

/// A translated program: the shared variable layout plus its rules, in
/// ascending rule-name order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub layout: VarLayout,
    pub rules: Vec<Rule>,
}

impl Program {
    /// The first `block_` rule at PC 0.
    pub fn entry(&self) -> Option<RuleName> {
        self.rules
            .iter()
            .map(|r| r.name)
            .find(|n| n.kind == RuleKind::Block && n.id.pc == 0)
    }

    pub fn rules_named(&self, name: RuleName) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(move |r| r.name == name)
    }

    pub fn without_nops(&self) -> Program {
        Program {
            layout: self.layout.clone(),
            rules: self.rules.iter().map(Rule::without_nops).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn var_names_round_trip() {
        let vars = [
            Var::Stack(0),
            Var::Stack(12),
            Var::Field(3),
            Var::Local(1),
            Var::Calldata(2),
            Var::Chain(BlockchainVar::Gas),
            Var::Chain(BlockchainVar::Gaslimit),
            Var::FieldKey,
            Var::LocalKey,
            Var::FieldStore(1),
            Var::LocalStore(2),
            Var::Fresh(7),
        ];
        for v in vars {
            assert_eq!(v.to_string().parse::<Var>(), Ok(v), "{v}");
        }
        assert!("s01".parse::<Var>().is_err());
        assert!("gs3".parse::<Var>().is_err());
        assert!("x".parse::<Var>().is_err());
    }

    #[test]
    fn blockchain_vars_are_alphabetical() {
        let names: Vec<_> = BlockchainVar::ALL.iter().map(|b| b.name()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        for b in BlockchainVar::ALL {
            assert_eq!(BlockchainVar::of_opcode(b.opcode()), Some(b));
        }
    }

    #[test]
    fn relations_negate_to_complement() {
        for r in Relation::ALL {
            assert_eq!(r.negate().negate(), r);
            for a in 0..3 {
                for b in 0..3 {
                    assert_ne!(r.holds(&a, &b), r.negate().holds(&a, &b));
                }
            }
        }
    }

    #[test]
    fn rule_names() {
        assert_eq!(RuleName::jump(BlockId::cloned(52, 1)).to_string(), "jump_52_c1");
        assert_eq!("block_3".parse(), Ok(RuleName::block(BlockId::new(3))));
        assert!(RuleName::block(BlockId::new(3)) < RuleName::jump(BlockId::new(3)));
        assert!(RuleName::jump(BlockId::new(3)) < RuleName::block(BlockId::new(4)));
    }
}
