//! The EVM opcode table.
//!
//! One fixed table version is supported: the Shanghai instruction set
//! (PUSH0 included, no transient storage, no MCOPY, no blob opcodes).
//! Byte values that are unassigned in that version decode as INVALID-class
//! halting opcodes of size one, so decoding is total.

use std::fmt;

#[rustfmt::skip]
const NAMES: [&str; 256] = [
    // 0x00
    "STOP", "ADD", "MUL", "SUB", "DIV", "SDIV", "MOD", "SMOD", "ADDMOD", "MULMOD", "EXP", "SIGNEXTEND", "", "", "", "",
    // 0x10
    "LT", "GT", "SLT", "SGT", "EQ", "ISZERO", "AND", "OR", "XOR", "NOT", "BYTE", "SHL", "SHR", "SAR", "", "",
    // 0x20
    "SHA3", "", "", "", "", "", "", "", "", "", "", "", "", "", "", "",
    // 0x30
    "ADDRESS", "BALANCE", "ORIGIN", "CALLER", "CALLVALUE", "CALLDATALOAD", "CALLDATASIZE", "CALLDATACOPY",
    "CODESIZE", "CODECOPY", "GASPRICE", "EXTCODESIZE", "EXTCODECOPY", "RETURNDATASIZE", "RETURNDATACOPY", "EXTCODEHASH",
    // 0x40
    "BLOCKHASH", "COINBASE", "TIMESTAMP", "NUMBER", "DIFFICULTY", "GASLIMIT", "CHAINID", "SELFBALANCE",
    "BASEFEE", "", "", "", "", "", "", "",
    // 0x50
    "POP", "MLOAD", "MSTORE", "MSTORE8", "SLOAD", "SSTORE", "JUMP", "JUMPI", "PC", "MSIZE", "GAS", "JUMPDEST",
    "", "", "", "PUSH0",
    // 0x60
    "PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6", "PUSH7", "PUSH8",
    "PUSH9", "PUSH10", "PUSH11", "PUSH12", "PUSH13", "PUSH14", "PUSH15", "PUSH16",
    // 0x70
    "PUSH17", "PUSH18", "PUSH19", "PUSH20", "PUSH21", "PUSH22", "PUSH23", "PUSH24",
    "PUSH25", "PUSH26", "PUSH27", "PUSH28", "PUSH29", "PUSH30", "PUSH31", "PUSH32",
    // 0x80
    "DUP1", "DUP2", "DUP3", "DUP4", "DUP5", "DUP6", "DUP7", "DUP8",
    "DUP9", "DUP10", "DUP11", "DUP12", "DUP13", "DUP14", "DUP15", "DUP16",
    // 0x90
    "SWAP1", "SWAP2", "SWAP3", "SWAP4", "SWAP5", "SWAP6", "SWAP7", "SWAP8",
    "SWAP9", "SWAP10", "SWAP11", "SWAP12", "SWAP13", "SWAP14", "SWAP15", "SWAP16",
    // 0xa0
    "LOG0", "LOG1", "LOG2", "LOG3", "LOG4", "", "", "", "", "", "", "", "", "", "", "",
    // 0xb0
    "", "", "", "", "", "", "", "", "", "", "", "", "", "", "", "",
    // 0xc0
    "", "", "", "", "", "", "", "", "", "", "", "", "", "", "", "",
    // 0xd0
    "", "", "", "", "", "", "", "", "", "", "", "", "", "", "", "",
    // 0xe0
    "", "", "", "", "", "", "", "", "", "", "", "", "", "", "", "",
    // 0xf0
    "CREATE", "CALL", "CALLCODE", "RETURN", "DELEGATECALL", "CREATE2", "", "",
    "", "", "STATICCALL", "", "", "REVERT", "INVALID", "SELFDESTRUCT",
];

/// A single opcode byte together with its static properties.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Opcode(pub u8);

macro_rules! opcodes {
    ($($name:ident = $code:expr),* $(,)?) => {
        impl Opcode {
            $(pub const $name: Opcode = Opcode($code);)*
        }
    };
}

opcodes! {
    STOP = 0x00, ADD = 0x01, MUL = 0x02, SUB = 0x03, DIV = 0x04, SDIV = 0x05, MOD = 0x06, SMOD = 0x07,
    ADDMOD = 0x08, MULMOD = 0x09, EXP = 0x0a, SIGNEXTEND = 0x0b,
    LT = 0x10, GT = 0x11, SLT = 0x12, SGT = 0x13, EQ = 0x14, ISZERO = 0x15, AND = 0x16, OR = 0x17,
    XOR = 0x18, NOT = 0x19, BYTE = 0x1a, SHL = 0x1b, SHR = 0x1c, SAR = 0x1d,
    SHA3 = 0x20,
    ADDRESS = 0x30, BALANCE = 0x31, ORIGIN = 0x32, CALLER = 0x33, CALLVALUE = 0x34, CALLDATALOAD = 0x35,
    CALLDATASIZE = 0x36, CALLDATACOPY = 0x37, CODESIZE = 0x38, CODECOPY = 0x39, GASPRICE = 0x3a,
    EXTCODESIZE = 0x3b, EXTCODECOPY = 0x3c, RETURNDATASIZE = 0x3d, RETURNDATACOPY = 0x3e, EXTCODEHASH = 0x3f,
    BLOCKHASH = 0x40, COINBASE = 0x41, TIMESTAMP = 0x42, NUMBER = 0x43, DIFFICULTY = 0x44, GASLIMIT = 0x45,
    CHAINID = 0x46, SELFBALANCE = 0x47, BASEFEE = 0x48,
    POP = 0x50, MLOAD = 0x51, MSTORE = 0x52, MSTORE8 = 0x53, SLOAD = 0x54, SSTORE = 0x55, JUMP = 0x56,
    JUMPI = 0x57, PC = 0x58, MSIZE = 0x59, GAS = 0x5a, JUMPDEST = 0x5b, PUSH0 = 0x5f,
    PUSH1 = 0x60, PUSH2 = 0x61, PUSH4 = 0x63, PUSH32 = 0x7f,
    DUP1 = 0x80, DUP2 = 0x81, DUP3 = 0x82, DUP16 = 0x8f,
    SWAP1 = 0x90, SWAP2 = 0x91, SWAP16 = 0x9f,
    LOG0 = 0xa0, LOG4 = 0xa4,
    CREATE = 0xf0, CALL = 0xf1, CALLCODE = 0xf2, RETURN = 0xf3, DELEGATECALL = 0xf4, CREATE2 = 0xf5,
    STATICCALL = 0xfa, REVERT = 0xfd, INVALID = 0xfe, SELFDESTRUCT = 0xff,
}

impl Opcode {
    pub fn code(self) -> u8 {
        self.0
    }

    /// `false` for byte values with no instruction in the supported table.
    pub fn is_assigned(self) -> bool {
        !NAMES[self.0 as usize].is_empty()
    }

    pub fn mnemonic(self) -> &'static str {
        match NAMES[self.0 as usize] {
            "" => "INVALID",
            name => name,
        }
    }

    /// Looks an opcode up by mnemonic. Unassigned bytes are not reachable by name.
    pub fn from_mnemonic(name: &str) -> Option<Opcode> {
        NAMES
            .iter()
            .position(|n| !n.is_empty() && *n == name)
            .map(|i| Opcode(i as u8))
    }

    /// `PUSHn` for `n` in 1..=32, `PUSH0` for 0.
    pub fn push(n: usize) -> Opcode {
        assert!(n <= 32, "PUSH{n} does not exist");
        Opcode(0x5f + n as u8)
    }

    pub fn dup(n: usize) -> Opcode {
        assert!((1..=16).contains(&n), "DUP{n} does not exist");
        Opcode(0x7f + n as u8)
    }

    pub fn swap(n: usize) -> Opcode {
        assert!((1..=16).contains(&n), "SWAP{n} does not exist");
        Opcode(0x8f + n as u8)
    }

    /// Bytes of inline data following the opcode byte.
    pub fn immediate_len(self) -> usize {
        match self.0 {
            0x60..=0x7f => (self.0 - 0x5f) as usize,
            _ => 0,
        }
    }

    /// `Some(n)` for PUSH0..PUSH32.
    pub fn push_size(self) -> Option<usize> {
        match self.0 {
            0x5f..=0x7f => Some((self.0 - 0x5f) as usize),
            _ => None,
        }
    }

    pub fn dup_depth(self) -> Option<usize> {
        match self.0 {
            0x80..=0x8f => Some((self.0 - 0x7f) as usize),
            _ => None,
        }
    }

    pub fn swap_depth(self) -> Option<usize> {
        match self.0 {
            0x90..=0x9f => Some((self.0 - 0x8f) as usize),
            _ => None,
        }
    }

    /// Stack items consumed.
    pub fn delta(self) -> usize {
        self.stack_io().0
    }

    /// Stack items produced.
    pub fn alpha(self) -> usize {
        self.stack_io().1
    }

    fn stack_io(self) -> (usize, usize) {
        if !self.is_assigned() {
            return (0, 0);
        }
        match self.0 {
            0x00 => (0, 0),
            0x01..=0x07 | 0x0a | 0x0b => (2, 1),
            0x08 | 0x09 => (3, 1),
            0x10..=0x14 | 0x16..=0x18 | 0x1a..=0x1d => (2, 1),
            0x15 | 0x19 => (1, 1),
            0x20 => (2, 1),
            0x30 | 0x32..=0x34 | 0x36 | 0x38 | 0x3a | 0x3d => (0, 1),
            0x31 | 0x35 | 0x3b | 0x3f => (1, 1),
            0x37 | 0x39 | 0x3e => (3, 0),
            0x3c => (4, 0),
            0x40 => (1, 1),
            0x41..=0x48 => (0, 1),
            0x50 => (1, 0),
            0x51 | 0x54 => (1, 1),
            0x52 | 0x53 | 0x55 => (2, 0),
            0x56 => (1, 0),
            0x57 => (2, 0),
            0x58..=0x5a => (0, 1),
            0x5b => (0, 0),
            0x5f..=0x7f => (0, 1),
            0x80..=0x8f => {
                let n = (self.0 - 0x7f) as usize;
                (n, n + 1)
            }
            0x90..=0x9f => {
                let n = (self.0 - 0x8f) as usize;
                (n + 1, n + 1)
            }
            0xa0..=0xa4 => ((self.0 - 0xa0) as usize + 2, 0),
            0xf0 => (3, 1),
            0xf1 | 0xf2 => (7, 1),
            0xf3 => (2, 0),
            0xf4 | 0xfa => (6, 1),
            0xf5 => (4, 1),
            0xfd => (2, 0),
            0xfe => (0, 0),
            0xff => (1, 0),
            _ => unreachable!("assigned opcode {:#04x} missing from stack table", self.0),
        }
    }

    /// Execution cannot continue past this opcode.
    pub fn is_halting(self) -> bool {
        !self.is_assigned()
            || matches!(
                self,
                Opcode::STOP | Opcode::RETURN | Opcode::REVERT | Opcode::INVALID | Opcode::SELFDESTRUCT
            )
    }

    pub fn is_jump(self) -> bool {
        matches!(self, Opcode::JUMP | Opcode::JUMPI)
    }

    /// Ends a basic block: a jump or a halting opcode.
    pub fn ends_block(self) -> bool {
        self.is_jump() || self.is_halting()
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl fmt::Debug for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_assigned() {
            f.write_str(self.mnemonic())
        } else {
            write!(f, "INVALID({:#04x})", self.0)
        }
    }
}
