//! Lifts EVM bytecode into a rule-based representation (RBR): guarded rules
//! over explicit stack, field, local-memory and blockchain-data variables.
//!
//! The pipeline is [`asm::disassemble`] → [`cfg::split_blocks`] →
//! [`cfg::resolve_cfg`] → [`rbr::translate_cfg`] → [`emit::emit_rbr`].

pub mod asm;
pub mod cfg;
pub mod emit;
pub mod opcode;
pub mod oracle;
pub mod rbr;

pub use ruint::aliases::U256;
