//! Bytecode decoding, encoding and the hex text format.

use std::fmt;

use thiserror::Error;

use crate::opcode::Opcode;
use crate::U256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("truncated PUSH at offset {0}")]
    TruncatedPush(usize),
    #[error("inconsistent offsets: instruction {index} is at {found}, expected {expected}")]
    InconsistentOffsets {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("malformed immediate for {opcode:?} at offset {offset}")]
    MalformedImmediate { offset: usize, opcode: Opcode },
    #[error("odd number of hex digits")]
    OddDigitCount,
    #[error("non-hex character at position {0}")]
    NonHexCharacter(usize),
}

/// One decoded opcode with its byte offset and inline push data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub offset: usize,
    pub opcode: Opcode,
    pub immediate: Option<U256>,
}

impl Instruction {
    pub fn new(offset: usize, opcode: Opcode) -> Self {
        Instruction {
            offset,
            opcode,
            immediate: None,
        }
    }

    pub fn push(offset: usize, opcode: Opcode, value: U256) -> Self {
        Instruction {
            offset,
            opcode,
            immediate: Some(value),
        }
    }

    /// Encoded size in bytes.
    pub fn size(&self) -> usize {
        1 + self.opcode.immediate_len()
    }

    /// Offset of the instruction that follows this one in the byte stream.
    pub fn next_offset(&self) -> usize {
        self.offset + self.size()
    }

    /// The value this instruction pushes when it is a PUSH (PUSH0 pushes zero).
    pub fn push_value(&self) -> Option<U256> {
        match self.opcode.push_size()? {
            0 => Some(U256::ZERO),
            _ => self.immediate,
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.offset, self.opcode.mnemonic())?;
        if let Some(imm) = &self.immediate {
            write!(f, " {imm:#x}")?;
        }
        Ok(())
    }
}

pub fn disassemble(code: &[u8]) -> Result<Vec<Instruction>, AsmError> {
    let mut out = Vec::with_capacity(code.len());
    let mut pc = 0;
    while pc < code.len() {
        let opcode = Opcode(code[pc]);
        let len = opcode.immediate_len();
        if len == 0 {
            out.push(Instruction::new(pc, opcode));
        } else {
            let data = code.get(pc + 1..pc + 1 + len).ok_or(AsmError::TruncatedPush(pc))?;
            out.push(Instruction::push(pc, opcode, U256::from_be_slice(data)));
        }
        pc += 1 + len;
    }
    Ok(out)
}

pub fn assemble(instrs: &[Instruction]) -> Result<Vec<u8>, AsmError> {
    let mut out = Vec::new();
    for (index, ins) in instrs.iter().enumerate() {
        if ins.offset != out.len() {
            return Err(AsmError::InconsistentOffsets {
                index,
                expected: out.len(),
                found: ins.offset,
            });
        }
        out.push(ins.opcode.code());
        let len = ins.opcode.immediate_len();
        match (&ins.immediate, len) {
            (None, 0) => {}
            (Some(v), n) if n > 0 && v.bit_len() <= 8 * n => {
                let bytes = v.to_be_bytes::<32>();
                out.extend_from_slice(&bytes[32 - n..]);
            }
            _ => {
                return Err(AsmError::MalformedImmediate {
                    offset: ins.offset,
                    opcode: ins.opcode,
                })
            }
        }
    }
    Ok(out)
}

/// Parses hex text with an optional `0x` prefix; ASCII whitespace is ignored.
pub fn parse_hex(text: &str) -> Result<Vec<u8>, AsmError> {
    let trimmed = text.trim_start();
    let start = text.len() - trimmed.len();
    let (start, body) = match trimmed.strip_prefix("0x").or_else(|| trimmed.strip_prefix("0X")) {
        Some(rest) => (start + 2, rest),
        None => (start, trimmed),
    };
    let mut nibbles = Vec::with_capacity(body.len());
    for (i, c) in body.char_indices() {
        if c.is_ascii_whitespace() {
            continue;
        }
        let d = c.to_digit(16).ok_or(AsmError::NonHexCharacter(start + i))?;
        nibbles.push(d as u8);
    }
    if nibbles.len() % 2 != 0 {
        return Err(AsmError::OddDigitCount);
    }
    Ok(nibbles.chunks(2).map(|p| (p[0] << 4) | p[1]).collect())
}

pub fn to_hex(code: &[u8]) -> String {
    code.iter().map(|b| format!("{b:02x}")).collect()
}

/// One instruction per line, `<offset>: <MNEMONIC>[ 0x<imm>]`.
pub fn listing(instrs: &[Instruction]) -> String {
    let mut out = String::new();
    for ins in instrs {
        out.push_str(&ins.to_string());
        out.push('\n');
    }
    out
}

/// Jump label handed out by [`Assembler::label`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Label(usize);

/// A small label-resolving assembler for building bytecode fixtures.
///
/// Label references are always encoded as PUSH2, so code is limited to 64 KiB.
#[derive(Debug, Default)]
pub struct Assembler {
    code: Vec<u8>,
    labels: Vec<Option<usize>>,
    fixups: Vec<(usize, Label)>,
}

impl Assembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.code.len()
    }

    pub fn is_empty(&self) -> bool {
        self.code.is_empty()
    }

    pub fn op(&mut self, op: Opcode) -> &mut Self {
        assert_eq!(op.immediate_len(), 0, "use push() for {op}");
        self.code.push(op.code());
        self
    }

    pub fn ops(&mut self, ops: &[Opcode]) -> &mut Self {
        for op in ops {
            self.op(*op);
        }
        self
    }

    pub fn push(&mut self, value: u64) -> &mut Self {
        self.push_word(U256::from(value))
    }

    /// Pushes `value` with the shortest PUSHn that holds it (PUSH1 for zero).
    pub fn push_word(&mut self, value: U256) -> &mut Self {
        let n = value.byte_len().max(1);
        self.code.push(Opcode::push(n).code());
        let bytes = value.to_be_bytes::<32>();
        self.code.extend_from_slice(&bytes[32 - n..]);
        self
    }

    pub fn label(&mut self) -> Label {
        self.labels.push(None);
        Label(self.labels.len() - 1)
    }

    pub fn push_label(&mut self, label: Label) -> &mut Self {
        self.code.push(Opcode::PUSH2.code());
        self.fixups.push((self.code.len(), label));
        self.code.extend_from_slice(&[0, 0]);
        self
    }

    /// Binds `label` here and emits its JUMPDEST.
    pub fn place(&mut self, label: Label) -> &mut Self {
        assert!(self.labels[label.0].is_none(), "label placed twice");
        self.labels[label.0] = Some(self.code.len());
        self.op(Opcode::JUMPDEST)
    }

    pub fn jump_to(&mut self, label: Label) -> &mut Self {
        self.push_label(label).op(Opcode::JUMP)
    }

    pub fn jumpi_to(&mut self, label: Label) -> &mut Self {
        self.push_label(label).op(Opcode::JUMPI)
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.code.extend_from_slice(bytes);
        self
    }

    pub fn finish(mut self) -> Vec<u8> {
        for (pos, label) in std::mem::take(&mut self.fixups) {
            let target = self.labels[label.0].expect("label referenced but never placed");
            let target = u16::try_from(target).expect("label beyond PUSH2 range");
            self.code[pos..pos + 2].copy_from_slice(&target.to_be_bytes());
        }
        self.code
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dis(hex: &str) -> Result<Vec<Instruction>, AsmError> {
        disassemble(&parse_hex(hex).unwrap())
    }

    #[test]
    fn disassemble_push_add_stop() {
        let got = dis("600560040100").unwrap();
        assert_eq!(
            got,
            vec![
                Instruction::push(0, Opcode::PUSH1, U256::from(5)),
                Instruction::push(2, Opcode::PUSH1, U256::from(4)),
                Instruction::new(4, Opcode::ADD),
                Instruction::new(5, Opcode::STOP),
            ]
        );
        assert_eq!(
            dis("6005").unwrap(),
            vec![Instruction::push(0, Opcode::PUSH1, U256::from(5))]
        );
    }

    #[test]
    fn truncated_push() {
        assert_eq!(dis("60"), Err(AsmError::TruncatedPush(0)));
        assert_eq!(dis("00617f"), Err(AsmError::TruncatedPush(1)));
    }

    #[test]
    fn unknown_bytes_are_size_one() {
        let got = dis("0c0d00").unwrap();
        assert_eq!(got.len(), 3);
        assert!(!got[0].opcode.is_assigned());
        assert_eq!(got[1].offset, 1);
    }

    #[test]
    fn assemble_examples() {
        assert_eq!(assemble(&[Instruction::new(0, Opcode::STOP)]).unwrap(), vec![0x00]);
        let prog = vec![
            Instruction::push(0, Opcode::PUSH1, U256::from(3)),
            Instruction::new(2, Opcode::JUMP),
            Instruction::new(3, Opcode::JUMPDEST),
            Instruction::new(4, Opcode::STOP),
        ];
        assert_eq!(to_hex(&assemble(&prog).unwrap()), "6003565b00");
    }

    #[test]
    fn assemble_rejects_bad_offsets() {
        let prog = vec![Instruction::new(0, Opcode::STOP), Instruction::new(2, Opcode::STOP)];
        assert_eq!(
            assemble(&prog),
            Err(AsmError::InconsistentOffsets {
                index: 1,
                expected: 1,
                found: 2
            })
        );
    }

    #[test]
    fn assemble_rejects_wide_immediate() {
        let prog = vec![Instruction::push(0, Opcode::PUSH1, U256::from(256))];
        assert!(matches!(assemble(&prog), Err(AsmError::MalformedImmediate { .. })));
        let prog = vec![Instruction::new(0, Opcode::PUSH1)];
        assert!(matches!(assemble(&prog), Err(AsmError::MalformedImmediate { .. })));
    }

    #[test]
    fn hex_parsing() {
        assert_eq!(parse_hex("0x00").unwrap(), vec![0]);
        assert_eq!(parse_hex("60 05\n").unwrap(), vec![0x60, 0x05]);
        assert_eq!(parse_hex("0x0"), Err(AsmError::OddDigitCount));
        assert_eq!(parse_hex("0x0g"), Err(AsmError::NonHexCharacter(3)));
        assert_eq!(parse_hex("").unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn listing_format() {
        let text = listing(&dis("7f00000000000000000000000000000000000000000000000000000000000000ff00").unwrap());
        assert_eq!(text, "0: PUSH32 0xff\n33: STOP\n");
    }

    #[test]
    fn assembler_resolves_labels() {
        let mut a = Assembler::new();
        let l = a.label();
        a.jump_to(l).place(l).op(Opcode::STOP);
        assert_eq!(to_hex(&a.finish()), "610004565b00");
    }
}
