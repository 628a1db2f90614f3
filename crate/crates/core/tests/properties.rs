use std::collections::BTreeMap;

use num_bigint::{BigInt, Sign};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evm2rbr::asm::{assemble, disassemble, AsmError, Instruction};
use evm2rbr::cfg::{emit_dot, resolve_cfg, split_blocks};
use evm2rbr::emit::{emit_rbr, parse_rbr, EmitOptions};
use evm2rbr::opcode::Opcode;
use evm2rbr::oracle::fixtures::corpus;
use evm2rbr::oracle::{differential_check, run_rbr, translate, ProgramGenerator, RbrError, RbrState};
use evm2rbr::rbr::Var;
use evm2rbr::U256;

fn instruction() -> impl Strategy<Value = (u8, [u8; 32])> {
    (any::<u8>(), any::<[u8; 32]>())
}

fn stream(raw: Vec<(u8, [u8; 32])>) -> Vec<Instruction> {
    let mut offset = 0;
    raw.into_iter()
        .map(|(b, bytes)| {
            let op = Opcode(b);
            let ins = match op.push_size() {
                Some(n) if n > 0 => {
                    let mut word = [0u8; 32];
                    word[32 - n..].copy_from_slice(&bytes[32 - n..]);
                    Instruction::push(offset, op, U256::from_be_bytes(word))
                }
                _ => Instruction::new(offset, op),
            };
            offset = ins.next_offset();
            ins
        })
        .collect()
}

proptest! {
    #[test]
    fn decode_inverts_encode(raw in prop::collection::vec(instruction(), 0..64)) {
        let instrs = stream(raw);
        prop_assert_eq!(disassemble(&assemble(&instrs).unwrap()).unwrap(), instrs);
    }

    #[test]
    fn encode_inverts_decode(code in prop::collection::vec(any::<u8>(), 0..256)) {
        match disassemble(&code) {
            Ok(instrs) => prop_assert_eq!(assemble(&instrs).unwrap(), code),
            Err(e) => prop_assert!(matches!(e, AsmError::TruncatedPush(_))),
        }
    }

    #[test]
    fn generated_programs_round_trip_and_agree(seed in any::<u64>()) {
        let code = ProgramGenerator::new(seed).generate();
        let p = translate(&code).unwrap();
        let text = emit_rbr(&p, EmitOptions::default());
        prop_assert_eq!(emit_rbr(&p, EmitOptions::default()), text.clone());
        prop_assert_eq!(parse_rbr(&text).unwrap(), p);
        let cfg = resolve_cfg(&split_blocks(&disassemble(&code).unwrap()));
        prop_assert_eq!(emit_dot(&cfg), emit_dot(&resolve_cfg(&split_blocks(&disassemble(&code).unwrap()))));
        let r = differential_check(&code, 5, seed).unwrap();
        prop_assert_eq!(r.divergent, 0, "{}", r);
    }
}

fn random_word(rng: &mut ChaCha8Rng) -> BigInt {
    let bytes: [u8; 32] = rng.gen();
    match rng.gen_range(0..4) {
        0 => BigInt::from(rng.gen_range(0u32..3)),
        1 => BigInt::from(rng.gen_range(0u32..1 << 16)),
        _ => BigInt::from_bytes_be(Sign::Plus, &bytes),
    }
}

/// Guard pairs are complementary, so no initial state leaves a conditional
/// jump without exactly one applicable rule.
#[test]
fn guards_always_select_one_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let programs: Vec<_> = corpus()
        .into_iter()
        .map(|(_, code)| translate(&code).unwrap())
        .collect();
    let mut runs = 0u64;
    while runs < 10_000 {
        for p in &programs {
            let l = &p.layout;
            let vars = (0..l.fields)
                .map(Var::Field)
                .chain((0..l.locals.len()).map(Var::Local))
                .chain((0..l.calldata.len()).map(Var::Calldata))
                .chain(l.chain.iter().map(|b| Var::Chain(*b)));
            let bindings: BTreeMap<Var, BigInt> = vars.map(|v| (v, random_word(&mut rng))).collect();
            let init = RbrState { bindings, rule: None };
            match run_rbr(p, &init, 5_000, runs) {
                Err(e @ (RbrError::NoApplicableRule(_) | RbrError::AmbiguousRule(_))) => panic!("{e}"),
                _ => runs += 1,
            }
        }
    }
}
