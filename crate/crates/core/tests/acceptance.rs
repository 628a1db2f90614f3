//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evm2rbr::asm::{assemble, disassemble, to_hex, Instruction};
use evm2rbr::cfg::{resolve_cfg, split_blocks, Terminator};
use evm2rbr::emit::{emit_rbr, export_saco, parse_rbr, saco_program, EmitOptions};
use evm2rbr::opcode::Opcode;
use evm2rbr::oracle::fixtures::{corpus, large_program, sequential_loops, two_callers};
use evm2rbr::oracle::mutate::{guard_flips, stack_index_mutations, Mutation};
use evm2rbr::oracle::{
    case_inputs, check_program, detect_loops, differential_check, rbr_init, run_rbr, translate, ProgramGenerator,
    DEFAULT_STEP_LIMIT,
};
use evm2rbr::rbr::{translate_cfg, Operand, Program, RuleKind, TranslateOptions, Var};
use evm2rbr::U256;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.2?}, limit {limit:?}"))?;
    Ok(t)
}

fn translated_corpus() -> Vec<(String, Vec<u8>, Program)> {
    corpus()
        .into_iter()
        .map(|(name, code)| {
            let p = translate(&code).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, code, p)
        })
        .collect()
}

fn random_stream(rng: &mut ChaCha8Rng) -> Vec<Instruction> {
    let mut out = Vec::new();
    let mut offset = 0;
    for _ in 0..rng.gen_range(0..200) {
        let op = Opcode(rng.gen());
        let ins = match op.push_size() {
            Some(n) if n > 0 => {
                let mut bytes = [0u8; 32];
                rng.fill(&mut bytes[32 - n..]);
                Instruction::push(offset, op, U256::from_be_bytes(bytes))
            }
            _ => Instruction::new(offset, op),
        };
        offset = ins.next_offset();
        out.push(ins);
    }
    out
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let streams = 1000;
    for i in 0..streams {
        let instrs = random_stream(&mut rng);
        let code = assemble(&instrs).map_err(|e| format!("stream {i}: {e}"))?;
        let back = disassemble(&code).map_err(|e| format!("stream {i}: {e}"))?;
        ensure(back == instrs, || format!("stream {i} differs after decoding"))?;
    }
    let programs = translated_corpus();
    for (name, code, _) in &programs {
        let cfg = resolve_cfg(&split_blocks(&disassemble(code).unwrap()));
        let p = translate_cfg(&cfg, TranslateOptions { nops: true }).unwrap().program;
        for nops in [false, true] {
            let text = emit_rbr(&p, EmitOptions { nops });
            let parsed = parse_rbr(&text).map_err(|e| format!("{name}: {e}"))?;
            let want = if nops { p.clone() } else { p.without_nops() };
            ensure(parsed == want, || {
                format!("{name}: parsed program differs (nops={nops})")
            })?;
        }
    }
    let t = within(start, Duration::from_secs(10))?;
    Ok(format!("{streams} streams, {} contracts, {t:.2?}", programs.len()))
}

fn rule_count() -> Outcome {
    let mut g = ProgramGenerator::new(2);
    let mut checked = 0;
    let mut jumpis = 0;
    for i in 0..60 {
        let code = g.generate();
        let cfg = resolve_cfg(&split_blocks(&disassemble(&code).unwrap()));
        let live: Vec<_> = cfg.live_blocks().collect();
        let branching = live
            .iter()
            .filter(|b| matches!(b.terminator, Terminator::JumpI { .. }))
            .count();
        let want = 3 * branching + (live.len() - branching);
        let got = translate_cfg(&cfg, TranslateOptions::default())
            .unwrap()
            .program
            .rules
            .len();
        ensure(got == want, || format!("cfg {i}: {got} rules, expected {want}"))?;
        checked += 1;
        jumpis += branching;
    }
    Ok(format!("{checked} cfgs, {jumpis} conditional blocks"))
}

fn guard_complementarity() -> Outcome {
    const VALUES: [u64; 4] = [0, 1, 2, 1 << 16];
    let mut pairs = 0;
    let mut assignments = 0;
    for (name, _, p) in translated_corpus() {
        let mut by_name: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for r in p.rules.iter().filter(|r| r.name.kind == RuleKind::Jump) {
            by_name
                .entry(r.name)
                .or_default()
                .push(r.guard.expect("jump rules are guarded"));
        }
        for (rule, guards) in by_name {
            ensure(guards.len() == 2, || {
                format!("{name}: {rule} has {} rules", guards.len())
            })?;
            let vars: Vec<Var> = guards
                .iter()
                .flat_map(|g| [g.lhs, g.rhs])
                .filter_map(|o| match o {
                    Operand::Var(v) => Some(v),
                    Operand::Num(_) => None,
                })
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let combos = VALUES.len().pow(vars.len() as u32);
            for mut k in 0..combos {
                let mut env = BTreeMap::new();
                for v in &vars {
                    env.insert(*v, U256::from(VALUES[k % VALUES.len()]));
                    k /= VALUES.len();
                }
                let value = |o: Operand| match o {
                    Operand::Var(v) => env[&v],
                    Operand::Num(n) => n,
                };
                let true_count = guards
                    .iter()
                    .filter(|g| g.relation.holds(&value(g.lhs), &value(g.rhs)))
                    .count();
                ensure(true_count == 1, || {
                    format!("{name}: {rule} has {true_count} true guards for {env:?}")
                })?;
                assignments += 1;
            }
            pairs += 1;
        }
    }
    ensure(pairs > 0, || "no guard pairs in the corpus".into())?;
    Ok(format!("{pairs} pairs, {assignments} assignments"))
}

fn differential() -> Outcome {
    let start = Instant::now();
    let mut g = ProgramGenerator::new(4);
    let (programs, cases) = (500, 20);
    let mut skipped = 0;
    for i in 0..programs {
        let seed = 1000 + i as u64;
        let code = g.generate_in_regime(cases, seed);
        let r = differential_check(&code, cases, seed).map_err(|e| format!("program {i}: {e}"))?;
        ensure(r.divergent == 0, || format!("program {i} ({}):\n{r}", to_hex(&code)))?;
        skipped += r.skipped;
    }
    ensure(skipped == 0, || format!("{skipped} cases fell outside the regime"))?;
    let t = within(start, Duration::from_secs(60))?;
    Ok(format!("{programs} programs x {cases} inputs, 0 divergences, {t:.2?}"))
}

fn mutation_sensitivity() -> Outcome {
    const SEED: u64 = 11;
    const PER_KIND: usize = 10;
    let mut flips = Vec::new();
    let mut stores = Vec::new();
    for (name, code, p) in translated_corpus() {
        let input = &case_inputs(&p.layout, 1, SEED)[0];
        let Ok(run) = run_rbr(&p, &rbr_init(&p.layout, input), DEFAULT_STEP_LIMIT, SEED) else {
            continue;
        };
        let tag = |m: Mutation| (name.clone(), code.clone(), p.clone(), m);
        flips.extend(guard_flips(&p, &run.trace).into_iter().map(tag));
        stores.extend(stack_index_mutations(&p, &run.trace).into_iter().map(tag));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut sampled = Vec::new();
    for pool in [&mut flips, &mut stores] {
        pool.shuffle(&mut rng);
        let mut rules = BTreeSet::new();
        let picked: Vec<_> = pool
            .iter()
            .filter(|(name, _, _, m)| rules.insert((name.clone(), m.rule())))
            .take(PER_KIND)
            .cloned()
            .collect();
        ensure(picked.len() == PER_KIND, || {
            format!("only {} candidate rules of one kind", picked.len())
        })?;
        sampled.extend(picked);
    }
    let mut caught = 0;
    let mut missed = Vec::new();
    for (name, code, p, m) in &sampled {
        let r = check_program(code, &m.apply(p), 20, SEED);
        if r.divergent > 0 {
            caught += 1;
        } else {
            missed.push(format!("{name}: {m:?}"));
        }
    }
    ensure(missed.is_empty(), || {
        format!("caught {caught}/{}; missed {}", sampled.len(), missed.join("; "))
    })?;
    Ok(format!("caught {caught}/{}", sampled.len()))
}

fn loop_detection() -> Outcome {
    let mut counts = Vec::new();
    for n in [0, 1, 2, 6] {
        let got = detect_loops(&translate(&sequential_loops(n)).unwrap()).count();
        ensure(got == n, || format!("{n}-loop fixture reports {got}"))?;
        counts.push(got.to_string());
    }
    Ok(format!("counts {}", counts.join("/")))
}

fn cloning() -> Outcome {
    let (code, f_pc) = two_callers();
    let cfg = resolve_cfg(&split_blocks(&disassemble(&code).unwrap()));
    let clones = cfg.clones_of(f_pc);
    ensure(clones.len() == 2, || {
        format!("{} clones of the shared block", clones.len())
    })?;
    ensure(cfg.unresolved.is_empty(), || {
        format!("{} unresolved jumps", cfg.unresolved.len())
    })?;
    let p = translate_cfg(&cfg, TranslateOptions::default()).unwrap().program;
    let r = check_program(&code, &p, 5, 0);
    ensure(r.divergent == 0, || r.to_string())?;
    let input = &case_inputs(&p.layout, 1, 0)[0];
    let run = run_rbr(&p, &rbr_init(&p.layout, input), DEFAULT_STEP_LIMIT, 0).map_err(|e| e.to_string())?;
    let blocks: Vec<_> = run
        .trace
        .iter()
        .filter(|n| n.kind == RuleKind::Block)
        .map(|n| n.id)
        .collect();
    let visits: Vec<usize> = (0..blocks.len()).filter(|i| blocks[*i].pc == f_pc).collect();
    ensure(visits.len() == 2, || {
        format!("shared block visited {} times", visits.len())
    })?;
    let (a, b) = (blocks[visits[0]], blocks[visits[1]]);
    ensure(a != b, || format!("both calls ran clone {a}"))?;
    ensure(clones.contains(&a) && clones.contains(&b), || {
        "trace left the clone set".into()
    })?;
    // Each clone returns to the block right after its own call site.
    let (ret_a, ret_b) = (blocks[visits[0] + 1].pc, blocks[visits[1] + 1].pc);
    ensure(ret_a < ret_b && ret_b < f_pc, || {
        format!("returns went to {ret_a} and {ret_b}")
    })?;
    for c in [a, b] {
        let Terminator::Jump(t) = cfg.block(c).unwrap().terminator else {
            return Err(format!("clone {c} does not end in a resolved jump"));
        };
        let ret = if c == a { ret_a } else { ret_b };
        ensure(t.pc == ret, || format!("clone {c} jumps to {t}, trace went to {ret}"))?;
    }
    Ok(format!("clones {a} and {b}, 0 unresolved"))
}

/// Calls of a bit-operation functor: the name not preceded by an identifier character.
fn bit_functor_calls(text: &str) -> usize {
    ["and(", "or(", "xor(", "not("]
        .iter()
        .map(|f| {
            text.match_indices(f)
                .filter(|(i, _)| {
                    text[..*i]
                        .chars()
                        .next_back()
                        .is_none_or(|c| !(c.is_ascii_alphanumeric() || c == '_'))
                })
                .count()
        })
        .sum()
}

fn saco_purity() -> Outcome {
    let mut in_rbr = 0;
    let programs = translated_corpus();
    for (name, _, p) in &programs {
        in_rbr += bit_functor_calls(&emit_rbr(p, EmitOptions::default()));
        let text = export_saco(p);
        let found = bit_functor_calls(&text);
        ensure(found == 0, || format!("{name}: {found} bit-op functors in export"))?;
        let parsed = parse_rbr(&text).map_err(|e| format!("{name}: {e}"))?;
        ensure(parsed == saco_program(p), || {
            format!("{name}: export re-parses differently")
        })?;
    }
    ensure(in_rbr > 0, || "corpus has no bit operations to abstract".into())?;
    Ok(format!(
        "{} exports clean, {in_rbr} functors abstracted",
        programs.len()
    ))
}

fn performance() -> Outcome {
    let code = large_program(24 * 1024, 9);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = dir.path().join("large.hex");
    std::fs::write(&input, to_hex(&code)).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_evm2rbr"))
        .arg("rbr")
        .arg(&input)
        .output()
        .map_err(|e| e.to_string())?;
    let t = within(start, Duration::from_secs(5))?;
    ensure(out.status.success(), || {
        String::from_utf8_lossy(&out.stderr).into_owned()
    })?;
    let rules = String::from_utf8_lossy(&out.stdout).matches(" =>").count();
    Ok(format!("{} bytes, {rules} rules, {t:.2?}", code.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("round-trip", round_trip),
        ("rule-count formula", rule_count),
        ("guard complementarity", guard_complementarity),
        ("differential equivalence", differential),
        ("mutation sensitivity", mutation_sensitivity),
        ("loop detection", loop_detection),
        ("cloning", cloning),
        ("saco export purity", saco_purity),
        ("performance", performance),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
