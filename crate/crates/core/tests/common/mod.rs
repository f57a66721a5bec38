//! Shared helpers: concrete inputs, the oracle bridge and random programs.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ponzilens_core::actions::{Action, ActionKind, ActionSequence, Operands, ReadSource};
use ponzilens_core::asm::assemble;
use ponzilens_core::bytecode::{disassemble, Instruction};
use ponzilens_core::cfg::{resolve_cfg, split_blocks, BlockId, BlockPath, Cfg};
use ponzilens_core::features::FeatureVector;
use ponzilens_core::merge::{column_keys, interleave, merge_group, merge_subsequences, Member, MergedGroup};
use ponzilens_core::symex::{
    keccak_word, run_path, EnvKind, EvalContext, PathRun, RawEventKind, SymExpr, TrustChecker,
};
use ponzilens_core::word::U256;
use ponzilens_oracle::{execute, Env, Event, Outcome};
use rand::Rng;

pub const STEP_LIMIT: usize = 100_000;
pub const DEPOSIT: u64 = 0xd0e30db0;
pub const WITHDRAW: u64 = 0x3ccfd60b;

pub fn w(v: u64) -> U256 {
    U256::from(v)
}

#[derive(Debug, Clone)]
pub struct Concrete {
    pub env: Env,
    pub storage: BTreeMap<U256, U256>,
}

fn address(rng: &mut impl Rng) -> U256 {
    let mut b = [0u8; 32];
    rng.fill(&mut b[12..]);
    U256::from_be_bytes(b)
}

fn selector_calldata(sel: u64) -> Vec<u8> {
    (sel as u32).to_be_bytes().to_vec()
}

/// Random transaction context and storage suited to a named fixture.
pub fn random_input(fixture: &str, rng: &mut impl Rng) -> Concrete {
    let mut env = Env { caller: address(rng), address: address(rng), ..Env::default() };
    env.balances.insert(env.address, U256::from(rng.gen::<u64>()));
    let mut storage = BTreeMap::new();
    match fixture {
        "chain" => {
            env.callvalue = if rng.gen_bool(0.2) { U256::ZERO } else { w(rng.gen_range(1..1_000_000_000)) };
            let n = rng.gen_range(0..5u64);
            storage.insert(w(1), w(n));
            storage.insert(w(0), w(rng.gen_range(0..1_000_000)));
            let base = keccak_word(&w(1).to_be_bytes::<32>());
            for k in 0..n {
                storage.insert(base.wrapping_add(w(k)), address(rng));
            }
        }
        "withdraw" => {
            let sel = match rng.gen_range(0..5) {
                0 | 1 => DEPOSIT,
                2 | 3 => WITHDRAW,
                _ => rng.gen::<u32>() as u64,
            };
            env.calldata = selector_calldata(sel);
            env.callvalue = w(rng.gen_range(0..3000));
            let mut key = env.caller.to_be_bytes::<32>().to_vec();
            key.extend_from_slice(&w(2).to_be_bytes::<32>());
            storage.insert(keccak_word(&key), w(rng.gen_range(0..10_000)));
        }
        "wallet" => {
            let owner = if rng.gen_bool(0.5) { env.caller } else { address(rng) };
            storage.insert(w(0), owner);
            env.callvalue = w(rng.gen_range(0..10_000));
        }
        _ => {
            env.callvalue = w(rng.gen_range(0..10_000));
            env.calldata = (0..rng.gen_range(0..96)).map(|_| rng.gen()).collect();
        }
    }
    Concrete { env, storage }
}

pub fn run_oracle(code: &[u8], c: &Concrete) -> Outcome {
    execute(code, &c.env, c.storage.clone(), STEP_LIMIT)
}

pub fn build_cfg(code: &[u8]) -> (Vec<Instruction>, Cfg) {
    let instrs = disassemble(code);
    let cfg = resolve_cfg(split_blocks(&instrs), &instrs).expect("non-empty code");
    (instrs, cfg)
}

/// Blocks entered by a concrete run, in order.
pub fn block_trace(cfg: &Cfg, out: &Outcome) -> Vec<BlockId> {
    out.trace.iter().filter_map(|pc| cfg.block_at_offset(*pc)).collect()
}

/// Evaluates expressions of one symbolic run under a concrete input.
pub struct Ctx<'a> {
    pub input: &'a Concrete,
    pub stores: &'a [(SymExpr, SymExpr)],
}

impl EvalContext for Ctx<'_> {
    fn env(&self, kind: EnvKind, arg: Option<U256>) -> Option<U256> {
        let e = &self.input.env;
        Some(match kind {
            EnvKind::Caller => e.caller,
            EnvKind::CallValue => e.callvalue,
            EnvKind::Address => e.address,
            EnvKind::Balance => e.balance_of(arg?),
            EnvKind::Timestamp => e.timestamp,
            EnvKind::Number => e.number,
            EnvKind::Gas => e.gas,
            EnvKind::CallData => e.calldata_word(arg?),
            EnvKind::CallDataSize => U256::from(e.calldata.len()),
        })
    }

    fn sload(&self, slot: U256, generation: usize) -> Option<U256> {
        for (s, v) in self.stores[..generation].iter().rev() {
            if s.eval(self)? == slot {
                return v.eval(self);
            }
        }
        Some(self.input.storage.get(&slot).copied().unwrap_or_default())
    }
}

/// The symbolic run's Store and CallOut events, concretized.
pub fn concretize(run: &PathRun, input: &Concrete) -> Result<Vec<Event>, String> {
    let ctx = Ctx { input, stores: &run.state.storage.stores };
    let ev = |e: &SymExpr| e.eval(&ctx).ok_or_else(|| format!("cannot evaluate {e}"));
    let mut out = Vec::new();
    for e in run.events() {
        match &e.kind {
            RawEventKind::Store { slot, value } => {
                out.push(Event::Store { pc: e.pc, slot: ev(slot)?, value: ev(value)? })
            }
            RawEventKind::CallOut { gas, to, value } => {
                out.push(Event::CallOut { pc: e.pc, gas: ev(gas)?, to: ev(to)?, value: ev(value)? })
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Runs `code` both ways on `input` along the concrete block trace and compares
/// every Store and CallOut.
pub fn check_equivalence(code: &[u8], input: &Concrete) -> Result<usize, String> {
    let (instrs, cfg) = build_cfg(code);
    let out = run_oracle(code, input);
    if out.halt.is_error() {
        return Err(format!("oracle halted with {:?}", out.halt));
    }
    let path = BlockPath { blocks: block_trace(&cfg, &out), loop_spans: vec![] };
    let run = run_path(&path, &instrs, &cfg, &TrustChecker);
    if run.halt().is_none() {
        return Err(format!("symbolic run did not halt: {:?}", run.status));
    }
    let sym = concretize(&run, input)?;
    if sym != out.events {
        return Err(format!("events differ:\n oracle   {:?}\n symbolic {:?}", out.events, sym));
    }
    Ok(sym.len())
}

/// True when every asserted branch of `run` holds under `input`.
pub fn satisfies(run: &PathRun, input: &Concrete) -> bool {
    let ctx = Ctx { input, stores: &run.state.storage.stores };
    run.state.path_condition.iter().all(|(c, pol)| c.eval(&ctx).is_some_and(|v| !v.is_zero() == *pol))
}

const BINARY: &[&str] = &[
    "ADD",
    "MUL",
    "SUB",
    "DIV",
    "SDIV",
    "MOD",
    "SMOD",
    "EXP",
    "LT",
    "GT",
    "SLT",
    "SGT",
    "EQ",
    "AND",
    "OR",
    "XOR",
    "BYTE",
    "SHL",
    "SHR",
    "SAR",
    "SIGNEXTEND",
];
const NULLARY: &[&str] = &["CALLER", "CALLVALUE", "ADDRESS", "TIMESTAMP", "NUMBER", "GAS", "CALLDATASIZE"];

fn random_push(rng: &mut impl Rng) -> String {
    match rng.gen_range(0..4) {
        0 => format!("PUSH {}", rng.gen_range(0..4u8)),
        1 => format!("PUSH {}", rng.gen_range(0..300u16)),
        2 => format!("PUSH 0x{:x}", rng.gen::<u64>()),
        _ => {
            let b: [u8; 32] = rng.gen();
            format!("PUSH32 0x{}", b.iter().map(|x| format!("{x:02x}")).collect::<String>())
        }
    }
}

/// A random straight-line listing ending in STOP. Memory offsets are constants
/// pushed right before use, so both machines can resolve them.
pub fn random_program(rng: &mut impl Rng, len: usize) -> String {
    let mut lines = Vec::new();
    let mut depth = 0usize;
    for _ in 0..len {
        let choice = rng.gen_range(0..100);
        let mut emit = |s: String, pops: usize, pushes: usize, depth: &mut usize| {
            lines.push(s);
            *depth = *depth - pops + pushes;
        };
        match choice {
            _ if depth < 2 || choice < 20 => emit(random_push(rng), 0, 1, &mut depth),
            20..=44 => emit(BINARY[rng.gen_range(0..BINARY.len())].to_string(), 2, 1, &mut depth),
            45..=49 => emit(["ISZERO", "NOT"][rng.gen_range(0..2)].to_string(), 1, 1, &mut depth),
            50..=52 if depth >= 3 => emit(["ADDMOD", "MULMOD"][rng.gen_range(0..2)].to_string(), 3, 1, &mut depth),
            53..=59 => emit(NULLARY[rng.gen_range(0..NULLARY.len())].to_string(), 0, 1, &mut depth),
            60..=62 => emit(["CALLDATALOAD", "BALANCE"][rng.gen_range(0..2)].to_string(), 1, 1, &mut depth),
            63..=67 => {
                let n = rng.gen_range(1..=depth.min(4));
                emit(format!("DUP{n}"), 0, 1, &mut depth)
            }
            68..=71 => {
                let n = rng.gen_range(1..depth.min(4));
                emit(format!("SWAP{n}"), 0, 0, &mut depth)
            }
            72..=73 => emit("POP".into(), 1, 0, &mut depth),
            74..=78 => {
                emit(format!("PUSH {}", rng.gen_range(0..128u8)), 0, 1, &mut depth);
                emit(["MSTORE", "MSTORE8"][rng.gen_range(0..2)].to_string(), 2, 0, &mut depth)
            }
            79..=81 => {
                emit(format!("PUSH {}", rng.gen_range(0..160u8)), 0, 1, &mut depth);
                emit("MLOAD".into(), 1, 1, &mut depth)
            }
            82..=84 => {
                emit(format!("PUSH {}", rng.gen_range(0..=96u8)), 0, 1, &mut depth);
                emit(format!("PUSH {}", rng.gen_range(0..64u8)), 0, 1, &mut depth);
                emit("SHA3".into(), 2, 1, &mut depth)
            }
            85..=89 => {
                if rng.gen_bool(0.5) {
                    emit(format!("PUSH {}", rng.gen_range(0..4u8)), 0, 1, &mut depth);
                }
                emit("SSTORE".into(), 2, 0, &mut depth)
            }
            90..=94 => {
                if rng.gen_bool(0.5) {
                    emit(format!("PUSH {}", rng.gen_range(0..4u8)), 0, 1, &mut depth);
                }
                emit("SLOAD".into(), 1, 1, &mut depth)
            }
            _ => {
                for _ in 0..4 {
                    emit("PUSH 0".into(), 0, 1, &mut depth);
                }
                emit("DUP5".into(), 0, 1, &mut depth);
                emit("DUP7".into(), 0, 1, &mut depth);
                emit("GAS".into(), 0, 1, &mut depth);
                let (op, pops) =
                    [("CALL", 7), ("CALLCODE", 7), ("DELEGATECALL", 6), ("STATICCALL", 6)][rng.gen_range(0..4)];
                emit(op.into(), pops, 1, &mut depth);
            }
        }
    }
    lines.push("STOP".into());
    lines.join("\n")
}

pub fn random_program_bytes(rng: &mut impl Rng, len: usize) -> Vec<u8> {
    assemble(&random_program(rng, len)).expect("generated listing assembles")
}

/// A synthetic group: random block walks over a small block alphabet, each
/// position carrying zero to two constraint or read actions.
pub fn random_group(rng: &mut impl Rng) -> (Vec<BlockPath>, Vec<ActionSequence>) {
    let blocks = rng.gen_range(2..9);
    let n = rng.gen_range(1..8);
    let mut paths = Vec::new();
    let mut seqs = Vec::new();
    for id in 0..n {
        let len = rng.gen_range(1..12);
        let mut walk = vec![0];
        walk.extend((1..len).map(|_| rng.gen_range(0..blocks)));
        let mut actions = Vec::new();
        for (position, b) in walk.iter().enumerate() {
            for _ in 0..rng.gen_range(0..3) {
                let (kind, operands) = if rng.gen_bool(0.5) {
                    let cond = SymExpr::bin(
                        ponzilens_core::opcode::Opcode::GT,
                        SymExpr::callvalue(),
                        SymExpr::constant(rng.gen_range(0..3)),
                    );
                    (ActionKind::CheckConstraint, Operands::Constraint { cond, polarity: rng.gen() })
                } else {
                    (
                        ActionKind::ReadInformation,
                        Operands::Read { source: ReadSource::Env(EnvKind::Caller, SymExpr::caller()) },
                    )
                };
                actions.push(Action { kind, pc: *b * 10, block: *b, position, loop_context: None, operands });
            }
        }
        paths.push(BlockPath { blocks: walk, loop_spans: vec![] });
        seqs.push(ActionSequence { path_id: id, actions, ..ActionSequence::default() });
    }
    (paths, seqs)
}

fn is_subsequence<T: PartialEq>(sub: &[T], full: &[T]) -> bool {
    let mut it = full.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

fn merged(paths: &[BlockPath], seqs: &[ActionSequence], order: &[usize]) -> MergedGroup {
    let members: Vec<Member<'_>> =
        order.iter().map(|&i| Member { id: i, path: &paths[i], actions: &seqs[i] }).collect();
    merge_group(0, FeatureVector::default(), &members)
}

/// Coverage, subsequence, idempotence and determinism of the group merge.
pub fn check_merge_invariants(paths: &[BlockPath], seqs: &[ActionSequence], rng: &mut impl Rng) -> Result<(), String> {
    let order: Vec<usize> = (0..paths.len()).collect();
    let g = merged(paths, seqs, &order);

    let mut seen = vec![0usize; paths.len()];
    for c in &g.clusters {
        for &m in &c.members {
            seen[m] += 1;
        }
    }
    if seen.iter().any(|&n| n != 1) {
        return Err(format!("coverage: cluster membership counts {seen:?}"));
    }
    for c in &g.clusters {
        let full = c.full_sequence();
        for &m in &c.members {
            let keys = column_keys(&paths[m].blocks);
            if !is_subsequence(&keys, &full) {
                return Err(format!("subsequence: path {m} is not a subsequence of its cluster"));
            }
            if interleave(&full, &keys) != full {
                return Err(format!("idempotence: re-merging path {m} changes the full sequence"));
            }
            let mut covered = Vec::new();
            for col in &c.columns {
                for lane in &col.lanes {
                    if let Some(k) = lane.members.iter().position(|x| *x == m) {
                        covered.extend(lane.action_indices[k].iter().copied());
                    }
                }
            }
            covered.sort_unstable();
            if covered != (0..seqs[m].actions.len()).collect::<Vec<_>>() {
                return Err(format!("coverage: lanes hold actions {covered:?} of path {m}"));
            }
        }
        let blocks: Vec<BlockId> = full.iter().map(|k| k.block).collect();
        let again = merge_subsequences(&[(0, &blocks[..])]);
        if again.len() != 1 || again[0].full_sequence != full {
            return Err("idempotence: merging a full sequence with itself changes it".into());
        }
    }

    if merged(paths, seqs, &order) != g {
        return Err("determinism: two merges differ".into());
    }
    let mut shuffled = order.clone();
    rand::seq::SliceRandom::shuffle(&mut shuffled[..], rng);
    if merged(paths, seqs, &shuffled) != g {
        return Err("determinism: member order changes the merge".into());
    }
    Ok(())
}
