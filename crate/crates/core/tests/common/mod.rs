//! Seeded random instances over a small four-column table. Domains are
//! tiny on purpose so predicates collide and conflicts are common.
#![allow(dead_code)]

use std::sync::Arc;

use mp_core::expr::Expr;
use mp_core::modification::{Assignment, ModKind};
use mp_core::value::ArithOp;
use mp_core::{CmpOp, ColumnType, Condition, History, Schema, TableSnapshot, Value};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn schema() -> Arc<Schema> {
    Arc::new(
        Schema::from_pairs(&[
            ("A", ColumnType::Int),
            ("B", ColumnType::Int),
            ("D", ColumnType::Dec),
            ("S", ColumnType::Str),
        ])
        .unwrap(),
    )
}

const STRS: [&str; 3] = ["x", "y", "z"];

fn int(r: &mut impl Rng) -> Value {
    if r.gen_bool(0.08) {
        Value::Null
    } else {
        Value::Int(r.gen_range(0..4))
    }
}

fn dec(r: &mut impl Rng) -> Value {
    if r.gen_bool(0.08) {
        Value::Null
    } else {
        Value::ratio(r.gen_range(0..6), 2)
    }
}

fn text(r: &mut impl Rng) -> Value {
    if r.gen_bool(0.08) {
        Value::Null
    } else {
        Value::str(STRS.choose(r).unwrap())
    }
}

pub fn row(r: &mut impl Rng) -> Vec<Value> {
    vec![int(r), int(r), dec(r), text(r)]
}

pub fn table(r: &mut impl Rng, max_rows: usize) -> TableSnapshot {
    let n = r.gen_range(0..=max_rows);
    TableSnapshot::from_rows(schema(), (0..n).map(|_| row(r)).collect()).unwrap()
}

fn lit_int(r: &mut impl Rng) -> Expr {
    Expr::lit(r.gen_range(0..4i64))
}

fn int_attr(r: &mut impl Rng) -> Expr {
    Expr::attr(if r.gen() { "A" } else { "B" })
}

/// An Int-typed expression.
fn int_expr(r: &mut impl Rng) -> Expr {
    match r.gen_range(0..5) {
        0 => lit_int(r),
        1 => int_attr(r),
        2 => Expr::bin(ArithOp::Add, int_attr(r), lit_int(r)),
        3 => Expr::bin(ArithOp::Mul, int_attr(r), lit_int(r)),
        _ => Expr::bin(ArithOp::Sub, Expr::attr("A"), Expr::attr("B")),
    }
}

/// A numeric expression that may be Dec-typed.
fn num_expr(r: &mut impl Rng) -> Expr {
    match r.gen_range(0..5) {
        0 => int_expr(r),
        1 => Expr::attr("D"),
        2 => Expr::bin(ArithOp::Add, Expr::attr("D"), Expr::lit(Value::ratio(r.gen_range(0..4), 2))),
        3 => Expr::bin(ArithOp::Div, int_attr(r), int_attr(r)),
        _ => Expr::bin(ArithOp::Mul, Expr::attr("D"), int_attr(r)),
    }
}

fn op(r: &mut impl Rng) -> CmpOp {
    *[CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge].choose(r).unwrap()
}

fn atom(r: &mut impl Rng) -> Condition {
    match r.gen_range(0..7) {
        0 | 1 => Condition::cmp(op(r), int_attr(r), lit_int(r)),
        2 => Condition::cmp(op(r), num_expr(r), Expr::lit(Value::ratio(r.gen_range(0..8), 2))),
        3 => Condition::cmp(op(r), Expr::attr("A"), Expr::attr("B")),
        4 => Condition::cmp(
            if r.gen() { CmpOp::Eq } else { CmpOp::Ne },
            Expr::attr("S"),
            Expr::lit(*STRS.choose(r).unwrap()),
        ),
        5 => {
            let k = r.gen_range(1..=3);
            Condition::In(int_attr(r), (0..k).map(|_| Value::Int(r.gen_range(0..4))).collect())
        }
        _ => Condition::not_null(&Expr::attr(["A", "B", "D", "S"].choose(r).unwrap())),
    }
}

pub fn condition(r: &mut impl Rng, depth: u32) -> Condition {
    if depth == 0 || r.gen_bool(0.45) {
        return atom(r);
    }
    match r.gen_range(0..3) {
        0 => Condition::And((0..r.gen_range(2..=3)).map(|_| condition(r, depth - 1)).collect()),
        1 => Condition::Or((0..r.gen_range(2..=3)).map(|_| condition(r, depth - 1)).collect()),
        _ => Condition::not(condition(r, depth - 1)),
    }
}

fn assignment(r: &mut impl Rng, constant_only: bool) -> Assignment {
    let (target, rhs) = match r.gen_range(0..4) {
        0 | 1 => {
            let t = if r.gen() { "A" } else { "B" };
            (t, if constant_only { lit_int(r) } else { int_expr(r) })
        }
        2 => ("D", if constant_only { Expr::lit(dec(r)) } else { num_expr(r) }),
        _ => ("S", if constant_only || r.gen() { Expr::lit(*STRS.choose(r).unwrap()) } else { Expr::attr("S") }),
    };
    Assignment { target: target.to_string(), rhs }
}

/// A modification of mixed kind: 70% updates, 15% inserts, 15% deletes.
pub fn modification(r: &mut impl Rng) -> ModKind {
    match r.gen_range(0..20) {
        0..=13 => ModKind::Update { pred: condition(r, 2), assign: assignment(r, false) },
        14..=16 => ModKind::Insert { values: row(r) },
        _ => ModKind::Delete { pred: condition(r, 2) },
    }
}

/// A single-attribute equality update with a constant right-hand side.
pub fn simple_update(r: &mut impl Rng) -> ModKind {
    let col = if r.gen() { "A" } else { "B" };
    let pred = Condition::eq(col, r.gen_range(0..4i64));
    ModKind::Update { pred, assign: assignment(r, true) }
}

pub fn history(r: &mut impl Rng, branch: &str, max_len: usize) -> History {
    let mut h = History::new(branch);
    for _ in 0..r.gen_range(0..=max_len) {
        h.push(modification(r));
    }
    h
}

pub struct Instance {
    pub d0: TableSnapshot,
    pub h1: History,
    pub h2: History,
}

/// Up to `rows` base rows and up to `len` modifications per branch.
pub fn instance(seed: u64, rows: usize, len: usize) -> Instance {
    let mut r = rng(seed);
    let d0 = table(&mut r, rows);
    let h1 = history(&mut r, "left", len);
    let h2 = history(&mut r, "right", len);
    Instance { d0, h1, h2 }
}
