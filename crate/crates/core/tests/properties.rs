mod common;

use std::collections::BTreeSet;

use mp_core::backtrack::backtrack_through;
use mp_core::detect::{rw_condition, ww_condition};
use mp_core::expr::Expr;
use mp_core::modification::{apply_history, apply_modification, History, Interleaving, Modification, Side};
use mp_core::oracle::{exhaustive_automergeable, oracle_conflicts};
use mp_core::resolve::{follow_order, resolve, ConflictScope, ResolveOptions};
use mp_core::value::ArithOp;
use mp_core::{canonicalize, detect, noncommute_condition, simplify, Condition, RowId, TableSnapshot, Value};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn holds(c: &Condition, vals: &[Value]) -> bool {
    c.bind(&common::schema()).unwrap().eval(vals, false).unwrap()
}

fn select_plus(d0: &TableSnapshot, c: &Condition, extra: impl IntoIterator<Item = RowId>) -> BTreeSet<RowId> {
    let mut rows = if c.is_false() { BTreeSet::new() } else { d0.select(c).unwrap() };
    rows.extend(extra);
    rows
}

fn pair(r: &mut impl Rng, simple: bool) -> (Modification, Modification) {
    let kind = |r: &mut _| {
        if simple {
            common::simple_update(r)
        } else {
            common::modification(r)
        }
    };
    let mut h1 = History::new("left");
    let mut h2 = History::new("right");
    h1.push(kind(r));
    h2.push(kind(r));
    (h1.mods.remove(0), h2.mods.remove(0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn backtracked_condition_selects_what_replay_selects(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let d0 = common::table(&mut r, 8);
        let h = common::history(&mut r, "p", 8);
        let c = common::condition(&mut r, 2);
        let after = apply_history(&d0, &h.mods).unwrap().select(&c).unwrap();
        let back = backtrack_through(&d0.schema, &c, h.mods.iter()).unwrap();
        prop_assert_eq!(after, select_plus(&d0, &back.cond, back.flagged_inserts.into_keys()));
    }

    #[test]
    fn simplify_and_canonicalize_preserve_meaning(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let c = common::condition(&mut r, 3);
        let (s, k) = (simplify(&c), canonicalize(&c));
        for _ in 0..12 {
            let row = common::row(&mut r);
            let want = holds(&c, &row);
            prop_assert_eq!(holds(&s, &row), want, "simplify changed {} into {}", c, s);
            prop_assert_eq!(holds(&k, &row), want, "canonicalize changed {} into {}", c, k);
        }
        prop_assert_eq!(simplify(&s), s.clone());
    }

    #[test]
    fn noncommute_condition_is_exact(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let v = common::table(&mut r, 8);
        let (phi, psi) = pair(&mut r, false);
        let a = apply_modification(&apply_modification(&v, &phi).unwrap(), &psi).unwrap();
        let b = apply_modification(&apply_modification(&v, &psi).unwrap(), &phi).unwrap();
        let nc = noncommute_condition(&v.schema, &phi, &psi).unwrap();
        prop_assert_eq!(a.diff_rows(&b), select_plus(&v, &nc.cond, nc.insert_rows), "{} / {}", phi.id, psi.id);
    }

    #[test]
    fn specialized_builders_agree_with_the_general_condition(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let schema = common::schema();
        let (phi, psi) = pair(&mut r, true);
        let general = noncommute_condition(&schema, &phi, &psi).unwrap().cond;
        let special = Condition::Or(vec![
            ww_condition(&schema, &phi, &psi).unwrap().unwrap_or(Condition::False),
            rw_condition(&schema, &phi, &psi).unwrap().unwrap_or(Condition::False),
            rw_condition(&schema, &psi, &phi).unwrap().unwrap_or(Condition::False),
        ]);
        for _ in 0..16 {
            let row = common::row(&mut r);
            prop_assert_eq!(holds(&special, &row), holds(&general, &row), "row {:?}: {} vs {}", row, special, general);
        }
    }

    #[test]
    fn select_obeys_boolean_laws(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let d0 = common::table(&mut r, 10);
        let (a, b) = (common::condition(&mut r, 2), common::condition(&mut r, 2));
        let (sa, sb) = (d0.select(&a).unwrap(), d0.select(&b).unwrap());
        let and = d0.select(&Condition::and(a.clone(), b.clone())).unwrap();
        let or = d0.select(&Condition::or(a.clone(), b.clone())).unwrap();
        let not = d0.select(&Condition::not(a.clone())).unwrap();
        prop_assert_eq!(and, sa.intersection(&sb).cloned().collect::<BTreeSet<_>>());
        prop_assert_eq!(or, sa.union(&sb).cloned().collect::<BTreeSet<_>>());
        prop_assert_eq!(not, d0.visible_ids().difference(&sa).cloned().collect::<BTreeSet<_>>());
        prop_assert_eq!(d0.select_indexed(&a).unwrap(), sa.clone());
        prop_assert_eq!(d0.select_many(&[a, b]).unwrap(), vec![sa, sb]);
    }

    #[test]
    fn substitution_matches_assignment(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let c = common::condition(&mut r, 2);
        let e = Expr::bin(ArithOp::Add, Expr::attr("A"), Expr::lit(r.gen_range(0..3i64)));
        prop_assert_eq!(c.substitute("B", &Expr::attr("B")), c.clone());
        let sub = c.substitute("B", &e);
        let bound = e.bind(&common::schema()).unwrap();
        for _ in 0..8 {
            let row = common::row(&mut r);
            let mut moved = row.clone();
            moved[1] = bound.eval(&row).unwrap().into_owned();
            prop_assert_eq!(holds(&sub, &row), holds(&c, &moved));
        }
    }

    #[test]
    fn printed_statements_parse_back(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let schema = common::schema();
        let h = common::history(&mut r, "p", 6);
        for m in &h.mods {
            let text = m.to_sql(&schema, "t");
            let back = Modification::parse(&text, &schema, m.id.clone()).unwrap();
            prop_assert_eq!(back.to_sql(&schema, "t"), text.clone());
            let (x, y) = (m.bind(&schema).unwrap(), back.bind(&schema).unwrap());
            for k in 0..6 {
                let rid = RowId::base(k);
                let st = mp_core::modification::RowState::from_tuple(Some(&mp_core::Tuple::new(rid.clone(), common::row(&mut r))));
                prop_assert!(x.step(&rid, &st).unwrap().same_visible(&y.step(&rid, &st).unwrap()), "{}", text);
            }
        }
    }

    #[test]
    fn detect_has_no_false_negatives(seed in any::<u64>()) {
        let inst = common::instance(seed, 6, 4);
        let report = detect(&inst.d0, &inst.h1, &inst.h2).unwrap();
        let truth = oracle_conflicts(&inst.d0, &inst.h1, &inst.h2).unwrap();
        prop_assert!(truth.is_subset(&report.conflict_set), "missed {:?}", truth.difference(&report.conflict_set).collect::<Vec<_>>());
        if report.auto_mergeable {
            prop_assert!(exhaustive_automergeable(&inst.d0, &inst.h1, &inst.h2, 100_000).unwrap());
        }
    }

    #[test]
    fn resolution_reaches_any_desired_order(seed in any::<u64>(), current in any::<bool>()) {
        let inst = common::instance(seed, 5, 4);
        let mut r = common::rng(seed ^ 0x5eed);
        let mut sides: Vec<Side> = std::iter::repeat(Side::Left).take(inst.h1.len())
            .chain(std::iter::repeat(Side::Right).take(inst.h2.len())).collect();
        sides.shuffle(&mut r);
        let pi = Interleaving::from_sides(&inst.h1, &inst.h2, &sides).unwrap();
        let scope = if current { ConflictScope::CurrentVersion } else { ConflictScope::MeetingVersion };
        let opts = ResolveOptions { scope, ..Default::default() };
        let (got, questions) = resolve(&inst.d0, &inst.h1, &inst.h2, opts, follow_order(&pi)).unwrap();
        prop_assert!(questions <= inst.h1.len() + inst.h2.len());
        let want = apply_history(&inst.d0, pi.resolve(&inst.h1, &inst.h2).unwrap()).unwrap();
        let have = apply_history(&inst.d0, got.resolve(&inst.h1, &inst.h2).unwrap()).unwrap();
        prop_assert!(want.snapshot_equal(&have).unwrap(), "desired {:?} got {:?}", pi.ids, got.ids);
    }

    #[test]
    fn rational_arithmetic_is_exact(n1 in -50i64..50, d1 in 1i64..20, n2 in -50i64..50, d2 in 1i64..20) {
        let (a, b) = (Value::ratio(n1, d1), Value::ratio(n2, d2));
        let sum = Value::arith(ArithOp::Add, &a, &b).unwrap();
        prop_assert_eq!(Value::arith(ArithOp::Sub, &sum, &b).unwrap(), a.clone());
        let want = BigRational::new(BigInt::from(n1 * d2 + n2 * d1), BigInt::from(d1 * d2));
        prop_assert_eq!(sum.to_rational().unwrap(), want);
        if n2 != 0 {
            let q = Value::arith(ArithOp::Div, &a, &b).unwrap();
            prop_assert_eq!(Value::arith(ArithOp::Mul, &q, &b).unwrap(), a.clone());
        } else {
            prop_assert!(Value::arith(ArithOp::Div, &a, &b).unwrap().is_null());
        }
    }
}

#[test]
fn integer_overflow_and_division_rules() {
    let max = Value::Int(i64::MAX);
    assert!(Value::arith(ArithOp::Add, &max, &Value::Int(1)).unwrap().is_null());
    assert!(Value::arith(ArithOp::Mul, &max, &Value::Int(2)).unwrap().is_null());
    assert_eq!(Value::arith(ArithOp::Div, &Value::Int(1), &Value::Int(3)).unwrap(), Value::ratio(1, 3));
    assert!(matches!(Value::arith(ArithOp::Div, &Value::Int(4), &Value::Int(2)).unwrap(), Value::Dec(_)));
    assert!(Value::arith(ArithOp::Div, &Value::Int(4), &Value::Int(0)).unwrap().is_null());
    assert!(Value::arith(ArithOp::Add, &Value::str("x"), &Value::Int(1)).is_err());
    assert!(Value::arith(ArithOp::Add, &Value::Null, &Value::Int(1)).unwrap().is_null());
}
