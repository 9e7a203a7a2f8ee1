//! Row predicates: evaluation, substitution and syntactic simplification.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use crate::error::EvalError;
use crate::expr::{BoundExpr, Expr};
use crate::table::{Schema, Tuple};
use crate::value::{ColumnType, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, o: Ordering) -> bool {
        match self {
            CmpOp::Eq => o == Ordering::Equal,
            CmpOp::Ne => o != Ordering::Equal,
            CmpOp::Lt => o == Ordering::Less,
            CmpOp::Le => o != Ordering::Greater,
            CmpOp::Gt => o == Ordering::Greater,
            CmpOp::Ge => o != Ordering::Less,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Condition {
    True,
    False,
    Cmp(CmpOp, Expr, Expr),
    In(Expr, Vec<Value>),
    And(Vec<Condition>),
    Or(Vec<Condition>),
    Not(Box<Condition>),
}

impl Condition {
    pub fn cmp(op: CmpOp, l: Expr, r: Expr) -> Condition {
        Condition::Cmp(op, l, r)
    }

    pub fn eq(attr: &str, v: impl Into<Value>) -> Condition {
        Condition::Cmp(CmpOp::Eq, Expr::attr(attr), Expr::lit(v))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(c: Condition) -> Condition {
        Condition::Not(Box::new(c))
    }

    pub fn and(a: Condition, b: Condition) -> Condition {
        Condition::And(vec![a, b])
    }

    pub fn or(a: Condition, b: Condition) -> Condition {
        Condition::Or(vec![a, b])
    }

    pub fn constant(b: bool) -> Condition {
        if b {
            Condition::True
        } else {
            Condition::False
        }
    }

    /// `e` is not Null (an atom comparing e with itself holds exactly then).
    pub fn not_null(e: &Expr) -> Condition {
        Condition::Cmp(CmpOp::Eq, e.clone(), e.clone())
    }

    /// Holds when the two expressions evaluate to different values, where
    /// Null counts as a value distinct from every non-Null.
    pub fn distinct(a: &Expr, b: &Expr) -> Condition {
        Condition::Or(vec![
            Condition::Cmp(CmpOp::Ne, a.clone(), b.clone()),
            Condition::and(Condition::not_null(a), Condition::not(Condition::not_null(b))),
            Condition::and(Condition::not(Condition::not_null(a)), Condition::not_null(b)),
        ])
    }

    pub fn is_false(&self) -> bool {
        matches!(self, Condition::False)
    }

    pub fn attrs(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_attrs(&mut out);
        out
    }

    pub fn collect_attrs<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Condition::True | Condition::False => {}
            Condition::Cmp(_, l, r) => {
                l.collect_attrs(out);
                r.collect_attrs(out);
            }
            Condition::In(e, _) => e.collect_attrs(out),
            Condition::And(xs) | Condition::Or(xs) => xs.iter().for_each(|x| x.collect_attrs(out)),
            Condition::Not(x) => x.collect_attrs(out),
        }
    }

    pub fn mentions(&self, attr: &str) -> bool {
        match self {
            Condition::True | Condition::False => false,
            Condition::Cmp(_, l, r) => l.mentions(attr) || r.mentions(attr),
            Condition::In(e, _) => e.mentions(attr),
            Condition::And(xs) | Condition::Or(xs) => xs.iter().any(|x| x.mentions(attr)),
            Condition::Not(x) => x.mentions(attr),
        }
    }

    /// Replace every reference to `attr` by `rhs`.
    pub fn substitute(&self, attr: &str, rhs: &Expr) -> Condition {
        self.map_atoms(&mut |e| e.substitute(attr, rhs))
    }

    pub fn substitute_all(&self, map: &HashMap<Arc<str>, Expr>) -> Condition {
        if map.is_empty() {
            return self.clone();
        }
        self.map_atoms(&mut |e| e.substitute_all(map))
    }

    fn map_atoms(&self, f: &mut impl FnMut(&Expr) -> Expr) -> Condition {
        match self {
            Condition::True => Condition::True,
            Condition::False => Condition::False,
            Condition::Cmp(op, l, r) => Condition::Cmp(*op, f(l), f(r)),
            Condition::In(e, vs) => Condition::In(f(e), vs.clone()),
            Condition::And(xs) => Condition::And(xs.iter().map(|x| x.map_atoms(f)).collect()),
            Condition::Or(xs) => Condition::Or(xs.iter().map(|x| x.map_atoms(f)).collect()),
            Condition::Not(x) => Condition::not(x.map_atoms(f)),
        }
    }

    /// Rewrite each atom mentioning `attr` as `(¬p ∧ atom) ∨ (p ∧ atom[attr:=rhs])`.
    pub(crate) fn guard_atoms(&self, attr: &str, rhs: &Expr, p: &Condition) -> Condition {
        match self {
            Condition::Cmp(..) | Condition::In(..) if self.mentions(attr) => Condition::Or(vec![
                Condition::And(vec![Condition::not(p.clone()), self.clone()]),
                Condition::And(vec![p.clone(), self.substitute(attr, rhs)]),
            ]),
            Condition::And(xs) => Condition::And(xs.iter().map(|x| x.guard_atoms(attr, rhs, p)).collect()),
            Condition::Or(xs) => Condition::Or(xs.iter().map(|x| x.guard_atoms(attr, rhs, p)).collect()),
            Condition::Not(x) => Condition::not(x.guard_atoms(attr, rhs, p)),
            other => other.clone(),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Condition::True | Condition::False => 1,
            Condition::Cmp(_, l, r) => 1 + l.size() + r.size(),
            Condition::In(e, vs) => 1 + e.size() + vs.len(),
            Condition::And(xs) | Condition::Or(xs) => 1 + xs.iter().map(|x| x.size()).sum::<usize>(),
            Condition::Not(x) => 1 + x.size(),
        }
    }

    pub fn bind(&self, schema: &Schema) -> Result<BoundCondition, EvalError> {
        Ok(match self {
            Condition::True => BoundCondition::Const(true),
            Condition::False => BoundCondition::Const(false),
            Condition::Cmp(op, l, r) => BoundCondition::Cmp(*op, l.bind(schema)?, r.bind(schema)?),
            Condition::In(e, vs) => BoundCondition::In(e.bind(schema)?, vs.clone()),
            Condition::And(xs) => BoundCondition::And(xs.iter().map(|x| x.bind(schema)).collect::<Result<_, _>>()?),
            Condition::Or(xs) => BoundCondition::Or(xs.iter().map(|x| x.bind(schema)).collect::<Result<_, _>>()?),
            Condition::Not(x) => BoundCondition::Not(Box::new(x.bind(schema)?)),
        })
    }

    /// Reject comparisons between strings and numbers and arithmetic on strings.
    pub fn type_check(&self, schema: &Schema) -> Result<(), String> {
        match self {
            Condition::True | Condition::False => Ok(()),
            Condition::Cmp(_, l, r) => {
                let lt = l.static_type(schema)?;
                let rt = r.static_type(schema)?;
                check_comparable(lt, rt)
            }
            Condition::In(e, vs) => {
                let et = e.static_type(schema)?;
                for v in vs {
                    let vt = Expr::Lit(v.clone()).static_type(schema)?;
                    check_comparable(et, vt)?;
                }
                Ok(())
            }
            Condition::And(xs) | Condition::Or(xs) => xs.iter().try_for_each(|x| x.type_check(schema)),
            Condition::Not(x) => x.type_check(schema),
        }
    }
}

fn check_comparable(a: Option<ColumnType>, b: Option<ColumnType>) -> Result<(), String> {
    match (a, b) {
        (Some(ColumnType::Str), Some(ColumnType::Int | ColumnType::Dec))
        | (Some(ColumnType::Int | ColumnType::Dec), Some(ColumnType::Str)) => {
            Err("cannot compare a string with a number".to_string())
        }
        _ => Ok(()),
    }
}

#[derive(Clone, Debug)]
pub enum BoundCondition {
    Const(bool),
    Cmp(CmpOp, BoundExpr, BoundExpr),
    In(BoundExpr, Vec<Value>),
    And(Vec<BoundCondition>),
    Or(Vec<BoundCondition>),
    Not(Box<BoundCondition>),
}

impl BoundCondition {
    /// Atoms are false on tombstoned rows and whenever a side is Null or
    /// the operands are not comparable; connectives are two-valued.
    pub fn eval(&self, vals: &[Value], tombstone: bool) -> Result<bool, EvalError> {
        Ok(match self {
            BoundCondition::Const(b) => *b,
            BoundCondition::Cmp(op, l, r) => {
                if tombstone {
                    return Ok(false);
                }
                let a = l.eval(vals)?;
                let b = r.eval(vals)?;
                a.compare(&b).is_some_and(|o| op.holds(o))
            }
            BoundCondition::In(e, vs) => {
                if tombstone {
                    return Ok(false);
                }
                let a = e.eval(vals)?;
                vs.iter().any(|v| a.compare(v) == Some(Ordering::Equal))
            }
            BoundCondition::And(xs) => {
                for x in xs {
                    if !x.eval(vals, tombstone)? {
                        return Ok(false);
                    }
                }
                true
            }
            BoundCondition::Or(xs) => {
                for x in xs {
                    if x.eval(vals, tombstone)? {
                        return Ok(true);
                    }
                }
                false
            }
            BoundCondition::Not(x) => !x.eval(vals, tombstone)?,
        })
    }
}

pub fn eval_condition(schema: &Schema, t: &Tuple, c: &Condition) -> Result<bool, EvalError> {
    c.bind(schema)?.eval(&t.values, t.tombstone)
}

/// Equivalence-preserving cleanup, iterated to a fixpoint.
pub fn simplify(c: &Condition) -> Condition {
    let mut cur = simplify_once(c);
    for _ in 0..64 {
        let next = simplify_once(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

fn simplify_once(c: &Condition) -> Condition {
    match c {
        Condition::True | Condition::False => c.clone(),
        Condition::Cmp(op, l, r) => {
            let l = l.fold();
            let r = r.fold();
            if matches!(l, Expr::Lit(Value::Null)) || matches!(r, Expr::Lit(Value::Null)) {
                return Condition::False;
            }
            if let (Expr::Lit(a), Expr::Lit(b)) = (&l, &r) {
                return Condition::constant(a.compare(b).is_some_and(|o| op.holds(o)));
            }
            if l == r && matches!(op, CmpOp::Ne | CmpOp::Lt | CmpOp::Gt) {
                return Condition::False;
            }
            Condition::Cmp(*op, l, r)
        }
        Condition::In(e, vs) => {
            let e = e.fold();
            let mut vals: Vec<Value> = Vec::with_capacity(vs.len());
            for v in vs {
                if !v.is_null() && !vals.iter().any(|w| w == v && w.type_name() == v.type_name()) {
                    vals.push(v.clone());
                }
            }
            if vals.is_empty() || matches!(e, Expr::Lit(Value::Null)) {
                return Condition::False;
            }
            if let Expr::Lit(a) = &e {
                return Condition::constant(vals.iter().any(|v| a.compare(v) == Some(Ordering::Equal)));
            }
            if vals.len() == 1 {
                return Condition::Cmp(CmpOp::Eq, e, Expr::Lit(vals.pop().unwrap()));
            }
            Condition::In(e, vals)
        }
        Condition::Not(x) => match simplify_once(x) {
            Condition::True => Condition::False,
            Condition::False => Condition::True,
            Condition::Not(y) => *y,
            y => Condition::not(y),
        },
        Condition::And(xs) => simplify_junction(xs, true),
        Condition::Or(xs) => simplify_junction(xs, false),
    }
}

fn is_negation(a: &Condition, b: &Condition) -> bool {
    matches!(a, Condition::Not(x) if **x == *b) || matches!(b, Condition::Not(y) if **y == *a)
}

/// `attr = literal` in either orientation.
fn attr_eq_literal(c: &Condition) -> Option<(&str, &Value)> {
    match c {
        Condition::Cmp(CmpOp::Eq, Expr::Attr(a), Expr::Lit(v))
        | Condition::Cmp(CmpOp::Eq, Expr::Lit(v), Expr::Attr(a)) => Some((a, v)),
        _ => None,
    }
}

/// Shared logic for AND (`conj`) and OR (its dual).
fn simplify_junction(xs: &[Condition], conj: bool) -> Condition {
    let (unit, zero) = if conj { (Condition::True, Condition::False) } else { (Condition::False, Condition::True) };
    let mut items: Vec<Condition> = Vec::with_capacity(xs.len());
    for x in xs {
        let s = simplify_once(x);
        let parts = match s {
            Condition::And(ys) if conj => ys,
            Condition::Or(ys) if !conj => ys,
            other => vec![other],
        };
        for p in parts {
            if p == unit {
                continue;
            }
            if p == zero {
                return zero;
            }
            if !items.contains(&p) {
                items.push(p);
            }
        }
    }
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            if is_negation(&items[i], &items[j]) {
                return zero;
            }
        }
    }
    if conj {
        let mut seen: HashMap<&str, &Value> = HashMap::new();
        for it in &items {
            if let Some((a, v)) = attr_eq_literal(it) {
                match seen.get(a) {
                    Some(w) if *w != v => return Condition::False,
                    _ => {
                        seen.insert(a, v);
                    }
                }
            }
        }
    }
    // Absorption against sibling terms:
    //   X ∧ (X ∨ Y) → X        X ∧ (¬X ∨ Y) → X ∧ Y
    //   X ∨ (X ∧ Y) → X        X ∨ (¬X ∧ Y) → X ∨ Y
    // Applied one item at a time against the current siblings.
    let mut out = items;
    let mut idx = 0;
    while idx < out.len() {
        let inner = match (&out[idx], conj) {
            (Condition::Or(ys), true) | (Condition::And(ys), false) => Some(ys.clone()),
            _ => None,
        };
        let Some(ys) = inner else {
            idx += 1;
            continue;
        };
        let others: Vec<&Condition> = out.iter().enumerate().filter(|(k, _)| *k != idx).map(|(_, s)| s).collect();
        if ys.iter().any(|y| others.contains(&y)) {
            out.remove(idx);
            continue;
        }
        let kept: Vec<Condition> = ys.iter().filter(|y| !others.iter().any(|s| is_negation(s, y))).cloned().collect();
        if kept.len() != ys.len() {
            out[idx] = match kept.len() {
                // Every alternative contradicted by a sibling.
                0 => return zero,
                1 => kept.into_iter().next().unwrap(),
                _ if conj => Condition::Or(kept),
                _ => Condition::And(kept),
            };
        }
        idx += 1;
    }
    match out.len() {
        0 => unit,
        1 => out.pop().unwrap(),
        _ if conj => Condition::And(out),
        _ => Condition::Or(out),
    }
}

/// Order-insensitive normal form for syntactic comparison: children of
/// AND/OR sorted by their printed text, nested junctions flattened.
pub fn canonicalize(c: &Condition) -> Condition {
    match c {
        Condition::And(xs) | Condition::Or(xs) => {
            let conj = matches!(c, Condition::And(_));
            let mut kids: Vec<Condition> = Vec::new();
            for x in xs {
                match canonicalize(x) {
                    Condition::And(ys) if conj => kids.extend(ys),
                    Condition::Or(ys) if !conj => kids.extend(ys),
                    y => kids.push(y),
                }
            }
            kids.sort_by_cached_key(|k| k.to_string());
            kids.dedup();
            if conj {
                Condition::And(kids)
            } else {
                Condition::Or(kids)
            }
        }
        Condition::Not(x) => Condition::not(canonicalize(x)),
        other => other.clone(),
    }
}
