//! Pairwise commutativity analysis and the conflict-set driver.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backtrack::{backtrack_condition, backtrack_through};
use crate::condition::{simplify, Condition};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::modification::{History, ModId, ModKind, Modification, RowState};
use crate::table::{RowId, Schema, TableSnapshot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConflictKind {
    WW,
    RW,
    WR,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairConflict {
    /// Zero-based positions in the two histories.
    pub i: usize,
    pub j: usize,
    pub left: ModId,
    pub right: ModId,
    pub kinds: BTreeSet<ConflictKind>,
    #[serde(serialize_with = "ser_display")]
    pub cond_on_d0: Condition,
    pub rows: BTreeSet<RowId>,
    pub flagged_inserts: BTreeSet<RowId>,
}

fn ser_display<S: serde::Serializer, T: std::fmt::Display>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConflictReport {
    pub pairs: Vec<PairConflict>,
    pub conflict_set: BTreeSet<RowId>,
    pub auto_mergeable: bool,
}

/// Outcome of comparing the two application orders of a pair.
#[derive(Clone, Debug, PartialEq)]
pub struct NonCommute {
    /// Holds on the existing rows whose final state depends on the order.
    pub cond: Condition,
    /// Rows created by either modification whose state depends on the order.
    pub insert_rows: BTreeSet<RowId>,
}

impl NonCommute {
    pub fn none() -> NonCommute {
        NonCommute { cond: Condition::False, insert_rows: BTreeSet::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.cond.is_false() && self.insert_rows.is_empty()
    }
}

/// Symbolic state of one row: attribute expressions over the original row.
#[derive(Clone, Debug)]
struct Sym {
    dead: bool,
    vals: HashMap<Arc<str>, Expr>,
}

impl Sym {
    fn start() -> Sym {
        Sym { dead: false, vals: HashMap::new() }
    }

    fn guard(&self, pred: &Condition) -> Condition {
        if self.dead {
            Condition::False
        } else {
            pred.substitute_all(&self.vals)
        }
    }

    fn apply(&self, m: &Modification) -> Sym {
        match &m.kind {
            ModKind::Update { assign, .. } => {
                let rhs = assign.rhs.substitute_all(&self.vals);
                let mut vals = self.vals.clone();
                vals.insert(Arc::from(assign.target.as_str()), rhs);
                Sym { dead: false, vals }
            }
            ModKind::Delete { .. } => Sym { dead: true, vals: HashMap::new() },
            ModKind::Insert { .. } => self.clone(),
        }
    }

    fn get(&self, attr: &Arc<str>) -> Expr {
        self.vals.get(attr).cloned().unwrap_or_else(|| Expr::Attr(attr.clone()))
    }

    fn differs(&self, other: &Sym) -> Condition {
        match (self.dead, other.dead) {
            (true, true) => Condition::False,
            (true, false) | (false, true) => Condition::True,
            (false, false) => {
                let mut attrs: Vec<&Arc<str>> = self.vals.keys().chain(other.vals.keys()).collect();
                attrs.sort();
                attrs.dedup();
                let mut alts = Vec::new();
                for a in attrs {
                    let (x, y) = (self.get(a), other.get(a));
                    if x != y {
                        alts.push(Condition::distinct(&x, &y));
                    }
                }
                Condition::Or(alts)
            }
        }
    }
}

fn literal(c: Condition, holds: bool) -> Condition {
    if holds {
        c
    } else {
        Condition::not(c)
    }
}

/// Do `m1` and `m2` touch overlapping attributes at all?
fn footprints_overlap(schema: &Schema, m1: &Modification, m2: &Modification) -> bool {
    let (r1, w1) = (m1.reads(), m1.writes(schema));
    let (r2, w2) = (m2.reads(), m2.writes(schema));
    !w1.is_disjoint(&w2) || !w1.is_disjoint(&r2) || !w2.is_disjoint(&r1)
}

/// Conflict kinds suggested by attribute overlap.
pub fn pair_kinds(schema: &Schema, phi: &Modification, psi: &Modification) -> BTreeSet<ConflictKind> {
    let mut out = BTreeSet::new();
    let (r1, w1) = (phi.reads(), phi.writes(schema));
    let (r2, w2) = (psi.reads(), psi.writes(schema));
    if !w1.is_disjoint(&w2) {
        out.insert(ConflictKind::WW);
    }
    if !r1.is_disjoint(&w2) {
        out.insert(ConflictKind::RW);
    }
    if !w1.is_disjoint(&r2) {
        out.insert(ConflictKind::WR);
    }
    out
}

/// The rows on which applying `phi` then `psi` differs from `psi` then `phi`.
pub fn noncommute_condition(schema: &Schema, phi: &Modification, psi: &Modification) -> Result<NonCommute> {
    match (&phi.kind, &psi.kind) {
        (ModKind::Insert { .. }, ModKind::Insert { .. }) => return Ok(NonCommute::none()),
        (ModKind::Insert { .. }, _) => return insert_verdict(schema, phi, psi),
        (_, ModKind::Insert { .. }) => return insert_verdict(schema, psi, phi),
        _ => {}
    }
    if !footprints_overlap(schema, phi, psi) {
        return Ok(NonCommute::none());
    }
    let p = phi.pred().unwrap();
    let q = psi.pred().unwrap();
    let s0 = Sym::start();
    let mut alts = Vec::new();
    for q_first in [true, false] {
        let s_q = if q_first { s0.apply(psi) } else { s0.clone() };
        let p_after = s_q.guard(p);
        for p_after_holds in [true, false] {
            let end_a = if p_after_holds { s_q.apply(phi) } else { s_q.clone() };
            for p_first in [true, false] {
                let s_p = if p_first { s0.apply(phi) } else { s0.clone() };
                let q_after = s_p.guard(q);
                for q_after_holds in [true, false] {
                    let end_b = if q_after_holds { s_p.apply(psi) } else { s_p.clone() };
                    let guard = simplify(&Condition::And(vec![
                        literal(q.clone(), q_first),
                        literal(p_after.clone(), p_after_holds),
                        literal(p.clone(), p_first),
                        literal(q_after.clone(), q_after_holds),
                    ]));
                    if guard.is_false() {
                        continue;
                    }
                    let diff = simplify(&end_a.differs(&end_b));
                    if diff.is_false() {
                        continue;
                    }
                    alts.push(Condition::And(vec![guard, diff]));
                }
            }
        }
    }
    Ok(NonCommute { cond: simplify(&Condition::Or(alts)), insert_rows: BTreeSet::new() })
}

/// An inserted row conflicts with `other` exactly when `other` would
/// change it (it sees the row only in one of the two orders).
fn insert_verdict(schema: &Schema, ins: &Modification, other: &Modification) -> Result<NonCommute> {
    let bound_ins = ins.bind(schema)?;
    let rid = bound_ins.inserted().unwrap().clone();
    let born = bound_ins.step(&rid, &RowState::Absent)?;
    let after = other.bind(schema)?.step(&rid, &born)?;
    let mut rows = BTreeSet::new();
    if !born.same_visible(&after) {
        rows.insert(rid);
    }
    Ok(NonCommute { cond: Condition::False, insert_rows: rows })
}

fn constant_update(m: &Modification) -> Option<(&Condition, &str, &crate::value::Value)> {
    match &m.kind {
        ModKind::Update { pred, assign } => assign.rhs.as_literal().map(|v| (pred, assign.target.as_str(), v)),
        _ => None,
    }
}

fn membership_after(schema: &Schema, pred: &Condition, writer: &Modification) -> Result<Condition> {
    Ok(simplify(&backtrack_condition(schema, pred, writer)?.cond))
}

/// Write-write conflicts between two constant-assignment updates; `None`
/// when they write different attributes or the same value.
pub fn ww_condition(schema: &Schema, phi: &Modification, psi: &Modification) -> Result<Option<Condition>> {
    let (Some((p, b, bv)), Some((q, l, lv))) = (constant_update(phi), constant_update(psi)) else {
        return Err(Error::Invalid("write-write analysis needs two constant-assignment updates".into()));
    };
    if b != l || bv == lv {
        return Ok(None);
    }
    let p_after = membership_after(schema, p, psi)?;
    let q_after = membership_after(schema, q, phi)?;
    // Both still apply after the other: the later write wins, so order matters.
    let both = Condition::and(p_after.clone(), q_after.clone());
    // Each applies only when it runs first: the first write wins.
    let first_only = Condition::And(vec![Condition::not(p_after), Condition::not(q_after), p.clone(), q.clone()]);
    Ok(Some(simplify(&Condition::or(both, first_only))))
}

/// Read-write conflicts: `writer` changes whether `reader` selects a row.
pub fn rw_condition(schema: &Schema, reader: &Modification, writer: &Modification) -> Result<Option<Condition>> {
    let Some((_, l, _)) = constant_update(writer) else {
        return Err(Error::Invalid("read-write analysis needs a constant-assignment writer".into()));
    };
    let p = match &reader.kind {
        ModKind::Update { pred, assign } => {
            if assign.rhs.as_literal().is_none() {
                return Err(Error::Invalid("read-write analysis needs a constant-assignment reader".into()));
            }
            if assign.target == l {
                return Ok(None);
            }
            pred
        }
        ModKind::Delete { pred } => pred,
        ModKind::Insert { .. } => return Err(Error::Invalid("an insert reads nothing".into())),
    };
    if !p.mentions(l) {
        return Ok(None);
    }
    let p_after = membership_after(schema, p, writer)?;
    let flips = Condition::or(
        Condition::and(p.clone(), Condition::not(p_after.clone())),
        Condition::and(Condition::not(p.clone()), p_after),
    );
    let changes = match &reader.kind {
        ModKind::Update { assign, .. } => Condition::distinct(&Expr::attr(&assign.target), &assign.rhs),
        _ => Condition::True,
    };
    Ok(Some(simplify(&Condition::and(changes, flips))))
}

fn check_schema(schema: &Schema, h: &History) -> Result<()> {
    h.validate()?;
    for m in &h.mods {
        m.bind(schema).map_err(|e| Error::SchemaMismatch(format!("{}: {e}", m.id)))?;
    }
    Ok(())
}

/// The symbolic half of `pair_conflict`: the condition on `d0` plus the
/// inserted rows flagged along the way.
pub fn pair_condition(
    schema: &Schema,
    phi: &Modification,
    psi: &Modification,
    prefix: &[&Modification],
) -> Result<Option<(Condition, BTreeSet<RowId>)>> {
    let nc = noncommute_condition(schema, phi, psi)?;
    if nc.is_empty() {
        return Ok(None);
    }
    let back = backtrack_through(schema, &nc.cond, prefix.iter().copied())?;
    let mut flagged: BTreeSet<RowId> = back.flagged_inserts.into_keys().collect();
    flagged.extend(nc.insert_rows);
    Ok(Some((back.cond, flagged)))
}

/// Backtracked condition, every flagged row of `d0`, and the flagged
/// inserted rows among them.
pub type PairRows = (Condition, BTreeSet<RowId>, BTreeSet<RowId>);

/// Analyze one pair on the version reached by `prefix` (in application
/// order) and map the result back to rows of `d0`.
pub fn pair_conflict(
    d0: &TableSnapshot,
    phi: &Modification,
    psi: &Modification,
    prefix: &[&Modification],
) -> Result<Option<PairRows>> {
    let Some((cond, flagged)) = pair_condition(&d0.schema, phi, psi, prefix)? else {
        return Ok(None);
    };
    let mut rows = if cond.is_false() { BTreeSet::new() } else { d0.select_indexed(&cond)? };
    rows.extend(flagged.iter().cloned());
    Ok(Some((cond, rows, flagged)))
}

/// Same question as `pair_conflict`, answered as a yes/no without
/// collecting every row.
pub fn pair_conflicts_any(
    d0: &TableSnapshot,
    phi: &Modification,
    psi: &Modification,
    prefix: &[&Modification],
) -> Result<bool> {
    let schema = &d0.schema;
    let nc = noncommute_condition(schema, phi, psi)?;
    if nc.is_empty() {
        return Ok(false);
    }
    if !nc.insert_rows.is_empty() {
        return Ok(true);
    }
    let back = backtrack_through(schema, &nc.cond, prefix.iter().copied())?;
    if !back.flagged_inserts.is_empty() {
        return Ok(true);
    }
    Ok(!back.cond.is_false() && d0.any_match_indexed(&back.cond)?)
}

/// Flag every row whose final state may depend on how the two histories
/// are interleaved. Never replays either history.
pub fn detect(d0: &TableSnapshot, h1: &History, h2: &History) -> Result<ConflictReport> {
    let schema = &d0.schema;
    check_schema(schema, h1)?;
    check_schema(schema, h2)?;
    let pairs: Vec<(usize, usize)> = (0..h1.len()).flat_map(|i| (0..h2.len()).map(move |j| (i, j))).collect();
    let symbolic = pairs
        .par_iter()
        .map(|&(i, j)| {
            let prefix: Vec<&Modification> = h1.mods[..i].iter().chain(&h2.mods[..j]).collect();
            let found = pair_condition(schema, &h1.mods[i], &h2.mods[j], &prefix)?;
            Ok(found.map(|(c, f)| (i, j, c, f)))
        })
        .collect::<Result<Vec<_>>>()?;
    let symbolic: Vec<_> = symbolic.into_iter().flatten().collect();
    // One scan of d0 answers every pair.
    let conds: Vec<Condition> = symbolic.iter().filter(|s| !s.2.is_false()).map(|s| s.2.clone()).collect();
    let mut selected = d0.select_many(&conds)?.into_iter();
    let mut found = Vec::new();
    for (i, j, cond, flagged) in symbolic {
        let mut rows = if cond.is_false() { BTreeSet::new() } else { selected.next().unwrap_or_default() };
        rows.extend(flagged.iter().cloned());
        if rows.is_empty() {
            continue;
        }
        let (phi, psi) = (&h1.mods[i], &h2.mods[j]);
        found.push(Some(PairConflict {
            i,
            j,
            left: phi.id.clone(),
            right: psi.id.clone(),
            kinds: pair_kinds(schema, phi, psi),
            cond_on_d0: cond,
            rows,
            flagged_inserts: flagged,
        }));
    }
    let pairs: Vec<PairConflict> = found.into_iter().flatten().collect();
    let conflict_set: BTreeSet<RowId> = pairs.iter().flat_map(|p| p.rows.iter().cloned()).collect();
    Ok(ConflictReport { auto_mergeable: conflict_set.is_empty(), pairs, conflict_set })
}

/// JSON summary: per pair the indices, kinds, printed condition, row
/// count and up to ten sample rows.
pub fn report_json(report: &ConflictReport) -> serde_json::Value {
    let pairs: Vec<serde_json::Value> = report
        .pairs
        .iter()
        .map(|p| {
            serde_json::json!({
                "i": p.i,
                "j": p.j,
                "left": p.left.to_string(),
                "right": p.right.to_string(),
                "kinds": p.kinds,
                "condition": p.cond_on_d0.to_string(),
                "row_count": p.rows.len(),
                "sample_rows": p.rows.iter().take(10).map(|r| r.to_string()).collect::<Vec<_>>(),
            })
        })
        .collect();
    serde_json::json!({
        "auto_mergeable": report.auto_mergeable,
        "conflict_count": report.conflict_set.len(),
        "conflict_set": report.conflict_set.iter().map(|r| r.to_string()).collect::<Vec<_>>(),
        "pairs": pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{self, *};
    use crate::modification::apply_modification;
    use crate::sql::parse_condition;

    fn m(text: &str, seq: u64) -> Modification {
        Modification::parse(text, &fixture::schema(), ModId::new("t", seq)).unwrap()
    }

    #[test]
    fn state_renames_have_no_write_conflict() {
        let s = fixture::schema();
        let phi = m("UPDATE db SET State = 'WA' WHERE City = 'Seattle'", 1);
        let psi = m("UPDATE db SET State = 'DC' WHERE State = 'D.C.'", 2);
        assert_eq!(ww_condition(&s, &phi, &psi).unwrap(), Some(Condition::False));
    }

    #[test]
    fn identical_updates_are_not_a_write_conflict() {
        let s = fixture::schema();
        let phi = m("UPDATE db SET State = 'WA' WHERE City = 'Seattle'", 1);
        assert_eq!(ww_condition(&s, &phi, &phi).unwrap(), None);
        assert!(noncommute_condition(&s, &phi, &phi).unwrap().is_empty());
    }

    #[test]
    fn first_writer_wins_term() {
        let s = fixture::schema();
        let phi = m("UPDATE db SET State = 's2' WHERE State = 's1'", 1);
        let psi = m("UPDATE db SET State = 's3' WHERE State = 's1'", 2);
        let c = ww_condition(&s, &phi, &psi).unwrap().unwrap();
        assert_eq!(c, parse_condition("State = 's1'").unwrap());
    }

    #[test]
    fn typo_fix_flags_one_tuple() {
        let s = fixture::schema();
        let phi = m("UPDATE db SET Population = 5 WHERE City = 'Los Angeles'", 1);
        let psi = m("UPDATE db SET City = 'Los Angeles' WHERE City = 'Los Angles'", 2);
        let c = rw_condition(&s, &phi, &psi).unwrap().unwrap();
        let rows = alvarez_table().select(&c).unwrap();
        assert_eq!(rows, rids(&[LA]));
        let general = noncommute_condition(&s, &phi, &psi).unwrap();
        assert_eq!(alvarez_table().select(&general.cond).unwrap(), rows);
    }

    #[test]
    fn rw_early_outs() {
        let s = fixture::schema();
        let (ha, _) = histories();
        let writer = m("UPDATE db SET Electricity = 3 WHERE City = 'X'", 1);
        assert_eq!(rw_condition(&s, &ha.mods[1], &writer).unwrap(), None);
        let same_target = m("UPDATE db SET Electricity = 4 WHERE Electricity = 1", 2);
        assert_eq!(rw_condition(&s, &same_target, &writer).unwrap(), None);
    }

    #[test]
    fn a1_b1_pair_flags_san_jose() {
        let s = fixture::schema();
        let d0 = base_table();
        let (ha, hb) = histories();
        let nc = noncommute_condition(&s, &ha.mods[0], &hb.mods[0]).unwrap();
        assert_eq!(d0.select(&nc.cond).unwrap(), rids(&[SAN_JOSE]));
        // per-row brute force over both orders
        let ab = apply_modification(&apply_modification(&d0, &ha.mods[0]).unwrap(), &hb.mods[0]).unwrap();
        let ba = apply_modification(&apply_modification(&d0, &hb.mods[0]).unwrap(), &ha.mods[0]).unwrap();
        assert_eq!(ab.diff_rows(&ba), rids(&[SAN_JOSE]));
    }

    #[test]
    fn insert_versus_update_closed_form() {
        let s = fixture::schema();
        let upd = m("UPDATE db SET City = 'a2' WHERE State = 'b2'", 1);
        for (city, state, expect) in [("a1", "b2", true), ("a2", "b2", false), ("a1", "b1", false)] {
            let ins = m(&format!("INSERT INTO db (City, State) VALUES ('{city}', '{state}')"), 9);
            let nc = noncommute_condition(&s, &ins, &upd).unwrap();
            assert!(nc.cond.is_false());
            assert_eq!(nc.insert_rows.contains(&RowId::new("t", 9)), expect, "{city} {state}");
            let nc2 = noncommute_condition(&s, &upd, &ins).unwrap();
            assert_eq!(nc2.insert_rows, nc.insert_rows);
        }
    }

    #[test]
    fn deletes_commute_with_each_other() {
        let s = fixture::schema();
        let a = m("DELETE FROM db WHERE Population <= 0.2", 1);
        let b = m("DELETE FROM db WHERE Electricity < 10", 2);
        assert!(noncommute_condition(&s, &a, &b).unwrap().is_empty());
    }

    #[test]
    fn detect_on_city_merge() {
        let d0 = base_table();
        let (ha, hb) = histories();
        let r = detect(&d0, &ha, &hb).unwrap();
        assert!(!r.auto_mergeable);
        assert!(r.conflict_set.contains(&rid(SAN_JOSE)));
        let json = report_json(&r);
        assert_eq!(json["auto_mergeable"], false);
        for p in &r.pairs {
            assert!(!p.kinds.is_empty());
        }
    }

    #[test]
    fn detect_trivial_cases() {
        let d0 = base_table();
        let (ha, _) = histories();
        let r = detect(&d0, &ha, &History::new("empty")).unwrap();
        assert!(r.auto_mergeable && r.conflict_set.is_empty() && r.pairs.is_empty());
        let s = fixture::schema();
        let mut x = History::new("x");
        x.push_sql(&s, "UPDATE db SET Population = 1 WHERE City = 'Seattle'").unwrap();
        let mut y = History::new("y");
        y.push_sql(&s, "UPDATE db SET Electricity = 2 WHERE State = 'CA'").unwrap();
        assert!(detect(&d0, &x, &y).unwrap().auto_mergeable);
    }
}
