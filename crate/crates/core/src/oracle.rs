//! Ground truth and baselines: the per-row state-set DP, exhaustive
//! interleaving replay, virtual locking at two granularities, and the
//! record-level three-way diff.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modification::{apply_history, enumerate_interleavings, BoundMod, History, ModKind, RowState};
use crate::table::{RowId, TableSnapshot};

pub const DEFAULT_STATE_LIMIT: usize = 1_000_000;

/// Possible states of one row after some prefix of each history.
#[derive(Clone, Debug, Default)]
pub struct TupleStateSet {
    pub states: Vec<RowState>,
}

impl TupleStateSet {
    fn single(s: RowState) -> TupleStateSet {
        TupleStateSet { states: vec![s] }
    }

    fn add(&mut self, s: RowState) {
        if !self.states.contains(&s) {
            self.states.push(s);
        }
    }

    /// Number of observably different final states.
    pub fn distinct_visible(&self) -> usize {
        let mut reps: Vec<&RowState> = Vec::new();
        for s in &self.states {
            if !reps.iter().any(|r| r.same_visible(s)) {
                reps.push(s);
            }
        }
        reps.len()
    }
}

/// Rows the histories could ever touch: every stored base row plus every
/// insert-born row.
fn candidate_rows(d0: &TableSnapshot, h1: &History, h2: &History) -> Vec<RowId> {
    let mut out: Vec<RowId> = d0.tuples().filter(|t| !t.tombstone).map(|t| t.rid.clone()).collect();
    for m in h1.mods.iter().chain(&h2.mods) {
        if let Some(r) = m.inserted_rid() {
            out.push(r);
        }
    }
    out
}

/// Final state sets for one row: T[i][j] = φi(T[i-1][j]) ∪ ψj(T[i][j-1]).
pub fn row_final_states(
    rid: &RowId,
    start: RowState,
    b1: &[BoundMod],
    b2: &[BoundMod],
    limit: usize,
) -> Result<TupleStateSet> {
    let (m, n) = (b1.len(), b2.len());
    let mut total = 1usize;
    let mut prev_row: Vec<TupleStateSet> = Vec::with_capacity(n + 1);
    // i = 0: only the second history has run.
    prev_row.push(TupleStateSet::single(start));
    for j in 1..=n {
        let mut set = TupleStateSet::default();
        for s in &prev_row[j - 1].states {
            set.add(b2[j - 1].step(rid, s)?);
        }
        total += set.states.len();
        prev_row.push(set);
    }
    for i in 1..=m {
        let mut row: Vec<TupleStateSet> = Vec::with_capacity(n + 1);
        let mut first = TupleStateSet::default();
        for s in &prev_row[0].states {
            first.add(b1[i - 1].step(rid, s)?);
        }
        total += first.states.len();
        row.push(first);
        for j in 1..=n {
            let mut set = TupleStateSet::default();
            for s in &prev_row[j].states {
                set.add(b1[i - 1].step(rid, s)?);
            }
            for s in &row[j - 1].states {
                set.add(b2[j - 1].step(rid, s)?);
            }
            total += set.states.len();
            if total > limit {
                return Err(Error::StateExplosion { rid: rid.to_string(), states: total, limit });
            }
            row.push(set);
        }
        prev_row = row;
    }
    Ok(prev_row.pop().unwrap())
}

/// Exactly the rows whose final state differs between some two interleavings.
pub fn oracle_conflicts(d0: &TableSnapshot, h1: &History, h2: &History) -> Result<BTreeSet<RowId>> {
    oracle_conflicts_with_limit(d0, h1, h2, DEFAULT_STATE_LIMIT)
}

pub fn oracle_conflicts_with_limit(
    d0: &TableSnapshot,
    h1: &History,
    h2: &History,
    limit: usize,
) -> Result<BTreeSet<RowId>> {
    let schema = &d0.schema;
    let b1: Vec<BoundMod> = h1.mods.iter().map(|m| m.bind(schema)).collect::<Result<_>>()?;
    let b2: Vec<BoundMod> = h2.mods.iter().map(|m| m.bind(schema)).collect::<Result<_>>()?;
    let rows = candidate_rows(d0, h1, h2);
    let flagged: Vec<Option<RowId>> = rows
        .par_iter()
        .map(|rid| -> Result<Option<RowId>> {
            let start = RowState::from_tuple(d0.get(rid));
            let fin = row_final_states(rid, start, &b1, &b2, limit)?;
            Ok((fin.distinct_visible() > 1).then(|| rid.clone()))
        })
        .collect::<Result<_>>()?;
    Ok(flagged.into_iter().flatten().collect())
}

/// Rows whose final state differs across enumerated interleavings.
pub fn exhaustive_conflicts(d0: &TableSnapshot, h1: &History, h2: &History, cap: usize) -> Result<BTreeSet<RowId>> {
    let mut first: Option<TableSnapshot> = None;
    let mut out = BTreeSet::new();
    for il in enumerate_interleavings(h1, h2, cap)? {
        let fin = apply_history(d0, il.resolve(h1, h2)?)?;
        match &first {
            None => first = Some(fin),
            Some(f) => out.extend(f.diff_rows(&fin)),
        }
    }
    Ok(out)
}

/// True when every interleaving replays to the same final snapshot.
pub fn exhaustive_automergeable(d0: &TableSnapshot, h1: &History, h2: &History, cap: usize) -> Result<bool> {
    let mut first: Option<TableSnapshot> = None;
    for il in enumerate_interleavings(h1, h2, cap)? {
        let fin = apply_history(d0, il.resolve(h1, h2)?)?;
        match &first {
            None => first = Some(fin),
            Some(f) => {
                if !f.snapshot_equal(&fin)? {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Record,
    Cell,
}

/// Lock unit of the cell-level scheme: an attribute cell, or the row's
/// existence (touched by inserts, deletes and every predicate scan).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Unit {
    Cell(usize),
    Exists,
}

/// Read and write requests of one branch.
#[derive(Clone, Debug, Default)]
pub struct LockLedger {
    /// Explicit per-row requests.
    pub reads: BTreeMap<RowId, BTreeSet<Unit>>,
    pub writes: BTreeMap<RowId, BTreeSet<Unit>>,
    /// Units read on every row by predicate scans.
    pub scanned: BTreeSet<Unit>,
}

fn branch_ledger(d0: &TableSnapshot, h: &History) -> Result<LockLedger> {
    let schema = &d0.schema;
    let arity = schema.arity();
    let mut ledger = LockLedger::default();
    let mut v = d0.clone();
    for m in &h.mods {
        let bound = m.bind(schema)?;
        match &m.kind {
            ModKind::Insert { .. } => {
                let rid = m.inserted_rid().unwrap();
                let w = ledger.writes.entry(rid).or_default();
                w.extend((0..arity).map(Unit::Cell));
                w.insert(Unit::Exists);
            }
            ModKind::Update { pred, assign } => {
                for a in pred.attrs() {
                    ledger.scanned.insert(Unit::Cell(schema.resolve(a)?));
                }
                ledger.scanned.insert(Unit::Exists);
                let target = schema.resolve(&assign.target)?;
                let mut rhs_attrs = BTreeSet::new();
                assign.rhs.collect_attrs(&mut rhs_attrs);
                let rhs_cols: Vec<usize> = rhs_attrs.iter().map(|a| schema.resolve(a)).collect::<Result<_, _>>()?;
                for rid in v.select(pred)? {
                    ledger.reads.entry(rid.clone()).or_default().extend(rhs_cols.iter().map(|c| Unit::Cell(*c)));
                    ledger.writes.entry(rid).or_default().insert(Unit::Cell(target));
                }
            }
            ModKind::Delete { pred } => {
                for a in pred.attrs() {
                    ledger.scanned.insert(Unit::Cell(schema.resolve(a)?));
                }
                ledger.scanned.insert(Unit::Exists);
                for rid in v.select(pred)? {
                    let w = ledger.writes.entry(rid).or_default();
                    w.extend((0..arity).map(Unit::Cell));
                    w.insert(Unit::Exists);
                }
            }
        }
        step_in_place(&mut v, &bound)?;
    }
    Ok(ledger)
}

fn step_in_place(v: &mut TableSnapshot, m: &BoundMod) -> Result<()> {
    let mut changed = Vec::new();
    if let Some(rid) = m.inserted() {
        let st = m.step(rid, &RowState::Absent)?;
        if let RowState::Live(vals) = st {
            changed.push(crate::table::Tuple::new(rid.clone(), vals.to_vec()));
        }
    } else {
        for t in v.visible() {
            let before = RowState::from_tuple(Some(t));
            match m.step(&t.rid, &before)? {
                RowState::Live(vals) if !before.same_visible(&RowState::Live(vals.clone())) => {
                    changed.push(crate::table::Tuple::new(t.rid.clone(), vals.to_vec()))
                }
                RowState::Dead => changed.push(t.killed()),
                _ => {}
            }
        }
    }
    for t in changed {
        v.insert(t)?;
    }
    Ok(())
}

fn read_by(ledger: &LockLedger, rid: &RowId, u: Unit, record: bool) -> bool {
    if record {
        !ledger.scanned.is_empty() || ledger.reads.contains_key(rid)
    } else {
        ledger.scanned.contains(&u) || ledger.reads.get(rid).is_some_and(|s| s.contains(&u))
    }
}

fn written_by(ledger: &LockLedger, rid: &RowId, u: Unit, record: bool) -> bool {
    match ledger.writes.get(rid) {
        None => false,
        Some(s) => record || s.contains(&u),
    }
}

/// Rows holding any unit with a cross-branch read-write or write-write clash.
pub fn locking_conflicts(d0: &TableSnapshot, h1: &History, h2: &History, g: Granularity) -> Result<BTreeSet<RowId>> {
    let l1 = branch_ledger(d0, h1)?;
    let l2 = branch_ledger(d0, h2)?;
    let record = g == Granularity::Record;
    let mut out = BTreeSet::new();
    for (writer, other) in [(&l1, &l2), (&l2, &l1)] {
        for (rid, units) in &writer.writes {
            if out.contains(rid) {
                continue;
            }
            let hit = units.iter().any(|u| written_by(other, rid, *u, record) || read_by(other, rid, *u, record));
            if hit {
                out.insert(rid.clone());
            }
        }
    }
    Ok(out)
}

/// Rows whose base, first-branch and second-branch states are pairwise
/// different, absence counting as a state of its own.
pub fn three_way_diff_conflicts(d0: &TableSnapshot, f1: &TableSnapshot, f2: &TableSnapshot) -> Result<BTreeSet<RowId>> {
    if d0.schema != f1.schema || d0.schema != f2.schema {
        return Err(Error::SchemaMismatch("three-way diff over different schemas".into()));
    }
    let mut ids: HashSet<&RowId> = HashSet::new();
    for s in [d0, f1, f2] {
        ids.extend(s.visible().map(|t| &t.rid));
    }
    let state = |s: &TableSnapshot, r: &RowId| RowState::from_tuple(s.get(r));
    let mut out = BTreeSet::new();
    for rid in ids {
        let (a, b, c) = (state(d0, rid), state(f1, rid), state(f2, rid));
        if !a.same_visible(&b) && !a.same_visible(&c) && !b.same_visible(&c) {
            out.insert(rid.clone());
        }
    }
    Ok(out)
}

/// Replays each branch on its own, as the diff baseline requires.
pub fn branch_finals(d0: &TableSnapshot, h1: &History, h2: &History) -> Result<(TableSnapshot, TableSnapshot)> {
    Ok((apply_history(d0, &h1.mods)?, apply_history(d0, &h2.mods)?))
}

/// Count of rows per origin, handy for percentage reporting.
pub fn rows_by_origin(rows: &BTreeSet<RowId>) -> HashMap<String, usize> {
    let mut out = HashMap::new();
    for r in rows {
        *out.entry(r.origin.to_string()).or_default() += 1;
    }
    out
}
