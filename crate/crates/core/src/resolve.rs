//! Interactive reconciliation: build a total order of two histories by
//! asking which of two conflicting modifications should come first.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::detect::{pair_conflict, pair_conflicts_any, pair_kinds, ConflictKind};
use crate::error::{Error, Result};
use crate::modification::{
    apply_history, apply_modification, History, HistoryRecord, Interleaving, ModId, Modification, RowState, Side,
};
use crate::table::{RowId, Schema, TableSnapshot};
use crate::value::Value;

/// Which version a candidate pair is tested on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConflictScope {
    /// The version where the two would actually meet: the order so far
    /// followed by the second history's modifications that precede the
    /// candidate.
    #[default]
    MeetingVersion,
    /// The order so far only.
    CurrentVersion,
}

/// A position in one of the two histories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pick {
    pub side: Side,
    pub index: usize,
}

/// Answers whether two modifications conflict on the version produced by
/// a sequence of picks.
pub trait ConflictOracle {
    fn conflicts(&mut self, version: &[Pick], left: usize, right: usize) -> Result<bool>;
}

/// The reconciliation loop, independent of how conflicts are decided.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Engine {
    pub n1: usize,
    pub n2: usize,
    pub order: Vec<Pick>,
    pub next1: usize,
    pub next2: usize,
    pub questions: usize,
    pub pending: Option<(usize, usize)>,
    pub scope: ConflictScope,
    pub done: bool,
}

impl Engine {
    pub fn new(n1: usize, n2: usize, scope: ConflictScope) -> Engine {
        Engine { n1, n2, order: Vec::new(), next1: 0, next2: 0, questions: 0, pending: None, scope, done: false }
    }

    /// Run until a question is pending or the order is complete.
    pub fn advance(&mut self, oracle: &mut dyn ConflictOracle) -> Result<()> {
        while self.pending.is_none() && !self.done {
            if self.next1 == self.n1 || self.next2 == self.n2 {
                self.order.extend((self.next1..self.n1).map(|index| Pick { side: Side::Left, index }));
                self.order.extend((self.next2..self.n2).map(|index| Pick { side: Side::Right, index }));
                self.next1 = self.n1;
                self.next2 = self.n2;
                self.done = true;
                break;
            }
            let phi = self.next1;
            let mut version = self.order.clone();
            let mut hit = None;
            for j in self.next2..self.n2 {
                if oracle.conflicts(&version, phi, j)? {
                    hit = Some(j);
                    break;
                }
                if self.scope == ConflictScope::MeetingVersion {
                    version.push(Pick { side: Side::Right, index: j });
                }
            }
            match hit {
                Some(j) => {
                    self.pending = Some((phi, j));
                    self.questions += 1;
                }
                None => {
                    self.order.push(Pick { side: Side::Left, index: phi });
                    self.next1 += 1;
                }
            }
        }
        Ok(())
    }

    /// Record the answer to the pending question.
    pub fn answer(&mut self, first: Side) -> Result<()> {
        let (i, j) = self.pending.take().ok_or_else(|| Error::Conflict("no question is pending".into()))?;
        match first {
            Side::Left => {
                self.order.push(Pick { side: Side::Left, index: i });
                self.next1 = i + 1;
            }
            Side::Right => {
                self.order.extend((self.next2..=j).map(|index| Pick { side: Side::Right, index }));
                self.next2 = j + 1;
            }
        }
        Ok(())
    }

    pub fn sides(&self) -> Vec<Side> {
        self.order.iter().map(|p| p.side).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptMod {
    pub id: ModId,
    pub index: usize,
    pub sql: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub rid: RowId,
    /// Row on the version where the pair meets; `None` if not present.
    pub current: Option<Vec<Value>>,
    pub left_first: Option<Vec<Value>>,
    pub right_first: Option<Vec<Value>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub left: PromptMod,
    pub right: PromptMod,
    pub pair_kinds: BTreeSet<ConflictKind>,
    pub conflict_rows: usize,
    pub sample_rows: Vec<SampleRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SessionState {
    NeedsAnswer { prompt: Prompt },
    Done { order: Interleaving },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolveOptions {
    pub scope: ConflictScope,
    /// Table name used when rendering statements.
    pub table: String,
    pub sample_limit: usize,
    /// Also decide every conflict by replaying both orders on a
    /// materialized version and fail on disagreement.
    pub cross_check: bool,
}

impl Default for ResolveOptions {
    fn default() -> Self {
        ResolveOptions { scope: ConflictScope::default(), table: "db".into(), sample_limit: 20, cross_check: false }
    }
}

fn pick_mods<'a>(h1: &'a History, h2: &'a History, picks: &[Pick]) -> Vec<&'a Modification> {
    picks
        .iter()
        .map(|p| match p.side {
            Side::Left => &h1.mods[p.index],
            Side::Right => &h2.mods[p.index],
        })
        .collect()
}

struct SymbolicOracle<'a> {
    d0: &'a TableSnapshot,
    h1: &'a History,
    h2: &'a History,
    cross_check: bool,
}

impl ConflictOracle for SymbolicOracle<'_> {
    fn conflicts(&mut self, version: &[Pick], left: usize, right: usize) -> Result<bool> {
        let prefix = pick_mods(self.h1, self.h2, version);
        let (phi, psi) = (&self.h1.mods[left], &self.h2.mods[right]);
        let verdict = pair_conflicts_any(self.d0, phi, psi, &prefix)?;
        if self.cross_check {
            let v = apply_history(self.d0, prefix.iter().copied())?;
            let a = apply_modification(&apply_modification(&v, phi)?, psi)?;
            let b = apply_modification(&apply_modification(&v, psi)?, phi)?;
            let direct = !a.snapshot_equal(&b)?;
            if direct != verdict {
                return Err(Error::Invalid(format!(
                    "conflict check disagrees with replay for {} / {}",
                    phi.id, psi.id
                )));
            }
        }
        Ok(verdict)
    }
}

/// A reconciliation in progress.
#[derive(Clone, Debug)]
pub struct MergeSession {
    pub h1: History,
    pub h2: History,
    pub engine: Engine,
    pub state: SessionState,
    pub options: ResolveOptions,
}

/// Persisted form of a session.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SavedSession {
    pub left_branch: String,
    pub right_branch: String,
    pub left: Vec<HistoryRecord>,
    pub right: Vec<HistoryRecord>,
    pub engine: Engine,
    pub state: SessionState,
    pub options: ResolveOptions,
}

impl MergeSession {
    pub fn start(d0: &TableSnapshot, h1: &History, h2: &History, options: ResolveOptions) -> Result<MergeSession> {
        for h in [h1, h2] {
            h.validate()?;
            for m in &h.mods {
                m.bind(&d0.schema).map_err(|e| Error::SchemaMismatch(format!("{}: {e}", m.id)))?;
            }
        }
        let mut s = MergeSession {
            h1: h1.clone(),
            h2: h2.clone(),
            engine: Engine::new(h1.len(), h2.len(), options.scope),
            state: SessionState::Done { order: Interleaving { ids: vec![] } },
            options,
        };
        s.run(d0)?;
        Ok(s)
    }

    fn run(&mut self, d0: &TableSnapshot) -> Result<()> {
        let mut oracle = SymbolicOracle { d0, h1: &self.h1, h2: &self.h2, cross_check: self.options.cross_check };
        self.engine.advance(&mut oracle)?;
        self.state = match self.engine.pending {
            Some((i, j)) => SessionState::NeedsAnswer { prompt: self.build_prompt(d0, i, j)? },
            None => SessionState::Done { order: Interleaving::from_sides(&self.h1, &self.h2, &self.engine.sides())? },
        };
        Ok(())
    }

    /// The pair's meeting version, as picks.
    fn meeting_version(&self, j: usize) -> Vec<Pick> {
        let mut v = self.engine.order.clone();
        if self.engine.scope == ConflictScope::MeetingVersion {
            v.extend((self.engine.next2..j).map(|index| Pick { side: Side::Right, index }));
        }
        v
    }

    fn build_prompt(&self, d0: &TableSnapshot, i: usize, j: usize) -> Result<Prompt> {
        let schema = &d0.schema;
        let (phi, psi) = (&self.h1.mods[i], &self.h2.mods[j]);
        let version = self.meeting_version(j);
        let prefix = pick_mods(&self.h1, &self.h2, &version);
        let rows = match pair_conflict(d0, phi, psi, &prefix)? {
            Some((_, rows, _)) => rows,
            None => BTreeSet::new(),
        };
        let bound_prefix: Vec<_> = prefix.iter().map(|m| m.bind(schema)).collect::<Result<_>>()?;
        let (bphi, bpsi) = (phi.bind(schema)?, psi.bind(schema)?);
        let mut sample_rows = Vec::new();
        for rid in rows.iter().take(self.options.sample_limit) {
            let mut st = RowState::from_tuple(d0.get(rid));
            for m in &bound_prefix {
                st = m.step(rid, &st)?;
            }
            let lf = bpsi.step(rid, &bphi.step(rid, &st)?)?;
            let rf = bphi.step(rid, &bpsi.step(rid, &st)?)?;
            sample_rows.push(SampleRow {
                rid: rid.clone(),
                current: st.values().map(<[Value]>::to_vec),
                left_first: lf.values().map(<[Value]>::to_vec),
                right_first: rf.values().map(<[Value]>::to_vec),
            });
        }
        let table = &self.options.table;
        Ok(Prompt {
            left: PromptMod { id: phi.id.clone(), index: i, sql: phi.to_sql(schema, table) },
            right: PromptMod { id: psi.id.clone(), index: j, sql: psi.to_sql(schema, table) },
            pair_kinds: pair_kinds(schema, phi, psi),
            conflict_rows: rows.len(),
            sample_rows,
        })
    }

    pub fn prompt(&self) -> Option<&Prompt> {
        match &self.state {
            SessionState::NeedsAnswer { prompt } => Some(prompt),
            SessionState::Done { .. } => None,
        }
    }

    pub fn result(&self) -> Option<&Interleaving> {
        match &self.state {
            SessionState::Done { order } => Some(order),
            SessionState::NeedsAnswer { .. } => None,
        }
    }

    pub fn is_done(&self) -> bool {
        self.result().is_some()
    }

    pub fn questions(&self) -> usize {
        self.engine.questions
    }

    /// `Side::Left` puts the left modification first.
    pub fn answer(&mut self, d0: &TableSnapshot, first: Side) -> Result<()> {
        if self.is_done() {
            return Err(Error::Conflict("the session is not awaiting an answer".into()));
        }
        self.engine.answer(first)?;
        self.run(d0)
    }

    pub fn save(&self, schema: &Schema) -> SavedSession {
        SavedSession {
            left_branch: self.h1.branch.clone(),
            right_branch: self.h2.branch.clone(),
            left: self.h1.mods.iter().map(|m| m.to_record(schema)).collect(),
            right: self.h2.mods.iter().map(|m| m.to_record(schema)).collect(),
            engine: self.engine.clone(),
            state: self.state.clone(),
            options: self.options.clone(),
        }
    }

    pub fn restore(saved: SavedSession, schema: &Schema) -> Result<MergeSession> {
        let load = |branch: &str, recs: &[HistoryRecord]| -> Result<History> {
            let mut h = History::new(branch);
            for r in recs {
                h.mods.push(Modification::from_record(r, schema)?);
            }
            h.validate()?;
            Ok(h)
        };
        let h1 = load(&saved.left_branch, &saved.left)?;
        let h2 = load(&saved.right_branch, &saved.right)?;
        if saved.engine.n1 != h1.len() || saved.engine.n2 != h2.len() {
            return Err(Error::Invalid("saved session does not match its histories".into()));
        }
        Ok(MergeSession { h1, h2, engine: saved.engine, state: saved.state, options: saved.options })
    }
}

pub fn start_session(d0: &TableSnapshot, h1: &History, h2: &History) -> Result<MergeSession> {
    MergeSession::start(d0, h1, h2, ResolveOptions::default())
}

/// Drive a session to completion with an automatic answerer; returns the
/// order and the number of questions asked.
pub fn resolve(
    d0: &TableSnapshot,
    h1: &History,
    h2: &History,
    options: ResolveOptions,
    mut answerer: impl FnMut(&Prompt) -> Side,
) -> Result<(Interleaving, usize)> {
    let mut s = MergeSession::start(d0, h1, h2, options)?;
    while let Some(p) = s.prompt() {
        let side = answerer(p);
        s.answer(d0, side)?;
    }
    let order = s.result().cloned().unwrap();
    Ok((order, s.questions()))
}

/// Answers consistently with a desired total order.
pub fn follow_order(pi: &Interleaving) -> impl FnMut(&Prompt) -> Side + '_ {
    move |p: &Prompt| {
        let pos = |id: &ModId| pi.ids.iter().position(|x| x == id).unwrap_or(usize::MAX);
        if pos(&p.left.id) < pos(&p.right.id) {
            Side::Left
        } else {
            Side::Right
        }
    }
}
