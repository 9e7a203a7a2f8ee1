//! Logical modifications, branch histories, interleavings and replay.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::condition::{BoundCondition, Condition};
use crate::error::{Error, EvalError, Result};
use crate::expr::{BoundExpr, Expr};
use crate::sql::{self, Statement};
use crate::table::{values_identical, RowId, Schema, TableSnapshot, Tuple};
use crate::value::{ColumnType, Value};

static MATERIALIZATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of whole-snapshot replays performed in this process.
pub fn materialization_count() -> u64 {
    MATERIALIZATIONS.load(Ordering::SeqCst)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModId {
    pub branch: String,
    pub seq: u64,
}

impl ModId {
    pub fn new(branch: &str, seq: u64) -> ModId {
        ModId { branch: branch.to_string(), seq }
    }
}

impl fmt::Display for ModId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.branch, self.seq)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub target: String,
    pub rhs: Expr,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModKind {
    Update { pred: Condition, assign: Assignment },
    Insert { values: Vec<Value> },
    Delete { pred: Condition },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Modification {
    pub id: ModId,
    pub kind: ModKind,
}

impl Modification {
    pub fn update(id: ModId, pred: Condition, target: &str, rhs: Expr) -> Modification {
        Modification { id, kind: ModKind::Update { pred, assign: Assignment { target: target.to_string(), rhs } } }
    }

    pub fn delete(id: ModId, pred: Condition) -> Modification {
        Modification { id, kind: ModKind::Delete { pred } }
    }

    pub fn insert(id: ModId, values: Vec<Value>) -> Modification {
        Modification { id, kind: ModKind::Insert { values } }
    }

    /// Parse statement text and lower it against the schema.
    pub fn parse(text: &str, schema: &Schema, id: ModId) -> Result<Modification> {
        let stmt = sql::parse_statement(text)?;
        Modification::lower(&stmt, schema, id)
    }

    pub fn lower(stmt: &Statement, schema: &Schema, id: ModId) -> Result<Modification> {
        let kind = match stmt {
            Statement::Update { target, expr, pred, .. } => {
                let ty =
                    schema.type_of(target).ok_or_else(|| Error::Eval(EvalError::UnknownAttribute(target.clone())))?;
                let et = expr.static_type(schema).map_err(Error::Invalid)?;
                let ok = match (ty, et) {
                    (_, None) => true,
                    (ColumnType::Int, Some(t)) => t == ColumnType::Int,
                    (ColumnType::Dec, Some(t)) => t != ColumnType::Str,
                    (ColumnType::Str, Some(t)) => t == ColumnType::Str,
                };
                if !ok {
                    return Err(Error::Invalid(format!(
                        "cannot assign a {} expression to {} column `{}`",
                        et.map_or("Null", |t| t.name()),
                        ty,
                        target
                    )));
                }
                pred.type_check(schema).map_err(Error::Invalid)?;
                ModKind::Update { pred: pred.clone(), assign: Assignment { target: target.clone(), rhs: expr.clone() } }
            }
            Statement::Delete { pred, .. } => {
                pred.type_check(schema).map_err(Error::Invalid)?;
                ModKind::Delete { pred: pred.clone() }
            }
            Statement::Insert { columns, values, .. } => {
                let mut row = vec![Value::Null; schema.arity()];
                if columns.is_empty() {
                    if values.len() != schema.arity() {
                        return Err(Error::Invalid(format!(
                            "INSERT supplies {} values for {} attributes",
                            values.len(),
                            schema.arity()
                        )));
                    }
                    row = values.clone();
                } else {
                    let mut seen = BTreeSet::new();
                    for (c, v) in columns.iter().zip(values) {
                        let i = schema.resolve(c)?;
                        if !seen.insert(i) {
                            return Err(Error::Invalid(format!("attribute `{c}` listed twice")));
                        }
                        row[i] = v.clone();
                    }
                }
                for (v, col) in row.iter().zip(schema.columns()) {
                    if !col.ty.admits(v) {
                        return Err(Error::Invalid(format!(
                            "{} literal for {} column `{}`",
                            v.type_name(),
                            col.ty,
                            col.name
                        )));
                    }
                }
                ModKind::Insert { values: row }
            }
        };
        Ok(Modification { id, kind })
    }

    pub fn to_statement(&self, schema: &Schema, table: &str) -> Statement {
        match &self.kind {
            ModKind::Update { pred, assign } => Statement::Update {
                table: table.to_string(),
                target: assign.target.clone(),
                expr: assign.rhs.clone(),
                pred: pred.clone(),
            },
            ModKind::Delete { pred } => Statement::Delete { table: table.to_string(), pred: pred.clone() },
            ModKind::Insert { values } => Statement::Insert {
                table: table.to_string(),
                columns: schema.names().map(str::to_string).collect(),
                values: values.clone(),
            },
        }
    }

    pub fn pred(&self) -> Option<&Condition> {
        match &self.kind {
            ModKind::Update { pred, .. } | ModKind::Delete { pred } => Some(pred),
            ModKind::Insert { .. } => None,
        }
    }

    pub fn is_insert(&self) -> bool {
        matches!(self.kind, ModKind::Insert { .. })
    }

    /// Identity of the row an insert creates.
    pub fn inserted_rid(&self) -> Option<RowId> {
        match self.kind {
            ModKind::Insert { .. } => Some(RowId::new(&self.id.branch, self.id.seq)),
            _ => None,
        }
    }

    /// Attributes whose values influence this modification's effect.
    pub fn reads(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        match &self.kind {
            ModKind::Update { pred, assign } => {
                pred.collect_attrs(&mut out);
                assign.rhs.collect_attrs(&mut out);
            }
            ModKind::Delete { pred } => pred.collect_attrs(&mut out),
            ModKind::Insert { .. } => {}
        }
        out
    }

    /// Attributes written; deletes and inserts write every attribute.
    pub fn writes<'a>(&'a self, schema: &'a Schema) -> BTreeSet<&'a str> {
        match &self.kind {
            ModKind::Update { assign, .. } => std::iter::once(assign.target.as_str()).collect(),
            _ => schema.names().collect(),
        }
    }

    pub fn bind(&self, schema: &Schema) -> Result<BoundMod> {
        Ok(match &self.kind {
            ModKind::Update { pred, assign } => BoundMod::Update {
                pred: pred.bind(schema)?,
                col: schema.resolve(&assign.target)?,
                rhs: assign.rhs.bind(schema)?,
            },
            ModKind::Delete { pred } => BoundMod::Delete { pred: pred.bind(schema)? },
            ModKind::Insert { values } => {
                if values.len() != schema.arity() {
                    return Err(Error::Invalid(format!(
                        "insert {} has {} values, schema has {}",
                        self.id,
                        values.len(),
                        schema.arity()
                    )));
                }
                BoundMod::Insert { rid: self.inserted_rid().unwrap(), values: Arc::from(values.clone()) }
            }
        })
    }

    pub fn to_sql(&self, schema: &Schema, table: &str) -> String {
        self.to_statement(schema, table).to_string()
    }

    pub fn to_record(&self, schema: &Schema) -> HistoryRecord {
        let mut rec = HistoryRecord {
            branch: self.id.branch.clone(),
            seq: self.id.seq,
            kind: String::new(),
            set: None,
            predicate: None,
            values: None,
        };
        match &self.kind {
            ModKind::Update { pred, assign } => {
                rec.kind = "update".into();
                rec.set = Some(SetClause { attr: assign.target.clone(), expr: assign.rhs.to_string() });
                rec.predicate = Some(pred.to_string());
            }
            ModKind::Delete { pred } => {
                rec.kind = "delete".into();
                rec.predicate = Some(pred.to_string());
            }
            ModKind::Insert { values } => {
                rec.kind = "insert".into();
                rec.values = Some(schema.names().map(str::to_string).zip(values.iter().map(|v| v.to_sql())).collect());
            }
        }
        rec
    }

    pub fn from_record(rec: &HistoryRecord, schema: &Schema) -> Result<Modification> {
        let id = ModId::new(&rec.branch, rec.seq);
        let missing = |what: &str| Error::Invalid(format!("{} record {} lacks `{what}`", rec.kind, id));
        let stmt = match rec.kind.as_str() {
            "update" => {
                let set = rec.set.as_ref().ok_or_else(|| missing("set"))?;
                Statement::Update {
                    table: String::new(),
                    target: set.attr.clone(),
                    expr: sql::parse_expr(&set.expr)?,
                    pred: sql::parse_condition(rec.predicate.as_deref().ok_or_else(|| missing("where"))?)?,
                }
            }
            "delete" => Statement::Delete {
                table: String::new(),
                pred: sql::parse_condition(rec.predicate.as_deref().ok_or_else(|| missing("where"))?)?,
            },
            "insert" => {
                let vals = rec.values.as_ref().ok_or_else(|| missing("values"))?;
                let mut columns = Vec::new();
                let mut values = Vec::new();
                for (k, v) in vals {
                    columns.push(k.clone());
                    values.push(sql::parse_literal(v)?);
                }
                Statement::Insert { table: String::new(), columns, values }
            }
            other => return Err(Error::Invalid(format!("unknown record kind `{other}`"))),
        };
        Modification::lower(&stmt, schema, id)
    }
}

/// One line of a branch log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub branch: String,
    pub seq: u64,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set: Option<SetClause>,
    #[serde(rename = "where", default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<BTreeMap<String, String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetClause {
    pub attr: String,
    pub expr: String,
}

/// State of one row during per-row replay.
#[derive(Clone, Debug)]
pub enum RowState {
    /// Not yet created (an insert-born row before its insert).
    Absent,
    Dead,
    Live(Arc<[Value]>),
}

impl RowState {
    pub fn from_tuple(t: Option<&Tuple>) -> RowState {
        match t {
            None => RowState::Absent,
            Some(t) if t.tombstone => RowState::Dead,
            Some(t) => RowState::Live(Arc::from(t.values.clone())),
        }
    }

    pub fn values(&self) -> Option<&[Value]> {
        match self {
            RowState::Live(v) => Some(v),
            _ => None,
        }
    }

    /// Equal as observable final states: absent and deleted rows are both invisible.
    pub fn same_visible(&self, other: &RowState) -> bool {
        match (self.values(), other.values()) {
            (None, None) => true,
            (Some(a), Some(b)) => values_identical(a, b),
            _ => false,
        }
    }
}

impl PartialEq for RowState {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (RowState::Absent, RowState::Absent) | (RowState::Dead, RowState::Dead) => true,
            (RowState::Live(a), RowState::Live(b)) => Arc::ptr_eq(a, b) || values_identical(a, b),
            _ => false,
        }
    }
}

/// A modification with attribute names resolved, for per-row stepping.
#[derive(Clone, Debug)]
pub enum BoundMod {
    Update { pred: BoundCondition, col: usize, rhs: BoundExpr },
    Delete { pred: BoundCondition },
    Insert { rid: RowId, values: Arc<[Value]> },
}

impl BoundMod {
    /// Apply to a single row; other rows are never consulted.
    pub fn step(&self, rid: &RowId, state: &RowState) -> Result<RowState, EvalError> {
        Ok(match (self, state) {
            (BoundMod::Insert { rid: born, values }, RowState::Absent) if born == rid => RowState::Live(values.clone()),
            (BoundMod::Update { pred, col, rhs }, RowState::Live(vals)) => {
                if pred.eval(vals, false)? {
                    let new = rhs.eval(vals)?.into_owned();
                    let mut out: Vec<Value> = vals.to_vec();
                    out[*col] = new;
                    RowState::Live(Arc::from(out))
                } else {
                    state.clone()
                }
            }
            (BoundMod::Delete { pred }, RowState::Live(vals)) => {
                if pred.eval(vals, false)? {
                    RowState::Dead
                } else {
                    state.clone()
                }
            }
            _ => state.clone(),
        })
    }

    pub fn inserted(&self) -> Option<&RowId> {
        match self {
            BoundMod::Insert { rid, .. } => Some(rid),
            _ => None,
        }
    }
}

fn apply_bound_in_place(v: &mut TableSnapshot, m: &BoundMod) -> Result<()> {
    match m {
        BoundMod::Insert { rid, values } => {
            if v.contains(rid) {
                return Err(Error::Invalid(format!("row {rid} already exists")));
            }
            v.insert(Tuple::new(rid.clone(), values.to_vec()))?;
        }
        BoundMod::Update { pred, col, rhs } => {
            let mut changed = Vec::new();
            for t in v.visible() {
                if pred.eval(&t.values, false)? {
                    let new = rhs.eval(&t.values)?.into_owned();
                    let mut nt = t.clone();
                    nt.values[*col] = new;
                    changed.push(nt);
                }
            }
            for t in changed {
                v.insert(t)?;
            }
        }
        BoundMod::Delete { pred } => {
            let mut dead = Vec::new();
            for t in v.visible() {
                if pred.eval(&t.values, false)? {
                    dead.push(t.killed());
                }
            }
            for t in dead {
                v.put_shared(Arc::new(t));
            }
        }
    }
    Ok(())
}

/// A new snapshot with `m` applied; the input is untouched.
pub fn apply_modification(v: &TableSnapshot, m: &Modification) -> Result<TableSnapshot> {
    MATERIALIZATIONS.fetch_add(1, Ordering::SeqCst);
    let mut out = v.clone();
    apply_bound_in_place(&mut out, &m.bind(&v.schema)?)?;
    Ok(out)
}

/// Left fold of `apply_modification` over the sequence.
pub fn apply_history<'a>(v: &TableSnapshot, mods: impl IntoIterator<Item = &'a Modification>) -> Result<TableSnapshot> {
    MATERIALIZATIONS.fetch_add(1, Ordering::SeqCst);
    let mut out = v.clone();
    for m in mods {
        apply_bound_in_place(&mut out, &m.bind(&v.schema)?)?;
    }
    Ok(out)
}

/// Rows an update or delete would touch, or the row an insert creates.
pub fn affected_set(v: &TableSnapshot, m: &Modification) -> Result<BTreeSet<RowId>> {
    match &m.kind {
        ModKind::Update { pred, .. } | ModKind::Delete { pred } => v.select(pred),
        ModKind::Insert { .. } => Ok(m.inserted_rid().into_iter().collect()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub branch: String,
    pub mods: Vec<Modification>,
}

impl History {
    pub fn new(branch: &str) -> History {
        History { branch: branch.to_string(), mods: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.mods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mods.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.mods.last().map_or(1, |m| m.id.seq + 1)
    }

    /// Append a modification with the next sequence number.
    pub fn push(&mut self, kind: ModKind) -> &Modification {
        let id = ModId::new(&self.branch, self.next_seq());
        self.mods.push(Modification { id, kind });
        self.mods.last().unwrap()
    }

    /// Parse, lower and append a statement.
    pub fn push_sql(&mut self, schema: &Schema, text: &str) -> Result<&Modification> {
        let m = Modification::parse(text, schema, ModId::new(&self.branch, self.next_seq()))?;
        self.mods.push(m);
        Ok(self.mods.last().unwrap())
    }

    pub fn validate(&self) -> Result<()> {
        let mut last = 0;
        for m in &self.mods {
            if m.id.branch != self.branch {
                return Err(Error::Invalid(format!("{} does not belong to branch {}", m.id, self.branch)));
            }
            if m.id.seq <= last {
                return Err(Error::Invalid(format!("sequence numbers not increasing at {}", m.id)));
            }
            last = m.id.seq;
        }
        Ok(())
    }

    /// The first `k` modifications.
    pub fn prefix(&self, k: usize) -> Result<History> {
        if k > self.mods.len() {
            return Err(Error::Invalid(format!("prefix {k} of a history of length {}", self.mods.len())));
        }
        Ok(History { branch: self.branch.clone(), mods: self.mods[..k].to_vec() })
    }

    pub fn position(&self, id: &ModId) -> Option<usize> {
        self.mods.iter().position(|m| &m.id == id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// A total order over the modifications of two histories.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interleaving {
    pub ids: Vec<ModId>,
}

impl Interleaving {
    /// Serial order: all of `h1`, then all of `h2`.
    pub fn concat(h1: &History, h2: &History) -> Interleaving {
        Interleaving { ids: h1.mods.iter().chain(&h2.mods).map(|m| m.id.clone()).collect() }
    }

    /// Build from a branch-choice sequence; `Left` takes the next of `h1`.
    pub fn from_sides(h1: &History, h2: &History, sides: &[Side]) -> Result<Interleaving> {
        let (mut i, mut j) = (0, 0);
        let mut ids = Vec::with_capacity(sides.len());
        for s in sides {
            let m = match s {
                Side::Left => {
                    i += 1;
                    h1.mods.get(i - 1)
                }
                Side::Right => {
                    j += 1;
                    h2.mods.get(j - 1)
                }
            };
            ids.push(m.ok_or_else(|| Error::Invalid("branch choice sequence too long".into()))?.id.clone());
        }
        let il = Interleaving { ids };
        il.validate(h1, h2)?;
        Ok(il)
    }

    /// Every id of both histories exactly once, each branch in order.
    pub fn validate(&self, h1: &History, h2: &History) -> Result<()> {
        self.resolve(h1, h2).map(|_| ())
    }

    pub fn resolve<'a>(&self, h1: &'a History, h2: &'a History) -> Result<Vec<&'a Modification>> {
        if self.ids.len() != h1.len() + h2.len() {
            return Err(Error::Invalid(format!(
                "interleaving has {} entries, histories have {}",
                self.ids.len(),
                h1.len() + h2.len()
            )));
        }
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::with_capacity(self.ids.len());
        for id in &self.ids {
            if i < h1.len() && h1.mods[i].id == *id {
                out.push(&h1.mods[i]);
                i += 1;
            } else if j < h2.len() && h2.mods[j].id == *id {
                out.push(&h2.mods[j]);
                j += 1;
            } else {
                return Err(Error::Invalid(format!("{id} is missing, duplicated or out of branch order")));
            }
        }
        Ok(out)
    }
}

pub const DEFAULT_INTERLEAVING_CAP: usize = 24;

/// C(m+n, n) as a float, for reporting counts too large to enumerate.
pub fn interleaving_count(m: usize, n: usize) -> f64 {
    let k = m.min(n);
    let mut c = 1f64;
    for i in 0..k {
        c = c * (m + n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Every valid interleaving, in lexicographic order of branch choices
/// (`Left` before `Right`), so the first is the serial order H1H2.
pub fn enumerate_interleavings<'a>(
    h1: &'a History,
    h2: &'a History,
    cap: usize,
) -> Result<impl Iterator<Item = Interleaving> + 'a> {
    let total = h1.len() + h2.len();
    if total > cap {
        let c = interleaving_count(h1.len(), h2.len());
        return Err(Error::CapExceeded { count: format!("{c:.3e}"), total, cap });
    }
    let mut sides: Vec<Side> =
        std::iter::repeat(Side::Left).take(h1.len()).chain(std::iter::repeat(Side::Right).take(h2.len())).collect();
    let mut first = true;
    Ok(std::iter::from_fn(move || {
        if first {
            first = false;
        } else if !next_permutation(&mut sides) {
            return None;
        }
        Some(Interleaving::from_sides(h1, h2, &sides).expect("valid by construction"))
    }))
}

fn next_permutation(s: &mut [Side]) -> bool {
    let key = |x: &Side| *x == Side::Right;
    if s.len() < 2 {
        return false;
    }
    let mut i = s.len() - 1;
    while i > 0 && key(&s[i - 1]) >= key(&s[i]) {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = s.len() - 1;
    while key(&s[j]) <= key(&s[i - 1]) {
        j -= 1;
    }
    s.swap(i - 1, j);
    s[i..].reverse();
    true
}
