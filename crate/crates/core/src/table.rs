//! Schemas, tuples and immutable table snapshots.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::condition::{CmpOp, Condition};
use crate::error::{Error, EvalError, Result};
use crate::expr::Expr;
use crate::value::{ColumnType, Value};

/// Stable row identity: `base:<n>` for rows of the initial table,
/// `<branch>:<seq>` for rows created by an insert.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowId {
    pub origin: Arc<str>,
    pub seq: u64,
}

pub const BASE_ORIGIN: &str = "base";

impl RowId {
    pub fn new(origin: &str, seq: u64) -> RowId {
        RowId { origin: Arc::from(origin), seq }
    }

    pub fn base(seq: u64) -> RowId {
        RowId::new(BASE_ORIGIN, seq)
    }
}

impl fmt::Display for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.origin, self.seq)
    }
}

impl FromStr for RowId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (origin, seq) = s.rsplit_once(':').ok_or_else(|| format!("bad row id `{s}`"))?;
        if origin.is_empty() {
            return Err(format!("bad row id `{s}`"));
        }
        let seq = seq.parse().map_err(|_| format!("bad row id `{s}`"))?;
        Ok(RowId::new(origin, seq))
    }
}

impl Serialize for RowId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RowId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "Vec<Column>", into = "Vec<Column>")]
pub struct Schema {
    columns: Vec<Column>,
    index: HashMap<String, usize>,
}

impl PartialEq for Schema {
    fn eq(&self, other: &Self) -> bool {
        self.columns == other.columns
    }
}

impl Eq for Schema {}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Result<Schema> {
        if columns.is_empty() {
            return Err(Error::Invalid("schema needs at least one attribute".into()));
        }
        let mut index = HashMap::new();
        for (i, c) in columns.iter().enumerate() {
            if c.name.is_empty() || c.name.starts_with('_') {
                return Err(Error::Invalid(format!("bad attribute name `{}`", c.name)));
            }
            if index.insert(c.name.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate attribute `{}`", c.name)));
            }
        }
        Ok(Schema { columns, index })
    }

    pub fn from_pairs(pairs: &[(&str, ColumnType)]) -> Result<Schema> {
        Schema::new(pairs.iter().map(|(n, t)| Column { name: n.to_string(), ty: *t }).collect())
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn resolve(&self, name: &str) -> Result<usize, EvalError> {
        self.index_of(name).ok_or_else(|| EvalError::UnknownAttribute(name.to_string()))
    }

    pub fn type_of(&self, name: &str) -> Option<ColumnType> {
        self.index_of(name).map(|i| self.columns[i].ty)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }
}

impl TryFrom<Vec<Column>> for Schema {
    type Error = String;
    fn try_from(v: Vec<Column>) -> Result<Self, Self::Error> {
        Schema::new(v).map_err(|e| e.to_string())
    }
}

impl From<Schema> for Vec<Column> {
    fn from(s: Schema) -> Self {
        s.columns
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tuple {
    pub rid: RowId,
    pub values: Vec<Value>,
    pub tombstone: bool,
}

impl Tuple {
    pub fn new(rid: RowId, values: Vec<Value>) -> Tuple {
        Tuple { rid, values, tombstone: false }
    }

    /// The deleted form of this row: every value Null.
    pub fn killed(&self) -> Tuple {
        Tuple { rid: self.rid.clone(), values: vec![Value::Null; self.values.len()], tombstone: true }
    }

    pub fn get(&self, schema: &Schema, attr: &str) -> Option<&Value> {
        schema.index_of(attr).map(|i| &self.values[i])
    }
}

/// An immutable version of the table. Cloning is cheap on the tuple data
/// (rows are shared); derived versions are built by `apply_modification`.
#[derive(Clone, Debug)]
pub struct TableSnapshot {
    pub schema: Arc<Schema>,
    rows: BTreeMap<RowId, Arc<Tuple>>,
    eq_index: EqIndex,
}

/// Per-column hash indexes over visible rows, built on first use by
/// `select_indexed` and dropped whenever the snapshot is mutated.
type ColumnIndex = HashMap<Value, Vec<RowId>>;
type EqIndex = Arc<Mutex<HashMap<usize, Arc<ColumnIndex>>>>;

/// Equality constraints implied by `c`: every row satisfying `c` has one
/// of the listed (column, value) pairs. None when no such set is known.
fn anchors(schema: &Schema, c: &Condition) -> Option<Vec<(usize, Value)>> {
    let col = |e: &Expr| match e {
        Expr::Attr(a) => schema.index_of(a),
        _ => None,
    };
    match c {
        Condition::False => Some(Vec::new()),
        Condition::Cmp(CmpOp::Eq, l, r) => match (l, r) {
            (e, Expr::Lit(v)) | (Expr::Lit(v), e) => col(e).map(|i| vec![(i, v.clone())]),
            _ => None,
        },
        Condition::In(e, vs) => col(e).map(|i| vs.iter().map(|v| (i, v.clone())).collect()),
        Condition::And(xs) => xs.iter().filter_map(|x| anchors(schema, x)).min_by_key(|a| a.len()),
        Condition::Or(xs) => {
            let mut out = Vec::new();
            for x in xs {
                out.extend(anchors(schema, x)?);
            }
            Some(out)
        }
        _ => None,
    }
}

impl TableSnapshot {
    pub fn new(schema: Arc<Schema>) -> TableSnapshot {
        TableSnapshot { schema, rows: BTreeMap::new(), eq_index: EqIndex::default() }
    }

    /// Build from plain value rows, numbering them `base:1..`.
    pub fn from_rows(schema: Arc<Schema>, rows: Vec<Vec<Value>>) -> Result<TableSnapshot> {
        let mut snap = TableSnapshot::new(schema);
        for (i, vals) in rows.into_iter().enumerate() {
            snap.insert(Tuple::new(RowId::base(i as u64 + 1), vals))?;
        }
        Ok(snap)
    }

    /// Insert or replace a tuple after checking arity and column types.
    pub fn insert(&mut self, t: Tuple) -> Result<()> {
        self.check(&t)?;
        self.drop_index();
        self.rows.insert(t.rid.clone(), Arc::new(t));
        Ok(())
    }

    pub(crate) fn put_shared(&mut self, t: Arc<Tuple>) {
        self.drop_index();
        self.rows.insert(t.rid.clone(), t);
    }

    pub fn check(&self, t: &Tuple) -> Result<()> {
        if t.values.len() != self.schema.arity() {
            return Err(Error::Invalid(format!(
                "row {} has {} values, schema has {}",
                t.rid,
                t.values.len(),
                self.schema.arity()
            )));
        }
        if t.tombstone && t.values.iter().any(|v| !v.is_null()) {
            return Err(Error::Invalid(format!("tombstoned row {} carries values", t.rid)));
        }
        for (v, c) in t.values.iter().zip(self.schema.columns()) {
            if !c.ty.admits(v) {
                return Err(Error::Invalid(format!(
                    "row {}: {} value for {} column `{}`",
                    t.rid,
                    v.type_name(),
                    c.ty,
                    c.name
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, rid: &RowId) -> Option<&Tuple> {
        self.rows.get(rid).map(|t| &**t)
    }

    pub fn contains(&self, rid: &RowId) -> bool {
        self.rows.contains_key(rid)
    }

    /// All stored tuples, tombstones included, in RowId order.
    pub fn tuples(&self) -> impl Iterator<Item = &Tuple> {
        self.rows.values().map(|t| &**t)
    }

    pub fn visible(&self) -> impl Iterator<Item = &Tuple> {
        self.tuples().filter(|t| !t.tombstone)
    }

    pub fn visible_ids(&self) -> BTreeSet<RowId> {
        self.visible().map(|t| t.rid.clone()).collect()
    }

    pub fn len_stored(&self) -> usize {
        self.rows.len()
    }

    pub fn len_visible(&self) -> usize {
        self.visible().count()
    }

    /// Non-tombstoned rows satisfying `c`.
    pub fn select(&self, c: &Condition) -> Result<BTreeSet<RowId>> {
        let bound = c.bind(&self.schema)?;
        let mut out = BTreeSet::new();
        for t in self.visible() {
            if bound.eval(&t.values, false)? {
                out.insert(t.rid.clone());
            }
        }
        Ok(out)
    }

    fn drop_index(&mut self) {
        let shared = Arc::strong_count(&self.eq_index) > 1;
        if shared || !self.eq_index.lock().unwrap_or_else(|e| e.into_inner()).is_empty() {
            self.eq_index = EqIndex::default();
        }
    }

    fn column_index(&self, col: usize) -> Arc<ColumnIndex> {
        let mut cache = self.eq_index.lock().unwrap_or_else(|e| e.into_inner());
        cache
            .entry(col)
            .or_insert_with(|| {
                let mut idx: ColumnIndex = HashMap::new();
                for t in self.visible() {
                    idx.entry(t.values[col].clone()).or_default().push(t.rid.clone());
                }
                Arc::new(idx)
            })
            .clone()
    }

    /// Same result as `select`, but when `c` pins some column to a few
    /// constants only the rows holding them are evaluated. Worth it on
    /// snapshots that are queried many times.
    pub fn select_indexed(&self, c: &Condition) -> Result<BTreeSet<RowId>> {
        let Some(keys) = anchors(&self.schema, c) else {
            return self.select(c);
        };
        let bound = c.bind(&self.schema)?;
        let mut out = BTreeSet::new();
        for (col, v) in keys {
            let idx = self.column_index(col);
            for rid in idx.get(&v).into_iter().flatten() {
                if !out.contains(rid) && bound.eval(&self.rows[rid].values, false)? {
                    out.insert(rid.clone());
                }
            }
        }
        Ok(out)
    }

    /// Evaluate several conditions in one pass over the visible rows.
    pub fn select_many(&self, conds: &[Condition]) -> Result<Vec<BTreeSet<RowId>>> {
        let bound = conds.iter().map(|c| c.bind(&self.schema)).collect::<Result<Vec<_>, _>>()?;
        let keys: Vec<Option<Vec<(usize, Value)>>> = conds.iter().map(|c| anchors(&self.schema, c)).collect();
        let mut out = vec![BTreeSet::new(); conds.len()];
        for t in self.visible() {
            for (k, b) in bound.iter().enumerate() {
                if let Some(ks) = &keys[k] {
                    if !ks.iter().any(|(col, v)| &t.values[*col] == v) {
                        continue;
                    }
                }
                if b.eval(&t.values, false)? {
                    out[k].insert(t.rid.clone());
                }
            }
        }
        Ok(out)
    }

    pub fn any_match_indexed(&self, c: &Condition) -> Result<bool> {
        let Some(keys) = anchors(&self.schema, c) else {
            return self.any_match(c);
        };
        let bound = c.bind(&self.schema)?;
        for (col, v) in keys {
            let idx = self.column_index(col);
            for rid in idx.get(&v).into_iter().flatten() {
                if bound.eval(&self.rows[rid].values, false)? {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// Rows satisfying `c`, stopping after `limit` matches.
    pub fn select_limit(&self, c: &Condition, limit: usize) -> Result<Vec<RowId>> {
        let bound = c.bind(&self.schema)?;
        let mut out = Vec::new();
        if limit == 0 {
            return Ok(out);
        }
        for t in self.visible() {
            if bound.eval(&t.values, false)? {
                out.push(t.rid.clone());
                if out.len() >= limit {
                    break;
                }
            }
        }
        Ok(out)
    }

    pub fn any_match(&self, c: &Condition) -> Result<bool> {
        Ok(!self.select_limit(c, 1)?.is_empty())
    }

    /// Visible rows keyed by RowId with identical values.
    pub fn snapshot_equal(&self, other: &TableSnapshot) -> Result<bool> {
        if self.schema != other.schema {
            return Err(Error::SchemaMismatch("snapshots have different schemas".into()));
        }
        let mut a = self.visible();
        let mut b = other.visible();
        loop {
            match (a.next(), b.next()) {
                (None, None) => return Ok(true),
                (Some(x), Some(y)) => {
                    if x.rid != y.rid || !values_identical(&x.values, &y.values) {
                        return Ok(false);
                    }
                }
                _ => return Ok(false),
            }
        }
    }

    /// Rows whose visible state differs between the two snapshots.
    pub fn diff_rows(&self, other: &TableSnapshot) -> BTreeSet<RowId> {
        let mut out = BTreeSet::new();
        let ids: BTreeSet<&RowId> = self.rows.keys().chain(other.rows.keys()).collect();
        for rid in ids {
            let x = self.get(rid).filter(|t| !t.tombstone);
            let y = other.get(rid).filter(|t| !t.tombstone);
            let same = match (x, y) {
                (None, None) => true,
                (Some(x), Some(y)) => values_identical(&x.values, &y.values),
                _ => false,
            };
            if !same {
                out.insert(rid.clone());
            }
        }
        out
    }

    /// Largest `seq` used by rows of the given origin.
    pub fn max_seq(&self, origin: &str) -> u64 {
        self.rows.keys().filter(|r| &*r.origin == origin).map(|r| r.seq).max().unwrap_or(0)
    }
}

/// Value vectors are equal when every cell is equal (numerically for
/// numbers, so Int 5 and Dec 5 agree) and Null matches only Null.
pub fn values_identical(a: &[Value], b: &[Value]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x == y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;

    #[test]
    fn row_id_text() {
        let r: RowId = "alvarez:12".parse().unwrap();
        assert_eq!(r, RowId::new("alvarez", 12));
        assert_eq!(r.to_string(), "alvarez:12");
        let odd: RowId = "a:b:3".parse().unwrap();
        assert_eq!(&*odd.origin, "a:b");
        assert!("nocolon".parse::<RowId>().is_err());
        assert!(":3".parse::<RowId>().is_err());
    }

    #[test]
    fn schema_rules() {
        assert!(Schema::new(vec![]).is_err());
        assert!(Schema::from_pairs(&[("A", ColumnType::Int), ("A", ColumnType::Str)]).is_err());
        let s = Schema::from_pairs(&[("A", ColumnType::Int)]).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"[{"name":"A","type":"Int"}]"#);
        let back: Schema = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn type_check_on_insert() {
        let s = Arc::new(Schema::from_pairs(&[("A", ColumnType::Int)]).unwrap());
        let mut t = TableSnapshot::new(s);
        assert!(t.insert(Tuple::new(RowId::base(1), vec![Value::str("x")])).is_err());
        assert!(t.insert(Tuple::new(RowId::base(1), vec![])).is_err());
        assert!(t.insert(Tuple::new(RowId::base(1), vec![Value::Int(1)])).is_ok());
    }

    #[test]
    fn select_examples() {
        let d0 = fixture::base_table();
        let ca = d0.select(&crate::sql::parse_condition("State = 'CA'").unwrap()).unwrap();
        assert_eq!(ca, fixture::rids(&[fixture::LA, fixture::BURBANK, fixture::SAN_JOSE]));
        let zero = d0.select(&crate::sql::parse_condition("Electricity = 0").unwrap()).unwrap();
        assert_eq!(zero, fixture::rids(&[fixture::BURBANK, fixture::SAN_JOSE]));
        assert!(d0.select(&Condition::False).unwrap().is_empty());
    }

    #[test]
    fn snapshot_equality() {
        let d = fixture::desired_merge();
        let e = fixture::serial_merge();
        assert!(d.snapshot_equal(&d).unwrap());
        assert!(!d.snapshot_equal(&e).unwrap());
        let mut flipped = d.clone();
        let sj = flipped.get(&fixture::rid(fixture::SAN_JOSE)).unwrap().killed();
        flipped.insert(sj).unwrap();
        assert!(!d.snapshot_equal(&flipped).unwrap());
        let other = TableSnapshot::new(Arc::new(Schema::from_pairs(&[("X", ColumnType::Int)]).unwrap()));
        assert!(d.snapshot_equal(&other).is_err());
    }
}
