//! The four-city energy table and the two analysts' histories, used by
//! tests, the demo repository and the acceptance suite.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::modification::History;
use crate::table::{RowId, Schema, TableSnapshot};
use crate::value::{ColumnType, Value};

pub const TABLE: &str = "db";

pub const LA: &str = "base:1";
pub const SEATTLE: &str = "base:2";
pub const BURBANK: &str = "base:3";
pub const SAN_JOSE: &str = "base:4";

// "Los Angles" is misspelled in the source data on purpose; a later
// example repairs it.
pub const CSV: &str = "City,State,Population,Electricity
Los Angles,CA,3.2,43
Seattle,D.C.,0.6,8709
Burbank,CA,0.1,0
San Jose,CA,1.0,0
";

pub const A1: &str = "UPDATE db SET Electricity = Electricity * 1000 WHERE State = 'CA'";
pub const A2: &str = "DELETE FROM db WHERE Population <= 0.2";
pub const B1: &str = "UPDATE db SET Electricity = 9 WHERE City = 'San Jose'";
pub const B2: &str = "UPDATE db SET Electricity = 0.4 WHERE City = 'Burbank'";
pub const B3: &str = "DELETE FROM db WHERE Electricity / Population < 10";

pub const STATEMENTS: &[&str] = &[A1, A2, B1, B2, B3];

pub fn rid(s: &str) -> RowId {
    s.parse().expect("row id")
}

pub fn rids(xs: &[&str]) -> BTreeSet<RowId> {
    xs.iter().map(|s| rid(s)).collect()
}

pub fn schema() -> Schema {
    Schema::from_pairs(&[
        ("City", ColumnType::Str),
        ("State", ColumnType::Str),
        ("Population", ColumnType::Dec),
        ("Electricity", ColumnType::Dec),
    ])
    .unwrap()
}

fn num(t: &str) -> Value {
    Value::parse_number(t).unwrap()
}

fn row(city: &str, state: &str, pop: &str, elec: &str) -> Vec<Value> {
    vec![Value::str(city), Value::str(state), num(pop), num(elec)]
}

fn snapshot(rows: Vec<(&str, Vec<Value>)>) -> TableSnapshot {
    let mut t = TableSnapshot::new(Arc::new(schema()));
    for (r, vals) in rows {
        t.insert(crate::table::Tuple::new(rid(r), vals)).unwrap();
    }
    t
}

/// The initial dataset.
pub fn base_table() -> TableSnapshot {
    snapshot(vec![
        (LA, row("Los Angles", "CA", "3.2", "43")),
        (SEATTLE, row("Seattle", "D.C.", "0.6", "8709")),
        (BURBANK, row("Burbank", "CA", "0.1", "0")),
        (SAN_JOSE, row("San Jose", "CA", "1.0", "0")),
    ])
}

/// After Alvarez's two statements, by replay. San Jose survives: its
/// population exceeds the delete threshold.
pub fn alvarez_table() -> TableSnapshot {
    snapshot(vec![
        (LA, row("Los Angles", "CA", "3.2", "43000")),
        (SEATTLE, row("Seattle", "D.C.", "0.6", "8709")),
        (SAN_JOSE, row("San Jose", "CA", "1.0", "0")),
    ])
}

/// After Bano's three statements.
pub fn bano_table() -> TableSnapshot {
    snapshot(vec![(LA, row("Los Angles", "CA", "3.2", "43")), (SEATTLE, row("Seattle", "D.C.", "0.6", "8709"))])
}

/// The intended merge {B1, B2, A1, A2, B3}.
pub fn desired_merge() -> TableSnapshot {
    snapshot(vec![
        (LA, row("Los Angles", "CA", "3.2", "43000")),
        (SEATTLE, row("Seattle", "D.C.", "0.6", "8709")),
        (SAN_JOSE, row("San Jose", "CA", "1.0", "9000")),
    ])
}

/// The serial merge {A1, A2, B1, B2, B3}, which loses San Jose.
pub fn serial_merge() -> TableSnapshot {
    snapshot(vec![(LA, row("Los Angles", "CA", "3.2", "43000")), (SEATTLE, row("Seattle", "D.C.", "0.6", "8709"))])
}

/// Alvarez's and Bano's histories.
pub fn histories() -> (History, History) {
    let s = schema();
    let mut a = History::new("alvarez");
    for t in [A1, A2] {
        a.push_sql(&s, t).unwrap();
    }
    let mut b = History::new("bano");
    for t in [B1, B2, B3] {
        b.push_sql(&s, t).unwrap();
    }
    (a, b)
}
