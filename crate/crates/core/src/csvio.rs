//! Snapshot CSV: header `_rid` followed by attribute names, empty field
//! for Null. Store files add a trailing `_dead` column so tombstones
//! survive a round trip; exports leave them out.

use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::table::{Column, RowId, Schema, TableSnapshot, Tuple};
use crate::value::{ColumnType, Value};

const RID: &str = "_rid";
const DEAD: &str = "_dead";

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Csv { line, msg: e.to_string() }
}

/// Numeric columns default to `Dec` so later statements may write
/// fractional values; `Int` has to be asked for with a `Name:Int` header.
fn infer(cells: impl Iterator<Item = String>) -> ColumnType {
    let mut numeric = false;
    for c in cells.filter(|c| !c.is_empty()) {
        if Value::parse_number(&c).is_none() {
            return ColumnType::Str;
        }
        numeric = true;
    }
    if numeric {
        ColumnType::Dec
    } else {
        ColumnType::Str
    }
}

/// Split an optional `:Type` annotation off a header cell.
fn header_name(h: &str) -> (&str, Option<ColumnType>) {
    if let Some((name, ty)) = h.rsplit_once(':') {
        if let Ok(ty) = ty.parse() {
            return (name, Some(ty));
        }
    }
    (h, None)
}

/// Read a plain CSV of attribute columns, inferring a schema unless one
/// is given. Rows get base ids in file order; an `_rid` column, if
/// present, is used instead.
pub fn read_csv(input: impl Read, schema: Option<&Schema>) -> Result<TableSnapshot> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    let mut records = Vec::new();
    for r in rdr.records() {
        records.push(r.map_err(csv_err)?);
    }
    let rid_col = headers.iter().position(|h| h == RID);
    let dead_col = headers.iter().position(|h| h == DEAD);
    let attr_cols: Vec<usize> = (0..headers.len()).filter(|&i| Some(i) != rid_col && Some(i) != dead_col).collect();

    let schema = match schema {
        Some(s) => {
            let names: Vec<&str> = attr_cols.iter().map(|&i| header_name(&headers[i]).0).collect();
            if !names.iter().copied().eq(s.names()) {
                return Err(Error::SchemaMismatch(format!(
                    "csv header {:?} does not match schema {:?}",
                    names,
                    s.names().collect::<Vec<_>>()
                )));
            }
            s.clone()
        }
        None => {
            let cols = attr_cols
                .iter()
                .map(|&i| {
                    let (name, ty) = header_name(&headers[i]);
                    let ty = ty.unwrap_or_else(|| infer(records.iter().map(|r| r.get(i).unwrap_or("").to_owned())));
                    Column { name: name.to_owned(), ty }
                })
                .collect();
            Schema::new(cols)?
        }
    };

    let mut snap = TableSnapshot::new(Arc::new(schema));
    for (k, rec) in records.iter().enumerate() {
        let line = rec.position().map(|p| p.line()).unwrap_or(k as u64 + 2);
        let bad = |msg: String| Error::Csv { line, msg };
        let rid = match rid_col {
            Some(i) => rec[i].parse::<RowId>().map_err(|e| bad(e.to_string()))?,
            None => RowId::base(k as u64 + 1),
        };
        let dead = match dead_col {
            Some(i) => match &rec[i] {
                "" | "0" => false,
                "1" => true,
                other => return Err(bad(format!("bad {DEAD} marker `{other}`"))),
            },
            None => false,
        };
        let mut values = Vec::with_capacity(attr_cols.len());
        for (col, &i) in snap.schema.columns().iter().zip(&attr_cols) {
            values.push(Value::parse_typed(&rec[i], col.ty).map_err(|m| bad(format!("{}: {m}", col.name)))?);
        }
        if snap.contains(&rid) {
            return Err(bad(format!("duplicate row id {rid}")));
        }
        let t = Tuple::new(rid, values);
        let t = if dead { t.killed() } else { t };
        snap.insert(t).map_err(|e| bad(e.to_string()))?;
    }
    Ok(snap)
}

fn write_rows(out: impl Write, snap: &TableSnapshot, store: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![RID.to_owned()];
    header.extend(snap.schema.names().map(str::to_owned));
    if store {
        header.push(DEAD.to_owned());
    }
    w.write_record(&header).map_err(csv_err)?;
    for t in snap.tuples() {
        if t.tombstone && !store {
            continue;
        }
        let mut rec = vec![t.rid.to_string()];
        rec.extend(t.values.iter().map(Value::to_plain));
        if store {
            rec.push(if t.tombstone { "1" } else { "0" }.to_owned());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Visible rows only.
pub fn write_export(out: impl Write, snap: &TableSnapshot) -> Result<()> {
    write_rows(out, snap, false)
}

/// Every stored row, tombstones marked.
pub fn write_store(out: impl Write, snap: &TableSnapshot) -> Result<()> {
    write_rows(out, snap, true)
}

pub fn to_export_string(snap: &TableSnapshot) -> String {
    let mut buf = Vec::new();
    write_export(&mut buf, snap).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;

    #[test]
    fn fixture_csv_loads_as_table_one_a() {
        let t = read_csv(fixture::CSV.as_bytes(), None).unwrap();
        assert_eq!(t.schema.type_of("Population"), Some(ColumnType::Dec));
        assert_eq!(t.schema.type_of("Electricity"), Some(ColumnType::Dec));
        assert_eq!(*t.schema, fixture::schema());
        assert!(t.snapshot_equal(&fixture::base_table()).unwrap());
    }

    #[test]
    fn header_annotations_pick_types() {
        let t = read_csv("A:Int,B:str,C\n1,2,x\n".as_bytes(), None).unwrap();
        let types: Vec<_> = t.schema.columns().iter().map(|c| c.ty).collect();
        assert_eq!(types, [ColumnType::Int, ColumnType::Str, ColumnType::Str]);
        assert_eq!(t.schema.names().collect::<Vec<_>>(), ["A", "B", "C"]);
        assert!(read_csv("A:Int\n1.5\n".as_bytes(), None).is_err());
    }

    #[test]
    fn header_only_is_empty() {
        let t = read_csv("A,B\n".as_bytes(), None).unwrap();
        assert_eq!(t.len_stored(), 0);
        assert_eq!(t.schema.arity(), 2);
    }

    #[test]
    fn malformed_row_names_its_line() {
        let err = read_csv("A,B\n1,2\n3\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 3, .. }), "{err}");
        let s = Schema::from_pairs(&[("A", ColumnType::Int)]).unwrap();
        let err = read_csv("A\n1\nx\n".as_bytes(), Some(&s)).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 3, .. }), "{err}");
    }

    #[test]
    fn store_round_trip_keeps_tombstones_and_exact_values() {
        let mut t = fixture::alvarez_table();
        let dead = fixture::base_table().get(&fixture::rid(fixture::BURBANK)).unwrap().killed();
        t.insert(dead).unwrap();
        t.insert(Tuple::new(
            RowId::new("b", 3),
            vec![Value::str("a,\"q\""), Value::Null, Value::ratio(1, 3), Value::Int(2)],
        ))
        .unwrap();
        let mut buf = Vec::new();
        write_store(&mut buf, &t).unwrap();
        let back = read_csv(buf.as_slice(), Some(&t.schema)).unwrap();
        assert_eq!(back.len_stored(), t.len_stored());
        assert!(back.get(&fixture::rid(fixture::BURBANK)).unwrap().tombstone);
        assert!(back.snapshot_equal(&t).unwrap());
        let exported = to_export_string(&t);
        assert!(!exported.contains("Burbank"));
        assert!(exported.contains("1/3"));
        assert!(exported.starts_with("_rid,City,State,Population,Electricity\n"));
    }
}
