//! Arithmetic expressions over a tuple's own attributes.

use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use crate::error::EvalError;
use crate::table::{Schema, Tuple};
use crate::value::{ArithOp, ColumnType, Value};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Lit(Value),
    Attr(Arc<str>),
    Bin(ArithOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn attr(name: &str) -> Expr {
        Expr::Attr(Arc::from(name))
    }

    pub fn lit(v: impl Into<Value>) -> Expr {
        Expr::Lit(v.into())
    }

    pub fn bin(op: ArithOp, l: Expr, r: Expr) -> Expr {
        Expr::Bin(op, Box::new(l), Box::new(r))
    }

    pub fn as_literal(&self) -> Option<&Value> {
        match self {
            Expr::Lit(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_attr(&self) -> Option<&str> {
        match self {
            Expr::Attr(a) => Some(a),
            _ => None,
        }
    }

    pub fn collect_attrs<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Expr::Lit(_) => {}
            Expr::Attr(a) => {
                out.insert(a);
            }
            Expr::Bin(_, l, r) => {
                l.collect_attrs(out);
                r.collect_attrs(out);
            }
        }
    }

    pub fn mentions(&self, attr: &str) -> bool {
        match self {
            Expr::Lit(_) => false,
            Expr::Attr(a) => &**a == attr,
            Expr::Bin(_, l, r) => l.mentions(attr) || r.mentions(attr),
        }
    }

    pub fn substitute(&self, attr: &str, rhs: &Expr) -> Expr {
        match self {
            Expr::Attr(a) if &**a == attr => rhs.clone(),
            Expr::Bin(op, l, r) => Expr::bin(*op, l.substitute(attr, rhs), r.substitute(attr, rhs)),
            other => other.clone(),
        }
    }

    /// Simultaneous substitution of several attributes.
    pub fn substitute_all(&self, map: &HashMap<Arc<str>, Expr>) -> Expr {
        match self {
            Expr::Attr(a) => map.get(a).cloned().unwrap_or_else(|| self.clone()),
            Expr::Bin(op, l, r) => Expr::bin(*op, l.substitute_all(map), r.substitute_all(map)),
            Expr::Lit(_) => self.clone(),
        }
    }

    /// Evaluate literal-only subtrees. Subtrees that would raise a type
    /// error are left alone so the error still surfaces at evaluation.
    pub fn fold(&self) -> Expr {
        match self {
            Expr::Bin(op, l, r) => {
                let l = l.fold();
                let r = r.fold();
                if let (Expr::Lit(a), Expr::Lit(b)) = (&l, &r) {
                    if let Ok(v) = Value::arith(*op, a, b) {
                        return Expr::Lit(v);
                    }
                }
                if matches!(l, Expr::Lit(Value::Null)) || matches!(r, Expr::Lit(Value::Null)) {
                    // Null propagates unless the other side is a string (an error).
                    if !matches!(l, Expr::Lit(Value::Str(_))) && !matches!(r, Expr::Lit(Value::Str(_))) {
                        return Expr::Lit(Value::Null);
                    }
                }
                Expr::bin(*op, l, r)
            }
            other => other.clone(),
        }
    }

    pub fn bind(&self, schema: &Schema) -> Result<BoundExpr, EvalError> {
        Ok(match self {
            Expr::Lit(v) => BoundExpr::Lit(v.clone()),
            Expr::Attr(a) => BoundExpr::Col(schema.resolve(a)?),
            Expr::Bin(op, l, r) => BoundExpr::Bin(*op, Box::new(l.bind(schema)?), Box::new(r.bind(schema)?)),
        })
    }

    /// Static type: `Ok(None)` for the Null literal, `Dec` covers any
    /// numeric mix that is not purely Int.
    pub fn static_type(&self, schema: &Schema) -> Result<Option<ColumnType>, String> {
        match self {
            Expr::Lit(v) => Ok(match v {
                Value::Null => None,
                Value::Int(_) => Some(ColumnType::Int),
                Value::Dec(_) => Some(ColumnType::Dec),
                Value::Str(_) => Some(ColumnType::Str),
            }),
            Expr::Attr(a) => schema.type_of(a).map(Some).ok_or_else(|| format!("unknown attribute `{a}`")),
            Expr::Bin(op, l, r) => {
                let lt = l.static_type(schema)?;
                let rt = r.static_type(schema)?;
                if lt == Some(ColumnType::Str) || rt == Some(ColumnType::Str) {
                    return Err(format!("operator `{}` applied to a string", op.symbol()));
                }
                Ok(match (op, lt, rt) {
                    (ArithOp::Div, _, _) => Some(ColumnType::Dec),
                    (_, Some(ColumnType::Int), Some(ColumnType::Int)) => Some(ColumnType::Int),
                    (_, None, None) => None,
                    (_, Some(ColumnType::Int), None) | (_, None, Some(ColumnType::Int)) => Some(ColumnType::Int),
                    _ => Some(ColumnType::Dec),
                })
            }
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Expr::Bin(_, l, r) => 1 + l.size() + r.size(),
            _ => 1,
        }
    }
}

/// Expression with attribute names resolved to column positions.
#[derive(Clone, Debug)]
pub enum BoundExpr {
    Lit(Value),
    Col(usize),
    Bin(ArithOp, Box<BoundExpr>, Box<BoundExpr>),
}

impl BoundExpr {
    pub fn eval<'a>(&'a self, vals: &'a [Value]) -> Result<Cow<'a, Value>, EvalError> {
        match self {
            BoundExpr::Lit(v) => Ok(Cow::Borrowed(v)),
            BoundExpr::Col(i) => Ok(Cow::Borrowed(&vals[*i])),
            BoundExpr::Bin(op, l, r) => {
                let a = l.eval(vals)?;
                let b = r.eval(vals)?;
                Ok(Cow::Owned(Value::arith(*op, &a, &b)?))
            }
        }
    }
}

pub fn eval_expr(schema: &Schema, t: &Tuple, e: &Expr) -> Result<Value, EvalError> {
    Ok(e.bind(schema)?.eval(&t.values)?.into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;
    use crate::sql::parse_expr;

    #[test]
    fn fixture_arithmetic() {
        let d0 = fixture::base_table();
        let s = &d0.schema;
        let la = d0.get(&fixture::rid(fixture::LA)).unwrap();
        let v = eval_expr(s, la, &parse_expr("Electricity * 1000").unwrap()).unwrap();
        assert_eq!(v, Value::Int(43000));
        assert!(matches!(v, Value::Int(_)));

        let d = fixture::desired_merge();
        let sj = d.get(&fixture::rid(fixture::SAN_JOSE)).unwrap();
        let q = eval_expr(s, sj, &parse_expr("Electricity / Population").unwrap()).unwrap();
        assert!(matches!(q, Value::Dec(_)));
        assert_eq!(q, Value::Int(9000));
    }

    #[test]
    fn null_propagates() {
        let s = Schema::from_pairs(&[("A", ColumnType::Int)]).unwrap();
        let t = Tuple::new(crate::table::RowId::base(1), vec![Value::Null]);
        assert!(eval_expr(&s, &t, &parse_expr("A + 1").unwrap()).unwrap().is_null());
    }

    #[test]
    fn string_arithmetic_is_an_error() {
        let s = Schema::from_pairs(&[("A", ColumnType::Str)]).unwrap();
        let t = Tuple::new(crate::table::RowId::base(1), vec![Value::str("x")]);
        assert!(eval_expr(&s, &t, &parse_expr("A * 2").unwrap()).is_err());
        assert!(parse_expr("A * 2").unwrap().static_type(&s).is_err());
    }

    #[test]
    fn substitution_and_folding() {
        let e = parse_expr("Electricity / Population").unwrap();
        let r = e.substitute("Electricity", &parse_expr("Electricity * 1000").unwrap());
        assert_eq!(r, parse_expr("Electricity * 1000 / Population").unwrap());
        assert_eq!(parse_expr("2 * 3 + 1").unwrap().fold(), Expr::lit(7));
        assert_eq!(parse_expr("A + NULL").unwrap().fold(), Expr::Lit(Value::Null));
    }

    #[test]
    fn static_types() {
        let s = fixture::schema();
        let t = |src: &str| parse_expr(src).unwrap().static_type(&s).unwrap();
        assert_eq!(t("Electricity * 1000"), Some(ColumnType::Dec));
        assert_eq!(t("1 + 2"), Some(ColumnType::Int));
        assert_eq!(t("4 / 2"), Some(ColumnType::Dec));
        assert_eq!(t("NULL"), None);
        assert_eq!(t("City"), Some(ColumnType::Str));
    }
}
