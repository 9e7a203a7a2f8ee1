//! Rewriting a condition that holds on a later version into one that
//! selects the same rows on an earlier version.

use std::collections::BTreeMap;

use crate::condition::{simplify, Condition};
use crate::error::Result;
use crate::modification::{ModKind, Modification};
use crate::table::{RowId, Schema};

#[derive(Clone, Debug, PartialEq)]
pub struct BacktrackResult {
    /// Condition on the earlier version.
    pub cond: Condition,
    /// Rows created inside the crossed modifications that satisfy the
    /// condition, with the condition as it was evaluated on them.
    pub flagged_inserts: BTreeMap<RowId, Condition>,
}

/// One step back across `m`: a row `t` of the earlier version satisfies
/// the result exactly when `m(t)` satisfies `c`.
pub fn backtrack_condition(schema: &Schema, c: &Condition, m: &Modification) -> Result<BacktrackResult> {
    let mut flagged = BTreeMap::new();
    let cond = match &m.kind {
        ModKind::Update { pred, assign } => {
            if c.mentions(&assign.target) {
                c.guard_atoms(&assign.target, &assign.rhs, pred)
            } else {
                c.clone()
            }
        }
        ModKind::Delete { pred } => Condition::And(vec![c.clone(), Condition::not(pred.clone())]),
        ModKind::Insert { values } => {
            if c.bind(schema)?.eval(values, false)? {
                flagged.insert(m.inserted_rid().unwrap(), c.clone());
            }
            c.clone()
        }
    };
    Ok(BacktrackResult { cond, flagged_inserts: flagged })
}

/// Backtrack across a whole sequence (given in application order),
/// simplifying after every step.
pub fn backtrack_through<'a>(
    schema: &Schema,
    c: &Condition,
    prefix: impl DoubleEndedIterator<Item = &'a Modification>,
) -> Result<BacktrackResult> {
    let mut cur = simplify(c);
    let mut flagged = BTreeMap::new();
    for m in prefix.rev() {
        if cur.is_false() {
            break;
        }
        let step = backtrack_condition(schema, &cur, m)?;
        flagged.extend(step.flagged_inserts);
        cur = simplify(&step.cond);
    }
    Ok(BacktrackResult { cond: cur, flagged_inserts: flagged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condition::{canonicalize, eval_condition};
    use crate::fixture::{self, *};
    use crate::modification::{apply_history, apply_modification, ModId};
    use crate::sql::parse_condition;

    fn pc(s: &str) -> Condition {
        parse_condition(s).unwrap()
    }

    #[test]
    fn constant_write_backtracks_to_expected_form() {
        let s = fixture::schema();
        let c = pc("Population = 2000 AND Electricity = 43000");
        let phi =
            Modification::parse("UPDATE db SET Electricity = 43000 WHERE City = 'Los Angeles'", &s, ModId::new("x", 1))
                .unwrap();
        let out = backtrack_condition(&s, &c, &phi).unwrap();
        let expected = pc("(Electricity = 43000 OR City = 'Los Angeles') AND Population = 2000");
        assert_eq!(canonicalize(&simplify(&out.cond)), canonicalize(&expected));
    }

    #[test]
    fn disjoint_attribute_passes_through() {
        let s = fixture::schema();
        let c = pc("City = 'Seattle'");
        let (_, hb) = histories();
        assert_eq!(backtrack_condition(&s, &c, &hb.mods[0]).unwrap().cond, c);
    }

    #[test]
    fn through_b1_by_brute_force() {
        let s = fixture::schema();
        let d0 = base_table();
        let (_, hb) = histories();
        let c = pc("Electricity = 9000");
        let out = backtrack_condition(&s, &c, &hb.mods[0]).unwrap();
        let expected = pc("(NOT City = 'San Jose' AND Electricity = 9000) OR (City = 'San Jose' AND FALSE)");
        assert_eq!(simplify(&out.cond), simplify(&expected));
        let after = apply_modification(&d0, &hb.mods[0]).unwrap();
        for t in d0.tuples() {
            let image = after.get(&t.rid).unwrap();
            assert_eq!(eval_condition(&s, t, &out.cond).unwrap(), eval_condition(&s, image, &c).unwrap());
        }
    }

    #[test]
    fn rules_recovered_for_constant_writes() {
        let s = fixture::schema();
        let m = |t: &str| Modification::parse(t, &s, ModId::new("x", 1)).unwrap();
        // written value equals the atom's literal: (B = b) OR predicate
        let r = backtrack_condition(&s, &pc("State = 'WA'"), &m("UPDATE db SET State = 'WA' WHERE City = 'Seattle'"))
            .unwrap();
        assert_eq!(canonicalize(&simplify(&r.cond)), canonicalize(&pc("State = 'WA' OR City = 'Seattle'")));
        // different value: (B = k) AND NOT predicate
        let r = backtrack_condition(&s, &pc("State = 'WA'"), &m("UPDATE db SET State = 'OR' WHERE City = 'Seattle'"))
            .unwrap();
        assert_eq!(canonicalize(&simplify(&r.cond)), canonicalize(&pc("NOT City = 'Seattle' AND State = 'WA'")));
    }

    #[test]
    fn prefix_equivalence_on_city_merge() {
        let s = fixture::schema();
        let d0 = base_table();
        let (_, hb) = histories();
        let c = pc("Electricity = 9");
        let left = apply_history(&d0, &hb.mods[..2]).unwrap().select(&c).unwrap();
        let right = d0.select(&backtrack_through(&s, &c, hb.mods[..2].iter()).unwrap().cond).unwrap();
        assert_eq!(left, right);
        assert_eq!(left, rids(&[SAN_JOSE]));
        let same = backtrack_through(&s, &c, std::iter::empty()).unwrap();
        assert_eq!(same.cond, c);
    }

    #[test]
    fn inserted_rows_are_flagged() {
        let s = fixture::schema();
        let ins =
            Modification::parse("INSERT INTO db (City, Electricity) VALUES ('X', 5)", &s, ModId::new("b", 7)).unwrap();
        let out = backtrack_through(&s, &pc("Electricity = 5"), [ins.clone()].iter()).unwrap();
        assert_eq!(out.flagged_inserts.keys().cloned().collect::<Vec<_>>(), vec![RowId::new("b", 7)]);
        let none = backtrack_through(&s, &pc("Electricity = 6"), [ins].iter()).unwrap();
        assert!(none.flagged_inserts.is_empty());
    }

    #[test]
    fn delete_rule() {
        let s = fixture::schema();
        let d0 = base_table();
        let (ha, _) = histories();
        let c = pc("State = 'CA'");
        let out = backtrack_condition(&s, &c, &ha.mods[1]).unwrap();
        let after = apply_modification(&d0, &ha.mods[1]).unwrap();
        assert_eq!(d0.select(&out.cond).unwrap(), after.select(&c).unwrap());
    }
}
