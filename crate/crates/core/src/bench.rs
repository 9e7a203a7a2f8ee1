//! Synthetic workloads and the accuracy / runtime / interaction
//! measurements run over them.
//!
//! Generator: every column is an Int column whose values are ranks in
//! `0..distinct`; distinct counts are spaced geometrically between
//! `min_distinct` and `max_distinct`, so column 0 is the most selective
//! and the last column the least. Values are drawn uniformly or through a
//! Beta(1, β) sample mapped onto the rank. Each update or delete is
//! resampled until it affects at most `max_affected` of the branch's
//! current rows.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Beta;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::condition::{CmpOp, Condition};
use crate::detect::detect;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::modification::{apply_modification, Assignment, History, ModKind, Side};
use crate::oracle::{
    branch_finals, locking_conflicts, oracle_conflicts_with_limit, three_way_diff_conflicts, Granularity,
};
use crate::resolve::{ConflictOracle, ConflictScope, Engine, Pick};
use crate::table::{Column, RowId, Schema, TableSnapshot, Tuple};
use crate::value::{ArithOp, ColumnType, Value};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Skew {
    Uniform,
    Beta(f64),
}

impl fmt::Display for Skew {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Skew::Uniform => f.write_str("uniform"),
            Skew::Beta(b) => write!(f, "beta({b})"),
        }
    }
}

impl FromStr for Skew {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Skew, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("uniform") {
            return Ok(Skew::Uniform);
        }
        let inner = s
            .strip_prefix("beta(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("beta"))
            .ok_or_else(|| format!("unknown skew `{s}`; use uniform or beta(N)"))?;
        match inner.trim().parse::<f64>() {
            Ok(b) if b > 0.0 => Ok(Skew::Beta(b)),
            _ => Err(format!("bad beta parameter in `{s}`")),
        }
    }
}

impl Serialize for Skew {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Skew {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Skew, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Which predicate attributes the generator favours. `High` leans toward
/// columns with few distinct values, `Low` toward many.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectivityBias {
    Uniform,
    High,
    Low,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub rows: usize,
    pub width: usize,
    pub min_distinct: u64,
    pub max_distinct: u64,
    pub skew: Skew,
    pub history_len: usize,
    pub selectivity: SelectivityBias,
    /// update : insert : delete
    pub kinds: [u32; 3],
    /// simple : complex predicates
    pub predicates: [u32; 2],
    pub max_affected: f64,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            rows: 100_000,
            width: 30,
            min_distinct: 100,
            max_distinct: 1_000_000,
            skew: Skew::Uniform,
            history_len: 25,
            selectivity: SelectivityBias::Uniform,
            kinds: [75, 20, 5],
            predicates: [80, 20],
            max_affected: 0.15,
            seed: 0,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.width == 0 {
            return bad("width must be positive");
        }
        if self.min_distinct == 0 || self.min_distinct > self.max_distinct {
            return bad("need 0 < min_distinct <= max_distinct");
        }
        if self.kinds.iter().sum::<u32>() == 0 || self.predicates.iter().sum::<u32>() == 0 {
            return bad("kind and predicate ratios must not be all zero");
        }
        if !(self.max_affected > 0.0 && self.max_affected <= 1.0) {
            return bad("max_affected must be in (0, 1]");
        }
        Ok(())
    }

    /// Distinct-value count of each column, ascending.
    pub fn distinct_counts(&self) -> Vec<u64> {
        let (lo, hi) = ((self.min_distinct as f64).ln(), (self.max_distinct as f64).ln());
        (0..self.width)
            .map(|c| {
                let t = if self.width == 1 { 0.0 } else { c as f64 / (self.width - 1) as f64 };
                (lo + t * (hi - lo)).exp().round().max(1.0) as u64
            })
            .collect()
    }
}

pub struct Workload {
    pub d0: TableSnapshot,
    pub h1: History,
    pub h2: History,
    /// Largest affected fraction of any generated update or delete.
    pub max_affected_seen: f64,
}

struct Gen<'a> {
    cfg: &'a WorkloadConfig,
    rng: ChaCha8Rng,
    distinct: Vec<u64>,
    names: Vec<Arc<str>>,
    beta: Option<Beta<f64>>,
    attr_weights: WeightedIndex<u32>,
    kind_weights: WeightedIndex<u32>,
    pred_weights: WeightedIndex<u32>,
}

impl Gen<'_> {
    fn rank(&mut self, col: usize) -> i64 {
        let n = self.distinct[col];
        let u = match &self.beta {
            None => self.rng.gen::<f64>(),
            Some(b) => b.sample(&mut self.rng),
        };
        ((u * n as f64) as u64).min(n - 1) as i64
    }

    fn attr(&self, col: usize) -> Expr {
        Expr::Attr(self.names[col].clone())
    }

    fn pred_attr(&mut self) -> usize {
        self.attr_weights.sample(&mut self.rng)
    }

    fn any_attr(&mut self) -> usize {
        self.rng.gen_range(0..self.cfg.width)
    }

    fn eq(&mut self, col: usize) -> Condition {
        let v = self.rank(col);
        Condition::cmp(CmpOp::Eq, self.attr(col), Expr::lit(v))
    }

    /// `lo <= A < hi` covering a random 0.1%..5% slice of the domain.
    fn range(&mut self, col: usize) -> Condition {
        let n = self.distinct[col] as i64;
        let width = ((n as f64 * self.rng.gen_range(0.001..0.05)).round() as i64).max(1);
        let lo = self.rank(col).min(n - width).max(0);
        Condition::And(vec![
            Condition::cmp(CmpOp::Ge, self.attr(col), Expr::lit(lo)),
            Condition::cmp(CmpOp::Lt, self.attr(col), Expr::lit(lo + width)),
        ])
    }

    fn complex(&mut self) -> Condition {
        let a = self.pred_attr();
        match self.rng.gen_range(0..4) {
            0 => self.range(a),
            1 => {
                let k = self.rng.gen_range(2..=5);
                let vals: BTreeSet<i64> = (0..k).map(|_| self.rank(a)).collect();
                Condition::In(self.attr(a), vals.into_iter().map(Value::Int).collect())
            }
            2 => {
                let c = self.any_attr();
                let x = self.rank(c);
                let op = if self.rng.gen() { CmpOp::Lt } else { CmpOp::Ge };
                Condition::And(vec![self.eq(a), Condition::cmp(op, self.attr(c), Expr::lit(x))])
            }
            _ => {
                let c = self.pred_attr();
                Condition::Or(vec![self.eq(a), self.eq(c)])
            }
        }
    }

    fn predicate(&mut self, for_delete: bool) -> (Condition, bool) {
        let complex = self.pred_weights.sample(&mut self.rng) == 1;
        let c = match (complex, for_delete) {
            (false, _) => {
                let a = self.pred_attr();
                self.eq(a)
            }
            (true, true) => {
                let a = self.pred_attr();
                if self.rng.gen() {
                    self.eq(a)
                } else {
                    self.range(a)
                }
            }
            (true, false) => self.complex(),
        };
        (c, complex)
    }

    fn candidate(&mut self) -> ModKind {
        match self.kind_weights.sample(&mut self.rng) {
            0 => {
                let (pred, complex) = self.predicate(false);
                let b = self.any_attr();
                let rhs = if complex && self.rng.gen_bool(0.25) {
                    Expr::bin(ArithOp::Add, self.attr(b), Expr::lit(self.rng.gen_range(1..=10i64)))
                } else {
                    Expr::lit(self.rank(b))
                };
                ModKind::Update { pred, assign: Assignment { target: self.names[b].to_string(), rhs } }
            }
            1 => ModKind::Insert { values: (0..self.cfg.width).map(|c| Value::Int(self.rank(c))).collect() },
            _ => ModKind::Delete { pred: self.predicate(true).0 },
        }
    }

    fn history(&mut self, d0: &TableSnapshot, branch: &str) -> Result<(History, f64)> {
        let mut h = History::new(branch);
        let mut cur = d0.clone();
        let mut worst = 0.0f64;
        for _ in 0..self.cfg.history_len {
            let cap = (self.cfg.max_affected * cur.len_visible() as f64).floor() as usize;
            let mut chosen = None;
            for _ in 0..200 {
                let kind = self.candidate();
                let pred = match &kind {
                    ModKind::Update { pred, .. } | ModKind::Delete { pred } => pred,
                    ModKind::Insert { .. } => {
                        chosen = Some((kind, 0));
                        break;
                    }
                };
                let hit = cur.select_limit(pred, cap + 1)?.len();
                if hit <= cap {
                    chosen = Some((kind, hit));
                    break;
                }
            }
            let (kind, hit) = match chosen {
                Some(c) => c,
                None => {
                    // equality on the least selective column always fits
                    let last = self.cfg.width - 1;
                    let pred = self.eq(last);
                    let hit = cur.select(&pred)?.len();
                    (ModKind::Delete { pred }, hit)
                }
            };
            if cur.len_visible() > 0 {
                worst = worst.max(hit as f64 / cur.len_visible() as f64);
            }
            let m = h.push(kind).clone();
            cur = apply_modification(&cur, &m)?;
        }
        Ok((h, worst))
    }
}

/// Deterministic in `cfg` (including its seed).
pub fn generate(cfg: &WorkloadConfig) -> Result<Workload> {
    cfg.validate()?;
    let distinct = cfg.distinct_counts();
    let names: Vec<Arc<str>> = (0..cfg.width).map(|c| Arc::from(format!("c{c:02}"))).collect();
    let weights: Vec<u32> = (0..cfg.width as u32)
        .map(|c| match cfg.selectivity {
            SelectivityBias::Uniform => 1,
            SelectivityBias::High => cfg.width as u32 - c,
            SelectivityBias::Low => c + 1,
        })
        .collect();
    let beta = match cfg.skew {
        Skew::Uniform => None,
        Skew::Beta(b) => Some(Beta::new(1.0, b).map_err(|e| Error::Invalid(e.to_string()))?),
    };
    let mut g = Gen {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        distinct,
        names: names.clone(),
        beta,
        attr_weights: WeightedIndex::new(weights).expect("positive weights"),
        kind_weights: WeightedIndex::new(cfg.kinds).map_err(|e| Error::Invalid(e.to_string()))?,
        pred_weights: WeightedIndex::new(cfg.predicates).map_err(|e| Error::Invalid(e.to_string()))?,
    };
    let schema = Schema::new(names.iter().map(|n| Column { name: n.to_string(), ty: ColumnType::Int }).collect())?;
    let mut d0 = TableSnapshot::new(Arc::new(schema));
    for r in 0..cfg.rows {
        let values = (0..cfg.width).map(|c| Value::Int(g.rank(c))).collect();
        d0.insert(Tuple::new(RowId::base(r as u64 + 1), values))?;
    }
    let (h1, w1) = g.history(&d0, "b1")?;
    let (h2, w2) = g.history(&d0, "b2")?;
    Ok(Workload { d0, h1, h2, max_affected_seen: w1.max(w2) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Detect,
    LockCell,
    LockRecord,
    ThreeWayDiff,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Detect, Method::LockCell, Method::LockRecord, Method::ThreeWayDiff];

    pub fn name(self) -> &'static str {
        match self {
            Method::Detect => "detect",
            Method::LockCell => "lock-cell",
            Method::LockRecord => "lock-record",
            Method::ThreeWayDiff => "three-way-diff",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: Method,
    pub flagged: usize,
    pub flagged_pct: f64,
    /// Against the oracle; absent when the oracle was not run or gave up.
    pub tp_pct: Option<f64>,
    pub fp_pct: Option<f64>,
    pub fn_pct: Option<f64>,
    pub false_negatives: Option<usize>,
    pub analysis_secs: f64,
    /// Time to produce what the method needs from each branch: nothing
    /// for the logical methods, both materialized finals for the diff.
    pub commit_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub rows: usize,
    pub history_len: usize,
    pub max_affected_seen: f64,
    pub oracle_positives: Option<usize>,
    pub oracle_pct: Option<f64>,
    pub oracle_secs: Option<f64>,
    pub methods: Vec<MethodMetrics>,
}

impl RunMetrics {
    pub fn method(&self, m: Method) -> Option<&MethodMetrics> {
        self.methods.iter().find(|x| x.method == m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteOptions {
    pub methods: Vec<Method>,
    pub oracle: bool,
    pub state_limit: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { methods: Method::ALL.to_vec(), oracle: true, state_limit: crate::oracle::DEFAULT_STATE_LIMIT }
    }
}

fn pct(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * n as f64 / total as f64
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64()))
}

/// Measure each method on one workload.
pub fn run_workload(w: &Workload, seed: u64, opts: &SuiteOptions) -> Result<RunMetrics> {
    let (d0, h1, h2) = (&w.d0, &w.h1, &w.h2);
    let total = d0.len_visible();
    let (truth, oracle_secs) = if opts.oracle {
        match timed(|| oracle_conflicts_with_limit(d0, h1, h2, opts.state_limit)) {
            Ok((t, s)) => (Some(t), Some(s)),
            Err(Error::StateExplosion { .. }) => (None, None),
            Err(e) => return Err(e),
        }
    } else {
        (None, None)
    };
    let mut methods = Vec::new();
    for &m in &opts.methods {
        let (flagged, analysis, commit) = match m {
            Method::Detect => {
                let (r, s) = timed(|| detect(d0, h1, h2))?;
                (r.conflict_set, s, 0.0)
            }
            Method::LockCell => {
                let (r, s) = timed(|| locking_conflicts(d0, h1, h2, Granularity::Cell))?;
                (r, s, 0.0)
            }
            Method::LockRecord => {
                let (r, s) = timed(|| locking_conflicts(d0, h1, h2, Granularity::Record))?;
                (r, s, 0.0)
            }
            Method::ThreeWayDiff => {
                let ((f1, f2), c) = timed(|| branch_finals(d0, h1, h2))?;
                let (r, s) = timed(|| three_way_diff_conflicts(d0, &f1, &f2))?;
                (r, s, c)
            }
        };
        let vs = truth.as_ref().map(|t| {
            let tp = flagged.intersection(t).count();
            (tp, flagged.len() - tp, t.len() - tp)
        });
        methods.push(MethodMetrics {
            method: m,
            flagged: flagged.len(),
            flagged_pct: pct(flagged.len(), total),
            tp_pct: vs.map(|v| pct(v.0, total)),
            fp_pct: vs.map(|v| pct(v.1, total)),
            fn_pct: vs.map(|v| pct(v.2, total)),
            false_negatives: vs.map(|v| v.2),
            analysis_secs: analysis,
            commit_secs: commit,
        });
    }
    Ok(RunMetrics {
        seed,
        rows: d0.len_visible(),
        history_len: h1.len(),
        max_affected_seen: w.max_affected_seen,
        oracle_positives: truth.as_ref().map(BTreeSet::len),
        oracle_pct: truth.as_ref().map(|t| pct(t.len(), total)),
        oracle_secs,
        methods,
    })
}

/// Generate and measure one workload.
pub fn run_suite(cfg: &WorkloadConfig, opts: &SuiteOptions) -> Result<RunMetrics> {
    let w = generate(cfg)?;
    run_workload(&w, cfg.seed, opts)
}

/// One run per seed, `seed0 .. seed0 + count`.
pub fn sweep(cfg: &WorkloadConfig, count: u64, opts: &SuiteOptions) -> Result<Vec<RunMetrics>> {
    (cfg.seed..cfg.seed + count)
        .into_par_iter()
        .map(|seed| run_suite(&WorkloadConfig { seed, ..cfg.clone() }, opts))
        .collect()
}

pub const CSV_HEADER: &str =
    "seed,method,rows,history_len,flagged,flagged_pct,tp_pct,fp_pct,fn_pct,analysis_secs,commit_secs,oracle_positives,oracle_secs";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn metrics_csv(runs: &[RunMetrics]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in runs {
        for m in &r.methods {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6},{},{},{},{:.6},{:.6},{},{}\n",
                r.seed,
                m.method.name(),
                r.rows,
                r.history_len,
                m.flagged,
                m.flagged_pct,
                opt(m.tp_pct),
                opt(m.fp_pct),
                opt(m.fn_pct),
                m.analysis_secs,
                m.commit_secs,
                r.oracle_positives.map(|n| n.to_string()).unwrap_or_default(),
                opt(r.oracle_secs),
            ));
        }
    }
    out
}

/// How the simulated user answers precedence questions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerModel {
    /// Each asked pair is oriented by a fair coin when first asked. Every
    /// pair the engine asks about is still unconstrained at that point, so
    /// this samples a random partial order lazily.
    Coin,
    /// A desired interleaving drawn uniformly from all interleavings.
    UniformInterleaving,
    AlwaysLeft,
    AlwaysRight,
}

impl AnswerModel {
    pub const ALL: [AnswerModel; 4] =
        [AnswerModel::Coin, AnswerModel::UniformInterleaving, AnswerModel::AlwaysLeft, AnswerModel::AlwaysRight];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionPoint {
    pub size: usize,
    pub conflict_prob: f64,
    pub model: AnswerModel,
    pub trials: usize,
    pub mean_questions: f64,
    pub max_questions: usize,
    /// Runs that asked more than |H1| + |H2| questions (should be zero).
    pub bound_violations: usize,
}

/// Conflict relation fixed per trial: each pair independently with
/// probability `p`.
struct Matrix {
    n: usize,
    bits: Vec<bool>,
}

impl ConflictOracle for Matrix {
    fn conflicts(&mut self, _version: &[Pick], left: usize, right: usize) -> Result<bool> {
        Ok(self.bits[left * self.n + right])
    }
}

/// Questions asked in one simulated reconciliation of two histories of
/// `n` modifications each.
pub fn simulate_once(n: usize, p: f64, model: AnswerModel, rng: &mut impl Rng) -> usize {
    let mut m = Matrix { n, bits: (0..n * n).map(|_| rng.gen_bool(p)).collect() };
    let (pos1, pos2) = {
        let mut sides: Vec<Side> =
            std::iter::repeat(Side::Left).take(n).chain(std::iter::repeat(Side::Right).take(n)).collect();
        sides.shuffle(rng);
        let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for (k, s) in sides.iter().enumerate() {
            match s {
                Side::Left => a.push(k),
                Side::Right => b.push(k),
            }
        }
        (a, b)
    };
    let mut e = Engine::new(n, n, ConflictScope::CurrentVersion);
    loop {
        e.advance(&mut m).expect("matrix oracle cannot fail");
        let Some((i, j)) = e.pending else { break };
        let side = match model {
            AnswerModel::Coin => {
                if rng.gen() {
                    Side::Left
                } else {
                    Side::Right
                }
            }
            AnswerModel::UniformInterleaving => {
                if pos1[i] < pos2[j] {
                    Side::Left
                } else {
                    Side::Right
                }
            }
            AnswerModel::AlwaysLeft => Side::Left,
            AnswerModel::AlwaysRight => Side::Right,
        };
        e.answer(side).expect("pending question");
    }
    e.questions
}

pub fn run_resolution_sim(
    sizes: &[usize],
    probs: &[f64],
    trials: usize,
    model: AnswerModel,
    seed: u64,
) -> Vec<ResolutionPoint> {
    let mut out = Vec::new();
    for &n in sizes {
        for &p in probs {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9) ^ p.to_bits());
            let (mut sum, mut max, mut bad) = (0usize, 0usize, 0usize);
            for _ in 0..trials {
                let q = simulate_once(n, p, model, &mut rng);
                sum += q;
                max = max.max(q);
                bad += usize::from(q > 2 * n);
            }
            out.push(ResolutionPoint {
                size: n,
                conflict_prob: p,
                model,
                trials,
                mean_questions: sum as f64 / trials.max(1) as f64,
                max_questions: max,
                bound_violations: bad,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResolutionSimConfig {
    pub sizes: Vec<usize>,
    pub probs: Vec<f64>,
    pub trials: usize,
    pub models: Vec<AnswerModel>,
}

impl Default for ResolutionSimConfig {
    fn default() -> Self {
        ResolutionSimConfig {
            sizes: vec![10, 25, 50, 100],
            probs: vec![0.0001, 0.001, 0.01, 0.05, 0.1, 0.2],
            trials: 10_000,
            models: vec![AnswerModel::Coin],
        }
    }
}

/// Contents of a `--config` file: workload fields at the top level plus
/// run settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    #[serde(flatten)]
    pub workload: WorkloadConfig,
    pub seeds: u64,
    pub suite: SuiteOptions,
    pub resolution: Option<ResolutionSimConfig>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { workload: WorkloadConfig::default(), seeds: 1, suite: SuiteOptions::default(), resolution: None }
    }
}
