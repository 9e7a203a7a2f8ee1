use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mp_core::bench::{self, BenchConfig};
use mp_core::csvio;
use mp_core::detect::{detect, report_json};
use mp_core::modification::DEFAULT_INTERLEAVING_CAP;
use mp_core::oracle::{exhaustive_conflicts, oracle_conflicts};
use mp_core::repo::{Repository, REPO_ENV};
use mp_core::resolve::{ConflictScope, MergeSession, Prompt, ResolveOptions};
use mp_core::service::{self, ServiceConfig};
use mp_core::{Error, Side};

#[derive(Parser)]
#[command(name = "mp", version, about = "Versioned tables with order-aware merging")]
struct Cli {
    /// Repository root.
    #[arg(long, global = true, env = REPO_ENV, default_value = ".")]
    repo: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Meeting,
    Current,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create a repository from a CSV file.
    Init {
        csv: PathBuf,
        /// Directory to create; defaults to --repo.
        dir: Option<PathBuf>,
        /// Table name statements must use.
        #[arg(long, default_value = "db")]
        table: String,
    },
    /// Copy a repository.
    Clone { src: PathBuf, dst: PathBuf },
    /// Append a statement to a branch.
    Commit {
        statement: String,
        #[arg(short, long, default_value = "main")]
        branch: String,
    },
    /// Fast-forward a branch of another repository to this one's.
    Push {
        remote: PathBuf,
        #[arg(short, long, default_value = "main")]
        branch: String,
    },
    /// List branches.
    Branches,
    /// Print a branch's pending statements.
    Log {
        #[arg(short, long, default_value = "main")]
        branch: String,
    },
    /// Print a branch's table as CSV.
    Show {
        #[arg(short, long, default_value = "main")]
        branch: String,
    },
    /// Parse a statement and print its canonical form.
    Parse { statement: String },
    /// Report rows whose final state depends on the merge order.
    /// Exits 0 when the branches merge automatically, 3 otherwise.
    Detect {
        b1: String,
        b2: String,
        #[arg(long)]
        json: bool,
    },
    /// Merge two branches, asking which statement goes first where it matters.
    Merge {
        b1: String,
        b2: String,
        /// Branch that receives the merged table.
        #[arg(long, default_value = "main")]
        target: String,
        #[arg(long, value_enum, default_value_t = Scope::Meeting)]
        scope: Scope,
        /// Resolve the order but do not write it.
        #[arg(long)]
        dry_run: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        #[arg(long, env = "MP_TOKEN")]
        token: Option<String>,
        #[arg(long)]
        cors_origin: Option<String>,
        /// Static files (e.g. a console build) served outside /api.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Run the synthetic benchmark described by a JSON config.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Metrics CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every metric as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Ground-truth conflicting rows by per-row state tracking.
    Oracle {
        b1: String,
        b2: String,
        /// Also replay every interleaving (small histories only).
        #[arg(long)]
        exhaustive: bool,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(if matches!(e.downcast_ref::<Error>(), Some(Error::Parse(_))) { 2 } else { 1 })
        }
    }
}

/// Show a parse error under the offending statement.
fn with_caret(text: &str, e: Error) -> anyhow::Error {
    match e {
        Error::Parse(p) => {
            eprintln!("{}", p.render(text));
            Error::Parse(p).into()
        }
        other => other.into(),
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let root = cli.repo;
    match cli.cmd {
        Cmd::Init { csv, dir, table } => {
            let dir = dir.unwrap_or(root);
            let f = File::open(&csv).map_err(|e| anyhow::anyhow!("{}: {e}", csv.display()))?;
            let r = Repository::init(&dir, BufReader::new(f), &table)?;
            let base = r.base()?;
            println!("initialized {} with {} rows of `{}`", dir.display(), base.len_visible(), table);
            for c in r.schema().columns() {
                println!("  {} {}", c.name, c.ty);
            }
        }
        Cmd::Clone { src, dst } => {
            Repository::clone_to(&src, &dst)?;
            println!("cloned {} to {}", src.display(), dst.display());
        }
        Cmd::Commit { statement, branch } => {
            let mut r = Repository::open(&root)?;
            let m = r.commit(&branch, &statement).map_err(|e| with_caret(&statement, e))?;
            println!("{} {}", m.id, m.to_sql(r.schema(), r.table()));
        }
        Cmd::Push { remote, branch } => {
            Repository::open(&root)?.push(&remote, &branch)?;
            println!("pushed {branch} to {}", remote.display());
        }
        Cmd::Branches => {
            let r = Repository::open(&root)?;
            for b in r.branches()? {
                let merged = b.merged_by.map(|n| format!(" (merged by #{n})")).unwrap_or_default();
                println!("{}\tepoch {}\t{} pending\t{} total{merged}", b.name, b.epoch, b.pending, b.total);
            }
        }
        Cmd::Log { branch } => {
            let r = Repository::open(&root)?;
            for m in r.history(&branch)?.mods {
                println!("{}\t{}", m.id, m.to_sql(r.schema(), r.table()));
            }
        }
        Cmd::Show { branch } => {
            let r = Repository::open(&root)?;
            csvio::write_export(io::stdout().lock(), &r.branch_snapshot(&branch)?)?;
        }
        Cmd::Parse { statement } => {
            let stmt = mp_core::parse_statement(&statement).map_err(|e| with_caret(&statement, e.into()))?;
            println!("{stmt}");
        }
        Cmd::Detect { b1, b2, json } => {
            let r = Repository::open(&root)?;
            let (d0, h1, h2) = r.merge_inputs(&b1, &b2)?;
            let report = detect(&d0, &h1, &h2)?;
            if json {
                let mut v = report_json(&report);
                v["schema_version"] = service::SCHEMA_VERSION.into();
                println!("{}", serde_json::to_string_pretty(&v)?);
            } else if report.auto_mergeable {
                println!("{b1} and {b2} merge automatically: no row depends on the order");
            } else {
                println!("{} row(s) depend on the merge order", report.conflict_set.len());
                for rid in report.conflict_set.iter().take(50) {
                    let vals =
                        d0.get(rid).map(|t| t.values.iter().map(|v| v.to_plain()).collect::<Vec<_>>().join(", "));
                    println!("  {rid}\t{}", vals.unwrap_or_else(|| "(inserted)".into()));
                }
                if report.conflict_set.len() > 50 {
                    println!("  ...");
                }
                println!("{} conflicting statement pair(s):", report.pairs.len());
                for p in &report.pairs {
                    let kinds: Vec<String> = p.kinds.iter().map(|k| format!("{k:?}")).collect();
                    println!("  {} vs {} [{}]: {} row(s)", p.left, p.right, kinds.join(","), p.rows.len());
                }
            }
            return Ok(ExitCode::from(if report.auto_mergeable { 0 } else { 3 }));
        }
        Cmd::Merge { b1, b2, target, scope, dry_run } => {
            let mut r = Repository::open(&root)?;
            let (d0, h1, h2) = r.merge_inputs(&b1, &b2)?;
            let scope = match scope {
                Scope::Meeting => ConflictScope::MeetingVersion,
                Scope::Current => ConflictScope::CurrentVersion,
            };
            let opts = ResolveOptions { scope, table: r.table().to_string(), ..Default::default() };
            let mut s = MergeSession::start(&d0, &h1, &h2, opts)?;
            let stdin = io::stdin();
            let mut lines = stdin.lock().lines();
            while let Some(p) = s.prompt().cloned() {
                print_prompt(&p, r.schema().names().collect(), s.questions(), h1.len() + h2.len());
                let side = loop {
                    print!("which goes first? [l]eft / [r]ight / [q]uit: ");
                    io::stdout().flush()?;
                    let Some(line) = lines.next() else { anyhow::bail!("input ended before the merge finished") };
                    match line?.trim().to_ascii_lowercase().as_str() {
                        "l" | "left" => break Side::Left,
                        "r" | "right" => break Side::Right,
                        "q" | "quit" => anyhow::bail!("merge abandoned"),
                        _ => println!("please answer l or r"),
                    }
                };
                s.answer(&d0, side)?;
            }
            let order = s.result().cloned().expect("session finished");
            println!("order ({} question(s)):", s.questions());
            for id in &order.ids {
                println!("  {id}");
            }
            if !dry_run {
                let rec = r.merge_finalize(&b1, &b2, &order, &target)?;
                println!("merged into `{target}` as epoch {} ({} rows)", rec.epoch, rec.merged_rows);
            }
        }
        Cmd::Serve { listen, token, cors_origin, static_dir } => {
            let config =
                ServiceConfig { repo: root, token, cors_origin, static_dir, options: ResolveOptions::default() };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(config, listen))?;
        }
        Cmd::Bench { config, out, json } => {
            let cfg: BenchConfig = match &config {
                Some(p) => serde_json::from_reader(BufReader::new(File::open(p)?))?,
                None => BenchConfig::default(),
            };
            let runs = bench::sweep(&cfg.workload, cfg.seeds, &cfg.suite)?;
            let csv = bench::metrics_csv(&runs);
            match &out {
                Some(p) => std::fs::write(p, &csv)?,
                None => print!("{csv}"),
            }
            let mut resolution = Vec::new();
            if let Some(rc) = &cfg.resolution {
                for &model in &rc.models {
                    resolution.extend(bench::run_resolution_sim(
                        &rc.sizes,
                        &rc.probs,
                        rc.trials,
                        model,
                        cfg.workload.seed,
                    ));
                }
                eprintln!("size\tprob\tmodel\tmean_questions\tmax");
                for p in &resolution {
                    eprintln!(
                        "{}\t{}\t{:?}\t{:.3}\t{}",
                        p.size, p.conflict_prob, p.model, p.mean_questions, p.max_questions
                    );
                }
            }
            if let Some(p) = &json {
                let v = serde_json::json!({ "config": cfg, "runs": runs, "resolution": resolution });
                std::fs::write(p, serde_json::to_string_pretty(&v)?)?;
            }
        }
        Cmd::Oracle { b1, b2, exhaustive, json } => {
            let r = Repository::open(&root)?;
            let (d0, h1, h2) = r.merge_inputs(&b1, &b2)?;
            let truth = oracle_conflicts(&d0, &h1, &h2)?;
            let replayed =
                if exhaustive { Some(exhaustive_conflicts(&d0, &h1, &h2, DEFAULT_INTERLEAVING_CAP)?) } else { None };
            if json {
                let v = serde_json::json!({
                    "schema_version": service::SCHEMA_VERSION,
                    "conflict_set": truth,
                    "exhaustive_conflict_set": replayed,
                });
                println!("{}", serde_json::to_string_pretty(&v)?);
            } else {
                println!("{} row(s) depend on the merge order", truth.len());
                for rid in &truth {
                    println!("  {rid}");
                }
                if let Some(x) = &replayed {
                    println!("exhaustive replay {}", if *x == truth { "agrees" } else { "DISAGREES" });
                }
            }
            return Ok(ExitCode::from(if truth.is_empty() { 0 } else { 3 }));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_prompt(p: &Prompt, columns: Vec<&str>, asked: usize, bound: usize) {
    println!();
    println!("question {asked} (at most {bound})");
    println!("  left  {}: {}", p.left.id, p.left.sql);
    println!("  right {}: {}", p.right.id, p.right.sql);
    println!("  {} row(s) end up different depending on the order:", p.conflict_rows);
    let show = |v: &Option<Vec<mp_core::Value>>| match v {
        None => "(absent)".to_string(),
        Some(vals) => vals.iter().map(|x| x.to_plain()).collect::<Vec<_>>().join(", "),
    };
    println!("  columns: {}", columns.join(", "));
    for r in &p.sample_rows {
        println!("  {}", r.rid);
        println!("    now          {}", show(&r.current));
        println!("    left first   {}", show(&r.left_first));
        println!("    right first  {}", show(&r.right_first));
    }
}
