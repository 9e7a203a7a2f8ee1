//! A repository on disk: one table, an immutable base epoch per merge,
//! and an append-only statement log per branch.
//!
//! ```text
//! repo.json                     schema, table name, epochs, branch heads
//! base.csv                      epoch 0
//! epochs/<n>.csv                epoch n, written by a merge
//! branches/<name>/history.jsonl one HistoryRecord per line
//! merges/<n>.json               finalized merge records
//! merges/sessions/<id>.json     in-progress merge sessions
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::error::{Error, Result};
use crate::modification::{apply_history, History, HistoryRecord, Interleaving, ModId, Modification};
use crate::table::{Schema, TableSnapshot, BASE_ORIGIN};

pub const FORMAT_VERSION: u32 = 1;
pub const REPO_ENV: &str = "MP_REPO";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchMeta {
    /// Epoch the pending segment applies to.
    pub epoch: u64,
    /// Log entries before this index belong to earlier epochs.
    pub start: usize,
    /// Merge that most recently absorbed this branch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merged_by: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepoMeta {
    pub format: u32,
    pub table: String,
    pub schema: Schema,
    /// Number of the newest epoch; epoch 0 is `base.csv`.
    pub epoch: u64,
    pub branches: BTreeMap<String, BranchMeta>,
    pub merges: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub number: u64,
    pub left: String,
    pub right: String,
    pub target: String,
    pub from_epoch: u64,
    pub epoch: u64,
    pub order: Vec<ModId>,
    pub merged_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchInfo {
    pub name: String,
    pub epoch: u64,
    pub pending: usize,
    pub total: usize,
    pub merged_by: Option<u64>,
}

/// Held while a repository is being modified; removed on drop.
pub struct RepoLock {
    path: PathBuf,
}

impl Drop for RepoLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub struct Repository {
    root: PathBuf,
    pub meta: RepoMeta,
}

fn valid_branch_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name != BASE_ORIGIN
        && name.len() <= 64
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(Error::Invalid(format!("`{name}` is not a valid branch name")))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn copy_tree(src: &Path, dst: &Path) -> Result<()> {
    fs::create_dir_all(dst)?;
    for entry in fs::read_dir(src)? {
        let entry = entry?;
        let name = entry.file_name();
        if name == ".lock" {
            continue;
        }
        let to = dst.join(&name);
        if entry.file_type()?.is_dir() {
            copy_tree(&entry.path(), &to)?;
        } else {
            fs::copy(entry.path(), &to)?;
        }
    }
    Ok(())
}

impl Repository {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn schema(&self) -> &Schema {
        &self.meta.schema
    }

    pub fn table(&self) -> &str {
        &self.meta.table
    }

    /// Create a repository in an empty (or missing) directory.
    pub fn init(root: impl AsRef<Path>, csv: impl std::io::Read, table: &str) -> Result<Repository> {
        let root = root.as_ref().to_path_buf();
        if root.exists() && fs::read_dir(&root)?.next().is_some() {
            return Err(Error::Invalid(format!("{} is not empty", root.display())));
        }
        let base = csvio::read_csv(csv, None)?;
        fs::create_dir_all(root.join("branches"))?;
        fs::create_dir_all(root.join("epochs"))?;
        fs::create_dir_all(root.join("merges/sessions"))?;
        let mut f = File::create(root.join("base.csv"))?;
        csvio::write_store(&mut f, &base)?;
        let meta = RepoMeta {
            format: FORMAT_VERSION,
            table: table.to_string(),
            schema: (*base.schema).clone(),
            epoch: 0,
            branches: BTreeMap::new(),
            merges: 0,
        };
        let repo = Repository { root, meta };
        repo.save_meta()?;
        Ok(repo)
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Repository> {
        let root = root.as_ref().to_path_buf();
        let path = root.join("repo.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::NotFound(format!("no repository at {} ({e})", root.display())))?;
        let meta: RepoMeta = serde_json::from_str(&text)?;
        if meta.format != FORMAT_VERSION {
            return Err(Error::Invalid(format!("unsupported repository format {}", meta.format)));
        }
        Ok(Repository { root, meta })
    }

    /// Re-read metadata from disk.
    pub fn reload(&mut self) -> Result<()> {
        *self = Repository::open(&self.root)?;
        Ok(())
    }

    /// Copy a repository; the copy is independent of the source.
    pub fn clone_to(src: impl AsRef<Path>, dst: impl AsRef<Path>) -> Result<Repository> {
        let src = Repository::open(src)?;
        let dst = dst.as_ref();
        if dst.exists() && fs::read_dir(dst)?.next().is_some() {
            return Err(Error::Invalid(format!("{} is not empty", dst.display())));
        }
        copy_tree(&src.root, dst)?;
        // sessions belong to the process serving the source
        let sessions = dst.join("merges/sessions");
        if sessions.exists() {
            fs::remove_dir_all(&sessions)?;
        }
        fs::create_dir_all(&sessions)?;
        Repository::open(dst)
    }

    pub fn lock(&self) -> Result<RepoLock> {
        let path = self.root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RepoLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Conflict(format!("repository is locked ({} exists)", path.display())))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn save_meta(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.meta)? + "\n";
        write_atomic(&self.root.join("repo.json"), text.as_bytes())
    }

    fn epoch_path(&self, n: u64) -> PathBuf {
        if n == 0 {
            self.root.join("base.csv")
        } else {
            self.root.join("epochs").join(format!("{n}.csv"))
        }
    }

    fn log_path(&self, branch: &str) -> PathBuf {
        self.root.join("branches").join(branch).join("history.jsonl")
    }

    pub fn epoch(&self, n: u64) -> Result<TableSnapshot> {
        if n > self.meta.epoch {
            return Err(Error::NotFound(format!("epoch {n}")));
        }
        let f = File::open(self.epoch_path(n))?;
        csvio::read_csv(BufReader::new(f), Some(&self.meta.schema))
    }

    pub fn base(&self) -> Result<TableSnapshot> {
        self.epoch(0)
    }

    pub fn branch_meta(&self, branch: &str) -> Result<&BranchMeta> {
        self.meta.branches.get(branch).ok_or_else(|| Error::NotFound(format!("branch `{branch}`")))
    }

    pub fn has_branch(&self, branch: &str) -> bool {
        self.meta.branches.contains_key(branch)
    }

    /// Every record in the branch log, including those already merged.
    pub fn full_log(&self, branch: &str) -> Result<Vec<Modification>> {
        let path = self.log_path(branch);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for (k, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: HistoryRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Invalid(format!("{}:{}: {e}", path.display(), k + 1)))?;
            out.push(Modification::from_record(&rec, &self.meta.schema)?);
        }
        Ok(out)
    }

    /// The branch's modifications since its epoch.
    pub fn history(&self, branch: &str) -> Result<History> {
        let meta = self.branch_meta(branch)?;
        let mut log = self.full_log(branch)?;
        let mut h = History::new(branch);
        h.mods = log.split_off(meta.start.min(log.len()));
        Ok(h)
    }

    /// The version a branch sits on before its pending modifications.
    pub fn branch_base(&self, branch: &str) -> Result<TableSnapshot> {
        self.epoch(self.branch_meta(branch)?.epoch)
    }

    /// The branch's current contents.
    pub fn branch_snapshot(&self, branch: &str) -> Result<TableSnapshot> {
        let h = self.history(branch)?;
        apply_history(&self.branch_base(branch)?, &h.mods)
    }

    pub fn branches(&self) -> Result<Vec<BranchInfo>> {
        self.meta
            .branches
            .iter()
            .map(|(name, m)| {
                let total = self.full_log(name)?.len();
                Ok(BranchInfo {
                    name: name.clone(),
                    epoch: m.epoch,
                    pending: total - m.start.min(total),
                    total,
                    merged_by: m.merged_by,
                })
            })
            .collect()
    }

    /// Parse a statement and append it to the branch log. A missing branch
    /// is created on the newest epoch.
    pub fn commit(&mut self, branch: &str, text: &str) -> Result<Modification> {
        valid_branch_name(branch)?;
        let _lock = self.lock()?;
        self.reload()?;
        let stmt = crate::sql::parse_statement(text)?;
        if stmt.table() != self.meta.table {
            return Err(Error::SchemaMismatch(format!(
                "statement targets table `{}` but this repository holds `{}`",
                stmt.table(),
                self.meta.table
            )));
        }
        // sequence numbers never restart, so insert-born row ids stay unique
        let seq = self.full_log(branch)?.last().map_or(1, |m| m.id.seq + 1);
        let m = Modification::lower(&stmt, &self.meta.schema, ModId::new(branch, seq))?;
        let rec = m.to_record(&self.meta.schema);
        let path = self.log_path(branch);
        fs::create_dir_all(path.parent().unwrap())?;
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        writeln!(f, "{}", serde_json::to_string(&rec)?)?;
        f.sync_data()?;
        if !self.meta.branches.contains_key(branch) {
            let meta = BranchMeta { epoch: self.meta.epoch, start: 0, merged_by: None };
            self.meta.branches.insert(branch.to_string(), meta);
            self.save_meta()?;
        }
        Ok(m)
    }

    /// Two branches can be compared only from the same epoch.
    pub fn merge_inputs(&self, left: &str, right: &str) -> Result<(TableSnapshot, History, History)> {
        if left == right {
            return Err(Error::Invalid("cannot merge a branch with itself".into()));
        }
        let (ml, mr) = (self.branch_meta(left)?, self.branch_meta(right)?);
        if ml.epoch != mr.epoch {
            return Err(Error::Conflict(format!(
                "`{left}` is on epoch {} and `{right}` on epoch {}; commit to both from the same epoch",
                ml.epoch, mr.epoch
            )));
        }
        Ok((self.epoch(ml.epoch)?, self.history(left)?, self.history(right)?))
    }

    /// Persist the replay of `order` as a new epoch. Both inputs and the
    /// target continue from it with empty pending segments.
    pub fn merge_finalize(
        &mut self,
        left: &str,
        right: &str,
        order: &Interleaving,
        target: &str,
    ) -> Result<MergeRecord> {
        valid_branch_name(target)?;
        let _lock = self.lock()?;
        self.reload()?;
        let (d0, h1, h2) = self.merge_inputs(left, right)?;
        let mods = order.resolve(&h1, &h2)?;
        let merged = apply_history(&d0, mods)?;
        let from_epoch = self.branch_meta(left)?.epoch;
        let epoch = self.meta.epoch + 1;
        let number = self.meta.merges + 1;
        {
            let path = self.epoch_path(epoch);
            fs::create_dir_all(path.parent().unwrap())?;
            let mut buf = Vec::new();
            csvio::write_store(&mut buf, &merged)?;
            write_atomic(&path, &buf)?;
        }
        let record = MergeRecord {
            number,
            left: left.into(),
            right: right.into(),
            target: target.into(),
            from_epoch,
            epoch,
            order: order.ids.clone(),
            merged_rows: merged.len_visible(),
        };
        fs::create_dir_all(self.root.join("merges"))?;
        write_atomic(
            &self.root.join("merges").join(format!("{number}.json")),
            (serde_json::to_string_pretty(&record)? + "\n").as_bytes(),
        )?;
        for b in [left, right, target] {
            let start = self.full_log(b)?.len();
            let merged_by = if b == left || b == right { Some(number) } else { None };
            let prev = self.meta.branches.get(b).and_then(|m| m.merged_by);
            self.meta.branches.insert(b.to_string(), BranchMeta { epoch, start, merged_by: merged_by.or(prev) });
        }
        self.meta.epoch = epoch;
        self.meta.merges = number;
        self.save_meta()?;
        Ok(record)
    }

    pub fn merge_records(&self) -> Result<Vec<MergeRecord>> {
        (1..=self.meta.merges)
            .map(|n| {
                let text = fs::read_to_string(self.root.join("merges").join(format!("{n}.json")))?;
                Ok(serde_json::from_str(&text)?)
            })
            .collect()
    }

    /// Fast-forward `branch` on the repository at `remote` to this one's.
    pub fn push(&self, remote: impl AsRef<Path>, branch: &str) -> Result<()> {
        let mut remote = Repository::open(remote)?;
        let _lock = remote.lock()?;
        remote.reload()?;
        if remote.meta.schema != self.meta.schema || remote.meta.table != self.meta.table {
            return Err(Error::SchemaMismatch("remote holds a different table".into()));
        }
        let local = self.branch_meta(branch)?.clone();
        // epochs and merges the remote shares with us must be identical
        for n in 0..=remote.meta.epoch.min(self.meta.epoch) {
            if fs::read(self.epoch_path(n))? != fs::read(remote.epoch_path(n))? {
                return Err(Error::Conflict(format!(
                    "epoch {n} differs from the remote's; push is not a fast-forward"
                )));
            }
        }
        if remote.meta.epoch > self.meta.epoch {
            return Err(Error::Conflict("remote has newer merges; clone or merge first".into()));
        }
        let ours = fs::read_to_string(self.log_path(branch)).unwrap_or_default();
        let theirs = fs::read_to_string(remote.log_path(branch)).unwrap_or_default();
        if !ours.starts_with(&theirs) {
            return Err(Error::Conflict(format!("`{branch}` has diverged from the remote; merge is required")));
        }
        if let Some(rm) = remote.meta.branches.get(branch) {
            if rm.start > local.start || rm.epoch > local.epoch {
                return Err(Error::Conflict(format!("remote `{branch}` is ahead")));
            }
        }
        for n in remote.meta.epoch + 1..=self.meta.epoch {
            let to = remote.epoch_path(n);
            fs::create_dir_all(to.parent().unwrap())?;
            fs::copy(self.epoch_path(n), to)?;
        }
        fs::create_dir_all(remote.root.join("merges"))?;
        for n in remote.meta.merges + 1..=self.meta.merges {
            let name = format!("{n}.json");
            fs::copy(self.root.join("merges").join(&name), remote.root.join("merges").join(&name))?;
        }
        let to = remote.log_path(branch);
        fs::create_dir_all(to.parent().unwrap())?;
        write_atomic(&to, ours.as_bytes())?;
        remote.meta.epoch = self.meta.epoch;
        remote.meta.merges = self.meta.merges;
        remote.meta.branches.insert(branch.to_string(), local);
        remote.save_meta()
    }

    fn session_path(&self, id: &str) -> Result<PathBuf> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Err(Error::NotFound(format!("session `{id}`")));
        }
        Ok(self.root.join("merges/sessions").join(format!("{id}.json")))
    }

    pub fn save_session<T: Serialize>(&self, id: &str, s: &T) -> Result<()> {
        let path = self.session_path(id)?;
        fs::create_dir_all(path.parent().unwrap())?;
        write_atomic(&path, serde_json::to_string(s)?.as_bytes())
    }

    pub fn load_session<T: DeserializeOwned>(&self, id: &str) -> Result<T> {
        let path = self.session_path(id)?;
        let text = fs::read_to_string(&path).map_err(|_| Error::NotFound(format!("session `{id}`")))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn delete_session(&self, id: &str) -> Result<()> {
        let path = self.session_path(id)?;
        if path.exists() {
            fs::remove_file(path)?;
        }
        Ok(())
    }

    pub fn session_ids(&self) -> Result<Vec<String>> {
        let dir = self.root.join("merges/sessions");
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for e in fs::read_dir(dir)? {
            let name = e?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".json") {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }
}
