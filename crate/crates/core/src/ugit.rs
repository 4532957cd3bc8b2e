//! A small Git-like version control tool on top of the store.
//!
//! Each object kind lives under its own key (`{repo}/blob`, `{repo}/tree`,
//! `{repo}/commit`, `{repo}/tag`). Blobs and trees are written with parent
//! ROOT, so identical contents map to one record and their versions can be
//! computed before writing. Commits chain through real parent links, which
//! is what makes `log` a scan and `merge` a merge record.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::client::Client;
use crate::error::{Error, Result};
use crate::store::ScanTerminator;
use crate::version::{derive_put_version, VersionId};
use crate::view::closest_common_ancestor;
use crate::view::DagReader;
use crate::wire::{Reader, Writer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EntryKind {
    File = 0,
    Dir = 1,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeEntry {
    pub name: String,
    pub kind: EntryKind,
    pub version: VersionId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommitBody {
    pub message: String,
    pub author: String,
    pub tree: VersionId,
    pub timestamp: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CommitSummary {
    pub version: String,
    pub depth: u64,
    pub message: String,
    pub author: String,
    pub timestamp: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RepoCounters {
    pub objects_written: u64,
    pub objects_skipped: u64,
    pub objects_fetched: u64,
    pub scan_calls: u64,
}

pub fn encode_tree(entries: &[TreeEntry]) -> Vec<u8> {
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let mut w = Writer::new();
    w.u32(sorted.len() as u32);
    for e in &sorted {
        w.bytes(e.name.as_bytes())
            .u8(e.kind as u8)
            .version(&e.version);
    }
    w.finish()
}

pub fn decode_tree(bytes: &[u8]) -> Result<Vec<TreeEntry>> {
    let mut r = Reader::new(bytes);
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let name = r.string()?;
        let kind = match r.u8()? {
            0 => EntryKind::File,
            1 => EntryKind::Dir,
            b => return Err(Error::Malformed(format!("bad tree entry kind {b}"))),
        };
        out.push(TreeEntry {
            name,
            kind,
            version: r.version()?,
        });
    }
    r.finish()?;
    Ok(out)
}

pub fn encode_commit(c: &CommitBody) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(c.message.as_bytes())
        .bytes(c.author.as_bytes())
        .version(&c.tree)
        .u64(c.timestamp);
    w.finish()
}

pub fn decode_commit(bytes: &[u8]) -> Result<CommitBody> {
    let mut r = Reader::new(bytes);
    let c = CommitBody {
        message: r.string()?,
        author: r.string()?,
        tree: r.version()?,
        timestamp: r.u64()?,
    };
    r.finish()?;
    Ok(c)
}

pub struct Repo<'a> {
    client: Client<'a>,
    name: String,
    counters: Cell<RepoCounters>,
}

impl<'a> Repo<'a> {
    /// Opens repository `name`. Full regions are grown rather than
    /// spilled, so content-addressed objects stay under a predictable tag.
    pub fn open(client: Client<'a>, name: &str) -> Self {
        Repo {
            client: client.grow_on_redirect(true),
            name: name.to_string(),
            counters: Cell::new(RepoCounters::default()),
        }
    }

    pub fn client(&self) -> &Client<'a> {
        &self.client
    }

    pub fn counters(&self) -> RepoCounters {
        self.counters.get()
    }

    pub fn reset_counters(&self) {
        self.counters.set(RepoCounters::default());
    }

    fn bump(&self, f: impl FnOnce(&mut RepoCounters)) {
        let mut c = self.counters.get();
        f(&mut c);
        self.counters.set(c);
    }

    pub fn key(&self, kind: &str) -> Vec<u8> {
        format!("{}/{kind}", self.name).into_bytes()
    }

    fn fetch(&self, kind: &str, v: &VersionId) -> Result<Vec<u8>> {
        self.bump(|c| c.objects_fetched += 1);
        self.client.get(&self.key(kind), v)
    }

    /// Writes a content-addressed object unless it already exists.
    fn put_content(&self, kind: &str, bytes: &[u8]) -> Result<VersionId> {
        let key = self.key(kind);
        let v = derive_put_version(&key, &VersionId::ROOT, bytes, b"");
        match self.client.get(&key, &v) {
            Ok(_) => {
                self.bump(|c| c.objects_skipped += 1);
                Ok(v)
            }
            Err(Error::NotFoundEverywhere) => {
                self.bump(|c| c.objects_written += 1);
                self.client.put(&key, &VersionId::ROOT, bytes, false)
            }
            Err(e) => Err(e),
        }
    }

    fn write_dir(&self, dir: &Path) -> Result<VersionId> {
        let mut entries = Vec::new();
        let mut children: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        children.sort_by_key(|e| e.file_name());
        for child in children {
            let name = child
                .file_name()
                .into_string()
                .map_err(|n| Error::InvalidArgument(format!("non-UTF-8 file name {n:?}")))?;
            let ty = child.file_type()?;
            let (kind, version) = if ty.is_dir() {
                (EntryKind::Dir, self.write_dir(&child.path())?)
            } else if ty.is_file() {
                (
                    EntryKind::File,
                    self.put_content("blob", &fs::read(child.path())?)?,
                )
            } else {
                continue;
            };
            entries.push(TreeEntry {
                name,
                kind,
                version,
            });
        }
        self.put_content("tree", &encode_tree(&entries))
    }

    /// Snapshots `workdir` as a new commit on top of `parent` (ROOT for the
    /// first commit).
    pub fn commit(
        &self,
        workdir: &Path,
        message: &str,
        author: &str,
        parent: &VersionId,
        timestamp: u64,
    ) -> Result<VersionId> {
        let tree = self.write_dir(workdir)?;
        let body = CommitBody {
            message: message.to_string(),
            author: author.to_string(),
            tree,
            timestamp,
        };
        self.bump(|c| c.objects_written += 1);
        self.client
            .put(&self.key("commit"), parent, &encode_commit(&body), false)
    }

    pub fn read_commit(&self, v: &VersionId) -> Result<CommitBody> {
        if v.is_root() {
            return Err(Error::InvalidArgument("ROOT is not a commit".into()));
        }
        decode_commit(&self.fetch("commit", v)?)
    }

    pub fn read_tree(&self, v: &VersionId) -> Result<Vec<TreeEntry>> {
        decode_tree(&self.fetch("tree", v)?)
    }

    /// Materializes `commit` into `dest`, which must be missing or empty.
    /// Returns the number of files written.
    pub fn checkout(&self, commit: &VersionId, dest: &Path) -> Result<usize> {
        if dest.exists() && fs::read_dir(dest)?.next().is_some() {
            return Err(Error::InvalidArgument(format!(
                "destination {} is not empty",
                dest.display()
            )));
        }
        let c = self.read_commit(commit)?;
        fs::create_dir_all(dest)?;
        self.materialize(&c.tree, dest)
    }

    fn materialize(&self, tree: &VersionId, dir: &Path) -> Result<usize> {
        let mut files = 0;
        for e in self.read_tree(tree)? {
            if e.name.is_empty() || e.name == "." || e.name == ".." || e.name.contains('/') {
                return Err(Error::Malformed(format!("unsafe tree entry {:?}", e.name)));
            }
            let path = dir.join(&e.name);
            match e.kind {
                EntryKind::File => {
                    fs::write(&path, self.fetch("blob", &e.version)?)?;
                    files += 1;
                }
                EntryKind::Dir => {
                    fs::create_dir(&path)?;
                    files += self.materialize(&e.version, &path)?;
                }
            }
        }
        Ok(files)
    }

    fn summary(&self, v: &VersionId, body: &[u8]) -> Result<CommitSummary> {
        let c = decode_commit(body)?;
        Ok(CommitSummary {
            version: v.to_string(),
            depth: v.l,
            message: c.message,
            author: c.author,
            timestamp: c.timestamp,
        })
    }

    /// Up to `limit` commits starting at `head`, following first parents.
    /// Each scan batch ends at a merge commit; the walk then continues from
    /// that merge's first parent.
    pub fn log(&self, head: &VersionId, limit: usize) -> Result<Vec<CommitSummary>> {
        let key = self.key("commit");
        let mut out = Vec::new();
        if limit == 0 || head.is_root() {
            return Ok(out);
        }
        out.push(self.summary(head, &self.fetch("commit", head)?)?);
        let mut cur = head.clone();
        while out.len() < limit {
            self.bump(|c| c.scan_calls += 1);
            let (records, term) = self.client.get_k_previous(&key, &cur, limit - out.len())?;
            for r in &records {
                out.push(self.summary(&r.version, r.value().unwrap_or_default())?);
            }
            if term != ScanTerminator::HitMerge || out.len() >= limit {
                break;
            }
            let first_parent = match records.last() {
                Some(merge) => merge.parents[0].clone(),
                // `cur` itself is a merge
                None => match self.client.get_previous(&key, &cur)?.into_iter().next() {
                    Some((v, body)) => {
                        out.push(self.summary(&v, &body)?);
                        cur = v;
                        continue;
                    }
                    None => break,
                },
            };
            if first_parent.is_root() {
                break;
            }
            out.push(self.summary(&first_parent, &self.fetch("commit", &first_parent)?)?);
            cur = first_parent;
        }
        Ok(out)
    }

    fn flatten(
        &self,
        tree: &VersionId,
        prefix: &str,
        out: &mut BTreeMap<String, VersionId>,
    ) -> Result<()> {
        for e in self.read_tree(tree)? {
            let path = format!("{prefix}{}", e.name);
            match e.kind {
                EntryKind::File => {
                    out.insert(path, e.version);
                }
                EntryKind::Dir => self.flatten(&e.version, &format!("{path}/"), out)?,
            }
        }
        Ok(())
    }

    fn files_of(&self, commit: &VersionId) -> Result<BTreeMap<String, VersionId>> {
        let mut out = BTreeMap::new();
        if !commit.is_root() {
            let c = self.read_commit(commit)?;
            self.flatten(&c.tree, "", &mut out)?;
        }
        Ok(out)
    }

    fn write_flat(&self, files: &BTreeMap<String, VersionId>) -> Result<VersionId> {
        let mut entries = Vec::new();
        let mut dirs: BTreeMap<String, BTreeMap<String, VersionId>> = BTreeMap::new();
        for (path, v) in files {
            match path.split_once('/') {
                None => entries.push(TreeEntry {
                    name: path.clone(),
                    kind: EntryKind::File,
                    version: v.clone(),
                }),
                Some((dir, rest)) => {
                    dirs.entry(dir.to_string())
                        .or_default()
                        .insert(rest.to_string(), v.clone());
                }
            }
        }
        for (name, sub) in dirs {
            entries.push(TreeEntry {
                name,
                kind: EntryKind::Dir,
                version: self.write_flat(&sub)?,
            });
        }
        self.put_content("tree", &encode_tree(&entries))
    }

    /// Three-way merge of two commits, file by file against their closest
    /// common ancestor. A file changed on both sides is a conflict and
    /// nothing is written.
    pub fn merge(
        &self,
        a: &VersionId,
        b: &VersionId,
        message: &str,
        author: &str,
        timestamp: u64,
    ) -> Result<VersionId> {
        let key = self.key("commit");
        let base = closest_common_ancestor(a, b, &mut |v| self.client.parents(&key, v))?;
        let (fo, fa, fb) = (self.files_of(&base)?, self.files_of(a)?, self.files_of(b)?);
        let same = |x: Option<&VersionId>, y: Option<&VersionId>| match (x, y) {
            (Some(x), Some(y)) => x.same_content(y),
            (None, None) => true,
            _ => false,
        };
        let mut merged = BTreeMap::new();
        let mut conflicts = Vec::new();
        let paths: std::collections::BTreeSet<&String> =
            fo.keys().chain(fa.keys()).chain(fb.keys()).collect();
        for p in paths {
            let (o, x, y) = (fo.get(p), fa.get(p), fb.get(p));
            let pick = if same(x, y) || same(o, y) {
                x
            } else if same(o, x) {
                y
            } else {
                conflicts.push(p.clone());
                continue;
            };
            if let Some(v) = pick {
                merged.insert(p.clone(), v.clone());
            }
        }
        if !conflicts.is_empty() {
            return Err(Error::Conflict(conflicts.join(", ")));
        }
        let tree = self.write_flat(&merged)?;
        let body = CommitBody {
            message: message.to_string(),
            author: author.to_string(),
            tree,
            timestamp,
        };
        self.bump(|c| c.objects_written += 1);
        self.client.merge(&key, a, b, &encode_commit(&body), false)
    }

    /// Names a commit. Tags are content-addressed like blobs.
    pub fn tag(&self, name: &str, commit: &VersionId) -> Result<VersionId> {
        let mut w = Writer::new();
        w.bytes(name.as_bytes()).version(commit);
        self.put_content("tag", &w.finish())
    }
}

/// Every regular file under `root`, relative path to contents. Used to
/// compare directory trees.
pub fn snapshot_dir(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) -> Result<()> {
        for e in fs::read_dir(dir)? {
            let e = e?;
            let p = e.path();
            if e.file_type()?.is_dir() {
                walk(root, &p, out)?;
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p)?);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out)?;
    Ok(out)
}
