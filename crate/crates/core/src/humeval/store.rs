use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{AnnotationRecord, AnnotationSession, HumevalError, Submission};

pub const SESSION_FILE: &str = "session.json";
pub const ANNOTATION_LOG: &str = "annotations.jsonl";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("store {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("store {0} already holds a session")]
    Exists(PathBuf),
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Session(#[from] HumevalError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A campaign on disk: the session definition plus an append-only JSONL
/// log of resolved submissions. One writer at a time holds an OS file lock.
#[derive(Debug)]
pub struct CampaignStore {
    root: PathBuf,
    session: AnnotationSession,
    records: Vec<AnnotationRecord>,
    log: File,
    _lock: File,
}

fn acquire_lock(root: &Path) -> Result<File, StoreError> {
    let path = root.join(LOCK_FILE);
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&path)
        .map_err(io_err(&path))?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(fs::TryLockError::WouldBlock) => Err(StoreError::Locked(root.to_path_buf())),
        Err(fs::TryLockError::Error(e)) => Err(io_err(&path)(e)),
    }
}

fn read_session(root: &Path) -> Result<AnnotationSession, StoreError> {
    let path = root.join(SESSION_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let session: AnnotationSession = serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    session.validate()?;
    Ok(session)
}

/// Replays the log into `session`. Only newline-terminated lines count; an
/// unterminated tail is a torn write and is ignored. Returns the records and
/// the byte length of the intact prefix.
fn replay(path: &Path, session: &mut AnnotationSession) -> Result<(Vec<AnnotationRecord>, u64), StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut intact = 0u64;
    let mut buf = Vec::new();
    for line_no in 1.. {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(io_err(path))?;
        if n == 0 || buf.last() != Some(&b'\n') {
            break;
        }
        let corrupt = |message: String| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let record: AnnotationRecord = serde_json::from_slice(&buf).map_err(|e| corrupt(e.to_string()))?;
        session.apply(&record).map_err(|e| corrupt(e.to_string()))?;
        records.push(record);
        intact += n as u64;
    }
    Ok((records, intact))
}

impl CampaignStore {
    /// Creates a new store at `root` holding `session`.
    pub fn create(root: impl AsRef<Path>, session: &AnnotationSession) -> Result<Self, StoreError> {
        let root = root.as_ref();
        session.validate()?;
        fs::create_dir_all(root).map_err(io_err(root))?;
        let lock = acquire_lock(root)?;
        let path = root.join(SESSION_FILE);
        if path.exists() {
            return Err(StoreError::Exists(root.to_path_buf()));
        }
        let tmp = root.join(format!("{SESSION_FILE}.tmp"));
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            serde_json::to_writer_pretty(&mut f, session).expect("session serializes");
            f.write_all(b"\n").map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        let log_path = root.join(ANNOTATION_LOG);
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        let mut fresh = session.clone();
        fresh.done.clear();
        let (records, _) = replay(&log_path, &mut fresh)?;
        Ok(CampaignStore {
            root: root.to_path_buf(),
            session: fresh,
            records,
            log,
            _lock: lock,
        })
    }

    /// Opens an existing store for writing, replaying the log. A torn last
    /// line is truncated away.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref();
        let lock = acquire_lock(root)?;
        let mut session = read_session(root)?;
        let log_path = root.join(ANNOTATION_LOG);
        let (records, intact) = replay(&log_path, &mut session)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        if log.metadata().map_err(io_err(&log_path))?.len() > intact {
            log.set_len(intact).map_err(io_err(&log_path))?;
            log.sync_all().map_err(io_err(&log_path))?;
        }
        Ok(CampaignStore {
            root: root.to_path_buf(),
            session,
            records,
            log,
            _lock: lock,
        })
    }

    /// Reads the current state without taking the writer lock.
    pub fn snapshot(root: impl AsRef<Path>) -> Result<(AnnotationSession, Vec<AnnotationRecord>), StoreError> {
        let root = root.as_ref();
        let mut session = read_session(root)?;
        let (records, _) = replay(&root.join(ANNOTATION_LOG), &mut session)?;
        Ok((session, records))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session(&self) -> &AnnotationSession {
        &self.session
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    /// Validates, persists and applies a batch of submissions. Nothing is
    /// applied when validation fails; the log is synced before returning.
    pub fn submit(&mut self, annotator: &str, subs: &[Submission]) -> Result<Vec<AnnotationRecord>, StoreError> {
        let mut next = self.session.clone();
        let records = next.submit_batch(annotator, subs)?;
        let mut buf = Vec::new();
        for r in &records {
            serde_json::to_writer(&mut buf, r).expect("record serializes");
            buf.push(b'\n');
        }
        let path = self.root.join(ANNOTATION_LOG);
        self.log.write_all(&buf).map_err(io_err(&path))?;
        self.log.sync_data().map_err(io_err(&path))?;
        self.session = next;
        self.records.extend(records.iter().cloned());
        Ok(records)
    }

    /// Appends already-resolved records, e.g. from an imported dataset.
    pub fn append_records(&mut self, records: &[AnnotationRecord]) -> Result<(), StoreError> {
        let mut next = self.session.clone();
        let mut buf = Vec::new();
        for r in records {
            next.apply(r)?;
            serde_json::to_writer(&mut buf, r).expect("record serializes");
            buf.push(b'\n');
        }
        let path = self.root.join(ANNOTATION_LOG);
        self.log.write_all(&buf).map_err(io_err(&path))?;
        self.log.sync_data().map_err(io_err(&path))?;
        self.session = next;
        self.records.extend_from_slice(records);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        let path = self.root.join(ANNOTATION_LOG);
        self.log.flush().map_err(io_err(&path))?;
        self.log.sync_all().map_err(io_err(&path))
    }
}

#[cfg(test)]
mod tests {
    use super::super::create_session;
    use super::super::{NextTask, Segment};
    use super::*;

    fn session() -> AnnotationSession {
        let segments = (1..=3)
            .map(|id| Segment {
                id,
                source: format!("s{id}"),
                reference: format!("r{id}"),
                outputs: [("x".to_string(), "out x".to_string()), ("y".to_string(), "out y".to_string())]
                    .into_iter()
                    .collect(),
            })
            .collect();
        create_session(segments, vec!["x".into(), "y".into()], vec!["a".into()], 5).unwrap()
    }

    fn sub(segment: u64, slot: &str) -> Submission {
        Submission {
            segment,
            slot: slot.into(),
            rating: 4,
            errors: vec![],
        }
    }

    #[test]
    fn persist_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = CampaignStore::create(dir.path(), &session()).unwrap();
            assert!(matches!(CampaignStore::open(dir.path()), Err(StoreError::Locked(_))));
            store.submit("a", &[sub(1, "A"), sub(1, "B")]).unwrap();
            assert!(store.submit("a", &[sub(1, "A")]).is_err());
            assert_eq!(store.records().len(), 2);
        }
        let store = CampaignStore::open(dir.path()).unwrap();
        assert_eq!(store.session().done_units(), 2);
        let NextTask::Task(t) = store.session().next_task("a").unwrap() else { panic!() };
        assert_eq!(t.segment, 2);
        assert!(matches!(CampaignStore::create(dir.path(), &session()), Err(StoreError::Locked(_))));
        drop(store);
        assert!(matches!(CampaignStore::create(dir.path(), &session()), Err(StoreError::Exists(_))));
    }

    #[test]
    fn torn_tail_is_dropped_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = CampaignStore::create(dir.path(), &session()).unwrap();
            store.submit("a", &[sub(1, "A")]).unwrap();
        }
        let log = dir.path().join(ANNOTATION_LOG);
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(b"{\"annotator\":\"a\",\"segm").unwrap();
        drop(f);
        let (s, recs) = CampaignStore::snapshot(dir.path()).unwrap();
        assert_eq!((s.done_units(), recs.len()), (1, 1));
        let mut store = CampaignStore::open(dir.path()).unwrap();
        store.submit("a", &[sub(2, "A")]).unwrap();
        drop(store);
        let text = fs::read_to_string(&log).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().all(|l| serde_json::from_str::<AnnotationRecord>(l).is_ok()));
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        drop(CampaignStore::create(dir.path(), &session()).unwrap());
        fs::write(dir.path().join(ANNOTATION_LOG), "not json\n").unwrap();
        assert!(matches!(CampaignStore::open(dir.path()), Err(StoreError::Corrupt { line: 1, .. })));
    }
}
