use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, TryLockError};

use super::{validate_id, ExperimentState, Snapshot};
use crate::{Error, Result};

/// Keyed collection of experiments.
///
/// Mutations of one experiment are serialized: a second mutator arriving
/// while one is in flight is rejected with [`Error::Busy`]. A mutation runs on
/// a working copy and is committed only if the closure succeeds.
pub trait Store: Send + Sync {
    /// Insert a new experiment; fails if the id is taken.
    fn create(&self, state: &ExperimentState) -> Result<()>;

    fn load(&self, id: &str) -> Result<ExperimentState>;

    fn mutate<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut ExperimentState) -> Result<T>,
    ) -> Result<T>;

    fn ids(&self) -> Result<Vec<String>>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    slots: Mutex<BTreeMap<String, Arc<Mutex<ExperimentState>>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<ExperimentState>>> {
        self.slots
            .lock()
            .expect("store map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::ExperimentNotFound(id.to_string()))
    }
}

impl Store for MemoryStore {
    fn create(&self, state: &ExperimentState) -> Result<()> {
        let mut slots = self.slots.lock().expect("store map poisoned");
        if slots.contains_key(state.id()) {
            return Err(Error::DuplicateExperiment(state.id().to_string()));
        }
        slots.insert(state.id().to_string(), Arc::new(Mutex::new(state.clone())));
        Ok(())
    }

    fn load(&self, id: &str) -> Result<ExperimentState> {
        let slot = self.slot(id)?;
        let guard = slot.lock().expect("experiment poisoned");
        Ok(guard.clone())
    }

    fn mutate<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut ExperimentState) -> Result<T>,
    ) -> Result<T> {
        let slot = self.slot(id)?;
        let mut guard = match slot.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(Error::Busy(id.to_string())),
            Err(TryLockError::Poisoned(_)) => panic!("experiment `{id}` poisoned"),
        };
        let mut work = guard.clone();
        let out = f(&mut work)?;
        *guard = work;
        Ok(out)
    }

    fn ids(&self) -> Result<Vec<String>> {
        Ok(self.slots.lock().expect("store map poisoned").keys().cloned().collect())
    }
}

/// One pretty-printed JSON snapshot per experiment in a directory.
///
/// Writers take an exclusive `<id>.lock` file for the duration of a
/// mutation and replace the snapshot by atomic rename.
#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn snapshot_path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.json"))
    }

    fn lock(&self, id: &str) -> Result<LockGuard> {
        let path = self.root.join(format!("{id}.lock"));
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard(path)),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::Busy(id.to_string())),
            Err(e) => Err(e.into()),
        }
    }

    fn write(&self, state: &ExperimentState) -> Result<()> {
        let path = self.snapshot_path(state.id());
        let tmp = path.with_extension("json.tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(state.snapshot().to_json().as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn read(&self, id: &str) -> Result<ExperimentState> {
        let path = self.snapshot_path(id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::NotFound => {
                return Err(Error::ExperimentNotFound(id.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        ExperimentState::restore(Snapshot::from_json(&text)?)
    }
}

struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

impl Store for FileStore {
    fn create(&self, state: &ExperimentState) -> Result<()> {
        validate_id(state.id())?;
        let _lock = self.lock(state.id())?;
        if self.snapshot_path(state.id()).exists() {
            return Err(Error::DuplicateExperiment(state.id().to_string()));
        }
        self.write(state)
    }

    fn load(&self, id: &str) -> Result<ExperimentState> {
        validate_id(id)?;
        self.read(id)
    }

    fn mutate<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut ExperimentState) -> Result<T>,
    ) -> Result<T> {
        validate_id(id)?;
        let _lock = self.lock(id)?;
        let mut state = self.read(id)?;
        let out = f(&mut state)?;
        self.write(&state)?;
        Ok(out)
    }

    fn ids(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let name = entry?.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".json")) {
                out.push(id.to_string());
            }
        }
        out.sort();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{create_experiment, ExperimentConfig};
    use crate::AllocationPolicy;

    fn fresh(id: &str) -> ExperimentState {
        create_experiment(ExperimentConfig::with_arms(id, 3, AllocationPolicy::ThompsonSampling), 5).unwrap()
    }

    fn exercise(store: &impl Store) {
        store.create(&fresh("e1")).unwrap();
        assert!(matches!(store.create(&fresh("e1")), Err(Error::DuplicateExperiment(_))));
        assert!(matches!(store.load("nope"), Err(Error::ExperimentNotFound(_))));

        let n = store
            .mutate("e1", |s| Ok(s.open_batch(&["a".into(), "b".into()])?.len()))
            .unwrap();
        assert_eq!(n, 2);
        let before = store.load("e1").unwrap();
        // A failing mutation commits nothing.
        assert!(store.mutate("e1", |s| s.open_batch(&["c".into()])).is_err());
        assert_eq!(store.load("e1").unwrap(), before);
        assert_eq!(store.ids().unwrap(), vec!["e1".to_string()]);
    }

    #[test]
    fn memory_store_contract() {
        exercise(&MemoryStore::new());
    }

    #[test]
    fn file_store_contract() {
        let dir = tempfile::tempdir().unwrap();
        exercise(&FileStore::open(dir.path()).unwrap());
    }

    #[test]
    fn memory_store_rejects_nested_mutation() {
        let store = MemoryStore::new();
        store.create(&fresh("e")).unwrap();
        let inner = store.mutate("e", |_| Ok(store.mutate("e", |_| Ok(()))));
        assert!(matches!(inner.unwrap(), Err(Error::Busy(_))));
    }

    #[test]
    fn file_store_rejects_concurrent_writer() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        store.create(&fresh("e")).unwrap();
        let inner = store.mutate("e", |_| Ok(store.mutate("e", |_| Ok(()))));
        assert!(matches!(inner.unwrap(), Err(Error::Busy(_))));
        // Lock released afterwards.
        store.mutate("e", |_| Ok(())).unwrap();
    }

    #[test]
    fn file_store_rejects_path_ids() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        assert!(store.load("../etc").is_err());
    }
}
