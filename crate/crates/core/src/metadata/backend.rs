//! Key-value document backends with per-record version compare-and-swap.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use std::sync::{Mutex, RwLock};

pub type DocKey = [u8; 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Collection {
    Users,
    Groups,
}

impl Collection {
    fn tag(self) -> u8 {
        match self {
            Collection::Users => 1,
            Collection::Groups => 2,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            1 => Some(Collection::Users),
            2 => Some(Collection::Groups),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub version: u64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("version conflict")]
    Conflict,
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("backend i/o: {0}")]
    Io(String),
}

/// Storage for sealed documents. Implementations must make
/// `put_if_version` atomic with respect to concurrent callers.
pub trait DocumentBackend: Send + Sync {
    fn get(&self, collection: Collection, key: &DocKey) -> Result<Option<Record>, BackendError>;

    /// `expected = None` inserts only if absent; `Some(v)` replaces only if the
    /// stored version is `v`.
    fn put_if_version(
        &self,
        collection: Collection,
        key: &DocKey,
        record: Record,
        expected: Option<u64>,
    ) -> Result<(), BackendError>;

    fn delete(&self, collection: Collection, key: &DocKey) -> Result<bool, BackendError>;

    fn scan(&self) -> Result<Vec<(Collection, DocKey, Record)>, BackendError>;

    /// Everything the storage provider holds, as bytes.
    fn snapshot(&self) -> Result<Vec<u8>, BackendError>;
}

type Map = BTreeMap<(Collection, DocKey), Record>;

const TOMBSTONE: u32 = u32::MAX;

fn encode_entry(out: &mut Vec<u8>, c: Collection, key: &DocKey, record: Option<&Record>) {
    out.push(c.tag());
    out.extend_from_slice(key);
    match record {
        Some(r) => {
            out.extend_from_slice(&r.version.to_be_bytes());
            out.extend_from_slice(&(r.bytes.len() as u32).to_be_bytes());
            out.extend_from_slice(&r.bytes);
        }
        None => {
            out.extend_from_slice(&0u64.to_be_bytes());
            out.extend_from_slice(&TOMBSTONE.to_be_bytes());
        }
    }
}

/// Replays a sequence of entries (snapshot or append log).
fn replay(mut bytes: &[u8]) -> Result<Map, BackendError> {
    let corrupt = |m: &str| BackendError::Corrupt(m.to_owned());
    let mut map = Map::new();
    while !bytes.is_empty() {
        if bytes.len() < 1 + 32 + 8 + 4 {
            return Err(corrupt("truncated entry header"));
        }
        let c = Collection::from_tag(bytes[0]).ok_or_else(|| corrupt("unknown collection"))?;
        let key: DocKey = bytes[1..33].try_into().unwrap();
        let version = u64::from_be_bytes(bytes[33..41].try_into().unwrap());
        let len = u32::from_be_bytes(bytes[41..45].try_into().unwrap());
        bytes = &bytes[45..];
        if len == TOMBSTONE {
            map.remove(&(c, key));
            continue;
        }
        let len = len as usize;
        if bytes.len() < len {
            return Err(corrupt("truncated entry body"));
        }
        map.insert((c, key), Record { version, bytes: bytes[..len].to_vec() });
        bytes = &bytes[len..];
    }
    Ok(map)
}

fn check_cas(map: &Map, c: Collection, key: &DocKey, expected: Option<u64>) -> Result<(), BackendError> {
    match (map.get(&(c, *key)), expected) {
        (None, None) => Ok(()),
        (Some(r), Some(v)) if r.version == v => Ok(()),
        _ => Err(BackendError::Conflict),
    }
}

#[derive(Default)]
pub struct MemoryBackend {
    map: RwLock<Map>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<Self, BackendError> {
        Ok(Self { map: RwLock::new(replay(bytes)?) })
    }
}

impl DocumentBackend for MemoryBackend {
    fn get(&self, c: Collection, key: &DocKey) -> Result<Option<Record>, BackendError> {
        Ok(self.map.read().unwrap().get(&(c, *key)).cloned())
    }

    fn put_if_version(
        &self,
        c: Collection,
        key: &DocKey,
        record: Record,
        expected: Option<u64>,
    ) -> Result<(), BackendError> {
        let mut map = self.map.write().unwrap();
        check_cas(&map, c, key, expected)?;
        map.insert((c, *key), record);
        Ok(())
    }

    fn delete(&self, c: Collection, key: &DocKey) -> Result<bool, BackendError> {
        Ok(self.map.write().unwrap().remove(&(c, *key)).is_some())
    }

    fn scan(&self) -> Result<Vec<(Collection, DocKey, Record)>, BackendError> {
        Ok(self
            .map
            .read()
            .unwrap()
            .iter()
            .map(|((c, k), r)| (*c, *k, r.clone()))
            .collect())
    }

    fn snapshot(&self) -> Result<Vec<u8>, BackendError> {
        let mut out = Vec::new();
        for ((c, k), r) in self.map.read().unwrap().iter() {
            encode_entry(&mut out, *c, k, Some(r));
        }
        Ok(out)
    }
}

/// Append-only log file with an in-memory index, replayed on open.
pub struct FileBackend {
    path: PathBuf,
    state: Mutex<(Map, File)>,
}

impl FileBackend {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let io = |e: std::io::Error| BackendError::Io(e.to_string());
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;
        let map = replay(&bytes)?;
        Ok(Self { path, state: Mutex::new((map, file)) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(file: &mut File, c: Collection, key: &DocKey, r: Option<&Record>) -> Result<(), BackendError> {
        let mut buf = Vec::new();
        encode_entry(&mut buf, c, key, r);
        file.write_all(&buf)
            .and_then(|_| file.flush())
            .map_err(|e| BackendError::Io(e.to_string()))
    }
}

impl DocumentBackend for FileBackend {
    fn get(&self, c: Collection, key: &DocKey) -> Result<Option<Record>, BackendError> {
        Ok(self.state.lock().unwrap().0.get(&(c, *key)).cloned())
    }

    fn put_if_version(
        &self,
        c: Collection,
        key: &DocKey,
        record: Record,
        expected: Option<u64>,
    ) -> Result<(), BackendError> {
        let mut guard = self.state.lock().unwrap();
        let (map, file) = &mut *guard;
        check_cas(map, c, key, expected)?;
        Self::append(file, c, key, Some(&record))?;
        map.insert((c, *key), record);
        Ok(())
    }

    fn delete(&self, c: Collection, key: &DocKey) -> Result<bool, BackendError> {
        let mut guard = self.state.lock().unwrap();
        let (map, file) = &mut *guard;
        if map.remove(&(c, *key)).is_none() {
            return Ok(false);
        }
        Self::append(file, c, key, None)?;
        Ok(true)
    }

    fn scan(&self) -> Result<Vec<(Collection, DocKey, Record)>, BackendError> {
        Ok(self
            .state
            .lock()
            .unwrap()
            .0
            .iter()
            .map(|((c, k), r)| (*c, *k, r.clone()))
            .collect())
    }

    fn snapshot(&self) -> Result<Vec<u8>, BackendError> {
        std::fs::read(&self.path).map_err(|e| BackendError::Io(e.to_string()))
    }
}
