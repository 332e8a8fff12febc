use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use stratum_core::dataset::{read_dataset, write_dataset, Dataset, DatasetRecord};
use stratum_core::edit::{Edit, EditSession, Provenance};
use stratum_core::{Error, InstanceId, Result};

pub type SharedSession = Arc<Mutex<EditSession>>;

const SESSION_FILE: &str = "session.json";
const BASE_DIR: &str = "base";

/// Everything but the base scene, which is stored as a one-scene dataset.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionFile {
    overlap_threshold: u64,
    provenance: BTreeMap<InstanceId, Provenance>,
    log: Vec<Edit>,
}

/// In-memory sessions, optionally mirrored to one directory per session.
#[derive(Debug)]
pub struct SessionStore {
    sessions: RwLock<BTreeMap<String, SharedSession>>,
    next: AtomicU64,
    data_dir: Option<PathBuf>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self {
            sessions: RwLock::new(BTreeMap::new()),
            next: AtomicU64::new(1),
            data_dir: None,
        }
    }

    /// Opens `dir`, loading any sessions saved there earlier.
    pub fn persistent(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut sessions = BTreeMap::new();
        let mut max_id = 0;
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_owned) else {
                continue;
            };
            let Ok(n) = name.parse::<u64>() else {
                continue;
            };
            if !path.join(SESSION_FILE).is_file() {
                continue;
            }
            sessions.insert(name, Arc::new(Mutex::new(load_session(&path)?)));
            max_id = max_id.max(n);
        }
        Ok(Self {
            sessions: RwLock::new(sessions),
            next: AtomicU64::new(max_id + 1),
            data_dir: Some(dir),
        })
    }

    pub fn insert(&self, session: EditSession) -> Result<String> {
        let id = format!("{:06}", self.next.fetch_add(1, Ordering::SeqCst));
        self.persist(&id, &session)?;
        self.sessions
            .write()
            .expect("session map lock poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Option<SharedSession> {
        self.sessions.read().expect("session map lock poisoned").get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.read().expect("session map lock poisoned").keys().cloned().collect()
    }

    /// Writes the session to disk when the store is persistent. The base
    /// scene is written only once.
    pub fn persist(&self, id: &str, session: &EditSession) -> Result<()> {
        let Some(root) = &self.data_dir else {
            return Ok(());
        };
        let dir = root.join(id);
        let base = dir.join(BASE_DIR);
        if !base.exists() {
            let record = DatasetRecord::from_scene(0, session.base(), session.overlap_threshold());
            write_dataset(
                &Dataset {
                    overlap_threshold: session.overlap_threshold(),
                    records: vec![record],
                },
                &base,
            )?;
        }
        let file = SessionFile {
            overlap_threshold: session.overlap_threshold(),
            provenance: session.provenance_map().clone(),
            log: session.log().to_vec(),
        };
        // write then rename so a crash never leaves a truncated log
        let tmp = dir.join(format!("{SESSION_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_vec_pretty(&file)?)?;
        std::fs::rename(tmp, dir.join(SESSION_FILE))?;
        Ok(())
    }
}

fn load_session(dir: &Path) -> Result<EditSession> {
    let path = dir.join(SESSION_FILE);
    let file: SessionFile = serde_json::from_slice(&std::fs::read(&path)?).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })?;
    let dataset = read_dataset(dir.join(BASE_DIR))?;
    let [record] = <[DatasetRecord; 1]>::try_from(dataset.records)
        .map_err(|r| Error::InvalidScene(format!("{} holds {} scenes, expected 1", dir.display(), r.len())))?;
    EditSession::restore(record.to_scene()?, file.log, file.provenance, file.overlap_threshold)
        .map_err(|e| Error::InvalidEdit(format!("{}: {e}", dir.display())))
}
