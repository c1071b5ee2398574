//! Disk format shared by the completion cache, run recordings and the
//! replay backend: one `{hash}.json` file per prompt, holding the prompt
//! and the backend's text.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::GatewayError;
use crate::gateway::{ChatPrompt, CompletionBackend, Message, PromptParams};

/// On-disk record of one completion: the three prompt messages, the
/// sampling parameters and the backend's reply.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredCompletion {
    pub prompt: Vec<Message>,
    pub params: PromptParams,
    pub text: String,
}

impl StoredCompletion {
    pub fn new(prompt: &ChatPrompt, text: String) -> Self {
        StoredCompletion {
            prompt: prompt.messages.clone(),
            params: prompt.params.clone(),
            text,
        }
    }
}

/// Directory of stored completions with an in-memory read-through layer.
/// Safe for concurrent use; writes go through a temp file and rename.
pub struct PromptStore {
    dir: PathBuf,
    loaded: Mutex<HashMap<String, String>>,
}

impl PromptStore {
    pub fn open(dir: &Path) -> Result<Self, GatewayError> {
        std::fs::create_dir_all(dir).map_err(|e| GatewayError::Transport {
            attempts: 1,
            reason: format!("cannot create store dir {}: {e}", dir.display()),
        })?;
        Ok(PromptStore {
            dir: dir.to_path_buf(),
            loaded: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Returns the stored completion text for `key`, if recorded.
    pub fn load(&self, key: &str) -> Result<Option<String>, GatewayError> {
        if let Some(text) = self.loaded.lock().unwrap().get(key) {
            return Ok(Some(text.clone()));
        }
        let path = self.path_for(key);
        let raw = match std::fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => {
                return Err(GatewayError::Transport {
                    attempts: 1,
                    reason: format!("cannot read {}: {e}", path.display()),
                })
            }
        };
        let entry: StoredCompletion = serde_json::from_str(&raw).map_err(|e| {
            GatewayError::BadResponse(format!("corrupt recording {}: {e}", path.display()))
        })?;
        self.loaded
            .lock()
            .unwrap()
            .insert(key.to_string(), entry.text.clone());
        Ok(Some(entry.text))
    }

    pub fn store(&self, key: &str, entry: &StoredCompletion) -> Result<(), GatewayError> {
        let path = self.path_for(key);
        let tmp = self.dir.join(format!(".{key}.tmp"));
        let body = serde_json::to_string_pretty(entry).expect("entry serializes");
        let write = std::fs::write(&tmp, body).and_then(|_| std::fs::rename(&tmp, &path));
        write.map_err(|e| GatewayError::Transport {
            attempts: 1,
            reason: format!("cannot write {}: {e}", path.display()),
        })?;
        self.loaded
            .lock()
            .unwrap()
            .insert(key.to_string(), entry.text.clone());
        Ok(())
    }
}

/// Backend that only answers prompts present in a recording directory.
/// Together with a fixed task and config this makes a build a pure
/// function of its inputs.
pub struct ReplayBackend {
    store: PromptStore,
}

impl ReplayBackend {
    pub fn open(dir: &Path) -> Result<Self, GatewayError> {
        Ok(ReplayBackend {
            store: PromptStore::open(dir)?,
        })
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete_raw(&self, prompt: &ChatPrompt) -> Result<String, GatewayError> {
        let key = prompt.cache_key();
        match self.store.load(&key)? {
            Some(text) => Ok(text),
            None => Err(GatewayError::ReplayMiss { key }),
        }
    }

    fn name(&self) -> &'static str {
        "replay"
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}
