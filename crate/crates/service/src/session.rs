use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemKind {
    Latents,
    Masks,
    Directions,
}

impl std::str::FromStr for ItemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "latents" => Ok(Self::Latents),
            "masks" => Ok(Self::Masks),
            "directions" => Ok(Self::Directions),
            _ => Err(format!(
                "unknown session item kind {s:?}; expected latents, masks or directions"
            )),
        }
    }
}

/// Named artifacts saved by one UI client.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub latents: BTreeMap<String, serde_json::Value>,
    pub masks: BTreeMap<String, serde_json::Value>,
    pub directions: BTreeMap<String, serde_json::Value>,
}

struct Entry {
    last_used: u64,
    session: Session,
}

struct Inner {
    clock: u64,
    entries: HashMap<String, Entry>,
}

/// Capacity-bounded LRU of sessions. Reads hand out copies, so eviction
/// never affects a request that already holds one.
pub struct SessionStore {
    capacity: usize,
    inner: Mutex<Inner>,
}

impl SessionStore {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "session store needs room for one session");
        Self {
            capacity,
            inner: Mutex::new(Inner {
                clock: 0,
                entries: HashMap::new(),
            }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Opens an empty session under a fresh opaque id, evicting the least
    /// recently used one when full.
    pub fn create(&self) -> String {
        let mut inner = self.lock();
        let id = loop {
            let id = format!("{:032x}", rand::random::<u128>());
            if !inner.entries.contains_key(&id) {
                break id;
            }
        };
        if inner.entries.len() >= self.capacity {
            if let Some(oldest) = inner
                .entries
                .iter()
                .min_by_key(|(_, e)| e.last_used)
                .map(|(k, _)| k.clone())
            {
                inner.entries.remove(&oldest);
            }
        }
        inner.clock += 1;
        let last_used = inner.clock;
        inner.entries.insert(
            id.clone(),
            Entry {
                last_used,
                session: Session::default(),
            },
        );
        id
    }

    pub fn get(&self, id: &str) -> Option<Session> {
        let mut inner = self.lock();
        inner.clock += 1;
        let now = inner.clock;
        inner.entries.get_mut(id).map(|e| {
            e.last_used = now;
            e.session.clone()
        })
    }

    pub fn put(
        &self,
        id: &str,
        kind: ItemKind,
        name: &str,
        value: serde_json::Value,
    ) -> Result<(), String> {
        let mut inner = self.lock();
        inner.clock += 1;
        let now = inner.clock;
        let entry = inner
            .entries
            .get_mut(id)
            .ok_or_else(|| format!("no session {id:?}"))?;
        entry.last_used = now;
        let slot = match kind {
            ItemKind::Latents => &mut entry.session.latents,
            ItemKind::Masks => &mut entry.session.masks,
            ItemKind::Directions => &mut entry.session.directions,
        };
        slot.insert(name.to_string(), value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn evicts_least_recently_used() {
        let store = SessionStore::new(2);
        let a = store.create();
        let b = store.create();
        assert!(store.get(&a).is_some());
        let c = store.create();
        assert_eq!(store.len(), 2);
        assert!(store.get(&b).is_none());
        assert!(store.get(&a).is_some() && store.get(&c).is_some());
    }

    #[test]
    fn copies_survive_eviction() {
        let store = SessionStore::new(1);
        let a = store.create();
        store
            .put(&a, ItemKind::Masks, "m", json!([true, false]))
            .unwrap();
        let held = store.get(&a).unwrap();
        store.create();
        assert!(store.get(&a).is_none());
        assert_eq!(held.masks["m"], json!([true, false]));
        assert!(store.put(&a, ItemKind::Latents, "w", json!([])).is_err());
    }

    #[test]
    fn ids_are_distinct_tokens() {
        let store = SessionStore::new(8);
        let ids: std::collections::HashSet<String> = (0..8).map(|_| store.create()).collect();
        assert_eq!(ids.len(), 8);
        assert!(ids.iter().all(|id| id.len() == 32));
        assert!("gallery".parse::<ItemKind>().is_err());
    }
}
