//! On-disk embedding spaces, keyed by document hash, provider and
//! parameters.

use std::path::{Path, PathBuf};

use formprobe_core::dom::{serialize, DomTree};
use formprobe_core::embed::{EmbeddingSpace, Node2VecParams};
use formprobe_core::text::hex;
use sha2::{Digest, Sha256};

use crate::io::{read_json, write_json, IoError};

pub struct SpaceCache {
    dir: PathBuf,
}

impl SpaceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        SpaceCache { dir: dir.into() }
    }

    pub fn key(tree: &DomTree, provider_id: &str, params: &Node2VecParams) -> String {
        let mut h = Sha256::new();
        h.update(serialize(tree).as_bytes());
        h.update([0]);
        h.update(provider_id.as_bytes());
        h.update([0]);
        h.update(serde_json::to_string(params).expect("params serialize").as_bytes());
        hex(&h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.space.json"))
    }

    pub fn get(&self, key: &str) -> Option<EmbeddingSpace> {
        let p = self.path(key);
        // An unreadable entry is a miss; it is rewritten on the next put.
        p.exists().then(|| read_json(&p).ok()).flatten()
    }

    pub fn put(&self, key: &str, space: &EmbeddingSpace) -> Result<(), IoError> {
        write_json(&self.path(key), space)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use formprobe_core::dom::{extract_form_model, parse_document};
    use formprobe_core::embed::{build_embedding_space, NgramProvider};

    #[test]
    fn stored_space_is_returned_for_the_same_key_only() {
        let tree = parse_document("<form><label>Name</label><input name=\"name\"></form>").unwrap();
        let model = extract_form_model(&tree, None).unwrap();
        let params = Node2VecParams { dims: 8, epochs: 1, ..Default::default() };
        let space = build_embedding_space(&model, &tree, &NgramProvider::new(32), &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cache = SpaceCache::new(dir.path());
        let key = SpaceCache::key(&tree, "ngram-32", &params);
        assert!(cache.get(&key).is_none());
        cache.put(&key, &space).unwrap();
        assert_eq!(cache.get(&key), Some(space));
        let other = Node2VecParams { rng_seed: 7, ..params };
        assert_ne!(SpaceCache::key(&tree, "ngram-32", &other), key);
    }
}
