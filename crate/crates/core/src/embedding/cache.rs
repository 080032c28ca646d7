use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::RwLock;

use super::{BackendDescriptor, EmbeddingBackend, EmbeddingVector};
use crate::error::Result;
use crate::frames::{FrameRef, ImageRef};
use crate::seed::hash_bytes;

type Key = [u8; 32];

/// Memoizes embeddings by (model label, kind, content hash), optionally
/// mirroring them to a directory so later runs can reuse them.
pub struct CachedBackend<B> {
    inner: B,
    label: String,
    memory: RwLock<HashMap<Key, EmbeddingVector>>,
    dir: Option<PathBuf>,
}

impl<B: EmbeddingBackend> CachedBackend<B> {
    pub fn new(inner: B) -> Self {
        let label = inner.descriptor().model_label;
        Self {
            inner,
            label,
            memory: RwLock::new(HashMap::new()),
            dir: None,
        }
    }

    pub fn with_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.dir = Some(dir.into());
        self
    }

    pub fn len(&self) -> usize {
        self.memory.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn key(&self, kind: &str, content: &[u8]) -> Key {
        let mut buf = Vec::with_capacity(self.label.len() + kind.len() + content.len() + 2);
        buf.extend_from_slice(self.label.as_bytes());
        buf.push(0);
        buf.extend_from_slice(kind.as_bytes());
        buf.push(0);
        buf.extend_from_slice(content);
        hash_bytes(&buf)
    }

    fn disk_path(&self, key: &Key) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{}.json", hex(key))))
    }

    fn lookup(&self, key: &Key) -> Option<EmbeddingVector> {
        if let Some(v) = self.memory.read().expect("cache lock").get(key) {
            return Some(v.clone());
        }
        let path = self.disk_path(key)?;
        let text = fs::read_to_string(path).ok()?;
        let v: EmbeddingVector = serde_json::from_str(&text).ok()?;
        self.memory.write().expect("cache lock").insert(*key, v.clone());
        Some(v)
    }

    fn store(&self, key: Key, v: &EmbeddingVector) {
        if let Some(path) = self.disk_path(&key) {
            // Disk mirroring is best effort; the in-memory entry is authoritative.
            if let Some(parent) = path.parent() {
                let _ = fs::create_dir_all(parent);
            }
            let _ = fs::write(&path, serde_json::to_string(v).expect("vector serializes"));
        }
        self.memory.write().expect("cache lock").insert(key, v.clone());
    }

    fn resolve<T: Clone>(
        &self,
        keys: Vec<Key>,
        items: &[T],
        fetch: impl FnOnce(&[T]) -> Result<Vec<EmbeddingVector>>,
    ) -> Result<Vec<EmbeddingVector>> {
        let mut out: Vec<Option<EmbeddingVector>> = keys.iter().map(|k| self.lookup(k)).collect();
        let missing: Vec<usize> = (0..items.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<T> = missing.iter().map(|&i| items[i].clone()).collect();
            let fetched = fetch(&batch)?;
            for (&i, v) in missing.iter().zip(fetched) {
                self.store(keys[i], &v);
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn image_content(frame: &FrameRef) -> Vec<u8> {
    match &frame.image {
        ImageRef::Path(p) => match fs::read(p) {
            Ok(bytes) => bytes,
            // Synthetic or unreadable references are keyed by name; the inner
            // backend reports unreadable files itself.
            Err(_) => format!("path:{p}").into_bytes(),
        },
        ImageRef::Inline { b64, .. } => b64.as_bytes().to_vec(),
    }
}

impl<B: EmbeddingBackend> EmbeddingBackend for CachedBackend<B> {
    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return self.inner.embed_texts(texts);
        }
        let keys = texts.iter().map(|t| self.key("text", t.as_bytes())).collect();
        self.resolve(keys, texts, |batch| self.inner.embed_texts(batch))
    }

    fn embed_images(&self, frames: &[FrameRef]) -> Result<Vec<EmbeddingVector>> {
        if frames.is_empty() {
            return self.inner.embed_images(frames);
        }
        let keys = frames.iter().map(|f| self.key("image", &image_content(f))).collect();
        self.resolve(keys, frames, |batch| self.inner.embed_images(batch))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::*;
    use crate::embedding::{synthetic_planted_world, SyntheticBackend};

    struct Counting<B> {
        inner: B,
        calls: AtomicUsize,
        items: AtomicUsize,
    }

    impl<B: EmbeddingBackend> EmbeddingBackend for Counting<B> {
        fn descriptor(&self) -> BackendDescriptor {
            self.inner.descriptor()
        }
        fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.items.fetch_add(texts.len(), Ordering::SeqCst);
            self.inner.embed_texts(texts)
        }
        fn embed_images(&self, frames: &[FrameRef]) -> Result<Vec<EmbeddingVector>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.items.fetch_add(frames.len(), Ordering::SeqCst);
            self.inner.embed_images(frames)
        }
    }

    fn backend() -> CachedBackend<Counting<SyntheticBackend>> {
        let world = synthetic_planted_world("w", 3, 1, 0.5, 0.1);
        CachedBackend::new(Counting {
            inner: SyntheticBackend::new(vec![world]),
            calls: AtomicUsize::new(0),
            items: AtomicUsize::new(0),
        })
    }

    #[test]
    fn only_misses_reach_the_backend() {
        let b = backend();
        let texts: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let first = b.embed_texts(&texts).unwrap();
        let more: Vec<String> = ["b", "c", "a"].iter().map(|s| s.to_string()).collect();
        let second = b.embed_texts(&more).unwrap();
        assert_eq!(second[0], first[1]);
        assert_eq!(second[2], first[0]);
        assert_eq!(b.inner().items.load(Ordering::SeqCst), 3);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn disk_mirror_is_reused() {
        let dir = tempfile::tempdir().unwrap();
        let texts = vec!["chop".to_string()];
        let v1 = backend().with_dir(dir.path()).embed_texts(&texts).unwrap();
        let b2 = backend().with_dir(dir.path());
        let v2 = b2.embed_texts(&texts).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(b2.inner().calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn concurrent_use_matches_serial_results() {
        let b = Arc::new(backend());
        let texts: Vec<String> = (0..20).map(|i| format!("text {i}")).collect();
        let serial = backend().embed_texts(&texts).unwrap();
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let b = Arc::clone(&b);
                let texts = texts.clone();
                std::thread::spawn(move || b.embed_texts(&texts).unwrap())
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), serial);
        }
    }
}
