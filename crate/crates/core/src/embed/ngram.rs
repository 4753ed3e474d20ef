use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{EmbedError, EmbeddingVector, TextEmbedProvider};

/// Hashed character 3-gram term-frequency embedding.
///
/// Text is lowercased, every non-alphanumeric run becomes one space, and the
/// result is padded with a space on each side before 3-grams are taken.
#[derive(Clone, Debug)]
pub struct NgramProvider {
    dims: usize,
}

impl NgramProvider {
    pub fn new(dims: usize) -> Self {
        assert!(dims > 0, "ngram provider needs at least one dimension");
        NgramProvider { dims }
    }
}

impl Default for NgramProvider {
    fn default() -> Self {
        NgramProvider::new(256)
    }
}

fn canonical(text: &str) -> Vec<char> {
    let mut out = alloc::vec![' '];
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            out.push(c);
        } else if out.last() != Some(&' ') {
            out.push(' ');
        }
    }
    if out.last() != Some(&' ') {
        out.push(' ');
    }
    out
}

// FNV-1a, fixed so bucket assignment is stable across platforms and releases.
fn bucket(gram: &[char], dims: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for c in gram {
        let mut buf = [0u8; 4];
        for b in c.encode_utf8(&mut buf).bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    (h % dims as u64) as usize
}

impl TextEmbedProvider for NgramProvider {
    fn id(&self) -> String {
        format!("ngram3-{}", self.dims)
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let chars = canonical(text);
        let mut v = alloc::vec![0.0; self.dims];
        if chars.len() >= 3 && chars.iter().any(|c| *c != ' ') {
            for gram in chars.windows(3) {
                v[bucket(gram, self.dims)] += 1.0;
            }
        }
        Ok(EmbeddingVector::new(v).normalized())
    }
}
