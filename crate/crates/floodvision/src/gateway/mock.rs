//! Deterministic mock backend: replies come from fixture files keyed by the
//! sha256 of the image bytes, with the image's file name as a fallback key.
//! A pure function of (image bytes, fixture_dir).

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{GatewayError, ImagePayload, PromptSpec, VlmBackend};

pub struct MockBackend {
    fixture_dir: PathBuf,
}

impl MockBackend {
    pub fn new(fixture_dir: PathBuf) -> Self {
        Self { fixture_dir }
    }

    fn hash_key(bytes: &[u8]) -> String {
        let digest = Sha256::digest(bytes);
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

impl VlmBackend for MockBackend {
    fn request(&self, image: &ImagePayload, _prompt: &PromptSpec) -> Result<String, GatewayError> {
        let hash_path = self
            .fixture_dir
            .join(format!("{}.json", Self::hash_key(&image.bytes)));
        if let Ok(text) = std::fs::read_to_string(&hash_path) {
            return Ok(text);
        }
        let basename = Path::new(&image.source_path)
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        let name_path = self.fixture_dir.join(format!("{basename}.json"));
        if let Ok(text) = std::fs::read_to_string(&name_path) {
            return Ok(text);
        }
        Err(GatewayError::MissingFixture {
            hash_path: hash_path.display().to_string(),
            name_path: name_path.display().to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> ImagePayload {
        ImagePayload::new(vec![0xFF, 0xD8, 0xFF, 0x11, 0x22], "scenes/img_a.jpg").unwrap()
    }

    fn prompt() -> PromptSpec {
        super::super::build_prompt(3).unwrap()
    }

    #[test]
    fn hash_key_is_stable_hex() {
        let k = MockBackend::hash_key(b"abc");
        assert_eq!(k, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn hash_fixture_wins_over_basename() {
        let dir = tempfile::tempdir().unwrap();
        let img = image();
        let hash = MockBackend::hash_key(&img.bytes);
        std::fs::write(dir.path().join(format!("{hash}.json")), "by-hash").unwrap();
        std::fs::write(dir.path().join("img_a.jpg.json"), "by-name").unwrap();
        let backend = MockBackend::new(dir.path().to_path_buf());
        assert_eq!(backend.request(&img, &prompt()).unwrap(), "by-hash");
    }

    #[test]
    fn falls_back_to_basename() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("img_a.jpg.json"), "by-name").unwrap();
        let backend = MockBackend::new(dir.path().to_path_buf());
        assert_eq!(backend.request(&image(), &prompt()).unwrap(), "by-name");
    }

    #[test]
    fn missing_fixture_names_both_probed_paths() {
        let dir = tempfile::tempdir().unwrap();
        let backend = MockBackend::new(dir.path().to_path_buf());
        let err = backend.request(&image(), &prompt()).unwrap_err();
        match err {
            GatewayError::MissingFixture { hash_path, name_path } => {
                assert!(hash_path.ends_with(".json"));
                assert!(name_path.ends_with("img_a.jpg.json"));
            }
            other => panic!("expected MissingFixture, got {other}"),
        }
    }

    #[test]
    fn pure_function_of_bytes_and_dir() {
        let dir = tempfile::tempdir().unwrap();
        let img = image();
        let hash = MockBackend::hash_key(&img.bytes);
        std::fs::write(dir.path().join(format!("{hash}.json")), "reply").unwrap();
        let backend = MockBackend::new(dir.path().to_path_buf());
        let a = backend.request(&img, &prompt()).unwrap();
        let b = backend.request(&img, &prompt()).unwrap();
        assert_eq!(a, b);
        // same bytes under a different path still hit the hash fixture
        let moved = ImagePayload::new(img.bytes.clone(), "elsewhere/renamed.jpg").unwrap();
        assert_eq!(backend.request(&moved, &prompt()).unwrap(), "reply");
    }
}
