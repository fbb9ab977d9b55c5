use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

/// Hex characters of the content hash kept in file names.
const HASH_CHARS: usize = 12;

pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(digest)[..HASH_CHARS].to_string()
}

/// `<command>-<seed>-<hash><suffix>`, e.g. `rho-7-3fa1c09e22b4.csv`.
pub fn file_name(command: &str, seed: u64, suffix: &str, contents: &str) -> String {
    format!("{command}-{seed}-{}{suffix}", content_hash(contents.as_bytes()))
}

pub struct Artifacts {
    dir: PathBuf,
    command: String,
    seed: u64,
    written: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path, command: &str, seed: u64) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            seed,
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, suffix: &str, contents: &str) -> std::io::Result<String> {
        let name = file_name(&self.command, self.seed, suffix, contents);
        std::fs::write(self.dir.join(&name), contents)?;
        self.written.push(name.clone());
        Ok(name)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}
