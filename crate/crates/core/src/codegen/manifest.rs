//! Benchmark manifest: the list of generated kernel files handed to the
//! run stage.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BenchRequest, DeviceLimits, Microbenchmark};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub timed_count: u64,
    pub divisor: u64,
    pub request: BenchRequest,
}

impl ManifestEntry {
    pub fn from_bench(bench: &Microbenchmark) -> Self {
        ManifestEntry {
            id: bench.id.clone(),
            file: bench.file_name(),
            timed_count: bench.timed_count,
            divisor: bench.divisor,
            request: bench.request(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub device: DeviceLimits,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(device: DeviceLimits) -> Self {
        Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            device,
            entries: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> io::Result<Manifest> {
        let text = fs::read_to_string(path)?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("unsupported manifest schema_version {}", m.schema_version),
            ));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(path, text)
    }

    /// Writes each kernel into `dir` and returns the manifest (also saved
    /// there as `manifest.json`). Entries with an id already present are
    /// replaced so reruns into the same directory stay consistent.
    pub fn write_benchmarks(
        dir: &Path,
        device: DeviceLimits,
        benches: &[Microbenchmark],
    ) -> io::Result<Manifest> {
        fs::create_dir_all(dir)?;
        let path = dir.join(MANIFEST_FILE);
        let mut manifest = if path.exists() {
            let mut m = Manifest::load(&path)?;
            m.device = device;
            m
        } else {
            Manifest::new(device)
        };
        for b in benches {
            fs::write(dir.join(b.file_name()), &b.source_text)?;
            let entry = ManifestEntry::from_bench(b);
            match manifest.entries.iter_mut().find(|e| e.id == entry.id) {
                Some(e) => *e = entry,
                None => manifest.entries.push(entry),
            }
        }
        manifest.save(&path)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::{generate, inventory, BenchKind};
    use crate::seed::seed_paper_table;

    #[test]
    fn manifest_round_trips_and_regenerates() {
        let dir = tempfile::tempdir().unwrap();
        let limits = DeviceLimits {
            l1_bytes: 16 * 1024,
            l2_bytes: 64 * 1024,
        };
        let table = seed_paper_table();
        let benches: Vec<_> = inventory(
            &table,
            &limits,
            &[BenchKind::Memory, BenchKind::Shared, BenchKind::Wmma],
        )
        .iter()
        .map(|r| generate(r, &limits).unwrap())
        .collect();
        let m = Manifest::write_benchmarks(dir.path(), limits, &benches).unwrap();
        let back = Manifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m, back);
        for (e, b) in back.entries.iter().zip(&benches) {
            let again = generate(&e.request, &back.device).unwrap();
            assert_eq!(again.source_text, b.source_text);
            assert_eq!(
                std::fs::read_to_string(dir.path().join(&e.file)).unwrap(),
                b.source_text
            );
        }
    }
}
