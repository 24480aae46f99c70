//! On-disk dataset container and group tagging for balanced sampling.
//!
//! A dataset is a directory with `manifest.json` and one packed blob file of
//! "UFT1" tensors, six per sample (one per modality, in ModalityId order).

use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::modality::{Modality, MODALITY_COUNT};
use crate::numerics::rng::Rng;
use crate::numerics::{blob, DType};
use crate::toyworld::render::render_all;
use crate::toyworld::scene::{caption_for, generate_scene, Difficulty, SceneSpec};

pub const MANIFEST_VERSION: u32 = 1;
pub const GROUP_COUNT: usize = 4;
const BLOB_FILE: &str = "samples.bin";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    /// Balanced-sampling group in [0, 3], assigned round-robin.
    pub group: usize,
    pub caption: String,
    pub scene: SceneSpec,
    pub blob_file: String,
    /// Byte offset of this sample's first tensor inside `blob_file`.
    pub blob_offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub extent: (usize, usize, usize),
    pub difficulty: Difficulty,
    pub samples: Vec<ManifestEntry>,
}

/// A fully rendered sample: the six mutually consistent modality grids plus
/// the generating scene, kept for oracle evaluation.
#[derive(Clone, Debug)]
pub struct RenderedSample {
    pub id: usize,
    pub group: usize,
    pub caption: String,
    pub scene: SceneSpec,
    pub grids: Vec<Grid>,
}

impl RenderedSample {
    pub fn grid(&self, m: Modality) -> &Grid {
        &self.grids[m.id()]
    }
}

#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub extent: (usize, usize, usize),
    pub difficulty: Difficulty,
    pub samples: Vec<RenderedSample>,
}

impl LoadedDataset {
    pub fn group_indices(&self, group: usize) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.group == group)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Render one sample deterministically from (rng, index).
pub fn render_sample(
    rng: &Rng,
    index: usize,
    difficulty: Difficulty,
    extent: (usize, usize, usize),
) -> Result<RenderedSample> {
    let mut sample_rng = rng.derive(index as u64);
    let scene = generate_scene(&mut sample_rng, difficulty, extent)?;
    Ok(RenderedSample {
        id: index,
        group: index % GROUP_COUNT,
        caption: caption_for(&scene),
        scene: scene.clone(),
        grids: render_all(&scene),
    })
}

/// Generate and write a dataset of `n_samples` scenes.
pub fn make_dataset(
    rng: &Rng,
    n_samples: usize,
    difficulty: Difficulty,
    extent: (usize, usize, usize),
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if n_samples == 0 {
        return Err(Error::invalid("dataset", "n_samples must be positive"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let blob_path = out_dir.join(BLOB_FILE);
    let file = std::fs::File::create(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let mut writer = std::io::BufWriter::new(file);

    let mut entries = Vec::with_capacity(n_samples);
    let mut offset = 0u64;
    for i in 0..n_samples {
        let sample = render_sample(rng, i, difficulty, extent)?;
        entries.push(ManifestEntry {
            id: i,
            group: sample.group,
            caption: sample.caption.clone(),
            scene: sample.scene.clone(),
            blob_file: BLOB_FILE.to_string(),
            blob_offset: offset,
        });
        for grid in &sample.grids {
            blob::write_tensor(&mut writer, grid.tensor()).map_err(|e| Error::io(&blob_path, e))?;
            offset += blob::encoded_len(grid.tensor().shape(), DType::F32) as u64;
        }
    }
    writer.flush().map_err(|e| Error::io(&blob_path, e))?;

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        extent,
        difficulty,
        samples: entries,
    };
    let manifest_path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::invalid("manifest", e.to_string()))?;
    std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        why: e.to_string(),
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::invalid(
            "manifest",
            format!("unsupported version {}", manifest.version),
        ));
    }
    Ok(manifest)
}

/// Load a dataset fully into memory (desk-scale datasets are small).
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let manifest = load_manifest(dir)?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    let mut readers: std::collections::HashMap<String, std::io::BufReader<std::fs::File>> =
        std::collections::HashMap::new();
    for entry in &manifest.samples {
        let reader = match readers.entry(entry.blob_file.clone()) {
            std::collections::hash_map::Entry::Occupied(o) => o.into_mut(),
            std::collections::hash_map::Entry::Vacant(v) => {
                let path = dir.join(&entry.blob_file);
                let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
                v.insert(std::io::BufReader::new(f))
            }
        };
        reader
            .seek(SeekFrom::Start(entry.blob_offset))
            .map_err(|e| Error::io(dir.join(&entry.blob_file), e))?;
        let mut grids = Vec::with_capacity(MODALITY_COUNT);
        for _ in 0..MODALITY_COUNT {
            grids.push(Grid::from_tensor(blob::read_tensor(reader)?)?);
        }
        samples.push(RenderedSample {
            id: entry.id,
            group: entry.group,
            caption: entry.caption.clone(),
            scene: entry.scene.clone(),
            grids,
        });
    }
    Ok(LoadedDataset {
        extent: manifest.extent,
        difficulty: manifest.difficulty,
        samples,
    })
}

/// Deterministic content hash of a dataset directory (manifest + blobs),
/// used by determinism tests.
pub fn dataset_digest(dir: &Path) -> Result<u64> {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    let mut update = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x1000_0000_01b3);
        }
    };
    let manifest_path = dir.join("manifest.json");
    update(&std::fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?);
    let blob_path = dir.join(BLOB_FILE);
    update(&std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?);
    Ok(hash)
}

pub fn blob_file_path(dir: &Path) -> PathBuf {
    dir.join(BLOB_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_are_round_robin() {
        let dir = tempfile::tempdir().unwrap();
        let rng = Rng::seed_from(1);
        let m = make_dataset(&rng, 8, Difficulty::Easy, (2, 16, 16), dir.path()).unwrap();
        let groups: Vec<usize> = m.samples.iter().map(|s| s.group).collect();
        assert_eq!(groups, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn write_read_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let rng = Rng::seed_from(2);
        make_dataset(&rng, 6, Difficulty::Standard, (2, 16, 16), dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.samples.len(), 6);
        for (i, s) in ds.samples.iter().enumerate() {
            let fresh = render_sample(&rng, i, Difficulty::Standard, (2, 16, 16)).unwrap();
            assert_eq!(s.caption, fresh.caption);
            for m in Modality::ALL {
                assert!(s.grid(m).bit_eq(fresh.grid(m)), "sample {i} {m:?}");
            }
        }
    }

    #[test]
    fn identical_seed_identical_bytes() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        make_dataset(&Rng::seed_from(3), 5, Difficulty::Standard, (2, 16, 16), d1.path()).unwrap();
        make_dataset(&Rng::seed_from(3), 5, Difficulty::Standard, (2, 16, 16), d2.path()).unwrap();
        assert_eq!(
            dataset_digest(d1.path()).unwrap(),
            dataset_digest(d2.path()).unwrap()
        );
    }
}
