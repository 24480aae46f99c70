//! Curriculum stages and balanced batch construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowmatch::{assign_noise, sample_task, NoiseAssignment, RoutingConfig, TaskMode};
use crate::modality::Modality;
use crate::numerics::rng::Rng;
use crate::toyworld::scene::Difficulty;
use crate::toyworld::{LoadedDataset, GROUP_COUNT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageId {
    Stage1,
    Stage2,
}

/// A training phase restricting which modalities and scene difficulties are
/// sampled. Stage 1: pixel-aligned modalities on easy scenes; stage 2: every
/// enabled modality on standard scenes.
#[derive(Clone, Debug)]
pub struct CurriculumStage {
    pub stage: StageId,
    pub allowed_modalities: Vec<Modality>,
    pub data_difficulty: Difficulty,
}

impl CurriculumStage {
    pub fn stage1(enabled: &[Modality]) -> Result<CurriculumStage> {
        let allowed: Vec<Modality> = enabled
            .iter()
            .copied()
            .filter(|m| m.is_pixel_aligned() && *m != Modality::Rgb)
            .collect();
        if allowed.is_empty() {
            return Err(Error::invalid(
                "curriculum",
                "stage 1 needs at least one pixel-aligned modality enabled",
            ));
        }
        Ok(CurriculumStage {
            stage: StageId::Stage1,
            allowed_modalities: allowed,
            data_difficulty: Difficulty::Easy,
        })
    }

    pub fn stage2(enabled: &[Modality]) -> Result<CurriculumStage> {
        if enabled.is_empty() {
            return Err(Error::invalid("curriculum", "no modalities enabled"));
        }
        Ok(CurriculumStage {
            stage: StageId::Stage2,
            allowed_modalities: enabled.to_vec(),
            data_difficulty: Difficulty::Standard,
        })
    }
}

/// One training sample assignment: which sample, supervised modality, task
/// mode, and the per-stream timesteps it induces.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem {
    pub sample_idx: usize,
    pub modality: Modality,
    pub mode: TaskMode,
    pub noise: NoiseAssignment,
}

/// Exactly batch_size/4 samples from each of the four groups (without
/// replacement within the batch), each with an independently drawn modality,
/// routed task mode, and noise assignment.
pub fn build_batch(
    dataset: &LoadedDataset,
    stage: &CurriculumStage,
    routing: &RoutingConfig,
    rng: &mut Rng,
    batch_size: usize,
) -> Result<Vec<BatchItem>> {
    if batch_size == 0 || batch_size % GROUP_COUNT != 0 {
        return Err(Error::invalid(
            "batch",
            format!("batch_size {batch_size} must be a positive multiple of {GROUP_COUNT}"),
        ));
    }
    let per_group = batch_size / GROUP_COUNT;
    let mut picked = Vec::with_capacity(batch_size);
    for group in 0..GROUP_COUNT {
        let mut pool = dataset.group_indices(group);
        if pool.len() < per_group {
            return Err(Error::invalid(
                "batch",
                format!(
                    "group {group} has {} samples, need {per_group} without replacement",
                    pool.len()
                ),
            ));
        }
        // Partial Fisher-Yates: draw per_group distinct indices.
        for k in 0..per_group {
            let j = k + rng.below(pool.len() - k);
            pool.swap(k, j);
            picked.push(pool[k]);
        }
    }
    let items = picked
        .into_iter()
        .map(|sample_idx| {
            let modality = stage.allowed_modalities[rng.below(stage.allowed_modalities.len())];
            let mode = sample_task(rng, routing);
            let noise = assign_noise(mode, rng);
            BatchItem {
                sample_idx,
                modality,
                mode,
                noise,
            }
        })
        .collect();
    Ok(items)
}

/// Group histogram of a batch; balanced batches are exactly uniform.
pub fn group_histogram(dataset: &LoadedDataset, batch: &[BatchItem]) -> [usize; GROUP_COUNT] {
    let mut h = [0usize; GROUP_COUNT];
    for item in batch {
        h[dataset.samples[item.sample_idx].group] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::{make_dataset, load_dataset};

    fn dataset(n: usize) -> LoadedDataset {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(&Rng::seed_from(1), n, Difficulty::Standard, (2, 16, 16), dir.path()).unwrap();
        load_dataset(dir.path()).unwrap()
    }

    #[test]
    fn batches_are_group_balanced() {
        let ds = dataset(32);
        let stage = CurriculumStage::stage2(&Modality::AUX).unwrap();
        let mut rng = Rng::seed_from(2);
        for _ in 0..50 {
            let batch = build_batch(&ds, &stage, &RoutingConfig::default(), &mut rng, 8).unwrap();
            assert_eq!(group_histogram(&ds, &batch), [2, 2, 2, 2]);
            // without replacement within the batch
            let mut idx: Vec<usize> = batch.iter().map(|b| b.sample_idx).collect();
            idx.sort_unstable();
            idx.dedup();
            assert_eq!(idx.len(), 8);
        }
    }

    #[test]
    fn stage1_draws_only_pixel_aligned_modalities() {
        let ds = dataset(16);
        let stage = CurriculumStage::stage1(&Modality::AUX).unwrap();
        assert_eq!(
            stage.allowed_modalities,
            vec![Modality::Depth, Modality::Flow, Modality::Parts]
        );
        let mut rng = Rng::seed_from(3);
        for _ in 0..30 {
            let batch = build_batch(&ds, &stage, &RoutingConfig::default(), &mut rng, 4).unwrap();
            for item in batch {
                assert!(item.modality.is_pixel_aligned());
                assert_ne!(item.modality, Modality::Rgb);
            }
        }
    }

    #[test]
    fn empty_group_is_rejected_by_name() {
        // 3 samples only: group 3 is empty.
        let ds = dataset(3);
        let stage = CurriculumStage::stage2(&Modality::AUX).unwrap();
        let mut rng = Rng::seed_from(4);
        let err = build_batch(&ds, &stage, &RoutingConfig::default(), &mut rng, 4).unwrap_err();
        assert!(err.to_string().contains("group 3"), "{err}");
    }

    #[test]
    fn mode_frequencies_track_routing() {
        let ds = dataset(32);
        let stage = CurriculumStage::stage2(&Modality::AUX).unwrap();
        let routing = RoutingConfig::default();
        let mut rng = Rng::seed_from(5);
        let mut counts = [0usize; 3];
        let n_batches = 2500; // 10k samples
        for _ in 0..n_batches {
            for item in build_batch(&ds, &stage, &routing, &mut rng, 4).unwrap() {
                counts[match item.mode {
                    TaskMode::Conditional => 0,
                    TaskMode::Estimation => 1,
                    TaskMode::Joint => 2,
                }] += 1;
            }
        }
        let total = (n_batches * 4) as f64;
        for (c, p) in counts.iter().zip([0.2, 0.3, 0.5]) {
            assert!((*c as f64 / total - p).abs() < 0.02);
        }
    }
}
