//! Bounded replay memory shared by naive rehearsal and GEM.
//!
//! One slice per finished task. The total never exceeds the capacity:
//! quotas rebalance to `capacity / tasks_seen` after each task, and older
//! slices only ever shrink (a slice is always a subset of its earlier
//! selves and of its origin task's training set).

use rand::seq::index;
use rand::seq::SliceRandom;

use crate::data::{Sample, TaggedSample};
use crate::seeding;

#[derive(Debug, Clone)]
pub struct TaskSlice {
    pub task_id: usize,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone)]
pub struct MemoryBuffer {
    capacity: usize,
    slices: Vec<TaskSlice>,
}

impl MemoryBuffer {
    pub fn new(capacity: usize) -> Self {
        MemoryBuffer {
            capacity,
            slices: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn slices(&self) -> &[TaskSlice] {
        &self.slices
    }

    pub fn total_len(&self) -> usize {
        self.slices.iter().map(|s| s.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }

    /// Store a uniform random sample (without replacement) of the finished
    /// task's training rows and rebalance every slice to the new quota
    /// `capacity / tasks_seen` by down-sampling.
    pub fn update(&mut self, task_id: usize, task_rows: &[Sample], seed: u64) {
        self.slices.push(TaskSlice {
            task_id,
            samples: task_rows.to_vec(),
        });
        let quota = self.capacity / self.slices.len();
        for slice in &mut self.slices {
            if slice.samples.len() > quota {
                let mut rng = seeding::stream(seed, "memory-downsample", slice.task_id as u64);
                let keep = index::sample(&mut rng, slice.samples.len(), quota).into_vec();
                let mut keep_sorted = keep;
                keep_sorted.sort_unstable();
                slice.samples = keep_sorted
                    .into_iter()
                    .map(|i| slice.samples[i].clone())
                    .collect();
            }
        }
        debug_assert!(self.total_len() <= self.capacity);
    }

    /// Merge the next task's training rows with everything in memory.
    /// With an empty memory the rows pass through untouched (so the first
    /// task trains bit-identically to a run without replay); otherwise
    /// the union is shuffled deterministically by seed.
    pub fn merged_training(
        &self,
        next_task_id: usize,
        next_rows: &[Sample],
        seed: u64,
    ) -> Vec<TaggedSample> {
        let mut merged: Vec<TaggedSample> = next_rows
            .iter()
            .map(|sample| TaggedSample {
                origin_task: next_task_id,
                sample: sample.clone(),
            })
            .collect();
        if self.is_empty() {
            return merged;
        }
        for slice in &self.slices {
            merged.extend(slice.samples.iter().map(|sample| TaggedSample {
                origin_task: slice.task_id,
                sample: sample.clone(),
            }));
        }
        let mut rng = seeding::stream(seed, "memory-merge", next_task_id as u64);
        merged.shuffle(&mut rng);
        merged
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(task: usize, count: usize) -> Vec<Sample> {
        (0..count)
            .map(|i| Sample {
                query_id: format!("q{task}_{i}"),
                query_text: format!("query {i}"),
                doc_id: format!("d{task}_{i}"),
                doc_text: format!("doc {i}"),
                relevance: f64::from(i as u32 % 2),
            })
            .collect()
    }

    #[test]
    fn quotas_rebalance_per_task() {
        // capacity 4, after 2 tasks -> |M_1| = |M_2| = 2
        let mut memory = MemoryBuffer::new(4);
        memory.update(1, &rows(1, 10), 7);
        assert_eq!(memory.total_len(), 4);
        memory.update(2, &rows(2, 10), 7);
        assert_eq!(memory.slices()[0].samples.len(), 2);
        assert_eq!(memory.slices()[1].samples.len(), 2);
    }

    #[test]
    fn capacity_is_never_exceeded_and_slices_shrink() {
        let mut memory = MemoryBuffer::new(10);
        let mut previous: Vec<Vec<String>> = Vec::new();
        for t in 1..=5 {
            memory.update(t, &rows(t, 20), 3);
            assert!(memory.total_len() <= 10, "overflow after task {t}");
            // Older slices are subsets of their previous selves.
            for (slice, old) in memory.slices().iter().zip(&previous) {
                let ids: Vec<String> =
                    slice.samples.iter().map(|s| s.doc_id.clone()).collect();
                assert!(ids.iter().all(|id| old.contains(id)));
            }
            previous = memory
                .slices()
                .iter()
                .map(|s| s.samples.iter().map(|x| x.doc_id.clone()).collect())
                .collect();
        }
    }

    #[test]
    fn memory_samples_come_from_their_origin_task() {
        let mut memory = MemoryBuffer::new(6);
        let task_rows = rows(1, 12);
        memory.update(1, &task_rows, 11);
        for sample in &memory.slices()[0].samples {
            assert!(task_rows.contains(sample));
        }
    }

    #[test]
    fn first_task_merge_passes_rows_through() {
        let memory = MemoryBuffer::new(8);
        let next = rows(1, 5);
        let merged = memory.merged_training(1, &next, 9);
        assert_eq!(merged.len(), 5);
        for (tagged, original) in merged.iter().zip(&next) {
            assert_eq!(tagged.origin_task, 1);
            assert_eq!(&tagged.sample, original);
        }
    }

    #[test]
    fn unlimited_capacity_keeps_every_row() {
        let mut memory = MemoryBuffer::new(1000);
        memory.update(1, &rows(1, 8), 21);
        memory.update(2, &rows(2, 8), 21);
        let merged = memory.merged_training(3, &rows(3, 8), 21);
        assert_eq!(merged.len(), 24);
        let from_task1 = merged.iter().filter(|t| t.origin_task == 1).count();
        assert_eq!(from_task1, 8);
    }

    #[test]
    fn zero_capacity_degenerates_to_baseline() {
        let mut memory = MemoryBuffer::new(0);
        memory.update(1, &rows(1, 8), 2);
        assert!(memory.is_empty());
        let merged = memory.merged_training(2, &rows(2, 3), 2);
        assert_eq!(merged.len(), 3);
    }
}
