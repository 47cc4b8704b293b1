use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::Result;
use crate::model::AttentionMask;

/// A slice of a dataset ready for the encoder.
#[derive(Clone, Debug)]
pub struct Batch {
    /// Positions in the source dataset.
    pub indices: Vec<usize>,
    pub example_ids: Vec<usize>,
    pub token_ids: Vec<Vec<usize>>,
    pub mask: AttentionMask,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn gather(dataset: &Dataset, indices: &[usize]) -> Result<Batch> {
        let ex: Vec<_> = indices.iter().map(|&i| &dataset.examples()[i]).collect();
        let rows: Vec<Vec<bool>> = ex.iter().map(|e| e.mask.clone()).collect();
        Ok(Batch {
            indices: indices.to_vec(),
            example_ids: ex.iter().map(|e| e.example_id).collect(),
            token_ids: ex.iter().map(|e| e.token_ids.clone()).collect(),
            mask: AttentionMask::new(&rows)?,
            labels: ex.iter().map(|e| e.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Seeded permutation cut into consecutive `batch_size` slices; the last
/// slice may be short.
pub fn batch_iter(dataset: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<Vec<Batch>> {
    crate::error::contract!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    order
        .chunks(batch_size)
        .map(|idx| Batch::gather(dataset, idx))
        .collect()
}

/// In-order batches, for evaluation.
pub fn sequential_batches(dataset: &Dataset, batch_size: usize) -> Result<Vec<Batch>> {
    let order: Vec<usize> = (0..dataset.len()).collect();
    order
        .chunks(batch_size.max(1))
        .map(|idx| Batch::gather(dataset, idx))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode_ids, Split};

    fn ds(n: usize) -> Dataset {
        let ex = (0..n).map(|i| encode_ids(i * 10, &[5, 6], i % 2, 2, 4).unwrap()).collect();
        Dataset::new(ex, 2, 4, Split::Train, "t").unwrap()
    }

    #[test]
    fn large_batch_holds_everything() {
        let b = batch_iter(&ds(7), 64, 1).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 7);
    }

    #[test]
    fn one_epoch_is_a_partition() {
        let d = ds(23);
        let batches = batch_iter(&d, 5, 9).unwrap();
        assert_eq!(batches.len(), 5);
        assert_eq!(batches.last().unwrap().len(), 3);
        let mut ids: Vec<usize> = batches.iter().flat_map(|b| b.example_ids.clone()).collect();
        ids.sort();
        assert_eq!(ids, (0..23).map(|i| i * 10).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_order() {
        let d = ds(30);
        let a: Vec<_> = batch_iter(&d, 4, 2).unwrap().into_iter().map(|b| b.indices).collect();
        let b: Vec<_> = batch_iter(&d, 4, 2).unwrap().into_iter().map(|b| b.indices).collect();
        let c: Vec<_> = batch_iter(&d, 4, 3).unwrap().into_iter().map(|b| b.indices).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
