use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Tolerance on the unit norm of queued keys.
const NORM_TOL: f32 = 1e-4;

/// Fixed-capacity FIFO of key embeddings, stored as a ring buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeQueue {
    capacity: usize,
    dim: usize,
    storage: Vec<f32>,
    /// Slot the next key is written to.
    head: usize,
    fill: usize,
}

impl NegativeQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<NegativeQueue> {
        if capacity == 0 || dim == 0 {
            return Err(Error::config(format!("queue needs positive capacity and width, got {capacity}×{dim}")));
        }
        Ok(NegativeQueue { capacity, dim, storage: vec![0.0; capacity * dim], head: 0, fill: 0 })
    }

    /// Rebuilds a queue from its raw parts, e.g. when loading a checkpoint.
    pub fn from_parts(capacity: usize, dim: usize, storage: Vec<f32>, head: usize, fill: usize) -> Result<NegativeQueue> {
        if storage.len() != capacity * dim || head >= capacity.max(1) || fill > capacity {
            return Err(Error::contract(format!(
                "inconsistent queue parts: capacity {capacity}, dim {dim}, {} values, head {head}, fill {fill}",
                storage.len()
            )));
        }
        Ok(NegativeQueue { capacity, dim, storage, head, fill })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fill(&self) -> usize {
        self.fill
    }

    pub fn head(&self) -> usize {
        self.head
    }

    pub fn is_empty(&self) -> bool {
        self.fill == 0
    }

    pub fn storage(&self) -> &[f32] {
        &self.storage
    }

    /// Appends `keys` (`[B×d]`, flattened), evicting the oldest entries once full.
    pub fn push(&mut self, keys: &[f32]) -> Result<()> {
        if keys.len() % self.dim != 0 {
            return Err(Error::contract(format!(
                "{} values do not form rows of width {}",
                keys.len(),
                self.dim
            )));
        }
        let batch = keys.len() / self.dim;
        if batch > self.capacity {
            return Err(Error::contract(format!(
                "batch of {batch} keys exceeds queue capacity {}",
                self.capacity
            )));
        }
        for (i, row) in keys.chunks(self.dim).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(Error::contract(format!("key {i} has norm {norm}, expected 1")));
            }
        }
        for row in keys.chunks(self.dim) {
            let at = self.head * self.dim;
            self.storage[at..at + self.dim].copy_from_slice(row);
            self.head = (self.head + 1) % self.capacity;
        }
        self.fill = (self.fill + batch).min(self.capacity);
        Ok(())
    }

    /// Stored keys, oldest first.
    pub fn entries(&self) -> Vec<&[f32]> {
        let start = if self.fill < self.capacity { 0 } else { self.head };
        (0..self.fill)
            .map(|i| {
                let slot = (start + i) % self.capacity;
                &self.storage[slot * self.dim..(slot + 1) * self.dim]
            })
            .collect()
    }

    /// `[fill×d]` constant tensor of the stored keys, in slot order.
    pub fn as_tensor(&self) -> Result<Tensor> {
        if self.fill == 0 {
            return Err(Error::contract("negative queue is empty"));
        }
        Tensor::new(self.storage[..self.fill * self.dim].to_vec(), &[self.fill, self.dim])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(dim: usize, ids: &[usize]) -> Vec<f32> {
        ids.iter().flat_map(|&i| (0..dim).map(move |j| if j == i % dim { 1.0 } else { 0.0 })).collect()
    }

    #[test]
    fn push_into_empty_preserves_order() {
        let mut q = NegativeQueue::new(8, 8).unwrap();
        q.push(&basis(8, &[0, 1, 2, 3])).unwrap();
        assert_eq!(q.fill(), 4);
        let e = q.entries();
        for (i, row) in e.iter().enumerate() {
            assert_eq!(row[i], 1.0);
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut q = NegativeQueue::new(8, 16).unwrap();
        q.push(&basis(16, &[0, 1, 2, 3])).unwrap();
        q.push(&basis(16, &[4, 5, 6, 7])).unwrap();
        q.push(&basis(16, &[8, 9, 10, 11])).unwrap();
        assert_eq!(q.fill(), 8);
        let first: Vec<usize> =
            q.entries().iter().map(|r| r.iter().position(|&v| v == 1.0).unwrap()).collect();
        assert_eq!(first, vec![4, 5, 6, 7, 8, 9, 10, 11]);
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let mut q = NegativeQueue::new(2, 4).unwrap();
        assert!(matches!(q.push(&basis(4, &[0, 1, 2])), Err(Error::Contract(_))));
    }

    #[test]
    fn non_unit_key_is_rejected() {
        let mut q = NegativeQueue::new(2, 2).unwrap();
        assert!(matches!(q.push(&[1.0, 1.0]), Err(Error::Contract(_))));
    }
}
