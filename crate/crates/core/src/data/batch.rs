use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Seeded shuffle of `0..n` cut into contiguous mini-batches.
#[derive(Clone, Debug)]
pub struct BatchIterator {
    n: usize,
    batch_size: usize,
    seed: u64,
    drop_last: bool,
}

impl BatchIterator {
    pub fn new(n: usize, batch_size: usize, seed: u64, drop_last: bool) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be ≥ 1".into()));
        }
        if batch_size > n {
            return Err(Error::Config(format!("batch size {batch_size} exceeds dataset size {n}")));
        }
        Ok(Self {
            n,
            batch_size,
            seed,
            drop_last,
        })
    }

    pub fn batches(&self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.n).collect();
        SeededRng::new(self.seed).shuffle(&mut order);
        order
            .chunks(self.batch_size)
            .filter(|c| !self.drop_last || c.len() == self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}
