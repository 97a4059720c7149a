//! Class-balanced sampling for fine-tuning. Standard-plane frames are rare
//! and background frames plentiful, so uniform sampling would drown the
//! classifier in background; instead the stream alternates between a
//! foreground draw (class chosen uniformly, then a frame of that class) and
//! a background draw.

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub struct BalancedSampler {
    foreground: Vec<Vec<usize>>,
    background: Vec<usize>,
    rng: RngStream,
    next_foreground: bool,
}

impl BalancedSampler {
    /// `labels[i]` is the class index of record `i` (None for unlabeled
    /// records, which never get sampled); `n_classes` includes the background
    /// class, which is the last index.
    pub fn new(labels: &[Option<usize>], n_classes: usize, rng: RngStream) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::invalid("balanced sampling needs at least one foreground class and the background class"));
        }
        let bg = n_classes - 1;
        let mut foreground = vec![Vec::new(); bg];
        let mut background = Vec::new();
        for (i, label) in labels.iter().enumerate() {
            match label {
                Some(c) if *c == bg => background.push(i),
                Some(c) if *c < bg => foreground[*c].push(i),
                Some(c) => {
                    return Err(Error::invalid(format!(
                        "label index {c} out of range for {n_classes} classes"
                    )))
                }
                None => {}
            }
        }
        for (c, idxs) in foreground.iter().enumerate() {
            if idxs.is_empty() {
                return Err(Error::invalid(format!("class {c} has no labeled samples")));
            }
        }
        if background.is_empty() {
            return Err(Error::invalid("background class has no labeled samples"));
        }
        Ok(BalancedSampler {
            foreground,
            background,
            rng,
            next_foreground: true,
        })
    }

    /// Next record index in the alternating stream.
    pub fn next_index(&mut self) -> usize {
        let idx = if self.next_foreground {
            let class = self.rng.index(self.foreground.len());
            let bucket = &self.foreground[class];
            bucket[self.rng.index(bucket.len())]
        } else {
            self.background[self.rng.index(self.background.len())]
        };
        self.next_foreground = !self.next_foreground;
        idx
    }

    pub fn take(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.next_index()).collect()
    }
}
