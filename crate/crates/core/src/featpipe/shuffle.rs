use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Buffered local shuffle.
///
/// Fills a buffer of `capacity` items, then emits a uniformly chosen buffered
/// item each time one more is read. Once the input ends the buffer drains in
/// random order. An item read at position `i` can leave no earlier than output
/// position `i - (capacity - 1)`.
pub struct LocalShuffle<I: Iterator> {
    inner: I,
    buf: Vec<I::Item>,
    capacity: usize,
    rng: ChaCha8Rng,
    exhausted: bool,
}

impl<I: Iterator> LocalShuffle<I> {
    pub fn new(inner: I, capacity: usize, rng: ChaCha8Rng) -> Self {
        let capacity = capacity.max(1);
        Self {
            inner,
            buf: Vec::with_capacity(capacity),
            capacity,
            rng,
            exhausted: false,
        }
    }
}

impl<I: Iterator> Iterator for LocalShuffle<I> {
    type Item = I::Item;

    fn next(&mut self) -> Option<I::Item> {
        while !self.exhausted && self.buf.len() < self.capacity {
            match self.inner.next() {
                Some(x) => self.buf.push(x),
                None => self.exhausted = true,
            }
        }
        if self.buf.is_empty() {
            return None;
        }
        let idx = self.rng.gen_range(0..self.buf.len());
        Some(self.buf.swap_remove(idx))
    }
}

pub fn local_shuffle<I: IntoIterator>(input: I, buffer: usize, rng: ChaCha8Rng) -> LocalShuffle<I::IntoIter> {
    LocalShuffle::new(input.into_iter(), buffer, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn buffer_of_one_is_identity() {
        let out: Vec<_> = local_shuffle(0..50, 1, rng(3)).collect();
        assert_eq!(out, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn full_buffer_gives_permutations() {
        let a: Vec<_> = local_shuffle(0..100, 100, rng(1)).collect();
        let b: Vec<_> = local_shuffle(0..100, 100, rng(2)).collect();
        assert_ne!(a, b);
        let (mut sa, mut sb) = (a.clone(), b.clone());
        sa.sort();
        sb.sort();
        assert_eq!(sa, (0..100).collect::<Vec<_>>());
        assert_eq!(sa, sb);
        let again: Vec<_> = local_shuffle(0..100, 100, rng(1)).collect();
        assert_eq!(a, again);
    }

    /// Simulated reservoir window: an item can only be emitted once it has
    /// been read, and reads run at most `buffer - 1` ahead of emission.
    #[test]
    fn displacement_bound_simulation() {
        let mut meta = rng(99);
        for _ in 0..1000 {
            let n = meta.gen_range(0..200usize);
            let buffer = meta.gen_range(1..40usize);
            let out: Vec<usize> = local_shuffle(0..n, buffer, rng(meta.gen())).collect();
            assert_eq!(out.len(), n);
            let mut seen = vec![false; n];
            for (pos, &item) in out.iter().enumerate() {
                assert!(!seen[item]);
                seen[item] = true;
                assert!(item < pos + buffer, "item {item} at {pos} with buffer {buffer}");
            }
        }
    }
}
