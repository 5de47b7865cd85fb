//! Chunked, order-preserving parallel map over path ensembles.

use rayon::prelude::*;

use crate::rng::{CHUNK, StreamRng};

/// Range of path indices handled by one chunk.
#[derive(Clone, Copy, Debug)]
pub struct Chunk {
    pub index: u32,
    pub start: usize,
    pub len: usize,
}

pub fn chunks(n: usize) -> impl IndexedParallelIterator<Item = Chunk> {
    let count = n.div_ceil(CHUNK);
    (0..count).into_par_iter().map(move |i| {
        let start = i * CHUNK;
        Chunk { index: i as u32, start, len: CHUNK.min(n - start) }
    })
}

/// Run `f` on every chunk with that chunk's stream in `lane`; results come
/// back in chunk order regardless of the worker count.
pub fn map_chunks<T, F>(n: usize, seed: u64, lane: u32, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Chunk, &mut StreamRng) -> T + Sync + Send,
{
    chunks(n)
        .map(|c| {
            let mut rng = StreamRng::for_chunk(seed, lane, c.index);
            f(c, &mut rng)
        })
        .collect()
}

/// Like [`map_chunks`] with two independent lanes per chunk.
pub fn map_chunks2<T, F>(n: usize, seed: u64, lanes: (u32, u32), f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Chunk, &mut StreamRng, &mut StreamRng) -> T + Sync + Send,
{
    chunks(n)
        .map(|c| {
            let mut a = StreamRng::for_chunk(seed, lanes.0, c.index);
            let mut b = StreamRng::for_chunk(seed, lanes.1, c.index);
            f(c, &mut a, &mut b)
        })
        .collect()
}
