use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Use-sites that draw random numbers. Each gets its own ChaCha stream so
/// that, for example, adding a dropout layer never shifts the data shuffle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Dropout = 2,
    Shuffle = 3,
    Synth = 4,
    Check = 5,
}

/// Seed plus stream plus counter. Identical triples give identical draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub stream: Stream,
    pub counter: u64,
}

impl RngState {
    pub fn new(seed: u64, stream: Stream) -> Self {
        RngState {
            seed,
            stream,
            counter: 0,
        }
    }

    /// Same seed and stream, different counter (e.g. one per batch).
    pub fn at(self, counter: u64) -> Self {
        RngState { counter, ..self }
    }

    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // 64-bit stream id: use-site in the high bits, counter in the low.
        rng.set_stream(((self.stream as u64) << 48) ^ self.counter);
        rng
    }
}
