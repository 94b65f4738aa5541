use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// The single generator type behind every random draw in the crate.
pub type SimRng = ChaCha8Rng;

/// Generator for substream `stream` of `seed`.
///
/// ChaCha keeps the stream id separate from the key, so streams for
/// different markets or replications never overlap and can be drawn in any
/// order.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Starting values around `center`, coordinate `k` with standard deviation
/// `sqrt(|center_k|) / 5`. Start 0 is `center` itself.
pub fn multistart_draws(center: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, 0x6d75_6c74_6973_7461);
    let mut starts = Vec::with_capacity(count.max(1));
    starts.push(center.to_vec());
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    for _ in 1..count {
        let draw = center
            .iter()
            .map(|&c| c + 0.2 * c.abs().sqrt() * std_normal.sample(&mut rng))
            .collect();
        starts.push(draw);
    }
    starts
}
