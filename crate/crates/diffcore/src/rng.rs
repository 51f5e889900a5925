//! Counter-based splittable random streams.
//!
//! Every stream is keyed by (root seed, stream name, fork index) and draws
//! values by hashing a per-stream counter. Streams are therefore independent
//! of each other and of how many of them exist, which keeps runs reproducible
//! when rollouts are reorganized.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix_name(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, folded with the seed, then finalized.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(GOLDEN);
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    splitmix64(h)
}

/// Root of the stream hierarchy for one run.
#[derive(Clone, Copy, Debug)]
pub struct Seeder {
    seed: u64,
}

impl Seeder {
    pub fn new(seed: u64) -> Self {
        Seeder { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Named stream, e.g. `stream("env")` or `stream("policy_noise")`.
    pub fn stream(&self, name: &str) -> RngStream {
        RngStream::from_key(mix_name(self.seed, name))
    }

    /// Indexed variant for per-worker / per-trial streams.
    pub fn stream_indexed(&self, name: &str, index: u64) -> RngStream {
        RngStream::from_key(splitmix64(
            mix_name(self.seed, name) ^ index.wrapping_mul(GOLDEN),
        ))
    }
}

/// One deterministic stream of draws.
#[derive(Clone, Debug)]
pub struct RngStream {
    key: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl RngStream {
    fn from_key(key: u64) -> Self {
        RngStream {
            key,
            counter: 0,
            spare_normal: None,
        }
    }

    /// Child stream derived from this one; independent of the parent's
    /// position.
    pub fn fork(&self, index: u64) -> RngStream {
        RngStream::from_key(splitmix64(self.key ^ index.wrapping_mul(GOLDEN) ^ GOLDEN))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let out = splitmix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter = self.counter.wrapping_add(1);
        out
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Lemire reduction, no modulo bias to speak of.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Standard normal draw (Box-Muller, second value cached).
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare_normal.take() {
            return v;
        }
        // Guard u1 away from zero so ln() stays finite.
        let u1 = self.next_f64().max(1e-300);
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_normal_f32(&mut self, out: &mut [f32]) {
        for v in out {
            *v = self.normal() as f32;
        }
    }
}
