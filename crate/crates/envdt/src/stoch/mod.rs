//! Deterministic randomness: keyed, splittable streams and the belief
//! distribution catalogue.
//!
//! Every random decision in a run flows from one [`RandomStream`]. Streams
//! are ChaCha8 generators keyed by 32 bytes; [`RandomStream::split`]
//! derives an independent child stream by hashing the parent key with a
//! label, without consuming any parent randomness. Replays are therefore
//! stable under concurrency: a machine's stream depends only on the run
//! seed and the machine's spawn label, never on interleaving.
//!
//! All ten distributions sample by inversion and consume **exactly one**
//! unit draw per sample. That fixed-consumption contract is what keeps
//! traces byte-identical when a model is edited in ways that do not touch
//! an earlier decision point.

mod quantile;

pub use quantile::{gamma_quantile, normal_quantile, reg_lower_gamma};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Scale factor turning the top 53 bits of a u64 into a unit double.
const UNIT_SCALE: f64 = 1.0 / (1u64 << 53) as f64;

/// A keyed deterministic random stream.
#[derive(Debug, Clone)]
pub struct RandomStream {
    key: [u8; 32],
    rng: ChaCha8Rng,
}

impl RandomStream {
    /// Builds a stream directly from a 32-byte key.
    pub fn from_key(key: [u8; 32]) -> Self {
        Self { key, rng: ChaCha8Rng::from_seed(key) }
    }

    /// Builds a stream from a 64-bit seed by hashing it to a full key.
    pub fn from_seed(seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        Self::from_key(hasher.finalize().into())
    }

    /// Derives an independent child stream from this stream's key and a
    /// label. Splitting never consumes randomness from the parent, so the
    /// set of children and the order they are created in has no effect on
    /// any stream's output.
    pub fn split(&self, label: &str) -> RandomStream {
        let mut hasher = Sha256::new();
        hasher.update(self.key);
        hasher.update(b":");
        hasher.update(label.as_bytes());
        Self::from_key(hasher.finalize().into())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// One uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * UNIT_SCALE
    }

    /// Uniform double in `[lo, hi)` (one draw).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.next_unit() * (hi - lo)
    }

    /// Uniform integer in `[lo, hi]` inclusive (one draw).
    pub fn next_int_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        let span = (hi - lo) as u64 as f64 + 1.0;
        let off = (self.next_unit() * span) as i64;
        (lo + off).min(hi)
    }

    /// Uniform index in `[0, n)` (one draw).
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_unit() * n as f64) as usize).min(n - 1)
    }
}

/// Derives the root seed of one run from the experiment base seed and the
/// run's coordinates in the matrix. Distinct coordinates give unrelated
/// streams; the same coordinates always reproduce the same run.
pub fn run_seed(base: u64, device: &str, dist_kind: &str, rep: u32) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"run:");
    hasher.update(base.to_le_bytes());
    hasher.update(b":");
    hasher.update(device.as_bytes());
    hasher.update(b":");
    hasher.update(dist_kind.as_bytes());
    hasher.update(b":");
    hasher.update(rep.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DistError {
    #[error("unknown distribution kind '{0}'")]
    UnknownKind(String),
    #[error("{kind} takes {expected} parameter(s), got {got}")]
    WrongArity { kind: &'static str, expected: usize, got: usize },
    #[error("invalid parameters for {kind}: {reason}")]
    InvalidParameters { kind: &'static str, reason: String },
    #[error("malformed distribution expression '{0}'")]
    Malformed(String),
}

/// A fully parameterised belief distribution.
///
/// Discrete samples are returned as whole-valued `f64`s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DistributionSpec {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    Triangular { lo: f64, mode: f64, hi: f64 },
    Bernoulli { p: f64 },
    Binomial { n: u64, p: f64 },
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    Poisson { lambda: f64 },
    Geometric { p: f64 },
    Logarithmic { p: f64 },
}

/// All distribution kind names, in catalogue order.
pub const DIST_KINDS: [&str; 10] = [
    "uniform",
    "normal",
    "triangular",
    "bernoulli",
    "binomial",
    "exponential",
    "gamma",
    "poisson",
    "geometric",
    "logarithmic",
];

impl DistributionSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Uniform { .. } => "uniform",
            Self::Normal { .. } => "normal",
            Self::Triangular { .. } => "triangular",
            Self::Bernoulli { .. } => "bernoulli",
            Self::Binomial { .. } => "binomial",
            Self::Exponential { .. } => "exponential",
            Self::Gamma { .. } => "gamma",
            Self::Poisson { .. } => "poisson",
            Self::Geometric { .. } => "geometric",
            Self::Logarithmic { .. } => "logarithmic",
        }
    }

    /// Builds a spec from a kind name and numeric arguments, validating
    /// arity and parameter domains.
    pub fn from_parts(kind: &str, args: &[f64]) -> Result<Self, DistError> {
        fn arity(kind: &'static str, args: &[f64], expected: usize) -> Result<(), DistError> {
            if args.len() == expected {
                Ok(())
            } else {
                Err(DistError::WrongArity { kind, expected, got: args.len() })
            }
        }
        let spec = match kind {
            "uniform" => {
                arity("uniform", args, 2)?;
                Self::Uniform { lo: args[0], hi: args[1] }
            }
            "normal" => {
                arity("normal", args, 2)?;
                Self::Normal { mean: args[0], sd: args[1] }
            }
            "triangular" => {
                arity("triangular", args, 3)?;
                Self::Triangular { lo: args[0], mode: args[1], hi: args[2] }
            }
            "bernoulli" => {
                arity("bernoulli", args, 1)?;
                Self::Bernoulli { p: args[0] }
            }
            "binomial" => {
                arity("binomial", args, 2)?;
                if args[0].fract() != 0.0 || args[0] < 0.0 {
                    return Err(DistError::InvalidParameters {
                        kind: "binomial",
                        reason: format!("trial count {} is not a non-negative integer", args[0]),
                    });
                }
                Self::Binomial { n: args[0] as u64, p: args[1] }
            }
            "exponential" => {
                arity("exponential", args, 1)?;
                Self::Exponential { rate: args[0] }
            }
            "gamma" => {
                arity("gamma", args, 2)?;
                Self::Gamma { shape: args[0], rate: args[1] }
            }
            "poisson" => {
                arity("poisson", args, 1)?;
                Self::Poisson { lambda: args[0] }
            }
            "geometric" => {
                arity("geometric", args, 1)?;
                Self::Geometric { p: args[0] }
            }
            "logarithmic" => {
                arity("logarithmic", args, 1)?;
                Self::Logarithmic { p: args[0] }
            }
            other => return Err(DistError::UnknownKind(other.to_string())),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Parses text of the form `kind(a, b)`.
    pub fn parse(text: &str) -> Result<Self, DistError> {
        let text = text.trim();
        let malformed = || DistError::Malformed(text.to_string());
        let open = text.find('(').ok_or_else(malformed)?;
        if !text.ends_with(')') {
            return Err(malformed());
        }
        let kind = text[..open].trim();
        let inner = &text[open + 1..text.len() - 1];
        let mut args = Vec::new();
        for part in inner.split(',') {
            let part = part.trim();
            if part.is_empty() {
                return Err(malformed());
            }
            args.push(part.parse::<f64>().map_err(|_| malformed())?);
        }
        Self::from_parts(kind, &args)
    }

    /// Checks parameter domains.
    pub fn validate(&self) -> Result<(), DistError> {
        fn bad(kind: &'static str, reason: String) -> Result<(), DistError> {
            Err(DistError::InvalidParameters { kind, reason })
        }
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        match *self {
            Self::Uniform { lo, hi } => {
                if !finite(&[lo, hi]) || lo >= hi {
                    return bad("uniform", format!("require lo < hi, got [{lo}, {hi}]"));
                }
            }
            Self::Normal { mean, sd } => {
                if !finite(&[mean, sd]) || sd <= 0.0 {
                    return bad("normal", format!("require sd > 0, got sd = {sd}"));
                }
            }
            Self::Triangular { lo, mode, hi } => {
                if !finite(&[lo, mode, hi]) || lo >= hi || mode < lo || mode > hi {
                    return bad("triangular", format!("require lo <= mode <= hi and lo < hi, got ({lo}, {mode}, {hi})"));
                }
            }
            Self::Bernoulli { p } => {
                if !finite(&[p]) || !(0.0..=1.0).contains(&p) {
                    return bad("bernoulli", format!("require 0 <= p <= 1, got {p}"));
                }
            }
            Self::Binomial { n, p } => {
                if n == 0 {
                    return bad("binomial", "require at least one trial".to_string());
                }
                if !finite(&[p]) || !(0.0..=1.0).contains(&p) {
                    return bad("binomial", format!("require 0 <= p <= 1, got {p}"));
                }
            }
            Self::Exponential { rate } => {
                if !finite(&[rate]) || rate <= 0.0 {
                    return bad("exponential", format!("require rate > 0, got {rate}"));
                }
            }
            Self::Gamma { shape, rate } => {
                if !finite(&[shape, rate]) || shape <= 0.0 || rate <= 0.0 {
                    return bad("gamma", format!("require shape > 0 and rate > 0, got ({shape}, {rate})"));
                }
            }
            Self::Poisson { lambda } => {
                if !finite(&[lambda]) || lambda <= 0.0 {
                    return bad("poisson", format!("require lambda > 0, got {lambda}"));
                }
            }
            Self::Geometric { p } => {
                if !finite(&[p]) || p <= 0.0 || p > 1.0 {
                    return bad("geometric", format!("require 0 < p <= 1, got {p}"));
                }
            }
            Self::Logarithmic { p } => {
                if !finite(&[p]) || p <= 0.0 || p >= 1.0 {
                    return bad("logarithmic", format!("require 0 < p < 1, got {p}"));
                }
            }
        }
        Ok(())
    }

    /// The u-quantile (inverse CDF) of this distribution. For discrete
    /// distributions this is the smallest support value whose CDF reaches
    /// `u`, returned as a whole-valued `f64`.
    pub fn quantile(&self, u: f64) -> f64 {
        debug_assert!((0.0..1.0).contains(&u));
        match *self {
            Self::Uniform { lo, hi } => lo + u * (hi - lo),
            Self::Normal { mean, sd } => {
                if u == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    mean + sd * normal_quantile(u)
                }
            }
            Self::Triangular { lo, mode, hi } => {
                let cut = (mode - lo) / (hi - lo);
                if u < cut {
                    lo + (u * (hi - lo) * (mode - lo)).sqrt()
                } else {
                    hi - ((1.0 - u) * (hi - lo) * (hi - mode)).sqrt()
                }
            }
            Self::Bernoulli { p } => {
                if u < 1.0 - p {
                    0.0
                } else {
                    1.0
                }
            }
            Self::Binomial { n, p } => {
                if p == 0.0 {
                    return 0.0;
                }
                if p == 1.0 {
                    return n as f64;
                }
                let ratio = p / (1.0 - p);
                let mut pmf = (1.0 - p).powi(n as i32);
                let mut cum = pmf;
                let mut k = 0u64;
                while u > cum && k < n {
                    pmf *= (n - k) as f64 / (k + 1) as f64 * ratio;
                    k += 1;
                    cum += pmf;
                }
                k as f64
            }
            Self::Exponential { rate } => -(-u).ln_1p() / rate,
            Self::Gamma { shape, rate } => {
                if u == 0.0 {
                    0.0
                } else {
                    gamma_quantile(shape, u) / rate
                }
            }
            Self::Poisson { lambda } => {
                let cap = (lambda + 20.0 * lambda.sqrt() + 100.0) as u64;
                let mut pmf = (-lambda).exp();
                let mut cum = pmf;
                let mut k = 0u64;
                while u > cum && k < cap {
                    pmf *= lambda / (k + 1) as f64;
                    k += 1;
                    cum += pmf;
                }
                k as f64
            }
            Self::Geometric { p } => {
                if p >= 1.0 {
                    return 1.0;
                }
                let k = ((-u).ln_1p() / (-p).ln_1p()).ceil();
                k.max(1.0)
            }
            Self::Logarithmic { p } => {
                let cap = 100_000u64;
                let mut pmf = -p / (-p).ln_1p();
                let mut cum = pmf;
                let mut k = 1u64;
                while u > cum && k < cap {
                    pmf *= p * k as f64 / (k + 1) as f64;
                    k += 1;
                    cum += pmf;
                }
                k as f64
            }
        }
    }

    /// Draws one sample by inversion, consuming exactly one unit draw.
    pub fn sample(&self, stream: &mut RandomStream) -> f64 {
        self.quantile(stream.next_unit())
    }

    /// Maps a raw sample onto `[0, 1]` so that samples from different
    /// distribution families are comparable as likelihood weights.
    pub fn unit_value(&self, x: f64) -> f64 {
        match *self {
            Self::Uniform { .. } | Self::Normal { .. } | Self::Triangular { .. } => {
                x.clamp(0.0, 1.0)
            }
            Self::Bernoulli { .. } => x,
            Self::Binomial { n, .. } => x / n as f64,
            Self::Exponential { .. } | Self::Gamma { .. } => x.min(1.0),
            Self::Poisson { .. } => x.min(10.0) / 10.0,
            Self::Geometric { .. } | Self::Logarithmic { .. } => 1.0 / x,
        }
    }

    /// Samples once and maps the result onto `[0, 1]` (one unit draw).
    pub fn unit_likelihood(&self, stream: &mut RandomStream) -> f64 {
        let x = self.sample(stream);
        self.unit_value(x)
    }
}

impl std::fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Self::Uniform { lo, hi } => write!(f, "uniform({lo}, {hi})"),
            Self::Normal { mean, sd } => write!(f, "normal({mean}, {sd})"),
            Self::Triangular { lo, mode, hi } => write!(f, "triangular({lo}, {mode}, {hi})"),
            Self::Bernoulli { p } => write!(f, "bernoulli({p})"),
            Self::Binomial { n, p } => write!(f, "binomial({n}, {p})"),
            Self::Exponential { rate } => write!(f, "exponential({rate})"),
            Self::Gamma { shape, rate } => write!(f, "gamma({shape}, {rate})"),
            Self::Poisson { lambda } => write!(f, "poisson({lambda})"),
            Self::Geometric { p } => write!(f, "geometric({p})"),
            Self::Logarithmic { p } => write!(f, "logarithmic({p})"),
        }
    }
}

impl std::str::FromStr for DistributionSpec {
    type Err = DistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}
