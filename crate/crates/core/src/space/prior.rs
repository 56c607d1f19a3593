//! Power-law prior over Fourier indices and its enumeration.

use std::cmp::Ordering;

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use super::fourier::FourierIndex;
use crate::error::{Error, Result};

/// Upper bound on the number of enumerated `(spatial, channel)` entries.
pub const MAX_ENTRIES: usize = 1 << 21;

/// Enumeration stops once the remaining prior mass falls below this.
pub const TAIL_MASS: f64 = 1e-9;

/// `p(i, c) = (1+‖i‖²)^(−α) / (C·Z_α)` over `ℤ^d × {0..C}`.
///
/// Entries are ranked by `(‖i‖², lexicographic i, channel)`. With
/// `tie_spread > 0`, probabilities inside a group of equal norm are spread
/// linearly around the group value (largest for the first-ranked member)
/// by at most `tie_spread` times the gap to the neighbouring groups, so the
/// weights become strictly decreasing along the ranking while each group
/// keeps its total mass and `Z_α` is unchanged.
#[derive(Debug, Clone)]
pub struct IndexPrior {
    dim: usize,
    channels: usize,
    alpha: f64,
    tie_spread: f64,
    z: f64,
    spatial: Vec<i32>,
    norm2: Vec<i64>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl IndexPrior {
    pub fn new(dim: usize, channels: usize, alpha: f64, tie_spread: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Config(format!("index prior supports d = 1 or 2, got {dim}")));
        }
        if channels == 0 {
            return Err(Error::Config("index prior needs at least one channel".into()));
        }
        if !(alpha > dim as f64 / 2.0) {
            return Err(Error::Config(format!(
                "prior exponent alpha = {alpha} must exceed d/2 = {} (the partition sum diverges otherwise)",
                dim as f64 / 2.0
            )));
        }
        if !(0.0..0.5).contains(&tie_spread) {
            return Err(Error::Config(format!("tie_spread must lie in [0, 0.5), got {tie_spread}")));
        }
        let z = partition_function(dim, alpha);
        let radius = enumeration_radius(dim, channels, alpha, z);

        let r = radius as i32;
        let r2 = (radius * radius) as i64;
        // (‖k‖², k₁, k₂) sorts exactly as the ranking; k₂ = 0 pads d = 1
        let mut keys: Vec<(i64, i32, i32)> = Vec::new();
        if dim == 1 {
            keys.extend((-r..=r).map(|k| ((k as i64).pow(2), k, 0)));
        } else {
            for a in -r..=r {
                for b in -r..=r {
                    let n2 = (a as i64).pow(2) + (b as i64).pow(2);
                    if n2 <= r2 {
                        keys.push((n2, a, b));
                    }
                }
            }
        }
        keys.sort_unstable();
        let norm2: Vec<i64> = keys.iter().map(|k| k.0).collect();
        let spatial: Vec<i32> = keys
            .iter()
            .flat_map(|&(_, a, b)| [a, b].into_iter().take(dim))
            .collect();
        drop(keys);

        let base = |n2: i64| (1.0 + n2 as f64).powf(-alpha) / (channels as f64 * z);
        // group boundaries over spatial entries
        let mut groups: Vec<(usize, usize, f64)> = Vec::new();
        let mut start = 0;
        for s in 1..=norm2.len() {
            if s == norm2.len() || norm2[s] != norm2[start] {
                groups.push((start, s, base(norm2[start])));
                start = s;
            }
        }
        let mut weights = Vec::with_capacity(norm2.len() * channels);
        for (g, &(lo, hi, b)) in groups.iter().enumerate() {
            let size = (hi - lo) * channels;
            let gap_above = if g > 0 { groups[g - 1].2 - b } else { f64::INFINITY };
            let gap_below = groups.get(g + 1).map_or(f64::INFINITY, |n| b - n.2);
            let gap = gap_above.min(gap_below);
            for pos in 0..size {
                let w = if size > 1 && tie_spread > 0.0 && gap.is_finite() {
                    let t = (size - 1) as f64 - 2.0 * pos as f64;
                    b + tie_spread * gap * t / (size - 1) as f64
                } else {
                    b
                };
                weights.push(w);
            }
        }
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        Ok(Self {
            dim,
            channels,
            alpha,
            tie_spread,
            z,
            spatial,
            norm2,
            weights,
            cumulative,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tie_spread(&self) -> f64 {
        self.tie_spread
    }

    /// Spatial partition function `Z_α = Σ_{k∈ℤ^d} (1+‖k‖²)^(−α)`.
    pub fn partition(&self) -> f64 {
        self.z
    }

    /// Number of enumerated entries.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Prior mass not covered by the enumeration.
    pub fn truncated_mass(&self) -> f64 {
        1.0 - self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// The index ranked `entry`-th (zero-based).
    pub fn index_at(&self, entry: usize) -> FourierIndex {
        let s = entry / self.channels;
        FourierIndex {
            spatial: self.spatial[s * self.dim..(s + 1) * self.dim].to_vec(),
            channel: entry % self.channels,
        }
    }

    pub fn weight_at(&self, entry: usize) -> f64 {
        self.weights[entry]
    }

    /// The first `n` indices in ranking order.
    pub fn first(&self, n: usize) -> Vec<FourierIndex> {
        (0..n.min(self.len())).map(|e| self.index_at(e)).collect()
    }

    /// Position of `idx` in the ranking, if it was enumerated.
    pub fn rank(&self, idx: &FourierIndex) -> Option<usize> {
        if idx.dim() != self.dim || idx.channel >= self.channels {
            return None;
        }
        let n2 = idx.norm2();
        let n = self.norm2.len();
        let (mut lo, mut hi) = (0, n);
        while lo < hi {
            let mid = (lo + hi) / 2;
            let key = &self.spatial[mid * self.dim..(mid + 1) * self.dim];
            let ord = self.norm2[mid].cmp(&n2).then_with(|| key.cmp(&idx.spatial[..]));
            match ord {
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
                Ordering::Equal => return Some(mid * self.channels + idx.channel),
            }
        }
        None
    }

    /// `p(idx)`.
    pub fn probability(&self, idx: &FourierIndex) -> Result<f64> {
        if idx.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: idx.dim(),
            });
        }
        if idx.channel >= self.channels {
            return Err(Error::Dimension {
                expected: self.channels,
                got: idx.channel + 1,
            });
        }
        Ok(match self.rank(idx) {
            Some(e) => self.weights[e],
            None => (1.0 + idx.norm2() as f64).powf(-self.alpha) / (self.channels as f64 * self.z),
        })
    }

    /// Number of leading entries with `p ≥ tau`.
    pub fn stratum_len(&self, tau: f64) -> Result<usize> {
        if !(tau > 0.0) {
            return Err(Error::Config(format!("stratum threshold tau must be positive, got {tau}")));
        }
        let n = self.weights.partition_point(|&w| w >= tau);
        if n == self.weights.len() {
            return Err(Error::Config(format!("stratum threshold tau = {tau} exceeds the enumeration")));
        }
        Ok(n)
    }

    /// Inverse-CDF draw over the ranked enumeration.
    pub fn sample_entry<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty enumeration");
        let u = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.len() - 1)
    }
}

/// Radius needed so the mass outside is below [`TAIL_MASS`], capped so the
/// enumeration stays within [`MAX_ENTRIES`].
fn enumeration_radius(dim: usize, channels: usize, alpha: f64, z: f64) -> usize {
    let cap = MAX_ENTRIES / channels;
    let (needed, capped) = if dim == 1 {
        let e = 2.0 * alpha - 1.0;
        ((2.0 / (e * z * TAIL_MASS)).powf(1.0 / e), (cap / 2) as f64)
    } else {
        let e = 2.0 * alpha - 2.0;
        (
            (2.0 * std::f64::consts::PI / (e * z * TAIL_MASS)).powf(1.0 / e),
            (cap as f64 / std::f64::consts::PI).sqrt(),
        )
    };
    needed.min(capped).ceil().max(2.0) as usize
}

/// `Σ_{k∈ℤ} (1+k²)^(−α)` summed exactly for `|k| ≤ 10⁶` plus the integral tail.
pub fn lattice_sum_1d(alpha: f64) -> f64 {
    shifted_lattice_sum(1.0, alpha, 1_000_000)
}

/// `Σ_{k∈ℤ} (a+k²)^(−α)`: exact for `|k| ≤ n`, asymptotic integral beyond.
fn shifted_lattice_sum(a: f64, alpha: f64, n: usize) -> f64 {
    let mut s = 0.0;
    for k in (1..=n).rev() {
        let k = k as f64;
        s += (a + k * k).powf(-alpha);
    }
    // ∫_{n+½}^∞ (a+x²)^(−α) dx, expanded in a/x²
    let b = n as f64 + 0.5;
    let tail = b.powf(1.0 - 2.0 * alpha) / (2.0 * alpha - 1.0)
        - alpha * a * b.powf(-1.0 - 2.0 * alpha) / (2.0 * alpha + 1.0)
        + 0.5 * alpha * (alpha + 1.0) * a * a * b.powf(-3.0 - 2.0 * alpha) / (2.0 * alpha + 3.0);
    a.powf(-alpha) + 2.0 * (s + tail)
}

/// `Z_α` for `d ∈ {1, 2}`.
///
/// In two dimensions the rows `|k₁| > 8` use `Σ_{k₂}(a+k₂²)^(−α) ≈
/// B(½, α−½)·a^(½−α)`, whose Poisson-summation error is `O(e^{−2π√a})`.
pub fn partition_function(dim: usize, alpha: f64) -> f64 {
    match dim {
        1 => lattice_sum_1d(alpha),
        2 => {
            const NEAR: i64 = 8;
            let beta = (ln_gamma(0.5) + ln_gamma(alpha - 0.5) - ln_gamma(alpha)).exp();
            let mut near = 0.0;
            let mut near_closed = 0.0;
            for k1 in -NEAR..=NEAR {
                let a = 1.0 + (k1 * k1) as f64;
                near += shifted_lattice_sum(a, alpha, 100_000);
                near_closed += a.powf(0.5 - alpha);
            }
            near + beta * (lattice_sum_1d(alpha - 0.5) - near_closed)
        }
        _ => f64::NAN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn partition_function_matches_closed_form() {
        // Σ (1+k²)^{-1} = π coth π
        let pi = std::f64::consts::PI;
        let exact = pi / pi.tanh();
        assert!((lattice_sum_1d(1.0) - exact).abs() < 1e-9);
        assert!((lattice_sum_1d(1.0) - 3.153348).abs() < 1e-4);
    }

    #[test]
    fn partition_function_2d_matches_brute_force() {
        let alpha = 2.0;
        let r = 1500i64;
        let mut brute = 0.0;
        for a in -r..=r {
            for b in -r..=r {
                brute += (1.0 + (a * a + b * b) as f64).powf(-alpha);
            }
        }
        // remaining tail ≈ ∫ outside the square, below 2π/(2R²)
        let z = partition_function(2, alpha);
        assert!(z > brute && z - brute < 2e-6, "z={z} brute={brute}");
    }

    #[test]
    fn ranking_ties_broken_lexicographically() {
        let p = IndexPrior::new(1, 1, 1.5, 0.0).unwrap();
        let first: Vec<i32> = p.first(5).iter().map(|i| i.spatial[0]).collect();
        assert_eq!(first, vec![0, -1, 1, -2, 2]);
        let p2 = IndexPrior::new(2, 1, 2.0, 0.0).unwrap();
        let first: Vec<Vec<i32>> = p2.first(5).into_iter().map(|i| i.spatial).collect();
        assert_eq!(first, vec![vec![0, 0], vec![-1, 0], vec![0, -1], vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn exact_power_law_without_spread() {
        let p = IndexPrior::new(1, 2, 1.5, 0.0).unwrap();
        let z = p.partition();
        let pr = p.probability(&FourierIndex::new(vec![3], 1)).unwrap();
        assert!((pr - 10f64.powf(-1.5) / (2.0 * z)).abs() < 1e-15);
        // outside the enumeration the closed form is used
        let far = p.probability(&FourierIndex::new(vec![10_000_000], 0)).unwrap();
        assert!(far > 0.0);
    }

    #[test]
    fn dc_is_most_probable() {
        let p = IndexPrior::new(2, 1, 2.0, 0.25).unwrap();
        let dc = p.probability(&FourierIndex::scalar(vec![0, 0])).unwrap();
        assert!((1..200).all(|e| p.weight_at(e) < dc));
    }

    #[test]
    fn spread_keeps_mass_and_orders_strictly() {
        let flat = IndexPrior::new(1, 1, 1.5, 0.0).unwrap();
        let spread = IndexPrior::new(1, 1, 1.5, 0.25).unwrap();
        assert!((flat.truncated_mass() - spread.truncated_mass()).abs() < 1e-12);
        for e in 1..1000 {
            assert!(spread.weight_at(e) < spread.weight_at(e - 1));
        }
    }

    #[test]
    fn enumeration_covers_all_but_tiny_mass() {
        let p = IndexPrior::new(1, 1, 1.5, 0.0).unwrap();
        assert!(p.truncated_mass().abs() < 2e-9, "{}", p.truncated_mass());
        let p2 = IndexPrior::new(2, 1, 2.0, 0.0).unwrap();
        assert!(p2.truncated_mass() < 1e-5 && p2.truncated_mass() > -1e-9);
    }

    #[test]
    fn rank_roundtrip() {
        let p = IndexPrior::new(2, 3, 2.0, 0.0).unwrap();
        for e in [0, 1, 2, 17, 500, 9999] {
            assert_eq!(p.rank(&p.index_at(e)), Some(e));
        }
    }

    #[test]
    fn invalid_configurations() {
        assert!(matches!(IndexPrior::new(1, 1, 0.5, 0.0), Err(Error::Config(_))));
        assert!(matches!(IndexPrior::new(2, 1, 1.0, 0.0), Err(Error::Config(_))));
        let p = IndexPrior::new(1, 1, 1.5, 0.0).unwrap();
        assert!(p.stratum_len(0.0).is_err());
        assert!(p.stratum_len(-1.0).is_err());
    }

    #[test]
    fn stratum_for_one_dimensional_table_setting() {
        let p = IndexPrior::new(1, 1, 1.5, 0.0).unwrap();
        let n = p.stratum_len(1e-3).unwrap();
        for e in 0..n {
            assert!(p.weight_at(e) >= 1e-3);
        }
        assert!(p.weight_at(n) < 1e-3);
        // symmetric pairs: stratum is {0} ∪ {±1..±K}
        assert_eq!(n % 2, 1);
    }

    #[test]
    fn sampling_follows_prior() {
        let p = IndexPrior::new(1, 1, 1.5, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let zero = (0..n).filter(|_| p.sample_entry(&mut rng) == 0).count();
        let expect = p.weight_at(0);
        let se = (expect * (1.0 - expect) / n as f64).sqrt();
        assert!(((zero as f64 / n as f64) - expect).abs() < 4.0 * se);
    }
}
