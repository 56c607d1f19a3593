use rand::Rng;

use crate::error::{Error, Result};

/// Knots `0 = t₀ < t₁ < … < t_L = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots[0] != 0.0 || *knots.last().expect("non-empty") != 1.0 {
            return Err(Error::Config("time grid must start at 0 and end at 1".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("time grid must be strictly increasing".into()));
        }
        Ok(Self { knots })
    }

    pub fn uniform(steps: usize) -> Self {
        assert!(steps > 0, "a grid needs at least one step");
        let mut knots: Vec<f64> = (0..=steps).map(|l| l as f64 / steps as f64).collect();
        knots[steps] = 1.0;
        Self { knots }
    }

    /// `steps − 1` sorted uniform interior knots, redrawn on collision.
    pub fn random<R: Rng + ?Sized>(steps: usize, rng: &mut R) -> Self {
        assert!(steps > 0, "a grid needs at least one step");
        loop {
            let mut interior: Vec<f64> = (1..steps).map(|_| rng.random::<f64>()).collect();
            interior.sort_by(f64::total_cmp);
            let mut knots = Vec::with_capacity(steps + 1);
            knots.push(0.0);
            knots.extend(interior);
            knots.push(1.0);
            if knots.windows(2).all(|w| w[1] > w[0]) {
                return Self { knots };
            }
        }
    }

    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// `(t_mid, Δt)` of step `l`.
    pub fn step(&self, l: usize) -> (f64, f64) {
        let dt = self.knots[l + 1] - self.knots[l];
        (self.knots[l] + 0.5 * dt, dt)
    }

}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_grid() {
        let g = TimeGrid::uniform(4);
        assert_eq!(g.knots(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.step(1), (0.375, 0.25));
    }

    #[test]
    fn random_grid_is_sorted_and_covers() {
        let g = TimeGrid::random(16, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(g.steps(), 16);
        assert_eq!(g.knots()[0], 0.0);
        assert_eq!(g.knots()[16], 1.0);
        assert!(g.knots().windows(2).all(|w| w[1] > w[0]));
        let total: f64 = (0..16).map(|l| g.step(l).1).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(TimeGrid::from_knots(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::from_knots(vec![0.1, 1.0]).is_err());
    }
}
