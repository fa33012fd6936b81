//! Multi-branch decoder: `x̂ = Σ_{k≤K} g_k · F_k(ŷ)`.

use rand::Rng;

use crate::codec::nets::init_decoder;
use crate::error::{Error, Result};
use crate::nn::{FeatureMap, Sequential};

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub net: Sequential,
    pub g: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cam {
    pub branches: Vec<Branch>,
}

/// Initial branch weight: the first branch carries the image, later ones start as small corrections.
pub fn initial_g(k: usize) -> f32 {
    if k == 0 {
        1.0
    } else {
        0.1
    }
}

impl Cam {
    pub fn init(latent_channels: usize, widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let branches = widths
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                Ok(Branch {
                    net: init_decoder(latent_channels, t, if k == 0 { 0.5 } else { 0.0 }, rng)?,
                    g: initial_g(k),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { branches })
    }

    pub fn k_max(&self) -> usize {
        self.branches.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.branches
            .iter()
            .map(|b| b.net.specs()[0].out_channels)
            .collect()
    }

    pub fn check_branches(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.k_max() {
            return Err(Error::BranchesOutOfRange {
                got: k,
                max: self.k_max(),
            });
        }
        Ok(())
    }

    /// Scaled output `g_k · F_k(ŷ)` of branch `k` (0-based).
    pub fn branch_output(&self, k: usize, y_hat: &FeatureMap) -> Result<FeatureMap> {
        let b = &self.branches[k];
        let mut out = b.net.forward(y_hat)?;
        out.scale(b.g);
        Ok(out)
    }

    /// Sum of the first `k` scaled branch outputs, accumulated in branch order.
    pub fn decode(&self, y_hat: &FeatureMap, k: usize) -> Result<FeatureMap> {
        self.check_branches(k)?;
        let mut acc = self.branch_output(0, y_hat)?;
        for i in 1..k {
            acc.add_scaled(&self.branch_output(i, y_hat)?, 1.0)?;
        }
        Ok(acc)
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().map(|b| b.net.param_count() + 1).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cam() -> Cam {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Cam::init(4, &[3, 3, 5], &mut rng).unwrap()
    }

    fn latent() -> FeatureMap {
        FeatureMap::from_fn(4, 2, 3, |c, i, j| ((c * 6 + i * 3 + j) as f32).sin() * 4.0)
    }

    #[test]
    fn single_branch_is_scaled_first_branch() {
        let mut cam = cam();
        cam.branches[0].g = 0.75;
        let y = latent();
        let mut want = cam.branches[0].net.forward(&y).unwrap();
        want.scale(0.75);
        assert_eq!(cam.decode(&y, 1).unwrap(), want);
    }

    #[test]
    fn prefix_property_is_exact() {
        let cam = cam();
        let y = latent();
        for k in 1..cam.k_max() {
            let mut lhs = cam.decode(&y, k).unwrap();
            lhs.add_scaled(&cam.branch_output(k, &y).unwrap(), 1.0).unwrap();
            assert_eq!(lhs, cam.decode(&y, k + 1).unwrap());
        }
    }

    #[test]
    fn branch_count_bounds() {
        let cam = cam();
        assert_eq!(cam.decode(&latent(), 1).unwrap().shape(), (3, 32, 48));
        assert!(matches!(
            cam.decode(&latent(), 4),
            Err(Error::BranchesOutOfRange { got: 4, max: 3 })
        ));
        assert!(cam.decode(&latent(), 0).is_err());
        assert_eq!(cam.widths(), vec![3, 3, 5]);
    }
}
