use rand::Rng;

use super::fbank::Features;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecAugConfig {
    pub num_t_masks: usize,
    pub max_t: usize,
    pub num_f_masks: usize,
    pub max_f: usize,
}

impl Default for SpecAugConfig {
    fn default() -> Self {
        Self {
            num_t_masks: 1,
            max_t: 10,
            num_f_masks: 1,
            max_f: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAxis {
    Time,
    Freq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mask {
    pub axis: MaskAxis,
    pub start: usize,
    pub width: usize,
}

/// Draws masks: width uniform in `1..=min(cap, dim)`, start uniform over all
/// positions where the mask fits.
pub fn draw_masks<R: Rng>(frames: usize, bins: usize, cfg: &SpecAugConfig, rng: &mut R) -> Vec<Mask> {
    let mut masks = Vec::new();
    let mut draw = |axis, count: usize, cap: usize, dim: usize, rng: &mut R| {
        let cap = cap.min(dim);
        if cap == 0 {
            return;
        }
        for _ in 0..count {
            let width = rng.gen_range(1..=cap);
            let start = rng.gen_range(0..=dim - width);
            masks.push(Mask { axis, start, width });
        }
    };
    draw(MaskAxis::Time, cfg.num_t_masks, cfg.max_t, frames, rng);
    draw(MaskAxis::Freq, cfg.num_f_masks, cfg.max_f, bins, rng);
    masks
}

/// Zeroes the masked rows (time) or columns (frequency).
pub fn apply_masks(mut feats: Features, masks: &[Mask]) -> Features {
    for m in masks {
        match m.axis {
            MaskAxis::Time => {
                let end = (m.start + m.width).min(feats.nrows());
                for r in m.start.min(end)..end {
                    feats.row_mut(r).fill(0.0);
                }
            }
            MaskAxis::Freq => {
                let end = (m.start + m.width).min(feats.ncols());
                for c in m.start.min(end)..end {
                    feats.column_mut(c).fill(0.0);
                }
            }
        }
    }
    feats
}

pub fn spec_augment<R: Rng>(feats: Features, cfg: &SpecAugConfig, rng: &mut R) -> Features {
    let masks = draw_masks(feats.nrows(), feats.ncols(), cfg, rng);
    apply_masks(feats, &masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn ones() -> Features {
        DMatrix::from_element(100, 80, 1.0)
    }

    #[test]
    fn no_masks_is_identity() {
        let cfg = SpecAugConfig {
            num_t_masks: 0,
            max_t: 10,
            num_f_masks: 0,
            max_f: 10,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(spec_augment(ones(), &cfg, &mut rng), ones());
    }

    #[test]
    fn single_time_mask_zeroes_exact_rows() {
        let out = apply_masks(
            ones(),
            &[Mask {
                axis: MaskAxis::Time,
                start: 17,
                width: 5,
            }],
        );
        let zero_rows = out.row_iter().filter(|r| r.iter().all(|&v| v == 0.0)).count();
        assert_eq!(zero_rows, 5);
        assert_eq!(out.iter().filter(|&&v| v == 0.0).count(), 5 * 80);
    }

    #[test]
    fn zeroed_cells_bounded_by_caps() {
        let cfg = SpecAugConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let out = spec_augment(ones(), &cfg, &mut rng);
            let zeros = out.iter().filter(|&&v| v == 0.0).count();
            assert!(zeros <= cfg.num_t_masks * cfg.max_t * 80 + cfg.num_f_masks * cfg.max_f * 100);
            assert!(zeros > 0);
        }
    }

    #[test]
    fn placement_is_uniform() {
        let cfg = SpecAugConfig {
            num_t_masks: 1,
            max_t: 1,
            num_f_masks: 0,
            max_f: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut hist = vec![0f64; 100];
        let trials = 10_000;
        for _ in 0..trials {
            let m = draw_masks(100, 80, &cfg, &mut rng);
            hist[m[0].start] += 1.0;
        }
        let expected = trials as f64 / 100.0;
        let chi2: f64 = hist.iter().map(|h| (h - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(99.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "p = {p}");
    }
}
