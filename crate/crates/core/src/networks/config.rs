use serde::{Deserialize, Serialize};

use crate::error::TensorError;

/// Layer widths and sizes of all three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Latent dimension M.
    pub latent_dim: usize,
    /// Points per cloud P.
    pub point_count: usize,
    /// Shared per-point MLP widths after the 3-d input; the last is the
    /// global feature size.
    pub encoder_widths: Vec<usize>,
    /// Hidden widths of the generator between M and 3·P.
    pub generator_widths: Vec<usize>,
    /// Hidden widths of the forward decoder between the global feature and
    /// the grid.
    pub forward_widths: Vec<usize>,
    /// CNN output channels per stride-2 layer (input has 1 channel).
    pub cnn_channels: Vec<usize>,
    pub cnn_kernel: usize,
    /// Width of the affine layer after the CNN flatten.
    pub inverse_feature_dim: usize,
    pub n_lat: usize,
    pub n_lon: usize,
    pub leaky_slope: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            latent_dim: 64,
            point_count: 2048,
            encoder_widths: vec![64, 128, 1024],
            generator_widths: vec![256, 512, 1024],
            forward_widths: vec![1024, 2048],
            cnn_channels: vec![16, 32, 64, 128],
            cnn_kernel: 3,
            inverse_feature_dim: 1024,
            n_lat: 51,
            n_lon: 101,
            leaky_slope: 1e-2,
        }
    }
}

impl NetworkConfig {
    /// Desk-scale configuration used by tests and the acceptance runs.
    pub fn toy() -> Self {
        NetworkConfig {
            latent_dim: 16,
            point_count: 256,
            encoder_widths: vec![32, 64, 256],
            generator_widths: vec![64, 128, 512],
            forward_widths: vec![256, 512],
            cnn_channels: vec![8, 16, 32, 64],
            cnn_kernel: 3,
            inverse_feature_dim: 128,
            n_lat: 13,
            n_lon: 25,
            leaky_slope: 1e-2,
        }
    }

    pub fn grid_len(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn feature_dim(&self) -> usize {
        *self.encoder_widths.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |msg: String| Err(TensorError::invalid("network config", msg));
        if self.latent_dim == 0 || self.point_count == 0 || self.inverse_feature_dim == 0 {
            return bad("latent_dim, point_count and inverse_feature_dim must be positive".into());
        }
        for (name, w) in [
            ("encoder_widths", &self.encoder_widths),
            ("generator_widths", &self.generator_widths),
            ("forward_widths", &self.forward_widths),
            ("cnn_channels", &self.cnn_channels),
        ] {
            if w.is_empty() && name != "forward_widths" && name != "generator_widths" {
                return bad(format!("{name} must not be empty"));
            }
            if w.contains(&0) {
                return bad(format!("{name} contains a zero width"));
            }
        }
        if self.cnn_kernel == 0 || self.cnn_kernel % 2 == 0 {
            return bad(format!("cnn_kernel must be odd, got {}", self.cnn_kernel));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky_slope must be in [0, 1), got {}", self.leaky_slope));
        }
        self.cnn_plan()?;
        Ok(())
    }

    /// Per-layer `(pad_h, pad_w)` and output sizes of the stride-2 CNN.
    ///
    /// The first layer pads each axis so its output has the form 2^j + 1;
    /// later layers pad by k/2, which maps 2^j + 1 to 2^(j−1) + 1 and keeps
    /// every division exact.
    pub fn cnn_plan(&self) -> Result<Vec<CnnLayer>, TensorError> {
        let k = self.cnn_kernel;
        let first_pad = |n: usize| -> Result<usize, TensorError> {
            if n % 2 == 0 {
                return Err(TensorError::invalid(
                    "network config",
                    format!("stride-2 CNN needs odd grid sizes, got {n}"),
                ));
            }
            let natural = (n + 2 * (k / 2) - k) / 2 + 1;
            let mut target = 2;
            while target + 1 < natural {
                target *= 2;
            }
            let target = target + 1;
            // (n + 2p − k)/2 + 1 = target
            Ok((2 * (target - 1) + k - n).div_ceil(2))
        };
        let mut layers = Vec::with_capacity(self.cnn_channels.len());
        let (mut h, mut w) = (self.n_lat, self.n_lon);
        let mut c_in = 1;
        for (i, &c_out) in self.cnn_channels.iter().enumerate() {
            let pad = if i == 0 {
                (first_pad(h)?, first_pad(w)?)
            } else {
                (k / 2, k / 2)
            };
            let out = |n: usize, p: usize| -> Result<usize, TensorError> {
                let span = n + 2 * p;
                if span < k || (span - k) % 2 != 0 {
                    return Err(TensorError::invalid(
                        "network config",
                        format!("CNN layer {i} has non-integral output for size {n}"),
                    ));
                }
                Ok((span - k) / 2 + 1)
            };
            let (ho, wo) = (out(h, pad.0)?, out(w, pad.1)?);
            layers.push(CnnLayer {
                c_in,
                c_out,
                pad,
                h_in: h,
                w_in: w,
                h_out: ho,
                w_out: wo,
            });
            h = ho;
            w = wo;
            c_in = c_out;
        }
        Ok(layers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub pad: (usize, usize),
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_plan_sizes() {
        let plan = NetworkConfig::toy().cnn_plan().unwrap();
        let sizes: Vec<(usize, usize)> = plan.iter().map(|l| (l.h_out, l.w_out)).collect();
        assert_eq!(sizes, vec![(9, 17), (5, 9), (3, 5), (2, 3)]);
        assert_eq!(plan[0].pad, (3, 5));
    }

    #[test]
    fn full_size_grid_plan() {
        let plan = NetworkConfig::default().cnn_plan().unwrap();
        let sizes: Vec<(usize, usize)> = plan.iter().map(|l| (l.h_out, l.w_out)).collect();
        assert_eq!(sizes, vec![(33, 65), (17, 33), (9, 17), (5, 9)]);
    }

    #[test]
    fn validation() {
        assert!(NetworkConfig::default().validate().is_ok());
        assert!(NetworkConfig::toy().validate().is_ok());
        let even = NetworkConfig {
            n_lat: 12,
            ..NetworkConfig::toy()
        };
        assert!(even.validate().is_err());
        let zero = NetworkConfig {
            latent_dim: 0,
            ..NetworkConfig::toy()
        };
        assert!(zero.validate().is_err());
    }
}
