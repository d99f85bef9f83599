//! Maps normalized frames to the token space the transformer works in.
//!
//! The default codec is the trained VAE. The window codec flattens each run
//! of `l` raw frames into one token; it backs the ablations that drop the
//! autoencoder.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vae::{LatentPosterior, MotionVae, LOG_VAR_RANGE};

#[derive(Debug, Clone)]
pub enum MotionCodec {
    Vae(MotionVae),
    Windows { d: usize, frames_per_token: usize },
}

impl MotionCodec {
    pub fn d(&self) -> usize {
        match self {
            MotionCodec::Vae(v) => v.config.d,
            MotionCodec::Windows { d, .. } => *d,
        }
    }

    pub fn downsample_factor(&self) -> usize {
        match self {
            MotionCodec::Vae(v) => v.downsample_factor(),
            MotionCodec::Windows { frames_per_token, .. } => *frames_per_token,
        }
    }

    pub fn latent_width(&self) -> usize {
        match self {
            MotionCodec::Vae(v) => v.latent_width(),
            MotionCodec::Windows { d, frames_per_token } => d * frames_per_token,
        }
    }

    pub fn tokens_for(&self, frames: usize) -> Result<usize> {
        let l = self.downsample_factor();
        if frames < l {
            return Err(Error::SequenceTooShort { frames, factor: l });
        }
        Ok(frames / l)
    }

    fn check_frames(&self, frames: &Tensor) -> Result<usize> {
        if frames.cols() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                found: frames.cols(),
            });
        }
        self.tokens_for(frames.rows())
    }

    /// Posterior over tokens; the window codec reports the minimum variance.
    pub fn posterior(&self, frames: &Tensor) -> Result<LatentPosterior> {
        match self {
            MotionCodec::Vae(v) => v.encode(frames),
            MotionCodec::Windows { .. } => {
                let mu = self.encode_mean(frames)?;
                let log_var = Tensor::full(mu.rows(), mu.cols(), LOG_VAR_RANGE.0);
                Ok(LatentPosterior { mu, log_var })
            }
        }
    }

    pub fn encode_mean(&self, frames: &Tensor) -> Result<Tensor> {
        let n = self.check_frames(frames)?;
        match self {
            MotionCodec::Vae(v) => Ok(v.encode(frames)?.mu),
            MotionCodec::Windows { .. } => {
                let l = self.downsample_factor();
                frames.slice_rows(0, n * l).reshape(n, self.latent_width())
            }
        }
    }

    /// Normalized frames, `N * l` rows.
    pub fn decode(&self, tokens: &Tensor) -> Result<Tensor> {
        match self {
            MotionCodec::Vae(v) => v.decode(tokens),
            MotionCodec::Windows { d, frames_per_token } => {
                if tokens.cols() != self.latent_width() {
                    return Err(Error::DimensionMismatch {
                        expected: self.latent_width(),
                        found: tokens.cols(),
                    });
                }
                tokens.clone().reshape(tokens.rows() * frames_per_token, *d)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_tensor, stream, Stream};

    #[test]
    fn window_codec_round_trips() {
        let codec = MotionCodec::Windows { d: 3, frames_per_token: 4 };
        let x = normal_tensor(&mut stream(1, Stream::Init, 0, 0), 10, 3);
        let z = codec.encode_mean(&x).unwrap();
        assert_eq!(z.shape(), (2, 12));
        assert_eq!(codec.decode(&z).unwrap(), x.slice_rows(0, 8));
        assert!(codec.encode_mean(&x.slice_rows(0, 3)).is_err());
    }
}
