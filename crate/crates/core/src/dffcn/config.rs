use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// VGG-16 encoder layout with the full-width bottleneck and four
    /// decoder stages.
    Full,
    /// Reduced network of the same topology family for CPU training.
    Tiny,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "tiny" => Ok(Profile::Tiny),
            _ => Err(Error::InvalidArgument(format!("unknown profile {s:?}"))),
        }
    }
}

/// One upsampling stage: transposed convolution, skip summation, then a
/// convolution with ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderStage {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub profile: Profile,
    /// Convolution widths per encoder stage; every stage ends in a 2x2 max
    /// pool.
    pub stage_widths: Vec<Vec<usize>>,
    pub bottleneck_widths: [usize; 3],
    pub bottleneck_kernels: [usize; 3],
    pub decoder: Vec<DecoderStage>,
    /// Kernel of the convolution following each transposed convolution.
    pub decoder_conv_kernel: usize,
    /// Channels of the fused feature layer (the last decoder stage output).
    pub feature_channels: usize,
    /// Kernel size of the 3D fusion head.
    pub head_kernel: usize,
    /// Drop probability after the first two bottleneck convolutions.
    pub p_drop: f64,
    pub gap_d: usize,
}

pub const INPUT_CHANNELS: usize = 3;
pub const MAX_GAP: usize = 5;

impl NetConfig {
    /// VGG-16 widths, bottleneck 1024/1024/2, decoder masks 2,2,2,4.
    ///
    /// `p_drop` is 0.85 here; read as a keep probability instead, the same
    /// figure corresponds to `p_drop = 0.15`.
    pub fn full() -> Self {
        Self {
            profile: Profile::Full,
            stage_widths: vec![
                vec![64, 64],
                vec![128, 128],
                vec![256, 256, 256],
                vec![512, 512, 512],
                vec![512, 512, 512],
            ],
            bottleneck_widths: [1024, 1024, 2],
            bottleneck_kernels: [3, 1, 1],
            decoder: vec![
                DecoderStage { kernel: 2, stride: 2, channels: 512 },
                DecoderStage { kernel: 2, stride: 2, channels: 256 },
                DecoderStage { kernel: 2, stride: 2, channels: 128 },
                DecoderStage { kernel: 4, stride: 4, channels: 64 },
            ],
            decoder_conv_kernel: 3,
            feature_channels: 64,
            head_kernel: 3,
            p_drop: 0.85,
            gap_d: 3,
        }
    }

    pub fn tiny() -> Self {
        Self {
            profile: Profile::Tiny,
            stage_widths: vec![vec![8, 8], vec![16, 16]],
            bottleneck_widths: [32, 32, 2],
            bottleneck_kernels: [3, 1, 1],
            decoder: vec![
                DecoderStage { kernel: 2, stride: 2, channels: 16 },
                DecoderStage { kernel: 2, stride: 2, channels: 16 },
            ],
            decoder_conv_kernel: 3,
            feature_channels: 16,
            head_kernel: 3,
            p_drop: 0.15,
            gap_d: 3,
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Full => Self::full(),
            Profile::Tiny => Self::tiny(),
        }
    }

    pub fn num_pools(&self) -> usize {
        self.stage_widths.len()
    }

    /// Total downsampling factor of the encoder.
    pub fn downsampling(&self) -> usize {
        1 << self.num_pools()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.stage_widths.is_empty() || self.stage_widths.iter().any(|s| s.is_empty() || s.contains(&0)) {
            return bad("every encoder stage needs at least one non-zero width".into());
        }
        if self.bottleneck_widths[2] != 2 {
            return bad("the bottleneck must end in 2 class channels".into());
        }
        if self.bottleneck_kernels.iter().chain([&self.decoder_conv_kernel, &self.head_kernel]).any(|k| k % 2 == 0) {
            return bad("convolution kernels must be odd".into());
        }
        let up: usize = self.decoder.iter().map(|s| s.stride).product();
        if up != self.downsampling() {
            return bad(format!("decoder upsamples by {up}, encoder downsamples by {}", self.downsampling()));
        }
        if self.decoder.iter().any(|s| s.stride == 0 || s.kernel < s.stride || s.channels == 0) {
            return bad("decoder stages need kernel >= stride >= 1 and non-zero width".into());
        }
        if self.decoder.last().map(|s| s.channels) != Some(self.feature_channels) {
            return bad("the last decoder stage width must equal feature_channels".into());
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return bad(format!("p_drop {} outside [0, 1)", self.p_drop));
        }
        if self.gap_d > MAX_GAP {
            return bad(format!("gap d={} outside [0, {MAX_GAP}]", self.gap_d));
        }
        Ok(())
    }

    /// Image side lengths must survive every max pool.
    pub fn check_input_size(&self, size: usize) -> Result<()> {
        let f = self.downsampling();
        if size == 0 || !size.is_multiple_of(f) {
            return Err(Error::Shape(format!(
                "input size {size} is not divisible by 2^{} = {f} (one factor per max pool)",
                self.num_pools()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_valid() {
        NetConfig::tiny().validate().unwrap();
        let p = NetConfig::full();
        p.validate().unwrap();
        assert_eq!(p.bottleneck_widths, [1024, 1024, 2]);
        assert_eq!(p.num_pools(), 5);
        assert_eq!(p.stage_widths.iter().map(Vec::len).sum::<usize>(), 13);
        assert_eq!(p.decoder.iter().map(|s| s.kernel).collect::<Vec<_>>(), [2, 2, 2, 4]);
        assert_eq!(p.decoder.iter().map(|s| s.stride).collect::<Vec<_>>(), [2, 2, 2, 4]);
        let t = NetConfig::tiny();
        assert_eq!(t.stage_widths.iter().map(Vec::len).sum::<usize>(), 4);
        assert_eq!(t.num_pools(), 2);
        assert_eq!(t.bottleneck_widths, [32, 32, 2]);
        assert!(t.stage_widths.iter().flatten().all(|&w| w <= 16));
    }

    #[test]
    fn divisibility() {
        let p = NetConfig::full();
        assert!(p.check_input_size(48).is_err());
        assert!(p.check_input_size(64).is_ok());
        assert!(NetConfig::tiny().check_input_size(48).is_ok());
        assert!(NetConfig::tiny().check_input_size(18).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = NetConfig::tiny();
        c.gap_d = 6;
        assert!(c.validate().is_err());
        let mut c = NetConfig::tiny();
        c.decoder.pop();
        assert!(c.validate().is_err());
        let mut c = NetConfig::tiny();
        c.p_drop = 1.0;
        assert!(c.validate().is_err());
    }
}
