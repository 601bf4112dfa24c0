//! Colored point clouds, PLY I/O and RGB/YCbCr conversion.

mod color;
mod ply;

pub use color::{rgb_to_ycbcr_pixel, ycbcr_to_rgb_pixel, KB, KR};
pub use ply::{load_ply, read_ply, save_ply, write_ply, PlyFormat};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColorSpace {
    Rgb,
    YCbCr,
}

/// One of the three attribute channels, in whichever color space the cloud is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    Y,
    Cb,
    Cr,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Y, Channel::Cb, Channel::Cr];

    pub fn index(self) -> usize {
        match self {
            Channel::Y => 0,
            Channel::Cb => 1,
            Channel::Cr => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Y => "Y",
            Channel::Cb => "Cb",
            Channel::Cr => "Cr",
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "y" => Ok(Channel::Y),
            "cb" | "u" => Ok(Channel::Cb),
            "cr" | "v" => Ok(Channel::Cr),
            other => Err(Error::Argument(format!("unknown channel '{other}' (expected Y, Cb or Cr)"))),
        }
    }
}

/// `N` points with real-valued geometry and three real-valued color channels in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    geometry: Vec<[f64; 3]>,
    attributes: Vec<[f64; 3]>,
    color_space: ColorSpace,
}

impl PointCloud {
    pub fn new(geometry: Vec<[f64; 3]>, attributes: Vec<[f64; 3]>, color_space: ColorSpace) -> Result<Self> {
        if geometry.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if geometry.len() != attributes.len() {
            return Err(Error::Argument(format!(
                "geometry has {} points but attributes have {}",
                geometry.len(),
                attributes.len()
            )));
        }
        if geometry.iter().flatten().chain(attributes.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite coordinate or attribute".into()));
        }
        Ok(Self { geometry, attributes, color_space })
    }

    pub fn len(&self) -> usize {
        self.geometry.len()
    }

    /// Always false for a constructed cloud; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.geometry.is_empty()
    }

    pub fn geometry(&self) -> &[[f64; 3]] {
        &self.geometry
    }

    pub fn attributes(&self) -> &[[f64; 3]] {
        &self.attributes
    }

    pub fn color_space(&self) -> ColorSpace {
        self.color_space
    }

    pub fn channel(&self, channel: Channel) -> Vec<f64> {
        let c = channel.index();
        self.attributes.iter().map(|a| a[c]).collect()
    }

    /// Replace one channel, clamping to `[0, 255]`.
    pub fn set_channel(&mut self, channel: Channel, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Argument(format!("channel has {} values for {} points", values.len(), self.len())));
        }
        let c = channel.index();
        for (a, &v) in self.attributes.iter_mut().zip(values) {
            a[c] = v.clamp(0.0, 255.0);
        }
        Ok(())
    }

    pub fn with_attributes(&self, attributes: Vec<[f64; 3]>) -> Result<Self> {
        Self::new(self.geometry.clone(), attributes, self.color_space)
    }

    pub fn rgb_to_ycbcr(&self) -> Result<Self> {
        if self.color_space != ColorSpace::Rgb {
            return Err(Error::State("rgb_to_ycbcr called on a cloud that is not RGB".into()));
        }
        Ok(Self {
            geometry: self.geometry.clone(),
            attributes: self.attributes.iter().map(|&a| rgb_to_ycbcr_pixel(a)).collect(),
            color_space: ColorSpace::YCbCr,
        })
    }

    pub fn ycbcr_to_rgb(&self) -> Result<Self> {
        if self.color_space != ColorSpace::YCbCr {
            return Err(Error::State("ycbcr_to_rgb called on a cloud that is not YCbCr".into()));
        }
        Ok(Self {
            geometry: self.geometry.clone(),
            attributes: self.attributes.iter().map(|&a| ycbcr_to_rgb_pixel(a)).collect(),
            color_space: ColorSpace::Rgb,
        })
    }

    /// Attributes rounded to the 8-bit values that would be written to disk.
    pub fn quantized_attributes(&self) -> Vec<[u8; 3]> {
        self.attributes.iter().map(|a| a.map(|v| v.round().clamp(0.0, 255.0) as u8)).collect()
    }
}
