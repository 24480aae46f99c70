//! Modality identities, their pixel-alignment classes, and the fixed
//! modality-type prompts fed to the in-context learner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb = 0,
    Depth = 1,
    Flow = 2,
    Segmentation = 3,
    Keypoints = 4,
    Parts = 5,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Alignment {
    PixelAligned,
    PixelUnaligned,
}

pub const MODALITY_COUNT: usize = 6;

impl Modality {
    pub const ALL: [Modality; 6] = [
        Modality::Rgb,
        Modality::Depth,
        Modality::Flow,
        Modality::Segmentation,
        Modality::Keypoints,
        Modality::Parts,
    ];

    /// The five auxiliary modalities (everything but RGB).
    pub const AUX: [Modality; 5] = [
        Modality::Depth,
        Modality::Flow,
        Modality::Segmentation,
        Modality::Keypoints,
        Modality::Parts,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Modality> {
        Modality::ALL
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid("modality", format!("unknown modality id {}", id)))
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Depth => "depth",
            Modality::Flow => "flow",
            Modality::Segmentation => "segmentation",
            Modality::Keypoints => "keypoints",
            Modality::Parts => "parts",
        }
    }

    pub fn from_name(name: &str) -> Result<Modality> {
        Modality::ALL
            .iter()
            .copied()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::invalid("modality", format!("unknown modality {:?}", name)))
    }

    /// Depth, flow and parts map pixel-for-pixel onto RGB; segmentation and
    /// keypoints are rendered id visualizations. RGB is aligned by convention.
    pub fn alignment(self) -> Alignment {
        match self {
            Modality::Rgb | Modality::Depth | Modality::Flow | Modality::Parts => {
                Alignment::PixelAligned
            }
            Modality::Segmentation | Modality::Keypoints => Alignment::PixelUnaligned,
        }
    }

    pub fn is_pixel_aligned(self) -> bool {
        self.alignment() == Alignment::PixelAligned
    }

    /// Fixed modality-type prompt (dataset-schema constant). RGB streams are
    /// conditioned on content captions instead, never on this.
    pub fn prompt(self) -> &'static str {
        match self {
            Modality::Rgb => "video",
            Modality::Depth => "depth map",
            Modality::Flow => "optical flow",
            Modality::Segmentation => "segmentation mask",
            Modality::Keypoints => "keypoint skeleton",
            Modality::Parts => "body part map",
        }
    }
}

/// Spec'd table lookup: alignment class of a modality.
pub fn alignment_of(m: Modality) -> Alignment {
    m.alignment()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_table() {
        use Alignment::*;
        assert_eq!(alignment_of(Modality::Depth), PixelAligned);
        assert_eq!(alignment_of(Modality::Flow), PixelAligned);
        assert_eq!(alignment_of(Modality::Parts), PixelAligned);
        assert_eq!(alignment_of(Modality::Segmentation), PixelUnaligned);
        assert_eq!(alignment_of(Modality::Keypoints), PixelUnaligned);
        assert_eq!(alignment_of(Modality::Rgb), PixelAligned);
    }

    #[test]
    fn ids_roundtrip() {
        for m in Modality::ALL {
            assert_eq!(Modality::from_id(m.id()).unwrap(), m);
            assert_eq!(Modality::from_name(m.name()).unwrap(), m);
        }
        assert!(Modality::from_id(6).is_err());
    }
}
