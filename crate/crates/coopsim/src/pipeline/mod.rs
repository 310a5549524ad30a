//! Per-node perception stack: occupancy encoder, rigid feature warp into the
//! ego frame, spatial-attentive feature fusion over a variable contributor
//! set, detection decoding, and rotated-box post-processing.

mod fuse;
mod iou;
mod model;
mod post;
mod warp;

pub use fuse::{fuse_spatial_attention, FusionResult};
pub use iou::rotated_iou;
pub use model::{
    decode, encode, ConvLayer, DecoderWeights, DetectionMap, EncoderWeights, MaskNetWeights,
    ModelConfig, ModelWeights,
};
pub use post::{nms, postprocess, postprocess_grids, GridGeom};
pub use warp::{warp_index_map, warp_to};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{NumericsError, Tensor};
use crate::world::Pose2D;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Who produced a feature map: a real cooperation node or the synthesized
/// pseudo-contributor standing in for missing messages at some ego node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Owner {
    Node(u32),
    Pseudo(u32),
}

impl std::fmt::Display for Owner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Owner::Node(i) => write!(f, "node{i}"),
            Owner::Pseudo(i) => write!(f, "pseudo{i}"),
        }
    }
}

/// `C x H x W` feature grid tagged with the pose (and frame) it is expressed
/// in plus the metric extent of the square window it covers.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    pub owner: Owner,
    pub timestep: usize,
    pub pose: Pose2D,
    pub extent_m: f64,
    pub data: Tensor,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn cell_m(&self) -> f64 {
        self.extent_m / self.height() as f64
    }
}

/// Rotated BEV box in the ego frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetBox {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub length: f64,
    pub yaw: f64,
    pub score: f64,
}

impl DetBox {
    pub fn area(&self) -> f64 {
        self.width * self.length
    }

    /// Express this box (given in `src`'s frame) in `dst`'s frame.
    pub fn transform(&self, src: &Pose2D, dst: &Pose2D) -> DetBox {
        let world = src.local_to_world((self.cx, self.cy));
        let (cx, cy) = dst.world_to_local(world);
        DetBox {
            cx,
            cy,
            yaw: crate::world::normalize_angle(self.yaw + src.yaw - dst.yaw),
            ..*self
        }
    }
}
