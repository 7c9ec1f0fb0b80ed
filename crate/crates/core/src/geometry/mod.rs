//! Projection of points into cameras, point-to-mask assignment and
//! cross-view mask matching.

mod assignment;
mod crossview;
mod hungarian;
mod projection;

pub use assignment::{assign_points_to_masks, MaskAssignment, MaskKey};
pub use crossview::{crossview_mask_cost, group_masks_across_views, index_iou, MaskGroup};
pub use hungarian::{hungarian_match, CrossViewMatch};
pub use projection::{project_points, CameraProjection, ProjectedPoint, NEAR_PLANE_M};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("inconsistent views: {0}")]
    InconsistentViews(String),
}
