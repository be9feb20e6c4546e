//! Dense optical-flow and scale-change estimation from cross-scale correlation
//! volumes.  (Module docs are finalized together with the solver/synth/io
//! modules; this is the build-up state.)

pub mod color;
pub mod corr;
pub mod error;
pub mod features;
pub mod field;
pub mod io;
pub mod motion;
pub mod pyramid;
pub mod solver;
pub mod synth;

pub use color::{flow_to_color, tau_to_color, ttc_to_color};
pub use corr::{
    build_corr_volume, build_multi_scale, build_pooled, init_corr_16, lookup_flow, lookup_pooled,
    lookup_scale, CorrFeatureMulti, CorrFeatureOf, CorrFeatureScale, CorrVolume4D,
    MultiScaleCorrVolume, PooledCorrPyramid,
};
pub use error::{Error, Result};
pub use features::{extract_features, extract_features_scaled, FeatureMap};
pub use motion::{
    depth_outlier_percent, f3_to_mid, metric_deg, metric_flow, metric_loss_flow,
    metric_loss_scale, metric_mid, mid_to_ttc, scene_flow_point, to_scene_flow, FlowMetrics,
    MetricReport, MidMetrics, SceneFlowField,
};
pub use field::{resize_bilinear, GridCoord, Image, MaskField, ScalarField2D, VectorField2D};
pub use io::{
    gray_to_rgb, load_image, read_flow_kitti, read_mask, read_pfm, write_flow_kitti,
    write_image_png, write_pfm, DatasetManifest, ManifestRecord,
};
pub use pyramid::{build_pyramid, build_scale_set, FeaturePyramid, ScaleSet};
pub use solver::{solve, MotionEstimate, MotionState, SolverConfig, SolverContext};
pub use synth::{
    accept_sample, composite, fly_foreground, generate_pair, random_closed_region, smooth_noise,
    translate_pair, warp_psnr, zoom_flow_gt, zoom_pair, CameraIntrinsics, CompositePair,
    ForegroundSample, PairMeta, RegionPatch, RigidTransform, SynthConfig,
};
