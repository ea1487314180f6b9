//! Gradient-domain smoothness and occlusion priors for stereo disparity maps.
//!
//! The crate is a set of differentiable numerical operators with analytic
//! backward passes:
//!
//! - [`pac`]: standard and pixel-adaptive convolution, and the two-layer
//!   GradSmooth stack that filters disparity gradients under image guidance.
//! - [`occlusion`]: soft (sigmoid) occlusion maps computed from disparity,
//!   and the exact geometric oracle they approximate.
//! - [`loss`]: smooth-L1 losses and their weighted composite.
//! - [`optimize`]: a field-level refinement harness and synthetic scenes.
//! - [`metrics`], [`imageio`]: evaluation and Middlebury-style file formats.
//! - [`gradcheck`]: finite-difference verification of the backward passes.
//! - [`cli`]: the `stereo-priors` command-line tool.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod cli;
pub mod error;
pub mod fields;
pub mod gradcheck;
pub mod imageio;
pub mod loss;
pub mod metrics;
pub mod occlusion;
pub mod optimize;
pub mod pac;

pub use error::{Error, Result};
pub use fields::{
    make_disparity_map, rgbxy_guidance, spatial_gradient, DisparityMap, FeatureMap, GradientField, OcclusionMap,
};
pub use gradcheck::{run_gradcheck, GradcheckConfig, GradcheckReport, Operator};
pub use loss::{smooth_l1, total_loss, LossBreakdown, LossRecord, LossWeights};
pub use metrics::{bad_threshold, evaluate, mae, EvalReport};
pub use occlusion::{
    hard_occlusion_oracle, occlusion_target, soft_occlusion, soft_occlusion_backward, OcclusionConfig,
};
pub use optimize::{refine_disparity, synth_scene, RefineConfig, SceneSpec};
pub use pac::{conv_forward, gradsmooth_apply, pac_backward, pac_forward, FilterBank, GradSmoothParams};
