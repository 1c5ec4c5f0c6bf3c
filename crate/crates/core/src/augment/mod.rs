//! Image/depth perturbations: CutMix and jitter for pretraining,
//! RandAugment streams with static CutOut for target views, and the
//! geometric bookkeeping that maps augmented predictions back.

mod affine;
mod mix;
mod ops;
mod randaugment;

pub use affine::{realign_prediction, Affine2, GeometricRecord, Realignment};
pub use mix::{
    cutmix, cutmix_with_box, cutout_box, paste, pretrain_augment, pretrain_augment_with,
    sample_box, CutBox, JitterParams, CUTOUT_AREA,
};
pub use ops::{warp_image, AugmentOp, OpKind, MAX_LEVEL, WARP_FILL};
pub use randaugment::{apply_chain, rand_augment, AugmentSet, RandAugmentPolicy};
