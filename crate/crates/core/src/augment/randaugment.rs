use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::affine::GeometricRecord;
use super::mix::static_cutout;
use super::ops::{AugmentOp, OpKind, MAX_LEVEL};
use crate::dataset::Image;
use crate::error::{Error, Result};

/// Which operator list a policy draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentSet {
    /// The FixMatch RandAugment list (photometric and geometric operators).
    Fm,
    /// The same list with every geometric operator removed.
    Geo,
}

impl AugmentSet {
    pub fn ops(self) -> &'static [OpKind] {
        const FM: [OpKind; 14] = OpKind::ALL;
        const GEO: [OpKind; 9] = [
            OpKind::AutoContrast,
            OpKind::Brightness,
            OpKind::Color,
            OpKind::Contrast,
            OpKind::Equalize,
            OpKind::Identity,
            OpKind::Posterize,
            OpKind::Sharpness,
            OpKind::Solarize,
        ];
        match self {
            AugmentSet::Fm => &FM,
            AugmentSet::Geo => &GEO,
        }
    }

    pub fn contains(self, kind: OpKind) -> bool {
        self.ops().contains(&kind)
    }
}

impl fmt::Display for AugmentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentSet::Fm => "s_fm",
            AugmentSet::Geo => "s_geo",
        })
    }
}

impl FromStr for AugmentSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s_fm" => Ok(AugmentSet::Fm),
            "s_geo" => Ok(AugmentSet::Geo),
            other => Err(Error::config(format!("unknown augmentation set '{other}'"))),
        }
    }
}

/// RandAugment chain configuration: `n` operators drawn with replacement
/// from `set`, each at severity `m`, optionally preceded by a static CutOut.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandAugmentPolicy {
    pub set: AugmentSet,
    pub n: usize,
    pub m: f32,
    pub static_cutout: bool,
}

impl Default for RandAugmentPolicy {
    fn default() -> Self {
        Self {
            set: AugmentSet::Fm,
            n: 1,
            m: 7.0,
            static_cutout: true,
        }
    }
}

impl RandAugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_LEVEL).contains(&self.m) {
            return Err(Error::config(format!(
                "aug.m = {} outside [0, {MAX_LEVEL}]",
                self.m
            )));
        }
        Ok(())
    }

    /// Draws the operator chain for one view.
    pub fn sample_ops<R: Rng + ?Sized>(
        &self,
        h: usize,
        w: usize,
        rng: &mut R,
    ) -> Result<Vec<AugmentOp>> {
        self.validate()?;
        let ops = self.set.ops();
        (0..self.n)
            .map(|_| {
                let kind = ops[rng.random_range(0..ops.len())];
                kind.at_level(self.m, rng.random_bool(0.5), h, w)
            })
            .collect()
    }
}

/// Applies an explicit operator chain, composing the geometric record.
pub fn apply_chain(image: &Image, ops: &[AugmentOp]) -> (Image, GeometricRecord) {
    let (h, w, _) = image.dim();
    let mut record = GeometricRecord::identity(h, w);
    let mut current = image.clone();
    for op in ops {
        let (next, step) = op.apply(&current);
        if let Some(step) = step {
            record.push(&step);
        }
        current = next;
    }
    (current, record)
}

/// One perturbation stream: optional static CutOut, then a sampled chain.
/// Depth is never touched here.
pub fn rand_augment<R: Rng + ?Sized>(
    image: &Image,
    policy: &RandAugmentPolicy,
    rng: &mut R,
) -> Result<(Image, GeometricRecord)> {
    let (h, w, _) = image.dim();
    let start = if policy.static_cutout {
        static_cutout(image, rng)
    } else {
        image.clone()
    };
    let ops = policy.sample_ops(h, w, rng)?;
    debug_assert!(ops.iter().all(|op| policy.set.contains(op.kind())));
    Ok(apply_chain(&start, &ops))
}
