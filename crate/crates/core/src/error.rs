use thiserror::Error;

/// Failure modes of the reconstruction and calibration pipeline.
///
/// Most variants flag a degenerate configuration rather than a bug; callers
/// that sweep many random instances are expected to count them, not abort.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is too close to singular for a rotation fit")]
    DegenerateMatrix,
    #[error("all polynomial coefficients vanish")]
    ZeroPolynomial,

    #[error("world point coincides with the camera center")]
    PointAtCameraCenter,
    #[error("three of the four reference image points are collinear")]
    DegenerateQuad,
    #[error("first camera has a singular left 3x3 block (condition {0:.3e})")]
    SingularFirstCamera(f64),
    #[error("projection lies on the line at infinity")]
    ProjectionAtInfinity,

    #[error("image point lies on a reference line of the canonical frame")]
    DegenerateView,
    #[error("linear system is rank deficient: {0}")]
    RankDefect(&'static str),
    #[error("no real sixth-point candidate survived")]
    NoRealCandidate,
    #[error("sixth-point candidate coincides with a basis point")]
    BasisPointCoincidence,
    #[error("no projective solution survived resection")]
    EmptySolutionSet,

    #[error("subdeterminant polynomial has non-vanishing structural coefficient ({0:.3e} relative)")]
    StructuralViolation(f64),
    #[error("monomial shift leaves the 18-term basis")]
    BasisOverflow,
    #[error("elimination stage {stage} produced pivots {pivots:?}")]
    PivotPatternBroken { stage: usize, pivots: Vec<usize> },
    #[error("constraint matrix has unexpected rank {0}")]
    RankUnexpected(usize),
    #[error("dual quadric normalization failed")]
    NormalizationFailure,
    #[error("metric camera block has no proper rotation")]
    ImproperRotation,

    #[error("scene generation exceeded {0} resampling attempts")]
    ResampleExhausted(usize),
    #[error("direct linear transform is rank deficient")]
    DltRankDefect,
    #[error("reference translation is zero")]
    ZeroTranslation,

    #[error("camera centers coincide")]
    CoincidentCenters,
    #[error("no hypothesis could be generated")]
    NoHypothesis,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
