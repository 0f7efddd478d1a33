use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("operator is not unitary on its subspace (defect {defect:.3e})")]
    NotUnitary { defect: f64 },
    #[error("state is not normalized (norm² = {norm_sqr})")]
    Unnormalized { norm_sqr: f64 },
    #[error("qudit dimension {0} is out of range")]
    Dimension(u32),
    #[error("time bin {bin} is out of range for d = {d}")]
    TimeBin { bin: u32, d: u32 },
    #[error("time bin {0} already carries a photon from this node")]
    BinOccupied(u32),
    #[error("swap level {0} is invalid (must be 1..d-1)")]
    SwapLevel(u32),
    #[error("photons already occupy beamsplitter output ports")]
    AlreadySplit,
    #[error("tensor factors overlap")]
    TensorOverlap,
    #[error("photon mode occupation limit exceeded")]
    Occupation,
    #[error("malformed detection records: {0}")]
    Detections(String),
    #[error("no phase sensitivity for levels ({0}, {1}) at d = {2}")]
    MissingSensitivity(u8, u8, u32),
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("degenerate parity scan: {0}")]
    DegenerateScan(String),
    #[error("field model points must be strictly time ordered")]
    FieldOrder,
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter { name, reason: reason.into() }
    }
}
