/// Stable, machine-parsable name of an error variant, used as the prefix
/// of CLI error lines and as the `error` field of service error bodies.
pub trait ErrorCode {
    fn code(&self) -> &'static str;
}

impl ErrorCode for rag3d_core::index::IndexError {
    fn code(&self) -> &'static str {
        use rag3d_core::index::IndexError::*;
        match self {
            EmptyIndex => "EmptyIndex",
            DimensionMismatch { .. } => "DimensionMismatch",
            DuplicateEntryId(_) => "DuplicateEntryId",
            InvalidK => "InvalidK",
        }
    }
}
