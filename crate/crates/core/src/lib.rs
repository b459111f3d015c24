pub mod descriptors;
pub mod evaluation;
pub mod filter;
pub mod geometry;
pub mod image;
pub mod matching;
pub mod pipeline;
pub mod proposals;
pub mod sift;
