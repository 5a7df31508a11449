//! Desk-scale fact verification: a small tensor library with reverse-mode
//! autodiff, a trainable transformer encoder, title-based document
//! selection, two-pass evidence-set retrieval, hierarchical claim
//! verification, and a strict evidence-aware scorer.

pub mod corpus;
pub mod docselect;
pub mod encoder;
pub mod feverscore;
pub mod hesmverify;
pub mod hopretrieve;
pub mod tensorkit;
