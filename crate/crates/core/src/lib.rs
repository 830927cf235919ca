//! Recaptured document image detection.
//!
//! A questioned document image is compared against genuine reference images of
//! the same template in a learned embedding space. Patches from the reference,
//! a genuine positive and a recaptured negative form training triplets; a
//! small convolutional backbone maps each patch to an embedding and a
//! two-layer similarity subnet scores pairs of embeddings in `[0, 1]`. Training
//! minimises a triplet similarity loss plus a normalized softmax loss over
//! those scores.

pub mod channelsim;
pub mod corpus;
pub mod embedder;
pub mod experiment;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod raster;
pub mod seed;
pub mod simnet;
pub mod trainer;
pub mod triplets;
pub mod verifier;
