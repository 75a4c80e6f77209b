//! Generative modeling of single-gene perturbation screens with an
//! explicit, trainable gene-gene edge matrix.
//!
//! The library couples a disentangled variational autoencoder over count
//! data (basal state, perturbation effect, and technical-artifact latents;
//! Gamma-Poisson decoder) with a square matrix of edge logits whose sigmoid
//! is read as a directed regulatory graph. Alongside the evidence lower
//! bound, training pushes the edge probabilities — including multi-hop
//! walk accumulations — toward reference differential-expression profiles
//! built by optimal-transport pairing of perturbed and control cells, plus
//! an L1 sparsity penalty.
//!
//! What lives where:
//!
//! * [`diffcore`] — dense matrices, a reverse-mode tape over the handful of
//!   primitives the losses need, and a finite-difference gradient oracle.
//! * [`dataio`] — dataset model, TSV formats, synthetic screen generator
//!   with a known ground-truth graph, exact assignment pairing, reference
//!   differential-expression construction, splits.
//! * [`model`] — encoders, relaxed Bernoulli masks, Gamma-Poisson decoder,
//!   negative-binomial likelihood.
//! * [`objective`] — ELBO, artifact-disentanglement KL, the graph-guided
//!   losses, and the combined total.
//! * [`trainer`] — Adam loop with clipping, annealing, checkpoints,
//!   ablation variants.
//! * [`inference`] — post-training generation and average-treatment-effect
//!   estimation, including unseen-perturbation prediction.
//! * [`grn`] — graph extraction, degree/hub statistics, edge-list export.
//! * [`evalharness`] — ATE correlation metrics, Jaccard top-k, Wasserstein
//!   and Mann-Whitney statistics, mean edge WD, false omission rate.
//! * [`pipeline`] — the `simulate`/`train`/`predict`/`grn`/`eval`/`ablate`
//!   commands as library functions; the `pertvae` binary is a thin wrapper.
//!
//! The `examples/` directory has one runnable program per capability; start
//! with `examples/full_pipeline.rs`.

pub mod dataio;
pub mod diffcore;
pub mod evalharness;
pub mod grn;
pub mod inference;
pub mod model;
pub mod objective;
pub mod pipeline;
pub mod trainer;

pub use diffcore::Matrix;
