//! Two-stage uncertainty-guided quantitative MRI reconstruction on synthetic
//! phantoms.
//!
//! Stage 1 reconstructs multi-phase complex images from undersampled multi-coil
//! k-space with a 5-iteration unrolled network (CNN denoiser + hard data
//! consistency) and estimates phase-wise uncertainty by Monte Carlo dropout.
//! Stage 2 fits T1/T2 parameter maps pixel by pixel with an MLP that consumes
//! the per-phase signal together with its uncertainty. Classical least-squares
//! fitters serve as ground-truth oracles and baselines, and the harness
//! reproduces the acceleration / dropout / sample-count sweeps and the
//! ablation table of the underlying experimental protocol at desk scale.
//!
//! Everything is deterministic under a single `u64` seed: masks, dropout,
//! weight init, shuffling and noise each draw from their own counter-derived
//! PCG streams.
//!
//! See the `examples/` directory for one runnable entry point per capability
//! (phantoms, signal models, undersampling, reconstruction, guided fitting,
//! ablation, sweeps).

pub mod diffnum;
pub mod fitting;
pub mod harness;
pub mod kspace;
pub mod physics;
pub mod recon;

pub use diffnum::real::Real;
