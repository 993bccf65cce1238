//! Continual-learning engine built around attention-based selective
//! plasticity.
//!
//! A dense MLP ([`nn`]) learns a sequence of tasks while a top-down
//! excitation-backprop pass ([`attention`]) scores how relevant each neuron
//! is to the label being trained. Those per-neuron scores drive a Hebbian
//! (Oja) estimate of per-synapse importance ([`plasticity`]), which in turn
//! weights a quadratic penalty that anchors important synapses to their
//! values from earlier tasks. EWC and Synaptic Intelligence importance
//! estimators ([`baselines`]) plug into the same penalty. The [`tasks`]
//! module ingests MNIST and builds permuted/split task streams, and
//! [`harness`] orchestrates multi-seed experiments, CSV metrics, and
//! attention-map visualization.

pub mod attention;
pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod nn;
pub mod pgm;
pub mod plasticity;
pub mod tasks;

pub use error::{Error, Result};
pub use nn::{ActivationTrace, AdamState, DenseNet, GradientSet};
