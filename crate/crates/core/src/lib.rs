//! Weight-leakage laboratory for federated learning.
//!
//! The crate simulates weight-transmitting (FedAvg-style) and
//! gradient-transmitting (FedSGD-style) federated learning, records the
//! transmitted updates as a wiretap stream, and implements attacks that
//! reconstruct the clients' private training images from that stream —
//! together with transmission-time defenses and image-recovery metrics.
//!
//! The numeric core (tensors, differentiation, metrics) is generic over the
//! scalar type; everything above it runs in double precision through the
//! aliases exported here.

pub mod attacks;
pub mod autodiff;
pub mod dataio;
pub mod defenses;
pub mod error;
pub mod flsim;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};

/// Raise the allocator's mmap threshold so weight-sized graph temporaries
/// are recycled through the heap instead of round-tripping mmap/munmap.
/// Graph evaluation allocates hundreds of ~0.5 MB tensors per iteration;
/// with glibc's default threshold each becomes a syscall plus page faults,
/// which triples the per-iteration cost. Safe to call repeatedly.
pub fn tune_allocator_for_graph_workloads() {
    #[cfg(target_os = "linux")]
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 64 << 20);
    }
}

/// Dense tensor in the working precision.
pub type Tensor = tensor::TensorBase<f64>;
/// Recording graph in the working precision.
pub type Graph = autodiff::GraphBase<f64>;
/// Gradient bundle in the working precision.
pub type GradResult = autodiff::GradResultBase<f64>;
pub use autodiff::Var;
