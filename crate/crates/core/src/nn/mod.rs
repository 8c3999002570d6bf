//! Minimal dense feed-forward engine: forward/backward passes, Adam, and
//! the diagonal-Gaussian pieces the VAE needs.

mod adam;
mod dense;
mod gaussian;

pub use adam::{AdamConfig, AdamState};
pub use dense::{Activation, ActivationTrace, DenseLayer, DenseNet, Gradients, NetGradients};
pub use gaussian::{gaussian_sample, kl_gaussian, kl_gaussian_grad, reparameterize, reparameterize_grad, KlGrad};
