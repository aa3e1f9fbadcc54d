//! Video-to-4D generation with Gaussian variation fields: mesh animation
//! data, a differentiable Gaussian splatting renderer, the variation-field
//! VAE and the temporal latent diffusion model.

pub mod anim;
pub mod autodiff;
pub mod blob;
pub mod diffusion;
pub mod error;
pub mod geom;
pub mod gsplat;
pub mod interp;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod vae;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use rng::SeededRng;
pub use tensor::Tensor;
