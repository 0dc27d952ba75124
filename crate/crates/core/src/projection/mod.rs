//! Feature-space inspection: PCA fitting/projection and exact t-SNE.

mod pca;
mod tsne;

pub use pca::{pca_fit, pca_transform, select_mode_count, ModeSelector, ProjectionModel};
pub use tsne::{
    joint_probabilities, kl_divergence, kl_gradient, tsne_embed, TsneConfig, TsneResult,
};
