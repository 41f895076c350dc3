//! Shape-model metrics and the PCA baseline.

mod metrics;
mod pca;

pub use metrics::{
    ced_at, ced_auc_fr, generalization_errors, mean_std, rmse3d_translation, specificity, CedReport,
    ErrorDistribution, FnReconstructor, IdentityModel, Reconstructor, RmseOptions, SpecificityReport,
    DEFAULT_X_MAX,
};
pub use pca::{
    components_for_variance, flatten, pca_fit, pca_reconstruct, pca_sample, unflatten, PcaModel, Retain,
};
