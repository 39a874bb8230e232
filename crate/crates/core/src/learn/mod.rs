//! Learners used by the policy: a kernel SVM for the short-term reward
//! and a regression forest for the action-value function.

pub mod forest;
pub mod svm;

pub use forest::{forest_fit, ForestModel, ForestParams, RegressionTree, TreeNode};
pub use svm::{svm_fit, SvmModel, SvmParams};
