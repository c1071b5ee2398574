//! Zero-shot decision tree induction.
//!
//! Builds interpretable binary decision trees without training data by
//! querying a knowledge backend — an LLM over an OpenAI-compatible API, a
//! recorded replay of one, or an exact synthetic oracle — for split
//! proposals and class probabilities, selecting splits by the harmonic
//! mean of branch Gini impurities. A classical CART baseline and an
//! evaluation harness reproduce the usual supervised comparison on real
//! CSV data.
//!
//! The pipeline in one sitting:
//!
//! ```
//! use ztree::builder::{build_tree, BuildConfig};
//! use ztree::oracle::{generate_model, ModelGenConfig, OracleAdvisor};
//! use ztree::tree::{predict, MissingPolicy};
//!
//! let model = generate_model(7, &ModelGenConfig::default());
//! let task = model.task_view().clone();
//! let advisor = OracleAdvisor::new(model, &task).unwrap();
//! let tree = build_tree(&task, &advisor, &BuildConfig::default()).unwrap();
//! let data = advisor.model().sample(&task, 100, 1);
//! let prediction = predict(&tree, &data.rows[0], MissingPolicy::Error).unwrap();
//! assert!(task.target_labels.contains(&prediction.label));
//! ```

pub mod builder;
pub mod cli;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod impurity;
pub mod oracle;
pub mod parse;
pub mod prompt;
pub mod schema;
pub mod tree;
