//! Neural Fourier Transform forecasting.
//!
//! A model is an ordered list of stacks. Seasonality blocks predict the
//! coefficients of an inverse two-dimensional cos/sin transform over
//! (variable, time), trend blocks predict coefficients of a Vandermonde
//! basis, and generic blocks emit the forecast directly. Coefficients come
//! from a dilated causal TCN (or a flattening MLP for comparison).

pub mod bases;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tcn;
pub mod tensor;
pub mod training;

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;

pub use bases::{
    build_time_fourier_matrix, build_vandermonde, build_variable_fourier_matrix, forward_2dft, inverse_2dft,
    FourierBasisPair, TimeAxis, TrendBasisPair,
};
pub use data::{
    load_csv, load_path, make_windows, prepare, split_protocol1, split_protocol2, synth_generate, write_csv,
    PipelineSpec, Prepared, PreprocessStats, RawSeries, Split, SplitSpec, SynthSpec, Window, WindowedDataset,
};
pub use error::{Error, Result};
pub use metrics::{
    compare, improvement_percent, paired_t_test, pearson_correlation, Comparison, MetricsReport, Statistic, TTest,
};
pub use model::{
    decompose_forecast, BlockKind, ForecastDecomposition, LearnerKind, ModelConfig, NftModel, StackKind,
};
pub use tcn::{causal_conv1d, receptive_field, Tcn, TcnConfig};
pub use tensor::{grad_check, Differentiable, GradCheckReport, Parameter, Tensor};
pub use training::{evaluate, evaluate_raw, mse_loss, train, BatchObjective, Evaluation, TrainingConfig, TrainingHistory};
