//! Dense and recurrent networks recorded on the AD tape, plus flat parameter
//! storage and the published parameter-count formulas.

mod batchnorm;
mod count;
mod mlp;
mod params;
mod rnn;

pub use batchnorm::{BatchNormState, BnMode, BN_EPSILON, BN_MOMENTUM};
pub use count::{mlp_layer_count, param_count, CountScheme};
pub use mlp::MlpConfig;
pub(crate) use params::{read_f64s, read_u32, read_u64, write_f64s};
pub use params::{initialize, InitDist, ParameterSet, Segment};
pub use rnn::RnnConfig;
