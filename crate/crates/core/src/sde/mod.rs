//! Time grids, counter-based Brownian increments and Euler-Maruyama paths.

mod brownian;
mod dump;
mod euler;
mod philox;

pub use brownian::{BrownianBatch, TimeGrid, TEST_STREAM, VALIDATION_STREAM};
pub use dump::{read_path_dump, write_path_dump, DumpHeader};
pub use euler::{euler_forward, log_log_slope, strong_error, Diffusion, ExactTerminal, ForwardSde, Gbm, PathBatch};
pub use philox::{normal_pair, philox4x32, seed_key};
