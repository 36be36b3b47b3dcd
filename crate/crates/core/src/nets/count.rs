use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which published parameter-count formula to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountScheme {
    Dbsde,
    LdbsdePaper,
    LdbsdeOriginal,
    Ladbsde,
}

/// Closed-form parameter counts as published, evaluated verbatim.
///
/// * DBSDE: `d + 1 + (N-1)(2d(d+10) + (d+10)^2 + 4(d+10) + 2d)`
/// * LDBSDE with four hidden layers of width 256: `256d + 198145`
/// * LaDBSDE and LDBSDE with width `10+d`: `2d^2 + 56d + 361`
///
/// The last formula does not match a four-hidden-layer network of width
/// `10+d` term by term; see [`mlp_layer_count`] for the itemised count.
pub fn param_count(scheme: CountScheme, d: u64, n: u64) -> Result<u64> {
    if d == 0 {
        return Err(Error::invalid("param_count needs d >= 1"));
    }
    Ok(match scheme {
        CountScheme::Dbsde => {
            if n < 2 {
                return Err(Error::invalid("DBSDE needs N >= 2 time steps"));
            }
            let w = d + 10;
            d + 1 + (n - 1) * (2 * d * w + w * w + 4 * w + 2 * d)
        }
        CountScheme::LdbsdeOriginal => 256 * d + 198_145,
        CountScheme::LdbsdePaper | CountScheme::Ladbsde => 2 * d * d + 56 * d + 361,
    })
}

/// Itemised count of a dense network: `sum_l n_l (n_{l-1} + 1)`.
pub fn mlp_layer_count(input: u64, output: u64, hidden_layers: u64, width: u64) -> u64 {
    width * (input + 1) + (hidden_layers - 1) * width * (width + 1) + output * (width + 1)
}
