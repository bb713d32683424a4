use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fl::{ModelParameters, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: String,
    pub round: u64,
    pub params: ModelParameters,
    pub num_examples: u64,
}

/// Example-weighted mean `sum_k n_k w_k / sum_k n_k` per element.
///
/// Clients are summed in ascending `client_id` order with `f64` accumulation;
/// counts are first divided by their gcd, so scaling every count by the same
/// factor yields bit-identical output.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<ModelParameters> {
    fedavg_with(updates, Execution::default())
}

pub fn fedavg_with(updates: &[ClientUpdate], exec: Execution) -> Result<ModelParameters> {
    let first = updates
        .first()
        .ok_or_else(|| Error::InvalidConfig("fedavg needs at least one update".into()))?;
    for u in updates {
        if u.round != first.round {
            return Err(Error::RoundMismatch {
                expected: first.round,
                actual: u.round,
            });
        }
        if !u.params.same_layout(&first.params) {
            return Err(Error::ShapeMismatch(format!(
                "update from {:?} does not match the layout of {:?}",
                u.client_id, first.client_id
            )));
        }
    }
    let divisor = updates.iter().map(|u| u.num_examples).fold(0, gcd);
    if divisor == 0 {
        return Err(Error::ZeroExamples);
    }
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    let weights: Vec<f64> = ordered
        .iter()
        .map(|u| (u.num_examples / divisor) as f64)
        .collect();
    let total: f64 = weights.iter().sum();

    let mut averaged = ModelParameters::new();
    for (name, tensor) in first.params.iter() {
        let sources: Vec<&[f32]> = ordered
            .iter()
            .map(|u| u.params.get(name).expect("layout checked").values())
            .collect();
        let values = exec.map_range(tensor.values().len(), |i| {
            let mut acc = 0.0f64;
            for (src, &w) in sources.iter().zip(&weights) {
                acc += w * f64::from(src[i]);
            }
            (acc / total) as f32
        });
        averaged.insert(name, Tensor::new(tensor.shape().to_vec(), values)?)?;
    }
    Ok(averaged)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
