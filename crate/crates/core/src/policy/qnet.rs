use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::StateScale;
use crate::domain::PolicyThresholds;
use crate::time::Seconds;

pub const QNET_FORMAT: &str = "headway-qnet";
pub const QNET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("non-finite network output")]
    NonFinite,
    #[error("model file: {0}")]
    File(String),
    #[error("model action grid ({found}) does not match configuration ({expected})")]
    GridMismatch { expected: String, found: String },
}

/// Fully connected Q network: ReLU hidden layers, linear output, one output per hold.
///
/// Parameters live in one flat vector; layer `l` stores its `out x in`
/// row-major weights followed by its `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    sizes: Vec<usize>,
    params: Vec<f64>,
    hold_grid: Seconds,
    max_hold: Seconds,
    state_scale: StateScale,
}

/// Activations recorded during a forward pass, consumed by backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `layers[0]` is the input; `layers[l]` the post-activation output of layer `l`.
    layers: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().map(Vec::as_slice).unwrap_or_default()
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl QNetwork {
    /// He-uniform initialisation. `hidden` lists hidden layer widths.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        thresholds: &PolicyThresholds,
        state_scale: StateScale,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(thresholds.action_count());
        let mut params = Vec::with_capacity(param_count(&sizes));
        for w in sizes.windows(2) {
            let bound = (6.0 / w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat(0.0).take(w[1]));
        }
        Self {
            sizes,
            params,
            hold_grid: thresholds.hold_grid,
            max_hold: thresholds.max_hold,
            state_scale,
        }
    }

    pub fn from_params(
        sizes: Vec<usize>,
        params: Vec<f64>,
        hold_grid: Seconds,
        max_hold: Seconds,
        state_scale: StateScale,
    ) -> Result<Self, NetError> {
        if sizes.len() < 2 {
            return Err(NetError::File("need at least input and output layers".into()));
        }
        let expected = param_count(&sizes);
        if params.len() != expected {
            return Err(NetError::Dimension { expected, found: params.len() });
        }
        if hold_grid <= 0 || max_hold % hold_grid != 0 {
            return Err(NetError::File("invalid hold grid".into()));
        }
        let actions = (max_hold / hold_grid) as usize + 1;
        if sizes[sizes.len() - 1] != actions {
            return Err(NetError::Dimension { expected: actions, found: sizes[sizes.len() - 1] });
        }
        Ok(Self { sizes, params, hold_grid, max_hold, state_scale })
    }

    /// A single linear layer with zero weights whose output is always `q`.
    pub fn constant_output(input: usize, q: &[f64], thresholds: &PolicyThresholds) -> Self {
        let mut params = vec![0.0; input * q.len()];
        params.extend_from_slice(q);
        Self {
            sizes: vec![input, q.len()],
            params,
            hold_grid: thresholds.hold_grid,
            max_hold: thresholds.max_hold,
            state_scale: StateScale::default(),
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn action_count(&self) -> usize {
        *self.sizes.last().unwrap_or(&0)
    }

    pub fn hold_grid(&self) -> Seconds {
        self.hold_grid
    }

    pub fn max_hold(&self) -> Seconds {
        self.max_hold
    }

    pub fn state_scale(&self) -> &StateScale {
        &self.state_scale
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn copy_params_from(&mut self, other: &QNetwork) {
        self.params.copy_from_slice(&other.params);
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        Ok(self.forward_trace(input)?.layers.pop().unwrap_or_default())
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace, NetError> {
        if input.len() != self.input_dim() {
            return Err(NetError::Dimension { expected: self.input_dim(), found: input.len() });
        }
        let last = self.sizes.len() - 2;
        let mut layers = vec![input.to_vec()];
        let mut offset = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let x = &layers[l];
            let mut y = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let z = bias[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                y.push(if l < last { z.max(0.0) } else { z });
            }
            layers.push(y);
            offset += n_in * n_out + n_out;
        }
        Ok(Trace { layers })
    }

    /// Adds `d(loss)/d(params)` to `grad`, given `d(loss)/d(output)` for one forward trace.
    pub fn accumulate_gradient(&self, trace: &Trace, d_output: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let mut offsets = Vec::with_capacity(self.sizes.len() - 1);
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta = d_output.to_vec();
        for l in (0..self.sizes.len() - 1).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let base = offsets[l];
            let x = &trace.layers[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[base + o * n_in..base + (o + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grad[base + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[base..base + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                    *p += d * w;
                }
            }
            // ReLU derivative, taken as 0 at exactly 0.
            for (p, a) in prev.iter_mut().zip(&trace.layers[l]) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let text = serde_json::to_string(&QNetFile::from(self)).map_err(|e| NetError::File(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| NetError::File(format!("{}: {e}", path.display())))
    }

    /// Loads a model file. With `expected`, the stored action grid must match it.
    pub fn load(path: &Path, expected: Option<&PolicyThresholds>) -> Result<Self, NetError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| NetError::File(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, expected)
    }

    pub fn from_json(text: &str, expected: Option<&PolicyThresholds>) -> Result<Self, NetError> {
        let file: QNetFile = serde_json::from_str(text).map_err(|e| NetError::File(e.to_string()))?;
        if file.format != QNET_FORMAT || file.version != QNET_VERSION {
            return Err(NetError::File(format!(
                "unsupported model format {} v{}",
                file.format, file.version
            )));
        }
        if let Some(thr) = expected {
            if thr.hold_grid != file.hold_grid || thr.max_hold != file.max_hold {
                return Err(NetError::GridMismatch {
                    expected: format!("grid {} max {}", thr.hold_grid, thr.max_hold),
                    found: format!("grid {} max {}", file.hold_grid, file.max_hold),
                });
            }
        }
        let net = Self::from_params(file.layer_sizes, file.params, file.hold_grid, file.max_hold, file.state_scale)?;
        if !net.is_finite() {
            return Err(NetError::NonFinite);
        }
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&QNetFile::from(self)).expect("model serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct QNetFile {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    hold_grid: Seconds,
    max_hold: Seconds,
    state_scale: StateScale,
    params: Vec<f64>,
}

impl From<&QNetwork> for QNetFile {
    fn from(net: &QNetwork) -> Self {
        Self {
            format: QNET_FORMAT.into(),
            version: QNET_VERSION,
            layer_sizes: net.sizes.clone(),
            hold_grid: net.hold_grid,
            max_hold: net.max_hold,
            state_scale: net.state_scale,
            params: net.params.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn thr() -> PolicyThresholds {
        PolicyThresholds { max_hold: 60, ..Default::default() }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = QNetwork::new(6, &[8, 8], &thr(), StateScale::default(), &mut rng);
        net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        assert_eq!(net.forward(&[0.3, -1.0, 2.0, 0.5, 1.0, 0.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn single_linear_layer_picks_weight_column() {
        // 2 inputs, 3 outputs; W row-major [out][in].
        let params = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.0, 0.0, 0.0];
        let net = QNetwork::from_params(vec![2, 3], params, 30, 60, StateScale::default()).unwrap();
        assert_eq!(net.forward(&[1.0, 0.0]).unwrap(), vec![1.0, 3.0, 5.0]);
        assert_eq!(
            net.forward(&[1.0]).unwrap_err(),
            NetError::Dimension { expected: 2, found: 1 }
        );
    }

    #[test]
    fn random_nets_give_finite_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let net = QNetwork::new(6, &[16, 16], &thr(), StateScale::default(), &mut rng);
            let s: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
            assert!(net.forward(&s).unwrap().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn file_round_trip_and_grid_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = QNetwork::new(6, &[4], &thr(), StateScale([2.0; 6]), &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        net.save(&path).unwrap();
        assert_eq!(QNetwork::load(&path, Some(&thr())).unwrap(), net);
        let other = PolicyThresholds { max_hold: 90, ..thr() };
        assert!(matches!(QNetwork::load(&path, Some(&other)), Err(NetError::GridMismatch { .. })));
        let tampered = std::fs::read_to_string(&path).unwrap().replace("headway-qnet", "other");
        assert!(QNetwork::from_json(&tampered, None).is_err());
    }
}
