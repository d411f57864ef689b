//! Adam update with bias-corrected first and second moments.

use super::{Gradients, NetworkParameters, TrainingConfig};

/// First and second moment estimates, stored per trainable block in the same
/// order as [`NetworkParameters::blocks`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &NetworkParameters) -> Self {
        let shapes: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
        AdamState {
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam step over every trainable parameter.
pub fn adam_step(
    params: &mut NetworkParameters,
    gradients: &Gradients,
    state: &mut AdamState,
    config: &TrainingConfig,
) {
    state.step += 1;
    let beta1 = config.beta1;
    let beta2 = config.beta2;
    let correction1 = 1.0 - beta1.powi(state.step as i32);
    let correction2 = 1.0 - beta2.powi(state.step as i32);

    let grad_blocks = gradients.blocks();
    let mut param_blocks = params.blocks_mut();
    assert_eq!(grad_blocks.len(), param_blocks.len(), "gradient layout mismatch");

    for (block_index, block) in param_blocks.iter_mut().enumerate() {
        let grads = grad_blocks[block_index];
        let m = &mut state.first[block_index];
        let v = &mut state.second[block_index];
        for i in 0..block.len() {
            let g = grads[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            block[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{init_network, Gradients, NetworkConfig, TrainingConfig};
    use super::*;

    fn setup() -> (NetworkParameters, TrainingConfig) {
        let config = NetworkConfig {
            input_width: 3,
            hidden_layers: vec![4],
            output_width: 1,
            ..NetworkConfig::desk(3, 1)
        };
        let params = init_network(&config, 7).unwrap();
        let tconfig = TrainingConfig::new(1, 2, 1e-3, 0);
        (params, tconfig)
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let (mut params, tconfig) = setup();
        let before = params.clone();
        let zeros = Gradients::zeros_like(&params);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &zeros, &mut state, &tconfig);
        assert_eq!(params, before);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn first_step_moves_by_about_the_learning_rate() {
        let (mut params, tconfig) = setup();
        let mut gradients = Gradients::zeros_like(&params);
        gradients.scale[0] = 0.37; // arbitrary nonzero gradient
        let before = params.input_norm.scale[0];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &gradients, &mut state, &tconfig);
        let moved = before - params.input_norm.scale[0];
        // bias-corrected ratio is 1 for the first step, so the move is lr
        // times the gradient sign up to the epsilon regulariser
        assert!((moved - tconfig.learning_rate).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn updates_are_deterministic() {
        let (mut a, tconfig) = setup();
        let mut b = a.clone();
        let mut gradients = Gradients::zeros_like(&a);
        for (i, g) in gradients.layers[0].0.data_mut().iter_mut().enumerate() {
            *g = (i as f64 * 0.3).sin();
        }
        let mut state_a = AdamState::new(&a);
        let mut state_b = AdamState::new(&b);
        for _ in 0..5 {
            adam_step(&mut a, &gradients, &mut state_a, &tconfig);
            adam_step(&mut b, &gradients, &mut state_b, &tconfig);
        }
        assert_eq!(a, b);
        assert_eq!(state_a, state_b);
    }
}
