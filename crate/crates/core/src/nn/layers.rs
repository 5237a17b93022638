use serde::{Deserialize, Serialize};

use super::{Binding, NnError, ParameterStore};
use crate::numcore::{GruVars, Matrix, Rng, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Linear,
    GruCell,
    Mlp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    None,
    Relu,
    Elu,
}

/// Shape of one layer.
///
/// For `GruCell`, `output_dim` is the hidden size. For `Mlp`, `hidden_dim` is
/// the width of the single hidden layer and `activation` applies after it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_dim: Option<usize>,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self {
            kind: LayerKind::Linear,
            input_dim,
            output_dim,
            hidden_dim: None,
            activation: Activation::None,
        }
    }

    pub fn gru_cell(input_dim: usize, hidden: usize) -> Self {
        Self {
            kind: LayerKind::GruCell,
            input_dim,
            output_dim: hidden,
            hidden_dim: None,
            activation: Activation::None,
        }
    }

    pub fn mlp(input_dim: usize, hidden: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Mlp,
            input_dim,
            output_dim,
            hidden_dim: Some(hidden),
            activation,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(NnError::Config(format!("layer dims must be positive: {self:?}")));
        }
        match (self.kind, self.hidden_dim) {
            (LayerKind::Mlp, None) | (LayerKind::Mlp, Some(0)) => {
                Err(NnError::Config("mlp requires a positive hidden_dim".into()))
            }
            (LayerKind::Linear, Some(_)) | (LayerKind::GruCell, Some(_)) => Err(NnError::Config(
                format!("{:?} takes no hidden_dim", self.kind),
            )),
            _ => Ok(()),
        }
    }
}

fn uniform_matrix(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Matrix {
    let k = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform_range(-k, k)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Adds the parameters of `spec` under `prefix`.
///
/// Weights are uniform in `(-k, k)` with `k = 1/sqrt(fan_in)`, biases zero.
pub fn init_params(
    spec: &LayerSpec,
    prefix: &str,
    rng: &mut Rng,
    store: &mut ParameterStore,
) -> Result<(), NnError> {
    spec.validate()?;
    match spec.kind {
        LayerKind::Linear => init_linear(prefix, spec.input_dim, spec.output_dim, rng, store),
        LayerKind::GruCell => {
            let (i, h) = (spec.input_dim, spec.output_dim);
            store.insert(format!("{prefix}.weight_ih"), uniform_matrix(i, 3 * h, i, rng))?;
            store.insert(format!("{prefix}.weight_hh"), uniform_matrix(h, 3 * h, h, rng))?;
            store.insert(format!("{prefix}.bias_ih"), Matrix::zeros(1, 3 * h))?;
            store.insert(format!("{prefix}.bias_hh"), Matrix::zeros(1, 3 * h))?;
            Ok(())
        }
        LayerKind::Mlp => {
            let hidden = spec.hidden_dim.expect("validated");
            init_linear(&format!("{prefix}.0"), spec.input_dim, hidden, rng, store)?;
            init_linear(&format!("{prefix}.1"), hidden, spec.output_dim, rng, store)
        }
    }
}

fn init_linear(
    prefix: &str,
    input: usize,
    output: usize,
    rng: &mut Rng,
    store: &mut ParameterStore,
) -> Result<(), NnError> {
    store.insert(format!("{prefix}.weight"), uniform_matrix(input, output, input, rng))?;
    store.insert(format!("{prefix}.bias"), Matrix::zeros(1, output))
}

/// `x · W + b` for `x` of shape `rows × in`.
pub fn linear(tape: &mut Tape, params: &Binding, prefix: &str, x: Var) -> Result<Var, NnError> {
    let w = params.get(&format!("{prefix}.weight"))?;
    let b = params.get(&format!("{prefix}.bias"))?;
    let y = tape.matmul(x, w)?;
    Ok(tape.add(y, b)?)
}

pub fn activate(tape: &mut Tape, x: Var, activation: Activation) -> Result<Var, NnError> {
    Ok(match activation {
        Activation::None => x,
        Activation::Relu => tape.relu(x)?,
        Activation::Elu => tape.elu(x)?,
    })
}

/// Two-layer perceptron: `linear → activation → linear`.
pub fn mlp(
    tape: &mut Tape,
    params: &Binding,
    prefix: &str,
    activation: Activation,
    x: Var,
) -> Result<Var, NnError> {
    let h = linear(tape, params, &format!("{prefix}.0"), x)?;
    let h = activate(tape, h, activation)?;
    linear(tape, params, &format!("{prefix}.1"), h)
}

/// GRU update for a batch of rows; see [`crate::numcore::GruVars`] for layout.
pub fn gru_cell(
    tape: &mut Tape,
    params: &Binding,
    prefix: &str,
    x: Var,
    h: Var,
) -> Result<Var, NnError> {
    let g = GruVars {
        x,
        h,
        w_ih: params.get(&format!("{prefix}.weight_ih"))?,
        w_hh: params.get(&format!("{prefix}.weight_hh"))?,
        b_ih: params.get(&format!("{prefix}.bias_ih"))?,
        b_hh: params.get(&format!("{prefix}.bias_hh"))?,
    };
    Ok(tape.gru_cell(g)?)
}

/// Single-vector GRU step read straight from a store.
pub fn gru_step(
    store: &ParameterStore,
    prefix: &str,
    input: &[f64],
    hidden: &[f64],
) -> Result<Vec<f64>, NnError> {
    let mut tape = Tape::new();
    let b = store.bind_frozen(&mut tape);
    let x = tape.constant(Matrix::row(input));
    let h = tape.constant(Matrix::row(hidden));
    let out = gru_cell(&mut tape, &b, prefix, x, h)?;
    Ok(tape.value(out).data().to_vec())
}
