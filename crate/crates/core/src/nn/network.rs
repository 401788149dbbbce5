use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::layer::{Activation, DenseLayer};
use super::loss::LossKind;
use crate::error::{Error, Result};
use crate::preprocess::VariantId;

/// Output head of a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// Five-class probability vector.
    #[serde(rename = "softmax-5")]
    Softmax5,
    /// Single value squashed into (0, 1).
    #[serde(rename = "sigmoid-1")]
    Sigmoid1,
}

impl Head {
    pub fn width(self) -> usize {
        match self {
            Head::Softmax5 => 5,
            Head::Sigmoid1 => 1,
        }
    }

    pub fn activation(self) -> Activation {
        match self {
            Head::Softmax5 => Activation::Softmax,
            Head::Sigmoid1 => Activation::Sigmoid,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Head::Softmax5 => "softmax-5",
            Head::Sigmoid1 => "sigmoid-1",
        }
    }

    pub fn default_loss(self) -> LossKind {
        match self {
            Head::Softmax5 => LossKind::CategoricalCrossEntropy,
            Head::Sigmoid1 => LossKind::MeanAbsoluteError,
        }
    }
}

impl std::fmt::Display for Head {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub name: String,
    pub width: usize,
}

impl InputSpec {
    pub fn new(name: impl Into<String>, width: usize) -> Self {
        Self {
            name: name.into(),
            width,
        }
    }
}

/// An input processed by its own dense stack before the merge. A branch
/// with no layers feeds its input straight into the merge.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub input: InputSpec,
    pub layers: Vec<DenseLayer>,
}

impl Branch {
    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(self.input.width, DenseLayer::outputs)
    }
}

/// Dense network with one or more input branches concatenated (together
/// with auxiliary inputs, in declaration order) into a shared trunk whose
/// last layer is the head.
///
/// Inputs are passed as one matrix per input in the order: branches, then
/// auxiliary inputs. Rows are samples.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    pub variant_id: Option<VariantId>,
    pub branches: Vec<Branch>,
    pub aux: Vec<InputSpec>,
    pub trunk: Vec<DenseLayer>,
    pub head: Head,
}

/// Per-layer parameter gradients in [`NetworkModel::layers`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

pub type Gradients = Vec<LayerGrad>;

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardTrace {
    /// Per branch: input followed by every layer output.
    branch_acts: Vec<Vec<Array2<f64>>>,
    /// Merge output followed by every trunk layer output.
    trunk_acts: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.trunk_acts.last().expect("trunk has a head layer")
    }
}

impl NetworkModel {
    /// Checks that widths chain through the graph and the head matches the
    /// last layer.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.branches.is_empty() {
            return bad("network needs at least one input branch".into());
        }
        for b in &self.branches {
            let mut width = b.input.width;
            for layer in &b.layers {
                if layer.inputs() != width {
                    return bad(format!(
                        "branch `{}`: layer expects {} inputs, receives {width}",
                        b.input.name,
                        layer.inputs()
                    ));
                }
                width = layer.outputs();
            }
        }
        let Some(last) = self.trunk.last() else {
            return bad("network needs a head layer".into());
        };
        let mut width = self.merge_width();
        for layer in &self.trunk {
            if layer.inputs() != width {
                return bad(format!(
                    "trunk layer expects {} inputs, receives {width}",
                    layer.inputs()
                ));
            }
            width = layer.outputs();
        }
        if last.outputs() != self.head.width() || last.activation != self.head.activation() {
            return bad(format!(
                "last layer ({} x {:?}) does not match head {:?}",
                last.outputs(),
                last.activation,
                self.head
            ));
        }
        for layer in self.layers() {
            if !(layer.l1 >= 0.0 && layer.l2 >= 0.0) {
                return bad("regularization coefficients must be non-negative".into());
            }
            if layer.biases.len() != layer.outputs() {
                return bad("bias length does not match layer outputs".into());
            }
        }
        Ok(())
    }

    pub fn merge_width(&self) -> usize {
        self.branches.iter().map(Branch::output_width).sum::<usize>()
            + self.aux.iter().map(|a| a.width).sum::<usize>()
    }

    /// Declared inputs in call order.
    pub fn input_specs(&self) -> Vec<&InputSpec> {
        self.branches
            .iter()
            .map(|b| &b.input)
            .chain(self.aux.iter())
            .collect()
    }

    pub fn aux_width(&self, name: &str) -> Option<usize> {
        self.aux.iter().find(|a| a.name == name).map(|a| a.width)
    }

    /// All layers: each branch's layers in order, then the trunk.
    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.branches
            .iter()
            .flat_map(|b| b.layers.iter())
            .chain(self.trunk.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.branches
            .iter_mut()
            .flat_map(|b| b.layers.iter_mut())
            .chain(self.trunk.iter_mut())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().map(DenseLayer::parameter_count).sum()
    }

    pub fn penalty(&self) -> f64 {
        self.layers().map(DenseLayer::penalty).sum()
    }

    fn check_inputs(&self, inputs: &[ArrayView2<f64>]) -> Result<usize> {
        let specs = self.input_specs();
        if inputs.len() != specs.len() {
            return Err(Error::Shape {
                branch: "<inputs>".into(),
                expected: specs.len(),
                got: inputs.len(),
            });
        }
        let rows = inputs[0].nrows();
        for (spec, x) in specs.iter().zip(inputs) {
            if x.ncols() != spec.width {
                return Err(Error::Shape {
                    branch: spec.name.clone(),
                    expected: spec.width,
                    got: x.ncols(),
                });
            }
            if x.nrows() != rows {
                return Err(Error::Shape {
                    branch: format!("{} (rows)", spec.name),
                    expected: rows,
                    got: x.nrows(),
                });
            }
        }
        Ok(rows)
    }

    pub fn forward(&self, inputs: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
        Ok(self.forward_trace(inputs)?.trunk_acts.pop().expect("head"))
    }

    /// Forward pass on one sample.
    pub fn forward_one(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        let rows: Vec<ArrayView2<f64>> = inputs
            .iter()
            .map(|x| ArrayView2::from_shape((1, x.len()), x).expect("row vector"))
            .collect();
        Ok(self.forward(&rows)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_trace(&self, inputs: &[ArrayView2<f64>]) -> Result<ForwardTrace> {
        self.check_inputs(inputs)?;
        let n_branches = self.branches.len();
        let mut branch_acts = Vec::with_capacity(n_branches);
        for (branch, x) in self.branches.iter().zip(inputs) {
            let mut acts = vec![x.to_owned()];
            for layer in &branch.layers {
                let next = layer.forward(&acts.last().expect("input").view());
                acts.push(next);
            }
            branch_acts.push(acts);
        }
        let merged = {
            let mut parts: Vec<ArrayView2<f64>> = branch_acts
                .iter()
                .map(|acts| acts.last().expect("input").view())
                .collect();
            parts.extend(inputs[n_branches..].iter().map(|x| x.view()));
            if parts.len() == 1 {
                parts[0].to_owned()
            } else {
                concatenate(Axis(1), &parts).expect("row counts checked")
            }
        };
        let mut trunk_acts = vec![merged];
        for layer in &self.trunk {
            let next = layer.forward(&trunk_acts.last().expect("merge").view());
            trunk_acts.push(next);
        }
        Ok(ForwardTrace {
            branch_acts,
            trunk_acts,
        })
    }

    /// Data loss (mean over rows) plus the regularization penalty.
    pub fn loss(
        &self,
        inputs: &[ArrayView2<f64>],
        targets: &ArrayView2<f64>,
        kind: LossKind,
    ) -> Result<f64> {
        let out = self.forward(inputs)?;
        check_targets(&out, targets)?;
        Ok(kind.value(&out.view(), targets) + self.penalty())
    }

    /// Exact gradients of [`Self::loss`] with respect to every parameter.
    /// Also returns the loss.
    pub fn backward(
        &self,
        inputs: &[ArrayView2<f64>],
        targets: &ArrayView2<f64>,
        kind: LossKind,
    ) -> Result<(f64, Gradients)> {
        let trace = self.forward_trace(inputs)?;
        check_targets(trace.output(), targets)?;
        let loss = kind.value(&trace.output().view(), targets) + self.penalty();
        let upstream = kind.gradient(&trace.output().view(), targets);
        Ok((loss, self.backward_from(&trace, upstream)))
    }

    /// Backpropagates `upstream` (gradient w.r.t. the network output) and
    /// adds the regularization gradients.
    pub fn backward_from(&self, trace: &ForwardTrace, upstream: Array2<f64>) -> Gradients {
        let mut trunk_grads = Vec::with_capacity(self.trunk.len());
        let mut g = upstream;
        for (i, layer) in self.trunk.iter().enumerate().rev() {
            let (grad, g_in) =
                layer_backward(layer, &trace.trunk_acts[i], &trace.trunk_acts[i + 1], &g);
            trunk_grads.push(grad);
            g = g_in;
        }
        trunk_grads.reverse();

        let mut grads = Vec::with_capacity(self.layers().count());
        let mut offset = 0;
        for (branch, acts) in self.branches.iter().zip(&trace.branch_acts) {
            let width = branch.output_width();
            let mut gb = g.slice(s![.., offset..offset + width]).to_owned();
            offset += width;
            let mut branch_grads = Vec::with_capacity(branch.layers.len());
            for (i, layer) in branch.layers.iter().enumerate().rev() {
                let (grad, g_in) = layer_backward(layer, &acts[i], &acts[i + 1], &gb);
                branch_grads.push(grad);
                gb = g_in;
            }
            branch_grads.reverse();
            grads.extend(branch_grads);
        }
        grads.extend(trunk_grads);
        grads
    }

    /// Zero-filled gradients matching this model's parameters.
    pub fn zero_gradients(&self) -> Gradients {
        self.layers()
            .map(|l| LayerGrad {
                weights: Array2::zeros(l.weights.raw_dim()),
                biases: Array1::zeros(l.biases.raw_dim()),
            })
            .collect()
    }
}

fn check_targets(out: &Array2<f64>, targets: &ArrayView2<f64>) -> Result<()> {
    if out.dim() != targets.dim() {
        return Err(Error::Shape {
            branch: "<targets>".into(),
            expected: out.ncols(),
            got: targets.ncols(),
        });
    }
    Ok(())
}

/// Returns the layer's parameter gradient and the gradient w.r.t. its input.
fn layer_backward(
    layer: &DenseLayer,
    input: &Array2<f64>,
    output: &Array2<f64>,
    g_out: &Array2<f64>,
) -> (LayerGrad, Array2<f64>) {
    let dz = layer.activation.backprop(output, g_out);
    let mut dw = dz.t().dot(input);
    if layer.l1 != 0.0 {
        dw.zip_mut_with(&layer.weights, |g, &w| {
            *g += layer.l1 * if w > 0.0 {
                1.0
            } else if w < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
    }
    if layer.l2 != 0.0 {
        dw.zip_mut_with(&layer.weights, |g, &w| *g += 2.0 * layer.l2 * w);
    }
    let db = dz.sum_axis(Axis(0));
    let g_in = dz.dot(&layer.weights);
    (
        LayerGrad {
            weights: dw,
            biases: db,
        },
        g_in,
    )
}
