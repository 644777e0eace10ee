//! Feed-forward ReLU networks and their text format.
//!
//! ```text
//! # comments and blank lines are ignored
//! 3              # number of layers, input layer included
//! 1,2,1          # layer sizes
//! output=relu    # optional; the output layer is linear otherwise
//! 1              # layer 2 weights, one row per node ...
//! -1
//! 0,0            # ... followed by the layer's biases
//! 1,1            # layer 3
//! 0
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `weights[i][j]`: from node `j` of the previous layer to node `i`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn size(&self) -> usize {
        self.biases.len()
    }

    fn pre_activation(&self, prev: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(prev).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layer_sizes: Vec<usize>,
    layers: Vec<Layer>,
    output_relu: bool,
}

/// Pre- and post-activation values of one non-input layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerValues {
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("a network needs at least 2 layers, got {0}")]
    TooFewLayers(usize),
    #[error("layer {0} has no nodes")]
    EmptyLayer(usize),
    #[error("layer {layer}: {what} has {found} entries, expected {expected}")]
    Dimension {
        layer: usize,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer}: non-finite {what}")]
    NonFinite { layer: usize, what: &'static str },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("file ends early (after line {line}): expected {expected}")]
    Truncated { line: usize, expected: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Network {
    /// `layers[i]` maps layer `i` (0 = input) to layer `i + 1`.
    pub fn new(
        layer_sizes: Vec<usize>,
        layers: Vec<Layer>,
        output_relu: bool,
    ) -> Result<Self, NetworkError> {
        if layer_sizes.len() < 2 {
            return Err(NetworkError::TooFewLayers(layer_sizes.len()));
        }
        if let Some(i) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(NetworkError::EmptyLayer(i + 1));
        }
        if layers.len() != layer_sizes.len() - 1 {
            return Err(NetworkError::Dimension {
                layer: 0,
                what: "layer list",
                expected: layer_sizes.len() - 1,
                found: layers.len(),
            });
        }
        for (i, layer) in layers.iter().enumerate() {
            let number = i + 2;
            let (rows, cols) = (layer_sizes[i + 1], layer_sizes[i]);
            check_len(number, "weight matrix", rows, layer.weights.len())?;
            check_len(number, "bias vector", rows, layer.biases.len())?;
            for row in &layer.weights {
                check_len(number, "weight row", cols, row.len())?;
                if row.iter().any(|w| !w.is_finite()) {
                    return Err(NetworkError::NonFinite {
                        layer: number,
                        what: "weight",
                    });
                }
            }
            if layer.biases.iter().any(|b| !b.is_finite()) {
                return Err(NetworkError::NonFinite {
                    layer: number,
                    what: "bias",
                });
            }
        }
        Ok(Self {
            layer_sizes,
            layers,
            output_relu,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_relu(&self) -> bool {
        self.output_relu
    }

    pub fn num_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_outputs(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    /// Whether layer `i` (index into [`Network::layers`]) applies ReLU.
    pub fn is_relu_layer(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.output_relu
    }

    pub fn num_relus(&self) -> usize {
        (0..self.layers.len())
            .filter(|&i| self.is_relu_layer(i))
            .map(|i| self.layers[i].size())
            .sum()
    }

    /// Values of every non-input layer.
    pub fn forward_trace(&self, inputs: &[f64]) -> Vec<LayerValues> {
        assert_eq!(inputs.len(), self.num_inputs(), "input dimension");
        let mut out: Vec<LayerValues> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = out.last().map_or(inputs, |l| &l.post);
            let pre = layer.pre_activation(prev);
            let post = if self.is_relu_layer(i) {
                pre.iter().map(|v| v.max(0.0)).collect()
            } else {
                pre.clone()
            };
            out.push(LayerValues { pre, post });
        }
        out
    }

    pub fn forward(&self, inputs: &[f64]) -> Vec<f64> {
        self.forward_trace(inputs)
            .pop()
            .expect("at least one layer")
            .post
    }

    /// Interval bounds on the pre-activation value of every non-input node,
    /// given a box on the inputs.
    pub fn interval_bounds(&self, input_box: &[(f64, f64)]) -> Vec<Vec<(f64, f64)>> {
        assert_eq!(input_box.len(), self.num_inputs(), "input dimension");
        let mut prev: Vec<(f64, f64)> = input_box.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let pre: Vec<(f64, f64)> = layer
                .weights
                .iter()
                .zip(&layer.biases)
                .map(|(row, &b)| {
                    let (mut lo, mut hi) = (b, b);
                    for (&w, &(pl, ph)) in row.iter().zip(&prev) {
                        if w > 0.0 {
                            lo += w * pl;
                            hi += w * ph;
                        } else if w < 0.0 {
                            lo += w * ph;
                            hi += w * pl;
                        }
                    }
                    (lo, hi)
                })
                .collect();
            prev = if self.is_relu_layer(i) {
                pre.iter().map(|&(l, h)| (l.max(0.0), h.max(0.0))).collect()
            } else {
                pre.clone()
            };
            out.push(pre);
        }
        out
    }

    /// Two copies with disjoint inputs, hidden nodes and outputs: inputs are
    /// `[x₁; x₂]`, outputs `[y₁; y₂]`.
    pub fn side_by_side(&self, other: &Network) -> Result<Network, NetworkError> {
        if self.layer_sizes.len() != other.layer_sizes.len() || self.output_relu != other.output_relu
        {
            return Err(NetworkError::Dimension {
                layer: 0,
                what: "layer count",
                expected: self.layer_sizes.len(),
                found: other.layer_sizes.len(),
            });
        }
        let sizes: Vec<usize> = self
            .layer_sizes
            .iter()
            .zip(&other.layer_sizes)
            .map(|(a, b)| a + b)
            .collect();
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                let (a_cols, b_cols) = (
                    a.weights.first().map_or(0, Vec::len),
                    b.weights.first().map_or(0, Vec::len),
                );
                let mut weights = Vec::with_capacity(a.size() + b.size());
                for row in &a.weights {
                    let mut r = row.clone();
                    r.resize(a_cols + b_cols, 0.0);
                    weights.push(r);
                }
                for row in &b.weights {
                    let mut r = vec![0.0; a_cols];
                    r.extend_from_slice(row);
                    weights.push(r);
                }
                let mut biases = a.biases.clone();
                biases.extend_from_slice(&b.biases);
                Layer { weights, biases }
            })
            .collect();
        Network::new(sizes, layers, self.output_relu)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.layer_sizes.len());
        let _ = writeln!(s, "{}", join(self.layer_sizes.iter()));
        if self.output_relu {
            s.push_str("output=relu\n");
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let _ = writeln!(s, "# layer {}", i + 2);
            for row in &layer.weights {
                let _ = writeln!(s, "{}", join(row.iter()));
            }
            let _ = writeln!(s, "{}", join(layer.biases.iter()));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Network, NetworkError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, strip_comment(l)))
            .filter(|(_, l)| !l.trim().is_empty());
        let mut last_line = 0;
        let mut next = |expected: &str| -> Result<(usize, &str), NetworkError> {
            match lines.next() {
                Some((n, l)) => {
                    last_line = n;
                    Ok((n, l))
                }
                None => Err(NetworkError::Truncated {
                    line: last_line,
                    expected: expected.to_string(),
                }),
            }
        };

        let (n, l) = next("layer count")?;
        let count_fields = parse_fields::<usize>(n, l)?;
        if count_fields.len() != 1 {
            return Err(NetworkError::Parse {
                line: n,
                column: 1,
                message: "expected a single layer count".into(),
            });
        }
        let count = count_fields[0];
        if count < 2 {
            return Err(NetworkError::TooFewLayers(count));
        }
        let (n, l) = next("layer sizes")?;
        let sizes = parse_fields::<usize>(n, l)?;
        if sizes.len() != count {
            return Err(NetworkError::Parse {
                line: n,
                column: 1,
                message: format!("expected {count} layer sizes, found {}", sizes.len()),
            });
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(NetworkError::EmptyLayer(i + 1));
        }

        let mut output_relu = false;
        let mut layers = Vec::with_capacity(count - 1);
        let mut pending = None;
        let (n, l) = next("weights of layer 2")?;
        let t = l.trim();
        if let Some(value) = t.strip_prefix("output=") {
            output_relu = match value.trim() {
                "relu" => true,
                "linear" => false,
                other => {
                    return Err(NetworkError::Parse {
                        line: n,
                        column: l.find('=').unwrap_or(0) + 2,
                        message: format!("unknown output activation `{other}`"),
                    })
                }
            };
        } else {
            pending = Some((n, l));
        }

        for k in 1..count {
            let (rows, cols) = (sizes[k], sizes[k - 1]);
            let mut weights = Vec::with_capacity(rows);
            for r in 0..rows {
                let (n, l) = match pending.take() {
                    Some(p) => p,
                    None => next(&format!("weight row {} of layer {}", r + 1, k + 1))?,
                };
                let row = parse_fields::<f64>(n, l)?;
                if row.len() != cols {
                    return Err(NetworkError::Parse {
                        line: n,
                        column: 1,
                        message: format!(
                            "layer {}: weight row has {} entries, expected {cols}",
                            k + 1,
                            row.len()
                        ),
                    });
                }
                weights.push(row);
            }
            let (n, l) = next(&format!("biases of layer {}", k + 1))?;
            let biases = parse_fields::<f64>(n, l)?;
            if biases.len() != rows {
                return Err(NetworkError::Parse {
                    line: n,
                    column: 1,
                    message: format!(
                        "layer {}: {} biases, expected {rows}",
                        k + 1,
                        biases.len()
                    ),
                });
            }
            layers.push(Layer { weights, biases });
        }
        if let Ok((n, _)) = next("end of file") {
            return Err(NetworkError::Parse {
                line: n,
                column: 1,
                message: "unexpected content after the last layer".into(),
            });
        }
        Network::new(sizes, layers, output_relu)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Network, NetworkError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetworkError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn check_len(
    layer: usize,
    what: &'static str,
    expected: usize,
    found: usize,
) -> Result<(), NetworkError> {
    if expected == found {
        Ok(())
    } else {
        Err(NetworkError::Dimension {
            layer,
            what,
            expected,
            found,
        })
    }
}

fn join<T: std::fmt::Display>(items: impl Iterator<Item = T>) -> String {
    items.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_fields<T: std::str::FromStr>(line: usize, text: &str) -> Result<Vec<T>, NetworkError> {
    let mut out = Vec::new();
    let mut offset = 0;
    for field in text.split(',') {
        let lead = field.len() - field.trim_start().len();
        let token = field.trim();
        let column = offset + lead + 1;
        offset += field.len() + 1;
        if token.is_empty() {
            return Err(NetworkError::Parse {
                line,
                column,
                message: "empty field".into(),
            });
        }
        match token.parse::<T>() {
            Ok(v) => out.push(v),
            Err(_) => {
                return Err(NetworkError::Parse {
                    line,
                    column,
                    message: format!("`{token}` is not a valid number"),
                })
            }
        }
    }
    Ok(out)
}

/// The two-ReLU network whose output equals its input on `[0, 1]`:
/// `y = ReLU(x) + ReLU(−x)`.
pub fn identity_example() -> Network {
    Network::new(
        vec![1, 2, 1],
        vec![
            Layer {
                weights: vec![vec![1.0], vec![-1.0]],
                biases: vec![0.0, 0.0],
            },
            Layer {
                weights: vec![vec![1.0, 1.0]],
                biases: vec![0.0],
            },
        ],
        false,
    )
    .expect("well-formed")
}
