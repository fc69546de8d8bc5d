//! Parameter plumbing: named snapshots, per-step graph interning and the
//! seeded weight initializer.

use std::collections::HashMap;

use liss_tensor::{Graph, Scalar, ValueId};
use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Flat, ordered, named copy of a network's trainable parameters.
///
/// Snapshots are deep copies: training the source network afterwards does
/// not alter them. Two snapshots of the same architecture always carry the
/// same name set in the same order.
#[derive(Debug, Clone)]
pub struct ParamVector<T: Scalar> {
    entries: Vec<(String, ArrayD<T>)>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(entries: Vec<(String, ArrayD<T>)>) -> Self {
        ParamVector { entries }
    }

    pub fn entries(&self) -> &[(String, ArrayD<T>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, a)| a.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
    }

    /// Checks that `other` has the same name/shape layout.
    pub fn compatible_with(&self, other: &ParamVector<T>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Snapshot(format!(
                "parameter count differs: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((na, aa), (nb, ab)) in self.entries.iter().zip(other.entries.iter()) {
            if na != nb {
                return Err(Error::Snapshot(format!(
                    "parameter name mismatch: '{na}' vs '{nb}'"
                )));
            }
            if aa.shape() != ab.shape() {
                return Err(Error::Snapshot(format!(
                    "shape mismatch for '{na}': {:?} vs {:?}",
                    aa.shape(),
                    ab.shape()
                )));
            }
        }
        Ok(())
    }

    /// Exact bitwise equality (distinguishes -0.0 from 0.0).
    pub fn bits_eq(&self, other: &ParamVector<T>) -> bool {
        if self.compatible_with(other).is_err() {
            return false;
        }
        self.entries.iter().zip(other.entries.iter()).all(|((_, a), (_, b))| {
            a.iter()
                .zip(b.iter())
                .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
        })
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &ParamVector<T>) -> Result<f64> {
        self.compatible_with(other)?;
        let mut worst = 0.0f64;
        for ((_, a), (_, b)) in self.entries.iter().zip(other.entries.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                worst = worst.max((x.as_f64() - y.as_f64()).abs());
            }
        }
        Ok(worst)
    }

    /// Order-insensitive content digest used to pin frozen parameters.
    pub fn checksum(&self) -> u64 {
        // FNV-1a over names and little-endian f64 bits.
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, arr) in &self.entries {
            eat(name.as_bytes());
            for v in arr.iter() {
                eat(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Per-graph cache mapping parameter names to tape leaves, so that a
/// network used several times in one step contributes one leaf (and one
/// accumulated gradient) per parameter.
#[derive(Default)]
pub struct Registry {
    entries: Vec<(String, ValueId)>,
    index: HashMap<String, usize>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn intern<T: Scalar>(
        &mut self,
        graph: &mut Graph<T>,
        name: &str,
        value: &ArrayD<T>,
        trainable: bool,
    ) -> ValueId {
        if let Some(&i) = self.index.get(name) {
            return self.entries[i].1;
        }
        let id = if trainable {
            graph.param(value.clone())
        } else {
            graph.constant(value.clone())
        };
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), id));
        id
    }

    pub fn entries(&self) -> &[(String, ValueId)] {
        &self.entries
    }

    pub fn id_of(&self, name: &str) -> Option<ValueId> {
        self.index.get(name).map(|&i| self.entries[i].1)
    }
}

/// One layer-output row of a traced forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub layer: String,
    pub shape: Vec<usize>,
}

/// Everything a network forward pass needs: the tape, the parameter
/// registry and an optional shape trace sink.
pub struct Fwd<'a, T: Scalar> {
    pub graph: &'a mut Graph<T>,
    pub reg: &'a mut Registry,
    pub trace: Option<&'a mut Vec<TraceRow>>,
}

impl<'a, T: Scalar> Fwd<'a, T> {
    pub fn new(graph: &'a mut Graph<T>, reg: &'a mut Registry) -> Self {
        Fwd {
            graph,
            reg,
            trace: None,
        }
    }

    pub fn with_trace(
        graph: &'a mut Graph<T>,
        reg: &'a mut Registry,
        trace: &'a mut Vec<TraceRow>,
    ) -> Self {
        Fwd {
            graph,
            reg,
            trace: Some(trace),
        }
    }

    pub fn intern(&mut self, name: &str, value: &ArrayD<T>, trainable: bool) -> ValueId {
        self.reg.intern(self.graph, name, value, trainable)
    }

    pub fn record(&mut self, layer: &str, id: ValueId) {
        if let Some(trace) = self.trace.as_mut() {
            let shape = self.graph.shape(id).to_vec();
            trace.push(TraceRow {
                layer: layer.to_string(),
                shape,
            });
        }
    }
}

/// Seeded weight initializer: N(0, 0.02) for convolution and linear
/// weights, zeros for biases, ones/zeros for the affine norm parameters.
/// Values are drawn in f64 so a given seed produces the same stream no
/// matter the training precision.
pub struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Init {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Init {
            rng,
            normal: Normal::new(0.0, 0.02).unwrap(),
        }
    }

    pub fn weight<T: Scalar>(&mut self, shape: &[usize]) -> ArrayD<T> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| {
            T::from_f64(self.normal.sample(&mut self.rng))
        })
    }

    pub fn zeros<T: Scalar>(shape: &[usize]) -> ArrayD<T> {
        ArrayD::zeros(IxDyn(shape))
    }

    pub fn ones<T: Scalar>(shape: &[usize]) -> ArrayD<T> {
        ArrayD::from_elem(IxDyn(shape), T::one())
    }
}
