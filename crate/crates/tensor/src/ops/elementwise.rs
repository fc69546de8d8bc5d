//! Pointwise operations and their derivatives.

use ndarray::{ArrayD, Zip};

use crate::graph::{GradFn, Graph, ValueId};
use crate::Scalar;

struct AddGrad;

impl<T: Scalar> GradFn<T> for AddGrad {
    fn backward(
        &self,
        _inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        vec![
            needs[0].then(|| grad.clone()),
            needs[1].then(|| grad.clone()),
        ]
    }
}

struct SubGrad;

impl<T: Scalar> GradFn<T> for SubGrad {
    fn backward(
        &self,
        _inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        vec![
            needs[0].then(|| grad.clone()),
            needs[1].then(|| grad.mapv(|g| -g)),
        ]
    }
}

struct MulGrad;

impl<T: Scalar> GradFn<T> for MulGrad {
    fn backward(
        &self,
        inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        vec![
            needs[0].then(|| grad * inputs[1]),
            needs[1].then(|| grad * inputs[0]),
        ]
    }
}

struct NegGrad;

impl<T: Scalar> GradFn<T> for NegGrad {
    fn backward(
        &self,
        _inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        _needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        vec![Some(grad.mapv(|g| -g))]
    }
}

struct ScaleGrad<T>(T);

impl<T: Scalar> GradFn<T> for ScaleGrad<T> {
    fn backward(
        &self,
        _inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        _needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let c = self.0;
        vec![Some(grad.mapv(|g| g * c))]
    }
}

struct AddConstGrad;

impl<T: Scalar> GradFn<T> for AddConstGrad {
    fn backward(
        &self,
        _inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        _needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        vec![Some(grad.clone())]
    }
}

struct SquareGrad;

impl<T: Scalar> GradFn<T> for SquareGrad {
    fn backward(
        &self,
        inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        _needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let two = T::from_f64(2.0);
        let mut dx = grad * inputs[0];
        dx.mapv_inplace(|v| v * two);
        vec![Some(dx)]
    }
}

struct AbsGrad;

impl<T: Scalar> GradFn<T> for AbsGrad {
    fn backward(
        &self,
        inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        _needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let mut dx = grad.clone();
        Zip::from(&mut dx).and(inputs[0]).for_each(|g, &x| {
            *g = if x > T::zero() {
                *g
            } else if x < T::zero() {
                -*g
            } else {
                T::zero()
            };
        });
        vec![Some(dx)]
    }
}

struct ReluGrad;

impl<T: Scalar> GradFn<T> for ReluGrad {
    fn backward(
        &self,
        inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        _needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let mut dx = grad.clone();
        Zip::from(&mut dx).and(inputs[0]).for_each(|g, &x| {
            if x <= T::zero() {
                *g = T::zero();
            }
        });
        vec![Some(dx)]
    }
}

struct LeakyReluGrad<T>(T);

impl<T: Scalar> GradFn<T> for LeakyReluGrad<T> {
    fn backward(
        &self,
        inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        _needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let slope = self.0;
        let mut dx = grad.clone();
        Zip::from(&mut dx).and(inputs[0]).for_each(|g, &x| {
            if x <= T::zero() {
                *g = *g * slope;
            }
        });
        vec![Some(dx)]
    }
}

struct TanhGrad;

impl<T: Scalar> GradFn<T> for TanhGrad {
    fn backward(
        &self,
        _inputs: &[&ArrayD<T>],
        output: &ArrayD<T>,
        grad: &ArrayD<T>,
        _needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let mut dx = grad.clone();
        Zip::from(&mut dx).and(output).for_each(|g, &y| {
            *g = *g * (T::one() - y * y);
        });
        vec![Some(dx)]
    }
}

struct SoftplusGrad;

impl<T: Scalar> GradFn<T> for SoftplusGrad {
    fn backward(
        &self,
        inputs: &[&ArrayD<T>],
        _output: &ArrayD<T>,
        grad: &ArrayD<T>,
        _needs: &[bool],
    ) -> Vec<Option<ArrayD<T>>> {
        let mut dx = grad.clone();
        Zip::from(&mut dx).and(inputs[0]).for_each(|g, &x| {
            // sigmoid(x), evaluated stably on both tails
            let s = if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            };
            *g = *g * s;
        });
        vec![Some(dx)]
    }
}

impl<T: Scalar> Graph<T> {
    fn assert_same_shape(&self, a: ValueId, b: ValueId, op: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{op}: operand shapes differ ({:?} vs {:?})",
            self.shape(a),
            self.shape(b)
        );
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.assert_same_shape(a, b, "add");
        let v = &self.values[a.0] + &self.values[b.0];
        self.push(v, vec![a.0, b.0], Some(Box::new(AddGrad)), false)
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.assert_same_shape(a, b, "sub");
        let v = &self.values[a.0] - &self.values[b.0];
        self.push(v, vec![a.0, b.0], Some(Box::new(SubGrad)), false)
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.assert_same_shape(a, b, "mul");
        let v = &self.values[a.0] * &self.values[b.0];
        self.push(v, vec![a.0, b.0], Some(Box::new(MulGrad)), false)
    }

    pub fn neg(&mut self, a: ValueId) -> ValueId {
        let v = self.values[a.0].mapv(|x| -x);
        self.push(v, vec![a.0], Some(Box::new(NegGrad)), false)
    }

    /// Multiply by a compile-time constant (no gradient for the constant).
    pub fn scale(&mut self, a: ValueId, c: T) -> ValueId {
        let v = self.values[a.0].mapv(|x| x * c);
        self.push(v, vec![a.0], Some(Box::new(ScaleGrad(c))), false)
    }

    pub fn add_const(&mut self, a: ValueId, c: T) -> ValueId {
        let v = self.values[a.0].mapv(|x| x + c);
        self.push(v, vec![a.0], Some(Box::new(AddConstGrad)), false)
    }

    pub fn square(&mut self, a: ValueId) -> ValueId {
        let v = self.values[a.0].mapv(|x| x * x);
        self.push(v, vec![a.0], Some(Box::new(SquareGrad)), false)
    }

    pub fn abs(&mut self, a: ValueId) -> ValueId {
        let v = self.values[a.0].mapv(|x| x.abs());
        self.push(v, vec![a.0], Some(Box::new(AbsGrad)), false)
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let v = self.values[a.0].mapv(|x| if x > T::zero() { x } else { T::zero() });
        self.push(v, vec![a.0], Some(Box::new(ReluGrad)), false)
    }

    pub fn leaky_relu(&mut self, a: ValueId, slope: T) -> ValueId {
        let v = self.values[a.0].mapv(|x| if x > T::zero() { x } else { x * slope });
        self.push(v, vec![a.0], Some(Box::new(LeakyReluGrad(slope))), false)
    }

    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        let v = self.values[a.0].mapv(|x| x.tanh());
        self.push(v, vec![a.0], Some(Box::new(TanhGrad)), false)
    }

    /// `ln(1 + exp(x))` with the usual overflow-safe formulation.
    pub fn softplus(&mut self, a: ValueId) -> ValueId {
        let v = self.values[a.0].mapv(|x| {
            let m = if x > T::zero() { x } else { T::zero() };
            m + (-x.abs()).exp().ln_1p()
        });
        self.push(v, vec![a.0], Some(Box::new(SoftplusGrad)), false)
    }

    /// Left-fold of [`Graph::add`] over `ids`.
    pub fn add_n(&mut self, ids: &[ValueId]) -> ValueId {
        assert!(!ids.is_empty(), "add_n: no operands");
        let mut acc = ids[0];
        for &id in &ids[1..] {
            acc = self.add(acc, id);
        }
        acc
    }
}
