use super::{NumericsError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable quantity with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Variable {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
    /// Whether decoupled weight decay applies to this variable.
    pub decay: bool,
}

/// Ordered collection of variables. Iteration order is insertion order,
/// which keeps optimizer updates and snapshots reproducible.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    vars: Vec<Variable>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.vars.push(Variable {
            name: name.into(),
            value,
            grad,
            trainable: true,
            decay: true,
        });
        ParamId(self.vars.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Variable {
        &self.vars[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Variable {
        &mut self.vars[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.vars[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.vars[id.0].grad
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<(), NumericsError> {
        let var = &mut self.vars[id.0];
        if var.value.shape() != value.shape() {
            return Err(NumericsError::Shape {
                op: "set_value",
                left: var.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        var.value = value;
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.vars.iter().position(|v| v.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for var in &mut self.vars {
            var.grad.data_mut().fill(0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.vars.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Variable)> {
        self.vars.iter().enumerate().map(|(i, v)| (ParamId(i), v))
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &Tensor) {
        let var = &mut self.vars[id.0];
        if var.trainable {
            var.grad.add_assign(grad);
        }
    }
}
