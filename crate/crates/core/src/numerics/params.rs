use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::{Gradients, Graph, NumericsError, Tensor, Var};

/// Named parameter tensors, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    /// Uniform `[-scale, scale]` initialization.
    pub fn init_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], scale: f64, rng: &mut R) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape"));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Copies every tensor whose name starts with `prefix` into a new store.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Overwrites or adds every tensor of `other`.
    pub fn merge_from(&mut self, other: &ParamStore) {
        for (k, v) in &other.tensors {
            self.tensors.insert(k.clone(), v.clone());
        }
    }

    /// Registers every tensor on the graph. Names matching one of
    /// `trainable_prefixes` become parameters; the rest are constants.
    pub fn bind(&self, g: &mut Graph, trainable_prefixes: &[&str]) -> Bound {
        let mut vars = HashMap::with_capacity(self.tensors.len());
        let mut trainable = Vec::new();
        for (name, t) in &self.tensors {
            let is_trainable = trainable_prefixes.iter().any(|p| name.starts_with(p));
            let v = if is_trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
            if is_trainable {
                trainable.push((name.clone(), v));
            }
            vars.insert(name.clone(), v);
        }
        Bound { vars, trainable }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    /// First tensor containing a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors.iter().find(|(_, t)| !t.all_finite()).map(|(k, _)| k.as_str())
    }
}

/// Graph handles for a bound [`ParamStore`].
pub struct Bound {
    vars: HashMap<String, Var>,
    trainable: Vec<(String, Var)>,
}

impl Bound {
    /// Handle for `name`. Panics on unknown names, which indicates a model
    /// wiring bug rather than a runtime condition.
    pub fn var(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter {name} not bound"),
        }
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Gradients for every trainable tensor, in name order.
    pub fn collect(&self, grads: &Gradients) -> Vec<(String, Tensor)> {
        self.trainable.iter().map(|(k, v)| (k.clone(), grads.wrt(*v))).collect()
    }
}

/// Adds `other` into `acc` name by name.
pub(crate) fn accumulate_grads(
    acc: &mut BTreeMap<String, Tensor>,
    other: Vec<(String, Tensor)>,
) -> Result<(), NumericsError> {
    for (k, t) in other {
        match acc.get_mut(&k) {
            Some(existing) => {
                if existing.shape() != t.shape() {
                    return Err(NumericsError::Shape {
                        op: "accumulate_grads",
                        lhs: existing.shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
                existing.add_assign(&t);
            }
            None => {
                acc.insert(k, t);
            }
        }
    }
    Ok(())
}
