//! Named trainable tensors and their binding into a [`Graph`].

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{read_checkpoint, write_checkpoint, Gradients, Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<F: Scalar> {
    pub name: String,
    pub value: Tensor<F>,
    pub frozen: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<F: Scalar = f32> {
    params: Vec<Param<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(
            self.id(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.params.push(Param {
            name,
            value,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    /// Adds a tensor drawn from `U(-a, a)` with `a = gain * sqrt(3 / fan_in)`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let a = gain * (3.0 / fan_in as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| F::c(rng.gen_range(-a..a)));
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total scalar count over all tensors.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Scalar count over tensors whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
        }
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    frozen: p.frozen,
                })
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &BTreeMap<String, String>) -> Result<()> {
        let entries: Vec<(&str, &Tensor<F>)> =
            self.params.iter().map(|p| (p.name.as_str(), &p.value)).collect();
        write_checkpoint(path, &entries, meta)
    }

    /// Overwrites every parameter from a checkpoint; names and shapes must
    /// match exactly. Returns the checkpoint metadata.
    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
        let ck = read_checkpoint(path)?;
        if ck.tensors.len() != self.params.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{} tensors, model has {}", ck.tensors.len(), self.params.len()),
            ));
        }
        for p in &mut self.params {
            let t = ck
                .tensors
                .get(&p.name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing tensor {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!("{}: shape {:?} vs model {:?}", p.name, t.shape(), p.value.shape()),
                ));
            }
            p.value = t.cast();
        }
        Ok(ck.meta)
    }
}

/// Lazily maps parameters onto graph leaves for one forward pass.
#[derive(Debug, Default)]
pub struct Binding {
    vars: Vec<Option<Var>>,
}

impl Binding {
    pub fn new() -> Self {
        Binding::default()
    }

    /// Binding whose parameter `i` is already the node `vars[i]`, e.g. the
    /// probe inputs of a gradient check.
    pub fn with_vars(vars: &[Var]) -> Self {
        Binding {
            vars: vars.iter().copied().map(Some).collect(),
        }
    }

    pub fn var<F: Scalar>(&mut self, g: &mut Graph<F>, store: &ParamStore<F>, id: ParamId) -> Var {
        if self.vars.len() < store.len() {
            self.vars.resize(store.len(), None);
        }
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let p = store.get(id);
        let v = g.leaf(p.value.clone(), !p.frozen);
        self.vars[id.0] = Some(v);
        v
    }

    pub fn bound(&self, id: ParamId) -> Option<Var> {
        self.vars.get(id.0).copied().flatten()
    }

    /// Gradient per parameter (`None` where unbound, frozen or unused).
    pub fn gradients<F: Scalar>(&self, grads: &Gradients<F>) -> Vec<Option<Tensor<F>>> {
        self.vars
            .iter()
            .map(|v| v.and_then(|v| grads.get(v).cloned()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn binding_reuses_leaves_and_respects_freeze() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::ones(&[2]));
        let b = store.add("b", Tensor::ones(&[2]));
        store.set_frozen_prefix("b", true);
        let mut g = Graph::new();
        let mut bind = Binding::new();
        let va = bind.var(&mut g, &store, a);
        assert_eq!(bind.var(&mut g, &store, a), va);
        let vb = bind.var(&mut g, &store, b);
        assert!(g.requires_grad(va) && !g.requires_grad(vb));
        let s = g.add(va, vb).unwrap();
        let loss = g.sum(s);
        let grads = bind.gradients(&g.backward(loss).unwrap());
        assert!(grads[a.index()].is_some() && grads[b.index()].is_none());
    }

    #[test]
    fn uniform_init_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f32>::new();
        let id = store.add_uniform("w", &[64, 27], 27, 1.0, &mut rng);
        let a = (3.0f32 / 27.0).sqrt();
        assert!(store.get(id).value.data().iter().all(|v| v.abs() <= a));
    }

    #[test]
    fn save_load_checks_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let mut s = ParamStore::<f32>::new();
        s.add("x", Tensor::full(&[3], 2.0));
        s.save(&path, &BTreeMap::new()).unwrap();
        let mut t = ParamStore::<f32>::new();
        t.add("x", Tensor::zeros(&[3]));
        t.load(&path).unwrap();
        assert_eq!(t.get(ParamId(0)).value.data(), &[2.0; 3]);
        let mut u = ParamStore::<f32>::new();
        u.add("y", Tensor::zeros(&[3]));
        assert!(u.load(&path).is_err());
    }
}
