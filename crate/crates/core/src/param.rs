//! Learnable parameters, the registry that owns them, and checkpoint I/O.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{glorot_bound, uniform_tensor};
use crate::tensor::Tensor;

/// A learnable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Owns every parameter of a model in registration order. Registration
/// order is the serialization order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(Param::new(name, value));
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform initialised parameter.
    pub fn glorot<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
    ) -> ParamId {
        let t = uniform_tensor(rng, shape, glorot_bound(fan_in, fan_out));
        self.add(name, t)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::shape("set_value", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Param::zero_grad);
    }

    /// Writes `manifest.txt` (`name<TAB>shape<TAB>offset` per line, offsets in
    /// elements) and `params.tnsr` (all values concatenated, rank 1).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        let mut flat = Vec::with_capacity(self.num_scalars());
        for p in &self.params {
            let shape = p
                .value
                .shape()
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            manifest.push_str(&format!("{}\t{}\t{}\n", p.name, shape, flat.len()));
            flat.extend_from_slice(p.value.data());
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
        let blob = Tensor::new(&[flat.len().max(1)], if flat.is_empty() { vec![0.0] } else { flat })?;
        let mut w = BufWriter::new(fs::File::create(dir.join("params.tnsr"))?);
        blob.write_tnsr(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Loads values saved by [`ParamStore::save`] into a store built from the
    /// same configuration. Fails on the first name or shape mismatch.
    pub fn load(&mut self, dir: &Path) -> Result<()> {
        let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
        let blob = Tensor::read_tnsr(fs::File::open(dir.join("params.tnsr"))?)?;
        let entries: Vec<&str> = manifest.lines().filter(|l| !l.is_empty()).collect();
        for (i, p) in self.params.iter_mut().enumerate() {
            let Some(line) = entries.get(i) else {
                return Err(Error::Load {
                    name: p.name.clone(),
                    detail: "missing from checkpoint".into(),
                });
            };
            let mut fields = line.split('\t');
            let (name, shape, offset) = match (fields.next(), fields.next(), fields.next()) {
                (Some(n), Some(s), Some(o)) => (n, s, o),
                _ => return Err(Error::Format(format!("bad manifest line `{line}`"))),
            };
            if name != p.name {
                return Err(Error::Load {
                    name: p.name.clone(),
                    detail: format!("checkpoint has `{name}` in this position"),
                });
            }
            let shape: Vec<usize> = shape
                .split('x')
                .map(|d| d.parse().map_err(|_| Error::Format(format!("bad shape `{shape}`"))))
                .collect::<Result<_>>()?;
            if shape != p.value.shape() {
                return Err(Error::Load {
                    name: p.name.clone(),
                    detail: format!("shape {:?} in checkpoint, {:?} expected", shape, p.value.shape()),
                });
            }
            let offset: usize = offset
                .parse()
                .map_err(|_| Error::Format(format!("bad offset `{offset}`")))?;
            let n = p.value.len();
            let src = blob.data().get(offset..offset + n).ok_or_else(|| Error::Load {
                name: p.name.clone(),
                detail: "offset beyond end of params.tnsr".into(),
            })?;
            p.value.data_mut().copy_from_slice(src);
        }
        if entries.len() != self.params.len() {
            let extra = entries[self.params.len().min(entries.len())..]
                .first()
                .and_then(|l| l.split('\t').next())
                .unwrap_or("?");
            return Err(Error::Load {
                name: extra.to_string(),
                detail: "not present in the configured model".into(),
            });
        }
        Ok(())
    }
}

/// Anything made of parameters registered in a [`ParamStore`].
pub trait WeightSet {
    fn visit(&self, f: &mut dyn FnMut(ParamId));

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        self.visit(&mut |id| ids.push(id));
        ids
    }
}

impl<T: WeightSet> WeightSet for [T] {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        self.iter().for_each(|w| w.visit(f));
    }
}

impl<T: WeightSet, const N: usize> WeightSet for [T; N] {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        self.as_slice().visit(f);
    }
}

impl<T: WeightSet> WeightSet for Vec<T> {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        self.as_slice().visit(f);
    }
}

impl<T: WeightSet> WeightSet for Option<T> {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        if let Some(w) = self {
            w.visit(f);
        }
    }
}

impl WeightSet for ParamId {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        f(*self);
    }
}

/// Total scalar parameter count of a weight container.
pub fn count_params<W: WeightSet + ?Sized>(store: &ParamStore, w: &W) -> usize {
    let mut n = 0;
    w.visit(&mut |id| n += store.value(id).len());
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        s.add("b", Tensor::new(&[3], vec![-1.0, 0.5, 9.0]).unwrap());
        s
    }

    #[test]
    fn grads_reset_to_zero() {
        let mut s = store();
        s.get_mut(ParamId(0)).grad.data_mut()[1] = 3.0;
        s.zero_grads();
        assert!(s.iter().all(|p| p.grad.data().iter().all(|&g| g == 0.0)));
        assert!(s.iter().all(|p| p.grad.shape() == p.value.shape()));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = store();
        s.save(dir.path()).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert_eq!(manifest, "a\t2x2\t0\nb\t3\t4\n");
        let mut t = ParamStore::new();
        t.add("a", Tensor::zeros(&[2, 2]));
        t.add("b", Tensor::zeros(&[3]));
        t.load(dir.path()).unwrap();
        assert_eq!(t.value(ParamId(1)), s.value(ParamId(1)));
    }

    #[test]
    fn load_names_first_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        store().save(dir.path()).unwrap();
        let mut t = ParamStore::new();
        t.add("a", Tensor::zeros(&[2, 2]));
        t.add("b", Tensor::zeros(&[4]));
        match t.load(dir.path()) {
            Err(Error::Load { name, .. }) => assert_eq!(name, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn counts_scalars() {
        let s = store();
        assert_eq!(count_params(&s, &vec![ParamId(0), ParamId(1)]), 7);
    }
}
