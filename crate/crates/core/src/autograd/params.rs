use std::collections::HashMap;
use std::io::{Read, Write};

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// How a parameter's initial values are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Uniform in `[-a, a]`.
    Uniform(f64),
    /// Glorot/Xavier uniform, `a = sqrt(6 / (fan_in + fan_out))`.
    Glorot,
    /// Values supplied by the caller.
    Given,
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    pub init: Init,
}

/// Owns every trainable matrix of a model together with its gradient buffer.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"GLCK";
const CHECKPOINT_VERSION: u32 = 1;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        let value = match init {
            Init::Zeros | Init::Given => Array2::zeros((rows, cols)),
            Init::Uniform(a) => Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..=a)),
            Init::Glorot => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..=a))
            }
        };
        self.insert(name, value, init)
    }

    pub fn add_given(&mut self, name: &str, value: Array2<f64>) -> Result<ParamId> {
        self.insert(name, value, Init::Given)
    }

    fn insert(&mut self, name: &str, value: Array2<f64>, init: Init) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Config(format!("parameter `{name}` registered twice")));
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            grad: Array2::zeros(value.raw_dim()),
            value,
            init,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
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

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Values of every parameter, for snapshot/restore around early stopping.
    pub fn snapshot(&self) -> Vec<Array2<f64>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Array2<f64>]) {
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            p.value.assign(v);
        }
    }

    /// Binary checkpoint: magic, version, count, then per parameter the name,
    /// shape and little-endian `f64` values. Round-trips bit-exactly.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(p.value.nrows() as u64).to_le_bytes())?;
            w.write_all(&(p.value.ncols() as u64).to_le_bytes())?;
            for v in p.value.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint produced by [`write_checkpoint`](Self::write_checkpoint).
    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf)
                .map_err(|e| Error::Parse(format!("truncated checkpoint: {e}")))?;
            Ok(buf)
        }
        if &take::<4, _>(&mut r)? != CHECKPOINT_MAGIC {
            return Err(Error::Parse("not a parameter checkpoint".into()));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
        }
        let count = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = u32::from_le_bytes(take(&mut r)?) as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)
                .map_err(|e| Error::Parse(format!("truncated checkpoint: {e}")))?;
            let name = String::from_utf8(name).map_err(|e| Error::Parse(e.to_string()))?;
            let rows = u64::from_le_bytes(take(&mut r)?) as usize;
            let cols = u64::from_le_bytes(take(&mut r)?) as usize;
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                values.push(f64::from_le_bytes(take(&mut r)?));
            }
            let value = Array2::from_shape_vec((rows, cols), values)
                .map_err(|e| Error::Parse(e.to_string()))?;
            store.add_given(&name, value)?;
        }
        Ok(store)
    }

    /// Copies values from `other` by name; shapes must agree.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .id_of(&p.name)
                .map(|id| other.value(id))
                .ok_or_else(|| Error::Parse(format!("checkpoint lacks parameter `{}`", p.name)))?;
            if src.dim() != p.value.dim() {
                return Err(Error::shape(
                    "load_values_from",
                    format!("`{}`: {:?} vs {:?}", p.name, src.dim(), p.value.dim()),
                ));
            }
            p.value.assign(src);
        }
        Ok(())
    }

    /// Text dump, one parameter per line: `name,RxC,v1,v2,…`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "name,shape,values")?;
        for p in &self.params {
            write!(w, "{},{}x{}", p.name, p.value.nrows(), p.value.ncols())?;
            for v in p.value.iter() {
                write!(w, ",{v:?}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        store.add("w", 2, 2, Init::Zeros, &mut rng).unwrap();
        assert!(store.add("w", 1, 1, Init::Zeros, &mut rng).is_err());
    }

    #[test]
    fn binary_checkpoint_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        store.add("layer0.w", 3, 4, Init::Glorot, &mut rng).unwrap();
        store.add("layer0.b", 1, 4, Init::Uniform(1e-3), &mut rng).unwrap();
        store
            .add_given("odd", Array2::from_elem((1, 2), f64::MIN_POSITIVE))
            .unwrap();
        let mut buf = Vec::new();
        store.write_checkpoint(&mut buf).unwrap();
        let back = ParamStore::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.len(), store.len());
        for (a, b) in store.iter().zip(back.iter()) {
            assert_eq!(a.name, b.name);
            let bits_a: Vec<u64> = a.value.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.value.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn truncated_checkpoint_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.add("w", 2, 2, Init::Glorot, &mut rng).unwrap();
        let mut buf = Vec::new();
        store.write_checkpoint(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(ParamStore::read_checkpoint(buf.as_slice()).is_err());
    }
}
