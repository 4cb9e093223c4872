use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use super::{Real, TensorError};
use crate::rng::{derive_seed, seeded};

/// Stable handle to a registered parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Initialisation scheme for a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform on `[-b, b]` with `b = sqrt(6 / (fan_in + fan_out))`, taking
    /// rows as fan-in and columns as fan-out.
    XavierUniform,
    Zeros,
    Ones,
}

/// Draws a `rows x cols` matrix for `init`, deterministic per `seed`.
pub fn init_parameter<T: Real>(init: Init, rows: usize, cols: usize, seed: u64) -> Array2<T> {
    match init {
        Init::Zeros => Array2::zeros((rows, cols)),
        Init::Ones => Array2::ones((rows, cols)),
        Init::XavierUniform => {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let mut rng = seeded(seed);
            Array2::from_shape_simple_fn((rows, cols), || T::of(rng.random_range(-bound..=bound)))
        }
    }
}

/// A named learnable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Array2<T>,
    pub grad: Array2<T>,
    pub init: Init,
}

/// Owns every parameter of a model, in registration order.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, usize>,
    seed: u64,
}

const CHECKPOINT_MAGIC: &[u8] = b"GCHG1\n";

impl<T: Real> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
            seed,
        }
    }

    /// Registers a parameter; the `k`-th registration draws from stream `k`
    /// of the store seed.
    pub fn register(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Result<ParamId, TensorError> {
        if self.by_name.contains_key(name) {
            return Err(TensorError::DuplicateParameter(name.to_string()));
        }
        let idx = self.params.len();
        let value = init_parameter(init, rows, cols, derive_seed(self.seed, idx as u64));
        self.params.push(Parameter {
            name: name.to_string(),
            grad: Array2::zeros((rows, cols)),
            value,
            init,
        });
        self.by_name.insert(name.to_string(), idx);
        Ok(ParamId(idx))
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

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn value(&self, id: ParamId) -> &Array2<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<T> {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.params[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Array2<T>) {
        self.params[id.0].grad += g;
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Serialises every parameter as `f32` in registration order.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), TensorError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        for p in &self.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(p.value.nrows() as u32).to_le_bytes())?;
            w.write_all(&(p.value.ncols() as u32).to_le_bytes())?;
            for v in p.value.iter() {
                w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), TensorError> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Overwrites registered parameter values from a checkpoint stream.
    ///
    /// Every registered parameter must appear with a matching shape, and the
    /// stream may not hold parameters the store does not know.
    pub fn read_checkpoint<R: Read>(&mut self, mut r: R) -> Result<(), TensorError> {
        let bad = |m: &str| TensorError::BadCheckpoint(m.to_string());
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(bad("wrong magic"));
        }
        let mut seen = vec![false; self.params.len()];
        let mut word = [0u8; 4];
        loop {
            match r.read(&mut word[..1])? {
                0 => break,
                _ => r.read_exact(&mut word[1..]).map_err(|_| bad("truncated name length"))?,
            }
            let len = u32::from_le_bytes(word) as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("name is not utf-8"))?;
            r.read_exact(&mut word).map_err(|_| bad("truncated shape"))?;
            let rows = u32::from_le_bytes(word) as usize;
            r.read_exact(&mut word).map_err(|_| bad("truncated shape"))?;
            let cols = u32::from_le_bytes(word) as usize;
            let idx = *self
                .by_name
                .get(&name)
                .ok_or_else(|| TensorError::BadCheckpoint(format!("unknown parameter `{name}`")))?;
            let p = &mut self.params[idx];
            if p.value.dim() != (rows, cols) {
                return Err(TensorError::BadCheckpoint(format!(
                    "`{name}` has shape {rows}x{cols}, expected {:?}",
                    p.value.dim()
                )));
            }
            for v in p.value.iter_mut() {
                r.read_exact(&mut word).map_err(|_| bad("truncated data"))?;
                *v = T::of(f32::from_le_bytes(word) as f64);
            }
            seen[idx] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(TensorError::BadCheckpoint(format!("parameter `{}` missing", self.params[missing].name)));
        }
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<(), TensorError> {
        let bytes = std::fs::read(path)?;
        self.read_checkpoint(bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_and_ones() {
        let z: Array2<f32> = init_parameter(Init::Zeros, 3, 2, 1);
        assert!(z.iter().all(|&v| v == 0.0));
        let o: Array2<f64> = init_parameter(Init::Ones, 3, 2, 1);
        assert!(o.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a: Array2<f32> = init_parameter(Init::XavierUniform, 16, 8, 42);
        let b: Array2<f32> = init_parameter(Init::XavierUniform, 16, 8, 42);
        let c: Array2<f32> = init_parameter(Init::XavierUniform, 16, 8, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn xavier_statistics() {
        // 1000 x 1000 = 10^6 draws.
        let w: Array2<f64> = init_parameter(Init::XavierUniform, 1000, 1000, 7);
        let bound = (6.0f64 / 2000.0).sqrt();
        assert!(w.iter().all(|v| v.abs() <= bound));
        let mean = w.mean().unwrap();
        // Uniform variance b^2/3; standard error of the mean over 10^6 draws.
        let se = bound / 3f64.sqrt() / 1000.0;
        assert!(mean.abs() < 4.0 * se, "mean {mean} se {se}");
        let var = w.mapv(|v| v * v).mean().unwrap();
        assert!((var - bound * bound / 3.0).abs() < 0.01 * bound * bound);
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut s = ParamStore::<f32>::new(0);
        s.register("w", 1, 1, Init::Zeros).unwrap();
        assert!(matches!(s.register("w", 2, 2, Init::Zeros), Err(TensorError::DuplicateParameter(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut a = ParamStore::<f32>::new(5);
        a.register("enc.w", 4, 3, Init::XavierUniform).unwrap();
        a.register("token", 1, 3, Init::XavierUniform).unwrap();
        let mut buf = Vec::new();
        a.write_checkpoint(&mut buf).unwrap();
        assert!(buf.starts_with(b"GCHG1\n"));

        let mut b = ParamStore::<f32>::new(99);
        b.register("enc.w", 4, 3, Init::Zeros).unwrap();
        b.register("token", 1, 3, Init::Zeros).unwrap();
        b.read_checkpoint(buf.as_slice()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.value, y.value);
        }
    }

    #[test]
    fn checkpoint_shape_mismatch_rejected() {
        let mut a = ParamStore::<f32>::new(5);
        a.register("w", 4, 3, Init::Ones).unwrap();
        let mut buf = Vec::new();
        a.write_checkpoint(&mut buf).unwrap();
        let mut b = ParamStore::<f32>::new(5);
        b.register("w", 3, 4, Init::Ones).unwrap();
        assert!(matches!(b.read_checkpoint(buf.as_slice()), Err(TensorError::BadCheckpoint(_))));
        let mut c = ParamStore::<f32>::new(5);
        c.register("w", 4, 3, Init::Ones).unwrap();
        c.register("extra", 1, 1, Init::Ones).unwrap();
        assert!(matches!(c.read_checkpoint(buf.as_slice()), Err(TensorError::BadCheckpoint(_))));
    }
}
