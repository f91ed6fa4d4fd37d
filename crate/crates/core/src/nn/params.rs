//! Named parameter registry.
//!
//! Every trainable tensor and every persistent buffer (batch-norm running
//! statistics) lives here under a dotted path. Initialization is a pure
//! function of `(root seed, parameter name)`, so models are reproducible
//! regardless of construction order, and name-sorted iteration keeps all
//! stateful consumers (optimizer, EMA, checkpoints) deterministic.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Initialization schemes. Conventions:
/// transformer linears use truncated normal (std 0.02, cut at two sigma),
/// convolutions use the usual fan-in uniform bound 1/sqrt(fan_in).
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    TruncNormal { std: f64 },
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    FanInUniform { fan_in: usize },
    Uniform { bound: f64 },
}

fn generate(init: Init, count: usize, seed: u64, name: &str) -> Vec<f64> {
    let mut rng = crate::rng::stream(seed, name, 0);
    match init {
        Init::Zeros => vec![0.0; count],
        Init::Ones => vec![1.0; count],
        Init::Const(c) => vec![c; count],
        Init::TruncNormal { std } => {
            let normal = Normal::new(0.0, std).expect("valid std");
            (0..count)
                .map(|_| loop {
                    let v = normal.sample(&mut rng);
                    if v.abs() <= 2.0 * std {
                        break v;
                    }
                })
                .collect()
        }
        Init::FanInUniform { fan_in } => {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            (0..count).map(|_| rng.random_range(-bound..bound)).collect()
        }
        Init::Uniform { bound } => (0..count).map(|_| rng.random_range(-bound..bound)).collect(),
    }
}

pub struct ParamStore {
    device: Device,
    dtype: DType,
    seed: u64,
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        ParamStore {
            device: Device::Cpu,
            dtype,
            seed,
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn create(&self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        let count: usize = shape.iter().product();
        let values = generate(init, count, self.seed, name);
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    /// Register a trainable parameter. Registering the same name twice is a
    /// construction bug and errors out.
    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.params.contains_key(name) || self.buffers.contains_key(name) {
            return Err(Error::ConfigMismatch(format!(
                "parameter {name} registered twice"
            )));
        }
        let var = self.create(name, shape, init)?;
        let t = var.as_tensor().clone();
        self.params.insert(name.to_string(), var);
        Ok(t)
    }

    /// Register a non-trainable persistent buffer (e.g. running statistics).
    pub fn buffer(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if self.params.contains_key(name) || self.buffers.contains_key(name) {
            return Err(Error::ConfigMismatch(format!(
                "buffer {name} registered twice"
            )));
        }
        let var = self.create(name, shape, init)?;
        self.buffers.insert(name.to_string(), var.clone());
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.get(name).or_else(|| self.buffers.get(name))
    }

    /// Overwrite a parameter's (or buffer's) values in place.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self.get(name).ok_or_else(|| {
            Error::ConfigMismatch(format!("no parameter named {name}"))
        })?;
        if var.dims() != value.dims() {
            return Err(Error::ShapeConflict {
                name: name.to_string(),
                expected: value.dims().to_vec(),
                found: var.dims().to_vec(),
            });
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Name-sorted trainable variables.
    pub fn trainable(&self) -> Vec<(&str, &Var)> {
        self.params.iter().map(|(n, v)| (n.as_str(), v)).collect()
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.params.values().cloned().collect()
    }

    /// Name-sorted buffers.
    pub fn buffers(&self) -> Vec<(&str, &Var)> {
        self.buffers.iter().map(|(n, v)| (n.as_str(), v)).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    /// Number of trainable scalars under a name prefix.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    pub fn count_total(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Detached copy of every trainable parameter.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.params
            .iter()
            .map(|(n, v)| Ok((n.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    /// Detached copy of every buffer.
    pub fn snapshot_buffers(&self) -> Result<BTreeMap<String, Tensor>> {
        self.buffers
            .iter()
            .map(|(n, v)| Ok((n.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    /// Write a snapshot back into the live parameters. Every snapshot entry
    /// must exist; extra live parameters are left untouched.
    pub fn restore(&self, snapshot: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, value) in snapshot {
            self.set(name, value)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_pure_function_of_seed_and_name() {
        let mut a = ParamStore::new(DType::F32, 42);
        let mut b = ParamStore::new(DType::F32, 42);
        // Different creation order, same values.
        let a1 = a.param("x.weight", &[4, 3], Init::TruncNormal { std: 0.02 }).unwrap();
        let _a2 = a.param("y.weight", &[2], Init::FanInUniform { fan_in: 9 }).unwrap();
        let _b2 = b.param("y.weight", &[2], Init::FanInUniform { fan_in: 9 }).unwrap();
        let b1 = b.param("x.weight", &[4, 3], Init::TruncNormal { std: 0.02 }).unwrap();
        let av: Vec<f32> = a1.flatten_all().unwrap().to_vec1().unwrap();
        let bv: Vec<f32> = b1.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(av, bv);

        let mut c = ParamStore::new(DType::F32, 43);
        let c1 = c.param("x.weight", &[4, 3], Init::TruncNormal { std: 0.02 }).unwrap();
        let cv: Vec<f32> = c1.flatten_all().unwrap().to_vec1().unwrap();
        assert_ne!(av, cv);
    }

    #[test]
    fn trunc_normal_respects_cut() {
        let mut s = ParamStore::new(DType::F64, 1);
        let t = s
            .param("big", &[4096], Init::TruncNormal { std: 0.02 })
            .unwrap();
        let v: Vec<f64> = t.to_vec1().unwrap();
        assert!(v.iter().all(|x| x.abs() <= 0.04));
        let mean: f64 = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 5e-3);
    }

    #[test]
    fn duplicate_registration_errors() {
        let mut s = ParamStore::new(DType::F32, 0);
        s.param("w", &[2], Init::Zeros).unwrap();
        assert!(s.param("w", &[2], Init::Zeros).is_err());
        assert!(s.buffer("w", &[2], Init::Zeros).is_err());
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut s = ParamStore::new(DType::F32, 7);
        s.param("a", &[3], Init::TruncNormal { std: 1.0 }).unwrap();
        s.param("b", &[2, 2], Init::Ones).unwrap();
        let snap = s.snapshot().unwrap();
        s.set("a", &Tensor::zeros(3, DType::F32, &Device::Cpu).unwrap())
            .unwrap();
        s.restore(&snap).unwrap();
        let a: Vec<f32> = s.get("a").unwrap().as_tensor().to_vec1().unwrap();
        let orig: Vec<f32> = snap["a"].to_vec1().unwrap();
        assert_eq!(a, orig);
    }

    #[test]
    fn counts_group_by_prefix() {
        let mut s = ParamStore::new(DType::F32, 0);
        s.param("enc.a", &[10], Init::Zeros).unwrap();
        s.param("enc.b", &[5, 2], Init::Zeros).unwrap();
        s.param("dec.a", &[7], Init::Zeros).unwrap();
        s.buffer("dec.rm", &[7], Init::Zeros).unwrap();
        assert_eq!(s.count_prefix("enc."), 20);
        assert_eq!(s.count_prefix("dec."), 7); // buffers not counted
        assert_eq!(s.count_total(), 27);
    }
}
