use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::storage::ValueDType;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    I(i64),
    F(f64),
}

impl Value {
    pub fn as_i64(self) -> i64 {
        match self {
            Value::I(v) => v,
            Value::F(v) => v as i64,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Value::I(v) => v as f64,
            Value::F(v) => v,
        }
    }

    pub fn truthy(self) -> bool {
        match self {
            Value::I(v) => v != 0,
            Value::F(v) => v != 0.0,
        }
    }
}

/// A typed flat array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Array {
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Array {
    pub fn zeros(dtype: ValueDType, n: usize) -> Array {
        match dtype {
            ValueDType::I32 => Array::I32(vec![0; n]),
            ValueDType::F32 => Array::F32(vec![0.0; n]),
            ValueDType::F64 => Array::F64(vec![0.0; n]),
        }
    }

    pub fn from_f64(dtype: ValueDType, v: &[f64]) -> Array {
        match dtype {
            ValueDType::I32 => Array::I32(v.iter().map(|x| *x as i32).collect()),
            ValueDType::F32 => Array::F32(v.iter().map(|x| *x as f32).collect()),
            ValueDType::F64 => Array::F64(v.to_vec()),
        }
    }

    pub fn dtype(&self) -> ValueDType {
        match self {
            Array::I32(_) => ValueDType::I32,
            Array::F32(_) => ValueDType::F32,
            Array::F64(_) => ValueDType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Array::I32(v) => v.len(),
            Array::F32(v) => v.len(),
            Array::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> Option<Value> {
        match self {
            Array::I32(v) => v.get(i).map(|x| Value::I(*x as i64)),
            Array::F32(v) => v.get(i).map(|x| Value::F(*x as f64)),
            Array::F64(v) => v.get(i).map(|x| Value::F(*x)),
        }
    }

    /// Stores with the array's own rounding; returns false when out of range.
    #[inline]
    pub fn set(&mut self, i: usize, x: Value) -> bool {
        match self {
            Array::I32(v) => v.get_mut(i).map(|s| *s = x.as_i64() as i32).is_some(),
            Array::F32(v) => v.get_mut(i).map(|s| *s = x.as_f64() as f32).is_some(),
            Array::F64(v) => v.get_mut(i).map(|s| *s = x.as_f64()).is_some(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Array::I32(v) => v.iter().map(|x| *x as f64).collect(),
            Array::F32(v) => v.iter().map(|x| *x as f64).collect(),
            Array::F64(v) => v.clone(),
        }
    }

    /// Raw little-endian bytes, as the emitted C driver reads them.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            Array::I32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Array::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Array::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn from_le_bytes(dtype: ValueDType, b: &[u8]) -> Result<Array> {
        let w = if dtype == ValueDType::F64 { 8 } else { 4 };
        if b.len() % w != 0 {
            return Err(Error::Exec("truncated array bytes".into()));
        }
        Ok(match dtype {
            ValueDType::I32 => {
                Array::I32(b.chunks(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect())
            }
            ValueDType::F32 => {
                Array::F32(b.chunks(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
            }
            ValueDType::F64 => {
                Array::F64(b.chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
            }
        })
    }
}

/// Buffer and scalar-parameter values for one execution.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bindings {
    pub buffers: BTreeMap<String, Array>,
    pub params: BTreeMap<String, i64>,
}

impl Bindings {
    pub fn with_buffer(mut self, name: &str, a: Array) -> Self {
        self.buffers.insert(name.to_string(), a);
        self
    }

    pub fn with_param(mut self, name: &str, v: i64) -> Self {
        self.params.insert(name.to_string(), v);
        self
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::Exec(format!("missing binding for buffer `{name}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub loads: u64,
    pub stores: u64,
    /// Arithmetic operations in stored values (index arithmetic excluded).
    pub flops: u64,
}

impl Stats {
    pub fn add(&mut self, o: &Stats) {
        self.loads += o.loads;
        self.stores += o.stores;
        self.flops += o.flops;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Bounds, region, hint and assertion checks.
    Checked,
    Release,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecReport {
    /// Every bound buffer after execution.
    pub outputs: Bindings,
    pub stats: Stats,
    pub violations: Vec<String>,
}
