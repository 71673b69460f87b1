use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything holding trainable parameters with matching gradient buffers.
pub trait Parameters {
    /// Calls `f(name, shape, values, grads)` for every parameter block in a fixed order.
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64], &mut [f64]));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Flat `name -> shape + row-major values` map, the checkpoint format.
pub type ParamMap = BTreeMap<String, ParamEntry>;

pub fn export_params<P: Parameters + ?Sized>(model: &mut P, prefix: &str) -> ParamMap {
    let mut map = ParamMap::new();
    model.visit_params(prefix, &mut |name, shape, values, _| {
        map.insert(name.to_string(), ParamEntry { shape: shape.to_vec(), values: values.to_vec() });
    });
    map
}

pub fn import_params<P: Parameters + ?Sized>(model: &mut P, prefix: &str, map: &ParamMap) -> Result<()> {
    let mut err = None;
    model.visit_params(prefix, &mut |name, shape, values, _| {
        if err.is_some() {
            return;
        }
        match map.get(name) {
            Some(e) if e.shape == shape && e.values.len() == values.len() => values.copy_from_slice(&e.values),
            Some(e) => err = Some(Error::ShapeMismatch { expected: shape.to_vec(), got: e.shape.clone() }),
            None => err = Some(Error::InvalidParameter(alloc::format!("missing parameter {name}"))),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn flatten_values<P: Parameters + ?Sized>(model: &mut P) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit_params("", &mut |_, _, v, _| out.extend_from_slice(v));
    out
}

pub fn flatten_grads<P: Parameters + ?Sized>(model: &mut P) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit_params("", &mut |_, _, _, g| out.extend_from_slice(g));
    out
}

pub fn load_flat<P: Parameters + ?Sized>(model: &mut P, flat: &[f64]) {
    let mut off = 0;
    model.visit_params("", &mut |_, _, v, _| {
        v.copy_from_slice(&flat[off..off + v.len()]);
        off += v.len();
    });
}

pub fn zero_grads<P: Parameters + ?Sized>(model: &mut P) {
    model.visit_params("", &mut |_, _, _, g| g.iter_mut().for_each(|x| *x = 0.0));
}

/// Parameter group boundaries `(name, offset, len)` in flat order.
pub fn param_groups<P: Parameters + ?Sized>(model: &mut P) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut off = 0;
    model.visit_params("", &mut |name, _, v, _| {
        out.push((name.to_string(), off, v.len()));
        off += v.len();
    });
    out
}
