use std::collections::HashMap;
use std::sync::Arc;

use crate::diffmath::{CTensor, ParameterStore, Tape, Tensor, Value, Var};
use crate::error::{Error, Result};
use crate::mri_model::{check_kspace, MultiCoilKSpace, SamplingMask, SensitivityMaps};

/// Measured data and the operators defining `A`, in tape-ready form.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub y: CTensor,
    pub maps: Arc<CTensor>,
    pub mask: Arc<Vec<f64>>,
    pub height: usize,
    pub width: usize,
}

impl Measurement {
    pub fn new(y: &MultiCoilKSpace, maps: &SensitivityMaps, mask: &SamplingMask) -> Result<Self> {
        check_kspace(y, maps, mask)?;
        Ok(Self {
            y: y.samples.clone(),
            maps: Arc::clone(maps.tensor()),
            mask: Arc::clone(mask.weights()),
            height: maps.height(),
            width: maps.width(),
        })
    }
}

/// A tape plus parameter bindings.
///
/// A recording session keeps every node so the whole unroll can be
/// differentiated. A streaming session is for inference: at each
/// [`Session::boundary`] it discards the tape and re-seeds the carried
/// values as constants, so memory stays at one iteration's worth while the
/// arithmetic is identical.
pub struct Session<'a> {
    tape: Tape,
    store: &'a ParameterStore,
    streaming: bool,
    params: HashMap<String, Var>,
    y: Option<Var>,
}

impl<'a> Session<'a> {
    pub fn recording(store: &'a ParameterStore) -> Self {
        Self::with_mode(store, false)
    }

    pub fn streaming(store: &'a ParameterStore) -> Self {
        Self::with_mode(store, true)
    }

    fn with_mode(store: &'a ParameterStore, streaming: bool) -> Self {
        Self {
            tape: Tape::new(),
            store,
            streaming,
            params: HashMap::new(),
            y: None,
        }
    }

    pub fn tape(&mut self) -> &mut Tape {
        &mut self.tape
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }

    pub fn store(&self) -> &ParameterStore {
        self.store
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let v = self.tape.param(self.store, name)?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn measured(&mut self, m: &Measurement) -> Var {
        match self.y {
            Some(v) => v,
            None => {
                let v = self.tape.constant_complex(m.y.clone());
                self.y = Some(v);
                v
            }
        }
    }

    pub fn complex(&self, v: Var) -> Result<&CTensor> {
        self.tape.complex(v)
    }

    pub fn real(&self, v: Var) -> Result<&Tensor> {
        self.tape.real(v)
    }

    /// Mark an iteration boundary carrying `vars` forward.
    pub fn boundary(&mut self, vars: &[Var]) -> Result<Vec<Var>> {
        if !self.streaming {
            return Ok(vars.to_vec());
        }
        let values: Vec<Value> = vars.iter().map(|&v| self.tape.value(v).clone()).collect();
        self.tape = Tape::new();
        self.params.clear();
        self.y = None;
        Ok(values
            .into_iter()
            .map(|v| match v {
                Value::Real(t) => self.tape.constant(t),
                Value::Complex(t) => self.tape.constant_complex(t),
            })
            .collect())
    }

    /// `A*(A x − y)`.
    pub fn loglik_gradient(&mut self, x: Var, m: &Measurement) -> Result<Var> {
        let y = self.measured(m);
        let t = &mut self.tape;
        let coils = t.expand(x, &m.maps)?;
        let k = t.fft2c(coils)?;
        let k = t.mask(k, &m.mask)?;
        let r = t.csub(k, y)?;
        let img = t.ifft2c(r)?;
        t.reduce(img, &m.maps)
    }

    /// Soft data consistency `x − d·A*(A x − y)`, with `d` a scalar node.
    ///
    /// With normalized maps this equals interpolating the sampled k-space
    /// entries of `x` toward `y` by `d` and combining back to one image.
    pub fn soft_dc(&mut self, x: Var, d: Var, m: &Measurement) -> Result<Var> {
        let g = self.loglik_gradient(x, m)?;
        let t = &mut self.tape;
        let step = t.cscale_by(g, d)?;
        t.csub(x, step)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.tape.constant(Tensor::zeros(shape))
    }

    pub fn check_finite(&self, x: Var, cascade: usize, iteration: usize) -> Result<()> {
        if self.tape.complex(x)?.is_finite() {
            Ok(())
        } else {
            Err(Error::Diverged { cascade, iteration })
        }
    }
}
