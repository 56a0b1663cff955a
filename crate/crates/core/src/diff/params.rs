use serde::{Deserialize, Serialize};

/// Scalar storage type for parameters.
pub trait Real: Copy + Send + Sync + PartialEq + std::fmt::Debug + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(x: f64) -> Self;
}

impl Real for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(x: f64) -> Self {
        x as f32
    }
}

impl Real for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(x: f64) -> Self {
        x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
struct Slot<S> {
    name: String,
    rows: usize,
    cols: usize,
    value: Vec<S>,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named row-major parameter matrices with gradient and Adam buffers.
#[derive(Clone, Debug)]
pub struct ParamStore<S = f32> {
    slots: Vec<Slot<S>>,
    pub(crate) step: u64,
}

impl<S: Real> Default for ParamStore<S> {
    fn default() -> Self {
        ParamStore {
            slots: Vec::new(),
            step: 0,
        }
    }
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a `rows × cols` parameter initialised from `init` (f64
    /// values cast into storage).
    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Vec<f64>) -> ParamId {
        assert_eq!(init.len(), rows * cols, "shape mismatch for {name}");
        let n = init.len();
        self.slots.push(Slot {
            name: name.to_string(),
            rows,
            cols,
            value: init.into_iter().map(S::from_f64).collect(),
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        ParamId(self.slots.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.slots.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn rows(&self, id: ParamId) -> usize {
        self.slots[id.0].rows
    }

    pub fn cols(&self, id: ParamId) -> usize {
        self.slots[id.0].cols
    }

    pub fn values(&self, id: ParamId) -> &[S] {
        &self.slots[id.0].value
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [S] {
        &mut self.slots[id.0].value
    }

    pub fn row(&self, id: ParamId, r: usize) -> &[S] {
        let s = &self.slots[id.0];
        &s.value[r * s.cols..(r + 1) * s.cols]
    }

    pub fn row_f64(&self, id: ParamId, r: usize) -> Vec<f64> {
        self.row(id, r).iter().map(|x| x.to_f64()).collect()
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.slots[id.0].grad
    }

    /// Total number of scalars across parameters.
    pub fn num_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub(crate) fn accumulate_row(&mut self, id: ParamId, r: usize, g: &[f64]) {
        let s = &mut self.slots[id.0];
        let dst = &mut s.grad[r * s.cols..(r + 1) * s.cols];
        for (d, x) in dst.iter_mut().zip(g) {
            *d += x;
        }
    }

    pub fn zero_grad(&mut self) {
        for s in &mut self.slots {
            s.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Copies values of parameters with matching names from `other`.
    pub fn copy_values_from(&mut self, other: &ParamStore<S>) {
        for (dst, src) in self.slots.iter_mut().zip(&other.slots) {
            debug_assert_eq!(dst.name, src.name);
            dst.value.copy_from_slice(&src.value);
        }
    }

    /// Same parameters in another storage precision; optimizer state is
    /// reset.
    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for s in &self.slots {
            out.add(
                &s.name,
                s.rows,
                s.cols,
                s.value.iter().map(|x| x.to_f64()).collect(),
            );
        }
        out
    }

    pub(crate) fn adam_parts(&mut self) -> impl Iterator<Item = (&mut [S], &[f64], &mut [f64], &mut [f64])> {
        self.slots.iter_mut().map(|s| {
            (
                s.value.as_mut_slice(),
                s.grad.as_slice(),
                s.m.as_mut_slice(),
                s.v.as_mut_slice(),
            )
        })
    }
}
