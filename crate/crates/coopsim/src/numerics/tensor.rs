use std::cell::{Cell, Ref, RefCell, RefMut};
use std::rc::Rc;

use super::NumericsError;

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    requires_grad: Cell<bool>,
    grad: RefCell<Option<Vec<f32>>>,
}

/// Dense row-major f32 tensor with an optional gradient buffer.
///
/// `Tensor` is a cheap handle (`Rc`) onto shared storage: cloning it aliases
/// the same buffer, which is how op outputs, recorded tape nodes, and the
/// caller all observe the gradients written by `Tape::backward`.
pub struct Tensor {
    inner: Rc<Inner>,
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad.get())
            .finish()
    }
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor, NumericsError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} needs {} elements, got {}", shape, numel, data.len()),
            });
        }
        Ok(Tensor {
            inner: Rc::new(Inner {
                shape: shape.to_vec(),
                data: RefCell::new(data),
                requires_grad: Cell::new(false),
                grad: RefCell::new(None),
            }),
        })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; numel]).expect("zeros: consistent by construction")
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        let numel = shape.iter().product();
        Tensor::from_vec(shape, vec![value; numel]).expect("full: consistent by construction")
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::from_vec(&[1], vec![value]).expect("scalar")
    }

    /// Leaf parameter: same as `from_vec` but with gradients enabled.
    pub fn param(shape: &[usize], data: Vec<f32>) -> Result<Tensor, NumericsError> {
        let t = Tensor::from_vec(shape, data)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.inner.data.borrow()
    }

    pub fn data_mut(&self) -> RefMut<'_, Vec<f32>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn value(&self) -> f32 {
        debug_assert_eq!(self.numel(), 1, "value() on non-scalar tensor");
        self.inner.data.borrow()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    pub fn set_requires_grad(&self, v: bool) {
        self.inner.requires_grad.set(v);
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.borrow().clone()
    }

    pub fn has_grad(&self) -> bool {
        self.inner.grad.borrow().is_some()
    }

    /// Additively accumulate a gradient contribution.
    pub fn accumulate_grad(&self, contrib: &[f32]) {
        debug_assert_eq!(contrib.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contrib.to_vec()),
        }
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Copy of the values with gradient tracking severed.
    pub fn detach(&self) -> Tensor {
        Tensor::from_vec(&self.inner.shape, self.to_vec()).expect("detach: same shape")
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Stable identity of the underlying storage, for aliasing checks.
    pub fn storage_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }
}
