use super::{NumericsError, Tensor};

type BackwardFn = Box<dyn Fn(&[f32])>;

struct Node {
    output: Tensor,
    backward: BackwardFn,
}

/// Recorded forward pass in topological (execution) order.
///
/// Ops append one node each when gradients are enabled and at least one
/// input requires them. `backward` seeds the scalar loss with 1.0 and visits
/// nodes exactly once in reverse, after which the tape is consumed.
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
    consumed: bool,
}

impl Tape {
    /// Tape that records backward rules (training / gradient checks).
    pub fn recording() -> Tape {
        Tape { nodes: Vec::new(), grad_enabled: true, consumed: false }
    }

    /// Forward-only tape: ops run but record nothing.
    pub fn inference() -> Tape {
        Tape { nodes: Vec::new(), grad_enabled: false, consumed: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub(super) fn wants_node(&self, inputs: &[&Tensor]) -> bool {
        self.grad_enabled && inputs.iter().any(|t| t.requires_grad())
    }

    pub(super) fn record(&mut self, output: &Tensor, backward: BackwardFn) {
        debug_assert!(!self.consumed, "recording on a consumed tape");
        output.set_requires_grad(true);
        self.nodes.push(Node { output: output.clone(), backward });
    }

    /// Reverse pass from a scalar loss. Gradients accumulate additively into
    /// every tensor on the path that requires them; the tape is then cleared.
    pub fn backward(&mut self, loss: &Tensor) -> Result<(), NumericsError> {
        if loss.numel() != 1 {
            return Err(NumericsError::NonScalarLoss(loss.shape().to_vec()));
        }
        if self.consumed {
            return Err(NumericsError::TapeConsumed);
        }
        self.consumed = true;
        loss.accumulate_grad(&[1.0]);
        for node in self.nodes.iter().rev() {
            if let Some(g) = node.output.grad() {
                (node.backward)(&g);
            }
        }
        self.nodes.clear();
        Ok(())
    }
}
