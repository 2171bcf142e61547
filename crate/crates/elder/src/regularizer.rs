//! Explicit regularizers `h(x)` built on one shared network `G`.
//!
//! Three parameterizations of the same idea — penalize what the network
//! would change about the image:
//!
//! * `Lsr`:  `h = 0.5 ||x - G(x)||^2`, grad `(I - J_G(x))^T (x - G(x))`
//! * `Red`:  `h = 0.5 x^T (x - G(x))`, grad `x - G(x)/2 - J_G(x)^T x / 2`
//! * `Dsv`:  `h = 1^T G(x)`,           grad `J_G(x)^T 1`
//!
//! All gradients are exact: the Jacobian products come from the tape, never
//! from the local-homogeneity approximation `x - G(x)` sometimes used for
//! the `Red` form. That shortcut is kept around only as a labeled
//! diagnostic ([`Regularizer::red_shortcut_grad`]) so the gap can be
//! measured.
//!
//! Because gradients are recorded tape programs, they can be differentiated
//! again: [`Regularizer::grad_weights_vjp`] and
//! [`Regularizer::grad_input_vjp`] return exact mixed second derivatives of
//! `h`, which is what deep-equilibrium training consumes.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::network::NetworkWeights;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegKind {
    Lsr,
    Red,
    Dsv,
}

impl RegKind {
    pub fn parse(s: &str) -> Result<RegKind> {
        match s {
            "lsr" => Ok(RegKind::Lsr),
            "red" => Ok(RegKind::Red),
            "dsv" => Ok(RegKind::Dsv),
            other => Err(Error::config(format!(
                "unknown regularizer kind {other:?} (expected lsr, red, or dsv)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RegKind::Lsr => "lsr",
            RegKind::Red => "red",
            RegKind::Dsv => "dsv",
        }
    }

    pub const ALL: [RegKind; 3] = [RegKind::Lsr, RegKind::Red, RegKind::Dsv];
}

#[derive(Debug, Clone)]
pub struct Regularizer {
    pub kind: RegKind,
    pub tau: f64,
    pub net: NetworkWeights,
}

impl Regularizer {
    pub fn new(kind: RegKind, tau: f64, net: NetworkWeights) -> Result<Regularizer> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::config(format!("tau must be finite and >= 0, got {tau}")));
        }
        Ok(Regularizer { kind, tau, net })
    }

    /// `h(x)` (without the `tau` factor). Forward pass only.
    pub fn value(&self, x: &Tensor) -> Result<f64> {
        let g = self.net.apply(x)?;
        Ok(match self.kind {
            RegKind::Lsr => 0.5 * x.sub(&g).norm2_sq(),
            RegKind::Red => 0.5 * x.dot(&x.sub(&g)),
            RegKind::Dsv => g.sum(),
        })
    }

    /// Emit `h` and its exact gradient as tape nodes over the given leaves.
    pub(crate) fn emit_value_grad(
        &self,
        tape: &mut Tape,
        param_ids: &[NodeId],
        x_id: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let g = self.net.emit(tape, param_ids, x_id)?;
        match self.kind {
            RegKind::Lsr => {
                let r = tape.sub(x_id, g)?;
                let rr = tape.mul(r, r)?;
                let s = tape.sum_all(rr);
                let h = tape.scale(s, 0.5);
                let jtr = tape.vjp(&[g], &[r], &[x_id])?[0];
                let grad = tape.sub(r, jtr)?;
                Ok((h, grad))
            }
            RegKind::Red => {
                let r = tape.sub(x_id, g)?;
                let xr = tape.mul(x_id, r)?;
                let s = tape.sum_all(xr);
                let h = tape.scale(s, 0.5);
                let jtx = tape.vjp(&[g], &[x_id], &[x_id])?[0];
                let half_g = tape.scale(g, 0.5);
                let half_jtx = tape.scale(jtx, 0.5);
                let t = tape.sub(x_id, half_g)?;
                let grad = tape.sub(t, half_jtx)?;
                Ok((h, grad))
            }
            RegKind::Dsv => {
                let h = tape.sum_all(g);
                let ones = tape.input(Tensor::ones(tape.shape_of(x_id)));
                let jt1 = tape.vjp(&[g], &[ones], &[x_id])?[0];
                Ok((h, jt1))
            }
        }
    }

    fn record_grad(&self, x: &Tensor) -> Result<(Tape, Vec<NodeId>, NodeId, NodeId)> {
        let mut tape = Tape::new();
        let param_ids: Vec<NodeId> =
            self.net.params.iter().map(|p| tape.input(p.clone())).collect();
        let x_id = tape.input(x.clone());
        let (_, grad) = self.emit_value_grad(&mut tape, &param_ids, x_id)?;
        Ok((tape, param_ids, x_id, grad))
    }

    /// Exact `grad h(x)`.
    pub fn grad(&self, x: &Tensor) -> Result<Tensor> {
        let (tape, _, _, grad) = self.record_grad(x)?;
        Ok(tape.value(grad).clone())
    }

    /// `d/dtheta <v, grad h(x)>`: one tensor per network parameter.
    /// Exact, via a second adjoint sweep over the recorded gradient.
    pub fn grad_weights_vjp(&self, x: &Tensor, v: &Tensor) -> Result<Vec<Tensor>> {
        let (mut tape, param_ids, _, grad) = self.record_grad(x)?;
        let s = dot_node(&mut tape, grad, v)?;
        let one = tape.input(Tensor::scalar(1.0));
        let gs = tape.vjp(&[s], &[one], &param_ids)?;
        Ok(gs.into_iter().map(|id| tape.value(id).clone()).collect())
    }

    /// `d/dx <v, grad h(x)>`: the Hessian-vector product of `h`. Exact.
    pub fn grad_input_vjp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        let (mut tape, _, x_id, grad) = self.record_grad(x)?;
        let s = dot_node(&mut tape, grad, v)?;
        let one = tape.input(Tensor::scalar(1.0));
        let g = tape.vjp(&[s], &[one], &[x_id])?[0];
        Ok(tape.value(g).clone())
    }

    /// Diagnostic only: the `x - G(x)` shortcut some formulations substitute
    /// for the `Red` gradient. Not used by any solver or trainer path.
    pub fn red_shortcut_grad(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.sub(&self.net.apply(x)?))
    }
}

fn dot_node(tape: &mut Tape, a: NodeId, v: &Tensor) -> Result<NodeId> {
    let v_id = tape.input(v.clone());
    let p = tape.mul(a, v_id)?;
    Ok(tape.sum_all(p))
}
