use super::{Tape, Var};
use crate::error::{contract, Result};

/// Symmetric KL between the row distributions of two logit matrices:
///
/// `mean_rows[ KL(sg(p) ‖ q) + KL(sg(q) ‖ p) ]`, `p = softmax(a)`, `q = softmax(b)`.
///
/// Each direction only trains its second argument, so `a` is reached solely
/// through `KL(sg(q) ‖ p)` and `b` solely through `KL(sg(p) ‖ q)`.
pub fn kl_pair_loss(tape: &mut Tape, a_logits: Var, b_logits: Var) -> Result<Var> {
    let (va, vb) = (tape.value(a_logits), tape.value(b_logits));
    contract!(
        va.same_shape(vb),
        "kl_pair_loss shapes {}×{} and {}×{} differ",
        va.rows(),
        va.cols(),
        vb.rows(),
        vb.cols()
    );
    let rows = va.rows();
    contract!(rows > 0, "kl_pair_loss over zero rows");

    let log_p = tape.log_softmax(a_logits);
    let log_q = tape.log_softmax(b_logits);
    let p = tape.exp(log_p);
    let q = tape.exp(log_q);

    let kl_p_q = directed_kl(tape, p, log_p, log_q)?;
    let kl_q_p = directed_kl(tape, q, log_q, log_p)?;
    let total = tape.add(kl_p_q, kl_q_p)?;
    Ok(tape.scale(total, 1.0 / rows as f64))
}

/// `Σ sg(u)·(sg(log u) − log v)`: gradient reaches only `log v`.
fn directed_kl(tape: &mut Tape, u: Var, log_u: Var, log_v: Var) -> Result<Var> {
    let u = tape.stop_gradient(u);
    let log_u = tape.stop_gradient(log_u);
    let diff = tape.sub(log_u, log_v)?;
    let weighted = tape.mul(u, diff)?;
    Ok(tape.sum(weighted))
}

/// `mean((a − b)²)`, both sides trainable.
pub fn mse_loss(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    tape.mse(a, b)
}

/// Mean token cross-entropy of row logits against class indices.
pub fn cross_entropy(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, targets)
}
