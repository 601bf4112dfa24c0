//! Adversarial objectives: RMSE fidelity, WGAN critic loss with gradient penalty, generator loss.
//!
//! Sign convention: the critic minimises `E[D(fake)] - E[D(real)] + beta * GP`,
//! so it learns to score real data higher. The generator minimises
//! `omega * RMSE - E[D(fake)]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{grad, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Gradient-penalty weight.
    pub beta: f64,
    /// Weight of the RMSE term in the generator loss. It plays the role of the
    /// transport-cost multiplier; RMSE is the transport cost.
    pub omega: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: 10.0, omega: 60.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !(self.omega > 0.0) {
            return Err(Error::Config(format!("loss.beta and loss.omega must be > 0 (got {}, {})", self.beta, self.omega)));
        }
        Ok(())
    }
}

/// `sqrt(mean((enhanced - original)^2))`
pub fn rmse_loss<T: Real>(enhanced: &Var<T>, original: &Var<T>) -> Result<Var<T>> {
    if enhanced.shape() != original.shape() {
        return Err(Error::Argument(format!("rmse: shapes {:?} and {:?}", enhanced.shape(), original.shape())));
    }
    Ok(enhanced.sub(original).square().mean().sqrt())
}

/// Mean of a list of `[1, 1]` scores.
pub fn mean_score<T: Real>(scores: &[Var<T>]) -> Var<T> {
    assert!(!scores.is_empty(), "no scores");
    let mut total = scores[0].clone();
    for s in &scores[1..] {
        total = total.add(s);
    }
    total.scale(T::from_f64_lossy(1.0 / scores.len() as f64))
}

/// One interpolation weight per patch, uniform on `[0, 1)`.
pub fn sample_interpolation_weights<R: Rng>(rng: &mut R, count: usize) -> Vec<f64> {
    (0..count).map(|_| rng.gen::<f64>()).collect()
}

/// `mean_b (||grad_x D_b(x_b)|| - 1)^2` with `x_b = u_b * real_b + (1 - u_b) * fake_b`.
///
/// `critic(b, x)` scores patch `b`; it must build its graph from trainable
/// parameters so that the penalty can be differentiated with respect to them.
pub fn gradient_penalty<T, F>(critic: F, real: &[Tensor<T>], fake: &[Tensor<T>], u: &[f64]) -> Result<Var<T>>
where
    T: Real,
    F: Fn(usize, &Var<T>) -> Result<Var<T>>,
{
    if real.len() != fake.len() || real.len() != u.len() || real.is_empty() {
        return Err(Error::Argument("gradient penalty needs matching, non-empty real/fake/u".into()));
    }
    let mut terms = Vec::with_capacity(real.len());
    for (b, ((r, f), &ub)) in real.iter().zip(fake).zip(u).enumerate() {
        if r.shape() != f.shape() {
            return Err(Error::Argument(format!("patch {b}: real {:?} vs fake {:?}", r.shape(), f.shape())));
        }
        let ut = T::from_f64_lossy(ub);
        let x = Var::param(r.zip_map(f, |a, c| ut * a + (T::one() - ut) * c));
        let score = critic(b, &x)?;
        let g = grad(&score, &[&x], true).remove(0);
        if !g.value().is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite critic input gradient for patch {b} (u = {ub}, score = {:?})",
                score.item()
            )));
        }
        let norm = g.square().sum().sqrt();
        terms.push(norm.add_scalar(-T::one()).square());
    }
    Ok(mean_score(&terms))
}

/// `mean(fake) - mean(real) + beta * gp`
pub fn discriminator_loss<T: Real>(scores_real: &[Var<T>], scores_fake: &[Var<T>], gp: &Var<T>, beta: f64) -> Var<T> {
    mean_score(scores_fake).sub(&mean_score(scores_real)).add(&gp.scale(T::from_f64_lossy(beta)))
}

/// `omega * rmse(enhanced, original) - mean(fake scores)`
pub fn generator_loss<T: Real>(enhanced: &Var<T>, original: &Var<T>, scores_fake: &[Var<T>], omega: f64) -> Result<Var<T>> {
    Ok(rmse_loss(enhanced, original)?.scale(T::from_f64_lossy(omega)).sub(&mean_score(scores_fake)))
}
