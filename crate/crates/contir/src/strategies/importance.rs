//! Parameter-importance machinery shared by the regularization strategies:
//! the quadratic anchor penalty, constant (L2) importance, squared-gradient
//! (Fisher) importance with an optional online accumulation, the path
//! integral of synaptic intelligence, and sensitivity-based importance.

use std::collections::BTreeMap;

use crate::autodiff::{GradientMap, ParameterSet, Tape, TapeParams, Tensor, Var};
use crate::error::{Error, Result};

/// Per-parameter non-negative weights controlling how strongly each
/// parameter is anchored. Empty before the first task completes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImportanceMap {
    map: BTreeMap<String, Tensor>,
}

impl ImportanceMap {
    pub fn empty() -> Self {
        ImportanceMap::default()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    /// Smallest entry across all parameters; `None` when empty.
    pub fn min_entry(&self) -> Option<f64> {
        self.map
            .values()
            .flat_map(|t| t.data().iter().copied())
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.min(v))))
    }

    fn from_map(map: BTreeMap<String, Tensor>) -> Self {
        ImportanceMap { map }
    }
}

/// The quadratic penalty `lambda * sum_i (theta_i - anchor_i)^2 *
/// omega_i` as a differentiable scalar on the active tape. Exactly zero
/// (a constant node) when the importance map is empty or `lambda == 0`.
pub fn penalty_term(
    tape: &Tape,
    params: &TapeParams,
    anchor: &ParameterSet,
    importance: &ImportanceMap,
    lambda: f64,
) -> Var {
    if importance.is_empty() || lambda == 0.0 {
        return tape.scalar(0.0);
    }
    let mut total: Option<Var> = None;
    for (name, omega) in importance.iter() {
        let theta = params.var(name);
        let anchor_value = anchor
            .get(name)
            .unwrap_or_else(|| panic!("anchor missing parameter {name}"));
        assert_eq!(anchor_value.shape(), omega.shape(), "importance shape mismatch");
        let diff = theta.sub(&tape.constant(anchor_value.clone()));
        let weighted = diff.mul(&diff).mul(&tape.constant(omega.clone())).sum_all();
        total = Some(match total {
            Some(acc) => acc.add(&weighted),
            None => weighted,
        });
    }
    total.expect("non-empty importance").mul_scalar(lambda)
}

/// Closed-form gradient of [`penalty_term`]: `2 * lambda * omega *
/// (theta - anchor)`. Used to recover the unregularized gradient from the
/// total one without a second backward pass; checked against the autodiff
/// route in tests.
pub fn penalty_gradient(
    params: &ParameterSet,
    anchor: &ParameterSet,
    importance: &ImportanceMap,
    lambda: f64,
) -> GradientMap {
    let mut out = GradientMap::zeros_like(params);
    if importance.is_empty() || lambda == 0.0 {
        return out;
    }
    for (name, omega) in importance.iter() {
        let theta = params.get(name).expect("parameter present");
        let anchor_value = anchor.get(name).expect("anchor present");
        let grad = out.get_mut(name).expect("gradient slot");
        for ((g, (&t, &a)), &w) in grad
            .data_mut()
            .iter_mut()
            .zip(theta.data().iter().zip(anchor_value.data()))
            .zip(omega.data())
        {
            *g = 2.0 * lambda * w * (t - a);
        }
    }
    out
}

/// Constant importance: every parameter weighs 1.
pub fn l2_importance(params: &ParameterSet) -> ImportanceMap {
    ImportanceMap::from_map(
        params
            .iter()
            .map(|(name, value)| (name.clone(), Tensor::ones(value.shape())))
            .collect(),
    )
}

/// Average squared gradient over the provided per-sample gradients. With
/// `online`, the result is added to the prior importance; otherwise the
/// prior is replaced.
pub fn fisher_importance<I>(
    sample_grads: I,
    online: bool,
    prior: &ImportanceMap,
) -> Result<ImportanceMap>
where
    I: IntoIterator<Item = Result<GradientMap>>,
{
    let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut count = 0usize;
    for grads in sample_grads {
        let grads = grads?;
        count += 1;
        for (name, grad) in grads.iter() {
            if !grad.all_finite() {
                return Err(Error::NonFinite(format!("fisher gradient of {name}")));
            }
            let slot = acc
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            for (s, &g) in slot.data_mut().iter_mut().zip(grad.data()) {
                *s += g * g;
            }
        }
    }
    if count == 0 {
        return Err(Error::Train("fisher importance needs at least one sample".into()));
    }
    for slot in acc.values_mut() {
        slot.data_mut().iter_mut().for_each(|v| *v /= count as f64);
    }
    if online {
        for (name, prior_value) in prior.iter() {
            let slot = acc
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(prior_value.shape()));
            for (s, &p) in slot.data_mut().iter_mut().zip(prior_value.data()) {
                *s += p;
            }
        }
    }
    Ok(ImportanceMap::from_map(acc))
}

/// Running path integral of synaptic intelligence plus its consolidation.
#[derive(Debug, Clone, Default)]
pub struct PathIntegral {
    omega: BTreeMap<String, Tensor>,
}

impl PathIntegral {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        PathIntegral {
            omega: params
                .iter()
                .map(|(name, value)| (name.clone(), Tensor::zeros(value.shape())))
                .collect(),
        }
    }

    pub fn omega(&self, name: &str) -> Option<&Tensor> {
        self.omega.get(name)
    }

    /// Per-batch accumulation after the optimizer step:
    /// `omega_i -= g_i * (theta_after_i - theta_before_i)`, with `g` the
    /// unregularized-loss gradient at the pre-step parameters.
    pub fn accumulate(
        &mut self,
        grad_unregularized: &GradientMap,
        before: &ParameterSet,
        after: &ParameterSet,
    ) {
        for (name, slot) in self.omega.iter_mut() {
            let g = grad_unregularized.get(name).expect("gradient present");
            let b = before.get(name).expect("pre-step snapshot present");
            let a = after.get(name).expect("post-step value present");
            for ((o, &gv), (&bv, &av)) in slot
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(b.data().iter().zip(a.data()))
            {
                *o -= gv * (av - bv);
            }
        }
    }

    /// End-of-task consolidation: `omega_out = prior + max(omega, 0) /
    /// ((theta - anchor)^2 + damping)`. Negative path contributions are
    /// clamped to keep every importance entry non-negative.
    pub fn consolidate(
        &self,
        task_end: &ParameterSet,
        task_start: &ParameterSet,
        damping: f64,
        prior: &ImportanceMap,
    ) -> ImportanceMap {
        assert!(damping > 0.0, "damping must be positive");
        let mut out: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, omega) in &self.omega {
            let theta = task_end.get(name).expect("task-end parameter");
            let anchor = task_start.get(name).expect("task-start anchor");
            let mut tensor = Tensor::zeros(omega.shape());
            for (slot, ((&o, &t), &a)) in tensor
                .data_mut()
                .iter_mut()
                .zip(omega.data().iter().zip(theta.data()).zip(anchor.data()))
            {
                let displacement = t - a;
                *slot = o.max(0.0) / (displacement * displacement + damping);
            }
            if let Some(prior_value) = prior.get(name) {
                for (slot, &p) in tensor.data_mut().iter_mut().zip(prior_value.data()) {
                    *slot += p;
                }
            }
            out.insert(name.clone(), tensor);
        }
        ImportanceMap::from_map(out)
    }
}

/// Sensitivity importance: mean absolute gradient of the squared score
/// difference over the replayed batches, added to the prior.
pub fn mas_importance<I>(batch_grads: I, prior: &ImportanceMap) -> Result<ImportanceMap>
where
    I: IntoIterator<Item = Result<GradientMap>>,
{
    let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut count = 0usize;
    for grads in batch_grads {
        let grads = grads?;
        count += 1;
        for (name, grad) in grads.iter() {
            if !grad.all_finite() {
                return Err(Error::NonFinite(format!("mas gradient of {name}")));
            }
            let slot = acc
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            for (s, &g) in slot.data_mut().iter_mut().zip(grad.data()) {
                *s += g.abs();
            }
        }
    }
    if count == 0 {
        return Err(Error::Train("mas importance needs at least one batch".into()));
    }
    for slot in acc.values_mut() {
        slot.data_mut().iter_mut().for_each(|v| *v /= count as f64);
    }
    for (name, prior_value) in prior.iter() {
        let slot = acc
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(prior_value.shape()));
        for (s, &p) in slot.data_mut().iter_mut().zip(prior_value.data()) {
            *s += p;
        }
    }
    Ok(ImportanceMap::from_map(acc))
}
