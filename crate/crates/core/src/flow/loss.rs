use serde::{Deserialize, Serialize};

use super::{interpolate, StepQuery, StepSchedule, TargetKind};
use crate::error::{Error, Result};
use crate::net::{Query, VelocityField, VelocityNet};
use crate::spectro::Bins;

/// One training example: clean endpoint, prior endpoint, conditioner, and
/// the `(t, dt)` query it is trained at.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub x0: Bins,
    pub x1: Bins,
    pub y: Bins,
    pub query: StepQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_sc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_sc: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub fm_loss: f64,
    pub sc_loss: f64,
    pub total: f64,
    pub lambda_sc: f64,
    pub rate_sc: f64,
    pub rho: f64,
}

/// Mean over real and imaginary components of `|a - b|^2`.
fn mean_sq(a: &Bins, b: &Bins) -> f64 {
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
    sum / (2 * a.len()) as f64
}

fn state_at(item: &TrainItem) -> Result<Bins> {
    Ok(interpolate(&item.x0, &item.x1, item.query.t)?.xt)
}

fn check_sc(item: &TrainItem) -> Result<()> {
    let q = &item.query;
    if q.kind != TargetKind::SelfConsistency {
        return Err(Error::Contract("expected a self-consistency query".into()));
    }
    if !(q.dt > 0.0 && q.dt <= 0.5) || q.t < 0.0 || q.t + 2.0 * q.dt > 1.0 {
        return Err(Error::Contract(format!(
            "inadmissible self-consistency pair (t={}, dt={})",
            q.t, q.dt
        )));
    }
    Ok(())
}

fn check_fm(item: &TrainItem) -> Result<()> {
    if item.query.kind != TargetKind::FlowMatching {
        return Err(Error::Contract("expected a flow-matching query".into()));
    }
    Ok(())
}

/// Mean squared velocity error `|f(xt, t, dt_min, y) - (x0 - x1)|^2` over the batch.
pub fn fm_loss(net: &impl VelocityField, items: &[TrainItem]) -> Result<f64> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let mut states = Vec::with_capacity(items.len());
    for item in items {
        check_fm(item)?;
        states.push(state_at(item)?);
    }
    let queries: Vec<Query<'_>> = items
        .iter()
        .zip(&states)
        .map(|(it, x)| Query {
            x,
            y: &it.y,
            t: it.query.t,
            dt: it.query.dt,
        })
        .collect();
    let out = net.eval_batch(&queries)?;
    let total: f64 = items
        .iter()
        .zip(&out)
        .map(|(it, o)| mean_sq(o, &(&it.x0 - &it.x1)))
        .sum();
    Ok(total / items.len() as f64)
}

/// Frozen two-half-step targets: `(f(xt, t, dt) + f(xt + dt f(xt, t, dt), t + dt, dt)) / 2`.
pub fn sc_targets(net: &impl VelocityField, items: &[TrainItem]) -> Result<Vec<Bins>> {
    let mut states = Vec::with_capacity(items.len());
    for item in items {
        check_sc(item)?;
        states.push(state_at(item)?);
    }
    let first_q: Vec<Query<'_>> = items
        .iter()
        .zip(&states)
        .map(|(it, x)| Query {
            x,
            y: &it.y,
            t: it.query.t,
            dt: it.query.dt,
        })
        .collect();
    let first = net.eval_batch(&first_q)?;
    let mids: Vec<Bins> = states
        .iter()
        .zip(items)
        .zip(&first)
        .map(|((x, it), v)| x + &(v * it.query.dt))
        .collect();
    let second_q: Vec<Query<'_>> = items
        .iter()
        .zip(&mids)
        .map(|(it, x)| Query {
            x,
            y: &it.y,
            t: it.query.t + it.query.dt,
            dt: it.query.dt,
        })
        .collect();
    let second = net.eval_batch(&second_q)?;
    Ok(first
        .iter()
        .zip(&second)
        .map(|(a, b)| (a + b) * 0.5)
        .collect())
}

fn sc_residuals_impl(net: &impl VelocityField, items: &[TrainItem], sign: f64) -> Result<Vec<f64>> {
    let targets = sc_targets(net, items)?;
    let states: Vec<Bins> = items.iter().map(state_at).collect::<Result<_>>()?;
    let queries: Vec<Query<'_>> = items
        .iter()
        .zip(&states)
        .map(|(it, x)| Query {
            x,
            y: &it.y,
            t: it.query.t,
            dt: 2.0 * it.query.dt,
        })
        .collect();
    let pred = net.eval_batch(&queries)?;
    Ok(pred
        .iter()
        .zip(&targets)
        .map(|(p, t)| mean_sq(p, &(t * sign)))
        .collect())
}

/// Per-item self-consistency residual `mean |f(xt, t, 2 dt) - target|^2`.
pub fn sc_residuals(net: &impl VelocityField, items: &[TrainItem]) -> Result<Vec<f64>> {
    sc_residuals_impl(net, items, 1.0)
}

/// Deliberately wrong residual (negated target) used to exercise the oracle harness.
#[doc(hidden)]
pub fn sc_residuals_sign_flipped(net: &impl VelocityField, items: &[TrainItem]) -> Result<Vec<f64>> {
    sc_residuals_impl(net, items, -1.0)
}

pub fn sc_loss(net: &impl VelocityField, items: &[TrainItem]) -> Result<f64> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let r = sc_residuals(net, items)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Evaluates `fm_loss + lambda_sc * sc_loss` on a mixed batch and accumulates
/// its gradient into `net`. Self-consistency targets are computed with the
/// current parameters and treated as constants. With `lambda_sc == 0` the
/// self-consistency branch is reported but excluded from the backward pass.
pub fn shortcut_step(
    net: &mut VelocityNet,
    items: &[TrainItem],
    weights: LossWeights,
    schedule: &StepSchedule,
    batch_index: usize,
) -> Result<LossBreakdown> {
    let (sc_items, fm_items): (Vec<&TrainItem>, Vec<&TrainItem>) = items
        .iter()
        .partition(|it| it.query.kind == TargetKind::SelfConsistency);
    for it in &fm_items {
        check_fm(it)?;
    }
    let sc_owned: Vec<TrainItem> = sc_items.iter().map(|&it| it.clone()).collect();
    let targets = sc_targets(&*net, &sc_owned)?;
    let train_sc = weights.lambda_sc != 0.0;

    let fm_states: Vec<Bins> = fm_items.iter().map(|it| state_at(it)).collect::<Result<_>>()?;
    let sc_states: Vec<Bins> = sc_owned.iter().map(state_at).collect::<Result<_>>()?;
    let mut queries: Vec<Query<'_>> = fm_items
        .iter()
        .zip(&fm_states)
        .map(|(it, x)| Query {
            x,
            y: &it.y,
            t: it.query.t,
            dt: it.query.dt,
        })
        .collect();
    let sc_queries = sc_owned.iter().zip(&sc_states).map(|(it, x)| Query {
        x,
        y: &it.y,
        t: it.query.t,
        dt: 2.0 * it.query.dt,
    });
    let sc_pred_untracked = if train_sc {
        queries.extend(sc_queries);
        None
    } else {
        Some(net.forward(&sc_queries.collect::<Vec<_>>())?)
    };
    let out = net.forward_record(&queries)?;
    let (fm_out, sc_out) = out.split_at(fm_items.len());
    let sc_out = sc_pred_untracked.as_deref().unwrap_or(sc_out);

    let n_fm = fm_items.len().max(1) as f64;
    let n_sc = sc_owned.len().max(1) as f64;
    let mut fm_loss = 0.0;
    let mut cotangents = Vec::with_capacity(queries.len());
    for (it, o) in fm_items.iter().zip(fm_out) {
        let diff = o - &(&it.x0 - &it.x1);
        fm_loss += mean_sq(o, &(&it.x0 - &it.x1)) / n_fm;
        let scale = 1.0 / (o.len() as f64 * n_fm);
        cotangents.push(diff * scale);
    }
    let mut sc_loss = 0.0;
    for (t, o) in targets.iter().zip(sc_out) {
        sc_loss += mean_sq(o, t) / n_sc;
        if train_sc {
            let scale = weights.lambda_sc / (o.len() as f64 * n_sc);
            cotangents.push((o - t) * scale);
        }
    }
    let total = fm_loss + weights.lambda_sc * sc_loss;
    if !total.is_finite() {
        return Err(Error::Training {
            step: batch_index,
            msg: format!("non-finite loss (fm={fm_loss}, sc={sc_loss})"),
        });
    }
    net.backward(&cotangents)?;
    Ok(LossBreakdown {
        fm_loss,
        sc_loss,
        total,
        lambda_sc: weights.lambda_sc,
        rate_sc: schedule.rate_sc,
        rho: schedule.rho,
    })
}
