//! PPO, auxiliary, value and composite losses. Every loss is a quantity to
//! minimize; the clipped surrogate enters negated.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::policy::{Gradients, HeadVars, LossGraph, Policy};
use crate::rl::Transition;

/// `min(rho * adv, clip(rho, 1 - eps, 1 + eps) * adv)`.
pub fn clipped_surrogate(rho: f64, adv: f64, eps: f64) -> f64 {
    (rho * adv).min(rho.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Probability mass strictly below and strictly above `old_index`.
pub fn prob_partitions(dist: &[f64], old_index: usize) -> Result<(f64, f64)> {
    if old_index >= dist.len() {
        return Err(Error::IndexOutOfRange {
            index: old_index,
            len: dist.len(),
        });
    }
    let below = dist[..old_index].iter().sum();
    let above = dist[old_index + 1..].iter().sum();
    Ok((below, above))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoDiagnostics {
    pub clip_frac_x: f64,
    pub clip_frac_y: f64,
    pub mean_ratio_x: f64,
    pub mean_ratio_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub eps_x: f64,
    pub eps_y: f64,
    /// Auxiliary weights for dc, sc, pd, hd.
    pub aux: [f64; 4],
    pub value_coef: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            eps_x: 0.1,
            eps_y: 0.2,
            aux: [1.0; 4],
            value_coef: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ppo: f64,
    pub l_dc: f64,
    pub l_sc: f64,
    pub l_pd: f64,
    pub l_hd: f64,
    pub value: f64,
    pub diag: PpoDiagnostics,
}

fn check_batch(heads: &[HeadVars], batch: &[&Transition], adv: &[[f64; 4]]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if adv.len() != batch.len() || heads.len() != batch.len() {
        return Err(Error::LengthMismatch(format!(
            "{} transitions, {} advantage rows",
            batch.len(),
            adv.len()
        )));
    }
    for (k, t) in batch.iter().enumerate() {
        let ok = t.p_x_old.len() == heads[k].logits_x.len()
            && t.p_y_old.len() == heads[k].logits_y.len()
            && t.logp_x_old.is_finite()
            && t.logp_y_old.is_finite();
        if !ok {
            return Err(Error::MissingOldProbabilities(k));
        }
    }
    Ok(())
}

struct Axis {
    logp: Vec<Var>,
}

/// Log-softmax nodes for both heads of every sample.
fn log_probs(tape: &mut Tape, heads: &[HeadVars]) -> Vec<(Axis, Axis)> {
    heads
        .iter()
        .map(|h| {
            (
                Axis {
                    logp: tape.log_softmax(&h.logits_x),
                },
                Axis {
                    logp: tape.log_softmax(&h.logits_y),
                },
            )
        })
        .collect()
}

fn mean(tape: &mut Tape, terms: &[Var], n: usize) -> Var {
    if terms.is_empty() {
        return tape.constant(0.0);
    }
    let s = tape.sum(terms);
    tape.scale(s, 1.0 / n as f64)
}

fn record_ppo(
    tape: &mut Tape,
    lp: &[(Axis, Axis)],
    batch: &[&Transition],
    adv: &[[f64; 4]],
    eps_x: f64,
    eps_y: f64,
) -> (Var, PpoDiagnostics) {
    let n = batch.len();
    let mut sx = Vec::with_capacity(n);
    let mut sy = Vec::with_capacity(n);
    let mut diag = PpoDiagnostics::default();
    for (k, t) in batch.iter().enumerate() {
        let a_x = adv[k][0] + adv[k][1] + adv[k][2];
        let a_y = adv[k][3];
        for (axis, logp, logp_old, a, eps, out) in [
            (0, lp[k].0.logp[t.i], t.logp_x_old, a_x, eps_x, &mut sx),
            (1, lp[k].1.logp[t.j], t.logp_y_old, a_y, eps_y, &mut sy),
        ] {
            let diff = tape.add_const(logp, -logp_old);
            let rho = tape.exp(diff);
            let r = tape.value(rho);
            let unclipped = tape.scale(rho, a);
            let c = tape.clamp(rho, 1.0 - eps, 1.0 + eps);
            let clipped = tape.scale(c, a);
            out.push(tape.min(unclipped, clipped));
            let is_clipped = if (r - 1.0).abs() > eps { 1.0 } else { 0.0 };
            if axis == 0 {
                diag.clip_frac_x += is_clipped;
                diag.mean_ratio_x += r;
            } else {
                diag.clip_frac_y += is_clipped;
                diag.mean_ratio_y += r;
            }
        }
    }
    let nf = n as f64;
    diag.clip_frac_x /= nf;
    diag.clip_frac_y /= nf;
    diag.mean_ratio_x /= nf;
    diag.mean_ratio_y /= nf;
    let mx = mean(tape, &sx, n);
    let my = mean(tape, &sy, n);
    let s = tape.add(mx, my);
    (tape.scale(s, -1.0), diag)
}

/// Current-policy mass below and above the executed index.
fn partitions(tape: &mut Tape, logp: &[Var], old: usize) -> (Var, Var) {
    let probs: Vec<Var> = logp.iter().map(|l| tape.exp(*l)).collect();
    let below = if old == 0 {
        tape.constant(0.0)
    } else {
        tape.sum(&probs[..old])
    };
    let above = if old + 1 == probs.len() {
        tape.constant(0.0)
    } else {
        tape.sum(&probs[old + 1..])
    };
    (below, above)
}

/// Auxiliary objectives `[L_dc, L_sc, L_pd, L_hd]`, each a mean over all
/// transitions of `adv * f * (corrective mass - opposite mass)`.
fn record_aux(tape: &mut Tape, lp: &[(Axis, Axis)], batch: &[&Transition], adv: &[[f64; 4]]) -> [Var; 4] {
    let n = batch.len();
    let mut terms: [Vec<Var>; 4] = Default::default();
    for (k, t) in batch.iter().enumerate() {
        let d = t.directions;
        if d.f_dc != 0 {
            let (dec, acc) = partitions(tape, &lp[k].1.logp, t.j);
            let diff = tape.sub(dec, acc);
            terms[0].push(tape.scale(diff, adv[k][3] * d.f_dc as f64));
        }
        let lateral = [(1, d.f_sc, adv[k][0]), (2, d.f_pd, adv[k][1]), (3, d.f_hd, adv[k][2])];
        if lateral.iter().any(|(_, f, _)| *f != 0) {
            let (left, right) = partitions(tape, &lp[k].0.logp, t.i);
            let diff = tape.sub(right, left);
            for (slot, f, a) in lateral {
                if f != 0 {
                    terms[slot].push(tape.scale(diff, a * f as f64));
                }
            }
        }
    }
    [
        mean(tape, &terms[0], n),
        mean(tape, &terms[1], n),
        mean(tape, &terms[2], n),
        mean(tape, &terms[3], n),
    ]
}

/// Sum over the four components of the mean squared value error.
fn record_value(tape: &mut Tape, heads: &[HeadVars], returns: &[[f64; 4]]) -> Var {
    let n = heads.len();
    let mut per_comp = Vec::with_capacity(4);
    for c in 0..4 {
        let sq: Vec<Var> = heads
            .iter()
            .zip(returns)
            .map(|(h, r)| {
                let e = tape.add_const(h.values[c], -r[c]);
                tape.square(e)
            })
            .collect();
        per_comp.push(mean(tape, &sq, n));
    }
    tape.sum(&per_comp)
}

fn graph_for(policy: &Policy, batch: &[&Transition]) -> Result<LossGraph> {
    let feats: Vec<&[f64]> = batch.iter().map(|t| t.features.as_slice()).collect();
    LossGraph::build(policy, &feats)
}

pub fn ppo_loss(
    policy: &Policy,
    batch: &[&Transition],
    adv: &[[f64; 4]],
    eps_x: f64,
    eps_y: f64,
) -> Result<(f64, PpoDiagnostics)> {
    let mut g = graph_for(policy, batch)?;
    let (tape, heads) = g.parts();
    check_batch(heads, batch, adv)?;
    let lp = log_probs(tape, heads);
    let (v, diag) = record_ppo(tape, &lp, batch, adv, eps_x, eps_y);
    Ok((tape.value(v), diag))
}

pub fn aux_losses(policy: &Policy, batch: &[&Transition], adv: &[[f64; 4]]) -> Result<[f64; 4]> {
    let mut g = graph_for(policy, batch)?;
    let (tape, heads) = g.parts();
    check_batch(heads, batch, adv)?;
    let lp = log_probs(tape, heads);
    let v = record_aux(tape, &lp, batch, adv);
    Ok(v.map(|x| tape.value(x)))
}

pub fn value_loss(policy: &Policy, batch: &[&Transition], returns: &[[f64; 4]]) -> Result<f64> {
    if returns.len() != batch.len() {
        return Err(Error::LengthMismatch(format!(
            "{} transitions, {} return rows",
            batch.len(),
            returns.len()
        )));
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut g = graph_for(policy, batch)?;
    let (tape, heads) = g.parts();
    let v = record_value(tape, heads, returns);
    Ok(tape.value(v))
}

/// Which terms of the composite objective to record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Composite,
    Ppo,
    Aux(usize),
    Value,
}

/// Records the selected objective and returns the graph with its single
/// output registered, plus the breakdown of all terms.
pub fn loss_graph(
    policy: &Policy,
    batch: &[&Transition],
    adv: &[[f64; 4]],
    returns: &[[f64; 4]],
    w: &LossWeights,
    objective: Objective,
) -> Result<(LossGraph, LossBreakdown)> {
    if returns.len() != batch.len() {
        return Err(Error::LengthMismatch(format!(
            "{} transitions, {} return rows",
            batch.len(),
            returns.len()
        )));
    }
    let mut g = graph_for(policy, batch)?;
    let (tape, heads) = g.parts();
    check_batch(heads, batch, adv)?;
    let lp = log_probs(tape, heads);
    let (ppo, diag) = record_ppo(tape, &lp, batch, adv, w.eps_x, w.eps_y);
    let aux = record_aux(tape, &lp, batch, adv);
    let value = record_value(tape, heads, returns);
    let mut terms = vec![ppo];
    for (a, lam) in aux.iter().zip(w.aux) {
        terms.push(tape.scale(*a, lam));
    }
    terms.push(tape.scale(value, w.value_coef));
    let total = tape.sum(&terms);
    let out = LossBreakdown {
        total: tape.value(total),
        ppo: tape.value(ppo),
        l_dc: tape.value(aux[0]),
        l_sc: tape.value(aux[1]),
        l_pd: tape.value(aux[2]),
        l_hd: tape.value(aux[3]),
        value: tape.value(value),
        diag,
    };
    let selected = match objective {
        Objective::Composite => total,
        Objective::Ppo => ppo,
        Objective::Aux(k) => aux[k],
        Objective::Value => value,
    };
    g.add_output(selected);
    Ok((g, out))
}

/// `ppo + sum_k lambda_k L_k + c_v * value`.
pub fn composite_loss(
    policy: &Policy,
    batch: &[&Transition],
    adv: &[[f64; 4]],
    returns: &[[f64; 4]],
    w: &LossWeights,
) -> Result<LossBreakdown> {
    loss_graph(policy, batch, adv, returns, w, Objective::Composite).map(|(_, b)| b)
}

pub fn composite_loss_and_grad(
    policy: &Policy,
    batch: &[&Transition],
    adv: &[[f64; 4]],
    returns: &[[f64; 4]],
    w: &LossWeights,
) -> Result<(LossBreakdown, Gradients)> {
    objective_grad(policy, batch, adv, returns, w, Objective::Composite)
}

pub fn objective_grad(
    policy: &Policy,
    batch: &[&Transition],
    adv: &[[f64; 4]],
    returns: &[[f64; 4]],
    w: &LossWeights,
    objective: Objective,
) -> Result<(LossBreakdown, Gradients)> {
    let (g, b) = loss_graph(policy, batch, adv, returns, w, objective)?;
    Ok((b, policy.backward(&g)?))
}
