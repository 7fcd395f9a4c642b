//! Per-component generalized advantage estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Advantages and value targets per transition, components ordered
/// `[sc, pd, hd, dc]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdvantageSet {
    pub adv: Vec<[f64; 4]>,
    pub returns: Vec<[f64; 4]>,
}

impl AdvantageSet {
    pub fn len(&self) -> usize {
        self.adv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adv.is_empty()
    }

    /// Lateral advantage: static collision + position + heading components.
    pub fn a_x(&self, t: usize) -> f64 {
        let a = self.adv[t];
        a[0] + a[1] + a[2]
    }

    /// Longitudinal advantage: the dynamic collision component.
    pub fn a_y(&self, t: usize) -> f64 {
        self.adv[t][3]
    }
}

/// GAE for one reward stream by backward recursion. `terminal[t]` marks an
/// absorbing transition (next value 0, no advantage flows back across it);
/// the final transition, if not terminal, bootstraps with `bootstrap`.
pub fn gae_component(
    rewards: &[f64],
    values: &[f64],
    terminal: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let n = rewards.len();
    if values.len() != n || terminal.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{n} rewards, {} values, {} terminal flags",
            values.len(),
            terminal.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let (next_v, carry) = if terminal[t] {
            (0.0, 0.0)
        } else if t + 1 == n {
            (bootstrap, 0.0)
        } else {
            (values[t + 1], next_adv)
        };
        let delta = rewards[t] + gamma * next_v - values[t];
        adv[t] = delta + gamma * lambda * carry;
        next_adv = adv[t];
    }
    Ok(adv)
}

/// Runs [`gae_component`] on each of the four reward components.
pub fn compute_gae(
    rewards: &[[f64; 4]],
    values: &[[f64; 4]],
    terminal: &[bool],
    bootstrap: [f64; 4],
    gamma: f64,
    lambda: f64,
) -> Result<AdvantageSet> {
    let n = rewards.len();
    if values.len() != n {
        return Err(Error::LengthMismatch(format!("{n} rewards, {} values", values.len())));
    }
    let mut adv = vec![[0.0; 4]; n];
    for c in 0..4 {
        let r: Vec<f64> = rewards.iter().map(|x| x[c]).collect();
        let v: Vec<f64> = values.iter().map(|x| x[c]).collect();
        let a = gae_component(&r, &v, terminal, bootstrap[c], gamma, lambda)?;
        for t in 0..n {
            adv[t][c] = a[t];
        }
    }
    let returns = adv
        .iter()
        .zip(values)
        .map(|(a, v)| [a[0] + v[0], a[1] + v[1], a[2] + v[2], a[3] + v[3]])
        .collect();
    Ok(AdvantageSet { adv, returns })
}

/// Largest gap between the summed component advantages and GAE run directly
/// on the summed lateral / longitudinal streams.
pub fn decomposition_error(
    rewards: &[[f64; 4]],
    values: &[[f64; 4]],
    terminal: &[bool],
    bootstrap: [f64; 4],
    gamma: f64,
    lambda: f64,
    set: &AdvantageSet,
) -> Result<f64> {
    let sum_x = |a: &[f64; 4]| a[0] + a[1] + a[2];
    let rx: Vec<f64> = rewards.iter().map(sum_x).collect();
    let vx: Vec<f64> = values.iter().map(sum_x).collect();
    let ax = gae_component(&rx, &vx, terminal, sum_x(&bootstrap), gamma, lambda)?;
    let ry: Vec<f64> = rewards.iter().map(|a| a[3]).collect();
    let vy: Vec<f64> = values.iter().map(|a| a[3]).collect();
    let ay = gae_component(&ry, &vy, terminal, bootstrap[3], gamma, lambda)?;
    let mut worst: f64 = 0.0;
    for t in 0..rewards.len() {
        worst = worst.max((ax[t] - set.a_x(t)).abs()).max((ay[t] - set.a_y(t)).abs());
    }
    Ok(worst)
}
