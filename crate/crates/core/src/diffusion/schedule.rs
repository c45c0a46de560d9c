//! DDPM noise schedule with a strided step plan and a per-step resampling plan.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which sequences a visited step denoises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    /// Alternate over every column and every row of the matrix.
    AllViews,
    /// Only the rightmost column.
    RightOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resample {
    pub count: usize,
    pub scope: Scope,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub total_steps: usize,
    pub denoise_steps: usize,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub resample_hi: usize,
    pub resample_lo: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            total_steps: 1000,
            denoise_steps: 50,
            beta_lo: 1e-4,
            beta_hi: 0.02,
            resample_hi: 8,
            resample_lo: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    /// `betas[t - 1]` is beta_t for t in 1..=T.
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
    step_plan: Vec<usize>,
    resample_plan: Vec<Resample>,
}

pub fn make_schedule(cfg: &ScheduleConfig) -> Result<NoiseSchedule> {
    let ScheduleConfig { total_steps: t_total, denoise_steps: steps, beta_lo, beta_hi, resample_hi, resample_lo } =
        *cfg;
    if t_total == 0 || steps == 0 || steps > t_total {
        return Err(Error::InvalidRange(format!("{steps} denoising steps over T = {t_total}")));
    }
    if !(beta_lo > 0.0 && beta_lo <= beta_hi && beta_hi < 1.0) {
        return Err(Error::InvalidRange(format!("beta endpoints ({beta_lo}, {beta_hi})")));
    }
    if resample_hi == 0 || resample_lo == 0 {
        return Err(Error::InvalidRange("resample counts must be at least 1".into()));
    }
    let betas: Vec<f64> = (0..t_total)
        .map(|i| {
            if t_total == 1 {
                beta_lo
            } else {
                beta_lo + (beta_hi - beta_lo) * i as f64 / (t_total - 1) as f64
            }
        })
        .collect();
    let alpha_bar = betas
        .iter()
        .scan(1.0f64, |acc, b| {
            *acc *= 1.0 - b;
            Some(*acc)
        })
        .collect();

    // nearest stride, shrunk until every visited step stays >= 1
    let mut stride = ((t_total as f64 / steps as f64).round() as usize).max(1);
    while stride > 1 && t_total < 1 + (steps - 1) * stride {
        stride -= 1;
    }
    let step_plan: Vec<usize> = (0..steps).map(|i| t_total - i * stride).collect();
    let first_half = steps.div_ceil(2);
    let resample_plan = (0..steps)
        .map(|i| {
            if i < first_half {
                Resample { count: resample_hi, scope: Scope::AllViews }
            } else {
                Resample { count: resample_lo, scope: Scope::RightOnly }
            }
        })
        .collect();
    Ok(NoiseSchedule { betas, alpha_bar, step_plan, resample_plan })
}

impl NoiseSchedule {
    pub fn total_steps(&self) -> usize {
        self.betas.len()
    }

    /// beta_t for `t` in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Cumulative product of `1 - beta` up to `t`; 1 at `t = 0`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Visited timesteps, strictly decreasing from T.
    pub fn step_plan(&self) -> &[usize] {
        &self.step_plan
    }

    pub fn resample_plan(&self) -> &[Resample] {
        &self.resample_plan
    }

    pub fn stride(&self) -> usize {
        match self.step_plan.as_slice() {
            [a, b, ..] => a - b,
            [a] => *a,
            [] => 0,
        }
    }

    /// Iterates `(t, t_prev, resample)` over the visited steps; the last step
    /// targets `t_prev = 0`.
    pub fn steps(&self) -> impl Iterator<Item = (usize, usize, Resample)> + '_ {
        self.step_plan.iter().enumerate().map(move |(i, &t)| {
            let prev = self.step_plan.get(i + 1).copied().unwrap_or(0);
            (t, prev, self.resample_plan[i])
        })
    }

    /// Timestep the transition out of `t` lands on.
    pub fn prev_timestep(&self, t: usize) -> usize {
        match self.step_plan.iter().position(|&s| s == t) {
            Some(i) => self.step_plan.get(i + 1).copied().unwrap_or(0),
            None => t.saturating_sub(self.stride()),
        }
    }

    /// Effective one-jump beta between `t` and `prev_timestep(t)`:
    /// `1 - alpha_bar_t / alpha_bar_prev`. Equals beta_t when the stride is 1.
    pub fn jump_beta(&self, t: usize) -> f64 {
        let prev = self.prev_timestep(t);
        1.0 - self.alpha_bar(t) / self.alpha_bar(prev)
    }

    /// DDPM posterior variance of the jump out of `t`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        let prev = self.prev_timestep(t);
        (1.0 - self.alpha_bar(prev)) / (1.0 - self.alpha_bar(t)) * self.jump_beta(t)
    }

    /// Total denoise-and-combine repetitions across the plan.
    pub fn total_repetitions(&self) -> usize {
        self.resample_plan.iter().map(|r| r.count).sum()
    }
}
