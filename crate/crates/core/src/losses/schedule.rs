use std::str::FromStr;

use crate::config::{FlatConfig, KeyDoc};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ramp {
    Linear,
    Logarithmic,
}

impl FromStr for Ramp {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(Self::Linear),
            "log" | "logarithmic" => Ok(Self::Logarithmic),
            other => Err(format!("unknown ramp `{other}`")),
        }
    }
}

/// Learning-rate warmup with exponential decay, and a three-stage margin
/// ramp. All times are iteration indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerConfig {
    pub total_iters: usize,
    pub warmup_iters: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub margin_start: usize,
    pub margin_end: usize,
    pub margin_final: f64,
    pub ramp: Ramp,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            total_iters: 1000,
            warmup_iters: 100,
            lr_initial: 0.1,
            lr_final: 1e-4,
            margin_start: 200,
            margin_end: 500,
            margin_final: 0.2,
            ramp: Ramp::Logarithmic,
        }
    }
}

pub const SCHEDULER_KEYS: &[KeyDoc] = &[
    KeyDoc { key: "total_iters", default: "1000", help: "total training iterations T" },
    KeyDoc { key: "warmup_iters", default: "100", help: "linear warmup length" },
    KeyDoc { key: "lr_initial", default: "0.1", help: "learning rate after warmup at t = 0" },
    KeyDoc { key: "lr_final", default: "0.0001", help: "learning rate reached at t = T" },
    KeyDoc { key: "margin_start_iter", default: "200", help: "margin stays 0 before this iteration" },
    KeyDoc { key: "margin_end_iter", default: "500", help: "margin reaches its final value here" },
    KeyDoc { key: "margin_final", default: "0.2", help: "final margin" },
    KeyDoc { key: "margin_ramp", default: "logarithmic", help: "linear | logarithmic" },
];

impl SchedulerConfig {
    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            total_iters: c.get("total_iters", d.total_iters)?,
            warmup_iters: c.get("warmup_iters", d.warmup_iters)?,
            lr_initial: c.get("lr_initial", d.lr_initial)?,
            lr_final: c.get("lr_final", d.lr_final)?,
            margin_start: c.get("margin_start_iter", d.margin_start)?,
            margin_end: c.get("margin_end_iter", d.margin_end)?,
            margin_final: c.get("margin_final", d.margin_final)?,
            ramp: c.get("margin_ramp", d.ramp)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 || self.warmup_iters > self.total_iters {
            return Err(Error::config("need 0 <= warmup_iters <= total_iters and total_iters > 0"));
        }
        if !(self.margin_start <= self.margin_end && self.margin_end <= self.total_iters) {
            return Err(Error::config("need margin_start_iter <= margin_end_iter <= total_iters"));
        }
        if !(self.lr_initial > 0.0 && self.lr_final > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.margin_final) {
            return Err(Error::config("margin_final must be in [0, 1)"));
        }
        Ok(())
    }

    fn check(&self, t: usize) -> Result<()> {
        if t >= self.total_iters {
            return Err(Error::input(format!("iteration {t} outside [0, {})", self.total_iters)));
        }
        Ok(())
    }

    /// Warmup factor in [0, 1].
    pub fn warmup(&self, t: usize) -> f64 {
        if t < self.warmup_iters {
            t as f64 / self.warmup_iters as f64
        } else {
            1.0
        }
    }

    /// Exponential decay from `lr_initial` at 0 to `lr_final` at `total_iters`.
    pub fn decay(&self, t: usize) -> f64 {
        let frac = t as f64 / self.total_iters as f64;
        self.lr_initial * (frac * (self.lr_final / self.lr_initial).ln()).exp()
    }

    pub fn lr(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.warmup(t) * self.decay(t))
    }

    pub fn margin(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(if t < self.margin_start {
            0.0
        } else if t >= self.margin_end {
            self.margin_final
        } else {
            let u = (t - self.margin_start) as f64 / (self.margin_end - self.margin_start) as f64;
            match self.ramp {
                Ramp::Linear => self.margin_final * u,
                Ramp::Logarithmic => self.margin_final * (1.0 + (std::f64::consts::E - 1.0) * u).ln(),
            }
        })
    }
}
