use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{AsdError, Result};

/// Cosine one-cycle schedule: warm up from `max_lr / div_factor` to `max_lr`
/// over the first `pct_start` of the steps, then anneal to
/// `max_lr / (div_factor * final_div_factor)` at the last step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl OneCycle {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        OneCycle {
            max_lr,
            total_steps,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }

    pub fn initial_lr(&self) -> f64 {
        self.max_lr / self.div_factor
    }

    pub fn min_lr(&self) -> f64 {
        self.initial_lr() / self.final_div_factor
    }

    /// Step at which the rate equals `max_lr`.
    pub fn peak_step(&self) -> usize {
        let last = self.total_steps.saturating_sub(1);
        if last < 2 {
            return 0;
        }
        ((self.pct_start * last as f64).round() as usize).clamp(1, last - 1)
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let anneal = |from: f64, to: f64, pct: f64| to + (from - to) / 2.0 * (1.0 + (std::f64::consts::PI * pct).cos());
        let last = self.total_steps.saturating_sub(1);
        match last {
            0 => return self.initial_lr(),
            1 => return if step == 0 { self.initial_lr() } else { self.min_lr() },
            _ => {}
        }
        let s = step.min(last);
        let peak = self.peak_step();
        if s <= peak {
            anneal(self.initial_lr(), self.max_lr, s as f64 / peak as f64)
        } else {
            anneal(self.max_lr, self.min_lr(), (s - peak) as f64 / (last - peak) as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    OneCycle(OneCycle),
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        match self {
            LrSchedule::Constant { lr } => *lr,
            LrSchedule::OneCycle(oc) => oc.lr_at(step),
        }
    }
}

/// Adam with decoupled weight decay. Moments are kept in f64 regardless of the
/// parameter precision.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    pub step: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    pub fn new(n_params: usize, schedule: LrSchedule, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            schedule,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr_at(self.step)
    }

    /// Applies one update and returns the learning rate used. `name_of` maps a
    /// parameter index to a name for diagnostics.
    pub fn step<T: Real>(
        &mut self,
        params: &mut [T],
        grads: &[T],
        name_of: impl Fn(usize) -> String,
    ) -> Result<f64> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(AsdError::Shape(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(AsdError::NonFiniteGradient(name_of(i)));
        }
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - lr * self.weight_decay;
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let g = g.f64();
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            *p = T::of(p.f64() * decay - update);
        }
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cycle_shape() {
        let oc = OneCycle::new(1e-3, 1000);
        assert!((oc.lr_at(0) - 1e-3 / 25.0).abs() < 1e-18);
        let peak = oc.peak_step();
        assert_eq!(peak, 300);
        assert!((oc.lr_at(peak) - 1e-3).abs() < 1e-18);
        assert!(oc.lr_at(999) <= oc.lr_at(0));
        assert!((oc.lr_at(999) - 1e-3 / 25.0 / 1e4).abs() < 1e-18);
        // oracle: monotone up to the peak, monotone down after it
        for s in 1..=peak {
            assert!(oc.lr_at(s) >= oc.lr_at(s - 1));
        }
        for s in peak + 1..1000 {
            assert!(oc.lr_at(s) <= oc.lr_at(s - 1));
        }
        // direct cosine evaluation at the midpoint of warm-up
        let mid = oc.lr_at(150);
        let expected = 1e-3 + (1e-3 / 25.0 - 1e-3) / 2.0 * (1.0 + (std::f64::consts::PI * 0.5).cos());
        assert!((mid - expected).abs() < 1e-15);
    }

    #[test]
    fn tiny_schedules() {
        let oc = OneCycle::new(1.0, 1);
        assert_eq!(oc.lr_at(0), 1.0 / 25.0);
        let oc = OneCycle::new(1.0, 2);
        assert_eq!(oc.lr_at(1), oc.min_lr());
        let oc = OneCycle::new(1.0, 3);
        assert_eq!(oc.peak_step(), 1);
        assert_eq!(oc.lr_at(1), 1.0);
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut opt = AdamW::new(3, LrSchedule::Constant { lr: 0.1 }, 0.0);
        let mut p = vec![1.0f64, -2.0, 3.0];
        for _ in 0..5 {
            opt.step(&mut p, &[0.0; 3], |i| i.to_string()).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn decoupled_decay_shrinks_params() {
        let mut opt = AdamW::new(1, LrSchedule::Constant { lr: 0.1 }, 0.5);
        let mut p = vec![2.0f64];
        opt.step(&mut p, &[0.0], |i| i.to_string()).unwrap();
        assert!((p[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut opt = AdamW::new(4, LrSchedule::Constant { lr: 0.01 }, 0.0);
        let mut w = vec![0.8f64, -0.5, 0.3, 1.0];
        for _ in 0..500 {
            let g: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut w, &g, |i| i.to_string()).unwrap();
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "{norm}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut opt = AdamW::new(2, LrSchedule::Constant { lr: 0.1 }, 0.0);
        let mut p = vec![0.0f32; 2];
        let err = opt.step(&mut p, &[0.0, f32::NAN], |i| format!("w{i}")).unwrap_err();
        assert!(err.to_string().contains("w1"));
    }
}
