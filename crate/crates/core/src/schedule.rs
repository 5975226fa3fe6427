//! One-cycle learning rates built from two cosine segments.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cosine interpolation from `lr1` (at `i = 0`) towards `lr2` over `steps` steps:
/// `lr2 + (lr1 - lr2) / 2 · (1 + cos(iπ / steps))` for `i` in `0..steps`.
pub fn cosine_segment(lr1: f64, lr2: f64, steps: usize, i: usize) -> Result<f64> {
    if steps == 0 {
        return Err(Error::contract("cosine segment needs at least one step"));
    }
    if i >= steps {
        return Err(Error::contract(format!(
            "step {i} outside cosine segment of {steps} steps"
        )));
    }
    if i == 0 {
        return Ok(lr1);
    }
    Ok(lr2 + (lr1 - lr2) / 2.0 * (1.0 + (i as f64 * PI / steps as f64).cos()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub max_lr: f64,
    /// Total optimizer steps. Training overwrites this with the computed count.
    pub iters: usize,
    pub warm_frac: f64,
    pub start_div: f64,
    pub final_div: f64,
    /// Use `round(warm_frac · iters)` for the decay segment as well and hold
    /// `max_lr / final_div` for any remaining steps.
    pub literal_decay_len: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            max_lr: 0.01,
            iters: 1000,
            warm_frac: 0.3,
            start_div: 25.0,
            final_div: 2000.0,
            literal_decay_len: false,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::config(format!("max_lr must be positive, got {}", self.max_lr)));
        }
        if !(self.warm_frac > 0.0 && self.warm_frac < 1.0) {
            return Err(Error::config(format!(
                "warm_frac must lie in (0, 1), got {}",
                self.warm_frac
            )));
        }
        if self.iters < 2 {
            return Err(Error::config(format!("iters must be >= 2, got {}", self.iters)));
        }
        if !(self.start_div > 1.0) || !(self.final_div > 1.0) {
            return Err(Error::config("start_div and final_div must exceed 1"));
        }
        let w = self.warm_steps();
        if w == 0 || w >= self.iters {
            return Err(Error::config(format!(
                "warm-up of {w} steps leaves no room in {} iterations",
                self.iters
            )));
        }
        Ok(())
    }

    /// `round(warm_frac · iters)`.
    pub fn warm_steps(&self) -> usize {
        (self.warm_frac * self.iters as f64).round() as usize
    }

    pub fn decay_steps(&self) -> usize {
        let w = self.warm_steps();
        if self.literal_decay_len {
            w.min(self.iters - w)
        } else {
            self.iters - w
        }
    }

    /// Learning rate at global step `i`.
    pub fn lr(&self, i: usize) -> Result<f64> {
        if i >= self.iters {
            return Err(Error::contract(format!(
                "step {i} beyond schedule of {} iterations",
                self.iters
            )));
        }
        let w = self.warm_steps();
        let low = self.max_lr / self.start_div;
        let end = self.max_lr / self.final_div;
        if i < w {
            return cosine_segment(low, self.max_lr, w, i);
        }
        let d = self.decay_steps();
        if i - w < d {
            cosine_segment(self.max_lr, end, d, i - w)
        } else {
            Ok(end)
        }
    }

    /// Every learning rate in `0..iters`.
    pub fn trace(&self) -> Result<Vec<f64>> {
        self.validate()?;
        (0..self.iters).map(|i| self.lr(i)).collect()
    }
}

/// Learning rate of the one-cycle schedule at step `i`.
pub fn one_cycle_lr(cfg: &ScheduleConfig, i: usize) -> Result<f64> {
    cfg.validate()?;
    cfg.lr(i)
}

/// `step,lr` rows.
pub fn trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("step,lr\n");
    for (i, lr) in trace.iter().enumerate() {
        s.push_str(&format!("{i},{lr}\n"));
    }
    s
}

/// Minimal line chart of a learning-rate trace.
pub fn trace_svg(trace: &[f64], title: &str) -> String {
    let (w, h, m) = (640.0, 360.0, 48.0);
    let max = trace.iter().cloned().fold(f64::MIN, f64::max).max(f64::MIN_POSITIVE);
    let n = trace.len().max(2) - 1;
    let pts: Vec<String> = trace
        .iter()
        .enumerate()
        .map(|(i, lr)| {
            let x = m + (w - 2.0 * m) * i as f64 / n as f64;
            let y = h - m - (h - 2.0 * m) * lr / max;
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let esc = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
            "  <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "  <text x=\"{cx}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n",
            "  <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
            "  <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
            "  <text x=\"{cx}\" y=\"{lx}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">step (0..{steps})</text>\n",
            "  <text x=\"6\" y=\"{m}\" font-family=\"sans-serif\" font-size=\"12\">{max:.3e}</text>\n",
            "  <polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"{pts}\"/>\n",
            "</svg>\n"
        ),
        w = w,
        h = h,
        m = m,
        cx = w / 2.0,
        b = h - m,
        r = w - m,
        lx = h - m / 3.0,
        steps = trace.len(),
        max = max,
        title = esc,
        pts = pts.join(" "),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(max_lr: f64, iters: usize) -> ScheduleConfig {
        ScheduleConfig { max_lr, iters, ..Default::default() }
    }

    #[test]
    fn segment_examples() {
        for i in 0..7 {
            assert_eq!(cosine_segment(0.1, 0.1, 7, i).unwrap(), 0.1);
        }
        assert_eq!(cosine_segment(0.004, 0.1, 30, 0).unwrap(), 0.004);
        assert!((cosine_segment(1.0, 0.0, 2, 1).unwrap() - 0.5).abs() < 1e-16);
        assert!(cosine_segment(1.0, 0.0, 2, 2).is_err());
        assert!(cosine_segment(1.0, 0.0, 0, 0).is_err());
    }

    #[test]
    fn segment_strictly_monotone() {
        let up: Vec<f64> = (0..50).map(|i| cosine_segment(0.01, 0.2, 50, i).unwrap()).collect();
        assert!(up.windows(2).all(|w| w[1] > w[0]));
        let down: Vec<f64> = (0..50).map(|i| cosine_segment(0.2, 0.01, 50, i).unwrap()).collect();
        assert!(down.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn one_cycle_endpoints() {
        let c = cfg(0.1, 100);
        assert_eq!(one_cycle_lr(&c, 0).unwrap(), 0.1 / 25.0);
        assert_eq!(one_cycle_lr(&c, 30).unwrap(), 0.1);
        assert!(one_cycle_lr(&c, 100).is_err());
    }

    #[test]
    fn final_step_close_to_floor() {
        let c = cfg(0.1, 100);
        let last = one_cycle_lr(&c, 99).unwrap();
        let floor = 0.1 / 2000.0;
        // i = T-1 of a 70-step decay
        let expect = floor + (0.1 - floor) / 2.0 * (1.0 + (69.0 * PI / 70.0).cos());
        assert!((last - expect).abs() < 1e-15);
        assert!(last >= floor);
        let prev = one_cycle_lr(&c, 98).unwrap();
        assert!(last - floor < prev - last);
    }

    #[test]
    fn unimodal_with_single_argmax() {
        let t = cfg(0.1, 100).trace().unwrap();
        let peak = t.iter().cloned().fold(f64::MIN, f64::max);
        let argmax: Vec<usize> = (0..t.len()).filter(|&i| t[i] == peak).collect();
        assert_eq!(argmax, vec![30]);
        assert!(t[..=30].windows(2).all(|w| w[1] >= w[0]));
        assert!(t[30..].windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn literal_decay_holds_floor() {
        let c = ScheduleConfig { literal_decay_len: true, ..cfg(0.1, 1000) };
        let t = c.trace().unwrap();
        assert!(t[599] > 0.1 / 2000.0);
        assert!(t[600..].iter().all(|&v| v == 0.1 / 2000.0));
    }

    #[test]
    fn invalid_configs() {
        assert!(ScheduleConfig { warm_frac: 1.0, ..cfg(0.1, 10) }.validate().is_err());
        assert!(ScheduleConfig { start_div: 1.0, ..cfg(0.1, 10) }.validate().is_err());
        assert!(cfg(0.1, 1).validate().is_err());
        assert!(cfg(-0.1, 10).validate().is_err());
    }

    #[test]
    fn csv_and_svg_render() {
        let t = cfg(0.1, 10).trace().unwrap();
        let csv = trace_csv(&t);
        assert!(csv.starts_with("step,lr\n0,0.004\n"));
        assert_eq!(csv.lines().count(), 11);
        let svg = trace_svg(&t, "a <b>");
        assert!(svg.contains("a &lt;b&gt;") && svg.trim_end().ends_with("</svg>"));
    }
}
