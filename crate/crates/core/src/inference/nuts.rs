//! Multinomial No-U-Turn sampler with a diagonal metric, dual-averaging step
//! size and windowed metric adaptation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::LogDensity;
use crate::stats::log_add_exp;

const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct TransitionStats {
    pub accept_stat: f64,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
}

struct Subtree {
    log_w: f64,
    rho: Vec<f64>,
    propose: Point,
    p_beg: Vec<f64>,
    sharp_beg: Vec<f64>,
    p_end: Vec<f64>,
    sharp_end: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Generalised no-U-turn check on the sharp momenta at both ends.
fn persists(sharp_minus: &[f64], sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(sharp_plus, rho) > 0.0 && dot(sharp_minus, rho) > 0.0
}

pub(crate) struct Nuts<'a, D: LogDensity + ?Sized> {
    density: &'a D,
    pub inv_metric: Vec<f64>,
    pub step_size: f64,
    pub max_depth: usize,
    rng: ChaCha8Rng,
    n_leapfrog: usize,
    sum_metro: f64,
    divergent: bool,
}

impl<'a, D: LogDensity + ?Sized> Nuts<'a, D> {
    pub fn new(density: &'a D, seed: u64, stream: u64, max_depth: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            density,
            inv_metric: vec![1.0; density.dim()],
            step_size: 1.0,
            max_depth,
            rng,
            n_leapfrog: 0,
            sum_metro: 0.0,
            divergent: false,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn point(&self, q: Vec<f64>) -> Point {
        let mut grad = vec![0.0; q.len()];
        let logp = self.density.log_density_and_grad(&q, &mut grad);
        Point { p: vec![0.0; q.len()], q, grad, logp }
    }

    fn sample_momentum(&mut self, z: &mut Point) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = self.rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    fn sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn hamiltonian(&self, z: &Point) -> f64 {
        let kinetic: f64 = z.p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>() * 0.5;
        let h = -z.logp + kinetic;
        if h.is_nan() { f64::INFINITY } else { h }
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        z.logp = self.density.log_density_and_grad(&z.q, &mut z.grad);
        if !z.logp.is_finite() {
            z.logp = f64::NEG_INFINITY;
            return;
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }

    /// Find a first step size from a single leapfrog step, doubling or
    /// halving until the acceptance crosses 0.8.
    pub fn init_step_size(&mut self, q: &[f64]) {
        let base = self.point(q.to_vec());
        let log08 = 0.8f64.ln();
        let probe = |this: &mut Self| {
            let mut z = base.clone();
            this.sample_momentum(&mut z);
            let h0 = this.hamiltonian(&z);
            this.leapfrog(&mut z, this.step_size);
            h0 - this.hamiltonian(&z)
        };
        let direction = if probe(self) > log08 { 1 } else { -1 };
        for _ in 0..100 {
            let delta = probe(self);
            if (direction == 1 && !(delta > log08)) || (direction == -1 && !(delta < log08)) {
                break;
            }
            self.step_size *= if direction == 1 { 2.0 } else { 0.5 };
            if !(1e-10..=1e7).contains(&self.step_size) {
                self.step_size = self.step_size.clamp(1e-10, 1e7);
                break;
            }
        }
    }

    fn build_tree(&mut self, z: &mut Point, depth: usize, eps: f64, h0: f64) -> Option<Subtree> {
        if depth == 0 {
            self.leapfrog(z, eps);
            self.n_leapfrog += 1;
            let h = self.hamiltonian(z);
            if h - h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            let log_w = h0 - h;
            self.sum_metro += if log_w > 0.0 { 1.0 } else { log_w.exp() };
            if self.divergent {
                return None;
            }
            let sharp = self.sharp(&z.p);
            return Some(Subtree {
                log_w,
                rho: z.p.clone(),
                propose: z.clone(),
                p_beg: z.p.clone(),
                sharp_beg: sharp.clone(),
                p_end: z.p.clone(),
                sharp_end: sharp,
            });
        }
        let left = self.build_tree(z, depth - 1, eps, h0)?;
        let right = self.build_tree(z, depth - 1, eps, h0)?;

        let log_w = log_add_exp(left.log_w, right.log_w);
        let accept = (right.log_w - log_w).exp();
        let propose = if self.rng.random::<f64>() < accept { right.propose } else { left.propose };
        let rho = add(&left.rho, &right.rho);
        let ok = persists(&left.sharp_beg, &right.sharp_end, &rho)
            && persists(&left.sharp_beg, &right.sharp_beg, &add(&left.rho, &right.p_beg))
            && persists(&left.sharp_end, &right.sharp_end, &add(&right.rho, &left.p_end));
        if !ok {
            return None;
        }
        Some(Subtree {
            log_w,
            rho,
            propose,
            p_beg: left.p_beg,
            sharp_beg: left.sharp_beg,
            p_end: right.p_end,
            sharp_end: right.sharp_end,
        })
    }

    /// One NUTS transition from `q`. Returns the new position, its log
    /// density and the transition statistics.
    pub fn transition(&mut self, q: &[f64]) -> (Vec<f64>, f64, TransitionStats) {
        let mut z = self.point(q.to_vec());
        self.sample_momentum(&mut z);
        let h0 = self.hamiltonian(&z);
        self.n_leapfrog = 0;
        self.sum_metro = 0.0;
        self.divergent = false;

        let mut minus = z.clone();
        let mut plus = z.clone();
        let mut sharp_minus = self.sharp(&z.p);
        let mut sharp_plus = sharp_minus.clone();
        let mut rho = z.p.clone();
        let mut sample = z;
        let mut log_sum_w = 0.0;
        let mut depth = 0;

        while depth < self.max_depth {
            let forward = self.rng.random::<f64>() > 0.5;
            let p_old = if forward { plus.p.clone() } else { minus.p.clone() };
            let sub = if forward {
                self.build_tree(&mut plus, depth, self.step_size, h0)
            } else {
                self.build_tree(&mut minus, depth, -self.step_size, h0)
            };
            let Some(sub) = sub else { break };
            depth += 1;

            // Biased progressive sampling favours the new subtree.
            if sub.log_w > log_sum_w || self.rng.random::<f64>() < (sub.log_w - log_sum_w).exp() {
                sample = sub.propose.clone();
            }
            log_sum_w = log_add_exp(log_sum_w, sub.log_w);

            let total = add(&rho, &sub.rho);
            let ok = if forward {
                persists(&sharp_minus, &sub.sharp_end, &total)
                    && persists(&sharp_minus, &sub.sharp_beg, &add(&rho, &sub.p_beg))
                    && persists(&sharp_plus, &sub.sharp_end, &add(&sub.rho, &p_old))
            } else {
                persists(&sub.sharp_end, &sharp_plus, &total)
                    && persists(&sub.sharp_beg, &sharp_plus, &add(&rho, &sub.p_beg))
                    && persists(&sub.sharp_end, &sharp_minus, &add(&sub.rho, &p_old))
            };
            if forward {
                sharp_plus = sub.sharp_end.clone();
            } else {
                sharp_minus = sub.sharp_end.clone();
            }
            rho = total;
            if !ok {
                break;
            }
        }
        let stats = TransitionStats {
            accept_stat: if self.n_leapfrog > 0 { self.sum_metro / self.n_leapfrog as f64 } else { 0.0 },
            depth,
            n_leapfrog: self.n_leapfrog,
            divergent: self.divergent,
        };
        (sample.q, sample.logp, stats)
    }
}

/// Dual-averaging step-size adaptation.
#[derive(Debug, Clone)]
pub(crate) struct StepSizeAdapter {
    pub target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl StepSizeAdapter {
    pub fn new(target: f64) -> Self {
        Self { target, gamma: 0.05, t0: 10.0, kappa: 0.75, mu: 0.0, counter: 0.0, s_bar: 0.0, x_bar: 0.0 }
    }

    pub fn restart(&mut self, step_size: f64) {
        self.mu = (10.0 * step_size).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    pub fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Windowed variance estimation for the diagonal metric: a fast initial
/// buffer, doubling slow windows, and a fast terminal buffer.
#[derive(Debug, Clone)]
pub(crate) struct MetricAdapter {
    num_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MetricAdapter {
    pub fn new(dim: usize, num_warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base_window) = (75, 50, 25);
        if num_warmup < 20 {
            // Too short to adapt the metric; only the step size is tuned.
            init_buffer = num_warmup;
            term_buffer = 0;
            base_window = 0;
        } else if init_buffer + base_window + term_buffer > num_warmup {
            init_buffer = (0.15 * num_warmup as f64) as usize;
            term_buffer = (0.1 * num_warmup as f64) as usize;
            base_window = num_warmup - init_buffer - term_buffer;
        }
        Self {
            num_warmup,
            init_buffer,
            term_buffer,
            window_size: base_window,
            next_window: (init_buffer + base_window).saturating_sub(1),
            counter: 0,
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn in_window(&self) -> bool {
        self.window_size > 0
            && self.counter >= self.init_buffer
            && self.counter < self.num_warmup - self.term_buffer
            && self.counter != self.num_warmup
    }

    fn window_end(&self) -> bool {
        self.window_size > 0 && self.counter == self.next_window && self.counter != self.num_warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.num_warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last && self.next_window + 2 * self.window_size >= self.num_warmup - self.term_buffer {
            self.next_window = last;
        }
    }

    /// Feed a warm-up draw. Returns true when `inv_metric` was updated.
    pub fn learn(&mut self, inv_metric: &mut [f64], q: &[f64]) -> bool {
        if self.in_window() {
            self.n += 1;
            for i in 0..q.len() {
                let d = q[i] - self.mean[i];
                self.mean[i] += d / self.n as f64;
                self.m2[i] += d * (q[i] - self.mean[i]);
            }
        }
        if self.window_end() {
            self.compute_next_window();
            let n = self.n as f64;
            if self.n > 1 {
                for i in 0..inv_metric.len() {
                    let var = self.m2[i] / (n - 1.0);
                    inv_metric[i] = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
                }
            }
            self.n = 0;
            self.mean.iter_mut().for_each(|v| *v = 0.0);
            self.m2.iter_mut().for_each(|v| *v = 0.0);
            self.counter += 1;
            return true;
        }
        self.counter += 1;
        false
    }
}
