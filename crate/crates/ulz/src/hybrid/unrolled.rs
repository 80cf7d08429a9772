//! Tape-recorded K-iteration forward passes for training.
//!
//! These mirror the plain runners in `hybrid::mod` op for op; a
//! consistency test pins the two paths together. Data-dependent interval
//! bounds (the mixing weight's lower end, the adaptive lambda ceiling)
//! are recomputed from current node values every forward pass and enter
//! the graph as constants, so iterates stay feasible throughout training
//! while gradients flow only through the raw parameters.

use std::collections::BTreeMap;

use crate::autodiff::{NodeId, ParamStore, Shape, Tape};
use crate::error::{Error, Result};
use crate::linalg::DenseVector;
use crate::neuralop::Operator;
use crate::problem::ProblemInstance;

use super::{
    cpss_keep_count, gate_family, GateFamily, HybridConfig, Variant, LAMBDA_FLOOR,
};

/// One recorded sample: the final iterate and the leaf node of every
/// parameter that received gradients.
pub struct Recorded {
    pub x_k: NodeId,
    pub param_nodes: BTreeMap<String, NodeId>,
}

struct Recorder<'a> {
    tape: &'a mut Tape,
    store: &'a ParamStore,
    params: BTreeMap<String, NodeId>,
}

impl<'a> Recorder<'a> {
    fn raw(&mut self, name: &str) -> Result<NodeId> {
        if let Some(id) = self.params.get(name) {
            return Ok(*id);
        }
        let p = self.store.get(name)?;
        let shape = match p.dims.len() {
            0 => Shape::Scalar,
            1 => Shape::Vector(p.dims[0]),
            2 => Shape::Matrix(p.dims[0], p.dims[1]),
            _ => return Err(Error::Dim(format!("parameter {name} has too many dims"))),
        };
        let id = self.tape.leaf(shape, p.raw.clone())?;
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    /// effective = raw^2.
    fn positive(&mut self, name: &str) -> Result<NodeId> {
        let r = self.raw(name)?;
        self.tape.hadamard(r, r)
    }

    /// effective = raw^2 + floor (strictly positive quantities).
    fn positive_floored(&mut self, name: &str, floor: f64) -> Result<NodeId> {
        let sq = self.positive(name)?;
        Ok(self.tape.scale(sq, 1.0, floor))
    }

    fn clamped(&mut self, name: &str, lo: f64, hi: f64) -> Result<NodeId> {
        let r = self.raw(name)?;
        self.tape.affine_clamp(r, lo, hi)
    }

    fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        let pos = self.tape.relu(x);
        let negx = self.tape.scale(x, -1.0, 0.0);
        let neg = self.tape.relu(negx);
        self.tape.add(pos, neg)
    }

    fn vec_max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.tape.add(a, b)?;
        let d = self.tape.sub(a, b)?;
        let ad = self.abs(d)?;
        let t = self.tape.add(s, ad)?;
        Ok(self.tape.scale(t, 0.5, 0.0))
    }

    fn scalar_min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.tape.add(a, b)?;
        let d = self.tape.sub(a, b)?;
        let ad = self.abs(d)?;
        let t = self.tape.sub(s, ad)?;
        Ok(self.tape.scale(t, 0.5, 0.0))
    }

    /// alpha = lower + (1 - lower) sigmoid(raw) with a constant lower end.
    fn alpha(&mut self, name: &str, lower: f64) -> Result<NodeId> {
        let r = self.raw(name)?;
        self.tape.affine_clamp(r, lower, 1.0)
    }

    /// Same map with the lower end itself a node, so gradients flow
    /// through the data-dependent bound.
    fn alpha_dyn(&mut self, raw: NodeId, lower: NodeId) -> Result<NodeId> {
        let s = self.tape.sigmoid_node(raw);
        let one_minus = self.tape.scale(lower, -1.0, 1.0);
        let term = self.tape.hadamard(s, one_minus)?;
        self.tape.add(lower, term)
    }

    fn norm2(&mut self, x: NodeId) -> NodeId {
        let sq = self.tape.sum_sq(x);
        self.tape.sqrt(sq)
    }

    /// x' = a v + (1 - a) w for a scalar node `a`.
    fn mix(&mut self, a: NodeId, v: NodeId, w: NodeId) -> Result<NodeId> {
        let av = self.tape.smul(a, v)?;
        let one_minus = self.tape.scale(a, -1.0, 1.0);
        let bw = self.tape.smul(one_minus, w)?;
        self.tape.add(av, bw)
    }
}

/// Record one full unrolled pass for `problem` and return the final
/// iterate node plus parameter leaves.
pub fn record_model(
    tape: &mut Tape,
    problem: &ProblemInstance,
    cfg: &HybridConfig,
    op: &Operator,
    store: &ParamStore,
    lip: f64,
) -> Result<Recorded> {
    let mut rec = Recorder { tape, store, params: BTreeMap::new() };
    let n_dim = problem.n();
    let a_node = rec.tape.matrix(&problem.a);
    let b_node = rec.tape.vector(&problem.b);
    let mut x = {
        let z = DenseVector::zeros(n_dim);
        rec.tape.vector(&z)
    };

    // residual helper: b - A z
    macro_rules! residual {
        ($rec:expr, $z:expr) => {{
            let az = $rec.tape.matvec(a_node, $z, false)?;
            $rec.tape.sub(b_node, az)?
        }};
    }

    match cfg.variant {
        Variant::Hcista | Variant::HcistaF => {
            let free = cfg.variant == Variant::HcistaF;
            let mut lambda_prev: Option<NodeId> = None;
            let mut x_prev: Option<NodeId> = None;
            let mut frozen = false;
            for n in 0..cfg.k {
                if frozen {
                    break;
                }
                // schedule pieces; bounds enter as differentiable nodes
                let (t_node, delta_node, lambda_node) = if free {
                    let t = rec.positive_floored(&format!("t.{n}"), 1e-300)?;
                    let l = if n == 0 {
                        rec.tape.scalar(cfg.lambda0)
                    } else {
                        rec.positive_floored(&format!("lambda.{n}"), LAMBDA_FLOOR)?
                    };
                    (t, None, l)
                } else {
                    let delta = rec.clamped(&format!("delta.{n}"), 0.25, 0.5)?;
                    // t in [1/(4 delta L), 1/L]
                    let four_dl = rec.tape.scale(delta, 4.0 * lip, 0.0);
                    let t_lo = rec.tape.recip(four_dl);
                    let t_hi = rec.tape.scalar(1.0 / lip);
                    let width = rec.tape.sub(t_hi, t_lo)?;
                    let t_raw = rec.raw(&format!("t.{n}"))?;
                    let sig = rec.tape.sigmoid_node(t_raw);
                    let span = rec.tape.hadamard(sig, width)?;
                    let t = rec.tape.add(t_lo, span)?;
                    let l = if n == 0 {
                        rec.tape.scalar(cfg.lambda0)
                    } else {
                        // ceiling factor * min(lambda_prev, C ||x - x_prev||)
                        let step = rec.tape.sub(x, x_prev.unwrap())?;
                        let nrm = rec.norm2(step);
                        let scaled = rec.tape.scale(nrm, cfg.c_lambda, 0.0);
                        let mn = rec.scalar_min(lambda_prev.unwrap(), scaled)?;
                        let upper = rec.tape.scale(mn, cfg.lambda_factor, 0.0);
                        if rec.tape.scalar_value(upper) <= LAMBDA_FLOOR {
                            rec.tape.scalar(LAMBDA_FLOOR)
                        } else {
                            let raw = rec.raw(&format!("lambda.{n}"))?;
                            let s = rec.tape.sigmoid_node(raw);
                            rec.tape.hadamard(upper, s)?
                        }
                    };
                    (t, Some(delta), l)
                };
                let lt = rec.tape.hadamard(lambda_node, t_node)?;

                // v = S_{lambda t}(x - t grad f(x))
                let r1 = residual!(rec, x);
                let g1 = rec.tape.matvec(a_node, r1, true)?; // A'(b - Ax) = -grad
                let tg1 = rec.tape.smul(t_node, g1)?;
                let pre_v = rec.tape.add(x, tg1)?;
                let v = rec.tape.soft_threshold(pre_v, lt)?;

                let u = op.record(rec.tape, v, x, store, n, &mut rec.params)?;

                let r2 = residual!(rec, u);
                let g2 = rec.tape.matvec(a_node, r2, true)?;
                let tg2 = rec.tape.smul(t_node, g2)?;
                let pre_w = rec.tape.add(u, tg2)?;
                let w = rec.tape.soft_threshold(pre_w, lt)?;

                let v_val = rec.tape.vector_value(v);
                let x_val = rec.tape.vector_value(x);
                if v_val.sub(&x_val).norm2() <= cfg.tol_in_t {
                    frozen = true;
                    continue; // x stays frozen
                }
                let alpha = if free {
                    rec.alpha(&format!("alpha.{n}"), 0.5)?
                } else {
                    // lower = |u-x|^2 / (|u-x|^2 + (1 - 2 t delta L)|v-x|^2)
                    let du = rec.tape.sub(u, x)?;
                    let uq = rec.tape.sum_sq(du);
                    let dv = rec.tape.sub(v, x)?;
                    let vq = rec.tape.sum_sq(dv);
                    let td = rec.tape.hadamard(t_node, delta_node.unwrap())?;
                    let coef = rec.tape.scale(td, -2.0 * lip, 1.0);
                    let cvq = rec.tape.hadamard(coef, vq)?;
                    let den = rec.tape.add(uq, cvq)?;
                    let inv = rec.tape.recip(den);
                    let lower = rec.tape.hadamard(uq, inv)?;
                    let raw = rec.raw(&format!("alpha.{n}"))?;
                    rec.alpha_dyn(raw, lower)?
                };
                lambda_prev = Some(lambda_node);
                x_prev = Some(x);
                x = rec.mix(alpha, v, w)?;
            }
        }
        Variant::HlistaCp | Variant::HlistaCpss | Variant::Halista | Variant::Hglista => {
            let w_node = rec.raw("w")?;
            let gated = cfg.variant == Variant::Hglista;
            let wtb_abs = if gated {
                let wtb = rec.tape.matvec(w_node, b_node, true)?;
                Some(rec.abs(wtb)?)
            } else {
                None
            };
            // previous-iteration pieces for the gates
            let mut prev: Option<(NodeId, NodeId, NodeId, NodeId)> = None; // v, w, th1, th2
            for n in 0..cfg.k {
                let theta1 = rec.positive(&format!("theta1.{n}"))?;
                let theta2 = rec.positive(&format!("theta2.{n}"))?;
                let keep = (cfg.variant == Variant::HlistaCpss)
                    .then(|| cpss_keep_count(cfg.p, cfg.p_max, n_dim, n));

                // HALISTA scales the first stage by gamma1; the second
                // stage keeps the unit scale (gamma2 = 1)
                let gbar = if cfg.variant == Variant::Halista {
                    Some(rec.clamped(
                        &format!("gamma1.{n}"),
                        0.0,
                        clamp_hi_of(store, &format!("gamma1.{n}"))?,
                    )?)
                } else {
                    None
                };

                let gain = if gated && n >= 1 {
                    let (pv, pw, th1p, th2p) = prev.unwrap();
                    let absv = rec.abs(pv)?;
                    let absw = rec.abs(pw)?;
                    let cap = rec.vec_max(absv, absw)?;
                    let tmin = rec.scalar_min(th1p, th2p)?;
                    let xi1 = rec.positive(&format!("xi1.{n}"))?;
                    let xi2 = rec.positive(&format!("xi2.{n}"))?;
                    let coef = rec.tape.hadamard(xi1, tmin)?;
                    let scaled = rec.tape.smul(xi2, cap)?;
                    let kappa = match gate_family(n, cfg.k) {
                        GateFamily::PiecewiseLinear => {
                            let inner = rec.tape.relu(scaled);
                            let flipped = rec.tape.scale(inner, -1.0, 1.0);
                            let ramp = rec.tape.relu(flipped);
                            rec.tape.smul(coef, ramp)?
                        }
                        GateFamily::InverseProportional => {
                            let shifted = rec.tape.scale(scaled, 1.0, 0.001);
                            let inv = rec.tape.recip(shifted);
                            rec.tape.smul(coef, inv)?
                        }
                    };
                    Some(rec.tape.scale(kappa, 1.0, 1.0)) // g = 1 + kappa
                } else {
                    None
                };
                fn overshoot_node(
                    rec: &mut Recorder,
                    tag: &str,
                    n: usize,
                    z: NodeId,
                    b_node: NodeId,
                    wtb_abs: NodeId,
                ) -> Result<NodeId> {
                    let wo = rec.raw(&format!("wo{tag}"))?;
                    let uo = rec.raw(&format!("uo{tag}"))?;
                    let a0 = rec.raw(&format!("a0{tag}.{n}"))?;
                    let woz = rec.tape.matvec(wo, z, false)?;
                    let uob = rec.tape.matvec(uo, b_node, false)?;
                    let inner = rec.tape.add(woz, uob)?;
                    let sig = rec.tape.sigmoid_node(inner);
                    let gatedm = rec.tape.hadamard(sig, wtb_abs)?;
                    let scaled = rec.tape.smul(a0, gatedm)?;
                    Ok(rec.tape.scale(scaled, 1.0, 1.0))
                }
                let use_overshoot = gated && n >= 1;
                let o1 = if use_overshoot {
                    Some(overshoot_node(&mut rec, "1", n, x, b_node, wtb_abs.unwrap())?)
                } else {
                    None
                };

                // v phase
                let gx = match gain {
                    Some(g) => rec.tape.hadamard(g, x)?,
                    None => x,
                };
                let r1 = residual!(rec, gx);
                let mut corr1 = rec.tape.matvec(w_node, r1, true)?;
                if let Some(g1) = gbar {
                    corr1 = rec.tape.smul(g1, corr1)?;
                }
                let pre_v = rec.tape.add(gx, corr1)?;
                let v_bar = match keep {
                    Some(kc) => rec.tape.ss_threshold(pre_v, theta1, kc)?,
                    None => rec.tape.soft_threshold(pre_v, theta1)?,
                };
                let v = match o1 {
                    Some(o1) => {
                        let ov = rec.tape.hadamard(o1, v_bar)?;
                        let rest = rec.tape.scale(o1, -1.0, 1.0);
                        let rx = rec.tape.hadamard(rest, x)?;
                        rec.tape.add(ov, rx)?
                    }
                    None => v_bar,
                };

                let u = op.record(rec.tape, v, x, store, n, &mut rec.params)?;

                // w phase
                let gu = match gain {
                    Some(g) => rec.tape.hadamard(g, u)?,
                    None => u,
                };
                let r2 = residual!(rec, gu);
                let corr2 = rec.tape.matvec(w_node, r2, true)?;
                let pre_w = rec.tape.add(gu, corr2)?;
                let w_bar = match keep {
                    Some(kc) => rec.tape.ss_threshold(pre_w, theta2, kc)?,
                    None => rec.tape.soft_threshold(pre_w, theta2)?,
                };
                let w_vec = if use_overshoot {
                    // the w-side gate reads the operator output
                    let o2 = overshoot_node(&mut rec, "2", n, u, b_node, wtb_abs.unwrap())?;
                    let ow = rec.tape.hadamard(o2, w_bar)?;
                    let rest = rec.tape.scale(o2, -1.0, 1.0);
                    let ru = rec.tape.hadamard(rest, u)?;
                    rec.tape.add(ow, ru)?
                } else {
                    w_bar
                };

                let th1v = rec.tape.scalar_value(theta1);
                let v_val = rec.tape.vector_value(v);
                let x_val = rec.tape.vector_value(x);
                let in_t = v_val.sub(&x_val).norm2() <= cfg.tol_in_t;
                let x_next = if th1v == 0.0 || in_t {
                    v
                } else {
                    // lower = theta2 / (theta1 + theta2), differentiable
                    let sum = rec.tape.add(theta1, theta2)?;
                    let inv = rec.tape.recip(sum);
                    let lower = rec.tape.hadamard(theta2, inv)?;
                    let raw = rec.raw(&format!("alpha.{n}"))?;
                    let alpha = rec.alpha_dyn(raw, lower)?;
                    rec.mix(alpha, v, w_vec)?
                };
                prev = Some((v, w_vec, theta1, theta2));
                x = x_next;
            }
        }
        Variant::Helista => {
            let w_node = rec.raw("w")?;
            for n in 0..cfg.k {
                let mut theta = Vec::with_capacity(4);
                let mut theta_hat = Vec::with_capacity(4);
                for l in 1..=4 {
                    let th = rec.positive(&format!("theta{l}.{n}"))?;
                    let ep = rec.positive_floored(&format!("eps{l}.{n}"), 1e-6)?;
                    let inv = rec.tape.recip(ep);
                    let factor = rec.tape.scale(inv, 1.0, 1.0);
                    theta_hat.push(rec.tape.hadamard(th, factor)?);
                    theta.push(th);
                }
                let g1 = rec.clamped(&format!("gamma1.{n}"), 0.0, 1.0)?;
                let g2 = {
                    // ceiling 1/(1 - gamma1), differentiable
                    let one_minus = rec.tape.scale(g1, -1.0, 1.0);
                    let hi = rec.tape.recip(one_minus);
                    let raw = rec.raw(&format!("gamma2.{n}"))?;
                    let s = rec.tape.sigmoid_node(raw);
                    rec.tape.hadamard(hi, s)?
                };
                let g3 = rec.clamped(&format!("gamma3.{n}"), 1.0, cfg.gamma3_hi)?;
                let g4 = rec.clamped(&format!("gamma4.{n}"), 0.0, 1.0)?;

                let stage = |rec: &mut Recorder,
                                 base: NodeId,
                                 at: NodeId,
                                 gamma: NodeId,
                                 l: usize|
                 -> Result<NodeId> {
                    let az = rec.tape.matvec(a_node, at, false)?;
                    let r = rec.tape.sub(b_node, az)?;
                    let corr = rec.tape.matvec(w_node, r, true)?;
                    let scaled = rec.tape.smul(gamma, corr)?;
                    let pre = rec.tape.add(base, scaled)?;
                    if rec.tape.scalar_value(theta[l]) == 0.0 {
                        Ok(pre)
                    } else {
                        rec.tape.multistage_threshold(pre, theta[l], theta_hat[l])
                    }
                };

                let v = stage(&mut rec, x, x, g1, 0)?;
                let v_half = stage(&mut rec, x, v, g2, 1)?;
                let u = op.record(rec.tape, v_half, x, store, n, &mut rec.params)?;
                let wv = stage(&mut rec, u, u, g3, 2)?;
                let w_half = stage(&mut rec, u, wv, g4, 3)?;

                let th0 = rec.tape.scalar_value(theta[0]);
                let th1 = rec.tape.scalar_value(theta[1]);
                let vh_val = rec.tape.vector_value(v_half);
                let x_val = rec.tape.vector_value(x);
                let in_t = vh_val.sub(&x_val).norm2() <= cfg.tol_in_t;
                x = if (th0 == 0.0 && th1 == 0.0) || in_t {
                    v_half
                } else {
                    // lower = (g4 t3 + t4) / (g2 t1 + t2 + g4 t3 + t4)
                    let g4t3 = rec.tape.hadamard(g4, theta[2])?;
                    let num = rec.tape.add(g4t3, theta[3])?;
                    let g2t1 = rec.tape.hadamard(g2, theta[0])?;
                    let part = rec.tape.add(g2t1, theta[1])?;
                    let den = rec.tape.add(part, num)?;
                    let inv = rec.tape.recip(den);
                    let lower = rec.tape.hadamard(num, inv)?;
                    // four raw slots jointly parameterize the mixing weight
                    let mut sum = rec.raw(&format!("alpha1.{n}"))?;
                    for l in 2..=4 {
                        let r = rec.raw(&format!("alpha{l}.{n}"))?;
                        sum = rec.tape.add(sum, r)?;
                    }
                    let mean = rec.tape.scale(sum, 0.25, 0.0);
                    let alpha = rec.alpha_dyn(mean, lower)?;
                    rec.mix(alpha, v_half, w_half)?
                };
            }
        }
    }

    Ok(Recorded { x_k: x, param_nodes: rec.params })
}

fn clamp_hi_of(store: &ParamStore, name: &str) -> Result<f64> {
    match store.get(name)?.constraint {
        crate::autodiff::Constraint::Interval { hi, .. } => Ok(hi),
        _ => Err(Error::Arg(format!("{name} is not interval-constrained"))),
    }
}

/// Squared-error training loss node ||x_K - x*||^2.
pub fn mse_loss(tape: &mut Tape, x_k: NodeId, x_star: &DenseVector) -> Result<NodeId> {
    let target = tape.vector(x_star);
    let d = tape.sub(x_k, target)?;
    Ok(tape.sum_sq(d))
}
