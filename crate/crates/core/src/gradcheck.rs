//! Central finite-difference verification of reverse-mode gradients.
//!
//! The checker builds a scalar-output graph once, takes analytic gradients
//! from the reverse sweep, then probes the retained tape coordinate by
//! coordinate with (f(x+h e_i) - f(x-h e_i)) / 2h. The probe path only uses
//! `Tape::forward` re-evaluation, keeping the numeric route independent of
//! the adjoint code it validates.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Below this magnitude the relative error test falls back to an absolute
/// comparison, so near-zero gradients do not blow up the ratio.
pub const ABS_FALLBACK: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub max_rel_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub per_param: BTreeMap<String, ParamCheck>,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn failures(&self) -> impl Iterator<Item = (&String, &ParamCheck)> {
        self.per_param.iter().filter(|(_, c)| !c.pass)
    }
}

fn rel_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < ABS_FALLBACK {
        // Both effectively zero: the absolute gap decides.
        if (a - b).abs() <= ABS_FALLBACK {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a - b).abs() / denom
    }
}

/// Compare backward gradients against central differences for every
/// coordinate of every registered parameter and every input coordinate.
///
/// `build` receives the tape with the inputs from `point` already recorded
/// and must return the scalar output node. Inputs appear in the report as
/// pseudo-parameters named `input0`, `input1`, ...
pub fn grad_check<F>(build: F, point: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnOnce(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if step <= 0.0 {
        return Err(Error::Contract("finite-difference step must be > 0".into()));
    }
    let mut tape = Tape::new();
    let mut input_ids = Vec::with_capacity(point.len());
    for x in point {
        input_ids.push(tape.input(x.clone())?);
    }
    let output = build(&mut tape, &input_ids)?;
    if !tape.value(output).is_scalar() {
        return Err(Error::Contract(
            "grad_check builder must produce a scalar output".into(),
        ));
    }
    tape.mark_output(output);

    let grads = tape.backward(output)?;
    let input_adjoints: Vec<Tensor> = input_ids.iter().map(|id| tape.adjoint(*id).clone()).collect();

    let mut per_param = BTreeMap::new();
    let mut overall_max: f64 = 0.0;

    // Parameters: perturb through the retained tape.
    let names: Vec<String> = grads.iter().map(|(n, _)| n.clone()).collect();
    for name in &names {
        let analytic = grads.get(name).expect("gradient present").clone();
        let mut max_rel: f64 = 0.0;
        for coord in 0..analytic.len() {
            let id = tape.param_id(name).expect("param registered");
            let center = tape.value(id).data()[coord];

            tape.nudge_param(name, coord, center + step)?;
            let f_plus = probe(&mut tape, point, name, coord)?;
            tape.nudge_param(name, coord, center - step)?;
            let f_minus = probe(&mut tape, point, name, coord)?;
            tape.nudge_param(name, coord, center)?;
            tape.forward(point)?;

            let fd = (f_plus - f_minus) / (2.0 * step);
            max_rel = max_rel.max(rel_error(analytic.data()[coord], fd));
        }
        overall_max = overall_max.max(max_rel);
        per_param.insert(
            name.clone(),
            ParamCheck {
                max_rel_error: max_rel,
                pass: max_rel < tol,
            },
        );
    }

    // Inputs: perturb the probe point itself.
    for (k, adj) in input_adjoints.iter().enumerate() {
        let mut max_rel: f64 = 0.0;
        for coord in 0..adj.len() {
            let mut plus = point.to_vec();
            plus[k].data_mut()[coord] += step;
            let f_plus = probe_at(&mut tape, &plus, k, coord)?;
            let mut minus = point.to_vec();
            minus[k].data_mut()[coord] -= step;
            let f_minus = probe_at(&mut tape, &minus, k, coord)?;

            let fd = (f_plus - f_minus) / (2.0 * step);
            max_rel = max_rel.max(rel_error(adj.data()[coord], fd));
        }
        overall_max = overall_max.max(max_rel);
        per_param.insert(
            format!("input{k}"),
            ParamCheck {
                max_rel_error: max_rel,
                pass: max_rel < tol,
            },
        );
    }
    tape.forward(point)?;

    let pass = per_param.values().all(|c| c.pass);
    Ok(GradCheckReport {
        max_rel_error: overall_max,
        per_param,
        pass,
    })
}

fn probe(tape: &mut Tape, point: &[Tensor], name: &str, coord: usize) -> Result<f64> {
    let out = tape.forward(point).map_err(|e| match e {
        Error::Numeric { where_, detail } => Error::Numeric {
            where_,
            detail: format!("{detail} while probing {name:?} coordinate {coord}"),
        },
        other => other,
    })?;
    let v = out[0].item();
    if !v.is_finite() {
        return Err(Error::numeric(
            format!("probe of {name:?}"),
            format!("non-finite output at coordinate {coord}"),
        ));
    }
    Ok(v)
}

fn probe_at(tape: &mut Tape, point: &[Tensor], input: usize, coord: usize) -> Result<f64> {
    let out = tape.forward(point)?;
    let v = out[0].item();
    if !v.is_finite() {
        return Err(Error::numeric(
            format!("probe of input {input}"),
            format!("non-finite output at coordinate {coord}"),
        ));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_graph_is_exact_up_to_roundoff() {
        // y = w . x: finite differences of a linear map are exact.
        let point = [Tensor::vector(vec![1.0, -2.0, 0.5])];
        let report = grad_check(
            |tape, xs| {
                let w = tape.param("w", Tensor::vector(vec![0.3, 0.7, -1.1]))?;
                tape.dot(w, xs[0])
            },
            &point,
            1e-6,
            1e-9,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_error);
    }

    #[test]
    fn constant_graph_has_zero_gradient_both_ways() {
        let point = [Tensor::scalar(2.0)];
        let report = grad_check(
            |tape, xs| {
                let c = tape.constant(Tensor::scalar(4.0))?;
                let w = tape.param("w", Tensor::scalar(1.5))?;
                // Output ignores both input and parameter: 0*x + 0*w + c
                let zx = tape.scale(xs[0], 0.0)?;
                let zw = tape.scale(w, 0.0)?;
                let s = tape.add(zx, zw)?;
                tape.add(s, c)
            },
            &point,
            1e-6,
            1e-9,
        )
        .unwrap();
        assert!(report.pass);
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn softmax_dot_composite_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let point = [Tensor::vector(z)];
        let report = grad_check(
            |tape, xs| {
                let w = tape.param(
                    "w",
                    Tensor::vector((0..5).map(|i| 0.2 * i as f64 - 0.3).collect()),
                )?;
                let s = tape.softmax(xs[0])?;
                tape.dot(s, w)
            },
            &point,
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_error);
    }

    #[test]
    fn zero_step_is_rejected() {
        let r = grad_check(
            |tape, xs| tape.sum(xs[0]),
            &[Tensor::scalar(1.0)],
            0.0,
            1e-5,
        );
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
